/* Copyright 2026 The voxelseg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// voxelseg command-line tool.
//
//   voxelseg synth     --out DIR [--count N] [--size S] [--seed K]
//   voxelseg train     --arch NAME [--config FILE] [--manifest CSV] [--out DIR]
//                      [--fold K | --cv] [--epochs N] [--seed K]
//   voxelseg predict   --checkpoint FILE --input NII --output PREFIX
//   voxelseg eval      --pred NII... --truth NII...
//   voxelseg ensemble  --mode avg|wavg|vote|max [--weights W,...] --inputs NII... --output PREFIX
//   voxelseg gradcheck [--seed K]
//
// Exit status: 0 success, 1 domain error, 2 usage error. VOXELSEG_PRECISION
// (f32 or f64) selects the numeric type.

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "run_config.hpp"

namespace voxelseg::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Precision { kF32, kF64 };

Precision precision_from_env() {
  const char* v = std::getenv("VOXELSEG_PRECISION");
  if (v == nullptr || std::string(v).empty() || std::string(v) == "f32") return Precision::kF32;
  if (std::string(v) == "f64") return Precision::kF64;
  throw UsageError("VOXELSEG_PRECISION must be f32 or f64, got '" + std::string(v) + "'");
}

// Lower-case architecture name with runs of other characters collapsed to '-'.
std::string slug(const std::string& name) {
  std::string out;
  for (unsigned char ch : name) {
    if (std::isalnum(ch)) out += static_cast<char>(std::tolower(ch));
    else if (!out.empty() && out.back() != '-') out += '-';
  }
  while (!out.empty() && out.back() == '-') out.pop_back();
  return out;
}

// File name without directories and without .nii / .nii.gz.
std::string case_id_from_path(const std::string& path) {
  std::string name = fs::path(path).filename().string();
  for (const char* ext : {".nii.gz", ".nii", ".hdr"}) {
    const std::string e(ext);
    if (name.size() > e.size() && name.compare(name.size() - e.size(), e.size(), e) == 0) {
      return name.substr(0, name.size() - e.size());
    }
  }
  return name;
}

std::vector<double> parse_csv_numbers(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError(std::string(what) + ": '" + item + "' is not a number");
    }
  }
  return out;
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string out;
  std::size_t count = 20;
  std::size_t size = 32;
  std::uint64_t seed = 0;
};

int run_synth(const SynthArgs& a) {
  ensure_dir(a.out + "/images");
  ensure_dir(a.out + "/masks");
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < a.count; ++i) {
    const VolumeCase<float> c = synth_phantom_case<float>(a.size, a.seed, i);
    // Stored in Hounsfield-like units so the default [-1000, 1000] window maps back to [0, 1].
    Tensor<float> hu = c.image;
    for (auto& v : hu.data()) v = v * 2000.0f - 1000.0f;
    const std::string img = "images/" + c.id + ".nii.gz", msk = "masks/" + c.id + ".nii.gz";
    write_nifti(hu, c.spacing, a.out + "/" + img);
    write_nifti(*c.mask, c.spacing, a.out + "/" + msk, NiftiType::kUint8);
    entries.push_back({c.id, img, msk});
  }
  write_manifest(a.out + "/manifest.csv", entries);
  std::cout << "wrote " << a.count << " phantoms (" << a.size << "^3) to " << a.out << "/manifest.csv\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string arch;
  std::string config;
  std::string manifest;
  std::string out;
  std::optional<std::size_t> fold;
  bool cv = false;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
};

template <typename T>
struct LoadedCase {
  VolumeCase<T> original;
  FittedCase<T> fitted;
};

template <typename T>
json train_one(const ArchSpec& spec, const TrainConfig& cfg, const RunConfig& rc,
               const std::vector<const LoadedCase<T>*>& train, const std::vector<const LoadedCase<T>*>& test,
               const std::string& stem) {
  std::vector<VolumeCase<T>> cases;
  for (const auto* c : train) cases.push_back(c->fitted.fitted);
  std::ofstream log(stem + "_log.csv", std::ios::trunc);
  if (!log) throw IoError("cannot open '" + stem + "_log.csv' for writing");
  log << "epoch,case_id,loss\n";
  FitOptions opt;
  opt.on_record = [&log](const LogRecord& r) { log << r.epoch << ',' << r.case_id << ',' << r.loss << '\n'; };
  opt.on_epoch = [&cfg](std::size_t e, double loss) {
    std::cerr << "  epoch " << e << "/" << cfg.epochs << " loss " << loss << '\n';
  };
  const FitResult<T> fit_result = fit(spec, cfg, cases, opt);
  save_checkpoint(fit_result.params, spec, stem + ".vseg");

  json summary{{"arch", spec.name},
               {"checkpoint", fs::path(stem + ".vseg").filename().string()},
               {"final_train_loss", fit_result.epoch_loss.back()},
               {"train_ids", json::array()},
               {"test", json::array()}};
  for (const auto* c : train) summary["train_ids"].push_back(c->original.id);
  if (!test.empty()) {
    std::vector<CaseScore> scores;
    for (const auto* c : test) {
      const Tensor<T> prob = invert_fit(predict(fit_result.params, spec, c->fitted.fitted.image), c->fitted.transform);
      const double dsc = dice_score(threshold_mask(prob, rc.threshold), *c->original.mask);
      scores.push_back({c->original.id, dsc});
      summary["test"].push_back({{"id", c->original.id}, {"dsc", dsc}});
    }
    const EvalReport rep = make_report(scores);
    summary["mean_dsc"] = rep.summary.mean;
    summary["sd_dsc"] = rep.summary.sd;
  }
  return summary;
}

template <typename T>
int run_train(const TrainArgs& a) {
  RunConfig rc = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  if (!a.manifest.empty()) rc.manifest = a.manifest;
  if (!a.out.empty()) rc.output_dir = a.out;
  if (a.epochs) rc.train.epochs = *a.epochs;
  if (a.seed) rc.train.seed = *a.seed;
  if (rc.manifest.empty()) throw UsageError("train needs --manifest or a config 'manifest' entry");
  const auto [spec, cfg] = resolve(rc, a.arch);

  std::vector<LoadedCase<T>> cases;
  for (const auto& e : read_manifest(rc.manifest)) {
    LoadedCase<T> lc;
    lc.original = load_case<T>(e, rc.window);
    if (!lc.original.mask) throw ValidationError("manifest entry '" + e.id + "' has no mask");
    lc.fitted = fit_divisible(lc.original, spec.depth);
    cases.push_back(std::move(lc));
  }
  if (cases.empty()) throw ConfigError("manifest '" + rc.manifest + "' lists no cases");
  std::map<std::string, const LoadedCase<T>*> by_id;
  std::vector<std::string> ids;
  for (const auto& c : cases) {
    if (!by_id.emplace(c.original.id, &c).second) throw ValidationError("duplicate case id '" + c.original.id + "'");
    ids.push_back(c.original.id);
  }
  auto pick = [&by_id](const std::vector<std::string>& v) {
    std::vector<const LoadedCase<T>*> out;
    for (const auto& id : v) out.push_back(by_id.at(id));
    return out;
  };

  ensure_dir(rc.output_dir);
  const std::string base = rc.output_dir + "/" + slug(spec.name);
  json run{{"arch", spec.name},
           {"precision", sizeof(T) == 4 ? "f32" : "f64"},
           {"config", to_json(rc, spec, cfg)},
           {"arch_text", to_canonical_text(spec)}};

  if (!a.fold && !a.cv) {
    std::cerr << "training " << spec.name << " on all " << cases.size() << " cases\n";
    run["model"] = train_one<T>(spec, cfg, rc, pick(ids), {}, base);
    write_json(base + "_summary.json", run);
    std::cout << "checkpoint " << base << ".vseg\n";
    return 0;
  }
  const FoldPlan plan = kfold_split(ids, rc.folds, cfg.seed);
  std::vector<std::size_t> folds;
  if (a.cv) {
    for (std::size_t k = 0; k < plan.folds.size(); ++k) folds.push_back(k);
  } else {
    if (*a.fold >= plan.folds.size()) {
      throw UsageError("--fold " + std::to_string(*a.fold) + " is out of range for " + std::to_string(rc.folds) +
                       " folds");
    }
    folds.push_back(*a.fold);
  }
  std::vector<double> all_scores;
  run["folds"] = json::array();
  for (std::size_t k : folds) {
    std::cerr << "training " << spec.name << " fold " << k << " (" << plan.folds[k].train.size() << " train / "
              << plan.folds[k].test.size() << " test)\n";
    const std::string stem = base + "_fold" + std::to_string(k);
    json s = train_one<T>(spec, cfg, rc, pick(plan.folds[k].train), pick(plan.folds[k].test), stem);
    s["fold"] = k;
    write_json(stem + "_summary.json", s);
    for (const auto& t : s["test"]) all_scores.push_back(t["dsc"].get<double>());
    std::printf("fold %zu mean DSC %.4f\n", k, s["mean_dsc"].get<double>());
    run["folds"].push_back(std::move(s));
  }
  const Summary overall = summarize(all_scores);
  run["mean_dsc"] = overall.mean;
  run["sd_dsc"] = overall.sd;
  write_json(base + (a.cv ? "_cv_summary.json" : "_fold" + std::to_string(folds[0]) + "_run.json"), run);
  std::printf("%s DSC %.4f ± %.4f over %zu test cases\n", spec.name.c_str(), overall.mean, overall.sd,
              all_scores.size());
  return 0;
}

// ---------------------------------------------------------------------------
// predict

struct PredictArgs {
  std::string checkpoint;
  std::string input;
  std::string output;
  double threshold = 0.5;
  std::string window = "-1000,1000";
  bool raw = false;
};

template <typename T>
int run_predict(const PredictArgs& a) {
  const Checkpoint<T> ck = load_checkpoint<T>(a.checkpoint);
  check_threshold(a.threshold);
  const auto w = parse_csv_numbers(a.window, "--window");
  if (w.size() != 2) throw UsageError("--window expects lo,hi");
  NiftiVolume<T> img = read_nifti<T>(a.input);
  VolumeCase<T> c;
  c.id = case_id_from_path(a.input);
  c.spacing = img.header.spacing();
  c.image = a.raw ? std::move(img.volume) : normalize_intensity(img.volume, IntensityWindow{w[0], w[1]});
  const FittedCase<T> f = fit_divisible(c, ck.spec.depth);
  const Tensor<T> prob = invert_fit(predict(ck.params, ck.spec, f.fitted.image), f.transform);
  write_nifti(prob, c.spacing, a.output + "_prob.nii.gz", NiftiType::kFloat32);
  write_nifti(threshold_mask(prob, a.threshold), c.spacing, a.output + "_mask.nii.gz", NiftiType::kUint8);
  std::cout << "wrote " << a.output << "_prob.nii.gz and " << a.output << "_mask.nii.gz\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::vector<std::string> pred;
  std::vector<std::string> truth;
  double threshold = 0.5;
};

template <typename T>
int run_eval(const EvalArgs& a) {
  if (a.pred.size() != a.truth.size()) {
    throw UsageError("eval needs as many --truth files as --pred files (" + std::to_string(a.pred.size()) + " vs " +
                     std::to_string(a.truth.size()) + ")");
  }
  check_threshold(a.threshold);
  std::vector<CaseScore> scores;
  for (std::size_t i = 0; i < a.pred.size(); ++i) {
    const Tensor<T> pred = threshold_mask(read_nifti<T>(a.pred[i]).volume, a.threshold);
    const Tensor<T> truth = threshold_mask(read_nifti<T>(a.truth[i]).volume, 0.5);
    const double dsc = dice_score(pred, truth);
    scores.push_back({case_id_from_path(a.truth[i]), dsc});
    std::printf("%s DSC %.4f\n", scores.back().id.c_str(), dsc);
  }
  const EvalReport rep = make_report(scores);
  std::printf("mean DSC %.4f ± %.4f (n=%zu)\n", rep.summary.mean, rep.summary.sd, scores.size());
  return 0;
}

// ---------------------------------------------------------------------------
// ensemble

struct EnsembleArgs {
  std::string mode = "avg";
  std::string weights;
  double threshold = 0.5;
  std::vector<std::string> inputs;
  std::string output;
};

template <typename T>
int run_ensemble(const EnsembleArgs& a) {
  EnsembleRequest<T> req;
  req.mode = parse_ensemble_mode(a.mode);
  req.threshold = a.threshold;
  if (!a.weights.empty()) {
    if (req.mode != EnsembleMode::kWeighted) throw UsageError("--weights only applies to --mode wavg");
    req.weights = parse_csv_numbers(a.weights, "--weights");
    if (req.weights.size() != a.inputs.size()) {
      throw UsageError("--weights lists " + std::to_string(req.weights.size()) + " values for " +
                       std::to_string(a.inputs.size()) + " inputs");
    }
  } else if (req.mode == EnsembleMode::kWeighted) {
    throw UsageError("--mode wavg needs --weights");
  }
  std::array<double, 3> spacing{1, 1, 1};
  for (const auto& p : a.inputs) {
    NiftiVolume<T> v = read_nifti<T>(p);
    spacing = v.header.spacing();
    req.probs.push_back(std::move(v.volume));
  }
  const EnsembleResult<T> r = fuse(req);
  write_nifti(r.fused, spacing, a.output + "_prob.nii.gz", NiftiType::kFloat32);
  write_nifti(r.mask, spacing, a.output + "_mask.nii.gz", NiftiType::kUint8);
  std::cout << "fused " << a.inputs.size() << " inputs (" << to_string(req.mode) << ") into " << a.output
            << "_prob.nii.gz and " << a.output << "_mask.nii.gz\n";
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

int run_gradcheck(std::uint64_t seed) {
  const auto results = run_gradcheck_suite(seed);
  bool ok = true;
  double worst = 0.0;
  for (const auto& r : results) {
    std::printf("%-28s max rel error %.3e (tol %.0e, %zu entries) %s\n", r.name.c_str(), r.max_error, r.tolerance,
                r.checked, r.passed() ? "ok" : "FAILED");
    ok = ok && r.passed();
    worst = std::max(worst, r.max_error);
  }
  std::printf("max relative error %.3e: %s\n", worst, ok ? "all checks passed" : "some checks FAILED");
  return ok ? 0 : 1;
}

template <typename F>
int with_precision(F&& f) {
  return precision_from_env() == Precision::kF64 ? f(double{}) : f(float{});
}

int dispatch(int argc, char** argv) {
  CLI::App app{"Volumetric binary segmentation: training, inference, evaluation and ensembling", "voxelseg"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic phantom dataset with a manifest");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--count", synth.count, "Number of cases")->check(CLI::PositiveNumber);
  s->add_option("--size", synth.size, "Cubic extent in voxels (>= 16)");
  s->add_option("--seed", synth.seed, "Random seed");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train one architecture on one fold, all folds or all cases");
  t->add_option("--arch", train.arch, "Architecture name")->required();
  t->add_option("--config", train.config, "JSON run config");
  t->add_option("--manifest", train.manifest, "Dataset manifest (id,image,mask)");
  t->add_option("--out", train.out, "Output directory");
  auto* fold_opt = t->add_option("--fold", train.fold, "Train a single fold (0-based)");
  t->add_flag("--cv", train.cv, "Run every fold")->excludes(fold_opt);
  t->add_option("--epochs", train.epochs, "Override the configured epoch count");
  t->add_option("--seed", train.seed, "Override the configured seed");

  PredictArgs pred;
  auto* p = app.add_subcommand("predict", "Segment one volume with a checkpoint");
  p->add_option("--checkpoint", pred.checkpoint, "Checkpoint file")->required();
  p->add_option("--input", pred.input, "Input NIfTI volume")->required();
  p->add_option("--output", pred.output, "Output prefix")->required();
  p->add_option("--threshold", pred.threshold, "Foreground threshold (strict >)");
  p->add_option("--window", pred.window, "Intensity window lo,hi");
  p->add_flag("--raw", pred.raw, "Input is already normalized to [0, 1]");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Dice scores of predicted masks against ground truth");
  e->add_option("--pred", ev.pred, "Predicted mask or probability volume(s)")->required();
  e->add_option("--truth", ev.truth, "Ground-truth mask volume(s)")->required();
  e->add_option("--threshold", ev.threshold, "Threshold applied to predictions (strict >)");

  EnsembleArgs ens;
  auto* n = app.add_subcommand("ensemble", "Fuse K probability volumes");
  n->add_option("--mode", ens.mode, "avg | wavg | vote | max");
  n->add_option("--weights", ens.weights, "Comma-separated weights for wavg");
  n->add_option("--threshold", ens.threshold, "Foreground threshold (strict >)");
  n->add_option("--inputs", ens.inputs, "Probability volumes")->required()->expected(2, 1 << 16);
  n->add_option("--output", ens.output, "Output prefix")->required();

  std::uint64_t gc_seed = 0;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference gradient checks in 64-bit mode");
  g->add_option("--seed", gc_seed, "Random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  if (*s) return run_synth(synth);
  if (*g) return run_gradcheck(gc_seed);
  return with_precision([&](auto tag) -> int {
    using T = decltype(tag);
    if (*t) return run_train<T>(train);
    if (*p) return run_predict<T>(pred);
    if (*e) return run_eval<T>(ev);
    return run_ensemble<T>(ens);
  });
}

}  // namespace
}  // namespace voxelseg::cli

int main(int argc, char** argv) {
  try {
    return voxelseg::cli::dispatch(argc, argv);
  } catch (const voxelseg::cli::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const voxelseg::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
