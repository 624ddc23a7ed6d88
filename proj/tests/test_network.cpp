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

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "voxelseg/checkpoint.hpp"
#include "voxelseg/gradcheck.hpp"
#include "voxelseg/network.hpp"

namespace voxelseg {
namespace {

ArchSpec tiny(const std::string& arch) {
  ArchSpec base;
  base.depth = 2;
  base.filters = {4, 8, 16};
  base.pyp_bins = {1, 2};
  return make_arch(arch, base);
}

Tensor<double> random_volume(std::size_t n, RngStream& rng) {
  Tensor<double> t({1, n, n, n});
  for (auto& v : t.data()) v = rng.uniform();
  return t;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("voxelseg_test_" + name);
}

TEST(ArchSpec, DefaultParameterCountsMatchClosedForm) {
  RngStream rng(0);
  const std::vector<std::size_t> f{32, 64, 128, 256, 512};
  EXPECT_EQ(build_model<float>(make_arch("PyP3DUcsSENet"), rng).element_count(), 23800648u);
  EXPECT_EQ(build_model<float>(make_arch("3D U-Net"), rng).element_count(), 22575329u);
  EXPECT_EQ(oracle::param_count(f, 1, true, true), 23800648u);
  EXPECT_EQ(oracle::param_count(f, 1, false, false), 22575329u);
  const std::vector<std::size_t> small{4, 8, 16};
  ArchSpec s = tiny("PyP3DUcsSENet");
  s.pyp_bins = {1, 2, 4};
  EXPECT_EQ(build_model<float>(s, rng).element_count(), oracle::param_count(small, 1, true, true));
}

TEST(ArchSpec, CanonicalTextRoundTrips) {
  for (const auto& name : arch_names()) {
    ArchSpec s = tiny(name);
    s.dropout_rate = 0.1 + 0.2;
    s.use_batchnorm = true;
    EXPECT_EQ(parse_canonical_text(to_canonical_text(s)), s) << name;
  }
}

TEST(ArchSpec, ParserRejectsUnknownDuplicateAndInvalid) {
  const std::string text = to_canonical_text(tiny("ResU-Net"));
  EXPECT_THROW(parse_canonical_text(text + "colour=red\n"), FormatError);
  EXPECT_THROW(parse_canonical_text(text + "depth=2\n"), FormatError);
  EXPECT_THROW(parse_canonical_text("depth=3\n"), ConfigError);  // filters no longer fit
  EXPECT_THROW(parse_canonical_text("block_kind=spiral\n"), ConfigError);
}

TEST(ArchSpec, RegistryAndLearningRates) {
  EXPECT_THROW(make_arch("V-Net"), ConfigError);
  EXPECT_EQ(default_learning_rate(make_arch("PyP3DUcsSENet")), 1e-6);
  EXPECT_EQ(default_learning_rate(make_arch("3D U-Net")), 1e-4);
  EXPECT_EQ(default_learning_rate(make_arch("ResU-Net")), 1e-4);
  EXPECT_EQ(make_arch("ResU-Net").block_kind, BlockKind::kResidual);
  register_arch("Custom", [](ArchSpec s) {
    s.name = "Custom";
    s.use_pyp = false;
    return s;
  });
  EXPECT_TRUE(make_arch("Custom").use_csse);
  ArchSpec bad = tiny("PyP3DUcsSENet");
  bad.filters = {4, 8};
  EXPECT_THROW(validate(bad), ConfigError);
}

TEST(Network, OutputIsProbabilityWithInputShape) {
  RngStream rng(1);
  for (const auto& name : {"PyP3DUcsSENet", "3D U-Net", "ResU-Net", "DenseU-Net"}) {
    const ArchSpec s = tiny(name);
    const auto P = build_model<double>(s, rng);
    const auto x = random_volume(8, rng);
    const auto r = forward(P, s, x, Mode::kTrain, rng);
    EXPECT_EQ(r.prob.shape(), x.shape()) << name;
    for (double v : r.prob.data()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
  }
}

TEST(Network, EveryLevelPyramidPlacement) {
  ArchSpec s = tiny("PyP3DUcsSENet");
  s.pyp_placement = PyPPlacement::kEveryEncoderLevel;
  RngStream rng(2);
  const auto P = build_model<double>(s, rng);
  EXPECT_TRUE(P.contains("enc0.pyp.fuse.weight"));
  EXPECT_EQ(forward(P, s, random_volume(8, rng), Mode::kEval, rng).prob.shape(), (Shape{1, 8, 8, 8}));
}

TEST(Network, RejectsIndivisibleInput) {
  const ArchSpec s = tiny("3D U-Net");
  RngStream rng(3);
  const auto P = build_model<float>(s, rng);
  try {
    forward(P, s, Tensor<float>({1, 8, 6, 8}), Mode::kEval, rng);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("multiple of 4"), std::string::npos) << e.what();
  }
  EXPECT_THROW(forward(P, s, Tensor<float>({2, 8, 8, 8}), Mode::kEval, rng), ShapeError);
}

TEST(Network, ZeroAttentionGatesAreAnExactNoOp) {
  ArchSpec with = tiny("PyP3DUcsSENet");
  ArchSpec without = with;
  without.use_csse = false;
  RngStream rng(4);
  ModelParams<double> P = build_model<double>(with, rng);
  ModelParams<double> Q;
  for (auto& [name, t] : P) {
    if (name.find(".csse.") != std::string::npos) t.fill(0.0);
    else Q.add(name, t);
  }
  const auto x = random_volume(8, rng);
  RngStream a(9), b(9);
  EXPECT_EQ(forward(P, with, x, Mode::kEval, a).prob, forward(Q, without, x, Mode::kEval, b).prob);
  EXPECT_EQ(forward(P, with, x, Mode::kTrain, a).prob, forward(Q, without, x, Mode::kTrain, b).prob);
}

TEST(Network, SameSeedSameModelAndPass) {
  const ArchSpec s = tiny("PyP3DUcsSENet");
  RngStream r1(5), r2(5);
  const auto P1 = build_model<float>(s, r1), P2 = build_model<float>(s, r2);
  EXPECT_EQ(P1, P2);
  RngStream d1(6), d2(6);
  const auto x = random_volume(8, d1).cast<float>();
  (void)random_volume(8, d2);
  EXPECT_EQ(forward(P1, s, x, Mode::kTrain, d1).prob, forward(P2, s, x, Mode::kTrain, d2).prob);
}

TEST(Network, CompositeGradientsPassFiniteDifferences) {
  RngStream rng(31);
  GradCheckOptions opt;
  opt.network_samples = 30;
  for (const char* arch : {"PyP3DUcsSENet", "DenseU-Net"}) {
    const auto r = gradcheck_network(rng, opt, arch);
    EXPECT_TRUE(r.passed()) << r.name << " max error " << r.max_error;
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const ArchSpec s = tiny("ResU-Net");
  RngStream rng(7);
  const auto P = build_model<float>(s, rng);
  const auto path = temp_path("rt.vseg").string();
  save_checkpoint(P, s, path);
  const auto ck = load_checkpoint<float>(path, s);
  EXPECT_EQ(ck.spec, s);
  ASSERT_EQ(ck.params.size(), P.size());
  for (std::size_t i = 0; i < P.size(); ++i) {
    EXPECT_EQ(ck.params.entry(i).first, P.entry(i).first);
    const auto& a = ck.params.entry(i).second;
    const auto& b = P.entry(i).second;
    ASSERT_EQ(a.shape(), b.shape());
    EXPECT_EQ(std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(float)), 0);
  }
  const auto P64 = build_model<double>(s, rng);
  EXPECT_EQ(decode_checkpoint<double>(encode_checkpoint(P64, s)).params, P64);
  std::filesystem::remove(path);
}

TEST(Checkpoint, DetectsCorruptionAndTruncation) {
  const ArchSpec s = tiny("3D U-Net");
  RngStream rng(8);
  const auto bytes = encode_checkpoint(build_model<float>(s, rng), s);
  ASSERT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "VSEG");
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x01;
  EXPECT_THROW(decode_checkpoint<float>(flipped), FormatError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 9);
  EXPECT_THROW(decode_checkpoint<float>(truncated), FormatError);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint<float>(magic), FormatError);
  EXPECT_THROW(decode_checkpoint<float>({}), FormatError);
}

TEST(Checkpoint, SpecMismatchAndMissingFile) {
  const ArchSpec s = tiny("3D U-Net");
  RngStream rng(9);
  const auto path = temp_path("mm.vseg").string();
  save_checkpoint(build_model<float>(s, rng), s, path);
  EXPECT_THROW(load_checkpoint<float>(path, tiny("ResU-Net")), SpecMismatchError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint<float>(path), IoError);
}

}  // namespace
}  // namespace voxelseg
