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

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "voxelseg/data.hpp"
#include "voxelseg/nifti.hpp"

namespace voxelseg {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir()
      : path_(fs::temp_directory_path() /
              (std::string("voxelseg_data_") + ::testing::UnitTest::GetInstance()->current_test_info()->name())) {
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

std::vector<unsigned char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// Writes `v` into `p` in the requested byte order, independent of the library.
template <typename U>
void put(unsigned char* p, U v, bool big) {
  unsigned char tmp[sizeof(U)];
  std::memcpy(tmp, &v, sizeof(U));
  for (std::size_t i = 0; i < sizeof(U); ++i) p[i] = big ? tmp[sizeof(U) - 1 - i] : tmp[i];
}

// Hand-built single-file header for an int16 volume of extents (x, y, z).
std::vector<unsigned char> int16_file(const std::vector<std::int16_t>& vals, int x, int y, int z, bool big,
                                      float slope, float inter) {
  std::vector<unsigned char> b(352 + vals.size() * 2, 0);
  put<std::int32_t>(b.data(), 348, big);
  const std::int16_t dim[8] = {3, std::int16_t(x), std::int16_t(y), std::int16_t(z), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put<std::int16_t>(b.data() + 40 + 2 * i, dim[i], big);
  put<std::int16_t>(b.data() + 70, 4, big);
  put<std::int16_t>(b.data() + 72, 16, big);
  const float pix[8] = {1, 0.5f, 0.75f, 2.5f, 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put<float>(b.data() + 76 + 4 * i, pix[i], big);
  put<float>(b.data() + 108, 352.0f, big);
  put<float>(b.data() + 112, slope, big);
  put<float>(b.data() + 116, inter, big);
  std::memcpy(b.data() + 344, "n+1\0", 4);
  for (std::size_t i = 0; i < vals.size(); ++i) put<std::int16_t>(b.data() + 352 + 2 * i, vals[i], big);
  return b;
}

Tensor<double> ramp(std::size_t d, std::size_t h, std::size_t w) {
  Tensor<double> t({1, d, h, w});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.001 * static_cast<double>(i) - 0.3 + 1.0 / 3.0;
  return t;
}

TEST(Nifti, Float32RoundTripIsVoxelExact) {
  TempDir dir;
  const Tensor<float> v = ramp(3, 4, 5).cast<float>();
  for (const char* name : {"a.nii", "a.nii.gz"}) {
    write_nifti(v, {1.5, 1.5, 3.0}, dir.file(name));
    const auto r = read_nifti<float>(dir.file(name));
    EXPECT_EQ(r.volume, v) << name;
    EXPECT_NEAR(r.header.spacing()[0], 1.5, 1e-6);
    EXPECT_NEAR(r.header.spacing()[2], 3.0, 1e-6);
    EXPECT_EQ(r.header.dim[1], 5);
    EXPECT_EQ(r.header.dim[3], 3);
  }
  const auto raw = slurp(dir.file("a.nii"));
  std::int32_t sizeof_hdr = 0;
  std::memcpy(&sizeof_hdr, raw.data(), 4);
  EXPECT_EQ(sizeof_hdr, 348);
  EXPECT_EQ(raw.size(), 352u + 60u * 4u);
  const auto gz = slurp(dir.file("a.nii.gz"));
  EXPECT_EQ(gz[0], 0x1f);
  EXPECT_EQ(gz[1], 0x8b);
}

TEST(Nifti, Float64AndIntegerRoundTrips) {
  TempDir dir;
  const Tensor<double> v = ramp(2, 3, 4);
  write_nifti(v, {1, 1, 1}, dir.file("d.nii"), NiftiType::kFloat64);
  EXPECT_EQ(read_nifti<double>(dir.file("d.nii")).volume, v);

  Tensor<double> ints({1, 2, 2, 2}, std::vector<double>{-32768, -5, 0, 7, 300, 1200, 32767, 1});
  write_nifti(ints, {1, 1, 1}, dir.file("i.nii"), NiftiType::kInt16);
  EXPECT_EQ(read_nifti<double>(dir.file("i.nii")).volume, ints);

  Tensor<float> mask({1, 2, 2, 2}, std::vector<float>{0, 1, 1, 0, 0, 0, 1, 1});
  write_nifti(mask, {1, 1, 1}, dir.file("m.nii.gz"), NiftiType::kUint8);
  const auto back = read_nifti<float>(dir.file("m.nii.gz"));
  EXPECT_EQ(back.volume, mask);
  EXPECT_EQ(back.header.datatype, 2);
}

TEST(Nifti, AppliesSlopeAndIntercept) {
  TempDir dir;
  spit(dir.file("s.nii"), int16_file({3, -1, 0, 10}, 2, 2, 1, false, 2.0f, -1.0f));
  const auto r = read_nifti<double>(dir.file("s.nii"));
  EXPECT_EQ(r.volume[0], 5.0);
  EXPECT_EQ(r.volume[1], -3.0);
  EXPECT_EQ(r.volume[3], 19.0);
  spit(dir.file("z.nii"), int16_file({3, -1, 0, 10}, 2, 2, 1, false, 0.0f, 0.0f));
  EXPECT_EQ(read_nifti<double>(dir.file("z.nii")).volume[0], 3.0);
}

TEST(Nifti, ReadsBigEndianFiles) {
  TempDir dir;
  const std::vector<std::int16_t> vals{1, -2, 300, 4, 5, 6};
  spit(dir.file("be.nii"), int16_file(vals, 3, 2, 1, true, 1.0f, 0.0f));
  const auto r = read_nifti<double>(dir.file("be.nii"));
  EXPECT_TRUE(r.header.big_endian);
  EXPECT_EQ(r.volume.shape(), (Shape{1, 1, 2, 3}));
  for (std::size_t i = 0; i < vals.size(); ++i) EXPECT_EQ(r.volume[i], vals[i]);
  EXPECT_FLOAT_EQ(r.header.spacing()[1], 0.75f);
}

TEST(Nifti, ReadsHeaderImagePairs) {
  TempDir dir;
  auto file = int16_file({7, 8}, 2, 1, 1, false, 1.0f, 0.0f);
  std::memcpy(file.data() + 344, "ni1\0", 4);
  put<float>(file.data() + 108, 0.0f, false);
  spit(dir.file("p.hdr"), std::vector<unsigned char>(file.begin(), file.begin() + 348));
  spit(dir.file("p.img"), std::vector<unsigned char>(file.begin() + 352, file.end()));
  EXPECT_EQ(read_nifti<double>(dir.file("p.hdr")).volume[1], 8.0);
}

TEST(Nifti, FormatErrors) {
  TempDir dir;
  const auto good = int16_file({1, 2, 3, 4}, 2, 2, 1, false, 1.0f, 0.0f);
  spit(dir.file("short.nii"), std::vector<unsigned char>(good.begin(), good.begin() + 347));
  EXPECT_THROW(read_nifti<float>(dir.file("short.nii")), FormatError);
  auto magic = good;
  magic[345] = 'x';
  spit(dir.file("magic.nii"), magic);
  EXPECT_THROW(read_nifti<float>(dir.file("magic.nii")), FormatError);
  auto dtype = good;
  put<std::int16_t>(dtype.data() + 70, 8, false);  // int32 is not supported
  spit(dir.file("dtype.nii"), dtype);
  EXPECT_THROW(read_nifti<float>(dir.file("dtype.nii")), FormatError);
  spit(dir.file("trunc.nii"), std::vector<unsigned char>(good.begin(), good.end() - 1));
  EXPECT_THROW(read_nifti<float>(dir.file("trunc.nii")), FormatError);
  EXPECT_THROW(read_nifti<float>(dir.file("missing.nii")), IoError);
  EXPECT_THROW(write_nifti(Tensor<float>({1, 2, 2, 2}), {1, 1, 1}, dir.file("no/such/dir/x.nii")), IoError);
  EXPECT_THROW(write_nifti(Tensor<float>({2, 2, 2, 2}), {1, 1, 1}, dir.file("c.nii")), ShapeError);
}

TEST(Normalize, WindowEndpointsAndClipping) {
  Tensor<double> raw({1, 1, 1, 5}, std::vector<double>{-1000, 1000, 0, 2000, -3000});
  const auto n = normalize_intensity(raw);
  EXPECT_EQ(n, (Tensor<double>({1, 1, 1, 5}, std::vector<double>{0.0, 1.0, 0.5, 1.0, 0.0})));
  EXPECT_THROW(normalize_intensity(raw, {5, 5}), ConfigError);
  RngStream rng(1);
  Tensor<double> noise({1, 8, 8, 8});
  for (auto& v : noise.data()) v = 6000.0 * rng.uniform() - 3000.0;
  for (double v : normalize_intensity(noise, {-200, 400}).data()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
}

TEST(FitDivisible, NearestMultipleArithmetic) {
  EXPECT_EQ(nearest_multiple(45, 16), 48u);
  EXPECT_EQ(nearest_multiple(40, 16), 48u);  // tie rounds up
  EXPECT_EQ(nearest_multiple(39, 16), 32u);
  EXPECT_EQ(nearest_multiple(5, 16), 16u);
  EXPECT_EQ(nearest_multiple(64, 16), 64u);
}

TEST(FitDivisible, PadCropAndInverse) {
  VolumeCase<double> c;
  c.id = "x";
  c.image = ramp(45, 20, 33);
  Tensor<double> mask(c.image.shape());
  mask.at(0, 22, 10, 16) = 1.0;
  c.mask = mask;
  const auto f = fit_divisible(c, 4);
  EXPECT_EQ(f.fitted.image.spatial(), (Extent3{48, 16, 32}));
  EXPECT_EQ(f.fitted.mask->spatial(), (Extent3{48, 16, 32}));
  EXPECT_EQ(f.fitted.mask->sum(), 1.0);
  const auto back = invert_fit(f.fitted.image, f.transform);
  EXPECT_EQ(back.spatial(), (Extent3{45, 20, 33}));
  // Depth was only padded, so every original voxel survives on that axis.
  EXPECT_EQ(back.at(0, 44, 10, 16), c.image.at(0, 44, 10, 16));
  EXPECT_EQ(back.at(0, 0, 10, 16), c.image.at(0, 0, 10, 16));
}

TEST(FitDivisible, DivisibleVolumeIsUntouched) {
  VolumeCase<float> c;
  c.image = ramp(16, 32, 16).cast<float>();
  const auto f = fit_divisible(c, 4);
  EXPECT_EQ(f.fitted.image, c.image);
  EXPECT_FALSE(f.fitted.mask.has_value());
}

TEST(FitDivisible, PurePaddingKeepsMaskCount) {
  auto c = synth_phantom_case<double>(16, 4, 0);
  auto big = c;
  big.image = invert_fit(c.image, plan_fit({21, 21, 21}, 4));
  big.mask = invert_fit(*c.mask, plan_fit({21, 21, 21}, 4));
  ASSERT_EQ(big.image.spatial(), (Extent3{21, 21, 21}));
  const auto f = fit_divisible(big, 4);
  EXPECT_EQ(f.fitted.image.spatial(), (Extent3{16, 16, 16}));
  const auto padded = fit_divisible(c, 5);
  EXPECT_EQ(padded.fitted.mask->spatial(), (Extent3{32, 32, 32}));
  EXPECT_EQ(padded.fitted.mask->sum(), c.mask->sum());
}

TEST(Phantom, CalibratedMaskFractionAndConnectivity) {
  const auto cases = synth_phantom<double>(32, 42, 20);
  ASSERT_EQ(cases.size(), 20u);
  EXPECT_EQ(cases[7].id, "phantom_007");
  for (const auto& c : cases) {
    const double frac = c.mask->sum() / static_cast<double>(c.mask->size());
    EXPECT_GE(frac, 0.01) << c.id;
    EXPECT_LE(frac, 0.20) << c.id;
    EXPECT_EQ(oracle::components6(c.mask->values(), 32, 32, 32), 1u) << c.id;
    for (double v : c.image.data()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
  }
}

TEST(Phantom, DeterministicPerSeedAndIndex) {
  const auto a = synth_phantom<float>(16, 5, 3);
  const auto b = synth_phantom<float>(16, 5, 3);
  EXPECT_EQ(a[2].image, b[2].image);
  EXPECT_EQ(*a[2].mask, *b[2].mask);
  EXPECT_EQ(synth_phantom_case<float>(16, 5, 2).image, a[2].image);
  EXPECT_NE(synth_phantom<float>(16, 6, 1)[0].image, a[0].image);
  EXPECT_THROW(synth_phantom<float>(12, 5, 1), ConfigError);
}

TEST(Manifest, RoundTripAndRelativePaths) {
  TempDir dir;
  write_manifest(dir.file("m.csv"), {{"a", "img/a.nii", "msk/a.nii"}, {"b", "/abs/b.nii", ""}});
  const auto m = read_manifest(dir.file("m.csv"));
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[0].image, dir.file("img/a.nii"));
  EXPECT_EQ(m[1].image, "/abs/b.nii");
  EXPECT_TRUE(m[1].mask.empty());
  std::ofstream(dir.file("bad.csv")) << "id,image,mask\nonly_one_column\n";
  EXPECT_THROW(read_manifest(dir.file("bad.csv")), FormatError);
}

TEST(Manifest, LoadCaseWindowsImageAndBinarizesMask) {
  TempDir dir;
  Tensor<float> hu({1, 2, 2, 2}, std::vector<float>{-1000, 0, 1000, 500, -500, 0, 0, 0});
  Tensor<float> m({1, 2, 2, 2}, std::vector<float>{0, 1, 1, 0, 0, 0, 0, 1});
  write_nifti(hu, {0.8, 0.8, 2.0}, dir.file("i.nii.gz"));
  write_nifti(m, {0.8, 0.8, 2.0}, dir.file("m.nii.gz"), NiftiType::kUint8);
  const auto c = load_case<float>({"c", dir.file("i.nii.gz"), dir.file("m.nii.gz")}, IntensityWindow{});
  EXPECT_EQ(c.image[1], 0.5f);
  EXPECT_EQ(c.image[3], 0.75f);
  EXPECT_EQ(*c.mask, m);
  EXPECT_NEAR(c.spacing[2], 2.0, 1e-6);
}

}  // namespace
}  // namespace voxelseg
