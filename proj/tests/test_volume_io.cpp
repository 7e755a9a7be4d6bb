#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <random>

#include "test_support.hpp"

using namespace cellinr;
using cellinr::support::TempDir;

namespace {

void write_bytes(const std::string& path, const void* data, std::size_t n) {
  std::ofstream out(path, std::ios::binary);
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

std::vector<unsigned char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// A NIfTI-1 header assembled field by field from the published layout.
std::vector<char> foreign_nifti_header(short nx, short ny, short nz, short datatype, short bitpix) {
  std::vector<char> h(352, 0);
  auto put = [&](std::size_t off, auto v) { std::memcpy(h.data() + off, &v, sizeof v); };
  put(0, std::int32_t{348});
  put(40, std::int16_t{3});
  put(42, nx);
  put(44, ny);
  put(46, nz);
  put(48, std::int16_t{1});
  put(70, datatype);
  put(72, bitpix);
  put(76, 1.0f);
  put(80, 0.5f);
  put(84, 0.5f);
  put(88, 2.0f);
  put(108, 352.0f);
  std::memcpy(h.data() + 344, "n+1", 4);
  return h;
}

}  // namespace

TEST(VolumeIo, ConstantU8RawNormalizesToZero) {
  TempDir dir("io");
  const auto path = dir.file("c.raw");
  const unsigned char payload[8] = {100, 100, 100, 100, 100, 100, 100, 100};
  write_bytes(path, payload, 8);
  std::ofstream(path + ".meta") << "dims = 2 2 2\ndtype = u8\n";
  const auto v = load_volume(path);
  EXPECT_EQ(v.dims(), (Dims{2, 2, 2}));
  for (float x : v.data()) EXPECT_EQ(x, 0.0f);
  EXPECT_EQ(v.intensity_range().lo, 100.0);
  EXPECT_EQ(v.intensity_range().hi, 100.0);
}

TEST(VolumeIo, U16EndpointsMapLinearly) {
  TempDir dir("io");
  const auto path = dir.file("u.raw");
  const std::uint16_t payload[4] = {0, 65535, 32768, 16384};
  write_bytes(path, payload, sizeof payload);
  std::ofstream(path + ".meta") << "# foreign file\ndims = 4 1 1\nspacing = 1 1 1\ndtype = u16\n";
  const auto v = load_volume(path);
  EXPECT_EQ(v[0], 0.0f);
  EXPECT_EQ(v[1], 1.0f);
  EXPECT_NEAR(v[2], 0.5, 1e-4);
  EXPECT_NEAR(v[3], 16384.0 / 65535.0, 1e-7);
}

TEST(VolumeIo, LargeAnisotropicNiftiLoads) {
  TempDir dir("io");
  const auto path = dir.file("embryo.nii");
  auto hdr = foreign_nifti_header(256, 356, 214, 2, 8);
  const std::size_t n = 256u * 356u * 214u;
  std::vector<unsigned char> payload(n);
  for (std::size_t i = 0; i < n; ++i) payload[i] = static_cast<unsigned char>((i * 7) % 251);
  {
    std::ofstream out(path, std::ios::binary);
    out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
    out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(n));
  }
  const auto v = load_volume(path);
  EXPECT_EQ(v.dims(), (Dims{256, 356, 214}));
  EXPECT_EQ(v.spacing(), (Spacing{0.5, 0.5, 2.0}));
  EXPECT_EQ(v.intensity_range().lo, 0.0);
  EXPECT_EQ(v.intensity_range().hi, 250.0);
  EXPECT_FLOAT_EQ(v[1], 7.0f / 250.0f);
}

TEST(VolumeIo, F32RoundTripIsBitExact) {
  TempDir dir("io");
  auto v = support::random_volume({7, 5, 3}, 1);
  v.set_spacing({0.18, 0.25, 1.5});
  v.set_intensity_range({12.5, 4000.0});
  for (const char* name : {"a.nii", "a.raw"}) {
    const auto path = dir.file(name);
    save_volume(v, path, DType::f32);
    const auto w = load_volume(path);
    ASSERT_EQ(w.dims(), v.dims());
    EXPECT_EQ(std::memcmp(w.data().data(), v.data().data(), v.data().size_bytes()), 0) << name;
    EXPECT_EQ(w.intensity_range(), v.intensity_range()) << name;
  }
  // The raw sidecar stores spacing at full precision.
  save_volume(v, dir.file("s.raw"));
  EXPECT_EQ(load_volume(dir.file("s.raw")).spacing(), v.spacing());
  // NIfTI pixdim is f32; float-representable spacings survive exactly.
  v.set_spacing({0.25, 0.5, 2.0});
  save_volume(v, dir.file("s.nii"));
  EXPECT_EQ(load_volume(dir.file("s.nii")).spacing(), v.spacing());
}

TEST(VolumeIo, QuantizedRoundTripWithinOneStep) {
  TempDir dir("io");
  const auto v = support::random_volume({9, 4, 6}, 2);
  for (auto [dtype, step] : {std::pair{DType::u8, 1.0 / 255}, std::pair{DType::u16, 1.0 / 65535}})
    for (const char* name : {"q.nii", "q.raw"}) {
      const auto path = dir.file(name);
      save_volume(v, path, dtype);
      const auto w = load_volume(path);
      for (std::size_t i = 0; i < v.size(); ++i) ASSERT_LE(std::abs(w[i] - v[i]), step + 1e-7) << name;
    }
}

TEST(VolumeIo, HalfQuantizesTo128) {
  TempDir dir("io");
  Volume3D v({1, 1, 1});
  v[0] = 0.5f;
  const auto path = dir.file("h.raw");
  save_volume(v, path, DType::u8);
  const auto bytes = read_bytes(path);
  ASSERT_EQ(bytes.size(), 1u);
  EXPECT_EQ(bytes[0], 128);
  EXPECT_NEAR(load_volume(path)[0], 0.5, 1.0 / 255);
}

TEST(VolumeIo, NormalizationPreservesOrder) {
  TempDir dir("io");
  const auto path = dir.file("o.raw");
  std::vector<std::uint16_t> payload(500);
  std::mt19937 rng(4);
  for (auto& p : payload) p = static_cast<std::uint16_t>(rng() % 3000 + 17);
  write_bytes(path, payload.data(), payload.size() * 2);
  std::ofstream(path + ".meta") << "dims = 10 10 5\ndtype = u16\n";
  const auto v = load_volume(path);
  for (std::size_t i = 0; i < payload.size(); ++i)
    for (std::size_t j = 0; j < payload.size(); j += 7) {
      if (payload[i] < payload[j]) {
        ASSERT_LE(v[i], v[j]);
      }
    }
  for (float x : v.data()) ASSERT_TRUE(x >= 0.0f && x <= 1.0f);
}

TEST(VolumeIo, MalformedHeaderIsFormatError) {
  TempDir dir("io");
  auto hdr = foreign_nifti_header(2, 2, 2, 2, 8);
  std::memcpy(hdr.data() + 344, "xx1", 4);
  hdr.resize(352 + 8, 0);
  write_bytes(dir.file("m.nii"), hdr.data(), hdr.size());
  EXPECT_THROW(load_volume(dir.file("m.nii")), FormatError);

  write_bytes(dir.file("short.nii"), hdr.data(), 100);
  EXPECT_THROW(load_volume(dir.file("short.nii")), FormatError);

  write_bytes(dir.file("x.raw"), hdr.data(), 8);
  std::ofstream(dir.file("x.raw") + ".meta") << "dims = 2 2\ndtype = u8\n";
  EXPECT_THROW(load_volume(dir.file("x.raw")), FormatError);

  auto neg = foreign_nifti_header(2, -2, 2, 2, 8);
  neg.resize(352 + 8, 0);
  write_bytes(dir.file("neg.nii"), neg.data(), neg.size());
  EXPECT_THROW(load_volume(dir.file("neg.nii")), FormatError);
}

TEST(VolumeIo, PayloadSizeMismatchIsTruncationError) {
  TempDir dir("io");
  auto hdr = foreign_nifti_header(4, 4, 4, 2, 8);
  hdr.resize(352 + 10, 0);
  write_bytes(dir.file("t.nii"), hdr.data(), hdr.size());
  EXPECT_THROW(load_volume(dir.file("t.nii")), TruncationError);

  const unsigned char payload[9] = {};
  write_bytes(dir.file("t.raw"), payload, 9);
  std::ofstream(dir.file("t.raw") + ".meta") << "dims = 2 2 2\ndtype = u8\n";
  EXPECT_THROW(load_volume(dir.file("t.raw")), TruncationError);
  write_bytes(dir.file("t.raw"), payload, 7);
  EXPECT_THROW(load_volume(dir.file("t.raw")), TruncationError);
}

TEST(VolumeIo, UnsupportedDatatypeIsRejected) {
  TempDir dir("io");
  auto hdr = foreign_nifti_header(2, 2, 2, 64, 64);  // float64
  hdr.resize(352 + 64, 0);
  write_bytes(dir.file("d.nii"), hdr.data(), hdr.size());
  EXPECT_THROW(load_volume(dir.file("d.nii")), UnsupportedError);

  write_bytes(dir.file("d.raw"), hdr.data(), 8);
  std::ofstream(dir.file("d.raw") + ".meta") << "dims = 2 2 2\ndtype = i8\n";
  EXPECT_THROW(load_volume(dir.file("d.raw")), UnsupportedError);
}

TEST(VolumeIo, MissingFileIsIoError) {
  EXPECT_THROW(load_volume("/nonexistent/volume.nii"), IoError);
  EXPECT_THROW(save_volume(Volume3D({2, 2, 2}), "/nonexistent/dir/v.raw"), IoError);
}

TEST(Volume, InvariantsAreEnforced) {
  EXPECT_THROW(Volume3D({0, 2, 2}), ShapeError);
  EXPECT_THROW(Volume3D({2, 2, 2}, {1.0, 0.0, 1.0}), ShapeError);
  EXPECT_THROW(Volume3D({2, 2, 2}, {}, std::vector<float>(7)), ShapeError);
  Volume3D v({3, 4, 5});
  EXPECT_EQ(v.size(), 60u);
  EXPECT_EQ(v.index(2, 3, 4), 59u);
  EXPECT_EQ(v.coords(59), (std::array<int, 3>{2, 3, 4}));
}

TEST(Volume, CoordinateMappingIsCellCentred) {
  EXPECT_DOUBLE_EQ(voxel_to_normalized(0, 4), -0.75);
  EXPECT_DOUBLE_EQ(voxel_to_normalized(3, 4), 0.75);
  EXPECT_DOUBLE_EQ(voxel_to_normalized(-0.5, 4), -1.0);
  EXPECT_DOUBLE_EQ(voxel_to_normalized(3.5, 4), 1.0);
  for (double i : {0.0, 1.3, 7.0}) EXPECT_NEAR(normalized_to_voxel(voxel_to_normalized(i, 9), 9), i, 1e-12);
}
