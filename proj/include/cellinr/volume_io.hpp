#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cellinr/error.hpp"
#include "cellinr/volume.hpp"

namespace cellinr {

static_assert(std::endian::native == std::endian::little, "file I/O assumes a little-endian host");

enum class VolumeFormat { nifti, raw };
enum class DType { u8, u16, f32 };

inline const char* dtype_name(DType t) {
  switch (t) {
    case DType::u8: return "u8";
    case DType::u16: return "u16";
    case DType::f32: return "f32";
  }
  return "?";
}

inline DType parse_dtype(const std::string& s) {
  if (s == "u8" || s == "uint8") return DType::u8;
  if (s == "u16" || s == "uint16") return DType::u16;
  if (s == "f32" || s == "float32") return DType::f32;
  throw UnsupportedError("unsupported datatype '" + s + "'");
}

inline std::size_t dtype_size(DType t) { return t == DType::u8 ? 1 : t == DType::u16 ? 2 : 4; }

inline double dtype_max(DType t) { return t == DType::u8 ? 255.0 : t == DType::u16 ? 65535.0 : 1.0; }

// `.nii` selects NIfTI; anything else is raw payload + `<path>.meta` sidecar.
inline VolumeFormat format_from_path(const std::filesystem::path& p) {
  return p.extension() == ".nii" ? VolumeFormat::nifti : VolumeFormat::raw;
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& p) {
  return std::filesystem::path(p.string() + ".meta");
}

namespace detail {

// Marker written into NIfTI `descrip` so that files produced here round-trip
// through their stored calibration instead of the payload min/max.
inline constexpr const char* kDescripTag = "cellinr";

struct PayloadInfo {
  Dims dims;
  Spacing spacing;
  DType dtype = DType::f32;
  // Stored-value range that maps onto normalized [0, 1], when the file declares one.
  std::optional<IntensityRange> calibration;
  std::optional<IntensityRange> source_range;
};

inline Volume3D normalize_payload(const PayloadInfo& info, const std::vector<double>& values) {
  std::vector<float> data(values.size());
  IntensityRange range;
  if (info.calibration && info.calibration->hi > info.calibration->lo) {
    const double lo = info.calibration->lo, span = info.calibration->hi - info.calibration->lo;
    for (std::size_t i = 0; i < values.size(); ++i)
      data[i] = static_cast<float>(std::clamp((values[i] - lo) / span, 0.0, 1.0));
    range = info.source_range.value_or(*info.calibration);
  } else {
    double lo = values.empty() ? 0.0 : values[0], hi = lo;
    for (double v : values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    // Constant volumes have no dynamic range; they normalize to 0 everywhere.
    if (hi > lo) {
      for (std::size_t i = 0; i < values.size(); ++i) data[i] = static_cast<float>((values[i] - lo) / (hi - lo));
    }
    range = {lo, hi};
  }
  return Volume3D(info.dims, info.spacing, std::move(data), range);
}

inline std::vector<double> decode_payload(std::istream& in, DType dtype, std::size_t count) {
  std::vector<char> bytes(count * dtype_size(dtype));
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size())
    throw TruncationError("payload shorter than dims declare: expected " + std::to_string(bytes.size()) +
                          " bytes, got " + std::to_string(in.gcount()));
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const char* p = bytes.data() + i * dtype_size(dtype);
    switch (dtype) {
      case DType::u8: out[i] = static_cast<unsigned char>(*p); break;
      case DType::u16: {
        std::uint16_t v;
        std::memcpy(&v, p, 2);
        out[i] = v;
        break;
      }
      case DType::f32: {
        float v;
        std::memcpy(&v, p, 4);
        if (!std::isfinite(v)) throw FormatError("non-finite value in f32 payload");
        out[i] = v;
        break;
      }
    }
  }
  return out;
}

// Quantization uses round-half-away-from-zero: normalized 0.5 -> u8 128.
inline std::vector<char> encode_payload(const Volume3D& v, DType dtype) {
  const auto data = v.data();
  std::vector<char> bytes(data.size() * dtype_size(dtype));
  for (std::size_t i = 0; i < data.size(); ++i) {
    char* p = bytes.data() + i * dtype_size(dtype);
    const double x = std::clamp(static_cast<double>(data[i]), 0.0, 1.0);
    switch (dtype) {
      case DType::u8: *reinterpret_cast<unsigned char*>(p) = static_cast<unsigned char>(std::lround(x * 255.0)); break;
      case DType::u16: {
        const auto q = static_cast<std::uint16_t>(std::lround(x * 65535.0));
        std::memcpy(p, &q, 2);
        break;
      }
      case DType::f32: std::memcpy(p, &data[i], 4); break;
    }
  }
  return bytes;
}

template <class T>
T read_at(const char* hdr, std::size_t offset) {
  T v;
  std::memcpy(&v, hdr + offset, sizeof(T));
  return v;
}

template <class T>
void write_at(char* hdr, std::size_t offset, T v) {
  std::memcpy(hdr + offset, &v, sizeof(T));
}

// Byte offsets into the 348-byte NIfTI-1 header (only the subset used here).
namespace nii {
inline constexpr std::size_t sizeof_hdr = 0, dim = 40, datatype = 70, bitpix = 72, pixdim = 76, vox_offset = 108,
                             scl_slope = 112, scl_inter = 116, xyzt_units = 123, cal_max = 124, cal_min = 128,
                             descrip = 148, qform_code = 252, sform_code = 254, srow_x = 280, srow_y = 296,
                             srow_z = 312, magic = 344;
inline constexpr int header_size = 348;
}  // namespace nii

inline short nifti_code(DType t) { return t == DType::u8 ? 2 : t == DType::u16 ? 512 : 16; }

inline Volume3D load_nifti(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char hdr[nii::header_size];
  in.read(hdr, nii::header_size);
  if (in.gcount() != nii::header_size) throw FormatError("NIfTI header truncated: " + path.string());
  const auto hsize = read_at<std::int32_t>(hdr, nii::sizeof_hdr);
  if (hsize != nii::header_size) {
    if (__builtin_bswap32(static_cast<std::uint32_t>(hsize)) == nii::header_size) throw UnsupportedError("big-endian NIfTI is not supported");
    throw FormatError("bad NIfTI sizeof_hdr " + std::to_string(hsize));
  }
  if (std::memcmp(hdr + nii::magic, "n+1", 4) != 0) throw FormatError("only single-file NIfTI-1 (n+1) is supported");

  PayloadInfo info;
  const auto ndim = read_at<std::int16_t>(hdr, nii::dim);
  if (ndim < 1 || ndim > 7) throw FormatError("bad NIfTI dim[0]");
  int d[7] = {1, 1, 1, 1, 1, 1, 1};
  for (int i = 0; i < ndim; ++i) d[i] = read_at<std::int16_t>(hdr, nii::dim + 2 * (i + 1));
  for (int i = 0; i < ndim; ++i)
    if (d[i] <= 0) throw FormatError("NIfTI dims must be positive");
  for (int i = 3; i < ndim; ++i)
    if (d[i] != 1) throw UnsupportedError("4D+ NIfTI volumes are not supported");
  info.dims = {d[0], d[1], d[2]};

  switch (read_at<std::int16_t>(hdr, nii::datatype)) {
    case 2: info.dtype = DType::u8; break;
    case 512: info.dtype = DType::u16; break;
    case 16: info.dtype = DType::f32; break;
    default: throw UnsupportedError("NIfTI datatype " + std::to_string(read_at<std::int16_t>(hdr, nii::datatype)));
  }
  double px[3];
  for (int i = 0; i < 3; ++i) {
    px[i] = read_at<float>(hdr, nii::pixdim + 4 * (i + 1));
    if (!(px[i] > 0)) px[i] = 1.0;
  }
  info.spacing = {px[0], px[1], px[2]};

  const float slope = read_at<float>(hdr, nii::scl_slope), inter = read_at<float>(hdr, nii::scl_inter);
  if ((slope != 0.0f && slope != 1.0f) || inter != 0.0f)
    std::cerr << "warning: " << path.string() << ": scl_slope/scl_inter are ignored\n";

  std::string descrip(hdr + nii::descrip, strnlen(hdr + nii::descrip, 80));
  if (descrip.rfind(kDescripTag, 0) == 0) {
    info.calibration = IntensityRange{read_at<float>(hdr, nii::cal_min), read_at<float>(hdr, nii::cal_max)};
    std::istringstream ds(descrip.substr(std::strlen(kDescripTag)));
    double lo, hi;
    if (ds >> lo >> hi) info.source_range = IntensityRange{lo, hi};
  }

  const auto offset = static_cast<std::streamoff>(read_at<float>(hdr, nii::vox_offset));
  if (offset < nii::header_size) throw FormatError("bad NIfTI vox_offset");
  in.seekg(offset);
  return normalize_payload(info, decode_payload(in, info.dtype, info.dims.count()));
}

inline void save_nifti(const Volume3D& v, const std::filesystem::path& path, DType dtype) {
  char hdr[nii::header_size + 4] = {};
  write_at<std::int32_t>(hdr, nii::sizeof_hdr, nii::header_size);
  write_at<std::int16_t>(hdr, nii::dim, 3);
  write_at<std::int16_t>(hdr, nii::dim + 2, static_cast<std::int16_t>(v.dims().nx));
  write_at<std::int16_t>(hdr, nii::dim + 4, static_cast<std::int16_t>(v.dims().ny));
  write_at<std::int16_t>(hdr, nii::dim + 6, static_cast<std::int16_t>(v.dims().nz));
  for (int i = 4; i < 8; ++i) write_at<std::int16_t>(hdr, nii::dim + 2 * i, 1);
  write_at<std::int16_t>(hdr, nii::datatype, nifti_code(dtype));
  write_at<std::int16_t>(hdr, nii::bitpix, static_cast<std::int16_t>(8 * dtype_size(dtype)));
  write_at<float>(hdr, nii::pixdim, 1.0f);
  write_at<float>(hdr, nii::pixdim + 4, static_cast<float>(v.spacing().sx));
  write_at<float>(hdr, nii::pixdim + 8, static_cast<float>(v.spacing().sy));
  write_at<float>(hdr, nii::pixdim + 12, static_cast<float>(v.spacing().sz));
  write_at<float>(hdr, nii::vox_offset, 352.0f);
  write_at<float>(hdr, nii::scl_slope, 1.0f);
  hdr[nii::xyzt_units] = 3;  // micrometres
  write_at<float>(hdr, nii::cal_min, 0.0f);
  write_at<float>(hdr, nii::cal_max, static_cast<float>(dtype_max(dtype)));
  std::ostringstream ds;
  ds.precision(9);
  ds << kDescripTag << ' ' << v.intensity_range().lo << ' ' << v.intensity_range().hi;
  const auto desc = ds.str().substr(0, 79);
  std::memcpy(hdr + nii::descrip, desc.data(), desc.size());
  write_at<std::int16_t>(hdr, nii::sform_code, 1);
  write_at<float>(hdr, nii::srow_x, static_cast<float>(v.spacing().sx));
  write_at<float>(hdr, nii::srow_y + 4, static_cast<float>(v.spacing().sy));
  write_at<float>(hdr, nii::srow_z + 8, static_cast<float>(v.spacing().sz));
  std::memcpy(hdr + nii::magic, "n+1", 4);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(hdr, sizeof(hdr));
  const auto bytes = encode_payload(v, dtype);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::map<std::string, std::string> read_key_values(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos) throw FormatError("malformed line: " + line);
      continue;
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline Volume3D load_raw(const std::filesystem::path& path) {
  std::ifstream side(sidecar_path(path));
  if (!side) throw IoError("cannot open sidecar " + sidecar_path(path).string());
  const auto kv = read_key_values(side);
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(std::string("sidecar missing key '") + key + "'");
    return it->second;
  };
  PayloadInfo info;
  {
    std::istringstream s(get("dims"));
    if (!(s >> info.dims.nx >> info.dims.ny >> info.dims.nz) || !info.dims.positive())
      throw FormatError("sidecar dims must be three positive integers");
  }
  if (kv.count("spacing")) {
    std::istringstream s(kv.at("spacing"));
    if (!(s >> info.spacing.sx >> info.spacing.sy >> info.spacing.sz) ||
        !(info.spacing.sx > 0 && info.spacing.sy > 0 && info.spacing.sz > 0))
      throw FormatError("sidecar spacing must be three positive reals");
  }
  info.dtype = parse_dtype(get("dtype"));
  auto parse_range = [](const std::string& text) {
    std::istringstream s(text);
    IntensityRange r;
    if (!(s >> r.lo >> r.hi)) throw FormatError("malformed range '" + text + "'");
    return r;
  };
  if (kv.count("range")) info.calibration = parse_range(kv.at("range"));
  if (kv.count("source_range")) info.source_range = parse_range(kv.at("source_range"));

  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  auto values = decode_payload(in, info.dtype, info.dims.count());
  if (in.peek() != std::char_traits<char>::eof()) throw TruncationError("payload longer than dims declare");
  return normalize_payload(info, values);
}

inline void save_raw(const Volume3D& v, const std::filesystem::path& path, DType dtype) {
  {
    std::ofstream side(sidecar_path(path), std::ios::trunc);
    if (!side) throw IoError("cannot write " + sidecar_path(path).string());
    side.precision(17);
    side << "dims = " << v.dims().nx << ' ' << v.dims().ny << ' ' << v.dims().nz << '\n'
         << "spacing = " << v.spacing().sx << ' ' << v.spacing().sy << ' ' << v.spacing().sz << '\n'
         << "dtype = " << dtype_name(dtype) << '\n'
         << "range = 0 " << dtype_max(dtype) << '\n'
         << "source_range = " << v.intensity_range().lo << ' ' << v.intensity_range().hi << '\n';
    if (!side) throw IoError("write failed: " + sidecar_path(path).string());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  const auto bytes = encode_payload(v, dtype);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace detail

// Loads a volume and maps its intensities linearly onto [0, 1]. Files written by
// save_volume carry their calibration and reload exactly (f32) or within one
// quantization step (u8/u16); foreign files are normalized by payload min/max.
inline Volume3D load_volume(const std::filesystem::path& path, std::optional<VolumeFormat> format = std::nullopt) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  return format.value_or(format_from_path(path)) == VolumeFormat::nifti ? detail::load_nifti(path)
                                                                        : detail::load_raw(path);
}

inline void save_volume(const Volume3D& v, const std::filesystem::path& path, DType dtype = DType::f32,
                        std::optional<VolumeFormat> format = std::nullopt) {
  if (format.value_or(format_from_path(path)) == VolumeFormat::nifti) {
    if (v.dims().nx > 32767 || v.dims().ny > 32767 || v.dims().nz > 32767)
      throw UnsupportedError("NIfTI-1 dims are limited to 32767");
    detail::save_nifti(v, path, dtype);
  } else {
    detail::save_raw(v, path, dtype);
  }
}

}  // namespace cellinr
