#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cellinr/config.hpp"
#include "cellinr/error.hpp"
#include "cellinr/nn/adam.hpp"
#include "cellinr/nn/networks.hpp"
#include "cellinr/volume.hpp"

// Checkpoint layout (little-endian throughout):
//
//   char[8]  magic "CINRCKPT"
//   u32      version
//   u64      config hash, u64 volume fingerprint
//   i32 x3   dims, f64 x3 spacing, f64 x2 intensity range
//   i64      completed steps
//   str      config document (u64 length + bytes)
//   nets     i32 epsilon, then coarse, fine, kernel; each:
//            i32 inject_layer, u64 inject_width, u64 layer count,
//            per layer i32 activation, u64 rows, u64 cols, f32 weights, f32 bias
//   adam     i64 step, f64 beta1 beta2 eps weight_decay, u64 tensor count,
//            per tensor u64 n, f64 m[n], f64 v[n]
//   history  u64 count, per record i64 step, f64 lr signal tv total, i64 n_signal
//   u64      FNV-1a of every preceding byte
namespace cellinr {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'C', 'I', 'N', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct LossRecord {
  std::int64_t step = 0;
  double lr = 0.0, signal = 0.0, tv = 0.0, total = 0.0;
  std::int64_t n_signal = 0;
  double wall_ms = 0.0;  // reporting only; not persisted
};

struct Checkpoint {
  TrainConfig config;
  std::uint64_t config_hash = 0, fingerprint = 0;
  Dims dims;
  Spacing spacing;
  IntensityRange range;
  std::int64_t step = 0;
  nn::Networks<float> nets;
  nn::AdamState adam;
  std::vector<LossRecord> history;
};

namespace detail {

class Writer {
 public:
  template <class V>
  void put(const V& v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(V));
  }
  template <class V>
  void put_array(const V* p, std::size_t n) {
    const auto* c = reinterpret_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n * sizeof(V));
  }
  void put_string(const std::string& s) {
    put<std::uint64_t>(s.size());
    put_array(s.data(), s.size());
  }
  [[nodiscard]] std::vector<char>& bytes() { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const char* p, std::size_t n) : p_(p), n_(n) {}
  template <class V>
  V get() {
    V v;
    take(&v, sizeof(V));
    return v;
  }
  template <class V>
  void get_array(V* out, std::size_t n) {
    if (n > remaining() / sizeof(V)) throw FormatError("checkpoint truncated");
    take(out, n * sizeof(V));
  }
  std::string get_string() {
    const auto n = get<std::uint64_t>();
    if (n > n_ - off_) throw FormatError("checkpoint truncated");
    std::string s(n, '\0');
    take(s.data(), n);
    return s;
  }
  // Element count followed by data; bounded by the bytes that remain.
  std::uint64_t get_count(std::size_t elem_size) {
    const auto n = get<std::uint64_t>();
    if (elem_size && n > (n_ - off_) / elem_size) throw FormatError("checkpoint truncated");
    return n;
  }
  [[nodiscard]] std::size_t remaining() const { return n_ - off_; }
  [[nodiscard]] bool done() const { return off_ == n_; }

 private:
  void take(void* out, std::size_t n) {
    if (n > n_ - off_) throw FormatError("checkpoint truncated");
    std::memcpy(out, p_ + off_, n);
    off_ += n;
  }
  const char* p_;
  std::size_t n_, off_ = 0;
};

inline void put_mlp(Writer& w, const nn::MlpParams<float>& p) {
  w.put<std::int32_t>(p.inject_layer);
  w.put<std::uint64_t>(p.inject_width);
  w.put<std::uint64_t>(p.layers.size());
  for (const auto& l : p.layers) {
    w.put<std::int32_t>(static_cast<std::int32_t>(l.activation));
    w.put<std::uint64_t>(l.weight.rows());
    w.put<std::uint64_t>(l.weight.cols());
    w.put_array(l.weight.data(), l.weight.size());
    w.put_array(l.bias.data(), l.bias.size());
  }
}

inline nn::MlpParams<float> get_mlp(Reader& r) {
  nn::MlpParams<float> p;
  p.inject_layer = r.get<std::int32_t>();
  p.inject_width = r.get<std::uint64_t>();
  const auto n = r.get_count(16);
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto act = r.get<std::int32_t>();
    if (act < 0 || act > 3) throw FormatError("checkpoint: bad activation tag");
    const auto rows = r.get<std::uint64_t>(), cols = r.get<std::uint64_t>();
    if (rows == 0 || cols == 0 || rows > (1u << 20) || cols > (1u << 20) || rows * cols > r.remaining() / 4)
      throw FormatError("checkpoint: bad layer shape");
    nn::Layer<float> l{nn::Matrix<float>(rows, cols), nn::Matrix<float>(1, cols), static_cast<nn::Activation>(act)};
    r.get_array(l.weight.data(), l.weight.size());
    r.get_array(l.bias.data(), l.bias.size());
    p.layers.push_back(std::move(l));
  }
  try {
    p.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  return p;
}

}  // namespace detail

inline std::vector<char> encode_checkpoint(const Checkpoint& c) {
  detail::Writer w;
  w.put_array(kCheckpointMagic, 8);
  w.put(kCheckpointVersion);
  w.put(c.config_hash);
  w.put(c.fingerprint);
  w.put<std::int32_t>(c.dims.nx);
  w.put<std::int32_t>(c.dims.ny);
  w.put<std::int32_t>(c.dims.nz);
  w.put(c.spacing.sx);
  w.put(c.spacing.sy);
  w.put(c.spacing.sz);
  w.put(c.range.lo);
  w.put(c.range.hi);
  w.put(c.step);
  w.put_string(serialize(c.config));
  w.put<std::int32_t>(c.nets.epsilon);
  detail::put_mlp(w, c.nets.coarse);
  detail::put_mlp(w, c.nets.fine);
  detail::put_mlp(w, c.nets.kernel);
  w.put(c.adam.step);
  w.put(c.adam.beta1);
  w.put(c.adam.beta2);
  w.put(c.adam.eps);
  w.put(c.adam.weight_decay);
  w.put<std::uint64_t>(c.adam.m.size());
  for (std::size_t i = 0; i < c.adam.m.size(); ++i) {
    w.put<std::uint64_t>(c.adam.m[i].size());
    w.put_array(c.adam.m[i].data(), c.adam.m[i].size());
    w.put_array(c.adam.v[i].data(), c.adam.v[i].size());
  }
  w.put<std::uint64_t>(c.history.size());
  for (const auto& h : c.history) {
    w.put(h.step);
    w.put(h.lr);
    w.put(h.signal);
    w.put(h.tv);
    w.put(h.total);
    w.put(h.n_signal);
  }
  Fnv1a sum;
  sum.update(w.bytes().data(), w.bytes().size());
  w.put(sum.digest());
  return std::move(w.bytes());
}

inline Checkpoint decode_checkpoint(const std::vector<char>& bytes) {
  if (bytes.size() < 8 + 4 + 8) throw FormatError("checkpoint truncated");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) throw FormatError("not a cellinr checkpoint");
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  Fnv1a sum;
  sum.update(bytes.data(), bytes.size() - 8);
  if (sum.digest() != stored) throw FormatError("checkpoint checksum mismatch (corrupt file)");

  detail::Reader r(bytes.data() + 8, bytes.size() - 16);
  if (r.get<std::uint32_t>() != kCheckpointVersion) throw UnsupportedError("unsupported checkpoint version");
  Checkpoint c;
  c.config_hash = r.get<std::uint64_t>();
  c.fingerprint = r.get<std::uint64_t>();
  c.dims.nx = r.get<std::int32_t>();
  c.dims.ny = r.get<std::int32_t>();
  c.dims.nz = r.get<std::int32_t>();
  c.spacing.sx = r.get<double>();
  c.spacing.sy = r.get<double>();
  c.spacing.sz = r.get<double>();
  c.range.lo = r.get<double>();
  c.range.hi = r.get<double>();
  c.step = r.get<std::int64_t>();
  c.config = parse_config(r.get_string());
  c.nets.epsilon = r.get<std::int32_t>();
  c.nets.coarse = detail::get_mlp(r);
  c.nets.fine = detail::get_mlp(r);
  c.nets.kernel = detail::get_mlp(r);
  c.adam.step = r.get<std::int64_t>();
  c.adam.beta1 = r.get<double>();
  c.adam.beta2 = r.get<double>();
  c.adam.eps = r.get<double>();
  c.adam.weight_decay = r.get<double>();
  const auto nt = r.get_count(8);
  for (std::uint64_t i = 0; i < nt; ++i) {
    const auto n = r.get_count(16);
    c.adam.m.emplace_back(n);
    c.adam.v.emplace_back(n);
    r.get_array(c.adam.m.back().data(), n);
    r.get_array(c.adam.v.back().data(), n);
  }
  const auto nh = r.get_count(48);
  for (std::uint64_t i = 0; i < nh; ++i) {
    LossRecord h;
    h.step = r.get<std::int64_t>();
    h.lr = r.get<double>();
    h.signal = r.get<double>();
    h.tv = r.get<double>();
    h.total = r.get<double>();
    h.n_signal = r.get<std::int64_t>();
    c.history.push_back(h);
  }
  if (!r.done()) throw FormatError("checkpoint has trailing bytes");
  if (!c.dims.positive()) throw FormatError("checkpoint: bad dims");
  if (config_hash(c.config) != c.config_hash) throw FormatError("checkpoint: config hash mismatch");
  std::size_t expect = 0;
  for (auto* t : c.nets.tensors()) {
    if (expect >= c.adam.m.size() || c.adam.m[expect].size() != t->size())
      throw FormatError("checkpoint: optimizer state does not match networks");
    ++expect;
  }
  if (expect != c.adam.m.size()) throw FormatError("checkpoint: optimizer state does not match networks");
  return c;
}

// Written to a temporary sibling and renamed, so a crash never leaves a partial file.
inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  const auto bytes = encode_checkpoint(c);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace cellinr
