#include <malloc.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>

#include "cellinr.hpp"

using namespace cellinr;
using json = nlohmann::ordered_json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  Fnv1a h;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    h.update(buf, static_cast<std::size_t>(in.gcount()));
  }
  return hex64(h.digest());
}

// One record per invocation: what ran, on which inputs, with which settings.
struct Manifest {
  json j;
  std::string path;

  void input(const std::string& p, const Volume3D* v = nullptr) {
    json e{{"path", p}, {"fnv1a", file_hash(p)}};
    if (v) e["volume_fingerprint"] = hex64(fingerprint(*v));
    j["inputs"].push_back(e);
  }
  void output(const std::string& p) { j["outputs"].push_back({{"path", p}, {"fnv1a", file_hash(p)}}); }
  void write() const {
    if (path.empty()) return;
    std::ofstream out(path);
    out << j.dump(2) << "\n";
    if (!out) std::cerr << "cellinr: could not write manifest " << path << "\n";
  }
};

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("CELLINR_SEED");
  if (!s || !*s) return std::nullopt;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (*end) throw UsageError(std::string("CELLINR_SEED is not an integer: ") + s);
  return v;
}

Dims parse_dims_text(const std::string& s) {
  Dims d;
  char x1 = 0, x2 = 0;
  std::istringstream in(s);
  if (!(in >> d.nx >> x1 >> d.ny >> x2 >> d.nz) || x1 != 'x' || x2 != 'x' || !(in >> std::ws).eof() || !d.positive())
    throw UsageError("bad dims '" + s + "' (expected NXxNYxNZ)");
  return d;
}

// "NXxNYxNZ" or a uniform factor such as "2x" / "0.5x".
Dims render_dims(const std::string& s, const Dims& train) {
  if (s.empty()) return train;
  if (s.back() == 'x' && s.find('x') == s.size() - 1) {
    char* end = nullptr;
    const double k = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() - 1 || !(k > 0)) throw UsageError("bad scale '" + s + "'");
    auto scale = [&](int n) { return std::max(1, static_cast<int>(std::lround(n * k))); };
    return {scale(train.nx), scale(train.ny), scale(train.nz)};
  }
  return parse_dims_text(s);
}

std::pair<Vec3, Vec3> parse_line(const std::string& s) {
  Vec3 a{}, b{};
  char c1, c2, colon, c3, c4;
  std::istringstream in(s);
  if (!(in >> a[0] >> c1 >> a[1] >> c2 >> a[2] >> colon >> b[0] >> c3 >> b[1] >> c4 >> b[2]) || c1 != ',' || c2 != ',' ||
      colon != ':' || c3 != ',' || c4 != ',' || !(in >> std::ws).eof())
    throw UsageError("bad --line '" + s + "' (expected x0,y0,z0:x1,y1,z1)");
  return {a, b};
}

DType dtype_arg(const std::string& s) {
  try {
    return parse_dtype(s);
  } catch (const Error&) {
    throw UsageError("bad --dtype '" + s + "'");
  }
}

// ---- subcommands ----

struct EnhanceArgs {
  std::string in, out_en, out_mask;
  double sigma_s = 1.0;
  int bins = 256;
};

void cmd_enhance(const EnhanceArgs& a, Manifest& m) {
  if (!(a.sigma_s >= 0) || a.bins < 2) throw UsageError("need --sigma-s >= 0 and --bins >= 2");
  const auto raw = load_volume(a.in);
  m.input(a.in, &raw);
  const auto en = enhance(raw, a.sigma_s);
  const double mu = otsu_threshold(en.data(), a.bins);
  const auto mask = binarize(en, mu);
  save_volume(en, a.out_en, DType::f32);
  save_volume(mask, a.out_mask, DType::u8);
  std::int64_t voxels = 0;
  for (float v : mask.data()) voxels += v > 0.5f;
  m.j["parameters"] = {{"sigma_s", a.sigma_s}, {"bins", a.bins}};
  m.j["result"] = {{"threshold", mu}, {"mask_voxels", voxels}};
  m.output(a.out_en);
  m.output(a.out_mask);
  std::cout << json{{"threshold", mu}, {"mask_voxels", voxels}}.dump() << "\n";
}

struct TrainArgs {
  std::string in, out, config;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> iters;
  std::optional<double> lambda;
  std::optional<std::string> loss_mode;
  std::optional<int> workers;
  std::vector<std::string> sets;
  bool resume = false;
};

void cmd_train(const TrainArgs& a, Manifest& m) {
  TrainConfig cfg;
  cfg.workers = default_workers();
  json overrides = json::array();
  std::string seed_source = "default";
  if (auto s = env_seed()) {
    cfg.seed = *s;
    seed_source = "CELLINR_SEED";
  }
  if (!a.config.empty()) {
    cfg = load_config(a.config, cfg);
    std::ifstream in(a.config);
    if (detail::read_key_values(in).count("seed")) seed_source = "config";
  }
  auto kv = to_key_values(cfg);
  auto set = [&](const std::string& key, const std::string& value, const char* flag) {
    if (kv.at(key) != value) overrides.push_back({{"key", key}, {"flag", flag}, {"was", kv.at(key)}, {"now", value}});
    apply_key_values(cfg, {{key, value}});
    kv = to_key_values(cfg);
  };
  for (const auto& s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
    set(s.substr(0, eq), s.substr(eq + 1), "--set");
  }
  if (a.seed) {
    set("seed", std::to_string(*a.seed), "--seed");
    seed_source = "--seed";
  }
  if (a.iters) set("max_iters", std::to_string(*a.iters), "--iters");
  if (a.lambda) set("lambda_tv", detail::print_number(*a.lambda), "--lambda");
  if (a.loss_mode) set("signal_loss_mode", *a.loss_mode, "--signal-loss-mode");
  if (a.workers) set("workers", std::to_string(*a.workers), "--workers");
  cfg.validate();

  const auto raw = load_volume(a.in);
  m.input(a.in, &raw);
  if (!a.config.empty()) m.input(a.config);

  const std::string log_path = a.out + ".log.csv";
  std::ofstream log(log_path);
  log << "step,lr,signal,tv,total,n_signal,wall_ms\n";
  log.precision(10);
  TrainOptions o;
  o.checkpoint_path = a.out;
  o.on_record = [&](const LossRecord& r) {
    log << r.step << "," << r.lr << "," << r.signal << "," << r.tv << "," << r.total << "," << r.n_signal << ","
        << r.wall_ms << "\n";
    std::cerr << "step " << r.step << "  loss " << r.total << "  (signal " << r.signal << ", tv " << r.tv << ")\n";
  };
  TrainReport rep;
  if (a.resume) {
    o.max_iters = cfg.max_iters;
    rep = resume(a.out, raw, o);
    cfg = rep.config;
  } else {
    rep = train(raw, cfg, o);
  }
  m.j["config"] = to_key_values(cfg);
  m.j["config_hash"] = hex64(config_hash(cfg));
  m.j["seed"] = cfg.seed;
  m.j["seed_source"] = seed_source;
  m.j["overrides"] = overrides;
  m.j["result"] = {{"steps", rep.steps},
                   {"plateau_stopped", rep.plateau_stopped},
                   {"mask_threshold", rep.mask_threshold},
                   {"mask_voxels", rep.mask_voxels},
                   {"uniform_fallbacks", rep.uniform_fallbacks},
                   {"final_loss", rep.history.empty() ? json(nullptr) : json(rep.history.back().total)},
                   {"wall_ms", rep.wall_ms}};
  m.output(a.out);
  m.output(log_path);
}

struct RenderArgs {
  std::string ckpt, out, dims, dtype = "f32";
};

void cmd_render(const RenderArgs& a, Manifest& m) {
  const DType dt = dtype_arg(a.dtype);
  const auto ck = load_checkpoint(a.ckpt);
  m.input(a.ckpt);
  const Dims d = render_dims(a.dims, ck.dims);
  auto v = render_volume(ck.nets.fine, ck.nets.epsilon, d, ck.dims, ck.spacing);
  v.set_intensity_range(ck.range);
  save_volume(v, a.out, dt);
  m.j["parameters"] = {{"dims", {d.nx, d.ny, d.nz}}, {"dtype", dtype_name(dt)}};
  m.j["config"] = to_key_values(ck.config);
  m.j["seed"] = ck.config.seed;
  m.j["checkpoint_step"] = ck.step;
  m.output(a.out);
}

struct SynthArgs {
  std::string spec, out_clean, out_noisy, labels, artifact, dims, dtype = "f32";
  std::optional<int> cells;
  std::optional<double> thickness, amplitude, scale;
  double poisson = 0.1, gauss_sigma = 20.0;
  std::optional<std::uint64_t> seed;
};

void cmd_synth(const SynthArgs& a, Manifest& m) {
  const DType dt = dtype_arg(a.dtype);
  PhantomSpec s;
  if (auto e = env_seed()) s.seed = *e;
  if (!a.spec.empty()) {
    std::ifstream in(a.spec);
    if (!in) throw IoError("cannot open spec " + a.spec);
    for (const auto& [k, v] : detail::read_key_values(in)) {
      if (k == "dims") s.dims = parse_dims_text(v);
      else if (k == "cell_count") s.cell_count = detail::parse_number<int>(k, v);
      else if (k == "membrane_thickness") s.membrane_thickness = detail::parse_number<double>(k, v);
      else if (k == "artifact_amplitude") s.artifact_amplitude = detail::parse_number<double>(k, v);
      else if (k == "artifact_scale") s.artifact_scale = detail::parse_number<double>(k, v);
      else if (k == "seed") s.seed = detail::parse_number<std::uint64_t>(k, v);
      else throw PreconditionError("unknown spec key '" + k + "'");
    }
    m.input(a.spec);
  }
  if (!a.dims.empty()) s.dims = parse_dims_text(a.dims);
  if (a.cells) s.cell_count = *a.cells;
  if (a.thickness) s.membrane_thickness = *a.thickness;
  if (a.amplitude) s.artifact_amplitude = *a.amplitude;
  if (a.scale) s.artifact_scale = *a.scale;
  if (a.seed) s.seed = *a.seed;
  const auto ph = make_phantom(s);
  const std::uint64_t noise_seed = mix64(s.seed ^ 0x6e6f697365ULL);
  const auto noisy = add_noise(compose(ph.clean, ph.artifact), a.poisson, a.gauss_sigma, noise_seed);
  save_volume(ph.clean, a.out_clean, dt);
  save_volume(noisy, a.out_noisy, dt);
  if (!a.labels.empty()) save_volume(ph.labels, a.labels, DType::u8);
  if (!a.artifact.empty()) save_volume(ph.artifact, a.artifact, dt);
  m.j["seed"] = s.seed;
  m.j["parameters"] = {{"dims", {s.dims.nx, s.dims.ny, s.dims.nz}},
                       {"cell_count", s.cell_count},
                       {"membrane_thickness", s.membrane_thickness},
                       {"artifact_amplitude", s.artifact_amplitude},
                       {"artifact_scale", s.artifact_scale},
                       {"poisson", a.poisson},
                       {"gauss_sigma", a.gauss_sigma},
                       {"noise_seed", noise_seed}};
  m.output(a.out_clean);
  m.output(a.out_noisy);
  if (!a.labels.empty()) m.output(a.labels);
  if (!a.artifact.empty()) m.output(a.artifact);
}

struct MetricsArgs {
  std::string a, b;
  double peak = 1.0;
  bool per_slice = false;
};

void cmd_metrics(const MetricsArgs& a, Manifest& m) {
  const auto va = load_volume(a.a), vb = load_volume(a.b);
  m.input(a.a, &va);
  m.input(a.b, &vb);
  SsimParams p;
  p.peak = a.peak;
  p.per_slice = a.per_slice;
  const auto r = evaluate(va, vb, p);
  json rec{{"psnr", std::isinf(r.psnr) ? json("inf") : json(r.psnr)}, {"ssim", r.ssim}, {"peak", a.peak},
           {"ssim_mode", a.per_slice ? "per_slice_2d" : "volumetric_3d"}};
  if (a.per_slice) rec["slice_ssim"] = r.slice_ssim;
  m.j["result"] = rec;
  rec["manifest"] = m.j;
  std::cout << rec.dump(2) << "\n";
}

struct ProfileArgs {
  std::vector<std::string> paths;
  std::string line;
  int samples = 256;
};

void cmd_profile(const ProfileArgs& a, Manifest& m) {
  if (a.paths.size() < 2 || a.paths.size() > 3) throw UsageError("profile expects VOL_A [VOL_B] OUT_CSV");
  const auto [p0, p1] = parse_line(a.line);
  std::vector<Volume3D> vols;
  for (std::size_t i = 0; i + 1 < a.paths.size(); ++i) {
    vols.push_back(load_volume(a.paths[i]));
    m.input(a.paths[i], &vols.back());
  }
  std::vector<const Volume3D*> ptrs;
  for (const auto& v : vols) ptrs.push_back(&v);
  const auto rows = line_profile(ptrs, p0, p1, a.samples);
  const std::string& out = a.paths.back();
  std::ofstream f(out);
  if (!f) throw IoError("cannot write " + out);
  write_profile_csv(f, rows);
  f.close();
  m.j["parameters"] = {{"line", a.line}, {"samples", a.samples}, {"rows", rows.size()}};
  m.output(out);
}

int exit_code_for(const std::exception_ptr& e, std::string& what) {
  try {
    std::rethrow_exception(e);
  } catch (const UsageError& x) {
    what = x.what();
    return kUsage;
  } catch (const NumericError& x) {
    what = x.what();
    return kNumeric;
  } catch (const SamplingError& x) {
    what = x.what();
    return kNumeric;
  } catch (const Error& x) {
    what = x.what();
    return kData;
  } catch (const std::exception& x) {
    what = x.what();
    return kData;
  }
}

}  // namespace

int main(int argc, char** argv) {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"cellinr: self-supervised artifact removal for 3D membrane microscopy"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  std::string manifest_path;

  EnhanceArgs ea;
  auto* enh = app.add_subcommand("enhance", "Hessian structure enhancement and Otsu membrane mask");
  enh->add_option("input", ea.in, "input volume")->required();
  enh->add_option("enhanced", ea.out_en, "output enhanced volume")->required();
  enh->add_option("mask", ea.out_mask, "output mask volume (u8, 0/255)")->required();
  enh->add_option("--sigma-s", ea.sigma_s, "Gaussian pre-smoothing sigma (voxels)");
  enh->add_option("--bins", ea.bins, "Otsu histogram bins");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "fit the networks to one volume");
  tr->add_option("input", ta.in, "input volume")->required();
  tr->add_option("checkpoint", ta.out, "output checkpoint")->required();
  tr->add_option("--config", ta.config, "key = value config file");
  tr->add_option("--seed", ta.seed, "random seed (overrides config and CELLINR_SEED)");
  tr->add_option("--iters", ta.iters, "iteration budget");
  tr->add_option("--lambda", ta.lambda, "TV weight");
  tr->add_option("--signal-loss-mode", ta.loss_mode, "masked | literal | rectified");
  tr->add_option("--workers", ta.workers, "worker threads (results do not depend on it)");
  tr->add_option("--set", ta.sets, "extra config override key=value (repeatable)");
  tr->add_flag("--resume", ta.resume, "continue from the existing checkpoint");

  RenderArgs ra;
  auto* ren = app.add_subcommand("render", "query the trained colour network on a grid");
  ren->add_option("checkpoint", ra.ckpt, "trained checkpoint")->required();
  ren->add_option("output", ra.out, "output volume")->required();
  ren->add_option("--dims", ra.dims, "NXxNYxNZ or a factor like 2x (default: training dims)");
  ren->add_option("--dtype", ra.dtype, "u8 | u16 | f32");

  SynthArgs sa;
  auto* syn = app.add_subcommand("synth", "synthetic membrane phantom with artifact and noise");
  syn->add_option("clean", sa.out_clean, "clean membrane volume")->required();
  syn->add_option("noisy", sa.out_noisy, "degraded volume")->required();
  syn->add_option("--spec", sa.spec, "key = value phantom spec file");
  syn->add_option("--dims", sa.dims, "NXxNYxNZ");
  syn->add_option("--cells", sa.cells, "number of cells");
  syn->add_option("--thickness", sa.thickness, "membrane thickness (voxels)");
  syn->add_option("--amplitude", sa.amplitude, "artifact amplitude");
  syn->add_option("--scale", sa.scale, "artifact blob scale (voxels)");
  syn->add_option("--poisson", sa.poisson, "Poisson factor (0 disables)");
  syn->add_option("--gauss-sigma", sa.gauss_sigma, "Gaussian sigma on the 0-255 scale (0 disables)");
  syn->add_option("--seed", sa.seed, "phantom and noise seed");
  syn->add_option("--labels", sa.labels, "also write the membrane label volume");
  syn->add_option("--artifact", sa.artifact, "also write the artifact field");
  syn->add_option("--dtype", sa.dtype, "u8 | u16 | f32");

  MetricsArgs ma;
  auto* met = app.add_subcommand("metrics", "PSNR and SSIM of two volumes");
  met->add_option("a", ma.a, "test volume")->required();
  met->add_option("b", ma.b, "reference volume")->required();
  met->add_option("--peak", ma.peak, "PSNR/SSIM peak value");
  met->add_flag("--per-slice", ma.per_slice, "2D SSIM per z slice instead of 3D windows");

  ProfileArgs pa;
  auto* pro = app.add_subcommand("profile", "intensity profile along a line segment");
  pro->add_option("paths", pa.paths, "VOL_A [VOL_B] OUT_CSV")->required()->expected(2, 3);
  pro->add_option("--line", pa.line, "x0,y0,z0:x1,y1,z1 in voxel coordinates")->required();
  pro->add_option("--samples", pa.samples, "points along the line")->check(CLI::PositiveNumber);

  for (auto* sub : {enh, tr, ren, syn, met, pro}) sub->add_option("--manifest", manifest_path, "run manifest path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  Manifest m;
  auto* sub = app.get_subcommands().front();
  m.j["tool"] = "cellinr";
  m.j["version"] = kVersion;
  m.j["command"] = sub->get_name();
  m.j["argv"] = std::vector<std::string>(argv, argv + argc);
  m.j["started"] = now_utc();
  m.j["inputs"] = json::array();
  m.j["outputs"] = json::array();
  std::string default_manifest;
  if (sub == enh) default_manifest = ea.out_en;
  if (sub == tr) default_manifest = ta.out;
  if (sub == ren) default_manifest = ra.out;
  if (sub == syn) default_manifest = sa.out_noisy;
  if (sub == pro && !pa.paths.empty()) default_manifest = pa.paths.back();
  m.path = !manifest_path.empty() ? manifest_path : default_manifest.empty() ? "" : default_manifest + ".manifest.json";

  int code = kOk;
  try {
    if (sub == enh) cmd_enhance(ea, m);
    if (sub == tr) cmd_train(ta, m);
    if (sub == ren) cmd_render(ra, m);
    if (sub == syn) cmd_synth(sa, m);
    if (sub == met) cmd_metrics(ma, m);
    if (sub == pro) cmd_profile(pa, m);
  } catch (...) {
    std::string what;
    code = exit_code_for(std::current_exception(), what);
    std::cerr << "cellinr " << sub->get_name() << ": " << what << "\n";
    m.j["error"] = what;
  }
  m.j["finished"] = now_utc();
  m.j["exit_code"] = code;
  m.write();
  return code;
}
