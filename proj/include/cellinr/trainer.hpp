#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <future>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "cellinr/checkpoint.hpp"
#include "cellinr/config.hpp"
#include "cellinr/error.hpp"
#include "cellinr/loss.hpp"
#include "cellinr/nn/adam.hpp"
#include "cellinr/nn/networks.hpp"
#include "cellinr/parallel.hpp"
#include "cellinr/renderer.hpp"
#include "cellinr/rng.hpp"
#include "cellinr/sampler.hpp"
#include "cellinr/struct_amp.hpp"
#include "cellinr/volume.hpp"

namespace cellinr {

// ---- preprocessing ----

struct SignalMask {
  Volume3D mask;  // {0, 1}
  double threshold = 0.0;
  std::int64_t voxels = 0;
};

// Masks keyed by volume fingerprint and the settings that shape them.
class MaskCache {
 public:
  using Key = std::tuple<std::uint64_t, bool, double, int>;

  const SignalMask* find(const Key& k) const {
    auto it = entries_.find(k);
    return it == entries_.end() ? nullptr : &it->second;
  }
  const SignalMask& insert(const Key& k, SignalMask m) { return entries_[k] = std::move(m); }
  std::size_t hits = 0, misses = 0;

 private:
  std::map<Key, SignalMask> entries_;
};

inline SignalMask compute_mask(const Volume3D& raw, const TrainConfig& cfg) {
  SignalMask m;
  if (cfg.structure_amplification) {
    const Volume3D en = enhance(raw, cfg.sigma_s);
    m.threshold = otsu_threshold(en.data(), cfg.otsu_bins);
    m.mask = binarize(en, m.threshold);
  } else {
    m.mask = Volume3D(raw.dims(), raw.spacing());
    std::fill(m.mask.data().begin(), m.mask.data().end(), 1.0f);
    m.threshold = -1.0;
  }
  for (float v : m.mask.data()) m.voxels += v > 0.5f ? 1 : 0;
  return m;
}

inline SignalMask preprocess(const Volume3D& raw, const TrainConfig& cfg, MaskCache* cache = nullptr) {
  if (!cache) return compute_mask(raw, cfg);
  const MaskCache::Key key{fingerprint(raw), cfg.structure_amplification, cfg.sigma_s, cfg.otsu_bins};
  if (const auto* hit = cache->find(key)) {
    ++cache->hits;
    return *hit;
  }
  ++cache->misses;
  return cache->insert(key, compute_mask(raw, cfg));
}

// ---- objective ----

// One batch of target voxels with the counts that normalize the loss terms.
struct BatchPlan {
  std::vector<std::size_t> targets;
  std::int64_t n_signal = 0;
  std::int64_t tv_pairs = 0;
};

struct ObjectiveContext {
  const Volume3D* raw = nullptr;
  const Volume3D* mask = nullptr;
  TrainConfig cfg;
  std::int64_t batch_size = 0, n_signal = 0, tv_pairs = 0;

  [[nodiscard]] bool uses_tv() const { return cfg.lambda_tv > 0; }
  [[nodiscard]] bool blind_tv() const { return cfg.blind_spot && cfg.tv_source == TvSource::blind; }
};

inline int forward_neighbors(const Volume3D& v, std::size_t idx, std::array<std::size_t, 3>& out) {
  const auto [x, y, z] = v.coords(idx);
  int n = 0;
  if (x + 1 < v.dims().nx) out[static_cast<std::size_t>(n++)] = v.index(x + 1, y, z);
  if (y + 1 < v.dims().ny) out[static_cast<std::size_t>(n++)] = v.index(x, y + 1, z);
  if (z + 1 < v.dims().nz) out[static_cast<std::size_t>(n++)] = v.index(x, y, z + 1);
  return n;
}

inline BatchPlan draw_batch(const Volume3D& raw, const Volume3D& mask, const TrainConfig& cfg, std::int64_t step) {
  BatchPlan b;
  Rng rng = stream_rng(cfg.seed, static_cast<std::uint64_t>(step), 0);
  std::uniform_int_distribution<std::size_t> pick(0, raw.size() - 1);
  b.targets.resize(static_cast<std::size_t>(cfg.batch_size));
  std::array<std::size_t, 3> nb{};
  for (auto& t : b.targets) {
    t = pick(rng);
    b.n_signal += mask[t] > 0.5f ? 1 : 0;
    b.tv_pairs += forward_neighbors(raw, t, nb);
  }
  return b;
}

inline ObjectiveContext make_context(const Volume3D& raw, const Volume3D& mask, const TrainConfig& cfg,
                                     const BatchPlan& plan) {
  return {&raw, &mask, cfg, static_cast<std::int64_t>(plan.targets.size()), plan.n_signal, plan.tv_pairs};
}

inline Vec3 voxel_point(const Volume3D& v, std::size_t idx) {
  const auto [x, y, z] = v.coords(idx);
  return {static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
}

// Sample sets for one task: one per target, then (blind TV only) one per
// present forward neighbour in target order.
template <class T>
std::vector<SampleSet> build_task_sets(const nn::Networks<T>& nets, const ObjectiveContext& ctx,
                                       std::span<const std::size_t> targets, Rng& rng,
                                       std::size_t* fallbacks = nullptr) {
  if (!ctx.cfg.blind_spot) return {};
  std::vector<Vec3> centers;
  for (std::size_t t : targets) centers.push_back(voxel_point(*ctx.raw, t));
  if (ctx.uses_tv() && ctx.blind_tv()) {
    std::array<std::size_t, 3> nb{};
    for (std::size_t t : targets) {
      const int n = forward_neighbors(*ctx.raw, t, nb);
      for (int k = 0; k < n; ++k) centers.push_back(voxel_point(*ctx.raw, nb[static_cast<std::size_t>(k)]));
    }
  }
  return build_sample_sets<T>(centers, ctx.raw->dims(), ctx.cfg.sampler(), nets.coarse, nets.epsilon, rng, fallbacks);
}

struct TaskResult {
  double signal_sum = 0.0, tv_sum = 0.0;  // un-normalized partial sums
  std::vector<std::vector<double>> grads;  // Networks::tensors() order
};

// Loss terms of one slice of a batch, normalized by the full-batch counts in
// `ctx`, so summing over the slices of a batch gives the batch objective and
// its gradient.
template <class T>
TaskResult evaluate_task(const nn::Networks<T>& nets, const ObjectiveContext& ctx, std::span<const std::size_t> targets,
                         std::span<const SampleSet> sets, bool with_grads) {
  const auto& cfg = ctx.cfg;
  const std::size_t n = targets.size();
  nn::Tape<T> tape;
  NetBindings b{nn::bind(tape, nets.fine), nn::bind(tape, nets.kernel)};

  // Rows of `pred` hold the centre predictions first; `tv_pred` may equal it.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<Vec3> direct;
  const auto& dims = ctx.raw->dims();
  auto neighbours_into = [&](std::vector<Vec3>* pts) {
    std::array<std::size_t, 3> nb{};
    std::size_t row = n;
    for (std::size_t i = 0; i < n; ++i) {
      const int k = forward_neighbors(*ctx.raw, targets[i], nb);
      for (int j = 0; j < k; ++j) {
        pairs.emplace_back(i, row++);
        if (pts) pts->push_back(to_normalized(voxel_point(*ctx.raw, nb[static_cast<std::size_t>(j)]), dims));
      }
    }
  };

  nn::NodeId pred{}, tv_pred{};
  bool have_tv = ctx.uses_tv() || !cfg.blind_spot || cfg.tv_source == TvSource::center;
  if (cfg.blind_spot) {
    if (sets.size() < n) throw ShapeError("evaluate_task: missing sample sets");
    pred = blind_forward(tape, nets, b, sets).values;
    if (ctx.uses_tv() && ctx.blind_tv()) {
      neighbours_into(nullptr);
      if (n + pairs.size() != sets.size()) throw ShapeError("evaluate_task: neighbour sets do not match");
      tv_pred = pred;
    } else if (have_tv) {
      for (std::size_t t : targets) direct.push_back(to_normalized(voxel_point(*ctx.raw, t), dims));
      neighbours_into(&direct);
      tv_pred = center_forward(tape, nets, b.fine, direct);
    }
  } else {
    for (std::size_t t : targets) direct.push_back(to_normalized(voxel_point(*ctx.raw, t), dims));
    neighbours_into(&direct);
    pred = tv_pred = center_forward(tape, nets, b.fine, direct);
  }
  have_tv = have_tv && !pairs.empty();

  std::vector<double> raw(n), mask(n);
  for (std::size_t i = 0; i < n; ++i) {
    raw[i] = (*ctx.raw)[targets[i]];
    mask[i] = (*ctx.mask)[targets[i]];
  }
  const auto terms = signal_terms(raw, mask, cfg.signal_loss_mode, ctx.n_signal, ctx.batch_size);
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;

  TaskResult r;
  const auto& pv = tape.value(pred);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pv[i]) - terms.target[i];
    r.signal_sum += terms.weight[i] * d * d;
  }
  if (have_tv) {
    const auto& tvv = tape.value(tv_pred);
    for (const auto& [c, k] : pairs) r.tv_sum += std::abs(static_cast<double>(tvv[k]) - static_cast<double>(tvv[c]));
  }
  if (!with_grads) return r;

  auto root = signal_loss_node(tape, pred, rows, terms);
  if (have_tv && ctx.uses_tv()) {
    const auto tv = tv_loss_node(tape, tv_pred, pairs, static_cast<double>(ctx.tv_pairs));
    root = nn::add_scaled(tape, root, tv, static_cast<T>(cfg.lambda_tv));
  }
  tape.backward(root);

  auto fine = nn::MlpGrads::zeros_like(nets.fine), kernel = nn::MlpGrads::zeros_like(nets.kernel);
  nn::accumulate_grads(tape, b.fine, fine);
  nn::accumulate_grads(tape, b.kernel, kernel);
  nets.coarse.for_each_tensor([&](const nn::Matrix<T>& m) { r.grads.emplace_back(m.size(), 0.0); });
  for (auto& g : fine.tensors) r.grads.push_back(std::move(g));
  for (auto& g : kernel.tensors) r.grads.push_back(std::move(g));
  return r;
}

struct Objective {
  LossBreakdown loss;
  std::vector<std::vector<double>> grads;
  std::size_t uniform_fallbacks = 0;
};

// Whole-batch objective: the batch is split into fixed tasks with their own
// RNG streams and reduced in task order, so the result does not depend on the
// number of workers.
template <class T>
Objective evaluate_batch(const nn::Networks<T>& nets, const ObjectiveContext& ctx, std::span<const std::size_t> targets,
                         std::int64_t step, bool with_grads) {
  const auto per = static_cast<std::size_t>(ctx.cfg.task_targets);
  const std::size_t tasks = (targets.size() + per - 1) / per;
  const auto workers = static_cast<std::size_t>(std::max(ctx.cfg.workers, 1));
  Objective out;
  double sig = 0.0, tv = 0.0;
  std::vector<TaskResult> wave;
  std::vector<std::size_t> fallbacks;
  for (std::size_t w0 = 0; w0 < tasks; w0 += workers) {
    const std::size_t w1 = std::min(tasks, w0 + workers);
    wave.assign(w1 - w0, {});
    fallbacks.assign(w1 - w0, 0);
    parallel_for(w1 - w0, static_cast<int>(workers), [&](std::size_t j) {
      const std::size_t task = w0 + j;
      const auto slice = targets.subspan(task * per, std::min(per, targets.size() - task * per));
      Rng rng = stream_rng(ctx.cfg.seed, static_cast<std::uint64_t>(step), task + 1);
      const auto sets = build_task_sets(nets, ctx, slice, rng, &fallbacks[j]);
      wave[j] = evaluate_task(nets, ctx, slice, sets, with_grads);
    });
    for (std::size_t j = 0; j < wave.size(); ++j) {
      sig += wave[j].signal_sum;
      tv += wave[j].tv_sum;
      out.uniform_fallbacks += fallbacks[j];
      if (!with_grads) continue;
      if (out.grads.empty()) {
        out.grads = std::move(wave[j].grads);
        continue;
      }
      for (std::size_t i = 0; i < out.grads.size(); ++i)
        for (std::size_t k = 0; k < out.grads[i].size(); ++k) out.grads[i][k] += wave[j].grads[i][k];
    }
  }
  const auto terms_denom = signal_terms({}, {}, ctx.cfg.signal_loss_mode, ctx.n_signal, ctx.batch_size).denom;
  out.loss.signal = terms_denom > 0 ? sig / terms_denom : 0.0;
  out.loss.tv = ctx.tv_pairs > 0 ? tv / static_cast<double>(ctx.tv_pairs) : 0.0;
  out.loss.total = total_loss(out.loss.signal, out.loss.tv, ctx.cfg.lambda_tv);
  out.loss.n_signal = ctx.n_signal;
  return out;
}

// ---- training loop ----

struct TrainOptions {
  std::string checkpoint_path;  // empty: keep everything in memory
  std::optional<std::int64_t> stop_after;  // pause once this many steps are complete
  std::optional<std::int64_t> max_iters;   // resume only: extend or shorten the budget
  std::function<void(const LossRecord&)> on_record;
  MaskCache* cache = nullptr;
};

struct TrainReport {
  std::vector<LossRecord> history;
  double wall_ms = 0.0;
  std::string checkpoint_path;
  TrainConfig config;
  std::uint64_t fingerprint = 0;
  std::int64_t steps = 0;
  bool plateau_stopped = false;
  std::size_t uniform_fallbacks = 0;
  double mask_threshold = 0.0;
  std::int64_t mask_voxels = 0;
  nn::Networks<float> nets;
};

class Trainer {
 public:
  Trainer(const Volume3D& raw, const TrainConfig& cfg, MaskCache* cache = nullptr) : raw_(raw), cfg_(cfg) {
    cfg_.validate();
    setup(cache);
    nets_ = nn::make_networks<float>(cfg_.net(), cfg_.seed);
    auto t = nets_.tensors();
    adam_ = nn::AdamState::for_params<float>(t);
    adam_.weight_decay = cfg_.weight_decay;
  }

  // Continues from a checkpoint; the volume must be the one it was trained on.
  Trainer(const Volume3D& raw, Checkpoint ckpt, MaskCache* cache = nullptr) : raw_(raw), cfg_(ckpt.config) {
    if (ckpt.fingerprint != fingerprint(raw) || !(ckpt.dims == raw.dims()))
      throw FingerprintMismatch("checkpoint was trained on a different volume (fingerprint " + hex64(ckpt.fingerprint) +
                                ", input " + hex64(fingerprint(raw)) + ")");
    cfg_.validate();
    setup(cache);
    nets_ = std::move(ckpt.nets);
    adam_ = std::move(ckpt.adam);
    step_ = ckpt.step;
    history_ = std::move(ckpt.history);
    if (step_ > cfg_.max_iters) throw PreconditionError("checkpoint is past the iteration budget");
  }

  // Changes the iteration budget (the learning-rate schedule follows it).
  void set_max_iters(std::int64_t n) {
    if (n < step_) throw PreconditionError("max_iters is below the completed step count");
    cfg_.max_iters = n;
    cfg_.validate();
  }

  [[nodiscard]] bool finished() const { return step_ >= cfg_.max_iters || plateau_; }
  [[nodiscard]] bool plateau_stopped() const { return plateau_; }
  [[nodiscard]] std::int64_t step() const { return step_; }
  [[nodiscard]] const TrainConfig& config() const { return cfg_; }
  [[nodiscard]] const nn::Networks<float>& networks() const { return nets_; }
  [[nodiscard]] const SignalMask& mask() const { return mask_; }
  [[nodiscard]] const std::vector<LossRecord>& history() const { return history_; }
  [[nodiscard]] const nn::AdamState& optimizer() const { return adam_; }
  [[nodiscard]] std::size_t uniform_fallbacks() const { return fallbacks_; }
  [[nodiscard]] std::uint64_t volume_fingerprint() const { return fingerprint_; }

  // One optimization step. Returns the loss of the batch it was computed on;
  // a non-finite loss or gradient throws before any parameter changes.
  LossRecord step_once() {
    if (finished()) throw PreconditionError("training already finished");
    const auto t0 = std::chrono::steady_clock::now();
    const BatchPlan plan = draw_batch(raw_, mask_.mask, cfg_, step_);
    const auto ctx = make_context(raw_, mask_.mask, cfg_, plan);
    auto obj = evaluate_batch(nets_, ctx, plan.targets, step_, true);
    fallbacks_ += obj.uniform_fallbacks;
    if (!std::isfinite(obj.loss.total)) throw NumericError("non-finite loss at step " + std::to_string(step_));

    LossRecord rec;
    rec.step = step_;
    rec.lr = nn::lr_schedule(step_, cfg_.max_iters, cfg_.lr_start, cfg_.lr_end);
    rec.signal = obj.loss.signal;
    rec.tv = obj.loss.tv;
    rec.total = obj.loss.total;
    rec.n_signal = obj.loss.n_signal;

    auto params = nets_.tensors();
    std::vector<const std::vector<double>*> grads;
    for (const auto& g : obj.grads) grads.push_back(&g);
    nn::adam_step<float>(params, grads, adam_, rec.lr);
    ++step_;

    wall_ms_ += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    rec.wall_ms = wall_ms_;
    if (rec.step % cfg_.log_interval == 0 || step_ == cfg_.max_iters) history_.push_back(rec);
    track_plateau(rec.total);
    return rec;
  }

  [[nodiscard]] Checkpoint checkpoint() const {
    Checkpoint c;
    c.config = cfg_;
    c.config_hash = config_hash(cfg_);
    c.fingerprint = fingerprint_;
    c.dims = raw_.dims();
    c.spacing = raw_.spacing();
    c.range = raw_.intensity_range();
    c.step = step_;
    c.nets = nets_;
    c.adam = adam_;
    c.history = history_;
    return c;
  }

  [[nodiscard]] double wall_ms() const { return wall_ms_; }

 private:
  void setup(MaskCache* cache) {
    fingerprint_ = fingerprint(raw_);
    mask_ = preprocess(raw_, cfg_, cache);
    if (mask_.voxels == 0)
      throw NoSignalError("structure amplification found no signal voxels (constant or empty input?)");
  }

  void track_plateau(double total) {
    if (!cfg_.plateau_stop) return;
    recent_.push_back(total);
    const auto w = static_cast<std::size_t>(cfg_.plateau_window);
    if (recent_.size() > 2 * w) recent_.pop_front();
    if (recent_.size() < 2 * w || step_ % cfg_.plateau_window != 0) return;
    double prev = 0.0, cur = 0.0;
    for (std::size_t i = 0; i < w; ++i) {
      prev += recent_[i];
      cur += recent_[w + i];
    }
    if (prev > 0 && (prev - cur) / prev < cfg_.plateau_tol) plateau_ = true;
  }

  const Volume3D& raw_;
  TrainConfig cfg_;
  std::uint64_t fingerprint_ = 0;
  SignalMask mask_;
  nn::Networks<float> nets_;
  nn::AdamState adam_;
  std::int64_t step_ = 0;
  std::vector<LossRecord> history_;
  std::deque<double> recent_;
  bool plateau_ = false;
  std::size_t fallbacks_ = 0;
  double wall_ms_ = 0.0;
};

namespace detail {

// Drives a trainer to completion (or opts.stop_after), persisting checkpoints
// from immutable snapshots on a background thread.
inline TrainReport run_trainer(Trainer& tr, const TrainOptions& opts) {
  const auto& cfg = tr.config();
  std::future<void> pending;
  auto persist = [&] {
    if (opts.checkpoint_path.empty()) return;
    if (pending.valid()) pending.get();
    pending = std::async(std::launch::async, [snap = tr.checkpoint(), path = opts.checkpoint_path] {
      save_checkpoint(snap, path);
    });
  };
  auto stop = [&] { return tr.finished() || (opts.stop_after && tr.step() >= *opts.stop_after); };
  if (tr.step() == 0 || stop()) persist();
  try {
    while (!stop()) {
      const auto before = tr.history().size();
      tr.step_once();
      if (opts.on_record && tr.history().size() > before) opts.on_record(tr.history().back());
      if (tr.step() % cfg.checkpoint_interval == 0 || stop()) persist();
    }
  } catch (...) {
    if (pending.valid()) pending.wait();
    throw;
  }
  if (pending.valid()) pending.get();

  TrainReport r;
  r.history = tr.history();
  r.wall_ms = tr.wall_ms();
  r.checkpoint_path = opts.checkpoint_path;
  r.config = cfg;
  r.fingerprint = tr.volume_fingerprint();
  r.steps = tr.step();
  r.plateau_stopped = tr.plateau_stopped();
  r.uniform_fallbacks = tr.uniform_fallbacks();
  r.mask_threshold = tr.mask().threshold;
  r.mask_voxels = tr.mask().voxels;
  r.nets = tr.networks();
  return r;
}

}  // namespace detail

inline TrainReport train(const Volume3D& raw, const TrainConfig& cfg, const TrainOptions& opts = {}) {
  Trainer tr(raw, cfg, opts.cache);
  return detail::run_trainer(tr, opts);
}

inline TrainReport resume(const std::string& checkpoint_path, const Volume3D& raw, const TrainOptions& opts = {}) {
  Trainer tr(raw, load_checkpoint(checkpoint_path), opts.cache);
  if (opts.max_iters) tr.set_max_iters(*opts.max_iters);
  TrainOptions o = opts;
  if (o.checkpoint_path.empty()) o.checkpoint_path = checkpoint_path;
  return detail::run_trainer(tr, o);
}

}  // namespace cellinr
