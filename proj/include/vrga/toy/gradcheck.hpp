#pragma once

// Analytic gradients against central finite differences.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "vrga/toy/train.hpp"

namespace vrga::toy {

struct GradCheckConfig {
  std::size_t params = 200;  // sampled parameter indices
  double step = 1e-6;
  double floor = 1e-6;       // denominator floor of the relative error
  std::uint64_t seed = 0;
  bool extended_oracle = true;  // finite differences in long double
};

struct GradCheckEntry {
  std::size_t index = 0;
  std::string block;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<GradCheckEntry> entries;  // in sampling order
  std::size_t worst = 0;                // position in entries
};

inline double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Indices drawn round-robin over parameter blocks, uniformly within a block,
// so small blocks (gains, biases) are always represented.
inline std::vector<std::size_t> sample_param_indices(const ParamLayout& layout, std::size_t count,
                                                     std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto& blocks = layout.blocks();
  std::vector<std::size_t> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto& b = blocks[i % blocks.size()];
    out.push_back(b.offset + static_cast<std::size_t>(rng() % b.size()));
  }
  return out;
}

inline std::string block_of(const ParamLayout& layout, std::size_t index) {
  for (const auto& b : layout.blocks()) {
    if (index >= b.offset && index < b.offset + b.size()) return b.name;
  }
  return "?";
}

namespace detail {

template <class S>
S batch_loss(const Transformer<S>& m, const std::vector<ToySample>& batch) {
  S sum = S(0);
  for (const auto& s : batch) sum += Transformer<S>::loss(m.forward(s).logits, s.answer);
  return sum / static_cast<S>(batch.size());
}

template <class S>
Transformer<S> cast_model(const Model& model) {
  Transformer<S> out(model.config());
  for (std::size_t i = 0; i < model.params().size(); ++i) out.params()[i] = static_cast<S>(model.params()[i]);
  return out;
}

template <class S, class F>
double central_difference(Transformer<S>& m, std::size_t index, double step, F&& f) {
  const S orig = m.params()[index];
  const S h = static_cast<S>(step);
  m.params()[index] = orig + h;
  const S up = f(m);
  m.params()[index] = orig - h;
  const S down = f(m);
  m.params()[index] = orig;
  return static_cast<double>((up - down) / (S(2) * h));
}

template <class S>
GradCheckReport compare(const Model& model, const std::vector<double>& grad, const GradCheckConfig& cfg,
                        const std::function<S(const Transformer<S>&)>& f) {
  auto m = cast_model<S>(model);
  GradCheckReport rep;
  for (auto i : sample_param_indices(model.param_layout(), cfg.params, cfg.seed)) {
    GradCheckEntry e;
    e.index = i;
    e.block = block_of(model.param_layout(), i);
    e.analytic = grad[i];
    e.numeric = central_difference(m, i, cfg.step, f);
    e.rel_error = relative_error(e.analytic, e.numeric, cfg.floor);
    if (e.rel_error > rep.max_rel_error || rep.entries.empty()) {
      rep.max_rel_error = std::max(rep.max_rel_error, e.rel_error);
      rep.worst = rep.entries.size();
    }
    rep.entries.push_back(std::move(e));
  }
  return rep;
}

}  // namespace detail

// Mean cross-entropy over `batch`. `corrupt`, when set, edits the analytic
// gradient before the comparison.
inline GradCheckReport grad_check(const Model& model, const std::vector<ToySample>& batch,
                                  const GradCheckConfig& cfg = {},
                                  const std::function<void(std::vector<double>&)>& corrupt = {}) {
  if (batch.empty()) throw ValidationError("gradcheck: empty batch");
  if (!(cfg.step > 0.0) || !(cfg.floor > 0.0) || cfg.params == 0) {
    throw ValidationError("gradcheck: step, floor and params must be positive");
  }
  std::vector<double> grad(model.params().size());
  std::vector<std::size_t> all(batch.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  batch_gradient(model, batch, all, grad);
  if (corrupt) corrupt(grad);
  if (cfg.extended_oracle) {
    return detail::compare<long double>(model, grad, cfg,
                                        [&](const Transformer<long double>& m) { return detail::batch_loss(m, batch); });
  }
  return detail::compare<double>(model, grad, cfg, [&](const Model& m) { return detail::batch_loss(m, batch); });
}

// The answer logit is linear in the readout weights and bias, so finite
// differences over those blocks are exact up to rounding.
inline GradCheckReport linear_readout_check(const Model& model, const ToySample& sample,
                                            const GradCheckConfig& cfg = {}) {
  const auto& layout = model.param_layout();
  const auto& w = layout.global_block(ParamLayout::kUnembed);
  const auto& b = layout.global_block(ParamLayout::kUnembedB);
  ForwardCache<double> cache;
  model.forward(sample, nullptr, &cache);
  const auto a = static_cast<std::size_t>(sample.answer);
  std::vector<double> grad(model.params().size(), 0.0);
  for (std::size_t j = 0; j < w.rows; ++j) grad[w.offset + j * w.cols + a] = cache.h_f(static_cast<Eigen::Index>(j));
  grad[b.offset + a] = 1.0;

  auto m = detail::cast_model<long double>(model);
  auto f = [&](const Transformer<long double>& t) { return t.forward(sample).logits[a]; };
  std::mt19937_64 rng(cfg.seed);
  GradCheckReport rep;
  for (std::size_t k = 0; k < cfg.params; ++k) {
    const auto& blk = (k % 4 == 3) ? b : w;
    const std::size_t i = blk.offset + static_cast<std::size_t>(rng() % blk.size());
    GradCheckEntry e{i, blk.name, grad[i], detail::central_difference(m, i, cfg.step, f), 0.0};
    e.rel_error = relative_error(e.analytic, e.numeric, cfg.floor);
    if (e.rel_error > rep.max_rel_error || rep.entries.empty()) {
      rep.max_rel_error = std::max(rep.max_rel_error, e.rel_error);
      rep.worst = rep.entries.size();
    }
    rep.entries.push_back(std::move(e));
  }
  return rep;
}

}  // namespace vrga::toy
