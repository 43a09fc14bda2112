#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <thread>
#include <vector>

#include "vrga/error.hpp"
#include "vrga/toy/task.hpp"
#include "vrga/toy/transformer.hpp"

namespace vrga::toy {

struct CurvePoint {
  std::size_t step = 0;
  double loss = 0.0;  // mean training loss over the preceding window
};

struct TrainResult {
  Model model;
  std::vector<CurvePoint> curve;
  double eval_accuracy = 0.0;
};

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Each index is handled
// by exactly one thread, so per-index outputs do not depend on the job count.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t j = 0; j < jobs; ++j) {
    pool.emplace_back([&, j] {
      for (std::size_t i = j; i < n; i += jobs) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

inline int argmax(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

// Builds the intervention for sample i; returning an empty Intervention
// means a clean pass.
using InterventionFn = std::function<Intervention(std::size_t)>;

// Per-sample correctness of the argmax answer.
inline std::vector<char> predict_correct(const Model& model, const std::vector<ToySample>& samples,
                                         const InterventionFn& make_hook = {}, std::size_t jobs = 1) {
  std::vector<char> ok(samples.size(), 0);
  parallel_for(samples.size(), jobs, [&](std::size_t i) {
    const Intervention hook = make_hook ? make_hook(i) : Intervention{};
    const auto out = model.forward(samples[i], hook.empty() ? nullptr : &hook);
    ok[i] = argmax(out.logits) == samples[i].answer ? 1 : 0;
  });
  return ok;
}

inline double accuracy(const Model& model, const std::vector<ToySample>& samples,
                       const InterventionFn& make_hook = {}, std::size_t jobs = 1) {
  if (samples.empty()) return 0.0;
  const auto ok = predict_correct(model, samples, make_hook, jobs);
  return static_cast<double>(std::accumulate(ok.begin(), ok.end(), std::size_t{0})) /
         static_cast<double>(samples.size());
}

// Mean loss and gradient over a batch.
inline double batch_gradient(const Model& model, const std::vector<ToySample>& samples,
                             const std::vector<std::size_t>& batch, std::vector<double>& grad) {
  std::fill(grad.begin(), grad.end(), 0.0);
  const double w = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  ForwardCache<double> cache;
  for (auto i : batch) {
    const auto out = model.forward(samples[i], nullptr, &cache);
    loss += Model::loss(out.logits, samples[i].answer) * w;
    model.backward(samples[i], cache, samples[i].answer, w, grad);
  }
  return loss;
}

// Minibatch training with a fixed schedule (linear warmup, cosine decay).
// Deterministic given the config: data order, init and updates are seeded.
inline TrainResult train(const ToyConfig& cfg, const TaskOptions& task = {}) {
  cfg.validate();
  TrainResult res{Model(cfg), {}, 0.0};
  auto& model = res.model;
  model.init(cfg.seed);
  const auto data = make_dataset(cfg, task, cfg.train_samples, train_split_seed(cfg.seed));
  auto& p = model.params();
  std::vector<double> grad(p.size()), m1(p.size(), 0.0), m2(p.size(), 0.0);
  std::vector<char> decays(p.size(), 0);
  for (const auto& b : model.param_layout().blocks()) {
    if (b.rows > 1) std::fill_n(decays.begin() + static_cast<std::ptrdiff_t>(b.offset), b.size(), 1);
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.seed + 7);
  std::size_t cursor = order.size();
  const std::size_t warmup = std::min<std::size_t>(50, cfg.steps / 10 + 1);
  double window = 0.0;
  std::size_t window_n = 0;
  const std::size_t report_every = std::max<std::size_t>(1, cfg.steps / 50);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<std::size_t> batch;
    while (batch.size() < cfg.batch_size && !data.empty()) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }
    const double loss = batch_gradient(model, data, batch, grad);
    if (!std::isfinite(loss)) throw NumericalError("toy training diverged at step " + std::to_string(step));
    window += loss;
    ++window_n;

    const double progress = static_cast<double>(step) / static_cast<double>(cfg.steps);
    double lr = cfg.learning_rate * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
    if (step < warmup) lr *= static_cast<double>(step + 1) / static_cast<double>(warmup);

    if (cfg.optimizer == Optimizer::kAdam) {
      constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(step + 1));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(step + 1));
      for (std::size_t i = 0; i < p.size(); ++i) {
        m1[i] = b1 * m1[i] + (1.0 - b1) * grad[i];
        m2[i] = b2 * m2[i] + (1.0 - b2) * grad[i] * grad[i];
        p[i] -= lr * ((m1[i] / c1) / (std::sqrt(m2[i] / c2) + eps) + (decays[i] ? cfg.weight_decay * p[i] : 0.0));
      }
    } else {
      for (std::size_t i = 0; i < p.size(); ++i) {
        m1[i] = cfg.momentum * m1[i] + grad[i] + (decays[i] ? cfg.weight_decay * p[i] : 0.0);
        p[i] -= lr * m1[i];
      }
    }
    if ((step + 1) % report_every == 0 || step + 1 == cfg.steps) {
      res.curve.push_back({step + 1, window / static_cast<double>(window_n)});
      window = 0.0;
      window_n = 0;
    }
  }
  const auto eval = make_dataset(cfg, {TaskKind::kFindPatch}, cfg.eval_samples, eval_split_seed(cfg.seed));
  res.eval_accuracy = accuracy(model, eval);
  return res;
}

}  // namespace vrga::toy
