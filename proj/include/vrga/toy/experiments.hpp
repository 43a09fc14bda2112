#pragma once

// Desk-scale experiments on the toy model: head-masking ablation, RRAR split
// by correctness, and reweighting toward the ground-truth cell.
//
// Heads are selected per sample from that sample's clean question-end
// attention, as the pipeline would on a real model. Interventions act on
// every non-image query row of the planned heads, which covers the
// question tokens and the answer position.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vrga/dump.hpp"
#include "vrga/head_select.hpp"
#include "vrga/metrics.hpp"
#include "vrga/steer.hpp"
#include "vrga/toy/train.hpp"

namespace vrga::toy {

// qt-slice dump (float32) of one forward pass.
inline AttentionDump qt_dump(const ToyConfig& cfg, const ForwardOutput<double>& out) {
  std::vector<float> data(out.qt_rows.begin(), out.qt_rows.end());
  return AttentionDump(DumpKind::kQtSlice, cfg.layers, cfg.heads, 1, toy_layout(cfg), std::move(data));
}

inline HeadMetricsTable qt_metrics(const ToyConfig& cfg, const ForwardOutput<double>& out,
                                   const RegionMask* region = nullptr) {
  const auto layout = toy_layout(cfg);
  const auto t = cfg.sequence_length();
  return compute_head_metrics(cfg.layers, cfg.heads, layout,
                              [&](std::size_t l, std::size_t h) {
                                return std::span<const double>(out.qt_rows.data() + (l * cfg.heads + h) * t, t);
                              },
                              region);
}

inline const std::vector<std::string>& ablation_strategies() {
  static const std::vector<std::string> names{"baseline", "random", "low-visual", "efr-guided"};
  return names;
}

struct AblationConfig {
  std::size_t heads_per_layer = 3;  // 0 masks nothing
  std::size_t random_draws = 5;     // random selections averaged per sample
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

struct AblationRow {
  std::string strategy;
  double accuracy = 0.0;
};

struct AblationReport {
  std::size_t heads_per_layer = 0;
  std::size_t samples = 0;
  std::vector<AblationRow> rows;  // in ablation_strategies() order

  double at(const std::string& strategy) const {
    for (const auto& r : rows) {
      if (r.strategy == strategy) return r.accuracy;
    }
    throw ValidationError("ablation: no strategy '" + strategy + "'");
  }
};

inline std::uint64_t random_draw_seed(std::uint64_t seed, std::size_t sample, std::size_t draw) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (sample * 131 + draw + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Masks the visual span of k heads per layer, chosen by each strategy.
inline AblationReport ablation_study(const Model& model, const std::vector<ToySample>& samples,
                                     const AblationConfig& cfg = {}) {
  const auto& mc = model.config();
  const auto layout = toy_layout(mc);
  const std::size_t k = cfg.heads_per_layer;
  if (k > mc.heads) throw ValidationError("ablation: heads_per_layer exceeds the head count");
  const std::size_t draws = std::max<std::size_t>(1, cfg.random_draws);
  SelectionConfig sel;
  sel.heads_per_layer = k;

  // hits[s] counts correct answers, with random weighted by 1/draws below.
  std::vector<std::vector<double>> hits(samples.size(), std::vector<double>(4, 0.0));
  auto correct = [&](const ToySample& s, const Intervention* hook) {
    return argmax(model.forward(s, hook).logits) == s.answer ? 1.0 : 0.0;
  };
  auto masked = [&](const ToySample& s, const HeadSelection& hs) {
    const Intervention hook(MaskPlan{hs.vision_heads, layout.spans(), true}, layout, mc.layers, mc.heads);
    return correct(s, &hook);
  };
  parallel_for(samples.size(), cfg.jobs, [&](std::size_t i) {
    const auto& s = samples[i];
    const auto clean = model.forward(s);
    const double base = argmax(clean.logits) == s.answer ? 1.0 : 0.0;
    auto& h = hits[i];
    h[0] = base;
    if (k == 0) {
      h[1] = h[2] = h[3] = base;
      return;
    }
    const auto table = qt_metrics(mc, clean);
    for (std::size_t d = 0; d < draws; ++d) {
      h[1] += masked(s, baseline_selection(SelectionRule::kRandom, table, sel, random_draw_seed(cfg.seed, i, d)));
    }
    h[1] /= static_cast<double>(draws);
    h[2] = masked(s, baseline_selection(SelectionRule::kLowVisual, table, sel));
    h[3] = masked(s, select_vision_heads(table, sel));
  });

  AblationReport rep;
  rep.heads_per_layer = k;
  rep.samples = samples.size();
  for (std::size_t j = 0; j < 4; ++j) {
    double sum = 0.0;
    for (const auto& h : hits) sum += h[j];
    rep.rows.push_back({ablation_strategies()[j], samples.empty() ? 0.0 : sum / static_cast<double>(samples.size())});
  }
  return rep;
}

struct RrarCorrectnessReport {
  std::size_t correct = 0;
  std::size_t incorrect = 0;
  std::vector<double> correct_mean;    // per layer; empty when no correct samples
  std::vector<double> incorrect_mean;  // per layer; empty when no incorrect samples
  bool compared = false;
  std::string skip_reason;
  std::size_t layers_higher = 0;  // layers where correct > incorrect
  double fraction_higher = 0.0;
};

// Per-layer mean RRAR over the target cell, split by prediction correctness.
inline RrarCorrectnessReport rrar_correctness_report(const Model& model, const std::vector<ToySample>& samples,
                                                     std::size_t jobs = 1) {
  const auto& mc = model.config();
  const auto layout = toy_layout(mc);
  std::vector<std::vector<double>> per(samples.size());
  std::vector<char> ok(samples.size(), 0);
  parallel_for(samples.size(), jobs, [&](std::size_t i) {
    const auto out = model.forward(samples[i]);
    ok[i] = argmax(out.logits) == samples[i].answer ? 1 : 0;
    const auto region = make_region(layout, {samples[i].target});
    per[i] = layer_rrar(qt_metrics(mc, out, &region)).mean;
  });

  RrarCorrectnessReport rep;
  std::vector<double> sc(mc.layers, 0.0), si(mc.layers, 0.0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto& acc = ok[i] ? sc : si;
    (ok[i] ? rep.correct : rep.incorrect)++;
    for (std::size_t l = 0; l < mc.layers; ++l) acc[l] += per[i][l];
  }
  auto finish = [&](std::vector<double>& sum, std::size_t n, std::vector<double>& dst) {
    if (n == 0) return;
    dst = sum;
    for (auto& v : dst) v /= static_cast<double>(n);
  };
  finish(sc, rep.correct, rep.correct_mean);
  finish(si, rep.incorrect, rep.incorrect_mean);
  if (samples.size() < 2) {
    rep.skip_reason = "fewer than two samples";
  } else if (rep.incorrect == 0) {
    rep.skip_reason = "every prediction is correct";
  } else if (rep.correct == 0) {
    rep.skip_reason = "every prediction is incorrect";
  } else {
    rep.compared = true;
    for (std::size_t l = 0; l < mc.layers; ++l) {
      if (rep.correct_mean[l] > rep.incorrect_mean[l]) ++rep.layers_higher;
    }
    rep.fraction_higher = static_cast<double>(rep.layers_higher) / static_cast<double>(mc.layers);
  }
  return rep;
}

struct ReweightEvalConfig {
  double gamma = 0.5;
  SelectionConfig selection;  // picks the planned vision heads
  std::size_t jobs = 1;
};

struct ReweightEvalReport {
  std::size_t samples = 0;
  double distracted_accuracy = 0.0;
  double reweighted_accuracy = 0.0;
  double ceiling_accuracy = 0.0;        // planned heads see only the target cell
  std::optional<double> gap_recovered;  // undefined when the ceiling is not above the distracted accuracy
  double planned_rrar_before = 0.0;     // mean RRAR of planned heads over the target cell
  double planned_rrar_after = 0.0;
};

// Reweights the planned vision heads toward the ground-truth cell and
// compares against masking every other image cell on the same heads.
inline ReweightEvalReport reweight_eval(const Model& model, const std::vector<ToySample>& samples,
                                        const ReweightEvalConfig& cfg = {}) {
  const auto& mc = model.config();
  const auto layout = toy_layout(mc);
  const auto t = mc.sequence_length();
  struct Row {
    double dis = 0, rw = 0, ceil = 0, before = 0, after = 0;
  };
  std::vector<Row> rows(samples.size());
  auto mean_rrar = [&](const ForwardOutput<double>& out, const std::vector<HeadIndex>& heads, const RegionMask& region) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& h : heads) {
      const std::span<const double> row(out.qt_rows.data() + (h.layer * mc.heads + h.head) * t, t);
      if (const auto g = rrar(row, layout, region)) {
        sum += *g;
        ++n;
      }
    }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
  };
  parallel_for(samples.size(), cfg.jobs, [&](std::size_t i) {
    const auto& s = samples[i];
    const auto region = make_region(layout, {s.target});
    const auto clean = model.forward(s);
    const auto heads = select_vision_heads(qt_metrics(mc, clean), cfg.selection).vision_heads;
    auto& r = rows[i];
    r.dis = argmax(clean.logits) == s.answer ? 1.0 : 0.0;
    if (heads.empty()) {
      r.rw = r.ceil = r.dis;
      return;
    }
    const Intervention rw(ReweightPlan{heads, {s.target}, cfg.gamma, true}, layout, mc.layers, mc.heads);
    const auto boosted = model.forward(s, &rw);
    r.rw = argmax(boosted.logits) == s.answer ? 1.0 : 0.0;
    std::vector<Span> others;
    for (const auto& sp : layout.spans()) {
      if (sp.contains(s.target)) {
        if (sp.begin < s.target) others.push_back({sp.begin, s.target});
        if (s.target + 1 < sp.end) others.push_back({s.target + 1, sp.end});
      } else {
        others.push_back(sp);
      }
    }
    const Intervention oracle(MaskPlan{heads, others, true}, layout, mc.layers, mc.heads);
    r.ceil = argmax(model.forward(s, &oracle).logits) == s.answer ? 1.0 : 0.0;
    r.before = mean_rrar(clean, heads, region);
    r.after = mean_rrar(boosted, heads, region);
  });

  ReweightEvalReport rep;
  rep.samples = samples.size();
  if (samples.empty()) return rep;
  for (const auto& r : rows) {
    rep.distracted_accuracy += r.dis;
    rep.reweighted_accuracy += r.rw;
    rep.ceiling_accuracy += r.ceil;
    rep.planned_rrar_before += r.before;
    rep.planned_rrar_after += r.after;
  }
  const double n = static_cast<double>(samples.size());
  rep.distracted_accuracy /= n;
  rep.reweighted_accuracy /= n;
  rep.ceiling_accuracy /= n;
  rep.planned_rrar_before /= n;
  rep.planned_rrar_after /= n;
  if (rep.ceiling_accuracy > rep.distracted_accuracy) {
    rep.gap_recovered = (rep.reweighted_accuracy - rep.distracted_accuracy) /
                        (rep.ceiling_accuracy - rep.distracted_accuracy);
  }
  return rep;
}

}  // namespace vrga::toy
