#pragma once

// Head-level attention statistics over a single attention row:
//   rrar   mean attention on a region B divided by mean attention on V
//   r_img  mean attention on V divided by mean attention on all M tokens
//   h_img  entropy (nats) of the row renormalized inside V, with a small
//          epsilon inside the log
//   efr    h_img / r_img
// plus layer averages, the per-sample R_img ~ H_img least-squares fit and
// the correctness/irrelevance score.
//
// Quantities that are undefined for a given row (zero mass where a ratio
// needs it) come back as std::nullopt, never NaN.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vrga/dump.hpp"
#include "vrga/error.hpp"
#include "vrga/layout.hpp"

namespace vrga {

struct MetricsConfig {
  double epsilon = 1e-8;

  void validate() const {
    if (!(epsilon > 0.0)) throw ValidationError("metrics: epsilon must be positive");
  }
};

namespace detail {

template <class T>
void check_row(std::span<const T> row, const TokenLayout& layout) {
  if (row.size() != layout.total_tokens()) {
    throw ValidationError("attention row has " + std::to_string(row.size()) +
                          " entries, layout expects " + std::to_string(layout.total_tokens()));
  }
}

// Sums run in long double: a run of identical values then sums exactly for
// any M below 2^11, so a uniform row gives RRAR = 1 with no rounding.
template <class T>
long double visual_mass(std::span<const T> row, const TokenLayout& layout) {
  long double s = 0.0L;
  for (auto i : layout.visual_tokens()) s += static_cast<long double>(row[i]);
  return s;
}

}  // namespace detail

template <class T>
std::optional<double> rrar(std::span<const T> row, const TokenLayout& layout,
                           const RegionMask& region) {
  detail::check_row(row, layout);
  if (region.empty()) throw ValidationError("rrar: region is empty");
  long double region_mass = 0.0L;
  for (auto i : region.token_indices) {
    if (!layout.is_visual(i)) {
      throw ValidationError("rrar: region token " + std::to_string(i) + " is not visual");
    }
    region_mass += static_cast<long double>(row[i]);
  }
  const long double vmass = detail::visual_mass(row, layout);
  if (!(vmass > 0.0)) return std::nullopt;
  const long double region_mean = region_mass / static_cast<long double>(region.size());
  const long double visual_mean = vmass / static_cast<long double>(layout.visual_count());
  return static_cast<double>(region_mean / visual_mean);
}

template <class T>
std::optional<double> image_attention_ratio(std::span<const T> row, const TokenLayout& layout) {
  detail::check_row(row, layout);
  long double total = 0.0L;
  long double vmass = 0.0L;
  for (std::size_t j = 0; j < row.size(); ++j) {
    const auto a = static_cast<long double>(row[j]);
    total += a;
    if (layout.is_visual(j)) vmass += a;
  }
  if (!(total > 0.0)) return std::nullopt;
  const long double visual_mean = vmass / static_cast<long double>(layout.visual_count());
  const long double overall_mean = total / static_cast<long double>(layout.total_tokens());
  return static_cast<double>(visual_mean / overall_mean);
}

template <class T>
std::optional<double> image_attention_entropy(std::span<const T> row, const TokenLayout& layout,
                                              const MetricsConfig& cfg = {}) {
  detail::check_row(row, layout);
  const double vmass = detail::visual_mass(row, layout);
  if (!(vmass > 0.0)) return std::nullopt;
  double h = 0.0;
  for (auto i : layout.visual_tokens()) {
    const double p = static_cast<double>(row[i]) / vmass;
    h -= p * std::log(p + cfg.epsilon);
  }
  return h;
}

inline std::optional<double> entropy_focus_ratio(std::optional<double> h_img,
                                                 std::optional<double> r_img) {
  if (!h_img || !r_img || !(*r_img > 0.0)) return std::nullopt;
  return *h_img / *r_img;
}

struct HeadMetrics {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::optional<double> rrar;
  std::optional<double> r_img;
  std::optional<double> h_img;
  std::optional<double> efr;
};

inline std::optional<double> efr(const HeadMetrics& m) { return entropy_focus_ratio(m.h_img, m.r_img); }

template <class T>
HeadMetrics head_metrics(std::span<const T> row, const TokenLayout& layout,
                         const RegionMask* region, const MetricsConfig& cfg = {},
                         std::size_t layer = 0, std::size_t head = 0) {
  HeadMetrics m;
  m.layer = layer;
  m.head = head;
  if (region != nullptr) m.rrar = rrar(row, layout, *region);
  m.r_img = image_attention_ratio(row, layout);
  m.h_img = image_attention_entropy(row, layout, cfg);
  m.efr = entropy_focus_ratio(m.h_img, m.r_img);
  return m;
}

// Per-(layer, head) metrics, stored layer-major.
struct HeadMetricsTable {
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::vector<HeadMetrics> entries;

  const HeadMetrics& at(std::size_t layer, std::size_t head) const {
    if (layer >= layers || head >= heads) throw RangeError("metrics table index out of range");
    return entries[layer * heads + head];
  }
  bool has_rrar() const {
    return std::any_of(entries.begin(), entries.end(), [](const auto& e) { return e.rrar.has_value(); });
  }
};

// `row_of(layer, head)` returns a span over the M-token attention row.
template <class RowFn>
HeadMetricsTable compute_head_metrics(std::size_t layers, std::size_t heads,
                                      const TokenLayout& layout, RowFn&& row_of,
                                      const RegionMask* region = nullptr,
                                      const MetricsConfig& cfg = {}) {
  cfg.validate();
  HeadMetricsTable t{layers, heads, {}};
  t.entries.reserve(layers * heads);
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t h = 0; h < heads; ++h) {
      t.entries.push_back(head_metrics(row_of(l, h), layout, region, cfg, l, h));
    }
  }
  return t;
}

inline HeadMetricsTable compute_head_metrics(const AttentionDump& dump,
                                             const RegionMask* region = nullptr,
                                             const MetricsConfig& cfg = {},
                                             std::optional<std::size_t> step = std::nullopt) {
  return compute_head_metrics(dump.layers(), dump.heads(), dump.layout(),
                              [&](std::size_t l, std::size_t h) { return dump.row(l, h, step); },
                              region, cfg);
}

struct LayerRrar {
  std::vector<double> mean;           // one value per layer
  std::vector<std::size_t> skipped;   // heads with undefined rrar, per layer
};

inline LayerRrar layer_rrar(const HeadMetricsTable& table) {
  LayerRrar out;
  for (std::size_t l = 0; l < table.layers; ++l) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t h = 0; h < table.heads; ++h) {
      if (const auto& g = table.at(l, h).rrar) {
        sum += *g;
        ++n;
      }
    }
    if (n == 0) throw ValidationError("layer_rrar: every head is undefined in layer " + std::to_string(l));
    out.mean.push_back(sum / static_cast<double>(n));
    out.skipped.push_back(table.heads - n);
  }
  return out;
}

inline LayerRrar layer_rrar(const AttentionDump& dump, const RegionMask& region,
                            std::optional<std::size_t> step = std::nullopt) {
  if (region.empty()) throw ValidationError("layer_rrar: region is empty");
  return layer_rrar(compute_head_metrics(dump, &region, {}, step));
}

// Ordinary least squares of R_img on H_img across the heads of one sample.
struct RegressionFit {
  double slope = 0.0;
  double intercept = 0.0;
  double pearson = 0.0;
  std::size_t points = 0;
};

struct RhPoint {
  double h_img = 0.0;
  double r_img = 0.0;
};

// Needs at least three points; returns nullopt when either coordinate has
// zero variance.
inline std::optional<RegressionFit> fit_r_h_regression(std::span<const RhPoint> points) {
  if (points.size() < 3) throw ValidationError("regression: at least 3 heads with defined metrics required");
  const double n = static_cast<double>(points.size());
  double mx = 0.0, my = 0.0;
  for (const auto& p : points) {
    mx += p.h_img;
    my += p.r_img;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& p : points) {
    const double dx = p.h_img - mx;
    const double dy = p.r_img - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) return std::nullopt;
  RegressionFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.pearson = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  fit.points = points.size();
  return fit;
}

inline std::vector<RhPoint> rh_points(const HeadMetricsTable& table) {
  std::vector<RhPoint> pts;
  for (const auto& e : table.entries) {
    if (e.h_img && e.r_img) pts.push_back({*e.h_img, *e.r_img});
  }
  return pts;
}

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation (n - 1); 0 for one sample
};

struct RegressionStats {
  MeanStd slope;
  MeanStd intercept;
  MeanStd pearson;
  std::size_t samples = 0;
  std::size_t undefined = 0;  // samples whose fit was degenerate
};

inline MeanStd mean_std(std::span<const double> xs) {
  MeanStd out;
  if (xs.empty()) return out;
  for (double x : xs) out.mean += x;
  out.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return out;
}

inline RegressionStats aggregate_regression(std::span<const std::optional<RegressionFit>> fits) {
  std::vector<double> k, b, r;
  RegressionStats s;
  for (const auto& f : fits) {
    if (!f) {
      ++s.undefined;
      continue;
    }
    k.push_back(f->slope);
    b.push_back(f->intercept);
    r.push_back(f->pearson);
  }
  s.samples = k.size();
  s.slope = mean_std(k);
  s.intercept = mean_std(b);
  s.pearson = mean_std(r);
  return s;
}

struct ScoreInput {
  int correctness = 0;        // A in {0, 1}
  double irrelevance = 0.0;   // I in [0, 1]
  double alpha = 1.0;         // penalty in [0, 1]
};

// S = A * (1 - alpha * I)
inline double comprehensive_score(const ScoreInput& in) {
  if (in.correctness != 0 && in.correctness != 1) throw ValidationError("score: correctness must be 0 or 1");
  if (!(in.irrelevance >= 0.0 && in.irrelevance <= 1.0)) throw ValidationError("score: irrelevance must lie in [0, 1]");
  if (!(in.alpha >= 0.0 && in.alpha <= 1.0)) throw ValidationError("score: alpha must lie in [0, 1]");
  return static_cast<double>(in.correctness) * (1.0 - in.alpha * in.irrelevance);
}

enum class PromptMode { kReason = 0, kDirect = 1, kRegionGuided = 2 };

inline const char* to_string(PromptMode m) {
  switch (m) {
    case PromptMode::kReason: return "reason";
    case PromptMode::kDirect: return "direct";
    case PromptMode::kRegionGuided: return "region-guided";
  }
  return "?";
}

inline PromptMode parse_prompt_mode(const std::string& s) {
  if (s == "reason") return PromptMode::kReason;
  if (s == "direct") return PromptMode::kDirect;
  if (s == "region-guided") return PromptMode::kRegionGuided;
  throw ValidationError("unknown prompt mode '" + s + "'");
}

struct ModeSample {
  PromptMode mode;
  const AttentionDump* dump;
  RegionMask region;
};

struct ModeSummary {
  PromptMode mode;
  std::vector<double> layer_mean;  // Γ̄ per layer, averaged over samples
  double mean = 0.0;               // average over layers
  std::size_t samples = 0;
};

struct ModeReport {
  std::vector<ModeSummary> modes;  // ascending in the expected order reason < direct < region-guided
  bool ordering_holds = false;     // strict increase along that order
};

inline ModeReport compare_modes(std::span<const ModeSample> samples) {
  if (samples.empty()) throw ValidationError("compare_modes: no samples");
  const auto& ref = *samples.front().dump;
  std::map<PromptMode, std::pair<std::vector<double>, std::size_t>> acc;
  for (const auto& s : samples) {
    const auto& d = *s.dump;
    if (d.layers() != ref.layers() || d.heads() != ref.heads() ||
        d.layout().visual_count() != ref.layout().visual_count()) {
      throw ValidationError("compare_modes: mismatched layouts across modes");
    }
    const auto lr = layer_rrar(d, s.region);
    auto& [sum, n] = acc[s.mode];
    if (sum.empty()) sum.assign(d.layers(), 0.0);
    for (std::size_t l = 0; l < lr.mean.size(); ++l) sum[l] += lr.mean[l];
    ++n;
  }
  if (acc.size() < 2) throw ValidationError("compare_modes: at least two prompt modes are required");
  ModeReport report;
  for (auto& [mode, entry] : acc) {
    auto& [sum, n] = entry;
    ModeSummary m{mode, {}, 0.0, n};
    for (double v : sum) {
      m.layer_mean.push_back(v / static_cast<double>(n));
      m.mean += v / static_cast<double>(n);
    }
    m.mean /= static_cast<double>(sum.size());
    report.modes.push_back(std::move(m));
  }
  report.ordering_holds = true;
  for (std::size_t i = 1; i < report.modes.size(); ++i) {
    if (!(report.modes[i - 1].mean < report.modes[i].mean)) report.ordering_holds = false;
  }
  return report;
}

}  // namespace vrga
