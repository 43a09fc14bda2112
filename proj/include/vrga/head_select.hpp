#pragma once

// Per-layer head selection.
//
// Vision-focused heads: within each layer keep the heads whose R_img is in
// the top (1 - r_img_quantile) fraction, then take the k with the lowest
// EFR. Background heads: in the earliest layers, heads with R_img below and
// H_img above the layer median, ranked by highest EFR. Ties always go to the
// lower head index.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "vrga/container.hpp"
#include "vrga/dump.hpp"
#include "vrga/error.hpp"
#include "vrga/metrics.hpp"

namespace vrga {

struct SelectionConfig {
  std::optional<std::size_t> heads_per_layer;  // k; see resolved_k
  double r_img_quantile = 0.5;
  double background_layer_fraction = 0.25;
  std::optional<std::size_t> background_count_per_layer;  // defaults to k

  // 5 heads for 16-head layers, 10 for 32-head layers, otherwise ceil(H / 3).
  std::size_t resolved_k(std::size_t heads) const {
    if (heads_per_layer) return *heads_per_layer;
    if (heads == 16) return 5;
    if (heads == 32) return 10;
    return (heads + 2) / 3;
  }

  std::size_t resolved_background_count(std::size_t heads) const {
    return background_count_per_layer.value_or(resolved_k(heads));
  }

  void validate(std::size_t heads) const {
    const auto k = resolved_k(heads);
    if (k < 1 || k > heads) {
      throw ValidationError("selection: heads_per_layer must lie in [1, " + std::to_string(heads) + "]");
    }
    if (!(r_img_quantile > 0.0 && r_img_quantile < 1.0)) {
      throw ValidationError("selection: r_img_quantile must lie in (0, 1)");
    }
    if (!(background_layer_fraction > 0.0 && background_layer_fraction <= 1.0)) {
      throw ValidationError("selection: background_layer_fraction must lie in (0, 1]");
    }
  }
};

enum class SelectionRule { kEfrGuided, kRandom, kLowVisual };

inline const char* to_string(SelectionRule r) {
  switch (r) {
    case SelectionRule::kEfrGuided: return "efr-guided";
    case SelectionRule::kRandom: return "random";
    case SelectionRule::kLowVisual: return "low-visual";
  }
  return "?";
}

inline SelectionRule parse_selection_rule(const std::string& s) {
  if (s == "efr-guided") return SelectionRule::kEfrGuided;
  if (s == "random") return SelectionRule::kRandom;
  if (s == "low-visual") return SelectionRule::kLowVisual;
  throw ValidationError("unknown selection rule '" + s + "'");
}

struct HeadSelection {
  std::vector<HeadIndex> vision_heads;      // ascending (layer, head)
  std::vector<HeadIndex> background_heads;  // ascending (layer, head)
  SelectionRule rule = SelectionRule::kEfrGuided;
  std::optional<std::uint64_t> seed;
  std::vector<std::size_t> shortfall;  // per layer: k minus heads actually selected
  std::vector<std::string> warnings;
};

namespace detail {

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

// R_img value a head must reach in `layer` to pass the quantile filter;
// nullopt when no head in the layer has a defined R_img.
inline std::optional<double> r_img_cutoff(const HeadMetricsTable& t, std::size_t layer,
                                          double quantile) {
  std::vector<double> r;
  for (std::size_t h = 0; h < t.heads; ++h) {
    if (const auto& v = t.at(layer, h).r_img) r.push_back(*v);
  }
  if (r.empty()) return std::nullopt;
  std::sort(r.begin(), r.end(), std::greater<>());
  const double want = (1.0 - quantile) * static_cast<double>(r.size());
  const auto keep = std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(want - 1e-9)), 1, r.size());
  return r[keep - 1];
}

inline HeadSelection select_vision_heads(const HeadMetricsTable& t, const SelectionConfig& cfg) {
  cfg.validate(t.heads);
  const auto k = cfg.resolved_k(t.heads);
  HeadSelection sel;
  sel.rule = SelectionRule::kEfrGuided;
  for (std::size_t l = 0; l < t.layers; ++l) {
    const auto cutoff = r_img_cutoff(t, l, cfg.r_img_quantile);
    std::vector<std::size_t> eligible;
    for (std::size_t h = 0; h < t.heads; ++h) {
      const auto& m = t.at(l, h);
      if (cutoff && m.r_img && *m.r_img >= *cutoff && m.efr) eligible.push_back(h);
    }
    std::stable_sort(eligible.begin(), eligible.end(), [&](std::size_t a, std::size_t b) {
      return *t.at(l, a).efr < *t.at(l, b).efr;
    });
    const auto take = std::min(k, eligible.size());
    std::vector<std::size_t> chosen(eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(take));
    std::sort(chosen.begin(), chosen.end());
    for (auto h : chosen) sel.vision_heads.push_back({l, h});
    sel.shortfall.push_back(k - take);
    if (take < k) {
      sel.warnings.push_back("layer " + std::to_string(l) + ": only " + std::to_string(take) +
                             " of " + std::to_string(k) + " heads eligible");
    }
  }
  return sel;
}

inline std::size_t background_layer_count(std::size_t layers, double fraction) {
  const auto n = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(layers) - 1e-9));
  return std::clamp<std::size_t>(n, 1, layers);
}

// Heads listed in `exclude` (typically the vision set) are never returned.
inline HeadSelection select_background_heads(const HeadMetricsTable& t, const SelectionConfig& cfg,
                                             const std::vector<HeadIndex>& exclude = {}) {
  cfg.validate(t.heads);
  const auto count = cfg.resolved_background_count(t.heads);
  constexpr double kInf = std::numeric_limits<double>::infinity();
  HeadSelection sel;
  sel.rule = SelectionRule::kEfrGuided;
  const auto early = background_layer_count(t.layers, cfg.background_layer_fraction);
  for (std::size_t l = 0; l < early; ++l) {
    std::vector<double> rs, hs;
    for (std::size_t h = 0; h < t.heads; ++h) {
      const auto& m = t.at(l, h);
      if (m.r_img) rs.push_back(*m.r_img);
      if (m.h_img) hs.push_back(*m.h_img);
    }
    const double r_med = rs.empty() ? kInf : detail::median(rs);
    const double h_med = hs.empty() ? -kInf : detail::median(hs);
    std::vector<std::size_t> cand;
    for (std::size_t h = 0; h < t.heads; ++h) {
      if (std::find(exclude.begin(), exclude.end(), HeadIndex{l, h}) != exclude.end()) continue;
      const auto& m = t.at(l, h);
      const bool low_r = !m.r_img || *m.r_img < r_med;
      const bool high_h = !m.h_img || *m.h_img > h_med;
      if (low_r && high_h) cand.push_back(h);
    }
    std::stable_sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t b) {
      return t.at(l, a).efr.value_or(kInf) > t.at(l, b).efr.value_or(kInf);
    });
    cand.resize(std::min(count, cand.size()));
    std::sort(cand.begin(), cand.end());
    for (auto h : cand) sel.background_heads.push_back({l, h});
  }
  if (sel.background_heads.empty()) {
    sel.warnings.push_back("no background heads found in the first " + std::to_string(early) + " layer(s)");
  }
  return sel;
}

// Vision heads plus background heads, disjoint.
inline HeadSelection select_heads(const HeadMetricsTable& t, const SelectionConfig& cfg) {
  auto sel = select_vision_heads(t, cfg);
  auto bg = select_background_heads(t, cfg, sel.vision_heads);
  sel.background_heads = std::move(bg.background_heads);
  sel.warnings.insert(sel.warnings.end(), bg.warnings.begin(), bg.warnings.end());
  return sel;
}

// Random (seeded) or lowest-R_img choice of k heads per layer. Only the
// vision set is filled: these are masking baselines.
inline HeadSelection baseline_selection(SelectionRule rule, const HeadMetricsTable& t,
                                        const SelectionConfig& cfg, std::uint64_t seed = 0) {
  cfg.validate(t.heads);
  const auto k = cfg.resolved_k(t.heads);
  HeadSelection sel;
  sel.rule = rule;
  switch (rule) {
    case SelectionRule::kRandom: {
      sel.seed = seed;
      std::mt19937_64 rng(seed);
      for (std::size_t l = 0; l < t.layers; ++l) {
        std::vector<std::size_t> idx(t.heads);
        std::iota(idx.begin(), idx.end(), 0);
        // Partial Fisher-Yates with an explicit modulo draw keeps the result
        // identical across standard libraries.
        for (std::size_t i = 0; i < k; ++i) {
          const auto j = i + static_cast<std::size_t>(rng() % (t.heads - i));
          std::swap(idx[i], idx[j]);
        }
        std::vector<std::size_t> chosen(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
        std::sort(chosen.begin(), chosen.end());
        for (auto h : chosen) sel.vision_heads.push_back({l, h});
        sel.shortfall.push_back(0);
      }
      break;
    }
    case SelectionRule::kLowVisual: {
      constexpr double kNegInf = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < t.layers; ++l) {
        std::vector<std::size_t> idx(t.heads);
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
          return t.at(l, a).r_img.value_or(kNegInf) < t.at(l, b).r_img.value_or(kNegInf);
        });
        std::vector<std::size_t> chosen(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
        std::sort(chosen.begin(), chosen.end());
        for (auto h : chosen) sel.vision_heads.push_back({l, h});
        sel.shortfall.push_back(0);
      }
      break;
    }
    case SelectionRule::kEfrGuided:
      return select_vision_heads(t, cfg);
  }
  return sel;
}

inline container::Json heads_to_json(const std::vector<HeadIndex>& heads) {
  auto a = container::Json::array();
  for (const auto& h : heads) a.push_back({h.layer, h.head});
  return a;
}

inline std::vector<HeadIndex> heads_from_json(const container::Json& a, const char* what) {
  if (!a.is_array()) throw ValidationError(std::string("'") + what + "' must be an array");
  std::vector<HeadIndex> out;
  for (const auto& e : a) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_number_unsigned() || !e[1].is_number_unsigned()) {
      throw ValidationError(std::string("'") + what + "' entries must be [layer, head]");
    }
    out.push_back({e[0].get<std::size_t>(), e[1].get<std::size_t>()});
  }
  return out;
}

inline container::Json selection_to_json(const HeadSelection& s) {
  container::Json j;
  j["rule"] = to_string(s.rule);
  if (s.seed) j["seed"] = *s.seed;
  j["vision_heads"] = heads_to_json(s.vision_heads);
  j["background_heads"] = heads_to_json(s.background_heads);
  return j;
}

inline HeadSelection selection_from_json(const container::Json& j) {
  HeadSelection s;
  s.rule = parse_selection_rule(container::field<std::string>(j, "rule"));
  if (j.contains("seed")) s.seed = container::field<std::uint64_t>(j, "seed");
  s.vision_heads = heads_from_json(container::field<container::Json>(j, "vision_heads"), "vision_heads");
  s.background_heads =
      heads_from_json(container::field<container::Json>(j, "background_heads"), "background_heads");
  return s;
}

}  // namespace vrga
