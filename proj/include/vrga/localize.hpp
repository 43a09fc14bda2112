#pragma once

// Sink-suppressed localization map over the visual tokens:
//   map = Norm( mean_{h in Hv} A_h  -  lambda * mean_{h in Hb} A_h )
// where each A_h is the head's question-end row restricted to V and
// renormalized to sum to one inside V, and Norm clamps negatives to zero and
// divides by the maximum. Question-relevant tokens are those with map > tau.

#include <algorithm>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vrga/container.hpp"
#include "vrga/dump.hpp"
#include "vrga/dump_io.hpp"
#include "vrga/error.hpp"
#include "vrga/format.hpp"
#include "vrga/head_select.hpp"

namespace vrga {

enum class MapAggregation {
  kNormalized,  // renormalize each head inside V before averaging
  kRaw,         // average raw attention values
};

struct RefineConfig {
  double lambda = 1.0;
  double tau = 0.5;
  MapAggregation aggregation = MapAggregation::kNormalized;

  void validate() const {
    if (!(lambda >= 0.0)) throw ValidationError("refine: lambda must be nonnegative");
    if (!(tau >= 0.0 && tau <= 1.0)) throw ValidationError("refine: tau must lie in [0, 1]");
  }
};

struct RefinedMap {
  TokenLayout layout;
  std::vector<double> values;  // one per visual token, in layout.visual_tokens() order
  bool all_zero = false;       // nothing survived the subtraction
  std::vector<HeadIndex> vision_heads;
  std::vector<HeadIndex> background_heads;
  double lambda = 0.0;
  std::size_t skipped_heads = 0;  // heads with no visual mass
};

namespace detail {

template <class RowFn>
bool accumulate_heads(const std::vector<HeadIndex>& heads, const TokenLayout& layout,
                      MapAggregation agg, RowFn& row_of, std::vector<double>& mean,
                      std::size_t& skipped) {
  const auto& vis = layout.visual_tokens();
  mean.assign(vis.size(), 0.0);
  std::size_t used = 0;
  for (const auto& hi : heads) {
    const auto row = row_of(hi.layer, hi.head);
    if (row.size() != layout.total_tokens()) throw ValidationError("refine: layout mismatch");
    double vmass = 0.0;
    for (auto i : vis) vmass += static_cast<double>(row[i]);
    if (!(vmass > 0.0)) {
      ++skipped;
      continue;
    }
    const double scale = agg == MapAggregation::kNormalized ? 1.0 / vmass : 1.0;
    for (std::size_t k = 0; k < vis.size(); ++k) mean[k] += static_cast<double>(row[vis[k]]) * scale;
    ++used;
  }
  if (used == 0) return false;
  for (auto& v : mean) v /= static_cast<double>(used);
  return true;
}

}  // namespace detail

template <class RowFn>
RefinedMap refine_map(const TokenLayout& layout, RowFn&& row_of, const HeadSelection& sel,
                      const RefineConfig& cfg) {
  cfg.validate();
  if (sel.vision_heads.empty()) throw ValidationError("refine: vision head set is empty");
  RefinedMap map;
  map.layout = layout;
  map.vision_heads = sel.vision_heads;
  map.background_heads = sel.background_heads;
  map.lambda = cfg.lambda;

  std::vector<double> fg, bg;
  const bool have_fg = detail::accumulate_heads(sel.vision_heads, layout, cfg.aggregation, row_of,
                                                fg, map.skipped_heads);
  const bool have_bg = detail::accumulate_heads(sel.background_heads, layout, cfg.aggregation,
                                                row_of, bg, map.skipped_heads);
  map.values.assign(layout.visual_count(), 0.0);
  if (!have_fg) {
    map.all_zero = true;
    return map;
  }
  double peak = 0.0;
  for (std::size_t k = 0; k < fg.size(); ++k) {
    double v = fg[k] - (have_bg ? cfg.lambda * bg[k] : 0.0);
    v = std::max(v, 0.0);
    map.values[k] = v;
    peak = std::max(peak, v);
  }
  if (!(peak > 0.0)) {
    std::fill(map.values.begin(), map.values.end(), 0.0);
    map.all_zero = true;
    return map;
  }
  for (auto& v : map.values) v /= peak;
  return map;
}

inline RefinedMap refine_map(const AttentionDump& dump, const HeadSelection& sel,
                             const RefineConfig& cfg = {},
                             std::optional<std::size_t> step = std::nullopt) {
  for (const auto* set : {&sel.vision_heads, &sel.background_heads}) {
    for (const auto& h : *set) {
      if (h.layer >= dump.layers() || h.head >= dump.heads()) {
        throw RangeError("refine: head (" + std::to_string(h.layer) + ", " + std::to_string(h.head) +
                         ") outside the dump");
      }
    }
  }
  return refine_map(dump.layout(), [&](std::size_t l, std::size_t h) { return dump.row(l, h, step); },
                    sel, cfg);
}

struct TokenSelection {
  std::vector<std::size_t> tokens;  // token indices, ascending
  std::vector<std::string> warnings;
};

// Tokens with map value strictly greater than tau.
inline TokenSelection select_tokens(const RefinedMap& map, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ValidationError("select_tokens: tau must lie in [0, 1]");
  TokenSelection out;
  const auto& vis = map.layout.visual_tokens();
  for (std::size_t k = 0; k < map.values.size(); ++k) {
    if (map.values[k] > tau) out.tokens.push_back(vis[k]);
  }
  if (out.tokens.empty()) out.warnings.push_back("no visual token exceeds tau; reweighting becomes identity");
  return out;
}

inline TokenSelection select_tokens(const RefinedMap& map, const RefineConfig& cfg) {
  return select_tokens(map, cfg.tau);
}

inline container::Json refined_map_to_json(const RefinedMap& m) {
  container::Json j;
  j["values"] = m.values;
  j["tokens"] = m.layout.visual_tokens();
  j["all_zero"] = m.all_zero;
  j["provenance"] = {{"vision_heads", heads_to_json(m.vision_heads)},
                     {"background_heads", heads_to_json(m.background_heads)},
                     {"lambda", m.lambda}};
  j["layout"] = layout_to_json(m.layout);
  return j;
}

inline RefinedMap refined_map_from_json(const container::Json& j) {
  using container::field;
  RefinedMap m;
  m.layout = layout_from_json(field<container::Json>(j, "layout"));
  m.values = field<std::vector<double>>(j, "values");
  if (m.values.size() != m.layout.visual_count()) {
    throw ValidationError("refined map: values do not match the visual token count");
  }
  m.all_zero = field<bool>(j, "all_zero");
  const auto prov = field<container::Json>(j, "provenance");
  m.vision_heads = heads_from_json(field<container::Json>(prov, "vision_heads"), "vision_heads");
  m.background_heads = heads_from_json(field<container::Json>(prov, "background_heads"), "background_heads");
  m.lambda = field<double>(prov, "lambda");
  return m;
}

// Grid-shaped CSV (rows x cols, "%.9g") of one visual span.
inline std::string heatmap_csv(const RefinedMap& m, std::size_t span_index = 0) {
  if (!m.layout.has_grid()) throw ValidationError("heatmap: layout has no grid");
  if (span_index >= m.layout.spans().size()) throw RangeError("heatmap: span index out of range");
  const auto& g = m.layout.grids()[span_index];
  const auto first = *m.layout.visual_ordinal(m.layout.spans()[span_index].begin);
  std::ostringstream out;
  for (std::size_t r = 0; r < g.rows; ++r) {
    for (std::size_t c = 0; c < g.cols; ++c) {
      if (c > 0) out << ',';
      out << format_g9(m.values[first + r * g.cols + c]);
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace vrga
