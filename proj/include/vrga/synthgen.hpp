#pragma once

// Seeded synthetic attention dumps with known ground truth.
//
// Every unplanted head is a "text" head: most of its mass on text tokens and
// a peaky, arbitrary distribution over the visual tokens. Planted vision
// heads put almost all of their mass on V, a `concentration` share of it on
// their target region and most of the rest on the sink tokens. Sink-carrying
// background heads put little mass on V, `fraction` of it on the sink tokens
// and the remainder spread nearly uniformly.
//
// With an R-H line, every head instead gets a visual distribution with a
// prescribed entropy H and a visual share giving R_img = slope * H +
// intercept + noise.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "vrga/container.hpp"
#include "vrga/dump.hpp"
#include "vrga/error.hpp"
#include "vrga/head_select.hpp"
#include "vrga/layout.hpp"
#include "vrga/metrics.hpp"

namespace vrga {

struct PlantedVisionHead {
  HeadIndex head;
  std::vector<std::size_t> region;  // visual token indices
  double concentration = 0.6;       // share of the head's visual mass on `region`
};

struct PlantedSinks {
  std::vector<std::size_t> tokens;  // visual sink tokens
  std::vector<HeadIndex> heads;     // background heads carrying the sink
  double fraction = 0.6;            // share of a carrier's visual mass on the sinks
};

struct RhLine {
  double slope = 0.2;
  double intercept = 0.0;
  double noise = 0.0;  // standard deviation added to R_img
};

struct SynthSpec {
  std::size_t layers = 4;
  std::size_t heads = 8;
  TokenLayout layout;
  std::vector<PlantedVisionHead> planted_vision;
  PlantedSinks sinks;
  // Share of a vision head's off-region visual mass that lands on the sinks.
  double vision_sink_fraction = 0.8;
  std::optional<RhLine> r_h_line;
  // Multiplier on every vision head's concentration, keyed by prompt mode.
  std::map<PromptMode, double> mode_offsets;
  std::optional<PromptMode> mode;
  std::uint64_t seed = 0;
};

struct SynthLabels {
  std::vector<HeadIndex> vision_heads;
  std::vector<HeadIndex> background_heads;
  std::vector<std::size_t> sink_tokens;
  std::vector<std::size_t> region;  // union of planted regions
  std::optional<PromptMode> mode;
  std::uint64_t seed = 0;
};

struct SynthSample {
  AttentionDump dump;
  SynthLabels labels;
};

namespace detail {

inline std::vector<double> dirichlet(std::mt19937_64& rng, std::size_t n, double alpha) {
  std::gamma_distribution<double> g(alpha, 1.0);
  std::vector<double> w(n);
  double s = 0.0;
  for (auto& x : w) {
    x = g(rng) + 1e-300;
    s += x;
  }
  for (auto& x : w) x /= s;
  return w;
}

inline double entropy_nats(const std::vector<double>& p, double eps) {
  double h = 0.0;
  for (double x : p) h -= x * std::log(x + eps);
  return h;
}

// Distribution over `base.size()` entries, proportional to base^beta, whose
// entropy (with the metric's epsilon) equals `target`.
inline std::vector<double> tempered_with_entropy(const std::vector<double>& base, double target, double eps) {
  auto make = [&](double beta) {
    std::vector<double> p(base.size());
    double mx = 0.0;
    for (double b : base) mx = std::max(mx, std::log(b));
    double s = 0.0;
    for (std::size_t i = 0; i < base.size(); ++i) {
      p[i] = std::exp(beta * (std::log(base[i]) - mx));
      s += p[i];
    }
    for (auto& x : p) x /= s;
    return p;
  };
  double lo = 0.0, hi = 1.0;
  while (entropy_nats(make(hi), eps) > target && hi < 1e6) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (entropy_nats(make(mid), eps) > target) lo = mid; else hi = mid;
  }
  return make(0.5 * (lo + hi));
}

}  // namespace detail

inline void validate_synth_spec(const SynthSpec& s) {
  const auto& layout = s.layout;
  if (s.layers == 0 || s.heads == 0) throw ValidationError("synth: L and H must be positive");
  std::set<HeadIndex> seen;
  auto claim = [&](const HeadIndex& h, const char* what) {
    if (h.layer >= s.layers || h.head >= s.heads) {
      throw ValidationError(std::string("synth: planted ") + what + " head out of range");
    }
    if (!seen.insert(h).second) throw ValidationError("synth: planted head sets must be disjoint");
  };
  for (const auto& v : s.planted_vision) {
    claim(v.head, "vision");
    if (v.region.empty()) throw ValidationError("synth: planted region is empty");
    for (auto t : v.region) {
      if (!layout.is_visual(t)) throw ValidationError("synth: planted region outside V");
    }
    if (!(v.concentration >= 0.0 && v.concentration <= 1.0)) {
      throw ValidationError("synth: concentration must lie in [0, 1]");
    }
  }
  for (const auto& h : s.sinks.heads) claim(h, "sink");
  for (auto t : s.sinks.tokens) {
    if (!layout.is_visual(t)) throw ValidationError("synth: sink token outside V");
  }
  if (!s.sinks.heads.empty() && s.sinks.tokens.empty()) throw ValidationError("synth: sink heads without sink tokens");
  if (!(s.sinks.fraction >= 0.0 && s.sinks.fraction <= 1.0)) throw ValidationError("synth: sink fraction must lie in [0, 1]");
  if (!(s.vision_sink_fraction >= 0.0 && s.vision_sink_fraction <= 1.0)) {
    throw ValidationError("synth: vision_sink_fraction must lie in [0, 1]");
  }
  if (s.r_h_line) {
    if (!s.planted_vision.empty() || !s.sinks.heads.empty()) {
      throw ValidationError("synth: an R-H line cannot be combined with planted heads");
    }
    const double n = static_cast<double>(layout.visual_count());
    const double r_max = static_cast<double>(layout.total_tokens()) / n;
    const double lo = s.r_h_line->slope * 0.5 + s.r_h_line->intercept;
    const double hi = s.r_h_line->slope * (std::log(n) - 0.3) + s.r_h_line->intercept;
    if (n < 4 || std::min(lo, hi) <= 0.0 || std::max(lo, hi) > r_max) {
      throw ValidationError("synth: R-H line leaves the feasible R_img range (0, M/N]");
    }
  }
  for (const auto& [mode, mult] : s.mode_offsets) {
    if (!(mult > 0.0)) throw ValidationError("synth: mode multipliers must be positive");
  }
}

inline SynthSample generate(const SynthSpec& spec) {
  validate_synth_spec(spec);
  const auto& layout = spec.layout;
  const auto m = layout.total_tokens();
  const auto& vis = layout.visual_tokens();
  const auto n = vis.size();
  std::vector<std::size_t> text;
  for (std::size_t j = 0; j < m; ++j) {
    if (!layout.is_visual(j)) text.push_back(j);
  }
  const double mult = spec.mode && spec.mode_offsets.contains(*spec.mode) ? spec.mode_offsets.at(*spec.mode) : 1.0;
  const MetricsConfig mcfg;

  std::map<HeadIndex, const PlantedVisionHead*> vision;
  for (const auto& v : spec.planted_vision) vision[v.head] = &v;
  std::set<HeadIndex> sink_heads(spec.sinks.heads.begin(), spec.sinks.heads.end());

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<float> data(spec.layers * spec.heads * m);
  std::vector<double> row(m);
  for (std::size_t l = 0; l < spec.layers; ++l) {
    for (std::size_t h = 0; h < spec.heads; ++h) {
      const HeadIndex hi{l, h};
      std::fill(row.begin(), row.end(), 0.0);
      // Visual share of the row and the distribution inside V.
      double vshare = 0.0;
      std::vector<double> inside(n, 0.0);
      auto add_uniformish = [&](double mass, const std::vector<std::size_t>& exclude, double alpha) {
        std::vector<std::size_t> slots;
        for (std::size_t k = 0; k < n; ++k) {
          if (std::find(exclude.begin(), exclude.end(), vis[k]) == exclude.end()) slots.push_back(k);
        }
        const auto w = detail::dirichlet(rng, slots.size(), alpha);
        for (std::size_t q = 0; q < slots.size(); ++q) inside[slots[q]] += mass * w[q];
      };
      auto add_on = [&](double mass, const std::vector<std::size_t>& tokens, double alpha) {
        const auto w = detail::dirichlet(rng, tokens.size(), alpha);
        for (std::size_t q = 0; q < tokens.size(); ++q) inside[*layout.visual_ordinal(tokens[q])] += mass * w[q];
      };

      if (spec.r_h_line) {
        const double hmax = std::log(static_cast<double>(n)) - 0.3;
        const double target_h = 0.5 + (hmax - 0.5) * unif(rng);
        const double r = spec.r_h_line->slope * target_h + spec.r_h_line->intercept +
                         spec.r_h_line->noise * normal(rng);
        std::vector<double> base(n);
        for (auto& b : base) b = 0.05 + unif(rng);
        inside = detail::tempered_with_entropy(base, target_h, mcfg.epsilon);
        vshare = std::clamp(r * static_cast<double>(n) / static_cast<double>(m), 1e-6, 1.0);
      } else if (auto it = vision.find(hi); it != vision.end()) {
        const auto& v = *it->second;
        const double c = std::min(1.0, v.concentration * mult);
        vshare = std::min(1.0, 0.9 + 0.1 * c - 0.02 * unif(rng));
        add_on(c, v.region, 5.0);
        const double rest = 1.0 - c;
        std::vector<std::size_t> excl = v.region;
        if (!spec.sinks.tokens.empty()) {
          add_on(rest * spec.vision_sink_fraction, spec.sinks.tokens, 5.0);
          excl.insert(excl.end(), spec.sinks.tokens.begin(), spec.sinks.tokens.end());
          add_uniformish(rest * (1.0 - spec.vision_sink_fraction), excl, 1.0);
        } else {
          add_uniformish(rest, excl, 1.0);
        }
      } else if (sink_heads.contains(hi)) {
        vshare = 0.02 + 0.03 * unif(rng);
        add_on(spec.sinks.fraction, spec.sinks.tokens, 5.0);
        add_uniformish(1.0 - spec.sinks.fraction, spec.sinks.tokens, 50.0);
      } else {
        vshare = 0.1 + 0.2 * unif(rng);
        add_uniformish(1.0, {}, 0.05);
      }
      if (text.empty()) vshare = 1.0;
      for (std::size_t k = 0; k < n; ++k) row[vis[k]] = vshare * inside[k];
      if (!text.empty()) {
        const auto w = detail::dirichlet(rng, text.size(), 0.5);
        for (std::size_t q = 0; q < text.size(); ++q) row[text[q]] = (1.0 - vshare) * w[q];
      }
      double s = 0.0;
      for (double x : row) s += x;
      float* out = data.data() + (l * spec.heads + h) * m;
      for (std::size_t j = 0; j < m; ++j) out[j] = static_cast<float>(row[j] / s);
    }
  }

  SynthSample sample{AttentionDump(DumpKind::kQtSlice, spec.layers, spec.heads, 1, layout, std::move(data)), {}};
  auto& lab = sample.labels;
  std::set<std::size_t> region;
  for (const auto& v : spec.planted_vision) {
    lab.vision_heads.push_back(v.head);
    region.insert(v.region.begin(), v.region.end());
  }
  std::sort(lab.vision_heads.begin(), lab.vision_heads.end());
  lab.background_heads.assign(sink_heads.begin(), sink_heads.end());
  lab.sink_tokens = spec.sinks.tokens;
  std::sort(lab.sink_tokens.begin(), lab.sink_tokens.end());
  lab.region.assign(region.begin(), region.end());
  lab.mode = spec.mode;
  lab.seed = spec.seed;
  return sample;
}

// The standard fixture used throughout the tests: BOS + an 8x8 image + 15
// text tokens (M = 80), L = 4, H = 8. Three vision heads per layer aim at a
// random horizontal pair of patches; two heads of layer 0 carry a sink on the
// top-left patch.
inline SynthSpec default_fixture_spec(std::uint64_t seed) {
  SynthSpec s;
  s.layers = 4;
  s.heads = 8;
  s.layout = TokenLayout(80, {{1, 65}}, 79, {Grid{8, 8, 14}});
  s.seed = seed;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  const std::size_t sink = 1;
  std::size_t cell = 0;
  do {
    const auto r = static_cast<std::size_t>(rng() % 8);
    const auto c = static_cast<std::size_t>(rng() % 7);
    cell = r * 8 + c;
  } while (cell == 0);
  const std::vector<std::size_t> region{1 + cell, 2 + cell};
  std::uniform_real_distribution<double> conc(0.5, 0.7);
  for (std::size_t l = 0; l < s.layers; ++l) {
    std::vector<std::size_t> idx(s.heads);
    for (std::size_t h = 0; h < s.heads; ++h) idx[h] = h;
    for (std::size_t i = 0; i < s.heads; ++i) std::swap(idx[i], idx[i + rng() % (s.heads - i)]);
    for (std::size_t i = 0; i < 3; ++i) s.planted_vision.push_back({{l, idx[i]}, region, conc(rng)});
    if (l == 0) {
      s.sinks.heads = {{0, idx[3]}, {0, idx[4]}};
      std::sort(s.sinks.heads.begin(), s.sinks.heads.end());
    }
  }
  s.sinks.tokens = {sink};
  return s;
}

inline container::Json labels_to_json(const SynthLabels& lab) {
  container::Json j;
  j["seed"] = lab.seed;
  if (lab.mode) j["mode"] = to_string(*lab.mode);
  j["vision_heads"] = heads_to_json(lab.vision_heads);
  j["background_heads"] = heads_to_json(lab.background_heads);
  j["sink_tokens"] = lab.sink_tokens;
  j["region"] = lab.region;
  return j;
}

inline SynthLabels labels_from_json(const container::Json& j) {
  using container::field;
  SynthLabels lab;
  lab.seed = field<std::uint64_t>(j, "seed");
  if (j.contains("mode")) lab.mode = parse_prompt_mode(field<std::string>(j, "mode"));
  lab.vision_heads = heads_from_json(field<container::Json>(j, "vision_heads"), "vision_heads");
  lab.background_heads = heads_from_json(field<container::Json>(j, "background_heads"), "background_heads");
  lab.sink_tokens = field<std::vector<std::size_t>>(j, "sink_tokens");
  lab.region = field<std::vector<std::size_t>>(j, "region");
  return lab;
}

}  // namespace vrga
