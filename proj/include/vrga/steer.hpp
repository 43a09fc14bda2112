#pragma once

// Attention interventions on post-softmax rows.
//
// Reweighting multiplies the entries of a token set by (1 + gamma) and
// renormalizes the row. Masking zeroes the entries of one or more visual
// spans and optionally renormalizes what is left.

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "vrga/container.hpp"
#include "vrga/dump.hpp"
#include "vrga/error.hpp"
#include "vrga/head_select.hpp"
#include "vrga/layout.hpp"

namespace vrga {

struct ReweightPlan {
  std::vector<HeadIndex> heads;
  std::vector<std::size_t> tokens;  // question-relevant visual tokens
  double gamma = 0.5;
  bool renormalize = true;
  friend bool operator==(const ReweightPlan&, const ReweightPlan&) = default;
};

struct MaskPlan {
  std::vector<HeadIndex> heads;
  std::vector<Span> spans;  // visual ranges to zero
  bool renormalize = true;
  friend bool operator==(const MaskPlan&, const MaskPlan&) = default;
};

using Plan = std::variant<ReweightPlan, MaskPlan>;

// Divides a row by its sum (accumulated in double).
template <class T>
void normalize_row(std::span<T> row) {
  double sum = 0.0;
  for (auto v : row) sum += static_cast<double>(v);
  if (!(sum > 0.0)) throw ValidationError("cannot renormalize a row with zero mass");
  for (auto& v : row) v = static_cast<T>(static_cast<double>(v) / sum);
}

// Reweighting compiled against a row length; apply() works in place.
class RowReweighter {
 public:
  RowReweighter(std::size_t tokens, const std::vector<std::size_t>& boosted, double gamma,
                bool renormalize)
      : member_(tokens, 0), factor_(1.0 + gamma), renormalize_(renormalize) {
    if (!(gamma >= 0.0)) throw ValidationError("reweight: gamma must be nonnegative");
    for (auto t : boosted) {
      if (t >= tokens) throw RangeError("reweight: token " + std::to_string(t) + " out of range");
      member_[t] = 1;
    }
    uniform_ = std::all_of(member_.begin(), member_.end(), [](char c) { return c != 0; });
  }

  template <class T>
  void apply(std::span<T> row) const {
    if (row.size() != member_.size()) throw ValidationError("reweight: row length mismatch");
    // Scaling every entry by the same factor cancels under renormalization.
    if (!(uniform_ && renormalize_)) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        if (member_[i]) row[i] = static_cast<T>(static_cast<double>(row[i]) * factor_);
      }
    }
    if (renormalize_) normalize_row(row);
  }

 private:
  std::vector<char> member_;
  double factor_;
  bool renormalize_;
  bool uniform_ = false;
};

class RowMasker {
 public:
  RowMasker(std::size_t tokens, const std::vector<Span>& spans, bool renormalize)
      : member_(tokens, 0), renormalize_(renormalize) {
    for (const auto& s : spans) {
      if (s.begin > s.end || s.end > tokens) throw RangeError("mask: span out of range");
      for (std::size_t i = s.begin; i < s.end; ++i) member_[i] = 1;
    }
  }

  template <class T>
  void apply(std::span<T> row) const {
    if (row.size() != member_.size()) throw ValidationError("mask: row length mismatch");
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (member_[i]) row[i] = T(0);
    }
    if (renormalize_) {
      double rest = 0.0;
      for (auto v : row) rest += static_cast<double>(v);
      if (!(rest > 0.0)) throw ValidationError("mask: all attention mass lies inside the masked span");
      normalize_row(row);
    }
  }

 private:
  std::vector<char> member_;
  bool renormalize_;
};

inline void check_tokens_visual(const TokenLayout& layout, const std::vector<std::size_t>& tokens) {
  for (auto t : tokens) {
    if (!layout.is_visual(t)) {
      throw ValidationError("plan token " + std::to_string(t) + " is not a visual token");
    }
  }
}

inline void check_spans_visual(const TokenLayout& layout, const std::vector<Span>& spans) {
  for (const auto& s : spans) {
    if (s.begin > s.end || s.end > layout.total_tokens()) throw ValidationError("mask span out of bounds");
    for (std::size_t i = s.begin; i < s.end; ++i) {
      if (!layout.is_visual(i)) throw ValidationError("mask span covers non-visual token " + std::to_string(i));
    }
  }
}

template <class T>
std::vector<T> reweight_row(std::span<const T> row, const TokenLayout& layout, const ReweightPlan& plan) {
  check_tokens_visual(layout, plan.tokens);
  std::vector<T> out(row.begin(), row.end());
  RowReweighter(row.size(), plan.tokens, plan.gamma, plan.renormalize).apply(std::span<T>(out));
  return out;
}

template <class T>
std::vector<T> mask_row(std::span<const T> row, const TokenLayout& layout, const MaskPlan& plan) {
  check_spans_visual(layout, plan.spans);
  std::vector<T> out(row.begin(), row.end());
  RowMasker(row.size(), plan.spans, plan.renormalize).apply(std::span<T>(out));
  return out;
}

inline void check_heads(const std::vector<HeadIndex>& heads, std::size_t layers, std::size_t n_heads) {
  for (const auto& h : heads) {
    if (h.layer >= layers || h.head >= n_heads) {
      throw ValidationError("plan head (" + std::to_string(h.layer) + ", " + std::to_string(h.head) +
                            ") outside a model with L=" + std::to_string(layers) +
                            " H=" + std::to_string(n_heads));
    }
  }
}

// Checks a plan against model dimensions and a token layout.
inline void validate_plan(const Plan& plan, std::size_t layers, std::size_t heads, const TokenLayout& layout) {
  std::visit(
      [&](const auto& p) {
        check_heads(p.heads, layers, heads);
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, ReweightPlan>) {
          if (!(p.gamma >= 0.0)) throw ValidationError("plan: gamma must be nonnegative");
          check_tokens_visual(layout, p.tokens);
        } else {
          check_spans_visual(layout, p.spans);
        }
      },
      plan);
}

inline constexpr int kPlanVersion = 1;

inline container::Json plan_to_json(const Plan& plan) {
  container::Json j;
  j["version"] = kPlanVersion;
  if (const auto* r = std::get_if<ReweightPlan>(&plan)) {
    j["kind"] = "reweight";
    j["heads"] = heads_to_json(r->heads);
    j["tokens"] = r->tokens;
    j["gamma"] = r->gamma;
    j["renormalize"] = r->renormalize;
  } else {
    const auto& m = std::get<MaskPlan>(plan);
    j["kind"] = "mask";
    j["heads"] = heads_to_json(m.heads);
    auto spans = container::Json::array();
    for (const auto& s : m.spans) spans.push_back({s.begin, s.end});
    j["span"] = spans;
    j["renormalize"] = m.renormalize;
  }
  return j;
}

inline Plan plan_from_json(const container::Json& j) {
  using container::field;
  if (!j.is_object()) throw ValidationError("plan: expected a JSON object");
  static const std::set<std::string> known = {"version", "kind", "heads", "tokens", "gamma", "span", "renormalize"};
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ValidationError("plan: unknown field '" + key + "'");
  }
  const int version = field<int>(j, "version");
  if (version != kPlanVersion) {
    throw ValidationError("plan: version mismatch (file " + std::to_string(version) + ", expected " +
                          std::to_string(kPlanVersion) + ")");
  }
  const auto kind = field<std::string>(j, "kind");
  const auto heads = heads_from_json(field<container::Json>(j, "heads"), "heads");
  const bool renorm = field<bool>(j, "renormalize");
  if (kind == "reweight") {
    ReweightPlan p{heads, field<std::vector<std::size_t>>(j, "tokens"), field<double>(j, "gamma"), renorm};
    if (!(p.gamma >= 0.0)) throw ValidationError("plan: gamma must be nonnegative");
    return p;
  }
  if (kind == "mask") {
    MaskPlan p{heads, {}, renorm};
    for (const auto& s : field<container::Json>(j, "span")) {
      if (!s.is_array() || s.size() != 2) throw ValidationError("plan: span entries must be [start, end)");
      p.spans.push_back({s[0].get<std::size_t>(), s[1].get<std::size_t>()});
    }
    if (j.contains("tokens") && !j["tokens"].empty()) throw ValidationError("plan: mask plans carry no tokens");
    return p;
  }
  throw ValidationError("plan: unknown kind '" + kind + "'");
}

inline void save_plan(const Plan& plan, const std::filesystem::path& path) {
  container::write_json(path, plan_to_json(plan));
}

inline Plan load_plan(const std::filesystem::path& path) { return plan_from_json(container::read_json(path)); }

}  // namespace vrga
