#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vrga/error.hpp"
#include "vrga/layout.hpp"

namespace vrga {

// qt-slice: one attention row (question-end query) per (layer, head).
// per-step: one such row per generation step, shape [steps][L][H][M].
enum class DumpKind { kQtSlice, kPerStep };

inline const char* to_string(DumpKind k) { return k == DumpKind::kQtSlice ? "qt-slice" : "per-step"; }

inline DumpKind parse_dump_kind(const std::string& s) {
  if (s == "qt-slice") return DumpKind::kQtSlice;
  if (s == "per-step") return DumpKind::kPerStep;
  throw ValidationError("unknown dump kind '" + s + "'");
}

enum class Strictness { kStrict, kLenient };

inline constexpr double kRowSumTolerance = 1e-4;

struct HeadIndex {
  std::size_t layer = 0;
  std::size_t head = 0;
  friend auto operator<=>(const HeadIndex&, const HeadIndex&) = default;
};

// Attention rows over all M tokens of a layout, float32, row-major.
// Immutable after construction; construction validates the payload.
class AttentionDump {
 public:
  AttentionDump() = default;

  AttentionDump(DumpKind kind, std::size_t layers, std::size_t heads, std::size_t steps,
                TokenLayout layout, std::vector<float> data,
                Strictness strictness = Strictness::kStrict)
      : kind_(kind),
        layers_(layers),
        heads_(heads),
        steps_(kind == DumpKind::kQtSlice ? 1 : steps),
        layout_(std::move(layout)),
        data_(std::move(data)) {
    validate(strictness);
  }

  DumpKind kind() const { return kind_; }
  std::size_t layers() const { return layers_; }
  std::size_t heads() const { return heads_; }
  std::size_t steps() const { return steps_; }
  std::size_t tokens() const { return layout_.total_tokens(); }
  const TokenLayout& layout() const { return layout_; }
  const std::vector<float>& data() const { return data_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  // Attention row of (layer, head). For per-step dumps the step defaults to
  // the final step.
  std::span<const float> row(std::size_t layer, std::size_t head,
                             std::optional<std::size_t> step = std::nullopt) const {
    const std::size_t s = step.value_or(steps_ - 1);
    if (layer >= layers_ || head >= heads_ || s >= steps_) {
      throw RangeError("dump row (" + std::to_string(layer) + ", " + std::to_string(head) +
                       ", step " + std::to_string(s) + ") out of range for L=" +
                       std::to_string(layers_) + " H=" + std::to_string(heads_) +
                       " steps=" + std::to_string(steps_));
    }
    const std::size_t m = tokens();
    return {data_.data() + ((s * layers_ + layer) * heads_ + head) * m, m};
  }

  static std::size_t expected_size(std::size_t steps, std::size_t layers, std::size_t heads,
                                   std::size_t tokens) {
    return steps * layers * heads * tokens;
  }

  friend bool operator==(const AttentionDump& a, const AttentionDump& b) {
    return a.kind_ == b.kind_ && a.layers_ == b.layers_ && a.heads_ == b.heads_ &&
           a.steps_ == b.steps_ && a.layout_ == b.layout_ && a.data_ == b.data_;
  }

 private:
  void validate(Strictness strictness) {
    if (layers_ == 0 || heads_ == 0 || steps_ == 0) {
      throw ValidationError("dump: L, H and steps must be positive");
    }
    const std::size_t m = tokens();
    const std::size_t want = expected_size(steps_, layers_, heads_, m);
    if (data_.size() != want) {
      throw ValidationError("dump: shape mismatch, expected " + std::to_string(want) +
                            " values, got " + std::to_string(data_.size()));
    }
    for (std::size_t s = 0; s < steps_; ++s) {
      for (std::size_t l = 0; l < layers_; ++l) {
        for (std::size_t h = 0; h < heads_; ++h) {
          const float* p = data_.data() + ((s * layers_ + l) * heads_ + h) * m;
          double sum = 0.0;
          for (std::size_t j = 0; j < m; ++j) {
            if (!(p[j] >= 0.0f) || !std::isfinite(p[j])) {
              throw ValidationError("dump: negative or non-finite entry at layer " +
                                    std::to_string(l) + ", head " + std::to_string(h) +
                                    ", token " + std::to_string(j));
            }
            sum += p[j];
          }
          if (std::abs(sum - 1.0) > kRowSumTolerance) {
            std::string msg = "row sum " + std::to_string(sum) + " at layer " + std::to_string(l) +
                              ", head " + std::to_string(h);
            if (kind_ == DumpKind::kPerStep) msg += ", step " + std::to_string(s);
            if (strictness == Strictness::kStrict) throw ValidationError("dump: " + msg);
            warnings_.push_back(std::move(msg));
          }
        }
      }
    }
  }

  DumpKind kind_ = DumpKind::kQtSlice;
  std::size_t layers_ = 0;
  std::size_t heads_ = 0;
  std::size_t steps_ = 1;
  TokenLayout layout_;
  std::vector<float> data_;
  std::vector<std::string> warnings_;
};

// Read-only view of one attention row.
inline std::span<const float> qt_slice(const AttentionDump& dump, std::size_t layer,
                                       std::size_t head,
                                       std::optional<std::size_t> step = std::nullopt) {
  return dump.row(layer, head, step);
}

}  // namespace vrga
