#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vrga/error.hpp"

namespace vrga {

// Half-open token range [begin, end).
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool contains(std::size_t i) const { return i >= begin && i < end; }
  friend bool operator==(const Span&, const Span&) = default;
};

// Raster of visual tokens for one image, row-major, square patches.
struct Grid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t patch_px = 0;

  std::size_t cells() const { return rows * cols; }
  std::int64_t width_px() const { return static_cast<std::int64_t>(cols * patch_px); }
  std::int64_t height_px() const { return static_cast<std::int64_t>(rows * patch_px); }
  friend bool operator==(const Grid&, const Grid&) = default;
};

// Where the visual tokens sit inside a sequence of M tokens.
//
// Invariants (checked on construction): spans are non-empty, sorted,
// disjoint and inside [0, M); at least one visual token; the question-end
// token is not visual; grids are either absent or one per span with
// rows * cols equal to the span length.
class TokenLayout {
 public:
  TokenLayout() = default;

  TokenLayout(std::size_t total_tokens, std::vector<Span> spans, std::size_t question_end_index,
              std::vector<Grid> grids = {})
      : total_tokens_(total_tokens),
        spans_(std::move(spans)),
        grids_(std::move(grids)),
        question_end_index_(question_end_index) {
    validate();
    ordinal_.assign(total_tokens_, kNotVisual);
    for (const auto& s : spans_) {
      for (std::size_t i = s.begin; i < s.end; ++i) {
        ordinal_[i] = visual_.size();
        visual_.push_back(i);
      }
    }
  }

  std::size_t total_tokens() const { return total_tokens_; }
  std::size_t visual_count() const { return visual_.size(); }
  std::size_t question_end_index() const { return question_end_index_; }
  const std::vector<Span>& spans() const { return spans_; }
  const std::vector<Grid>& grids() const { return grids_; }
  bool has_grid() const { return !grids_.empty(); }

  // Token indices of the visual set, ascending.
  const std::vector<std::size_t>& visual_tokens() const { return visual_; }

  bool is_visual(std::size_t token) const {
    return token < total_tokens_ && ordinal_[token] != kNotVisual;
  }

  // Position of `token` inside visual_tokens(), if visual.
  std::optional<std::size_t> visual_ordinal(std::size_t token) const {
    if (!is_visual(token)) return std::nullopt;
    return ordinal_[token];
  }

  friend bool operator==(const TokenLayout& a, const TokenLayout& b) {
    return a.total_tokens_ == b.total_tokens_ && a.spans_ == b.spans_ && a.grids_ == b.grids_ &&
           a.question_end_index_ == b.question_end_index_;
  }

 private:
  static constexpr std::size_t kNotVisual = static_cast<std::size_t>(-1);

  void validate() const {
    if (spans_.empty()) throw ValidationError("layout: at least one visual span is required");
    std::size_t prev_end = 0;
    for (std::size_t k = 0; k < spans_.size(); ++k) {
      const auto& s = spans_[k];
      if (s.begin >= s.end) {
        throw ValidationError("layout: visual span " + std::to_string(k) + " is empty");
      }
      if (s.end > total_tokens_) {
        throw ValidationError("layout: visual span " + std::to_string(k) + " [" +
                              std::to_string(s.begin) + ", " + std::to_string(s.end) +
                              ") out of bounds for M=" + std::to_string(total_tokens_));
      }
      if (k > 0 && s.begin < prev_end) {
        throw ValidationError("layout: visual spans must be sorted and disjoint");
      }
      prev_end = s.end;
    }
    if (question_end_index_ >= total_tokens_) {
      throw ValidationError("layout: question_end_index out of bounds");
    }
    for (const auto& s : spans_) {
      if (s.contains(question_end_index_)) {
        throw ValidationError("layout: question_end_index lies inside a visual span");
      }
    }
    if (!grids_.empty()) {
      if (grids_.size() != spans_.size()) {
        throw ValidationError("layout: expected one grid per visual span");
      }
      for (std::size_t k = 0; k < grids_.size(); ++k) {
        if (grids_[k].cells() != spans_[k].size() || grids_[k].patch_px == 0) {
          throw ValidationError("layout: grid " + std::to_string(k) +
                                " does not match its span length");
        }
      }
    }
  }

  std::size_t total_tokens_ = 0;
  std::vector<Span> spans_;
  std::vector<Grid> grids_;
  std::size_t question_end_index_ = 0;
  std::vector<std::size_t> visual_;
  std::vector<std::size_t> ordinal_;
};

enum class RegionSource { kBbox, kExplicit };

// Subset of visual tokens (token indices, ascending, unique).
struct RegionMask {
  std::vector<std::size_t> token_indices;
  RegionSource source = RegionSource::kExplicit;

  bool empty() const { return token_indices.empty(); }
  std::size_t size() const { return token_indices.size(); }
  bool contains(std::size_t token) const {
    return std::binary_search(token_indices.begin(), token_indices.end(), token);
  }
};

// Builds an explicit region; sorts, deduplicates and checks membership in V.
inline RegionMask make_region(const TokenLayout& layout, std::vector<std::size_t> tokens) {
  std::sort(tokens.begin(), tokens.end());
  tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
  for (auto t : tokens) {
    if (!layout.is_visual(t)) {
      throw ValidationError("region: token " + std::to_string(t) + " is not a visual token");
    }
  }
  return RegionMask{std::move(tokens), RegionSource::kExplicit};
}

// Pixel rectangle [x0, x1) x [y0, y1) in image coordinates.
struct PixelBox {
  std::int64_t x0 = 0;
  std::int64_t y0 = 0;
  std::int64_t x1 = 0;
  std::int64_t y1 = 0;
};

// Visual tokens whose patch is covered by `box` for at least `overlap_min`
// of its area (boundary counts as covered). Indices are offset by the start
// of span `span_index`. An empty result is returned as an empty mask.
inline RegionMask bbox_to_tokens(const TokenLayout& layout, const PixelBox& box,
                                 double overlap_min = 0.5, std::size_t span_index = 0) {
  if (!layout.has_grid()) throw ValidationError("bbox_to_tokens: layout has no grid");
  if (span_index >= layout.spans().size()) throw RangeError("bbox_to_tokens: span index out of range");
  if (!(overlap_min > 0.0 && overlap_min <= 1.0)) {
    throw ValidationError("bbox_to_tokens: overlap_min must lie in (0, 1]");
  }
  const Grid& g = layout.grids()[span_index];
  if (box.x0 < 0 || box.y0 < 0 || box.x1 > g.width_px() || box.y1 > g.height_px() ||
      box.x0 > box.x1 || box.y0 > box.y1) {
    throw ValidationError("bbox_to_tokens: box outside image bounds");
  }
  const auto patch = static_cast<std::int64_t>(g.patch_px);
  const double patch_area = static_cast<double>(patch * patch);
  const std::size_t offset = layout.spans()[span_index].begin;

  RegionMask mask;
  mask.source = RegionSource::kBbox;
  for (std::size_t r = 0; r < g.rows; ++r) {
    const std::int64_t py0 = static_cast<std::int64_t>(r) * patch;
    const std::int64_t h = std::min(box.y1, py0 + patch) - std::max(box.y0, py0);
    if (h <= 0) continue;
    for (std::size_t c = 0; c < g.cols; ++c) {
      const std::int64_t px0 = static_cast<std::int64_t>(c) * patch;
      const std::int64_t w = std::min(box.x1, px0 + patch) - std::max(box.x0, px0);
      if (w <= 0) continue;
      if (static_cast<double>(w * h) >= overlap_min * patch_area) {
        mask.token_indices.push_back(offset + r * g.cols + c);
      }
    }
  }
  return mask;
}

}  // namespace vrga
