#pragma once

// Synthetic "find the patch" visual question answering.
//
// The image is a grid of cells, each holding a shape and a color, presented
// to the model as one visual token per cell with a fixed feature vector
// (shape weights followed by one-hot color). The question names a shape; the
// answer is the color of the one target cell drawn fully in that shape.
// A few look-alike cells blend the queried shape with another one, so the
// model has to match the shape exactly.
//
// The distract variant adds decoys: closer look-alikes, all in one wrong
// color and with a scaled (brighter) feature vector. They pull attention
// away from the target without carrying the answer.

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vrga/error.hpp"
#include "vrga/layout.hpp"
#include "vrga/toy/config.hpp"

namespace vrga::toy {

enum class TaskKind { kFindPatch, kFindPatchDistract };

inline const char* to_string(TaskKind k) { return k == TaskKind::kFindPatch ? "find-patch" : "find-patch-distract"; }

inline TaskKind parse_task_kind(const std::string& s) {
  if (s == "find-patch") return TaskKind::kFindPatch;
  if (s == "find-patch-distract") return TaskKind::kFindPatchDistract;
  throw ValidationError("unknown task '" + s + "'");
}

struct TaskOptions {
  TaskKind kind = TaskKind::kFindPatch;
  std::size_t lookalikes = 3;
  double lookalike_match = 0.5;  // weight of the queried shape in a look-alike
  std::size_t decoys = 2;        // distract variant only
  double decoy_match = 0.7;
  double decoy_salience = 1.5;   // feature scale of decoys

  void validate(std::size_t cells) const {
    const auto extra = lookalikes + (kind == TaskKind::kFindPatchDistract ? decoys : 0);
    if (extra + 1 > cells) throw ValidationError("toy task: too many look-alikes and decoys for the grid");
    if (!(lookalike_match >= 0.0 && lookalike_match < 1.0) || !(decoy_match >= 0.0 && decoy_match < 1.0)) {
      throw ValidationError("toy task: match weights must lie in [0, 1)");
    }
    if (!(decoy_salience > 0.0)) throw ValidationError("toy task: decoy_salience must be positive");
  }
};

inline constexpr int kBosToken = 0;
inline constexpr int kAskToken = 1;
inline constexpr int kVisualSlot = -1;

struct ToySample {
  std::vector<int> tokens;    // text token id per position, kVisualSlot for image cells
  Eigen::MatrixXd features;   // [visual tokens x feature_dim]
  int answer = 0;             // color of the target cell
  std::size_t target = 0;     // token index of the target cell
  std::vector<std::size_t> decoys;  // token indices of decoy cells
};

inline TokenLayout toy_layout(const ToyConfig& cfg) {
  const auto n = cfg.visual_tokens();
  return TokenLayout(cfg.sequence_length(), {{1, 1 + n}}, n + 2, {Grid{cfg.grid_rows, cfg.grid_cols, 16}});
}

inline ToySample make_sample(const ToyConfig& cfg, const TaskOptions& opt, std::mt19937_64& rng) {
  const auto n = cfg.visual_tokens();
  const auto shapes = cfg.shapes;
  const auto colors = cfg.colors;
  opt.validate(n);
  auto draw = [&](std::size_t bound) { return static_cast<std::size_t>(rng() % bound); };
  auto other_shape = [&](std::size_t q) { return (q + 1 + draw(shapes - 1)) % shapes; };

  ToySample s;
  s.tokens.assign(cfg.sequence_length(), kVisualSlot);
  s.tokens[0] = kBosToken;
  s.features = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cfg.feature_dim()));

  const std::size_t query = draw(shapes);
  // cell roles: 0 filler, 1 target, 2 look-alike, 3 decoy
  std::vector<int> role(n, 0);
  auto place = [&](int r, std::size_t count) {
    for (std::size_t placed = 0; placed < count;) {
      const auto c = draw(n);
      if (role[c] == 0) {
        role[c] = r;
        ++placed;
      }
    }
  };
  place(1, 1);
  place(2, opt.lookalikes);
  if (opt.kind == TaskKind::kFindPatchDistract) place(3, opt.decoys);
  const std::size_t target_color = draw(colors);
  const std::size_t decoy_color = (target_color + 1 + draw(colors - 1)) % colors;

  for (std::size_t c = 0; c < n; ++c) {
    const auto row = static_cast<Eigen::Index>(c);
    auto put = [&](std::size_t col, double v) { s.features(row, static_cast<Eigen::Index>(col)) += v; };
    auto blend = [&](double match, double scale) {
      put(query, scale * match);
      put(other_shape(query), scale * (1.0 - match));
    };
    switch (role[c]) {
      case 1:
        put(query, 1.0);
        put(shapes + target_color, 1.0);
        s.target = 1 + c;
        break;
      case 2:
        blend(opt.lookalike_match, 1.0);
        put(shapes + draw(colors), 1.0);
        break;
      case 3:
        blend(opt.decoy_match, opt.decoy_salience);
        put(shapes + decoy_color, opt.decoy_salience);
        s.decoys.push_back(1 + c);
        break;
      default:
        put(other_shape(query), 1.0);
        put(shapes + draw(colors), 1.0);
    }
  }
  s.tokens[n + 1] = kAskToken;
  s.tokens[n + 2] = static_cast<int>(2 + query);
  s.answer = static_cast<int>(target_color);
  return s;
}

inline std::vector<ToySample> make_dataset(const ToyConfig& cfg, const TaskOptions& opt, std::size_t count,
                                           std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::vector<ToySample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(make_sample(cfg, opt, rng));
  return out;
}

// Seeds for the training and evaluation splits derived from the run seed.
inline std::uint64_t train_split_seed(std::uint64_t seed) { return seed * 1000003ull + 11; }
inline std::uint64_t eval_split_seed(std::uint64_t seed) { return seed * 1000003ull + 29; }
inline std::uint64_t distract_split_seed(std::uint64_t seed) { return seed * 1000003ull + 30; }

}  // namespace vrga::toy
