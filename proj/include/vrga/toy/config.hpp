#pragma once

#include <cstdint>
#include <string>

#include "vrga/error.hpp"

namespace vrga::toy {

enum class Optimizer { kSgd, kAdam };

inline const char* to_string(Optimizer o) { return o == Optimizer::kSgd ? "sgd" : "adam"; }

inline Optimizer parse_optimizer(const std::string& s) {
  if (s == "sgd") return Optimizer::kSgd;
  if (s == "adam") return Optimizer::kAdam;
  throw ValidationError("unknown optimizer '" + s + "'");
}

struct ToyConfig {
  // architecture
  std::size_t d_model = 64;
  std::size_t layers = 4;
  std::size_t heads = 8;
  std::size_t d_ff = 128;
  // task geometry
  std::size_t grid_rows = 8;
  std::size_t grid_cols = 8;
  std::size_t shapes = 16;
  std::size_t colors = 8;  // answer vocabulary
  // training
  double learning_rate = 3e-3;
  std::size_t steps = 800;
  std::size_t batch_size = 16;
  std::size_t train_samples = 2000;
  std::size_t eval_samples = 500;
  Optimizer optimizer = Optimizer::kAdam;
  double momentum = 0.9;
  double weight_decay = 0.3;  // decoupled, on weight matrices only
  std::uint64_t seed = 0;

  std::size_t visual_tokens() const { return grid_rows * grid_cols; }
  // BOS, the image, then the two question tokens (ASK, shape query).
  std::size_t sequence_length() const { return visual_tokens() + 3; }
  std::size_t text_vocab() const { return 2 + shapes; }
  std::size_t feature_dim() const { return shapes + colors; }
  std::size_t head_dim() const { return d_model / heads; }

  void validate() const {
    if (d_model == 0 || heads == 0 || d_model % heads != 0) {
      throw ValidationError("toy: d_model must be a positive multiple of heads");
    }
    if (layers == 0 || d_ff == 0) throw ValidationError("toy: layers and d_ff must be positive");
    if (grid_rows == 0 || grid_cols == 0 || shapes < 2 || colors < 2) {
      throw ValidationError("toy: grid, shapes and colors must be positive (shapes, colors >= 2)");
    }
    if (batch_size == 0) throw ValidationError("toy: batch_size must be positive");
    if (!(learning_rate > 0.0)) throw ValidationError("toy: learning_rate must be positive");
    if (!(weight_decay >= 0.0)) throw ValidationError("toy: weight_decay must be nonnegative");
  }
};

}  // namespace vrga::toy
