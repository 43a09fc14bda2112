#pragma once

// Model checkpoints: JSON manifest (config + parameter block table) next to
// a raw little-endian float64 payload.

#include <filesystem>
#include <string>

#include "vrga/container.hpp"
#include "vrga/toy/transformer.hpp"

namespace vrga::toy {

inline container::Json config_to_json(const ToyConfig& c) {
  container::Json j;
  j["d_model"] = c.d_model;
  j["layers"] = c.layers;
  j["heads"] = c.heads;
  j["d_ff"] = c.d_ff;
  j["grid_rows"] = c.grid_rows;
  j["grid_cols"] = c.grid_cols;
  j["shapes"] = c.shapes;
  j["colors"] = c.colors;
  j["learning_rate"] = c.learning_rate;
  j["steps"] = c.steps;
  j["batch_size"] = c.batch_size;
  j["train_samples"] = c.train_samples;
  j["eval_samples"] = c.eval_samples;
  j["optimizer"] = to_string(c.optimizer);
  j["momentum"] = c.momentum;
  j["seed"] = c.seed;
  return j;
}

// Missing keys keep their defaults; unknown keys are rejected.
inline ToyConfig config_from_json(const container::Json& j) {
  using container::field;
  ToyConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "d_model") c.d_model = field<std::size_t>(j, "d_model");
    else if (key == "layers") c.layers = field<std::size_t>(j, "layers");
    else if (key == "heads") c.heads = field<std::size_t>(j, "heads");
    else if (key == "d_ff") c.d_ff = field<std::size_t>(j, "d_ff");
    else if (key == "grid_rows") c.grid_rows = field<std::size_t>(j, "grid_rows");
    else if (key == "grid_cols") c.grid_cols = field<std::size_t>(j, "grid_cols");
    else if (key == "shapes") c.shapes = field<std::size_t>(j, "shapes");
    else if (key == "colors") c.colors = field<std::size_t>(j, "colors");
    else if (key == "learning_rate") c.learning_rate = field<double>(j, "learning_rate");
    else if (key == "steps") c.steps = field<std::size_t>(j, "steps");
    else if (key == "batch_size") c.batch_size = field<std::size_t>(j, "batch_size");
    else if (key == "train_samples") c.train_samples = field<std::size_t>(j, "train_samples");
    else if (key == "eval_samples") c.eval_samples = field<std::size_t>(j, "eval_samples");
    else if (key == "optimizer") c.optimizer = parse_optimizer(field<std::string>(j, "optimizer"));
    else if (key == "momentum") c.momentum = field<double>(j, "momentum");
    else if (key == "seed") c.seed = field<std::uint64_t>(j, "seed");
    else throw ValidationError("toy config: unknown field '" + key + "'");
  }
  c.validate();
  return c;
}

inline void save_checkpoint(const Model& model, const std::filesystem::path& manifest_path) {
  const std::string payload = manifest_path.stem().string() + ".f64";
  container::Json j;
  j["version"] = 1;
  j["kind"] = "toy-checkpoint";
  j["config"] = config_to_json(model.config());
  auto blocks = container::Json::array();
  for (const auto& b : model.param_layout().blocks()) {
    blocks.push_back({{"name", b.name}, {"offset", b.offset}, {"rows", b.rows}, {"cols", b.cols}});
  }
  j["blocks"] = blocks;
  j["dtype"] = "f64";
  j["byte_order"] = "little";
  j["payload_file"] = payload;
  j["payload_offset_bytes"] = 0;
  container::write_payload(manifest_path.parent_path() / payload, model.params());
  container::write_json(manifest_path, j);
}

inline Model load_checkpoint(const std::filesystem::path& manifest_path) {
  using container::field;
  const auto j = container::read_json(manifest_path);
  if (field<int>(j, "version") != 1 || field<std::string>(j, "kind") != "toy-checkpoint") {
    throw ValidationError("not a version 1 toy checkpoint");
  }
  if (field<std::string>(j, "dtype") != "f64" || field<std::string>(j, "byte_order") != "little") {
    throw ValidationError("checkpoint payload must be little-endian f64");
  }
  Model model(config_from_json(field<container::Json>(j, "config")));
  const auto& blocks = model.param_layout().blocks();
  const auto listed = field<container::Json>(j, "blocks");
  if (listed.size() != blocks.size()) throw ValidationError("checkpoint block table does not match the config");
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (field<std::string>(listed[i], "name") != blocks[i].name ||
        field<std::size_t>(listed[i], "offset") != blocks[i].offset ||
        field<std::size_t>(listed[i], "rows") != blocks[i].rows ||
        field<std::size_t>(listed[i], "cols") != blocks[i].cols) {
      throw ValidationError("checkpoint block '" + blocks[i].name + "' does not match the config");
    }
  }
  model.params() = container::read_payload<double>(manifest_path.parent_path() / field<std::string>(j, "payload_file"),
                                                   field<std::uint64_t>(j, "payload_offset_bytes"),
                                                   model.param_layout().total());
  return model;
}

}  // namespace vrga::toy
