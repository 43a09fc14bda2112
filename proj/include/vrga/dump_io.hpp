#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "vrga/container.hpp"
#include "vrga/dump.hpp"

namespace vrga {

inline container::Json layout_to_json(const TokenLayout& layout) {
  container::Json j;
  j["M"] = layout.total_tokens();
  auto spans = container::Json::array();
  for (const auto& s : layout.spans()) spans.push_back({s.begin, s.end});
  j["visual_spans"] = spans;
  if (layout.has_grid()) {
    auto grids = container::Json::array();
    for (const auto& g : layout.grids()) {
      grids.push_back({{"rows", g.rows}, {"cols", g.cols}, {"patch_px", g.patch_px}});
    }
    j["grids"] = grids;
  }
  j["question_end_index"] = layout.question_end_index();
  return j;
}

inline TokenLayout layout_from_json(const container::Json& j) {
  using container::field;
  const auto m = field<std::size_t>(j, "M");
  std::vector<Span> spans;
  for (const auto& s : field<container::Json>(j, "visual_spans")) {
    if (!s.is_array() || s.size() != 2) throw ValidationError("visual_spans entries must be [start, end)");
    spans.push_back({s[0].get<std::size_t>(), s[1].get<std::size_t>()});
  }
  std::vector<Grid> grids;
  if (j.contains("grids")) {
    for (const auto& g : j["grids"]) {
      grids.push_back({field<std::size_t>(g, "rows"), field<std::size_t>(g, "cols"),
                       field<std::size_t>(g, "patch_px")});
    }
  }
  return TokenLayout(m, std::move(spans), field<std::size_t>(j, "question_end_index"),
                     std::move(grids));
}

// Writes `<manifest_path>` and its payload next to it. The payload file name
// defaults to the manifest stem with a `.bin` extension.
inline void save_dump(const AttentionDump& dump, const std::filesystem::path& manifest_path,
                      std::string payload_file = {}) {
  if (payload_file.empty()) payload_file = manifest_path.stem().string() + ".bin";
  container::Json j;
  j["version"] = 1;
  j["kind"] = to_string(dump.kind());
  j["L"] = dump.layers();
  j["H"] = dump.heads();
  j["M"] = dump.tokens();
  if (dump.kind() == DumpKind::kPerStep) j["steps"] = dump.steps();
  const auto lj = layout_to_json(dump.layout());
  for (auto& [k, v] : lj.items()) {
    if (k != "M") j[k] = v;
  }
  j["dtype"] = "f32";
  j["byte_order"] = "little";
  j["payload_file"] = payload_file;
  j["payload_offset_bytes"] = 0;
  const auto dir = manifest_path.parent_path();
  container::write_payload(dir / payload_file, dump.data());
  container::write_json(manifest_path, j);
}

inline AttentionDump load_dump(const std::filesystem::path& manifest_path,
                               Strictness strictness = Strictness::kStrict) {
  using container::field;
  const auto j = container::read_json(manifest_path);
  if (field<int>(j, "version") != 1) throw ValidationError("dump manifest: unsupported version");
  if (field<std::string>(j, "dtype") != "f32") throw ValidationError("dump manifest: dtype must be f32");
  if (field<std::string>(j, "byte_order") != "little") {
    throw ValidationError("dump manifest: byte_order must be little");
  }
  const auto kind = parse_dump_kind(field<std::string>(j, "kind"));
  const auto layers = field<std::size_t>(j, "L");
  const auto heads = field<std::size_t>(j, "H");
  const std::size_t steps = kind == DumpKind::kPerStep ? field<std::size_t>(j, "steps") : 1;
  TokenLayout layout = layout_from_json(j);
  const auto count = AttentionDump::expected_size(steps, layers, heads, layout.total_tokens());
  auto data = container::read_payload<float>(
      manifest_path.parent_path() / field<std::string>(j, "payload_file"),
      field<std::uint64_t>(j, "payload_offset_bytes"), count);
  return AttentionDump(kind, layers, heads, steps, std::move(layout), std::move(data), strictness);
}

}  // namespace vrga
