#pragma once

#include <sstream>
#include <string>

#include "vrga/container.hpp"
#include "vrga/format.hpp"
#include "vrga/metrics.hpp"

namespace vrga {

// CSV with header layer,head[,rrar],r_img,h_img,efr; the rrar column is
// present only when the table was computed with a region. Undefined values
// are empty cells.
inline std::string metrics_to_csv(const HeadMetricsTable& t, bool with_rrar) {
  std::ostringstream out;
  out << "layer,head" << (with_rrar ? ",rrar" : "") << ",r_img,h_img,efr\n";
  for (const auto& e : t.entries) {
    out << e.layer << ',' << e.head;
    if (with_rrar) out << ',' << format_g9(e.rrar);
    out << ',' << format_g9(e.r_img) << ',' << format_g9(e.h_img) << ',' << format_g9(e.efr) << '\n';
  }
  return out.str();
}

namespace detail {
// Numbers go through "%.9g" so CSV and JSON agree digit for digit.
inline container::Json g9(const std::optional<double>& v) {
  if (!v) return nullptr;
  return container::Json::parse(format_g9(*v));
}
}  // namespace detail

inline container::Json metrics_to_json(const HeadMetricsTable& t, bool with_rrar,
                                       const LayerRrar* layers = nullptr) {
  container::Json j;
  j["layers"] = t.layers;
  j["heads"] = t.heads;
  auto rows = container::Json::array();
  for (const auto& e : t.entries) {
    container::Json r;
    r["layer"] = e.layer;
    r["head"] = e.head;
    if (with_rrar) r["rrar"] = detail::g9(e.rrar);
    r["r_img"] = detail::g9(e.r_img);
    r["h_img"] = detail::g9(e.h_img);
    r["efr"] = detail::g9(e.efr);
    rows.push_back(std::move(r));
  }
  j["heads_table"] = std::move(rows);
  if (layers != nullptr) {
    auto lr = container::Json::array();
    for (std::size_t l = 0; l < layers->mean.size(); ++l) {
      lr.push_back({{"layer", l}, {"rrar_mean", detail::g9(layers->mean[l])},
                    {"skipped_heads", layers->skipped[l]}});
    }
    j["layer_rrar"] = std::move(lr);
  }
  return j;
}

inline std::string layer_rrar_to_csv(const LayerRrar& lr) {
  std::ostringstream out;
  out << "layer,rrar_mean,skipped_heads\n";
  for (std::size_t l = 0; l < lr.mean.size(); ++l) {
    out << l << ',' << format_g9(lr.mean[l]) << ',' << lr.skipped[l] << '\n';
  }
  return out.str();
}

}  // namespace vrga
