#pragma once

// JSON and plain-text renderings of toy-model reports.

#include <cstdio>
#include <sstream>
#include <string>

#include "vrga/container.hpp"
#include "vrga/format.hpp"
#include "vrga/toy/checkpoint.hpp"
#include "vrga/toy/experiments.hpp"
#include "vrga/toy/gradcheck.hpp"

namespace vrga::toy {

inline container::Json task_to_json(const TaskOptions& t) {
  container::Json j;
  j["kind"] = to_string(t.kind);
  j["lookalikes"] = t.lookalikes;
  j["lookalike_match"] = t.lookalike_match;
  if (t.kind == TaskKind::kFindPatchDistract) {
    j["decoys"] = t.decoys;
    j["decoy_match"] = t.decoy_match;
    j["decoy_salience"] = t.decoy_salience;
  }
  return j;
}

inline container::Json train_to_json(const TrainResult& r) {
  container::Json j;
  j["config"] = config_to_json(r.model.config());
  auto curve = container::Json::array();
  for (const auto& p : r.curve) curve.push_back({{"step", p.step}, {"loss", p.loss}});
  j["curve"] = curve;
  j["eval_accuracy"] = r.eval_accuracy;
  return j;
}

inline container::Json ablation_to_json(const AblationReport& r) {
  container::Json j;
  j["heads_per_layer"] = r.heads_per_layer;
  j["samples"] = r.samples;
  auto rows = container::Json::array();
  for (const auto& row : r.rows) rows.push_back({{"strategy", row.strategy}, {"accuracy", row.accuracy}});
  j["accuracy"] = rows;
  return j;
}

inline std::string ablation_table(const AblationReport& r) {
  std::ostringstream out;
  out << "strategy     accuracy\n";
  for (const auto& row : r.rows) {
    char line[64];
    std::snprintf(line, sizeof line, "%-12s %.4f\n", row.strategy.c_str(), row.accuracy);
    out << line;
  }
  return out.str();
}

inline container::Json rrar_split_to_json(const RrarCorrectnessReport& r) {
  container::Json j;
  j["correct"] = r.correct;
  j["incorrect"] = r.incorrect;
  j["correct_mean"] = r.correct_mean;
  j["incorrect_mean"] = r.incorrect_mean;
  j["compared"] = r.compared;
  if (!r.compared) j["skip_reason"] = r.skip_reason;
  j["layers_higher"] = r.layers_higher;
  j["fraction_higher"] = r.fraction_higher;
  return j;
}

inline std::string rrar_split_table(const RrarCorrectnessReport& r) {
  std::ostringstream out;
  out << "samples: " << r.correct << " correct, " << r.incorrect << " incorrect\n";
  out << "layer  rrar(correct)  rrar(incorrect)\n";
  const auto layers = std::max(r.correct_mean.size(), r.incorrect_mean.size());
  for (std::size_t l = 0; l < layers; ++l) {
    char line[96];
    std::snprintf(line, sizeof line, "%-6zu %-14s %s\n", l,
                  r.correct_mean.empty() ? "-" : format_g9(r.correct_mean[l]).c_str(),
                  r.incorrect_mean.empty() ? "-" : format_g9(r.incorrect_mean[l]).c_str());
    out << line;
  }
  if (r.compared) {
    out << "correct > incorrect on " << r.layers_higher << " of " << layers << " layers\n";
  } else {
    out << "comparison skipped: " << r.skip_reason << '\n';
  }
  return out.str();
}

inline container::Json reweight_to_json(const ReweightEvalReport& r, double gamma) {
  container::Json j;
  j["samples"] = r.samples;
  j["gamma"] = gamma;
  j["distracted_accuracy"] = r.distracted_accuracy;
  j["reweighted_accuracy"] = r.reweighted_accuracy;
  j["ceiling_accuracy"] = r.ceiling_accuracy;
  j["gap_recovered"] = r.gap_recovered ? container::Json(*r.gap_recovered) : container::Json(nullptr);
  j["planned_rrar_before"] = r.planned_rrar_before;
  j["planned_rrar_after"] = r.planned_rrar_after;
  return j;
}

inline std::string reweight_table(const ReweightEvalReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "distracted  %.4f\nreweighted  %.4f\nceiling     %.4f\ngap recovered %s\n"
                "planned-head rrar %s -> %s\n",
                r.distracted_accuracy, r.reweighted_accuracy, r.ceiling_accuracy,
                r.gap_recovered ? format_g9(*r.gap_recovered).c_str() : "undefined",
                format_g9(r.planned_rrar_before).c_str(), format_g9(r.planned_rrar_after).c_str());
  return buf;
}

inline container::Json gradcheck_to_json(const GradCheckReport& r, const GradCheckConfig& cfg) {
  container::Json j;
  j["max_rel_error"] = r.max_rel_error;
  j["params"] = r.entries.size();
  j["step"] = cfg.step;
  j["floor"] = cfg.floor;
  j["oracle"] = cfg.extended_oracle ? "extended" : "double";
  if (!r.entries.empty()) {
    const auto& w = r.entries[r.worst];
    j["worst"] = {{"index", w.index}, {"block", w.block}, {"analytic", w.analytic}, {"numeric", w.numeric}};
  }
  return j;
}

}  // namespace vrga::toy
