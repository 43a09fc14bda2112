#pragma once

// The `vrga` command line: metrics, pipeline, steer, heatmap, synth, toy.
//
// Every command that writes files also writes a run manifest next to its
// main output (<stem>.run.json) with the command line, the resolved option
// values (defaults included), SHA-256 of inputs and outputs, the tool
// version and a timestamp. The timestamp honours SOURCE_DATE_EPOCH so
// repeated runs can be compared byte for byte.
//
// Exit codes: 0 success, 1 invalid input or usage, 2 internal failure.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <openssl/evp.h>

#include "vrga/container.hpp"
#include "vrga/dump_io.hpp"
#include "vrga/head_select.hpp"
#include "vrga/localize.hpp"
#include "vrga/metrics.hpp"
#include "vrga/metrics_io.hpp"
#include "vrga/steer.hpp"
#include "vrga/synthgen.hpp"
#include "vrga/toy/report.hpp"

namespace vrga::cli {

inline constexpr const char* kToolVersion = "0.1.0";

namespace fs = std::filesystem;
using container::Json;

inline std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for hashing");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 0xf];
  }
  return out;
}

inline std::string timestamp_utc() {
  std::time_t t = 0;
  if (const char* sde = std::getenv("SOURCE_DATE_EPOCH"); sde != nullptr && *sde != '\0') {
    t = static_cast<std::time_t>(std::strtoll(sde, nullptr, 10));
  } else {
    t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline fs::path sibling(const fs::path& p, const std::string& suffix) {
  return p.parent_path() / (p.stem().string() + suffix);
}

// Paths a command read and wrote, for the run manifest.
struct Artifacts {
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
};

inline void add_dump_inputs(Artifacts& a, const fs::path& manifest) {
  a.inputs.push_back(manifest);
  const auto j = container::read_json(manifest);
  if (j.contains("payload_file") && j["payload_file"].is_string()) {
    a.inputs.push_back(manifest.parent_path() / j["payload_file"].get<std::string>());
  }
}

inline Json option_snapshot(const CLI::App& app) {
  Json j = Json::object();
  for (const auto* opt : app.get_options()) {
    const auto name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "version") continue;
    if (opt->get_expected_max() == 0) {
      j[name] = opt->count() > 0;
    } else if (opt->count() > 0) {
      const auto& r = opt->results();
      std::string v;
      for (std::size_t i = 0; i < r.size(); ++i) v += (i ? "," : "") + r[i];
      j[name] = v;
    } else {
      j[name] = opt->get_default_str();
    }
  }
  return j;
}

inline void write_run_manifest(const fs::path& path, const std::string& command, const std::vector<std::string>& argv,
                               const Json& config, const Artifacts& a) {
  Json j;
  j["command"] = command;
  j["argv"] = argv;
  j["config"] = config;
  auto hashes = [](const std::vector<fs::path>& ps) {
    auto arr = Json::array();
    for (const auto& p : ps) arr.push_back({{"path", p.generic_string()}, {"sha256", sha256_file(p)}});
    return arr;
  };
  j["inputs"] = hashes(a.inputs);
  j["outputs"] = hashes(a.outputs);
  j["tool_version"] = kToolVersion;
  j["timestamp"] = timestamp_utc();
  container::write_json(path, j);
}

inline std::vector<std::size_t> parse_index_list(const std::string& s, const char* what) {
  std::vector<std::size_t> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || item[0] == '-') throw ValidationError(std::string(what) + ": '" + item + "' is not an index");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

inline PixelBox parse_box(const std::string& s) {
  std::vector<std::int64_t> v;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t used = 0;
    long long x = 0;
    try {
      x = std::stoll(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw ValidationError("bbox: '" + item + "' is not an integer");
    v.push_back(x);
  }
  if (v.size() != 4) throw ValidationError("bbox: expected x0,y0,x1,y1");
  return {v[0], v[1], v[2], v[3]};
}

// Appends options from a JSON config file that the command line does not
// already set. Keys are option names without the leading dashes.
inline std::vector<std::string> inject_config(std::vector<std::string> args) {
  fs::path cfg;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) cfg = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) cfg = args[i].substr(9);
  }
  if (cfg.empty()) return args;
  const auto j = container::read_json(cfg);
  if (!j.is_object()) throw ValidationError("config: expected a JSON object");
  auto given = [&](const std::string& flag) {
    for (const auto& a : args) {
      if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
    }
    return false;
  };
  std::vector<std::string> extra;
  for (const auto& [key, value] : j.items()) {
    const auto flag = "--" + key;
    if (key == "config" || given(flag)) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) extra.push_back(flag);
    } else if (value.is_string()) {
      extra.push_back(flag);
      extra.push_back(value.get<std::string>());
    } else if (value.is_number()) {
      extra.push_back(flag);
      extra.push_back(value.dump());
    } else if (value.is_array()) {
      std::string joined;
      for (const auto& x : value) joined += (joined.empty() ? "" : ",") + (x.is_string() ? x.get<std::string>() : x.dump());
      extra.push_back(flag);
      extra.push_back(joined);
    } else {
      throw ValidationError("config: unsupported value for '" + key + "'");
    }
  }
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

struct Common {
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::string config;
};

struct ToyOptions {
  toy::ToyConfig cfg;
  std::string model;  // checkpoint; trained from cfg when empty
  std::string out;
  std::size_t samples = 0;
  toy::TaskOptions distract{toy::TaskKind::kFindPatchDistract};
};

inline void add_toy_config(CLI::App* sub, ToyOptions& t) {
  auto& c = t.cfg;
  sub->add_option("--d-model", c.d_model, "model width")->capture_default_str();
  sub->add_option("--layers", c.layers)->capture_default_str();
  sub->add_option("--heads", c.heads)->capture_default_str();
  sub->add_option("--d-ff", c.d_ff)->capture_default_str();
  sub->add_option("--grid-rows", c.grid_rows)->capture_default_str();
  sub->add_option("--grid-cols", c.grid_cols)->capture_default_str();
  sub->add_option("--shapes", c.shapes)->capture_default_str();
  sub->add_option("--colors", c.colors)->capture_default_str();
  sub->add_option("--lr", c.learning_rate)->capture_default_str();
  sub->add_option("--steps", c.steps)->capture_default_str();
  sub->add_option("--batch-size", c.batch_size)->capture_default_str();
  sub->add_option("--train-samples", c.train_samples)->capture_default_str();
  sub->add_option("--eval-samples", c.eval_samples)->capture_default_str();
  sub->add_option("--optimizer", c.optimizer)
      ->transform(CLI::CheckedTransformer(std::map<std::string, toy::Optimizer>{{"sgd", toy::Optimizer::kSgd},
                                                                               {"adam", toy::Optimizer::kAdam}}))
      ->default_str("adam");
  sub->add_option("--momentum", c.momentum)->capture_default_str();
  sub->add_option("--weight-decay", c.weight_decay)->capture_default_str();
}

inline void add_distract_options(CLI::App* sub, ToyOptions& t) {
  sub->add_option("--decoys", t.distract.decoys)->capture_default_str();
  sub->add_option("--decoy-match", t.distract.decoy_match)->capture_default_str();
  sub->add_option("--decoy-salience", t.distract.decoy_salience)->capture_default_str();
  sub->add_option("--lookalikes", t.distract.lookalikes)->capture_default_str();
  sub->add_option("--lookalike-match", t.distract.lookalike_match)->capture_default_str();
}

// Loads --model or trains a model from the config.
inline toy::Model obtain_model(ToyOptions& t, std::uint64_t seed, Artifacts& a, std::ostream& log) {
  if (!t.model.empty()) {
    a.inputs.push_back(t.model);
    auto m = toy::load_checkpoint(t.model);
    a.inputs.push_back(fs::path(t.model).parent_path() / (fs::path(t.model).stem().string() + ".f64"));
    return m;
  }
  t.cfg.seed = seed;
  log << "training toy model (" << t.cfg.steps << " steps, seed " << seed << ")\n";
  auto r = toy::train(t.cfg);
  log << "eval accuracy " << format_g9(r.eval_accuracy) << '\n';
  return std::move(r.model);
}

class Runner {
 public:
  Runner(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

  int run(std::vector<std::string> args) {
    argv_ = args;
    CLI::App app{"Attention analysis and steering for vision-language transformers", "vrga"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", kToolVersion);
    app.add_option("--seed", common_.seed, "seed for every random choice")->envname("VRGA_SEED")->capture_default_str();
    app.add_option("--jobs", common_.jobs, "worker threads for per-sample work")->capture_default_str()->check(CLI::PositiveNumber);
    app.add_option("--config", common_.config, "JSON file with option values (keys are option names)");

    build_metrics(app);
    build_pipeline(app);
    build_steer(app);
    build_heatmap(app);
    build_synth(app);
    build_toy(app);

    try {
      args = inject_config(args);
      check_subcommand(app, args);
      std::reverse(args.begin(), args.end());
      app.parse(args);
    } catch (const CLI::CallForHelp&) {
      out_ << app.help();
      return 0;
    } catch (const CLI::CallForAllHelp&) {
      out_ << app.help("", CLI::AppFormatMode::All);
      return 0;
    } catch (const CLI::CallForVersion&) {
      out_ << kToolVersion << '\n';
      return 0;
    } catch (const CLI::ParseError& e) {
      err_ << "error: " << e.what() << '\n';
      if (const auto* s = deepest(app)) err_ << s->help();
      return 1;
    } catch (const ValidationError& e) {
      err_ << "error: " << e.what() << '\n';
      return 1;
    } catch (const IoError& e) {
      err_ << "error: " << e.what() << '\n';
      return 1;
    }

    try {
      action_();
      return 0;
    } catch (const ValidationError& e) {
      err_ << "error: " << e.what() << '\n';
      return 1;
    } catch (const IoError& e) {
      err_ << "error: " << e.what() << '\n';
      return 1;
    } catch (const std::exception& e) {
      err_ << "internal error: " << e.what() << '\n';
      return 2;
    }
  }

 private:
  // CLI11 reports a stray word as a missing subcommand; name it instead.
  // `scope` is the deepest parsed command and `rest` the words after it.
  static void check_subcommand(const CLI::App& scope, const std::vector<std::string>& rest) {
    if (scope.get_subcommands({}).empty()) return;
    for (std::size_t i = 0; i < rest.size(); ++i) {
      const auto& a = rest[i];
      if (a == "--seed" || a == "--jobs" || a == "--config") {
        ++i;
        continue;
      }
      if (a.empty() || a[0] == '-') continue;
      for (const auto* s : scope.get_subcommands({})) {
        if (s->check_name(a)) return check_subcommand(*s, {rest.begin() + static_cast<std::ptrdiff_t>(i) + 1, rest.end()});
      }
      throw CLI::ValidationError("unknown subcommand '" + a + "'");
    }
  }

  static const CLI::App* deepest(const CLI::App& app) {
    const CLI::App* cur = &app;
    for (;;) {
      const auto subs = cur->get_subcommands();
      if (subs.empty()) return cur;
      cur = subs.front();
    }
  }

  // Options of the subcommand and every parent, root first.
  Json snapshot(const CLI::App* sub) const {
    std::vector<const CLI::App*> chain;
    for (const CLI::App* p = sub; p != nullptr; p = p->get_parent()) chain.push_back(p);
    Json j = Json::object();
    for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
      const auto part = option_snapshot(**it);
      for (const auto& [k, v] : part.items()) j[k] = v;
    }
    return j;
  }

  void manifest(const CLI::App* sub, const std::string& command, const fs::path& main_output, const Artifacts& a) {
    const auto path = sibling(main_output, ".run.json");
    write_run_manifest(path, command, argv_, snapshot(sub), a);
  }

  // metrics ---------------------------------------------------------------
  struct MetricsArgs {
    std::string dump, region, bbox, format = "csv", out;
    double overlap = 0.5, epsilon = 1e-8;
    std::size_t span_index = 0;
    long long step = -1;
    bool rrar = false, lenient = false;
  } m_;

  void build_metrics(CLI::App& app) {
    auto* sub = app.add_subcommand("metrics", "per-head RRAR, R_img, H_img, EFR and per-layer mean RRAR");
    sub->add_option("--dump", m_.dump, "dump manifest")->required();
    sub->add_option("--region", m_.region, "region token indices, comma separated");
    sub->add_option("--bbox", m_.bbox, "region as a pixel box x0,y0,x1,y1");
    sub->add_option("--overlap", m_.overlap, "minimum covered fraction of a patch for --bbox")->capture_default_str();
    sub->add_option("--span-index", m_.span_index, "visual span the --bbox refers to")->capture_default_str();
    sub->add_flag("--rrar", m_.rrar, "require RRAR columns (needs a region)");
    sub->add_option("--format", m_.format)->check(CLI::IsMember({"csv", "json"}))->capture_default_str();
    sub->add_option("--out", m_.out, "output file")->required();
    sub->add_option("--step", m_.step, "generation step of a per-step dump (default: last)");
    sub->add_option("--epsilon", m_.epsilon, "entropy epsilon")->capture_default_str();
    sub->add_flag("--lenient", m_.lenient, "row-sum violations become warnings");
    sub->callback([this, sub] { action_ = [this, sub] { cmd_metrics(sub); }; });
  }

  std::optional<std::size_t> step_of(long long s) const {
    if (s < 0) return std::nullopt;
    return static_cast<std::size_t>(s);
  }

  AttentionDump load(const std::string& path, bool lenient, Artifacts& a) {
    add_dump_inputs(a, path);
    auto d = load_dump(path, lenient ? Strictness::kLenient : Strictness::kStrict);
    for (const auto& w : d.warnings()) err_ << "warning: " << w << '\n';
    return d;
  }

  void cmd_metrics(const CLI::App* sub) {
    Artifacts a;
    const auto dump = load(m_.dump, m_.lenient, a);
    std::optional<RegionMask> region;
    if (!m_.region.empty() && !m_.bbox.empty()) throw ValidationError("metrics: give --region or --bbox, not both");
    if (!m_.region.empty()) region = make_region(dump.layout(), parse_index_list(m_.region, "region"));
    if (!m_.bbox.empty()) region = bbox_to_tokens(dump.layout(), parse_box(m_.bbox), m_.overlap, m_.span_index);
    if (region && region->empty()) {
      if (m_.rrar) throw ValidationError("metrics: RRAR requested but the region is empty");
      err_ << "warning: region is empty; RRAR columns omitted\n";
      region.reset();
    }
    if (m_.rrar && !region) throw ValidationError("metrics: RRAR requested but no region given");
    MetricsConfig mc;
    mc.epsilon = m_.epsilon;
    const auto table = compute_head_metrics(dump, region ? &*region : nullptr, mc, step_of(m_.step));
    std::optional<LayerRrar> lr;
    if (region) lr = layer_rrar(table);
    const fs::path out = m_.out;
    if (m_.format == "json") {
      container::write_json(out, metrics_to_json(table, region.has_value(), lr ? &*lr : nullptr));
      a.outputs.push_back(out);
    } else {
      write_text(out, metrics_to_csv(table, region.has_value()));
      a.outputs.push_back(out);
      if (lr) {
        const auto lp = sibling(out, ".layers.csv");
        write_text(lp, layer_rrar_to_csv(*lr));
        a.outputs.push_back(lp);
      }
    }
    manifest(sub, "metrics", out, a);
    out_ << "wrote " << out.generic_string() << " (" << table.layers << " layers x " << table.heads << " heads)\n";
  }

  // pipeline ----------------------------------------------------------------
  struct PipelineArgs {
    std::string dump, out, intermediates, aggregation = "normalized";
    std::size_t k = 0, background_count = 0;
    double quantile = 0.5, background_fraction = 0.25, lambda = 1.0, tau = 0.5, gamma = 0.5;
    long long step = -1;
    bool lenient = false, no_renormalize = false;
  } p_;

  void build_pipeline(CLI::App& app) {
    auto* sub = app.add_subcommand("pipeline", "select heads, localize, and emit a reweighting plan");
    sub->add_option("--dump", p_.dump, "dump manifest")->required();
    sub->add_option("--k", p_.k, "vision heads per layer (0: 5 for H=16, 10 for H=32, else ceil(H/3))")->capture_default_str();
    sub->add_option("--quantile", p_.quantile, "R_img quantile a vision head must reach")->capture_default_str();
    sub->add_option("--background-fraction", p_.background_fraction, "share of early layers searched for background heads")->capture_default_str();
    sub->add_option("--background-count", p_.background_count, "background heads per layer (0: same as k)")->capture_default_str();
    sub->add_option("--lambda", p_.lambda, "background subtraction strength")->capture_default_str();
    sub->add_option("--tau", p_.tau, "token threshold on the refined map")->capture_default_str();
    sub->add_option("--gamma", p_.gamma, "boost of selected tokens")->capture_default_str();
    sub->add_option("--aggregation", p_.aggregation)->check(CLI::IsMember({"normalized", "raw"}))->capture_default_str();
    sub->add_flag("--no-renormalize", p_.no_renormalize, "emit a plan that skips row renormalization");
    sub->add_option("--step", p_.step, "generation step of a per-step dump (default: last)");
    sub->add_option("--out", p_.out, "plan JSON")->required();
    sub->add_option("--intermediates", p_.intermediates, "directory for metrics, selection, map and tokens");
    sub->add_flag("--lenient", p_.lenient);
    sub->callback([this, sub] { action_ = [this, sub] { cmd_pipeline(sub); }; });
  }

  void cmd_pipeline(const CLI::App* sub) {
    Artifacts a;
    const auto dump = load(p_.dump, p_.lenient, a);
    SelectionConfig sc;
    if (p_.k > 0) sc.heads_per_layer = p_.k;
    sc.r_img_quantile = p_.quantile;
    sc.background_layer_fraction = p_.background_fraction;
    if (p_.background_count > 0) sc.background_count_per_layer = p_.background_count;
    RefineConfig rc;
    rc.lambda = p_.lambda;
    rc.tau = p_.tau;
    rc.aggregation = p_.aggregation == "raw" ? MapAggregation::kRaw : MapAggregation::kNormalized;
    rc.validate();
    if (!(p_.gamma >= 0.0)) throw ValidationError("pipeline: gamma must be nonnegative");

    const auto step = step_of(p_.step);
    const auto table = compute_head_metrics(dump, nullptr, {}, step);
    const auto sel = select_heads(table, sc);
    for (const auto& w : sel.warnings) err_ << "warning: " << w << '\n';
    if (sel.vision_heads.empty()) throw ValidationError("pipeline: no vision-focused heads were selected");
    const auto map = refine_map(dump, sel, rc, step);
    if (map.all_zero) err_ << "warning: refined map is all zero\n";
    const auto tokens = select_tokens(map, rc);
    for (const auto& w : tokens.warnings) err_ << "warning: " << w << '\n';
    const ReweightPlan plan{sel.vision_heads, tokens.tokens, p_.gamma, !p_.no_renormalize};

    const fs::path out = p_.out;
    save_plan(plan, out);
    a.outputs.push_back(out);
    if (!p_.intermediates.empty()) {
      const fs::path dir = p_.intermediates;
      fs::create_directories(dir);
      container::write_json(dir / "metrics.json", metrics_to_json(table, false));
      container::write_json(dir / "selection.json", selection_to_json(sel));
      container::write_json(dir / "refined.json", refined_map_to_json(map));
      Json tj;
      tj["tau"] = rc.tau;
      tj["tokens"] = tokens.tokens;
      tj["warnings"] = tokens.warnings;
      container::write_json(dir / "tokens.json", tj);
      for (const char* f : {"metrics.json", "selection.json", "refined.json", "tokens.json"}) a.outputs.push_back(dir / f);
    }
    manifest(sub, "pipeline", out, a);
    out_ << "vision heads " << sel.vision_heads.size() << ", background heads " << sel.background_heads.size()
         << ", tokens " << tokens.tokens.size() << "\nwrote " << out.generic_string() << '\n';
  }

  // steer -----------------------------------------------------------------
  struct SteerArgs {
    std::string dump, plan, out;
    bool lenient = false;
  } s_;

  void build_steer(CLI::App& app) {
    auto* sub = app.add_subcommand("steer", "apply a reweight or mask plan to the rows of a dump");
    sub->add_option("--dump", s_.dump, "dump manifest")->required();
    sub->add_option("--plan", s_.plan, "plan JSON")->required();
    sub->add_option("--out", s_.out, "output dump manifest")->required();
    sub->add_flag("--lenient", s_.lenient);
    sub->callback([this, sub] { action_ = [this, sub] { cmd_steer(sub); }; });
  }

  void cmd_steer(const CLI::App* sub) {
    Artifacts a;
    const auto dump = load(s_.dump, s_.lenient, a);
    a.inputs.push_back(s_.plan);
    const auto plan = load_plan(s_.plan);
    validate_plan(plan, dump.layers(), dump.heads(), dump.layout());
    auto data = dump.data();
    const auto m = dump.tokens();
    const auto heads = std::visit([](const auto& p) { return p.heads; }, plan);
    for (std::size_t st = 0; st < dump.steps(); ++st) {
      for (const auto& h : heads) {
        std::span<float> row(data.data() + ((st * dump.layers() + h.layer) * dump.heads() + h.head) * m, m);
        std::visit(
            [&](const auto& p) {
              using P = std::decay_t<decltype(p)>;
              if constexpr (std::is_same_v<P, ReweightPlan>) {
                RowReweighter(m, p.tokens, p.gamma, p.renormalize).apply(row);
              } else {
                RowMasker(m, p.spans, p.renormalize).apply(row);
              }
            },
            plan);
      }
    }
    const AttentionDump out_dump(dump.kind(), dump.layers(), dump.heads(), dump.steps(), dump.layout(), std::move(data),
                                 Strictness::kLenient);
    const fs::path out = s_.out;
    save_dump(out_dump, out);
    a.outputs.push_back(out);
    a.outputs.push_back(sibling(out, ".bin"));
    manifest(sub, "steer", out, a);
    out_ << "steered " << heads.size() << " heads; wrote " << out.generic_string() << '\n';
  }

  // heatmap ---------------------------------------------------------------
  struct HeatmapArgs {
    std::string map, out;
  } h_;

  void build_heatmap(CLI::App& app) {
    auto* sub = app.add_subcommand("heatmap", "grid-shaped CSV of a refined map");
    sub->add_option("--map", h_.map, "refined map JSON")->required();
    sub->add_option("--out", h_.out, "CSV path; multi-span maps write <stem>.span<i>.csv")->required();
    sub->callback([this, sub] { action_ = [this, sub] { cmd_heatmap(sub); }; });
  }

  void cmd_heatmap(const CLI::App* sub) {
    Artifacts a;
    a.inputs.push_back(h_.map);
    const auto map = refined_map_from_json(container::read_json(h_.map));
    if (!map.layout.has_grid()) throw ValidationError("heatmap: the map's layout has no grid");
    const fs::path out = h_.out;
    const auto spans = map.layout.spans().size();
    for (std::size_t i = 0; i < spans; ++i) {
      const auto path = spans == 1 ? out : sibling(out, ".span" + std::to_string(i) + out.extension().string());
      write_text(path, heatmap_csv(map, i));
      a.outputs.push_back(path);
      out_ << "wrote " << path.generic_string() << '\n';
    }
    manifest(sub, "heatmap", out, a);
  }

  // synth -----------------------------------------------------------------
  struct SynthArgs {
    std::string out, kind = "fixture", mode;
    double slope = 0.2, intercept = 0.0, noise = 0.0;
  } y_;

  void build_synth(CLI::App& app) {
    auto* sub = app.add_subcommand("synth", "write a labeled synthetic dump");
    sub->add_option("--out", y_.out, "dump manifest path; labels go to <stem>.labels.json")->required();
    sub->add_option("--kind", y_.kind)->check(CLI::IsMember({"fixture", "r-h-line"}))->capture_default_str();
    sub->add_option("--slope", y_.slope, "R-H line slope")->capture_default_str();
    sub->add_option("--intercept", y_.intercept, "R-H line intercept")->capture_default_str();
    sub->add_option("--noise", y_.noise, "R-H line noise (std of R_img)")->capture_default_str();
    sub->add_option("--mode", y_.mode, "prompt mode label (reason, direct, region-guided)");
    sub->callback([this, sub] { action_ = [this, sub] { cmd_synth(sub); }; });
  }

  void cmd_synth(const CLI::App* sub) {
    auto spec = default_fixture_spec(common_.seed);
    if (y_.kind == "r-h-line") {
      spec.planted_vision.clear();
      spec.sinks = {};
      spec.r_h_line = RhLine{y_.slope, y_.intercept, y_.noise};
    }
    if (!y_.mode.empty()) {
      spec.mode = parse_prompt_mode(y_.mode);
      spec.mode_offsets = {{PromptMode::kDirect, 0.6}, {PromptMode::kReason, 0.8}, {PromptMode::kRegionGuided, 1.0}};
    }
    const auto sample = generate(spec);
    const fs::path out = y_.out;
    save_dump(sample.dump, out);
    const auto labels = sibling(out, ".labels.json");
    container::write_json(labels, labels_to_json(sample.labels));
    Artifacts a;
    a.outputs = {out, sibling(out, ".bin"), labels};
    manifest(sub, "synth", out, a);
    out_ << "wrote " << out.generic_string() << " and " << labels.generic_string() << '\n';
  }

  // toy -------------------------------------------------------------------
  ToyOptions t_;
  std::size_t toy_k_ = 3, random_draws_ = 5, grad_params_ = 200, grad_batch_ = 2;
  double toy_gamma_ = 0.5, grad_step_ = 1e-6, grad_floor_ = 1e-6;
  std::string oracle_ = "extended", report_;

  void build_toy(CLI::App& app) {
    auto* toy = app.add_subcommand("toy", "train and probe the built-in toy model");
    toy->require_subcommand(1);

    auto* train = toy->add_subcommand("train", "train on find-patch and write a checkpoint");
    add_toy_config(train, t_);
    train->add_option("--out", t_.out, "checkpoint manifest path")->required();
    train->add_option("--report", report_, "training report JSON (curve, eval accuracy)");
    train->callback([this, train] { action_ = [this, train] { cmd_toy_train(train); }; });

    auto* ablate = toy->add_subcommand("ablate", "mask k heads per layer chosen by each strategy");
    add_toy_config(ablate, t_);
    ablate->add_option("--model", t_.model, "checkpoint (trained from the config when absent)");
    ablate->add_option("--k", toy_k_, "heads per layer")->capture_default_str();
    ablate->add_option("--random-draws", random_draws_, "random selections averaged per sample")->capture_default_str();
    ablate->add_option("--samples", t_.samples, "eval samples (0: --eval-samples)")->capture_default_str();
    ablate->add_option("--out", t_.out, "report JSON");
    ablate->callback([this, ablate] { action_ = [this, ablate] { cmd_toy_ablate(ablate); }; });

    auto* rw = toy->add_subcommand("reweight-eval", "reweight planned heads toward the target on find-patch-distract");
    add_toy_config(rw, t_);
    add_distract_options(rw, t_);
    rw->add_option("--model", t_.model, "checkpoint (trained from the config when absent)");
    rw->add_option("--gamma", toy_gamma_)->capture_default_str();
    rw->add_option("--k", toy_k_, "planned heads per layer")->capture_default_str();
    rw->add_option("--samples", t_.samples, "distract samples (0: 1000)")->capture_default_str();
    rw->add_option("--out", t_.out, "report JSON");
    rw->callback([this, rw] { action_ = [this, rw] { cmd_toy_reweight(rw); }; });

    auto* split = toy->add_subcommand("rrar-split", "per-layer mean RRAR of correct vs incorrect answers");
    add_toy_config(split, t_);
    add_distract_options(split, t_);
    split->add_option("--model", t_.model, "checkpoint (trained from the config when absent)");
    split->add_option("--samples", t_.samples, "distract samples (0: 1000)")->capture_default_str();
    split->add_option("--out", t_.out, "report JSON");
    split->callback([this, split] { action_ = [this, split] { cmd_toy_split(split); }; });

    auto* gc = toy->add_subcommand("gradcheck", "analytic gradients vs central differences");
    add_toy_config(gc, t_);
    gc->add_option("--model", t_.model, "checkpoint (freshly initialized from --seed when absent)");
    gc->add_option("--params", grad_params_, "sampled parameters")->capture_default_str();
    gc->add_option("--fd-step", grad_step_, "finite-difference step")->capture_default_str();
    gc->add_option("--floor", grad_floor_, "relative-error denominator floor")->capture_default_str();
    gc->add_option("--batch", grad_batch_, "samples in the loss")->capture_default_str();
    gc->add_option("--oracle", oracle_, "precision of the finite differences")
        ->check(CLI::IsMember({"extended", "double"}))
        ->capture_default_str();
    gc->add_option("--out", t_.out, "report JSON");
    gc->callback([this, gc] { action_ = [this, gc] { cmd_toy_gradcheck(gc); }; });
  }

  void finish_report(const CLI::App* sub, const std::string& command, const Json& report, Artifacts& a) {
    if (t_.out.empty()) return;
    const fs::path out = t_.out;
    container::write_json(out, report);
    a.outputs.insert(a.outputs.begin(), out);
    manifest(sub, command, out, a);
  }

  void cmd_toy_train(const CLI::App* sub) {
    t_.cfg.seed = common_.seed;
    auto r = toy::train(t_.cfg);
    const fs::path out = t_.out;
    toy::save_checkpoint(r.model, out);
    Artifacts a;
    a.outputs = {out, sibling(out, ".f64")};
    if (!report_.empty()) {
      container::write_json(report_, toy::train_to_json(r));
      a.outputs.push_back(report_);
    }
    manifest(sub, "toy train", out, a);
    const auto stride = std::max<std::size_t>(1, r.curve.size() / 10);
    out_ << "step    loss\n";
    for (std::size_t i = 0; i < r.curve.size(); ++i) {
      if (i % stride == 0 || i + 1 == r.curve.size()) {
        char line[64];
        std::snprintf(line, sizeof line, "%-7zu %.6f\n", r.curve[i].step, r.curve[i].loss);
        out_ << line;
      }
    }
    out_ << "eval accuracy " << format_g9(r.eval_accuracy) << "\nwrote " << out.generic_string() << '\n';
  }

  void cmd_toy_ablate(const CLI::App* sub) {
    Artifacts a;
    const auto model = obtain_model(t_, common_.seed, a, err_);
    const auto& cfg = model.config();
    const auto n = t_.samples > 0 ? t_.samples : cfg.eval_samples;
    const auto eval = toy::make_dataset(cfg, {}, n, toy::eval_split_seed(cfg.seed));
    toy::AblationConfig ac;
    ac.heads_per_layer = toy_k_;
    ac.random_draws = random_draws_;
    ac.seed = common_.seed;
    ac.jobs = common_.jobs;
    const auto rep = toy::ablation_study(model, eval, ac);
    out_ << toy::ablation_table(rep);
    finish_report(sub, "toy ablate", toy::ablation_to_json(rep), a);
  }

  std::vector<toy::ToySample> distract_set(const toy::Model& model) const {
    const auto& cfg = model.config();
    return toy::make_dataset(cfg, t_.distract, t_.samples > 0 ? t_.samples : 1000, toy::distract_split_seed(cfg.seed));
  }

  void cmd_toy_reweight(const CLI::App* sub) {
    Artifacts a;
    const auto model = obtain_model(t_, common_.seed, a, err_);
    toy::ReweightEvalConfig rc;
    rc.gamma = toy_gamma_;
    rc.selection.heads_per_layer = toy_k_;
    rc.jobs = common_.jobs;
    const auto rep = toy::reweight_eval(model, distract_set(model), rc);
    out_ << toy::reweight_table(rep);
    auto j = toy::reweight_to_json(rep, toy_gamma_);
    j["task"] = toy::task_to_json(t_.distract);
    finish_report(sub, "toy reweight-eval", j, a);
  }

  void cmd_toy_split(const CLI::App* sub) {
    Artifacts a;
    const auto model = obtain_model(t_, common_.seed, a, err_);
    const auto rep = toy::rrar_correctness_report(model, distract_set(model), common_.jobs);
    out_ << toy::rrar_split_table(rep);
    auto j = toy::rrar_split_to_json(rep);
    j["task"] = toy::task_to_json(t_.distract);
    finish_report(sub, "toy rrar-split", j, a);
  }

  void cmd_toy_gradcheck(const CLI::App* sub) {
    Artifacts a;
    std::optional<toy::Model> model;
    if (!t_.model.empty()) {
      model = obtain_model(t_, common_.seed, a, err_);
    } else {
      t_.cfg.seed = common_.seed;
      model.emplace(t_.cfg);
      model->init(common_.seed);
    }
    const auto batch = toy::make_dataset(model->config(), {}, std::max<std::size_t>(1, grad_batch_),
                                         toy::train_split_seed(common_.seed));
    toy::GradCheckConfig gc;
    gc.params = grad_params_;
    gc.step = grad_step_;
    gc.floor = grad_floor_;
    gc.seed = common_.seed;
    gc.extended_oracle = oracle_ == "extended";
    const auto rep = toy::grad_check(*model, batch, gc);
    out_ << "max relative error " << format_g9(rep.max_rel_error) << " over " << rep.entries.size() << " parameters\n";
    finish_report(sub, "toy gradcheck", toy::gradcheck_to_json(rep, gc), a);
  }

  std::ostream& out_;
  std::ostream& err_;
  std::vector<std::string> argv_;
  Common common_;
  std::function<void()> action_;
};

// args excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  Runner r(out, err);
  return r.run(args);
}

}  // namespace vrga::cli
