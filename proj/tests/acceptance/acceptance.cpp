// Acceptance suite: one line per criterion, nonzero exit if any fails.
//
//   acceptance [--jobs N] [--seed S] [--only NAME]

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <sstream>

#include "support/oracle.hpp"
#include "support/tmpdir.hpp"
#include "vrga/cli.hpp"

using namespace vrga;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

Outcome metric_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(20240601);
  std::exponential_distribution<double> ex(1.0);
  long double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 4 + rng() % 253;
    const std::size_t m = std::max<std::size_t>(8 + rng() % 505, n + 1);
    const std::size_t begin = rng() % (m - n + 1);
    const std::size_t qt = begin == 0 ? m - 1 : 0;
    const TokenLayout layout(m, {{begin, begin + n}}, qt);
    std::vector<double> row(m);
    double s = 0;
    for (auto& x : row) s += (x = ex(rng) * (rng() % 8 == 0 ? 0.0 : 1.0) + 1e-12);
    for (auto& x : row) x /= s;
    std::vector<std::size_t> b;
    for (std::size_t k = 0, bn = 1 + rng() % n; k < bn; ++k) b.push_back(begin + rng() % n);
    const auto region = make_region(layout, b);
    oracle::Row ref{row, {}, {region.token_indices.begin(), region.token_indices.end()}};
    for (std::size_t k = begin; k < begin + n; ++k) ref.visual.insert(k);
    const auto hm = head_metrics(std::span<const double>(row), layout, &region);
    worst = std::max({worst, oracle::rel(*hm.rrar, *oracle::rrar(ref)), oracle::rel(*hm.r_img, *oracle::r_img(ref)),
                      oracle::rel(*hm.h_img, *oracle::h_img(ref))});
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-6L && secs < 10.0, fmt("max rel error %.3Le over 1000 rows, %.2f s", worst, secs)};
}

Outcome closed_forms() {
  bool ok = true;
  std::ostringstream d;
  std::mt19937_64 rng(1);
  double worst_r = 0, worst_h = 0, worst_1 = 0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t n = 4 + rng() % 253;
    const std::size_t m = n + 2 + rng() % 256;  // leaves room for the question token
    const TokenLayout layout(m, {{1, 1 + n}}, m - 1);
    std::vector<double> uniform(m, 1.0 / static_cast<double>(m));
    const std::span<const double> u(uniform);
    ok = ok && *rrar(u, layout, make_region(layout, {1 + rng() % n})) == 1.0;
    const double h = *image_attention_entropy(u, layout);
    worst_h = std::max(worst_h, std::abs(h + std::log(1.0 / static_cast<double>(n) + 1e-8)));
    std::vector<double> vis(m, 0.0);
    for (std::size_t k = 1; k <= n; ++k) vis[k] = 1.0 / static_cast<double>(n);
    worst_r = std::max(worst_r, std::abs(*image_attention_ratio(std::span<const double>(vis), layout) -
                                         static_cast<double>(m) / static_cast<double>(n)));
    std::vector<double> hot(m, 0.0);
    hot[1 + rng() % n] = 1.0;
    worst_1 = std::max(worst_1, std::abs(*image_attention_entropy(std::span<const double>(hot), layout)));
  }
  ok = ok && worst_r <= 1e-9 && worst_h <= 1e-4 && worst_1 <= 1e-6;
  return {ok, fmt("uniform RRAR exact; |R-M/N| %.1e, |H-H_unif| %.1e, |H_onehot| %.1e", worst_r, worst_h, worst_1)};
}

Outcome regression_recovery() {
  std::vector<RhPoint> pts;
  for (int i = 0; i < 32; ++i) {
    const double h = 0.3 + 0.11 * i;
    pts.push_back({h, -0.42 * h + 2.5});
  }
  const auto exact = *fit_r_h_regression(pts);
  const bool collinear = std::abs(exact.slope + 0.42) <= 1e-9 && std::abs(exact.intercept - 2.5) <= 1e-9 &&
                         std::abs(exact.pearson + 1.0) <= 1e-9;
  // Positive direction as well, r = +1.
  for (auto& p : pts) p.r_img = 0.2 * p.h_img + 0.01;
  const auto pos = *fit_r_h_regression(pts);
  const bool collinear_pos = std::abs(pos.slope - 0.2) <= 1e-9 && std::abs(pos.intercept - 0.01) <= 1e-9 &&
                             std::abs(pos.pearson - 1.0) <= 1e-9;

  SynthSpec spec;
  spec.layout = TokenLayout(80, {{1, 65}}, 79, {Grid{8, 8, 14}});
  const double slope = 0.2;
  spec.r_h_line = RhLine{slope, 0.05, 0.01};
  std::size_t good = 0;
  double worst_slope = 0, min_r = 1;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    spec.seed = seed;
    const auto fx = generate(spec);
    const auto fit = fit_r_h_regression(rh_points(compute_head_metrics(fx.dump)));
    if (!fit) continue;
    const double err = std::abs(fit->slope - slope) / slope;
    worst_slope = std::max(worst_slope, err);
    min_r = std::min(min_r, fit->pearson);
    good += err <= 0.05 && fit->pearson >= 0.9;
  }
  return {collinear && collinear_pos && good == 50,
          fmt("collinear %s; %zu/50 line fixtures pass (worst slope err %.2f%%, min r %.4f)",
              collinear && collinear_pos ? "exact" : "FAILED", good, 100 * worst_slope, min_r)};
}

double precision(const std::vector<HeadIndex>& got, const std::vector<HeadIndex>& want) {
  const std::set<HeadIndex> w(want.begin(), want.end());
  std::size_t hit = 0;
  for (const auto& h : got) hit += w.count(h);
  return got.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(got.size());
}

Outcome head_selection() {
  double efr = 0, rnd = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto fx = generate(default_fixture_spec(seed));
    const auto t = compute_head_metrics(fx.dump);
    efr += precision(select_vision_heads(t, {}).vision_heads, fx.labels.vision_heads);
    rnd += precision(baseline_selection(SelectionRule::kRandom, t, {}, seed).vision_heads, fx.labels.vision_heads);
  }
  efr /= 50;
  rnd /= 50;
  return {efr >= 0.9 && efr > rnd, fmt("EFR-guided precision %.4f vs random %.4f (50 fixtures)", efr, rnd)};
}

Outcome sink_suppression() {
  std::size_t excluded = 0, included = 0;
  RefineConfig raw;
  raw.lambda = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto fx = generate(default_fixture_spec(seed));
    const auto sel = select_heads(compute_head_metrics(fx.dump), {});
    const auto sink = fx.labels.sink_tokens.at(0);
    const auto t1 = select_tokens(refine_map(fx.dump, sel, {}), {}).tokens;
    const auto t0 = select_tokens(refine_map(fx.dump, sel, raw), raw).tokens;
    excluded += std::find(t1.begin(), t1.end(), sink) == t1.end();
    included += std::find(t0.begin(), t0.end(), sink) != t0.end();
  }
  return {excluded >= 95 && included >= 60,
          fmt("sink excluded in %zu/100 at lambda=1, included in %zu/100 at lambda=0", excluded, included)};
}

Outcome steering_algebra() {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0.001, 1.0);
  double worst_ratio = 0, worst_sum = 0;
  bool identities = true;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t m = 8 + rng() % 300;
    std::vector<double> row(m);
    double s = 0;
    for (auto& x : row) s += (x = u(rng));
    for (auto& x : row) x /= s;
    std::vector<std::size_t> toks;
    std::vector<char> in(m, 0);
    for (std::size_t i = 0; i < m; ++i) {
      if (rng() % 3 == 0) {
        toks.push_back(i);
        in[i] = 1;
      }
    }
    const double gamma = static_cast<double>(rng() % 4000) / 1000.0;
    auto out = row;
    RowReweighter(m, toks, gamma, true).apply(std::span<double>(out));
    double sum = 0;
    for (double v : out) sum += v;
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
    for (std::size_t i = 0; i + 1 < m; ++i) {
      const double want = (in[i] ? 1.0 + gamma : 1.0) / (in[i + 1] ? 1.0 + gamma : 1.0);
      const double got = (out[i] / out[i + 1]) / (row[i] / row[i + 1]);
      worst_ratio = std::max(worst_ratio, std::abs(got - want));
    }
    std::vector<float> f(row.begin(), row.end());
    RowReweighter(m, toks, gamma, true).apply(std::span<float>(f));
    double fs = 0;
    for (float v : f) fs += v;
    worst_sum = std::max(worst_sum, std::abs(fs - 1.0));

    auto norm = row;
    normalize_row(std::span<double>(norm));
    auto g0 = row;
    RowReweighter(m, toks, 0.0, true).apply(std::span<double>(g0));
    std::vector<std::size_t> all(m);
    std::iota(all.begin(), all.end(), 0);
    auto full = row;
    RowReweighter(m, all, gamma, true).apply(std::span<double>(full));
    identities = identities && g0 == norm && full == norm;
  }
  return {worst_ratio <= 1e-9 && worst_sum <= 1e-6 && identities,
          fmt("ratio law max dev %.1e, row-sum dev %.1e, identities %s", worst_ratio, worst_sum,
              identities ? "bitwise" : "BROKEN")};
}

// ---------------------------------------------------------------------------

struct Toy {
  toy::Model model;
  double train_accuracy = 0;
  double train_seconds = 0;
};

Outcome toy_ablation(const Toy& t, std::size_t jobs) {
  const auto& cfg = t.model.config();
  const auto eval = toy::make_dataset(cfg, {}, cfg.eval_samples, toy::eval_split_seed(cfg.seed));
  toy::AblationConfig ac;
  ac.seed = cfg.seed;
  ac.jobs = jobs;
  const auto rep = toy::ablation_study(t.model, eval, ac);
  const double base = rep.at("baseline"), rnd = rep.at("random"), low = rep.at("low-visual"),
               efr = rep.at("efr-guided");
  const bool ok = t.train_accuracy >= 0.90 && t.train_seconds <= 300 && efr <= rnd - 0.30 &&
                  std::abs(low - base) <= 0.10;
  return {ok, fmt("train acc %.4f in %.0f s; baseline %.4f random %.4f low-visual %.4f efr-guided %.4f",
                  t.train_accuracy, t.train_seconds, base, rnd, low, efr)};
}

Outcome toy_rrar_split(const Toy& t, const std::vector<toy::ToySample>& distract, std::size_t jobs) {
  const auto rep = toy::rrar_correctness_report(t.model, distract, jobs);
  if (!rep.compared) return {false, "comparison skipped: " + rep.skip_reason};
  std::string layers;
  for (std::size_t l = 0; l < rep.correct_mean.size(); ++l) {
    layers += fmt(" L%zu %.2f/%.2f", l, rep.correct_mean[l], rep.incorrect_mean[l]);
  }
  return {rep.fraction_higher >= 0.60,
          fmt("correct > incorrect on %zu/%zu layers (%zu correct, %zu incorrect);", rep.layers_higher,
              rep.correct_mean.size(), rep.correct, rep.incorrect) +
              layers};
}

Outcome toy_reweight(const Toy& t, const std::vector<toy::ToySample>& distract, std::size_t jobs) {
  toy::ReweightEvalConfig rc;
  rc.gamma = 0.5;
  rc.jobs = jobs;
  const auto rep = toy::reweight_eval(t.model, distract, rc);
  const double rec = rep.gap_recovered.value_or(0.0);
  return {rep.gap_recovered && rec >= 0.5 && rep.planned_rrar_after > rep.planned_rrar_before,
          fmt("distracted %.4f reweighted %.4f ceiling %.4f -> gap recovered %.4f; planned-head RRAR %.3f -> %.3f",
              rep.distracted_accuracy, rep.reweighted_accuracy, rep.ceiling_accuracy, rec, rep.planned_rrar_before,
              rep.planned_rrar_after)};
}

Outcome gradient_check(const Toy& t) {
  const auto& cfg = t.model.config();
  const auto batch = toy::make_dataset(cfg, {}, 2, toy::train_split_seed(cfg.seed));
  toy::GradCheckConfig gc;
  gc.params = 200;
  const auto trained = toy::grad_check(t.model, batch, gc);
  toy::Model fresh(cfg);
  fresh.init(cfg.seed + 1);
  const auto init = toy::grad_check(fresh, batch, gc);
  const double worst = std::max(trained.max_rel_error, init.max_rel_error);
  const auto& w = trained.entries[trained.worst];
  return {worst <= 1e-5, fmt("max rel error %.3e (trained %.3e at %s, fresh init %.3e), 200 params each", worst,
                             trained.max_rel_error, w.block.c_str(), init.max_rel_error)};
}

// ---------------------------------------------------------------------------

std::map<std::string, std::string> snapshot(const std::filesystem::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    out[std::filesystem::relative(e.path(), dir).generic_string()] =
        std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  return out;
}

Outcome determinism(const std::filesystem::path& checkpoint) {
  ::setenv("SOURCE_DATE_EPOCH", "1700000000", 1);
  const std::vector<std::vector<std::string>> commands = {
      {"--seed", "3", "synth", "--out", "s.json"},
      {"--seed", "3", "synth", "--kind", "r-h-line", "--noise", "0.01", "--out", "line.json"},
      {"metrics", "--dump", "s.json", "--region", "20,21", "--out", "m.csv"},
      {"metrics", "--dump", "s.json", "--bbox", "0,0,56,56", "--format", "json", "--out", "m.json"},
      {"pipeline", "--dump", "s.json", "--out", "plan.json", "--intermediates", "inter"},
      {"steer", "--dump", "s.json", "--plan", "plan.json", "--out", "steered.json"},
      {"heatmap", "--map", "inter/refined.json", "--out", "heat.csv"},
      {"--seed", "1", "toy", "train", "--steps", "20", "--d-model", "16", "--heads", "4", "--layers", "2",
       "--d-ff", "32", "--grid-rows", "4", "--grid-cols", "4", "--shapes", "6", "--colors", "4", "--out", "small.json",
       "--report", "small.train.json"},
      {"--jobs", "2", "toy", "ablate", "--model", checkpoint.string(), "--samples", "60", "--out", "ablate.json"},
      {"--jobs", "2", "toy", "reweight-eval", "--model", checkpoint.string(), "--samples", "60", "--out", "rw.json"},
      {"toy", "rrar-split", "--model", checkpoint.string(), "--samples", "60", "--out", "split.json"},
      {"toy", "gradcheck", "--model", "small.json", "--params", "12", "--out", "gc.json"},
  };
  std::vector<std::map<std::string, std::string>> runs;
  std::vector<std::string> stdouts[2];
  const auto cwd = std::filesystem::current_path();
  for (int r = 0; r < 2; ++r) {
    TempDir dir("vrga-det");
    std::filesystem::current_path(dir.path());
    for (const auto& c : commands) {
      std::ostringstream out, err;
      if (cli::run(c, out, err) != 0) {
        std::filesystem::current_path(cwd);
        ::unsetenv("SOURCE_DATE_EPOCH");
        return {false, "command failed: " + c[c[0] == "--seed" || c[0] == "--jobs" ? 2 : 0] + ": " + err.str()};
      }
      stdouts[r].push_back(out.str());
    }
    std::filesystem::current_path(cwd);
    runs.push_back(snapshot(dir.path()));
  }
  ::unsetenv("SOURCE_DATE_EPOCH");
  std::size_t differ = 0;
  std::string first;
  for (const auto& [name, bytes] : runs[0]) {
    const auto it = runs[1].find(name);
    if (it == runs[1].end() || it->second != bytes) {
      if (differ++ == 0) first = name;
    }
  }
  if (runs[0].size() != runs[1].size()) ++differ;
  const bool same_stdout = stdouts[0] == stdouts[1];
  return {differ == 0 && same_stdout,
          fmt("%zu commands, %zu files, %zu differ%s%s", commands.size(), runs[0].size(), differ,
              differ ? (" (first: " + first + ")").c_str() : "", same_stdout ? "" : "; stdout differs")};
}

}  // namespace

int main(int argc, char** argv) {
  std::size_t jobs = 1;
  std::uint64_t seed = 0;
  std::string only;
  CLI::App app{"acceptance suite"};
  app.add_option("--jobs", jobs)->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "toy model seed");
  app.add_option("--only", only, "run one criterion");
  CLI11_PARSE(app, argc, argv);

  int failed = 0;
  auto report = [&](const std::string& name, const std::function<Outcome()>& fn) {
    if (!only.empty() && only != name) return;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("[%s] %-22s %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  };

  report("metric-oracle", metric_oracle);
  report("closed-forms", closed_forms);
  report("regression-recovery", regression_recovery);
  report("head-selection", head_selection);
  report("sink-suppression", sink_suppression);
  report("steering-algebra", steering_algebra);

  const std::set<std::string> toy_names{"toy-ablation", "toy-rrar-split", "toy-reweight", "gradient-check", "determinism"};
  if (only.empty() || toy_names.contains(only)) {
    toy::ToyConfig cfg;
    cfg.seed = seed;
    const auto t0 = Clock::now();
    auto trained = toy::train(cfg);
    Toy t{std::move(trained.model), trained.eval_accuracy, seconds_since(t0)};
    const auto distract = toy::make_dataset(cfg, {toy::TaskKind::kFindPatchDistract}, 1000, toy::distract_split_seed(seed));
    TempDir ck("vrga-acc");
    toy::save_checkpoint(t.model, ck / "toy.json");

    report("toy-ablation", [&] { return toy_ablation(t, jobs); });
    report("toy-rrar-split", [&] { return toy_rrar_split(t, distract, jobs); });
    report("toy-reweight", [&] { return toy_reweight(t, distract, jobs); });
    report("gradient-check", [&] { return gradient_check(t); });
    report("determinism", [&] { return determinism(ck / "toy.json"); });
  }

  std::printf("%d criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
