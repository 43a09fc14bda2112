#include <gtest/gtest.h>

#include <sstream>

#include "support/tmpdir.hpp"
#include "vrga/cli.hpp"

using namespace vrga;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string s(const std::filesystem::path& p) { return p.string(); }

}  // namespace

TEST(Cli, ExitCodes) {
  TempDir dir;
  EXPECT_EQ(run({}).code, 1);
  const auto bogus = run({"bogus"});
  EXPECT_EQ(bogus.code, 1);
  EXPECT_NE(bogus.err.find("unknown subcommand 'bogus'"), std::string::npos);
  EXPECT_EQ(run({"toy", "nope"}).code, 1);
  EXPECT_EQ(run({"metrics", "--out", s(dir / "x.csv")}).code, 1);
  EXPECT_EQ(run({"metrics", "--dump", s(dir / "missing.json"), "--out", s(dir / "x.csv")}).code, 1);
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_EQ(run({"--version"}).out, std::string(cli::kToolVersion) + "\n");

  {
    std::ofstream bad(dir / "bad.json");
    bad << "{\"version\": 1,";
  }
  const auto malformed = run({"metrics", "--dump", s(dir / "bad.json"), "--out", s(dir / "x.csv")});
  EXPECT_EQ(malformed.code, 1);
  EXPECT_NE(malformed.err.find("malformed"), std::string::npos);
}

TEST(Cli, MetricsMatchesLibrary) {
  TempDir dir;
  ASSERT_EQ(run({"--seed", "4", "synth", "--out", s(dir / "d.json")}).code, 0);
  const auto fx = generate(default_fixture_spec(4));
  EXPECT_TRUE(load_dump(dir / "d.json") == fx.dump);

  ASSERT_EQ(run({"metrics", "--dump", s(dir / "d.json"), "--region", "10,11", "--out", s(dir / "m.csv")}).code, 0);
  const auto region = make_region(fx.dump.layout(), {10, 11});
  const auto table = compute_head_metrics(fx.dump, &region);
  EXPECT_EQ(slurp(dir / "m.csv"), metrics_to_csv(table, true));
  EXPECT_EQ(slurp(dir / "m.layers.csv"), layer_rrar_to_csv(layer_rrar(table)));

  ASSERT_EQ(run({"metrics", "--dump", s(dir / "d.json"), "--format", "json", "--out", s(dir / "m.json")}).code, 0);
  const auto j = container::read_json(dir / "m.json");
  EXPECT_FALSE(j["heads_table"][0].contains("rrar"));

  const auto need = run({"metrics", "--dump", s(dir / "d.json"), "--rrar", "--out", s(dir / "r.csv")});
  EXPECT_EQ(need.code, 1);
  EXPECT_NE(need.err.find("region"), std::string::npos);

  ASSERT_EQ(run({"metrics", "--dump", s(dir / "d.json"), "--bbox", "14,0,28,14", "--out", s(dir / "b.csv")}).code, 0);
  const auto boxed = make_region(fx.dump.layout(), {2});
  EXPECT_EQ(slurp(dir / "b.csv"), metrics_to_csv(compute_head_metrics(fx.dump, &boxed), true));
}

TEST(Cli, PipelineMatchesLibrary) {
  TempDir dir;
  ASSERT_EQ(run({"synth", "--out", s(dir / "d.json")}).code, 0);
  ASSERT_EQ(run({"pipeline", "--dump", s(dir / "d.json"), "--gamma", "0.75", "--out", s(dir / "plan.json"),
                 "--intermediates", s(dir / "inter")})
                .code,
            0);
  const auto fx = generate(default_fixture_spec(0));
  const auto sel = select_heads(compute_head_metrics(fx.dump), {});
  const auto tokens = select_tokens(refine_map(fx.dump, sel, {}), 0.5);
  const Plan want = ReweightPlan{sel.vision_heads, tokens.tokens, 0.75, true};
  EXPECT_EQ(load_plan(dir / "plan.json"), want);
  for (const auto& t : fx.labels.region) EXPECT_EQ(std::count(tokens.tokens.begin(), tokens.tokens.end(), t), 1);
  EXPECT_TRUE(std::filesystem::exists(dir / "inter" / "refined.json"));

  const auto id = run({"pipeline", "--dump", s(dir / "d.json"), "--tau", "1.0", "--out", s(dir / "id.json")});
  EXPECT_EQ(id.code, 0);
  EXPECT_NE(id.err.find("warning"), std::string::npos);
  EXPECT_TRUE(std::get<ReweightPlan>(load_plan(dir / "id.json")).tokens.empty());

  EXPECT_EQ(run({"pipeline", "--dump", s(dir / "d.json"), "--tau", "2", "--out", s(dir / "x.json")}).code, 1);
  EXPECT_EQ(run({"pipeline", "--dump", s(dir / "d.json"), "--k", "9", "--out", s(dir / "x.json")}).code, 1);
}

TEST(Cli, SteerAndHeatmap) {
  TempDir dir;
  ASSERT_EQ(run({"synth", "--out", s(dir / "d.json")}).code, 0);
  ASSERT_EQ(run({"pipeline", "--dump", s(dir / "d.json"), "--out", s(dir / "plan.json"), "--intermediates",
                 s(dir / "i")})
                .code,
            0);
  ASSERT_EQ(run({"steer", "--dump", s(dir / "d.json"), "--plan", s(dir / "plan.json"), "--out", s(dir / "st.json")}).code, 0);
  const auto before = load_dump(dir / "d.json");
  const auto after = load_dump(dir / "st.json");
  const auto plan = std::get<ReweightPlan>(load_plan(dir / "plan.json"));
  const auto h = plan.heads.front();
  const auto t = plan.tokens.front();
  EXPECT_GT(after.row(h.layer, h.head)[t], before.row(h.layer, h.head)[t]);

  ASSERT_EQ(run({"heatmap", "--map", s(dir / "i" / "refined.json"), "--out", s(dir / "h.csv")}).code, 0);
  const auto map = refined_map_from_json(container::read_json(dir / "i" / "refined.json"));
  EXPECT_EQ(slurp(dir / "h.csv"), heatmap_csv(map));
}

TEST(Cli, RunManifest) {
  TempDir dir;
  ASSERT_EQ(run({"--seed", "2", "synth", "--out", s(dir / "d.json")}).code, 0);
  const auto m = container::read_json(dir / "d.run.json");
  EXPECT_EQ(m["command"], "synth");
  EXPECT_EQ(m["config"]["seed"], "2");
  EXPECT_EQ(m["config"]["slope"], "0.2");
  EXPECT_EQ(m["outputs"].size(), 3u);
  EXPECT_EQ(m["outputs"][0]["sha256"], cli::sha256_file(dir / "d.json"));
  EXPECT_EQ(m["tool_version"], cli::kToolVersion);
}

TEST(Cli, ConfigFileFillsUnsetFlags) {
  TempDir dir;
  {
    std::ofstream c(dir / "c.json");
    c << R"({"seed": 7, "kind": "r-h-line", "slope": 0.3})";
  }
  ASSERT_EQ(run({"--config", s(dir / "c.json"), "synth", "--slope", "0.25", "--out", s(dir / "d.json")}).code, 0);
  const auto m = container::read_json(dir / "d.run.json");
  EXPECT_EQ(m["config"]["seed"], "7");
  EXPECT_EQ(m["config"]["kind"], "r-h-line");
  EXPECT_EQ(m["config"]["slope"], "0.25");
  {
    std::ofstream c(dir / "u.json");
    c << R"({"no-such-flag": 1})";
  }
  EXPECT_EQ(run({"--config", s(dir / "u.json"), "synth", "--out", s(dir / "e.json")}).code, 1);
}

TEST(Cli, SeedFromEnvironment) {
  TempDir dir;
  ::setenv("VRGA_SEED", "5", 1);
  const auto r = run({"synth", "--out", s(dir / "d.json")});
  ::unsetenv("VRGA_SEED");
  ASSERT_EQ(r.code, 0);
  EXPECT_TRUE(load_dump(dir / "d.json") == generate(default_fixture_spec(5)).dump);
}

TEST(Cli, ToyGradcheckSmall) {
  TempDir dir;
  const auto r = run({"toy", "gradcheck", "--d-model", "8", "--heads", "2", "--layers", "1", "--d-ff", "8",
                      "--grid-rows", "2", "--grid-cols", "2", "--shapes", "3", "--colors", "2", "--params", "30",
                      "--out", s(dir / "g.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = container::read_json(dir / "g.json");
  EXPECT_LE(j["max_rel_error"].get<double>(), 1e-5);
  EXPECT_EQ(j["params"], 30);
}
