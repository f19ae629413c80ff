#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <json.hpp>

#include "cli_util.hpp"

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("voxnas_cli_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p.parent_path());
  return p;
}

}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(cli::run("").status == 2);
  const auto bad = cli::run("frobnicate");
  CHECK(bad.status == 2);
  CHECK(bad.err.find("Usage") != std::string::npos);
  CHECK(cli::run("select --w1 notanumber").status == 2);
  CHECK(cli::run("synth extra positional").status == 2);
}

TEST_CASE("domain errors exit 1 with the error name") {
  const auto out = scratch("missing");
  const auto r = cli::run("select --problem /nonexistent/problem.json --out " + out.string());
  CHECK(r.status == 1);
  CHECK(r.err.find("error: IoError") != std::string::npos);

  const auto panel = out.parent_path() / "bad_panel.csv";
  std::ofstream(panel) << "item,base,year,f1\na,b,2010,1\n";
  const auto m = cli::run("ingest --panel " + panel.string() + " --out " + out.string());
  CHECK(m.status == 1);
  CHECK(m.err.find("MissingLevelColumn") != std::string::npos);
}

TEST_CASE("select on the checked-in fixture") {
  const auto out = scratch("select");
  const auto r = cli::run("select --problem " VOXNAS_FIXTURE_DIR "/table7_selection.json --out " + out.string());
  REQUIRE(r.status == 0);
  const auto j = nlohmann::json::parse(cli::slurp(out / "selection.json"));
  CHECK(j.at("models") == nlohmann::json({"tab2vox", "xgboost", "dt", "lasso"}));
  CHECK(std::abs(j.at("objective").get<double>() - 0.6555) <= 0.0015);
  CHECK(j.contains("provenance"));
}

TEST_CASE("synth is byte-identical under a seed and stamped") {
  const auto a = scratch("synth_a"), b = scratch("synth_b");
  REQUIRE(cli::run("synth --seed 3 --out " + a.string()).status == 0);
  REQUIRE(cli::run("synth --seed 3 --out " + b.string()).status == 0);
  CHECK(cli::tree(a) == cli::tree(b));
  const auto panel = cli::slurp(a / "panel.csv");
  CHECK(panel.rfind("# config_hash=", 0) == 0);
  CHECK(panel.find("seed=3") != std::string::npos);
  const auto c = scratch("synth_c");
  REQUIRE(cli::run("synth --seed 4 --out " + c.string()).status == 0);
  CHECK(cli::slurp(c / "panel.csv") != panel);
}

TEST_CASE("flags override the config file") {
  const auto out = scratch("override");
  const auto cfg = out.parent_path() / "cfg.json";
  std::ofstream(cfg) << R"({"seed": 11, "synthetic": {"items": 6}})";
  REQUIRE(cli::run("synth --config " + cfg.string() + " --seed 12 --out " + out.string()).status == 0);
  CHECK(cli::slurp(out / "panel.csv").find("seed=12") != std::string::npos);
}
