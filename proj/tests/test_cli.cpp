#include <sys/wait.h>

#include <catch_amalgamated.hpp>
#include <cmath>
#include <json.hpp>

#include "helpers.hpp"

using namespace rfavar;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string output;
};

RunResult run_cli(const std::string& args, const testing::TempDir& dir, const std::string& env = "") {
  const std::string log = dir.file("cli.log");
  fs::remove(log);
  const std::string cmd = env + " '" + std::string(RFAVAR_CLI_PATH) + "' " + args + " > '" + log + "' 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.output = testing::read_file(log);
  return r;
}

std::string write_config(const testing::TempDir& dir, const json& cfg, const std::string& name = "config.json") {
  const std::string path = dir.file(name);
  testing::write_file(path, cfg.dump(2));
  return path;
}

json read_json(const fs::path& p) { return json::parse(testing::read_file(p.string())); }

// Small panel with one observed factor, simulated into dir/data.
json estimate_config(const testing::TempDir& dir) {
  json sim = {{"simulate", {{"n_series", 20}, {"n_periods", 120}, {"r1", 1}, {"r2", 1}, {"zero_fraction", 0.5}, {"seed", 3}}}};
  const auto path = write_config(dir, sim, "sim.json");
  const auto data = dir.path() / "data";
  REQUIRE(run_cli("simulate --config '" + path + "' --out '" + data.string() + "'", dir).code == 0);
  json cfg;
  cfg["seed"] = 5;
  cfg["estimate"] = {{"panel", (data / "panel.csv").string()}, {"spec", (data / "spec.csv").string()}, {"observed", {"g001"}},
                     {"r1", 1}, {"p", 1}, {"mu1", 0.05}, {"mu2", 0.0}};
  return cfg;
}

std::string args(const std::string& cmd, const std::string& config, const fs::path& out, const std::string& extra = "") {
  return cmd + " --config '" + config + "' --out '" + out.string() + "' " + extra;
}

}  // namespace

TEST_CASE("simulate writes the panel and truth, reproducibly", "[cli]") {
  testing::TempDir dir("cli_sim");
  const auto cfg = write_config(dir, {{"simulate", {{"n_series", 10}, {"n_periods", 50}}}});
  const auto a = dir.path() / "a", b = dir.path() / "b";
  REQUIRE(run_cli(args("simulate", cfg, a, "--seed 7"), dir).code == 0);
  REQUIRE(run_cli(args("simulate", cfg, b, "--seed 7"), dir).code == 0);
  for (const char* f : {"panel.csv", "truth.json", "spec.csv"}) {
    REQUIRE(fs::exists(a / f));
    CHECK(testing::read_file((a / f).string()) == testing::read_file((b / f).string()));
  }
  const auto rows = csv::read((a / "panel.csv").string());
  CHECK(rows.size() == 51);
  CHECK(rows[0].size() == 12);  // date, ten series, one observed factor

  const auto c = dir.path() / "c";
  REQUIRE(run_cli(args("simulate", cfg, c, "--seed 8"), dir).code == 0);
  CHECK(testing::read_file((a / "panel.csv").string()) != testing::read_file((c / "panel.csv").string()));
}

TEST_CASE("configuration errors exit with code 2 and name the field", "[cli]") {
  testing::TempDir dir("cli_cfg");
  const auto bad_beta = write_config(dir, {{"simulate", {{"beta", 0.3}}}}, "beta.json");
  const auto r = run_cli(args("simulate", bad_beta, dir.path() / "o"), dir);
  CHECK(r.code == 2);
  CHECK(r.output.find("beta") != std::string::npos);
  CHECK(r.output.find("[0.5, 1]") != std::string::npos);

  const auto bad_type = write_config(dir, {{"simulate", {{"n_series", "many"}}}}, "type.json");
  const auto t = run_cli(args("simulate", bad_type, dir.path() / "o"), dir);
  CHECK(t.code == 2);
  CHECK(t.output.find("n_series") != std::string::npos);

  CHECK(run_cli("simulate --config '" + dir.file("missing.json") + "'", dir).code == 2);
  CHECK(run_cli("nonsense", dir).code == 2);
  testing::write_file(dir.file("broken.json"), "{ not json");
  CHECK(run_cli("simulate --config '" + dir.file("broken.json") + "'", dir).code == 2);
}

TEST_CASE("estimate with fixed penalties and automatic factor count", "[cli]") {
  testing::TempDir dir("cli_est");
  json cfg = estimate_config(dir);
  const auto path = write_config(dir, cfg);
  const auto out = dir.path() / "fixed";
  REQUIRE(run_cli(args("estimate", path, out), dir).code == 0);
  for (const char* f : {"fit.json", "loadings.csv", "idio_cov.csv", "identified.json", "impact.csv", "factors.csv", "manifest.json"})
    CHECK(fs::exists(out / f));
  CHECK_FALSE(fs::exists(out / "ic_surface.csv"));
  const json fit = read_json(out / "fit.json");
  CHECK(fit["penalties"]["mu1"] == 0.05);
  CHECK(fit["loadings_latent"].size() == 20);
  CHECK(read_json(out / "manifest.json")["grid_search"] == false);

  // same inputs and seed: fit JSON reproduced byte for byte
  const std::string first = testing::read_file((out / "fit.json").string());
  REQUIRE(run_cli(args("estimate", path, out), dir).code == 0);
  CHECK(testing::read_file((out / "fit.json").string()) == first);

  cfg["estimate"]["r1"] = "auto";
  cfg["estimate"]["r_max"] = 4;
  const auto auto_path = write_config(dir, cfg, "auto.json");
  const auto auto_out = dir.path() / "auto";
  REQUIRE(run_cli(args("estimate", auto_path, auto_out), dir).code == 0);
  const json man = read_json(auto_out / "manifest.json");
  CHECK(man["r1_auto"] == true);
  CHECK(man["r_max"] == 4);
  CHECK(man["ic1"].size() == 4);
  const int r1 = man["r1"].get<int>();
  CHECK(r1 >= 1);
  CHECK(r1 <= 4);
  CHECK(read_json(auto_out / "fit.json")["r1"] == r1);
}

TEST_CASE("estimate grid search writes the IC surface", "[cli]") {
  testing::TempDir dir("cli_grid");
  json cfg = estimate_config(dir);
  cfg["estimate"].erase("mu1");
  cfg["estimate"].erase("mu2");
  cfg["estimate"]["grid1"] = {0.0, 0.05, 0.1};
  cfg["estimate"]["grid2"] = {0.0, 0.1};
  const auto out = dir.path() / "grid";
  REQUIRE(run_cli(args("estimate", write_config(dir, cfg), out), dir).code == 0);
  const auto rows = csv::read((out / "ic_surface.csv").string());
  REQUIRE(rows.size() == 7);
  CHECK(rows[0] == csv::Row{"mu1", "mu2", "ic", "kappa", "loglik", "iterations", "converged", "flagged", "all_zero"});
  CHECK(read_json(out / "manifest.json")["grid_search"] == true);
}

TEST_CASE("estimation failures exit with code 3", "[cli]") {
  testing::TempDir dir("cli_fail");
  json cfg = estimate_config(dir);
  cfg["estimate"]["r1"] = 30;  // more factors than series
  CHECK(run_cli(args("estimate", write_config(dir, cfg), dir.path() / "o"), dir).code == 3);
}

TEST_CASE("irf outputs, band columns, scaling and impact horizon", "[cli]") {
  testing::TempDir dir("cli_irf");
  json cfg = estimate_config(dir);
  cfg["irf"] = {{"hmax", 6}, {"boot", 0}};
  const auto unit = dir.path() / "unit";
  REQUIRE(run_cli(args("irf", write_config(dir, cfg), unit), dir).code == 0);
  const auto fac = csv::read((unit / "irf_factors.csv").string());
  const auto obs = csv::read((unit / "irf_observables.csv").string());
  CHECK(fac[0] == csv::Row{"factor", "horizon", "point"});
  CHECK(obs[0] == csv::Row{"series", "horizon", "point"});
  CHECK(fac.size() == 1 + 2 * 7);
  CHECK(obs.size() == 1 + 20 * 7);
  CHECK(read_json(unit / "irf_manifest.json")["shock"] == "g001");

  cfg["irf"]["boot"] = 20;
  const auto banded = dir.path() / "banded";
  REQUIRE(run_cli(args("irf", write_config(dir, cfg), banded), dir).code == 0);
  const auto fb = csv::read((banded / "irf_factors.csv").string());
  CHECK(fb[0] == csv::Row{"factor", "horizon", "point", "lower", "upper"});

  SECTION("shock magnitude in original units scales by the inverse series std") {
    // rescale the observed factor so its std is 0.25, then compare bp = 1 with the unit shock
    const std::string panel_path = cfg["estimate"]["panel"];
    auto rows = csv::read(panel_path);
    const std::size_t col = rows[0].size() - 1;
    const double target = read_json(unit / "irf_manifest.json")["target_series_std"];
    std::ostringstream ss;
    csv::write_row(ss, rows[0]);
    for (std::size_t i = 1; i < rows.size(); ++i) {
      rows[i][col] = csv::format_double(std::stod(rows[i][col]) * 0.25 / target);
      csv::write_row(ss, rows[i]);
    }
    testing::write_file(panel_path, ss.str());

    cfg["irf"]["boot"] = 0;
    const auto base = dir.path() / "base", bp = dir.path() / "bp";
    REQUIRE(run_cli(args("irf", write_config(dir, cfg), base), dir).code == 0);
    REQUIRE(run_cli(args("irf", write_config(dir, cfg), bp, "--bp 1.0"), dir).code == 0);
    CHECK(std::abs(read_json(bp / "irf_manifest.json")["target_series_std"].get<double>() - 0.25) < 1e-12);
    const auto a = csv::read((base / "irf_observables.csv").string());
    const auto b = csv::read((bp / "irf_observables.csv").string());
    REQUIRE(a.size() == b.size());
    double worst = 0.0;
    for (std::size_t i = 1; i < a.size(); ++i) {
      const double x = std::stod(a[i][2]), y = std::stod(b[i][2]);
      worst = std::max(worst, std::abs(y - 4.0 * x) / std::max(1.0, std::abs(x)));
    }
    CHECK(worst < 1e-12);
  }

  SECTION("horizon 0 reproduces the impact loadings") {
    cfg["irf"]["boot"] = 0;
    const auto out = dir.path() / "h0";
    REQUIRE(run_cli(args("irf", write_config(dir, cfg), out, "--hmax 0"), dir).code == 0);
    const auto resp = csv::read((out / "irf_observables.csv").string());
    const auto impact = csv::read((out / "impact.csv").string());
    REQUIRE(resp.size() == 21);
    REQUIRE(impact[0].back() == "g001");
    for (std::size_t i = 1; i < resp.size(); ++i) {
      CHECK(resp[i][0] == impact[i][0]);
      CHECK(resp[i][1] == "0");
      CHECK(resp[i][2] == impact[i].back());
    }
  }

  SECTION("unknown shock series exits with code 4") {
    const auto r = run_cli(args("irf", write_config(dir, cfg), dir.path() / "bad", "--shock nope"), dir);
    CHECK(r.code == 4);
    CHECK(r.output.find("nope") != std::string::npos);
  }
}

TEST_CASE("montecarlo reports and thread invariance", "[cli]") {
  testing::TempDir dir("cli_mc");
  json one = {{"montecarlo", {{"sizes", {{20, 60}}}, {"replications", 1}, {"r1", 1}, {"grid1", {0.0, 0.1}}, {"grid2", {0.0}}}}};
  const auto out = dir.path() / "one";
  CHECK(run_cli(args("montecarlo", write_config(dir, one, "one.json"), out), dir).code == 0);
  const json sum = read_json(out / "mc_summary.json");
  CHECK(sum["status"] == "insufficient");
  CHECK_FALSE(sum.contains("assertions"));
  CHECK(csv::read((out / "mc_records.csv").string()).size() == 2);

  json two = one;
  two["montecarlo"]["sizes"] = {{20, 60}, {30, 80}};
  two["montecarlo"]["replications"] = 2;
  const auto path = write_config(dir, two, "two.json");
  const auto seq = dir.path() / "seq", par = dir.path() / "par", env = dir.path() / "env";
  const int code = run_cli(args("montecarlo", path, seq, "--threads 1"), dir).code;
  CHECK((code == 0 || code == 5));
  CHECK(run_cli(args("montecarlo", path, par, "--threads 3"), dir).code == code);
  CHECK(run_cli(args("montecarlo", path, env), dir, "RFAVAR_THREADS=2").code == code);
  for (const auto& other : {par, env}) {
    CHECK(testing::read_file((seq / "mc_records.csv").string()) == testing::read_file((other / "mc_records.csv").string()));
    CHECK(testing::read_file((seq / "mc_summary.json").string()) == testing::read_file((other / "mc_summary.json").string()));
  }
  const json s2 = read_json(seq / "mc_summary.json");
  CHECK(s2["status"] == (code == 0 ? "pass" : "fail"));
}
