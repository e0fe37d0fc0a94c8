// Copyright 2026 The efbv Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================

#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "cli.hpp"

namespace efbv::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("efbv_cli_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

Manifest small_run() {
  Manifest m;
  m.synthetic = SyntheticSpec{8, 80, 0.5, 3};
  m.workers = 4;
  m.compressor = "comp:1,4";
  m.algorithms = {Algorithm::kEFBV, Algorithm::kEF21};
  m.rounds = 60;
  m.cadence = 20;
  m.seeds = {1, 2};
  return m;
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

TEST(CliParse, Synthetic) {
  const auto s = parse_synthetic("20,200,0.5");
  EXPECT_EQ(s.dim, 20u);
  EXPECT_EQ(s.rows, 200u);
  EXPECT_DOUBLE_EQ(s.separation, 0.5);
  EXPECT_EQ(s.seed, 1u);
  EXPECT_EQ(parse_synthetic("5,10,1.5,9").seed, 9u);
  EXPECT_THROW(parse_synthetic("5,10"), ConfigError);
  EXPECT_THROW(parse_synthetic("a,10,1"), ConfigError);
}

TEST(CliParse, SeedsAlgorithmsModes) {
  EXPECT_EQ(parse_seed_list("3,1,4"), (std::vector<std::uint64_t>{3, 1, 4}));
  EXPECT_THROW(parse_seed_list(""), ConfigError);
  EXPECT_THROW(parse_seed_list("1,-2"), ConfigError);
  EXPECT_EQ(parse_algorithm("ef-bv"), Algorithm::kEFBV);
  EXPECT_EQ(parse_algorithm("ef21"), Algorithm::kEF21);
  EXPECT_EQ(parse_algorithm("diana"), Algorithm::kDIANA);
  EXPECT_THROW(parse_algorithm("sgd"), ConfigError);
  EXPECT_EQ(parse_mode("kl"), Mode::kKL);
  EXPECT_EQ(parse_mode("nonconvex"), Mode::kNonconvex);
  EXPECT_THROW(parse_mode("convex"), ConfigError);
}

TEST(CliManifest, RejectsUnknownKeys) {
  try {
    manifest_from_json(json::parse(R"({"rounds": 10, "roudns": 5})"));
    FAIL() << "expected rejection";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("roudns"), std::string::npos);
  }
  EXPECT_THROW(manifest_from_json(json::parse(R"({"class_params": {"eta": 0.1}})")),
               std::exception);
  EXPECT_THROW(manifest_from_json(json::parse(R"({"synthetic": {"dims": 3}})")), ConfigError);
  EXPECT_THROW(manifest_from_json(json::parse(R"({"dataset": "a", "synthetic": "2,4,1"})")),
               ConfigError);
  EXPECT_THROW(manifest_from_json(json::parse("[1]")), ConfigError);
  EXPECT_THROW(manifest_from_json(json::parse(R"({"rounds": "ten"})")), ConfigError);
}

TEST(CliManifest, RoundTrip) {
  Manifest m = small_run();
  m.overrides.nu = 0.5;
  m.class_params = ClassParams{0.5, 2.0, 0.25};
  m.mode = Mode::kKL;
  m.l1 = 0.01;
  m.h0 = InitPolicy::kLocalGradient;
  const Manifest back = manifest_from_json(manifest_to_json(m));
  EXPECT_EQ(manifest_to_json(back), manifest_to_json(m));
  EXPECT_EQ(back.seeds, m.seeds);
  EXPECT_EQ(back.algorithms, m.algorithms);
  EXPECT_EQ(*back.overrides.nu, 0.5);
  EXPECT_EQ(back.synthetic->rows, 80u);
}

TEST(CliManifest, SyntheticObjectForm) {
  const Manifest m =
      manifest_from_json(json::parse(R"({"synthetic": {"d": 6, "N": 30, "separation": 1}})"));
  EXPECT_EQ(m.synthetic->dim, 6u);
  EXPECT_EQ(m.synthetic->rows, 30u);
  EXPECT_EQ(m.synthetic->seed, 1u);
}

// ---------------------------------------------------------------------------
// tune / table10
// ---------------------------------------------------------------------------

TEST(CliTune, DataFreeOmitsGamma) {
  Manifest m;
  m.dim = 112;
  m.workers = 1000;
  m.compressor = "comp:1,56";
  m.algorithms = {Algorithm::kEFBV, Algorithm::kEF21};
  std::ostringstream out, err;
  EXPECT_EQ(cmd_tune(m, out, err, 3), kExitOk);
  const std::string text = out.str();
  EXPECT_NE(text.find("param,ef_bv,ef21"), std::string::npos) << text;
  EXPECT_NE(text.find("lambda,0.00532,0.00532"), std::string::npos) << text;
  EXPECT_NE(text.find("nu,1,0.00532"), std::string::npos) << text;
  EXPECT_NE(text.find("r_av,0.555,0.998"), std::string::npos) << text;
  EXPECT_EQ(text.find("\ngamma,"), std::string::npos);
  EXPECT_NE(text.find("# gamma row omitted"), std::string::npos);
}

TEST(CliTune, WithSmoothnessPrintsGamma) {
  Manifest m;
  m.dim = 123;
  m.workers = 1000;
  m.compressor = "comp:1,61";
  m.L = 1.0;
  const TuneReport rep = make_tune_report(m);
  ASSERT_EQ(rep.columns.size(), 1u);
  EXPECT_TRUE(rep.columns[0].has_gamma);
  EXPECT_EQ(fmt(rep.params.eta, 3), "0.71");
  EXPECT_EQ(rep.params.omega, 60.0);
  std::ostringstream out, err;
  cmd_tune(m, out, err);
  EXPECT_NE(out.str().find("\ngamma,"), std::string::npos);
  EXPECT_NE(out.str().find("\nrate,"), std::string::npos);
}

TEST(CliTune, W8aRav) {
  Manifest m;
  m.dim = 300;
  m.workers = 1000;
  m.compressor = "comp:1,150";
  const TuneReport rep = make_tune_report(m);
  EXPECT_EQ(fmt(rep.columns[0].result.r_av, 3), "0.649");
}

TEST(CliTune, ClampWarning) {
  Manifest m;
  m.dim = 8;
  m.workers = 4;
  m.compressor = "randk:2";
  m.L = 1.0;
  m.overrides.gamma = 100.0;
  std::ostringstream out, err;
  EXPECT_EQ(cmd_tune(m, out, err), kExitOk);
  EXPECT_NE(err.str().find("clamped"), std::string::npos);
}

TEST(CliTune, NeedsDimensions) {
  Manifest m;
  std::ostringstream out, err;
  EXPECT_THROW(cmd_tune(m, out, err), ConfigError);
}

TEST(CliTable10, HasAllCells) {
  const auto cells = table10_cells();
  EXPECT_EQ(cells.size(), 12u);
  std::ostringstream out;
  EXPECT_EQ(cmd_table10(out, 3), kExitOk);
  const auto lines = lines_of(out.str());
  EXPECT_EQ(lines[0],
            "dataset,d,k,xi,method,eta,omega,omega_av,lambda,nu,r,r_av,sqrt_r_av_over_r,s_star");
  std::size_t rows = 0;
  for (const auto& l : lines)
    if (!l.empty() && l[0] != '#') ++rows;
  EXPECT_EQ(rows, 1u + 24u);
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

TEST(CliRun, WritesTracesSummariesAndMetadata) {
  const fs::path dir = scratch("run");
  Manifest m = small_run();
  m.output_dir = dir.string();
  m.gnuplot = true;
  std::ostringstream out, err;
  EXPECT_EQ(cmd_run(m, out, err), kExitOk) << err.str();
  for (const char* name : {"trace_ef_bv_seed1.csv", "trace_ef_bv_seed2.csv",
                           "trace_ef21_seed1.csv", "trace_ef21_seed2.csv", "summary_ef_bv.csv",
                           "summary_ef21.csv", "run.json", "plot.gp"})
    EXPECT_TRUE(fs::exists(dir / name)) << name;
  const auto lines = lines_of(slurp(dir / "trace_ef_bv_seed1.csv"));
  ASSERT_EQ(lines.size(), 1u + 4u);
  EXPECT_EQ(lines[0], kTraceHeader);
  EXPECT_EQ(lines[1].substr(0, 4), "0,0,");
  EXPECT_EQ(lines[4].substr(0, 3), "60,");
  const json info = json::parse(slurp(dir / "run.json"));
  EXPECT_EQ(info["runs"].size(), 4u);
  EXPECT_TRUE(info["reference"]["converged"].get<bool>());
  EXPECT_EQ(manifest_from_json(info["manifest"]).rounds, 60u);
  fs::remove_all(dir);
}

TEST(CliRun, SeventeenDigitsRoundTrip) {
  const auto oc = execute_runs(small_run(), "");
  ASSERT_FALSE(oc.traces.empty());
  std::ostringstream s;
  write_trace(s, oc.traces[0].records);
  const auto lines = lines_of(s.str());
  for (std::size_t j = 0; j < oc.traces[0].records.size(); ++j) {
    const auto& r = oc.traces[0].records[j];
    std::istringstream row(lines[j + 1]);
    std::string cell;
    std::vector<double> v;
    while (std::getline(row, cell, ',')) v.push_back(std::stod(cell));
    ASSERT_EQ(v.size(), 6u);
    EXPECT_EQ(v[2], r.f_gap);
    EXPECT_EQ(v[3], r.grad_norm_sq);
    EXPECT_EQ(v[4], r.lyapunov);
    EXPECT_EQ(v[5], r.control_residual);
  }
}

TEST(CliRun, ByteIdenticalRerun) {
  const fs::path a = scratch("rerun_a"), b = scratch("rerun_b");
  Manifest m = small_run();
  execute_runs(m, a.string());
  execute_runs(m, b.string());
  for (const auto& e : fs::directory_iterator(a)) {
    if (e.path().filename() == "run.json") continue;
    EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << e.path();
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(CliRun, SummaryIsSeedMean) {
  const auto oc = execute_runs(small_run(), "");
  const auto& avg = oc.averages.at(Algorithm::kEFBV);
  std::vector<const RunTrace*> runs;
  for (const auto& t : oc.traces)
    if (t.algorithm == Algorithm::kEFBV) runs.push_back(&t);
  ASSERT_EQ(runs.size(), 2u);
  for (std::size_t j = 0; j < avg.size(); ++j) {
    EXPECT_EQ(avg[j].t, runs[0]->records[j].t);
    EXPECT_NEAR(avg[j].f_gap, 0.5 * (runs[0]->records[j].f_gap + runs[1]->records[j].f_gap),
                1e-15);
  }
}

TEST(CliRun, DivergenceKeepsPartialTrace) {
  const fs::path dir = scratch("diverge");
  Manifest m;
  m.synthetic = SyntheticSpec{8, 80, 0.5, 3};
  m.workers = 4;
  m.compressor = "randk:1";
  m.class_params = ClassParams{0.0, 0.0, 0.0};
  m.rounds = 5000;
  m.cadence = 1;
  m.output_dir = dir.string();
  std::ostringstream out, err;
  EXPECT_EQ(cmd_run(m, out, err), kExitDiverged);
  EXPECT_NE(err.str().find("error: ef_bv seed 1"), std::string::npos) << err.str();
  const auto lines = lines_of(slurp(dir / "trace_ef_bv_seed1.csv"));
  EXPECT_GE(lines.size(), 2u);
  EXPECT_LT(lines.size(), 5002u);
  EXPECT_EQ(lines[0], kTraceHeader);
  fs::remove_all(dir);
}

TEST(CliRun, BitsToGap) {
  std::vector<RoundRecord> recs(3);
  recs[0].f_gap = 1.0;
  recs[1].f_gap = 1e-7;
  recs[1].bits_per_node = 640;
  recs[2].f_gap = 1e-8;
  recs[2].bits_per_node = 1280;
  EXPECT_EQ(*bits_to_gap(recs, 1e-6), 640.0);
  EXPECT_FALSE(bits_to_gap(recs, 1e-9).has_value());
}

TEST(CliRun, DefaultOutputDirFromEnvironment) {
  ::unsetenv("EFBV_OUT_DIR");
  EXPECT_EQ(default_output_dir(), "efbv_out");
  ::setenv("EFBV_OUT_DIR", "/tmp/somewhere", 1);
  EXPECT_EQ(default_output_dir(), "/tmp/somewhere");
  ::unsetenv("EFBV_OUT_DIR");
}

// ---------------------------------------------------------------------------
// certify
// ---------------------------------------------------------------------------

TEST(CliCertify, SmallCatalogPasses) {
  CertifyOptions opt;
  opt.dim = 6;
  opt.workers = 4;
  opt.samples = 20000;
  std::ostringstream out, err;
  EXPECT_EQ(cmd_certify(opt, out, err), kExitOk) << out.str();
  EXPECT_NE(out.str().find("compressor,claimed_eta,eta_hat"), std::string::npos);
  EXPECT_EQ(out.str().find("FAIL"), std::string::npos);
}

TEST(CliCertify, NegativeControlFailsAndIsExpected) {
  CertifyOptions opt;
  opt.dim = 6;
  opt.workers = 4;
  opt.samples = 20000;
  opt.negative_control = true;
  const auto rows = certify(opt);
  ASSERT_TRUE(rows.back().expect_fail);
  EXPECT_FALSE(rows.back().checks_pass());
  EXPECT_TRUE(rows.back().ok());
  std::ostringstream out, err;
  EXPECT_EQ(cmd_certify(opt, out, err), kExitOk);
  EXPECT_NE(out.str().find("FAIL"), std::string::npos);
}

TEST(CliCertify, CatalogContents) {
  const auto cat = certify_catalog(16, 8);
  std::vector<std::string> names;
  for (const auto& s : cat) names.push_back(to_string(s));
  for (const char* want : {"identity", "rand-1", "top-4", "nice-2"})
    EXPECT_NE(std::find(names.begin(), names.end(), want), names.end()) << want;
}

// ---------------------------------------------------------------------------
// The binary
// ---------------------------------------------------------------------------

int run_tool(const std::string& args, std::string* output = nullptr) {
  const std::string cmd = std::string(EFBV_TOOL_PATH) + " " + args + " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return -1;
  std::string text;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe)) text += buf;
  const int status = ::pclose(pipe);
  if (output) *output = text;
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(CliBinary, Table10AndTune) {
  std::string text;
  EXPECT_EQ(run_tool("table10 --precision 3", &text), 0);
  EXPECT_NE(text.find("mushrooms,112,1,1,ef_bv,0.707,55,0.055,0.00532,1,0.998,0.555,0.746,0.00039"),
            std::string::npos)
      << text;
  EXPECT_EQ(run_tool("tune --dim 68 --workers 1000 --compressor comp:2,34 --precision 3", &text),
            0);
  EXPECT_NE(text.find("omega,16"), std::string::npos) << text;
}

TEST(CliBinary, RunWithFlagsAndConfig) {
  const fs::path dir = scratch("binary");
  fs::create_directories(dir);
  const fs::path cfg = dir / "m.json";
  std::ofstream(cfg) << R"({"compressor": "comp:1,3", "workers": 3, "rounds": 20, "cadence": 10})";
  std::string text;
  EXPECT_EQ(run_tool("run --config " + cfg.string() + " --synthetic 6,30,0.5 --seeds 4,5 --out " +
                         (dir / "o").string() + " --bits-per-coord 32",
                     &text),
            0)
      << text;
  EXPECT_TRUE(fs::exists(dir / "o" / "trace_ef_bv_seed5.csv"));
  const auto lines = lines_of(slurp(dir / "o" / "trace_ef_bv_seed4.csv"));
  ASSERT_EQ(lines.size(), 4u);
  // One coordinate per round at 32 bits.
  EXPECT_EQ(lines[2].substr(0, 6), "10,320");
  fs::remove_all(dir);
}

TEST(CliBinary, UsageErrors) {
  EXPECT_NE(run_tool(""), 0);
  EXPECT_NE(run_tool("bogus"), 0);
  EXPECT_EQ(run_tool("tune"), kExitUsage);
  EXPECT_EQ(run_tool("run --synthetic 6,30,0.5 --compressor wat:1"), kExitUsage);
  EXPECT_NE(run_tool("run --dataset a --synthetic 6,30,0.5"), 0);
}

TEST(CliBinary, CertifyExitCode) {
  EXPECT_EQ(run_tool("certify --dim 6 --workers 3 --samples 5000 --negative-control"), kExitOk);
}

}  // namespace
}  // namespace efbv::cli
