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

// Command implementations behind the efbv tool: manifests, tune, run,
// certify and table10.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "efbv/efbv.hpp"
#include "json.hpp"

namespace efbv::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitCertifyFailed = 2,
  kExitDiverged = 3,
};

struct SyntheticSpec {
  std::size_t dim = 20;
  std::size_t rows = 200;
  double separation = 0.5;
  std::uint64_t seed = 1;
};

/// "d,N,sep" or "d,N,sep,seed".
SyntheticSpec parse_synthetic(std::string_view text);
std::vector<std::uint64_t> parse_seed_list(std::string_view text);
Algorithm parse_algorithm(std::string_view text);
Mode parse_mode(std::string_view text);

/// One experiment description. JSON keys match the field names.
struct Manifest {
  std::string compressor = "comp:2,10";
  Dependence dependence = Dependence::kIndependent;
  std::vector<Algorithm> algorithms{Algorithm::kEFBV};
  TuneOverrides overrides;
  std::optional<ClassParams> class_params;
  Mode mode = Mode::kPL;
  std::size_t rounds = 1000;
  std::vector<std::uint64_t> seeds{1};
  InitPolicy h0 = InitPolicy::kZeros;
  std::size_t cadence = 10;
  std::uint64_t bits_per_coordinate = 64;
  std::size_t workers = 10;
  int overlap = 1;
  std::uint64_t partition_seed = 0;
  double mu = 0.1;
  double l1 = 0.0;
  double nonconvex_weight = 0.0;
  bool appendix_L = false;
  std::optional<std::string> dataset;
  std::size_t dataset_dim = 0;
  std::optional<SyntheticSpec> synthetic;
  // Data-free tuning: dimension and an optional smoothness constant.
  std::optional<std::size_t> dim;
  std::optional<double> L;
  double reference_tol = 1e-10;
  std::size_t reference_iterations = 1'000'000;
  // Nonconvex mode: the inf f estimate runs this many times longer.
  std::size_t reference_factor = 10;
  std::string output_dir;
  bool gnuplot = false;
};

/// Unknown keys and ill-typed values raise ConfigError.
Manifest manifest_from_json(const nlohmann::json& doc);
Manifest load_manifest(const std::string& path);
nlohmann::json manifest_to_json(const Manifest& m);

bool has_data(const Manifest& m);
Dataset load_dataset(const Manifest& m);
Problem build_problem(const Manifest& m, const Dataset& data);
RunConfig base_run_config(const Manifest& m, std::size_t dim);

std::string fmt(double v, int precision = 17);

// ---------------------------------------------------------------------------

struct TuneColumn {
  Algorithm algorithm;
  TuneResult result;
  bool has_gamma = false;
};

struct TuneReport {
  std::string compressor;
  std::size_t dim = 0;
  std::size_t workers = 0;
  ClassParams params;
  std::vector<TuneColumn> columns;
  std::vector<std::string> notes;
};

TuneReport make_tune_report(const Manifest& m);
void print_tune_report(const TuneReport& rep, std::ostream& out, int precision = 17);
int cmd_tune(const Manifest& m, std::ostream& out, std::ostream& err, int precision = 17);

// ---------------------------------------------------------------------------

struct Table10Cell {
  std::string dataset;
  std::size_t dim = 0;
  std::size_t k = 0;
  int xi = 1;
  ClassParams params;
  TuneResult ef_bv;
  TuneResult ef21;
};

/// Data-free constants for the four benchmark shapes, n = 1000 and
/// comp-(k, floor(d/2)), in (k, xi) order (1,1), (1,2), (2,1).
std::vector<Table10Cell> table10_cells();
int cmd_table10(std::ostream& out, int precision = 17);

// ---------------------------------------------------------------------------

inline constexpr const char* kTraceHeader =
    "t,bits_per_node,f_gap,grad_norm_sq,lyapunov,control_residual";

void write_trace_row(std::ostream& out, const RoundRecord& r);
void write_trace(std::ostream& out, const std::vector<RoundRecord>& records);

struct RunTrace {
  Algorithm algorithm;
  std::uint64_t seed = 0;
  TuneResult constants;
  std::vector<RoundRecord> records;
  bool diverged = false;
  std::string error;
  std::string path;
};

struct RunOutcome {
  ReferenceSolution reference;
  std::vector<RunTrace> traces;
  /// Seed-averaged records per algorithm, over the runs that completed.
  std::map<Algorithm, std::vector<RoundRecord>> averages;
  std::vector<std::string> files;
};

/// Runs every (algorithm, seed) pair. With an empty out_dir nothing is
/// written to disk.
RunOutcome execute_runs(const Manifest& m, const std::string& out_dir);
std::vector<RoundRecord> average_records(const std::vector<const std::vector<RoundRecord>*>& runs);
/// Bits per node at the first record with f_gap <= threshold.
std::optional<double> bits_to_gap(const std::vector<RoundRecord>& records, double threshold);
std::string default_output_dir();
int cmd_run(const Manifest& m, std::ostream& out, std::ostream& err);

// ---------------------------------------------------------------------------

struct CertifyOptions {
  std::size_t dim = 16;
  std::size_t workers = 8;
  std::size_t samples = 100'000;
  std::size_t random_probes = 2;
  std::uint64_t seed = 1;
  bool negative_control = false;
};

struct CertifyRow {
  std::string name;
  EstimateReport params;
  std::optional<OmegaAvReport> omega_av;
  bool expect_fail = false;

  bool checks_pass() const { return params.pass() && (!omega_av || omega_av->pass()); }
  bool ok() const { return expect_fail ? !checks_pass() : checks_pass(); }
};

std::vector<CompressorSpec> certify_catalog(std::size_t dim, std::size_t workers);
std::vector<CertifyRow> certify(const CertifyOptions& opt);
int cmd_certify(const CertifyOptions& opt, std::ostream& out, std::ostream& err);

}  // namespace efbv::cli
