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

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "cli.hpp"

namespace {

using efbv::cli::Manifest;

struct SharedFlags {
  std::string config;
  std::string out;
  std::string seeds;
  std::string dataset;
  std::string synthetic;
  std::optional<std::uint64_t> bits_per_coord;
  std::string compressor;
  std::string algorithms;
  std::string mode;
  std::optional<std::size_t> workers;
  std::optional<std::size_t> rounds;
  std::optional<std::size_t> cadence;
  std::optional<std::size_t> dim;
  std::optional<double> mu;
  std::optional<double> L;
  std::optional<double> lambda;
  std::optional<double> nu;
  std::optional<double> gamma;
  bool gnuplot = false;
};

void add_shared(CLI::App* app, SharedFlags& f) {
  app->add_option("--config", f.config, "JSON experiment manifest");
  app->add_option("--out", f.out, "output directory (default $EFBV_OUT_DIR or ./efbv_out)");
  app->add_option("--seeds", f.seeds, "comma-separated seed list");
  auto* ds = app->add_option("--dataset", f.dataset, "LibSVM dataset path");
  auto* syn = app->add_option("--synthetic", f.synthetic, "synthetic data d,N,sep[,seed]");
  ds->excludes(syn);
  app->add_option("--bits-per-coord", f.bits_per_coord, "wire bits per coordinate (64)");
  app->add_option("--compressor", f.compressor,
                  "identity | randk:K | topk:K | mix:K,K' | comp:K,K' | nice:M | "
                  "scaled:LAMBDA:<inner>");
  app->add_option("--algorithms", f.algorithms, "comma list of ef_bv, ef21, diana");
  app->add_option("--mode", f.mode, "pl | kl | nonconvex");
  app->add_option("--workers", f.workers, "number of workers n");
  app->add_option("--rounds", f.rounds, "rounds T");
  app->add_option("--cadence", f.cadence, "metric cadence");
  app->add_option("--dim", f.dim, "dimension d for data-free tuning");
  app->add_option("--mu", f.mu, "strong convexity / PL constant");
  app->add_option("--L", f.L, "smoothness constant L = L_i for data-free tuning");
  app->add_option("--lambda", f.lambda, "override lambda");
  app->add_option("--nu", f.nu, "override nu");
  app->add_option("--gamma", f.gamma, "override gamma (clamped to the bound)");
  app->add_flag("--gnuplot", f.gnuplot, "also write a gnuplot script");
}

Manifest resolve(const SharedFlags& f) {
  Manifest m = f.config.empty() ? Manifest{} : efbv::cli::load_manifest(f.config);
  if (!f.out.empty()) m.output_dir = f.out;
  if (!f.seeds.empty()) m.seeds = efbv::cli::parse_seed_list(f.seeds);
  if (!f.dataset.empty()) {
    m.dataset = f.dataset;
    m.synthetic.reset();
  }
  if (!f.synthetic.empty()) {
    m.synthetic = efbv::cli::parse_synthetic(f.synthetic);
    m.dataset.reset();
  }
  if (f.bits_per_coord) m.bits_per_coordinate = *f.bits_per_coord;
  if (!f.compressor.empty()) m.compressor = f.compressor;
  if (!f.algorithms.empty()) {
    m.algorithms.clear();
    std::size_t start = 0;
    while (true) {
      const auto pos = f.algorithms.find(',', start);
      m.algorithms.push_back(efbv::cli::parse_algorithm(f.algorithms.substr(start, pos - start)));
      if (pos == std::string::npos) break;
      start = pos + 1;
    }
  }
  if (!f.mode.empty()) m.mode = efbv::cli::parse_mode(f.mode);
  if (f.workers) m.workers = *f.workers;
  if (f.rounds) m.rounds = *f.rounds;
  if (f.cadence) m.cadence = *f.cadence;
  if (f.dim) m.dim = *f.dim;
  if (f.mu) m.mu = *f.mu;
  if (f.L) m.L = *f.L;
  if (f.lambda) m.overrides.lambda = *f.lambda;
  if (f.nu) m.overrides.nu = *f.nu;
  if (f.gamma) m.overrides.gamma = *f.gamma;
  if (f.gnuplot) m.gnuplot = true;
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"efbv: compressed distributed gradient methods (EF-BV, EF21, DIANA)"};
  app.require_subcommand(1);

  SharedFlags tune_flags;
  int tune_precision = 17;
  auto* tune = app.add_subcommand("tune", "print derived constants for a configuration");
  add_shared(tune, tune_flags);
  tune->add_option("--precision", tune_precision, "significant digits (17)");

  SharedFlags run_flags;
  auto* run = app.add_subcommand("run", "simulate and write CSV traces");
  add_shared(run, run_flags);

  efbv::cli::CertifyOptions cert;
  auto* certify = app.add_subcommand("certify", "Monte Carlo check of the compressor catalog");
  certify->add_option("--dim", cert.dim, "dimension d (16)");
  certify->add_option("--workers", cert.workers, "workers n (8)");
  certify->add_option("--samples", cert.samples, "samples per probe (100000)");
  certify->add_option("--probes", cert.random_probes, "random probes on top of the fixed ones");
  certify->add_option("--seed", cert.seed, "seed");
  certify->add_flag("--negative-control", cert.negative_control,
                    "add a mis-scaled rand-k that must fail");

  int table_precision = 17;
  auto* table = app.add_subcommand("table10", "data-free constants for the benchmark shapes");
  table->add_option("--precision", table_precision, "significant digits (17)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*tune) return efbv::cli::cmd_tune(resolve(tune_flags), std::cout, std::cerr, tune_precision);
    if (*run) return efbv::cli::cmd_run(resolve(run_flags), std::cout, std::cerr);
    if (*certify) return efbv::cli::cmd_certify(cert, std::cout, std::cerr);
    if (*table) return efbv::cli::cmd_table10(std::cout, table_precision);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return efbv::cli::kExitUsage;
  }
  return efbv::cli::kExitUsage;
}
