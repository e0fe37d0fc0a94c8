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

#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

namespace efbv::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    parts.emplace_back(text.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::uint64_t to_u64(const std::string& s, const char* what) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    if (s.empty() || s[0] == '-') throw std::invalid_argument(s);
    v = std::stoull(s, &used);
  } catch (const std::logic_error&) {
    throw ConfigError(std::string("bad ") + what + " '" + s + "'");
  }
  if (used != s.size()) throw ConfigError(std::string("bad ") + what + " '" + s + "'");
  return v;
}

double to_double(const std::string& s, const char* what) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::logic_error&) {
    throw ConfigError(std::string("bad ") + what + " '" + s + "'");
  }
  if (used != s.size() || !std::isfinite(v))
    throw ConfigError(std::string("bad ") + what + " '" + s + "'");
  return v;
}

template <class T>
T get_as(const json& doc, const std::string& key) {
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

std::string dependence_name(Dependence d) {
  return d == Dependence::kJointNice ? "joint_nice" : "independent";
}

std::string h0_name(InitPolicy p) {
  return p == InitPolicy::kLocalGradient ? "local_gradient" : "zeros";
}

}  // namespace

std::string fmt(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

SyntheticSpec parse_synthetic(std::string_view text) {
  const auto parts = split(text, ',');
  if (parts.size() != 3 && parts.size() != 4)
    throw ConfigError("synthetic spec must be d,N,sep[,seed], got '" + std::string(text) + "'");
  SyntheticSpec s;
  s.dim = to_u64(parts[0], "synthetic dimension");
  s.rows = to_u64(parts[1], "synthetic row count");
  s.separation = to_double(parts[2], "synthetic separation");
  if (parts.size() == 4) s.seed = to_u64(parts[3], "synthetic seed");
  if (s.dim < 1 || s.rows < 2) throw ConfigError("synthetic data needs d >= 1 and N >= 2");
  return s;
}

std::vector<std::uint64_t> parse_seed_list(std::string_view text) {
  std::vector<std::uint64_t> seeds;
  for (const auto& p : split(text, ',')) seeds.push_back(to_u64(p, "seed"));
  if (seeds.empty()) throw ConfigError("seed list is empty");
  return seeds;
}

Algorithm parse_algorithm(std::string_view text) {
  if (text == "ef_bv" || text == "efbv" || text == "ef-bv") return Algorithm::kEFBV;
  if (text == "ef21") return Algorithm::kEF21;
  if (text == "diana") return Algorithm::kDIANA;
  throw ConfigError("unknown algorithm '" + std::string(text) + "' (ef_bv, ef21, diana)");
}

Mode parse_mode(std::string_view text) {
  if (text == "pl") return Mode::kPL;
  if (text == "kl") return Mode::kKL;
  if (text == "nonconvex") return Mode::kNonconvex;
  throw ConfigError("unknown mode '" + std::string(text) + "' (pl, kl, nonconvex)");
}

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

Manifest manifest_from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> known = {
      "compressor",     "dependence",      "algorithms",       "lambda",
      "nu",             "gamma",           "class_params",     "mode",
      "rounds",         "seeds",           "h0",               "cadence",
      "bits_per_coordinate", "workers",    "overlap",          "partition_seed",
      "mu",             "l1",              "nonconvex_weight", "appendix_L",
      "dataset",        "dataset_dim",     "synthetic",        "dim",
      "L",              "reference_tol",   "reference_iterations", "reference_factor",
      "output_dir",     "gnuplot"};
  for (const auto& [key, value] : doc.items()) {
    if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  Manifest m;
  auto has = [&](const char* key) { return doc.contains(key); };
  if (has("compressor")) m.compressor = get_as<std::string>(doc, "compressor");
  if (has("dependence")) {
    const auto v = get_as<std::string>(doc, "dependence");
    if (v == "independent") m.dependence = Dependence::kIndependent;
    else if (v == "joint_nice") m.dependence = Dependence::kJointNice;
    else throw ConfigError("dependence must be 'independent' or 'joint_nice'");
  }
  if (has("algorithms")) {
    m.algorithms.clear();
    for (const auto& a : get_as<std::vector<std::string>>(doc, "algorithms"))
      m.algorithms.push_back(parse_algorithm(a));
    if (m.algorithms.empty()) throw ConfigError("algorithms list is empty");
  }
  if (has("lambda")) m.overrides.lambda = get_as<double>(doc, "lambda");
  if (has("nu")) m.overrides.nu = get_as<double>(doc, "nu");
  if (has("gamma")) m.overrides.gamma = get_as<double>(doc, "gamma");
  if (has("class_params")) {
    const json& cp = doc.at("class_params");
    if (!cp.is_object()) throw ConfigError("class_params must be an object");
    for (const auto& [key, value] : cp.items()) {
      if (key != "eta" && key != "omega" && key != "omega_av")
        throw ConfigError("unknown class_params key '" + key + "'");
    }
    ClassParams p;
    p.eta = get_as<double>(cp, "eta");
    p.omega = get_as<double>(cp, "omega");
    p.omega_av = get_as<double>(cp, "omega_av");
    if (!(p.eta >= 0.0 && p.eta < 1.0 && p.omega >= 0.0 && p.omega_av >= 0.0))
      throw ConfigError("class_params need 0 <= eta < 1 and nonnegative variances");
    m.class_params = p;
  }
  if (has("mode")) m.mode = parse_mode(get_as<std::string>(doc, "mode"));
  if (has("rounds")) m.rounds = get_as<std::size_t>(doc, "rounds");
  if (has("seeds")) {
    m.seeds = get_as<std::vector<std::uint64_t>>(doc, "seeds");
    if (m.seeds.empty()) throw ConfigError("seeds list is empty");
  }
  if (has("h0")) {
    const auto v = get_as<std::string>(doc, "h0");
    if (v == "zeros") m.h0 = InitPolicy::kZeros;
    else if (v == "local_gradient") m.h0 = InitPolicy::kLocalGradient;
    else throw ConfigError("h0 must be 'zeros' or 'local_gradient'");
  }
  if (has("cadence")) m.cadence = get_as<std::size_t>(doc, "cadence");
  if (has("bits_per_coordinate"))
    m.bits_per_coordinate = get_as<std::uint64_t>(doc, "bits_per_coordinate");
  if (has("workers")) m.workers = get_as<std::size_t>(doc, "workers");
  if (has("overlap")) m.overlap = get_as<int>(doc, "overlap");
  if (has("partition_seed")) m.partition_seed = get_as<std::uint64_t>(doc, "partition_seed");
  if (has("mu")) m.mu = get_as<double>(doc, "mu");
  if (has("l1")) m.l1 = get_as<double>(doc, "l1");
  if (has("nonconvex_weight")) m.nonconvex_weight = get_as<double>(doc, "nonconvex_weight");
  if (has("appendix_L")) m.appendix_L = get_as<bool>(doc, "appendix_L");
  if (has("dataset")) m.dataset = get_as<std::string>(doc, "dataset");
  if (has("dataset_dim")) m.dataset_dim = get_as<std::size_t>(doc, "dataset_dim");
  if (has("synthetic")) {
    const json& s = doc.at("synthetic");
    if (s.is_string()) {
      m.synthetic = parse_synthetic(s.get<std::string>());
    } else if (s.is_object()) {
      SyntheticSpec spec;
      for (const auto& [key, value] : s.items()) {
        if (key == "d") spec.dim = get_as<std::size_t>(s, key);
        else if (key == "N") spec.rows = get_as<std::size_t>(s, key);
        else if (key == "separation") spec.separation = get_as<double>(s, key);
        else if (key == "seed") spec.seed = get_as<std::uint64_t>(s, key);
        else throw ConfigError("unknown synthetic key '" + key + "'");
      }
      m.synthetic = spec;
    } else {
      throw ConfigError("synthetic must be \"d,N,sep\" or an object");
    }
  }
  if (has("dim")) m.dim = get_as<std::size_t>(doc, "dim");
  if (has("L")) m.L = get_as<double>(doc, "L");
  if (has("reference_tol")) m.reference_tol = get_as<double>(doc, "reference_tol");
  if (has("reference_iterations"))
    m.reference_iterations = get_as<std::size_t>(doc, "reference_iterations");
  if (has("reference_factor")) m.reference_factor = get_as<std::size_t>(doc, "reference_factor");
  if (has("output_dir")) m.output_dir = get_as<std::string>(doc, "output_dir");
  if (has("gnuplot")) m.gnuplot = get_as<bool>(doc, "gnuplot");
  if (m.dataset && m.synthetic) throw ConfigError("give either dataset or synthetic, not both");
  if (m.overlap != 1 && m.overlap != 2) throw ConfigError("overlap must be 1 or 2");
  if (m.workers < 1) throw ConfigError("workers must be at least 1");
  if (m.cadence < 1) throw ConfigError("cadence must be at least 1");
  if (m.bits_per_coordinate < 1) throw ConfigError("bits_per_coordinate must be positive");
  return m;
}

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return manifest_from_json(doc);
}

json manifest_to_json(const Manifest& m) {
  json doc;
  doc["compressor"] = m.compressor;
  doc["dependence"] = dependence_name(m.dependence);
  std::vector<std::string> algs;
  for (Algorithm a : m.algorithms) algs.emplace_back(to_string(a));
  doc["algorithms"] = algs;
  if (m.overrides.lambda) doc["lambda"] = *m.overrides.lambda;
  if (m.overrides.nu) doc["nu"] = *m.overrides.nu;
  if (m.overrides.gamma) doc["gamma"] = *m.overrides.gamma;
  if (m.class_params)
    doc["class_params"] = {{"eta", m.class_params->eta},
                           {"omega", m.class_params->omega},
                           {"omega_av", m.class_params->omega_av}};
  doc["mode"] = to_string(m.mode);
  doc["rounds"] = m.rounds;
  doc["seeds"] = m.seeds;
  doc["h0"] = h0_name(m.h0);
  doc["cadence"] = m.cadence;
  doc["bits_per_coordinate"] = m.bits_per_coordinate;
  doc["workers"] = m.workers;
  doc["overlap"] = m.overlap;
  doc["partition_seed"] = m.partition_seed;
  doc["mu"] = m.mu;
  doc["l1"] = m.l1;
  doc["nonconvex_weight"] = m.nonconvex_weight;
  doc["appendix_L"] = m.appendix_L;
  if (m.dataset) doc["dataset"] = *m.dataset;
  if (m.dataset_dim) doc["dataset_dim"] = m.dataset_dim;
  if (m.synthetic)
    doc["synthetic"] = {{"d", m.synthetic->dim},
                        {"N", m.synthetic->rows},
                        {"separation", m.synthetic->separation},
                        {"seed", m.synthetic->seed}};
  if (m.dim) doc["dim"] = *m.dim;
  if (m.L) doc["L"] = *m.L;
  doc["reference_tol"] = m.reference_tol;
  doc["reference_iterations"] = m.reference_iterations;
  doc["reference_factor"] = m.reference_factor;
  if (!m.output_dir.empty()) doc["output_dir"] = m.output_dir;
  doc["gnuplot"] = m.gnuplot;
  return doc;
}

bool has_data(const Manifest& m) { return m.dataset.has_value() || m.synthetic.has_value(); }

Dataset load_dataset(const Manifest& m) {
  if (m.dataset) {
    std::ifstream in(*m.dataset);
    if (!in) throw ConfigError("cannot open dataset '" + *m.dataset + "'");
    return parse_libsvm(in, m.dataset_dim);
  }
  if (m.synthetic) {
    const auto& s = *m.synthetic;
    return synth_dataset(s.seed, s.dim, s.rows, s.separation);
  }
  throw ConfigError("no dataset: give --dataset PATH or --synthetic d,N,sep");
}

Problem build_problem(const Manifest& m, const Dataset& data) {
  ProblemOptions opts;
  opts.mu = m.mu;
  opts.nonconvex_weight = m.nonconvex_weight;
  opts.appendix_L = m.appendix_L;
  if (m.l1 > 0.0) opts.regularizer = Regularizer::l1(m.l1);
  return Problem(data, partition(data, m.workers, m.overlap, m.partition_seed), opts);
}

RunConfig base_run_config(const Manifest& m, std::size_t dim) {
  RunConfig cfg;
  cfg.compressor = parse_compressor(m.compressor, dim);
  cfg.dependence = m.dependence;
  cfg.params = m.class_params;
  cfg.overrides = m.overrides;
  cfg.mode = m.mode;
  cfg.rounds = m.rounds;
  cfg.h0 = m.h0;
  cfg.cadence = m.cadence;
  cfg.wire.bits_per_coordinate = m.bits_per_coordinate;
  return cfg;
}

// ---------------------------------------------------------------------------
// tune
// ---------------------------------------------------------------------------

TuneReport make_tune_report(const Manifest& m) {
  TuneReport rep;
  std::optional<Problem> problem;
  if (has_data(m)) {
    const Dataset data = load_dataset(m);
    problem.emplace(build_problem(m, data));
    rep.dim = data.dim;
  } else if (m.dim) {
    rep.dim = *m.dim;
  } else {
    throw ConfigError("tune needs a dataset, --synthetic, or an explicit --dim");
  }
  rep.workers = m.workers;
  const CompressorSpec spec = parse_compressor(m.compressor, rep.dim);
  validate(spec, m.workers);
  rep.compressor = to_string(spec);
  rep.params = m.class_params ? *m.class_params : theoretical_params(spec, m.workers, m.dependence);

  std::optional<SmoothnessProfile> profile;
  if (problem) {
    profile = problem->smoothness();
  } else if (m.L) {
    profile = make_profile(std::vector<double>(m.workers, *m.L), m.mu);
  } else {
    rep.notes.push_back("gamma row omitted: no dataset or L given, so no smoothness constants");
  }
  if (profile && !(profile->mu > 0.0) && m.mode != Mode::kNonconvex)
    rep.notes.push_back("rate omitted: mu = 0");
  for (Algorithm a : m.algorithms) {
    TuneColumn col{a, {}, false};
    if (profile) {
      col.result = tune(rep.params, *profile, a, m.mode, m.overrides);
      col.has_gamma = true;
      if (col.result.gamma_clamped) {
        rep.notes.push_back(std::string("warning: ") + to_string(a) + ": requested gamma " +
                            fmt(*m.overrides.gamma) + " exceeds the bound " +
                            fmt(col.result.gamma_bound) + "; clamped");
      }
    } else {
      col.result = tune_scalings(rep.params, a, m.mode, m.overrides);
    }
    rep.columns.push_back(col);
  }
  return rep;
}

void print_tune_report(const TuneReport& rep, std::ostream& out, int precision) {
  out << "# compressor " << rep.compressor << ", d = " << rep.dim << ", n = " << rep.workers
      << "\n";
  out << "param";
  for (const auto& c : rep.columns) out << ',' << to_string(c.algorithm);
  out << '\n';
  auto row = [&](const char* name, auto get) {
    out << name;
    for (const auto& c : rep.columns) out << ',' << fmt(get(c), precision);
    out << '\n';
  };
  row("eta", [&](const TuneColumn&) { return rep.params.eta; });
  row("omega", [&](const TuneColumn&) { return rep.params.omega; });
  row("omega_av", [&](const TuneColumn&) { return rep.params.omega_av; });
  row("lambda", [](const TuneColumn& c) { return c.result.lambda; });
  row("nu", [](const TuneColumn& c) { return c.result.nu; });
  row("r", [](const TuneColumn& c) { return c.result.r; });
  row("r_av", [](const TuneColumn& c) { return c.result.r_av; });
  row("sqrt_r_av_over_r", [](const TuneColumn& c) { return c.result.sqrt_rav_over_r(); });
  row(rep.columns.empty() || rep.columns[0].result.mode != Mode::kNonconvex ? "s_star" : "s",
      [](const TuneColumn& c) { return c.result.s; });
  row("theta", [](const TuneColumn& c) { return c.result.theta; });
  const bool gamma = !rep.columns.empty() && rep.columns[0].has_gamma;
  if (gamma) {
    row("gamma", [](const TuneColumn& c) { return c.result.gamma; });
    const bool rate = rep.columns[0].result.rate.has_value();
    if (rate) row("rate", [](const TuneColumn& c) { return *c.result.rate; });
  }
  for (const auto& n : rep.notes) out << "# " << n << '\n';
}

int cmd_tune(const Manifest& m, std::ostream& out, std::ostream& err, int precision) {
  const TuneReport rep = make_tune_report(m);
  print_tune_report(rep, out, precision);
  for (const auto& n : rep.notes)
    if (n.rfind("warning", 0) == 0) err << n << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// table10
// ---------------------------------------------------------------------------

std::vector<Table10Cell> table10_cells() {
  const std::pair<const char*, std::size_t> shapes[] = {
      {"mushrooms", 112}, {"phishing", 68}, {"a9a", 123}, {"w8a", 300}};
  const std::pair<std::size_t, int> columns[] = {{1, 1}, {1, 2}, {2, 1}};
  constexpr std::size_t n = 1000;
  std::vector<Table10Cell> cells;
  for (const auto& [name, d] : shapes) {
    for (const auto& [k, xi] : columns) {
      Table10Cell c;
      c.dataset = name;
      c.dim = d;
      c.k = k;
      c.xi = xi;
      const CompressorSpec spec{Comp{k, d / 2}, d};
      c.params = theoretical_params(spec, n);
      c.ef_bv = tune_scalings(c.params, Algorithm::kEFBV, Mode::kPL);
      c.ef21 = tune_scalings(c.params, Algorithm::kEF21, Mode::kPL);
      cells.push_back(c);
    }
  }
  return cells;
}

int cmd_table10(std::ostream& out, int precision) {
  out << "dataset,d,k,xi,method,eta,omega,omega_av,lambda,nu,r,r_av,sqrt_r_av_over_r,s_star\n";
  for (const auto& c : table10_cells()) {
    for (const TuneResult* t : {&c.ef_bv, &c.ef21}) {
      out << c.dataset << ',' << c.dim << ',' << c.k << ',' << c.xi << ','
          << to_string(t->algorithm) << ',' << fmt(c.params.eta, precision) << ','
          << fmt(c.params.omega, precision) << ',' << fmt(c.params.omega_av, precision) << ','
          << fmt(t->lambda, precision) << ',' << fmt(t->nu, precision) << ','
          << fmt(t->r, precision) << ',' << fmt(t->r_av, precision) << ','
          << fmt(t->sqrt_rav_over_r(), precision) << ',' << fmt(t->s, precision) << '\n';
    }
  }
  out << "# n = 1000, compressor comp-(k, floor(d/2)); xi changes only the data split, so the\n"
         "# data-free constants of the xi = 2 column equal those of (k, xi) = (1, 1).\n"
         "# gamma needs the smoothness constants of an actual dataset: use `efbv tune`.\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

void write_trace_row(std::ostream& out, const RoundRecord& r) {
  out << r.t << ',' << fmt(r.bits_per_node) << ',' << fmt(r.f_gap) << ','
      << fmt(r.grad_norm_sq) << ',' << fmt(r.lyapunov) << ',' << fmt(r.control_residual)
      << '\n';
}

void write_trace(std::ostream& out, const std::vector<RoundRecord>& records) {
  out << kTraceHeader << '\n';
  for (const auto& r : records) write_trace_row(out, r);
}

std::vector<RoundRecord> average_records(
    const std::vector<const std::vector<RoundRecord>*>& runs) {
  if (runs.empty()) return {};
  std::size_t len = runs[0]->size();
  for (const auto* r : runs) len = std::min(len, r->size());
  std::vector<RoundRecord> avg(len);
  const double inv = 1.0 / static_cast<double>(runs.size());
  for (std::size_t j = 0; j < len; ++j) {
    RoundRecord& a = avg[j];
    a.t = (*runs[0])[j].t;
    for (const auto* run : runs) {
      const RoundRecord& r = (*run)[j];
      if (r.t != a.t) throw InternalError("seed traces are not aligned");
      a.bits_per_node += r.bits_per_node;
      a.f_gap += r.f_gap;
      a.grad_norm_sq += r.grad_norm_sq;
      a.lyapunov += r.lyapunov;
      a.control_residual += r.control_residual;
    }
    a.bits_per_node *= inv;
    a.f_gap *= inv;
    a.grad_norm_sq *= inv;
    a.lyapunov *= inv;
    a.control_residual *= inv;
  }
  return avg;
}

std::optional<double> bits_to_gap(const std::vector<RoundRecord>& records, double threshold) {
  for (const auto& r : records)
    if (r.f_gap <= threshold) return r.bits_per_node;
  return std::nullopt;
}

std::string default_output_dir() {
  if (const char* env = std::getenv("EFBV_OUT_DIR"); env && *env) return env;
  return "efbv_out";
}

namespace {

std::string trace_name(Algorithm a, std::uint64_t seed) {
  return std::string("trace_") + to_string(a) + "_seed" + std::to_string(seed) + ".csv";
}

void write_gnuplot(const fs::path& dir, const std::vector<Algorithm>& algs) {
  std::ofstream gp(dir / "plot.gp");
  gp << "set datafile separator ','\n"
        "set logscale y\n"
        "set xlabel 'bits per node'\n"
        "set ylabel 'f(x^t) - f*'\n"
        "set key top right\n"
        "set terminal pngcairo size 900,600\n"
        "set output 'f_gap_vs_bits.png'\n"
        "plot ";
  for (std::size_t j = 0; j < algs.size(); ++j) {
    if (j) gp << ", \\\n     ";
    gp << "'summary_" << to_string(algs[j]) << ".csv' using 2:3 skip 1 with lines title '"
       << to_string(algs[j]) << "'";
  }
  gp << '\n';
}

}  // namespace

RunOutcome execute_runs(const Manifest& m, const std::string& out_dir) {
  const Dataset data = load_dataset(m);
  const Problem problem = build_problem(m, data);
  RunConfig base = base_run_config(m, problem.dim());

  RunOutcome outcome;
  ReferenceOptions ropt;
  ropt.tol = m.reference_tol;
  if (m.mode == Mode::kNonconvex) {
    ropt.nonconvex = true;
    ropt.max_iterations = std::max<std::size_t>(1, m.rounds * m.reference_factor);
  } else {
    ropt.max_iterations = m.reference_iterations;
  }
  outcome.reference = reference_solution(problem, ropt);
  const double fstar = outcome.reference.objective();

  const bool write = !out_dir.empty();
  if (write) fs::create_directories(out_dir);

  struct Job {
    Algorithm algorithm;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (Algorithm a : m.algorithms)
    for (std::uint64_t s : m.seeds) jobs.push_back({a, s});

  auto run_job = [&](const Job& job) {
    RunTrace tr;
    tr.algorithm = job.algorithm;
    tr.seed = job.seed;
    RunConfig cfg = base;
    cfg.algorithm = job.algorithm;
    cfg.seed = job.seed;
    const Engine engine(problem, cfg, fstar);
    tr.constants = engine.constants();
    std::ofstream csv;
    if (write) {
      tr.path = (fs::path(out_dir) / trace_name(job.algorithm, job.seed)).string();
      csv.open(tr.path);
      if (!csv) throw ConfigError("cannot write '" + tr.path + "'");
      csv << kTraceHeader << '\n';
    }
    try {
      engine.run([&](const RoundRecord& r) {
        tr.records.push_back(r);
        if (write) write_trace_row(csv, r);
      });
    } catch (const DivergenceError& e) {
      tr.diverged = true;
      tr.error = e.what();
    }
    return tr;
  };

  const std::size_t width = std::max(1u, std::thread::hardware_concurrency());
  for (std::size_t start = 0; start < jobs.size(); start += width) {
    const std::size_t stop = std::min(jobs.size(), start + width);
    if (width == 1) {
      outcome.traces.push_back(run_job(jobs[start]));
      continue;
    }
    std::vector<std::future<RunTrace>> futures;
    for (std::size_t j = start; j < stop; ++j)
      futures.push_back(std::async(std::launch::async, run_job, jobs[j]));
    for (auto& f : futures) outcome.traces.push_back(f.get());
  }

  for (Algorithm a : m.algorithms) {
    std::vector<const std::vector<RoundRecord>*> done;
    for (const auto& tr : outcome.traces)
      if (tr.algorithm == a && !tr.diverged) done.push_back(&tr.records);
    outcome.averages[a] = average_records(done);
  }

  if (write) {
    const fs::path dir(out_dir);
    for (const auto& tr : outcome.traces) outcome.files.push_back(tr.path);
    for (Algorithm a : m.algorithms) {
      const fs::path p = dir / (std::string("summary_") + to_string(a) + ".csv");
      std::ofstream out(p);
      write_trace(out, outcome.averages[a]);
      outcome.files.push_back(p.string());
    }
    json info;
    info["manifest"] = manifest_to_json(m);
    info["reference"] = {{"f", outcome.reference.f},
                         {"R", outcome.reference.R},
                         {"objective", fstar},
                         {"iterations", outcome.reference.iterations},
                         {"converged", outcome.reference.converged}};
    json runs = json::array();
    for (const auto& tr : outcome.traces) {
      const TuneResult& c = tr.constants;
      json r = {{"algorithm", to_string(tr.algorithm)},
                {"seed", tr.seed},
                {"lambda", c.lambda},
                {"nu", c.nu},
                {"r", c.r},
                {"r_av", c.r_av},
                {"s", c.s},
                {"theta", c.theta},
                {"gamma", c.gamma},
                {"gamma_bound", c.gamma_bound},
                {"diverged", tr.diverged}};
      if (c.rate) r["rate"] = *c.rate;
      if (tr.diverged) r["error"] = tr.error;
      runs.push_back(r);
    }
    info["runs"] = runs;
    std::ofstream(dir / "run.json") << info.dump(2) << '\n';
    outcome.files.push_back((dir / "run.json").string());
    if (m.gnuplot) {
      write_gnuplot(dir, m.algorithms);
      outcome.files.push_back((dir / "plot.gp").string());
    }
  }
  return outcome;
}

int cmd_run(const Manifest& m, std::ostream& out, std::ostream& err) {
  const std::string dir = m.output_dir.empty() ? default_output_dir() : m.output_dir;
  const RunOutcome oc = execute_runs(m, dir);
  if (!oc.reference.converged)
    err << "warning: reference solver stopped at its iteration cap; f* may be inaccurate\n";
  out << "reference objective " << fmt(oc.reference.objective()) << " after "
      << oc.reference.iterations << " iterations\n";
  bool diverged = false;
  std::set<Algorithm> warned;
  for (const auto& tr : oc.traces) {
    if (tr.constants.gamma_clamped && warned.insert(tr.algorithm).second)
      err << "warning: " << to_string(tr.algorithm) << ": gamma clamped to the bound "
          << fmt(tr.constants.gamma_bound) << '\n';
    if (tr.diverged) {
      diverged = true;
      err << "error: " << to_string(tr.algorithm) << " seed " << tr.seed << ": " << tr.error
          << " (partial trace kept in " << tr.path << ")\n";
    }
  }
  for (Algorithm a : m.algorithms) {
    const auto it = std::find_if(oc.traces.begin(), oc.traces.end(),
                                 [&](const RunTrace& t) { return t.algorithm == a; });
    const TuneResult& c = it->constants;
    out << to_string(a) << ": lambda " << fmt(c.lambda) << ", nu " << fmt(c.nu) << ", gamma "
        << fmt(c.gamma);
    if (c.rate) out << ", rate " << fmt(*c.rate);
    const auto& avg = oc.averages.at(a);
    if (!avg.empty()) {
      out << ", final mean f_gap " << fmt(avg.back().f_gap);
      if (const auto b = bits_to_gap(avg, 1e-6)) out << ", bits to 1e-6 " << fmt(*b);
    }
    out << '\n';
  }
  out << "wrote " << oc.files.size() << " files to " << dir << '\n';
  return diverged ? kExitDiverged : kExitOk;
}

// ---------------------------------------------------------------------------
// certify
// ---------------------------------------------------------------------------

std::vector<CompressorSpec> certify_catalog(std::size_t d, std::size_t n) {
  const std::size_t q = std::max<std::size_t>(1, d / 4);
  const std::size_t h = std::max<std::size_t>(1, d / 2);
  std::vector<CompressorSpec> cat;
  cat.push_back({Identity{}, d});
  cat.push_back({RandK{1}, d});
  cat.push_back({RandK{q}, d});
  cat.push_back({TopK{1}, d});
  cat.push_back({TopK{q}, d});
  if (d >= 3) cat.push_back({Mix{std::max<std::size_t>(1, d / 8), q}, d});
  cat.push_back({Comp{1, h}, d});
  cat.push_back({Comp{std::min(q, h), h}, d});
  if (n >= 2) cat.push_back({NiceSampling{std::max<std::size_t>(1, n / 4)}, d});
  cat.push_back({NiceSampling{std::max<std::size_t>(1, n / 2)}, d});
  const double lam = lambda_star(0.0, static_cast<double>(d) / static_cast<double>(q) - 1.0);
  cat.push_back(scaled({RandK{q}, d}, lam));
  cat.push_back(scaled({Comp{std::min(q, h), h}, d}, 0.5));
  return cat;
}

std::vector<CertifyRow> certify(const CertifyOptions& opt) {
  if (opt.dim < 1 || opt.workers < 1) throw ConfigError("certify needs d >= 1 and n >= 1");
  EstimateOptions eo;
  eo.samples = opt.samples;
  eo.seed = opt.seed;
  eo.workers = opt.workers;
  eo.random_probes = opt.random_probes;
  std::vector<CertifyRow> rows;
  for (const auto& spec : certify_catalog(opt.dim, opt.workers)) {
    const std::string name = to_string(spec);
    if (std::any_of(rows.begin(), rows.end(), [&](const CertifyRow& r) { return r.name == name; }))
      continue;
    CertifyRow row;
    row.name = name;
    row.params = estimate_class_params(spec, eo);
    const Dependence dep = detail::contains_nice(spec.family) ? Dependence::kJointNice
                                                               : Dependence::kIndependent;
    row.omega_av = estimate_omega_av(spec, opt.workers, dep, eo);
    rows.push_back(std::move(row));
  }
  if (opt.negative_control) {
    const std::size_t k = std::max<std::size_t>(1, opt.dim / 4);
    const CompressorSpec spec{RandK{k}, opt.dim};
    const Sampler inner = spec_sampler(spec);
    const Sampler doubled = [inner](std::span<const double> x, RngStream& rng,
                                    const Participation& part, std::span<double> out) {
      inner(x, rng, part, out);
      for (double& v : out) v *= 2.0;
    };
    CertifyRow row;
    row.name = "rand-" + std::to_string(k) + " scaled by 2d/k (negative control)";
    row.params = estimate_class_params(doubled, opt.dim, theoretical_params(spec, 1), eo);
    row.params.name = row.name;
    row.expect_fail = true;
    rows.push_back(std::move(row));
  }
  return rows;
}

int cmd_certify(const CertifyOptions& opt, std::ostream& out, std::ostream& err) {
  const auto rows = certify(opt);
  out << "# d = " << opt.dim << ", n = " << opt.workers << ", samples = " << opt.samples
      << ", tolerance 4 standard errors\n";
  out << "compressor,claimed_eta,eta_hat,claimed_omega,omega_hat,claimed_omega_av,omega_av_hat,"
         "max_violation,status\n";
  bool all_ok = true;
  for (const auto& r : rows) {
    double violation = r.params.max_violation;
    if (r.omega_av) violation = std::max(violation, r.omega_av->max_violation);
    std::string status = r.checks_pass() ? "PASS" : "FAIL";
    if (r.expect_fail) status += r.ok() ? " (expected FAIL)" : " (expected FAIL; certifier missed it)";
    out << '"' << r.name << "\"," << fmt(r.params.claimed.eta) << ',' << fmt(r.params.eta_hat)
        << ',' << fmt(r.params.claimed.omega) << ',' << fmt(r.params.omega_hat) << ','
        << (r.omega_av ? fmt(r.omega_av->claimed) : "") << ','
        << (r.omega_av ? fmt(r.omega_av->omega_av_hat) : "") << ',' << fmt(violation) << ','
        << status << '\n';
    for (const auto& n : r.params.notes) out << "# " << r.name << ": " << n << '\n';
    all_ok = all_ok && r.ok();
  }
  if (!all_ok) err << "certification failed\n";
  return all_ok ? kExitOk : kExitCertifyFailed;
}

}  // namespace efbv::cli
