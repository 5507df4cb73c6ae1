#pragma once

// Run directories, evaluation tables and sweeps on top of the library.
//
//   run dir    config.json, run.json, metrics.csv, ckpt_<epoch>.wfck
//   eval dir   forecast.csv, diagnostics.csv, summary.json
//   sweep dir  sweep.json, field/, wavespeed/, dataset/, runs/<name>/, eval/

#include "waveforge/config.hpp"
#include "waveforge/evaluation.hpp"
#include "waveforge/io.hpp"
#include "waveforge/kinematics.hpp"
#include "waveforge/training.hpp"

#include <glob.h>

#include <algorithm>
#include <tuple>
#include <atomic>
#include <cstdio>
#include <exception>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace waveforge {

/// `%.17g`: round-trips every double, so CSVs are bit-stable.
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// Short form for names and tables.
inline std::string fmt_short(double v, const char* spec = "%.3g") {
  char buf[32];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

inline std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Re-throws `fn`'s error with the stage name prepended, keeping its family.
template <class F>
auto with_stage(const std::string& stage, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError(stage + ": " + e.what());
  } catch (const NumericError& e) {
    throw NumericError(stage + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError(stage + ": " + e.what());
  } catch (const fs::filesystem_error& e) {
    throw IoError(stage + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Field, wave speed, dataset

inline PressureField generate_field(const ExperimentConfig& cfg) {
  cfg.validate();
  return solve_fdm(cfg.domain, cfg.source, cfg.fine_grid(), cfg.boundary, std::nullopt);
}

inline Dataset make_dataset(const ExperimentConfig& cfg, const PressureField& fine) {
  return build_dataset(fine, cfg.dataset);
}

inline LossContext loss_context(const ExperimentConfig& cfg, const Dataset& ds) {
  LossContext ctx;
  ctx.dt = ds.ml_field.grid.dt;
  ctx.dx = ds.ml_field.grid.dx;
  ctx.p0 = ds.norm.p0;
  ctx.stateful = cfg.model.stateful;
  ctx.reg = cfg.regularizer;
  return ctx;
}

/// Fingerprint of the normalized pairs and split; stored in every run.
inline std::string dataset_fingerprint(const Dataset& ds) {
  std::string bytes;
  for (const auto& p : ds.pairs) {
    bytes += detail::pack_doubles(p.input.data(), static_cast<std::size_t>(p.input.size()));
    bytes += detail::pack_doubles(p.target.data(), static_cast<std::size_t>(p.target.size()));
  }
  for (auto k : ds.test_indices) bytes += std::to_string(k) + ",";
  return fnv1a_hex(bytes);
}

// ---------------------------------------------------------------------------
// Training runs

inline std::string checkpoint_name(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_%05zu.wfck", epoch);
  return buf;
}

inline std::string run_name(double lambda, std::uint64_t seed) {
  return "lambda_" + fmt_short(lambda) + "_seed_" + std::to_string(seed);
}

/// Hash recorded in run.json for an existing directory, if any.
inline std::optional<std::string> existing_run_hash(const fs::path& dir) {
  if (!fs::exists(dir / "run.json")) return std::nullopt;
  try {
    return read_json(dir / "run.json").value("config_hash", std::string());
  } catch (const std::exception&) {
    return std::string();
  }
}

inline bool run_complete(const fs::path& dir) {
  if (!fs::exists(dir / "run.json")) return false;
  const json r = read_json(dir / "run.json");
  return r.value("status", std::string()) == "complete";
}

struct RunOptions {
  bool force = false;
  std::ostream* log = nullptr;
  std::size_t log_every = 500;
};

/// Trains one (lambda, seed) configuration into `dir`. Checkpoints are written
/// as soon as they are reached, so a later divergence keeps them.
inline TrainResult train_run(const ExperimentConfig& cfg, const Dataset& ds, const fs::path& dir,
                             const RunOptions& opt = {}) {
  cfg.validate();
  const std::string hash = config_hash(cfg);
  if (auto prev = existing_run_hash(dir); prev && !opt.force) {
    throw IoError(dir.string() + (*prev == hash ? " already holds a run with this config hash"
                                                : " already holds a different run") +
                  "; pass --force to overwrite");
  }
  fs::create_directories(dir);
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".wfck") fs::remove(entry.path());
  }
  write_json(dir / "config.json", json(cfg));

  json stamp = {{"version", WAVEFORGE_VERSION},
                {"config_hash", hash},
                {"dataset_fingerprint", dataset_fingerprint(ds)},
                {"lambda", cfg.regularizer.lambda},
                {"seed", cfg.optimizer.seed},
                {"p0", ds.norm.p0},
                {"train_windows", ds.train_indices.size()},
                {"checkpoints", json::array()},
                {"status", "running"}};
  write_json(dir / "run.json", stamp);

  const Problem problem(ds.train(), loss_context(cfg, ds));
  const ModelParams init = init_params(cfg.model, cfg.optimizer.seed);

  std::string csv = "epoch,lr,mse,reg,total\n";
  auto flush_csv = [&] { detail::write_file(dir / "metrics.csv", csv); };
  const auto& marks = cfg.optimizer.checkpoints;
  auto on_epoch = [&](const EpochRecord& r, const ModelParams& p) {
    csv += std::to_string(r.epoch) + "," + fmt(r.lr) + "," + fmt(r.loss.mse) + "," + fmt(r.loss.reg) + "," +
           fmt(r.loss.total) + "\n";
    if (std::find(marks.begin(), marks.end(), r.epoch) != marks.end()) {
      save_checkpoint(dir / checkpoint_name(r.epoch), p,
                      {{"epoch", r.epoch}, {"lambda", cfg.regularizer.lambda}, {"seed", cfg.optimizer.seed},
                       {"config_hash", hash}});
      stamp["checkpoints"].push_back(r.epoch);
      write_json(dir / "run.json", stamp);
    }
    if (opt.log && opt.log_every && r.epoch % opt.log_every == 0) {
      *opt.log << "  [" << dir.filename().string() << "] epoch " << r.epoch << " mse " << fmt_short(r.loss.mse)
               << " reg " << fmt_short(r.loss.reg) << "\n";
    }
    return true;
  };

  try {
    TrainResult res = train(problem, init, cfg.optimizer, on_epoch);
    flush_csv();
    stamp["status"] = "complete";
    write_json(dir / "run.json", stamp);
    return res;
  } catch (const NumericError& e) {
    flush_csv();
    stamp["status"] = "diverged";
    stamp["error"] = e.what();
    write_json(dir / "run.json", stamp);
    throw;
  }
}

struct StoredRun {
  fs::path dir;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  ExperimentConfig config;
  std::map<std::size_t, ModelParams> checkpoints;
};

inline StoredRun load_run(const fs::path& dir) {
  StoredRun r;
  r.dir = dir;
  const json stamp = read_json(dir / "run.json");
  r.lambda = stamp.at("lambda").get<double>();
  r.seed = stamp.at("seed").get<std::uint64_t>();
  r.config = load_config(dir / "config.json");
  for (const auto& e : stamp.at("checkpoints")) {
    const auto epoch = e.get<std::size_t>();
    r.checkpoints.emplace(epoch, load_checkpoint(dir / checkpoint_name(epoch)).params);
  }
  if (r.checkpoints.empty()) throw IoError(dir.string() + ": run has no checkpoints");
  return r;
}

/// Run directories matching a shell glob, sorted.
inline std::vector<fs::path> glob_runs(const std::string& pattern) {
  glob_t g{};
  std::vector<fs::path> out;
  const int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
  if (rc == 0) {
    for (std::size_t i = 0; i < g.gl_pathc; ++i) {
      const fs::path p = g.gl_pathv[i];
      if (fs::is_directory(p) && fs::exists(p / "run.json")) out.push_back(p);
    }
  }
  globfree(&g);
  if (rc != 0 && rc != GLOB_NOMATCH) throw IoError("glob failed for '" + pattern + "'");
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalOutput {
  std::string forecast_csv;     // lambda,seed,epoch,case,step,t_over_T,metric,value
  std::string diagnostics_csv;  // lambda,seed,metric,value
  json summary;
};

namespace detail {

inline json mean_std_json(const std::vector<MeanStd>& v, const std::vector<std::size_t>& steps, bool stddev) {
  json a = json::array();
  for (auto k : steps) a.push_back(stddev ? v.at(k - 1).stddev : v.at(k - 1).mean);
  return a;
}

inline double mean_of(const std::vector<double>& v) { return mean_std(v).mean; }

}  // namespace detail

/// Evaluates every stored run against `ds`. Tables use each run's last
/// checkpoint; the early checkpoint feeds the overfitting and Case A figures.
inline EvalOutput evaluate_runs(const std::vector<StoredRun>& runs, const Dataset& ds, double guard,
                                const MaskThresholds& th, std::size_t expected_per_lambda = 0) {
  require(!runs.empty(), "no runs to evaluate");
  const double step = ds.ml_field.grid.dt / ds.ml_field.domain.period();
  const double dt = ds.ml_field.grid.dt;
  const double dx = ds.ml_field.grid.dx;
  const std::vector<SequencePair> test = ds.test();
  const std::vector<SequencePair> train_windows = ds.train();
  const std::size_t tx = ds.window.tx;
  const std::vector<std::size_t> steps = reported_steps(tx);

  struct PerRun {
    const StoredRun* run;
    std::size_t early, late;
    std::vector<ForecastMetrics> early_m, late_m;
    double w_inc = 0.0;
    double ws_early = 0.0, ws_late = 0.0;
  };
  std::vector<PerRun> per;
  EvalOutput out;
  out.forecast_csv = "lambda,seed,epoch,case,step,t_over_T,metric,value\n";
  out.diagnostics_csv = "lambda,seed,metric,value\n";

  // Fixed (lambda, seed) order so the output does not depend on how runs were listed.
  std::vector<const StoredRun*> ordered;
  for (const auto& r : runs) ordered.push_back(&r);
  std::sort(ordered.begin(), ordered.end(), [](const StoredRun* a, const StoredRun* b) {
    return std::tie(a->lambda, a->seed) < std::tie(b->lambda, b->seed);
  });
  for (const StoredRun* rp : ordered) {
    const StoredRun& r = *rp;
    PerRun pr{&r, r.checkpoints.begin()->first, r.checkpoints.rbegin()->first, {}, {}};
    const bool stateful = r.config.model.stateful;
    for (const auto& [epoch, params] : r.checkpoints) {
      for (std::size_t c = 0; c < test.size(); ++c) {
        const ForecastMetrics m = forecast_errors(params, test[c], step, stateful, guard);
        for (std::size_t k = 0; k < tx; ++k) {
          const std::string head = fmt(r.lambda) + "," + std::to_string(r.seed) + "," + std::to_string(epoch) +
                                   "," + ds.test_names[c] + "," + std::to_string(k + 1) + "," + fmt(m.time[k]) + ",";
          out.forecast_csv += head + "l1," + fmt(m.l1[k]) + "\n";
          out.forecast_csv += head + "linf," + fmt(m.linf[k]) + "\n";
          out.forecast_csv += head + "guarded," + std::to_string(m.guarded[k]) + "\n";
        }
        if (epoch == pr.early) pr.early_m.push_back(m);
        if (epoch == pr.late) pr.late_m.push_back(m);
      }
    }
    const ModelParams& pe = r.checkpoints.at(pr.early);
    const ModelParams& pl = r.checkpoints.at(pr.late);
    pr.w_inc = pr.early == pr.late ? 0.0 : weight_increment(pl, pe);
    pr.ws_early = wavespeed_l2_error(pe, train_windows, dt, dx, th, stateful);
    pr.ws_late = pr.early == pr.late ? pr.ws_early : wavespeed_l2_error(pl, train_windows, dt, dx, th, stateful);
    const std::string head = fmt(r.lambda) + "," + std::to_string(r.seed) + ",";
    out.diagnostics_csv += head + "weight_increment," + fmt(pr.w_inc) + "\n";
    out.diagnostics_csv += head + "wavespeed_l2_early," + fmt(pr.ws_early) + "\n";
    out.diagnostics_csv += head + "wavespeed_l2_late," + fmt(pr.ws_late) + "\n";
    per.push_back(std::move(pr));
  }

  // Seed-matched plain runs for Case B.
  std::map<std::uint64_t, const PerRun*> plain_by_seed;
  for (const auto& pr : per)
    if (pr.run->lambda == 0.0) plain_by_seed[pr.run->seed] = &pr;

  std::set<double> lambdas;
  for (const auto& r : runs) lambdas.insert(r.lambda);

  json lambda_rows = json::array();
  std::map<double, EnsembleStats> stats_by_lambda;
  for (double lam : lambdas) {
    std::vector<const PerRun*> group;
    for (const auto& pr : per)
      if (pr.run->lambda == lam) group.push_back(&pr);
    std::vector<RunMetrics> late_runs;
    for (const auto* pr : group) late_runs.push_back({lam, pr->run->seed, pr->late, pr->late_m});
    const EnsembleStats st = ensemble(late_runs, expected_per_lambda ? expected_per_lambda : group.size());
    stats_by_lambda[lam] = st;

    json cases = json::object();
    for (std::size_t c = 0; c < test.size(); ++c) {
      json overfit_l1 = json::array(), overfit_linf = json::array();
      for (auto k : steps) {
        std::vector<double> a, b;
        for (const auto* pr : group) {
          const RelativeDelta d = overfit_delta(pr->late_m[c], pr->early_m[c]);
          if (d.l1[k - 1]) a.push_back(*d.l1[k - 1]);
          if (d.linf[k - 1]) b.push_back(*d.linf[k - 1]);
        }
        overfit_l1.push_back(detail::mean_of(a));
        overfit_linf.push_back(detail::mean_of(b));
      }
      cases[ds.test_names[c]] = {{"l1_mean", detail::mean_std_json(st.l1[c], steps, false)},
                                 {"l1_std", detail::mean_std_json(st.l1[c], steps, true)},
                                 {"linf_mean", detail::mean_std_json(st.linf[c], steps, false)},
                                 {"linf_std", detail::mean_std_json(st.linf[c], steps, true)},
                                 {"overfit_l1_mean", overfit_l1},
                                 {"overfit_linf_mean", overfit_linf}};
    }

    std::vector<double> w_inc, ws_e, ws_l, delta_a, delta_b, seeds_used;
    json seeds = json::array();
    for (const auto* pr : group) {
      seeds.push_back(pr->run->seed);
      w_inc.push_back(pr->w_inc);
      ws_e.push_back(pr->ws_early);
      ws_l.push_back(pr->ws_late);
      // A zero reference error (nothing unmasked) leaves the delta undefined.
      if (pr->early != pr->late && pr->ws_early > 0.0) delta_a.push_back(wavespeed_delta(pr->ws_late, pr->ws_early));
      if (auto it = plain_by_seed.find(pr->run->seed); lam != 0.0 && it != plain_by_seed.end() &&
                                                                   it->second->ws_late > 0.0) {
        delta_b.push_back(wavespeed_delta(pr->ws_late, it->second->ws_late));
      }
    }
    json row = {{"lambda", lam},
                {"runs", st.runs},
                {"expected", st.expected},
                {"coverage", st.expected ? static_cast<double>(st.runs) / static_cast<double>(st.expected) : 0.0},
                {"seeds", seeds},
                {"best_seed", st.best_seed ? json(*st.best_seed) : json(nullptr)},
                {"cases", cases},
                {"weight_increment_mean", detail::mean_of(w_inc)},
                {"wavespeed_l2_early_mean", detail::mean_of(ws_e)},
                {"wavespeed_l2_late_mean", detail::mean_of(ws_l)},
                {"wavespeed_delta_a_mean", delta_a.empty() ? json(nullptr) : json(detail::mean_of(delta_a))},
                {"wavespeed_delta_b_mean", delta_b.empty() ? json(nullptr) : json(detail::mean_of(delta_b))}};
    lambda_rows.push_back(row);
  }

  // Ensemble-mean deltas against the plain model.
  if (stats_by_lambda.count(0.0)) {
    const EnsembleStats& plain = stats_by_lambda.at(0.0);
    for (auto& row : lambda_rows) {
      const EnsembleStats& st = stats_by_lambda.at(row.at("lambda").get<double>());
      for (std::size_t c = 0; c < test.size(); ++c) {
        json rl1 = json::array(), rlinf = json::array();
        for (auto k : steps) {
          const auto a = relative_change(st.l1[c][k - 1].mean, plain.l1[c][k - 1].mean);
          const auto b = relative_change(st.linf[c][k - 1].mean, plain.linf[c][k - 1].mean);
          rl1.push_back(a ? json(*a) : json(nullptr));
          rlinf.push_back(b ? json(*b) : json(nullptr));
        }
        row["cases"][ds.test_names[c]]["relative_l1_vs_plain"] = rl1;
        row["cases"][ds.test_names[c]]["relative_linf_vs_plain"] = rlinf;
      }
    }
  }

  json t_over_t = json::array();
  for (auto k : steps) t_over_t.push_back(static_cast<double>(k) * step);
  out.summary = {{"schema_version", kSchemaVersion},
                 {"kind", "evaluation"},
                 {"steps", steps},
                 {"t_over_T", t_over_t},
                 {"cases", ds.test_names},
                 {"error_guard", guard},
                 {"dataset_fingerprint", dataset_fingerprint(ds)},
                 {"lambdas", lambda_rows}};
  return out;
}

inline void save_eval(const fs::path& dir, const EvalOutput& ev) {
  fs::create_directories(dir);
  detail::write_file(dir / "forecast.csv", ev.forecast_csv);
  detail::write_file(dir / "diagnostics.csv", ev.diagnostics_csv);
  write_json(dir / "summary.json", ev.summary);
}

/// Tables in the shape of the published error tables, as plain text.
inline std::string format_report(const json& summary) {
  std::string s;
  const auto steps = summary.at("t_over_T").get<std::vector<double>>();
  auto header = [&] {
    std::string h = "  lambda    ";
    for (double t : steps) h += "  t/T=" + fmt_short(t, "%.4f") + "    ";
    return h + "\n";
  };
  for (const auto& norm : {std::string("l1"), std::string("linf")}) {
    for (const auto& name : summary.at("cases")) {
      s += (norm == "l1" ? "L1" : "Linf") + std::string(" error, ") + name.get<std::string>() + "\n" + header();
      for (const auto& row : summary.at("lambdas")) {
        const auto& c = row.at("cases").at(name.get<std::string>());
        const auto m = c.at(norm + "_mean").get<std::vector<double>>();
        const auto d = c.at(norm + "_std").get<std::vector<double>>();
        std::string line = "  " + fmt_short(row.at("lambda").get<double>(), "%-9.3g") + " ";
        for (std::size_t k = 0; k < m.size(); ++k)
          line += " " + fmt_short(m[k], "%.3f") + " +- " + fmt_short(d[k], "%.3f") + " ";
        s += line + "\n";
      }
      s += "\n";
    }
  }
  s += "Diagnostics (ensemble means)\n";
  s += "  lambda     runs  best  w_inc      ws_L2(late)  delta_A    delta_B\n";
  for (const auto& row : summary.at("lambdas")) {
    auto opt = [](const json& v) { return v.is_null() ? std::string("n/a") : fmt_short(v.get<double>(), "%+.3f"); };
    char buf[256];
    std::snprintf(buf, sizeof(buf), "  %-9.3g  %zu/%zu  %-4s  %+.4f    %-11.4g  %-9s  %s\n",
                  row.at("lambda").get<double>(), row.at("runs").get<std::size_t>(),
                  row.at("expected").get<std::size_t>(),
                  row.at("best_seed").is_null() ? "-" : std::to_string(row.at("best_seed").get<std::uint64_t>()).c_str(),
                  row.at("weight_increment_mean").get<double>(), row.at("wavespeed_l2_late_mean").get<double>(),
                  opt(row.at("wavespeed_delta_a_mean")).c_str(), opt(row.at("wavespeed_delta_b_mean")).c_str());
    s += buf;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepOptions {
  bool force = false;   // retrain runs that already exist
  bool resume = false;  // keep finished runs with a matching config hash
  std::ostream* log = nullptr;
};

/// Config of one grid point: the sweep config with lambda and seed set.
inline ExperimentConfig run_config(const ExperimentConfig& base, double lambda, std::uint64_t seed) {
  ExperimentConfig c = base;
  c.regularizer.lambda = lambda;
  c.optimizer.seed = seed;
  c.workers = 1;  // a single run is serial; keeps its hash independent of the sweep's worker count
  return c;
}

/// Field, wave speed and dataset, then every (lambda, seed) run on up to
/// `workers` threads, then evaluation. Failed runs are reported and left on
/// disk; the first failure is re-thrown after the others finish.
inline EvalOutput run_sweep(const ExperimentConfig& cfg, const fs::path& out, const SweepOptions& opt = {}) {
  cfg.validate();
  require(!cfg.lambdas.empty() && !cfg.seeds.empty(), "sweep needs at least one lambda and one seed");
  const std::string hash = config_hash(cfg);
  if (fs::exists(out / "sweep.json") && !opt.force && !opt.resume) {
    const json prev = read_json(out / "sweep.json");
    throw IoError(out.string() +
                  (prev.value("config_hash", std::string()) == hash ? " already holds a sweep with this config hash"
                                                                     : " already holds a different sweep") +
                  "; pass --force to overwrite or --resume to continue");
  }
  fs::create_directories(out);
  write_json(out / "config.json", json(cfg));
  write_json(out / "sweep.json", {{"version", WAVEFORGE_VERSION}, {"config_hash", hash}});

  auto say = [&](const std::string& m) {
    if (opt.log) *opt.log << m << std::flush;
  };
  const PressureField fine = with_stage("generate", [&] { return generate_field(cfg); });
  with_stage("generate", [&] { save_field(out / "field", fine, cfg.boundary); });
  say("field: " + std::to_string(fine.grid.nt) + " x " + std::to_string(fine.grid.nx) + "\n");
  with_stage("wavespeed", [&] {
    save_wavespeed(out / "wavespeed", wave_speed(fine, cfg.regularizer.thresholds), cfg.regularizer.thresholds);
  });
  const Dataset ds = with_stage("dataset", [&] { return make_dataset(cfg, fine); });
  with_stage("dataset", [&] { save_dataset(out / "dataset", ds); });
  say("dataset: " + std::to_string(ds.train_indices.size()) + " training windows, " +
      std::to_string(ds.test_indices.size()) + " test windows, p0 = " + fmt_short(ds.norm.p0) + "\n");

  struct Job {
    double lambda;
    std::uint64_t seed;
    fs::path dir;
  };
  std::vector<Job> jobs;
  for (double lam : cfg.lambdas)
    for (auto seed : cfg.seeds) jobs.push_back({lam, seed, out / "runs" / run_name(lam, seed)});

  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr first_error;
  std::vector<std::string> failures;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      const Job& j = jobs[i];
      const ExperimentConfig rc = run_config(cfg, j.lambda, j.seed);
      if (opt.resume && !opt.force && run_complete(j.dir) && existing_run_hash(j.dir) == config_hash(rc)) {
        std::lock_guard lk(mu);
        say("reusing " + j.dir.filename().string() + "\n");
        continue;
      }
      try {
        with_stage("train " + j.dir.filename().string(), [&] {
          RunOptions ro;
          ro.force = opt.force || opt.resume;
          train_run(rc, ds, j.dir, ro);
        });
        std::lock_guard lk(mu);
        say("done " + j.dir.filename().string() + "\n");
      } catch (const std::exception& e) {
        std::lock_guard lk(mu);
        failures.push_back(e.what());
        say(std::string("failed: ") + e.what() + "\n");
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  const std::size_t nthreads = std::min(cfg.workers, jobs.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < nthreads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);

  return with_stage("eval", [&] {
    std::vector<StoredRun> runs;
    for (const auto& j : jobs) runs.push_back(load_run(j.dir));
    EvalOutput ev = evaluate_runs(runs, ds, cfg.error_guard, cfg.regularizer.thresholds, cfg.seeds.size());
    save_eval(out / "eval", ev);
    return ev;
  });
}

}  // namespace waveforge
