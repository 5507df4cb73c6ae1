#include "waveforge/config.hpp"
#include "waveforge/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace wf = waveforge;

namespace {

enum Exit : int { kOk = 0, kConfig = 1, kNumeric = 2, kIo = 3 };

wf::ExperimentConfig config_or_default(const std::string& path) {
  return path.empty() ? wf::ExperimentConfig::full() : wf::load_config(path);
}

void refuse_existing(const wf::fs::path& p, bool force) {
  if (wf::fs::exists(p) && !force) throw wf::IoError(p.string() + " exists; pass --force to overwrite");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"waveforge: wave-propagation data, sequence models and kinematic regularization"};
  app.set_version_flag("--version", WAVEFORGE_VERSION);
  app.require_subcommand(1);

  std::string config_path, out, field_dir, dataset_dir, runs_glob, eval_dir, scale = "full";
  bool dry_run = false, force = false, resume = false;
  std::optional<double> lambda;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> factor, tx, stride, workers;
  std::vector<double> lambdas;
  std::vector<std::uint64_t> seeds;

  auto* init = app.add_subcommand("init", "write a config file with every default spelled out");
  init->add_option("--out", out, "config file to write")->required();
  init->add_option("--scale", scale, "full or smoke")->check(CLI::IsMember({"full", "smoke"}));
  init->add_flag("--force", force, "overwrite an existing file");

  auto* gen = app.add_subcommand("generate", "solve the wave equation on the fine grid");
  gen->add_option("--config", config_path, "experiment config (defaults when omitted)");
  gen->add_option("--out", out, "field directory")->required();
  gen->add_flag("--dry-run", dry_run, "validate and report, write nothing");
  gen->add_flag("--force", force, "overwrite an existing field");

  auto* ws = app.add_subcommand("wavespeed", "wave speed and interference mask of a stored field");
  ws->add_option("--in,--field", field_dir, "field directory")->required();
  ws->add_option("--config", config_path, "config providing the mask thresholds");
  ws->add_option("--out", out, "output directory")->required();
  ws->add_flag("--dry-run", dry_run, "validate and report, write nothing");
  ws->add_flag("--force", force, "overwrite existing output");

  auto* dset = app.add_subcommand("dataset", "coarsen, normalize and window a stored field");
  dset->add_option("--field", field_dir, "fine field directory")->required();
  dset->add_option("--config", config_path, "config providing the dataset block");
  dset->add_option("--factor", factor, "coarsening factor");
  dset->add_option("--tx", tx, "window length");
  dset->add_option("--stride", stride, "window stride (defaults to tx)");
  dset->add_option("--out", out, "dataset directory")->required();
  dset->add_flag("--dry-run", dry_run, "validate and report, write nothing");
  dset->add_flag("--force", force, "overwrite an existing dataset");

  auto* trn = app.add_subcommand("train", "train one model into a run directory");
  trn->add_option("--config", config_path, "experiment config")->required();
  trn->add_option("--out", out, "run directory")->required();
  trn->add_option("--dataset", dataset_dir, "prebuilt dataset (otherwise built from the config)");
  trn->add_option("--lambda", lambda, "override the regularizer weight");
  trn->add_option("--seed", seed, "override the seed");
  trn->add_flag("--dry-run", dry_run, "validate and report, write nothing");
  trn->add_flag("--force", force, "overwrite an existing run");

  auto* evl = app.add_subcommand("eval", "error tables and diagnostics for trained runs");
  evl->add_option("--runs", runs_glob, "glob matching run directories")->required();
  evl->add_option("--dataset", dataset_dir, "dataset the runs were trained on")->required();
  evl->add_option("--out", out, "evaluation directory")->required();
  evl->add_option("--config", config_path, "config providing the guard and mask thresholds");
  evl->add_flag("--force", force, "overwrite existing output");

  auto* swp = app.add_subcommand("sweep", "train and evaluate a lambda x seed grid");
  swp->add_option("--config", config_path, "experiment config")->required();
  swp->add_option("--out", out, "sweep directory")->required();
  swp->add_option("--lambdas", lambdas, "regularizer weights")->delimiter(',');
  swp->add_option("--seeds", seeds, "seeds")->delimiter(',');
  swp->add_option("--workers", workers, "concurrent runs");
  swp->add_flag("--dry-run", dry_run, "validate and list the runs, write nothing");
  swp->add_flag("--resume", resume, "keep finished runs with a matching config hash");
  swp->add_flag("--force", force, "retrain everything");

  auto* rep = app.add_subcommand("report", "print the tables of an evaluation");
  rep->add_option("--eval", eval_dir, "evaluation directory (or a sweep directory)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*init) {
      refuse_existing(out, force);
      const wf::ExperimentConfig c = scale == "smoke" ? wf::ExperimentConfig::smoke() : wf::ExperimentConfig::full();
      c.validate();
      wf::write_json(out, wf::json(c));
      std::cout << "wrote " << out << " (config hash " << wf::config_hash(c) << ")\n";
    } else if (*gen) {
      const wf::ExperimentConfig c = config_or_default(config_path);
      c.validate();
      const wf::GridSpec g = c.fine_grid();
      std::cout << "fine grid " << g.nt << " x " << g.nx << ", Courant " << g.courant(c.domain) << "\n";
      if (dry_run) return kOk;
      refuse_existing(wf::fs::path(out) / "field.json", force);
      const wf::PressureField f = wf::generate_field(c);
      wf::save_field(out, f, c.boundary);
      std::cout << "wrote " << out << " (peak " << f.peak() << ")\n";
    } else if (*ws) {
      const wf::ExperimentConfig c = config_or_default(config_path);
      c.regularizer.thresholds.validate();
      const wf::PressureField f = wf::load_field(field_dir);
      if (dry_run) {
        std::cout << "field " << f.grid.nt << " x " << f.grid.nx << "\n";
        return kOk;
      }
      refuse_existing(wf::fs::path(out) / "wavespeed.json", force);
      const wf::WaveSpeedField w = wf::wave_speed(f, c.regularizer.thresholds);
      wf::save_wavespeed(out, w, c.regularizer.thresholds);
      std::cout << "wrote " << out << ": " << w.mask.count() << " of " << w.mask.size()
                << " cells unmasked, mean speed " << wf::mean_unmasked_speed(w) << "\n";
    } else if (*dset) {
      wf::ExperimentConfig c = config_or_default(config_path);
      if (factor) c.dataset.factor = *factor;
      if (tx) c.dataset.window.tx = *tx;
      if (tx || stride) c.dataset.window.stride = stride ? *stride : c.dataset.window.tx;
      c.dataset.validate();
      const wf::PressureField f = wf::load_field(field_dir);
      const wf::Dataset d = wf::make_dataset(c, f);
      std::cout << d.train_indices.size() << " training windows, " << d.test_indices.size()
                << " test windows, p0 " << d.norm.p0 << "\n";
      if (dry_run) return kOk;
      refuse_existing(wf::fs::path(out) / "manifest.json", force);
      wf::save_dataset(out, d);
      std::cout << "wrote " << out << "\n";
    } else if (*trn) {
      wf::ExperimentConfig c = wf::load_config(config_path);
      if (lambda) c.regularizer.lambda = *lambda;
      if (seed) c.optimizer.seed = *seed;
      c = wf::run_config(c, c.regularizer.lambda, c.optimizer.seed);
      c.validate();
      const std::string hash = wf::config_hash(c);
      std::cout << "run lambda " << c.regularizer.lambda << " seed " << c.optimizer.seed << ", config hash " << hash
                << "\n";
      if (dry_run) return kOk;
      if (auto prev = wf::existing_run_hash(out); prev && !force) {
        throw wf::IoError(out + (*prev == hash ? " already holds a run with this config hash"
                                               : " already holds a different run") +
                          "; pass --force to overwrite");
      }
      const wf::Dataset d = dataset_dir.empty()
                                ? wf::with_stage("dataset", [&] { return wf::make_dataset(c, wf::generate_field(c)); })
                                : wf::load_dataset(dataset_dir);
      wf::RunOptions ro;
      ro.force = force;
      ro.log = &std::cout;
      const wf::TrainResult r = wf::with_stage("train", [&] { return wf::train_run(c, d, out, ro); });
      std::cout << "final mse " << r.history.back().loss.mse << ", wrote " << out << "\n";
    } else if (*evl) {
      const wf::ExperimentConfig c = config_or_default(config_path);
      refuse_existing(wf::fs::path(out) / "summary.json", force);
      const auto dirs = wf::glob_runs(runs_glob);
      if (dirs.empty()) throw wf::IoError("no run directories match '" + runs_glob + "'");
      const wf::Dataset d = wf::load_dataset(dataset_dir);
      std::vector<wf::StoredRun> runs;
      for (const auto& dir : dirs) runs.push_back(wf::load_run(dir));
      const wf::EvalOutput ev = wf::evaluate_runs(runs, d, c.error_guard, c.regularizer.thresholds);
      wf::save_eval(out, ev);
      std::cout << wf::format_report(ev.summary);
    } else if (*swp) {
      wf::ExperimentConfig c = wf::load_config(config_path);
      if (!lambdas.empty()) c.lambdas = lambdas;
      if (!seeds.empty()) c.seeds = seeds;
      if (workers) c.workers = *workers;
      c.validate();
      std::cout << c.lambdas.size() * c.seeds.size() << " runs, " << c.workers << " worker(s), config hash "
                << wf::config_hash(c) << "\n";
      if (dry_run) {
        for (double l : c.lambdas)
          for (auto s : c.seeds) std::cout << "  " << wf::run_name(l, s) << "\n";
        return kOk;
      }
      wf::SweepOptions so;
      so.force = force;
      so.resume = resume;
      so.log = &std::cout;
      const wf::EvalOutput ev = wf::run_sweep(c, out, so);
      std::cout << wf::format_report(ev.summary);
    } else if (*rep) {
      wf::fs::path p = eval_dir;
      if (!wf::fs::exists(p / "summary.json") && wf::fs::exists(p / "eval" / "summary.json")) p /= "eval";
      std::cout << wf::format_report(wf::read_json(p / "summary.json"));
    }
  } catch (const wf::ConfigError& e) {
    std::cerr << "waveforge: config error: " << e.what() << "\n";
    return kConfig;
  } catch (const wf::NumericError& e) {
    std::cerr << "waveforge: numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const wf::IoError& e) {
    std::cerr << "waveforge: io error: " << e.what() << "\n";
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "waveforge: io error: " << e.what() << "\n";
    return kIo;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "waveforge: io error: malformed metadata: " << e.what() << "\n";
    return kIo;
  }
  return kOk;
}
