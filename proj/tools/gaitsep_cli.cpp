// SPDX-License-Identifier: Apache-2.0
//
// gaitsep: command-line front end.
//
// Exit codes: 0 ok, 1 internal error, 2 usage / refused overwrite / bad config,
// 3 invalid data or model file, 4 missing input file, 5 subject without
// windows, 6 one or more folds failed.
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "gaitsep/dataset_io.hpp"
#include "gaitsep/harness.hpp"
#include "gaitsep/runtime.hpp"

namespace fs = std::filesystem;
using namespace gaitsep;

namespace {

enum Exit : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kData = 3,
  kMissing = 4,
  kEmptySubject = 5,
  kFoldFailed = 6,
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

ExperimentConfig config_or_default(const std::string& path) {
  if (path.empty()) return ExperimentConfig{};
  return load_config(path);
}

void refuse_overwrite(const fs::path& out, bool force) {
  if (fs::exists(out) && !force) throw UsageError(out.string() + " exists; pass --force to overwrite");
}

void print_counts(std::span<const Window> windows) {
  std::vector<std::pair<std::string, std::array<std::size_t, 2>>> rows;
  for (const auto& [subject, c] : count_windows(windows)) rows.emplace_back(subject, c);
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return subject_less(a.first, b.first); });
  std::printf("%-10s %10s %10s\n", "subject", "gait", "non_gait");
  for (const auto& [subject, c] : rows) std::printf("%-10s %10zu %10zu\n", subject.c_str(), c[1], c[0]);
}

Logger stderr_logger(bool quiet) {
  if (quiet) return {};
  return [](const std::string& line) { std::fprintf(stderr, "%s\n", line.c_str()); };
}

int report_folds(const std::vector<FoldStatus>& folds, const fs::path& run_dir) {
  std::printf("run directory: %s\n", run_dir.string().c_str());
  int failed = 0;
  for (const auto& f : folds)
    if (!f.ok) {
      std::fprintf(stderr, "failed: %s fold %s: %s\n", f.detector.c_str(), f.subject.c_str(), f.error.c_str());
      ++failed;
    }
  return failed ? kFoldFailed : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Separable 1D-CNN and magnitude-threshold gait detectors"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(toolkit_version()));

  std::string config_path, out_path, run_dir, manifest_path, detector, fold, fresh_model;
  bool force = false, quiet = false, as_json = false;
  std::size_t jobs = 1, reps = 1000;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> n_subjects, per_class;
  std::vector<std::string> sensors, model_files;
  std::string infer_model, infer_window;
  double tau = 0.5;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic window cache");
  synth->add_option("--config", config_path, "Experiment config (synth section)")->check(CLI::ExistingFile);
  synth->add_option("--out", out_path, "Output .gwin cache")->required();
  synth->add_option("--seed", seed, "Override synth.seed");
  synth->add_option("--subjects", n_subjects, "Override synth.n_subjects");
  synth->add_option("--windows-per-class", per_class, "Override synth.windows_per_class");
  synth->add_option("--sensors", sensors, "Override synth.sensors (ch ll rl lh rh)");
  synth->add_flag("--force", force, "Overwrite an existing output");

  auto* prepare = app.add_subcommand("prepare", "Build a window cache from sensor and annotation CSVs");
  prepare->add_option("--config", config_path, "Experiment config (data section)")->required();
  prepare->add_option("--out", out_path, "Output .gwin cache")->required();
  prepare->add_flag("--force", force, "Overwrite an existing output");

  auto* loso = app.add_subcommand("train-loso", "Leave-one-subject-out training and evaluation");
  auto* sensors_cmd = app.add_subcommand("eval-sensors", "Train once on all sensors, evaluate per sensor");
  for (auto* cmd : {loso, sensors_cmd}) {
    cmd->add_option("--config", config_path, "Experiment config; defaults apply when omitted");
    cmd->add_option("--jobs", jobs, "Parallel folds")->check(CLI::Range(1, 256));
    cmd->add_option("--run-dir", run_dir, "Explicit run directory instead of output_dir/<time>-<hash>");
    cmd->add_flag("--quiet", quiet, "No progress lines on stderr");
  }

  auto* prof = app.add_subcommand("profile", "MACs, memory and host latency of exported models");
  prof->add_option("models", model_files, ".gmdl files")->required()->check(CLI::ExistingFile);
  prof->add_option("--reps", reps, "Timed repetitions (>= 100)");
  prof->add_flag("--json", as_json, "Print JSON instead of a table");

  auto* exp = app.add_subcommand("export", "Copy a fold model out of a run, or export a freshly initialised one");
  exp->add_option("--manifest", manifest_path, "Run manifest.json")->check(CLI::ExistingFile);
  exp->add_option("--detector", detector, "model1, model2 or baseline");
  exp->add_option("--fold", fold, "Held-out subject id");
  exp->add_option("--fresh", fresh_model, "Export an untrained model1/model2/baseline");
  exp->add_option("--seed", seed, "Initialisation seed for --fresh");
  exp->add_option("--tau", tau, "Decision threshold for --fresh")->check(CLI::Range(0.0, 1.0));
  exp->add_option("--out", out_path, "Output .gmdl")->required();
  exp->add_flag("--force", force, "Overwrite an existing output");

  auto* inf = app.add_subcommand("infer", "Classify one 60x3 window CSV");
  inf->add_option("model", infer_model, ".gmdl file")->required();
  inf->add_option("window", infer_window, "CSV with 60 rows of ax,ay,az")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*synth) {
      auto config = config_or_default(config_path);
      if (seed) config.synth.seed = *seed;
      if (n_subjects) config.synth.n_subjects = *n_subjects;
      if (per_class) config.synth.windows_per_class = *per_class;
      if (!sensors.empty()) {
        config.synth.sensors.clear();
        for (const auto& s : sensors) {
          try {
            config.synth.sensors.push_back(parse_sensor(s));
          } catch (const DataError& e) {
            throw UsageError(e.what());
          }
        }
      }
      refuse_overwrite(out_path, force);
      const auto windows = synth_generate(config.synth);
      write_window_cache(out_path, windows);
      std::printf("wrote %zu windows to %s\n", windows.size(), out_path.c_str());
      return kOk;
    }
    if (*prepare) {
      const auto config = load_config(config_path);
      refuse_overwrite(out_path, force);
      const auto windows = prepare_from_csv(config);
      write_window_cache(out_path, windows);
      print_counts(windows);
      std::printf("wrote %zu windows to %s\n", windows.size(), out_path.c_str());
      return kOk;
    }
    if (*loso || *sensors_cmd) {
      const auto config = config_or_default(config_path);
      const auto windows = load_windows(config);
      const RunOptions options{.jobs = jobs, .run_dir = run_dir, .log = stderr_logger(quiet)};
      if (*loso) {
        const auto result = run_loso(config, windows, options);
        std::cout << summary_csv(result.tables);
        return report_folds(result.folds, result.run_dir);
      }
      const auto result = run_eval_sensors(config, windows, options);
      std::cout << sensor_table_csv(result.tables);
      return report_folds(result.folds, result.run_dir);
    }
    if (*prof) {
      nlohmann::json rows = nlohmann::json::array();
      if (!as_json)
        std::printf("%-10s %22s %12s %8s %10s %10s %10s\n", "model", "weights+format bytes", "arena bytes", "MACs",
                    "mean us", "median us", "p95 us");
      for (const auto& file : model_files) {
        const auto model = RuntimeModel::load(read_file_bytes(file));
        const auto r = profile(model, reps);
        const std::string name(to_string(model.spec().name));
        if (as_json) {
          rows.push_back({{"file", file},
                          {"model", name},
                          {"flash_bytes", r.flash_bytes},
                          {"arena_bytes", r.peak_arena_bytes},
                          {"macs", r.macs},
                          {"mean_latency_us", r.mean_latency_us},
                          {"median_latency_us", r.median_latency_us},
                          {"p95_latency_us", r.p95_latency_us}});
        } else {
          std::printf("%-10s %22zu %12zu %8llu %10.2f %10.2f %10.2f\n", name.c_str(), r.flash_bytes,
                      r.peak_arena_bytes, static_cast<unsigned long long>(r.macs), r.mean_latency_us,
                      r.median_latency_us, r.p95_latency_us);
        }
      }
      if (as_json) std::cout << rows.dump(2) << "\n";
      return kOk;
    }
    if (*exp) {
      refuse_overwrite(out_path, force);
      std::vector<std::uint8_t> bytes;
      if (!fresh_model.empty()) {
        if (!manifest_path.empty()) throw UsageError("--fresh and --manifest are mutually exclusive");
        ModelName name{};
        try {
          name = parse_model_name(fresh_model);
        } catch (const std::invalid_argument& e) {
          throw UsageError(e.what());
        }
        const auto spec = build_spec(name);
        bytes = export_model(spec, init_params(spec, seed.value_or(12)), tau);
      } else {
        if (manifest_path.empty() || detector.empty() || fold.empty())
          throw UsageError("export needs --manifest, --detector and --fold (or --fresh)");
        const auto path = manifest_artifact(manifest_path, detector, fold);
        if (path.extension() != ".gmdl") throw UsageError("detector '" + detector + "' has no network model to export");
        const auto problems = verify_manifest(manifest_path);
        for (const auto& p : problems)
          if (p.find(path.filename().string()) != std::string::npos) throw DataError(p);
        bytes = read_file_bytes(path);
        (void)RuntimeModel::load(bytes);
      }
      write_file_atomic(out_path, bytes);
      std::printf("wrote %s (%zu bytes)\n", out_path.c_str(), bytes.size());
      return kOk;
    }
    if (*inf) {
      if (!fs::exists(infer_model)) throw MissingInputError("cannot open " + infer_model);
      const auto model = RuntimeModel::load(read_file_bytes(infer_model));
      auto data = read_window_csv(infer_window);
      zero_center(data);
      std::vector<float> window(data.begin(), data.end());
      auto arena = model.make_arena();
      const auto r = model.infer(arena, window);
      const nlohmann::json out = {{"p_gait", static_cast<double>(r.p_gait)},
                                  {"decision", std::string(to_string(r.decision))},
                                  {"tau", static_cast<double>(model.tau_star())}};
      std::cout << out.dump() << "\n";
      return kOk;
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kUsage;
  } catch (const MissingInputError& e) {
    std::fprintf(stderr, "missing input: %s\n", e.what());
    return kMissing;
  } catch (const EmptySubjectError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kEmptySubject;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const LoadError& e) {
    std::fprintf(stderr, "invalid model (%s): %s\n", std::string(to_string(e.code)).c_str(), e.what());
    return kData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return kInternal;
  }
  return kUsage;
}
