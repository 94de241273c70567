// SPDX-License-Identifier: Apache-2.0
#include "gaitsep/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "gaitsep/runtime.hpp"

#ifndef GAITSEP_VERSION
#define GAITSEP_VERSION "0.0.0"
#endif

namespace gaitsep {

using json = nlohmann::json;

std::string_view toolkit_version() { return GAITSEP_VERSION; }

std::string_view to_string(Detector d) {
  switch (d) {
    case Detector::model1: return "model1";
    case Detector::model2: return "model2";
    case Detector::baseline: return "baseline";
    case Detector::threshold: return "threshold";
  }
  return "?";
}

Detector parse_detector(std::string_view text) {
  for (Detector d : {Detector::model1, Detector::model2, Detector::baseline, Detector::threshold})
    if (to_string(d) == text) return d;
  throw ConfigError("unknown detector '" + std::string(text) + "' (expected model1, model2, baseline or threshold)");
}

bool is_cnn(Detector d) { return d != Detector::threshold; }

ModelName model_name(Detector d) {
  switch (d) {
    case Detector::model1: return ModelName::model1;
    case Detector::model2: return ModelName::model2;
    case Detector::baseline: return ModelName::baseline;
    case Detector::threshold: break;
  }
  throw std::invalid_argument("threshold detector has no network architecture");
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

// --- configuration -----------------------------------------------------------

namespace {

std::span<const std::uint8_t> as_bytes(const std::string& s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

void check_keys(const json& obj, const std::string& where, std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : obj.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError(where + ": unknown key '" + key + "'");
}

template <typename T>
T get_as(const json& v, const std::string& where) {
  try {
    if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(where + ": expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0))
        throw ConfigError(where + ": expected a non-negative integer");
      return v.get<T>();
    } else {
      if (!v.is_number()) throw ConfigError(where + ": expected a number");
      return v.get<T>();
    }
  } catch (const json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

std::vector<std::string> string_list(const json& v, const std::string& where) {
  if (!v.is_array()) throw ConfigError(where + ": expected an array of strings");
  std::vector<std::string> out;
  for (const auto& e : v) out.push_back(get_as<std::string>(e, where));
  return out;
}

Sensor sensor_from(const json& v, const std::string& where) {
  const auto s = get_as<std::string>(v, where);
  for (Sensor x : kAllSensors)
    if (to_string(x) == s) return x;
  throw ConfigError(where + ": unknown sensor '" + s + "' (expected ch, ll, rl, lh or rh)");
}

std::vector<Sensor> sensor_list(const json& v, const std::string& where) {
  if (!v.is_array() || v.empty()) throw ConfigError(where + ": expected a non-empty array of sensors");
  std::vector<Sensor> out;
  for (const auto& e : v) {
    const Sensor s = sensor_from(e, where);
    if (std::find(out.begin(), out.end(), s) != out.end())
      throw ConfigError(where + ": sensor '" + std::string(to_string(s)) + "' listed twice");
    out.push_back(s);
  }
  return out;
}

std::filesystem::path path_from(const json& v, const std::string& where, const std::filesystem::path& base) {
  std::filesystem::path p = get_as<std::string>(v, where);
  if (!p.empty() && p.is_relative() && !base.empty()) p = base / p;
  return p.lexically_normal();
}

void parse_train(const json& t, TrainConfig& c) {
  check_keys(t, "train",
             {"learning_rate", "weight_decay", "beta1", "beta2", "epsilon", "max_epochs", "batch_size",
              "early_stop_patience", "rlrop_factor", "rlrop_patience", "min_learning_rate", "class_balance_beta",
              "seed", "threshold_sweep_points"});
  auto num = [&](const char* k, double& dst) {
    if (t.contains(k)) dst = get_as<double>(t[k], std::string("train.") + k);
  };
  auto cnt = [&](const char* k, auto& dst) {
    if (t.contains(k)) dst = get_as<std::remove_reference_t<decltype(dst)>>(t[k], std::string("train.") + k);
  };
  num("learning_rate", c.learning_rate);
  num("weight_decay", c.weight_decay);
  num("beta1", c.beta1);
  num("beta2", c.beta2);
  num("epsilon", c.epsilon);
  cnt("max_epochs", c.max_epochs);
  cnt("batch_size", c.batch_size);
  cnt("early_stop_patience", c.early_stop_patience);
  num("rlrop_factor", c.rlrop_factor);
  cnt("rlrop_patience", c.rlrop_patience);
  num("min_learning_rate", c.min_learning_rate);
  num("class_balance_beta", c.class_balance_beta);
  cnt("seed", c.seed);
  cnt("threshold_sweep_points", c.threshold_sweep_points);
}

void parse_synth(const json& s, SynthConfig& c) {
  check_keys(s, "synth", {"n_subjects", "windows_per_class", "gait_freq_hz", "noise_std", "seed", "sensors", "sensor_noise"});
  if (s.contains("n_subjects")) c.n_subjects = get_as<std::size_t>(s["n_subjects"], "synth.n_subjects");
  if (s.contains("windows_per_class"))
    c.windows_per_class = get_as<std::size_t>(s["windows_per_class"], "synth.windows_per_class");
  if (s.contains("gait_freq_hz")) {
    const auto& r = s["gait_freq_hz"];
    if (!r.is_array() || r.size() != 2) throw ConfigError("synth.gait_freq_hz: expected [lo, hi]");
    c.gait_freq_lo_hz = get_as<double>(r[0], "synth.gait_freq_hz");
    c.gait_freq_hi_hz = get_as<double>(r[1], "synth.gait_freq_hz");
  }
  if (s.contains("noise_std")) c.noise_std = get_as<double>(s["noise_std"], "synth.noise_std");
  if (s.contains("seed")) c.seed = get_as<std::uint64_t>(s["seed"], "synth.seed");
  if (s.contains("sensors")) c.sensors = sensor_list(s["sensors"], "synth.sensors");
  if (s.contains("sensor_noise")) {
    const auto& n = s["sensor_noise"];
    check_keys(n, "synth.sensor_noise", {"ch", "ll", "rl", "lh", "rh"});
    for (const auto& [k, v] : n.items())
      c.sensor_noise[static_cast<std::size_t>(parse_sensor(k))] = get_as<double>(v, "synth.sensor_noise." + k);
  }
}

void parse_data(const json& d, ExperimentConfig& c, const std::filesystem::path& base) {
  check_keys(d, "data",
             {"cache", "csv_dir", "subjects", "sensors", "columns", "gait_activities", "excluded_activities"});
  if (d.contains("cache")) c.cache = path_from(d["cache"], "data.cache", base);
  if (d.contains("csv_dir")) c.csv_dir = path_from(d["csv_dir"], "data.csv_dir", base);
  if (d.contains("subjects")) {
    c.subjects = string_list(d["subjects"], "data.subjects");
    std::set<std::string> seen;
    for (const auto& s : c.subjects) {
      if (s.empty()) throw ConfigError("data.subjects: empty subject id");
      if (!seen.insert(s).second) throw ConfigError("data.subjects: subject '" + s + "' listed twice");
    }
  }
  if (d.contains("sensors")) c.prepare_sensors = sensor_list(d["sensors"], "data.sensors");
  if (d.contains("columns")) {
    const auto& m = d["columns"];
    check_keys(m, "data.columns", {"time", "ax", "ay", "az"});
    if (m.contains("time")) c.columns.time = get_as<std::string>(m["time"], "data.columns.time");
    if (m.contains("ax")) c.columns.ax = get_as<std::string>(m["ax"], "data.columns.ax");
    if (m.contains("ay")) c.columns.ay = get_as<std::string>(m["ay"], "data.columns.ay");
    if (m.contains("az")) c.columns.az = get_as<std::string>(m["az"], "data.columns.az");
  }
  if (d.contains("gait_activities")) c.activities.gait = string_list(d["gait_activities"], "data.gait_activities");
  if (d.contains("excluded_activities"))
    c.activities.excluded = string_list(d["excluded_activities"], "data.excluded_activities");
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(root, "config",
             {"data", "synth", "detectors", "train", "threshold_mode", "sensor", "output_dir", "seed"});
  ExperimentConfig c;
  if (root.contains("seed")) c.seed = get_as<std::uint64_t>(root["seed"], "seed");
  c.train.seed = c.seed;
  c.synth.seed = c.seed;
  if (root.contains("data")) parse_data(root["data"], c, base_dir);
  if (root.contains("synth")) parse_synth(root["synth"], c.synth);
  if (root.contains("train")) parse_train(root["train"], c.train);
  if (root.contains("detectors")) {
    c.detectors.clear();
    for (const auto& name : string_list(root["detectors"], "detectors")) {
      const Detector d = parse_detector(name);
      if (std::find(c.detectors.begin(), c.detectors.end(), d) != c.detectors.end())
        throw ConfigError("detectors: '" + name + "' listed twice");
      c.detectors.push_back(d);
    }
    if (c.detectors.empty()) throw ConfigError("detectors: at least one detector is required");
  }
  if (root.contains("threshold_mode")) {
    const auto m = get_as<std::string>(root["threshold_mode"], "threshold_mode");
    if (m == "zero_centered") c.threshold_mode = MagnitudeMode::zero_centered;
    else if (m == "raw") c.threshold_mode = MagnitudeMode::raw;
    else throw ConfigError("threshold_mode: expected 'zero_centered' or 'raw', got '" + m + "'");
  }
  if (root.contains("sensor")) c.sensor = sensor_from(root["sensor"], "sensor");
  if (root.contains("output_dir")) c.output_dir = path_from(root["output_dir"], "output_dir", base_dir);

  try {
    c.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  try {
    c.synth.validate();
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

std::string resolved_config_json(const ExperimentConfig& c) {
  auto sensors = [](std::span<const Sensor> list) {
    json a = json::array();
    for (Sensor s : list) a.push_back(std::string(to_string(s)));
    return a;
  };
  json noise = json::object();
  for (Sensor s : kAllSensors) noise[std::string(to_string(s))] = c.synth.sensor_noise[static_cast<std::size_t>(s)];
  json detectors = json::array();
  for (Detector d : c.detectors) detectors.push_back(std::string(to_string(d)));
  const auto& t = c.train;
  json root = {
      {"data",
       {{"cache", c.cache.string()},
        {"csv_dir", c.csv_dir.string()},
        {"subjects", c.subjects},
        {"sensors", sensors(c.prepare_sensors)},
        {"columns", {{"time", c.columns.time}, {"ax", c.columns.ax}, {"ay", c.columns.ay}, {"az", c.columns.az}}},
        {"gait_activities", c.activities.gait},
        {"excluded_activities", c.activities.excluded}}},
      {"synth",
       {{"n_subjects", c.synth.n_subjects},
        {"windows_per_class", c.synth.windows_per_class},
        {"gait_freq_hz", {c.synth.gait_freq_lo_hz, c.synth.gait_freq_hi_hz}},
        {"noise_std", c.synth.noise_std},
        {"seed", c.synth.seed},
        {"sensors", sensors(c.synth.sensors)},
        {"sensor_noise", noise}}},
      {"detectors", detectors},
      {"train",
       {{"learning_rate", t.learning_rate},
        {"weight_decay", t.weight_decay},
        {"beta1", t.beta1},
        {"beta2", t.beta2},
        {"epsilon", t.epsilon},
        {"max_epochs", t.max_epochs},
        {"batch_size", t.batch_size},
        {"early_stop_patience", t.early_stop_patience},
        {"rlrop_factor", t.rlrop_factor},
        {"rlrop_patience", t.rlrop_patience},
        {"min_learning_rate", t.min_learning_rate},
        {"class_balance_beta", t.class_balance_beta},
        {"seed", t.seed},
        {"threshold_sweep_points", t.threshold_sweep_points}}},
      {"threshold_mode", c.threshold_mode == MagnitudeMode::raw ? "raw" : "zero_centered"},
      {"sensor", std::string(to_string(c.sensor))},
      {"output_dir", c.output_dir.string()},
      {"seed", c.seed},
  };
  return root.dump(2) + "\n";
}

std::uint64_t config_hash(const ExperimentConfig& config) { return fnv1a64(as_bytes(resolved_config_json(config))); }

// --- datasets -----------------------------------------------------------------

WindowCounts count_windows(std::span<const Window> windows) {
  WindowCounts counts;
  for (const auto& w : windows) ++counts[w.subject_id][static_cast<std::size_t>(w.label)];
  return counts;
}

std::vector<Window> prepare_from_csv(const ExperimentConfig& config) {
  if (config.csv_dir.empty()) throw ConfigError("data.csv_dir is not set");
  if (!std::filesystem::is_directory(config.csv_dir))
    throw MissingInputError("CSV directory " + config.csv_dir.string() + " does not exist");
  const auto subjects = config.subjects.empty() ? default_loso_subjects() : config.subjects;
  std::vector<Window> out;
  for (const auto& subject : subjects) {
    const auto ann_path = annotation_csv_path(config.csv_dir, subject);
    if (!std::filesystem::exists(ann_path)) throw MissingInputError("missing annotation file " + ann_path.string());
    const auto annotations = read_annotation_csv(ann_path);
    std::vector<AnnotationEvent> events;
    try {
      events = label_intervals(annotations, config.activities);
    } catch (const DataError& e) {
      throw DataError("subject " + subject + ": " + e.what());
    }
    std::size_t produced = 0;
    for (Sensor sensor : config.prepare_sensors) {
      const auto path = sensor_csv_path(config.csv_dir, subject, sensor);
      if (!std::filesystem::exists(path)) throw MissingInputError("missing sensor file " + path.string());
      const auto rec = resample_to_30hz(read_sensor_csv(path, subject, sensor, config.columns));
      auto windows = extract_windows(rec, events);
      produced += windows.size();
      for (auto& w : windows) out.push_back(std::move(w));
    }
    if (produced == 0) throw EmptySubjectError("subject " + subject + " produced zero windows");
  }
  return out;
}

std::vector<Window> load_windows(const ExperimentConfig& config) {
  if (!config.cache.empty()) {
    if (!std::filesystem::exists(config.cache))
      throw MissingInputError("window cache " + config.cache.string() + " does not exist");
    return read_window_cache(config.cache);
  }
  if (!config.csv_dir.empty()) return prepare_from_csv(config);
  return synth_generate(config.synth);
}

// --- runs ---------------------------------------------------------------------

namespace {

struct Artifact {
  std::string path;  // relative to the run directory
  std::uint64_t hash = 0;
};

json artifact_json(const Artifact& a) { return {{"path", a.path}, {"fnv1a64", hex64(a.hash)}}; }

class RunDir {
 public:
  explicit RunDir(std::filesystem::path root) : root_(std::move(root)) { std::filesystem::create_directories(root_); }

  const std::filesystem::path& root() const { return root_; }

  Artifact write(const std::string& rel, std::span<const std::uint8_t> bytes) const {
    write_file_atomic(root_ / rel, bytes);
    return {rel, fnv1a64(bytes)};
  }
  Artifact write(const std::string& rel, const std::string& text) const { return write(rel, as_bytes(text)); }

 private:
  std::filesystem::path root_;
};

std::filesystem::path make_run_dir(const ExperimentConfig& config, const RunOptions& options) {
  if (!options.run_dir.empty()) return options.run_dir;
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  localtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
  const std::string base = std::string(stamp) + "-" + hex64(config_hash(config));
  auto dir = config.output_dir / base;
  for (int n = 2; std::filesystem::exists(dir); ++n) dir = config.output_dir / (base + "-" + std::to_string(n));
  return dir;
}

std::string file_stem(const std::string& id) {
  std::string s;
  for (char c : id) s += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
  return s;
}

/// Runs task(i) for i in [0, n) on up to `jobs` threads.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& task) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  for (std::size_t j = 0; j < jobs; ++j)
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) task(i);
    });
  for (auto& w : workers) w.join();
}

struct DetectorOutcome {
  Evaluation eval;
  std::vector<Artifact> artifacts;  // model, history (CNN only), metrics
  std::vector<std::string> artifact_roles;
};

Metric test_pr_auc(std::span<const double> p, std::span<const int> labels) {
  const auto pos = std::count(labels.begin(), labels.end(), 1);
  if (pos == 0 || pos == static_cast<std::ptrdiff_t>(labels.size())) return std::nullopt;
  return average_precision(p, labels);
}

/// Fitted detector able to score any window subset.
struct FittedDetector {
  Detector detector{};
  std::optional<CalibratedModel> cnn;
  ThresholdModel threshold;

  std::vector<int> decide(std::span<const Window> windows, std::span<const std::size_t> idx,
                          std::vector<double>* scores) const {
    std::vector<int> pred;
    pred.reserve(idx.size());
    if (cnn) {
      auto p = predict_gait(cnn->spec, cnn->params, windows, idx);
      for (double x : p) pred.push_back(x >= cnn->tau_star ? 1 : 0);
      if (scores) *scores = std::move(p);
    } else {
      for (auto i : idx) pred.push_back(static_cast<int>(classify(windows[i], threshold)));
    }
    return pred;
  }
};

FittedDetector fit_detector(Detector d, const ExperimentConfig& config, std::span<const Window> windows,
                            const SplitSet& split, std::size_t fold_index) {
  FittedDetector f;
  f.detector = d;
  if (is_cnn(d))
    f.cnn = train(build_spec(model_name(d)), windows, split, config.train, {.fold_index = fold_index, .on_epoch = {}});
  else
    f.threshold = fit_threshold(windows, split.train, config.threshold_mode);
  return f;
}

Evaluation evaluate(const FittedDetector& f, std::span<const Window> windows, std::span<const std::size_t> idx,
                    std::string key) {
  std::vector<double> scores;
  const auto truth = labels_of(windows, idx);
  const auto pred = f.decide(windows, idx, &scores);
  Evaluation e;
  e.key = std::move(key);
  e.counts = confusion(truth, pred);
  e.metrics = compute_metrics(e.counts);
  if (f.cnn) e.metrics.pr_auc = test_pr_auc(scores, truth);
  return e;
}

/// Model artifact, history and metrics JSON for one fitted detector.
void write_detector_artifacts(const RunDir& dir, const std::string& prefix, const FittedDetector& f,
                              const json& evaluation, DetectorOutcome& out) {
  json meta = {{"detector", std::string(to_string(f.detector))}, {"evaluation", evaluation}};
  if (f.cnn) {
    const auto& cm = *f.cnn;
    out.artifacts.push_back(dir.write(prefix + ".gmdl", export_model(cm.spec, cm.params, cm.tau_star)));
    out.artifact_roles.push_back("model");
    std::ostringstream hist;
    write_history_csv(hist, cm.history);
    out.artifacts.push_back(dir.write(prefix + ".history.csv", hist.str()));
    out.artifact_roles.push_back("history");
    meta["tau_star"] = cm.tau_star;
    meta["best_epoch"] = cm.best_epoch;
    meta["epochs"] = cm.history.size();
    meta["class_weights"] = {{"w0", cm.class_weights.w0}, {"w1", cm.class_weights.w1},
                             {"n0", cm.class_weights.n0}, {"n1", cm.class_weights.n1}};
    meta["warnings"] = cm.warnings;
  } else {
    out.artifacts.push_back(dir.write(prefix + ".threshold.txt", serialize(f.threshold) + "\n"));
    out.artifact_roles.push_back("model");
    meta["tau"] = f.threshold.tau;
    meta["fit_f1"] = f.threshold.fit_f1;
    meta["mode"] = f.threshold.mode == MagnitudeMode::raw ? "raw" : "zero_centered";
  }
  out.artifacts.push_back(dir.write(prefix + ".metrics.json", meta.dump(2) + "\n"));
  out.artifact_roles.push_back("metrics");
}

void require_raw_support(const ExperimentConfig& config, std::span<const Window> windows) {
  if (config.threshold_mode != MagnitudeMode::raw) return;
  if (std::find(config.detectors.begin(), config.detectors.end(), Detector::threshold) == config.detectors.end()) return;
  for (const auto& w : windows)
    if (!w.has_axis_mean)
      throw ConfigError(
          "threshold_mode 'raw' needs the removed axis means, which a window cache does not store; "
          "use data.csv_dir or the synthetic generator");
}

void log_line(const RunOptions& options, std::mutex& mu, const std::string& line) {
  if (!options.log) return;
  std::lock_guard lock(mu);
  options.log(line);
}

json fold_entry(const FoldStatus& s, const DetectorOutcome* outcome) {
  json e = {{"detector", s.detector}, {"subject", s.subject}, {"status", s.ok ? "ok" : "failed"}};
  if (!s.ok) e["error"] = s.error;
  json arts = json::object();
  if (outcome)
    for (std::size_t i = 0; i < outcome->artifacts.size(); ++i)
      arts[outcome->artifact_roles[i]] = artifact_json(outcome->artifacts[i]);
  e["artifacts"] = arts;
  return e;
}

json manifest_header(const ExperimentConfig& config, const std::string& command, const Artifact& resolved) {
  return {{"toolkit_version", std::string(toolkit_version())},
          {"command", command},
          {"config_hash", hex64(config_hash(config))},
          {"resolved_config", artifact_json(resolved)}};
}

}  // namespace

bool LosoResult::all_ok() const {
  return std::all_of(folds.begin(), folds.end(), [](const FoldStatus& s) { return s.ok; });
}

bool SensorResult::all_ok() const {
  return std::all_of(folds.begin(), folds.end(), [](const FoldStatus& s) { return s.ok; });
}

LosoResult run_loso(const ExperimentConfig& config, std::span<const Window> windows, const RunOptions& options) {
  require_raw_support(config, windows);
  std::vector<std::string> subjects = config.subjects;
  if (subjects.empty()) {
    std::set<std::string> present;
    for (const auto& w : windows)
      if (w.sensor == config.sensor) present.insert(w.subject_id);
    subjects.assign(present.begin(), present.end());
    std::sort(subjects.begin(), subjects.end(), subject_less);
  }
  if (subjects.size() < 2) throw DataError("leave-one-subject-out needs at least two subjects");
  const auto folds = loso_folds(windows, subjects, config.seed, config.sensor);

  const RunDir dir(make_run_dir(config, options));
  const auto resolved = dir.write("resolved_config.json", resolved_config_json(config));

  const std::size_t n_folds = folds.size();
  const std::size_t n_tasks = config.detectors.size() * n_folds;
  std::vector<std::optional<DetectorOutcome>> outcomes(n_tasks);
  std::vector<FoldStatus> status(n_tasks);
  std::mutex log_mu;

  parallel_for(n_tasks, options.jobs, [&](std::size_t task) {
    const Detector d = config.detectors[task / n_folds];
    const std::size_t f = task % n_folds;
    const auto& split = folds[f];
    auto& st = status[task];
    st.detector = std::string(to_string(d));
    st.subject = split.held_out_subject;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const auto fitted = fit_detector(d, config, windows, split, f);
      DetectorOutcome out;
      out.eval = evaluate(fitted, windows, split.test, split.held_out_subject);
      const json evaluation = {{"subject", split.held_out_subject},
                               {"counts", to_json(out.eval.counts)},
                               {"metrics", to_json(out.eval.metrics)}};
      write_detector_artifacts(dir, st.detector + "/fold-" + file_stem(split.held_out_subject), fitted, evaluation,
                               out);
      outcomes[task] = std::move(out);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      char buf[160];
      std::snprintf(buf, sizeof buf, "%-9s fold %-4s F1 %s  (%.1f s)", st.detector.c_str(), st.subject.c_str(),
                    format_percent(outcomes[task]->eval.metrics.f1).c_str(), secs);
      log_line(options, log_mu, buf);
    } catch (const std::exception& e) {
      st.ok = false;
      st.error = e.what();
      log_line(options, log_mu, st.detector + " fold " + st.subject + " FAILED: " + e.what());
    }
  });

  LosoResult result;
  result.run_dir = dir.root();
  result.folds = status;
  json manifest = manifest_header(config, "train-loso", resolved);
  json fold_list = json::array();
  for (std::size_t t = 0; t < n_tasks; ++t) fold_list.push_back(fold_entry(status[t], outcomes[t] ? &*outcomes[t] : nullptr));
  manifest["folds"] = fold_list;

  json tables = json::array();
  for (std::size_t di = 0; di < config.detectors.size(); ++di) {
    FoldTable table;
    table.detector = std::string(to_string(config.detectors[di]));
    table.has_pr_auc = is_cnn(config.detectors[di]);
    for (std::size_t f = 0; f < n_folds; ++f)
      if (const auto& o = outcomes[di * n_folds + f]) table.rows.push_back(o->eval);
    sort_by_subject(table.rows);
    tables.push_back(artifact_json(dir.write(table.detector + "/folds.csv", fold_table_csv(table))));
    tables.push_back(artifact_json(dir.write(table.detector + "/folds.json", fold_table_json(table).dump(2) + "\n")));
    result.tables.push_back(std::move(table));
  }
  tables.push_back(artifact_json(dir.write("summary.csv", summary_csv(result.tables))));
  tables.push_back(artifact_json(dir.write("summary.json", summary_json(result.tables).dump(2) + "\n")));
  manifest["tables"] = tables;
  dir.write("manifest.json", manifest.dump(2) + "\n");
  return result;
}

SensorResult run_eval_sensors(const ExperimentConfig& config, std::span<const Window> windows,
                              const RunOptions& options) {
  require_raw_support(config, windows);
  std::array<bool, 5> present{};
  for (const auto& w : windows) present[static_cast<std::size_t>(w.sensor)] = true;
  for (Sensor s : kAllSensors)
    if (!present[static_cast<std::size_t>(s)])
      throw DataError("per-sensor evaluation needs all five sensors; no windows for '" + std::string(to_string(s)) +
                      "'");
  const SplitSet split = stratified_split(windows, config.seed);

  const RunDir dir(make_run_dir(config, options));
  const auto resolved = dir.write("resolved_config.json", resolved_config_json(config));

  constexpr std::array<Sensor, 5> kOrder{Sensor::ch, Sensor::lh, Sensor::rh, Sensor::ll, Sensor::rl};
  std::array<std::vector<std::size_t>, 5> by_sensor;
  for (auto i : split.test) by_sensor[static_cast<std::size_t>(windows[i].sensor)].push_back(i);

  const std::size_t n = config.detectors.size();
  std::vector<std::optional<SensorTable>> tables(n);
  std::vector<std::optional<DetectorOutcome>> outcomes(n);
  std::vector<FoldStatus> status(n);
  std::mutex log_mu;
  parallel_for(n, options.jobs, [&](std::size_t k) {
    const Detector d = config.detectors[k];
    status[k].detector = std::string(to_string(d));
    status[k].subject = "all";
    try {
      const auto fitted = fit_detector(d, config, windows, split, 0);
      SensorTable table;
      table.detector = status[k].detector;
      table.has_pr_auc = is_cnn(d);
      for (Sensor s : kOrder)
        table.rows.push_back(
            evaluate(fitted, windows, by_sensor[static_cast<std::size_t>(s)], std::string(sensor_display_name(s))));
      table.rows.push_back(evaluate(fitted, windows, split.test, "All"));
      json evaluation = json::array();
      for (const auto& r : table.rows)
        evaluation.push_back({{"sensor", r.key}, {"counts", to_json(r.counts)}, {"metrics", to_json(r.metrics)}});
      DetectorOutcome out;
      write_detector_artifacts(dir, status[k].detector + "/model", fitted, evaluation, out);
      outcomes[k] = std::move(out);
      tables[k] = std::move(table);
      log_line(options, log_mu, status[k].detector + " done");
    } catch (const std::exception& e) {
      status[k].ok = false;
      status[k].error = e.what();
      log_line(options, log_mu, status[k].detector + " FAILED: " + e.what());
    }
  });

  SensorResult result;
  result.run_dir = dir.root();
  result.folds = status;
  for (auto& t : tables)
    if (t) result.tables.push_back(std::move(*t));
  json manifest = manifest_header(config, "eval-sensors", resolved);
  json fold_list = json::array();
  for (std::size_t k = 0; k < n; ++k) fold_list.push_back(fold_entry(status[k], outcomes[k] ? &*outcomes[k] : nullptr));
  manifest["folds"] = fold_list;
  manifest["tables"] = {artifact_json(dir.write("sensors.csv", sensor_table_csv(result.tables))),
                        artifact_json(dir.write("sensors.json", sensor_table_json(result.tables).dump(2) + "\n"))};
  dir.write("manifest.json", manifest.dump(2) + "\n");
  return result;
}

std::vector<std::string> verify_manifest(const std::filesystem::path& manifest_path) {
  std::vector<std::string> problems;
  json m;
  try {
    m = json::parse(read_file_bytes(manifest_path));
  } catch (const std::exception& e) {
    return {std::string("unreadable manifest: ") + e.what()};
  }
  const auto root = manifest_path.parent_path();
  auto check = [&](const json& a) {
    const auto rel = a.at("path").get<std::string>();
    const auto path = root / rel;
    if (!std::filesystem::exists(path)) {
      problems.push_back("missing " + rel);
      return;
    }
    const auto bytes = read_file_bytes(path);
    if (hex64(fnv1a64(bytes)) != a.at("fnv1a64").get<std::string>()) problems.push_back("hash mismatch for " + rel);
    if (rel.ends_with(".gmdl")) {
      try {
        (void)RuntimeModel::load(bytes);
      } catch (const std::exception& e) {
        problems.push_back(rel + " does not load: " + e.what());
      }
    }
  };
  try {
    check(m.at("resolved_config"));
    for (const auto& f : m.at("folds"))
      for (const auto& [_, a] : f.at("artifacts").items()) check(a);
    for (const auto& t : m.at("tables")) check(t);
  } catch (const json::exception& e) {
    problems.push_back(std::string("malformed manifest: ") + e.what());
  }
  return problems;
}

std::filesystem::path manifest_artifact(const std::filesystem::path& manifest_path, std::string_view detector,
                                        std::string_view subject) {
  json m;
  try {
    m = json::parse(read_file_bytes(manifest_path));
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
  for (const auto& f : m.value("folds", json::array())) {
    if (f.value("detector", "") != detector || f.value("subject", "") != subject) continue;
    if (f.value("status", "") != "ok") throw DataError("fold " + std::string(subject) + " of " + std::string(detector) + " failed");
    const auto& arts = f.at("artifacts");
    if (!arts.contains("model")) throw DataError("fold has no model artifact");
    return manifest_path.parent_path() / arts["model"].at("path").get<std::string>();
  }
  throw DataError("manifest has no fold '" + std::string(subject) + "' for detector '" + std::string(detector) + "'");
}

std::array<double, kWindowValues> read_window_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("cannot open " + path.string());
  std::array<double, kWindowValues> out{};
  std::string line;
  std::size_t row = 0, lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::array<double, 3> v{};
    std::size_t col = 0, pos = 0;
    bool numeric = true;
    while (pos <= line.size() && numeric) {
      auto end = line.find(',', pos);
      if (end == std::string::npos) end = line.size();
      std::string field = line.substr(pos, end - pos);
      field.erase(0, field.find_first_not_of(" \t"));
      field.erase(field.find_last_not_of(" \t") + 1);
      double x = 0;
      const auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), x);
      if (ec != std::errc() || p != field.data() + field.size() || !std::isfinite(x)) numeric = false;
      else if (col < 3) v[col] = x;
      ++col;
      pos = end + 1;
    }
    if (!numeric) {
      if (row == 0 && lineno == 1) continue;  // header
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected three numbers");
    }
    if (col != 3) throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 3 columns, got " + std::to_string(col));
    if (row == kWindowLength) throw DataError(path.string() + ": more than 60 rows");
    for (std::size_t a = 0; a < 3; ++a) out[row * kAxes + a] = v[a];
    ++row;
  }
  if (row != kWindowLength)
    throw DataError(path.string() + ": expected 60 rows, got " + std::to_string(row));
  return out;
}

}  // namespace gaitsep
