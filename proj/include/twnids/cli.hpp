#pragma once

// Command-line front end: window, featurize, train, eval, generalize,
// retrain and synth. Every subcommand writes its outputs under --out with
// fixed file names plus a manifest.json holding every resolved option; the
// manifest can be passed back with --config to rerun the command.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "twnids/checkpoint.hpp"
#include "twnids/errors.hpp"
#include "twnids/experiments.hpp"
#include "twnids/features.hpp"
#include "twnids/ingest.hpp"
#include "twnids/metrics.hpp"
#include "twnids/model.hpp"
#include "twnids/synth.hpp"
#include "twnids/text_io.hpp"
#include "twnids/window.hpp"

namespace twnids::cli {

using nlohmann::json;

inline constexpr std::string_view kManifestFormat = "twnids-manifest";
inline constexpr int kManifestVersion = 1;

// Tracks the options of one subcommand so their resolved values can be
// written to the manifest.
class OptionTable {
 public:
  explicit OptionTable(CLI::App* app) : app_(app) {}

  template <typename T>
  CLI::Option* add(const std::string& name, T& var, const std::string& help, bool assumed_default = false) {
    getters_.emplace_back(name, [&var] { return json(var); });
    if (assumed_default) assumed_.push_back(name);
    return app_->add_option("--" + name, var, help)->capture_default_str();
  }

  CLI::Option* flag(const std::string& name, bool& var, const std::string& help) {
    getters_.emplace_back(name, [&var] { return json(var); });
    return app_->add_flag("--" + name, var, help);
  }

  json values() const {
    json j = json::object();
    for (const auto& [name, get] : getters_) j[name] = get();
    return j;
  }

  const std::vector<std::string>& assumed_defaults() const { return assumed_; }
  CLI::App* app() const { return app_; }

 private:
  CLI::App* app_;
  std::vector<std::pair<std::string, std::function<json()>>> getters_;
  std::vector<std::string> assumed_;
};

struct TrainingOptions {
  std::string spec = "TWNet5{32,16}";
  std::size_t epochs = 8;
  std::size_t batch_size = 512;
  double lr = 5e-4;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double train_fraction = 0.8;
  std::string classes = "Benign,DoS,DDoS,Password,PortScan,XSS";
  std::string class_weights;

  void add_to(OptionTable& t, bool with_epochs = true) {
    t.add("spec", spec, "model preset name (e.g. TWNet5{32,16}) or JSON spec file");
    if (with_epochs) t.add("epochs", epochs, "training epochs")->check(CLI::NonNegativeNumber);
    t.add("batch-size", batch_size, "mini-batch size", true)->check(CLI::PositiveNumber);
    t.add("lr", lr, "AdamW learning rate")->check(CLI::PositiveNumber);
    t.add("weight-decay", weight_decay, "AdamW decoupled weight decay")->check(CLI::NonNegativeNumber);
    t.add("beta1", beta1, "AdamW first-moment decay", true)->check(CLI::Range(0.0, 1.0));
    t.add("beta2", beta2, "AdamW second-moment decay", true)->check(CLI::Range(0.0, 1.0));
    t.add("adam-eps", adam_eps, "AdamW epsilon", true)->check(CLI::PositiveNumber);
    t.add("train-fraction", train_fraction, "training share of the seeded split")->check(CLI::Range(0.0, 1.0));
    t.add("classes", classes, "comma-separated class table");
    t.add("class-weights", class_weights, "comma-separated loss weights, one per class (default: none)");
  }

  std::vector<std::string> class_table() const {
    auto c = split_list(classes);
    if (c.size() < 2) throw ConfigError("class table needs at least two classes");
    return c;
  }

  TrainConfig train_config(std::size_t class_count) const {
    TrainConfig t;
    t.epochs = epochs;
    t.batch_size = batch_size;
    t.optimizer.lr = lr;
    t.optimizer.weight_decay = weight_decay;
    t.optimizer.beta1 = beta1;
    t.optimizer.beta2 = beta2;
    t.optimizer.eps = adam_eps;
    if (!class_weights.empty()) {
      for (const auto& w : split_list(class_weights)) {
        const auto v = parse_double(w);
        if (!v || *v < 0.0) throw ConfigError("class weights must be non-negative numbers");
        t.class_weights.push_back(*v);
      }
      if (t.class_weights.size() != class_count)
        throw ConfigError("expected " + std::to_string(class_count) + " class weights, got " +
                          std::to_string(t.class_weights.size()));
    }
    return t;
  }

  ModelSpec model_spec(std::size_t class_count) const {
    if (std::filesystem::is_regular_file(spec)) {
      std::ifstream in(spec);
      json j;
      try {
        in >> j;
      } catch (const json::exception& e) {
        throw ConfigError("cannot parse spec file " + spec + ": " + e.what());
      }
      auto s = spec_from_json(j);
      if (s.class_count != class_count)
        throw ConfigError("spec file declares " + std::to_string(s.class_count) + " classes, class table has " +
                          std::to_string(class_count));
      return s;
    }
    return preset_spec(spec, class_count);
  }
};

inline std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const auto& tok : split_list(s)) {
    const auto v = parse_int<std::uint64_t>(tok);
    if (!v) throw ConfigError("bad seed '" + tok + "'");
    out.push_back(*v);
  }
  if (out.empty()) throw ConfigError("at least one seed is required");
  return out;
}

// Output directory with checked writes.
class OutputDir {
 public:
  explicit OutputDir(const std::string& path) : root_(path) { std::filesystem::create_directories(root_); }

  void write(const std::string& name, const std::function<void(std::ostream&)>& fill) {
    const auto path = root_ / name;
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    fill(out);
    out.close();
    if (!out) throw Error("failed writing " + path.string());
    written_.push_back(name);
  }

  std::string path(const std::string& name) const { return (root_ / name).string(); }
  void record(const std::string& name) { written_.push_back(name); }
  const std::vector<std::string>& written() const { return written_; }

 private:
  std::filesystem::path root_;
  std::vector<std::string> written_;
};

inline void write_manifest(OutputDir& dir, const std::string& subcommand, const OptionTable& opts) {
  json m;
  m["format"] = kManifestFormat;
  m["version"] = kManifestVersion;
  m["subcommand"] = subcommand;
  m["options"] = opts.values();
  m["assumed_defaults"] = opts.assumed_defaults();
  auto outputs = dir.written();
  outputs.push_back("manifest.json");
  m["outputs"] = outputs;
  dir.write("manifest.json", [&](std::ostream& o) { o << m.dump(2) << '\n'; });
}

inline void print_class_table(std::ostream& out, const std::map<std::string, std::size_t>& counts) {
  std::size_t width = 5;
  for (const auto& [k, v] : counts) width = std::max(width, k.size());
  for (const auto& [k, v] : counts) out << "  " << k << std::string(width - k.size() + 2, ' ') << v << '\n';
}

inline std::map<std::string, std::size_t> label_counts(const std::vector<std::string>& labels) {
  std::map<std::string, std::size_t> m;
  for (const auto& l : labels) ++m[l];
  return m;
}

inline void write_epoch_header(std::ostream& o, bool with_seed) {
  o << (with_seed ? "seed," : "") << "epoch,train_loss,train_acc,eval_acc,wall_time\n";
}

inline void write_epoch_rows(std::ostream& o, const std::vector<EpochMetrics>& h, const std::string& prefix = "") {
  for (const auto& e : h)
    o << prefix << e.epoch << ',' << format_double(e.train_loss) << ',' << format_double(e.train_accuracy) << ','
      << format_double(e.eval_accuracy) << ',' << format_double(e.wall_seconds) << '\n';
}

inline void warn_absent(std::ostream& err, const EncodedDataset& d, const std::vector<std::string>& classes) {
  for (auto c : absent_classes(d, classes.size()))
    err << "warning: class '" << classes[c] << "' has no training rows\n";
}

namespace detail {

inline std::string config_value(const std::string& key, const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_number_float()) return format_double(v.get<double>());
  if (v.is_array()) {
    std::string s;
    for (const auto& e : v) s += (s.empty() ? "" : ",") + config_value(key, e);
    return s;
  }
  throw ConfigError("config key '" + key + "' has an unsupported value");
}

// Expands `--config FILE` into flags placed before the command-line flags.
// Options take the last value given, so explicit flags win over the file.
inline std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (path.empty()) return args;
  if (args.empty()) throw ConfigError("--config needs a subcommand before it");

  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse config file " + path + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
  const std::string& sub = args.front();
  json options = j;
  if (j.contains("options")) {
    if (j.contains("subcommand") && j["subcommand"] != sub)
      throw ConfigError("manifest was written by '" + j["subcommand"].get<std::string>() + "', not '" + sub + "'");
    options = j["options"];
  }
  std::vector<std::string> expanded;
  for (const auto& [key, value] : options.items()) {
    // empty strings are unset path/list options
    if (value.is_null() || (value.is_string() && value.get<std::string>().empty())) continue;
    if (value.is_boolean()) {
      expanded.push_back("--" + key + "=" + (value.get<bool>() ? "true" : "false"));
      continue;
    }
    expanded.push_back("--" + key);
    expanded.push_back(config_value(key, value));
  }
  args.insert(args.begin() + 1, expanded.begin(), expanded.end());
  return args;
}

}  // namespace detail

// Returns the process exit code.
inline int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Traffic-window neural intrusion detection toolkit", "twnids"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.set_version_flag("--version", "twnids 1.0");

  std::string out_dir;
  const auto add_common = [&](OptionTable& t) {
    t.add("out", out_dir, "output directory")->required();
    t.app()->add_option("--config", "JSON config or manifest; flags given on the command line win");
  };

  // window
  auto* c_window = app.add_subcommand("window", "flow CSV -> per-flow host window counts");
  OptionTable o_window(c_window);
  std::string w_input, w_schema, w_on_error = "skip";
  double w_seconds = 60.0;
  std::size_t w_capacity = 0;
  bool w_sort = false;
  add_common(o_window);
  o_window.add("input", w_input, "flow CSV")->required()->check(CLI::ExistingFile);
  o_window.add("schema", w_schema, "schema file mapping source columns (default: canonical columns)")
      ->check(CLI::ExistingFile);
  o_window.add("window-seconds", w_seconds, "sliding window length in seconds", true)->check(CLI::PositiveNumber);
  o_window.add("host-capacity", w_capacity, "max tracked hosts, 0 = unbounded")->check(CLI::NonNegativeNumber);
  o_window.add("on-error", w_on_error, "malformed rows: skip or abort")->check(CLI::IsMember({"skip", "abort"}));
  o_window.flag("sort", w_sort, "sort rows by timestamp instead of rejecting unsorted input");

  // featurize
  auto* c_feat = app.add_subcommand("featurize", "windowed samples -> feature vectors");
  OptionTable o_feat(c_feat);
  std::string f_input;
  add_common(o_feat);
  o_feat.add("input", f_input, "windowed.csv from the window command")->required()->check(CLI::ExistingFile);

  // train
  auto* c_train = app.add_subcommand("train", "train a model on a seeded split of a feature file");
  OptionTable o_train(c_train);
  std::string t_features;
  std::uint64_t t_seed = 1;
  double t_window = 60.0;
  TrainingOptions t_opts;
  add_common(o_train);
  o_train.add("features", t_features, "features.csv")->required()->check(CLI::ExistingFile);
  o_train.add("seed", t_seed, "seed for initialization, split and shuffling");
  o_train.add("window-seconds", t_window, "window length the features were built with (recorded)", true)
      ->check(CLI::PositiveNumber);
  t_opts.add_to(o_train);

  // eval
  auto* c_eval = app.add_subcommand("eval", "score a checkpoint on a feature file");
  OptionTable o_eval(c_eval);
  std::string e_ckpt, e_features;
  add_common(o_eval);
  o_eval.add("checkpoint", e_ckpt, "checkpoint.json")->required()->check(CLI::ExistingFile);
  o_eval.add("features", e_features, "features.csv")->required()->check(CLI::ExistingFile);

  // generalize / retrain share the multi-seed options
  std::string seeds = "1,2,3,4", shared_attacks, x_ckpt;
  std::size_t workers = 1;
  TrainingOptions x_opts;
  auto add_seeded = [&](OptionTable& t, bool with_epochs) {
    add_common(t);
    t.add("seeds", seeds, "comma-separated seeds, one run each");
    t.add("shared-attacks", shared_attacks, "attack classes to score (default: attacks present in both sets)");
    t.add("checkpoint", x_ckpt, "start from this trained checkpoint instead of training per seed")
        ->check(CLI::ExistingFile);
    t.add("workers", workers, "seeds trained concurrently")->check(CLI::PositiveNumber);
    x_opts.add_to(t, with_epochs);
  };

  auto* c_gen = app.add_subcommand("generalize", "train on one dataset, test on another");
  OptionTable o_gen(c_gen);
  std::string g_train, g_test;
  o_gen.add("train-features", g_train, "training dataset features")->required()->check(CLI::ExistingFile);
  o_gen.add("test-features", g_test, "test dataset features")->required()->check(CLI::ExistingFile);
  add_seeded(o_gen, true);

  auto* c_re = app.add_subcommand("retrain", "train on a first dataset, continue on a second");
  OptionTable o_re(c_re);
  std::string r_first, r_second;
  std::size_t r_epochs1 = 8, r_epochs2 = 4;
  o_re.add("first-features", r_first, "first dataset features")->required()->check(CLI::ExistingFile);
  o_re.add("second-features", r_second, "second dataset features")->required()->check(CLI::ExistingFile);
  o_re.add("epochs-first", r_epochs1, "phase 1 epochs")->check(CLI::NonNegativeNumber);
  o_re.add("epochs-second", r_epochs2, "phase 2 epochs")->check(CLI::NonNegativeNumber);
  add_seeded(o_re, false);

  // synth
  auto* c_synth = app.add_subcommand("synth", "generate a labeled synthetic flow CSV");
  OptionTable o_synth(c_synth);
  std::string s_preset = "baseline", s_profile;
  std::size_t s_flows = 100000;
  double s_duration = 3600.0;
  std::uint64_t s_seed = 1;
  add_common(o_synth);
  o_synth.add("preset", s_preset, "baseline, shifted_benign or alt_signature")
      ->check(CLI::IsMember({"baseline", "shifted_benign", "alt_signature"}));
  o_synth.add("profile", s_profile, "profile overrides (<profile>.<field> = value)")->check(CLI::ExistingFile);
  o_synth.add("flows", s_flows, "flows in the preset (count-based profiles)")->check(CLI::NonNegativeNumber);
  o_synth.add("duration", s_duration, "run length in seconds")->check(CLI::NonNegativeNumber);
  o_synth.add("seed", s_seed, "generator seed");

  try {
    auto args = detail::expand_config(std::vector<std::string>(raw_args.begin(), raw_args.end()));
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (c_window->parsed()) {
      const auto schema = w_schema.empty() ? DatasetSchema::canonical() : DatasetSchema::load(w_schema);
      LoadOptions lo;
      lo.policy = w_on_error == "abort" ? RowErrorPolicy::Abort : RowErrorPolicy::Skip;
      lo.sort = w_sort;
      const auto loaded = load_dataset(w_input, schema, lo);
      for (const auto& e : loaded.report.first_errors) err << "skipped: " << e << '\n';
      WindowConfig wc;
      wc.window_seconds = w_seconds;
      wc.host_capacity = w_capacity;
      WindowDiagnostics diag;
      const auto samples = process_stream(loaded.records, wc, &diag);
      OutputDir dir(out_dir);
      dir.write("windowed.csv", [&](std::ostream& o) { write_windowed(o, samples); });
      write_manifest(dir, "window", o_window);
      out << "rows read: " << loaded.report.rows_read << ", skipped: " << loaded.report.rows_skipped << '\n';
      out << "hosts: " << diag.hosts_created << " (peak " << diag.peak_hosts << ", spilled " << diag.spilled_hosts
          << ")\n";
      out << "samples: " << samples.size() << '\n';
      print_class_table(out, class_table(loaded.records));
      return 0;
    }

    if (c_feat->parsed()) {
      const auto data = extract_all(read_windowed(f_input));
      OutputDir dir(out_dir);
      dir.write("features.csv", [&](std::ostream& o) { write_features(o, data); });
      write_manifest(dir, "featurize", o_feat);
      out << "feature vectors: " << data.size() << '\n';
      print_class_table(out, label_counts(data.labels));
      return 0;
    }

    if (c_train->parsed()) {
      const auto classes = t_opts.class_table();
      ExperimentConfig cfg;
      cfg.classes = classes;
      cfg.spec = t_opts.model_spec(classes.size());
      cfg.train = t_opts.train_config(classes.size());
      cfg.train_fraction = t_opts.train_fraction;
      const auto data = read_features(t_features);
      const auto encoded = encode(cfg.spec, data, classes);
      const auto [rows, hold] = split_indices(data.size(), cfg.train_fraction, t_seed);
      warn_absent(err, subset(encoded, rows), classes);
      auto run = train_on_split(data, cfg, t_seed, cfg.train.epochs);

      OutputDir dir(out_dir);
      save_checkpoint({run.model, classes, t_window, t_seed}, dir.path("checkpoint.json"));
      dir.record("checkpoint.json");
      const auto holdout = subset(encoded, run.holdout_rows);
      const auto cm = evaluate(run.model, holdout, classes);
      auto report = metric_report(cm);
      report.metadata = {{"seed", std::to_string(t_seed)}, {"model", cfg.spec.name},
                         {"dataset", t_features}, {"split", "holdout"},
                         {"window_seconds", format_double(t_window)}};
      dir.write("metrics.csv", [&](std::ostream& o) {
        write_epoch_header(o, false);
        write_epoch_rows(o, run.history);
      });
      dir.write("confusion.txt", [&](std::ostream& o) { o << render_confusion(cm); });
      dir.write("report.csv", [&](std::ostream& o) { write_report_csv(o, report); });
      dir.write("activations.csv", [&](std::ostream& o) {
        write_activation_curves(o, run.model, subset(encoded, run.train_rows));
      });
      write_manifest(dir, "train", o_train);
      out << "model: " << cfg.spec.name << ", train rows: " << run.train_rows.size()
          << ", holdout rows: " << run.holdout_rows.size() << '\n';
      out << "train accuracy: " << format_double(accuracy(run.model, subset(encoded, run.train_rows)))
          << ", holdout accuracy: " << format_double(report.accuracy) << '\n';
      return 0;
    }

    if (c_eval->parsed()) {
      const auto ckpt = load_checkpoint(e_ckpt);
      const auto data = read_features(e_features);
      const auto encoded = encode(ckpt.model.spec, data, ckpt.classes);
      const auto cm = evaluate(ckpt.model, encoded, ckpt.classes);
      auto report = metric_report(cm);
      report.metadata = {{"seed", std::to_string(ckpt.seed)}, {"model", ckpt.model.spec.name},
                         {"dataset", e_features}, {"window_seconds", format_double(ckpt.window_seconds)}};
      OutputDir dir(out_dir);
      dir.write("confusion.txt", [&](std::ostream& o) { o << render_confusion(cm); });
      dir.write("report.csv", [&](std::ostream& o) { write_report_csv(o, report); });
      write_manifest(dir, "eval", o_eval);
      out << render_confusion(cm);
      out << "accuracy: " << format_double(report.accuracy) << ", CAD: " << format_double(report.cad.value) << '\n';
      return 0;
    }

    if (c_gen->parsed() || c_re->parsed()) {
      const bool gen = c_gen->parsed();
      const auto classes = x_opts.class_table();
      ExperimentConfig cfg;
      cfg.classes = classes;
      cfg.train = x_opts.train_config(classes.size());
      cfg.train_fraction = x_opts.train_fraction;
      cfg.seeds = parse_seeds(seeds);
      cfg.workers = workers;
      if (!shared_attacks.empty()) cfg.shared_attacks = split_list(shared_attacks);
      std::optional<Checkpoint> ckpt;
      if (!x_ckpt.empty()) {
        ckpt = load_checkpoint(x_ckpt, classes);
        cfg.spec = ckpt->model.spec;
      } else {
        cfg.spec = x_opts.model_spec(classes.size());
      }
      const Model* pre = ckpt ? &ckpt->model : nullptr;
      const std::uint64_t pre_seed = ckpt ? ckpt->seed : 0;
      OutputDir dir(out_dir);

      if (gen) {
        const auto a = read_features(g_train);
        const auto b = read_features(g_test);
        const auto rep = run_generalization(a, b, cfg, pre, pre_seed);
        dir.write("generalization.csv", [&](std::ostream& o) { write_generalization_csv(o, rep); });
        dir.write("summary.csv", [&](std::ostream& o) { write_summary_csv(o, rep.summary()); });
        dir.write("confusion.txt", [&](std::ostream& o) {
          for (const auto& r : rep.rows) o << "seed " << r.seed << '\n' << render_confusion(r.test_confusion) << '\n';
        });
        dir.write("metrics.csv", [&](std::ostream& o) {
          write_epoch_header(o, true);
          for (const auto& r : rep.rows) write_epoch_rows(o, r.history, std::to_string(r.seed) + ",");
        });
        write_manifest(dir, "generalize", o_gen);
        write_generalization_csv(out, rep);
      } else {
        const auto a = read_features(r_first);
        const auto b = read_features(r_second);
        const auto rep = run_retraining(a, b, cfg, {r_epochs1, r_epochs2}, pre, pre_seed);
        dir.write("retrain.csv", [&](std::ostream& o) { write_retrain_csv(o, rep); });
        write_manifest(dir, "retrain", o_re);
        write_retrain_csv(out, rep);
      }
      return 0;
    }

    if (c_synth->parsed()) {
      auto profiles = preset_profiles(s_preset, s_flows);
      if (!s_profile.empty()) profiles = apply_profile_config(std::move(profiles), KeyValueConfig::load(s_profile));
      const auto flows = generate(profiles, s_duration, s_seed);
      OutputDir dir(out_dir);
      dir.write("flows.csv", [&](std::ostream& o) { write_canonical(o, flows); });
      write_manifest(dir, "synth", o_synth);
      out << "flows: " << flows.size() << '\n';
      print_class_table(out, class_table(flows));
      return 0;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, out, err);
}

}  // namespace twnids::cli
