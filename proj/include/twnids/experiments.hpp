#pragma once

// Experiment protocols built on top of model training and the metric suite:
//
//  * in-dataset validation: train on a seeded 80% split, evaluate on the
//    held-out part and on the whole set;
//  * generalization: train on dataset A, score dataset B untouched;
//  * retraining: train on A, then continue training on B, and measure how
//    much of A is forgotten.

#include <algorithm>
#include <cstdint>
#include <exception>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "twnids/errors.hpp"
#include "twnids/features.hpp"
#include "twnids/metrics.hpp"
#include "twnids/model.hpp"
#include "twnids/text_io.hpp"

namespace twnids {

struct ExperimentConfig {
  ModelSpec spec;
  std::vector<std::string> classes = default_classes();
  TrainConfig train;  // train.seed is replaced by each run's seed
  std::vector<std::uint64_t> seeds{1, 2, 3, 4};
  double train_fraction = 0.8;
  // Attack classes to score across datasets; default: attacks present in both.
  std::optional<std::vector<std::string>> shared_attacks;
  std::size_t workers = 1;  // seeds run concurrently on this many threads
};

// Runs fn(i) for i in [0, n) on up to `workers` threads. Each index owns its
// own output slot, so results do not depend on scheduling.
template <typename Fn>
void for_each_index(std::size_t n, std::size_t workers, Fn fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct Dispersion {
  double min = std::numeric_limits<double>::infinity();
  double max = -std::numeric_limits<double>::infinity();
  double mean = 0.0;
};

inline Dispersion dispersion(const std::vector<double>& v) {
  Dispersion d;
  if (v.empty()) return {0.0, 0.0, 0.0};
  for (double x : v) {
    d.min = std::min(d.min, x);
    d.max = std::max(d.max, x);
    d.mean += x;
  }
  d.mean /= static_cast<double>(v.size());
  return d;
}

inline std::set<std::string> present_labels(const LabeledFeatures& d) {
  return {d.labels.begin(), d.labels.end()};
}

inline std::vector<std::string> resolve_shared_attacks(const LabeledFeatures& a, const LabeledFeatures& b,
                                                       const ExperimentConfig& cfg) {
  std::vector<std::string> shared;
  if (cfg.shared_attacks) {
    shared = *cfg.shared_attacks;
    for (const auto& s : shared)
      if (std::find(cfg.classes.begin(), cfg.classes.end(), s) == cfg.classes.end() || s == kBenignClass)
        throw ProtocolError("shared attack class '" + s + "' is not an attack class of the class table");
  } else {
    const auto in_a = present_labels(a);
    const auto in_b = present_labels(b);
    for (const auto& c : cfg.classes)
      if (c != kBenignClass && in_a.count(c) && in_b.count(c)) shared.push_back(c);
  }
  if (shared.empty()) throw ProtocolError("the two datasets share no attack class");
  return shared;
}

// Model trained on a seeded split of one dataset.
struct TrainedRun {
  Model model;
  std::vector<EpochMetrics> history;
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> holdout_rows;
};

inline TrainConfig seeded(TrainConfig t, std::uint64_t seed, std::size_t epochs) {
  t.seed = seed;
  t.epochs = epochs;
  return t;
}

// Builds the model (activation knots placed from the training split) and
// trains it; `monitor` is the per-epoch evaluation set (held-out split when
// null).
inline TrainedRun train_on_split(const LabeledFeatures& data, const ExperimentConfig& cfg, std::uint64_t seed,
                                 std::size_t epochs, const EncodedDataset* monitor = nullptr) {
  const auto encoded = encode(cfg.spec, data, cfg.classes);
  TrainedRun run;
  std::tie(run.train_rows, run.holdout_rows) = split_indices(data.size(), cfg.train_fraction, seed);
  std::vector<FeatureVector> init;
  init.reserve(run.train_rows.size());
  for (auto i : run.train_rows) init.push_back(data.rows[i]);
  run.model = build(cfg.spec, seed, init);
  const auto train_part = subset(encoded, run.train_rows);
  const auto holdout = subset(encoded, run.holdout_rows);
  run.history = train(run.model, train_part, monitor ? monitor : &holdout, seeded(cfg.train, seed, epochs));
  return run;
}

inline ConfusionMatrix evaluate(const Model& m, const EncodedDataset& d, const std::vector<std::string>& classes) {
  const auto pred = predict(m, d);
  return confusion(pred, d.label, classes);
}

struct GeneralizationRow {
  std::uint64_t seed = 0;
  double train_accuracy = 0.0;  // entire training dataset (train + validation)
  std::map<std::string, double> test_recall;
  Rate test_cad;
  double test_accuracy = 0.0;
  ConfusionMatrix test_confusion;
  std::vector<EpochMetrics> history;
};

struct GeneralizationReport {
  std::vector<std::string> shared_attacks;
  std::vector<GeneralizationRow> rows;

  std::map<std::string, Dispersion> summary() const {
    std::map<std::string, std::vector<double>> cols;
    for (const auto& r : rows) {
      cols["train_accuracy"].push_back(r.train_accuracy);
      for (const auto& [k, v] : r.test_recall) cols[k + "_recall"].push_back(v);
      cols["cad"].push_back(r.test_cad.value);
      cols["test_accuracy"].push_back(r.test_accuracy);
    }
    std::map<std::string, Dispersion> out;
    for (const auto& [k, v] : cols) out[k] = dispersion(v);
    return out;
  }
};

// With `pretrained`, that model is scored instead of training one per seed
// (a single row carrying `pretrained_seed`).
inline GeneralizationReport run_generalization(const LabeledFeatures& train_set, const LabeledFeatures& test_set,
                                               const ExperimentConfig& cfg, const Model* pretrained = nullptr,
                                               std::uint64_t pretrained_seed = 0) {
  GeneralizationReport rep;
  rep.shared_attacks = resolve_shared_attacks(train_set, test_set, cfg);
  const auto& spec = pretrained ? pretrained->spec : cfg.spec;
  const auto train_all = encode(spec, train_set, cfg.classes);
  const auto test_all = encode(spec, test_set, cfg.classes);

  auto score = [&](const Model& model, GeneralizationRow& row) {
    row.train_accuracy = accuracy(model, train_all);
    row.test_confusion = evaluate(model, test_all, cfg.classes);
    const auto m = metric_report(row.test_confusion, rep.shared_attacks);
    for (const auto& a : rep.shared_attacks) row.test_recall[a] = m.for_class(a).recall.value;
    row.test_cad = m.cad;
    row.test_accuracy = m.accuracy;
  };

  if (pretrained) {
    rep.rows.resize(1);
    rep.rows[0].seed = pretrained_seed;
    score(*pretrained, rep.rows[0]);
    return rep;
  }
  rep.rows.resize(cfg.seeds.size());
  for_each_index(cfg.seeds.size(), cfg.workers, [&](std::size_t i) {
    auto& row = rep.rows[i];
    row.seed = cfg.seeds[i];
    auto run = train_on_split(train_set, cfg, row.seed, cfg.train.epochs, &test_all);
    row.history = std::move(run.history);
    score(run.model, row);
  });
  return rep;
}

inline void write_generalization_csv(std::ostream& out, const GeneralizationReport& r) {
  out << "seed,train_accuracy";
  for (const auto& a : r.shared_attacks) out << ',' << a << "_recall";
  out << ",cad,test_accuracy\n";
  for (const auto& row : r.rows) {
    out << row.seed << ',' << format_double(row.train_accuracy);
    for (const auto& a : r.shared_attacks) out << ',' << format_double(row.test_recall.at(a));
    out << ',' << format_double(row.test_cad.value) << ',' << format_double(row.test_accuracy) << '\n';
  }
}

inline void write_summary_csv(std::ostream& out, const std::map<std::string, Dispersion>& s) {
  out << "column,min,max,mean\n";
  for (const auto& [k, d] : s)
    out << k << ',' << format_double(d.min) << ',' << format_double(d.max) << ',' << format_double(d.mean) << '\n';
}

struct RetrainPhase {
  std::size_t epochs = 0;
  double first_accuracy = 0.0;
  double second_accuracy = 0.0;
  std::map<std::string, double> first_recall;
  Rate first_cad;
};

struct RetrainRow {
  std::uint64_t seed = 0;
  RetrainPhase phase1;  // after training on the first dataset
  RetrainPhase phase2;  // after continuing on the second dataset
  Model model;          // final model
};

struct RetrainReport {
  std::vector<std::string> shared_attacks;
  std::vector<RetrainRow> rows;
};

struct RetrainConfig {
  std::size_t epochs_first = 8;
  std::size_t epochs_second = 4;
};

// Phase 1 trains on a seeded split of `first` (or starts from `pretrained`,
// whose optimizer state carries over); phase 2 continues the same model and
// optimizer on a split of `second` drawn with seed + 1.
inline RetrainReport run_retraining(const LabeledFeatures& first, const LabeledFeatures& second,
                                    const ExperimentConfig& cfg, const RetrainConfig& rc = {},
                                    const Model* pretrained = nullptr, std::uint64_t pretrained_seed = 0) {
  RetrainReport rep;
  rep.shared_attacks = resolve_shared_attacks(first, second, cfg);
  const auto& spec = pretrained ? pretrained->spec : cfg.spec;
  const auto first_all = encode(spec, first, cfg.classes);
  const auto second_all = encode(spec, second, cfg.classes);

  auto measure = [&](const Model& m, std::size_t epochs) {
    RetrainPhase p;
    p.epochs = epochs;
    const auto cm = evaluate(m, first_all, cfg.classes);
    const auto rep1 = metric_report(cm, rep.shared_attacks);
    p.first_accuracy = rep1.accuracy;
    for (const auto& a : rep.shared_attacks) p.first_recall[a] = rep1.for_class(a).recall.value;
    p.first_cad = rep1.cad;
    p.second_accuracy = accuracy(m, second_all);
    return p;
  };

  const std::vector<std::uint64_t> seeds = pretrained ? std::vector<std::uint64_t>{pretrained_seed} : cfg.seeds;
  rep.rows.resize(seeds.size());
  for_each_index(seeds.size(), cfg.workers, [&](std::size_t i) {
    auto& row = rep.rows[i];
    row.seed = seeds[i];
    if (pretrained) {
      row.model = *pretrained;
      row.phase1 = measure(row.model, 0);
    } else {
      row.model = train_on_split(first, cfg, row.seed, rc.epochs_first, &second_all).model;
      row.phase1 = measure(row.model, rc.epochs_first);
    }
    if (rc.epochs_second > 0) {
      const auto [rows2, hold2] = split_indices(second.size(), cfg.train_fraction, row.seed + 1);
      const auto part2 = subset(second_all, rows2);
      train(row.model, part2, &first_all, seeded(cfg.train, row.seed + 1, rc.epochs_second));
    }
    row.phase2 = measure(row.model, rc.epochs_second);
  });
  return rep;
}

// Long format: one row per seed and phase.
inline void write_retrain_csv(std::ostream& out, const RetrainReport& r) {
  out << "seed,phase,epochs,first_accuracy,second_accuracy";
  for (const auto& a : r.shared_attacks) out << ",first_" << a << "_recall";
  out << ",first_cad\n";
  for (const auto& row : r.rows) {
    for (int phase = 1; phase <= 2; ++phase) {
      const auto& p = phase == 1 ? row.phase1 : row.phase2;
      out << row.seed << ',' << phase << ',' << p.epochs << ',' << format_double(p.first_accuracy) << ','
          << format_double(p.second_accuracy);
      for (const auto& a : r.shared_attacks) out << ',' << format_double(p.first_recall.at(a));
      out << ',' << format_double(p.first_cad.value) << '\n';
    }
  }
}

}  // namespace twnids
