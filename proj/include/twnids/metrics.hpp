#pragma once

// Confusion matrix and the derived metric suite: accuracy, per-class
// recall/precision/F1 and the correct attack detections rate (CAD), i.e.
// sum of attack true positives over sum of attack predictions.

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "twnids/errors.hpp"
#include "twnids/text_io.hpp"

namespace twnids {

inline constexpr std::string_view kBenignClass = "Benign";

class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::vector<std::string> classes)
      : classes_(std::move(classes)), counts_(classes_.size() * classes_.size(), 0) {}

  // Rows are true classes, columns predicted classes.
  static ConfusionMatrix from_counts(std::vector<std::string> classes, std::vector<std::uint64_t> counts) {
    ConfusionMatrix m(std::move(classes));
    if (counts.size() != m.counts_.size()) throw ConfigError("confusion count matrix has the wrong size");
    m.counts_ = std::move(counts);
    return m;
  }

  const std::vector<std::string>& classes() const { return classes_; }
  std::size_t size() const { return classes_.size(); }

  std::size_t index(const std::string& name) const {
    const auto it = std::find(classes_.begin(), classes_.end(), name);
    if (it == classes_.end()) throw ConfigError("unknown class '" + name + "'");
    return static_cast<std::size_t>(it - classes_.begin());
  }

  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * size() + pred]; }
  void add(std::size_t truth, std::size_t pred, std::uint64_t n = 1) { counts_[truth * size() + pred] += n; }

  std::uint64_t row_sum(std::size_t truth) const {
    std::uint64_t s = 0;
    for (std::size_t p = 0; p < size(); ++p) s += at(truth, p);
    return s;
  }

  std::uint64_t col_sum(std::size_t pred) const {
    std::uint64_t s = 0;
    for (std::size_t t = 0; t < size(); ++t) s += at(t, pred);
    return s;
  }

  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (auto c : counts_) s += c;
    return s;
  }

  std::uint64_t trace() const {
    std::uint64_t s = 0;
    for (std::size_t i = 0; i < size(); ++i) s += at(i, i);
    return s;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::vector<std::string> classes_;
  std::vector<std::uint64_t> counts_;
};

inline ConfusionMatrix confusion(std::span<const std::uint32_t> pred, std::span<const std::uint32_t> truth,
                                 const std::vector<std::string>& classes) {
  if (pred.size() != truth.size()) throw ConfigError("prediction and truth lengths differ");
  ConfusionMatrix m(classes);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= classes.size() || truth[i] >= classes.size()) throw ConfigError("class id out of range");
    m.add(truth[i], pred[i]);
  }
  return m;
}

inline ConfusionMatrix confusion(std::span<const std::string> pred, std::span<const std::string> truth,
                                 const std::vector<std::string>& classes) {
  if (pred.size() != truth.size()) throw ConfigError("prediction and truth lengths differ");
  ConfusionMatrix m(classes);
  for (std::size_t i = 0; i < pred.size(); ++i) m.add(m.index(truth[i]), m.index(pred[i]));
  return m;
}

struct Rate {
  double value = 0.0;
  bool degenerate = false;  // 0/0, reported as 0
};

inline Rate safe_ratio(double num, double den) {
  if (den == 0.0) return {0.0, true};
  return {num / den, false};
}

// Every class except Benign.
inline std::vector<std::string> attack_classes(const std::vector<std::string>& classes) {
  std::vector<std::string> out;
  for (const auto& c : classes)
    if (c != kBenignClass) out.push_back(c);
  return out;
}

inline Rate cad(const ConfusionMatrix& m, const std::vector<std::string>& attacks) {
  double tp = 0.0, found = 0.0;
  for (const auto& a : attacks) {
    if (a == kBenignClass) throw ConfigError("CAD attack classes must not include Benign");
    const auto i = m.index(a);
    tp += static_cast<double>(m.at(i, i));
    found += static_cast<double>(m.col_sum(i));
  }
  return safe_ratio(tp, found);
}

struct ClassMetrics {
  std::string name;
  std::uint64_t support = 0;
  std::uint64_t predicted = 0;
  std::uint64_t true_positive = 0;
  Rate recall;
  Rate precision;
  Rate f1;
};

inline ClassMetrics class_metrics(const ConfusionMatrix& m, std::size_t c) {
  ClassMetrics r;
  r.name = m.classes()[c];
  r.support = m.row_sum(c);
  r.predicted = m.col_sum(c);
  r.true_positive = m.at(c, c);
  r.recall = safe_ratio(static_cast<double>(r.true_positive), static_cast<double>(r.support));
  r.precision = safe_ratio(static_cast<double>(r.true_positive), static_cast<double>(r.predicted));
  const double ps = r.recall.value + r.precision.value;
  if (ps == 0.0) {
    r.f1 = {0.0, true};
  } else {
    r.f1 = {2.0 * r.recall.value * r.precision.value / ps, r.recall.degenerate || r.precision.degenerate};
  }
  return r;
}

struct MetricReport {
  double accuracy = 0.0;
  std::vector<ClassMetrics> per_class;
  Rate cad;
  std::vector<std::string> attack_classes;
  std::map<std::string, std::string> metadata;  // seed, model, datasets, window length

  const ClassMetrics& for_class(const std::string& name) const {
    for (const auto& c : per_class)
      if (c.name == name) return c;
    throw ConfigError("no metrics for class '" + name + "'");
  }
};

inline MetricReport metric_report(const ConfusionMatrix& m, const std::vector<std::string>& attacks) {
  MetricReport r;
  r.accuracy = safe_ratio(static_cast<double>(m.trace()), static_cast<double>(m.total())).value;
  for (std::size_t c = 0; c < m.size(); ++c) r.per_class.push_back(class_metrics(m, c));
  r.attack_classes = attacks;
  r.cad = cad(m, attacks);
  return r;
}

inline MetricReport metric_report(const ConfusionMatrix& m) { return metric_report(m, attack_classes(m.classes())); }

// Per-class CSV: one row per class, then an accuracy row (support = total,
// true_positive = trace) and a CAD row (sums over the attack classes).
inline void write_report_csv(std::ostream& out, const MetricReport& r) {
  out << "name,support,predicted,true_positive,recall,precision,f1,value,degenerate\n";
  std::uint64_t total = 0, hits = 0, attack_found = 0, attack_hits = 0;
  for (const auto& c : r.per_class) {
    out << csv_escape(c.name) << ',' << c.support << ',' << c.predicted << ',' << c.true_positive << ','
        << format_double(c.recall.value) << ',' << format_double(c.precision.value) << ','
        << format_double(c.f1.value) << ",," << (c.recall.degenerate || c.precision.degenerate ? 1 : 0) << '\n';
    total += c.support;
    hits += c.true_positive;
    if (std::find(r.attack_classes.begin(), r.attack_classes.end(), c.name) != r.attack_classes.end()) {
      attack_found += c.predicted;
      attack_hits += c.true_positive;
    }
  }
  out << "accuracy," << total << ",," << hits << ",,,," << format_double(r.accuracy) << ',' << (total == 0 ? 1 : 0)
      << '\n';
  out << "cad,," << attack_found << ',' << attack_hits << ",,,," << format_double(r.cad.value) << ','
      << (r.cad.degenerate ? 1 : 0) << '\n';
  for (const auto& [k, v] : r.metadata) out << "# " << k << '=' << v << '\n';
}

// Text table: counts with row totals, then Total Found, True Positive,
// Recall, Precision and F1-Score rows.
inline std::string render_confusion(const ConfusionMatrix& m) {
  std::vector<std::string> head{""};
  head.insert(head.end(), m.classes().begin(), m.classes().end());
  head.push_back("Amounts");
  std::vector<std::vector<std::string>> rows{head};
  for (std::size_t t = 0; t < m.size(); ++t) {
    std::vector<std::string> row{m.classes()[t]};
    for (std::size_t p = 0; p < m.size(); ++p) row.push_back(std::to_string(m.at(t, p)));
    row.push_back(std::to_string(m.row_sum(t)));
    rows.push_back(std::move(row));
  }
  auto fixed2 = [](double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << v;
    return s.str();
  };
  std::vector<std::string> found{"Total Found"}, tp{"True Positive"}, rec{"Recall"}, prec{"Precision"},
      f1{"F1-Score"};
  for (std::size_t c = 0; c < m.size(); ++c) {
    const auto cm = class_metrics(m, c);
    found.push_back(std::to_string(cm.predicted));
    tp.push_back(std::to_string(cm.true_positive));
    rec.push_back(fixed2(cm.recall.value));
    prec.push_back(fixed2(cm.precision.value));
    f1.push_back(fixed2(cm.f1.value));
  }
  for (auto* r : {&found, &tp, &rec, &prec, &f1}) {
    r->push_back("");
    rows.push_back(*r);
  }
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  std::ostringstream out;
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (i == 0) out << std::left << std::setw(static_cast<int>(width[i])) << r[i];
      else out << " | " << std::right << std::setw(static_cast<int>(width[i])) << r[i];
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace twnids
