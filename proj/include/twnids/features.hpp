#pragma once

// The 20 host-window features. Every src/dst pair is folded into
// max/min/abs-difference form so a sample and its src/dst mirror produce the
// same vector. No normalization happens here; scaling is left to the
// trainable input activations.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "twnids/errors.hpp"
#include "twnids/flow.hpp"
#include "twnids/text_io.hpp"
#include "twnids/window.hpp"

namespace twnids {

inline constexpr std::size_t kFeatureCount = 20;
inline constexpr double kStabilizer = 1e-4;

struct FeatureVector {
  std::array<double, kFeatureCount> values{};
  Protocol protocol = Protocol::Other;

  // 1-based, matching the feature numbering.
  double f(int id) const { return values.at(static_cast<std::size_t>(id - 1)); }

  std::array<double, kProtocolCount> protocol_mask() const {
    std::array<double, kProtocolCount> m{};
    m[index_of(protocol)] = 1.0;
    return m;
  }

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

inline FeatureVector extract(const WindowedSample& s) {
  const auto& fl = s.flow;
  if (!std::isfinite(fl.duration) || fl.duration < 0.0)
    throw InvariantError("duration must be finite and non-negative");
  if (s.new_port_src > 1 || s.new_port_dst > 1) throw InvariantError("new-port flags must be 0 or 1");

  const double dur = fl.duration;
  const double sp = static_cast<double>(fl.src_packets);
  const double dp = static_cast<double>(fl.dst_packets);
  const double sb = static_cast<double>(fl.src_bytes);
  const double db = static_cast<double>(fl.dst_bytes);
  const double sfc = s.src_flow_count;
  const double dfc = s.dst_flow_count;
  const double spc = s.src_port_count;
  const double dpc = s.dst_port_count;

  const double src_bpp = sb / (sp + kStabilizer);
  const double dst_bpp = db / (dp + kStabilizer);
  const double src_ratio = spc / (sfc + kStabilizer);
  const double dst_ratio = dpc / (dfc + kStabilizer);

  FeatureVector v;
  v.protocol = fl.protocol;
  v.values = {
      dur,
      std::abs(sp - dp),
      std::abs(sb - db),
      dur / (sb + db + kStabilizer),
      dur / (sp + dp + kStabilizer),
      std::max(sp, dp),
      std::min(sp, dp),
      std::max(sb, db),
      std::min(sb, db),
      std::max(src_bpp, dst_bpp),
      std::min(src_bpp, dst_bpp),
      0.5 * (double(s.new_port_src) + double(s.new_port_dst)),
      std::max(sfc, dfc),
      std::min(sfc, dfc),
      std::max(spc, dpc),
      std::min(spc, dpc),
      std::abs(sfc - dfc),
      std::abs(spc - dpc),
      std::max(src_ratio, dst_ratio),
      std::min(src_ratio, dst_ratio),
  };
  return v;
}

// Mirror a sample: swap every src/dst quantity.
inline WindowedSample swap_src_dst(WindowedSample s) {
  auto& f = s.flow;
  std::swap(f.src_ip, f.dst_ip);
  std::swap(f.src_port, f.dst_port);
  std::swap(f.src_packets, f.dst_packets);
  std::swap(f.src_bytes, f.dst_bytes);
  std::swap(s.new_port_src, s.new_port_dst);
  std::swap(s.src_flow_count, s.dst_flow_count);
  std::swap(s.src_port_count, s.dst_port_count);
  std::swap(s.src_aggregates, s.dst_aggregates);
  return s;
}

// Input reference: 1..20 are features, 0 is the zero-duration flag.
using FeatureId = int;
inline constexpr FeatureId kZeroLengthFlag = 0;

inline void check_feature_id(FeatureId id) {
  if (id < 0 || id > static_cast<int>(kFeatureCount))
    throw ConfigError("unknown feature id " + std::to_string(id));
}

inline double feature_value(const FeatureVector& v, FeatureId id) {
  check_feature_id(id);
  if (id == kZeroLengthFlag) return v.values[0] == 0.0 ? 1.0 : 0.0;
  return v.values[static_cast<std::size_t>(id - 1)];
}

inline std::vector<double> select(const FeatureVector& v, std::span<const FeatureId> ids) {
  std::vector<double> out;
  out.reserve(ids.size());
  for (FeatureId id : ids) out.push_back(feature_value(v, id));
  return out;
}

// Feature matrix with labels, the unit of training data.
struct LabeledFeatures {
  std::vector<FeatureVector> rows;
  std::vector<std::string> labels;

  std::size_t size() const { return rows.size(); }
};

inline LabeledFeatures extract_all(const std::vector<WindowedSample>& samples) {
  LabeledFeatures out;
  out.rows.reserve(samples.size());
  out.labels.reserve(samples.size());
  for (const auto& s : samples) {
    out.rows.push_back(extract(s));
    out.labels.push_back(s.flow.label);
  }
  return out;
}

inline void write_features(std::ostream& out, const LabeledFeatures& data) {
  for (std::size_t i = 1; i <= kFeatureCount; ++i) out << 'f' << i << ',';
  out << "mask_tcp,mask_udp,mask_other,label\n";
  for (std::size_t r = 0; r < data.size(); ++r) {
    const auto& v = data.rows[r];
    for (double x : v.values) out << format_double(x) << ',';
    const auto m = v.protocol_mask();
    out << m[0] << ',' << m[1] << ',' << m[2] << ',' << csv_escape(data.labels[r]) << '\n';
  }
}

inline void write_features(const std::string& path, const LabeledFeatures& data) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  write_features(out, data);
}

inline LabeledFeatures read_features(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("feature file is empty");
  const auto header = split_csv_line(line);
  if (header.size() != kFeatureCount + 4 || trim(header[0]) != "f1" || trim(header.back()) != "label")
    throw SchemaError("unexpected feature file header");
  LabeledFeatures out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) throw RowError(line_no, "wrong field count");
    FeatureVector v;
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
      const auto x = parse_double(cells[i]);
      if (!x || !std::isfinite(*x)) throw RowError(line_no, "bad f" + std::to_string(i + 1));
      v.values[i] = *x;
    }
    int hot = -1;
    for (std::size_t k = 0; k < kProtocolCount; ++k) {
      const auto m = parse_int<int>(cells[kFeatureCount + k]);
      if (!m || (*m != 0 && *m != 1)) throw RowError(line_no, "bad protocol mask");
      if (*m == 1) {
        if (hot >= 0) throw RowError(line_no, "protocol mask is not one-hot");
        hot = static_cast<int>(k);
      }
    }
    if (hot < 0) throw RowError(line_no, "protocol mask is not one-hot");
    v.protocol = kProtocols[static_cast<std::size_t>(hot)];
    out.rows.push_back(v);
    out.labels.emplace_back(trim(cells.back()));
  }
  return out;
}

inline LabeledFeatures read_features(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open feature file: " + path);
  return read_features(in);
}

}  // namespace twnids
