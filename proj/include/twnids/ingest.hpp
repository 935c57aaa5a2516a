#pragma once

// Flow CSV loading with per-dataset schema mapping. Different NIDS exports
// disagree on column names, duration units and label vocabularies; a
// DatasetSchema captures those differences so every loader produces the same
// FlowRecord stream.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "twnids/errors.hpp"
#include "twnids/flow.hpp"
#include "twnids/text_io.hpp"

namespace twnids {

enum class TimeUnit { Seconds, Milliseconds, Microseconds };

inline double seconds_per(TimeUnit u) {
  switch (u) {
    case TimeUnit::Seconds: return 1.0;
    case TimeUnit::Milliseconds: return 1e-3;
    case TimeUnit::Microseconds: return 1e-6;
  }
  return 1.0;
}

inline TimeUnit parse_time_unit(std::string_view s) {
  s = trim(s);
  if (s == "s") return TimeUnit::Seconds;
  if (s == "ms") return TimeUnit::Milliseconds;
  if (s == "us" || s == "µs") return TimeUnit::Microseconds;
  throw SchemaError("unknown time unit '" + std::string(s) + "' (expected s, ms or us)");
}

inline std::string_view to_string(TimeUnit u) {
  switch (u) {
    case TimeUnit::Seconds: return "s";
    case TimeUnit::Milliseconds: return "ms";
    case TimeUnit::Microseconds: return "us";
  }
  return "s";
}

enum class FlowField : std::size_t {
  Timestamp,
  SrcIp,
  SrcPort,
  DstIp,
  DstPort,
  Protocol,
  Duration,
  SrcPackets,
  DstPackets,
  SrcBytes,
  DstBytes,
  Label,
};

inline constexpr std::size_t kFlowFieldCount = 12;

// Canonical column names, also the column order of the harmonized CSV.
inline constexpr std::array<std::string_view, kFlowFieldCount> kCanonicalColumns{
    "timestamp", "src_ip",      "src_port",    "dst_ip",    "dst_port",  "protocol",
    "duration",  "src_packets", "dst_packets", "src_bytes", "dst_bytes", "label"};

inline std::vector<std::string> default_classes() {
  return {"Benign", "DoS", "DDoS", "Password", "PortScan", "XSS"};
}

struct DatasetSchema {
  std::array<std::string, kFlowFieldCount> columns;
  TimeUnit duration_unit = TimeUnit::Seconds;
  TimeUnit timestamp_unit = TimeUnit::Seconds;
  // Metadata only: header-exclusive byte counts cannot be reconstructed.
  bool bytes_include_headers = true;
  char delimiter = ',';
  std::vector<std::string> classes = default_classes();
  std::map<std::string, std::string> label_merge;

  const std::string& column(FlowField f) const { return columns[static_cast<std::size_t>(f)]; }

  static DatasetSchema canonical() {
    DatasetSchema s;
    for (std::size_t i = 0; i < kFlowFieldCount; ++i) s.columns[i] = std::string(kCanonicalColumns[i]);
    return s;
  }

  void validate() const {
    std::set<std::string> seen;
    for (std::size_t i = 0; i < kFlowFieldCount; ++i) {
      if (columns[i].empty())
        throw SchemaError("no column mapped for field '" + std::string(kCanonicalColumns[i]) + "'");
      if (!seen.insert(columns[i]).second)
        throw SchemaError("column '" + columns[i] + "' mapped to more than one field");
    }
    if (classes.size() < 2) throw SchemaError("at least two canonical classes are required");
    const std::set<std::string> class_set(classes.begin(), classes.end());
    if (class_set.size() != classes.size()) throw SchemaError("duplicate canonical class name");
    for (const auto& [raw, target] : label_merge)
      if (!class_set.count(target))
        throw SchemaError("label merge target '" + target + "' (from '" + raw +
                          "') is not a canonical class");
  }

  // Keys: one per canonical field name (value = source column), plus
  // duration_unit, timestamp_unit, bytes_include_headers, delimiter, classes
  // and `label.<raw label> = <class>` merge entries. Unspecified field
  // mappings default to the canonical column names.
  static DatasetSchema from_config(const KeyValueConfig& cfg) {
    DatasetSchema s = canonical();
    for (const auto& [key, value] : cfg.entries()) {
      if (key.rfind("label.", 0) == 0) {
        s.label_merge[key.substr(6)] = value;
        continue;
      }
      const auto it = std::find(kCanonicalColumns.begin(), kCanonicalColumns.end(), key);
      if (it != kCanonicalColumns.end()) {
        s.columns[static_cast<std::size_t>(it - kCanonicalColumns.begin())] = value;
      } else if (key == "duration_unit") {
        s.duration_unit = parse_time_unit(value);
      } else if (key == "timestamp_unit") {
        s.timestamp_unit = parse_time_unit(value);
      } else if (key == "bytes_include_headers") {
        if (value != "true" && value != "false")
          throw SchemaError("bytes_include_headers must be true or false");
        s.bytes_include_headers = value == "true";
      } else if (key == "delimiter") {
        if (value == "comma") s.delimiter = ',';
        else if (value == "tab") s.delimiter = '\t';
        else if (value == "semicolon") s.delimiter = ';';
        else if (value.size() == 1) s.delimiter = value[0];
        else throw SchemaError("delimiter must be a single character, comma, tab or semicolon");
      } else if (key == "classes") {
        s.classes = split_list(value);
      } else {
        throw SchemaError("unknown schema key '" + key + "'");
      }
    }
    s.validate();
    return s;
  }

  static DatasetSchema load(const std::string& path) { return from_config(KeyValueConfig::load(path)); }
};

enum class RowErrorPolicy { Skip, Abort };

struct LoadOptions {
  RowErrorPolicy policy = RowErrorPolicy::Skip;
  // When false, file order is kept and ordering is left to the consumer.
  bool sort = true;
};

struct LoadReport {
  std::size_t rows_read = 0;
  std::size_t rows_accepted = 0;
  std::size_t rows_skipped = 0;
  std::size_t unmapped_labels = 0;
  bool input_was_sorted = true;
  std::vector<std::string> first_errors;  // at most 10
};

struct LoadedFlows {
  std::vector<FlowRecord> records;
  LoadReport report;
};

namespace detail {

inline Protocol parse_protocol(std::string_view s) {
  s = trim(s);
  if (s.empty()) throw std::invalid_argument("empty protocol");
  if (auto n = parse_int<int>(s)) {
    if (*n == 6) return Protocol::Tcp;
    if (*n == 17) return Protocol::Udp;
    return Protocol::Other;
  }
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "tcp") return Protocol::Tcp;
  if (lower == "udp") return Protocol::Udp;
  return Protocol::Other;
}

// Accepts integral values written either as integers or as "80.0".
inline std::optional<double> parse_count(std::string_view s) {
  auto v = parse_double(s);
  if (!v || !std::isfinite(*v) || *v < 0.0 || std::floor(*v) != *v) return std::nullopt;
  return v;
}

}  // namespace detail

inline LoadedFlows load_dataset(std::istream& in, const DatasetSchema& schema,
                                const LoadOptions& options = {}) {
  schema.validate();
  LoadedFlows out;
  auto& report = out.report;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) break;
  }
  if (trim(line).empty()) throw SchemaError("input has no header row");
  const auto header = split_csv_line(line, schema.delimiter);
  std::unordered_map<std::string, std::size_t> header_index;
  for (std::size_t i = 0; i < header.size(); ++i) header_index.emplace(std::string(trim(header[i])), i);

  std::array<std::size_t, kFlowFieldCount> col{};
  for (std::size_t f = 0; f < kFlowFieldCount; ++f) {
    const auto it = header_index.find(schema.columns[f]);
    if (it == header_index.end())
      throw SchemaError("missing column '" + schema.columns[f] + "' for field '" +
                        std::string(kCanonicalColumns[f]) + "'");
    col[f] = it->second;
  }
  const std::set<std::string> class_set(schema.classes.begin(), schema.classes.end());
  const double dur_scale = seconds_per(schema.duration_unit);
  const double ts_scale = seconds_per(schema.timestamp_unit);

  auto fail = [&](std::size_t at, const std::string& what) {
    if (options.policy == RowErrorPolicy::Abort) throw RowError(at, what);
    ++report.rows_skipped;
    if (report.first_errors.size() < 10)
      report.first_errors.push_back("line " + std::to_string(at) + ": " + what);
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ++report.rows_read;
    const auto cells = split_csv_line(line, schema.delimiter);
    if (cells.size() < header.size()) {
      fail(line_no, "expected " + std::to_string(header.size()) + " fields, got " +
                        std::to_string(cells.size()));
      continue;
    }
    auto cell = [&](FlowField f) -> const std::string& { return cells[col[static_cast<std::size_t>(f)]]; };

    FlowRecord r;
    try {
      r.protocol = detail::parse_protocol(cell(FlowField::Protocol));
    } catch (const std::invalid_argument&) {
      fail(line_no, "empty protocol cell");
      continue;
    }
    const auto ts = parse_double(cell(FlowField::Timestamp));
    if (!ts || !std::isfinite(*ts)) {
      fail(line_no, "unparseable timestamp '" + cell(FlowField::Timestamp) + "'");
      continue;
    }
    r.timestamp = *ts * ts_scale;
    r.src_ip = std::string(trim(cell(FlowField::SrcIp)));
    r.dst_ip = std::string(trim(cell(FlowField::DstIp)));
    if (r.src_ip.empty() || r.dst_ip.empty()) {
      fail(line_no, "empty host address");
      continue;
    }

    bool ok = true;
    auto port = [&](FlowField f) -> std::uint16_t {
      const auto& s = cell(f);
      if (trim(s).empty() && r.protocol == Protocol::Other) return 0;
      const auto v = detail::parse_count(s);
      if (!v || *v > 65535.0) {
        fail(line_no, "bad " + std::string(kCanonicalColumns[static_cast<std::size_t>(f)]) + " '" + s + "'");
        ok = false;
        return 0;
      }
      return static_cast<std::uint16_t>(*v);
    };
    r.src_port = port(FlowField::SrcPort);
    if (!ok) continue;
    r.dst_port = port(FlowField::DstPort);
    if (!ok) continue;

    const auto dur = parse_double(cell(FlowField::Duration));
    if (!dur || !std::isfinite(*dur) || *dur < 0.0) {
      fail(line_no, "bad duration '" + cell(FlowField::Duration) + "'");
      continue;
    }
    r.duration = *dur * dur_scale;

    auto count = [&](FlowField f) -> std::uint64_t {
      const auto& s = cell(f);
      const auto v = detail::parse_count(s);
      if (!v) {
        fail(line_no, "bad " + std::string(kCanonicalColumns[static_cast<std::size_t>(f)]) + " '" + s + "'");
        ok = false;
        return 0;
      }
      return static_cast<std::uint64_t>(*v);
    };
    r.src_packets = count(FlowField::SrcPackets);
    if (!ok) continue;
    r.dst_packets = count(FlowField::DstPackets);
    if (!ok) continue;
    r.src_bytes = count(FlowField::SrcBytes);
    if (!ok) continue;
    r.dst_bytes = count(FlowField::DstBytes);
    if (!ok) continue;

    const std::string raw_label(trim(cell(FlowField::Label)));
    if (const auto m = schema.label_merge.find(raw_label); m != schema.label_merge.end()) {
      r.label = m->second;
    } else if (class_set.count(raw_label)) {
      r.label = raw_label;
    } else {
      ++report.unmapped_labels;
      fail(line_no, "unmapped label '" + raw_label + "'");
      continue;
    }

    if (!out.records.empty() && r.timestamp < out.records.back().timestamp) report.input_was_sorted = false;
    out.records.push_back(std::move(r));
  }
  report.rows_accepted = out.records.size();

  if (options.sort && !report.input_was_sorted)
    std::stable_sort(out.records.begin(), out.records.end(),
                     [](const FlowRecord& a, const FlowRecord& b) { return a.timestamp < b.timestamp; });
  return out;
}

inline LoadedFlows load_dataset(const std::string& path, const DatasetSchema& schema,
                                const LoadOptions& options = {}) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open flow file: " + path);
  return load_dataset(in, schema, options);
}

// Ordered by class name.
inline std::map<std::string, std::size_t> class_table(const std::vector<FlowRecord>& records) {
  std::map<std::string, std::size_t> table;
  for (const auto& r : records) ++table[r.label];
  return table;
}

inline void write_flow_columns(std::ostream& out) {
  for (std::size_t i = 0; i < kFlowFieldCount; ++i) out << (i ? "," : "") << kCanonicalColumns[i];
}

inline void write_flow_cells(std::ostream& out, const FlowRecord& r) {
  out << format_double(r.timestamp) << ',' << csv_escape(r.src_ip) << ',' << r.src_port << ','
      << csv_escape(r.dst_ip) << ',' << r.dst_port << ',' << to_string(r.protocol) << ','
      << format_double(r.duration) << ',' << r.src_packets << ',' << r.dst_packets << ','
      << r.src_bytes << ',' << r.dst_bytes << ',' << csv_escape(r.label);
}

// Strict parse of the first kFlowFieldCount cells written by write_flow_cells.
inline FlowRecord parse_flow_cells(const std::vector<std::string>& cells, std::size_t line_no) {
  if (cells.size() < kFlowFieldCount) throw RowError(line_no, "too few fields");
  auto num = [&](std::size_t i) {
    const auto v = parse_double(cells[i]);
    if (!v || !std::isfinite(*v)) throw RowError(line_no, "bad " + std::string(kCanonicalColumns[i]));
    return *v;
  };
  auto cnt = [&](std::size_t i, double max) {
    const auto v = detail::parse_count(cells[i]);
    if (!v || *v > max) throw RowError(line_no, "bad " + std::string(kCanonicalColumns[i]));
    return *v;
  };
  FlowRecord r;
  r.timestamp = num(0);
  r.src_ip = cells[1];
  r.src_port = static_cast<std::uint16_t>(cnt(2, 65535.0));
  r.dst_ip = cells[3];
  r.dst_port = static_cast<std::uint16_t>(cnt(4, 65535.0));
  r.protocol = detail::parse_protocol(cells[5]);
  r.duration = num(6);
  if (r.duration < 0.0) throw RowError(line_no, "negative duration");
  r.src_packets = static_cast<std::uint64_t>(cnt(7, 1.8e19));
  r.dst_packets = static_cast<std::uint64_t>(cnt(8, 1.8e19));
  r.src_bytes = static_cast<std::uint64_t>(cnt(9, 1.8e19));
  r.dst_bytes = static_cast<std::uint64_t>(cnt(10, 1.8e19));
  r.label = cells[11];
  return r;
}

// Harmonized on-disk form; loads back with DatasetSchema::canonical().
inline void write_canonical(std::ostream& out, const std::vector<FlowRecord>& records) {
  write_flow_columns(out);
  out << '\n';
  for (const auto& r : records) {
    write_flow_cells(out, r);
    out << '\n';
  }
}

inline void write_canonical(const std::string& path, const std::vector<FlowRecord>& records) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  write_canonical(out, records);
}

}  // namespace twnids
