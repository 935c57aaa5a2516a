#pragma once

// Sliding time-window host aggregation.
//
// Every host keeps three flow lists (TCP, UDP, other) and, for TCP and UDP,
// a multiset of the ports it used at its own end of those flows. For each
// incoming flow both endpoint hosts are evicted against the flow's
// timestamp, counts and new-port flags are read, and only then is the flow
// appended to both hosts (mirrored for the destination). The emitted
// WindowedSample is therefore a frozen snapshot and the samples can be
// shuffled freely afterwards.

#include <algorithm>
#include <array>
#include <cstdint>
#include <deque>
#include <fstream>
#include <iterator>
#include <list>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "twnids/errors.hpp"
#include "twnids/flow.hpp"
#include "twnids/ingest.hpp"
#include "twnids/text_io.hpp"

namespace twnids {

struct WindowConfig {
  double window_seconds = 60.0;
  // Maximum number of tracked hosts; 0 means unbounded. When exceeded, the
  // least recently anchored host is dropped.
  std::size_t host_capacity = 0;
  // Optional per-host mean values (not used as model features).
  bool compute_aggregates = false;

  void validate() const {
    if (!(window_seconds > 0.0)) throw ConfigError("window length must be positive");
    if (host_capacity == 1) throw ConfigError("host capacity must be 0 (unbounded) or at least 2");
  }
};

// One flow as seen from a host: *_out is what the host sent.
struct WindowEntry {
  double timestamp = 0.0;
  double duration = 0.0;
  std::uint64_t packets_out = 0;
  std::uint64_t packets_in = 0;
  std::uint64_t bytes_out = 0;
  std::uint64_t bytes_in = 0;
  std::uint16_t port = 0;  // the port at this host's end

  friend bool operator==(const WindowEntry&, const WindowEntry&) = default;
};

struct HostCounts {
  std::size_t flows = 0;
  std::size_t ports = 0;
  friend bool operator==(const HostCounts&, const HostCounts&) = default;
};

struct HostAggregates {
  double duration = 0.0;
  double packets_out = 0.0;
  double packets_in = 0.0;
  double bytes_out = 0.0;
  double bytes_in = 0.0;
};

class HostWindowState {
 public:
  // Entries of one protocol must be added in non-decreasing timestamp order.
  void add(Protocol p, const WindowEntry& e) {
    auto& list = flows_[index_of(p)];
    if (!list.empty() && e.timestamp < list.back().timestamp)
      throw OrderingError(list.size(), "host entry older than the newest stored entry");
    list.push_back(e);
    if (p != Protocol::Other) ++ports_[index_of(p)][e.port];
  }

  // Drops every entry with timestamp < anchor - window.
  void evict(double anchor, double window_seconds) {
    const double oldest = anchor - window_seconds;
    for (Protocol p : kProtocols) {
      auto& list = flows_[index_of(p)];
      while (!list.empty() && list.front().timestamp < oldest) {
        if (p != Protocol::Other) {
          auto& ports = ports_[index_of(p)];
          auto it = ports.find(list.front().port);
          if (--it->second == 0) ports.erase(it);
        }
        list.pop_front();
      }
    }
  }

  HostCounts counts_for(Protocol p) const {
    const std::size_t ports = p == Protocol::Other ? 0 : ports_[index_of(p)].size();
    return {flows_[index_of(p)].size(), ports};
  }

  // Other-protocol ports are never tracked, so they are never "in use".
  bool port_in_use(Protocol p, std::uint16_t port) const {
    if (p == Protocol::Other) return false;
    return ports_[index_of(p)].count(port) != 0;
  }

  // Multiplicity of a port in the in-window multiset.
  std::size_t port_multiplicity(Protocol p, std::uint16_t port) const {
    if (p == Protocol::Other) return 0;
    const auto it = ports_[index_of(p)].find(port);
    return it == ports_[index_of(p)].end() ? 0 : it->second;
  }

  const std::deque<WindowEntry>& flows(Protocol p) const { return flows_[index_of(p)]; }

  bool has_flows_since(double t) const {
    for (const auto& list : flows_)
      if (!list.empty() && list.back().timestamp >= t) return true;
    return false;
  }

  bool empty() const {
    for (const auto& list : flows_)
      if (!list.empty()) return false;
    return true;
  }

  // Plain recomputation over the in-window list; zeros for an empty list.
  HostAggregates aggregates(Protocol p) const {
    HostAggregates a;
    const auto& list = flows_[index_of(p)];
    if (list.empty()) return a;
    for (const auto& e : list) {
      a.duration += e.duration;
      a.packets_out += static_cast<double>(e.packets_out);
      a.packets_in += static_cast<double>(e.packets_in);
      a.bytes_out += static_cast<double>(e.bytes_out);
      a.bytes_in += static_cast<double>(e.bytes_in);
    }
    const double n = static_cast<double>(list.size());
    a.duration /= n;
    a.packets_out /= n;
    a.packets_in /= n;
    a.bytes_out /= n;
    a.bytes_in /= n;
    return a;
  }

 private:
  std::array<std::deque<WindowEntry>, kProtocolCount> flows_;
  std::array<std::unordered_map<std::uint16_t, std::uint32_t>, 2> ports_;
};

inline HostWindowState evict(HostWindowState state, double anchor, const WindowConfig& config) {
  config.validate();
  state.evict(anchor, config.window_seconds);
  return state;
}

inline HostCounts counts_for(const HostWindowState& state, Protocol p) { return state.counts_for(p); }

struct WindowedSample {
  FlowRecord flow;
  std::uint8_t new_port_src = 1;
  std::uint8_t new_port_dst = 1;
  std::uint32_t src_flow_count = 0;
  std::uint32_t dst_flow_count = 0;
  std::uint32_t src_port_count = 0;
  std::uint32_t dst_port_count = 0;
  std::optional<HostAggregates> src_aggregates;
  std::optional<HostAggregates> dst_aggregates;
};

struct WindowDiagnostics {
  std::size_t samples = 0;
  std::size_t hosts_created = 0;
  std::size_t self_flows = 0;        // src_ip == dst_ip rows
  std::size_t spilled_hosts = 0;     // dropped by the capacity bound
  std::size_t lossy_spills = 0;      // dropped while still holding in-window flows
  std::size_t peak_hosts = 0;
};

class WindowEngine {
 public:
  explicit WindowEngine(WindowConfig config) : config_(config) { config_.validate(); }

  WindowedSample process(const FlowRecord& flow) {
    if (diag_.samples > 0 && flow.timestamp < last_timestamp_)
      throw OrderingError(diag_.samples, "timestamp " + format_double(flow.timestamp) +
                                             " precedes previous " + format_double(last_timestamp_));
    last_timestamp_ = flow.timestamp;

    HostWindowState& src = touch(flow.src_ip, flow.timestamp);
    HostWindowState& dst = touch(flow.dst_ip, flow.timestamp);
    if (flow.src_ip == flow.dst_ip) ++diag_.self_flows;

    const Protocol p = flow.protocol;
    const HostCounts sc = src.counts_for(p);
    const HostCounts dc = dst.counts_for(p);

    WindowedSample s;
    s.flow = flow;
    s.src_flow_count = static_cast<std::uint32_t>(sc.flows);
    s.src_port_count = static_cast<std::uint32_t>(sc.ports);
    s.dst_flow_count = static_cast<std::uint32_t>(dc.flows);
    s.dst_port_count = static_cast<std::uint32_t>(dc.ports);
    s.new_port_src = src.port_in_use(p, flow.src_port) ? 0 : 1;
    s.new_port_dst = dst.port_in_use(p, flow.dst_port) ? 0 : 1;
    if (config_.compute_aggregates) {
      s.src_aggregates = src.aggregates(p);
      s.dst_aggregates = dst.aggregates(p);
    }

    src.add(p, WindowEntry{flow.timestamp, flow.duration, flow.src_packets, flow.dst_packets,
                           flow.src_bytes, flow.dst_bytes, flow.src_port});
    dst.add(p, WindowEntry{flow.timestamp, flow.duration, flow.dst_packets, flow.src_packets,
                           flow.dst_bytes, flow.src_bytes, flow.dst_port});
    ++diag_.samples;
    return s;
  }

  const HostWindowState* host(std::string_view ip) const {
    const auto it = hosts_.find(std::string(ip));
    return it == hosts_.end() ? nullptr : &it->second.state;
  }

  std::size_t host_count() const { return hosts_.size(); }
  const WindowDiagnostics& diagnostics() const { return diag_; }
  const WindowConfig& config() const { return config_; }

 private:
  struct Slot {
    HostWindowState state;
    std::list<std::string>::iterator lru;
  };

  HostWindowState& touch(const std::string& ip, double anchor) {
    auto it = hosts_.find(ip);
    if (it == hosts_.end()) {
      lru_.push_front(ip);
      it = hosts_.emplace(ip, Slot{HostWindowState{}, lru_.begin()}).first;
      ++diag_.hosts_created;
      if (config_.host_capacity != 0 && hosts_.size() > config_.host_capacity) spill(anchor);
      diag_.peak_hosts = std::max(diag_.peak_hosts, hosts_.size());
      return it->second.state;
    }
    lru_.splice(lru_.begin(), lru_, it->second.lru);
    it->second.state.evict(anchor, config_.window_seconds);
    return it->second.state;
  }

  void spill(double anchor) {
    const auto victim = hosts_.find(lru_.back());
    ++diag_.spilled_hosts;
    if (victim->second.state.has_flows_since(anchor - config_.window_seconds)) ++diag_.lossy_spills;
    hosts_.erase(victim);
    lru_.pop_back();
  }

  WindowConfig config_;
  std::unordered_map<std::string, Slot> hosts_;
  std::list<std::string> lru_;
  WindowDiagnostics diag_;
  double last_timestamp_ = 0.0;
};

inline std::vector<WindowedSample> process_stream(const std::vector<FlowRecord>& records,
                                                  const WindowConfig& config,
                                                  WindowDiagnostics* diagnostics = nullptr) {
  WindowEngine engine(config);
  std::vector<WindowedSample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(engine.process(r));
  if (diagnostics) *diagnostics = engine.diagnostics();
  return out;
}

inline constexpr std::array<std::string_view, 6> kWindowColumns{
    "new_port_src", "new_port_dst", "src_flow_count", "dst_flow_count", "src_port_count", "dst_port_count"};

inline void write_windowed(std::ostream& out, const std::vector<WindowedSample>& samples) {
  write_flow_columns(out);
  for (auto c : kWindowColumns) out << ',' << c;
  out << '\n';
  for (const auto& s : samples) {
    write_flow_cells(out, s.flow);
    out << ',' << int(s.new_port_src) << ',' << int(s.new_port_dst) << ',' << s.src_flow_count << ','
        << s.dst_flow_count << ',' << s.src_port_count << ',' << s.dst_port_count << '\n';
  }
}

inline void write_windowed(const std::string& path, const std::vector<WindowedSample>& samples) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  write_windowed(out, samples);
}

inline std::vector<WindowedSample> read_windowed(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("windowed sample file is empty");
  const auto header = split_csv_line(line);
  if (header.size() != kFlowFieldCount + kWindowColumns.size())
    throw SchemaError("unexpected windowed sample header");
  for (std::size_t i = 0; i < header.size(); ++i) {
    const auto expected = i < kFlowFieldCount ? kCanonicalColumns[i] : kWindowColumns[i - kFlowFieldCount];
    if (trim(header[i]) != expected)
      throw SchemaError("windowed sample column " + std::to_string(i) + " should be '" +
                        std::string(expected) + "'");
  }
  std::vector<WindowedSample> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) throw RowError(line_no, "wrong field count");
    WindowedSample s;
    s.flow = parse_flow_cells(cells, line_no);
    auto u = [&](std::size_t k, std::uint32_t max) {
      const auto v = parse_int<std::uint32_t>(cells[kFlowFieldCount + k]);
      if (!v || *v > max) throw RowError(line_no, "bad " + std::string(kWindowColumns[k]));
      return *v;
    };
    s.new_port_src = static_cast<std::uint8_t>(u(0, 1));
    s.new_port_dst = static_cast<std::uint8_t>(u(1, 1));
    s.src_flow_count = u(2, UINT32_MAX);
    s.dst_flow_count = u(3, UINT32_MAX);
    s.src_port_count = u(4, UINT32_MAX);
    s.dst_port_count = u(5, UINT32_MAX);
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<WindowedSample> read_windowed(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open windowed sample file: " + path);
  return read_windowed(in);
}

}  // namespace twnids
