#pragma once

// Labeled synthetic flow streams. Each profile is an independent event
// stream (Poisson arrivals, or an exact count spread uniformly over the
// profile's active interval) with lognormal durations, packet counts and
// packet sizes, and a port strategy per side. Streams are merged by
// timestamp; the result is deterministic for a given seed.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "twnids/errors.hpp"
#include "twnids/flow.hpp"
#include "twnids/text_io.hpp"

namespace twnids {

enum class PortStrategy { Fixed, Sweep, Ephemeral };

inline PortStrategy parse_port_strategy(std::string_view s) {
  if (s == "fixed") return PortStrategy::Fixed;
  if (s == "sweep") return PortStrategy::Sweep;
  if (s == "ephemeral") return PortStrategy::Ephemeral;
  throw ConfigError("unknown port strategy '" + std::string(s) + "'");
}

struct LogNormal {
  double median = 1.0;
  double sigma = 0.0;

  template <typename Rng>
  double sample(Rng& rng) const {
    if (sigma == 0.0) return median;
    std::normal_distribution<double> n(0.0, sigma);
    return median * std::exp(n(rng));
  }
};

struct TrafficProfile {
  std::string name;
  std::string label;
  double rate = 1.0;                 // flows per second per source host
  std::optional<std::size_t> count;  // exact flow count instead of Poisson arrivals
  double start = 0.0;                // active interval, as fractions of the run
  double end = 1.0;
  std::size_t src_hosts = 1;
  std::size_t dst_hosts = 1;
  std::string src_prefix = "10.0.";
  std::string dst_prefix = "10.1.";
  std::array<double, kProtocolCount> protocol_mix{1.0, 0.0, 0.0};
  LogNormal duration{1.0, 1.0};
  double zero_duration_prob = 0.0;
  LogNormal src_packets{8.0, 1.0};
  LogNormal dst_packets{8.0, 1.0};
  double no_reply_prob = 0.0;
  LogNormal src_packet_size{400.0, 0.5};
  LogNormal dst_packet_size{600.0, 0.5};
  PortStrategy src_port = PortStrategy::Ephemeral;
  std::vector<std::uint16_t> src_ports;
  PortStrategy dst_port = PortStrategy::Fixed;
  std::vector<std::uint16_t> dst_ports{80};

  void validate() const {
    auto fail = [&](const std::string& what) { throw ConfigError("profile '" + name + "': " + what); };
    if (label.empty()) fail("empty label");
    if (!(rate > 0.0)) fail("rate must be positive");
    if (!(start >= 0.0 && start <= end && end <= 1.0)) fail("active interval must satisfy 0 <= start <= end <= 1");
    if (src_hosts == 0 || dst_hosts == 0) fail("host pools must be non-empty");
    double total = 0.0;
    for (double p : protocol_mix) {
      if (p < 0.0) fail("negative protocol probability");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) fail("protocol probabilities must sum to 1");
    for (const auto* d : {&duration, &src_packets, &dst_packets, &src_packet_size, &dst_packet_size})
      if (!(d->median > 0.0) || d->sigma < 0.0) fail("lognormal median must be > 0 and sigma >= 0");
    for (double p : {zero_duration_prob, no_reply_prob})
      if (p < 0.0 || p > 1.0) fail("probabilities must lie in [0, 1]");
    if (src_port == PortStrategy::Fixed && src_ports.empty()) fail("fixed src port strategy needs src_ports");
    if (dst_port == PortStrategy::Fixed && dst_ports.empty()) fail("fixed dst port strategy needs dst_ports");
  }

  // Expected number of flows over a run of the given length.
  double expected_flows(double run_seconds) const {
    const double active = (end - start) * run_seconds;
    if (active <= 0.0) return 0.0;
    return count ? static_cast<double>(*count) : rate * static_cast<double>(src_hosts) * active;
  }
};

inline std::string host_address(const std::string& prefix, std::size_t i) {
  return prefix + std::to_string(i / 250) + "." + std::to_string(i % 250 + 1);
}

namespace detail {

inline std::vector<FlowRecord> generate_profile(const TrafficProfile& p, double run_seconds, std::uint64_t seed,
                                                std::size_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), 0x7713u};
  std::mt19937_64 rng(seq);
  const double a = p.start * run_seconds;
  const double b = p.end * run_seconds;
  std::vector<double> times;
  if (b > a) {
    if (p.count) {
      std::uniform_real_distribution<double> u(a, b);
      times.resize(*p.count);
      for (auto& t : times) t = u(rng);
      std::sort(times.begin(), times.end());
    } else {
      std::exponential_distribution<double> gap(p.rate * static_cast<double>(p.src_hosts));
      for (double t = a + gap(rng); t < b; t += gap(rng)) times.push_back(t);
    }
  }

  std::uniform_int_distribution<std::size_t> pick_src(0, p.src_hosts - 1);
  std::uniform_int_distribution<std::size_t> pick_dst(0, p.dst_hosts - 1);
  std::discrete_distribution<int> pick_proto(p.protocol_mix.begin(), p.protocol_mix.end());
  std::uniform_int_distribution<int> ephemeral(1024, 65535);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::uint16_t> sweep_next(p.src_hosts, 1);

  auto choose_port = [&](PortStrategy s, const std::vector<std::uint16_t>& fixed, std::size_t src) {
    switch (s) {
      case PortStrategy::Fixed: {
        std::uniform_int_distribution<std::size_t> k(0, fixed.size() - 1);
        return fixed[k(rng)];
      }
      case PortStrategy::Sweep: {
        const auto port = sweep_next[src];
        sweep_next[src] = static_cast<std::uint16_t>(port == 65535 ? 1 : port + 1);
        return port;
      }
      case PortStrategy::Ephemeral: return static_cast<std::uint16_t>(ephemeral(rng));
    }
    return std::uint16_t{0};
  };
  auto count = [&](const LogNormal& d) {
    return static_cast<std::uint64_t>(std::max<long long>(1, std::llround(d.sample(rng))));
  };

  std::vector<FlowRecord> out;
  out.reserve(times.size());
  for (double t : times) {
    FlowRecord r;
    r.timestamp = t;
    r.label = p.label;
    const auto src = pick_src(rng);
    r.src_ip = host_address(p.src_prefix, src);
    r.dst_ip = host_address(p.dst_prefix, pick_dst(rng));
    r.protocol = kProtocols[static_cast<std::size_t>(pick_proto(rng))];
    const auto sport = choose_port(p.src_port, p.src_ports, src);
    const auto dport = choose_port(p.dst_port, p.dst_ports, src);
    if (r.protocol != Protocol::Other) {
      r.src_port = sport;
      r.dst_port = dport;
    }
    r.duration = unit(rng) < p.zero_duration_prob ? 0.0 : p.duration.sample(rng);
    r.src_packets = count(p.src_packets);
    r.dst_packets = unit(rng) < p.no_reply_prob ? 0 : count(p.dst_packets);
    r.src_bytes = static_cast<std::uint64_t>(
        std::llround(static_cast<double>(r.src_packets) * p.src_packet_size.sample(rng)));
    r.dst_bytes = static_cast<std::uint64_t>(
        std::llround(static_cast<double>(r.dst_packets) * p.dst_packet_size.sample(rng)));
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace detail

inline std::vector<FlowRecord> generate(const std::vector<TrafficProfile>& profiles, double run_seconds,
                                        std::uint64_t seed) {
  if (profiles.empty()) throw ConfigError("at least one traffic profile is required");
  if (!(run_seconds >= 0.0)) throw ConfigError("run duration must be non-negative");
  std::vector<FlowRecord> all;
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    profiles[i].validate();
    auto part = detail::generate_profile(profiles[i], run_seconds, seed, i);
    all.insert(all.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const FlowRecord& a, const FlowRecord& b) { return a.timestamp < b.timestamp; });
  return all;
}

// Built-in profile sets, sized to `total_flows` over `run_seconds`:
//
//  baseline        Benign clients/servers, a DoS burst against one web
//                  server from a small bot pool, and a single-host port sweep.
//  shifted_benign  Same attacks; half of the benign traffic is replaced by
//                  short single-packet flows to many random ports (a
//                  different network's background traffic).
//  alt_signature   Benign traffic includes a busy web service that looks like
//                  the baseline DoS; DoS is a zero-length SYN-style flood.
inline std::vector<TrafficProfile> preset_profiles(std::string_view name, std::size_t total_flows) {
  const auto frac = [&](double f) { return static_cast<std::size_t>(std::llround(f * static_cast<double>(total_flows))); };

  TrafficProfile benign;
  benign.name = benign.label = "Benign";
  benign.count = frac(0.8);
  benign.src_hosts = 200;
  benign.dst_hosts = 40;
  benign.src_prefix = "10.0.";
  benign.dst_prefix = "10.1.";
  benign.protocol_mix = {0.75, 0.2, 0.05};
  benign.duration = {1.0, 1.5};
  benign.zero_duration_prob = 0.1;
  benign.src_packets = {8.0, 1.0};
  benign.dst_packets = {10.0, 1.1};
  benign.no_reply_prob = 0.05;
  benign.src_packet_size = {300.0, 0.6};
  benign.dst_packet_size = {700.0, 0.6};
  benign.dst_ports = {80, 443, 53, 22, 25, 123, 445, 3389, 8080, 993};

  TrafficProfile dos;
  dos.name = dos.label = "DoS";
  dos.count = frac(0.1);
  dos.start = 0.30;
  dos.end = 0.50;
  dos.src_hosts = 20;
  dos.dst_hosts = 1;
  dos.src_prefix = "172.16.";
  dos.dst_prefix = "10.9.";
  dos.duration = {8.0, 0.4};
  dos.src_packets = {6.0, 0.3};
  dos.dst_packets = {4.0, 0.3};
  dos.src_packet_size = {120.0, 0.3};
  dos.dst_packet_size = {90.0, 0.3};
  dos.dst_ports = {80};

  TrafficProfile scan;
  scan.name = scan.label = "PortScan";
  scan.count = frac(0.1);
  scan.start = 0.60;
  scan.end = 0.80;
  scan.src_hosts = 1;
  scan.dst_hosts = 4;
  scan.src_prefix = "192.168.";
  scan.dst_prefix = "10.8.";
  scan.protocol_mix = {0.9, 0.1, 0.0};
  scan.duration = {0.001, 1.0};
  scan.zero_duration_prob = 0.8;
  scan.src_packets = {1.0, 0.3};
  scan.dst_packets = {1.0, 0.0};
  scan.no_reply_prob = 0.3;
  scan.src_packet_size = {60.0, 0.05};
  scan.dst_packet_size = {54.0, 0.05};
  scan.dst_port = PortStrategy::Sweep;

  if (name == "baseline") return {benign, dos, scan};

  if (name == "shifted_benign") {
    benign.count = frac(0.4);
    TrafficProfile chatter = benign;
    chatter.name = "BenignChatter";
    chatter.count = frac(0.4);
    chatter.src_hosts = 5;
    chatter.dst_hosts = 3000;
    chatter.src_prefix = "10.5.";
    chatter.dst_prefix = "100.64.";
    chatter.protocol_mix = {0.5, 0.5, 0.0};
    chatter.duration = {0.002, 1.0};
    chatter.zero_duration_prob = 0.8;
    chatter.src_packets = {1.0, 0.3};
    chatter.dst_packets = {1.0, 0.0};
    chatter.no_reply_prob = 0.5;
    chatter.src_packet_size = {70.0, 0.1};
    chatter.dst_packet_size = {60.0, 0.1};
    chatter.dst_port = PortStrategy::Ephemeral;
    return {benign, chatter, dos, scan};
  }

  if (name == "alt_signature") {
    benign.count = frac(0.6);
    TrafficProfile web = dos;
    web.name = "BenignWeb";
    web.label = "Benign";
    web.count = frac(0.2);
    web.start = 0.0;
    web.end = 1.0;
    web.src_hosts = 60;
    web.src_prefix = "10.4.";
    web.dst_prefix = "10.9.";
    TrafficProfile flood = dos;
    flood.src_hosts = 1;
    flood.src_prefix = "198.51.";
    flood.dst_prefix = "10.7.";
    flood.duration = {0.001, 0.5};
    flood.zero_duration_prob = 0.9;
    flood.src_packets = {1.0, 0.0};
    flood.dst_packets = {1.0, 0.0};
    flood.no_reply_prob = 0.5;
    flood.src_packet_size = {60.0, 0.02};
    flood.dst_packet_size = {54.0, 0.02};
    flood.dst_ports = {443};
    return {benign, web, flood, scan};
  }
  throw ConfigError("unknown traffic preset '" + std::string(name) + "'");
}

namespace detail {

inline LogNormal parse_lognormal(const std::string& key, const std::string& v) {
  const auto parts = split_list(v);
  const auto m = parts.size() == 2 ? parse_double(parts[0]) : std::nullopt;
  const auto s = parts.size() == 2 ? parse_double(parts[1]) : std::nullopt;
  if (!m || !s) throw ConfigError(key + ": expected 'median, sigma'");
  return {*m, *s};
}

inline std::vector<std::uint16_t> parse_ports(const std::string& key, const std::string& v) {
  std::vector<std::uint16_t> out;
  for (const auto& tok : split_list(v)) {
    const auto p = parse_int<std::uint16_t>(tok);
    if (!p) throw ConfigError(key + ": bad port '" + tok + "'");
    out.push_back(*p);
  }
  return out;
}

}  // namespace detail

// Applies `<profile>.<key> = value` entries on top of `base`. A profile name
// not in `base` starts a new profile (label defaults to its name).
inline std::vector<TrafficProfile> apply_profile_config(std::vector<TrafficProfile> base, const KeyValueConfig& cfg) {
  for (const auto& [key, value] : cfg.entries()) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) throw ConfigError("profile key '" + key + "' must look like <profile>.<field>");
    const auto name = key.substr(0, dot);
    const auto field = key.substr(dot + 1);
    auto it = std::find_if(base.begin(), base.end(), [&](const TrafficProfile& p) { return p.name == name; });
    if (it == base.end()) {
      TrafficProfile p;
      p.name = p.label = name;
      base.push_back(p);
      it = base.end() - 1;
    }
    auto& p = *it;
    auto num = [&]() {
      const auto v = parse_double(value);
      if (!v) throw ConfigError(key + ": expected a number");
      return *v;
    };
    auto whole = [&]() {
      const auto v = parse_int<std::size_t>(value);
      if (!v) throw ConfigError(key + ": expected a non-negative integer");
      return *v;
    };
    if (field == "label") p.label = value;
    else if (field == "rate") { p.rate = num(); p.count.reset(); }
    else if (field == "count") p.count = whole();
    else if (field == "start") p.start = num();
    else if (field == "end") p.end = num();
    else if (field == "src_hosts") p.src_hosts = whole();
    else if (field == "dst_hosts") p.dst_hosts = whole();
    else if (field == "src_prefix") p.src_prefix = value;
    else if (field == "dst_prefix") p.dst_prefix = value;
    else if (field == "protocol_mix") {
      const auto parts = split_list(value);
      if (parts.size() != kProtocolCount) throw ConfigError(key + ": expected 'tcp, udp, other'");
      for (std::size_t i = 0; i < kProtocolCount; ++i) {
        const auto v = parse_double(parts[i]);
        if (!v) throw ConfigError(key + ": expected numbers");
        p.protocol_mix[i] = *v;
      }
    }
    else if (field == "duration") p.duration = detail::parse_lognormal(key, value);
    else if (field == "zero_duration_prob") p.zero_duration_prob = num();
    else if (field == "src_packets") p.src_packets = detail::parse_lognormal(key, value);
    else if (field == "dst_packets") p.dst_packets = detail::parse_lognormal(key, value);
    else if (field == "no_reply_prob") p.no_reply_prob = num();
    else if (field == "src_packet_size") p.src_packet_size = detail::parse_lognormal(key, value);
    else if (field == "dst_packet_size") p.dst_packet_size = detail::parse_lognormal(key, value);
    else if (field == "src_port") p.src_port = parse_port_strategy(value);
    else if (field == "dst_port") p.dst_port = parse_port_strategy(value);
    else if (field == "src_ports") p.src_ports = detail::parse_ports(key, value);
    else if (field == "dst_ports") p.dst_ports = detail::parse_ports(key, value);
    else throw ConfigError("unknown profile field '" + field + "'");
  }
  for (const auto& p : base) p.validate();
  return base;
}

}  // namespace twnids
