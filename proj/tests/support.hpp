#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "twnids/flow.hpp"
#include "twnids/model.hpp"
#include "twnids/window.hpp"

namespace twnids::test {

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("twnids-test-" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

// |a - b| relative to the larger magnitude, floored at `floor`.
inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Random time-ordered stream over a small host pool, with ties, bursts,
// long gaps, self-flows and all three protocols.
inline std::vector<FlowRecord> random_stream(std::mt19937_64& rng, std::size_t n, std::size_t hosts,
                                             double mean_gap) {
  std::uniform_int_distribution<std::size_t> host(0, hosts - 1);
  std::uniform_int_distribution<int> port(1, 12);
  std::uniform_int_distribution<int> proto(0, 9);
  std::exponential_distribution<double> gap(1.0 / mean_gap);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<FlowRecord> out;
  double t = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = u(rng);
    if (r < 0.1) {
      // same timestamp as the previous flow
    } else if (r < 0.12) {
      t += 50.0 * mean_gap * u(rng);
    } else {
      t += gap(rng);
    }
    FlowRecord f;
    f.timestamp = t;
    f.src_ip = "h" + std::to_string(host(rng));
    f.dst_ip = u(rng) < 0.02 ? f.src_ip : "h" + std::to_string(host(rng));
    const int p = proto(rng);
    f.protocol = p < 6 ? Protocol::Tcp : (p < 9 ? Protocol::Udp : Protocol::Other);
    f.src_port = static_cast<std::uint16_t>(port(rng));
    f.dst_port = static_cast<std::uint16_t>(port(rng));
    f.duration = u(rng) < 0.2 ? 0.0 : u(rng) * 10.0;
    f.src_packets = static_cast<std::uint64_t>(port(rng) - 1);
    f.dst_packets = static_cast<std::uint64_t>(port(rng) - 1);
    f.src_bytes = f.src_packets * 60;
    f.dst_bytes = f.dst_packets * 90;
    f.label = "Benign";
    out.push_back(f);
  }
  return out;
}

struct OracleSample {
  std::uint32_t src_flow_count = 0, dst_flow_count = 0, src_port_count = 0, dst_port_count = 0;
  std::uint8_t new_port_src = 1, new_port_dst = 1;
};

// Brute-force window counts: for every flow, rescan all earlier flows that
// touch the host with the same protocol and lie inside the window.
inline std::vector<OracleSample> window_oracle(const std::vector<FlowRecord>& flows, double window) {
  std::vector<OracleSample> out(flows.size());
  std::map<std::string, std::vector<std::size_t>> history;  // host -> earlier flow indices
  for (std::size_t i = 0; i < flows.size(); ++i) {
    const auto& f = flows[i];
    auto side = [&](const std::string& host, std::uint16_t own_port, std::uint32_t& flows_n,
                    std::uint32_t& ports_n, std::uint8_t& fresh) {
      std::set<std::uint16_t> ports;
      std::uint32_t n = 0;
      for (auto j : history[host]) {
        const auto& g = flows[j];
        if (g.protocol != f.protocol || g.timestamp < f.timestamp - window) continue;
        // a self-flow is stored once per endpoint
        if (g.src_ip == host) {
          ++n;
          ports.insert(g.src_port);
        }
        if (g.dst_ip == host) {
          ++n;
          ports.insert(g.dst_port);
        }
      }
      flows_n = n;
      const bool tracked = f.protocol != Protocol::Other;
      ports_n = tracked ? static_cast<std::uint32_t>(ports.size()) : 0;
      fresh = tracked && ports.count(own_port) ? 0 : 1;
    };
    auto& o = out[i];
    side(f.src_ip, f.src_port, o.src_flow_count, o.src_port_count, o.new_port_src);
    side(f.dst_ip, f.dst_port, o.dst_flow_count, o.dst_port_count, o.new_port_dst);
    history[f.src_ip].push_back(i);
    if (f.dst_ip != f.src_ip) history[f.dst_ip].push_back(i);
  }
  return out;
}

inline WindowedSample random_sample(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::uint64_t> small(0, 20);
  std::uniform_int_distribution<std::uint64_t> big(0, 5000000);
  std::uniform_int_distribution<std::uint32_t> count(0, 2000);
  std::uniform_int_distribution<int> bit(0, 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  WindowedSample s;
  auto& f = s.flow;
  f.timestamp = u(rng) * 1e6;
  f.src_ip = "10.0.0." + std::to_string(small(rng));
  f.dst_ip = "10.0.1." + std::to_string(small(rng));
  f.src_port = static_cast<std::uint16_t>(big(rng) % 65536);
  f.dst_port = static_cast<std::uint16_t>(big(rng) % 65536);
  f.protocol = kProtocols[small(rng) % 3];
  f.duration = bit(rng) ? 0.0 : std::exp(10.0 * u(rng) - 5.0);
  f.src_packets = bit(rng) ? small(rng) : big(rng);
  f.dst_packets = bit(rng) ? small(rng) : big(rng);
  f.src_bytes = bit(rng) ? small(rng) * 60 : big(rng) * 100;
  f.dst_bytes = bit(rng) ? small(rng) * 60 : big(rng) * 100;
  f.label = "Benign";
  s.new_port_src = static_cast<std::uint8_t>(bit(rng));
  s.new_port_dst = static_cast<std::uint8_t>(bit(rng));
  s.src_flow_count = count(rng);
  s.dst_flow_count = bit(rng) ? count(rng) : s.src_flow_count;
  s.src_port_count = std::min(count(rng), s.src_flow_count);
  s.dst_port_count = std::min(count(rng), s.dst_flow_count);
  return s;
}

inline void visit(ModelParams& p, const std::function<void(double&, bool dense)>& fn) {
  for (auto& a : p.activations) {
    for (auto& v : a.position) fn(v, false);
    for (auto& v : a.shape) fn(v, false);
  }
  for (auto& b : p.branches)
    for (auto& l : b.layers) {
      for (auto& v : l.weight) fn(v, true);
      for (auto& v : l.bias) fn(v, true);
    }
}

inline std::vector<double> flatten(ModelParams p) {
  std::vector<double> out;
  visit(p, [&](double& v, bool) { out.push_back(v); });
  return out;
}

// Independent forward pass; also reports the smallest |pre-activation| of the
// hidden layers.
inline std::vector<double> oracle_scores(const Model& m, const double* x, std::size_t branch, double* min_abs_z) {
  std::vector<double> h;
  for (std::size_t j = 0; j < m.params.activations.size(); ++j) {
    const auto& a = m.params.activations[j];
    double y = 0.0;
    switch (a.kind) {
      case ActivationKind::None: y = x[j]; break;
      case ActivationKind::Step:
        for (std::size_t i = 0; i < a.knots(); ++i) y += std::erf(a.shape[i] * (x[j] - a.position[i]));
        y /= static_cast<double>(a.knots());
        break;
      case ActivationKind::Peak:
        for (std::size_t i = 0; i < a.knots(); ++i)
          y += std::exp(-std::pow(x[j] - a.position[i], 2) / a.shape[i]);
        break;
      case ActivationKind::ErfScale: y = std::erf(a.shape[0] * x[j]); break;
      case ActivationKind::ErfShift: y = std::erf(x[j] - a.position[0]); break;
    }
    h.push_back(y);
  }
  const auto& layers = m.params.branches[branch].layers;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    std::vector<double> next(layers[l].outputs);
    for (std::size_t o = 0; o < next.size(); ++o) {
      double z = layers[l].bias[o];
      for (std::size_t i = 0; i < h.size(); ++i) z += layers[l].weight[o * layers[l].inputs + i] * h[i];
      if (l + 1 < layers.size()) {
        if (min_abs_z) *min_abs_z = std::min(*min_abs_z, std::abs(z));
        z = std::max(z, 0.0);
      }
      next[o] = z;
    }
    h = std::move(next);
  }
  return h;
}

inline double oracle_loss(const Model& m, const EncodedDataset& d) {
  double total = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto s = oracle_scores(m, d.row(i), d.branch[i], nullptr);
    double sum = 0.0;
    for (double v : s) sum += std::exp(v);
    total += std::log(sum) - s[d.label[i]];
  }
  return total / static_cast<double>(d.size());
}

inline FeatureVector random_row(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  FeatureVector v;
  for (auto& x : v.values) x = u(rng);
  v.protocol = kProtocols[rng() % kProtocolCount];
  return v;
}

inline EncodedDataset random_encoded(const ModelSpec& spec, std::mt19937_64& rng, std::size_t n) {
  LabeledFeatures lf;
  std::vector<std::string> classes;
  for (std::size_t c = 0; c < spec.class_count; ++c) classes.push_back("c" + std::to_string(c));
  for (std::size_t i = 0; i < n; ++i) {
    lf.rows.push_back(random_row(rng));
    lf.labels.push_back(classes[rng() % classes.size()]);
  }
  return encode(spec, lf, classes);
}

// Small masked model touching every activation form.
inline ModelSpec toy_spec() {
  ModelSpec s;
  s.name = "toy";
  s.inputs = {{1, ActivationKind::Step, 2},     {2, ActivationKind::Peak, 2}, {3, ActivationKind::ErfScale, 1},
              {4, ActivationKind::ErfShift, 1}, {5, ActivationKind::None, 1}};
  s.hidden = {4, 3};
  s.class_count = 3;
  return s;
}

inline Model randomized(const ModelSpec& spec, std::mt19937_64& rng) {
  Model m = build(spec, rng());
  std::uniform_real_distribution<double> pos(-1.5, 1.5), shape(0.3, 2.0);
  for (auto& a : m.params.activations) {
    for (auto& v : a.position) v = pos(rng);
    for (auto& v : a.shape) v = shape(rng);
  }
  return m;
}

// Five-point central difference with h = 1e-4 * max(1, |theta|).
template <typename F>
inline double central(double& theta, F f) {
  const double saved = theta;
  const double h = 1e-4 * std::max(1.0, std::abs(saved));
  auto at = [&](double t) {
    theta = saved + t * h;
    return f();
  };
  const double d = (-at(2) + 8 * at(1) - 8 * at(-1) + at(-2)) / (12.0 * h);
  theta = saved;
  return d;
}

}  // namespace twnids::test
