#pragma once

// TWNet models: one trainable activation per selected feature, followed by a
// classifier, optionally preceded by two ReLU hidden layers. With protocol
// masking on there are three parameter sets (TCP, UDP, other) sharing the
// same activated inputs; each sample is routed through the set selected by
// its one-hot protocol mask.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "twnids/activations.hpp"
#include "twnids/errors.hpp"
#include "twnids/features.hpp"
#include "twnids/flow.hpp"
#include "twnids/text_io.hpp"

namespace twnids {

struct InputSpec {
  FeatureId feature = 1;
  ActivationKind activation = ActivationKind::None;
  std::size_t knots = 1;
  // Initial x0 quantile for erf(x - x0) inputs.
  double init_quantile = 0.5;

  friend bool operator==(const InputSpec&, const InputSpec&) = default;
};

struct ModelSpec {
  std::string name;
  std::vector<InputSpec> inputs;
  std::vector<std::size_t> hidden;  // empty, or {first, second}
  std::size_t class_count = 6;
  bool protocol_masked = true;

  std::size_t input_dim() const { return inputs.size(); }
  std::size_t branch_count() const { return protocol_masked ? kProtocolCount : 1; }

  std::vector<FeatureId> feature_ids() const {
    std::vector<FeatureId> ids;
    for (const auto& in : inputs) ids.push_back(in.feature);
    return ids;
  }

  void validate() const {
    if (inputs.empty()) throw ConfigError("model spec has no inputs");
    if (!hidden.empty() && hidden.size() != 2)
      throw ConfigError("hidden layers must be empty or exactly two sizes");
    for (auto h : hidden)
      if (h == 0) throw ConfigError("hidden layer size must be positive");
    if (class_count < 2) throw ConfigError("class count must be at least 2");
    for (const auto& in : inputs) {
      check_feature_id(in.feature);
      const bool multi = in.activation == ActivationKind::Step || in.activation == ActivationKind::Peak;
      if (multi && in.knots == 0) throw ConfigError("step/peak activation needs at least one knot");
      if (!multi && in.knots != 1) throw ConfigError("only step/peak activations take a knot count");
      if (!(in.init_quantile >= 0.0 && in.init_quantile <= 1.0))
        throw ConfigError("init quantile must lie in [0, 1]");
    }
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

namespace detail {

inline void add_inputs(ModelSpec& s, std::initializer_list<FeatureId> ids, ActivationKind kind,
                       std::size_t knots = 1, double q = 0.5) {
  for (auto id : ids) s.inputs.push_back(InputSpec{id, kind, knots, q});
}

}  // namespace detail

// Named architectures. Accepts "TWNet5", "TWNet5{32,16}" or "TWNet3{0}"
// (no hidden layers); the bare name uses the feed-forward variant.
inline ModelSpec preset_spec(std::string_view name, std::size_t class_count = 6) {
  using K = ActivationKind;
  std::string_view base = name;
  std::optional<std::vector<std::size_t>> hidden;
  if (const auto brace = name.find('{'); brace != std::string_view::npos) {
    if (name.back() != '}') throw ConfigError("malformed model name '" + std::string(name) + "'");
    base = name.substr(0, brace);
    const auto inner = name.substr(brace + 1, name.size() - brace - 2);
    std::vector<std::size_t> sizes;
    for (const auto& tok : split_list(inner)) {
      const auto v = parse_int<std::size_t>(tok);
      if (!v) throw ConfigError("malformed layer sizes in '" + std::string(name) + "'");
      sizes.push_back(*v);
    }
    if (sizes.size() == 1 && sizes[0] == 0) sizes.clear();
    hidden = sizes;
  }

  ModelSpec s;
  s.class_count = class_count;
  if (base == "TWNet1") {
    detail::add_inputs(s, {1, 3, 5, 13, 15}, K::ErfScale);
    detail::add_inputs(s, {2, kZeroLengthFlag}, K::None);
    s.hidden = {16, 32};
  } else if (base == "TWNet2") {
    detail::add_inputs(s, {1, 3, 5, 13, 15}, K::ErfScale);
    detail::add_inputs(s, {6, 7, 8, 9}, K::ErfShift, 1, 1.0 / 3.0);
    detail::add_inputs(s, {6, 7, 8, 9}, K::ErfShift, 1, 2.0 / 3.0);
    detail::add_inputs(s, {12, 1}, K::None);
    s.hidden = {16, 32};
  } else if (base == "TWNet3" || base == "TWNet4") {
    detail::add_inputs(s, {1}, K::Step, 3);
    detail::add_inputs(s, {3, 5, 13, 14, 15, 16, 17, 18, 19, 20}, K::Step, 1);
    detail::add_inputs(s, {6, 7, 8, 9, 10, 11}, base == "TWNet3" ? K::Step : K::Peak, 2);
    detail::add_inputs(s, {12}, K::None);
    s.hidden = base == "TWNet3" ? std::vector<std::size_t>{32, 32} : std::vector<std::size_t>{32, 16};
  } else if (base == "TWNet5") {
    detail::add_inputs(s, {1}, K::Step, 3);
    detail::add_inputs(s, {2, 3, 4, 5, 13, 14, 15, 16, 17, 18, 19, 20}, K::Step, 1);
    detail::add_inputs(s, {6, 7, 8, 9, 10, 11}, K::Peak, 3);
    detail::add_inputs(s, {12}, K::None);
    s.hidden = {32, 16};
  } else {
    throw ConfigError("unknown model '" + std::string(name) + "'");
  }
  if (hidden) s.hidden = *hidden;
  std::string layers = "{";
  if (s.hidden.empty()) layers += "0";
  for (std::size_t i = 0; i < s.hidden.size(); ++i) layers += (i ? "," : "") + std::to_string(s.hidden[i]);
  s.name = std::string(base) + layers + "}";
  s.validate();
  return s;
}

inline std::vector<double> select_features(const FeatureVector& v, const ModelSpec& spec) {
  const auto ids = spec.feature_ids();
  return select(v, ids);
}

struct DenseLayer {
  std::size_t inputs = 0;
  std::size_t outputs = 0;
  std::vector<double> weight;  // outputs x inputs, row-major
  std::vector<double> bias;

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct Branch {
  std::vector<DenseLayer> layers;  // hidden layers then the classifier
  friend bool operator==(const Branch&, const Branch&) = default;
};

// Also used, with identical shapes, for gradients and optimizer moments.
struct ModelParams {
  std::vector<ActivationUnit> activations;
  std::vector<Branch> branches;

  ModelParams zeros_like() const {
    ModelParams z;
    for (const auto& a : activations) z.activations.push_back(a.zeros_like());
    z.branches = branches;
    for (auto& b : z.branches)
      for (auto& l : b.layers) {
        std::fill(l.weight.begin(), l.weight.end(), 0.0);
        std::fill(l.bias.begin(), l.bias.end(), 0.0);
      }
    return z;
  }

  bool same_shape(const ModelParams& o) const {
    if (activations.size() != o.activations.size() || branches.size() != o.branches.size()) return false;
    for (std::size_t i = 0; i < activations.size(); ++i)
      if (activations[i].kind != o.activations[i].kind ||
          activations[i].position.size() != o.activations[i].position.size() ||
          activations[i].shape.size() != o.activations[i].shape.size())
        return false;
    for (std::size_t b = 0; b < branches.size(); ++b) {
      if (branches[b].layers.size() != o.branches[b].layers.size()) return false;
      for (std::size_t l = 0; l < branches[b].layers.size(); ++l) {
        const auto& x = branches[b].layers[l];
        const auto& y = o.branches[b].layers[l];
        if (x.inputs != y.inputs || x.outputs != y.outputs || x.weight.size() != y.weight.size() ||
            x.bias.size() != y.bias.size())
          return false;
      }
    }
    return true;
  }
};

inline bool operator==(const ModelParams& a, const ModelParams& b) {
  if (a.branches != b.branches || a.activations.size() != b.activations.size()) return false;
  for (std::size_t i = 0; i < a.activations.size(); ++i) {
    const auto& x = a.activations[i];
    const auto& y = b.activations[i];
    if (x.kind != y.kind || x.position != y.position || x.shape != y.shape) return false;
  }
  return true;
}

struct AdamState {
  ModelParams m;
  ModelParams v;
  std::uint64_t step = 0;
  // Activation knots are updated sparsely, so each knot keeps its own count
  // for bias correction.
  std::vector<std::vector<std::uint64_t>> knot_steps;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

struct Model {
  ModelSpec spec;
  ModelParams params;
  AdamState optimizer;

  friend bool operator==(const Model&, const Model&) = default;
};

// Feature rows already projected onto a spec's input order, with labels as
// class indices and the branch index taken from the protocol mask.
struct EncodedDataset {
  std::size_t dim = 0;
  std::vector<double> x;  // size() x dim
  std::vector<std::uint8_t> branch;
  std::vector<std::uint32_t> label;

  std::size_t size() const { return label.size(); }
  const double* row(std::size_t i) const { return x.data() + i * dim; }
};

inline std::uint32_t class_index(const std::vector<std::string>& classes, const std::string& label) {
  const auto it = std::find(classes.begin(), classes.end(), label);
  if (it == classes.end()) throw ConfigError("label '" + label + "' is not in the class table");
  return static_cast<std::uint32_t>(it - classes.begin());
}

inline EncodedDataset encode(const ModelSpec& spec, const LabeledFeatures& data,
                             const std::vector<std::string>& classes) {
  if (classes.size() != spec.class_count)
    throw ConfigError("class table has " + std::to_string(classes.size()) + " classes, model expects " +
                      std::to_string(spec.class_count));
  EncodedDataset e;
  e.dim = spec.input_dim();
  e.x.reserve(data.size() * e.dim);
  e.branch.reserve(data.size());
  e.label.reserve(data.size());
  std::unordered_map<std::string, std::uint32_t> lookup;
  for (std::size_t c = 0; c < classes.size(); ++c) lookup.emplace(classes[c], static_cast<std::uint32_t>(c));
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (const auto& in : spec.inputs) e.x.push_back(feature_value(data.rows[i], in.feature));
    e.branch.push_back(spec.protocol_masked ? static_cast<std::uint8_t>(index_of(data.rows[i].protocol)) : 0);
    const auto it = lookup.find(data.labels[i]);
    if (it == lookup.end()) throw ConfigError("label '" + data.labels[i] + "' is not in the class table");
    e.label.push_back(it->second);
  }
  return e;
}

inline EncodedDataset subset(const EncodedDataset& d, std::span<const std::size_t> idx) {
  EncodedDataset s;
  s.dim = d.dim;
  s.x.reserve(idx.size() * d.dim);
  for (auto i : idx) {
    s.x.insert(s.x.end(), d.row(i), d.row(i) + d.dim);
    s.branch.push_back(d.branch[i]);
    s.label.push_back(d.label[i]);
  }
  return s;
}

inline EncodedDataset concat(const EncodedDataset& a, const EncodedDataset& b) {
  if (a.dim != b.dim) throw ConfigError("cannot concatenate datasets of different width");
  EncodedDataset c = a;
  c.x.insert(c.x.end(), b.x.begin(), b.x.end());
  c.branch.insert(c.branch.end(), b.branch.begin(), b.branch.end());
  c.label.insert(c.label.end(), b.label.begin(), b.label.end());
  return c;
}

// Builds a model. Step/peak knots come from init_data quantiles when rows are
// supplied, otherwise from fixed defaults. Dense weights and biases are drawn
// from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline Model build(const ModelSpec& spec, std::uint64_t seed, std::span<const FeatureVector> init_data = {},
                   const ActivationInitOptions& init = {}) {
  spec.validate();
  Model m;
  m.spec = spec;
  for (const auto& in : spec.inputs) {
    std::vector<double> column;
    if (!init_data.empty()) {
      column.reserve(init_data.size());
      for (const auto& row : init_data) column.push_back(feature_value(row, in.feature));
    }
    ActivationUnit u;
    u.kind = in.activation;
    switch (in.activation) {
      case ActivationKind::None: break;
      case ActivationKind::Step:
      case ActivationKind::Peak:
        if (!column.empty()) {
          u = init_from_data(column, in.activation, in.knots, init);
        } else {
          for (std::size_t i = 0; i < in.knots; ++i)
            u.position.push_back(static_cast<double>(i) - 0.5 * static_cast<double>(in.knots - 1));
          u.shape.assign(in.knots, 1.0);
        }
        break;
      case ActivationKind::ErfScale: u.shape = {1.0}; break;
      case ActivationKind::ErfShift:
        u.position = {column.empty() ? 0.0 : quantile(column, in.init_quantile)};
        break;
    }
    m.params.activations.push_back(std::move(u));
  }

  std::vector<std::size_t> dims{spec.input_dim()};
  dims.insert(dims.end(), spec.hidden.begin(), spec.hidden.end());
  dims.push_back(spec.class_count);

  std::mt19937_64 rng(seed);
  for (std::size_t b = 0; b < spec.branch_count(); ++b) {
    Branch br;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      DenseLayer layer;
      layer.inputs = dims[l];
      layer.outputs = dims[l + 1];
      const double bound = 1.0 / std::sqrt(static_cast<double>(layer.inputs));
      std::uniform_real_distribution<double> dist(-bound, bound);
      layer.weight.resize(layer.inputs * layer.outputs);
      for (auto& w : layer.weight) w = dist(rng);
      layer.bias.resize(layer.outputs);
      for (auto& w : layer.bias) w = dist(rng);
      br.layers.push_back(std::move(layer));
    }
    m.params.branches.push_back(std::move(br));
  }
  m.optimizer.m = m.params.zeros_like();
  m.optimizer.v = m.params.zeros_like();
  for (const auto& a : m.params.activations) m.optimizer.knot_steps.emplace_back(a.knots(), 0);
  return m;
}

// Scratch buffers reused across samples.
struct Workspace {
  std::vector<double> activated;
  std::vector<std::vector<double>> layer_out;  // post-activation output of each layer
  std::vector<double> delta;
  std::vector<double> delta_prev;
  std::vector<double> input_grad;
};

namespace detail {

// Runs one sample; returns the score vector held in ws.layer_out.back().
inline const std::vector<double>& forward_sample(const Model& m, const double* x, std::size_t branch,
                                                 Workspace& ws) {
  const auto& acts = m.params.activations;
  ws.activated.resize(acts.size());
  for (std::size_t j = 0; j < acts.size(); ++j) ws.activated[j] = acts[j].forward(x[j]);
  const auto& layers = m.params.branches[branch].layers;
  ws.layer_out.resize(layers.size());
  const std::vector<double>* in = &ws.activated;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    auto& out = ws.layer_out[l];
    out.resize(L.outputs);
    const bool hidden = l + 1 < layers.size();
    for (std::size_t o = 0; o < L.outputs; ++o) {
      const double* w = L.weight.data() + o * L.inputs;
      double z = L.bias[o];
      for (std::size_t i = 0; i < L.inputs; ++i) z += w[i] * (*in)[i];
      out[o] = hidden ? std::max(z, 0.0) : z;
    }
    in = &out;
  }
  return ws.layer_out.back();
}

inline std::size_t argmax(const std::vector<double>& s) {
  return static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
}

}  // namespace detail

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

inline void check_input(const Model& m, const EncodedDataset& d) {
  if (d.dim != m.spec.input_dim())
    throw ConfigError("input width " + std::to_string(d.dim) + " does not match model width " +
                      std::to_string(m.spec.input_dim()));
  for (auto b : d.branch)
    if (b >= m.params.branches.size()) throw ConfigError("branch index out of range");
}

// Pre-softmax class scores.
inline Matrix forward(const Model& m, const EncodedDataset& d) {
  check_input(m, d);
  Matrix out{d.size(), m.spec.class_count, {}};
  out.data.reserve(out.rows * out.cols);
  Workspace ws;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& s = detail::forward_sample(m, d.row(i), d.branch[i], ws);
    out.data.insert(out.data.end(), s.begin(), s.end());
  }
  return out;
}

inline Matrix forward(const Model& m, std::span<const FeatureVector> rows) {
  EncodedDataset d;
  d.dim = m.spec.input_dim();
  for (const auto& r : rows) {
    for (const auto& in : m.spec.inputs) d.x.push_back(feature_value(r, in.feature));
    d.branch.push_back(m.spec.protocol_masked ? static_cast<std::uint8_t>(index_of(r.protocol)) : 0);
    d.label.push_back(0);
  }
  return forward(m, d);
}

inline std::vector<std::uint32_t> predict(const Model& m, const EncodedDataset& d) {
  check_input(m, d);
  std::vector<std::uint32_t> out;
  out.reserve(d.size());
  Workspace ws;
  for (std::size_t i = 0; i < d.size(); ++i)
    out.push_back(static_cast<std::uint32_t>(detail::argmax(detail::forward_sample(m, d.row(i), d.branch[i], ws))));
  return out;
}

// Numerically stable softmax cross-entropy for one score vector.
inline double cross_entropy(std::span<const double> scores, std::size_t label) {
  const double mx = *std::max_element(scores.begin(), scores.end());
  double sum = 0.0;
  for (double s : scores) sum += std::exp(s - mx);
  return mx + std::log(sum) - scores[label];
}

struct Gradients {
  ModelParams grad;
  // Per activation: the only knot allowed to move this step (multi-knot
  // activations only; ignored otherwise).
  std::vector<std::size_t> active_knot;
};

struct LossAndGradients {
  double loss = 0.0;
  std::size_t correct = 0;  // argmax hits, computed on the same forward pass
  Gradients gradients;
};

// Mean (optionally class-weighted) cross-entropy over the selected rows and
// its gradient w.r.t. every trainable tensor. Multi-knot activations are
// localized: only the knot with the least |position gradient| keeps its
// gradient pair (`localize = false` returns the raw gradients).
inline LossAndGradients loss_and_gradients(const Model& m, const EncodedDataset& d,
                                           std::span<const std::size_t> rows,
                                           std::span<const double> class_weights = {}, bool localize = true) {
  check_input(m, d);
  if (rows.empty()) throw ConfigError("empty batch");
  if (!class_weights.empty() && class_weights.size() != m.spec.class_count)
    throw ConfigError("class weight count does not match class count");

  LossAndGradients r;
  auto& grad = r.gradients.grad;
  grad = m.params.zeros_like();

  double weight_total = 0.0;
  for (auto i : rows) weight_total += class_weights.empty() ? 1.0 : class_weights[d.label[i]];
  if (!(weight_total > 0.0)) throw ConfigError("batch has zero total class weight");

  Workspace ws;
  std::vector<double> probs;
  const std::size_t C = m.spec.class_count;
  for (auto i : rows) {
    const double* x = d.row(i);
    const std::size_t b = d.branch[i];
    const std::size_t y = d.label[i];
    const double wy = (class_weights.empty() ? 1.0 : class_weights[y]) / weight_total;
    const auto& scores = detail::forward_sample(m, x, b, ws);
    if (detail::argmax(scores) == y) ++r.correct;

    const double mx = *std::max_element(scores.begin(), scores.end());
    double sum = 0.0;
    probs.resize(C);
    for (std::size_t c = 0; c < C; ++c) sum += (probs[c] = std::exp(scores[c] - mx));
    const double lse = mx + std::log(sum);
    r.loss += wy * (lse - scores[y]);

    ws.delta.resize(C);
    for (std::size_t c = 0; c < C; ++c) ws.delta[c] = wy * (probs[c] / sum - (c == y ? 1.0 : 0.0));

    const auto& layers = m.params.branches[b].layers;
    auto& glayers = grad.branches[b].layers;
    for (std::size_t l = layers.size(); l-- > 0;) {
      const auto& L = layers[l];
      auto& G = glayers[l];
      const std::vector<double>& in = l == 0 ? ws.activated : ws.layer_out[l - 1];
      ws.delta_prev.assign(L.inputs, 0.0);
      for (std::size_t o = 0; o < L.outputs; ++o) {
        const double dz = ws.delta[o];
        if (dz == 0.0) continue;
        G.bias[o] += dz;
        double* gw = G.weight.data() + o * L.inputs;
        const double* w = L.weight.data() + o * L.inputs;
        for (std::size_t k = 0; k < L.inputs; ++k) {
          gw[k] += dz * in[k];
          ws.delta_prev[k] += dz * w[k];
        }
      }
      if (l > 0) {
        // through the ReLU of the previous hidden layer
        for (std::size_t k = 0; k < L.inputs; ++k)
          if (in[k] <= 0.0) ws.delta_prev[k] = 0.0;
      }
      std::swap(ws.delta, ws.delta_prev);
    }
    for (std::size_t j = 0; j < m.params.activations.size(); ++j)
      m.params.activations[j].backward(x[j], ws.delta[j], grad.activations[j]);
  }

  r.gradients.active_knot.assign(grad.activations.size(), 0);
  if (!localize) return r;
  for (std::size_t j = 0; j < grad.activations.size(); ++j) {
    auto& g = grad.activations[j];
    r.gradients.active_knot[j] = localize_gradients(g.position, g.shape);
  }
  return r;
}

inline LossAndGradients loss_and_gradients(const Model& m, const EncodedDataset& d,
                                           std::span<const double> class_weights = {}, bool localize = true) {
  std::vector<std::size_t> all(d.size());
  std::iota(all.begin(), all.end(), 0);
  return loss_and_gradients(m, d, all, class_weights, localize);
}

struct AdamWConfig {
  double lr = 5e-4;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

namespace detail {

inline void adam_update(double& p, double& m, double& v, double g, double step, const AdamWConfig& c) {
  m = c.beta1 * m + (1.0 - c.beta1) * g;
  v = c.beta2 * v + (1.0 - c.beta2) * g * g;
  const double mhat = m / (1.0 - std::pow(c.beta1, step));
  const double vhat = v / (1.0 - std::pow(c.beta2, step));
  p -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
}

}  // namespace detail

// Decoupled weight decay on dense weights and biases; activation parameters
// are not decayed. Knots masked out by localization are skipped entirely
// (no parameter or moment change).
inline void adamw_step(Model& model, const Gradients& g, const AdamWConfig& cfg) {
  auto& p = model.params;
  auto& st = model.optimizer;
  if (!p.same_shape(g.grad) || !p.same_shape(st.m) || !p.same_shape(st.v) ||
      g.active_knot.size() != p.activations.size() || st.knot_steps.size() != p.activations.size())
    throw InvariantError("gradient/optimizer shape does not match the model parameters");

  const double step = static_cast<double>(++st.step);
  const double decay = 1.0 - cfg.lr * cfg.weight_decay;
  for (std::size_t b = 0; b < p.branches.size(); ++b)
    for (std::size_t l = 0; l < p.branches[b].layers.size(); ++l) {
      auto& L = p.branches[b].layers[l];
      const auto& G = g.grad.branches[b].layers[l];
      auto& M = st.m.branches[b].layers[l];
      auto& V = st.v.branches[b].layers[l];
      for (std::size_t i = 0; i < L.weight.size(); ++i) {
        L.weight[i] *= decay;
        detail::adam_update(L.weight[i], M.weight[i], V.weight[i], G.weight[i], step, cfg);
      }
      for (std::size_t i = 0; i < L.bias.size(); ++i) {
        L.bias[i] *= decay;
        detail::adam_update(L.bias[i], M.bias[i], V.bias[i], G.bias[i], step, cfg);
      }
    }

  for (std::size_t a = 0; a < p.activations.size(); ++a) {
    auto& u = p.activations[a];
    const auto& gu = g.grad.activations[a];
    auto& mu = st.m.activations[a];
    auto& vu = st.v.activations[a];
    const std::size_t knots = u.knots();
    for (std::size_t i = 0; i < knots; ++i) {
      if (knots > 1 && i != g.active_knot[a]) continue;
      const double ks = static_cast<double>(++st.knot_steps[a][i]);
      if (i < u.position.size())
        detail::adam_update(u.position[i], mu.position[i], vu.position[i], gu.position[i], ks, cfg);
      if (i < u.shape.size()) {
        detail::adam_update(u.shape[i], mu.shape[i], vu.shape[i], gu.shape[i], ks, cfg);
        if (u.kind == ActivationKind::Peak) u.shape[i] = std::max(u.shape[i], kMinPeakWidth);
      }
    }
  }
}

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double eval_accuracy = std::numeric_limits<double>::quiet_NaN();  // NaN without an eval set
  double wall_seconds = 0.0;
};

struct TrainConfig {
  std::size_t epochs = 8;
  std::size_t batch_size = 512;
  AdamWConfig optimizer;
  std::uint64_t seed = 1;
  std::vector<double> class_weights;  // empty = unweighted
  // Called after every optimizer step with the parameters before and after.
  std::function<void(std::size_t step, const ModelParams& before, const ModelParams& after)> on_step;
  std::function<void(const EpochMetrics&)> on_epoch;
};

inline double accuracy(const Model& m, const EncodedDataset& d) {
  if (d.size() == 0) return std::numeric_limits<double>::quiet_NaN();
  const auto pred = predict(m, d);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == d.label[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

// Mini-batch training with a fresh shuffle each epoch. Train loss/accuracy
// are accumulated from the forward passes of the epoch's batches.
inline std::vector<EpochMetrics> train(Model& model, const EncodedDataset& train_set,
                                       const EncodedDataset* eval_set, const TrainConfig& cfg) {
  std::vector<EpochMetrics> history;
  if (cfg.epochs == 0) return history;
  if (train_set.size() == 0) throw ConfigError("training set is empty");
  if (cfg.batch_size == 0) throw ConfigError("batch size must be positive");
  check_input(model, train_set);

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      auto lg = loss_and_gradients(model, train_set, batch, cfg.class_weights);
      loss_sum += lg.loss * static_cast<double>(batch.size());
      correct += lg.correct;
      if (cfg.on_step) {
        const ModelParams before = model.params;
        adamw_step(model, lg.gradients, cfg.optimizer);
        cfg.on_step(++step, before, model.params);
      } else {
        adamw_step(model, lg.gradients, cfg.optimizer);
        ++step;
      }
    }
    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = loss_sum / static_cast<double>(order.size());
    em.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    if (eval_set) em.eval_accuracy = accuracy(model, *eval_set);
    em.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (cfg.on_epoch) cfg.on_epoch(em);
    history.push_back(em);
  }
  return history;
}

// Activation curves for plotting: `points` evenly spaced x values per input
// spanning that input's range in `d` (+-1 around a constant column).
inline void write_activation_curves(std::ostream& out, const Model& m, const EncodedDataset& d,
                                    std::size_t points = 101) {
  check_input(m, d);
  if (points < 2) throw ConfigError("activation curves need at least two points");
  out << "input,feature,activation,x,y\n";
  for (std::size_t j = 0; j < m.spec.inputs.size(); ++j) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < d.size(); ++i) {
      lo = std::min(lo, d.row(i)[j]);
      hi = std::max(hi, d.row(i)[j]);
    }
    if (d.size() == 0) lo = hi = 0.0;
    if (lo == hi) {
      lo -= 1.0;
      hi += 1.0;
    }
    const auto& u = m.params.activations[j];
    for (std::size_t k = 0; k < points; ++k) {
      const double x = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(points - 1);
      out << j << ',' << m.spec.inputs[j].feature << ',' << to_string(u.kind) << ',' << format_double(x) << ','
          << format_double(u.forward(x)) << '\n';
    }
  }
}

// Classes with no rows in the dataset (training on it cannot learn them).
inline std::vector<std::size_t> absent_classes(const EncodedDataset& d, std::size_t class_count) {
  std::vector<std::size_t> seen(class_count, 0);
  for (auto y : d.label) ++seen[y];
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < class_count; ++c)
    if (!seen[c]) out.push_back(c);
  return out;
}

// Deterministic shuffled split; the first part holds round(fraction * n) rows.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double fraction,
                                                                                   std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed ^ 0x5eedf00dULL);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto cut = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  return {std::vector<std::size_t>(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(cut)),
          std::vector<std::size_t>(idx.begin() + static_cast<std::ptrdiff_t>(cut), idx.end())};
}

}  // namespace twnids
