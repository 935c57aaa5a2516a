#pragma once

// Model checkpoints as versioned JSON. Doubles are written in shortest
// round-trip form, so save/load is bit-exact for finite values.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "twnids/errors.hpp"
#include "twnids/model.hpp"

namespace twnids {

inline constexpr std::string_view kCheckpointFormat = "twnids-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  Model model;
  std::vector<std::string> classes;
  double window_seconds = 60.0;
  std::uint64_t seed = 0;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

using nlohmann::json;

inline json to_json_value(const ModelSpec& s) {
  json inputs = json::array();
  for (const auto& in : s.inputs)
    inputs.push_back({{"feature", in.feature},
                      {"activation", std::string(to_string(in.activation))},
                      {"knots", in.knots},
                      {"init_quantile", in.init_quantile}});
  return {{"name", s.name},
          {"inputs", inputs},
          {"hidden", s.hidden},
          {"class_count", s.class_count},
          {"protocol_masked", s.protocol_masked}};
}

inline ModelSpec spec_from_json(const json& j) {
  try {
    ModelSpec s;
    s.name = j.at("name").get<std::string>();
    for (const auto& in : j.at("inputs"))
      s.inputs.push_back(InputSpec{in.at("feature").get<int>(),
                                   parse_activation_kind(in.at("activation").get<std::string>()),
                                   in.value("knots", std::size_t{1}), in.value("init_quantile", 0.5)});
    s.hidden = j.value("hidden", std::vector<std::size_t>{});
    s.class_count = j.at("class_count").get<std::size_t>();
    s.protocol_masked = j.value("protocol_masked", true);
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed model spec: ") + e.what());
  }
}

inline json to_json_value(const ModelParams& p) {
  json acts = json::array();
  for (const auto& a : p.activations)
    acts.push_back({{"kind", std::string(to_string(a.kind))}, {"position", a.position}, {"shape", a.shape}});
  json branches = json::array();
  for (const auto& b : p.branches) {
    json layers = json::array();
    for (const auto& l : b.layers)
      layers.push_back({{"inputs", l.inputs}, {"outputs", l.outputs}, {"weight", l.weight}, {"bias", l.bias}});
    branches.push_back(layers);
  }
  return {{"activations", acts}, {"branches", branches}};
}

inline ModelParams params_from_json(const json& j) {
  ModelParams p;
  for (const auto& a : j.at("activations")) {
    ActivationUnit u;
    u.kind = parse_activation_kind(a.at("kind").get<std::string>());
    u.position = a.at("position").get<std::vector<double>>();
    u.shape = a.at("shape").get<std::vector<double>>();
    p.activations.push_back(std::move(u));
  }
  for (const auto& b : j.at("branches")) {
    Branch br;
    for (const auto& l : b) {
      DenseLayer layer;
      layer.inputs = l.at("inputs").get<std::size_t>();
      layer.outputs = l.at("outputs").get<std::size_t>();
      layer.weight = l.at("weight").get<std::vector<double>>();
      layer.bias = l.at("bias").get<std::vector<double>>();
      br.layers.push_back(std::move(layer));
    }
    p.branches.push_back(std::move(br));
  }
  return p;
}

inline json to_json_value(const Checkpoint& c) {
  return {{"format", kCheckpointFormat},
          {"version", kCheckpointVersion},
          {"spec", to_json_value(c.model.spec)},
          {"classes", c.classes},
          {"window_seconds", c.window_seconds},
          {"seed", c.seed},
          {"params", to_json_value(c.model.params)},
          {"optimizer",
           {{"step", c.model.optimizer.step},
            {"knot_steps", c.model.optimizer.knot_steps},
            {"m", to_json_value(c.model.optimizer.m)},
            {"v", to_json_value(c.model.optimizer.v)}}}};
}

inline Checkpoint checkpoint_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat) throw CheckpointError("not a checkpoint file");
    if (const int v = j.at("version").get<int>(); v != kCheckpointVersion)
      throw CheckpointError("unsupported checkpoint version " + std::to_string(v));
    Checkpoint c;
    c.model.spec = spec_from_json(j.at("spec"));
    c.classes = j.at("classes").get<std::vector<std::string>>();
    c.window_seconds = j.at("window_seconds").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.model.params = params_from_json(j.at("params"));
    const auto& o = j.at("optimizer");
    c.model.optimizer.step = o.at("step").get<std::uint64_t>();
    c.model.optimizer.knot_steps = o.at("knot_steps").get<std::vector<std::vector<std::uint64_t>>>();
    c.model.optimizer.m = params_from_json(o.at("m"));
    c.model.optimizer.v = params_from_json(o.at("v"));

    const auto& spec = c.model.spec;
    if (c.classes.size() != spec.class_count)
      throw CheckpointError("checkpoint class table has " + std::to_string(c.classes.size()) +
                            " entries, spec declares " + std::to_string(spec.class_count));
    // The freshly built model fixes the expected shapes.
    const Model ref = build(spec, 0);
    if (!ref.params.same_shape(c.model.params) || !ref.params.same_shape(c.model.optimizer.m) ||
        !ref.params.same_shape(c.model.optimizer.v) ||
        c.model.optimizer.knot_steps.size() != ref.optimizer.knot_steps.size())
      throw CheckpointError("checkpoint parameter shapes do not match its model spec");
    for (std::size_t a = 0; a < ref.optimizer.knot_steps.size(); ++a)
      if (c.model.optimizer.knot_steps[a].size() != ref.optimizer.knot_steps[a].size())
        throw CheckpointError("checkpoint optimizer state does not match its model spec");
    return c;
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot write checkpoint " + path);
  out << to_json_value(c).dump(1) << '\n';
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
  }
  return checkpoint_from_json(j);
}

// Loads and checks the class table against the one the caller works with.
inline Checkpoint load_checkpoint(const std::string& path, const std::vector<std::string>& expected_classes) {
  auto c = load_checkpoint(path);
  if (c.classes != expected_classes)
    throw CheckpointError("checkpoint classes do not match (checkpoint has " + std::to_string(c.classes.size()) +
                          ", expected " + std::to_string(expected_classes.size()) + ")");
  return c;
}

}  // namespace twnids
