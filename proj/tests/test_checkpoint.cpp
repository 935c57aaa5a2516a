#include <gtest/gtest.h>

#include "json.hpp"
#include "support.hpp"
#include "twnids/checkpoint.hpp"

using namespace twnids;
using test::TempDir;

namespace {

Checkpoint trained_checkpoint() {
  Checkpoint c;
  c.model = build(preset_spec("TWNet5"), 21);
  c.classes = {"Benign", "DoS", "DDoS", "Password", "PortScan", "XSS"};
  c.seed = 21;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  // awkward doubles in every tensor, including optimizer state
  for (auto* p : {&c.model.params, &c.model.optimizer.m, &c.model.optimizer.v})
    for (auto& b : p->branches)
      for (auto& l : b.layers) {
        for (auto& w : l.weight) w = n(rng) / 3.0;
        for (auto& w : l.bias) w = n(rng) * 1e-300;
      }
  c.model.params.activations[0].position = {0.1, 1.0 / 3.0, 2e10};
  c.model.optimizer.step = 77;
  c.model.optimizer.knot_steps[0] = {5, 0, 72};
  return c;
}

nlohmann::json as_json(const std::string& path) { return nlohmann::json::parse(test::slurp(path)); }

}  // namespace

TEST(Checkpoint, RoundTripIsExact) {
  TempDir dir;
  const auto c = trained_checkpoint();
  save_checkpoint(c, dir / "c.json");
  const auto back = load_checkpoint(dir / "c.json");
  EXPECT_EQ(back, c);
  EXPECT_EQ(back.window_seconds, 60.0);
  // saving again produces identical bytes
  save_checkpoint(back, dir / "d.json");
  EXPECT_EQ(test::slurp(dir / "c.json"), test::slurp(dir / "d.json"));
}

TEST(Checkpoint, ForwardAfterReloadIsBitIdentical) {
  TempDir dir;
  const auto c = trained_checkpoint();
  save_checkpoint(c, dir / "c.json");
  const auto back = load_checkpoint(dir / "c.json");
  std::mt19937_64 rng(4);
  std::vector<FeatureVector> rows(50);
  for (auto& r : rows) {
    for (auto& v : r.values) v = std::uniform_real_distribution<double>(0, 5)(rng);
    r.protocol = kProtocols[rng() % 3];
  }
  EXPECT_EQ(forward(c.model, rows).data, forward(back.model, rows).data);
}

TEST(Checkpoint, WindowLengthRecorded) {
  TempDir dir;
  auto c = trained_checkpoint();
  c.window_seconds = 10.0;
  save_checkpoint(c, dir / "c.json");
  EXPECT_EQ(as_json(dir / "c.json")["window_seconds"], 10.0);
  EXPECT_EQ(load_checkpoint(dir / "c.json").window_seconds, 10.0);
}

TEST(Checkpoint, ClassTableMismatch) {
  TempDir dir;
  const auto c = trained_checkpoint();
  save_checkpoint(c, dir / "c.json");
  EXPECT_THROW(load_checkpoint(dir / "c.json", {"Benign", "DoS", "DDoS", "Password", "PortScan"}),
               CheckpointError);
  EXPECT_NO_THROW(load_checkpoint(dir / "c.json", c.classes));

  auto j = as_json(dir / "c.json");
  j["classes"].erase(j["classes"].size() - 1);
  test::spit(dir / "bad.json", j.dump());
  EXPECT_THROW(load_checkpoint(dir / "bad.json"), CheckpointError);
}

TEST(Checkpoint, RejectsForeignFiles) {
  TempDir dir;
  save_checkpoint(trained_checkpoint(), dir / "c.json");
  const auto j = as_json(dir / "c.json");

  auto bad_format = j;
  bad_format["format"] = "something-else";
  test::spit(dir / "a.json", bad_format.dump());
  EXPECT_THROW(load_checkpoint(dir / "a.json"), CheckpointError);

  auto bad_version = j;
  bad_version["version"] = 2;
  test::spit(dir / "b.json", bad_version.dump());
  EXPECT_THROW(load_checkpoint(dir / "b.json"), CheckpointError);

  auto missing = j;
  missing.erase("params");
  test::spit(dir / "c2.json", missing.dump());
  EXPECT_THROW(load_checkpoint(dir / "c2.json"), CheckpointError);

  test::spit(dir / "d.json", "{not json");
  EXPECT_THROW(load_checkpoint(dir / "d.json"), CheckpointError);
  EXPECT_THROW(load_checkpoint(dir / "none.json"), CheckpointError);
}

TEST(Checkpoint, RejectsShapeMismatch) {
  TempDir dir;
  save_checkpoint(trained_checkpoint(), dir / "c.json");
  const auto j = as_json(dir / "c.json");

  auto weights = j;
  weights["params"]["branches"][1][0]["weight"].erase(0);
  test::spit(dir / "a.json", weights.dump());
  EXPECT_THROW(load_checkpoint(dir / "a.json"), CheckpointError);

  auto knots = j;
  knots["params"]["activations"][0]["position"].erase(0);
  test::spit(dir / "b.json", knots.dump());
  EXPECT_THROW(load_checkpoint(dir / "b.json"), CheckpointError);

  auto hidden = j;
  hidden["spec"]["hidden"] = {16, 16};
  test::spit(dir / "c2.json", hidden.dump());
  EXPECT_THROW(load_checkpoint(dir / "c2.json"), CheckpointError);

  auto steps = j;
  steps["optimizer"]["knot_steps"][0].erase(0);
  test::spit(dir / "d.json", steps.dump());
  EXPECT_THROW(load_checkpoint(dir / "d.json"), CheckpointError);
}

TEST(Checkpoint, SpecJsonRoundTrip) {
  for (const char* name : {"TWNet1", "TWNet2", "TWNet3{0}", "TWNet4", "TWNet5{8,4}"}) {
    const auto s = preset_spec(name);
    EXPECT_EQ(spec_from_json(to_json_value(s)), s) << name;
  }
  EXPECT_THROW(spec_from_json(nlohmann::json{{"name", "x"}}), ConfigError);
}
