// Acceptance criteria 1-10. Prints one PASS/FAIL line per criterion.

#include <gtest/gtest.h>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>

#include "json.hpp"
#include "support.hpp"
#include "twnids/checkpoint.hpp"
#include "twnids/cli.hpp"
#include "twnids/experiments.hpp"
#include "twnids/metrics.hpp"
#include "twnids/synth.hpp"

using namespace twnids;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

const std::vector<std::string> kSynthClasses{"Benign", "DoS", "PortScan"};

LabeledFeatures synth_features(const std::string& preset, std::size_t flows, std::uint64_t seed) {
  return extract_all(process_stream(generate(preset_profiles(preset, flows), 3600.0, seed), WindowConfig{}));
}

ExperimentConfig synth_config() {
  ExperimentConfig cfg;
  cfg.spec = preset_spec("TWNet5{32,16}", kSynthClasses.size());
  cfg.classes = kSynthClasses;
  cfg.seeds = {1};
  return cfg;
}

// TWNet5{32,16}, 8 epochs on the 10^5-flow baseline set; shared by 7, 8 and 9.
struct BaselineRun {
  LabeledFeatures data;
  TrainedRun run;
  double seconds = 0.0;
};

const BaselineRun& baseline_run() {
  static const BaselineRun r = [] {
    BaselineRun b;
    const auto t0 = Clock::now();
    b.data = synth_features("baseline", 100000, 1);
    b.run = train_on_split(b.data, synth_config(), 1, 8);
    b.seconds = seconds_since(t0);
    return b;
  }();
  return r;
}

void show(const std::string& what, double v) { std::cout << "    " << what << ": " << v << std::endl; }

}  // namespace

TEST(Acceptance, C01_WindowOracle) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  const std::vector<double> windows{1.0, 10.0, 60.0, 300.0};
  std::size_t total = 0;
  for (int s = 0; s < 100; ++s) {
    const double w = windows[s % windows.size()];
    const auto n = std::uniform_int_distribution<std::size_t>(100, 10000)(rng);
    const auto hosts = std::uniform_int_distribution<std::size_t>(5, 200)(rng);
    const double gap = w * std::uniform_real_distribution<double>(0.002, 0.2)(rng);
    const auto flows = test::random_stream(rng, n, hosts, gap);
    WindowConfig cfg;
    cfg.window_seconds = w;
    const auto got = process_stream(flows, cfg);
    const auto want = test::window_oracle(flows, w);
    ASSERT_EQ(got.size(), flows.size());
    for (std::size_t i = 0; i < flows.size(); ++i) {
      ASSERT_EQ(got[i].src_flow_count, want[i].src_flow_count) << "stream " << s << " flow " << i;
      ASSERT_EQ(got[i].dst_flow_count, want[i].dst_flow_count) << "stream " << s << " flow " << i;
      ASSERT_EQ(got[i].src_port_count, want[i].src_port_count) << "stream " << s << " flow " << i;
      ASSERT_EQ(got[i].dst_port_count, want[i].dst_port_count) << "stream " << s << " flow " << i;
      ASSERT_EQ(got[i].new_port_src, want[i].new_port_src) << "stream " << s << " flow " << i;
      ASSERT_EQ(got[i].new_port_dst, want[i].new_port_dst) << "stream " << s << " flow " << i;
    }
    total += flows.size();
  }
  const double secs = seconds_since(t0);
  show("flows checked", static_cast<double>(total));
  show("seconds", secs);
  EXPECT_LT(secs, 120.0);
}

TEST(Acceptance, C02_SwapSymmetry) {
  std::mt19937_64 rng(102);
  for (int i = 0; i < 100000; ++i) {
    const auto s = test::random_sample(rng);
    const auto a = extract(s);
    const auto b = extract(swap_src_dst(s));
    ASSERT_EQ(a.values, b.values) << "sample " << i;
    ASSERT_EQ(a.protocol, b.protocol);
  }
}

TEST(Acceptance, C03_GradientCheck) {
  constexpr double kTol = 1e-4;
  std::mt19937_64 rng(103);
  std::uniform_real_distribution<double> xs(-4.0, 4.0), up(-2.0, 2.0), pos(-3.0, 3.0), slope(0.05, 3.0),
      width(0.1, 4.0);
  double worst_step = 0.0, worst_peak = 0.0, worst_net = 0.0;

  for (int c = 0; c < 1000; ++c) {
    const std::size_t n = 1 + c % 4;
    StepLadderParams p;
    for (std::size_t i = 0; i < n; ++i) {
      p.k.push_back(slope(rng));
      p.x0.push_back(pos(rng));
    }
    double x = xs(rng);
    const double u = up(rng);
    const auto g = step_backward(x, p, u);
    auto f = [&] { return u * step_forward(x, p); };
    worst_step = std::max(worst_step, test::rel_err(g.dx, test::central(x, f)));
    for (std::size_t i = 0; i < n; ++i) {
      worst_step = std::max(worst_step, test::rel_err(g.dk[i], test::central(p.k[i], f)));
      worst_step = std::max(worst_step, test::rel_err(g.dx0[i], test::central(p.x0[i], f)));
    }
  }

  for (int c = 0; c < 1000; ++c) {
    const std::size_t n = 1 + c % 4;
    PeakParams p;
    for (std::size_t i = 0; i < n; ++i) {
      p.w.push_back(width(rng));
      p.x0.push_back(pos(rng));
    }
    double x = xs(rng);
    const double u = up(rng);
    const auto g = peak_backward(x, p, u);
    auto f = [&] { return u * peak_forward(x, p); };
    worst_peak = std::max(worst_peak, test::rel_err(g.dx, test::central(x, f)));
    for (std::size_t i = 0; i < n; ++i) {
      worst_peak = std::max(worst_peak, test::rel_err(g.dw[i], test::central(p.w[i], f)));
      worst_peak = std::max(worst_peak, test::rel_err(g.dx0[i], test::central(p.x0[i], f)));
    }
  }

  const auto spec = test::toy_spec();
  int configs = 0, resampled = 0;
  while (configs < 1000) {
    Model m = test::randomized(spec, rng);
    const auto d = test::random_encoded(spec, rng, 3);
    double min_z = INFINITY;
    for (std::size_t i = 0; i < d.size(); ++i) test::oracle_scores(m, d.row(i), d.branch[i], &min_z);
    if (min_z < 1e-2) {  // too close to a ReLU kink for a finite difference
      ++resampled;
      continue;
    }
    ++configs;
    const auto g = test::flatten(loss_and_gradients(m, d, {}, false).gradients.grad);
    std::size_t k = 0;
    test::visit(m.params, [&](double& theta, bool) {
      const double fd = test::central(theta, [&] { return test::oracle_loss(m, d); });
      worst_net = std::max(worst_net, test::rel_err(g[k++], fd));
    });
  }
  show("worst step relative error", worst_step);
  show("worst peak relative error", worst_peak);
  show("worst toy TWNet relative error", worst_net);
  show("toy configurations resampled near a kink", resampled);
  EXPECT_LT(worst_step, kTol);
  EXPECT_LT(worst_peak, kTol);
  EXPECT_LT(worst_net, kTol);
}

TEST(Acceptance, C04_LocalizedLearning) {
  const auto data = synth_features("baseline", 20000, 4);
  auto cfg = synth_config();
  const auto encoded = encode(cfg.spec, data, cfg.classes);
  Model m = build(cfg.spec, 4, data.rows);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 256;
  tc.seed = 4;
  std::size_t steps = 0, violations = 0, moves = 0;
  tc.on_step = [&](std::size_t, const ModelParams& before, const ModelParams& after) {
    ++steps;
    for (std::size_t a = 0; a < before.activations.size(); ++a) {
      const auto& x = before.activations[a];
      const auto& y = after.activations[a];
      if (x.knots() < 2) continue;
      std::size_t changed = 0;
      for (std::size_t i = 0; i < x.knots(); ++i) changed += x.position[i] != y.position[i] || x.shape[i] != y.shape[i];
      violations += changed > 1;
      moves += changed;
    }
  };
  train(m, encoded, nullptr, tc);
  show("optimizer steps", static_cast<double>(steps));
  show("multi-knot pair updates", static_cast<double>(moves));
  EXPECT_EQ(steps, (encoded.size() + 255) / 256);
  EXPECT_GT(moves, 0u);
  EXPECT_EQ(violations, 0u);
}

TEST(Acceptance, C05_ProtocolMasking) {
  auto data = synth_features("baseline", 10000, 5);
  ASSERT_GE(data.size(), 10000u);
  const auto spec = preset_spec("TWNet5{32,16}", 3);
  const auto d = encode(spec, data, kSynthClasses);
  const Model m = build(spec, 5, data.rows);
  const auto base = forward(m, d);
  std::array<std::size_t, kProtocolCount> per_branch{};
  for (auto b : d.branch) ++per_branch[b];
  for (std::size_t b = 0; b < kProtocolCount; ++b) EXPECT_GT(per_branch[b], 0u) << "branch " << b;

  std::mt19937_64 rng(55);
  std::normal_distribution<double> wild(0.0, 100.0);
  for (int trial = 0; trial < 5; ++trial) {
    for (std::size_t active = 0; active < kProtocolCount; ++active) {
      Model p = m;
      for (std::size_t b = 0; b < kProtocolCount; ++b) {
        if (b == active) continue;
        for (auto& l : p.params.branches[b].layers) {
          for (auto& w : l.weight) w = wild(rng);
          for (auto& w : l.bias) w = wild(rng);
        }
      }
      const auto out = forward(p, d);
      for (std::size_t i = 0; i < d.size(); ++i) {
        if (d.branch[i] != active) continue;
        for (std::size_t c = 0; c < spec.class_count; ++c)
          ASSERT_EQ(out(i, c), base(i, c)) << "sample " << i << " class " << c;
      }
    }
  }
}

TEST(Acceptance, C06_MetricFormulas) {
  const std::vector<std::string> classes{"Benign", "DoS", "DDoS", "Password", "PortScan", "XSS"};
  const auto cm = ConfusionMatrix::from_counts(classes, {1457391, 7583, 1219, 739, 8367, 11,  //
                                                         188, 166558, 79, 159, 31, 0,         //
                                                         32, 129, 94440, 0, 0, 13,            //
                                                         120, 0, 0, 7600, 0, 30,              //
                                                         543, 7, 0, 1, 216315, 0,             //
                                                         23, 0, 0, 631, 0, 7});
  const auto r = metric_report(cm);
  show("Benign recall", r.for_class("Benign").recall.value);
  show("DoS precision", r.for_class("DoS").precision.value);
  show("CAD", r.cad.value);
  EXPECT_NEAR(r.for_class("Benign").recall.value, 0.99, 0.005);
  EXPECT_NEAR(r.for_class("DoS").precision.value, 0.96, 0.005);
  EXPECT_NEAR(r.cad.value, 0.962, 0.005);
}

TEST(Acceptance, C07_SyntheticEndToEnd) {
  const auto& b = baseline_run();
  const auto cfg = synth_config();
  const auto all = encode(cfg.spec, b.data, cfg.classes);
  const double train_acc = accuracy(b.run.model, subset(all, b.run.train_rows));
  show("flows", static_cast<double>(b.data.size()));
  show("training-split accuracy", train_acc);
  show("entire-set accuracy", accuracy(b.run.model, all));
  show("seconds (generate + train)", b.seconds);
  EXPECT_EQ(b.data.size(), 100000u);
  EXPECT_EQ(b.run.history.size(), 8u);
  EXPECT_GE(train_acc, 0.99);
  EXPECT_LT(b.seconds, 600.0);
}

TEST(Acceptance, C08_GeneralizationDegradation) {
  const auto& b = baseline_run();
  const auto shifted = synth_features("shifted_benign", 100000, 2);
  const auto rep = run_generalization(b.data, shifted, synth_config(), &b.run.model, 1);
  const auto& row = rep.rows.at(0);
  show("train accuracy", row.train_accuracy);
  show("shifted test accuracy", row.test_accuracy);
  show("PortScan recall", row.test_recall.at("PortScan"));
  show("DoS recall", row.test_recall.at("DoS"));
  EXPECT_LE(row.test_accuracy, row.train_accuracy - 0.10);
  EXPECT_GE(row.test_recall.at("PortScan"), 0.95);
}

TEST(Acceptance, C09_Forgetting) {
  const auto& b = baseline_run();
  const auto cfg = synth_config();
  const RetrainConfig rc{8, 4};
  const auto alt = synth_features("alt_signature", 100000, 3);
  const auto shift = run_retraining(b.data, alt, cfg, rc, &b.run.model, 1).rows.at(0);
  const auto same = synth_features("baseline", 100000, 4);
  const auto control = run_retraining(b.data, same, cfg, rc, &b.run.model, 1).rows.at(0);
  show("shifted pair: first-set accuracy after phase 1", shift.phase1.first_accuracy);
  show("shifted pair: first-set accuracy after phase 2", shift.phase2.first_accuracy);
  show("control: first-set accuracy after phase 1", control.phase1.first_accuracy);
  show("control: first-set accuracy after phase 2", control.phase2.first_accuracy);
  EXPECT_LT(shift.phase2.first_accuracy, shift.phase1.first_accuracy);
  EXPECT_LT(std::abs(control.phase2.first_accuracy - control.phase1.first_accuracy), 0.01);
}

namespace {

struct Cli {
  test::TempDir dir;

  void run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run_cli(args, out, err);
    ASSERT_EQ(code, 0) << args[0] << ": " << err.str();
  }

  // Runs `args` into `name`, then replays its manifest into `name`-replay.
  void run_twice(std::vector<std::string> args, const std::string& name) {
    auto first = args;
    first.insert(first.end(), {"--out", dir / name});
    run(first);
    run({args[0], "--config", dir / (name + "/manifest.json"), "--out", dir / (name + "-replay")});
  }

  std::string file(const std::string& name) const { return test::slurp(dir / name); }
};

std::string drop_last_column(const std::string& csv) {
  std::istringstream in(csv);
  std::string out;
  for (std::string line; std::getline(in, line);) out += line.substr(0, line.rfind(',')) + '\n';
  return out;
}

nlohmann::json manifest_without_out(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  j["options"].erase("out");
  return j;
}

}  // namespace

TEST(Acceptance, C10_Determinism) {
  Cli c;
  std::vector<std::pair<std::string, std::string>> compared;  // run dir, file
  auto expect_same = [&](const std::string& run, const std::string& f, bool drop_wall = false) {
    auto a = c.file(run + "/" + f), b = c.file(run + "-replay/" + f);
    ASSERT_FALSE(a.empty()) << run << "/" << f;
    if (drop_wall) {
      a = drop_last_column(a);
      b = drop_last_column(b);
    }
    EXPECT_EQ(a, b) << run << "/" << f;
    compared.emplace_back(run, f);
  };
  auto expect_same_manifest = [&](const std::string& run) {
    EXPECT_EQ(manifest_without_out(c.file(run + "/manifest.json")),
              manifest_without_out(c.file(run + "-replay/manifest.json")))
        << run;
  };
  const std::vector<std::string> training{"--spec", "TWNet5{32,16}", "--classes", "Benign,DoS,PortScan",
                                          "--batch-size", "256"};
  auto with = [](std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  };

  c.run_twice({"synth", "--preset", "baseline", "--flows", "20000", "--duration", "1800", "--seed", "7"}, "synth");
  expect_same("synth", "flows.csv");
  c.run({"synth", "--preset", "shifted_benign", "--flows", "20000", "--duration", "1800", "--seed", "8", "--out",
         c.dir / "synth2"});
  c.run_twice({"window", "--input", c.dir / "synth/flows.csv"}, "window");
  expect_same("window", "windowed.csv");
  c.run({"window", "--input", c.dir / "synth2/flows.csv", "--out", c.dir / "window2"});
  c.run_twice({"featurize", "--input", c.dir / "window/windowed.csv"}, "features");
  expect_same("features", "features.csv");
  c.run({"featurize", "--input", c.dir / "window2/windowed.csv", "--out", c.dir / "features2"});
  const auto f1 = c.dir / "features/features.csv", f2 = c.dir / "features2/features.csv";

  c.run_twice(with({"train", "--features", f1, "--epochs", "2", "--seed", "3"}, training), "train");
  for (auto f : {"checkpoint.json", "report.csv", "confusion.txt", "activations.csv"}) expect_same("train", f);
  expect_same("train", "metrics.csv", true);
  expect_same_manifest("train");
  EXPECT_EQ(load_checkpoint(c.dir / "train/checkpoint.json"), load_checkpoint(c.dir / "train-replay/checkpoint.json"));

  c.run_twice({"eval", "--checkpoint", c.dir / "train/checkpoint.json", "--features", f2}, "eval");
  for (auto f : {"report.csv", "confusion.txt"}) expect_same("eval", f);
  expect_same_manifest("eval");

  c.run_twice(with({"generalize", "--train-features", f1, "--test-features", f2, "--epochs", "1", "--seeds", "1,2",
                    "--workers", "2"},
                   training),
              "generalize");
  for (auto f : {"generalization.csv", "summary.csv", "confusion.txt"}) expect_same("generalize", f);
  expect_same("generalize", "metrics.csv", true);
  expect_same_manifest("generalize");

  c.run_twice(with({"retrain", "--first-features", f1, "--second-features", f2, "--epochs-first", "1",
                    "--epochs-second", "1", "--seeds", "5"},
                   training),
              "retrain");
  expect_same("retrain", "retrain.csv");
  expect_same_manifest("retrain");

  show("files compared", static_cast<double>(compared.size()));
}

namespace {

const std::map<int, std::string> kCriteria{
    {1, "window engine equals brute-force oracle (100 streams, < 2 min)"},
    {2, "features invariant to src/dst swap (10^5 samples)"},
    {3, "analytic gradients match finite differences (step, peak, toy TWNet)"},
    {4, "localized learning moves at most one knot per activation per step"},
    {5, "outputs independent of inactive protocol branches (10^4 samples)"},
    {6, "metric formulas reproduce Benign recall, DoS precision and CAD"},
    {7, "TWNet5{32,16} reaches >= 99% training accuracy on 10^5 synthetic flows"},
    {8, "shifted benign test set drops >= 10 points, PortScan recall >= 95%"},
    {9, "retraining on a disjoint signature set forgets; control changes < 1 point"},
    {10, "CLI reruns from manifests give bit-identical checkpoints and reports"},
};

class CriterionPrinter : public ::testing::EmptyTestEventListener {
  void OnTestEnd(const ::testing::TestInfo& info) override {
    const std::string name = info.name();
    const int n = std::stoi(name.substr(1, 2));
    std::cout << (info.result()->Passed() ? "PASS" : "FAIL") << " criterion " << n << ": " << kCriteria.at(n)
              << std::endl;
  }
};

}  // namespace

int main(int argc, char** argv) {
  ::testing::InitGoogleTest(&argc, argv);
  ::testing::UnitTest::GetInstance()->listeners().Append(new CriterionPrinter);
  return RUN_ALL_TESTS();
}
