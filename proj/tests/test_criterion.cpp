#include <gtest/gtest.h>

#include <cmath>

#include "odenorm/criterion.hpp"
#include "oracles.hpp"

using namespace odenorm;
using testing_support::PointwiseLinearRhs;
using testing_support::random_tensor;
using testing_support::TempDir;

namespace {

// x -> ODE(f(z) = a z) -> fc with logits (z - tau, tau - z) on single-pixel,
// single-channel inputs.
Model scalar_flow_model(double a, double tau, SolverSpec train_spec) {
  ModelConfig c;
  c.in_channels = 1;
  c.num_classes = 2;
  c.base_channels = 1;
  c.train_spec = train_spec;
  std::mt19937_64 rng(1);
  std::vector<std::unique_ptr<Layer>> layers;
  layers.push_back(std::make_unique<OdeBlock>(
      std::make_unique<PointwiseLinearRhs>(std::vector<std::vector<double>>{{a}}, false), train_spec));
  auto head = std::make_unique<ClassifierHead>("fc", 1, 2, rng);
  head->weight().value = Tensor({2, 1}, {1.0, -1.0});
  head->bias().value = Tensor({2}, {-tau, tau});
  layers.push_back(std::move(head));
  Model m(c, std::move(layers));
  m.set_mode(Mode::kEval);
  return m;
}

// Inputs uniform on (0, 3); label 0 iff the exact flow exp(a) x lands above tau.
Dataset scalar_data(int n, double a, double tau, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  Tensor x({n, 1, 1, 1});
  std::vector<int> labels;
  for (int i = 0; i < n; ++i) {
    double v = u(rng);
    x.mutable_data()[static_cast<size_t>(i)] = v;
    labels.push_back(std::exp(a) * v > tau ? 0 : 1);
  }
  return Dataset{x, labels, "scalar", 2};
}

const EvalGrid kGrid{{Scheme::kEuler, Scheme::kRK2, Scheme::kRK4}, {4, 8, 16, 32, 64, 128}};

}  // namespace

TEST(Accuracy, PerfectAndAdversarialClassifiers) {
  Model m = scalar_flow_model(0.0, 1.5, SolverSpec(Scheme::kEuler, 2));
  Dataset d = scalar_data(10, 0.0, 1.5, 2);
  EXPECT_EQ(evaluate_accuracy(m, d), 1.0);
  for (int& y : d.labels) y = 1 - y;
  EXPECT_EQ(evaluate_accuracy(m, d), 0.0);
}

TEST(Accuracy, UntrainedModelNearChance) {
  ModelConfig c = testing_support::tiny_config(NormKind::kNF, 4, 2);
  c.num_classes = 10;
  Model m = build(c);
  Dataset d{random_tensor({1000, 3, 8, 8}, 3), {}, "noise", 10};
  for (int i = 0; i < 1000; ++i) d.labels.push_back(i % 10);
  double acc = evaluate_accuracy(m, d, std::nullopt, 128);
  EXPECT_GE(acc, 0.02);
  EXPECT_LE(acc, 0.25);
}

TEST(Accuracy, BatchSizeDoesNotMatterAndEmptyIsAnError) {
  Model m = scalar_flow_model(-1.0, 0.5, SolverSpec(Scheme::kEuler, 2));
  Dataset d = scalar_data(101, -1.0, 0.5, 4);
  EXPECT_EQ(evaluate_accuracy(m, d, std::nullopt, 7), evaluate_accuracy(m, d, std::nullopt, 256));
  Dataset empty{Tensor(), {}, "empty", 2};
  EXPECT_THROW(evaluate_accuracy(m, empty), DataError);
}

TEST(Criterion, ZeroFlowIsSmoothWithZeroDrop) {
  Model m = oracles::zero_flow_model();
  Dataset d = make_spirals(40, 0.1, 5);
  CriterionReport r = run_criterion(m, d, kGrid);
  EXPECT_EQ(r.verdict, Verdict::kSmooth);
  EXPECT_EQ(r.worst_drop, 0.0);
  EXPECT_EQ(r.grid.size(), 18u);
  for (const GridPoint& p : r.grid) EXPECT_EQ(p.accuracy, r.baseline_accuracy);
  EXPECT_EQ(r.reference_accuracy, r.baseline_accuracy);
}

TEST(Criterion, ContractionAccuracyRisesTowardExactFlow) {
  Model m = scalar_flow_model(-1.0, 0.5, SolverSpec(Scheme::kEuler, 2));
  Dataset d = scalar_data(1000, -1.0, 0.5, 6);
  CriterionReport r = run_criterion(m, d, kGrid, 0.0);
  EXPECT_EQ(r.verdict, Verdict::kSmooth);
  EXPECT_LT(r.baseline_accuracy, 0.9);
  for (Scheme s : kGrid.schemes) {
    double previous = r.baseline_accuracy;
    for (const GridPoint& p : r.grid) {
      if (p.scheme != s) continue;
      EXPECT_GE(p.accuracy, previous) << to_string(s) << " " << p.n_evals;
      previous = p.accuracy;
    }
  }
  ASSERT_TRUE(r.reference_accuracy.has_value());
  EXPECT_EQ(*r.reference_accuracy, 1.0);
}

TEST(Criterion, ExpansionFitAtCoarseSolverIsNotSmooth) {
  // Labels follow the (Euler, 2) flow, so more accurate solvers lose accuracy.
  Model m = scalar_flow_model(1.0, 2.5, SolverSpec(Scheme::kEuler, 2));
  Dataset d = scalar_data(1000, std::log(2.25), 2.5, 7);
  CriterionReport r = run_criterion(m, d, kGrid);
  EXPECT_EQ(r.baseline_accuracy, 1.0);
  EXPECT_EQ(r.verdict, Verdict::kNotSmooth);
  EXPECT_GT(r.worst_drop, 0.005);
}

TEST(Criterion, OnlyMorePowerfulSolversAreCompared) {
  Model m = scalar_flow_model(-1.0, 0.5, SolverSpec(Scheme::kEuler, 8));
  Dataset d = scalar_data(50, -1.0, 0.5, 8);
  CriterionReport r = run_criterion(m, d, kGrid);
  for (const GridPoint& p : r.grid) EXPECT_GT(p.n_evals, 8);
  EXPECT_EQ(r.grid.size(), 12u);
  EXPECT_EQ(r.train_spec, SolverSpec(Scheme::kEuler, 8));
  try {
    run_criterion(m, d, EvalGrid{{Scheme::kEuler, Scheme::kRK4}, {4, 8}});
    FAIL();
  } catch (const CriterionError& e) {
    EXPECT_NE(std::string(e.what()).find("no more powerful solver in grid"), std::string::npos);
  }
}

TEST(Criterion, GridValidation) {
  EXPECT_THROW((EvalGrid{{Scheme::kEuler}, {8, 8}}.validate()), CriterionError);
  EXPECT_THROW((EvalGrid{{Scheme::kEuler}, {16, 8}}.validate()), CriterionError);
  EXPECT_THROW((EvalGrid{{Scheme::kRK4}, {6}}.validate()), CriterionError);
  EXPECT_THROW((EvalGrid{{}, {8}}.validate()), CriterionError);
  EXPECT_NO_THROW((EvalGrid{{Scheme::kRK2}, {2, 4}}.validate()));
}

TEST(Criterion, ParallelGridMatchesSerial) {
  Model m = build(testing_support::tiny_config(NormKind::kLN, 4, 2));
  Dataset d = make_spirals(30, 0.05, 9);
  CriterionReport a = run_criterion(m, d, kGrid, 0.005, 1);
  CriterionReport b = run_criterion(m, d, kGrid, 0.005, 4);
  EXPECT_EQ(format_report(a), format_report(b));
  EXPECT_EQ(a.grid, b.grid);
}

TEST(Criterion, NeverMutatesModelState) {
  for (NormKind k : {NormKind::kBN, NormKind::kSN}) {
    Model m = build(testing_support::tiny_config(k, 4, 2));
    Dataset d = make_spirals(20, 0.0, 10);
    m.set_mode(Mode::kTrain);
    m.forward(Var(d.images));
    m.set_mode(Mode::kEval);
    uint64_t before = m.state_hash();
    run_criterion(m, d, kGrid, 0.005, 3);
    EXPECT_EQ(m.state_hash(), before) << to_string(k);
  }
}

TEST(Verdict, ToleranceIsMonotone) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> acc(0.0, 1.0), eps(0.0, 0.2);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<GridPoint> grid;
    for (int i = 0; i < 6; ++i) grid.push_back({Scheme::kRK4, 4 * (i + 1), acc(rng)});
    double baseline = acc(rng);
    double e1 = eps(rng), e2 = e1 + eps(rng);
    if (decide_verdict(grid, baseline, e1) == Verdict::kSmooth) {
      EXPECT_EQ(decide_verdict(grid, baseline, e2), Verdict::kSmooth);
    }
    double drop = worst_drop(grid, baseline);
    EXPECT_GE(drop, 0.0);
    EXPECT_EQ(decide_verdict(grid, baseline, e1) == Verdict::kSmooth, drop <= e1);
  }
}

TEST(Verdict, BoundaryAndNames) {
  std::vector<GridPoint> grid = {{Scheme::kEuler, 16, 0.75}, {Scheme::kRK2, 16, 0.9}};
  const double drop = 0.8 - 0.75;
  EXPECT_EQ(worst_drop(grid, 0.8), drop);
  EXPECT_EQ(decide_verdict(grid, 0.8, drop), Verdict::kSmooth);
  EXPECT_EQ(decide_verdict(grid, 0.8, 0.04), Verdict::kNotSmooth);
  EXPECT_EQ(worst_drop(grid, 0.5), 0.0);
  EXPECT_EQ(to_string(Verdict::kNotSmooth), "not_smooth");
  EXPECT_EQ(parse_verdict("smooth"), Verdict::kSmooth);
  EXPECT_THROW(parse_verdict("rough"), std::invalid_argument);
}

TEST(Report, TwoPointLayoutAndRoundTrip) {
  CriterionReport r;
  r.train_spec = SolverSpec(Scheme::kEuler, 2);
  r.baseline_accuracy = 0.8125;
  r.grid = {{Scheme::kEuler, 4, 0.8}, {Scheme::kRK4, 4, 1.0 / 3.0}};
  r.epsilon = 0.005;
  r.verdict = decide_verdict(r.grid, r.baseline_accuracy, r.epsilon);
  std::string text = format_report(r);
  std::vector<std::string> lines;
  std::stringstream ss(text);
  for (std::string line; std::getline(ss, line);) lines.push_back(line);
  ASSERT_EQ(lines.size(), 6u);
  EXPECT_EQ(lines[0], "scheme,n_evals,accuracy");
  EXPECT_EQ(lines[1].rfind("Euler,4,", 0), 0u);
  EXPECT_EQ(lines[2].rfind("RK4,4,", 0), 0u);
  EXPECT_EQ(lines[3], "baseline,0.8125");
  EXPECT_EQ(lines[4], "epsilon,0.005");
  EXPECT_EQ(lines[5], "verdict,not_smooth");

  ParsedReport back = parse_report(text);
  EXPECT_EQ(back.grid, r.grid);
  EXPECT_EQ(back.baseline, r.baseline_accuracy);
  EXPECT_EQ(back.epsilon, r.epsilon);
  EXPECT_EQ(back.verdict, r.verdict);
  EXPECT_EQ(decide_verdict(back.grid, back.baseline, back.epsilon), back.verdict);

  TempDir tmp("report");
  emit_report(r, tmp.path() / "report.csv");
  EXPECT_EQ(testing_support::read_file(tmp.path() / "report.csv"), text);
  EXPECT_EQ(read_report(tmp.path() / "report.csv").grid, r.grid);
  EXPECT_THROW(emit_report(r, tmp.path() / "missing" / "dir" / "report.csv"), std::runtime_error);
}

TEST(Report, MalformedInputsAreRejected) {
  EXPECT_THROW(parse_report("scheme,n_evals\n"), std::invalid_argument);
  EXPECT_THROW(parse_report("scheme,n_evals,accuracy\nEuler,4,0.5\nbaseline,0.5\nepsilon,0.1\n"), std::invalid_argument);
  EXPECT_THROW(parse_report("scheme,n_evals,accuracy\nEuler,x,0.5\nbaseline,0.5\nepsilon,0.1\nverdict,smooth\n"),
               std::invalid_argument);
}

TEST(Report, RandomReportsRoundTrip) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> acc(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    CriterionReport r;
    r.baseline_accuracy = acc(rng);
    r.epsilon = acc(rng) * 0.01;
    for (int i = 0; i < 1 + trial % 7; ++i) r.grid.push_back({static_cast<Scheme>(i % 3), 4 * (i + 1), acc(rng)});
    r.verdict = decide_verdict(r.grid, r.baseline_accuracy, r.epsilon);
    ParsedReport back = parse_report(format_report(r));
    EXPECT_EQ(back.grid, r.grid);
    EXPECT_EQ(back.baseline, r.baseline_accuracy);
    EXPECT_EQ(back.epsilon, r.epsilon);
  }
}
