#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "odenorm/models.hpp"
#include "oracles.hpp"

using namespace odenorm;
using testing_support::random_tensor;
using testing_support::TempDir;

namespace {

ModelConfig config_of(Arch arch, NormKind kind, int channels, int classes = 10) {
  ModelConfig c;
  c.arch = arch;
  c.schedule = {kind, kind, kind};
  c.base_channels = channels;
  c.num_classes = classes;
  c.seed = 11;
  return c;
}

int64_t conv_count(int64_t in, int64_t out, int64_t k) { return in * out * k * k + out; }

}  // namespace

TEST(Models, ODENet4LogitShape) {
  Model m = build(config_of(Arch::kODENet4, NormKind::kNF, 8));
  EXPECT_EQ(m.infer(random_tensor({2, 3, 32, 32}, 1)).shape(), (Shape{2, 10}));
}

TEST(Models, EveryArchitectureAndNormProducesLogits) {
  for (Arch a : {Arch::kODENet4, Arch::kODENet10, Arch::kResNet10}) {
    for (NormKind k : {NormKind::kBN, NormKind::kLN, NormKind::kWN, NormKind::kSN, NormKind::kNF}) {
      Model m = build(config_of(a, k, 2, 3));
      m.set_mode(Mode::kTrain);
      Tensor logits = m.forward(Var(random_tensor({2, 3, 8, 8}, 2))).value();
      EXPECT_EQ(logits.shape(), (Shape{2, 3})) << to_string(a) << " " << to_string(k);
      EXPECT_TRUE(logits.all_finite());
    }
  }
}

TEST(Models, ODENet10ParameterCountClosedForm) {
  int64_t c = 16, k = 10;
  int64_t expected = conv_count(3, c, 3)                                                             // stem
                     + conv_count(c, 2 * c, 3) + conv_count(2 * c, 2 * c, 3) + conv_count(c, 2 * c, 1)  // res1
                     + conv_count(2 * c + 1, 2 * c, 3) + conv_count(2 * c, 2 * c, 3)                  // ode1
                     + conv_count(2 * c, 4 * c, 3) + conv_count(4 * c, 4 * c, 3) + conv_count(2 * c, 4 * c, 1)  // res2
                     + conv_count(4 * c + 1, 4 * c, 3) + conv_count(4 * c, 4 * c, 3)                  // ode2
                     + 4 * c * k + k;                                                                 // fc
  EXPECT_EQ(build(config_of(Arch::kODENet10, NormKind::kNF, 16)).trainable_count(), expected);
  // Normalized conv outputs: C + 3*2C + 2*2C + 3*4C + 2*4C.
  int64_t normalized = 31 * c;
  EXPECT_EQ(build(config_of(Arch::kODENet10, NormKind::kBN, 16)).trainable_count(), expected + 2 * normalized);
  EXPECT_EQ(build(config_of(Arch::kODENet10, NormKind::kLN, 16)).trainable_count(), expected + 2 * normalized);
  EXPECT_EQ(build(config_of(Arch::kODENet10, NormKind::kWN, 16)).trainable_count(), expected + normalized);
  EXPECT_EQ(build(config_of(Arch::kODENet10, NormKind::kSN, 16)).trainable_count(), expected);
}

TEST(Models, ODENet4AndAutonomousParameterCounts) {
  int64_t c = 8;
  ModelConfig cfg = config_of(Arch::kODENet4, NormKind::kNF, 8, 2);
  EXPECT_EQ(build(cfg).trainable_count(),
            conv_count(3, c, 3) + conv_count(c + 1, c, 3) + conv_count(c, c, 3) + c * 2 + 2);
  cfg.autonomous_rhs = true;
  EXPECT_EQ(build(cfg).trainable_count(), conv_count(3, c, 3) + conv_count(c, c, 3) + conv_count(c, c, 3) + c * 2 + 2);
}

TEST(Models, ResNet10HasNoOdeBlocks) {
  Model m = build(config_of(Arch::kResNet10, NormKind::kNF, 4));
  EXPECT_TRUE(m.ode_blocks().empty());
  EXPECT_EQ(build(config_of(Arch::kODENet10, NormKind::kNF, 4)).ode_blocks().size(), 2u);
  std::vector<std::string> kinds;
  for (const auto& l : m.layers()) kinds.emplace_back(l->kind());
  EXPECT_EQ(kinds, (std::vector<std::string>{"conv_stage", "resnet_block", "resnet_block", "resnet_block",
                                             "resnet_block", "classifier"}));
}

TEST(Models, BuildIsDeterministicPerSeed) {
  ModelConfig c = config_of(Arch::kODENet10, NormKind::kSN, 4);
  Model a = build(c), b = build(c);
  EXPECT_EQ(a.state_hash(), b.state_hash());
  for (size_t i = 0; i < a.registry().size(); ++i) {
    EXPECT_TRUE(bitwise_equal(a.registry()[i]->value, b.registry()[i]->value));
  }
  c.seed = 12;
  EXPECT_NE(build(c).state_hash(), a.state_hash());
}

TEST(Models, ZeroInputGivesIdenticalRows) {
  Model m = build(config_of(Arch::kODENet4, NormKind::kNF, 4));
  m.find("fc.bias")->value = Tensor::zeros({10});
  Tensor logits = m.infer(Tensor::zeros({3, 3, 8, 8}));
  for (int64_t r = 1; r < 3; ++r)
    for (int64_t k = 0; k < 10; ++k) EXPECT_EQ(logits[r * 10 + k], logits[k]);
}

TEST(Models, EvalForwardIsPure) {
  for (NormKind k : {NormKind::kBN, NormKind::kSN}) {
    Model m = build(config_of(Arch::kODENet10, k, 2));
    m.set_mode(Mode::kTrain);
    Tensor x = random_tensor({4, 3, 8, 8}, 3);
    m.forward(Var(x));
    m.set_mode(Mode::kEval);
    uint64_t before = m.state_hash();
    Tensor a = m.forward(Var(x)).value();
    Tensor b = m.forward(Var(x), SolverSpec(Scheme::kRK4, 16)).value();
    Tensor c = m.forward(Var(x)).value();
    EXPECT_TRUE(bitwise_equal(a, c));
    EXPECT_FALSE(bitwise_equal(a, b));
    EXPECT_EQ(m.state_hash(), before) << to_string(k);
  }
}

TEST(Models, TrainModeUpdatesNormalizationState) {
  Model m = build(config_of(Arch::kODENet4, NormKind::kBN, 2));
  m.set_mode(Mode::kTrain);
  uint64_t before = m.state_hash();
  m.forward(Var(random_tensor({4, 3, 8, 8}, 4)));
  EXPECT_NE(m.state_hash(), before);
}

TEST(Models, OverrideWithinStepHalvingBound) {
  ModelConfig c = testing_support::tiny_config(NormKind::kNF, 4, 8);
  Model m = build(c);
  m.set_mode(Mode::kEval);
  Tensor x = make_spirals(4, 0.0, 2).images;
  Tensor e8 = m.infer(x, SolverSpec(Scheme::kEuler, 8));
  Tensor e16 = m.infer(x, SolverSpec(Scheme::kEuler, 16));
  Tensor rk = m.infer(x, SolverSpec(Scheme::kRK4, 32));
  // First-order extrapolation: err(h) ~ 2 |y(h) - y(h/2)|.
  double bound = 2.0 * max_abs_diff(e8, e16);
  EXPECT_LE(max_abs_diff(e8, rk), 1.25 * bound);
  EXPECT_GT(max_abs_diff(e8, rk), 0.0);
  EXPECT_TRUE(bitwise_equal(m.infer(x), e8));
}

TEST(Models, NormKindsShareShapeTrace) {
  Tensor x = random_tensor({2, 3, 8, 8}, 5);
  auto trace = [&](NormKind k) {
    Model m = build(config_of(Arch::kODENet10, k, 2));
    std::vector<Shape> shapes;
    ForwardContext ctx;
    Var h(x);
    for (const auto& layer : m.layers()) {
      h = layer->forward(h, ctx);
      shapes.push_back(h.shape());
    }
    return shapes;
  };
  auto reference = trace(NormKind::kNF);
  EXPECT_EQ(reference.back(), (Shape{2, 10}));
  for (NormKind k : {NormKind::kBN, NormKind::kLN, NormKind::kWN, NormKind::kSN}) EXPECT_EQ(trace(k), reference);
}

TEST(Models, ZeroFlowEqualsDeletedBlock) {
  Model m = oracles::zero_flow_model();
  Tensor x = make_spirals(4, 0.0, 3).images;
  ForwardContext ctx;
  Var skipped = m.layers()[2]->forward(m.layers()[0]->forward(Var(x), ctx), ctx);
  ASSERT_EQ(m.layers().size(), 3u);
  EXPECT_EQ(m.layers()[1]->kind(), "ode_block");
  EXPECT_TRUE(bitwise_equal(m.infer(x), skipped.value()));
  EXPECT_TRUE(bitwise_equal(m.infer(x, SolverSpec(Scheme::kRK4, 64)), skipped.value()));
}

TEST(Models, NonFiniteActivationsNameTheLayer) {
  Model m = build(config_of(Arch::kODENet4, NormKind::kNF, 2));
  m.find("stem.bias")->value = Tensor::full({2}, std::nan(""));
  try {
    m.infer(random_tensor({1, 3, 4, 4}, 6));
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 0 (conv_stage)"), std::string::npos) << e.what();
  }
}

TEST(Models, InvalidConfigs) {
  ModelConfig c = config_of(Arch::kODENet4, NormKind::kNF, 0);
  EXPECT_THROW(build(c), std::invalid_argument);
  c.base_channels = 2;
  c.num_classes = 1;
  EXPECT_THROW(build(c), std::invalid_argument);
  EXPECT_THROW(parse_arch("ODENet7"), std::invalid_argument);
  for (Arch a : {Arch::kODENet4, Arch::kODENet10, Arch::kResNet10}) EXPECT_EQ(parse_arch(to_string(a)), a);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  TempDir tmp("ckpt");
  for (NormKind k : {NormKind::kBN, NormKind::kSN, NormKind::kWN}) {
    ModelConfig c = config_of(Arch::kODENet10, k, 2);
    c.train_spec = SolverSpec(Scheme::kRK2, 6);
    c.autonomous_rhs = k == NormKind::kWN;
    Model m = build(c);
    m.set_mode(Mode::kTrain);
    m.forward(Var(random_tensor({3, 3, 8, 8}, 7)));
    auto dir = tmp.path() / std::string(to_string(k));
    save_checkpoint(m, dir, 42);
    LoadedCheckpoint loaded = load_checkpoint(dir);
    EXPECT_EQ(loaded.epoch, 42);
    EXPECT_EQ(loaded.model.mode(), Mode::kEval);
    EXPECT_EQ(loaded.model.state_hash(), m.state_hash());
    EXPECT_EQ(format_manifest(loaded.model.config(), 42), format_manifest(c, 42));
    for (size_t i = 0; i < m.registry().size(); ++i) {
      EXPECT_TRUE(bitwise_equal(loaded.model.registry()[i]->value, m.registry()[i]->value));
    }
    save_checkpoint(loaded.model, tmp.path() / "again", 42);
    EXPECT_EQ(testing_support::read_file(dir / "params.bin"), testing_support::read_file(tmp.path() / "again" / "params.bin"));
    EXPECT_EQ(testing_support::read_file(dir / "manifest.txt"),
              testing_support::read_file(tmp.path() / "again" / "manifest.txt"));
  }
}

TEST(Checkpoint, ManifestRoundTrip) {
  ModelConfig c = config_of(Arch::kResNet10, NormKind::kLN, 5, 7);
  c.schedule.after_first_conv = NormKind::kBN;
  c.train_spec = SolverSpec(Scheme::kRK4, 12);
  c.seed = 123456789012345ull;
  auto [parsed, epoch] = parse_manifest(format_manifest(c, 9));
  EXPECT_EQ(epoch, 9);
  EXPECT_EQ(format_manifest(parsed, 9), format_manifest(c, 9));
  EXPECT_EQ(parsed.schedule, c.schedule);
  EXPECT_EQ(parsed.train_spec, c.train_spec);
  EXPECT_EQ(parsed.seed, c.seed);
  EXPECT_THROW(parse_manifest("arch=ODENet4\n"), CheckpointError);
  EXPECT_THROW(parse_manifest("no equals sign\n"), CheckpointError);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  TempDir tmp("badckpt");
  Model m = build(config_of(Arch::kODENet4, NormKind::kNF, 2));
  save_checkpoint(m, tmp.path() / "good", 1);
  std::string params = testing_support::read_file(tmp.path() / "good" / "params.bin");
  std::string manifest = testing_support::read_file(tmp.path() / "good" / "manifest.txt");
  auto write = [&](const std::string& name, const std::string& p, const std::string& mf) {
    auto dir = tmp.path() / name;
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "params.bin", std::ios::binary) << p;
    std::ofstream(dir / "manifest.txt", std::ios::binary) << mf;
    return dir;
  };
  std::string bad_magic = params;
  bad_magic[0] = 'X';
  EXPECT_THROW(load_checkpoint(write("magic", bad_magic, manifest)), CheckpointError);
  EXPECT_THROW(load_checkpoint(write("short", params.substr(0, params.size() - 3), manifest)), CheckpointError);
  EXPECT_THROW(load_checkpoint(write("long", params + "x", manifest)), CheckpointError);
  std::string wider = manifest;
  wider.replace(wider.find("base_channels=2"), 15, "base_channels=3");
  EXPECT_THROW(load_checkpoint(write("wider", params, wider)), CheckpointError);
  EXPECT_THROW(load_checkpoint(tmp.path() / "missing"), CheckpointError);
  try {
    load_checkpoint(write("magic2", bad_magic, manifest));
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("bad magic"), std::string::npos);
  }
}
