#include "odenorm/models.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "odenorm/ops.hpp"

namespace odenorm {

std::string_view to_string(Arch arch) {
  switch (arch) {
    case Arch::kODENet4: return "ODENet4";
    case Arch::kODENet10: return "ODENet10";
    case Arch::kResNet10: return "ResNet10";
  }
  return "?";
}

Arch parse_arch(std::string_view text) {
  for (Arch a : {Arch::kODENet4, Arch::kODENet10, Arch::kResNet10}) {
    if (to_string(a) == text) return a;
  }
  throw std::invalid_argument("unknown architecture '" + std::string(text) +
                              "' (expected ODENet4, ODENet10 or ResNet10)");
}

void ModelConfig::validate() const {
  if (base_channels < 1) throw std::invalid_argument("model: base_channels must be positive");
  if (in_channels < 1) throw std::invalid_argument("model: in_channels must be positive");
  if (num_classes < 2) throw std::invalid_argument("model: num_classes must be at least 2");
}

ConvStage::ConvStage(const std::string& name, const ConvSpec& spec, NormKind kind, std::mt19937_64& rng)
    : unit_(name, spec, kind, rng) {}

Var ConvStage::forward(const Var& x, const ForwardContext& ctx) const { return relu(unit_.forward(x, ctx.phase)); }

ResidualBlock::ResidualBlock(const std::string& name, int64_t in_channels, int64_t out_channels, int stride,
                             NormKind kind, std::mt19937_64& rng)
    : conv1_(name + ".conv1", ConvSpec{in_channels, out_channels, 3, stride, 1, true}, kind, rng),
      conv2_(name + ".conv2", ConvSpec{out_channels, out_channels, 3, 1, 1, true}, kind, rng) {
  if (stride != 1 || in_channels != out_channels) {
    projection_.emplace(name + ".shortcut", ConvSpec{in_channels, out_channels, 1, stride, 0, true}, kind, rng);
  }
}

Var ResidualBlock::forward(const Var& x, const ForwardContext& ctx) const {
  Var y = relu(conv1_.forward(x, ctx.phase));
  y = conv2_.forward(y, ctx.phase);
  Var shortcut = projection_ ? projection_->forward(x, ctx.phase) : x;
  return relu(add(y, shortcut));
}

void ResidualBlock::collect(std::vector<Parameter*>& registry) {
  conv1_.collect(registry);
  conv2_.collect(registry);
  if (projection_) projection_->collect(registry);
}

ClassifierHead::ClassifierHead(const std::string& name, int64_t in_features, int64_t classes, std::mt19937_64& rng)
    : weight_{name + ".weight", init_uniform_fan_in({classes, in_features}, in_features, rng), true},
      bias_{name + ".bias", init_uniform_fan_in({classes}, in_features, rng), true} {}

Var ClassifierHead::forward(const Var& x, const ForwardContext&) const {
  return linear(global_avgpool(x), LinearParams{use(weight_), use(bias_)});
}

void ClassifierHead::collect(std::vector<Parameter*>& registry) {
  registry.push_back(&weight_);
  registry.push_back(&bias_);
}

Model::Model(ModelConfig config, std::vector<std::unique_ptr<Layer>> layers)
    : config_(std::move(config)), layers_(std::move(layers)) {
  for (auto& layer : layers_) layer->collect(registry_);
}

Var Model::forward(const Var& x, std::optional<SolverSpec> override_spec, bool checkpoint_ode) const {
  ForwardContext ctx;
  ctx.phase = mode_ == Mode::kTrain ? Phase::kTrain : Phase::kEval;
  ctx.solver_override = override_spec;
  ctx.checkpoint_ode = checkpoint_ode;
  return forward(x, ctx);
}

Var Model::forward(const Var& x, const ForwardContext& ctx) const {
  if (x.value().rank() != 4 || x.shape()[1] != config_.in_channels) {
    throw ShapeError("model: expected input [B," + std::to_string(config_.in_channels) + ",H,W], got " +
                     shape_str(x.shape()));
  }
  Var h = x;
  for (size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i]->forward(h, ctx);
    if (!h.value().all_finite()) {
      throw NumericalError("model: non-finite activations after layer " + std::to_string(i) + " (" +
                           std::string(layers_[i]->kind()) + ")");
    }
  }
  return h;
}

Tensor Model::infer(const Tensor& x, std::optional<SolverSpec> spec) const {
  NoRecordScope untaped;
  ForwardContext ctx;
  ctx.phase = Phase::kEval;
  ctx.solver_override = spec;
  return forward(Var(x), ctx).value();
}

std::vector<Parameter*> Model::trainable_parameters() const {
  std::vector<Parameter*> out;
  for (Parameter* p : registry_) {
    if (p->trainable) out.push_back(p);
  }
  return out;
}

int64_t Model::trainable_count() const {
  int64_t n = 0;
  for (const Parameter* p : registry_) {
    if (p->trainable) n += p->value.size();
  }
  return n;
}

Parameter* Model::find(std::string_view name) const {
  for (Parameter* p : registry_) {
    if (p->name == name) return p;
  }
  return nullptr;
}

uint64_t Model::state_hash() const {
  uint64_t h = 1469598103934665603ULL;
  auto feed = [&h](const void* data, size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const Parameter* p : registry_) {
    feed(p->name.data(), p->name.size());
    feed(p->value.shape().data(), p->value.shape().size() * sizeof(int64_t));
    feed(p->value.data().data(), p->value.data().size_bytes());
  }
  return h;
}

std::vector<OdeBlock*> Model::ode_blocks() const {
  std::vector<OdeBlock*> out;
  for (const auto& layer : layers_) {
    if (auto* block = dynamic_cast<OdeBlock*>(layer.get())) out.push_back(block);
  }
  return out;
}

Model build(const ModelConfig& config) {
  config.validate();
  std::mt19937_64 rng = make_rng(config.seed, "init");
  const NormSchedule& s = config.schedule;
  int64_t c = config.base_channels;
  std::vector<std::unique_ptr<Layer>> layers;
  layers.push_back(std::make_unique<ConvStage>("stem", ConvSpec{config.in_channels, c, 3, 1, 1, true},
                                               s.after_first_conv, rng));
  auto ode = [&](const std::string& name, int64_t channels) {
    return std::make_unique<OdeBlock>(
        std::make_unique<ConvRhs>(name, channels, s.ode_blocks, config.autonomous_rhs, rng), config.train_spec);
  };
  int64_t width = c;
  switch (config.arch) {
    case Arch::kODENet4:
      layers.push_back(ode("ode1", c));
      break;
    case Arch::kODENet10:
      layers.push_back(std::make_unique<ResidualBlock>("res1", c, 2 * c, 2, s.resnet_blocks, rng));
      layers.push_back(ode("ode1", 2 * c));
      layers.push_back(std::make_unique<ResidualBlock>("res2", 2 * c, 4 * c, 2, s.resnet_blocks, rng));
      layers.push_back(ode("ode2", 4 * c));
      width = 4 * c;
      break;
    case Arch::kResNet10:
      layers.push_back(std::make_unique<ResidualBlock>("res1", c, 2 * c, 2, s.resnet_blocks, rng));
      layers.push_back(std::make_unique<ResidualBlock>("res2", 2 * c, 2 * c, 1, s.resnet_blocks, rng));
      layers.push_back(std::make_unique<ResidualBlock>("res3", 2 * c, 4 * c, 2, s.resnet_blocks, rng));
      layers.push_back(std::make_unique<ResidualBlock>("res4", 4 * c, 4 * c, 1, s.resnet_blocks, rng));
      width = 4 * c;
      break;
  }
  layers.push_back(std::make_unique<ClassifierHead>("fc", width, config.num_classes, rng));
  return Model(config, std::move(layers));
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'O', 'D', 'E', 'N', 'O', 'R', 'M', '1'};

template <typename T>
void put_le(std::ostream& os, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& is, const char* what) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw CheckpointError(std::string("checkpoint: truncated while reading ") + what);
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

std::string format_manifest(const ModelConfig& c, int epoch) {
  std::ostringstream os;
  os << "arch=" << to_string(c.arch) << '\n'
     << "norm_first=" << to_string(c.schedule.after_first_conv) << '\n'
     << "norm_resnet=" << to_string(c.schedule.resnet_blocks) << '\n'
     << "norm_ode=" << to_string(c.schedule.ode_blocks) << '\n'
     << "base_channels=" << c.base_channels << '\n'
     << "in_channels=" << c.in_channels << '\n'
     << "num_classes=" << c.num_classes << '\n'
     << "train_scheme=" << to_string(c.train_spec.scheme()) << '\n'
     << "train_n=" << c.train_spec.n_evals() << '\n'
     << "autonomous_rhs=" << (c.autonomous_rhs ? "true" : "false") << '\n'
     << "seed=" << c.seed << '\n'
     << "epoch=" << epoch << '\n';
  return os.str();
}

std::pair<ModelConfig, int> parse_manifest(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw CheckpointError("manifest line " + std::to_string(lineno) + ": expected key=value");
    }
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&kv](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw CheckpointError("manifest: missing key '" + key + "'");
    return it->second;
  };
  try {
    ModelConfig c;
    c.arch = parse_arch(get("arch"));
    c.schedule.after_first_conv = parse_norm_kind(get("norm_first"));
    c.schedule.resnet_blocks = parse_norm_kind(get("norm_resnet"));
    c.schedule.ode_blocks = parse_norm_kind(get("norm_ode"));
    c.base_channels = std::stoi(get("base_channels"));
    c.in_channels = std::stoi(get("in_channels"));
    c.num_classes = std::stoi(get("num_classes"));
    c.train_spec = SolverSpec(parse_scheme(get("train_scheme")), std::stoi(get("train_n")));
    c.autonomous_rhs = get("autonomous_rhs") == "true";
    c.seed = std::stoull(get("seed"));
    return {c, std::stoi(get("epoch"))};
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("manifest: ") + e.what());
  }
}

void save_checkpoint(const Model& model, const std::filesystem::path& dir, int epoch) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream manifest(dir / "manifest.txt", std::ios::binary);
    if (!manifest) throw CheckpointError("checkpoint: cannot write " + (dir / "manifest.txt").string());
    manifest << format_manifest(model.config(), epoch);
  }
  std::ofstream os(dir / "params.bin", std::ios::binary);
  if (!os) throw CheckpointError("checkpoint: cannot write " + (dir / "params.bin").string());
  os.write(kMagic, sizeof(kMagic));
  put_le<uint64_t>(os, model.registry().size());
  for (const Parameter* p : model.registry()) {
    put_le<uint32_t>(os, static_cast<uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put_le<uint32_t>(os, static_cast<uint32_t>(p->value.rank()));
    for (int64_t d : p->value.shape()) put_le<uint64_t>(os, static_cast<uint64_t>(d));
  }
  for (const Parameter* p : model.registry()) {
    for (double v : p->value.data()) put_le<double>(os, v);
  }
  if (!os) throw CheckpointError("checkpoint: write failed for " + (dir / "params.bin").string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.txt", std::ios::binary);
  if (!manifest) throw CheckpointError("checkpoint: cannot read " + (dir / "manifest.txt").string());
  std::stringstream text;
  text << manifest.rdbuf();
  auto [config, epoch] = parse_manifest(text.str());

  std::ifstream is(dir / "params.bin", std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot read " + (dir / "params.bin").string());
  char magic[sizeof(kMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("checkpoint: bad magic in " + (dir / "params.bin").string() + " (expected ODENORM1)");
  }
  Model model = build(config);
  const auto& registry = model.registry();
  uint64_t count = get_le<uint64_t>(is, "tensor count");
  if (count != registry.size()) {
    throw CheckpointError("checkpoint: " + std::to_string(count) + " tensors stored but model has " +
                          std::to_string(registry.size()));
  }
  for (const Parameter* p : registry) {
    uint32_t len = get_le<uint32_t>(is, "name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw CheckpointError("checkpoint: truncated tensor name");
    uint32_t rank = get_le<uint32_t>(is, "rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int64_t>(get_le<uint64_t>(is, "extent"));
    if (name != p->name || shape != p->value.shape()) {
      throw CheckpointError("checkpoint: stored tensor " + name + shape_str(shape) + " does not match model tensor " +
                            p->name + shape_str(p->value.shape()));
    }
  }
  for (Parameter* p : registry) {
    std::vector<double> data(static_cast<size_t>(p->value.size()));
    for (double& v : data) v = get_le<double>(is, "tensor data");
    p->value = Tensor(p->value.shape(), std::move(data));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw CheckpointError("checkpoint: trailing bytes in params.bin");
  model.set_mode(Mode::kEval);
  return LoadedCheckpoint{std::move(model), epoch};
}

}  // namespace odenorm
