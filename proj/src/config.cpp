#include "odenorm/config.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "odenorm/csv.hpp"

namespace odenorm {

std::string_view to_string(DataPreset p) {
  switch (p) {
    case DataPreset::kSpirals: return "spirals";
    case DataPreset::kCifar10: return "cifar10";
    case DataPreset::kCifar10Small: return "cifar10-small";
  }
  return "?";
}

DataPreset parse_preset(std::string_view text) {
  if (text == "spirals") return DataPreset::kSpirals;
  if (text == "cifar10") return DataPreset::kCifar10;
  if (text == "cifar10-small") return DataPreset::kCifar10Small;
  throw std::invalid_argument("unknown data preset '" + std::string(text) + "' (spirals, cifar10, cifar10-small)");
}

void ExperimentConfig::validate() const {
  try {
    SolverSpec(solver.scheme, solver.n_evals);
    plan.validate();
    criterion.grid.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (base_channels < 1) throw ConfigError("model.base_channels must be >= 1");
  if (!(criterion.epsilon >= 0.0)) throw ConfigError("criterion.epsilon must be >= 0");
  if (data.train_size < 2 || data.test_size < 1) throw ConfigError("data.train_size must be >= 2 and test_size >= 1");
  if (data.records_per_batch < 1) throw ConfigError("data.records_per_batch must be >= 1");
  if (data.spirals_per_class < 1 || data.spirals_test_per_class < 1) {
    throw ConfigError("data.spirals_per_class and spirals_test_per_class must be >= 1");
  }
  if (!(data.spirals_noise >= 0.0)) throw ConfigError("data.spirals_noise must be >= 0");
}

ModelConfig ExperimentConfig::model_config(int in_channels, int num_classes) const {
  ModelConfig m;
  m.arch = arch;
  m.schedule = schedule;
  m.base_channels = base_channels;
  m.in_channels = in_channels;
  m.num_classes = num_classes;
  m.train_spec = SolverSpec(solver.scheme, solver.n_evals);
  m.seed = plan.seed;
  m.autonomous_rhs = autonomous_rhs;
  return m;
}

ExperimentConfig preset_defaults(DataPreset preset) {
  ExperimentConfig c;
  c.data.preset = preset;
  switch (preset) {
    case DataPreset::kSpirals:
      c.arch = Arch::kODENet4;
      c.plan.epochs = 120;
      c.plan.batch_size = 32;
      c.plan.lr0 = 0.01;
      c.plan.lr_drops = {40, 80};
      c.plan.weight_decay = 5e-3;
      c.plan.augment = false;
      c.criterion.grid = {{Scheme::kEuler, Scheme::kRK2, Scheme::kRK4}, {16, 32, 64, 128}};
      break;
    case DataPreset::kCifar10:
      c.arch = Arch::kODENet10;
      break;
    case DataPreset::kCifar10Small:
      c.arch = Arch::kODENet10;
      c.plan.epochs = 15;
      c.plan.batch_size = 64;
      c.plan.lr0 = 0.05;
      c.plan.lr_drops = {10, 13};
      c.criterion.grid = {{Scheme::kEuler, Scheme::kRK2, Scheme::kRK4}, {16, 32}};
      break;
  }
  return c;
}

namespace {

bool parse_bool(std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("expected true or false, got '" + std::string(v) + "'");
}

int64_t parse_int64(std::string_view v) {
  v = trim(v);
  int64_t out = 0;
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size() || v.empty()) {
    throw std::invalid_argument("expected an integer, got '" + std::string(v) + "'");
  }
  return out;
}

uint64_t parse_seed(std::string_view v) {
  int64_t s = parse_int64(v);
  if (s < 0) throw std::invalid_argument("seed must be >= 0");
  return static_cast<uint64_t>(s);
}

std::vector<std::string> list_items(std::string_view v) {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  for (auto& item : split(v, ',')) out.emplace_back(trim(item));
  return out;
}

template <typename T, typename F>
std::vector<T> parse_list(std::string_view v, F parse_one) {
  std::vector<T> out;
  for (const auto& item : list_items(v)) out.push_back(parse_one(item));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& items, const std::function<std::string(const T&)>& fmt) {
  std::string out;
  for (size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + fmt(items[i]);
  return out;
}

struct Key {
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

// Ordered as written by format_config.
const std::vector<std::pair<std::string, Key>>& keys() {
  static const std::vector<std::pair<std::string, Key>> table = [] {
    std::vector<std::pair<std::string, Key>> t;
    auto add = [&](std::string name, Key k) { t.emplace_back(std::move(name), std::move(k)); };
    auto str = [](auto v) { return std::string(to_string(v)); };
    add("model.arch", {[](auto& c, auto v) { c.arch = parse_arch(v); }, [=](auto& c) { return str(c.arch); }});
    add("model.base_channels", {[](auto& c, auto v) { c.base_channels = parse_int(v); },
                                [](auto& c) { return std::to_string(c.base_channels); }});
    add("model.autonomous_rhs", {[](auto& c, auto v) { c.autonomous_rhs = parse_bool(v); },
                                 [](auto& c) { return std::string(c.autonomous_rhs ? "true" : "false"); }});
    add("schedule.first", {[](auto& c, auto v) { c.schedule.after_first_conv = parse_norm_kind(v); },
                           [=](auto& c) { return str(c.schedule.after_first_conv); }});
    add("schedule.resnet", {[](auto& c, auto v) { c.schedule.resnet_blocks = parse_norm_kind(v); },
                            [=](auto& c) { return str(c.schedule.resnet_blocks); }});
    add("schedule.ode", {[](auto& c, auto v) { c.schedule.ode_blocks = parse_norm_kind(v); },
                         [=](auto& c) { return str(c.schedule.ode_blocks); }});
    add("solver.scheme", {[](auto& c, auto v) { c.solver.scheme = parse_scheme(v); },
                          [=](auto& c) { return str(c.solver.scheme); }});
    add("solver.n_evals", {[](auto& c, auto v) { c.solver.n_evals = parse_int(v); },
                           [](auto& c) { return std::to_string(c.solver.n_evals); }});
    add("solver.checkpoint", {[](auto& c, auto v) { c.checkpoint_ode = parse_bool(v); },
                              [](auto& c) { return std::string(c.checkpoint_ode ? "true" : "false"); }});
    add("plan.epochs", {[](auto& c, auto v) { c.plan.epochs = parse_int(v); },
                        [](auto& c) { return std::to_string(c.plan.epochs); }});
    add("plan.batch_size", {[](auto& c, auto v) { c.plan.batch_size = parse_int64(v); },
                            [](auto& c) { return std::to_string(c.plan.batch_size); }});
    add("plan.lr0", {[](auto& c, auto v) { c.plan.lr0 = parse_double(v); },
                     [](auto& c) { return format_double(c.plan.lr0); }});
    add("plan.lr_drops", {[](auto& c, auto v) { c.plan.lr_drops = parse_list<int>(v, parse_int); },
                          [](auto& c) {
                            return join<int>(c.plan.lr_drops, [](const int& d) { return std::to_string(d); });
                          }});
    add("plan.lr_factor", {[](auto& c, auto v) { c.plan.lr_factor = parse_double(v); },
                           [](auto& c) { return format_double(c.plan.lr_factor); }});
    add("plan.momentum", {[](auto& c, auto v) { c.plan.momentum = parse_double(v); },
                          [](auto& c) { return format_double(c.plan.momentum); }});
    add("plan.weight_decay", {[](auto& c, auto v) { c.plan.weight_decay = parse_double(v); },
                              [](auto& c) { return format_double(c.plan.weight_decay); }});
    add("plan.augment", {[](auto& c, auto v) { c.plan.augment = parse_bool(v); },
                         [](auto& c) { return std::string(c.plan.augment ? "true" : "false"); }});
    add("plan.seed", {[](auto& c, auto v) { c.plan.seed = parse_seed(v); },
                      [](auto& c) { return std::to_string(c.plan.seed); }});
    add("data.preset", {[](auto& c, auto v) { c.data.preset = parse_preset(v); },
                        [=](auto& c) { return str(c.data.preset); }});
    add("data.dir", {[](auto& c, auto v) { c.data.dir = std::string(v); }, [](auto& c) { return c.data.dir.string(); }});
    add("data.train_size", {[](auto& c, auto v) { c.data.train_size = parse_int64(v); },
                            [](auto& c) { return std::to_string(c.data.train_size); }});
    add("data.test_size", {[](auto& c, auto v) { c.data.test_size = parse_int64(v); },
                           [](auto& c) { return std::to_string(c.data.test_size); }});
    add("data.records_per_batch", {[](auto& c, auto v) { c.data.records_per_batch = parse_int64(v); },
                                   [](auto& c) { return std::to_string(c.data.records_per_batch); }});
    add("data.spirals_per_class", {[](auto& c, auto v) { c.data.spirals_per_class = parse_int(v); },
                                   [](auto& c) { return std::to_string(c.data.spirals_per_class); }});
    add("data.spirals_test_per_class", {[](auto& c, auto v) { c.data.spirals_test_per_class = parse_int(v); },
                                        [](auto& c) { return std::to_string(c.data.spirals_test_per_class); }});
    add("data.spirals_noise", {[](auto& c, auto v) { c.data.spirals_noise = parse_double(v); },
                               [](auto& c) { return format_double(c.data.spirals_noise); }});
    add("data.seed", {[](auto& c, auto v) { c.data.seed = parse_seed(v); },
                      [](auto& c) { return std::to_string(c.data.seed); }});
    add("criterion.schemes", {[](auto& c, auto v) { c.criterion.grid.schemes = parse_list<Scheme>(v, parse_scheme); },
                              [=](auto& c) {
                                return join<Scheme>(c.criterion.grid.schemes, [=](const Scheme& s) { return str(s); });
                              }});
    add("criterion.budgets", {[](auto& c, auto v) { c.criterion.grid.eval_budgets = parse_list<int>(v, parse_int); },
                              [](auto& c) {
                                return join<int>(c.criterion.grid.eval_budgets,
                                                 [](const int& n) { return std::to_string(n); });
                              }});
    add("criterion.epsilon", {[](auto& c, auto v) { c.criterion.epsilon = parse_double(v); },
                              [](auto& c) { return format_double(c.criterion.epsilon); }});
    return t;
  }();
  return table;
}

const Key* find_key(const std::string& dotted) {
  for (const auto& [name, key] : keys()) {
    if (name == dotted) return &key;
  }
  return nullptr;
}

const std::set<std::string> kSections{"model", "schedule", "solver", "plan", "data", "criterion"};

struct Assignment {
  std::string key;  // dotted
  std::string value;
  int line;
};

void assign(ExperimentConfig& c, const Assignment& a, const std::string& source) {
  auto where = source + ":" + std::to_string(a.line) + ": ";
  const Key* k = find_key(a.key);
  if (!k) throw ConfigError(where + "unknown key '" + a.key + "'");
  try {
    k->set(c, a.value);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + a.key + ": " + e.what());
  } catch (const std::out_of_range& e) {
    throw ConfigError(where + a.key + ": " + e.what());
  }
}

}  // namespace

void apply_override(ExperimentConfig& config, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "': expected section.key=value");
  assign(config, {std::string(trim(assignment.substr(0, eq))), std::string(trim(assignment.substr(eq + 1))), 0},
         "override");
  config.validate();
}

ConfigFile parse_config(const std::string& text, const std::string& source) {
  std::vector<Assignment> base;
  std::vector<std::pair<std::string, std::vector<Assignment>>> variants;
  std::set<std::string> seen;
  std::istringstream is(text);
  std::string raw;
  std::string section;
  int lineno = 0;
  bool in_variant = false;
  while (std::getline(is, raw)) {
    ++lineno;
    auto where = source + ":" + std::to_string(lineno) + ": ";
    std::string_view line = raw;
    auto comment = line.find_first_of("#;");
    if (comment != std::string_view::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header");
      std::string_view name = trim(line.substr(1, line.size() - 2));
      if (name.substr(0, 8) == "variant ") {
        std::string vname(trim(name.substr(8)));
        if (vname.empty()) throw ConfigError(where + "variant needs a name");
        for (char ch : vname) {
          if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_' && ch != '.') {
            throw ConfigError(where + "variant name '" + vname + "' may only use letters, digits, '-', '_', '.'");
          }
        }
        for (const auto& v : variants) {
          if (v.first == vname) throw ConfigError(where + "duplicate variant '" + vname + "'");
        }
        variants.emplace_back(vname, std::vector<Assignment>{});
        in_variant = true;
      } else {
        if (!kSections.count(std::string(name))) throw ConfigError(where + "unknown section [" + std::string(name) + "]");
        section = name;
        in_variant = false;
      }
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected key = value");
    std::string key(trim(line.substr(0, eq)));
    std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw ConfigError(where + "empty key");
    if (in_variant) {
      if (key.find('.') == std::string::npos) throw ConfigError(where + "variant keys are section.key, got '" + key + "'");
      variants.back().second.push_back({key, value, lineno});
      continue;
    }
    if (section.empty()) throw ConfigError(where + "key '" + key + "' outside a section");
    std::string dotted = section + "." + key;
    if (!seen.insert(dotted).second) throw ConfigError(where + "duplicate key '" + dotted + "'");
    base.push_back({dotted, value, lineno});
  }

  DataPreset preset = DataPreset::kSpirals;
  for (const auto& a : base) {
    if (a.key == "data.preset") {
      try {
        preset = parse_preset(a.value);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(source + ":" + std::to_string(a.line) + ": data.preset: " + e.what());
      }
    }
  }
  ConfigFile out;
  out.base = preset_defaults(preset);
  for (const auto& a : base) assign(out.base, a, source);
  try {
    out.base.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  for (const auto& [name, assignments] : variants) {
    Variant v{name, out.base};
    for (const auto& a : assignments) assign(v.config, a, source);
    try {
      v.config.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(source + ": variant " + name + ": " + e.what());
    }
    out.variants.push_back(std::move(v));
  }
  return out;
}

ConfigFile load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string format_config(const ExperimentConfig& config) {
  std::ostringstream os;
  std::string section;
  for (const auto& [name, key] : keys()) {
    auto dot = name.find('.');
    std::string s = name.substr(0, dot);
    if (s != section) {
      if (!section.empty()) os << '\n';
      os << '[' << s << "]\n";
      section = s;
    }
    os << name.substr(dot + 1) << " = " << key.get(config) << '\n';
  }
  return os.str();
}

std::pair<Dataset, Dataset> load_data(const DataConfig& config) {
  switch (config.preset) {
    case DataPreset::kSpirals:
      // The test split is an independent draw of the same distribution.
      return {make_spirals(config.spirals_per_class, config.spirals_noise, config.seed),
              make_spirals(config.spirals_test_per_class, config.spirals_noise, config.seed + 1)};
    case DataPreset::kCifar10:
      return load_cifar10(config.dir, {config.records_per_batch, 5});
    case DataPreset::kCifar10Small: {
      auto [train, test] = load_cifar10(config.dir, {config.records_per_batch, 5});
      if (train.size() < config.train_size || test.size() < config.test_size) {
        throw DataError("cifar10-small: requested " + std::to_string(config.train_size) + "/" +
                        std::to_string(config.test_size) + " samples but " + config.dir.string() + " holds " +
                        std::to_string(train.size()) + "/" + std::to_string(test.size()));
      }
      Dataset tr = train.head(config.train_size);
      Dataset te = test.head(config.test_size);
      return {std::move(tr), std::move(te)};
    }
  }
  throw DataError("unknown data preset");
}

}  // namespace odenorm
