#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "odenorm/criterion.hpp"
#include "odenorm/dataset.hpp"
#include "odenorm/models.hpp"
#include "odenorm/training.hpp"

namespace odenorm {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class DataPreset { kSpirals, kCifar10, kCifar10Small };
std::string_view to_string(DataPreset p);
DataPreset parse_preset(std::string_view text);

struct DataConfig {
  DataPreset preset = DataPreset::kSpirals;
  std::filesystem::path dir = "data/cifar10";
  // cifar10-small: first train_size / test_size samples of each split.
  int64_t train_size = 2000;
  int64_t test_size = 1000;
  int64_t records_per_batch = 10000;
  int spirals_per_class = 100;
  int spirals_test_per_class = 100;
  double spirals_noise = 0.0;
  uint64_t seed = 0;
};

struct CriterionConfig {
  EvalGrid grid{{Scheme::kEuler, Scheme::kRK2, Scheme::kRK4}, {64, 128}};
  double epsilon = kDefaultEpsilon;
};

struct SolverConfig {
  Scheme scheme = Scheme::kEuler;
  int n_evals = 8;
};

// A fully resolved experiment. The plan seed also seeds parameter
// initialization; input channels and class count follow from the data.
struct ExperimentConfig {
  Arch arch = Arch::kODENet4;
  int base_channels = 16;
  bool autonomous_rhs = false;
  NormSchedule schedule;
  SolverConfig solver;
  bool checkpoint_ode = true;
  TrainPlan plan;
  DataConfig data;
  CriterionConfig criterion;

  // Throws ConfigError.
  void validate() const;
  ModelConfig model_config(int in_channels, int num_classes) const;
};

// Defaults for a preset: spirals and cifar10-small are desk-scale, cifar10 is
// the full 350-epoch recipe.
ExperimentConfig preset_defaults(DataPreset preset);

struct Variant {
  std::string name;
  ExperimentConfig config;
};

struct ConfigFile {
  ExperimentConfig base;
  std::vector<Variant> variants;  // from [variant <name>] sections
};

// INI text: [model] [schedule] [solver] [plan] [data] [criterion] sections of
// key = value lines; '#' and ';' start comments. The data preset is applied
// first, then every explicit key. Variant sections hold dotted keys
// (section.key = value) applied on top of the base. Unknown sections or keys
// and malformed values throw ConfigError prefixed with "<source>:<line>:".
ConfigFile parse_config(const std::string& text, const std::string& source = "config");
ConfigFile load_config(const std::filesystem::path& path);

// Applies one "section.key=value" override (command-line form).
void apply_override(ExperimentConfig& config, const std::string& assignment);

// Canonical INI text of a resolved config; parse_config reads it back to the
// same values.
std::string format_config(const ExperimentConfig& config);

// Train and test splits for the configured preset. Throws DataError.
std::pair<Dataset, Dataset> load_data(const DataConfig& config);

}  // namespace odenorm
