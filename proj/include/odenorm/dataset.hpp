#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "odenorm/tensor.hpp"

namespace odenorm {

// Missing, truncated or malformed input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dataset {
  Tensor images;            // [N,C,H,W]
  std::vector<int> labels;  // N entries in [0, num_classes)
  std::string split;
  int num_classes = 10;

  int64_t size() const { return static_cast<int64_t>(labels.size()); }
  // Images [n,C,H,W] and labels for the given sample indices.
  std::pair<Tensor, std::vector<int>> gather(const std::vector<int64_t>& indices) const;
  // The first n samples.
  Dataset head(int64_t n) const;
  void validate() const;
};

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // population
};

ChannelStats channel_stats(const Tensor& images);
// (x - mean_c) / stddev_c in place.
void standardize(Tensor& images, const ChannelStats& stats);

// Standard CIFAR-10 binary batches: records of 1 label byte followed by 3072
// pixel bytes (R, G, B planes of 32x32, row-major).
inline constexpr int64_t kCifarRecordBytes = 1 + 3 * 32 * 32;

struct CifarLayout {
  int64_t records_per_batch = 10000;
  int train_batches = 5;
};

// One batch file, pixels scaled to [0, 1]. Throws DataError on a size other
// than expected_records * 3073 bytes or a label byte above 9.
Dataset read_cifar_batch(const std::filesystem::path& file, int64_t expected_records);

// data_batch_1..N.bin and test_batch.bin from `dir` (or its
// cifar-10-batches-bin subdirectory), standardized per channel with train
// split statistics.
std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir, const CifarLayout& layout = {});

// Two interleaved 2-D spirals, point (x, y) embedded as constant channels
// (x, y, 0) of a [3,8,8] image. Balanced, deterministic per seed.
Dataset make_spirals(int n_per_class, double noise_std, uint64_t seed);

// Per-sample random horizontal flip (p = 0.5) and crop of the zero-padded image
// back to its original size.
struct AugmentDraw {
  std::vector<bool> flip;
  std::vector<int> offset_y;  // in [0, 2*pad]
  std::vector<int> offset_x;
  int pad = 4;
};

AugmentDraw draw_augment(int64_t batch, std::mt19937_64& rng, int pad = 4);
Tensor apply_augment(const Tensor& images, const AugmentDraw& draw);
Tensor flip_horizontal(const Tensor& images, const std::vector<bool>& flip);
// Identity when disabled.
Tensor augment(const Tensor& images, std::mt19937_64& rng, bool enabled);

}  // namespace odenorm
