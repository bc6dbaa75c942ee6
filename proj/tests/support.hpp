#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "odenorm/dataset.hpp"
#include "odenorm/models.hpp"
#include "odenorm/ops.hpp"

namespace testing_support {

using namespace odenorm;

inline Tensor random_tensor(Shape shape, uint64_t seed, double stddev = 1.0) {
  std::mt19937_64 rng(seed);
  return Tensor::randn(std::move(shape), rng, stddev);
}

// Direct 6-loop cross-correlation.
inline Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor* b, int stride, int pad) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  int64_t ho = (xs[2] + 2 * pad - ws[2]) / stride + 1;
  int64_t wo = (xs[3] + 2 * pad - ws[3]) / stride + 1;
  Tensor out({xs[0], ws[0], ho, wo});
  auto o = out.mutable_data();
  for (int64_t n = 0; n < xs[0]; ++n)
    for (int64_t oc = 0; oc < ws[0]; ++oc)
      for (int64_t oy = 0; oy < ho; ++oy)
        for (int64_t ox = 0; ox < wo; ++ox) {
          double acc = b ? (*b)[oc] : 0.0;
          for (int64_t c = 0; c < xs[1]; ++c)
            for (int64_t i = 0; i < ws[2]; ++i)
              for (int64_t j = 0; j < ws[3]; ++j) {
                int64_t y = oy * stride - pad + i, xx = ox * stride - pad + j;
                if (y < 0 || y >= xs[2] || xx < 0 || xx >= xs[3]) continue;
                acc += x[((n * xs[1] + c) * xs[2] + y) * xs[3] + xx] * w[((oc * ws[1] + c) * ws[2] + i) * ws[3] + j];
              }
          o[static_cast<size_t>(((n * ws[0] + oc) * ho + oy) * wo + ox)] = acc;
        }
  return out;
}

// f(z) = A z per pixel, a 1x1 convolution without bias or normalization.
class PointwiseLinearRhs : public OdeRhs {
 public:
  PointwiseLinearRhs(const std::vector<std::vector<double>>& a, bool trainable) {
    int64_t c = static_cast<int64_t>(a.size());
    std::vector<double> flat;
    for (const auto& row : a) flat.insert(flat.end(), row.begin(), row.end());
    weight_ = Parameter{"rhs.weight", Tensor({c, c, 1, 1}, flat), trainable};
  }

  Rhs bind(Phase) const override {
    Var w = use(weight_);
    return [w](const Var& z, double) { return conv2d(z, Conv2dParams{w, std::nullopt, 1, 0}); };
  }
  void collect(std::vector<Parameter*>& registry) override { registry.push_back(&weight_); }
  Parameter& weight() { return weight_; }

 private:
  Parameter weight_;
};

// Standard binary batch records: label byte then 3072 pixel bytes.
inline std::vector<unsigned char> cifar_records(int n, uint64_t seed, int classes = 10) {
  std::mt19937_64 rng(seed);
  std::vector<unsigned char> bytes;
  for (int r = 0; r < n; ++r) {
    int label = static_cast<int>(rng() % static_cast<uint64_t>(classes));
    bytes.push_back(static_cast<unsigned char>(label));
    for (int k = 0; k < 3072; ++k) bytes.push_back(static_cast<unsigned char>(rng() & 0xff));
  }
  return bytes;
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// data_batch_1..5.bin and test_batch.bin with `records` each.
inline void write_cifar_dir(const std::filesystem::path& dir, int records, uint64_t seed) {
  for (int i = 1; i <= 5; ++i) {
    write_bytes(dir / ("data_batch_" + std::to_string(i) + ".bin"), cifar_records(records, seed + i));
  }
  write_bytes(dir / "test_batch.bin", cifar_records(records, seed + 100));
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("odenorm_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline ModelConfig tiny_config(NormKind kind, int channels = 4, int n_evals = 4) {
  ModelConfig c;
  c.arch = Arch::kODENet4;
  c.schedule = {kind, kind, kind};
  c.base_channels = channels;
  c.num_classes = 2;
  c.train_spec = SolverSpec(Scheme::kEuler, n_evals);
  c.seed = 3;
  return c;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace testing_support
