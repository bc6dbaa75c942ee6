#include "odenorm/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace odenorm {

std::pair<Tensor, std::vector<int>> Dataset::gather(const std::vector<int64_t>& indices) const {
  const Shape& s = images.shape();
  int64_t per = s[1] * s[2] * s[3];
  Tensor out({static_cast<int64_t>(indices.size()), s[1], s[2], s[3]});
  auto o = out.mutable_data();
  auto src = images.data();
  std::vector<int> y;
  y.reserve(indices.size());
  for (size_t i = 0; i < indices.size(); ++i) {
    int64_t k = indices[i];
    std::copy(src.begin() + k * per, src.begin() + (k + 1) * per, o.begin() + static_cast<int64_t>(i) * per);
    y.push_back(labels[static_cast<size_t>(k)]);
  }
  return {std::move(out), std::move(y)};
}

Dataset Dataset::head(int64_t n) const {
  if (n > size()) n = size();
  std::vector<int64_t> idx(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  auto [x, y] = gather(idx);
  return Dataset{std::move(x), std::move(y), split, num_classes};
}

void Dataset::validate() const {
  if (labels.empty()) throw DataError("dataset '" + split + "' is empty");
  if (images.rank() != 4 || images.dim(0) != size()) {
    throw DataError("dataset '" + split + "': images " + shape_str(images.shape()) + " do not match " +
                    std::to_string(size()) + " labels");
  }
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw DataError("dataset '" + split + "': label " + std::to_string(y) + " out of range");
  }
}

ChannelStats channel_stats(const Tensor& images) {
  const Shape& s = images.shape();
  int64_t n = s[0], c = s[1], plane = s[2] * s[3];
  ChannelStats st{std::vector<double>(static_cast<size_t>(c)), std::vector<double>(static_cast<size_t>(c))};
  auto d = images.data();
  double count = static_cast<double>(n * plane);
  for (int64_t ch = 0; ch < c; ++ch) {
    double sum = 0.0;
    for (int64_t b = 0; b < n; ++b)
      for (int64_t q = 0; q < plane; ++q) sum += d[static_cast<size_t>((b * c + ch) * plane + q)];
    double mu = sum / count;
    double ss = 0.0;
    for (int64_t b = 0; b < n; ++b)
      for (int64_t q = 0; q < plane; ++q) {
        double v = d[static_cast<size_t>((b * c + ch) * plane + q)] - mu;
        ss += v * v;
      }
    st.mean[static_cast<size_t>(ch)] = mu;
    st.stddev[static_cast<size_t>(ch)] = std::sqrt(ss / count);
  }
  return st;
}

void standardize(Tensor& images, const ChannelStats& stats) {
  const Shape& s = images.shape();
  int64_t n = s[0], c = s[1], plane = s[2] * s[3];
  auto d = images.mutable_data();
  for (int64_t ch = 0; ch < c; ++ch) {
    double mu = stats.mean[static_cast<size_t>(ch)];
    double sd = stats.stddev[static_cast<size_t>(ch)];
    if (!(sd > 0.0)) throw DataError("standardize: channel " + std::to_string(ch) + " has zero variance");
    for (int64_t b = 0; b < n; ++b)
      for (int64_t q = 0; q < plane; ++q) {
        double& v = d[static_cast<size_t>((b * c + ch) * plane + q)];
        v = (v - mu) / sd;
      }
  }
}

Dataset read_cifar_batch(const std::filesystem::path& file, int64_t expected_records) {
  std::ifstream is(file, std::ios::binary | std::ios::ate);
  if (!is) throw DataError("cifar10: cannot open " + file.string());
  int64_t actual = static_cast<int64_t>(is.tellg());
  int64_t expected = expected_records * kCifarRecordBytes;
  if (actual != expected) {
    throw DataError("cifar10: " + file.string() + " has " + std::to_string(actual) + " bytes, expected " +
                    std::to_string(expected) + " (" + std::to_string(expected_records) + " records of " +
                    std::to_string(kCifarRecordBytes) + " bytes)");
  }
  is.seekg(0);
  std::vector<unsigned char> raw(static_cast<size_t>(actual));
  if (!is.read(reinterpret_cast<char*>(raw.data()), actual)) throw DataError("cifar10: read failed for " + file.string());
  constexpr int64_t kPixels = kCifarRecordBytes - 1;
  Tensor images({expected_records, 3, 32, 32});
  auto d = images.mutable_data();
  std::vector<int> labels(static_cast<size_t>(expected_records));
  for (int64_t r = 0; r < expected_records; ++r) {
    const unsigned char* rec = raw.data() + r * kCifarRecordBytes;
    if (rec[0] > 9) {
      throw DataError("cifar10: " + file.string() + " record " + std::to_string(r) + " has label byte " +
                      std::to_string(rec[0]) + " > 9");
    }
    labels[static_cast<size_t>(r)] = rec[0];
    for (int64_t k = 0; k < kPixels; ++k) d[static_cast<size_t>(r * kPixels + k)] = rec[1 + k] / 255.0;
  }
  return Dataset{std::move(images), std::move(labels), file.filename().string(), 10};
}

namespace {

Dataset concat(const std::vector<Dataset>& parts, const std::string& split) {
  int64_t n = 0;
  for (const auto& p : parts) n += p.size();
  const Shape& s = parts.front().images.shape();
  Tensor images({n, s[1], s[2], s[3]});
  auto d = images.mutable_data();
  std::vector<int> labels;
  labels.reserve(static_cast<size_t>(n));
  size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.images.data().begin(), p.images.data().end(), d.begin() + static_cast<int64_t>(offset));
    offset += p.images.data().size();
    labels.insert(labels.end(), p.labels.begin(), p.labels.end());
  }
  return Dataset{std::move(images), std::move(labels), split, 10};
}

}  // namespace

std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir, const CifarLayout& layout) {
  std::filesystem::path root = dir;
  if (std::filesystem::is_directory(dir / "cifar-10-batches-bin")) root = dir / "cifar-10-batches-bin";
  if (!std::filesystem::is_directory(root)) throw DataError("cifar10: data directory " + dir.string() + " does not exist");
  std::vector<Dataset> parts;
  for (int i = 1; i <= layout.train_batches; ++i) {
    parts.push_back(read_cifar_batch(root / ("data_batch_" + std::to_string(i) + ".bin"), layout.records_per_batch));
  }
  Dataset train = concat(parts, "train");
  Dataset test = read_cifar_batch(root / "test_batch.bin", layout.records_per_batch);
  test.split = "test";
  ChannelStats stats = channel_stats(train.images);
  standardize(train.images, stats);
  standardize(test.images, stats);
  return {std::move(train), std::move(test)};
}

Dataset make_spirals(int n_per_class, double noise_std, uint64_t seed) {
  if (n_per_class < 1) throw std::invalid_argument("make_spirals: n_per_class must be >= 1");
  constexpr int64_t kSide = 8;
  constexpr double kTurns = 1.0;
  std::mt19937_64 rng = make_rng(seed, "spirals");
  std::uniform_real_distribution<double> position(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  int64_t n = 2 * static_cast<int64_t>(n_per_class);
  Tensor images({n, 3, kSide, kSide});
  auto d = images.mutable_data();
  std::vector<int> labels(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    int cls = static_cast<int>(i % 2);
    double t = position(rng);
    double angle = 2.0 * std::numbers::pi * kTurns * t + cls * std::numbers::pi;
    double radius = 0.15 + 0.85 * t;
    double x = radius * std::cos(angle) + noise_std * noise(rng);
    double y = radius * std::sin(angle) + noise_std * noise(rng);
    labels[static_cast<size_t>(i)] = cls;
    double* img = d.data() + i * 3 * kSide * kSide;
    std::fill(img, img + kSide * kSide, x);
    std::fill(img + kSide * kSide, img + 2 * kSide * kSide, y);
  }
  return Dataset{std::move(images), std::move(labels), "spirals", 2};
}

AugmentDraw draw_augment(int64_t batch, std::mt19937_64& rng, int pad) {
  AugmentDraw draw;
  draw.pad = pad;
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<int> offset(0, 2 * pad);
  for (int64_t i = 0; i < batch; ++i) {
    draw.flip.push_back(coin(rng));
    draw.offset_y.push_back(offset(rng));
    draw.offset_x.push_back(offset(rng));
  }
  return draw;
}

Tensor flip_horizontal(const Tensor& images, const std::vector<bool>& flip) {
  const Shape& s = images.shape();
  int64_t n = s[0], c = s[1], h = s[2], w = s[3];
  Tensor out = images;
  auto o = out.mutable_data();
  for (int64_t b = 0; b < n; ++b) {
    if (!flip[static_cast<size_t>(b)]) continue;
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t y = 0; y < h; ++y) {
        double* row = o.data() + ((b * c + ch) * h + y) * w;
        std::reverse(row, row + w);
      }
  }
  return out;
}

Tensor apply_augment(const Tensor& images, const AugmentDraw& draw) {
  Tensor flipped = flip_horizontal(images, draw.flip);
  const Shape& s = images.shape();
  int64_t n = s[0], c = s[1], h = s[2], w = s[3];
  Tensor out(s);
  auto o = out.mutable_data();
  auto in = flipped.data();
  for (int64_t b = 0; b < n; ++b) {
    int64_t dy = draw.offset_y[static_cast<size_t>(b)] - draw.pad;
    int64_t dx = draw.offset_x[static_cast<size_t>(b)] - draw.pad;
    for (int64_t ch = 0; ch < c; ++ch) {
      const double* src = in.data() + (b * c + ch) * h * w;
      double* dst = o.data() + (b * c + ch) * h * w;
      for (int64_t y = 0; y < h; ++y) {
        int64_t sy = y + dy;
        if (sy < 0 || sy >= h) continue;
        for (int64_t x = 0; x < w; ++x) {
          int64_t sx = x + dx;
          if (sx >= 0 && sx < w) dst[y * w + x] = src[sy * w + sx];
        }
      }
    }
  }
  return out;
}

Tensor augment(const Tensor& images, std::mt19937_64& rng, bool enabled) {
  if (!enabled) return images;
  return apply_augment(images, draw_augment(images.dim(0), rng));
}

}  // namespace odenorm
