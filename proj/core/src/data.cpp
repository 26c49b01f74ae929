#include "sne/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace sne::data {

namespace fs = std::filesystem;
using json = nlohmann::json;

void ImageDataset::validate() const {
  if (!images.defined() || images.rank() != 4) {
    throw std::invalid_argument("dataset '" + name + "': images must be [M x C x H x W]");
  }
  if (images.dim(0) != labels.size()) {
    throw std::invalid_argument("dataset '" + name + "': " + std::to_string(images.dim(0)) + " images but " +
                                std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw std::invalid_argument("dataset '" + name + "': label " + std::to_string(labels[i]) + " at " +
                                  std::to_string(i) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

Batch gather(const ImageDataset& ds, std::span<const std::size_t> indices) {
  const std::size_t per = ds.channels() * ds.height() * ds.width();
  Batch b;
  b.images = Tensor({indices.size(), ds.channels(), ds.height(), ds.width()});
  b.labels.reserve(indices.size());
  auto src = ds.images.data();
  auto dst = b.images.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t k = indices[i];
    if (k >= ds.size()) throw std::out_of_range("gather: index " + std::to_string(k) + " out of range");
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(k * per), per,
                dst.begin() + static_cast<std::ptrdiff_t>(i * per));
    b.labels.push_back(ds.labels[k]);
  }
  return b;
}

ImageDataset take(const ImageDataset& ds, std::size_t count) {
  count = std::min(count, ds.size());
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), 0);
  ImageDataset out = ds;
  Batch b = gather(ds, idx);
  out.images = b.images;
  out.labels = std::move(b.labels);
  return out;
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size, Rng* shuffle) {
  if (batch_size == 0) throw std::invalid_argument("batch_indices: batch size must be > 0");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) shuffle->shuffle(order);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  }
  return out;
}

namespace {

std::vector<unsigned char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

ImageDataset concat_sets(std::vector<ImageDataset> parts, const std::string& name, const std::string& split) {
  ImageDataset out;
  out.name = name;
  out.split = split;
  out.classes = 10;
  std::size_t m = 0;
  for (const auto& p : parts) m += p.size();
  Shape shape = parts.at(0).images.shape();
  shape[0] = m;
  std::vector<real> values;
  values.reserve(shape_numel(shape));
  for (const auto& p : parts) {
    values.insert(values.end(), p.images.data().begin(), p.images.data().end());
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  out.images = Tensor(shape, std::move(values));
  return out;
}

}  // namespace

ImageDataset load_cifar10_file(const fs::path& file, const std::string& split) {
  constexpr std::size_t kRecord = 3073, kPixels = 3072;
  const auto bytes = read_file(file);
  if (bytes.size() % kRecord != 0) {
    throw std::invalid_argument(file.string() + ": truncated record at byte offset " +
                                std::to_string(bytes.size() / kRecord * kRecord) + " (file size " +
                                std::to_string(bytes.size()) + " is not a multiple of 3073)");
  }
  const std::size_t m = bytes.size() / kRecord;
  ImageDataset ds;
  ds.name = "cifar10";
  ds.split = split;
  ds.classes = 10;
  ds.labels.resize(m);
  std::vector<real> values(m * kPixels);
  for (std::size_t r = 0; r < m; ++r) {
    const std::size_t off = r * kRecord;
    if (bytes[off] > 9) {
      throw std::invalid_argument(file.string() + ": label byte " + std::to_string(bytes[off]) +
                                  " > 9 at byte offset " + std::to_string(off));
    }
    ds.labels[r] = bytes[off];
    for (std::size_t p = 0; p < kPixels; ++p) values[r * kPixels + p] = real(bytes[off + 1 + p]) / real(255);
  }
  ds.images = Tensor({m, 3, 32, 32}, std::move(values));
  return ds;
}

SplitPair load_cifar10_bin(const fs::path& directory) {
  fs::path dir = directory;
  if (!fs::exists(dir / "test_batch.bin") && fs::exists(dir / "cifar-10-batches-bin")) dir /= "cifar-10-batches-bin";
  std::vector<ImageDataset> train;
  for (int i = 1; i <= 5; ++i) train.push_back(load_cifar10_file(dir / ("data_batch_" + std::to_string(i) + ".bin"), "train"));
  SplitPair out;
  out.train = concat_sets(std::move(train), "cifar10", "train");
  out.test = load_cifar10_file(dir / "test_batch.bin", "test");
  return out;
}

ImageDataset load_mnist_files(const fs::path& images, const fs::path& labels, const std::string& split) {
  const auto ib = read_file(images);
  const auto lb = read_file(labels);
  if (ib.size() < 16 || be32(ib, 0) != 0x00000803) {
    throw std::invalid_argument(images.string() + ": bad IDX image magic (expected 0x00000803)");
  }
  if (lb.size() < 8 || be32(lb, 0) != 0x00000801) {
    throw std::invalid_argument(labels.string() + ": bad IDX label magic (expected 0x00000801)");
  }
  const std::size_t m = be32(ib, 4), h = be32(ib, 8), w = be32(ib, 12);
  if (be32(lb, 4) != m) {
    throw std::invalid_argument(labels.string() + ": " + std::to_string(be32(lb, 4)) + " labels for " +
                                std::to_string(m) + " images");
  }
  if (ib.size() != 16 + m * h * w) {
    throw std::invalid_argument(images.string() + ": expected " + std::to_string(16 + m * h * w) +
                                " bytes, found " + std::to_string(ib.size()));
  }
  if (lb.size() != 8 + m) {
    throw std::invalid_argument(labels.string() + ": expected " + std::to_string(8 + m) + " bytes, found " +
                                std::to_string(lb.size()));
  }
  ImageDataset ds;
  ds.name = "mnist";
  ds.split = split;
  ds.classes = 10;
  std::vector<real> values(m * h * w);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = real(ib[16 + i]) / real(255);
  ds.images = Tensor({m, 1, h, w}, std::move(values));
  ds.labels.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (lb[8 + i] > 9) {
      throw std::invalid_argument(labels.string() + ": label " + std::to_string(lb[8 + i]) + " at byte offset " +
                                  std::to_string(8 + i));
    }
    ds.labels[i] = lb[8 + i];
  }
  return ds;
}

SplitPair load_mnist_idx(const fs::path& directory) {
  SplitPair out;
  out.train = load_mnist_files(directory / "train-images-idx3-ubyte", directory / "train-labels-idx1-ubyte", "train");
  out.test = load_mnist_files(directory / "t10k-images-idx3-ubyte", directory / "t10k-labels-idx1-ubyte", "test");
  return out;
}

namespace {

// Unit-variance Gaussian field at p x p, bilinearly upsampled to h x w.
std::vector<double> smooth_pattern(Rng& rng, std::size_t p, std::size_t h, std::size_t w) {
  std::vector<double> low(p * p);
  for (auto& v : low) v = rng.normal();
  std::vector<double> out(h * w);
  auto coord = [p](std::size_t i, std::size_t n) {
    return n > 1 ? static_cast<double>(i) * static_cast<double>(p - 1) / static_cast<double>(n - 1) : 0.0;
  };
  for (std::size_t y = 0; y < h; ++y) {
    const double fy = coord(y, h);
    const std::size_t y0 = std::min(static_cast<std::size_t>(fy), p - 1), y1 = std::min(y0 + 1, p - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < w; ++x) {
      const double fx = coord(x, w);
      const std::size_t x0 = std::min(static_cast<std::size_t>(fx), p - 1), x1 = std::min(x0 + 1, p - 1);
      const double tx = fx - static_cast<double>(x0);
      out[y * w + x] = (1 - ty) * ((1 - tx) * low[y0 * p + x0] + tx * low[y0 * p + x1]) +
                       ty * ((1 - tx) * low[y1 * p + x0] + tx * low[y1 * p + x1]);
    }
  }
  return out;
}

std::vector<std::vector<double>> class_templates(const SynthOptions& opt) {
  Rng rng(derive_seed(opt.seed, "synth-templates"));
  std::vector<std::vector<double>> t(opt.classes);
  for (auto& tc : t)
    for (std::size_t c = 0; c < opt.channels; ++c) {
      auto pat = smooth_pattern(rng, opt.pattern_size, opt.height, opt.width);
      tc.insert(tc.end(), pat.begin(), pat.end());
    }
  return t;
}

ImageDataset draw_blobs(const SynthOptions& opt, const std::vector<std::vector<double>>& templates,
                        std::size_t per_class, const std::string& split) {
  Rng rng(derive_seed(opt.seed, "synth-samples-" + split));
  const std::size_t per = opt.channels * opt.height * opt.width;
  const std::size_t m = opt.classes * per_class;
  ImageDataset ds;
  ds.name = "synth_blobs";
  ds.split = split;
  ds.classes = opt.classes;
  std::vector<real> values(m * per);
  ds.labels.resize(m);
  const double amp = opt.separation * opt.spread;
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t k = i % opt.classes;
    ds.labels[i] = static_cast<int>(k);
    for (std::size_t c = 0; c < opt.channels; ++c) {
      const auto nuisance = smooth_pattern(rng, opt.pattern_size, opt.height, opt.width);
      for (std::size_t j = 0; j < opt.height * opt.width; ++j) {
        const std::size_t e = c * opt.height * opt.width + j;
        const double v = 0.5 + amp * templates[k][e] + opt.spread * nuisance[j] + opt.pixel_noise * rng.normal();
        values[i * per + e] = static_cast<real>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  ds.images = Tensor({m, opt.channels, opt.height, opt.width}, std::move(values));
  return ds;
}

void check_synth(const SynthOptions& opt) {
  if (opt.classes == 0 || opt.channels == 0 || opt.height == 0 || opt.width == 0) {
    throw std::invalid_argument("synth_blobs: empty shape");
  }
  if (!(opt.separation >= 0) || !(opt.spread >= 0) || !(opt.pixel_noise >= 0)) {
    throw std::invalid_argument("synth_blobs: separation, spread and pixel_noise must be >= 0");
  }
  if (opt.pattern_size == 0) throw std::invalid_argument("synth_blobs: pattern_size must be > 0");
}

}  // namespace

ImageDataset synth_blobs(const SynthOptions& opt, const std::string& split) {
  check_synth(opt);
  return draw_blobs(opt, class_templates(opt), opt.per_class, split);
}

SplitPair synth_blobs_split(const SynthOptions& opt, std::size_t test_per_class) {
  check_synth(opt);
  const auto t = class_templates(opt);
  return {draw_blobs(opt, t, opt.per_class, "train"), draw_blobs(opt, t, test_per_class, "test")};
}

ImageDataset add_gaussian_noise(const ImageDataset& ds, const NoiseSpec& spec) {
  if (!(spec.sigma >= 0)) throw std::invalid_argument("add_gaussian_noise: sigma must be >= 0");
  ImageDataset out = ds;
  out.images = ds.images.detach();
  if (spec.sigma == 0) return out;
  Rng rng(spec.seed);
  for (auto& v : out.images.data()) {
    double x = static_cast<double>(v) + spec.sigma * rng.normal();
    if (spec.clamp) x = std::clamp(x, 0.0, 1.0);
    v = static_cast<real>(x);
  }
  return out;
}

void export_dataset(const ImageDataset& ds, const fs::path& stem) {
  ds.validate();
  json j;
  j["name"] = ds.name;
  j["split"] = ds.split;
  j["classes"] = ds.classes;
  j["shape"] = ds.images.shape();
  j["labels"] = ds.labels;
  j["values_file"] = stem.filename().string() + ".f64";
  std::ofstream(fs::path(stem.string() + ".json")) << j.dump(2) << "\n";
  std::ofstream bin(fs::path(stem.string() + ".f64"), std::ios::binary);
  for (real v : ds.images.data()) {
    const double d = v;
    bin.write(reinterpret_cast<const char*>(&d), sizeof d);
  }
  if (!bin) throw std::runtime_error("export_dataset: write failed for " + stem.string());
}

ImageDataset import_dataset(const fs::path& stem) {
  std::ifstream in(fs::path(stem.string() + ".json"));
  if (!in) throw std::invalid_argument("import_dataset: cannot open " + stem.string() + ".json");
  const json j = json::parse(in);
  ImageDataset ds;
  ds.name = j.at("name").get<std::string>();
  ds.split = j.at("split").get<std::string>();
  ds.classes = j.at("classes").get<std::size_t>();
  const auto shape = j.at("shape").get<Shape>();
  ds.labels = j.at("labels").get<std::vector<int>>();
  const auto bytes = read_file(stem.parent_path() / j.at("values_file").get<std::string>());
  if (bytes.size() != shape_numel(shape) * sizeof(double)) {
    throw std::invalid_argument("import_dataset: value file size does not match shape " + shape_str(shape));
  }
  std::vector<real> values(shape_numel(shape));
  for (std::size_t i = 0; i < values.size(); ++i) {
    double d;
    std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(i * sizeof d), sizeof d, reinterpret_cast<unsigned char*>(&d));
    values[i] = static_cast<real>(d);
  }
  ds.images = Tensor(shape, std::move(values));
  ds.validate();
  return ds;
}

}  // namespace sne::data
