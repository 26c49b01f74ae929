#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sne/rng.hpp"
#include "sne/tensor.hpp"

namespace sne::data {

struct ImageDataset {
  std::string name;
  std::string split;
  Tensor images;  // [M x C x H x W]
  std::vector<int> labels;
  std::size_t classes = 10;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
  // Throws std::invalid_argument on shape/label inconsistencies.
  void validate() const;
};

struct Batch {
  Tensor images;
  std::vector<int> labels;
};

Batch gather(const ImageDataset& ds, std::span<const std::size_t> indices);
ImageDataset take(const ImageDataset& ds, std::size_t count);

// Consecutive batches over [0, n); a seeded permutation when rng is given.
// The last batch may be short.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size, Rng* shuffle = nullptr);

struct SplitPair {
  ImageDataset train;
  ImageDataset test;
};

// One file of 3073-byte records: label byte, then 1024 R, G and B bytes.
ImageDataset load_cifar10_file(const std::filesystem::path& file, const std::string& split);
// data_batch_1..5.bin and test_batch.bin, optionally inside cifar-10-batches-bin/.
SplitPair load_cifar10_bin(const std::filesystem::path& directory);

ImageDataset load_mnist_files(const std::filesystem::path& images, const std::filesystem::path& labels,
                              const std::string& split);
// train-images-idx3-ubyte, train-labels-idx1-ubyte, t10k-images-idx3-ubyte, t10k-labels-idx1-ubyte.
SplitPair load_mnist_idx(const std::filesystem::path& directory);

struct SynthOptions {
  std::size_t classes = 10;
  std::size_t per_class = 100;
  std::size_t channels = 3;
  std::size_t height = 8;
  std::size_t width = 8;
  // Scale of the class templates relative to the within-class spread.
  double separation = 1.0;
  // Standard deviation of the smooth nuisance pattern and of the pixel noise.
  double spread = 0.15;
  double pixel_noise = 0.05;
  // Resolution of the class templates and nuisance patterns before upsampling.
  std::size_t pattern_size = 4;
  std::uint64_t seed = 0;
};

// Class templates are random low-resolution patterns upsampled to the image
// size. Each sample is 0.5 + separation*spread*template + smooth nuisance +
// pixel noise, clipped to [0, 1]. Samples are interleaved by class.
ImageDataset synth_blobs(const SynthOptions& opt, const std::string& split = "train");
// Train and test drawn from the same templates with disjoint noise streams.
SplitPair synth_blobs_split(const SynthOptions& opt, std::size_t test_per_class);

struct NoiseSpec {
  double sigma = 0;
  std::uint64_t seed = 0;
  bool clamp = false;
};

ImageDataset add_gaussian_noise(const ImageDataset& ds, const NoiseSpec& spec);

// Writes <stem>.json (name, split, shape, classes, labels) and <stem>.f64
// (raw little-endian doubles of the images).
void export_dataset(const ImageDataset& ds, const std::filesystem::path& stem);
ImageDataset import_dataset(const std::filesystem::path& stem);

}  // namespace sne::data
