#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "sne/lif.hpp"

namespace sne::arch {

enum class NetKind { ann, snn };

std::string to_string(NetKind kind);
NetKind net_kind_from_string(const std::string& s);

enum class BlockType {
  conv,        // out_channels, kernel, stride, padding, bias
  norm,        // batch norm over the current channel axis
  activation,  // ReLU for ann, LIF for snn
  maxpool,     // window, stride
  avgpool,     // global average pool: [C x H x W] -> [C]
  linear,      // out_channels features; flattens spatial input
  skip_begin,
  skip_end,    // adds the saved tensor, through a 1x1 conv + norm when shapes differ
};

std::string to_string(BlockType type);
BlockType block_type_from_string(const std::string& s);

struct Block {
  BlockType type = BlockType::conv;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool bias = false;

  static Block conv(std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding,
                    bool bias = false);
  static Block norm() { return {BlockType::norm}; }
  static Block act() { return {BlockType::activation}; }
  static Block maxpool(std::size_t window, std::size_t stride);
  static Block avgpool() { return {BlockType::avgpool}; }
  static Block linear(std::size_t out, bool bias = true);
  static Block skip_begin() { return {BlockType::skip_begin}; }
  static Block skip_end() { return {BlockType::skip_end}; }

  bool operator==(const Block&) const = default;
};

struct ArchSpec {
  std::string name;
  NetKind kind = NetKind::ann;
  std::size_t in_channels = 3;
  std::size_t in_height = 32;
  std::size_t in_width = 32;
  std::size_t classes = 10;
  std::vector<Block> blocks;
  // Width of the penultimate output, checked against the blocks.
  std::size_t feature_dim = 0;
  // Students inside an ensemble share an external head and carry none.
  bool has_head = true;
  std::size_t timesteps = 4;
  snn::LIFParams lif;

  bool operator==(const ArchSpec&) const = default;
};

// Activation layout after a block: spatial [c x h x w] or flat [c].
struct LayerShape {
  bool spatial = true;
  std::size_t c = 0, h = 1, w = 1;
  std::size_t numel() const { return c * h * w; }
  bool operator==(const LayerShape&) const = default;
};

// Per-parameterised layer (conv, linear, skip projection, head) geometry.
struct LayerInfo {
  std::string id;
  std::size_t block = 0;  // index into blocks; blocks.size() for the head
  BlockType type = BlockType::conv;
  bool projection = false;
  LayerShape input;
  LayerShape output;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool bias = false;
  std::size_t macs = 0;  // per sample and timestep
  std::size_t params = 0;
};

struct SpecAnalysis {
  std::vector<LayerShape> block_outputs;
  // Shape at each skip_end's matching skip_begin (default for other blocks).
  std::vector<LayerShape> skip_inputs;
  std::vector<LayerInfo> layers;
  std::size_t feature_dim = 0;
  std::size_t parameter_count = 0;
};

// Validates nesting, shape compatibility and feature_dim; throws
// std::invalid_argument with a description of the first violation.
SpecAnalysis analyze(const ArchSpec& spec);

std::size_t parameter_count(const ArchSpec& spec);

struct VggOptions {
  int depth = 11;  // 5, 11 or 19
  bool mini = false;
  NetKind kind = NetKind::ann;
  std::size_t width_divisor = 1;
  std::size_t in_channels = 3;
  std::size_t image_size = 32;
  std::size_t classes = 10;
  // 0 keeps the natural width; otherwise a linear + norm + activation feature
  // layer of this width is appended.
  std::size_t feature_dim = 0;
  // false: the feature layer ends at the norm, so features are signed.
  bool feature_activation = true;
  bool has_head = true;
};

struct ResNetOptions {
  int depth = 18;  // 10 or 18
  std::size_t base_channels = 64;
  NetKind kind = NetKind::ann;
  std::size_t width_divisor = 1;
  std::size_t in_channels = 3;
  std::size_t image_size = 32;
  std::size_t classes = 10;
  std::size_t feature_dim = 0;
  bool feature_activation = true;
  bool has_head = true;
};

ArchSpec vgg_spec(const VggOptions& opt);
ArchSpec resnet_spec(const ResNetOptions& opt);

// Channel count of every conv block in order (skip projections excluded).
std::vector<std::size_t> conv_widths(const ArchSpec& spec);

}  // namespace sne::arch
