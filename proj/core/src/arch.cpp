#include "sne/arch.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

#include "sne/ops.hpp"

namespace sne::arch {

std::string to_string(NetKind kind) { return kind == NetKind::ann ? "ann" : "snn"; }

NetKind net_kind_from_string(const std::string& s) {
  if (s == "ann") return NetKind::ann;
  if (s == "snn") return NetKind::snn;
  throw std::invalid_argument("unknown network kind '" + s + "' (expected ann|snn)");
}

namespace {

constexpr std::pair<BlockType, const char*> kBlockNames[] = {
    {BlockType::conv, "conv"},           {BlockType::norm, "norm"},
    {BlockType::activation, "act"},      {BlockType::maxpool, "maxpool"},
    {BlockType::avgpool, "avgpool"},     {BlockType::linear, "linear"},
    {BlockType::skip_begin, "skip_begin"}, {BlockType::skip_end, "skip_end"},
};

std::string layer_id(std::size_t block, const char* what) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "L%02zu.%s", block, what);
  return buf;
}

[[noreturn]] void bad_spec(const ArchSpec& spec, std::size_t block, const std::string& msg) {
  throw std::invalid_argument("arch '" + spec.name + "' block " + std::to_string(block) + ": " + msg);
}

}  // namespace

std::string to_string(BlockType type) {
  for (const auto& [t, name] : kBlockNames)
    if (t == type) return name;
  return "?";
}

BlockType block_type_from_string(const std::string& s) {
  for (const auto& [t, name] : kBlockNames)
    if (s == name) return t;
  throw std::invalid_argument("unknown block type '" + s + "'");
}

Block Block::conv(std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding,
                  bool bias) {
  Block b{BlockType::conv};
  b.out_channels = out;
  b.kernel = kernel;
  b.stride = stride;
  b.padding = padding;
  b.bias = bias;
  return b;
}

Block Block::maxpool(std::size_t window, std::size_t stride) {
  Block b{BlockType::maxpool};
  b.kernel = window;
  b.stride = stride;
  return b;
}

Block Block::linear(std::size_t out, bool bias) {
  Block b{BlockType::linear};
  b.out_channels = out;
  b.bias = bias;
  return b;
}

SpecAnalysis analyze(const ArchSpec& spec) {
  if (spec.in_channels == 0 || spec.in_height == 0 || spec.in_width == 0) {
    throw std::invalid_argument("arch '" + spec.name + "': empty input shape");
  }
  if (spec.kind == NetKind::snn) {
    if (spec.timesteps == 0) throw std::invalid_argument("arch '" + spec.name + "': T must be >= 1");
    spec.lif.validate();
  }
  SpecAnalysis out;
  LayerShape cur{true, spec.in_channels, spec.in_height, spec.in_width};
  std::vector<LayerShape> stack;
  out.block_outputs.resize(spec.blocks.size());
  out.skip_inputs.resize(spec.blocks.size());

  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    const Block& b = spec.blocks[i];
    switch (b.type) {
      case BlockType::conv: {
        if (!cur.spatial) bad_spec(spec, i, "conv after flattening");
        if (b.out_channels == 0 || b.kernel == 0) bad_spec(spec, i, "conv needs channels and kernel");
        LayerInfo li;
        li.id = layer_id(i, "conv");
        li.block = i;
        li.type = b.type;
        li.input = cur;
        li.kernel = b.kernel;
        li.stride = b.stride;
        li.padding = b.padding;
        li.bias = b.bias;
        try {
          cur = {true, b.out_channels, ops::conv_output_size(cur.h, b.kernel, b.stride, b.padding),
                 ops::conv_output_size(cur.w, b.kernel, b.stride, b.padding)};
        } catch (const std::invalid_argument& e) {
          bad_spec(spec, i, e.what());
        }
        li.output = cur;
        li.macs = cur.h * cur.w * cur.c * li.input.c * b.kernel * b.kernel;
        li.params = cur.c * li.input.c * b.kernel * b.kernel + (b.bias ? cur.c : 0);
        out.parameter_count += li.params;
        out.layers.push_back(li);
        break;
      }
      case BlockType::norm:
        out.parameter_count += 2 * cur.c;
        break;
      case BlockType::activation:
        break;
      case BlockType::maxpool:
        if (!cur.spatial) bad_spec(spec, i, "maxpool after flattening");
        if (b.kernel == 0 || b.stride == 0) bad_spec(spec, i, "maxpool needs window and stride");
        if (b.kernel > cur.h || b.kernel > cur.w) bad_spec(spec, i, "pool window larger than input");
        cur = {true, cur.c, (cur.h - b.kernel) / b.stride + 1, (cur.w - b.kernel) / b.stride + 1};
        break;
      case BlockType::avgpool:
        if (!cur.spatial) bad_spec(spec, i, "avgpool after flattening");
        cur = {false, cur.c, 1, 1};
        break;
      case BlockType::linear: {
        if (b.out_channels == 0) bad_spec(spec, i, "linear needs a width");
        LayerInfo li;
        li.id = layer_id(i, "linear");
        li.block = i;
        li.type = b.type;
        li.input = cur;
        li.bias = b.bias;
        cur = {false, b.out_channels, 1, 1};
        li.output = cur;
        li.macs = li.input.numel() * cur.c;
        li.params = li.macs + (b.bias ? cur.c : 0);
        out.parameter_count += li.params;
        out.layers.push_back(li);
        break;
      }
      case BlockType::skip_begin:
        stack.push_back(cur);
        break;
      case BlockType::skip_end: {
        if (stack.empty()) bad_spec(spec, i, "skip_end without skip_begin");
        const LayerShape saved = stack.back();
        stack.pop_back();
        out.skip_inputs[i] = saved;
        if (saved == cur) break;
        if (!saved.spatial || !cur.spatial) bad_spec(spec, i, "skip across flattening");
        if (cur.h == 0 || saved.h % cur.h != 0 || saved.w % cur.w != 0 ||
            saved.h / cur.h != saved.w / cur.w) {
          bad_spec(spec, i, "skip connects incompatible spatial sizes");
        }
        LayerInfo li;
        li.id = layer_id(i, "proj");
        li.block = i;
        li.type = BlockType::conv;
        li.projection = true;
        li.input = saved;
        li.output = cur;
        li.kernel = 1;
        li.stride = saved.h / cur.h;
        li.macs = cur.h * cur.w * cur.c * saved.c;
        li.params = cur.c * saved.c;
        out.parameter_count += li.params + 2 * cur.c;
        out.layers.push_back(li);
        break;
      }
    }
    out.block_outputs[i] = cur;
  }
  if (!stack.empty()) {
    throw std::invalid_argument("arch '" + spec.name + "': unterminated skip_begin");
  }
  out.feature_dim = cur.numel();
  if (spec.feature_dim != out.feature_dim) {
    throw std::invalid_argument("arch '" + spec.name + "': feature_dim " +
                                std::to_string(spec.feature_dim) + " but blocks produce " +
                                std::to_string(out.feature_dim));
  }
  if (spec.has_head) {
    if (spec.classes == 0) throw std::invalid_argument("arch '" + spec.name + "': zero classes");
    LayerInfo li;
    li.id = "head";
    li.block = spec.blocks.size();
    li.type = BlockType::linear;
    li.input = {false, out.feature_dim, 1, 1};
    li.output = {false, spec.classes, 1, 1};
    li.bias = true;
    li.macs = out.feature_dim * spec.classes;
    li.params = li.macs + spec.classes;
    out.parameter_count += li.params;
    out.layers.push_back(li);
  }
  return out;
}

std::size_t parameter_count(const ArchSpec& spec) { return analyze(spec).parameter_count; }

namespace {

std::size_t scaled(std::size_t channels, std::size_t divisor) {
  return std::max<std::size_t>(1, channels / std::max<std::size_t>(1, divisor));
}

void append_feature_layer(ArchSpec& spec, std::size_t natural, std::size_t feature_dim, bool activation) {
  if (feature_dim == 0 && activation) return;
  if (feature_dim == 0) feature_dim = natural;
  if (feature_dim == natural && activation) return;
  spec.blocks.push_back(Block::linear(feature_dim, true));
  spec.blocks.push_back(Block::norm());
  if (activation) spec.blocks.push_back(Block::act());
  spec.feature_dim = feature_dim;
}

std::string suffix(std::size_t divisor) {
  return divisor > 1 ? "-d" + std::to_string(divisor) : "";
}

}  // namespace

ArchSpec vgg_spec(const VggOptions& opt) {
  constexpr int M = 0;
  std::vector<int> cfg;
  switch (opt.depth) {
    case 5: cfg = {64, M, 128, M, 256, M, 512, M}; break;
    case 11: cfg = {64, M, 128, M, 256, 256, M, 512, 512, M, 512, 512, M}; break;
    case 19:
      cfg = {64, 64, M, 128, 128, M, 256, 256, 256, 256, M, 512, 512, 512, 512, M,
             512, 512, 512, 512, M};
      break;
    default:
      throw std::invalid_argument("vgg_spec: unsupported depth " + std::to_string(opt.depth) +
                                  " (expected 5, 11 or 19)");
  }
  if (opt.mini) {
    int halved = 0;
    for (auto it = cfg.rbegin(); it != cfg.rend() && halved < 2; ++it) {
      if (*it != M) {
        *it /= 2;
        ++halved;
      }
    }
  }
  ArchSpec spec;
  spec.name = "vgg" + std::to_string(opt.depth) + (opt.mini ? "mini" : "") + suffix(opt.width_divisor);
  spec.kind = opt.kind;
  spec.in_channels = opt.in_channels;
  spec.in_height = spec.in_width = opt.image_size;
  spec.classes = opt.classes;
  spec.has_head = opt.has_head;
  std::size_t size = opt.image_size;
  std::size_t width = 0;
  for (int v : cfg) {
    if (v == M) {
      // Small inputs run out of resolution before the last stages.
      if (size >= 2) {
        spec.blocks.push_back(Block::maxpool(2, 2));
        size /= 2;
      }
      continue;
    }
    width = scaled(static_cast<std::size_t>(v), opt.width_divisor);
    spec.blocks.push_back(Block::conv(width, 3, 1, 1, true));
    spec.blocks.push_back(Block::norm());
    spec.blocks.push_back(Block::act());
  }
  spec.blocks.push_back(Block::avgpool());
  spec.feature_dim = width;
  append_feature_layer(spec, width, opt.feature_dim, opt.feature_activation);
  analyze(spec);
  return spec;
}

ArchSpec resnet_spec(const ResNetOptions& opt) {
  std::vector<int> per_stage;
  switch (opt.depth) {
    case 10: per_stage = {1, 1, 1, 1}; break;
    case 18: per_stage = {2, 2, 2, 2}; break;
    default:
      throw std::invalid_argument("resnet_spec: unsupported depth " + std::to_string(opt.depth) +
                                  " (expected 10 or 18)");
  }
  if (opt.base_channels == 0) throw std::invalid_argument("resnet_spec: base_channels must be > 0");
  ArchSpec spec;
  spec.name = "resnet" + std::to_string(opt.depth) + (opt.base_channels != 64 ? "mini" : "") +
              suffix(opt.width_divisor);
  spec.kind = opt.kind;
  spec.in_channels = opt.in_channels;
  spec.in_height = spec.in_width = opt.image_size;
  spec.classes = opt.classes;
  spec.has_head = opt.has_head;
  const std::size_t base = scaled(opt.base_channels, opt.width_divisor);
  spec.blocks = {Block::conv(base, 3, 1, 1), Block::norm(), Block::act()};
  std::size_t size = opt.image_size;
  std::size_t width = base;
  for (std::size_t stage = 0; stage < per_stage.size(); ++stage) {
    width = base << stage;
    for (int b = 0; b < per_stage[stage]; ++b) {
      const std::size_t stride = (stage > 0 && b == 0 && size >= 2) ? 2 : 1;
      size = (size + stride - 1) / stride;
      spec.blocks.push_back(Block::skip_begin());
      spec.blocks.push_back(Block::conv(width, 3, stride, 1));
      spec.blocks.push_back(Block::norm());
      spec.blocks.push_back(Block::act());
      spec.blocks.push_back(Block::conv(width, 3, 1, 1));
      spec.blocks.push_back(Block::norm());
      spec.blocks.push_back(Block::skip_end());
      spec.blocks.push_back(Block::act());
    }
  }
  spec.blocks.push_back(Block::avgpool());
  spec.feature_dim = width;
  append_feature_layer(spec, width, opt.feature_dim, opt.feature_activation);
  analyze(spec);
  return spec;
}

std::vector<std::size_t> conv_widths(const ArchSpec& spec) {
  std::vector<std::size_t> widths;
  for (const auto& b : spec.blocks)
    if (b.type == BlockType::conv) widths.push_back(b.out_channels);
  return widths;
}

}  // namespace sne::arch
