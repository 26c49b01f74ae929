#include "sne/model.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "sne/rng.hpp"

namespace sne::arch {

void kaiming_uniform(Tensor& weight, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(1, fan_in)));
  for (auto& w : weight.data()) w = static_cast<real>(rng.uniform(-bound, bound));
}

namespace {

void bias_uniform(Tensor& bias, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(1, fan_in)));
  for (auto& b : bias.data()) b = static_cast<real>(rng.uniform(-bound, bound));
}

Tensor param(Shape shape, real fill = 0) {
  Tensor t(std::move(shape), fill);
  t.set_requires_grad(true);
  return t;
}

}  // namespace

Model::Model(ArchSpec spec, std::uint64_t seed) : spec_(std::move(spec)), analysis_(analyze(spec_)) {
  Rng rng(seed);
  blocks_.resize(spec_.blocks.size());
  LayerShape cur{true, spec_.in_channels, spec_.in_height, spec_.in_width};
  for (std::size_t i = 0; i < spec_.blocks.size(); ++i) {
    const Block& b = spec_.blocks[i];
    BlockState& st = blocks_[i];
    switch (b.type) {
      case BlockType::conv: {
        const std::size_t fan_in = cur.c * b.kernel * b.kernel;
        st.weight = param({b.out_channels, cur.c, b.kernel, b.kernel});
        kaiming_uniform(st.weight, fan_in, rng);
        if (b.bias) {
          st.bias = param({b.out_channels});
          bias_uniform(st.bias, fan_in, rng);
        }
        break;
      }
      case BlockType::linear: {
        const std::size_t fan_in = cur.numel();
        st.weight = param({b.out_channels, fan_in});
        kaiming_uniform(st.weight, fan_in, rng);
        if (b.bias) {
          st.bias = param({b.out_channels});
          bias_uniform(st.bias, fan_in, rng);
        }
        break;
      }
      case BlockType::norm:
        st.gamma = param({cur.c}, 1);
        st.beta = param({cur.c}, 0);
        st.stats = ops::BatchNormStats(cur.c);
        break;
      case BlockType::skip_end: {
        const LayerShape& saved = analysis_.skip_inputs[i];
        const LayerShape& now = analysis_.block_outputs[i];
        if (!(saved == now)) {
          st.weight = param({now.c, saved.c, 1, 1});
          kaiming_uniform(st.weight, saved.c, rng);
          st.gamma = param({now.c}, 1);
          st.beta = param({now.c}, 0);
          st.stats = ops::BatchNormStats(now.c);
        }
        break;
      }
      default:
        break;
    }
    cur = analysis_.block_outputs[i];
  }
  if (spec_.has_head) {
    head_weight_ = param({spec_.classes, spec_.feature_dim});
    kaiming_uniform(head_weight_, spec_.feature_dim, rng);
    head_bias_ = param({spec_.classes});
    bias_uniform(head_bias_, spec_.feature_dim, rng);
  }
}

Model Model::clone() const {
  Model copy(spec_, 0);
  auto& self = const_cast<Model&>(*this);
  auto src = self.buffers();
  auto dst = copy.buffers();
  for (std::size_t i = 0; i < src.size(); ++i)
    std::copy(src[i].values.begin(), src[i].values.end(), dst[i].values.begin());
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    if (!blocks_[i].lif.is_reset()) copy.blocks_[i].lif.v = blocks_[i].lif.v.detach();
  return copy;
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> out;
  for (const auto& st : blocks_)
    for (const Tensor* t : {&st.weight, &st.bias, &st.gamma, &st.beta})
      if (t->defined()) out.push_back(*t);
  if (head_weight_.defined()) {
    out.push_back(head_weight_);
    out.push_back(head_bias_);
  }
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : parameters()) n += t.numel();
  return n;
}

std::vector<Model::Buffer> Model::buffers() {
  std::vector<Buffer> out;
  auto prefix = [this](std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "L%02zu.", i);
    return std::string(buf) + to_string(spec_.blocks[i].type);
  };
  auto add = [&out](std::string name, Tensor& t) {
    if (t.defined()) out.push_back({std::move(name), t.shape(), t.data()});
  };
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    auto& st = blocks_[i];
    const std::string p = prefix(i);
    add(p + ".weight", st.weight);
    add(p + ".bias", st.bias);
    add(p + ".gamma", st.gamma);
    add(p + ".beta", st.beta);
    if (!st.stats.running_mean.empty()) {
      const std::size_t c = st.stats.running_mean.size();
      out.push_back({p + ".running_mean", {c}, st.stats.running_mean});
      out.push_back({p + ".running_var", {c}, st.stats.running_var});
    }
  }
  add("head.weight", head_weight_);
  add("head.bias", head_bias_);
  return out;
}

void Model::reset_states() {
  for (auto& st : blocks_) st.lif.reset();
}

std::vector<const snn::LIFState*> Model::lif_states() const {
  std::vector<const snn::LIFState*> out;
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    if (spec_.blocks[i].type == BlockType::activation) out.push_back(&blocks_[i].lif);
  return out;
}

Tensor Model::run_lif(const Tensor& x, BlockState& st, std::size_t steps, const ForwardOptions& opt) {
  const std::size_t per_step = x.numel() / steps;
  Tensor seq = ops::reshape(x, {steps, per_step});
  Tensor spikes = snn::lif_multistep(seq, st.lif, spec_.lif, opt.mode);
  return ops::reshape(spikes, x.shape());
}

void Model::trace_layer(const ForwardOptions& opt, const std::string& id, const Tensor& input,
                        std::size_t batch, std::size_t steps, bool analog) const {
  if (!opt.trace) return;
  energy::LayerTrace t;
  t.id = id;
  double s = 0;
  for (real v : input.data()) s += static_cast<double>(v);
  t.input_sum = s;
  t.input_numel = input.numel() / (batch * steps);
  t.samples = batch;
  t.timesteps = steps;
  t.analog_input = analog;
  opt.trace->layers.push_back(std::move(t));
}

Tensor Model::features(const Tensor& images, const ForwardOptions& opt) {
  if (images.rank() != 4 || images.dim(1) != spec_.in_channels || images.dim(2) != spec_.in_height ||
      images.dim(3) != spec_.in_width) {
    throw std::invalid_argument("model '" + spec_.name + "': expected input [B x " +
                                std::to_string(spec_.in_channels) + " x " +
                                std::to_string(spec_.in_height) + " x " +
                                std::to_string(spec_.in_width) + "], got " +
                                shape_str(images.shape()));
  }
  const std::size_t batch = images.dim(0);
  if (batch == 0) throw std::invalid_argument("model '" + spec_.name + "': empty batch");
  const bool snn = spec_.kind == NetKind::snn;
  const std::size_t steps = snn ? spec_.timesteps : 1;

  // All activations carry a leading (T*B) axis; timestep-major order lets the
  // LIF blocks view them as [T x rest].
  Tensor x = images;
  if (snn) {
    Tensor seq = snn::encode_repeat(images, steps);
    Shape flat = images.shape();
    flat[0] = steps * batch;
    x = ops::reshape(seq, flat);
  }
  bool analog = true;
  std::vector<std::pair<Tensor, bool>> saved;
  const ops::BatchNormOptions bn{opt.training};

  for (std::size_t i = 0; i < spec_.blocks.size(); ++i) {
    const Block& b = spec_.blocks[i];
    BlockState& st = blocks_[i];
    char id[16];
    switch (b.type) {
      case BlockType::conv:
        std::snprintf(id, sizeof id, "L%02zu.conv", i);
        trace_layer(opt, id, x, batch, steps, analog);
        x = ops::conv2d(x, st.weight, {b.stride, b.padding}, st.bias);
        break;
      case BlockType::linear: {
        std::snprintf(id, sizeof id, "L%02zu.linear", i);
        if (x.rank() != 2) x = ops::reshape(x, {x.dim(0), x.numel() / x.dim(0)});
        trace_layer(opt, id, x, batch, steps, analog);
        x = ops::linear(x, st.weight, st.bias);
        break;
      }
      case BlockType::norm:
        x = ops::batch_norm(x, st.gamma, st.beta, st.stats, bn);
        break;
      case BlockType::activation:
        x = snn ? run_lif(x, st, steps, opt) : ops::relu(x);
        analog = false;
        break;
      case BlockType::maxpool:
        x = ops::maxpool2d(x, b.kernel, b.stride);
        break;
      case BlockType::avgpool:
        x = ops::global_avgpool(x);
        break;
      case BlockType::skip_begin:
        saved.emplace_back(x, analog);
        break;
      case BlockType::skip_end: {
        auto [skip, skip_analog] = saved.back();
        saved.pop_back();
        if (st.weight.defined()) {
          std::snprintf(id, sizeof id, "L%02zu.proj", i);
          trace_layer(opt, id, skip, batch, steps, skip_analog);
          const std::size_t stride = analysis_.skip_inputs[i].h / analysis_.block_outputs[i].h;
          skip = ops::conv2d(skip, st.weight, {stride, 0});
          skip = ops::batch_norm(skip, st.gamma, st.beta, st.stats, bn);
        }
        x = ops::add(x, skip);
        break;
      }
    }
  }
  if (x.rank() != 2) x = ops::reshape(x, {x.dim(0), x.numel() / x.dim(0)});
  if (!snn) return x;
  return snn::firing_rate_readout(ops::reshape(x, {steps, batch, x.dim(1)}));
}

Tensor Model::head(const Tensor& features, const ForwardOptions& opt) {
  if (!spec_.has_head) throw std::logic_error("model '" + spec_.name + "' has no head");
  if (features.rank() != 2 || features.dim(1) != spec_.feature_dim) {
    throw std::invalid_argument("model '" + spec_.name + "': head expects [B x " +
                                std::to_string(spec_.feature_dim) + "], got " +
                                shape_str(features.shape()));
  }
  // The head reads firing rates once per sample.
  trace_layer(opt, "head", features, features.dim(0), 1, true);
  return ops::linear(features, head_weight_, head_bias_);
}

Tensor Model::forward(const Tensor& images, const ForwardOptions& opt) {
  return head(features(images, opt), opt);
}

Model build_model(const ArchSpec& spec, std::uint64_t seed) { return Model(spec, seed); }

Tensor forward_features(Model& model, const Tensor& images, const ForwardOptions& opt) {
  return model.features(images, opt);
}

}  // namespace sne::arch
