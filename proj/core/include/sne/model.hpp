#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sne/arch.hpp"
#include "sne/energy.hpp"
#include "sne/lif.hpp"
#include "sne/ops.hpp"
#include "sne/rng.hpp"
#include "sne/tensor.hpp"

namespace sne::arch {

struct ForwardOptions {
  bool training = false;
  snn::SpikeMode mode = snn::SpikeMode::hard;
  energy::EnergyTrace* trace = nullptr;
};

// A parameterised instance of an ArchSpec. Parameters and LIF states are owned
// by the instance; evaluate clones in parallel, never one instance.
class Model {
 public:
  Model(ArchSpec spec, std::uint64_t seed);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  Model clone() const;

  const ArchSpec& spec() const { return spec_; }
  std::size_t feature_dim() const { return spec_.feature_dim; }
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;

  // [B x C x H x W] -> [B x feature_dim]. ann: penultimate activations;
  // snn: firing rates of the penultimate spike trains over T steps.
  Tensor features(const Tensor& images, const ForwardOptions& opt = {});
  // Linear head on [B x feature_dim]; requires spec().has_head.
  Tensor head(const Tensor& features, const ForwardOptions& opt = {});
  Tensor forward(const Tensor& images, const ForwardOptions& opt = {});

  // Sets every LIF membrane potential back to v_reset. Required before each
  // new input sequence; features() does not do it implicitly.
  void reset_states();
  std::vector<const snn::LIFState*> lif_states() const;

  struct Buffer {
    std::string name;
    Shape shape;
    std::span<real> values;
  };
  // Parameters and batch-norm running statistics, in a stable order.
  std::vector<Buffer> buffers();

 private:
  struct BlockState {
    Tensor weight, bias, gamma, beta;
    ops::BatchNormStats stats;
    snn::LIFState lif;
  };

  Tensor run_lif(const Tensor& x, BlockState& st, std::size_t steps, const ForwardOptions& opt);
  void trace_layer(const ForwardOptions& opt, const std::string& id, const Tensor& input,
                   std::size_t batch, std::size_t steps, bool analog) const;

  ArchSpec spec_;
  SpecAnalysis analysis_;
  std::vector<BlockState> blocks_;
  Tensor head_weight_, head_bias_;
};

Model build_model(const ArchSpec& spec, std::uint64_t seed);

// Free-function form of Model::features.
Tensor forward_features(Model& model, const Tensor& images, const ForwardOptions& opt = {});

// Kaiming-uniform fan-in initialisation, bound sqrt(6 / fan_in).
void kaiming_uniform(Tensor& weight, std::size_t fan_in, Rng& rng);

}  // namespace sne::arch
