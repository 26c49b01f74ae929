#pragma once

#include <cstddef>

#include "sne/tensor.hpp"

// Leaky integrate-and-fire dynamics with a sigmoid surrogate gradient.
//
//   H[t] = V[t-1] + (X[t] - V[t-1]) / tau_m        (charge)
//   S[t] = Theta(H[t] - V_th)                       (fire, Theta(0) = 1)
//   V[t] = H[t] * (1 - S[t]) + V_reset * S[t]       (reset)
//
// In hard mode the forward pass emits binary spikes and the backward pass
// replaces dS/dH with a * sigma'(a * (H - V_th)). Soft mode uses
// S = sigma(a * (H - V_th)) in the forward pass as well, which makes the whole
// graph differentiable; it exists for finite-difference checks.
namespace sne::snn {

enum class SpikeMode { hard, soft };

struct LIFParams {
  real tau_m = 2;
  real v_th = 1;
  real v_reset = 0;
  real surrogate_slope = 4;

  void validate() const;
  bool operator==(const LIFParams&) const = default;
};

// Membrane potentials carried across timesteps. An undefined tensor is the
// reset state: every neuron sits at v_reset.
struct LIFState {
  Tensor v;

  bool is_reset() const { return !v.defined(); }
  void reset() { v = Tensor(); }
  // Potentials materialised for `shape` (v_reset everywhere when reset).
  Tensor potentials(const Shape& shape, const LIFParams& params) const;
};

real surrogate_grad(real u, real slope);

// Spiking nonlinearity on u = H - V_th.
Tensor spike_fn(const Tensor& u, real slope, SpikeMode mode);

struct LifStepResult {
  Tensor spike;
  LIFState state;
};

// One timestep built from differentiable primitives; gradients flow through
// the carried state (BPTT when chained).
LifStepResult lif_step(const LIFState& state, const Tensor& x, const LIFParams& params,
                       SpikeMode mode = SpikeMode::hard);

// Fused T-step update over x = [T x ...]. The state supplies V[0] (detached)
// and receives the final potentials, detached.
Tensor lif_multistep(const Tensor& x, LIFState& state, const LIFParams& params,
                     SpikeMode mode = SpikeMode::hard);

// [B x C x H x W] -> [T x B x C x H x W], the same frame at every step.
Tensor encode_repeat(const Tensor& image, std::size_t timesteps);

// Mean over the leading T axis of a [T x B x ...] spike train.
Tensor firing_rate_readout(const Tensor& spikes);

}  // namespace sne::snn
