#include "sne/lif.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "sne/ops.hpp"

namespace sne::snn {

namespace {

real logistic(real x) { return real(1) / (real(1) + std::exp(-x)); }

}  // namespace

void LIFParams::validate() const {
  if (!(tau_m >= 1)) throw std::invalid_argument("LIFParams: tau_m must be >= 1");
  if (!(v_th > v_reset)) throw std::invalid_argument("LIFParams: v_th must exceed v_reset");
  if (!(surrogate_slope > 0)) throw std::invalid_argument("LIFParams: surrogate slope must be > 0");
}

Tensor LIFState::potentials(const Shape& shape, const LIFParams& params) const {
  if (is_reset()) return Tensor(shape, params.v_reset);
  if (v.shape() != shape) {
    throw std::invalid_argument("LIFState: carried state " + shape_str(v.shape()) +
                                " does not match input " + shape_str(shape) +
                                " (reset states between sequences)");
  }
  return v;
}

real surrogate_grad(real u, real slope) {
  const real s = logistic(slope * u);
  return slope * s * (1 - s);
}

Tensor spike_fn(const Tensor& u, real slope, SpikeMode mode) {
  Tensor out(u.shape());
  const auto& uv = u.impl()->data;
  auto& ov = out.impl()->data;
  for (std::size_t i = 0; i < uv.size(); ++i) {
    ov[i] = mode == SpikeMode::hard ? (uv[i] >= 0 ? real(1) : real(0)) : logistic(slope * uv[i]);
  }
  if (detail::any_requires_grad({&u})) {
    auto pu = u.impl(), po = out.impl();
    detail::record(out, [pu, po, slope] {
      auto& gu = pu->grad_buffer();
      for (std::size_t i = 0; i < gu.size(); ++i) gu[i] += po->grad[i] * surrogate_grad(pu->data[i], slope);
    }, "spike_fn");
  }
  return out;
}

LifStepResult lif_step(const LIFState& state, const Tensor& x, const LIFParams& params,
                       SpikeMode mode) {
  params.validate();
  Tensor v_prev = state.potentials(x.shape(), params);
  Tensor h = ops::add(v_prev, ops::scale(ops::sub(x, v_prev), real(1) / params.tau_m));
  Tensor spike = spike_fn(ops::sub(h, Tensor(h.shape(), params.v_th)), params.surrogate_slope, mode);
  Tensor keep = ops::sub(Tensor::ones(spike.shape()), spike);
  Tensor v_next = ops::add(ops::mul(h, keep), ops::scale(spike, params.v_reset));
  return {spike, LIFState{v_next}};
}

Tensor lif_multistep(const Tensor& x, LIFState& state, const LIFParams& params, SpikeMode mode) {
  params.validate();
  if (x.rank() < 2) {
    throw std::invalid_argument("lif_multistep: expected [T x ...], got " + shape_str(x.shape()));
  }
  const std::size_t steps = x.dim(0);
  const std::size_t n = steps ? x.numel() / steps : 0;
  const Shape step_shape(x.shape().begin() + 1, x.shape().end());
  Tensor v0 = state.potentials(step_shape, params);

  const real inv_tau = real(1) / params.tau_m;
  const real a = params.surrogate_slope;
  Tensor out(x.shape());
  std::vector<real> h_trace(x.numel());
  std::vector<real> v(v0.data().begin(), v0.data().end());
  const auto& xv = x.impl()->data;
  auto& sv = out.impl()->data;
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = t * n + i;
      const real h = v[i] + (xv[k] - v[i]) * inv_tau;
      const real u = h - params.v_th;
      const real s = mode == SpikeMode::hard ? (u >= 0 ? real(1) : real(0)) : logistic(a * u);
      h_trace[k] = h;
      sv[k] = s;
      v[i] = h * (1 - s) + params.v_reset * s;
    }
  }
  state.v = Tensor(step_shape, std::move(v));

  if (detail::any_requires_grad({&x})) {
    auto px = x.impl(), po = out.impl();
    detail::record(out, [px, po, h_trace = std::move(h_trace), steps, n, inv_tau, a,
                         v_th = params.v_th, v_reset = params.v_reset] {
      auto& gx = px->grad_buffer();
      std::vector<real> gv(n, real(0));
      for (std::size_t t = steps; t-- > 0;) {
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t k = t * n + i;
          const real h = h_trace[k];
          const real s = po->data[k];
          const real ds = surrogate_grad(h - v_th, a);
          const real dh = po->grad[k] * ds + gv[i] * ((1 - s) + (v_reset - h) * ds);
          gx[k] += dh * inv_tau;
          gv[i] = dh * (1 - inv_tau);
        }
      }
    }, "lif_multistep");
  }
  return out;
}

Tensor encode_repeat(const Tensor& image, std::size_t timesteps) {
  if (timesteps == 0) throw std::invalid_argument("encode_repeat: T must be >= 1");
  Shape shape{timesteps};
  shape.insert(shape.end(), image.shape().begin(), image.shape().end());
  Tensor out(shape);
  const auto& src = image.impl()->data;
  auto& dst = out.impl()->data;
  for (std::size_t t = 0; t < timesteps; ++t) std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(t * src.size()));
  if (detail::any_requires_grad({&image})) {
    auto pi = image.impl(), po = out.impl();
    detail::record(out, [pi, po, timesteps] {
      auto& g = pi->grad_buffer();
      const std::size_t n = g.size();
      for (std::size_t t = 0; t < timesteps; ++t)
        for (std::size_t i = 0; i < n; ++i) g[i] += po->grad[t * n + i];
    }, "encode_repeat");
  }
  return out;
}

Tensor firing_rate_readout(const Tensor& spikes) { return ops::mean_leading(spikes); }

}  // namespace sne::snn
