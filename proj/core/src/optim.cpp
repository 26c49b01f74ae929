#include "sne/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace sne {

void Optimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

Sgd::Sgd(std::vector<Tensor> params, real lr, real momentum, real weight_decay)
    : Optimizer(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& p : params_) velocity_.emplace_back(p.numel(), real(0));
}

void Sgd::step() {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (!p.has_grad()) continue;
    auto w = p.data();
    auto g = p.grad();
    auto& v = velocity_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const real gi = g[i] + weight_decay_ * w[i];
      v[i] = momentum_ * v[i] + gi;
      w[i] -= lr_ * v[i];
    }
  }
}

Adam::Adam(std::vector<Tensor> params, real lr, real beta1, real beta2, real eps, real weight_decay)
    : Optimizer(std::move(params)),
      lr_(lr),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      weight_decay_(weight_decay) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), real(0));
    v_.emplace_back(p.numel(), real(0));
  }
}

void Adam::step() {
  ++step_count_;
  const real bc1 = 1 - std::pow(beta1_, static_cast<real>(step_count_));
  const real bc2 = 1 - std::pow(beta2_, static_cast<real>(step_count_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (!p.has_grad()) continue;
    auto w = p.data();
    auto g = p.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const real gi = g[i] + weight_decay_ * w[i];
      m[i] = beta1_ * m[i] + (1 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1 - beta2_) * gi * gi;
      w[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
    }
  }
}

std::unique_ptr<Optimizer> make_optimizer(const OptimizerConfig& cfg, std::vector<Tensor> params) {
  if (cfg.lr <= 0) throw std::invalid_argument("optimizer: learning rate must be positive");
  if (cfg.kind == "sgd") {
    return std::make_unique<Sgd>(std::move(params), cfg.lr, cfg.momentum, cfg.weight_decay);
  }
  if (cfg.kind == "adam") {
    return std::make_unique<Adam>(std::move(params), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps,
                                  cfg.weight_decay);
  }
  throw std::invalid_argument("optimizer: unknown kind '" + cfg.kind + "'");
}

}  // namespace sne
