#pragma once

#include <memory>
#include <string>
#include <vector>

#include "sne/tensor.hpp"

namespace sne {

struct OptimizerConfig {
  std::string kind = "adam";  // "adam" | "sgd"
  real lr = real(1e-3);
  real momentum = real(0.9);
  real weight_decay = 0;
  real beta1 = real(0.9);
  real beta2 = real(0.999);
  real eps = real(1e-8);
};

class Optimizer {
 public:
  explicit Optimizer(std::vector<Tensor> params) : params_(std::move(params)) {}
  virtual ~Optimizer() = default;
  virtual void step() = 0;
  void zero_grad();
  const std::vector<Tensor>& params() const { return params_; }

 protected:
  std::vector<Tensor> params_;
};

// SGD with heavy-ball momentum: v = mu*v + g; p -= lr*v.
class Sgd final : public Optimizer {
 public:
  Sgd(std::vector<Tensor> params, real lr, real momentum = real(0.9), real weight_decay = 0);
  void step() override;

 private:
  real lr_, momentum_, weight_decay_;
  std::vector<std::vector<real>> velocity_;
};

class Adam final : public Optimizer {
 public:
  Adam(std::vector<Tensor> params, real lr, real beta1 = real(0.9), real beta2 = real(0.999),
       real eps = real(1e-8), real weight_decay = 0);
  void step() override;

 private:
  real lr_, beta1_, beta2_, eps_, weight_decay_;
  long step_count_ = 0;
  std::vector<std::vector<real>> m_, v_;
};

std::unique_ptr<Optimizer> make_optimizer(const OptimizerConfig& cfg, std::vector<Tensor> params);

}  // namespace sne
