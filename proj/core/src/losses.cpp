#include "sne/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "sne/ops.hpp"

namespace sne::losses {

void DistillConfig::validate(bool disentangle) const {
  if (!(alpha >= 0)) throw std::invalid_argument("distill: alpha must be >= 0, got " + std::to_string(alpha));
  if (!disentangle) return;
  if (!(lambda < 0)) {
    throw std::invalid_argument("distill: disentanglement needs lambda < 0, got " + std::to_string(lambda));
  }
  if (n_students == 0 || feature_dim % n_students != 0) {
    throw std::invalid_argument("distill: D=" + std::to_string(feature_dim) + " is not divisible by N=" +
                                std::to_string(n_students));
  }
}

Tensor ce_loss(const Tensor& logits, std::span<const int> labels) {
  return ops::cross_entropy(logits, labels);
}

Tensor kd_loss_single(const Tensor& teacher, const Tensor& student) {
  if (teacher.shape() != student.shape() || teacher.rank() != 2) {
    throw std::invalid_argument("kd_loss: teacher " + shape_str(teacher.shape()) + " vs student " +
                                shape_str(student.shape()));
  }
  if (teacher.dim(0) == 0) throw std::invalid_argument("kd_loss: empty batch");
  return ops::scale(ops::sum(ops::square(ops::sub(student, teacher))),
                    real(1) / static_cast<real>(teacher.dim(0)));
}

Tensor kd_loss_ensemble(const Tensor& teacher, const std::vector<Tensor>& students,
                        const partition::PartitionPlan& plan) {
  if (teacher.rank() != 2) throw std::invalid_argument("kd_loss_ensemble: teacher must be [B x D]");
  partition::require_valid(plan, teacher.dim(1));
  if (students.size() != plan.size()) {
    throw std::invalid_argument("kd_loss_ensemble: " + std::to_string(students.size()) +
                                " student outputs for a plan of " + std::to_string(plan.size()));
  }
  Tensor total;
  for (std::size_t i = 0; i < students.size(); ++i) {
    if (!students[i].defined()) continue;
    const auto& cols = plan.subsets[i];
    if (students[i].rank() != 2 || students[i].dim(0) != teacher.dim(0) || students[i].dim(1) != cols.size()) {
      throw std::invalid_argument("kd_loss_ensemble: student " + std::to_string(i) + " output " +
                                  shape_str(students[i].shape()) + ", plan expects [" +
                                  std::to_string(teacher.dim(0)) + " x " + std::to_string(cols.size()) + "]");
    }
    Tensor part = kd_loss_single(ops::select_columns(teacher, cols), students[i]);
    total = total.defined() ? ops::add(total, part) : part;
  }
  if (!total.defined()) throw std::invalid_argument("kd_loss_ensemble: no active student");
  return total;
}

Tensor student_total_loss(const Tensor& ce, const Tensor& kd, real alpha) {
  if (alpha == 0) return ce;
  return ops::add(ce, ops::scale(kd, alpha));
}

namespace {

std::vector<Tensor> normalized_clusters(const Tensor& features, std::size_t n, const char* op) {
  if (features.rank() != 2 || features.dim(0) == 0) {
    throw std::invalid_argument(std::string(op) + ": expected non-empty [B x D], got " +
                                shape_str(features.shape()));
  }
  const std::size_t d = features.dim(1);
  if (n < 2 || d % n != 0) {
    throw std::invalid_argument(std::string(op) + ": D=" + std::to_string(d) +
                                " is not divisible into N=" + std::to_string(n) + " equal clusters");
  }
  const std::size_t w = d / n;
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> cols(w);
    for (std::size_t k = 0; k < w; ++k) cols[k] = i * w + k;
    out.push_back(ops::normalize_rows(ops::select_columns(features, cols)));
  }
  return out;
}

}  // namespace

Tensor sim_loss(const Tensor& features, std::size_t n_clusters) {
  const auto v = normalized_clusters(features, n_clusters, "sim_loss");
  const real inv_w = real(1) / static_cast<real>(v[0].dim(1));
  Tensor total;
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = i + 1; j < v.size(); ++j) {
      Tensor part = ops::sum(ops::square(ops::sub(v[i], v[j])));
      total = total.defined() ? ops::add(total, part) : part;
    }
  return ops::scale(total, inv_w);
}

Tensor teacher_finetune_loss(const Tensor& logits, std::span<const int> labels, const Tensor& features,
                             std::size_t n_clusters, real lambda) {
  if (!(lambda < 0)) {
    throw std::invalid_argument("teacher_finetune_loss: lambda must be < 0, got " + std::to_string(lambda));
  }
  return ops::add(ce_loss(logits, labels), ops::scale(sim_loss(features, n_clusters), lambda));
}

double mean_pairwise_distance(const Tensor& features, std::size_t n_clusters) {
  NoGradGuard guard;
  const auto v = normalized_clusters(features, n_clusters, "mean_pairwise_distance");
  const std::size_t b = features.dim(0), w = v[0].dim(1);
  double total = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = i + 1; j < v.size(); ++j)
      for (std::size_t r = 0; r < b; ++r) {
        double s = 0;
        for (std::size_t k = 0; k < w; ++k) {
          const double d = v[i][r * w + k] - v[j][r * w + k];
          s += d * d;
        }
        total += std::sqrt(s);
        ++pairs;
      }
  return total / static_cast<double>(pairs);
}

}  // namespace sne::losses
