#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sne/partition.hpp"
#include "sne/tensor.hpp"

namespace sne::losses {

struct DistillConfig {
  real alpha = 2;
  real lambda = real(-0.1);
  std::size_t n_students = 1;
  std::size_t feature_dim = 0;

  // Checks alpha >= 0, and lambda < 0 and N | D when disentangling.
  void validate(bool disentangle = false) const;
};

// Mean over the batch of -log softmax(logits)[label].
Tensor ce_loss(const Tensor& logits, std::span<const int> labels);

// sum_k (v_k - s_k)^2 per sample, averaged over the batch.
Tensor kd_loss_single(const Tensor& teacher, const Tensor& student);

// Student i is compared with teacher columns plan.subsets[i]. Students with
// an undefined tensor are inactive and excluded from the sum.
Tensor kd_loss_ensemble(const Tensor& teacher, const std::vector<Tensor>& students,
                        const partition::PartitionPlan& plan);

Tensor student_total_loss(const Tensor& ce, const Tensor& kd, real alpha);

// Columns split into N contiguous clusters; every cluster row is L2 normalised
// and sum_{i<j} sum_k mean((V_ik - V_jk)^2) is returned.
Tensor sim_loss(const Tensor& features, std::size_t n_clusters);

Tensor teacher_finetune_loss(const Tensor& logits, std::span<const int> labels, const Tensor& features,
                             std::size_t n_clusters, real lambda);

// Mean Euclidean distance between normalised cluster sub-rows over all rows
// and cluster pairs. Plain numbers, no gradient.
double mean_pairwise_distance(const Tensor& features, std::size_t n_clusters);

}  // namespace sne::losses
