#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "sne/data.hpp"
#include "sne/energy.hpp"
#include "sne/losses.hpp"
#include "sne/model.hpp"
#include "sne/optim.hpp"
#include "sne/partition.hpp"

namespace sne::ensemble {

enum class Variant { all, stochastic_eval, trained_dropout };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct Policy {
  Variant variant = Variant::all;
  std::size_t k = 0;  // active students; ignored for all

  // Number of students active per batch for an ensemble of n.
  std::size_t active(std::size_t n) const;
  void validate(std::size_t n) const;
};

// K distinct indices from [0, n), uniform without replacement, sorted.
std::vector<std::size_t> sample_active_set(std::size_t n, std::size_t k, Rng& rng);

struct EnsembleModel {
  std::vector<arch::Model> students;
  partition::PartitionPlan plan;
  Tensor head_weight;  // [classes x D], columns in teacher feature order
  Tensor head_bias;    // [classes]
  losses::DistillConfig distill;
  std::size_t classes = 10;

  std::size_t feature_dim() const { return plan.feature_dim; }
  std::size_t size() const { return students.size(); }
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;
  void reset_states();
};

// Students i must be spiking specs without a head and feature_dim |S_i|.
EnsembleModel make_ensemble(std::vector<arch::ArchSpec> student_specs, partition::PartitionPlan plan,
                            std::size_t classes, losses::DistillConfig distill, std::uint64_t seed);

// Places student slices at their plan columns; undefined slices become
// zeros. Differentiable in every defined slice.
Tensor assemble_features(const std::vector<Tensor>& slices, const partition::PartitionPlan& plan,
                         std::size_t batch);

struct ForwardResult {
  Tensor features;              // [B x D] in teacher column order
  Tensor logits;                // [B x classes]
  std::vector<Tensor> slices;   // per student; undefined when inactive
  energy::EnergyLedger ledger;  // filled when requested
};

struct ForwardOptions {
  bool training = false;
  bool count_energy = false;
  snn::SpikeMode mode = snn::SpikeMode::hard;
};

// Runs the active students on the same input. Each student starts from reset
// LIF states.
ForwardResult ensemble_forward(EnsembleModel& model, const Tensor& images,
                               const std::vector<std::size_t>& active, const ForwardOptions& opt = {});

// Teacher features in evaluation mode, without gradient tracking.
Tensor teacher_features(arch::Model& teacher, const Tensor& images);

partition::FeatureMatrix extract_feature_matrix(arch::Model& teacher, const data::ImageDataset& ds,
                                                std::size_t batch_size = 256);

struct TrainOptions {
  std::size_t epochs = 1;
  std::size_t batch_size = 32;
  OptimizerConfig optimizer;
  Policy policy;
  std::uint64_t seed = 0;
};

struct EpochMetrics {
  double ce = 0;
  double kd = 0;
  double loss = 0;
  double train_accuracy = 0;
};

std::vector<EpochMetrics> train_ensemble(EnsembleModel& model, arch::Model& teacher,
                                         const data::ImageDataset& train, const TrainOptions& opt);

struct GradNorms {
  double ce = 0;
  double kd = 0;
};

// L2 norms over every ensemble parameter of d(ce)/dtheta and of
// d(alpha*kd)/dtheta on one batch, each from its own backward pass.
GradNorms loss_gradient_norms(EnsembleModel& model, arch::Model& teacher, const data::Batch& batch);

struct EvalOptions {
  Policy policy;  // stochastic_eval or trained_dropout resample per batch
  std::size_t repeats = 1;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  double noise_sigma = 0;
  bool noise_clamp = false;
  bool count_energy = true;
};

struct EvalResult {
  double accuracy = 0;  // mean over repeats
  double sem = 0;       // sample sd / sqrt(repeats); 0 for one repeat
  std::vector<double> accuracies;
  double ce = 0;
  energy::EnergyLedger ledger;  // summed over every repeat
  std::size_t repeats = 0;
  std::size_t samples = 0;  // per repeat

  double mean_ac_ops() const;
  double mean_mac_ops() const;
  // Ledger totals per evaluated image.
  double per_image(std::uint64_t total) const;
};

EvalResult evaluate(EnsembleModel& model, const data::ImageDataset& ds, const EvalOptions& opt);
// Single network with its own head (ann teacher or lone snn).
EvalResult evaluate_model(arch::Model& model, const data::ImageDataset& ds, const EvalOptions& opt);

// Mean and standard error of the mean (sample standard deviation).
std::pair<double, double> mean_sem(const std::vector<double>& values);

}  // namespace sne::ensemble
