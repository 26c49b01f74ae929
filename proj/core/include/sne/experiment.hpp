#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sne/data.hpp"
#include "sne/ensemble.hpp"
#include "sne/serialize.hpp"

namespace sne::experiment {

inline constexpr int kSchemaVersion = 1;

struct ArchConfig {
  std::string family = "vgg";  // vgg | resnet
  int depth = 5;
  bool mini = false;
  std::size_t base_channels = 64;  // resnet only
  std::size_t width_divisor = 1;
  std::size_t feature_dim = 0;
  bool feature_activation = true;
};

struct DatasetConfig {
  std::string name = "synth_blobs";  // synth_blobs | mnist | cifar10
  std::string path;                  // falls back to $SNE_DATA_DIR
  bool desk_scale = true;
  std::size_t train_limit = 0;  // 0 keeps everything
  std::size_t test_limit = 0;
  data::SynthOptions synth;
  std::size_t synth_test_per_class = 50;
};

struct TrainConfig {
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  OptimizerConfig optimizer;
};

struct TeacherConfig {
  ArchConfig arch;
  TrainConfig train;
};

enum class DisentangleMode { none, frozen_cluster, finetune };
std::string to_string(DisentangleMode m);

struct DisentangleConfig {
  DisentangleMode mode = DisentangleMode::none;
  partition::Scheme scheme = partition::Scheme::contiguous;
  real lambda = real(-0.1);
  TrainConfig train{10, 32, {}};
  std::size_t row_cap = 0;
};

struct EnsembleConfig {
  std::size_t n_students = 1;
  ArchConfig student;
  real alpha = 2;
  std::size_t timesteps = 4;
  snn::LIFParams lif;
  ensemble::Policy policy;
  TrainConfig train;
};

struct EvalConfig {
  std::vector<double> noise_sigmas{0.0, 0.01, 0.03, 0.05, 0.07};
  std::size_t repeats = 10;
  std::size_t batch_size = 256;
  bool noise_clamp = false;
};

struct ExperimentConfig {
  int schema_version = kSchemaVersion;
  std::uint64_t seed = 0;
  std::string profile;  // "desk", "full" or empty
  DatasetConfig dataset;
  TeacherConfig teacher;
  DisentangleConfig disentangle;
  EnsembleConfig ensemble;
  EvalConfig eval;
  std::string source_text;  // the config file, byte for byte

  void validate() const;
};

// Parses a JSON config; the optional "desk"/"full" objects are merge patches
// applied when that profile is selected. Throws std::invalid_argument.
ExperimentConfig parse_config(const std::string& text, const std::string& profile = "");
ExperimentConfig load_config(const std::filesystem::path& path, const std::string& profile = "");

data::SplitPair load_data(const ExperimentConfig& cfg);

arch::ArchSpec make_spec(const ArchConfig& a, arch::NetKind kind, const data::ImageDataset& like,
                         std::size_t feature_dim, bool has_head, std::size_t timesteps = 4,
                         const snn::LIFParams& lif = {});
arch::ArchSpec teacher_spec(const ExperimentConfig& cfg, const data::ImageDataset& like);
std::vector<arch::ArchSpec> student_specs(const ExperimentConfig& cfg, const data::ImageDataset& like,
                                          const partition::PartitionPlan& plan);

struct EpochRecord {
  double loss = 0;
  double ce = 0;
  double kd = 0;
  double sim = 0;
  double train_accuracy = 0;
  double test_accuracy = 0;
  double distance = 0;  // mean pairwise normalised sub-row distance (fine-tuning)
};

json to_json_value(const EpochRecord& e);

// Cross-entropy training of a network with its own head.
std::vector<EpochRecord> train_classifier(arch::Model& model, const data::ImageDataset& train,
                                          const data::ImageDataset* test, const TrainConfig& tc,
                                          std::uint64_t seed);

// Loss = CE + lambda * sim over n contiguous clusters.
std::vector<EpochRecord> finetune(arch::Model& teacher, const data::ImageDataset& train,
                                  const data::ImageDataset& test, std::size_t n_clusters, real lambda,
                                  const TrainConfig& tc, std::uint64_t seed);

double mean_feature_distance(arch::Model& teacher, const data::ImageDataset& ds, std::size_t n_clusters,
                             std::size_t batch_size = 256);

struct PlanChoice {
  partition::PartitionPlan plan;
  std::string warning;
};

PlanChoice make_plan(const ExperimentConfig& cfg, arch::Model& teacher, const data::ImageDataset& train,
                     bool teacher_finetuned);

ensemble::EnsembleModel build_ensemble(const ExperimentConfig& cfg, const data::ImageDataset& like,
                                       const partition::PartitionPlan& plan);

struct SweepRow {
  std::size_t k = 0;
  double sigma = 0;
  ensemble::EvalResult result;
};

std::vector<SweepRow> sweep_dropout(const ExperimentConfig& cfg, ensemble::EnsembleModel& model,
                                    const data::ImageDataset& test);
std::vector<SweepRow> sweep_noise_ensemble(const ExperimentConfig& cfg, ensemble::EnsembleModel& model,
                                           const data::ImageDataset& test);
std::vector<SweepRow> sweep_noise_model(const ExperimentConfig& cfg, arch::Model& model,
                                        const data::ImageDataset& test);

// Exact CSV column order of the report table.
const std::vector<std::string>& csv_columns();

// One CSV row as a JSON object keyed by csv_columns().
struct RowContext {
  std::string run_id, arch, partition_scheme, split = "test";
  std::size_t n_students = 0, k_active = 0, timesteps = 1;
  double alpha = 0, lambda = 0;
  std::uint64_t seed = 0;
  double ce = 0, kd = 0, sim = 0;
  std::size_t param_count = 0;
};
json csv_row(const RowContext& ctx, const ensemble::EvalResult& r);

// Deterministic id from the command, seed and config text.
std::string run_id(const std::string& command, const ExperimentConfig& cfg);

// Report skeleton shared by every command.
json make_report(const std::string& command, const ExperimentConfig& cfg);

struct CsvResult {
  std::string csv;
  std::vector<std::string> skipped;  // "<file>: <reason>"
};
// Header plus every row of every *.json report below dir (non-recursive
// into reports/ when present), sorted by file name.
CsvResult collect_reports(const std::filesystem::path& dir);

}  // namespace sne::experiment
