#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace sne::partition {

enum class Scheme { fixed, kmeans, balanced_kmeans, agglomerative, contiguous };

std::string to_string(Scheme s);
Scheme scheme_from_string(const std::string& s);

// Row-major M x D matrix of teacher features, one row per sample.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::vector<double> column(std::size_t c) const;
};

struct PartitionPlan {
  Scheme scheme = Scheme::contiguous;
  std::uint64_t seed = 0;
  std::size_t feature_dim = 0;
  std::vector<std::vector<std::size_t>> subsets;

  std::size_t size() const { return subsets.size(); }
  // Concatenated subset order; column j of the concatenated student output
  // is teacher feature order()[j].
  std::vector<std::size_t> order() const;
  // inverse()[k] is the concatenated position of teacher feature k.
  std::vector<std::size_t> inverse() const;
  bool operator==(const PartitionPlan&) const = default;
};

struct Violation {
  std::vector<std::size_t> duplicates;
  std::vector<std::size_t> gaps;
  std::vector<std::size_t> out_of_range;
  bool empty_subset = false;

  bool ok() const { return duplicates.empty() && gaps.empty() && out_of_range.empty() && !empty_subset; }
  std::string describe() const;
};

Violation validate_partition(const PartitionPlan& plan, std::size_t feature_dim);
// Throws std::invalid_argument with the violation report.
void require_valid(const PartitionPlan& plan, std::size_t feature_dim);

enum class FixedMode { contiguous, random };

PartitionPlan fixed_partition(std::size_t feature_dim, std::size_t n, FixedMode mode = FixedMode::contiguous,
                              std::uint64_t seed = 0);

struct KMeansOptions {
  std::size_t max_iterations = 300;
  std::size_t restarts = 4;
};

struct KMeansResult {
  std::vector<std::size_t> assignment;       // cluster of each column
  std::vector<std::vector<double>> centroids;  // on normalised columns
  double objective = 0;
  std::vector<double> history;  // objective after every Lloyd iteration of the kept restart
  std::size_t iterations = 0;
};

// Euclidean k-means over L2-normalised columns (zero columns stay zero).
KMeansResult kmeans_columns(const FeatureMatrix& f, std::size_t n, std::uint64_t seed,
                            const KMeansOptions& opt = {});
PartitionPlan kmeans_partition(const FeatureMatrix& f, std::size_t n, std::uint64_t seed,
                               const KMeansOptions& opt = {});

// Sizes after balancing: floor(D/N) or ceil(D/N).
PartitionPlan balanced_kmeans_partition(const FeatureMatrix& f, std::size_t n, std::uint64_t seed,
                                        const KMeansOptions& opt = {});

// Rebalancing step on a fixed assignment. points are normalised columns.
std::vector<std::size_t> rebalance(const std::vector<std::vector<double>>& points,
                                   std::vector<std::size_t> assignment,
                                   const std::vector<std::vector<double>>& centroids);

struct Merge {
  std::size_t a = 0, b = 0;  // ids of merged clusters (a < b); new cluster id is D + step
  double distance = 0;
};

struct Dendrogram {
  std::vector<Merge> merges;
  std::vector<std::size_t> labels;  // cluster label (0..n-1) of each column at the final cut
};

// 1 - cosine similarity; a zero column is at distance 1 from everything else.
double cosine_distance(const std::vector<double>& a, const std::vector<double>& b);

// Complete linkage on cosine distance. Ties merge the pair with the smallest
// (a, b) cluster ids.
Dendrogram agglomerative(const FeatureMatrix& f, std::size_t n);
PartitionPlan agglomerative_partition(const FeatureMatrix& f, std::size_t n);

// Subsets ordered by their smallest element, each subset sorted.
PartitionPlan plan_from_labels(const std::vector<std::size_t>& labels, std::size_t n, Scheme scheme,
                               std::uint64_t seed);

// Seeded row subsample (keeps every row when cap >= rows or cap == 0).
FeatureMatrix subsample_rows(const FeatureMatrix& f, std::size_t cap, std::uint64_t seed);

}  // namespace sne::partition
