#include "sne/partition.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "sne/rng.hpp"

namespace sne::partition {

namespace {

constexpr std::pair<Scheme, const char*> kSchemeNames[] = {
    {Scheme::fixed, "fixed"},
    {Scheme::kmeans, "kmeans"},
    {Scheme::balanced_kmeans, "balanced_kmeans"},
    {Scheme::agglomerative, "agglomerative"},
    {Scheme::contiguous, "contiguous"},
};

using Points = std::vector<std::vector<double>>;

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

Points normalized_columns(const FeatureMatrix& f) {
  Points pts(f.cols);
  for (std::size_t c = 0; c < f.cols; ++c) {
    pts[c] = f.column(c);
    double n = 0;
    for (double v : pts[c]) n += v * v;
    n = std::sqrt(n);
    if (n > 0)
      for (double& v : pts[c]) v /= n;
  }
  return pts;
}

void check_clustering(const FeatureMatrix& f, std::size_t n, const char* op) {
  if (f.values.size() != f.rows * f.cols) {
    throw std::invalid_argument(std::string(op) + ": matrix holds " + std::to_string(f.values.size()) +
                                " values, expected " + std::to_string(f.rows) + "x" +
                                std::to_string(f.cols));
  }
  if (f.rows < 2) throw std::invalid_argument(std::string(op) + ": need at least 2 rows");
  if (n == 0 || n > f.cols) {
    throw std::invalid_argument(std::string(op) + ": cannot form " + std::to_string(n) +
                                " clusters from " + std::to_string(f.cols) + " columns");
  }
  for (double v : f.values)
    if (!std::isfinite(v)) throw std::invalid_argument(std::string(op) + ": non-finite feature value");
}

std::vector<std::vector<double>> compute_centroids(const Points& pts, const std::vector<std::size_t>& a,
                                                   std::size_t n) {
  const std::size_t dim = pts.empty() ? 0 : pts[0].size();
  std::vector<std::vector<double>> cent(n, std::vector<double>(dim, 0.0));
  std::vector<std::size_t> count(n, 0);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    ++count[a[i]];
    for (std::size_t d = 0; d < dim; ++d) cent[a[i]][d] += pts[i][d];
  }
  for (std::size_t k = 0; k < n; ++k)
    if (count[k])
      for (double& v : cent[k]) v /= static_cast<double>(count[k]);
  return cent;
}

double objective(const Points& pts, const std::vector<std::size_t>& a, const Points& cent) {
  double s = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) s += sq_dist(pts[i], cent[a[i]]);
  return s;
}

std::size_t nearest(const std::vector<double>& p, const Points& cent) {
  std::size_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < cent.size(); ++k) {
    const double d = sq_dist(p, cent[k]);
    if (d < bd) {
      bd = d;
      best = k;
    }
  }
  return best;
}

// k-means++ seeding.
Points seed_centroids(const Points& pts, std::size_t n, Rng& rng) {
  Points cent;
  cent.push_back(pts[rng.below(pts.size())]);
  std::vector<double> d2(pts.size());
  while (cent.size() < n) {
    double total = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      double m = std::numeric_limits<double>::infinity();
      for (const auto& c : cent) m = std::min(m, sq_dist(pts[i], c));
      d2[i] = m;
      total += m;
    }
    std::size_t pick = 0;
    if (total <= 0) {
      pick = rng.below(pts.size());
    } else {
      double r = rng.uniform() * total;
      for (pick = 0; pick + 1 < pts.size(); ++pick) {
        r -= d2[pick];
        if (r < 0) break;
      }
    }
    cent.push_back(pts[pick]);
  }
  return cent;
}

// Moves the farthest point into each empty cluster. Returns whether anything moved.
bool fill_empty(const Points& pts, std::vector<std::size_t>& a, Points& cent, std::size_t n) {
  bool moved = false;
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<std::size_t> count(n, 0);
    for (auto c : a) ++count[c];
    if (count[k] > 0) continue;
    std::size_t far = pts.size();
    double fd = -1;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (count[a[i]] < 2) continue;
      const double d = sq_dist(pts[i], cent[a[i]]);
      if (d > fd) {
        fd = d;
        far = i;
      }
    }
    if (far == pts.size()) continue;
    a[far] = k;
    cent = compute_centroids(pts, a, n);
    moved = true;
  }
  return moved;
}

KMeansResult lloyd(const Points& pts, std::size_t n, Rng& rng, std::size_t max_iter) {
  KMeansResult r;
  Points cent = seed_centroids(pts, n, rng);
  r.assignment.assign(pts.size(), n);
  for (std::size_t it = 0; it < max_iter; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const std::size_t k = nearest(pts[i], cent);
      if (k != r.assignment[i]) {
        r.assignment[i] = k;
        changed = true;
      }
    }
    cent = compute_centroids(pts, r.assignment, n);
    changed = fill_empty(pts, r.assignment, cent, n) || changed;
    r.history.push_back(objective(pts, r.assignment, cent));
    r.iterations = it + 1;
    if (!changed) break;
  }
  r.centroids = std::move(cent);
  r.objective = r.history.back();
  return r;
}

}  // namespace

std::string to_string(Scheme s) {
  for (const auto& [k, name] : kSchemeNames)
    if (k == s) return name;
  return "?";
}

Scheme scheme_from_string(const std::string& s) {
  for (const auto& [k, name] : kSchemeNames)
    if (s == name) return k;
  throw std::invalid_argument("unknown partition scheme '" + s +
                              "' (expected fixed|kmeans|balanced_kmeans|agglomerative|contiguous)");
}

std::vector<double> FeatureMatrix::column(std::size_t c) const {
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) out[r] = values[r * cols + c];
  return out;
}

std::vector<std::size_t> PartitionPlan::order() const {
  std::vector<std::size_t> out;
  for (const auto& s : subsets) out.insert(out.end(), s.begin(), s.end());
  return out;
}

std::vector<std::size_t> PartitionPlan::inverse() const {
  const auto ord = order();
  std::vector<std::size_t> inv(ord.size());
  for (std::size_t j = 0; j < ord.size(); ++j) inv.at(ord[j]) = j;
  return inv;
}

std::string Violation::describe() const {
  if (ok()) return "ok";
  std::string s;
  auto list = [&s](const char* what, const std::vector<std::size_t>& v) {
    if (v.empty()) return;
    if (!s.empty()) s += "; ";
    s += what;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : " ") + std::to_string(v[i]);
  };
  list("duplicate index", duplicates);
  list("gap at", gaps);
  list("out of range", out_of_range);
  if (empty_subset) s += std::string(s.empty() ? "" : "; ") + "empty subset";
  return s;
}

Violation validate_partition(const PartitionPlan& plan, std::size_t feature_dim) {
  Violation v;
  std::vector<std::size_t> seen(feature_dim, 0);
  for (const auto& s : plan.subsets) {
    if (s.empty()) v.empty_subset = true;
    for (auto k : s) {
      if (k >= feature_dim) {
        v.out_of_range.push_back(k);
      } else if (++seen[k] == 2) {
        v.duplicates.push_back(k);
      }
    }
  }
  for (std::size_t k = 0; k < feature_dim; ++k)
    if (seen[k] == 0) v.gaps.push_back(k);
  std::sort(v.duplicates.begin(), v.duplicates.end());
  return v;
}

void require_valid(const PartitionPlan& plan, std::size_t feature_dim) {
  const auto v = validate_partition(plan, feature_dim);
  if (!v.ok()) {
    throw std::invalid_argument("invalid partition over D=" + std::to_string(feature_dim) + ": " +
                                v.describe());
  }
}

PartitionPlan fixed_partition(std::size_t feature_dim, std::size_t n, FixedMode mode, std::uint64_t seed) {
  if (n == 0 || n > feature_dim) {
    throw std::invalid_argument("fixed_partition: N=" + std::to_string(n) + " must be in [1, D=" +
                                std::to_string(feature_dim) + "]");
  }
  std::vector<std::size_t> idx(feature_dim);
  std::iota(idx.begin(), idx.end(), 0);
  if (mode == FixedMode::random) {
    Rng rng(seed);
    rng.shuffle(idx);
  }
  PartitionPlan plan;
  plan.scheme = mode == FixedMode::random ? Scheme::fixed : Scheme::contiguous;
  plan.seed = seed;
  plan.feature_dim = feature_dim;
  // Remainder columns go one each to the first D mod N students.
  std::size_t pos = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t len = feature_dim / n + (j < feature_dim % n ? 1 : 0);
    std::vector<std::size_t> s(idx.begin() + static_cast<std::ptrdiff_t>(pos),
                               idx.begin() + static_cast<std::ptrdiff_t>(pos + len));
    if (mode == FixedMode::random) std::sort(s.begin(), s.end());
    plan.subsets.push_back(std::move(s));
    pos += len;
  }
  return plan;
}

KMeansResult kmeans_columns(const FeatureMatrix& f, std::size_t n, std::uint64_t seed,
                            const KMeansOptions& opt) {
  check_clustering(f, n, "kmeans");
  const Points pts = normalized_columns(f);
  KMeansResult best;
  bool have = false;
  for (std::size_t r = 0; r < std::max<std::size_t>(1, opt.restarts); ++r) {
    Rng rng(derive_seed(seed, "kmeans-restart-" + std::to_string(r)));
    KMeansResult cur = lloyd(pts, n, rng, std::max<std::size_t>(1, opt.max_iterations));
    if (!have || cur.objective < best.objective) {
      best = std::move(cur);
      have = true;
    }
  }
  return best;
}

PartitionPlan plan_from_labels(const std::vector<std::size_t>& labels, std::size_t n, Scheme scheme,
                               std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> groups(n);
  for (std::size_t c = 0; c < labels.size(); ++c) groups.at(labels[c]).push_back(c);
  std::erase_if(groups, [](const auto& g) { return g.empty(); });
  if (groups.size() != n) {
    throw std::invalid_argument("partition: only " + std::to_string(groups.size()) + " of " +
                                std::to_string(n) + " clusters are non-empty");
  }
  std::sort(groups.begin(), groups.end(), [](const auto& a, const auto& b) { return a[0] < b[0]; });
  PartitionPlan plan;
  plan.scheme = scheme;
  plan.seed = seed;
  plan.feature_dim = labels.size();
  plan.subsets = std::move(groups);
  return plan;
}

PartitionPlan kmeans_partition(const FeatureMatrix& f, std::size_t n, std::uint64_t seed,
                               const KMeansOptions& opt) {
  const auto r = kmeans_columns(f, n, seed, opt);
  return plan_from_labels(r.assignment, n, Scheme::kmeans, seed);
}

std::vector<std::size_t> rebalance(const Points& points, std::vector<std::size_t> assignment,
                                   const std::vector<std::vector<double>>& centroids) {
  const std::size_t n = centroids.size();
  const std::size_t d = points.size();
  if (assignment.size() != d) throw std::invalid_argument("rebalance: assignment size mismatch");
  std::vector<std::size_t> size(n, 0);
  for (auto a : assignment) ++size.at(a);
  // The D mod N larger targets go to the currently largest clusters.
  std::vector<std::size_t> by_size(n);
  std::iota(by_size.begin(), by_size.end(), 0);
  std::stable_sort(by_size.begin(), by_size.end(),
                   [&size](std::size_t a, std::size_t b) { return size[a] > size[b]; });
  std::vector<std::size_t> target(n, d / n);
  for (std::size_t i = 0; i < d % n; ++i) ++target[by_size[i]];

  for (;;) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t move_el = d, move_to = n;
    for (std::size_t c = 0; c < n; ++c) {
      if (size[c] >= target[c]) continue;
      for (std::size_t e = 0; e < d; ++e) {
        const std::size_t from = assignment[e];
        if (size[from] <= target[from]) continue;
        const double dist = sq_dist(points[e], centroids[c]);
        if (dist < best) {
          best = dist;
          move_el = e;
          move_to = c;
        }
      }
    }
    if (move_to == n) break;
    --size[assignment[move_el]];
    ++size[move_to];
    assignment[move_el] = move_to;
  }
  return assignment;
}

PartitionPlan balanced_kmeans_partition(const FeatureMatrix& f, std::size_t n, std::uint64_t seed,
                                        const KMeansOptions& opt) {
  const auto r = kmeans_columns(f, n, seed, opt);
  const auto balanced = rebalance(normalized_columns(f), r.assignment, r.centroids);
  return plan_from_labels(balanced, n, Scheme::balanced_kmeans, seed);
}

double cosine_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0 || bb == 0) return 1.0;
  return 1.0 - ab / std::sqrt(aa * bb);
}

Dendrogram agglomerative(const FeatureMatrix& f, std::size_t n) {
  check_clustering(f, n, "agglomerative");
  const std::size_t d = f.cols;
  std::vector<std::vector<double>> cols(d);
  for (std::size_t c = 0; c < d; ++c) cols[c] = f.column(c);
  // dist over active slots; slot i holds cluster id[i].
  std::vector<std::vector<double>> dist(d, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) dist[i][j] = dist[j][i] = cosine_distance(cols[i], cols[j]);
  std::vector<std::size_t> id(d);
  std::iota(id.begin(), id.end(), 0);
  std::vector<bool> alive(d, true);
  std::vector<std::size_t> slot_of(d);
  std::iota(slot_of.begin(), slot_of.end(), 0);

  Dendrogram out;
  for (std::size_t step = 0; step + n < d; ++step) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = d, bj = d;
    std::pair<std::size_t, std::size_t> best_ids{};
    for (std::size_t i = 0; i < d; ++i) {
      if (!alive[i]) continue;
      for (std::size_t j = i + 1; j < d; ++j) {
        if (!alive[j]) continue;
        const std::pair<std::size_t, std::size_t> ids{std::min(id[i], id[j]), std::max(id[i], id[j])};
        if (dist[i][j] < best || (dist[i][j] == best && ids < best_ids)) {
          best = dist[i][j];
          bi = i;
          bj = j;
          best_ids = ids;
        }
      }
    }
    out.merges.push_back({best_ids.first, best_ids.second, best});
    // Lance-Williams update for complete linkage; the merged cluster keeps slot bi.
    for (std::size_t k = 0; k < d; ++k) {
      if (!alive[k] || k == bi || k == bj) continue;
      dist[bi][k] = dist[k][bi] = std::max(dist[bi][k], dist[bj][k]);
    }
    alive[bj] = false;
    for (auto& s : slot_of)
      if (s == bj) s = bi;
    id[bi] = d + step;
  }
  std::vector<std::size_t> slot_label(d, 0);
  std::size_t next = 0;
  for (std::size_t i = 0; i < d; ++i)
    if (alive[i]) slot_label[i] = next++;
  out.labels.resize(d);
  for (std::size_t c = 0; c < d; ++c) out.labels[c] = slot_label[slot_of[c]];
  return out;
}

PartitionPlan agglomerative_partition(const FeatureMatrix& f, std::size_t n) {
  return plan_from_labels(agglomerative(f, n).labels, n, Scheme::agglomerative, 0);
}

FeatureMatrix subsample_rows(const FeatureMatrix& f, std::size_t cap, std::uint64_t seed) {
  if (cap == 0 || cap >= f.rows) return f;
  Rng rng(seed);
  auto perm = rng.permutation(f.rows);
  perm.resize(cap);
  std::sort(perm.begin(), perm.end());
  FeatureMatrix out;
  out.rows = cap;
  out.cols = f.cols;
  out.values.reserve(cap * f.cols);
  for (auto r : perm)
    out.values.insert(out.values.end(), f.values.begin() + static_cast<std::ptrdiff_t>(r * f.cols),
                      f.values.begin() + static_cast<std::ptrdiff_t>((r + 1) * f.cols));
  return out;
}

}  // namespace sne::partition
