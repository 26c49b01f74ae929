#include "sne/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "sne/ops.hpp"

namespace sne::ensemble {

namespace {

constexpr std::pair<Variant, const char*> kVariantNames[] = {
    {Variant::all, "all"},
    {Variant::stochastic_eval, "stochastic_eval"},
    {Variant::trained_dropout, "trained_dropout"},
};

std::vector<std::size_t> all_students(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

std::size_t count_correct(const Tensor& logits, std::span<const int> labels) {
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (logits[i * c + j] > logits[i * c + arg]) arg = j;
    if (static_cast<int>(arg) == labels[i]) ++correct;
  }
  return correct;
}

void scale_ledger(energy::EnergyLedger& ledger, std::uint64_t factor) {
  for (auto& [id, r] : ledger.layers) {
    r.mac_ops *= factor;
    r.ac_ops *= factor;
    r.spike_count *= factor;
    r.samples *= factor;
  }
}

energy::LayerRecord head_record(std::size_t d, std::size_t classes, std::size_t batch) {
  energy::LayerRecord r;
  r.id = "head";
  r.static_macs = d * classes;
  r.mac_ops = r.static_macs * batch;
  r.neuron_count = d;
  r.timesteps = 1;
  r.samples = batch;
  r.analog_input = true;
  r.snn = true;
  return r;
}

std::vector<std::size_t> choose_active(const Policy& policy, std::size_t n, Rng& rng) {
  if (policy.variant == Variant::all) return all_students(n);
  return sample_active_set(n, policy.active(n), rng);
}

}  // namespace

std::string to_string(Variant v) {
  for (const auto& [k, name] : kVariantNames)
    if (k == v) return name;
  return "?";
}

Variant variant_from_string(const std::string& s) {
  for (const auto& [k, name] : kVariantNames)
    if (s == name) return k;
  throw std::invalid_argument("unknown activation policy '" + s + "' (expected all|stochastic_eval|trained_dropout)");
}

std::size_t Policy::active(std::size_t n) const { return variant == Variant::all ? n : k; }

void Policy::validate(std::size_t n) const {
  if (variant == Variant::all) return;
  if (k < 1 || k > n) {
    throw std::invalid_argument("policy " + to_string(variant) + ": K=" + std::to_string(k) + " must be in [1, " +
                                std::to_string(n) + "]");
  }
}

std::vector<std::size_t> sample_active_set(std::size_t n, std::size_t k, Rng& rng) {
  if (k < 1 || k > n) {
    throw std::invalid_argument("sample_active_set: K=" + std::to_string(k) + " must be in [1, N=" +
                                std::to_string(n) + "]");
  }
  if (k == n) return all_students(n);
  // Partial Fisher-Yates.
  auto idx = all_students(n);
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<Tensor> EnsembleModel::parameters() const {
  std::vector<Tensor> out;
  for (const auto& s : students) {
    auto p = s.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  out.push_back(head_weight);
  out.push_back(head_bias);
  return out;
}

std::size_t EnsembleModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : parameters()) n += t.numel();
  return n;
}

void EnsembleModel::reset_states() {
  for (auto& s : students) s.reset_states();
}

EnsembleModel make_ensemble(std::vector<arch::ArchSpec> specs, partition::PartitionPlan plan, std::size_t classes,
                            losses::DistillConfig distill, std::uint64_t seed) {
  partition::require_valid(plan, plan.feature_dim);
  if (specs.size() != plan.size()) {
    throw std::invalid_argument("make_ensemble: " + std::to_string(specs.size()) + " students for a plan of " +
                                std::to_string(plan.size()));
  }
  distill.validate();
  EnsembleModel m;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    auto& s = specs[i];
    if (s.kind != arch::NetKind::snn) throw std::invalid_argument("make_ensemble: student " + std::to_string(i) + " is not spiking");
    if (s.has_head) throw std::invalid_argument("make_ensemble: student " + std::to_string(i) + " carries its own head");
    if (s.feature_dim != plan.subsets[i].size()) {
      throw std::invalid_argument("make_ensemble: student " + std::to_string(i) + " has feature_dim " +
                                  std::to_string(s.feature_dim) + ", plan assigns " +
                                  std::to_string(plan.subsets[i].size()) + " features");
    }
    m.students.emplace_back(s, derive_seed(seed, "init/student" + std::to_string(i)));
  }
  m.plan = std::move(plan);
  m.classes = classes;
  m.distill = distill;
  m.distill.n_students = m.students.size();
  m.distill.feature_dim = m.plan.feature_dim;
  const std::size_t d = m.plan.feature_dim;
  Rng rng(derive_seed(seed, "init/head"));
  m.head_weight = Tensor({classes, d});
  m.head_weight.set_requires_grad(true);
  arch::kaiming_uniform(m.head_weight, d, rng);
  m.head_bias = Tensor({classes});
  m.head_bias.set_requires_grad(true);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  for (auto& b : m.head_bias.data()) b = static_cast<real>(rng.uniform(-bound, bound));
  return m;
}

Tensor assemble_features(const std::vector<Tensor>& slices, const partition::PartitionPlan& plan, std::size_t batch) {
  if (slices.size() != plan.size()) {
    throw std::invalid_argument("assemble_features: " + std::to_string(slices.size()) + " slices for a plan of " +
                                std::to_string(plan.size()));
  }
  std::vector<Tensor> parts;
  for (std::size_t i = 0; i < slices.size(); ++i) {
    const std::size_t w = plan.subsets[i].size();
    if (!slices[i].defined()) {
      parts.push_back(Tensor::zeros({batch, w}));
      continue;
    }
    if (slices[i].rank() != 2 || slices[i].dim(0) != batch || slices[i].dim(1) != w) {
      throw std::invalid_argument("assemble_features: slice " + std::to_string(i) + " is " +
                                  shape_str(slices[i].shape()) + ", expected [" + std::to_string(batch) + " x " +
                                  std::to_string(w) + "]");
    }
    parts.push_back(slices[i]);
  }
  const auto inv = plan.inverse();
  return ops::select_columns(ops::concat(parts), inv);
}

ForwardResult ensemble_forward(EnsembleModel& model, const Tensor& images, const std::vector<std::size_t>& active,
                               const ForwardOptions& opt) {
  if (active.empty()) throw std::invalid_argument("ensemble_forward: empty active set");
  const std::size_t batch = images.dim(0);
  ForwardResult r;
  r.slices.resize(model.size());
  for (std::size_t i : active) {
    if (i >= model.size()) throw std::invalid_argument("ensemble_forward: student " + std::to_string(i) + " does not exist");
    if (r.slices[i].defined()) throw std::invalid_argument("ensemble_forward: student " + std::to_string(i) + " listed twice");
    auto& s = model.students[i];
    s.reset_states();
    energy::EnergyTrace trace;
    r.slices[i] = s.features(images, {opt.training, opt.mode, opt.count_energy ? &trace : nullptr});
    if (opt.count_energy) {
      energy::merge_into(r.ledger, energy::with_prefix(energy::count_acs(s.spec(), trace), "s" + std::to_string(i) + "/"));
    }
  }
  r.features = assemble_features(r.slices, model.plan, batch);
  r.logits = ops::linear(r.features, model.head_weight, model.head_bias);
  if (opt.count_energy) {
    auto h = head_record(model.feature_dim(), model.classes, batch);
    r.ledger.layers[h.id] = h;
  }
  return r;
}

Tensor teacher_features(arch::Model& teacher, const Tensor& images) {
  NoGradGuard guard;
  teacher.reset_states();
  return teacher.features(images, {false});
}

partition::FeatureMatrix extract_feature_matrix(arch::Model& teacher, const data::ImageDataset& ds,
                                                std::size_t batch_size) {
  if (ds.size() == 0) throw std::invalid_argument("extract_feature_matrix: empty dataset");
  partition::FeatureMatrix f;
  f.rows = ds.size();
  f.cols = teacher.feature_dim();
  f.values.reserve(f.rows * f.cols);
  for (const auto& idx : data::batch_indices(ds.size(), batch_size)) {
    const auto b = data::gather(ds, idx);
    const Tensor feats = teacher_features(teacher, b.images);
    f.values.insert(f.values.end(), feats.data().begin(), feats.data().end());
  }
  return f;
}

namespace {

void check_teacher(const EnsembleModel& model, const arch::Model& teacher) {
  if (teacher.feature_dim() != model.feature_dim()) {
    throw std::invalid_argument("train_ensemble: teacher feature_dim " + std::to_string(teacher.feature_dim()) +
                                " differs from the ensemble's " + std::to_string(model.feature_dim()));
  }
  partition::require_valid(model.plan, model.feature_dim());
}

}  // namespace

std::vector<EpochMetrics> train_ensemble(EnsembleModel& model, arch::Model& teacher, const data::ImageDataset& train,
                                         const TrainOptions& opt) {
  check_teacher(model, teacher);
  opt.policy.validate(model.size());
  model.distill.validate();
  if (train.size() == 0) throw std::invalid_argument("train_ensemble: empty training set");
  Rng shuffle(derive_seed(opt.seed, "shuffle"));
  Rng dropout(derive_seed(opt.seed, "dropout"));
  auto optimizer = make_optimizer(opt.optimizer, model.parameters());
  optimizer->zero_grad();
  const Policy train_policy =
      opt.policy.variant == Variant::trained_dropout ? opt.policy : Policy{Variant::all, model.size()};

  std::vector<EpochMetrics> history;
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    EpochMetrics m;
    std::size_t seen = 0, correct = 0;
    for (const auto& idx : data::batch_indices(train.size(), opt.batch_size, &shuffle)) {
      const auto b = data::gather(train, idx);
      const Tensor target = teacher_features(teacher, b.images);
      const auto active = choose_active(train_policy, model.size(), dropout);
      TapeScope scope;
      auto fr = ensemble_forward(model, b.images, active, {true, false});
      Tensor ce = losses::ce_loss(fr.logits, b.labels);
      Tensor kd = losses::kd_loss_ensemble(target, fr.slices, model.plan);
      Tensor loss = losses::student_total_loss(ce, kd, model.distill.alpha);
      scope.tape().backward(loss);
      optimizer->step();
      optimizer->zero_grad();
      const double w = static_cast<double>(idx.size());
      m.ce += ce.item() * w;
      m.kd += kd.item() * w;
      m.loss += loss.item() * w;
      correct += count_correct(fr.logits, b.labels);
      seen += idx.size();
    }
    m.ce /= static_cast<double>(seen);
    m.kd /= static_cast<double>(seen);
    m.loss /= static_cast<double>(seen);
    m.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    history.push_back(m);
  }
  return history;
}

GradNorms loss_gradient_norms(EnsembleModel& model, arch::Model& teacher, const data::Batch& batch) {
  check_teacher(model, teacher);
  const Tensor target = teacher_features(teacher, batch.images);
  auto params = model.parameters();
  auto norm_of = [&](bool kd_term) {
    for (auto& p : params) p.zero_grad();
    TapeScope scope;
    auto fr = ensemble_forward(model, batch.images, all_students(model.size()), {true, false});
    Tensor loss = kd_term ? ops::scale(losses::kd_loss_ensemble(target, fr.slices, model.plan), model.distill.alpha)
                          : losses::ce_loss(fr.logits, batch.labels);
    scope.tape().backward(loss);
    double s = 0;
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (real g : p.grad()) s += static_cast<double>(g) * static_cast<double>(g);
    }
    for (auto& p : params) p.zero_grad();
    return std::sqrt(s);
  };
  // Both passes see identical batch-norm running statistics.
  std::vector<std::vector<real>> saved;
  for (auto& s : model.students)
    for (auto& buf : s.buffers()) saved.emplace_back(buf.values.begin(), buf.values.end());
  auto restore = [&] {
    std::size_t k = 0;
    for (auto& s : model.students)
      for (auto& buf : s.buffers()) std::copy(saved[k].begin(), saved[k].end(), buf.values.begin()), ++k;
  };
  GradNorms g;
  g.ce = norm_of(false);
  restore();
  g.kd = model.distill.alpha == 0 ? 0.0 : norm_of(true);
  restore();
  return g;
}

double EvalResult::mean_ac_ops() const {
  return repeats ? static_cast<double>(ledger.ac_ops()) / static_cast<double>(repeats) : 0.0;
}

double EvalResult::mean_mac_ops() const {
  return repeats ? static_cast<double>(ledger.mac_ops()) / static_cast<double>(repeats) : 0.0;
}

double EvalResult::per_image(std::uint64_t total) const {
  const double n = static_cast<double>(repeats) * static_cast<double>(samples);
  return n > 0 ? static_cast<double>(total) / n : 0.0;
}

std::pair<double, double> mean_sem(const std::vector<double>& values) {
  if (values.empty()) return {0.0, 0.0};
  if (std::all_of(values.begin(), values.end(), [&](double v) { return v == values.front(); }))
    return {values.front(), 0.0};
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1)) / std::sqrt(n)};
}

namespace {

template <class Step>
EvalResult run_eval(const data::ImageDataset& ds, const EvalOptions& opt, bool sampled, Step&& step) {
  if (opt.repeats == 0) throw std::invalid_argument("evaluate: repeats must be >= 1");
  if (!(opt.noise_sigma >= 0)) throw std::invalid_argument("evaluate: noise sigma must be >= 0");
  if (ds.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  const bool deterministic = !sampled && opt.noise_sigma == 0;
  const std::size_t runs = deterministic ? 1 : opt.repeats;
  EvalResult res;
  double ce_total = 0;
  NoGradGuard guard;
  for (std::size_t r = 0; r < runs; ++r) {
    const std::string tag = std::to_string(r);
    Rng dropout(derive_seed(opt.seed, "dropout-eval/" + tag));
    const data::ImageDataset noisy =
        opt.noise_sigma > 0
            ? data::add_gaussian_noise(ds, {opt.noise_sigma, derive_seed(opt.seed, "noise/" + tag), opt.noise_clamp})
            : data::ImageDataset{};
    const data::ImageDataset& src = opt.noise_sigma > 0 ? noisy : ds;
    std::size_t correct = 0;
    double ce = 0;
    for (const auto& idx : data::batch_indices(src.size(), opt.batch_size)) {
      const auto b = data::gather(src, idx);
      energy::EnergyLedger ledger;
      const Tensor logits = step(b.images, dropout, ledger);
      correct += count_correct(logits, b.labels);
      ce += losses::ce_loss(logits, b.labels).item() * static_cast<double>(idx.size());
      energy::merge_into(res.ledger, ledger);
    }
    res.accuracies.push_back(static_cast<double>(correct) / static_cast<double>(src.size()));
    ce_total += ce / static_cast<double>(src.size());
  }
  res.ce = ce_total / static_cast<double>(runs);
  if (deterministic && opt.repeats > 1) {
    res.accuracies.assign(opt.repeats, res.accuracies[0]);
    scale_ledger(res.ledger, opt.repeats);
  }
  res.repeats = opt.repeats;
  res.samples = ds.size();
  std::tie(res.accuracy, res.sem) = mean_sem(res.accuracies);
  return res;
}

}  // namespace

EvalResult evaluate(EnsembleModel& model, const data::ImageDataset& ds, const EvalOptions& opt) {
  opt.policy.validate(model.size());
  const bool sampled = opt.policy.variant != Variant::all && opt.policy.k < model.size();
  return run_eval(ds, opt, sampled, [&](const Tensor& images, Rng& rng, energy::EnergyLedger& ledger) {
    const auto active = choose_active(opt.policy, model.size(), rng);
    auto fr = ensemble_forward(model, images, active, {false, opt.count_energy});
    ledger = std::move(fr.ledger);
    return fr.logits;
  });
}

EvalResult evaluate_model(arch::Model& model, const data::ImageDataset& ds, const EvalOptions& opt) {
  return run_eval(ds, opt, false, [&](const Tensor& images, Rng&, energy::EnergyLedger& ledger) {
    model.reset_states();
    energy::EnergyTrace trace;
    Tensor logits = model.forward(images, {false, snn::SpikeMode::hard, opt.count_energy ? &trace : nullptr});
    if (opt.count_energy) ledger = energy::count_acs(model.spec(), trace);
    return logits;
  });
}

}  // namespace sne::ensemble
