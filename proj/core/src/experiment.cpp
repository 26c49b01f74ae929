#include "sne/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "sne/losses.hpp"

namespace sne::experiment {

namespace fs = std::filesystem;

std::string to_string(DisentangleMode m) {
  switch (m) {
    case DisentangleMode::none: return "none";
    case DisentangleMode::frozen_cluster: return "frozen_cluster";
    case DisentangleMode::finetune: return "finetune";
  }
  return "?";
}

namespace {

DisentangleMode mode_from_string(const std::string& s) {
  if (s == "none") return DisentangleMode::none;
  if (s == "frozen_cluster") return DisentangleMode::frozen_cluster;
  if (s == "finetune") return DisentangleMode::finetune;
  throw std::invalid_argument("disentangle.mode '" + s + "' (expected none|frozen_cluster|finetune)");
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

ArchConfig parse_arch(const json& j) {
  ArchConfig a;
  read(j, "family", a.family);
  read(j, "depth", a.depth);
  read(j, "mini", a.mini);
  read(j, "base_channels", a.base_channels);
  read(j, "width_divisor", a.width_divisor);
  read(j, "feature_dim", a.feature_dim);
  read(j, "feature_activation", a.feature_activation);
  if (a.family != "vgg" && a.family != "resnet") {
    throw std::invalid_argument("arch.family '" + a.family + "' (expected vgg|resnet)");
  }
  return a;
}

TrainConfig parse_train(const json& j, TrainConfig t) {
  read(j, "epochs", t.epochs);
  read(j, "batch_size", t.batch_size);
  if (j.contains("optimizer")) t.optimizer = j.at("optimizer").get<OptimizerConfig>();
  return t;
}

ExperimentConfig from_json_config(const json& j) {
  ExperimentConfig c;
  if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
  if (!j.contains("schema_version")) throw std::invalid_argument("config: missing schema_version");
  c.schema_version = j.at("schema_version").get<int>();
  if (c.schema_version != kSchemaVersion) {
    throw std::invalid_argument("config: schema_version " + std::to_string(c.schema_version) +
                                " is not supported (expected " + std::to_string(kSchemaVersion) + ")");
  }
  read(j, "seed", c.seed);
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    read(d, "name", c.dataset.name);
    read(d, "path", c.dataset.path);
    read(d, "desk_scale", c.dataset.desk_scale);
    read(d, "train_limit", c.dataset.train_limit);
    read(d, "test_limit", c.dataset.test_limit);
    if (d.contains("synth")) {
      const auto& s = d.at("synth");
      auto& o = c.dataset.synth;
      read(s, "classes", o.classes);
      read(s, "per_class", o.per_class);
      read(s, "channels", o.channels);
      read(s, "height", o.height);
      read(s, "width", o.width);
      read(s, "separation", o.separation);
      read(s, "spread", o.spread);
      read(s, "pixel_noise", o.pixel_noise);
      read(s, "pattern_size", o.pattern_size);
      read(s, "seed", o.seed);
      read(s, "test_per_class", c.dataset.synth_test_per_class);
    }
  }
  if (j.contains("teacher")) {
    const auto& t = j.at("teacher");
    if (t.contains("arch")) c.teacher.arch = parse_arch(t.at("arch"));
    c.teacher.train = parse_train(t, c.teacher.train);
  }
  if (j.contains("disentangle")) {
    const auto& d = j.at("disentangle");
    if (d.contains("mode")) c.disentangle.mode = mode_from_string(d.at("mode").get<std::string>());
    if (d.contains("scheme")) c.disentangle.scheme = partition::scheme_from_string(d.at("scheme").get<std::string>());
    read(d, "lambda", c.disentangle.lambda);
    read(d, "row_cap", c.disentangle.row_cap);
    c.disentangle.train = parse_train(d, c.disentangle.train);
  }
  if (j.contains("ensemble")) {
    const auto& e = j.at("ensemble");
    read(e, "n_students", c.ensemble.n_students);
    if (e.contains("student")) c.ensemble.student = parse_arch(e.at("student"));
    read(e, "alpha", c.ensemble.alpha);
    read(e, "T", c.ensemble.timesteps);
    if (e.contains("lif")) c.ensemble.lif = e.at("lif").get<snn::LIFParams>();
    if (e.contains("policy")) c.ensemble.policy.variant = ensemble::variant_from_string(e.at("policy").get<std::string>());
    c.ensemble.policy.k = c.ensemble.n_students;
    read(e, "K", c.ensemble.policy.k);
    c.ensemble.train = parse_train(e, c.ensemble.train);
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    read(e, "noise_sigmas", c.eval.noise_sigmas);
    read(e, "repeats", c.eval.repeats);
    read(e, "batch_size", c.eval.batch_size);
    read(e, "noise_clamp", c.eval.noise_clamp);
  }
  return c;
}

}  // namespace

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("config: " + m); };
  if (ensemble.alpha < 0) fail("ensemble.alpha must be >= 0");
  if (ensemble.timesteps < 1) fail("ensemble.T must be >= 1");
  if (ensemble.n_students < 1) fail("ensemble.n_students must be >= 1");
  ensemble.lif.validate();
  ensemble.policy.validate(ensemble.n_students);
  for (double s : eval.noise_sigmas)
    if (!(s >= 0)) fail("eval.noise_sigmas must be >= 0");
  if (eval.repeats < 1) fail("eval.repeats must be >= 1");
  if (eval.batch_size < 1 || teacher.train.batch_size < 1 || ensemble.train.batch_size < 1 ||
      disentangle.train.batch_size < 1) {
    fail("batch sizes must be >= 1");
  }
  if (dataset.name != "synth_blobs" && dataset.name != "mnist" && dataset.name != "cifar10") {
    fail("dataset.name '" + dataset.name + "' (expected synth_blobs|mnist|cifar10)");
  }
  if (disentangle.mode == DisentangleMode::finetune && !(disentangle.lambda < 0)) {
    fail("disentangle.lambda must be < 0 for finetune");
  }
}

ExperimentConfig parse_config(const std::string& text, const std::string& profile) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  if (!profile.empty() && profile != "desk" && profile != "full") {
    throw std::invalid_argument("config: unknown profile '" + profile + "'");
  }
  if (j.is_object()) {
    if (!profile.empty() && j.contains(profile)) j.merge_patch(j.at(profile));
    j.erase("desk");
    j.erase("full");
  }
  ExperimentConfig c;
  try {
    c = from_json_config(j);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  c.profile = profile;
  if (profile == "desk") c.dataset.desk_scale = true;
  if (profile == "full") c.dataset.desk_scale = false;
  c.source_text = text;
  c.validate();
  return c;
}

ExperimentConfig load_config(const fs::path& path, const std::string& profile) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open config " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), {});
  return parse_config(text, profile);
}

data::SplitPair load_data(const ExperimentConfig& cfg) {
  const auto& d = cfg.dataset;
  data::SplitPair out;
  if (d.name == "synth_blobs") {
    out = data::synth_blobs_split(d.synth, d.synth_test_per_class);
  } else {
    std::string path = d.path;
    if (path.empty()) {
      if (const char* env = std::getenv("SNE_DATA_DIR")) path = fs::path(env) / d.name;
    }
    if (path.empty()) throw std::invalid_argument("dataset " + d.name + ": no path given and SNE_DATA_DIR unset");
    if (!fs::exists(path)) throw std::invalid_argument("dataset " + d.name + ": path " + path + " does not exist");
    out = d.name == "mnist" ? data::load_mnist_idx(path) : data::load_cifar10_bin(path);
  }
  if (d.train_limit) out.train = data::take(out.train, d.train_limit);
  if (d.test_limit) out.test = data::take(out.test, d.test_limit);
  out.train.validate();
  out.test.validate();
  return out;
}

arch::ArchSpec make_spec(const ArchConfig& a, arch::NetKind kind, const data::ImageDataset& like,
                         std::size_t feature_dim, bool has_head, std::size_t timesteps, const snn::LIFParams& lif) {
  if (like.height() != like.width()) throw std::invalid_argument("make_spec: only square images are supported");
  arch::ArchSpec spec;
  if (a.family == "vgg") {
    arch::VggOptions o;
    o.depth = a.depth;
    o.mini = a.mini;
    o.kind = kind;
    o.width_divisor = a.width_divisor;
    o.in_channels = like.channels();
    o.image_size = like.height();
    o.classes = like.classes;
    o.feature_dim = feature_dim;
    o.feature_activation = a.feature_activation;
    o.has_head = has_head;
    spec = arch::vgg_spec(o);
  } else {
    arch::ResNetOptions o;
    o.depth = a.depth;
    o.base_channels = a.base_channels;
    o.kind = kind;
    o.width_divisor = a.width_divisor;
    o.in_channels = like.channels();
    o.image_size = like.height();
    o.classes = like.classes;
    o.feature_dim = feature_dim;
    o.feature_activation = a.feature_activation;
    o.has_head = has_head;
    spec = arch::resnet_spec(o);
  }
  spec.timesteps = timesteps;
  spec.lif = lif;
  arch::analyze(spec);
  return spec;
}

arch::ArchSpec teacher_spec(const ExperimentConfig& cfg, const data::ImageDataset& like) {
  return make_spec(cfg.teacher.arch, arch::NetKind::ann, like, cfg.teacher.arch.feature_dim, true);
}

std::vector<arch::ArchSpec> student_specs(const ExperimentConfig& cfg, const data::ImageDataset& like,
                                          const partition::PartitionPlan& plan) {
  std::vector<arch::ArchSpec> specs;
  ArchConfig a = cfg.ensemble.student;
  a.feature_activation = true;
  for (const auto& s : plan.subsets)
    specs.push_back(make_spec(a, arch::NetKind::snn, like, s.size(), false, cfg.ensemble.timesteps, cfg.ensemble.lif));
  return specs;
}

json to_json_value(const EpochRecord& e) {
  return {{"loss", e.loss},
          {"ce", e.ce},
          {"kd", e.kd},
          {"sim", e.sim},
          {"train_accuracy", e.train_accuracy},
          {"test_accuracy", e.test_accuracy},
          {"distance", e.distance}};
}

namespace {

std::size_t count_correct(const Tensor& logits, const std::vector<int>& labels) {
  const std::size_t c = logits.dim(1);
  std::size_t n = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (logits[i * c + j] > logits[i * c + arg]) arg = j;
    n += static_cast<int>(arg) == labels[i];
  }
  return n;
}

double test_accuracy(arch::Model& model, const data::ImageDataset* test, std::size_t batch) {
  if (!test) return 0;
  ensemble::EvalOptions eo;
  eo.batch_size = batch;
  eo.count_energy = false;
  return ensemble::evaluate_model(model, *test, eo).accuracy;
}

template <class LossFn>
std::vector<EpochRecord> train_loop(arch::Model& model, const data::ImageDataset& train, const TrainConfig& tc,
                                    std::uint64_t seed, LossFn&& loss_fn,
                                    const std::function<void(EpochRecord&)>& after_epoch) {
  if (train.size() == 0) throw std::invalid_argument("training: empty dataset");
  Rng shuffle(derive_seed(seed, "shuffle"));
  auto opt = make_optimizer(tc.optimizer, model.parameters());
  opt->zero_grad();
  std::vector<EpochRecord> history;
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    EpochRecord rec;
    std::size_t seen = 0, correct = 0;
    for (const auto& idx : data::batch_indices(train.size(), tc.batch_size, &shuffle)) {
      const auto b = data::gather(train, idx);
      model.reset_states();
      TapeScope scope;
      Tensor logits;
      EpochRecord part;
      Tensor loss = loss_fn(b, logits, part);
      scope.tape().backward(loss);
      opt->step();
      opt->zero_grad();
      const double w = static_cast<double>(idx.size());
      rec.loss += loss.item() * w;
      rec.ce += part.ce * w;
      rec.sim += part.sim * w;
      correct += count_correct(logits, b.labels);
      seen += idx.size();
    }
    rec.loss /= static_cast<double>(seen);
    rec.ce /= static_cast<double>(seen);
    rec.sim /= static_cast<double>(seen);
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    after_epoch(rec);
    history.push_back(rec);
  }
  return history;
}

}  // namespace

std::vector<EpochRecord> train_classifier(arch::Model& model, const data::ImageDataset& train,
                                          const data::ImageDataset* test, const TrainConfig& tc, std::uint64_t seed) {
  return train_loop(
      model, train, tc, seed,
      [&](const data::Batch& b, Tensor& logits, EpochRecord& part) {
        logits = model.forward(b.images, {true});
        Tensor ce = losses::ce_loss(logits, b.labels);
        part.ce = ce.item();
        return ce;
      },
      [&](EpochRecord& rec) { rec.test_accuracy = test_accuracy(model, test, 256); });
}

double mean_feature_distance(arch::Model& teacher, const data::ImageDataset& ds, std::size_t n_clusters,
                             std::size_t batch_size) {
  double total = 0;
  for (const auto& idx : data::batch_indices(ds.size(), batch_size)) {
    const auto b = data::gather(ds, idx);
    total += losses::mean_pairwise_distance(ensemble::teacher_features(teacher, b.images), n_clusters) *
             static_cast<double>(idx.size());
  }
  return total / static_cast<double>(ds.size());
}

std::vector<EpochRecord> finetune(arch::Model& teacher, const data::ImageDataset& train,
                                  const data::ImageDataset& test, std::size_t n_clusters, real lambda,
                                  const TrainConfig& tc, std::uint64_t seed) {
  if (!(lambda < 0)) throw std::invalid_argument("finetune: lambda must be < 0");
  if (n_clusters < 2 || teacher.feature_dim() % n_clusters != 0) {
    throw std::invalid_argument("finetune: D=" + std::to_string(teacher.feature_dim()) +
                                " is not divisible into N=" + std::to_string(n_clusters) + " clusters");
  }
  return train_loop(
      teacher, train, tc, seed,
      [&](const data::Batch& b, Tensor& logits, EpochRecord& part) {
        Tensor feats = teacher.features(b.images, {true});
        logits = teacher.head(feats);
        Tensor ce = losses::ce_loss(logits, b.labels);
        Tensor sim = losses::sim_loss(feats, n_clusters);
        part.ce = ce.item();
        part.sim = sim.item();
        return ops::add(ce, ops::scale(sim, lambda));
      },
      [&](EpochRecord& rec) {
        rec.test_accuracy = test_accuracy(teacher, &test, 256);
        rec.distance = mean_feature_distance(teacher, test, n_clusters);
      });
}

PlanChoice make_plan(const ExperimentConfig& cfg, arch::Model& teacher, const data::ImageDataset& train,
                     bool teacher_finetuned) {
  const std::size_t d = teacher.feature_dim(), n = cfg.ensemble.n_students;
  const std::uint64_t seed = derive_seed(cfg.seed, "partition");
  PlanChoice out;
  partition::Scheme scheme = cfg.disentangle.scheme;
  if (teacher_finetuned && scheme != partition::Scheme::contiguous) {
    out.warning = "scheme " + partition::to_string(scheme) +
                  " ignored: a fine-tuned teacher is partitioned into its contiguous clusters";
    scheme = partition::Scheme::contiguous;
  }
  switch (scheme) {
    case partition::Scheme::contiguous:
      out.plan = partition::fixed_partition(d, n, partition::FixedMode::contiguous, seed);
      break;
    case partition::Scheme::fixed:
      out.plan = partition::fixed_partition(d, n, partition::FixedMode::random, seed);
      break;
    default: {
      const auto f = partition::subsample_rows(ensemble::extract_feature_matrix(teacher, train),
                                               cfg.disentangle.row_cap, derive_seed(seed, "rows"));
      if (scheme == partition::Scheme::kmeans) out.plan = partition::kmeans_partition(f, n, seed);
      else if (scheme == partition::Scheme::balanced_kmeans) out.plan = partition::balanced_kmeans_partition(f, n, seed);
      else out.plan = partition::agglomerative_partition(f, n);
      break;
    }
  }
  partition::require_valid(out.plan, d);
  return out;
}

ensemble::EnsembleModel build_ensemble(const ExperimentConfig& cfg, const data::ImageDataset& like,
                                       const partition::PartitionPlan& plan) {
  losses::DistillConfig distill;
  distill.alpha = cfg.ensemble.alpha;
  distill.lambda = cfg.disentangle.lambda;
  return ensemble::make_ensemble(student_specs(cfg, like, plan), plan, like.classes, distill,
                                 derive_seed(cfg.seed, "init"));
}

std::vector<SweepRow> sweep_dropout(const ExperimentConfig& cfg, ensemble::EnsembleModel& model,
                                    const data::ImageDataset& test) {
  std::vector<SweepRow> rows;
  for (std::size_t k = model.size(); k >= 1; --k) {
    ensemble::EvalOptions eo;
    eo.policy = {ensemble::Variant::stochastic_eval, k};
    eo.repeats = cfg.eval.repeats;
    eo.batch_size = cfg.eval.batch_size;
    eo.seed = derive_seed(cfg.seed, "dropout");
    rows.push_back({k, 0.0, ensemble::evaluate(model, test, eo)});
  }
  return rows;
}

std::vector<SweepRow> sweep_noise_ensemble(const ExperimentConfig& cfg, ensemble::EnsembleModel& model,
                                           const data::ImageDataset& test) {
  std::vector<SweepRow> rows;
  for (double sigma : cfg.eval.noise_sigmas) {
    ensemble::EvalOptions eo;
    eo.repeats = cfg.eval.repeats;
    eo.batch_size = cfg.eval.batch_size;
    eo.seed = derive_seed(cfg.seed, "noise");
    eo.noise_sigma = sigma;
    eo.noise_clamp = cfg.eval.noise_clamp;
    rows.push_back({model.size(), sigma, ensemble::evaluate(model, test, eo)});
  }
  return rows;
}

std::vector<SweepRow> sweep_noise_model(const ExperimentConfig& cfg, arch::Model& model,
                                        const data::ImageDataset& test) {
  std::vector<SweepRow> rows;
  for (double sigma : cfg.eval.noise_sigmas) {
    ensemble::EvalOptions eo;
    eo.repeats = cfg.eval.repeats;
    eo.batch_size = cfg.eval.batch_size;
    eo.seed = derive_seed(cfg.seed, "noise");
    eo.noise_sigma = sigma;
    eo.noise_clamp = cfg.eval.noise_clamp;
    rows.push_back({1, sigma, ensemble::evaluate_model(model, test, eo)});
  }
  return rows;
}

const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols = {
      "run_id", "arch",     "n_students", "k_active", "partition_scheme", "alpha",   "lambda",
      "T",      "seed",     "split",      "accuracy", "sem",              "ce_loss", "kd_loss",
      "sim_loss", "param_count", "mac_ops", "ac_ops", "input_layer_macs", "mean_firing_rate"};
  return cols;
}

json csv_row(const RowContext& c, const ensemble::EvalResult& r) {
  return {{"run_id", c.run_id},
          {"arch", c.arch},
          {"n_students", c.n_students},
          {"k_active", c.k_active},
          {"partition_scheme", c.partition_scheme},
          {"alpha", c.alpha},
          {"lambda", c.lambda},
          {"T", c.timesteps},
          {"seed", c.seed},
          {"split", c.split},
          {"accuracy", r.accuracy},
          {"sem", r.sem},
          {"ce_loss", c.ce},
          {"kd_loss", c.kd},
          {"sim_loss", c.sim},
          {"param_count", c.param_count},
          {"mac_ops", r.per_image(r.ledger.mac_ops())},
          {"ac_ops", r.per_image(r.ledger.ac_ops())},
          {"input_layer_macs", r.per_image(r.ledger.input_layer_macs())},
          {"mean_firing_rate", r.ledger.mean_firing_rate()}};
}

std::string run_id(const std::string& command, const ExperimentConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%08llx",
                static_cast<unsigned long long>(derive_seed(cfg.seed, cfg.profile + "\n" + cfg.source_text) & 0xffffffffULL));
  return command + "-s" + std::to_string(cfg.seed) + "-" + buf;
}

json make_report(const std::string& command, const ExperimentConfig& cfg) {
  return {{"schema_version", kSchemaVersion},
          {"run_id", run_id(command, cfg)},
          {"command", command},
          {"seed", cfg.seed},
          {"profile", cfg.profile},
          {"config_snapshot", cfg.source_text},
          {"epochs", json::array()},
          {"rows", json::array()},
          {"wall_clock_s", 0.0}};
}

namespace {

std::string csv_cell(const json& v) {
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    return q + "\"";
  }
  if (v.is_number_float() && !std::isfinite(v.get<double>())) throw std::invalid_argument("non-finite value");
  if (!v.is_number()) throw std::invalid_argument("cell is neither string nor number");
  return v.dump();
}

}  // namespace

CsvResult collect_reports(const fs::path& dir) {
  CsvResult out;
  const auto& cols = csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out.csv += (i ? "," : "") + cols[i];
  out.csv += "\n";
  fs::path root = fs::is_directory(dir / "reports") ? dir / "reports" : dir;
  if (!fs::is_directory(root)) throw std::invalid_argument("report: " + dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    try {
      std::ifstream in(f);
      const json j = json::parse(in);
      std::string block;
      for (const auto& row : j.at("rows")) {
        std::string line;
        for (std::size_t i = 0; i < cols.size(); ++i) line += (i ? "," : "") + csv_cell(row.at(cols[i]));
        block += line + "\n";
      }
      out.csv += block;
    } catch (const std::exception& e) {
      out.skipped.push_back(f.filename().string() + ": " + e.what());
    }
  }
  return out;
}

}  // namespace sne::experiment
