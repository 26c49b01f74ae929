// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any FAIL.
//   sne_acceptance --sne <path to sne> --work <scratch dir> [--config configs/desk.json]

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "oracles.hpp"
#include "sne/experiment.hpp"
#include "sne/gradcheck.hpp"
#include "sne/lif.hpp"
#include "sne/ops.hpp"

namespace fs = std::filesystem;
using namespace sne;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Context {
  fs::path sne, work, config;
  fs::path run_a, run_b;
  bool pipeline_ok = false;
  std::string pipeline_error;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor t = Tensor::zeros(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<real>(lo + (hi - lo) * rng.uniform());
  return t;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string quote(const fs::path& p) { return "'" + p.string() + "'"; }

// ---------------------------------------------------------------- pipeline

int run_cli(const Context& c, const std::string& command, const fs::path& out, const fs::path& log) {
  const std::string cmd = quote(c.sne) + " " + command + " --config " + quote(c.config) + " --desk --out " +
                          quote(out) + " >> " + quote(log) + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

bool run_pipeline(const Context& c, const fs::path& out, std::string& error) {
  fs::remove_all(out);
  fs::create_directories(out);
  const fs::path log = out.string() + ".log";
  fs::remove(log);
  for (const char* cmd : {"train-teacher", "finetune-teacher", "partition", "train-ensemble", "sweep-dropout",
                          "sweep-noise", "report"}) {
    const int code = run_cli(c, cmd, out, log);
    if (code != 0) {
      error = std::string(cmd) + " exited with " + std::to_string(code) + " (see " + log.string() + ")";
      return false;
    }
  }
  return true;
}

experiment::ExperimentConfig desk_config(const Context& c) { return experiment::load_config(c.config, "desk"); }

ensemble::EvalOptions clean_eval(const experiment::ExperimentConfig& cfg) {
  ensemble::EvalOptions eo;
  eo.batch_size = cfg.eval.batch_size;
  eo.seed = derive_seed(cfg.seed, "eval");
  return eo;
}

// Monotone within one standard error: each step may rise by at most the
// larger SEM of the two cells.
bool non_increasing_within_sem(const std::vector<experiment::SweepRow>& rows, std::string& detail) {
  bool ok = true;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& a = rows[i - 1].result;
    const auto& b = rows[i].result;
    if (b.accuracy > a.accuracy + std::max(a.sem, b.sem)) {
      ok = false;
      detail += " [rise at step " + std::to_string(i) + "]";
    }
  }
  return ok;
}

// ---------------------------------------------------------------- criteria

Outcome static_counts(Context&) {
  struct Case {
    const char* name;
    double value, target, tol;
  };
  arch::VggOptions v19, v11;
  v19.depth = 19;
  v11.depth = 11;
  arch::ResNetOptions r18;
  r18.depth = 18;
  const auto s19 = arch::vgg_spec(v19), s11 = arch::vgg_spec(v11), s18 = arch::resnet_spec(r18);
  const std::vector<Case> cases = {
      {"VGG19 params", double(arch::parameter_count(s19)), 20e6, 0.02},
      {"VGG11 params", double(arch::parameter_count(s11)), 9.3e6, 0.02},
      {"ResNet18 params", double(arch::parameter_count(s18)), 11.3e6, 0.02},
      {"ResNet18 MACs", double(energy::total_macs(s18)), 555e6, 0.05},
      {"VGG19 MACs", double(energy::total_macs(s19)), 398e6, 0.05},
  };
  Outcome o{true, ""};
  for (const auto& c : cases) {
    const double rel = c.value / c.target - 1;
    o.pass = o.pass && std::abs(rel) <= c.tol;
    o.detail += std::string(o.detail.empty() ? "" : ", ") + c.name + " " + fmt("%.4gM", c.value / 1e6) +
                fmt(" (%+.2f%%)", 100 * rel);
  }
  return o;
}

Outcome gradients(Context&) {
  const std::vector<std::pair<std::string, std::function<GradCheckResult(Rng&)>>> graphs = {
      {"matmul",
       [](Rng& rng) {
         Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
         const Tensor t = random_tensor({3, 2}, rng);
         return grad_check_leaves([&] { return ops::sum(ops::mul(ops::sigmoid(ops::matmul(a, b)), t)); }, {a, b});
       }},
      {"conv",
       [](Rng& rng) {
         Tensor x = random_tensor({2, 3, 6, 6}, rng), k = random_tensor({4, 3, 3, 3}, rng), b = random_tensor({4}, rng);
         const std::size_t stride = 1 + rng.below(2), pad = rng.below(2);
         return grad_check_leaves(
             [&] { return ops::sum(ops::square(ops::conv2d(x, k, {stride, pad}, b))); }, {x, k, b});
       }},
      {"bn",
       [](Rng& rng) {
         Tensor x = random_tensor({4, 3, 2, 2}, rng), g = random_tensor({3}, rng, 0.5, 1.5), b = random_tensor({3}, rng);
         const Tensor t = random_tensor({4, 3, 2, 2}, rng);
         return grad_check_leaves(
             [&] {
               ops::BatchNormStats stats(3);
               return ops::sum(ops::mul(ops::batch_norm(x, g, b, stats), t));
             },
             {x, g, b});
       }},
      {"pool",
       [](Rng& rng) {
         Tensor x = random_tensor({2, 2, 4, 4}, rng);
         const Tensor t = random_tensor({2, 2}, rng);
         return grad_check_leaves(
             [&] { return ops::sum(ops::mul(ops::global_avgpool(ops::square(ops::maxpool2d(x, 2, 2))), t)); }, {x});
       }},
      {"lif-chain",
       [](Rng& rng) {
         snn::LIFParams p;
         p.v_th = real(0.5 + rng.uniform());
         Tensor x = random_tensor({4, 2, 3}, rng, 0, 2);
         Tensor w = random_tensor({3, 3}, rng);
         return grad_check_leaves(
             [&] {
               snn::LIFState s1, s2;
               Tensor h = snn::lif_multistep(x, s1, p, snn::SpikeMode::soft);
               h = ops::reshape(ops::linear(ops::reshape(h, {8, 3}), w), {4, 2, 3});
               return ops::sum(snn::firing_rate_readout(snn::lif_multistep(h, s2, p, snn::SpikeMode::soft)));
             },
             {x, w});
       }},
  };
  Outcome o{true, ""};
  Rng rng(2024);
  for (const auto& [name, check] : graphs) {
    double worst = 0;
    for (int point = 0; point < 20; ++point) worst = std::max(worst, double(check(rng).max_rel_error));
    o.pass = o.pass && worst < 1e-4;
    o.detail += (o.detail.empty() ? "" : ", ") + name + fmt(" %.2e", worst);
  }
  o.detail = "max rel. error over 20 points: " + o.detail;
  return o;
}

Outcome lif_traces(Context&) {
  struct Trace {
    const char* name;
    snn::LIFParams p;
    std::vector<double> input, potential, spikes;
  };
  snn::LIFParams leak;
  leak.v_th = 10;
  snn::LIFParams base;
  snn::LIFParams offset;
  offset.v_reset = real(0.2);
  offset.v_th = real(1.5);
  const std::vector<Trace> traces = {
      // H = V + (X - V)/2 with nothing reaching threshold.
      {"leak", leak, {2, 0, 0, 0}, {1, 0.5, 0.25, 0.125}, {0, 0, 0, 0}},
      {"charge", base, {1, 1, 1}, {0.5, 0.75, 0.875}, {0, 0, 0}},
      // H reaches V_th exactly: fires, potential returns to V_reset.
      {"fire", base, {2, 2, 0.5}, {0, 0, 0.25}, {1, 1, 0}},
      {"reset", offset, {3, 1, 3}, {0.2, 0.6, 0.2}, {1, 0, 1}},
  };
  Outcome o{true, ""};
  double worst = 0;
  for (const auto& t : traces) {
    snn::LIFState state;
    NoGradGuard guard;
    Tensor x = Tensor::zeros({t.input.size(), 1});
    for (std::size_t i = 0; i < t.input.size(); ++i) {
      x[i] = static_cast<real>(t.input[i]);
      auto r = snn::lif_step(state, Tensor::from({1}, {static_cast<real>(t.input[i])}), t.p);
      state = r.state;
      worst = std::max({worst, std::abs(double(state.v[0]) - t.potential[i]), std::abs(double(r.spike[0]) - t.spikes[i])});
    }
    snn::LIFState fused;
    const Tensor s = snn::lif_multistep(x, fused, t.p);
    for (std::size_t i = 0; i < t.input.size(); ++i) worst = std::max(worst, std::abs(double(s[i]) - t.spikes[i]));
    worst = std::max(worst, std::abs(double(fused.v[0]) - t.potential.back()));
  }
  o.pass = worst <= 1e-6;
  o.detail = "4 hand traces (leak 1, 0.5, 0.25, 0.125), max deviation " + fmt("%.1e", worst);
  return o;
}

Outcome disentanglement(Context& c) {
  if (!c.pipeline_ok) return {false, "pipeline A failed: " + c.pipeline_error};
  auto cfg = desk_config(c);
  const auto data = experiment::load_data(cfg);
  Outcome o{true, ""};
  for (const auto& [n, target] : {std::pair<std::size_t, double>{2, 2.0}, {4, std::sqrt(8.0 / 3)}}) {
    auto teacher = io::load_model(c.run_a / "teacher.ckpt");
    const double before = experiment::mean_feature_distance(teacher, data.test, n);
    const auto hist = experiment::finetune(teacher, data.train, data.test, n, cfg.disentangle.lambda,
                                           cfg.disentangle.train, derive_seed(cfg.seed, "finetune"));
    const double d = hist.back().distance;
    o.pass = o.pass && std::abs(d - target) <= 0.05;
    o.detail += std::string(o.detail.empty() ? "" : ", ") + "N=" + std::to_string(n) + fmt(" %.3f", before) +
                fmt(" -> %.4f", d) + fmt(" (target %.4f)", target);
  }
  o.detail += fmt(", lambda %.2f", cfg.disentangle.lambda);
  return o;
}

Outcome partitions(Context&) {
  using namespace partition;
  Rng rng(5150);
  std::size_t invalid = 0, unbalanced = 0, linkage_mismatch = 0, kmeans_mismatch = 0, random_miss = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 4 + rng.below(60), n = 2 + rng.below(std::min<std::size_t>(d - 1, 7));
    const auto f = oracle::random_matrix(10, d, rng);
    const auto balanced = balanced_kmeans_partition(f, n, trial);
    for (const auto& p : {fixed_partition(d, n, FixedMode::random, trial), kmeans_partition(f, n, trial), balanced,
                          agglomerative_partition(f, n)})
      if (!validate_partition(p, d).ok() || p.size() != n) ++invalid;
    std::size_t lo = d, hi = 0;
    for (const auto& s : balanced.subsets) {
      lo = std::min(lo, s.size());
      hi = std::max(hi, s.size());
    }
    if (hi - lo > 1) ++unbalanced;
  }
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 2 + rng.below(7), n = 1 + rng.below(d);
    const auto f = oracle::random_matrix(6, d, rng);
    std::vector<std::vector<std::size_t>> clusters;
    const auto want = oracle::brute_force_linkage(f, n, &clusters);
    const auto got = agglomerative(f, n);
    bool same = got.merges.size() == want.size() && agglomerative_partition(f, n).subsets == clusters;
    for (std::size_t i = 0; same && i < want.size(); ++i)
      same = got.merges[i].a == want[i].a && got.merges[i].b == want[i].b && got.merges[i].distance == want[i].distance;
    if (!same) ++linkage_mismatch;
  }
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 3 + rng.below(6), n = 2 + rng.below(std::min<std::size_t>(d - 1, 3));
    const auto f = oracle::planted_matrix(4 + rng.below(10), d, n, rng);
    const auto best = oracle::exhaustive_kmeans(f, n);
    const auto r = kmeans_columns(f, n, trial);
    const auto p = plan_from_labels(r.assignment, n, Scheme::kmeans, 0);
    if (std::abs(r.objective - best.objective) > 1e-9 ||
        std::find(best.optima.begin(), best.optima.end(), p.subsets) == best.optima.end())
      ++kmeans_mismatch;
    const auto g = oracle::random_matrix(4 + rng.below(10), d, rng);
    if (kmeans_columns(g, n, trial).objective > oracle::exhaustive_kmeans(g, n).objective + 1e-9) ++random_miss;
  }
  Outcome o;
  o.pass = invalid == 0 && unbalanced == 0 && linkage_mismatch == 0 && kmeans_mismatch == 0;
  o.detail = "invalid plans " + std::to_string(invalid) + "/200, unbalanced " + std::to_string(unbalanced) +
             "/50, linkage mismatches " + std::to_string(linkage_mismatch) + "/50, k-means vs exhaustive " +
             std::to_string(kmeans_mismatch) + "/50 planted (local optima on unstructured matrices, informational: " +
             std::to_string(random_miss) + "/50)";
  return o;
}

Outcome kd_benefit(Context& c) {
  json j = json::parse(slurp(c.config));
  j["ensemble"]["n_students"] = 1;
  j["disentangle"]["mode"] = "none";
  j["teacher"]["arch"]["feature_activation"] = true;
  j["ensemble"]["epochs"] = 20;
  std::vector<double> acc0, acc2;
  for (std::uint64_t seed : {1, 2, 3}) {
    j["seed"] = seed;
    auto cfg = experiment::parse_config(j.dump(), "desk");
    const auto data = experiment::load_data(cfg);
    arch::Model teacher(experiment::teacher_spec(cfg, data.train), derive_seed(seed, "teacher/init"));
    experiment::train_classifier(teacher, data.train, nullptr, cfg.teacher.train, derive_seed(seed, "teacher"));
    const auto plan = experiment::make_plan(cfg, teacher, data.train, false).plan;
    for (double alpha : {0.0, 2.0}) {
      cfg.ensemble.alpha = static_cast<real>(alpha);
      auto model = experiment::build_ensemble(cfg, data.train, plan);
      ensemble::TrainOptions to;
      to.epochs = cfg.ensemble.train.epochs;
      to.batch_size = cfg.ensemble.train.batch_size;
      to.optimizer = cfg.ensemble.train.optimizer;
      to.policy = cfg.ensemble.policy;
      to.seed = derive_seed(seed, "ensemble");
      ensemble::train_ensemble(model, teacher, data.train, to);
      (alpha == 0 ? acc0 : acc2).push_back(ensemble::evaluate(model, data.test, clean_eval(cfg)).accuracy);
    }
  }
  const auto m0 = ensemble::mean_sem(acc0), m2 = ensemble::mean_sem(acc2);
  std::string detail = "alpha=0";
  for (double a : acc0) detail += fmt(" %.3f", a);
  detail += fmt(" (mean %.4f), alpha=2", m0.first);
  for (double a : acc2) detail += fmt(" %.3f", a);
  detail += fmt(" (mean %.4f)", m2.first);
  return {m2.first >= m0.first, detail};
}

Outcome dropout_tradeoff(Context& c) {
  if (!c.pipeline_ok) return {false, "pipeline A failed: " + c.pipeline_error};
  const auto cfg = desk_config(c);
  const auto data = experiment::load_data(cfg);
  auto model = io::load_ensemble(c.run_a / "ensemble.ckpt");
  const auto rows = experiment::sweep_dropout(cfg, model, data.test);
  Outcome o{true, ""};
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (!(rows[i].result.per_image(rows[i].result.ledger.ac_ops()) <
          rows[i - 1].result.per_image(rows[i - 1].result.ledger.ac_ops()))) {
      o.pass = false;
      o.detail += " [AC not decreasing at K=" + std::to_string(rows[i].k) + "]";
    }
  if (!non_increasing_within_sem(rows, o.detail)) o.pass = false;
  const auto full = ensemble::evaluate(model, data.test, clean_eval(cfg));
  const auto& kn = rows.front().result;
  const bool exact = rows.front().k == model.size() && kn.accuracy == full.accuracy && kn.sem == 0 &&
                     kn.per_image(kn.ledger.ac_ops()) == full.per_image(full.ledger.ac_ops()) &&
                     kn.per_image(kn.ledger.mac_ops()) == full.per_image(full.ledger.mac_ops());
  if (!exact) {
    o.pass = false;
    o.detail += " [K=N differs from full evaluation]";
  }
  std::string table;
  for (const auto& r : rows)
    table += (table.empty() ? "" : "; ") + std::string("K=") + std::to_string(r.k) +
             fmt(" acc %.4f", r.result.accuracy) + fmt("+-%.4f", r.result.sem) +
             fmt(" AC %.4g", r.result.per_image(r.result.ledger.ac_ops()));
  o.detail = table + (exact ? "; K=N == all exactly" : "") + o.detail;
  return o;
}

Outcome energy_oracle(Context& c) {
  // Uniform fan-out layers: 1x1 conv, non-overlapping 2x2 conv, linear.
  arch::ArchSpec spec;
  spec.name = "oracle";
  spec.kind = arch::NetKind::snn;
  spec.in_channels = 2;
  spec.in_height = spec.in_width = 4;
  spec.blocks = {arch::Block::conv(3, 1, 1, 0), arch::Block::act(), arch::Block::conv(2, 2, 2, 0),
                 arch::Block::act(), arch::Block::linear(4), arch::Block::act()};
  spec.feature_dim = 4;
  spec.has_head = false;
  const std::size_t T = 3, B = 5;
  spec.timesteps = T;
  Rng rng(77);
  bool exact = true;
  for (int trial = 0; trial < 20; ++trial) {
    const double p2 = trial == 0 ? 0 : rng.uniform(), p4 = trial == 0 ? 0 : rng.uniform();
    std::vector<int> s2(T * B * 48), s4(T * B * 8);
    for (auto& v : s2) v = rng.uniform() < p2;
    for (auto& v : s4) v = rng.uniform() < p4;
    // Every spike is delivered to each synapse that reads its position.
    std::uint64_t conv_events = 0, linear_events = 0, spikes = 0;
    for (std::size_t e = 0; e < s2.size(); ++e) {
      spikes += s2[e];
      if (s2[e]) conv_events += 2;  // each input pixel sits in exactly one 2x2 window, 2 output channels
    }
    for (int v : s4) linear_events += v ? 4 : 0;
    energy::EnergyTrace trace;
    energy::LayerTrace first{"L00.conv", 0, 32, B, T, true};
    for (int i = 0; i < 32 * int(T * B); ++i) first.input_sum += rng.uniform();
    energy::LayerTrace second{"L02.conv", double(spikes), 48, B, T, false};
    energy::LayerTrace third{"L04.linear", 0, 8, B, T, false};
    for (int v : s4) third.input_sum += v;
    trace.layers = {first, second, third};
    const auto ledger = energy::count_acs(spec, trace);
    exact = exact && ledger.layers.at("L02.conv").ac_ops == conv_events &&
            ledger.layers.at("L04.linear").ac_ops == linear_events && ledger.layers.at("L00.conv").ac_ops == 0 &&
            ledger.layers.at("L00.conv").mac_ops == 32u * 3 * T * B;
    if (trial == 0 && ledger.ac_ops() != 0) exact = false;
  }
  Outcome o{exact, std::string("enumeration == ledger on 20 traces") + (exact ? "" : " (MISMATCH)") +
                       ", zero-spike trace -> 0 ACs"};
  if (!c.pipeline_ok) return {false, o.detail + "; pipeline A failed: " + c.pipeline_error};
  const auto cfg = desk_config(c);
  const auto data = experiment::load_data(cfg);
  auto model = io::load_ensemble(c.run_a / "ensemble.ckpt");
  const auto batch = data::take(data.test, 64).images;
  ensemble::ForwardOptions fo;
  fo.count_energy = true;
  std::vector<std::size_t> everyone(model.size());
  for (std::size_t i = 0; i < everyone.size(); ++i) everyone[i] = i;
  auto all = ensemble::ensemble_forward(model, batch, everyone, fo).ledger;
  const auto head = all.layers.at("head");
  all.layers.erase("head");
  std::vector<energy::EnergyLedger> solo;
  bool additive = true;
  for (std::size_t i = 0; i < model.size(); ++i) {
    auto l = ensemble::ensemble_forward(model, batch, {i}, fo).ledger;
    additive = additive && l.layers.at("head") == head;
    l.layers.erase("head");
    solo.push_back(l);
  }
  additive = additive && energy::merge_ledgers(solo) == all;
  o.pass = o.pass && additive;
  o.detail += std::string(", ") + std::to_string(model.size()) + "-student ledger " +
              (additive ? "== sum of solo ledgers (head counted once)" : "NOT additive") +
              fmt(", %.0f ACs", double(all.ac_ops()));
  return o;
}

Outcome noise_protocol(Context& c) {
  Outcome o{true, ""};
  data::SynthOptions so;
  so.per_class = 6;  // 60 images x 192 pixels = 11520
  const auto ds = data::synth_blobs(so);
  double worst = 0;
  for (double sigma : {0.01, 0.03, 0.05, 0.07}) {
    const auto noisy = data::add_gaussian_noise(ds, {sigma, 99, false});
    double s = 0, s2 = 0;
    const std::size_t n = ds.images.numel();
    for (std::size_t i = 0; i < n; ++i) {
      const double e = noisy.images[i] - ds.images[i];
      s += e;
      s2 += e * e;
    }
    const double mean = s / n, sd = std::sqrt(s2 / n - mean * mean);
    worst = std::max(worst, std::abs(sd / sigma - 1));
  }
  o.pass = worst <= 0.02;
  o.detail = "empirical sd off by at most " + fmt("%.2f%%", 100 * worst) + " over " +
             std::to_string(ds.images.numel()) + " pixels";
  if (!c.pipeline_ok) return {false, o.detail + "; pipeline A failed: " + c.pipeline_error};
  const auto cfg = desk_config(c);
  const auto data = experiment::load_data(cfg);
  auto model = io::load_ensemble(c.run_a / "ensemble.ckpt");
  const auto clean = ensemble::evaluate(model, data.test, clean_eval(cfg));
  const auto rows = experiment::sweep_noise_ensemble(cfg, model, data.test);
  const auto& zero = rows.front().result;
  const bool bitwise = rows.front().sigma == 0 && zero.accuracy == clean.accuracy && zero.ce == clean.ce &&
                       zero.sem == 0;
  o.pass = o.pass && bitwise && rows.size() == cfg.eval.noise_sigmas.size();
  o.detail += std::string("; sigma=0 ") + (bitwise ? "== clean bitwise" : "DIFFERS from clean");
  std::string table;
  if (!non_increasing_within_sem(rows, table)) o.pass = false;
  for (const auto& r : rows)
    o.detail += fmt("; %.2f", r.sigma) + fmt(": %.4f", r.result.accuracy) + fmt("+-%.4f", r.result.sem);
  o.detail += table + " (" + std::to_string(cfg.eval.repeats) + " repeats)";
  return o;
}

Outcome determinism(Context& c) {
  if (!c.pipeline_ok) return {false, "pipeline A failed: " + c.pipeline_error};
  std::string error;
  if (!run_pipeline(c, c.run_b, error)) return {false, "pipeline B failed: " + error};
  std::size_t compared = 0;
  std::vector<std::string> diffs;
  for (const auto& e : fs::recursive_directory_iterator(c.run_a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), c.run_a);
    const auto other = c.run_b / rel;
    ++compared;
    if (!fs::exists(other)) {
      diffs.push_back(rel.string() + " missing");
      continue;
    }
    if (rel.parent_path() == "reports") {
      json a = json::parse(slurp(e.path())), b = json::parse(slurp(other));
      a.erase("wall_clock_s");
      b.erase("wall_clock_s");
      if (a != b) diffs.push_back(rel.string());
    } else if (slurp(e.path()) != slurp(other)) {
      diffs.push_back(rel.string());
    }
  }
  std::size_t in_b = 0;
  for (const auto& e : fs::recursive_directory_iterator(c.run_b)) in_b += e.is_regular_file();
  if (in_b != compared) diffs.push_back("file count " + std::to_string(compared) + " vs " + std::to_string(in_b));
  std::string detail = std::to_string(compared) + " artifacts compared (checkpoints, plan, reports without wall clock, summary.csv)";
  for (const auto& d : diffs) detail += "; differs: " + d;
  return {diffs.empty() && compared > 0, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  Context c;
  c.config = fs::path(SNE_SOURCE_DIR) / "configs" / "desk.json";
  app.add_option("--sne", c.sne, "sne executable")->required()->check(CLI::ExistingFile);
  app.add_option("--work", c.work, "scratch directory")->required();
  app.add_option("--config", c.config, "desk config")->check(CLI::ExistingFile);
  CLI11_PARSE(app, argc, argv);
  c.sne = fs::absolute(c.sne);
  c.work = fs::absolute(c.work);
  c.config = fs::absolute(c.config);
  c.run_a = c.work / "A";
  c.run_b = c.work / "B";
  fs::create_directories(c.work);

  c.pipeline_ok = run_pipeline(c, c.run_a, c.pipeline_error);
  if (!c.pipeline_ok) std::cout << "pipeline A: " << c.pipeline_error << "\n";

  const std::vector<std::pair<const char*, Outcome (*)(Context&)>> criteria = {
      {"static counts", static_counts},   {"gradient check", gradients},    {"LIF traces", lif_traces},
      {"disentanglement", disentanglement}, {"partitions", partitions},   {"KD benefit", kd_benefit},
      {"dropout trade-off", dropout_tradeoff}, {"energy oracle", energy_oracle}, {"noise protocol", noise_protocol},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second(c);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " (" << criteria[i].first
              << "): " << o.detail << std::endl;
  }
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed")) << "\n";
  return failed ? 1 : 0;
}
