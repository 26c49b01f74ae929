#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sne/experiment.hpp"

namespace fs = std::filesystem;
using namespace sne;
using experiment::ExperimentConfig;

namespace {

struct Args {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "runs";
  bool desk = false;
  bool full = false;
  std::string teacher;
  std::string plan;
  std::string ensemble;
  std::vector<std::string> models;
};

void add_common(CLI::App* sub, Args& a, bool needs_config = true) {
  auto* c = sub->add_option("--config", a.config, "experiment config (JSON)");
  if (needs_config) c->required()->check(CLI::ExistingFile);
  sub->add_option("--seed", a.seed, "override the config seed");
  sub->add_option("--out", a.out, "run directory")->capture_default_str();
  auto* d = sub->add_flag("--desk", a.desk, "apply the desk profile");
  auto* f = sub->add_flag("--full", a.full, "apply the full profile");
  d->excludes(f);
}

ExperimentConfig config_of(const Args& a) {
  auto cfg = experiment::load_config(a.config, a.full ? "full" : a.desk ? "desk" : "");
  if (a.seed) cfg.seed = *a.seed;
  return cfg;
}

fs::path out_dir(const Args& a) { return fs::path(a.out); }

fs::path pick(const std::string& given, const fs::path& fallback) {
  return given.empty() ? fallback : fs::path(given);
}

fs::path require_file(const fs::path& p, const char* what) {
  if (!fs::is_regular_file(p)) throw std::invalid_argument(std::string(what) + " not found: " + p.string());
  return p;
}

fs::path default_teacher(const Args& a, const ExperimentConfig& cfg) {
  const auto ft = out_dir(a) / "teacher_ft.ckpt";
  if (cfg.disentangle.mode == experiment::DisentangleMode::finetune && fs::exists(ft)) return ft;
  return out_dir(a) / "teacher.ckpt";
}

class Clock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void write_report(const Args& a, json& report, const Clock& clock) {
  report["wall_clock_s"] = clock.seconds();
  const auto path = out_dir(a) / "reports" / (report["run_id"].get<std::string>() + ".json");
  io::write_json(path, report);
  std::cout << "report " << path.string() << "\n";
}

std::string sigma_split(double sigma) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "test_sigma%g", sigma);
  return buf;
}

experiment::RowContext model_context(const ExperimentConfig& cfg, const std::string& id, arch::Model& m) {
  experiment::RowContext ctx;
  ctx.run_id = id;
  ctx.arch = m.spec().name;
  ctx.partition_scheme = "none";
  ctx.n_students = 1;
  ctx.k_active = 1;
  ctx.timesteps = m.spec().kind == arch::NetKind::snn ? m.spec().timesteps : 1;
  ctx.seed = cfg.seed;
  ctx.param_count = m.parameter_count();
  return ctx;
}

experiment::RowContext ensemble_context(const ExperimentConfig& cfg, const std::string& id,
                                        ensemble::EnsembleModel& e, std::size_t k) {
  experiment::RowContext ctx;
  ctx.run_id = id;
  ctx.arch = std::to_string(e.size()) + "x" + e.students.front().spec().name;
  ctx.partition_scheme = partition::to_string(e.plan.scheme);
  ctx.n_students = e.size();
  ctx.k_active = k;
  ctx.timesteps = e.students.front().spec().timesteps;
  ctx.alpha = e.distill.alpha;
  ctx.lambda = cfg.disentangle.mode == experiment::DisentangleMode::finetune ? cfg.disentangle.lambda : 0.0;
  ctx.seed = cfg.seed;
  ctx.param_count = e.parameter_count();
  return ctx;
}

ensemble::EvalOptions clean_eval(const ExperimentConfig& cfg) {
  ensemble::EvalOptions eo;
  eo.batch_size = cfg.eval.batch_size;
  eo.seed = derive_seed(cfg.seed, "eval");
  return eo;
}

int cmd_train_teacher(const Args& a) {
  Clock clock;
  const auto cfg = config_of(a);
  const auto data = experiment::load_data(cfg);
  arch::Model teacher(experiment::teacher_spec(cfg, data.train), derive_seed(cfg.seed, "teacher/init"));
  auto report = experiment::make_report("train-teacher", cfg);
  for (const auto& e : experiment::train_classifier(teacher, data.train, &data.test, cfg.teacher.train,
                                                    derive_seed(cfg.seed, "teacher")))
    report["epochs"].push_back(experiment::to_json_value(e));
  const auto r = ensemble::evaluate_model(teacher, data.test, clean_eval(cfg));
  auto ctx = model_context(cfg, report["run_id"], teacher);
  ctx.ce = r.ce;
  report["rows"].push_back(experiment::csv_row(ctx, r));
  report["param_count"] = teacher.parameter_count();
  report["ledger"] = energy::ledger_summary(r.ledger);
  const auto ckpt = out_dir(a) / "teacher.ckpt";
  io::save_model(ckpt, teacher, {{"run_id", report["run_id"]}, {"finetuned", false}});
  std::cout << "teacher " << ckpt.string() << " test accuracy " << r.accuracy << "\n";
  write_report(a, report, clock);
  return 0;
}

int cmd_finetune_teacher(const Args& a) {
  Clock clock;
  const auto cfg = config_of(a);
  const auto data = experiment::load_data(cfg);
  auto teacher = io::load_model(require_file(pick(a.teacher, out_dir(a) / "teacher.ckpt"), "teacher checkpoint"));
  auto report = experiment::make_report("finetune-teacher", cfg);
  report["initial_distance"] = experiment::mean_feature_distance(teacher, data.test, cfg.ensemble.n_students);
  double sim = 0;
  for (const auto& e : experiment::finetune(teacher, data.train, data.test, cfg.ensemble.n_students,
                                            cfg.disentangle.lambda, cfg.disentangle.train,
                                            derive_seed(cfg.seed, "finetune"))) {
    report["epochs"].push_back(experiment::to_json_value(e));
    sim = e.sim;
  }
  const auto r = ensemble::evaluate_model(teacher, data.test, clean_eval(cfg));
  auto ctx = model_context(cfg, report["run_id"], teacher);
  ctx.lambda = cfg.disentangle.lambda;
  ctx.partition_scheme = "contiguous";
  ctx.ce = r.ce;
  ctx.sim = sim;
  report["rows"].push_back(experiment::csv_row(ctx, r));
  report["param_count"] = teacher.parameter_count();
  const auto ckpt = out_dir(a) / "teacher_ft.ckpt";
  io::save_model(ckpt, teacher, {{"run_id", report["run_id"]}, {"finetuned", true},
                                 {"clusters", cfg.ensemble.n_students}});
  std::cout << "teacher " << ckpt.string() << " test accuracy " << r.accuracy << " distance "
            << report["epochs"].back()["distance"].get<double>() << "\n";
  write_report(a, report, clock);
  return 0;
}

int cmd_partition(const Args& a) {
  Clock clock;
  const auto cfg = config_of(a);
  const auto data = experiment::load_data(cfg);
  json meta;
  auto teacher = io::load_model(require_file(pick(a.teacher, default_teacher(a, cfg)), "teacher checkpoint"), &meta);
  const bool finetuned = meta.value("finetuned", false);
  const auto choice = experiment::make_plan(cfg, teacher, data.train, finetuned);
  if (!choice.warning.empty()) std::cerr << "warning: " << choice.warning << "\n";
  const auto path = pick(a.plan, out_dir(a) / "plan.json");
  io::save_plan(path, choice.plan);
  auto report = experiment::make_report("partition", cfg);
  report["plan"] = choice.plan;
  if (!choice.warning.empty()) report["warning"] = choice.warning;
  std::cout << "plan " << path.string() << " (" << partition::to_string(choice.plan.scheme) << ", sizes";
  for (const auto& s : choice.plan.subsets) std::cout << " " << s.size();
  std::cout << ")\n";
  write_report(a, report, clock);
  return 0;
}

int cmd_train_ensemble(const Args& a) {
  Clock clock;
  const auto cfg = config_of(a);
  const auto data = experiment::load_data(cfg);
  auto teacher = io::load_model(require_file(pick(a.teacher, default_teacher(a, cfg)), "teacher checkpoint"));
  auto plan = io::load_plan(require_file(pick(a.plan, out_dir(a) / "plan.json"), "plan"));
  if (plan.feature_dim != teacher.feature_dim()) {
    throw std::invalid_argument("plan covers D=" + std::to_string(plan.feature_dim) + " but the teacher has D=" +
                                std::to_string(teacher.feature_dim()));
  }
  partition::require_valid(plan, teacher.feature_dim());
  if (plan.subsets.size() != cfg.ensemble.n_students) {
    throw std::invalid_argument("plan has " + std::to_string(plan.subsets.size()) + " subsets but n_students is " +
                                std::to_string(cfg.ensemble.n_students));
  }
  auto model = experiment::build_ensemble(cfg, data.train, plan);
  ensemble::TrainOptions to;
  to.epochs = cfg.ensemble.train.epochs;
  to.batch_size = cfg.ensemble.train.batch_size;
  to.optimizer = cfg.ensemble.train.optimizer;
  to.policy = cfg.ensemble.policy;
  to.seed = derive_seed(cfg.seed, "ensemble");
  auto report = experiment::make_report("train-ensemble", cfg);
  ensemble::EpochMetrics last;
  for (const auto& e : ensemble::train_ensemble(model, teacher, data.train, to)) {
    report["epochs"].push_back({{"loss", e.loss}, {"ce", e.ce}, {"kd", e.kd}, {"train_accuracy", e.train_accuracy}});
    last = e;
  }
  const auto r = ensemble::evaluate(model, data.test, clean_eval(cfg));
  auto ctx = ensemble_context(cfg, report["run_id"], model, model.size());
  ctx.ce = r.ce;
  ctx.kd = last.kd;
  report["rows"].push_back(experiment::csv_row(ctx, r));
  report["param_count"] = model.parameter_count();
  report["plan"] = model.plan;
  report["ledger"] = energy::ledger_summary(r.ledger);
  const auto ckpt = pick(a.ensemble, out_dir(a) / "ensemble.ckpt");
  io::save_ensemble(ckpt, model, {{"run_id", report["run_id"]}, {"final_kd", last.kd}});
  std::cout << "ensemble " << ckpt.string() << " test accuracy " << r.accuracy << "\n";
  write_report(a, report, clock);
  return 0;
}

void print_row(const json& row) {
  std::printf("%-22s K=%-3d acc=%.4f sem=%.4f ac=%.4g mac=%.4g\n", row["split"].get<std::string>().c_str(),
              row["k_active"].get<int>(), row["accuracy"].get<double>(), row["sem"].get<double>(),
              row["ac_ops"].get<double>(), row["mac_ops"].get<double>());
}

int cmd_sweep_dropout(const Args& a) {
  Clock clock;
  const auto cfg = config_of(a);
  const auto data = experiment::load_data(cfg);
  json meta;
  auto model = io::load_ensemble(require_file(pick(a.ensemble, out_dir(a) / "ensemble.ckpt"), "ensemble checkpoint"), &meta);
  auto report = experiment::make_report("sweep-dropout", cfg);
  report["repeats"] = cfg.eval.repeats;
  for (const auto& row : experiment::sweep_dropout(cfg, model, data.test)) {
    auto ctx = ensemble_context(cfg, report["run_id"], model, row.k);
    ctx.ce = row.result.ce;
    ctx.kd = meta.value("final_kd", 0.0);
    report["rows"].push_back(experiment::csv_row(ctx, row.result));
    print_row(report["rows"].back());
  }
  write_report(a, report, clock);
  return 0;
}

int cmd_sweep_noise(const Args& a) {
  Clock clock;
  const auto cfg = config_of(a);
  const auto data = experiment::load_data(cfg);
  std::vector<fs::path> paths(a.models.begin(), a.models.end());
  if (paths.empty()) paths.push_back(pick(a.ensemble, out_dir(a) / "ensemble.ckpt"));
  auto report = experiment::make_report("sweep-noise", cfg);
  report["repeats"] = cfg.eval.repeats;
  for (const auto& p : paths) {
    const auto header = io::checkpoint_header(require_file(p, "checkpoint"));
    std::vector<experiment::SweepRow> rows;
    std::optional<experiment::RowContext> base;
    if (header.at("kind") == "ensemble") {
      json meta;
      auto model = io::load_ensemble(p, &meta);
      rows = experiment::sweep_noise_ensemble(cfg, model, data.test);
      base = ensemble_context(cfg, report["run_id"], model, model.size());
      base->kd = meta.value("final_kd", 0.0);
    } else {
      auto model = io::load_model(p);
      rows = experiment::sweep_noise_model(cfg, model, data.test);
      base = model_context(cfg, report["run_id"], model);
    }
    for (const auto& row : rows) {
      auto ctx = *base;
      ctx.split = sigma_split(row.sigma);
      ctx.ce = row.result.ce;
      report["rows"].push_back(experiment::csv_row(ctx, row.result));
      print_row(report["rows"].back());
    }
  }
  write_report(a, report, clock);
  return 0;
}

int cmd_report(const Args& a) {
  const auto result = experiment::collect_reports(out_dir(a));
  for (const auto& s : result.skipped) std::cerr << "skipped " << s << "\n";
  std::cout << result.csv;
  if (fs::is_directory(out_dir(a))) io::write_text(out_dir(a) / "summary.csv", result.csv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spiking student ensembles distilled from a disentangled teacher"};
  app.require_subcommand(1);
  Args args;

  auto* tt = app.add_subcommand("train-teacher", "train the ANN teacher with cross-entropy");
  add_common(tt, args);
  auto* ft = app.add_subcommand("finetune-teacher", "fine-tune the teacher with the similarity loss");
  add_common(ft, args);
  ft->add_option("--teacher", args.teacher, "teacher checkpoint");
  auto* pt = app.add_subcommand("partition", "partition the teacher feature space");
  add_common(pt, args);
  pt->add_option("--teacher", args.teacher, "teacher checkpoint");
  pt->add_option("--plan", args.plan, "plan output path");
  auto* te = app.add_subcommand("train-ensemble", "distil the student ensemble");
  add_common(te, args);
  te->add_option("--teacher", args.teacher, "teacher checkpoint");
  te->add_option("--plan", args.plan, "plan file");
  te->add_option("--ensemble", args.ensemble, "ensemble output path");
  auto* sd = app.add_subcommand("sweep-dropout", "accuracy and AC ops for K = N..1 active students");
  add_common(sd, args);
  sd->add_option("--ensemble", args.ensemble, "ensemble checkpoint");
  auto* sn = app.add_subcommand("sweep-noise", "accuracy under Gaussian input noise");
  add_common(sn, args);
  sn->add_option("--ensemble", args.ensemble, "ensemble checkpoint");
  sn->add_option("--model", args.models, "model or ensemble checkpoint (repeatable)");
  auto* rp = app.add_subcommand("report", "collect run reports into one CSV");
  add_common(rp, args, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*tt) return cmd_train_teacher(args);
    if (*ft) return cmd_finetune_teacher(args);
    if (*pt) return cmd_partition(args);
    if (*te) return cmd_train_ensemble(args);
    if (*sd) return cmd_sweep_dropout(args);
    if (*sn) return cmd_sweep_noise(args);
    if (*rp) return cmd_report(args);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
