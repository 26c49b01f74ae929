#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "helpers.hpp"
#include "sne/experiment.hpp"

using namespace sne;
using namespace sne::experiment;
using sne::testing::TempDir;

namespace {

const char* kBase = R"({
  "schema_version": 1,
  "seed": 3,
  "dataset": {"name": "synth_blobs", "synth": {"per_class": 4, "test_per_class": 2}},
  "teacher": {"arch": {"family": "vgg", "depth": 5, "width_divisor": 16, "feature_dim": 12}, "epochs": 1},
  "disentangle": {"mode": "finetune", "scheme": "kmeans", "lambda": -0.2, "epochs": 1},
  "ensemble": {"n_students": 3, "student": {"family": "vgg", "depth": 5, "mini": true, "width_divisor": 16},
               "T": 2, "epochs": 1},
  "desk": {"seed": 5, "ensemble": {"alpha": 0.5}},
  "full": {"dataset": {"name": "cifar10"}}
})";

json base() { return json::parse(kBase); }

ExperimentConfig parse(const json& j, const std::string& profile = "") { return parse_config(j.dump(), profile); }

json row_with(const std::string& key, const json& value) {
  RowContext c;
  c.run_id = "r";
  c.arch = "a";
  c.partition_scheme = "none";
  ensemble::EvalResult r;
  r.repeats = 1;
  r.samples = 1;
  json row = csv_row(c, r);
  row[key] = value;
  return row;
}

void write_report(const std::filesystem::path& p, const std::vector<json>& rows) {
  json r = {{"rows", rows}};
  std::ofstream(p) << r.dump();
}

}  // namespace

TEST(Config, ParsesAndAppliesProfiles) {
  const auto c = parse(base());
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.ensemble.n_students, 3u);
  EXPECT_EQ(c.ensemble.policy.k, 3u);
  EXPECT_EQ(c.ensemble.alpha, 2);
  EXPECT_EQ(c.disentangle.mode, DisentangleMode::finetune);
  EXPECT_EQ(c.disentangle.scheme, partition::Scheme::kmeans);
  EXPECT_EQ(c.dataset.synth_test_per_class, 2u);
  const auto d = parse(base(), "desk");
  EXPECT_EQ(d.seed, 5u);
  EXPECT_EQ(d.ensemble.alpha, real(0.5));
  EXPECT_TRUE(d.dataset.desk_scale);
  const auto f = parse(base(), "full");
  EXPECT_EQ(f.dataset.name, "cifar10");
  EXPECT_FALSE(f.dataset.desk_scale);
  EXPECT_THROW(parse(base(), "huge"), std::invalid_argument);
}

TEST(Config, RejectsMalformedInput) {
  EXPECT_THROW(parse_config("{\"schema_version\": 1,"), std::invalid_argument);
  EXPECT_THROW(parse_config("[]"), std::invalid_argument);
  auto j = base();
  j["schema_version"] = 2;
  EXPECT_THROW(parse(j), std::invalid_argument);
  j = base();
  j.erase("schema_version");
  EXPECT_THROW(parse(j), std::invalid_argument);
  j = base();
  j["ensemble"]["n_students"] = "three";
  EXPECT_THROW(parse(j), std::invalid_argument);
  j = base();
  j["teacher"]["arch"]["family"] = "mlp";
  EXPECT_THROW(parse(j), std::invalid_argument);
  EXPECT_THROW(load_config("/nonexistent/config.json"), std::invalid_argument);
}

TEST(Config, ValidatesRanges) {
  const std::vector<std::pair<json::json_pointer, json>> bad = {
      {json::json_pointer("/ensemble/alpha"), -1},
      {json::json_pointer("/ensemble/T"), 0},
      {json::json_pointer("/ensemble/n_students"), 0},
      {json::json_pointer("/ensemble/lif"), {{"tau_m", 0.5}}},
      {json::json_pointer("/eval/noise_sigmas"), {0.0, -0.1}},
      {json::json_pointer("/eval/repeats"), 0},
      {json::json_pointer("/teacher/batch_size"), 0},
      {json::json_pointer("/dataset/name"), "imagenet"},
      {json::json_pointer("/disentangle/lambda"), 0.1},
      {json::json_pointer("/disentangle/mode"), "sideways"},
      {json::json_pointer("/disentangle/scheme"), "spectral"},
  };
  for (const auto& [ptr, value] : bad) {
    auto j = base();
    j[ptr] = value;
    EXPECT_THROW(parse(j), std::invalid_argument) << ptr.to_string();
  }
  auto j = base();
  j["ensemble"]["policy"] = "stochastic_eval";
  j["ensemble"]["K"] = 4;
  EXPECT_THROW(parse(j), std::invalid_argument);
  j["ensemble"]["policy"] = "all";
  EXPECT_NO_THROW(parse(j));
  j = base();
  j["disentangle"]["mode"] = "none";
  j["disentangle"]["lambda"] = 0.1;
  EXPECT_NO_THROW(parse(j));
}

TEST(Config, MissingDatasetPath) {
  auto j = base();
  j["dataset"]["name"] = "mnist";
  j["dataset"]["path"] = "/nonexistent/mnist";
  EXPECT_THROW(load_data(parse(j)), std::invalid_argument);
  j["dataset"]["path"] = "";
  ::unsetenv("SNE_DATA_DIR");
  try {
    load_data(parse(j));
    FAIL() << "no path accepted";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("path"), std::string::npos);
  }
}

TEST(Csv, ColumnOrderIsFixed) {
  const std::vector<std::string> want = {"run_id",   "arch",        "n_students", "k_active", "partition_scheme",
                                         "alpha",    "lambda",      "T",          "seed",     "split",
                                         "accuracy", "sem",         "ce_loss",    "kd_loss",  "sim_loss",
                                         "param_count", "mac_ops",  "ac_ops",     "input_layer_macs",
                                         "mean_firing_rate"};
  EXPECT_EQ(csv_columns(), want);
  const json row = row_with("arch", "a");
  for (const auto& c : want) EXPECT_TRUE(row.contains(c)) << c;
  EXPECT_EQ(row.size(), want.size());
}

TEST(Csv, EmptyDirectoryGivesHeaderOnly) {
  TempDir dir("csv-empty");
  const auto r = collect_reports(dir.path());
  std::string header;
  for (const auto& c : csv_columns()) header += (header.empty() ? "" : ",") + c;
  EXPECT_EQ(r.csv, header + "\n");
  EXPECT_TRUE(r.skipped.empty());
  EXPECT_THROW(collect_reports(dir.path() / "absent"), std::invalid_argument);
}

TEST(Csv, SkipsCorruptAndNonFiniteReports) {
  TempDir dir("csv-mixed");
  const auto reports = dir.path() / "reports";
  std::filesystem::create_directories(reports);
  write_report(reports / "a.json", {row_with("arch", "x,y")});
  std::ofstream(reports / "b.json") << "{\"rows\": [";
  write_report(reports / "c.json", {row_with("accuracy", nullptr)});
  write_report(reports / "d.json", {row_with("accuracy", 0.5)});
  std::ofstream(reports / "notes.txt") << "ignored";
  const auto r = collect_reports(dir.path());
  ASSERT_EQ(r.skipped.size(), 2u);
  EXPECT_EQ(r.skipped[0].rfind("b.json:", 0), 0u);
  EXPECT_EQ(r.skipped[1].rfind("c.json:", 0), 0u);
  std::size_t lines = 0;
  for (char ch : r.csv) lines += ch == '\n';
  EXPECT_EQ(lines, 3u);
  EXPECT_NE(r.csv.find("\"x,y\""), std::string::npos);
  EXPECT_LT(r.csv.find("\"x,y\""), r.csv.find(",0.5,"));
}

TEST(RunId, DependsOnCommandSeedAndConfig) {
  const auto a = parse(base());
  EXPECT_EQ(run_id("partition", a), run_id("partition", parse(base())));
  EXPECT_EQ(run_id("partition", a).rfind("partition-s3-", 0), 0u);
  EXPECT_NE(run_id("partition", a), run_id("train-teacher", a));
  auto j = base();
  j["eval"] = {{"repeats", 3}};
  EXPECT_NE(run_id("partition", a), run_id("partition", parse(j)));
  EXPECT_NE(run_id("partition", a), run_id("partition", parse(base(), "full")));
  const auto rep = make_report("partition", a);
  for (const char* k : {"schema_version", "run_id", "command", "seed", "profile", "config_snapshot", "epochs", "rows",
                        "wall_clock_s"})
    EXPECT_TRUE(rep.contains(k)) << k;
}

TEST(Plan, FinetunedTeacherForcesContiguousClusters) {
  const auto cfg = parse(base());
  const auto data = load_data(cfg);
  arch::Model teacher(teacher_spec(cfg, data.train), 1);
  const auto forced = make_plan(cfg, teacher, data.train, true);
  EXPECT_FALSE(forced.warning.empty());
  EXPECT_EQ(forced.plan.subsets, partition::fixed_partition(12, 3).subsets);
  const auto free = make_plan(cfg, teacher, data.train, false);
  EXPECT_TRUE(free.warning.empty());
  EXPECT_EQ(free.plan.scheme, partition::Scheme::kmeans);
  EXPECT_TRUE(partition::validate_partition(free.plan, 12).ok());
}

TEST(Finetune, RejectsIndivisibleFeatureDim) {
  auto j = base();
  j["ensemble"]["n_students"] = 5;
  const auto cfg = parse(j);
  const auto data = load_data(cfg);
  arch::Model teacher(teacher_spec(cfg, data.train), 1);
  try {
    finetune(teacher, data.train, data.test, 5, real(-0.1), cfg.disentangle.train, 1);
    FAIL() << "12 features split into 5 clusters";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("not divisible"), std::string::npos) << e.what();
  }
  EXPECT_THROW(finetune(teacher, data.train, data.test, 3, real(0.1), cfg.disentangle.train, 1),
               std::invalid_argument);
}

TEST(Finetune, RecordsDistancePerEpoch) {
  const auto cfg = parse(base());
  const auto data = load_data(cfg);
  arch::Model teacher(teacher_spec(cfg, data.train), 1);
  const auto h = finetune(teacher, data.train, data.test, 3, real(-0.2), cfg.disentangle.train, 2);
  ASSERT_EQ(h.size(), 1u);
  EXPECT_GT(h[0].distance, 0);
  EXPECT_LE(h[0].distance, 2);
  EXPECT_NEAR(h[0].distance, mean_feature_distance(teacher, data.test, 3), 1e-12);
}

TEST(Specs, StudentsMatchPlanSlices) {
  const auto cfg = parse(base());
  const auto data = load_data(cfg);
  const auto plan = partition::fixed_partition(12, 3);
  const auto specs = student_specs(cfg, data.train, plan);
  ASSERT_EQ(specs.size(), 3u);
  for (const auto& s : specs) {
    EXPECT_EQ(s.kind, arch::NetKind::snn);
    EXPECT_EQ(s.timesteps, 2u);
  }
  auto e = build_ensemble(cfg, data.train, plan);
  EXPECT_EQ(e.size(), 3u);
  EXPECT_EQ(e.feature_dim(), 12u);
}
