#include "mvfuse/commands.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

using namespace mvfuse;

namespace {

namespace fs = std::filesystem;

class CliDir {
 public:
  CliDir() {
    root_ = fs::temp_directory_path() / ("mvfuse_cli_" + std::to_string(counter_++));
    fs::create_directories(root_);
  }
  ~CliDir() { fs::remove_all(root_); }
  std::string path(const std::string& name) const { return (root_ / name).string(); }

 private:
  fs::path root_;
  static inline int counter_ = 0;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  EXPECT_TRUE(in) << "cannot open " << path;
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Byte snapshot of every regular file under a directory.
std::map<std::string, std::string> snapshot(const std::string& dir) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file()) {
      files[fs::relative(entry.path(), dir).string()] = slurp(entry.path().string());
    }
  }
  return files;
}

Json base_synth_doc(const std::string& out) {
  Json doc;
  doc["out"] = out;
  doc["seed"] = 4242;
  doc["synth"] = Json{{"n_subjects", 400},
                      {"views", Json{{"dxa", Json{{"dim", 10}, {"noise", 0.3}}},
                                     {"clinical", Json{{"dim", 5}, {"noise", 1.0}}}}},
                      {"n_factors", 3},
                      {"n_snps", 250},
                      {"n_causal", 4},
                      {"ld_proxies", 3},
                      {"ld_flip_rate", 0.02},
                      {"factor_share", 0.4},
                      {"genetic_share", 0.35},
                      {"population_offset", 0.2}};
  return doc;
}

Json base_run_doc(const std::string& data_dir, const std::string& out,
                  bool with_selected = true) {
  Json doc;
  doc["out"] = out;
  doc["seed"] = 4242;
  Json data;
  data["views"] = Json{{"dxa", data_dir + "/dxa.csv"}, {"clinical", data_dir + "/clinical.csv"}};
  data["phenotype"] = data_dir + "/phenotype.csv";
  data["genotypes"] = data_dir + "/genotypes.csv";
  data["covariates"] = data_dir + "/covariates.csv";
  if (with_selected) data["selected_snps"] = data_dir + "/selected_snps.txt";
  doc["data"] = std::move(data);
  doc["gwas"] = Json{{"threshold", 1e-5}, {"num_pcs", 2}};
  doc["model"] = Json{{"latent_dim", 6},
                      {"encoder_hidden", Json::array({12})},
                      {"decoder_hidden", Json::array({12})},
                      {"kl_weight", 0.25}};
  doc["train"] = Json{{"epochs", 20}, {"batch_size", 32}, {"learning_rate", 0.002}};
  return doc;
}

}  // namespace

TEST(CmdSynthTest, WritesAllFilesAndReloads) {
  CliDir dir;
  const std::string out = dir.path("cohort");
  const RunConfig cfg = parse_run_config(base_synth_doc(out));
  ASSERT_EQ(cmd_synth(cfg), kExitOk);

  for (const char* name : {"dxa.csv", "clinical.csv", "genotypes.csv", "phenotype.csv",
                           "covariates.csv", "truth.json", "effective_config.json"}) {
    EXPECT_TRUE(fs::exists(fs::path(out) / name)) << name;
  }
  const CsvTable pheno = read_csv(out + "/phenotype.csv");
  EXPECT_EQ(pheno.rows.size(), 400u);

  // Round trip through the dataset loader.
  const MultiViewDataset ds = load_dataset(
      {{"dxa", out + "/dxa.csv"}, {"clinical", out + "/clinical.csv"}}, out + "/phenotype.csv");
  EXPECT_EQ(ds.n_subjects(), 400);
  EXPECT_TRUE(ds.presence.all());

  const Json truth = Json::parse(slurp(out + "/truth.json"));
  EXPECT_EQ(truth.at("causal_snps").size(), 4u);
  EXPECT_EQ(truth.at("ld_blocks").size(), 4u);
}

TEST(CmdSynthTest, RerunIsByteIdentical) {
  CliDir dir;
  const std::string out = dir.path("cohort");
  const RunConfig cfg = parse_run_config(base_synth_doc(out));
  ASSERT_EQ(cmd_synth(cfg), kExitOk);
  const auto first = snapshot(out);
  ASSERT_EQ(cmd_synth(cfg), kExitOk);
  EXPECT_EQ(first, snapshot(out));

  const std::string out2 = dir.path("cohort2");
  Json doc = base_synth_doc(out2);
  doc["seed"] = 4243;
  ASSERT_EQ(cmd_synth(parse_run_config(doc)), kExitOk);
  EXPECT_NE(slurp(out + "/phenotype.csv"), slurp(out2 + "/phenotype.csv"));
}

namespace {

// One shared synthetic cohort + GWAS selection reused by the heavier tests.
class CliPipelineTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new CliDir();
    data_dir_ = dir_->path("data");
    const RunConfig synth_cfg = parse_run_config(base_synth_doc(data_dir_));
    ASSERT_EQ(cmd_synth(synth_cfg), kExitOk);
    const RunConfig gwas_cfg = parse_run_config(base_run_doc(data_dir_, data_dir_, false));
    ASSERT_EQ(cmd_gwas(gwas_cfg), kExitOk);
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static inline CliDir* dir_ = nullptr;
  static inline std::string data_dir_;
};

}  // namespace

TEST_F(CliPipelineTest, GwasSelectsCausalSnpsAndIsIdempotent) {
  const Json truth = Json::parse(slurp(data_dir_ + "/truth.json"));
  const auto causal = truth.at("causal_snps").get<std::vector<std::string>>();
  const auto selected = detail::read_id_lines(data_dir_ + "/selected_snps.txt");
  ASSERT_FALSE(selected.empty());
  for (const auto& id : causal) {
    EXPECT_NE(std::find(selected.begin(), selected.end(), id), selected.end())
        << "causal SNP " << id << " not selected";
  }

  // Rerun into a second directory: identical bytes for the GWAS artifacts.
  const std::string out2 = dir_->path("gwas2");
  RunConfig cfg = parse_run_config(base_run_doc(data_dir_, out2, false));
  ASSERT_EQ(cmd_gwas(cfg), kExitOk);
  EXPECT_EQ(slurp(data_dir_ + "/gwas_results.csv"), slurp(out2 + "/gwas_results.csv"));
  EXPECT_EQ(slurp(data_dir_ + "/selected_snps.txt"), slurp(out2 + "/selected_snps.txt"));
}

TEST_F(CliPipelineTest, PermutedPhenotypeSelectsNothing) {
  const std::string out = dir_->path("gwas_null");
  Json doc = base_run_doc(data_dir_, out, false);
  doc["gwas"]["permute_phenotype"] = true;
  ASSERT_EQ(cmd_gwas(parse_run_config(doc)), kExitOk);
  EXPECT_TRUE(detail::read_id_lines(out + "/selected_snps.txt").empty());
}

TEST_F(CliPipelineTest, TrainWritesArtifactsAndEvalReproducesMetrics) {
  const std::string out = dir_->path("train1");
  const RunConfig cfg = parse_run_config(base_run_doc(data_dir_, out));
  ASSERT_EQ(cmd_train(cfg), kExitOk);
  for (const char* name : {"model.ckpt", "scale_params.json", "split_manifest.json",
                           "history.csv", "metrics.json", "metrics.csv"}) {
    EXPECT_TRUE(fs::exists(fs::path(out) / name)) << name;
  }
  const CsvTable history = read_csv(out + "/history.csv");
  EXPECT_EQ(history.rows.size(), 20u);

  // Checkpoint reload + eval reproduces the recorded test metrics exactly.
  ASSERT_EQ(cmd_eval(cfg, out + "/model.ckpt", {}), kExitOk);
  const Json recorded = Json::parse(slurp(out + "/metrics.json"));
  const Json evaled = Json::parse(slurp(out + "/eval_metrics.json"));
  for (const char* key : {"mae", "mape", "rmse", "r2"}) {
    EXPECT_EQ(recorded.at("test").at(key).get<double>(), evaled.at(key).get<double>()) << key;
  }

  // Train-split evaluation is supported via the manifest.
  ASSERT_EQ(cmd_eval(cfg, out + "/model.ckpt", {}, "train"), kExitOk);
  const Json train_eval = Json::parse(slurp(out + "/eval_metrics.json"));
  for (const char* key : {"mae", "mape", "rmse", "r2"}) {
    EXPECT_EQ(recorded.at("train").at(key).get<double>(), train_eval.at(key).get<double>());
  }
}

TEST_F(CliPipelineTest, TrainRerunByteIdentical) {
  const std::string out_a = dir_->path("train_a");
  const std::string out_b = dir_->path("train_b");
  ASSERT_EQ(cmd_train(parse_run_config(base_run_doc(data_dir_, out_a))), kExitOk);
  ASSERT_EQ(cmd_train(parse_run_config(base_run_doc(data_dir_, out_b))), kExitOk);
  for (const char* name : {"model.ckpt", "scale_params.json", "split_manifest.json",
                           "history.csv", "metrics.json", "metrics.csv"}) {
    EXPECT_EQ(slurp(out_a + "/" + name), slurp(out_b + "/" + name)) << name;
  }
}

// Training never reads test-split phenotype values: corrupting them changes
// the recorded test metrics but neither the checkpoint nor the history.
TEST_F(CliPipelineTest, TrainingNeverReadsTestPhenotype) {
  const std::string out_a = dir_->path("audit_a");
  ASSERT_EQ(cmd_train(parse_run_config(base_run_doc(data_dir_, out_a))), kExitOk);
  const Json manifest = Json::parse(slurp(out_a + "/split_manifest.json"));
  const auto test_ids = manifest.at("test").get<std::vector<std::string>>();

  // Copy the data directory with test-subject phenotypes shifted by +1000.
  const std::string data2 = dir_->path("data_corrupt");
  fs::create_directories(data2);
  for (const auto& entry : fs::directory_iterator(data_dir_)) {
    if (entry.is_regular_file()) fs::copy_file(entry.path(), fs::path(data2) / entry.path().filename());
  }
  {
    const CsvTable pheno = read_csv(data_dir_ + "/phenotype.csv");
    std::vector<std::string> lines = {"subject_id,value"};
    for (const auto& row : pheno.rows) {
      const bool in_test =
          std::find(test_ids.begin(), test_ids.end(), row[0]) != test_ids.end();
      const double v = parse_double(row[1], "pheno");
      lines.push_back(row[0] + "," + format_double(in_test ? v + 1000.0 : v));
    }
    write_lines(data2 + "/phenotype.csv", lines);
  }

  const std::string out_b = dir_->path("audit_b");
  ASSERT_EQ(cmd_train(parse_run_config(base_run_doc(data2, out_b))), kExitOk);
  EXPECT_EQ(slurp(out_a + "/model.ckpt"), slurp(out_b + "/model.ckpt"));
  EXPECT_EQ(slurp(out_a + "/history.csv"), slurp(out_b + "/history.csv"));
  const Json ma = Json::parse(slurp(out_a + "/metrics.json"));
  const Json mb = Json::parse(slurp(out_b + "/metrics.json"));
  EXPECT_EQ(ma.at("train"), mb.at("train"));
  EXPECT_NE(ma.at("test").at("mae").get<double>(), mb.at("test").at("mae").get<double>());
}

TEST_F(CliPipelineTest, EvalDropEachViewStaysFinite) {
  const std::string out = dir_->path("train_drop");
  const RunConfig cfg = parse_run_config(base_run_doc(data_dir_, out));
  ASSERT_EQ(cmd_train(cfg), kExitOk);
  for (const std::string view : {"wgs", "dxa", "clinical"}) {
    ASSERT_EQ(cmd_eval(cfg, out + "/model.ckpt", {view}), kExitOk) << view;
    const Json m = Json::parse(slurp(out + "/eval_metrics.json"));
    for (const char* key : {"mae", "mape", "rmse", "r2"}) {
      ASSERT_TRUE(m.contains(key));
      EXPECT_TRUE(std::isfinite(m.at(key).get<double>())) << view << " " << key;
    }
    EXPECT_EQ(m.at("dropped_views").get<std::vector<std::string>>(),
              std::vector<std::string>{view});
    EXPECT_EQ(m.at("split").get<std::string>(), "test");
    EXPECT_GT(m.at("n_subjects").get<long>(), 0);
  }
  EXPECT_THROW(cmd_eval(cfg, out + "/model.ckpt", {"nonexistent"}), DataError);
}

TEST_F(CliPipelineTest, PredictWritesPredictionsForAllSubjects) {
  const std::string out = dir_->path("train_pred");
  const RunConfig cfg = parse_run_config(base_run_doc(data_dir_, out));
  ASSERT_EQ(cmd_train(cfg), kExitOk);
  ASSERT_EQ(cmd_predict(cfg, out + "/model.ckpt"), kExitOk);
  const CsvTable pred = read_csv(out + "/predictions.csv");
  EXPECT_EQ(pred.rows.size(), 400u);
  EXPECT_EQ(pred.header, (std::vector<std::string>{"subject_id", "prediction"}));
  for (const auto& row : pred.rows) {
    EXPECT_TRUE(std::isfinite(parse_double(row[1], "prediction")));
  }
}

TEST_F(CliPipelineTest, GridSinglePointAndSortedTable) {
  // Single view + single grid point: exactly one row.
  const std::string out1 = dir_->path("grid1");
  Json doc = base_run_doc(data_dir_, out1, false);
  doc["data"].erase("views");
  doc["data"]["views"] = Json{{"dxa", data_dir_ + "/dxa.csv"}};
  doc["train"]["epochs"] = 4;
  doc["grid"] = Json{{"layers", Json::array({2})},
                     {"latent", Json::array({2})},
                     {"hidden", Json::array({8})}};
  ASSERT_EQ(cmd_grid(parse_run_config(doc)), kExitOk);
  const CsvTable table1 = read_csv(out1 + "/grid_results.csv");
  EXPECT_EQ(table1.rows.size(), 1u);

  // Two views -> three subsets; r2 column nonincreasing among ok rows.
  const std::string out2 = dir_->path("grid2");
  Json doc2 = base_run_doc(data_dir_, out2, false);
  doc2["train"]["epochs"] = 4;
  doc2["grid"] = Json{{"layers", Json::array({2})},
                      {"latent", Json::array({2, 4})},
                      {"hidden", Json::array({8})}};
  ASSERT_EQ(cmd_grid(parse_run_config(doc2)), kExitOk);
  const CsvTable table2 = read_csv(out2 + "/grid_results.csv");
  EXPECT_EQ(table2.rows.size(), 6u);
  const auto col = [&](const std::string& name) {
    for (std::size_t j = 0; j < table2.header.size(); ++j)
      if (table2.header[j] == name) return j;
    ADD_FAILURE() << "missing column " << name;
    return std::size_t{0};
  };
  const std::size_t r2_col = col("r2");
  const std::size_t ok_col = col("ok");
  double prev = std::numeric_limits<double>::infinity();
  for (const auto& row : table2.rows) {
    if (row[ok_col] != "1") continue;
    const double r2 = parse_double(row[r2_col], "r2");
    EXPECT_LE(r2, prev + 1e-15);
    prev = r2;
  }
  // JSON document mirrors the table.
  const Json grid_json = Json::parse(slurp(out2 + "/grid_results.json"));
  EXPECT_EQ(grid_json.at("runs").size(), 6u);
  EXPECT_TRUE(grid_json.at("runs").at(0).contains("config"));
  EXPECT_TRUE(grid_json.at("runs").at(0).contains("metrics"));
}

TEST(CliBinaryTest, ExitCodes) {
  const std::string cli = MVFUSE_CLI;
  // Usage error: unknown subcommand.
  EXPECT_NE(std::system((cli + " frobnicate > /dev/null 2>&1").c_str()), 0);
  // Config error: missing config file -> exit 1.
  int rc = std::system((cli + " synth --config /nonexistent.json > /dev/null 2>&1").c_str());
  EXPECT_EQ(WEXITSTATUS(rc), kExitConfig);
  // Data error: gwas without inputs -> exit 1 (config) or 2 (data).
  rc = std::system((cli + " gwas > /dev/null 2>&1").c_str());
  EXPECT_EQ(WEXITSTATUS(rc), kExitConfig);
}

TEST(RunConfigTest, DefaultsAndOverrides) {
  const RunConfig cfg = parse_run_config(Json::object());
  EXPECT_EQ(cfg.out, "out");
  EXPECT_EQ(cfg.latent_dim, 8);
  EXPECT_EQ(cfg.gwas_threshold, 1e-5);
  EXPECT_EQ(cfg.qc.snp_missing_max, 0.05);
  EXPECT_EQ(cfg.qc.indiv_missing_max, 0.20);
  EXPECT_EQ(cfg.qc.maf_min, 0.01);
  EXPECT_EQ(cfg.qc.hwe_p_min, 1e-4);
  EXPECT_EQ(cfg.test_fraction, 0.2);
  EXPECT_EQ(cfg.adam.learning_rate, 1e-3);
  EXPECT_EQ(cfg.grid.layers, (std::vector<int>{2, 3, 4, 5}));
  EXPECT_EQ(cfg.grid.latent_dims, (std::vector<int>{2, 8, 32}));
  EXPECT_EQ(cfg.grid.hidden_units, (std::vector<int>{3, 16, 32, 128}));

  Json doc;
  doc["qc"] = Json{{"maf_min", 0.05}};
  doc["gwas"] = Json{{"threshold", 1e-6}};
  const RunConfig cfg2 = parse_run_config(doc);
  EXPECT_EQ(cfg2.qc.maf_min, 0.05);
  EXPECT_EQ(cfg2.gwas_threshold, 1e-6);

  Json bad;
  bad["model"] = Json{{"latent_dim", "not a number"}};
  EXPECT_THROW(parse_run_config(bad), ConfigError);
}
