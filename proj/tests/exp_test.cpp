#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "aifml/dnn.hpp"
#include "aifml/experiments.hpp"
#include "aifml/records.hpp"
#include "aifml/sim.hpp"

using namespace aifml::experiments;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("aifml_exp_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string cohort_csv(int students, std::uint64_t seed, const std::string& name) {
  aifml::sim::CohortResult r = aifml::sim::generate_cohort(students, seed);
  fs::path p = scratch_dir(name) / "cohort.csv";
  aifml::records::write_csv_file(r.dataset, p.string());
  return p.string();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("grouping and feature width follow the experiment number") {
  using aifml::records::FeatureSet;
  using aifml::records::Grouping;
  CHECK(grouping_for(1) == Grouping::none);
  CHECK(grouping_for(2) == Grouping::none);
  CHECK(grouping_for(3) == Grouping::by_date_grade_school);
  CHECK(grouping_for(4) == Grouping::by_date_grade_school);
  CHECK(feature_set_for(1) == FeatureSet::seven);
  CHECK(feature_set_for(4) == FeatureSet::nine);
  CHECK_THROWS_AS(grouping_for(0), ExperimentError);
  CHECK_THROWS_AS(feature_set_for(5), ExperimentError);
}

TEST_CASE("prepare standardizes and shapes the matrix per experiment") {
  aifml::sim::CohortResult r = aifml::sim::generate_cohort(80, 3);

  Prepared p1 = prepare(r.dataset, 1);
  REQUIRE_FALSE(p1.matrix.rows.empty());
  CHECK(p1.matrix.rows[0].size() == 7);
  CHECK(p1.matrix.feature_names ==
        std::vector<std::string>{"x1", "x4", "x5", "x6", "x7", "x8", "x9"});
  CHECK(p1.matrix.labels.size() == p1.matrix.rows.size());

  Prepared p3 = prepare(r.dataset, 3);
  REQUIRE_FALSE(p3.matrix.rows.empty());
  CHECK(p3.matrix.rows[0].size() == 9);
  CHECK(p3.matrix.feature_names ==
        std::vector<std::string>{"x1", "x2", "x3", "x4", "x5", "x6", "x7", "x8", "x9"});

  for (const auto& rec : p1.dataset.records) {
    for (const auto* v : {&rec.x4, &rec.x5, &rec.x6, &rec.x7, &rec.x8, &rec.x9}) {
      REQUIRE(v->has_value());
      CHECK(**v >= 0.0);
      CHECK(**v <= 1.0);
    }
  }
}

TEST_CASE("an experiment run writes the full report directory") {
  ExperimentConfig cfg;
  cfg.experiment = 2;
  cfg.data_path = cohort_csv(300, 7, "report_cohort");
  cfg.out_dir = (scratch_dir("report_out") / "exp2").string();
  cfg.epochs = 5;
  cfg.seed = 7;

  ExperimentResult r = run_experiment(cfg);
  CHECK(r.trace.epochs.size() == 5);
  CHECK(std::isfinite(r.test_loss));

  for (const char* f : {"preprocessed.csv", "model.json", "trace.csv", "metrics.json", "loss.svg"}) {
    CHECK(fs::exists(fs::path(cfg.out_dir) / f));
  }

  nlohmann::json m = nlohmann::json::parse(slurp(fs::path(cfg.out_dir) / "metrics.json"));
  CHECK(m.at("experiment") == 2);
  CHECK(m.at("architecture") == "21/512/512/3");
  CHECK(m.at("n_features") == 7);
  CHECK(std::isfinite(m.at("final_train_loss").get<double>()));
  CHECK(std::isfinite(m.at("final_validation_loss").get<double>()));
  CHECK(std::isfinite(m.at("test_loss").get<double>()));
  CHECK(m.at("n_train").get<int>() + m.at("n_test").get<int>() == m.at("n_rows").get<int>());

  const std::string trace = slurp(fs::path(cfg.out_dir) / "trace.csv");
  CHECK(count_lines(trace) == 6);
  CHECK(trace.rfind("epoch,train_loss,validation_loss\n", 0) == 0);

  aifml::dnn::Mlp net = aifml::dnn::load_checkpoint((fs::path(cfg.out_dir) / "model.json").string());
  Prepared prep = prepare(aifml::records::read_csv_file(cfg.data_path), 2);
  CHECK(std::isfinite(aifml::dnn::predict(net, prep.matrix.rows[0])));

  const std::string svg = slurp(fs::path(cfg.out_dir) / "loss.svg");
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("polyline") != std::string::npos);
}

TEST_CASE("the same config writes identical metrics twice") {
  const std::string data = cohort_csv(150, 9, "repeat_cohort");
  ExperimentConfig cfg;
  cfg.experiment = 3;
  cfg.data_path = data;
  cfg.epochs = 3;
  cfg.seed = 11;

  cfg.out_dir = (scratch_dir("repeat_a") / "exp3").string();
  run_experiment(cfg);
  const std::string first_metrics = slurp(fs::path(cfg.out_dir) / "metrics.json");
  const std::string first_trace = slurp(fs::path(cfg.out_dir) / "trace.csv");

  cfg.out_dir = (scratch_dir("repeat_b") / "exp3").string();
  run_experiment(cfg);
  CHECK(slurp(fs::path(cfg.out_dir) / "metrics.json") == first_metrics);
  CHECK(slurp(fs::path(cfg.out_dir) / "trace.csv") == first_trace);

  nlohmann::json m = nlohmann::json::parse(first_metrics);
  CHECK(m.at("n_features") == 9);
  CHECK(m.at("features").size() == 9);
  CHECK(m.at("features")[1] == "x2");
}

TEST_CASE("run_all ranks the four presets on one cohort") {
  ExperimentConfig base;
  base.data_path = cohort_csv(150, 21, "all_cohort");
  base.out_dir = scratch_dir("all_out").string();
  base.epochs = 2;
  base.seed = 5;
  base.write_svg = false;

  nlohmann::json ranked = run_all(base);
  REQUIRE(ranked.size() == 4);

  std::set<std::string> archs;
  std::set<int> exps;
  double prev = -1;
  for (std::size_t i = 0; i < 4; ++i) {
    const nlohmann::json& row = ranked[i];
    CHECK(row.at("rank") == i + 1);
    archs.insert(row.at("architecture").get<std::string>());
    exps.insert(row.at("experiment").get<int>());
    const double loss = row.at("test_loss").get<double>();
    CHECK(loss >= prev);
    prev = loss;
  }
  CHECK(archs == std::set<std::string>{"21/64/512/64/10", "21/512/512/3", "27/64/512/64/10",
                                       "27/512/512/3"});
  CHECK(exps == std::set<int>{1, 2, 3, 4});

  const std::string csv = slurp(fs::path(base.out_dir) / "comparison.csv");
  CHECK(count_lines(csv) == 5);
  for (int e = 1; e <= 4; ++e) {
    CHECK(fs::exists(fs::path(base.out_dir) / ("exp" + std::to_string(e)) / "metrics.json"));
  }

  nlohmann::json again = run_all(base);
  CHECK(again.dump() == ranked.dump());
}

TEST_CASE("a missing data file raises one error") {
  ExperimentConfig base;
  base.data_path = "/nonexistent/cohort.csv";
  CHECK_THROWS(run_all(base));
  CHECK_THROWS(run_experiment(base));
}

TEST_CASE("trace rows serialize one epoch per line") {
  aifml::dnn::TrainTrace t;
  t.epochs = {{0.5, 0.25}, {0.125, 0.0625}};
  CHECK(trace_to_csv(t) == "epoch,train_loss,validation_loss\n1,0.5,0.25\n2,0.125,0.0625\n");
  CHECK(loss_curve_svg(t).find("<svg") == 0);
  aifml::dnn::TrainTrace empty;
  CHECK(loss_curve_svg(empty).find("</svg>") != std::string::npos);
}
