#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "aifml/dnn.hpp"
#include "aifml/records.hpp"

namespace aifml::experiments {

struct ExperimentError : std::runtime_error {
  explicit ExperimentError(const std::string& what) : std::runtime_error(what) {}
};

struct ExperimentConfig {
  int experiment = 2;
  std::string data_path;
  std::string out_dir;  // empty runs in memory without writing artifacts
  std::uint64_t seed = 7;
  int epochs = 100;
  double test_fraction = 0.3;
  double fence = 1.9;
  std::optional<double> dropout;
  std::optional<double> learning_rate;
  bool write_svg = true;
};

// Experiments 1 and 2 read the seven-feature slice with global scaling;
// experiments 3 and 4 read all nine features scaled within each
// (date, grade, school) group.
records::Grouping grouping_for(int experiment);
records::FeatureSet feature_set_for(int experiment);

struct Prepared {
  records::Dataset dataset;
  records::FeatureMatrix matrix;
  std::size_t outliers_removed = 0;
};

Prepared prepare(const records::Dataset& raw, int experiment, double fence = 1.9);

struct ExperimentResult {
  int experiment = 0;
  dnn::Mlp model;
  dnn::TrainTrace trace;
  double test_loss = 0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  nlohmann::json metrics;
};

ExperimentResult run_experiment(const ExperimentConfig& cfg);
ExperimentResult run_experiment_on(const records::Dataset& raw, const ExperimentConfig& cfg);

// Runs all four presets on one data file and seed, writes per-experiment
// report directories plus a ranked comparison.csv, and returns the ranked
// rows as JSON.
nlohmann::json run_all(const ExperimentConfig& base);

std::string trace_to_csv(const dnn::TrainTrace& trace);
std::string loss_curve_svg(const dnn::TrainTrace& trace);

}  // namespace aifml::experiments
