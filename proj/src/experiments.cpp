#include "aifml/experiments.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

namespace aifml::experiments {

namespace {

std::string num(double v) { return nlohmann::json(v).dump(); }

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ExperimentError("cannot write " + path);
  out << text;
}

void check_experiment(int experiment) {
  if (experiment < 1 || experiment > 4) {
    throw ExperimentError("experiment must be 1..4, got " + std::to_string(experiment));
  }
}

std::string architecture_name(const dnn::NetworkSpec& spec) {
  std::string s;
  for (int w : spec.hidden_widths) {
    if (!s.empty()) s += "/";
    s += std::to_string(w);
  }
  return s;
}

}  // namespace

records::Grouping grouping_for(int experiment) {
  check_experiment(experiment);
  return experiment <= 2 ? records::Grouping::none : records::Grouping::by_date_grade_school;
}

records::FeatureSet feature_set_for(int experiment) {
  check_experiment(experiment);
  return experiment <= 2 ? records::FeatureSet::seven : records::FeatureSet::nine;
}

Prepared prepare(const records::Dataset& raw, int experiment, double fence) {
  check_experiment(experiment);
  Prepared p;
  records::Dataset filled = records::impute_nulls(raw);
  records::OutlierSummary trimmed = records::remove_outliers(filled, fence);
  p.outliers_removed = trimmed.removed;
  p.dataset = records::standardize(trimmed.dataset, grouping_for(experiment));
  p.matrix = records::to_matrix(p.dataset, feature_set_for(experiment));
  return p;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  return run_experiment_on(records::read_csv_file(cfg.data_path), cfg);
}

ExperimentResult run_experiment_on(const records::Dataset& raw, const ExperimentConfig& cfg) {
  check_experiment(cfg.experiment);
  Prepared prep = prepare(raw, cfg.experiment, cfg.fence);

  auto [train_ds, test_ds] = records::split(prep.dataset, cfg.test_fraction, cfg.seed);
  if (train_ds.records.empty() || test_ds.records.empty()) {
    throw ExperimentError("dataset too small to split into train and test");
  }
  const records::FeatureSet fs = feature_set_for(cfg.experiment);
  records::FeatureMatrix train_m = records::to_matrix(train_ds, fs);
  records::FeatureMatrix test_m = records::to_matrix(test_ds, fs);

  dnn::NetworkSpec spec = dnn::NetworkSpec::experiment_preset(cfg.experiment);
  spec.epochs = cfg.epochs;
  if (cfg.dropout) spec.dropout_rate = *cfg.dropout;
  if (cfg.learning_rate) spec.adam.lr = *cfg.learning_rate;

  ExperimentResult result;
  result.experiment = cfg.experiment;
  auto [model, trace] = dnn::train(spec, train_m, cfg.seed);
  result.model = std::move(model);
  result.trace = std::move(trace);
  result.test_loss = dnn::evaluate(result.model, test_m);
  result.trace.test_loss = result.test_loss;
  result.n_train = train_m.rows.size();
  result.n_test = test_m.rows.size();

  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  for (std::size_t i = 0; i < result.trace.epochs.size(); ++i) {
    if (result.trace.epochs[i].validation_loss < best_val) {
      best_val = result.trace.epochs[i].validation_loss;
      best_epoch = static_cast<int>(i) + 1;
    }
  }

  nlohmann::json m;
  m["experiment"] = cfg.experiment;
  m["architecture"] = architecture_name(spec);
  m["features"] = train_m.feature_names;
  m["n_features"] = train_m.feature_names.size();
  m["n_rows"] = prep.dataset.records.size();
  m["outliers_removed"] = prep.outliers_removed;
  m["n_train"] = result.n_train;
  m["n_test"] = result.n_test;
  m["seed"] = cfg.seed;
  m["epochs"] = cfg.epochs;
  m["fence"] = cfg.fence;
  m["dropout"] = spec.dropout_rate;
  m["learning_rate"] = spec.adam.lr;
  if (!result.trace.epochs.empty()) {
    m["final_train_loss"] = result.trace.epochs.back().train_loss;
    m["final_validation_loss"] = result.trace.epochs.back().validation_loss;
    m["best_validation_loss"] = best_val;
    m["best_epoch"] = best_epoch;
  }
  m["test_loss"] = result.test_loss;
  result.metrics = std::move(m);

  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    records::write_csv_file(prep.dataset, cfg.out_dir + "/preprocessed.csv");
    dnn::save_checkpoint(result.model, cfg.out_dir + "/model.json");
    write_text_file(cfg.out_dir + "/trace.csv", trace_to_csv(result.trace));
    write_text_file(cfg.out_dir + "/metrics.json", result.metrics.dump(2) + "\n");
    if (cfg.write_svg) {
      write_text_file(cfg.out_dir + "/loss.svg", loss_curve_svg(result.trace));
    }
  }
  return result;
}

nlohmann::json run_all(const ExperimentConfig& base) {
  records::Dataset raw = records::read_csv_file(base.data_path);

  std::vector<nlohmann::json> rows;
  for (int exp = 1; exp <= 4; ++exp) {
    ExperimentConfig cfg = base;
    cfg.experiment = exp;
    if (!base.out_dir.empty()) cfg.out_dir = base.out_dir + "/exp" + std::to_string(exp);
    ExperimentResult r = run_experiment_on(raw, cfg);
    nlohmann::json row;
    row["experiment"] = exp;
    row["architecture"] = r.metrics.at("architecture");
    row["n_features"] = r.metrics.at("n_features");
    row["final_train_loss"] = r.metrics.at("final_train_loss");
    row["final_validation_loss"] = r.metrics.at("final_validation_loss");
    row["test_loss"] = r.test_loss;
    rows.push_back(std::move(row));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const nlohmann::json& a, const nlohmann::json& b) {
    return a.at("test_loss").get<double>() < b.at("test_loss").get<double>();
  });

  std::ostringstream csv;
  csv << "rank,experiment,architecture,n_features,final_train_loss,final_validation_loss,test_loss\n";
  nlohmann::json ranked = nlohmann::json::array();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i]["rank"] = i + 1;
    csv << (i + 1) << ',' << rows[i].at("experiment").get<int>() << ','
        << rows[i].at("architecture").get<std::string>() << ','
        << rows[i].at("n_features").get<std::size_t>() << ','
        << num(rows[i].at("final_train_loss").get<double>()) << ','
        << num(rows[i].at("final_validation_loss").get<double>()) << ','
        << num(rows[i].at("test_loss").get<double>()) << '\n';
    ranked.push_back(rows[i]);
  }
  if (!base.out_dir.empty()) {
    std::filesystem::create_directories(base.out_dir);
    write_text_file(base.out_dir + "/comparison.csv", csv.str());
  }
  return ranked;
}

std::string trace_to_csv(const dnn::TrainTrace& trace) {
  std::ostringstream out;
  out << "epoch,train_loss,validation_loss\n";
  for (std::size_t i = 0; i < trace.epochs.size(); ++i) {
    out << (i + 1) << ',' << num(trace.epochs[i].train_loss) << ','
        << num(trace.epochs[i].validation_loss) << '\n';
  }
  return out.str();
}

std::string loss_curve_svg(const dnn::TrainTrace& trace) {
  const int width = 640, height = 320, pad = 40;
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  const std::size_t n = trace.epochs.size();
  if (n >= 1) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& e : trace.epochs) {
      lo = std::min({lo, e.train_loss, e.validation_loss});
      hi = std::max({hi, e.train_loss, e.validation_loss});
    }
    if (hi <= lo) hi = lo + 1.0;
    auto px = [&](std::size_t i) {
      return n == 1 ? width / 2.0 : pad + (width - 2.0 * pad) * i / (n - 1);
    };
    auto py = [&](double v) { return height - pad - (height - 2.0 * pad) * (v - lo) / (hi - lo); };
    auto polyline = [&](const char* color, bool validation) {
      out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < n; ++i) {
        const auto& e = trace.epochs[i];
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(i),
                      py(validation ? e.validation_loss : e.train_loss));
        out << buf;
      }
      out << "\"/>\n";
    };
    polyline("#1f77b4", false);
    polyline("#d62728", true);
    char label[128];
    std::snprintf(label, sizeof label, "loss %.6g .. %.6g over %zu epochs", lo, hi, n);
    out << "<text x=\"" << pad << "\" y=\"20\" font-family=\"monospace\" font-size=\"12\">" << label
        << "</text>\n";
    out << "<text x=\"" << pad << "\" y=\"" << height - 8
        << "\" font-family=\"monospace\" font-size=\"12\">train: blue, validation: red</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace aifml::experiments
