#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "aifml/behavior.hpp"
#include "aifml/bus.hpp"
#include "aifml/dnn.hpp"
#include "aifml/experiments.hpp"
#include "aifml/fml.hpp"
#include "aifml/records.hpp"
#include "aifml/sim.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::atomic<bool> g_stop_requested{false};

void request_stop(int) { g_stop_requested = true; }

std::string default_address() {
  if (const char* env = std::getenv("AIFML_ADDR"); env && *env) return env;
  return "127.0.0.1:8871";
}

std::map<std::string, double> parse_inputs(const std::vector<std::string>& pairs) {
  std::map<std::string, double> inputs;
  for (const std::string& p : pairs) {
    const std::size_t eq = p.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw CLI::ValidationError("--in", "expected var=value, got '" + p + "'");
    }
    std::size_t used = 0;
    double value = 0;
    try {
      value = std::stod(p.substr(eq + 1), &used);
    } catch (const std::exception&) {
      throw CLI::ValidationError("--in", "'" + p.substr(eq + 1) + "' is not a number");
    }
    if (used != p.size() - eq - 1) {
      throw CLI::ValidationError("--in", "'" + p.substr(eq + 1) + "' is not a number");
    }
    inputs[p.substr(0, eq)] = value;
  }
  return inputs;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

std::vector<aifml::behavior::IrtResponse> read_responses(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open responses file " + path);
  std::string line;
  if (!std::getline(in, line) || split_fields(line) != std::vector<std::string>{"item", "difficulty", "correct"}) {
    throw std::runtime_error("responses CSV must have header item,difficulty,correct");
  }
  std::vector<aifml::behavior::IrtResponse> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 3) throw std::runtime_error("bad responses row: " + line);
    aifml::behavior::IrtResponse r;
    r.item = f[0];
    r.difficulty = std::stod(f[1]);
    if (f[2] == "1" || f[2] == "true") {
      r.correct = true;
    } else if (f[2] == "0" || f[2] == "false") {
      r.correct = false;
    } else {
      throw std::runtime_error("correct must be 0/1/true/false, got " + f[2]);
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<aifml::behavior::IrtItem> read_items(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open items file " + path);
  std::string line;
  if (!std::getline(in, line) || split_fields(line) != std::vector<std::string>{"id", "difficulty", "level"}) {
    throw std::runtime_error("items CSV must have header id,difficulty,level");
  }
  std::vector<aifml::behavior::IrtItem> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 3) throw std::runtime_error("bad items row: " + line);
    aifml::behavior::IrtItem item;
    item.id = f[0];
    item.difficulty = std::stod(f[1]);
    item.level = std::stoi(f[2]);
    rows.push_back(std::move(item));
  }
  return rows;
}

// Grouping and feature width both follow the checkpoint's input width:
// seven-feature models pair with global scaling, nine-feature models
// with per-(date, grade, school) scaling.
int experiment_for_width(int input_width) {
  if (input_width == 7) return 2;
  if (input_width == 9) return 4;
  throw std::runtime_error("model input width " + std::to_string(input_width) +
                           " matches no known preset");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AI-FML learning companion toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "read option defaults from an INI/TOML file");
  std::uint64_t seed = 7;
  app.add_option("--seed", seed, "seed for every random choice")->capture_default_str();

  const auto sub = [&](CLI::App* parent, const std::string& name, const std::string& desc) {
    CLI::App* cmd = parent->add_subcommand(name, desc);
    cmd->fallthrough();
    return cmd;
  };

  // ---------------- fml ----------------
  CLI::App* fml = sub(&app, "fml", "fuzzy markup language tools");
  fml->require_subcommand(1);

  std::string fml_file;
  CLI::App* fml_check = sub(fml, "check", "parse and validate an FML document");
  fml_check->add_option("file", fml_file, "FML document")->required()->check(CLI::ExistingFile);
  fml_check->callback([&] {
    const aifml::fml::FmlDocument doc = aifml::fml::load_fml_file(fml_file);
    json out;
    out["name"] = doc.name;
    out["variables"] = doc.variables.size();
    out["rules"] = doc.rules.size();
    out["output_variable"] = doc.output_variable().name;
    std::cout << out.dump() << "\n";
  });

  std::string infer_file;
  std::vector<std::string> infer_inputs;
  CLI::App* fml_infer = sub(fml, "infer", "run Mamdani inference on an FML document");
  fml_infer->add_option("file", infer_file, "FML document")->required()->check(CLI::ExistingFile);
  fml_infer->add_option("--in", infer_inputs, "input assignment var=value (repeatable)");
  fml_infer->callback([&] {
    const aifml::fml::FmlDocument doc = aifml::fml::load_fml_file(infer_file);
    const aifml::fml::InferenceResult r = aifml::fml::infer(doc, parse_inputs(infer_inputs));
    json out;
    out["variable"] = doc.output_variable().name;
    out["value"] = r.value;
    out["no_rule_fired"] = r.no_rule_fired;
    std::cout << out.dump() << "\n";
  });

  // ---------------- data ----------------
  CLI::App* data = sub(&app, "data", "learning-record preprocessing and reports");
  data->require_subcommand(1);

  std::string pre_in, pre_out;
  bool group_std = false;
  double pre_fence = 1.9;
  CLI::App* preprocess = sub(data, "preprocess", "impute, trim outliers, and standardize");
  preprocess->add_option("input", pre_in, "learning-record CSV")->required()->check(CLI::ExistingFile);
  preprocess->add_option("-o,--out", pre_out, "output CSV (stdout when omitted)");
  preprocess->add_flag("--group-std", group_std, "scale within (date, grade, school) groups");
  preprocess->add_option("--fence", pre_fence, "IQR fence multiplier")->capture_default_str();
  preprocess->callback([&] {
    using namespace aifml::records;
    const Dataset raw = read_csv_file(pre_in);
    const Dataset filled = impute_nulls(raw);
    const OutlierSummary trimmed = remove_outliers(filled, pre_fence);
    const Dataset scaled = standardize(
        trimmed.dataset, group_std ? Grouping::by_date_grade_school : Grouping::none);
    json summary;
    summary["rows_in"] = raw.size();
    summary["rows_out"] = scaled.size();
    summary["outliers_removed"] = trimmed.removed;
    summary["fence_skipped_too_small"] = trimmed.skipped_too_small;
    if (pre_out.empty()) {
      std::cout << to_csv(scaled);
      std::cerr << summary.dump() << "\n";
    } else {
      write_csv_file(scaled, pre_out);
      std::cout << summary.dump() << "\n";
    }
  });

  std::string report_in, report_kind = "per_member", report_out;
  CLI::App* report = sub(data, "report", "aggregate challenge results");
  report->add_option("input", report_in, "challenge CSV (member,sentence,level,score,outcome)")
      ->required()
      ->check(CLI::ExistingFile);
  report->add_option("--kind", report_kind, "per_sentence | per_member | per_level")
      ->capture_default_str();
  report->add_option("-o,--out", report_out, "output CSV (stdout when omitted)");
  report->callback([&] {
    using namespace aifml::records;
    const auto rows = read_challenges_file(report_in);
    const std::string text = report_aggregates(rows, report_kind_from_string(report_kind));
    if (report_out.empty()) {
      std::cout << text;
    } else {
      write_text(report_out, text);
    }
  });

  // ---------------- train / eval ----------------
  int train_exp = 2;
  std::string train_data, train_out = "model.json";
  int train_epochs = 100;
  double train_fence = 1.9;
  double train_dropout = -1, train_lr = -1;
  bool train_svg = false;
  CLI::App* train = sub(&app, "train", "train a preset network on a learning-record CSV");
  train->add_option("--exp", train_exp, "experiment preset 1..4")->capture_default_str();
  train->add_option("--data", train_data, "learning-record CSV")->required()->check(CLI::ExistingFile);
  train->add_option("--epochs", train_epochs, "training epochs")->capture_default_str();
  train->add_option("-o,--out", train_out, "checkpoint path")->capture_default_str();
  train->add_option("--fence", train_fence, "IQR fence multiplier")->capture_default_str();
  train->add_option("--dropout", train_dropout, "override the preset dropout rate");
  train->add_option("--lr", train_lr, "override the Adam learning rate");
  train->add_flag("--svg", train_svg, "also write a loss-curve SVG next to the checkpoint");
  train->callback([&] {
    using namespace aifml;
    const records::Dataset raw = records::read_csv_file(train_data);
    const experiments::Prepared prep = experiments::prepare(raw, train_exp, train_fence);
    dnn::NetworkSpec spec = dnn::NetworkSpec::experiment_preset(train_exp);
    spec.epochs = train_epochs;
    if (train_dropout >= 0) spec.dropout_rate = train_dropout;
    if (train_lr > 0) spec.adam.lr = train_lr;
    const auto [model, trace] = dnn::train(spec, prep.matrix, seed);
    dnn::save_checkpoint(model, train_out);
    const fs::path dir = fs::path(train_out).parent_path();
    write_text((dir / "trace.csv").string(), experiments::trace_to_csv(trace));
    if (train_svg) write_text((dir / "loss.svg").string(), experiments::loss_curve_svg(trace));
    json out;
    out["model"] = train_out;
    out["experiment"] = train_exp;
    out["epochs"] = trace.epochs.size();
    out["n_rows"] = prep.matrix.rows.size();
    out["seed"] = seed;
    if (!trace.epochs.empty()) {
      out["final_train_loss"] = trace.epochs.back().train_loss;
      out["final_validation_loss"] = trace.epochs.back().validation_loss;
    }
    std::cout << out.dump() << "\n";
  });

  std::string eval_model, eval_data;
  CLI::App* eval = sub(&app, "eval", "evaluate a checkpoint on a learning-record CSV");
  eval->add_option("--model", eval_model, "checkpoint path")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", eval_data, "learning-record CSV")->required()->check(CLI::ExistingFile);
  eval->callback([&] {
    using namespace aifml;
    const dnn::Mlp model = dnn::load_checkpoint(eval_model);
    const int experiment = experiment_for_width(model.spec.input_width);
    const records::Dataset raw = records::read_csv_file(eval_data);
    const experiments::Prepared prep = experiments::prepare(raw, experiment);
    json out;
    out["mse"] = dnn::evaluate(model, prep.matrix);
    out["n_rows"] = prep.matrix.rows.size();
    out["input_width"] = model.spec.input_width;
    std::cout << out.dump() << "\n";
  });

  // ---------------- sim ----------------
  CLI::App* sim = sub(&app, "sim", "synthetic cohort generation");
  sim->require_subcommand(1);
  int sim_students = 100;
  std::string sim_out = "cohort.csv", sim_events;
  double sim_margin = 0.2;
  bool sim_flat_credit = false;
  CLI::App* cohort = sub(sim, "cohort", "generate a deterministic synthetic cohort");
  cohort->add_option("--students", sim_students, "cohort size")->capture_default_str();
  cohort->add_option("-o,--out", sim_out, "cohort CSV path")->capture_default_str();
  cohort->add_option("--events", sim_events, "also write the session event JSONL here");
  cohort->add_option("--partial-margin", sim_margin, "margin below the threshold that still counts as partial")
      ->capture_default_str();
  cohort->add_flag("--flat-partial-credit", sim_flat_credit,
                   "score partial attempts a flat 0.5 instead of the fuzzy membership");
  cohort->callback([&] {
    using namespace aifml::sim;
    SimOptions opts;
    opts.partial_margin = sim_margin;
    if (sim_flat_credit) opts.partial_credit = PartialCredit::flat_half;
    const CohortResult r = generate_cohort(sim_students, seed, opts);
    aifml::records::write_csv_file(r.dataset, sim_out);
    if (!sim_events.empty()) write_text(sim_events, to_jsonl(r.event_lines));
    json out;
    out["students"] = r.students.size();
    out["rows"] = r.dataset.size();
    out["events"] = r.event_lines.size();
    out["cohort"] = sim_out;
    if (!sim_events.empty()) out["events_path"] = sim_events;
    out["seed"] = seed;
    std::cout << out.dump() << "\n";
  });

  // ---------------- serve ----------------
  std::string listen = default_address();
  int serve_default_epochs = 20;
  double serve_fence = 1.9;
  CLI::App* serve = sub(&app, "serve", "run the computational-agent service");
  serve->add_option("--listen", listen, "listen address host:port (AIFML_ADDR overrides the default)")
      ->capture_default_str();
  serve->add_option("--default-epochs", serve_default_epochs,
                    "epochs when TRAIN_REQUEST omits them")
      ->capture_default_str();
  serve->add_option("--fence", serve_fence, "IQR fence multiplier for training")
      ->capture_default_str();
  serve->callback([&] {
    aifml::bus::ServerConfig cfg;
    cfg.listen = listen;
    cfg.default_epochs = serve_default_epochs;
    cfg.default_seed = seed;
    cfg.fence = serve_fence;
    aifml::bus::Server server(cfg);
    server.start();
    std::signal(SIGINT, request_stop);
    std::signal(SIGTERM, request_stop);
    json ready;
    ready["listening"] = server.address();
    std::cout << ready.dump() << std::endl;
    while (!g_stop_requested) {
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    server.stop();
  });

  // ---------------- agent ----------------
  CLI::App* agent = sub(&app, "agent", "perception and cognition clients");
  agent->require_subcommand(1);
  std::string connect_addr = default_address();
  std::string session_id = "classroom-1";
  agent->add_option("--connect", connect_addr, "service address host:port")->capture_default_str();
  agent->add_option("--session", session_id, "session id")->capture_default_str();

  std::string replay_path;
  std::size_t batch_rows = 50;
  CLI::App* perceive = sub(agent, "perceive", "replay a session event stream to the service");
  perceive->add_option("--replay", replay_path, "events JSONL from sim cohort")
      ->required()
      ->check(CLI::ExistingFile);
  perceive->add_option("--batch-rows", batch_rows, "records per RECORD_BATCH")->capture_default_str();
  perceive->callback([&] {
    aifml::bus::PerceptionClient client(connect_addr, session_id);
    client.connect(30);
    const aifml::bus::ReplayCounts counts = client.replay_file(replay_path, batch_rows);
    json out;
    out["observations"] = counts.observations;
    out["record_rows"] = counts.record_rows;
    out["batches"] = counts.batches;
    out["session"] = session_id;
    std::cout << out.dump() << "\n";
  });

  std::string assess_out = "assessments.jsonl";
  CLI::App* cognize = sub(agent, "cognize", "fetch assessments into a JSONL file");
  cognize->add_option("-o,--out", assess_out, "output JSONL path")->capture_default_str();
  cognize->callback([&] {
    aifml::bus::CognitionClient client(connect_addr, session_id);
    client.connect(30);
    const std::size_t n = client.write_assessments(assess_out);
    json out;
    out["assessments"] = n;
    out["path"] = assess_out;
    out["session"] = session_id;
    std::cout << out.dump() << "\n";
  });

  int agent_exp = 2, agent_epochs = 20;
  bool agent_quiet = false;
  CLI::App* agent_train = sub(agent, "train", "ask the service to train on the session records");
  agent_train->add_option("--exp", agent_exp, "experiment preset 1..4")->capture_default_str();
  agent_train->add_option("--epochs", agent_epochs, "training epochs")->capture_default_str();
  agent_train->add_flag("--quiet", agent_quiet, "suppress per-epoch progress on stderr");
  agent_train->callback([&] {
    aifml::bus::Client client(connect_addr, session_id, "driver");
    client.connect(30);
    const aifml::bus::AgentMessage done =
        client.train(agent_exp, agent_epochs, seed, [&](const json& s) {
          if (!agent_quiet) {
            std::cerr << "epoch " << s.at("epoch") << " train " << s.at("train_loss") << " val "
                      << s.at("validation_loss") << "\n";
          }
        });
    std::cout << done.payload.dump() << "\n";
    if (done.type == aifml::bus::msg::error) throw std::runtime_error("training failed");
  });

  std::string predict_features, predict_student;
  bool predict_from_records = false;
  CLI::App* agent_predict = sub(agent, "predict", "request predictions from the session model");
  agent_predict->add_option("--features", predict_features,
                            "comma-separated feature vector for a single prediction");
  agent_predict->add_option("--student", predict_student, "student id to tag the prediction with");
  agent_predict->add_flag("--from-records", predict_from_records,
                          "predict for every record stored in the session");
  agent_predict->callback([&] {
    json payload = json::object();
    if (!predict_features.empty()) {
      json features = json::array();
      for (const std::string& f : split_fields(predict_features)) features.push_back(std::stod(f));
      payload["features"] = features;
      if (!predict_student.empty()) payload["student"] = predict_student;
    } else if (predict_from_records) {
      payload["from_records"] = true;
    } else {
      throw CLI::ValidationError("predict", "pass --features or --from-records");
    }
    aifml::bus::Client client(connect_addr, session_id, "driver");
    client.connect(30);
    const aifml::bus::AgentMessage r =
        client.request(aifml::bus::msg::predict_request, std::move(payload));
    std::cout << r.payload.dump() << "\n";
    if (r.type == aifml::bus::msg::error) throw std::runtime_error("prediction failed");
  });

  // ---------------- behavior ----------------
  CLI::App* behavior_cmd = sub(&app, "behavior", "behavior ontology and ability assessment");
  behavior_cmd->require_subcommand(1);
  std::string ontology_path;
  behavior_cmd->add_option("--ontology", ontology_path, "ontology JSON (shipped default when omitted)")
      ->check(CLI::ExistingFile);

  std::vector<std::string> activities;
  CLI::App* classify = sub(behavior_cmd, "classify", "map raw activity text onto ontology nodes");
  classify->add_option("activity", activities, "activity descriptions (stdin lines when omitted)");
  classify->callback([&] {
    const aifml::behavior::BehaviorOntology ont =
        ontology_path.empty() ? aifml::behavior::BehaviorOntology::default_ontology()
                              : aifml::behavior::BehaviorOntology::load(ontology_path);
    std::vector<std::string> lines = activities;
    if (lines.empty()) {
      std::string line;
      while (std::getline(std::cin, line)) lines.push_back(line);
    }
    for (const std::string& raw : lines) {
      json out;
      out["activity"] = raw;
      out["node"] = aifml::behavior::classify_activity(raw, ont);
      std::cout << out.dump() << "\n";
    }
  });

  std::string responses_path, items_path;
  double assess_epsilon = 0.2;
  CLI::App* assess = sub(behavior_cmd, "assess", "estimate ability from graded responses");
  assess->add_option("--responses", responses_path, "CSV item,difficulty,correct")
      ->required()
      ->check(CLI::ExistingFile);
  assess->add_option("--items", items_path, "CSV id,difficulty,level; also picks the next item")
      ->check(CLI::ExistingFile);
  assess->add_option("--epsilon", assess_epsilon, "exploration rate for the next-item pick")
      ->capture_default_str();
  assess->callback([&] {
    const auto responses = read_responses(responses_path);
    const aifml::behavior::AbilityEstimate est = aifml::behavior::estimate_ability(responses);
    json out;
    out["theta"] = est.theta;
    out["se"] = est.se;
    out["n_responses"] = est.n_responses;
    out["degenerate"] = est.degenerate;
    if (!items_path.empty()) {
      const auto items = read_items(items_path);
      const aifml::behavior::IrtItem& next =
          aifml::behavior::select_next_content(est, items, assess_epsilon, seed);
      out["next_item"] = {{"id", next.id}, {"difficulty", next.difficulty}, {"level", next.level}};
      out["epsilon"] = assess_epsilon;
    }
    std::cout << out.dump() << "\n";
  });

  // ---------------- exp ----------------
  CLI::App* exp = sub(&app, "exp", "experiment harness");
  exp->require_subcommand(1);
  aifml::experiments::ExperimentConfig exp_cfg;
  std::string exp_data, exp_out = "reports";
  int exp_epochs = 100;
  double exp_fence = 1.9;
  exp->add_option("--data", exp_data, "learning-record CSV")->required()->check(CLI::ExistingFile);
  exp->add_option("-o,--out", exp_out, "report directory")->capture_default_str();
  exp->add_option("--epochs", exp_epochs, "training epochs")->capture_default_str();
  exp->add_option("--fence", exp_fence, "IQR fence multiplier")->capture_default_str();

  int exp_id = 2;
  CLI::App* exp_run = sub(exp, "run", "run one experiment preset");
  exp_run->add_option("--exp", exp_id, "experiment preset 1..4")->capture_default_str();
  exp_run->callback([&] {
    aifml::experiments::ExperimentConfig cfg;
    cfg.experiment = exp_id;
    cfg.data_path = exp_data;
    cfg.out_dir = exp_out;
    cfg.seed = seed;
    cfg.epochs = exp_epochs;
    cfg.fence = exp_fence;
    const aifml::experiments::ExperimentResult r = aifml::experiments::run_experiment(cfg);
    std::cout << r.metrics.dump() << "\n";
  });

  CLI::App* exp_run_all = sub(exp, "run-all", "run all four presets and rank them");
  exp_run_all->callback([&] {
    aifml::experiments::ExperimentConfig cfg;
    cfg.data_path = exp_data;
    cfg.out_dir = exp_out;
    cfg.seed = seed;
    cfg.epochs = exp_epochs;
    cfg.fence = exp_fence;
    const json ranked = aifml::experiments::run_all(cfg);
    std::cout << ranked.dump() << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
