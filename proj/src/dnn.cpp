#include "aifml/dnn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace aifml::dnn {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw DnnError(what);
}

}  // namespace

NetworkSpec NetworkSpec::experiment_preset(int experiment) {
  NetworkSpec s;
  switch (experiment) {
    case 1: s.input_width = 7; s.hidden_widths = {21, 64, 512, 64, 10}; break;
    case 2: s.input_width = 7; s.hidden_widths = {21, 512, 512, 3}; break;
    case 3: s.input_width = 9; s.hidden_widths = {27, 64, 512, 64, 10}; break;
    case 4: s.input_width = 9; s.hidden_widths = {27, 512, 512, 3}; break;
    default: throw std::invalid_argument("experiment must be 1..4");
  }
  return s;
}

std::vector<int> NetworkSpec::layer_widths() const {
  std::vector<int> widths;
  widths.push_back(input_width);
  widths.insert(widths.end(), hidden_widths.begin(), hidden_widths.end());
  widths.push_back(output_width);
  return widths;
}

void NetworkSpec::validate() const {
  require(output_width == 1, "output width must be 1");
  require(input_width >= 1, "input width must be positive");
  for (int w : hidden_widths) require(w >= 1, "hidden widths must be positive");
  require(dropout_rate >= 0 && dropout_rate < 1, "dropout rate must be in [0,1)");
  require(batch_size >= 1, "batch size must be positive");
  require(epochs >= 0, "epochs must be nonnegative");
  require(validation_fraction > 0 && validation_fraction < 1,
          "validation fraction must be in (0,1)");
}

Mlp init_network(const NetworkSpec& spec, Rng& rng) {
  spec.validate();
  Mlp net;
  net.spec = spec;
  const std::vector<int> widths = spec.layer_widths();
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    Layer layer;
    layer.in_width = widths[l];
    layer.out_width = widths[l + 1];
    layer.weights.resize(static_cast<std::size_t>(layer.in_width) * layer.out_width);
    layer.bias.assign(layer.out_width, 0.0);
    const double limit = std::sqrt(6.0 / layer.in_width);
    for (double& w : layer.weights) w = (2.0 * rng.uniform() - 1.0) * limit;
    net.layers.push_back(std::move(layer));
  }
  return net;
}

std::vector<double> forward(const Mlp& net, const std::vector<std::vector<double>>& rows,
                            Mode mode, Rng* rng, ForwardCache* cache) {
  require(!net.layers.empty(), "network has no layers");
  const std::size_t batch = rows.size();
  const std::size_t in_width = static_cast<std::size_t>(net.spec.input_width);

  std::vector<double> current(batch * in_width);
  for (std::size_t b = 0; b < batch; ++b) {
    require(rows[b].size() == in_width, "input row width does not match the network");
    std::copy(rows[b].begin(), rows[b].end(), current.begin() + b * in_width);
  }

  const bool masking = mode == Mode::train && net.spec.dropout_rate > 0;
  if (masking) require(rng != nullptr, "train-mode forward with dropout needs a generator");

  if (cache) {
    cache->batch = batch;
    cache->activations.assign(1, current);
    cache->pre_activations.clear();
    cache->dropout_scale.assign(net.layers.size() > 0 ? net.layers.size() - 1 : 0, {});
  }

  const double keep = 1.0 - net.spec.dropout_rate;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const Layer& layer = net.layers[l];
    const std::size_t in = layer.in_width;
    const std::size_t out = layer.out_width;
    std::vector<double> z(batch * out);
    for (std::size_t b = 0; b < batch; ++b) {
      const double* a = current.data() + b * in;
      double* zb = z.data() + b * out;
      for (std::size_t o = 0; o < out; ++o) {
        const double* w = layer.weights.data() + o * in;
        double acc = layer.bias[o];
        for (std::size_t i = 0; i < in; ++i) acc += w[i] * a[i];
        zb[o] = acc;
      }
    }
    if (cache) cache->pre_activations.push_back(z);

    const bool is_output = l + 1 == net.layers.size();
    if (is_output) {
      current = std::move(z);
      break;
    }
    for (double& v : z) v = v > 0 ? v : 0;
    if (masking) {
      std::vector<double> scale(z.size());
      for (std::size_t i = 0; i < z.size(); ++i) {
        scale[i] = rng->chance(net.spec.dropout_rate) ? 0.0 : 1.0 / keep;
        z[i] *= scale[i];
      }
      if (cache) cache->dropout_scale[l] = std::move(scale);
    }
    current = std::move(z);
    if (cache) cache->activations.push_back(current);
  }

  // Output width is pinned to 1, so the flattened output is one value per row.
  return current;
}

double predict(const Mlp& net, const std::vector<double>& row) {
  return forward(net, {row}, Mode::eval).front();
}

double mse_loss(const std::vector<double>& pred, const std::vector<double>& target) {
  require(pred.size() == target.size(), "prediction and target lengths differ");
  require(!pred.empty(), "loss of an empty batch is undefined");
  double acc = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

Gradients backward(const Mlp& net, const ForwardCache& cache,
                   const std::vector<double>& targets) {
  const std::size_t batch = cache.batch;
  require(targets.size() == batch, "target count does not match the cached batch");
  require(cache.pre_activations.size() == net.layers.size(), "forward cache is incomplete");

  Gradients grads;
  grads.layers.resize(net.layers.size());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    grads.layers[l].in_width = net.layers[l].in_width;
    grads.layers[l].out_width = net.layers[l].out_width;
    grads.layers[l].weights.assign(net.layers[l].weights.size(), 0.0);
    grads.layers[l].bias.assign(net.layers[l].bias.size(), 0.0);
  }

  // d(mse)/d(prediction) for the scalar output.
  std::vector<double> dz(batch);
  const std::vector<double>& out = cache.pre_activations.back();
  for (std::size_t b = 0; b < batch; ++b) {
    dz[b] = 2.0 * (out[b] - targets[b]) / static_cast<double>(batch);
  }

  for (std::size_t l = net.layers.size(); l-- > 0;) {
    const Layer& layer = net.layers[l];
    const std::size_t in = layer.in_width;
    const std::size_t out_w = layer.out_width;
    const std::vector<double>& a_prev = cache.activations[l];
    Layer& g = grads.layers[l];

    for (std::size_t b = 0; b < batch; ++b) {
      const double* a = a_prev.data() + b * in;
      const double* d = dz.data() + b * out_w;
      for (std::size_t o = 0; o < out_w; ++o) {
        const double dv = d[o];
        if (dv == 0) continue;
        double* gw = g.weights.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) gw[i] += dv * a[i];
        g.bias[o] += dv;
      }
    }

    if (l == 0) break;
    std::vector<double> da(batch * in, 0.0);
    for (std::size_t b = 0; b < batch; ++b) {
      const double* d = dz.data() + b * out_w;
      double* dab = da.data() + b * in;
      for (std::size_t o = 0; o < out_w; ++o) {
        const double dv = d[o];
        if (dv == 0) continue;
        const double* w = layer.weights.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) dab[i] += dv * w[i];
      }
    }
    const std::vector<double>& z_prev = cache.pre_activations[l - 1];
    const std::vector<double>& scale = cache.dropout_scale[l - 1];
    for (std::size_t i = 0; i < da.size(); ++i) {
      double v = z_prev[i] > 0 ? da[i] : 0.0;
      if (!scale.empty()) v *= scale[i];
      da[i] = v;
    }
    dz = std::move(da);
  }
  return grads;
}

AdamState make_adam_state(const Mlp& net) {
  AdamState s;
  s.m.resize(net.layers.size());
  s.v.resize(net.layers.size());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    for (auto* t : {&s.m[l], &s.v[l]}) {
      t->in_width = net.layers[l].in_width;
      t->out_width = net.layers[l].out_width;
      t->weights.assign(net.layers[l].weights.size(), 0.0);
      t->bias.assign(net.layers[l].bias.size(), 0.0);
    }
  }
  return s;
}

namespace {

void adam_update(std::vector<double>& params, const std::vector<double>& g,
                 std::vector<double>& m, std::vector<double>& v, long t,
                 const AdamConfig& cfg) {
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    params[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

}  // namespace

void adam_step(AdamState& state, Mlp& net, const Gradients& grads, const AdamConfig& cfg) {
  require(grads.layers.size() == net.layers.size(), "gradient shape mismatch");
  state.t += 1;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    require(grads.layers[l].weights.size() == net.layers[l].weights.size() &&
                grads.layers[l].bias.size() == net.layers[l].bias.size(),
            "gradient shape mismatch");
    adam_update(net.layers[l].weights, grads.layers[l].weights, state.m[l].weights,
                state.v[l].weights, state.t, cfg);
    adam_update(net.layers[l].bias, grads.layers[l].bias, state.m[l].bias,
                state.v[l].bias, state.t, cfg);
  }
}

std::pair<Mlp, TrainTrace> train(const NetworkSpec& spec, const records::FeatureMatrix& data,
                                 std::uint64_t seed, const EpochCallback& on_epoch) {
  spec.validate();
  const std::size_t n = data.rows.size();
  require(data.labels.size() == n, "row and label counts differ");

  Rng rng(seed);
  Mlp net = init_network(spec, rng);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  const std::size_t n_val =
      static_cast<std::size_t>(std::llround(spec.validation_fraction * static_cast<double>(n)));
  require(n_val >= 1, "validation holdout is empty");
  require(n - n_val >= static_cast<std::size_t>(spec.batch_size),
          "not enough rows left after the validation holdout");

  std::vector<std::size_t> val_idx(order.begin(), order.begin() + n_val);
  std::vector<std::size_t> train_idx(order.begin() + n_val, order.end());

  std::vector<std::vector<double>> val_rows;
  std::vector<double> val_targets;
  for (std::size_t i : val_idx) {
    val_rows.push_back(data.rows[i]);
    val_targets.push_back(data.labels[i]);
  }

  AdamState state = make_adam_state(net);
  TrainTrace trace;
  for (int epoch = 1; epoch <= spec.epochs; ++epoch) {
    rng.shuffle(train_idx);
    double sq_err = 0;
    for (std::size_t start = 0; start < train_idx.size();
         start += static_cast<std::size_t>(spec.batch_size)) {
      const std::size_t stop =
          std::min(train_idx.size(), start + static_cast<std::size_t>(spec.batch_size));
      std::vector<std::vector<double>> rows;
      std::vector<double> targets;
      for (std::size_t k = start; k < stop; ++k) {
        rows.push_back(data.rows[train_idx[k]]);
        targets.push_back(data.labels[train_idx[k]]);
      }
      ForwardCache cache;
      const std::vector<double> preds = forward(net, rows, Mode::train, &rng, &cache);
      for (std::size_t k = 0; k < preds.size(); ++k) {
        const double d = preds[k] - targets[k];
        sq_err += d * d;
      }
      const Gradients grads = backward(net, cache, targets);
      adam_step(state, net, grads, spec.adam);
    }
    EpochLoss loss;
    loss.train_loss = sq_err / static_cast<double>(train_idx.size());
    loss.validation_loss = mse_loss(forward(net, val_rows, Mode::eval), val_targets);
    trace.epochs.push_back(loss);
    if (on_epoch) on_epoch(epoch, loss);
  }
  return {std::move(net), std::move(trace)};
}

double evaluate(const Mlp& net, const records::FeatureMatrix& test) {
  return mse_loss(forward(net, test.rows, Mode::eval), test.labels);
}

std::string checkpoint_to_json(const Mlp& net) {
  nlohmann::json j;
  j["format"] = "aifml-model";
  j["version"] = 1;
  j["spec"] = {
      {"input_width", net.spec.input_width},
      {"hidden_widths", net.spec.hidden_widths},
      {"output_width", net.spec.output_width},
      {"dropout_rate", net.spec.dropout_rate},
      {"batch_size", net.spec.batch_size},
      {"epochs", net.spec.epochs},
      {"validation_fraction", net.spec.validation_fraction},
      {"adam",
       {{"lr", net.spec.adam.lr},
        {"beta1", net.spec.adam.beta1},
        {"beta2", net.spec.adam.beta2},
        {"eps", net.spec.adam.eps}}},
  };
  nlohmann::json layers = nlohmann::json::array();
  for (const Layer& l : net.layers) {
    layers.push_back({{"in_width", l.in_width},
                      {"out_width", l.out_width},
                      {"weights", l.weights},
                      {"bias", l.bias}});
  }
  j["layers"] = std::move(layers);
  return j.dump(2);
}

Mlp checkpoint_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DnnError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    require(j.at("format") == "aifml-model", "not a model checkpoint");
    require(j.at("version") == 1, "unsupported checkpoint version");
    Mlp net;
    const auto& s = j.at("spec");
    net.spec.input_width = s.at("input_width").get<int>();
    net.spec.hidden_widths = s.at("hidden_widths").get<std::vector<int>>();
    net.spec.output_width = s.at("output_width").get<int>();
    net.spec.dropout_rate = s.at("dropout_rate").get<double>();
    net.spec.batch_size = s.at("batch_size").get<int>();
    net.spec.epochs = s.at("epochs").get<int>();
    net.spec.validation_fraction = s.at("validation_fraction").get<double>();
    net.spec.adam.lr = s.at("adam").at("lr").get<double>();
    net.spec.adam.beta1 = s.at("adam").at("beta1").get<double>();
    net.spec.adam.beta2 = s.at("adam").at("beta2").get<double>();
    net.spec.adam.eps = s.at("adam").at("eps").get<double>();
    for (const auto& lj : j.at("layers")) {
      Layer l;
      l.in_width = lj.at("in_width").get<int>();
      l.out_width = lj.at("out_width").get<int>();
      l.weights = lj.at("weights").get<std::vector<double>>();
      l.bias = lj.at("bias").get<std::vector<double>>();
      require(l.weights.size() == static_cast<std::size_t>(l.in_width) * l.out_width &&
                  l.bias.size() == static_cast<std::size_t>(l.out_width),
              "checkpoint layer shape is inconsistent");
      net.layers.push_back(std::move(l));
    }
    const std::vector<int> widths = net.spec.layer_widths();
    require(net.layers.size() + 1 == widths.size(), "checkpoint layer count mismatch");
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
      require(net.layers[i].in_width == widths[i] && net.layers[i].out_width == widths[i + 1],
              "checkpoint layer widths do not chain");
    }
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw DnnError(std::string("checkpoint is missing fields: ") + e.what());
  }
}

void save_checkpoint(const Mlp& net, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot open checkpoint file for writing: " + path);
  out << checkpoint_to_json(net) << '\n';
  require(out.good(), "failed writing checkpoint: " + path);
}

Mlp load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open checkpoint file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_json(buf.str());
}

}  // namespace aifml::dnn
