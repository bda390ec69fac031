#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "aifml/records.hpp"
#include "aifml/rng.hpp"

namespace aifml::dnn {

struct DnnError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.1;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool operator==(const AdamConfig&) const = default;
};

struct NetworkSpec {
  int input_width = 7;
  std::vector<int> hidden_widths;
  int output_width = 1;
  double dropout_rate = 0.3;
  int batch_size = 30;
  int epochs = 100;
  double validation_fraction = 0.3;
  AdamConfig adam;

  static NetworkSpec experiment_preset(int experiment);
  std::vector<int> layer_widths() const;
  void validate() const;
  bool operator==(const NetworkSpec&) const = default;
};

struct Layer {
  int in_width = 0;
  int out_width = 0;
  std::vector<double> weights;  // out_width x in_width, row major
  std::vector<double> bias;     // out_width

  bool operator==(const Layer&) const = default;
};

struct Mlp {
  NetworkSpec spec;
  std::vector<Layer> layers;

  bool operator==(const Mlp&) const = default;
};

Mlp init_network(const NetworkSpec& spec, Rng& rng);

enum class Mode { train, eval };

// activations[0] is the flattened input batch; activations[l+1] is layer l's
// output after ReLU and dropout. dropout_scale holds, per hidden layer, the
// factor applied to each activation (empty when no mask was drawn).
struct ForwardCache {
  std::size_t batch = 0;
  std::vector<std::vector<double>> activations;
  std::vector<std::vector<double>> pre_activations;
  std::vector<std::vector<double>> dropout_scale;
};

std::vector<double> forward(const Mlp& net, const std::vector<std::vector<double>>& rows,
                            Mode mode, Rng* rng = nullptr, ForwardCache* cache = nullptr);

double predict(const Mlp& net, const std::vector<double>& row);

double mse_loss(const std::vector<double>& pred, const std::vector<double>& target);

// Gradient tensors reuse the Layer shape: weights and bias hold d(loss)/d(param).
struct Gradients {
  std::vector<Layer> layers;
};

Gradients backward(const Mlp& net, const ForwardCache& cache,
                   const std::vector<double>& targets);

struct AdamState {
  std::vector<Layer> m;
  std::vector<Layer> v;
  long t = 0;
};

AdamState make_adam_state(const Mlp& net);
void adam_step(AdamState& state, Mlp& net, const Gradients& grads, const AdamConfig& cfg);

struct EpochLoss {
  double train_loss = 0;
  double validation_loss = 0;
  bool operator==(const EpochLoss&) const = default;
};

struct TrainTrace {
  std::vector<EpochLoss> epochs;
  std::optional<double> test_loss;
};

using EpochCallback = std::function<void(int epoch, const EpochLoss&)>;

std::pair<Mlp, TrainTrace> train(const NetworkSpec& spec, const records::FeatureMatrix& data,
                                 std::uint64_t seed, const EpochCallback& on_epoch = {});

double evaluate(const Mlp& net, const records::FeatureMatrix& test);

std::string checkpoint_to_json(const Mlp& net);
Mlp checkpoint_from_json(const std::string& text);
void save_checkpoint(const Mlp& net, const std::string& path);
Mlp load_checkpoint(const std::string& path);

}  // namespace aifml::dnn
