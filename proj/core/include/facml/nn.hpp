#pragma once

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <vector>

#include "facml/data.hpp"
#include "facml/gmm.hpp"  // Strategy, DimPartition
#include "facml/trace.hpp"

namespace facml {

enum class Activation { Sigmoid, Tanh, Relu };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

// Elementwise activation value and derivative at the pre-activations.
void activation_apply(Activation kind, const Eigen::MatrixXd& a, Eigen::MatrixXd& value,
                      Eigen::MatrixXd& deriv);

// Feed-forward regressor: hidden layers with one activation, identity
// output. The first-layer weight columns are partitioned by table
// boundaries ([W_S | W_R1 | ... | W_Rq]) for the factorized strategy.
struct MlpParams {
  std::vector<std::size_t> layer_sizes;  // [d, n_h, ..., 1]
  std::vector<Eigen::MatrixXd> w;        // per layer: out x in
  std::vector<Eigen::VectorXd> b;
  Activation activation = Activation::Sigmoid;
  DimPartition input_partition;
  std::uint64_t version = 0;  // bumped on every update; stamps caches

  std::size_t layers() const { return w.size(); }
  std::size_t input_dim() const { return layer_sizes.front(); }
};

// Glorot-style uniform init in +-sqrt(6/(fan_in+fan_out)), zero biases.
MlpParams init_mlp(const std::vector<std::size_t>& layer_sizes, Activation activation,
                   const DimPartition& input_partition, std::uint64_t seed);

struct GradientSet {
  std::vector<Eigen::MatrixXd> dw;  // first layer presented as [PG_S | PG_R1 | ...]
  std::vector<Eigen::VectorXd> db;
};

// Per-attribute-table reusable first-layer partials: column t holds
// W_Rm * x_Rm(t), with the layer bias folded into exactly one table's
// entries (include_bias).
struct T2Cache {
  Eigen::MatrixXd t2;  // n_h x n_tuples
  std::uint64_t version = 0;
};

// `table` is the 1-based partition block this cache serves.
T2Cache make_t2_cache(const FeatureMatrix& features, const MlpParams& params, std::size_t table,
                      bool include_bias);

// First layer, direct route: W1 * x + b1 for x with columns as samples.
Eigen::MatrixXd first_layer_direct(const Eigen::MatrixXd& x, const MlpParams& params);

// First layer, factorized route for one S group sharing R tuple `tuple`:
// W_S * x_s + t2[tuple] broadcast. StaleCache when the cache predates the
// current parameters.
Eigen::MatrixXd first_layer_factorized(const Eigen::MatrixXd& x_s, const T2Cache& cache,
                                       std::uint32_t tuple, const MlpParams& params);

// Multi-way: W_S * x_s + sum of per-table cached columns selected per
// sample; exactly one cache carries the bias.
Eigen::MatrixXd first_layer_multiway(const Eigen::MatrixXd& x_s, const std::vector<T2Cache>& caches,
                                     const std::vector<std::vector<std::uint32_t>>& tuple_of_col,
                                     const MlpParams& params);

// Activations and derivative stash from the remaining layers.
struct ForwardStash {
  std::vector<Eigen::MatrixXd> hidden;  // per hidden layer: n_l x g
  std::vector<Eigen::MatrixXd> deriv;   // f'(a) per hidden layer
  Eigen::MatrixXd output;               // n_out x g
};

// Standard propagation from the first-layer pre-activations through the
// output (layers >= 2 are never factorized).
ForwardStash forward_from_first(const Eigen::MatrixXd& a1, const MlpParams& params);

// Direct full forward: forward_from_first(first_layer_direct(x)).
ForwardStash forward_full(const Eigen::MatrixXd& x, const MlpParams& params);

// E = 1/(2g) * sum (o - y)^2
double mse_loss(const Eigen::MatrixXd& output, const Eigen::VectorXd& y);

// Chain-rule gradients; x given as per-table blocks (cols = samples) so the
// first-layer gradient assembles as [PG_S | PG_R...]. For the direct route
// pass a single block.
GradientSet backward(const std::vector<Eigen::MatrixXd>& x_blocks, const ForwardStash& stash,
                     const Eigen::VectorXd& y, const MlpParams& params);

enum class BatchMode { Batch, MiniBatch, Sgd };
BatchMode batch_mode_from_string(const std::string& s);
std::string to_string(BatchMode m);

struct NnConfig {
  std::vector<std::size_t> hidden = {50};
  Activation activation = Activation::Sigmoid;
  std::size_t epochs = 10;
  double lr = 1e-3;
  BatchMode batch_mode = BatchMode::Batch;
  std::uint64_t seed = 0;
};

using NnData = DataSource;
using NnObserver = std::function<void(std::size_t epoch, const MlpParams&, double loss)>;

struct NnTrainResult {
  MlpParams params;
  TrainTrace trace;
};

// Gradient-descent training with per-epoch losses, timings and exact
// counters traced. Targets must be present in S (or T).
NnTrainResult train_nn(Strategy strategy, NnData data, const NnConfig& config,
                       const NnObserver& observer = {});

}  // namespace facml
