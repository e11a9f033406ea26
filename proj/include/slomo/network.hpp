#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "slomo/matrix.hpp"

namespace slomo {

enum class Activation { ReLU, Identity };

struct LayerSpec {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  bool has_bn = false;
  Activation activation = Activation::Identity;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// A feed-forward stack of dense layers, each optionally followed by batch
// normalization. The post-activation output of `feature_layer_index` is the
// feature vector handed to prototype memory and the contrastive head.
struct NetworkSpec {
  std::vector<LayerSpec> layers;
  std::size_t feature_layer_index = 0;
  std::size_t num_classes = 0;

  // Throws ShapeError if layer dimensions do not chain or the final layer
  // is not a plain linear classifier.
  void validate() const;
  std::size_t input_dim() const { return layers.front().in_dim; }
  std::size_t feature_dim() const { return layers[feature_layer_index].out_dim; }

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

// in -> hidden[0] -> ... -> hidden[n-1] -> num_classes. Hidden layers carry BN
// and ReLU when `hidden_bn` is set.
NetworkSpec make_mlp(std::size_t in_dim, const std::vector<std::size_t>& hidden,
                     std::size_t num_classes, std::size_t feature_layer_index,
                     bool hidden_bn = true);

struct LayerParams {
  Matrix weight;  // out_dim x in_dim
  Vector bias;
  // Empty unless the layer has batch normalization.
  Vector gamma;
  Vector beta;
  Vector running_mean;
  Vector running_var;

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

struct NetworkParams {
  std::vector<LayerParams> layers;
  double bn_momentum = 0.1;

  friend bool operator==(const NetworkParams&, const NetworkParams&) = default;
};

// Glorot-uniform weights, zero bias, unit gamma, zero beta, running stats (0, 1).
NetworkParams init_params(const NetworkSpec& spec, std::uint64_t seed);

// Throws ShapeError when params do not match spec.
void check_params(const NetworkSpec& spec, const NetworkParams& params);

enum class LeafKind : std::uint8_t { Weight = 0, Bias = 1, Gamma = 2, Beta = 3 };
inline constexpr std::array<LeafKind, 4> kAllLeafKinds = {LeafKind::Weight, LeafKind::Bias,
                                                          LeafKind::Gamma, LeafKind::Beta};
const char* leaf_name(LeafKind kind);

struct LayerGrads {
  Matrix weight;
  Vector bias;
  Vector gamma;
  Vector beta;
};

// Gradients for the trainable leaves only; running statistics have none.
struct ParamGrads {
  std::vector<LayerGrads> layers;

  ParamGrads& operator+=(const ParamGrads& other);
  ParamGrads& operator*=(double scale);
  bool all_finite() const;
};

ParamGrads zero_grads(const NetworkSpec& spec);

std::span<double> leaf(NetworkParams& params, std::size_t layer, LeafKind kind);
std::span<const double> leaf(const NetworkParams& params, std::size_t layer, LeafKind kind);
std::span<double> leaf(ParamGrads& grads, std::size_t layer, LeafKind kind);
std::span<const double> leaf(const ParamGrads& grads, std::size_t layer, LeafKind kind);

// "layers[1].gamma[3]"
std::string leaf_path(std::size_t layer, LeafKind kind, std::size_t index);

enum class StatsMode { BatchStats, RunningStats };

struct LayerCache {
  Matrix input;
  Matrix pre;         // x W^T + b
  Matrix normalized;  // BN x-hat; empty without BN
  Vector mean;        // statistics actually used for normalization
  Vector inv_std;
  Matrix activation_input;  // after BN affine, before the nonlinearity
  Matrix output;
};

struct ForwardCache {
  StatsMode mode = StatsMode::BatchStats;
  std::vector<LayerCache> layers;
};

struct ForwardResult {
  Matrix features;
  Matrix logits;
  ForwardCache cache;
};

inline constexpr double kBnEpsilon = 1e-5;

// Runs the network. In BatchStats mode BN normalizes with the batch moments
// and folds them into the running statistics with `params.bn_momentum`.
ForwardResult forward(const NetworkSpec& spec, NetworkParams& params, const Matrix& x,
                      StatsMode mode);

// Same computation as `forward` but never touches running statistics.
ForwardResult evaluate(const NetworkSpec& spec, const NetworkParams& params, const Matrix& x,
                       StatsMode mode);

struct Backprop {
  ParamGrads params;
  Matrix input;
};

// Exact gradients of the scalar whose upstream derivatives are `grad_logits`
// (and, if given, `grad_features` injected at the feature layer's output).
ParamGrads backward(const NetworkSpec& spec, const NetworkParams& params,
                    const ForwardCache& cache, const Matrix& grad_logits,
                    const Matrix* grad_features = nullptr);

Backprop backward_with_input(const NetworkSpec& spec, const NetworkParams& params,
                             const ForwardCache& cache, const Matrix& grad_logits,
                             const Matrix* grad_features = nullptr);

enum class UpdateMode { BnOnly, Full };

// Per-layer selection of trainable leaves, indexed by LeafKind.
struct TrainableMask {
  UpdateMode mode = UpdateMode::Full;
  std::vector<std::array<bool, 4>> layers;

  bool selects(std::size_t layer, LeafKind kind) const {
    return layers[layer][static_cast<std::size_t>(kind)];
  }
};

TrainableMask full_mask(const NetworkSpec& spec);
TrainableMask empty_mask(const NetworkSpec& spec);

// Plain SGD on masked-in leaves. Running statistics are never modified.
void apply_sgd(NetworkParams& params, const ParamGrads& grads, double lr,
               const TrainableMask& mask);
NetworkParams sgd_step(const NetworkParams& params, const ParamGrads& grads, double lr,
                       const TrainableMask& mask);

std::size_t trainable_count(const NetworkSpec& spec);

// Softmax per row with row-max subtraction.
Matrix softmax(const Matrix& logits);

}  // namespace slomo
