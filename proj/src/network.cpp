#include "slomo/network.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "slomo/error.hpp"
#include "slomo/rng.hpp"

namespace slomo {

void NetworkSpec::validate() const {
  if (layers.empty()) throw ShapeError("network has no layers");
  if (num_classes < 1) throw ShapeError("num_classes must be >= 1");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.in_dim < 1 || l.out_dim < 1) {
      throw ShapeError("layer " + std::to_string(i) + " has a zero dimension");
    }
    if (i > 0 && layers[i - 1].out_dim != l.in_dim) {
      throw ShapeError("layer " + std::to_string(i) + " in_dim does not match previous out_dim");
    }
  }
  const auto& last = layers.back();
  if (last.activation != Activation::Identity || last.has_bn) {
    throw ShapeError("final layer must be linear without BN");
  }
  if (last.out_dim != num_classes) throw ShapeError("final layer out_dim != num_classes");
  if (layers.size() > 1 && feature_layer_index >= layers.size() - 1) {
    throw ShapeError("feature_layer_index must precede the classifier layer");
  }
}

NetworkSpec make_mlp(std::size_t in_dim, const std::vector<std::size_t>& hidden,
                     std::size_t num_classes, std::size_t feature_layer_index, bool hidden_bn) {
  NetworkSpec spec;
  std::size_t prev = in_dim;
  for (std::size_t h : hidden) {
    spec.layers.push_back({prev, h, hidden_bn, Activation::ReLU});
    prev = h;
  }
  spec.layers.push_back({prev, num_classes, false, Activation::Identity});
  spec.feature_layer_index = feature_layer_index;
  spec.num_classes = num_classes;
  spec.validate();
  return spec;
}

NetworkParams init_params(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  NetworkParams params;
  for (const auto& l : spec.layers) {
    LayerParams lp;
    const double limit = std::sqrt(6.0 / static_cast<double>(l.in_dim + l.out_dim));
    std::uniform_real_distribution<double> dist(-limit, limit);
    lp.weight = Matrix(l.out_dim, l.in_dim);
    for (double& w : lp.weight.data()) w = dist(rng);
    lp.bias.assign(l.out_dim, 0.0);
    if (l.has_bn) {
      lp.gamma.assign(l.out_dim, 1.0);
      lp.beta.assign(l.out_dim, 0.0);
      lp.running_mean.assign(l.out_dim, 0.0);
      lp.running_var.assign(l.out_dim, 1.0);
    }
    params.layers.push_back(std::move(lp));
  }
  return params;
}

void check_params(const NetworkSpec& spec, const NetworkParams& params) {
  if (params.layers.size() != spec.layers.size()) {
    throw ShapeError("params have " + std::to_string(params.layers.size()) +
                     " layers, spec has " + std::to_string(spec.layers.size()));
  }
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    const auto& p = params.layers[i];
    const std::size_t bn = l.has_bn ? l.out_dim : 0;
    if (p.weight.rows() != l.out_dim || p.weight.cols() != l.in_dim ||
        p.bias.size() != l.out_dim || p.gamma.size() != bn || p.beta.size() != bn ||
        p.running_mean.size() != bn || p.running_var.size() != bn) {
      throw ShapeError("params of layer " + std::to_string(i) + " do not match spec");
    }
  }
}

const char* leaf_name(LeafKind kind) {
  switch (kind) {
    case LeafKind::Weight: return "weight";
    case LeafKind::Bias: return "bias";
    case LeafKind::Gamma: return "gamma";
    case LeafKind::Beta: return "beta";
  }
  return "?";
}

std::string leaf_path(std::size_t layer, LeafKind kind, std::size_t index) {
  return "layers[" + std::to_string(layer) + "]." + leaf_name(kind) + "[" +
         std::to_string(index) + "]";
}

namespace {

template <typename Layer>
auto leaf_of(Layer& l, LeafKind kind) {
  using Span = decltype(std::span(l.bias));
  switch (kind) {
    case LeafKind::Weight: return Span(l.weight.data());
    case LeafKind::Bias: return Span(l.bias);
    case LeafKind::Gamma: return Span(l.gamma);
    case LeafKind::Beta: return Span(l.beta);
  }
  return Span();
}

}  // namespace

std::span<double> leaf(NetworkParams& p, std::size_t layer, LeafKind kind) {
  return leaf_of(p.layers.at(layer), kind);
}
std::span<const double> leaf(const NetworkParams& p, std::size_t layer, LeafKind kind) {
  return leaf_of(p.layers.at(layer), kind);
}
std::span<double> leaf(ParamGrads& g, std::size_t layer, LeafKind kind) {
  return leaf_of(g.layers.at(layer), kind);
}
std::span<const double> leaf(const ParamGrads& g, std::size_t layer, LeafKind kind) {
  return leaf_of(g.layers.at(layer), kind);
}

ParamGrads& ParamGrads::operator+=(const ParamGrads& other) {
  if (other.layers.size() != layers.size()) throw ShapeError("ParamGrads += layer mismatch");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    for (LeafKind k : kAllLeafKinds) {
      auto dst = leaf(*this, i, k);
      auto src = leaf(other, i, k);
      if (dst.size() != src.size()) throw ShapeError("ParamGrads += leaf mismatch");
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  }
  return *this;
}

ParamGrads& ParamGrads::operator*=(double scale) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    for (LeafKind k : kAllLeafKinds) {
      for (double& v : leaf(*this, i, k)) v *= scale;
    }
  }
  return *this;
}

bool ParamGrads::all_finite() const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    for (LeafKind k : kAllLeafKinds) {
      for (double v : leaf(*this, i, k)) {
        if (!std::isfinite(v)) return false;
      }
    }
  }
  return true;
}

ParamGrads zero_grads(const NetworkSpec& spec) {
  ParamGrads g;
  for (const auto& l : spec.layers) {
    LayerGrads lg;
    lg.weight = Matrix(l.out_dim, l.in_dim);
    lg.bias.assign(l.out_dim, 0.0);
    if (l.has_bn) {
      lg.gamma.assign(l.out_dim, 0.0);
      lg.beta.assign(l.out_dim, 0.0);
    }
    g.layers.push_back(std::move(lg));
  }
  return g;
}

namespace {

ForwardResult run_forward(const NetworkSpec& spec, const NetworkParams& params, const Matrix& x,
                          StatsMode mode, NetworkParams* running_sink) {
  check_params(spec, params);
  if (x.cols() != spec.input_dim()) {
    throw ShapeError("input has " + std::to_string(x.cols()) + " columns, network expects " +
                     std::to_string(spec.input_dim()));
  }
  if (x.rows() < 1) throw ShapeError("empty batch");
  const bool uses_bn = std::any_of(spec.layers.begin(), spec.layers.end(),
                                   [](const LayerSpec& l) { return l.has_bn; });
  if (mode == StatsMode::BatchStats && uses_bn && x.rows() < 2) {
    throw ShapeError("BatchStats mode needs a batch of at least 2");
  }
  require_finite(x, "forward input");

  ForwardResult result;
  result.cache.mode = mode;
  const std::size_t n = x.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  Matrix current = x;
  for (std::size_t li = 0; li < spec.layers.size(); ++li) {
    const auto& ls = spec.layers[li];
    const auto& lp = params.layers[li];
    LayerCache lc;
    lc.input = current;
    const Matrix product = matmul_transposed(current, lp.weight);
    lc.pre = product;
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < ls.out_dim; ++c) lc.pre(r, c) += lp.bias[c];
    }
    // Batch statistics are taken on the bias-free product, so the normalized
    // output is exactly (not just mathematically) independent of the bias.
    const bool batch_bn = ls.has_bn && mode == StatsMode::BatchStats;
    const Matrix& centred_source = batch_bn ? product : lc.pre;
    lc.activation_input = lc.pre;
    if (ls.has_bn) {
      lc.mean.assign(ls.out_dim, 0.0);
      lc.inv_std.assign(ls.out_dim, 0.0);
      lc.normalized = Matrix(n, ls.out_dim);
      for (std::size_t c = 0; c < ls.out_dim; ++c) {
        double mean = 0.0;
        double var = 0.0;
        if (batch_bn) {
          for (std::size_t r = 0; r < n; ++r) mean += product(r, c);
          mean *= inv_n;
          for (std::size_t r = 0; r < n; ++r) {
            const double d = product(r, c) - mean;
            var += d * d;
          }
          var *= inv_n;
          if (running_sink != nullptr) {
            // Running variance tracks the unbiased estimate.
            const double m = params.bn_momentum;
            auto& sink = running_sink->layers[li];
            const double unbiased = var * static_cast<double>(n) / static_cast<double>(n - 1);
            sink.running_mean[c] = (1.0 - m) * sink.running_mean[c] + m * (mean + lp.bias[c]);
            sink.running_var[c] = (1.0 - m) * sink.running_var[c] + m * unbiased;
          }
        } else {
          mean = lp.running_mean[c];
          var = lp.running_var[c];
        }
        const double inv_std = 1.0 / std::sqrt(var + kBnEpsilon);
        lc.mean[c] = batch_bn ? mean + lp.bias[c] : mean;
        lc.inv_std[c] = inv_std;
        for (std::size_t r = 0; r < n; ++r) {
          const double xhat = (centred_source(r, c) - mean) * inv_std;
          lc.normalized(r, c) = xhat;
          lc.activation_input(r, c) = lp.gamma[c] * xhat + lp.beta[c];
        }
      }
    }
    lc.output = lc.activation_input;
    if (ls.activation == Activation::ReLU) {
      for (double& v : lc.output.data()) v = v > 0.0 ? v : 0.0;
    }
    current = lc.output;
    if (li == spec.feature_layer_index) result.features = lc.output;
    result.cache.layers.push_back(std::move(lc));
  }
  result.logits = std::move(current);
  if (spec.layers.size() == 1) result.features = x;
  return result;
}

}  // namespace

ForwardResult forward(const NetworkSpec& spec, NetworkParams& params, const Matrix& x,
                      StatsMode mode) {
  return run_forward(spec, params, x, mode, mode == StatsMode::BatchStats ? &params : nullptr);
}

ForwardResult evaluate(const NetworkSpec& spec, const NetworkParams& params, const Matrix& x,
                       StatsMode mode) {
  return run_forward(spec, params, x, mode, nullptr);
}

Backprop backward_with_input(const NetworkSpec& spec, const NetworkParams& params,
                             const ForwardCache& cache, const Matrix& grad_logits,
                             const Matrix* grad_features) {
  check_params(spec, params);
  if (cache.layers.size() != spec.layers.size()) {
    throw ShapeError("forward cache does not match network");
  }
  require_same_shape(grad_logits, cache.layers.back().output, "grad_logits");
  if (grad_features != nullptr) {
    require_same_shape(*grad_features, cache.layers[spec.feature_layer_index].output,
                       "grad_features");
  }

  Backprop out;
  out.params = zero_grads(spec);
  Matrix upstream = grad_logits;
  for (std::size_t li = spec.layers.size(); li-- > 0;) {
    const auto& ls = spec.layers[li];
    const auto& lp = params.layers[li];
    const auto& lc = cache.layers[li];
    auto& g = out.params.layers[li];
    const std::size_t n = lc.input.rows();

    if (grad_features != nullptr && li == spec.feature_layer_index && spec.layers.size() > 1) {
      for (std::size_t i = 0; i < upstream.size(); ++i) {
        upstream.data()[i] += grad_features->data()[i];
      }
    }
    Matrix d = std::move(upstream);
    if (ls.activation == Activation::ReLU) {
      for (std::size_t i = 0; i < d.size(); ++i) {
        if (!(lc.activation_input.data()[i] > 0.0)) d.data()[i] = 0.0;
      }
    }
    if (ls.has_bn) {
      const double nd = static_cast<double>(n);
      for (std::size_t c = 0; c < ls.out_dim; ++c) {
        double sum_dy = 0.0;
        double sum_dy_xhat = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          sum_dy += d(r, c);
          sum_dy_xhat += d(r, c) * lc.normalized(r, c);
        }
        g.gamma[c] = sum_dy_xhat;
        g.beta[c] = sum_dy;
        const double gamma = lp.gamma[c];
        const double inv_std = lc.inv_std[c];
        if (cache.mode == StatsMode::BatchStats) {
          // d xhat = gamma * dy; sums over the batch reuse the dy sums.
          for (std::size_t r = 0; r < n; ++r) {
            d(r, c) = gamma * inv_std / nd *
                      (nd * d(r, c) - sum_dy - lc.normalized(r, c) * sum_dy_xhat);
          }
        } else {
          for (std::size_t r = 0; r < n; ++r) d(r, c) *= gamma * inv_std;
        }
      }
    }
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t o = 0; o < ls.out_dim; ++o) {
        const double dv = d(r, o);
        if (dv == 0.0) continue;
        g.bias[o] += dv;
        auto wrow = g.weight.row(o);
        auto xrow = lc.input.row(r);
        for (std::size_t i = 0; i < ls.in_dim; ++i) wrow[i] += dv * xrow[i];
      }
    }
    if (ls.has_bn && cache.mode == StatsMode::BatchStats) {
      std::fill(g.bias.begin(), g.bias.end(), 0.0);
    }
    Matrix down(n, ls.in_dim);
    for (std::size_t r = 0; r < n; ++r) {
      auto drow = down.row(r);
      for (std::size_t o = 0; o < ls.out_dim; ++o) {
        const double dv = d(r, o);
        if (dv == 0.0) continue;
        auto wrow = lp.weight.row(o);
        for (std::size_t i = 0; i < ls.in_dim; ++i) drow[i] += dv * wrow[i];
      }
    }
    upstream = std::move(down);
  }
  out.input = std::move(upstream);
  return out;
}

ParamGrads backward(const NetworkSpec& spec, const NetworkParams& params,
                    const ForwardCache& cache, const Matrix& grad_logits,
                    const Matrix* grad_features) {
  return backward_with_input(spec, params, cache, grad_logits, grad_features).params;
}

TrainableMask full_mask(const NetworkSpec& spec) {
  TrainableMask m;
  m.mode = UpdateMode::Full;
  for (const auto& l : spec.layers) m.layers.push_back({true, true, l.has_bn, l.has_bn});
  return m;
}

TrainableMask empty_mask(const NetworkSpec& spec) {
  TrainableMask m;
  m.mode = UpdateMode::BnOnly;
  m.layers.assign(spec.layers.size(), {false, false, false, false});
  return m;
}

void apply_sgd(NetworkParams& params, const ParamGrads& grads, double lr,
               const TrainableMask& mask) {
  if (lr < 0.0 || !std::isfinite(lr)) throw ConfigError("lr", "learning rate must be >= 0");
  if (grads.layers.size() != params.layers.size() || mask.layers.size() != params.layers.size()) {
    throw ShapeError("sgd: params, grads and mask disagree on layer count");
  }
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    for (LeafKind k : kAllLeafKinds) {
      if (!mask.selects(li, k)) continue;
      auto p = leaf(params, li, k);
      auto g = leaf(grads, li, k);
      if (p.size() != g.size()) throw ShapeError("sgd: leaf shape mismatch");
      for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr * g[j];
    }
  }
}

NetworkParams sgd_step(const NetworkParams& params, const ParamGrads& grads, double lr,
                       const TrainableMask& mask) {
  NetworkParams out = params;
  apply_sgd(out, grads, lr, mask);
  return out;
}

std::size_t trainable_count(const NetworkSpec& spec) {
  std::size_t n = 0;
  for (const auto& l : spec.layers) {
    n += l.in_dim * l.out_dim + l.out_dim;
    if (l.has_bn) n += 2 * l.out_dim;
  }
  return n;
}

Matrix softmax(const Matrix& logits) {
  require_finite(logits, "softmax");
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto in = logits.row(r);
    auto o = out.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp(in[c] - mx);
      sum += o[c];
    }
    for (double& v : o) v /= sum;
  }
  return out;
}

}  // namespace slomo
