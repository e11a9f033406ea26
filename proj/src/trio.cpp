#include "slomo/trio.hpp"

#include <algorithm>
#include <cstring>

#include "slomo/error.hpp"

namespace slomo {

NetworkSpec projector_spec_for(std::size_t feature_dim) {
  return make_mlp(feature_dim, {feature_dim}, std::max<std::size_t>(1, feature_dim / 2), 0,
                  /*hidden_bn=*/false);
}

ModelTrio::ModelTrio(NetworkSpec spec, NetworkParams source, std::uint64_t projector_seed)
    : spec_(std::move(spec)), source_(std::move(source)) {
  spec_.validate();
  check_params(spec_, source_);
  projector_spec_ = projector_spec_for(spec_.feature_dim());
  initial_projector_ = init_params(projector_spec_, projector_seed);
  reset();
}

void ModelTrio::reset() {
  student = source_;
  t1 = source_;
  t2 = source_;
  projector = initial_projector_;
}

namespace {

void check_same_tree(const NetworkParams& a, const NetworkParams& b) {
  if (a.layers.size() != b.layers.size()) throw ShapeError("parameter trees differ in depth");
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const auto& x = a.layers[i];
    const auto& y = b.layers[i];
    if (!x.weight.same_shape(y.weight) || x.bias.size() != y.bias.size() ||
        x.gamma.size() != y.gamma.size() || x.running_mean.size() != y.running_mean.size()) {
      throw ShapeError("parameter trees differ at layer " + std::to_string(i));
    }
  }
}

template <typename Fn>
void zip_all(NetworkParams& a, const NetworkParams& b, Fn fn) {
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    auto& x = a.layers[i];
    const auto& y = b.layers[i];
    for (std::size_t k = 0; k < x.weight.size(); ++k) fn(x.weight.data()[k], y.weight.data()[k]);
    for (std::size_t k = 0; k < x.bias.size(); ++k) fn(x.bias[k], y.bias[k]);
    for (std::size_t k = 0; k < x.gamma.size(); ++k) fn(x.gamma[k], y.gamma[k]);
    for (std::size_t k = 0; k < x.beta.size(); ++k) fn(x.beta[k], y.beta[k]);
    for (std::size_t k = 0; k < x.running_mean.size(); ++k) {
      fn(x.running_mean[k], y.running_mean[k]);
    }
    for (std::size_t k = 0; k < x.running_var.size(); ++k) fn(x.running_var[k], y.running_var[k]);
  }
}

}  // namespace

void ema_update(NetworkParams& teacher, const NetworkParams& student, double retention) {
  if (!(retention >= 0.0 && retention <= 1.0)) {
    throw ConfigError("alpha", "EMA retention must lie in [0, 1]");
  }
  check_same_tree(teacher, student);
  const double mix = 1.0 - retention;
  zip_all(teacher, student, [&](double& t, double s) { t = retention * t + mix * s; });
}

std::size_t stochastic_restore(NetworkParams& params, const NetworkParams& source,
                               double restore_prob, Rng& rng) {
  if (!(restore_prob >= 0.0 && restore_prob <= 1.0)) {
    throw ConfigError("restore_prob", "restore probability must lie in [0, 1]");
  }
  check_same_tree(params, source);
  if (restore_prob == 0.0) return 0;
  std::bernoulli_distribution coin(restore_prob);
  std::size_t restored = 0;
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    for (LeafKind k : kAllLeafKinds) {
      auto dst = leaf(params, li, k);
      auto src = leaf(source, li, k);
      for (std::size_t j = 0; j < dst.size(); ++j) {
        if (coin(rng)) {
          dst[j] = src[j];
          ++restored;
        }
      }
    }
  }
  return restored;
}

MaskSelection trainable_mask(const NetworkSpec& spec, UpdateMode mode) {
  spec.validate();
  MaskSelection out;
  out.mask.mode = mode;
  std::size_t selected = 0;
  for (const auto& l : spec.layers) {
    const bool bn = l.has_bn;
    if (mode == UpdateMode::Full) {
      out.mask.layers.push_back({true, true, bn, bn});
      selected += l.in_dim * l.out_dim + l.out_dim + (bn ? 2 * l.out_dim : 0);
    } else {
      out.mask.layers.push_back({false, false, bn, bn});
      selected += bn ? 2 * l.out_dim : 0;
    }
  }
  out.trainable_fraction =
      static_cast<double>(selected) / static_cast<double>(trainable_count(spec));
  out.selects_nothing = selected == 0;
  return out;
}

std::uint64_t checksum(const NetworkParams& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](std::span<const double> values) {
    for (double v : values) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
      }
    }
  };
  for (const auto& l : params.layers) {
    feed(l.weight.data());
    feed(l.bias);
    feed(l.gamma);
    feed(l.beta);
    feed(l.running_mean);
    feed(l.running_var);
  }
  feed(std::span<const double>(&params.bn_momentum, 1));
  return h;
}

nlohmann::ordered_json params_to_json(const NetworkParams& params) {
  nlohmann::ordered_json j;
  j["bn_momentum"] = params.bn_momentum;
  auto layers = nlohmann::ordered_json::array();
  for (const auto& l : params.layers) {
    nlohmann::ordered_json lj;
    lj["weight"] = {{"rows", l.weight.rows()},
                    {"cols", l.weight.cols()},
                    {"data", std::vector<double>(l.weight.data().begin(), l.weight.data().end())}};
    lj["bias"] = l.bias;
    lj["gamma"] = l.gamma;
    lj["beta"] = l.beta;
    lj["running_mean"] = l.running_mean;
    lj["running_var"] = l.running_var;
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  return j;
}

NetworkParams params_from_json(const nlohmann::ordered_json& j) {
  NetworkParams params;
  params.bn_momentum = j.at("bn_momentum").get<double>();
  for (const auto& lj : j.at("layers")) {
    LayerParams l;
    const auto& w = lj.at("weight");
    l.weight = Matrix(w.at("rows").get<std::size_t>(), w.at("cols").get<std::size_t>(),
                      w.at("data").get<std::vector<double>>());
    l.bias = lj.at("bias").get<Vector>();
    l.gamma = lj.at("gamma").get<Vector>();
    l.beta = lj.at("beta").get<Vector>();
    l.running_mean = lj.at("running_mean").get<Vector>();
    l.running_var = lj.at("running_var").get<Vector>();
    params.layers.push_back(std::move(l));
  }
  return params;
}

}  // namespace slomo
