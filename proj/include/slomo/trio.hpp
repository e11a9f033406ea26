#pragma once

#include <cstddef>
#include <cstdint>

#include <nlohmann/json.hpp>

#include "slomo/network.hpp"
#include "slomo/rng.hpp"

namespace slomo {

// Student, fast teacher (EMA of the student), slow teacher (gradient-trained,
// stochastically restored) and the frozen source snapshot they all start
// from, plus the contrastive projection head used by the slow teacher.
class ModelTrio {
 public:
  ModelTrio(NetworkSpec spec, NetworkParams source, std::uint64_t projector_seed);

  const NetworkSpec& spec() const { return spec_; }
  const NetworkSpec& projector_spec() const { return projector_spec_; }
  const NetworkParams& source() const { return source_; }

  NetworkParams student;
  NetworkParams t1;
  NetworkParams t2;
  NetworkParams projector;

  // Returns every adapted model and the projector to its initial state.
  void reset();

 private:
  NetworkSpec spec_;
  NetworkSpec projector_spec_;
  NetworkParams source_;
  NetworkParams initial_projector_;
};

// feature_dim -> feature_dim (ReLU) -> max(1, feature_dim / 2), no BN.
NetworkSpec projector_spec_for(std::size_t feature_dim);

// teacher <- retention * teacher + (1 - retention) * student on every leaf,
// running statistics included.
void ema_update(NetworkParams& teacher, const NetworkParams& student, double retention);

// Independently per trainable scalar, copies the source value with
// probability `restore_prob`. Running statistics are left alone. Returns the
// number of scalars drawn for restoration.
std::size_t stochastic_restore(NetworkParams& params, const NetworkParams& source,
                               double restore_prob, Rng& rng);

struct MaskSelection {
  TrainableMask mask;
  double trainable_fraction = 0.0;
  // Set when BnOnly is requested on a network without BN layers.
  bool selects_nothing = false;
};

MaskSelection trainable_mask(const NetworkSpec& spec, UpdateMode mode);

// FNV-1a over the raw bytes of every leaf, running statistics included.
std::uint64_t checksum(const NetworkParams& params);

// Checkpoint form: {"bn_momentum": m, "layers": [{"weight": {"rows","cols","data"},
// "bias", "gamma", "beta", "running_mean", "running_var"}]}. Doubles are
// written in shortest round-trip form, so parsing restores bit-exact values.
nlohmann::ordered_json params_to_json(const NetworkParams& params);
NetworkParams params_from_json(const nlohmann::ordered_json& j);

}  // namespace slomo
