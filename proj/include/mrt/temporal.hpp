#pragma once

#include <complex>
#include <functional>

#include "mrt/layers.hpp"
#include "mrt/tensor.hpp"

namespace mrt {

enum class TemporalFrequency { every_layer, last_layer_only };
/// The gate's final activation. The per-node-per-channel sigmoid is the
/// default; node_softmax is the literal node-axis softmax reading, kept
/// behind this switch for comparison.
enum class GateMode { sigmoid, node_softmax };

TemporalFrequency temporal_frequency_from_string(const std::string& s);
std::string temporal_frequency_to_string(TemporalFrequency f);
GateMode gate_mode_from_string(const std::string& s);
std::string gate_mode_to_string(GateMode m);

/// Gated cross-attention corrector. Queries come from the predicted state,
/// keys/values from the previous state; the gate and mixer are 2-layer MLPs
/// on the concatenation [Z~, Z].
struct CorrectorParams {
  MhaParams cross;
  Mlp2 gate;   // 2d -> d -> (d | 1)
  Mlp2 mixer;  // 2d -> d -> d
  GateMode gate_mode = GateMode::sigmoid;
  bool use_gate = true;   // ablation: gate off leaves CA un-gated
  bool use_mixer = true;  // ablation: mixer off drops the M(C) term
  CorrectorParams() = default;
  CorrectorParams(const std::string& name, size_t d, size_t heads, GateMode mode,
                  std::mt19937_64& rng);
  void collect(std::vector<Parameter*>& out);
  size_t param_count() const;
};

using SpatialDeltaFn = std::function<DTensor(Tape&, Binder&, DTensor)>;

/// Z~ = Z + phi_s(Z)
DTensor predictor(Tape& tape, Binder& bind, DTensor z, const SpatialDeltaFn& spatial);

struct CorrectorDebug {
  DTensor gate;  // post-activation gate values
};

/// Z_{l+1} = Z + G(C) (.) CA(C) + M(C), with C = [Z~, Z].
DTensor corrector(Tape& tape, Binder& bind, CorrectorParams& params, DTensor z_tilde,
                  DTensor z, const AttnContext& ctx, CorrectorDebug* debug = nullptr);

struct ThetaEmulation {
  std::complex<double> measured;
  std::complex<double> target;
  double rel_err = 0.0;
};

/// Analytic-weight emulation of the theta-method amplification on a one-node
/// linear system: spatial update y -> y + z*y, corrector weights set so one
/// predictor-corrector step reproduces y_{n+1} = R_theta(z) * y_n. Errors if
/// the requested configuration hits the 1 - theta*z pole.
ThetaEmulation theta_method_emulation(double theta, std::complex<double> z);

}  // namespace mrt
