#include "mrt/temporal.hpp"

#include <cmath>
#include <stdexcept>

namespace mrt {

TemporalFrequency temporal_frequency_from_string(const std::string& s) {
  if (s == "every_layer") return TemporalFrequency::every_layer;
  if (s == "last_layer_only" || s == "last") return TemporalFrequency::last_layer_only;
  throw std::invalid_argument("unknown temporal frequency: " + s);
}

std::string temporal_frequency_to_string(TemporalFrequency f) {
  return f == TemporalFrequency::every_layer ? "every_layer" : "last_layer_only";
}

GateMode gate_mode_from_string(const std::string& s) {
  if (s == "sigmoid") return GateMode::sigmoid;
  if (s == "node_softmax") return GateMode::node_softmax;
  throw std::invalid_argument("unknown gate mode: " + s);
}

std::string gate_mode_to_string(GateMode m) {
  return m == GateMode::sigmoid ? "sigmoid" : "node_softmax";
}

CorrectorParams::CorrectorParams(const std::string& name, size_t d, size_t heads,
                                 GateMode mode, std::mt19937_64& rng)
    : cross(name + ".ca", d, heads, rng),
      gate(name + ".gate", 2 * d, d, mode == GateMode::sigmoid ? d : 1, rng),
      mixer(name + ".mixer", 2 * d, d, d, rng),
      gate_mode(mode) {}

void CorrectorParams::collect(std::vector<Parameter*>& out) {
  cross.collect(out);
  gate.collect(out);
  mixer.collect(out);
}

size_t CorrectorParams::param_count() const {
  return cross.param_count() + gate.param_count() + mixer.param_count();
}

DTensor predictor(Tape& tape, Binder& bind, DTensor z, const SpatialDeltaFn& spatial) {
  return add(z, spatial(tape, bind, z));
}

DTensor corrector(Tape& tape, Binder& bind, CorrectorParams& params, DTensor z_tilde,
                  DTensor z, const AttnContext& ctx, CorrectorDebug* debug) {
  DTensor c = concat_cols(z_tilde, z);
  DTensor ca = masked_attention(tape, bind, params.cross, z_tilde, z, ctx);
  DTensor gated = ca;
  if (params.use_gate) {
    DTensor gate_raw = params.gate.forward(tape, bind, c);
    if (params.gate_mode == GateMode::sigmoid) {
      DTensor g = sigmoid(gate_raw);
      if (debug) debug->gate = g;
      gated = mul(g, ca);
    } else {
      // Literal reading: one scalar per node, softmaxed over the node axis.
      DTensor g = softmax(gate_raw, 0);
      if (debug) debug->gate = g;
      gated = mul_colvec(ca, g);
    }
  }
  DTensor phi_t = params.use_mixer
                      ? add(gated, params.mixer.forward(tape, bind, c))
                      : gated;
  return add(z, phi_t);
}

ThetaEmulation theta_method_emulation(double theta, std::complex<double> z) {
  std::complex<double> denom = 1.0 - theta * z;
  if (std::abs(denom) < 1e-12)
    throw std::invalid_argument(
        "theta_method_emulation: configuration infeasible, 1 - theta*z is singular");
  std::complex<double> target = (1.0 + (1.0 - theta) * z) / denom;
  // Correction coefficient c with gate fixed at sigmoid(0) = 1/2:
  // y_{n+1} = y + (1/2) c y  must equal  R_theta(z) y.
  std::complex<double> coef = 2.0 * z / denom;

  // Complex scalars ride on width-2 latents; complex multiplication by c is
  // the row-vector matrix [[Re c, Im c], [-Im c, Re c]].
  auto cmat = [](std::complex<double> v) {
    return std::vector<double>{v.real(), v.imag(), -v.imag(), v.real()};
  };

  std::mt19937_64 rng(0);
  CorrectorParams params("theta_emulation", 2, 1, GateMode::sigmoid, rng);
  for (Parameter* p : [&] {
         std::vector<Parameter*> all;
         params.collect(all);
         return all;
       }())
    std::fill(p->value.begin(), p->value.end(), 0.0);
  params.cross.wv.value = cmat(coef);
  params.cross.wo.value = {1.0, 0.0, 0.0, 1.0};

  // Single node with a self-loop.
  AttnContext ctx = full_attn_context(1);

  Tape tape(Precision::f64);
  Binder bind(tape);
  DTensor y = tape.constant(1, 2, {1.0, 0.0});
  std::vector<double> zmat = cmat(z);
  SpatialDeltaFn spatial = [&zmat](Tape& t, Binder&, DTensor v) {
    return matmul(v, t.constant(2, 2, zmat));
  };
  DTensor y_tilde = predictor(tape, bind, y, spatial);
  DTensor y_next = corrector(tape, bind, params, y_tilde, y, ctx);

  ThetaEmulation out;
  out.target = target;
  out.measured = {tape.val(y_next)[0], tape.val(y_next)[1]};
  out.rel_err = std::abs(out.measured - target) / std::max(std::abs(target), 1e-12);
  return out;
}

}  // namespace mrt
