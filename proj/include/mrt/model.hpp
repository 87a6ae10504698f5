#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mrt/layers.hpp"
#include "mrt/mesh.hpp"
#include "mrt/mnp.hpp"
#include "mrt/synthetic.hpp"
#include "mrt/temporal.hpp"
#include "mrt/tensor.hpp"
#include "mrt/theory.hpp"

namespace mrt {

enum class Architecture { mgn, transformer, transolver };

Architecture architecture_from_string(const std::string& s);
std::string architecture_to_string(Architecture a);

struct MnpConfig {
  bool enabled = false;
  size_t centers = 256;
  size_t K = 12;
  double alpha = 0.2;
  bool attend_center = true;
};

struct TemporalConfig {
  bool enabled = false;
  TemporalFrequency frequency = TemporalFrequency::last_layer_only;
  GateMode gate_mode = GateMode::sigmoid;
  bool intermediate_supervision = false;
  bool use_gate = true;
  bool use_mixer = true;
};

struct ModelConfig {
  Architecture architecture = Architecture::transformer;
  size_t depth = 2;       // L
  size_t width = 32;      // d
  size_t heads = 4;       // H
  size_t slices = 16;     // Transolver M
  size_t ffn_hidden = 0;  // 0 -> 2 * width
  PeMode pe_mode = PeMode::none;
  MaskMode mask_mode = MaskMode::additive;
  double jumper_frac = 0.05;  // transformer long-range edges, count = frac * N
  bool history = false;
  MnpConfig mnp;
  TemporalConfig temporal;

  size_t ffn() const { return ffn_hidden == 0 ? 2 * width : ffn_hidden; }
};

/// A built model: parameters for the encoder, the processor stack, the
/// decoder, and the optional MNP ring transformer and temporal correctors.
/// Parameter initialization order is fixed (backbone first) so optional
/// modules do not perturb the backbone's draws.
struct Model {
  ModelConfig cfg;
  size_t input_width = 0, output_width = 0;
  int dim = 2;
  uint64_t init_seed = 0;

  Mlp2 encoder, decoder;
  Mlp2 edge_encoder;  // mgn only
  LearnedAbsPe pos;
  bool has_pos = false;
  std::vector<TransformerBlockParams> tblocks;
  std::vector<MgnBlockParams> gblocks;
  std::vector<TransolverParams> sblocks;
  RingTransformerParams ring;
  bool has_ring = false;
  std::vector<CorrectorParams> correctors;

  std::vector<Parameter*> params;  // stable collection order

  size_t param_count() const;
  void zero_grad();
};

Model build_model(const ModelConfig& cfg, size_t input_width, size_t output_width,
                  int dim, uint64_t seed);
size_t count_model_params(const ModelConfig& cfg, size_t input_width,
                          size_t output_width, int dim);

/// Widens a plain baseline until its parameter count matches `target` within
/// 2 percent: width grows in head-multiples, then the gated-MLP hidden width
/// is tuned for the fine remainder.
ModelConfig match_param_count(const ModelConfig& base, size_t target,
                              size_t input_width, size_t output_width, int dim);

/// Per-mesh precomputation for one model: the (possibly jumper-augmented)
/// attention mask, message-passing arrays, and geometry. Must outlive any
/// tape recorded against it.
struct GraphCache {
  MeshGraph mesh;          // augmented with jumpers for transformer models
  Adjacency mesh_adj;      // original mesh adjacency (MNP stars, stencils)
  AttnContext attn;        // backbone attention context (pe mode applied)
  AttnContext plain_attn;  // mask-only context for the temporal corrector
  MgnGraph mgn;
  std::vector<double> edge_feats;
  size_t edge_feat_width = 0;
  GeometricContext geo;
  WlsGradientOperator wls;  // stencil gradients for auxiliary losses and probes
};

GraphCache make_graph_cache(const Model& model, const MeshGraph& mesh,
                            uint64_t jumper_seed);

struct ForwardResult {
  std::vector<DTensor> latents;  // layer 0 (post-encoder) .. L
  DTensor delta;                 // decoded state update, N x c
  std::vector<DTensor> corrected;  // post-correction latents (intermediate sup.)
};

ForwardResult model_forward(Tape& tape, Binder& bind, Model& model,
                            const GraphCache& cache, const NodeFeatures& feats);

}  // namespace mrt
