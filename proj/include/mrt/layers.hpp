#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "mrt/mesh.hpp"
#include "mrt/tensor.hpp"

namespace mrt {

enum class PeMode { none, rope, learned_abs, learned_relbias, distance_weighted };
/// Eq-literal Hadamard masking zeroes logits instead of removing non-edges;
/// kept for comparison, additive -inf masking is the default.
enum class MaskMode { additive, hadamard_literal };

PeMode pe_mode_from_string(const std::string& s);
std::string pe_mode_to_string(PeMode m);

/// He-style uniform fan-in initialization.
void init_uniform(Parameter& p, size_t fan_in, std::mt19937_64& rng);

/// Two-layer MLP with SiLU after the first layer.
struct Mlp2 {
  Parameter w1, b1, w2, b2;
  Mlp2() = default;
  Mlp2(const std::string& name, size_t in, size_t hidden, size_t out,
       std::mt19937_64& rng, bool zero_last = false);
  DTensor forward(Tape& tape, Binder& bind, DTensor x);
  void collect(std::vector<Parameter*>& out);
  size_t param_count() const;
};

struct RmsNorm {
  Parameter gain;  // 1 x d, initialized to 1
  static constexpr double kEps = 1e-12;
  RmsNorm() = default;
  RmsNorm(const std::string& name, size_t d);
  DTensor forward(Tape& tape, Binder& bind, DTensor x);
  void collect(std::vector<Parameter*>& out);
  size_t param_count() const;
};

/// gate branch (SiLU) elementwise-times value branch, then a linear out
/// projection without bias.
struct GatedMlp {
  Parameter wg, bg, wv, bv, wo;
  GatedMlp() = default;
  GatedMlp(const std::string& name, size_t d, size_t hidden, std::mt19937_64& rng);
  DTensor forward(Tape& tape, Binder& bind, DTensor x);
  void collect(std::vector<Parameter*>& out);
  size_t param_count() const;
};

/// Axis-wise rotary encoding: channel pairs are assigned round-robin to the
/// spatial axes in groups of one pair per axis; group g uses frequency
/// freqs[g], a strictly decreasing geometric sequence from 2*pi/h down to
/// 2*pi/diameter. Channels beyond the allocated pairs pass through.
struct RopeConfig {
  int dim = 2;
  size_t head_width = 0;
  size_t num_groups = 0;
  std::vector<double> freqs;

  size_t num_pairs() const { return num_groups * static_cast<size_t>(dim); }
  static RopeConfig make(size_t head_width, int dim, double mesh_size_h,
                         double domain_diameter);
};

/// cos/sin tables (rows x num_pairs) for the given coordinates.
void rope_tables(const RopeConfig& cfg,
                 const std::vector<std::array<double, 3>>& coords,
                 std::vector<double>& cos_tab, std::vector<double>& sin_tab);

/// Rotates one head's Q or K rows by the per-node angles derived from the
/// given (centered) coordinates.
DTensor apply_rope(Tape& tape, DTensor q_or_k,
                   const std::vector<std::array<double, 3>>& centered_positions,
                   const RopeConfig& cfg);

/// Everything masked attention needs about the graph. Admitted entries are
/// mesh edges plus self-loops.
struct AttnContext {
  size_t n = 0;
  std::vector<uint8_t> nonedge;      // n*n, 1 where attention is NOT admitted
  PeMode pe_mode = PeMode::none;
  MaskMode mask_mode = MaskMode::additive;
  // rope
  RopeConfig rope;
  std::vector<double> rope_cos, rope_sin;
  // distance weighting: ln-weight added to admitted logits (= -dist/h)
  std::vector<double> dist_bias;     // n*n, zero outside edges
  // learned relative bias: admitted pair list
  std::vector<int64_t> pair_flat;    // i*n + j per admitted pair
  std::vector<double> pair_dpos;     // pairs x dim
};

AttnContext make_attn_context(const MeshGraph& mesh, PeMode pe_mode,
                              MaskMode mask_mode, size_t head_width);
/// All-pairs context (no graph mask); used by Transolver slice attention.
AttnContext full_attn_context(size_t n);

struct MhaParams {
  size_t heads = 1;
  Parameter wq, wk, wv, wo;
  Mlp2 relbias;  // dim -> hidden -> heads, only used for learned_relbias
  bool has_relbias = false;
  MhaParams() = default;
  MhaParams(const std::string& name, size_t d, size_t heads, std::mt19937_64& rng,
            bool with_relbias = false, int dim = 2);
  void collect(std::vector<Parameter*>& out);
  size_t param_count() const;
};

struct MhaDebug {
  std::vector<DTensor> head_weights;  // post-softmax attention per head
};

/// Neighbor-masked multi-head attention; queries from q_input, keys/values
/// from kv_input (equal for self-attention). Errors if any row of the mask
/// admits no entries.
DTensor masked_attention(Tape& tape, Binder& bind, MhaParams& params, DTensor q_input,
                         DTensor kv_input, const AttnContext& ctx,
                         MhaDebug* debug = nullptr);

inline DTensor masked_mha(Tape& tape, Binder& bind, MhaParams& params, DTensor z,
                          const AttnContext& ctx, MhaDebug* debug = nullptr) {
  return masked_attention(tape, bind, params, z, z, ctx, debug);
}

/// Learned absolute positional embedding: MLP(position) added to the latent.
struct LearnedAbsPe {
  Mlp2 mlp;
  LearnedAbsPe() = default;
  LearnedAbsPe(const std::string& name, int dim, size_t d, std::mt19937_64& rng);
  DTensor forward(Tape& tape, Binder& bind,
                  const std::vector<std::array<double, 3>>& positions, int dim);
  void collect(std::vector<Parameter*>& out);
  size_t param_count() const;
};

/// exp(-dist/h) weights on existing edges (self-loops weight 1).
std::vector<double> distance_weighted_adjacency(const MeshGraph& mesh);

// --- processor blocks -----------------------------------------------------------

/// Message-passing block: edge update, per-receiver sum aggregation, node
/// update. Follows the edge/node MLP form with no internal residual.
struct MgnBlockParams {
  Mlp2 edge_mlp;  // (d_e + 2d) -> hidden -> d_e
  Mlp2 node_mlp;  // (d + d_e) -> hidden -> d
  MgnBlockParams() = default;
  MgnBlockParams(const std::string& name, size_t d, size_t d_edge,
                 std::mt19937_64& rng);
  void collect(std::vector<Parameter*>& out);
  size_t param_count() const;
};

struct MgnGraph {
  std::vector<int64_t> senders, receivers;  // per directed edge
};

struct MgnOut {
  DTensor nodes;
  DTensor edges;
};

MgnOut mgn_block(Tape& tape, Binder& bind, MgnBlockParams& params, DTensor z,
                 DTensor edge_latents, const MgnGraph& graph);

/// Slice attention block: project nodes onto M learned slices, attend over
/// the slice tokens, broadcast back.
struct TransolverParams {
  size_t num_slices = 1;
  Mlp2 slice_mlp;  // d -> hidden -> M
  MhaParams attn;
  TransolverParams() = default;
  TransolverParams(const std::string& name, size_t d, size_t num_slices,
                   size_t heads, std::mt19937_64& rng);
  void collect(std::vector<Parameter*>& out);
  size_t param_count() const;
};

DTensor transolver_block(Tape& tape, Binder& bind, TransolverParams& params,
                         DTensor x);

/// Post-norm transformer block: attention and gated-MLP sublayers, each
/// followed by RMSNorm of (sublayer + input).
struct TransformerBlockParams {
  MhaParams attn;
  RmsNorm norm1, norm2;
  GatedMlp ffn;
  TransformerBlockParams() = default;
  TransformerBlockParams(const std::string& name, size_t d, size_t heads,
                         size_t ffn_hidden, std::mt19937_64& rng,
                         bool with_relbias = false, int dim = 2);
  void collect(std::vector<Parameter*>& out);
  size_t param_count() const;
};

DTensor transformer_block(Tape& tape, Binder& bind, TransformerBlockParams& params,
                          DTensor z, const AttnContext& ctx);

}  // namespace mrt
