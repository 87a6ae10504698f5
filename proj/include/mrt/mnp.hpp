#pragma once

#include <cstdint>
#include <vector>

#include "mrt/layers.hpp"
#include "mrt/mesh.hpp"
#include "mrt/tensor.hpp"

namespace mrt {

/// Packed star sequences: per center, token 0 is the center's final latent
/// and tokens 1..K are freshly encoded neighbors in ascending index order,
/// zero-padded past the neighbor count. Stars never attend across star
/// boundaries.
struct StarBatch {
  size_t num_stars = 0;
  size_t K = 0;
  DTensor sequences;                  // (num_stars * (K+1)) x d
  std::vector<uint8_t> pad_mask;      // num_stars * (K+1), 1 = padding
  std::vector<uint32_t> center_ids;   // num_stars
  std::vector<int64_t> neighbor_ids;  // num_stars * K, -1 = padding
  std::vector<uint32_t> valid_tokens; // per star, 1 + min(deg, K)
};

/// m distinct centers drawn uniformly without replacement from the internal
/// (Normal-typed) nodes. Deterministic under seed.
std::vector<uint32_t> sample_centers(const MeshGraph& mesh, size_t m, uint64_t seed);

StarBatch build_stars(Tape& tape, DTensor z_final, DTensor z_encoded,
                      const Adjacency& adj, const std::vector<uint32_t>& centers,
                      size_t K);

/// One-layer transformer applied star-wise: pre-norm attention over the
/// star's valid tokens followed by a pre-norm gated MLP, both residual.
/// With attend_center = false, neighbor tokens cannot attend the center.
struct RingTransformerParams {
  MhaParams attn;
  RmsNorm norm1, norm2;
  GatedMlp ffn;
  bool attend_center = true;
  RingTransformerParams() = default;
  RingTransformerParams(const std::string& name, size_t d, size_t heads,
                        size_t ffn_hidden, std::mt19937_64& rng);
  void collect(std::vector<Parameter*>& out);
  size_t param_count() const;
};

/// Returns packed transformed tokens mirroring the StarBatch layout; padded
/// rows are zero.
DTensor ring_transformer(Tape& tape, Binder& bind, RingTransformerParams& params,
                         const StarBatch& batch);

/// Mean over centers of the mean over each center's valid neighbors of the
/// squared error between the decoded neighbor token (anchored on the input
/// state) and the neighbor's target. The center token is not supervised.
DTensor mnp_loss(Tape& tape, Binder& bind, DTensor output, Mlp2& decoder,
                 const StarBatch& batch, const std::vector<double>& targets,
                 const std::vector<double>& anchors, size_t num_components);

/// total = main + alpha * mnp
DTensor combine_losses(DTensor main, DTensor mnp, double alpha);

}  // namespace mrt
