#include "mrt/mnp.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

namespace mrt {

std::vector<uint32_t> sample_centers(const MeshGraph& mesh, size_t m, uint64_t seed) {
  std::vector<uint32_t> pool = internal_nodes(mesh);
  if (m > pool.size())
    throw std::invalid_argument("sample_centers: m exceeds internal node count");
  std::mt19937_64 rng(seed);
  for (size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(m);
  return pool;
}

StarBatch build_stars(Tape& tape, DTensor z_final, DTensor z_encoded,
                      const Adjacency& adj, const std::vector<uint32_t>& centers,
                      size_t K) {
  size_t d = tape.cols(z_final);
  if (tape.cols(z_encoded) != d)
    throw std::invalid_argument("build_stars: latent widths differ");
  StarBatch batch;
  batch.num_stars = centers.size();
  batch.K = K;
  batch.center_ids = centers;
  batch.pad_mask.assign(centers.size() * (K + 1), 0);
  batch.neighbor_ids.assign(centers.size() * K, -1);
  batch.valid_tokens.resize(centers.size());

  // Token s*(K+1) gathers z_final at the center; the K neighbor slots gather
  // z_encoded, -1 rows staying zero. Two gathers are interleaved by building
  // each from its own index list and summing; rows never overlap.
  std::vector<int64_t> center_rows(centers.size() * (K + 1), -1);
  std::vector<int64_t> neighbor_rows(centers.size() * (K + 1), -1);
  for (size_t s = 0; s < centers.size(); ++s) {
    uint32_t c = centers[s];
    if (c >= adj.n) throw std::invalid_argument("build_stars: center out of range");
    center_rows[s * (K + 1)] = c;
    auto nbrs = neighborhood(adj, c);  // ascending order
    size_t kept = std::min<size_t>(nbrs.size(), K);
    batch.valid_tokens[s] = static_cast<uint32_t>(1 + kept);
    for (size_t k = 0; k < kept; ++k) {
      batch.neighbor_ids[s * K + k] = nbrs[k];
      neighbor_rows[s * (K + 1) + 1 + k] = nbrs[k];
    }
    for (size_t k = kept; k < K; ++k) batch.pad_mask[s * (K + 1) + 1 + k] = 1;
  }
  batch.sequences =
      add(gather_rows(z_final, center_rows), gather_rows(z_encoded, neighbor_rows));
  return batch;
}

RingTransformerParams::RingTransformerParams(const std::string& name, size_t d,
                                             size_t heads, size_t ffn_hidden,
                                             std::mt19937_64& rng)
    : attn(name + ".attn", d, heads, rng),
      norm1(name + ".norm1", d),
      norm2(name + ".norm2", d),
      ffn(name + ".ffn", d, ffn_hidden, rng) {}

void RingTransformerParams::collect(std::vector<Parameter*>& out) {
  attn.collect(out);
  norm1.collect(out);
  norm2.collect(out);
  ffn.collect(out);
}

size_t RingTransformerParams::param_count() const {
  return attn.param_count() + norm1.param_count() + norm2.param_count() +
         ffn.param_count();
}

DTensor ring_transformer(Tape& tape, Binder& bind, RingTransformerParams& params,
                         const StarBatch& batch) {
  size_t d = tape.cols(batch.sequences);
  std::vector<DTensor> parts;
  parts.reserve(batch.num_stars * 2);
  for (size_t s = 0; s < batch.num_stars; ++s) {
    size_t v = batch.valid_tokens[s];
    DTensor x = slice_rows(batch.sequences, s * (batch.K + 1), v);
    AttnContext ctx = full_attn_context(v);
    if (!params.attend_center && v > 1) {
      for (size_t r = 1; r < v; ++r) ctx.nonedge[r * v + 0] = 1;
    }
    DTensor xn = params.norm1.forward(tape, bind, x);
    DTensor a = add(x, masked_attention(tape, bind, params.attn, xn, xn, ctx));
    DTensor out = add(a, params.ffn.forward(tape, bind,
                                            params.norm2.forward(tape, bind, a)));
    parts.push_back(out);
    if (v < batch.K + 1) parts.push_back(tape.zeros(batch.K + 1 - v, d));
  }
  return concat_rows(parts);
}

DTensor mnp_loss(Tape& tape, Binder& bind, DTensor output, Mlp2& decoder,
                 const StarBatch& batch, const std::vector<double>& targets,
                 const std::vector<double>& anchors, size_t num_components) {
  // Valid neighbor tokens and their per-star weight 1/(|C| * K_i).
  std::vector<int64_t> token_rows, node_rows;
  std::vector<double> weights;
  for (size_t s = 0; s < batch.num_stars; ++s) {
    size_t k_i = batch.valid_tokens[s] - 1;
    if (k_i == 0) continue;
    double w = 1.0 / (static_cast<double>(batch.num_stars) * static_cast<double>(k_i));
    for (size_t k = 0; k < k_i; ++k) {
      token_rows.push_back(static_cast<int64_t>(s * (batch.K + 1) + 1 + k));
      node_rows.push_back(batch.neighbor_ids[s * batch.K + k]);
      weights.push_back(w);
    }
  }
  if (token_rows.empty()) return tape.scalar(0.0);

  size_t v = token_rows.size();
  std::vector<double> y(v * num_components), anchor(v * num_components);
  for (size_t r = 0; r < v; ++r)
    for (size_t c = 0; c < num_components; ++c) {
      y[r * num_components + c] = targets[node_rows[r] * num_components + c];
      anchor[r * num_components + c] = anchors[node_rows[r] * num_components + c];
    }
  DTensor toks = gather_rows(output, token_rows);
  DTensor pred = add(decoder.forward(tape, bind, toks),
                     tape.constant(v, num_components, anchor));
  DTensor err = sub(pred, tape.constant(v, num_components, y));
  DTensor sq = sum_axis(mul(err, err), 1);  // v x 1, squared L2 per neighbor
  DTensor w = tape.constant(v, 1, weights);
  return sum_all(mul(sq, w));
}

DTensor combine_losses(DTensor main, DTensor mnp, double alpha) {
  return add(main, mul_scalar(mnp, alpha));
}

}  // namespace mrt
