#include "mrt/model.hpp"

#include <cmath>
#include <stdexcept>

namespace mrt {

Architecture architecture_from_string(const std::string& s) {
  if (s == "mgn") return Architecture::mgn;
  if (s == "transformer") return Architecture::transformer;
  if (s == "transolver") return Architecture::transolver;
  throw std::invalid_argument("unknown architecture: " + s);
}

std::string architecture_to_string(Architecture a) {
  switch (a) {
    case Architecture::mgn: return "mgn";
    case Architecture::transformer: return "transformer";
    case Architecture::transolver: return "transolver";
  }
  return "?";
}

size_t Model::param_count() const {
  size_t c = 0;
  for (const Parameter* p : params) c += p->size();
  return c;
}

void Model::zero_grad() {
  for (Parameter* p : params) p->zero_grad();
}

Model build_model(const ModelConfig& cfg, size_t input_width, size_t output_width,
                  int dim, uint64_t seed) {
  if (cfg.width % cfg.heads != 0)
    throw std::invalid_argument("build_model: width must be divisible by heads");
  Model m;
  m.cfg = cfg;
  m.input_width = input_width;
  m.output_width = output_width;
  m.dim = dim;
  m.init_seed = seed;
  std::mt19937_64 rng(seed);

  size_t d = cfg.width;
  m.encoder = Mlp2("encoder", input_width, d, d, rng);
  if (cfg.pe_mode == PeMode::learned_abs) {
    m.pos = LearnedAbsPe("pos", dim, d, rng);
    m.has_pos = true;
  }
  bool relbias = cfg.pe_mode == PeMode::learned_relbias;
  switch (cfg.architecture) {
    case Architecture::transformer:
      for (size_t l = 0; l < cfg.depth; ++l)
        m.tblocks.emplace_back("block" + std::to_string(l), d, cfg.heads, cfg.ffn(),
                               rng, relbias, dim);
      break;
    case Architecture::mgn:
      m.edge_encoder = Mlp2("edge_encoder", static_cast<size_t>(dim) + 1, d, d, rng);
      for (size_t l = 0; l < cfg.depth; ++l)
        m.gblocks.emplace_back("block" + std::to_string(l), d, d, rng);
      break;
    case Architecture::transolver:
      for (size_t l = 0; l < cfg.depth; ++l)
        m.sblocks.emplace_back("block" + std::to_string(l), d, cfg.slices, cfg.heads,
                               rng);
      break;
  }
  // The decoder's final layer is zero initialized so the untrained model is
  // the identity map on the state.
  m.decoder = Mlp2("decoder", d, d, output_width, rng, /*zero_last=*/true);

  if (cfg.mnp.enabled) {
    m.ring = RingTransformerParams("ring", d, cfg.heads, cfg.ffn(), rng);
    m.ring.attend_center = cfg.mnp.attend_center;
    m.has_ring = true;
  }
  if (cfg.temporal.enabled) {
    size_t sites =
        cfg.temporal.frequency == TemporalFrequency::every_layer ? cfg.depth : 1;
    for (size_t s = 0; s < sites; ++s) {
      m.correctors.emplace_back("corrector" + std::to_string(s), d, cfg.heads,
                                cfg.temporal.gate_mode, rng);
      m.correctors.back().use_gate = cfg.temporal.use_gate;
      m.correctors.back().use_mixer = cfg.temporal.use_mixer;
    }
  }

  m.encoder.collect(m.params);
  if (m.has_pos) m.pos.collect(m.params);
  if (cfg.architecture == Architecture::mgn) m.edge_encoder.collect(m.params);
  for (auto& b : m.tblocks) b.collect(m.params);
  for (auto& b : m.gblocks) b.collect(m.params);
  for (auto& b : m.sblocks) b.collect(m.params);
  m.decoder.collect(m.params);
  if (m.has_ring) m.ring.collect(m.params);
  for (auto& c : m.correctors) c.collect(m.params);
  return m;
}

size_t count_model_params(const ModelConfig& cfg, size_t input_width,
                          size_t output_width, int dim) {
  Model m = build_model(cfg, input_width, output_width, dim, 0);
  return m.param_count();
}

ModelConfig match_param_count(const ModelConfig& base, size_t target,
                              size_t input_width, size_t output_width, int dim) {
  ModelConfig best = base;
  size_t best_diff = SIZE_MAX;
  for (size_t w = base.width; w <= base.width * 4 + 64; w += base.heads) {
    ModelConfig cand = base;
    cand.width = w;
    cand.ffn_hidden = 0;
    size_t count = count_model_params(cand, input_width, output_width, dim);
    // params per gated-MLP hidden unit, per block
    double per_unit = static_cast<double>((3 * w + 2) * cand.depth);
    double need = (static_cast<double>(target) - static_cast<double>(count)) / per_unit;
    long adjust = std::lround(need);
    long ffn = static_cast<long>(cand.ffn()) + adjust;
    if (ffn < 4) ffn = 4;
    cand.ffn_hidden = static_cast<size_t>(ffn);
    count = count_model_params(cand, input_width, output_width, dim);
    size_t diff = count > target ? count - target : target - count;
    if (diff < best_diff) {
      best_diff = diff;
      best = cand;
    }
    if (count >= target && diff * 50 <= target) break;  // within 2 percent
  }
  return best;
}

GraphCache make_graph_cache(const Model& model, const MeshGraph& mesh,
                            uint64_t jumper_seed) {
  GraphCache cache;
  cache.mesh_adj = build_adjacency(mesh);
  cache.mesh = mesh;
  if (model.cfg.architecture == Architecture::transformer &&
      model.cfg.jumper_frac > 0.0) {
    size_t count = static_cast<size_t>(
        std::llround(model.cfg.jumper_frac * static_cast<double>(mesh.num_nodes())));
    size_t max_avail =
        mesh.num_nodes() * (mesh.num_nodes() - 1) / 2 - mesh.num_undirected_edges();
    cache.mesh = add_jumpers(mesh, std::min(count, max_avail), jumper_seed);
  }
  cache.geo = geometric_context(cache.mesh);
  cache.wls = build_wls_operator(mesh);
  size_t dh = model.cfg.width / model.cfg.heads;
  cache.attn = make_attn_context(cache.mesh, model.cfg.pe_mode, model.cfg.mask_mode, dh);
  if (model.cfg.temporal.enabled)
    cache.plain_attn =
        make_attn_context(cache.mesh, PeMode::none, MaskMode::additive, dh);

  if (model.cfg.architecture == Architecture::mgn) {
    size_t e = cache.mesh.edges.size();
    cache.edge_feat_width = static_cast<size_t>(model.dim) + 1;
    cache.edge_feats.resize(e * cache.edge_feat_width);
    cache.mgn.senders.resize(e);
    cache.mgn.receivers.resize(e);
    for (size_t k = 0; k < e; ++k) {
      auto [s, r] = cache.mesh.edges[k];
      cache.mgn.senders[k] = s;
      cache.mgn.receivers[k] = r;
      double norm2 = 0.0;
      for (int a = 0; a < model.dim; ++a) {
        double dxa = cache.mesh.positions[s][a] - cache.mesh.positions[r][a];
        cache.edge_feats[k * cache.edge_feat_width + a] = dxa;
        norm2 += dxa * dxa;
      }
      cache.edge_feats[k * cache.edge_feat_width + model.dim] = std::sqrt(norm2);
    }
  }
  return cache;
}

ForwardResult model_forward(Tape& tape, Binder& bind, Model& model,
                            const GraphCache& cache, const NodeFeatures& feats) {
  if (feats.width != model.input_width)
    throw std::invalid_argument("model_forward: feature width mismatch");
  size_t n = feats.num_nodes;
  ForwardResult out;
  DTensor x = tape.constant(n, feats.width, feats.values);
  DTensor z = model.encoder.forward(tape, bind, x);
  if (model.has_pos)
    z = add(z, model.pos.forward(tape, bind, cache.mesh.positions, model.dim));
  out.latents.push_back(z);

  DTensor edge_latents;
  if (model.cfg.architecture == Architecture::mgn) {
    DTensor ef = tape.constant(cache.mesh.edges.size(), cache.edge_feat_width,
                               cache.edge_feats);
    edge_latents = model.edge_encoder.forward(tape, bind, ef);
  }

  size_t depth = model.cfg.depth;
  for (size_t l = 0; l < depth; ++l) {
    // The block's literal output, with the residual update expressed as
    // Z + delta so the plain path and the predictor-corrector path share it.
    DTensor block_out;
    switch (model.cfg.architecture) {
      case Architecture::transformer:
        block_out = transformer_block(tape, bind, model.tblocks[l], z, cache.attn);
        break;
      case Architecture::mgn: {
        MgnOut o = mgn_block(tape, bind, model.gblocks[l], z, edge_latents, cache.mgn);
        block_out = o.nodes;
        edge_latents = o.edges;
        break;
      }
      case Architecture::transolver:
        block_out = transolver_block(tape, bind, model.sblocks[l], z);
        break;
    }
    DTensor delta = sub(block_out, z);
    bool correct_here =
        model.cfg.temporal.enabled &&
        (model.cfg.temporal.frequency == TemporalFrequency::every_layer ||
         l + 1 == depth);
    if (correct_here) {
      size_t site =
          model.cfg.temporal.frequency == TemporalFrequency::every_layer ? l : 0;
      DTensor z_tilde = add(z, delta);
      z = corrector(tape, bind, model.correctors[site], z_tilde, z, cache.plain_attn);
      if (model.cfg.temporal.intermediate_supervision) out.corrected.push_back(z);
    } else {
      z = add(z, delta);
    }
    out.latents.push_back(z);
  }
  out.delta = model.decoder.forward(tape, bind, z);
  return out;
}

}  // namespace mrt
