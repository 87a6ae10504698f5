#include "mrt/layers.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace mrt {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}  // namespace

PeMode pe_mode_from_string(const std::string& s) {
  if (s == "none") return PeMode::none;
  if (s == "rope") return PeMode::rope;
  if (s == "learned_abs") return PeMode::learned_abs;
  if (s == "learned_relbias") return PeMode::learned_relbias;
  if (s == "distance_weighted") return PeMode::distance_weighted;
  throw std::invalid_argument("unknown pe_mode: " + s);
}

std::string pe_mode_to_string(PeMode m) {
  switch (m) {
    case PeMode::none: return "none";
    case PeMode::rope: return "rope";
    case PeMode::learned_abs: return "learned_abs";
    case PeMode::learned_relbias: return "learned_relbias";
    case PeMode::distance_weighted: return "distance_weighted";
  }
  return "?";
}

void init_uniform(Parameter& p, size_t fan_in, std::mt19937_64& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(std::max<size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> u(-limit, limit);
  for (double& v : p.value) v = u(rng);
}

// --- Mlp2 ---------------------------------------------------------------------

Mlp2::Mlp2(const std::string& name, size_t in, size_t hidden, size_t out,
           std::mt19937_64& rng, bool zero_last)
    : w1(name + ".w1", in, hidden),
      b1(name + ".b1", 1, hidden),
      w2(name + ".w2", hidden, out),
      b2(name + ".b2", 1, out) {
  init_uniform(w1, in, rng);
  if (!zero_last) init_uniform(w2, hidden, rng);
}

DTensor Mlp2::forward(Tape& tape, Binder& bind, DTensor x) {
  DTensor h = silu(add_rowvec(matmul(x, bind(w1)), bind(b1)));
  (void)tape;
  return add_rowvec(matmul(h, bind(w2)), bind(b2));
}

void Mlp2::collect(std::vector<Parameter*>& out) {
  out.push_back(&w1);
  out.push_back(&b1);
  out.push_back(&w2);
  out.push_back(&b2);
}

size_t Mlp2::param_count() const {
  return w1.size() + b1.size() + w2.size() + b2.size();
}

// --- RmsNorm ------------------------------------------------------------------

RmsNorm::RmsNorm(const std::string& name, size_t d) : gain(name + ".gain", 1, d) {
  std::fill(gain.value.begin(), gain.value.end(), 1.0);
}

DTensor RmsNorm::forward(Tape& tape, Binder& bind, DTensor x) {
  (void)tape;
  DTensor ms = mean_axis(mul(x, x), 1);             // N x 1
  DTensor inv = rsqrt(add_scalar(ms, kEps));        // N x 1
  return mul_rowvec(mul_colvec(x, inv), bind(gain));
}

void RmsNorm::collect(std::vector<Parameter*>& out) { out.push_back(&gain); }

size_t RmsNorm::param_count() const { return gain.size(); }

// --- GatedMlp -----------------------------------------------------------------

GatedMlp::GatedMlp(const std::string& name, size_t d, size_t hidden,
                   std::mt19937_64& rng)
    : wg(name + ".wg", d, hidden),
      bg(name + ".bg", 1, hidden),
      wv(name + ".wv", d, hidden),
      bv(name + ".bv", 1, hidden),
      wo(name + ".wo", hidden, d) {
  init_uniform(wg, d, rng);
  init_uniform(wv, d, rng);
  init_uniform(wo, hidden, rng);
}

DTensor GatedMlp::forward(Tape& tape, Binder& bind, DTensor x) {
  (void)tape;
  DTensor gate = silu(add_rowvec(matmul(x, bind(wg)), bind(bg)));
  DTensor value = add_rowvec(matmul(x, bind(wv)), bind(bv));
  return matmul(mul(gate, value), bind(wo));
}

void GatedMlp::collect(std::vector<Parameter*>& out) {
  out.push_back(&wg);
  out.push_back(&bg);
  out.push_back(&wv);
  out.push_back(&bv);
  out.push_back(&wo);
}

size_t GatedMlp::param_count() const {
  return wg.size() + bg.size() + wv.size() + bv.size() + wo.size();
}

// --- RoPE ---------------------------------------------------------------------

RopeConfig RopeConfig::make(size_t head_width, int dim, double mesh_size_h,
                            double domain_diameter) {
  if (dim != 2 && dim != 3)
    throw std::invalid_argument("RopeConfig: dim must be 2 or 3");
  RopeConfig cfg;
  cfg.dim = dim;
  cfg.head_width = head_width;
  cfg.num_groups = head_width / (2 * static_cast<size_t>(dim));
  if (mesh_size_h <= 0.0)
    throw std::invalid_argument("RopeConfig: mesh size h must be positive");
  double w_max = 2.0 * kPi / mesh_size_h;
  double w_min = 2.0 * kPi / std::max(domain_diameter, mesh_size_h);
  double gamma = 0.5;
  if (cfg.num_groups > 1 && w_min < w_max)
    gamma = std::pow(w_min / w_max, 1.0 / static_cast<double>(cfg.num_groups - 1));
  cfg.freqs.resize(cfg.num_groups);
  double w = w_max;
  for (size_t g = 0; g < cfg.num_groups; ++g) {
    cfg.freqs[g] = w;
    w *= gamma;
  }
  return cfg;
}

void rope_tables(const RopeConfig& cfg,
                 const std::vector<std::array<double, 3>>& coords,
                 std::vector<double>& cos_tab, std::vector<double>& sin_tab) {
  size_t n = coords.size();
  size_t pairs = cfg.num_pairs();
  cos_tab.assign(n * pairs, 1.0);
  sin_tab.assign(n * pairs, 0.0);
  for (size_t i = 0; i < n; ++i) {
    for (size_t g = 0; g < cfg.num_groups; ++g) {
      for (int a = 0; a < cfg.dim; ++a) {
        size_t p = g * static_cast<size_t>(cfg.dim) + static_cast<size_t>(a);
        double theta = cfg.freqs[g] * coords[i][a];
        cos_tab[i * pairs + p] = std::cos(theta);
        sin_tab[i * pairs + p] = std::sin(theta);
      }
    }
  }
}

DTensor apply_rope(Tape& tape, DTensor q_or_k,
                   const std::vector<std::array<double, 3>>& centered_positions,
                   const RopeConfig& cfg) {
  if (tape.cols(q_or_k) != cfg.head_width)
    throw std::invalid_argument("apply_rope: tensor width does not match RopeConfig");
  if (tape.rows(q_or_k) != centered_positions.size())
    throw std::invalid_argument("apply_rope: row count does not match positions");
  std::vector<double> ct, st;
  rope_tables(cfg, centered_positions, ct, st);
  return rope_rotate(q_or_k, ct, st, cfg.num_pairs());
}

// --- attention context ------------------------------------------------------------

AttnContext make_attn_context(const MeshGraph& mesh, PeMode pe_mode,
                              MaskMode mask_mode, size_t head_width) {
  AttnContext ctx;
  size_t n = mesh.num_nodes();
  ctx.n = n;
  ctx.pe_mode = pe_mode;
  ctx.mask_mode = mask_mode;
  ctx.nonedge.assign(n * n, 1);
  for (size_t i = 0; i < n; ++i) ctx.nonedge[i * n + i] = 0;  // self-loops
  for (auto [s, r] : mesh.edges) ctx.nonedge[s * n + r] = 0;

  GeometricContext geo = geometric_context(mesh);
  if (pe_mode == PeMode::rope) {
    double diam = 0.0;
    for (const auto& p : geo.centered_positions)
      diam = std::max(diam, 2.0 * std::hypot(p[0], std::hypot(p[1], p[2])));
    ctx.rope = RopeConfig::make(head_width, mesh.dim, geo.mesh_size_h,
                                std::max(diam, geo.mesh_size_h));
    rope_tables(ctx.rope, geo.centered_positions, ctx.rope_cos, ctx.rope_sin);
  }
  if (pe_mode == PeMode::distance_weighted)
    ctx.dist_bias = [&] {
      auto w = distance_weighted_adjacency(mesh);
      for (double& v : w) v = v > 0.0 ? std::log(v) : 0.0;
      return w;
    }();
  if (pe_mode == PeMode::learned_relbias) {
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < n; ++j)
        if (!ctx.nonedge[i * n + j]) {
          ctx.pair_flat.push_back(static_cast<int64_t>(i * n + j));
          for (int a = 0; a < mesh.dim; ++a)
            ctx.pair_dpos.push_back(mesh.positions[j][a] - mesh.positions[i][a]);
        }
  }
  return ctx;
}

AttnContext full_attn_context(size_t n) {
  AttnContext ctx;
  ctx.n = n;
  ctx.nonedge.assign(n * n, 0);
  return ctx;
}

std::vector<double> distance_weighted_adjacency(const MeshGraph& mesh) {
  size_t n = mesh.num_nodes();
  GeometricContext geo = geometric_context(mesh);
  double h = geo.mesh_size_h;
  std::vector<double> w(n * n, 0.0);
  for (size_t i = 0; i < n; ++i) w[i * n + i] = 1.0;
  for (auto [s, r] : mesh.edges) {
    double dx = mesh.positions[s][0] - mesh.positions[r][0];
    double dy = mesh.positions[s][1] - mesh.positions[r][1];
    double dz = mesh.positions[s][2] - mesh.positions[r][2];
    double d = std::sqrt(dx * dx + dy * dy + dz * dz);
    w[s * n + r] = std::exp(-d / h);
  }
  return w;
}

// --- attention ----------------------------------------------------------------------

MhaParams::MhaParams(const std::string& name, size_t d, size_t heads_,
                     std::mt19937_64& rng, bool with_relbias, int dim)
    : heads(heads_),
      wq(name + ".wq", d, d),
      wk(name + ".wk", d, d),
      wv(name + ".wv", d, d),
      wo(name + ".wo", d, d) {
  if (d % heads != 0)
    throw std::invalid_argument("MhaParams: width not divisible by head count");
  init_uniform(wq, d, rng);
  init_uniform(wk, d, rng);
  init_uniform(wv, d, rng);
  init_uniform(wo, d, rng);
  if (with_relbias) {
    relbias = Mlp2(name + ".relbias", static_cast<size_t>(dim), 16, heads, rng);
    has_relbias = true;
  }
}

void MhaParams::collect(std::vector<Parameter*>& out) {
  out.push_back(&wq);
  out.push_back(&wk);
  out.push_back(&wv);
  out.push_back(&wo);
  if (has_relbias) relbias.collect(out);
}

size_t MhaParams::param_count() const {
  size_t c = wq.size() + wk.size() + wv.size() + wo.size();
  if (has_relbias) c += relbias.param_count();
  return c;
}

DTensor masked_attention(Tape& tape, Binder& bind, MhaParams& params, DTensor q_input,
                         DTensor kv_input, const AttnContext& ctx, MhaDebug* debug) {
  size_t n = ctx.n;
  if (tape.rows(q_input) != n || tape.rows(kv_input) != n)
    throw std::invalid_argument("masked_attention: input rows do not match context");
  for (size_t i = 0; i < n; ++i) {
    bool any = false;
    for (size_t j = 0; j < n && !any; ++j) any = !ctx.nonedge[i * n + j];
    if (!any)
      throw std::invalid_argument(
          "masked_attention: row " + std::to_string(i) +
          " admits no entries; attention graphs need self-loops");
  }
  size_t d = tape.cols(q_input);
  size_t H = params.heads;
  size_t dh = d / H;

  DTensor q = matmul(q_input, bind(params.wq));
  DTensor k = matmul(kv_input, bind(params.wk));
  DTensor v = matmul(kv_input, bind(params.wv));

  // Learned relative bias per admitted pair, evaluated once for all heads.
  DTensor pair_bias;  // pairs x H
  if (ctx.pe_mode == PeMode::learned_relbias) {
    if (!params.has_relbias)
      throw std::invalid_argument("masked_attention: relbias mode without relbias MLP");
    size_t pairs = ctx.pair_flat.size();
    size_t dim = ctx.pair_dpos.size() / std::max<size_t>(pairs, 1);
    DTensor dpos = tape.constant(pairs, dim, ctx.pair_dpos);
    pair_bias = params.relbias.forward(tape, bind, dpos);
  }

  DTensor heads_out;
  for (size_t h = 0; h < H; ++h) {
    DTensor qh = slice_cols(q, h * dh, dh);
    DTensor kh = slice_cols(k, h * dh, dh);
    DTensor vh = slice_cols(v, h * dh, dh);
    if (ctx.pe_mode == PeMode::rope) {
      qh = rope_rotate(qh, ctx.rope_cos, ctx.rope_sin, ctx.rope.num_pairs());
      kh = rope_rotate(kh, ctx.rope_cos, ctx.rope_sin, ctx.rope.num_pairs());
    }
    DTensor logits = mul_scalar(matmul(qh, transpose(kh)),
                                1.0 / std::sqrt(static_cast<double>(dh)));
    if (ctx.pe_mode == PeMode::learned_relbias) {
      DTensor col = slice_cols(pair_bias, h, 1);
      logits = add(logits, scatter_flat(col, ctx.pair_flat, n, n));
    }
    if (ctx.pe_mode == PeMode::distance_weighted && !ctx.dist_bias.empty())
      logits = add(logits, tape.constant(n, n, ctx.dist_bias));
    DTensor att;
    if (ctx.mask_mode == MaskMode::additive) {
      att = softmax(masked_fill(logits, ctx.nonedge, kNegInf), 1);
    } else {
      // Literal Hadamard reading: zero the logits of non-edges, softmax over all.
      std::vector<double> a(n * n, 1.0);
      for (size_t i = 0; i < n * n; ++i)
        if (ctx.nonedge[i]) a[i] = 0.0;
      att = softmax(mul(logits, tape.constant(n, n, a)), 1);
    }
    if (debug) debug->head_weights.push_back(att);
    DTensor oh = matmul(att, vh);
    heads_out = h == 0 ? oh : concat_cols(heads_out, oh);
  }
  return matmul(heads_out, bind(params.wo));
}

// --- learned absolute embedding ------------------------------------------------------

LearnedAbsPe::LearnedAbsPe(const std::string& name, int dim, size_t d,
                           std::mt19937_64& rng)
    : mlp(name + ".pos", static_cast<size_t>(dim), d, d, rng) {}

DTensor LearnedAbsPe::forward(Tape& tape, Binder& bind,
                              const std::vector<std::array<double, 3>>& positions,
                              int dim) {
  size_t n = positions.size();
  std::vector<double> p(n * static_cast<size_t>(dim));
  for (size_t i = 0; i < n; ++i)
    for (int a = 0; a < dim; ++a) p[i * dim + a] = positions[i][a];
  DTensor pos = tape.constant(n, static_cast<size_t>(dim), p);
  return mlp.forward(tape, bind, pos);
}

void LearnedAbsPe::collect(std::vector<Parameter*>& out) { mlp.collect(out); }

size_t LearnedAbsPe::param_count() const { return mlp.param_count(); }

// --- MeshGraphNet block ---------------------------------------------------------------

MgnBlockParams::MgnBlockParams(const std::string& name, size_t d, size_t d_edge,
                               std::mt19937_64& rng)
    : edge_mlp(name + ".edge", d_edge + 2 * d, d, d_edge, rng),
      node_mlp(name + ".node", d + d_edge, d, d, rng) {}

void MgnBlockParams::collect(std::vector<Parameter*>& out) {
  edge_mlp.collect(out);
  node_mlp.collect(out);
}

size_t MgnBlockParams::param_count() const {
  return edge_mlp.param_count() + node_mlp.param_count();
}

MgnOut mgn_block(Tape& tape, Binder& bind, MgnBlockParams& params, DTensor z,
                 DTensor edge_latents, const MgnGraph& graph) {
  if (tape.rows(edge_latents) != graph.senders.size())
    throw std::invalid_argument("mgn_block: edge latents misaligned with edge list");
  DTensor zr = gather_rows(z, graph.receivers);
  DTensor zs = gather_rows(z, graph.senders);
  DTensor e_new =
      params.edge_mlp.forward(tape, bind, concat_cols(concat_cols(edge_latents, zr), zs));
  DTensor agg = scatter_sum_rows(e_new, graph.receivers, tape.rows(z));
  DTensor z_new = params.node_mlp.forward(tape, bind, concat_cols(z, agg));
  return {z_new, e_new};
}

// --- Transolver block -------------------------------------------------------------------

TransolverParams::TransolverParams(const std::string& name, size_t d,
                                   size_t num_slices_, size_t heads,
                                   std::mt19937_64& rng)
    : num_slices(num_slices_),
      slice_mlp(name + ".slice", d, d, num_slices_, rng),
      attn(name + ".attn", d, heads, rng) {}

void TransolverParams::collect(std::vector<Parameter*>& out) {
  slice_mlp.collect(out);
  attn.collect(out);
}

size_t TransolverParams::param_count() const {
  return slice_mlp.param_count() + attn.param_count();
}

DTensor transolver_block(Tape& tape, Binder& bind, TransolverParams& params,
                         DTensor x) {
  size_t m = params.num_slices;
  DTensor w = softmax(params.slice_mlp.forward(tape, bind, x), 1);  // N x M
  DTensor wT = transpose(w);                                        // M x N
  DTensor num = matmul(wT, x);                                      // M x d
  DTensor den = sum_axis(wT, 1);                                    // M x 1
  DTensor slices = mul_colvec(num, recip(den));
  AttnContext full = full_attn_context(m);
  DTensor attended = masked_attention(tape, bind, params.attn, slices, slices, full);
  return matmul(w, attended);
}

// --- Transformer block --------------------------------------------------------------------

TransformerBlockParams::TransformerBlockParams(const std::string& name, size_t d,
                                               size_t heads, size_t ffn_hidden,
                                               std::mt19937_64& rng,
                                               bool with_relbias, int dim)
    : attn(name + ".attn", d, heads, rng, with_relbias, dim),
      norm1(name + ".norm1", d),
      norm2(name + ".norm2", d),
      ffn(name + ".ffn", d, ffn_hidden, rng) {}

void TransformerBlockParams::collect(std::vector<Parameter*>& out) {
  attn.collect(out);
  norm1.collect(out);
  norm2.collect(out);
  ffn.collect(out);
}

size_t TransformerBlockParams::param_count() const {
  return attn.param_count() + norm1.param_count() + norm2.param_count() +
         ffn.param_count();
}

DTensor transformer_block(Tape& tape, Binder& bind, TransformerBlockParams& params,
                          DTensor z, const AttnContext& ctx) {
  DTensor zp = params.norm1.forward(tape, bind,
                                    add(masked_mha(tape, bind, params.attn, z, ctx), z));
  return params.norm2.forward(tape, bind,
                              add(params.ffn.forward(tape, bind, zp), zp));
}

}  // namespace mrt
