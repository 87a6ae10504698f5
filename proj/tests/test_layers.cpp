#include <doctest.h>

#include <cmath>
#include <random>

#include "mrt/layers.hpp"
#include "mrt/synthetic.hpp"

using namespace mrt;

namespace {

MeshGraph fixture_mesh(size_t n = 8, uint64_t seed = 2) {
  return generate_mesh(n, seed);
}

std::vector<double> random_vec(size_t n, uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

// Gradient check of a block output projected to a scalar, with respect to
// one chosen leaf (input or a parameter lease).
double block_grad_check(
    const std::function<DTensor(Tape&, Binder&, DTensor)>& block, size_t rows,
    size_t cols, const std::vector<double>& x0, uint64_t proj_seed = 77) {
  std::vector<double> proj;  // fixed projection so the output is scalar
  auto f = [&](Tape& tape, DTensor x) {
    Binder bind(tape);
    DTensor y = block(tape, bind, x);
    if (proj.empty())
      proj = random_vec(tape.rows(y) * tape.cols(y), proj_seed);
    DTensor p = tape.constant(tape.rows(y), tape.cols(y), proj);
    return sum_all(mul(y, p));
  };
  return finite_difference_check(f, rows, cols, x0, 1e-4);
}

}  // namespace

TEST_CASE("encoder: zero weights give zero latent, gradient checks pass") {
  std::mt19937_64 rng(1);
  Mlp2 enc("enc", 6, 8, 8, rng);
  {
    Mlp2 zero("zero", 6, 8, 8, rng);
    for (Parameter* p : {&zero.w1, &zero.b1, &zero.w2, &zero.b2})
      std::fill(p->value.begin(), p->value.end(), 0.0);
    Tape tape;
    Binder bind(tape);
    DTensor x = tape.constant(4, 6, random_vec(24, 3));
    DTensor z = zero.forward(tape, bind, x);
    for (double v : tape.val(z)) CHECK(v == 0.0);
  }
  {
    // Identity-like square first layer reproduces the input pre-activation.
    Mlp2 idm("idm", 4, 4, 4, rng);
    std::fill(idm.w1.value.begin(), idm.w1.value.end(), 0.0);
    for (size_t i = 0; i < 4; ++i) idm.w1.value[i * 4 + i] = 1.0;
    std::fill(idm.b1.value.begin(), idm.b1.value.end(), 0.0);
    Tape tape;
    Binder bind(tape);
    std::vector<double> xv = random_vec(8, 5);
    DTensor x = tape.constant(2, 4, xv);
    DTensor pre = add_rowvec(matmul(x, bind(idm.w1)), bind(idm.b1));
    CHECK(tape.val(pre) == xv);
  }
  double err = block_grad_check(
      [&](Tape& tape, Binder& bind, DTensor x) { return enc.forward(tape, bind, x); },
      4, 6, random_vec(24, 7));
  CHECK(err < 1e-5);
}

TEST_CASE("rms_norm: constant rows normalize to sign, unit rms before scale") {
  RmsNorm norm("n", 4);
  Tape tape;
  Binder bind(tape);
  DTensor x = tape.constant(2, 4, {3, 3, 3, 3, -2, -2, -2, -2});
  DTensor y = norm.forward(tape, bind, x);
  for (int k = 0; k < 4; ++k) {
    CHECK(tape.val(y)[k] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(tape.val(y)[4 + k] == doctest::Approx(-1.0).epsilon(1e-9));
  }
  // Unit rms per row before the learned scale for random input.
  DTensor r = tape.constant(3, 4, random_vec(12, 9));
  DTensor yr = norm.forward(tape, bind, r);
  const auto& v = tape.val(yr);
  for (size_t i = 0; i < 3; ++i) {
    double ms = 0;
    for (size_t k = 0; k < 4; ++k) ms += v[i * 4 + k] * v[i * 4 + k];
    CHECK(std::sqrt(ms / 4) == doctest::Approx(1.0).epsilon(1e-9));
  }
  double err = block_grad_check(
      [&](Tape& t, Binder& b, DTensor x2) { return norm.forward(t, b, x2); }, 3, 4,
      random_vec(12, 13, 0.8));
  CHECK(err < 1e-5);
}

TEST_CASE("gated_mlp: zero gate branch zeroes the output") {
  std::mt19937_64 rng(2);
  GatedMlp g("g", 4, 8, rng);
  std::fill(g.wg.value.begin(), g.wg.value.end(), 0.0);
  std::fill(g.bg.value.begin(), g.bg.value.end(), 0.0);
  Tape tape;
  Binder bind(tape);
  DTensor x = tape.constant(3, 4, random_vec(12, 3));
  DTensor y = g.forward(tape, bind, x);
  for (double v : tape.val(y)) CHECK(v == 0.0);

  GatedMlp g2("g2", 4, 8, rng);
  double err = block_grad_check(
      [&](Tape& t, Binder& b, DTensor x2) { return g2.forward(t, b, x2); }, 3, 4,
      random_vec(12, 17));
  CHECK(err < 1e-5);
}

TEST_CASE("masked_mha: identity-only support returns V rows") {
  // Isolated nodes: attention mask reduces to self-loops.
  MeshGraph mesh = MeshGraph::from_undirected(
      {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}}, 2, {}, {});
  std::mt19937_64 rng(5);
  MhaParams params("mha", 4, 1, rng);
  // V and O projections set to identity, Q/K arbitrary.
  std::fill(params.wv.value.begin(), params.wv.value.end(), 0.0);
  std::fill(params.wo.value.begin(), params.wo.value.end(), 0.0);
  for (size_t i = 0; i < 4; ++i) {
    params.wv.value[i * 4 + i] = 1.0;
    params.wo.value[i * 4 + i] = 1.0;
  }
  AttnContext ctx = make_attn_context(mesh, PeMode::none, MaskMode::additive, 4);
  Tape tape;
  Binder bind(tape);
  std::vector<double> zv = random_vec(12, 8);
  DTensor z = tape.constant(3, 4, zv);
  MhaDebug dbg;
  DTensor y = masked_mha(tape, bind, params, z, ctx, &dbg);
  for (size_t i = 0; i < 12; ++i)
    CHECK(tape.val(y)[i] == doctest::Approx(zv[i]).epsilon(1e-12));
  // Self-attention weight exactly 1.
  const auto& w = tape.val(dbg.head_weights[0]);
  for (size_t i = 0; i < 3; ++i) CHECK(w[i * 3 + i] == doctest::Approx(1.0));
}

TEST_CASE("masked_mha: 3-node hand computation with full support") {
  MeshGraph mesh = MeshGraph::from_undirected(
      {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}}, 2, {{0, 1}, {1, 2}, {0, 2}}, {});
  std::mt19937_64 rng(6);
  MhaParams params("mha", 2, 1, rng);
  // Hand-set projections: Q = K = V = Z (identity projections), O = identity.
  for (Parameter* p : {&params.wq, &params.wk, &params.wv, &params.wo}) {
    std::fill(p->value.begin(), p->value.end(), 0.0);
    p->value[0] = 1.0;
    p->value[3] = 1.0;
  }
  AttnContext ctx = make_attn_context(mesh, PeMode::none, MaskMode::additive, 2);
  Tape tape;
  Binder bind(tape);
  std::vector<double> zv = {1.0, 0.0, 0.0, 1.0, 0.5, 0.5};
  DTensor z = tape.constant(3, 2, zv);
  DTensor y = masked_mha(tape, bind, params, z, ctx);

  // Hand computation: logits = Z Z^T / sqrt(2), softmax rows, times Z.
  double s = 1.0 / std::sqrt(2.0);
  for (size_t i = 0; i < 3; ++i) {
    double logits[3], w[3], denom = 0;
    for (size_t j = 0; j < 3; ++j) {
      double dot = zv[i * 2] * zv[j * 2] + zv[i * 2 + 1] * zv[j * 2 + 1];
      logits[j] = dot * s;
    }
    double m = std::max({logits[0], logits[1], logits[2]});
    for (size_t j = 0; j < 3; ++j) {
      w[j] = std::exp(logits[j] - m);
      denom += w[j];
    }
    for (size_t k = 0; k < 2; ++k) {
      double expect = 0;
      for (size_t j = 0; j < 3; ++j) expect += w[j] / denom * zv[j * 2 + k];
      CHECK(tape.val(y)[i * 2 + k] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("masked_mha: attention rows are distributions over admitted entries") {
  MeshGraph mesh = fixture_mesh(12, 3);
  std::mt19937_64 rng(7);
  MhaParams params("mha", 8, 2, rng);
  AttnContext ctx = make_attn_context(mesh, PeMode::none, MaskMode::additive, 4);
  Tape tape;
  Binder bind(tape);
  size_t n = mesh.num_nodes();
  DTensor z = tape.constant(n, 8, random_vec(n * 8, 10));
  MhaDebug dbg;
  masked_mha(tape, bind, params, z, ctx, &dbg);
  for (DTensor w : dbg.head_weights) {
    const auto& v = tape.val(w);
    for (size_t i = 0; i < n; ++i) {
      double sum = 0;
      for (size_t j = 0; j < n; ++j) {
        CHECK(v[i * n + j] >= 0.0);
        if (ctx.nonedge[i * n + j]) CHECK(v[i * n + j] == 0.0);
        sum += v[i * n + j];
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("masked_mha: permutation equivariance") {
  MeshGraph mesh = fixture_mesh(9, 4);
  size_t n = mesh.num_nodes();
  std::mt19937_64 rng(8);
  MhaParams params("mha", 4, 2, rng);

  std::vector<uint32_t> perm(n);
  for (uint32_t i = 0; i < n; ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);

  MeshGraph permuted = mesh;
  for (uint32_t i = 0; i < n; ++i) {
    permuted.positions[perm[i]] = mesh.positions[i];
    permuted.node_type[perm[i]] = mesh.node_type[i];
  }
  for (auto& [s, r] : permuted.edges) {
    s = perm[s];
    r = perm[r];
  }

  std::vector<double> zv = random_vec(n * 4, 11);
  std::vector<double> zp(n * 4);
  for (uint32_t i = 0; i < n; ++i)
    for (size_t k = 0; k < 4; ++k) zp[perm[i] * 4 + k] = zv[i * 4 + k];

  AttnContext ctx1 = make_attn_context(mesh, PeMode::none, MaskMode::additive, 2);
  AttnContext ctx2 = make_attn_context(permuted, PeMode::none, MaskMode::additive, 2);
  Tape tape;
  Binder bind(tape);
  DTensor y1 = masked_mha(tape, bind, params, tape.constant(n, 4, zv), ctx1);
  DTensor y2 = masked_mha(tape, bind, params, tape.constant(n, 4, zp), ctx2);
  for (uint32_t i = 0; i < n; ++i)
    for (size_t k = 0; k < 4; ++k)
      CHECK(tape.val(y1)[i * 4 + k] ==
            doctest::Approx(tape.val(y2)[perm[i] * 4 + k]).epsilon(1e-12));
}

TEST_CASE("masked_mha: zero-admitted row errors") {
  AttnContext ctx = full_attn_context(3);
  for (size_t j = 0; j < 3; ++j) ctx.nonedge[1 * 3 + j] = 1;  // row 1 empty
  std::mt19937_64 rng(9);
  MhaParams params("mha", 4, 1, rng);
  Tape tape;
  Binder bind(tape);
  DTensor z = tape.constant(3, 4, random_vec(12, 12));
  CHECK_THROWS_WITH_AS(masked_mha(tape, bind, params, z, ctx),
                       doctest::Contains("self-loops"), std::invalid_argument);
}

TEST_CASE("rope: origin positions give identity, quarter turn rotates a pair") {
  RopeConfig cfg = RopeConfig::make(4, 2, 1.0, 2.0);
  CHECK(cfg.num_groups == 1);
  CHECK(cfg.num_pairs() == 2);

  Tape tape;
  std::vector<std::array<double, 3>> origin = {{0, 0, 0}};
  DTensor q = tape.constant(1, 4, {1, 0, 0.5, -2});
  DTensor rq = apply_rope(tape, q, origin, cfg);
  CHECK(tape.val(rq) == tape.val(q));

  // Single pair, frequency 1, coordinate pi/2: [1,0] -> [0,1].
  RopeConfig one;
  one.dim = 2;
  one.head_width = 2;
  one.num_groups = 1;
  one.freqs = {1.0};
  // Only the x-axis pair exists in a width-2 head... num_pairs = 2 requires
  // width 4; use width 2 with dim 1 semantics by placing the coordinate on x
  // and masking the y pair out of range. Simpler: width 4, zero y-coordinate.
  RopeConfig cfg2 = RopeConfig::make(4, 2, 2.0 * 3.14159265358979323846, 10.0);
  cfg2.freqs = {1.0};
  std::vector<std::array<double, 3>> pos = {{3.14159265358979323846 / 2, 0, 0}};
  Tape t2;
  DTensor v = t2.constant(1, 4, {1, 0, 1, 0});
  DTensor rv = apply_rope(t2, v, pos, cfg2);
  CHECK(t2.val(rv)[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(t2.val(rv)[1] == doctest::Approx(1.0).epsilon(1e-12));
  // y-axis pair: coordinate 0 -> unchanged.
  CHECK(t2.val(rv)[2] == doctest::Approx(1.0));
  CHECK(t2.val(rv)[3] == doctest::Approx(0.0));
}

TEST_CASE("rope: relative-angle identity over 200 random draws") {
  RopeConfig cfg = RopeConfig::make(8, 2, 0.05, 1.5);
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  double worst = 0.0;
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> qv(8), kv(8);
    for (double& x : qv) x = u(rng);
    for (double& x : kv) x = u(rng);
    std::array<double, 3> pi{u(rng), u(rng), 0}, pj{u(rng), u(rng), 0};
    std::array<double, 3> dp{pj[0] - pi[0], pj[1] - pi[1], 0};

    Tape tape;
    DTensor q = tape.constant(1, 8, qv);
    DTensor k = tape.constant(1, 8, kv);
    DTensor rq = apply_rope(tape, q, {pi}, cfg);
    DTensor rk = apply_rope(tape, k, {pj}, cfg);
    DTensor rk_rel = apply_rope(tape, k, {dp}, cfg);
    double lhs = 0, rhs = 0;
    for (size_t c = 0; c < 8; ++c) {
      lhs += tape.val(rq)[c] * tape.val(rk)[c];
      rhs += qv[c] * tape.val(rk_rel)[c];
    }
    worst = std::max(worst, std::abs(lhs - rhs) / (std::abs(rhs) + 1e-12));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("rope: norm preservation per pair") {
  RopeConfig cfg = RopeConfig::make(8, 2, 0.05, 1.5);
  Tape tape;
  std::vector<double> qv = random_vec(8, 21);
  std::vector<std::array<double, 3>> pos = {{0.3, -0.2, 0}};
  DTensor q = tape.constant(1, 8, qv);
  DTensor rq = apply_rope(tape, q, pos, cfg);
  for (size_t p = 0; p < cfg.num_pairs(); ++p) {
    double before = std::hypot(qv[2 * p], qv[2 * p + 1]);
    double after = std::hypot(tape.val(rq)[2 * p], tape.val(rq)[2 * p + 1]);
    CHECK(after == doctest::Approx(before).epsilon(1e-12));
  }
}

TEST_CASE("rope: attention is translation invariant after recentering") {
  MeshGraph mesh = fixture_mesh(10, 5);
  std::mt19937_64 rng(22);
  MhaParams params("mha", 8, 2, rng);
  std::vector<double> zv = random_vec(mesh.num_nodes() * 8, 23);

  auto run = [&](const MeshGraph& m) {
    AttnContext ctx = make_attn_context(m, PeMode::rope, MaskMode::additive, 4);
    Tape tape;
    Binder bind(tape);
    DTensor z = tape.constant(m.num_nodes(), 8, zv);
    return tape.val(masked_mha(tape, bind, params, z, ctx));
  };
  auto base = run(mesh);
  MeshGraph moved = mesh;
  for (auto& p : moved.positions) {
    p[0] += 12.5;
    p[1] -= 3.75;
  }
  auto shifted = run(moved);
  double worst = 0;
  for (size_t i = 0; i < base.size(); ++i)
    worst = std::max(worst,
                     std::abs(base[i] - shifted[i]) / (std::abs(base[i]) + 1e-12));
  CHECK(worst < 1e-9);
}

TEST_CASE("positional alternates") {
  std::mt19937_64 rng(31);
  // Zero-initialized learned absolute embedding gives a zero addend.
  LearnedAbsPe pe("pe", 2, 6, rng);
  for (Parameter* p : {&pe.mlp.w1, &pe.mlp.b1, &pe.mlp.w2, &pe.mlp.b2})
    std::fill(p->value.begin(), p->value.end(), 0.0);
  Tape tape;
  Binder bind(tape);
  DTensor addend = pe.forward(tape, bind, {{0.3, 0.4, 0}, {0.1, 0.9, 0}}, 2);
  for (double v : tape.val(addend)) CHECK(v == 0.0);

  // Relative bias at zero offset equals the MLP's origin value.
  Mlp2 rb("rb", 2, 8, 2, rng);
  DTensor zero1 = tape.constant(1, 2, {0.0, 0.0});
  DTensor zero2 = tape.constant(1, 2, {0.0, 0.0});
  DTensor b1 = rb.forward(tape, bind, zero1);
  DTensor b2 = rb.forward(tape, bind, zero2);
  CHECK(tape.val(b1) == tape.val(b2));

  // Distance weights: unit-length edges weigh exp(-1/h).
  MeshGraph unit = MeshGraph::from_undirected(
      {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}}, 2, {{0, 1}, {1, 2}}, {});
  auto w = distance_weighted_adjacency(unit);
  size_t n = 3;
  GeometricContext geo = geometric_context(unit);
  double expect = std::exp(-1.0 / geo.mesh_size_h);
  CHECK(w[0 * n + 1] == doctest::Approx(expect).epsilon(1e-12));
  CHECK(w[1 * n + 2] == doctest::Approx(expect).epsilon(1e-12));
  CHECK(w[0 * n + 2] == 0.0);
  CHECK(w[0 * n + 0] == 1.0);
}

TEST_CASE("mgn_block: zero edge output and single-edge aggregation") {
  std::mt19937_64 rng(41);
  MeshGraph mesh = MeshGraph::from_undirected(
      {{0, 0, 0}, {1, 0, 0}}, 2, {{0, 1}}, {});
  MgnGraph graph;
  graph.senders = {0, 1};
  graph.receivers = {1, 0};

  MgnBlockParams params("mgn", 4, 4, rng);
  // Zero the edge MLP's output layer: aggregation becomes exactly zero.
  std::fill(params.edge_mlp.w2.value.begin(), params.edge_mlp.w2.value.end(), 0.0);
  std::fill(params.edge_mlp.b2.value.begin(), params.edge_mlp.b2.value.end(), 0.0);

  Tape tape;
  Binder bind(tape);
  DTensor z = tape.constant(2, 4, random_vec(8, 42));
  DTensor e = tape.constant(2, 4, random_vec(8, 43));
  MgnOut out = mgn_block(tape, bind, params, z, e, graph);
  for (double v : tape.val(out.edges)) CHECK(v == 0.0);

  // With nonzero edge MLP, each node's aggregation is exactly its one edge.
  MgnBlockParams p2("mgn2", 4, 4, rng);
  MgnOut out2 = mgn_block(tape, bind, p2, z, e, graph);
  // Check via the dense scatter-sum oracle on a larger mesh below.
  (void)out2;

  MeshGraph big = fixture_mesh(30, 6);
  Adjacency adj = build_adjacency(big);
  (void)adj;
  MgnGraph bg;
  for (auto [s, r] : big.edges) {
    bg.senders.push_back(s);
    bg.receivers.push_back(r);
  }
  size_t ne = big.edges.size(), n = big.num_nodes();
  Tape t2;
  Binder b2(t2);
  DTensor zz = t2.constant(n, 4, random_vec(n * 4, 44));
  DTensor ee = t2.constant(ne, 4, random_vec(ne * 4, 45));
  MgnBlockParams p3("mgn3", 4, 4, rng);
  MgnOut o3 = mgn_block(t2, b2, p3, zz, ee, bg);
  // Dense oracle: recompute aggregation by scanning all edges per node.
  const auto& enew = t2.val(o3.edges);
  std::vector<double> agg(n * 4, 0.0);
  for (size_t k = 0; k < ne; ++k)
    for (size_t c = 0; c < 4; ++c)
      agg[bg.receivers[k] * 4 + c] += enew[k * 4 + c];
  // Rebuild the node update from the aggregation and compare.
  Tape t3;
  Binder b3(t3);
  DTensor cat = concat_cols(t3.constant(n, 4, t2.val(zz)), t3.constant(n, 4, agg));
  DTensor expect = p3.node_mlp.forward(t3, b3, cat);
  for (size_t i = 0; i < n * 4; ++i)
    CHECK(t2.val(o3.nodes)[i] == doctest::Approx(t3.val(expect)[i]).epsilon(1e-12));
}

TEST_CASE("mgn_block: misaligned edge latents error") {
  std::mt19937_64 rng(46);
  MgnBlockParams params("mgn", 4, 4, rng);
  MgnGraph graph;
  graph.senders = {0, 1};
  graph.receivers = {1, 0};
  Tape tape;
  Binder bind(tape);
  DTensor z = tape.constant(2, 4, random_vec(8, 47));
  DTensor e = tape.constant(3, 4, random_vec(12, 48));  // wrong row count
  CHECK_THROWS_AS(mgn_block(tape, bind, params, z, e, graph), std::invalid_argument);
}

TEST_CASE("transolver_block: M=1 broadcasts one vector to every node") {
  std::mt19937_64 rng(51);
  TransolverParams params("ts", 4, 1, 1, rng);
  Tape tape;
  Binder bind(tape);
  size_t n = 6;
  DTensor x = tape.constant(n, 4, random_vec(n * 4, 52));
  DTensor y = transolver_block(tape, bind, params, x);
  const auto& v = tape.val(y);
  for (size_t i = 1; i < n; ++i)
    for (size_t c = 0; c < 4; ++c)
      CHECK(v[i * 4 + c] == doctest::Approx(v[c]).epsilon(1e-12));
}

TEST_CASE("transolver_block: zero slice MLP gives slice state = mean latent") {
  std::mt19937_64 rng(53);
  TransolverParams params("ts", 4, 3, 1, rng);
  std::fill(params.slice_mlp.w2.value.begin(), params.slice_mlp.w2.value.end(), 0.0);
  std::fill(params.slice_mlp.b2.value.begin(), params.slice_mlp.b2.value.end(), 0.0);
  // With uniform weights, z_j = mean over nodes for every slice; verify by
  // recomputing the slice states directly.
  size_t n = 5;
  std::vector<double> xv = random_vec(n * 4, 54);
  std::vector<double> mean(4, 0.0);
  for (size_t i = 0; i < n; ++i)
    for (size_t c = 0; c < 4; ++c) mean[c] += xv[i * 4 + c] / n;
  Tape tape;
  Binder bind(tape);
  DTensor x = tape.constant(n, 4, xv);
  DTensor w = softmax(params.slice_mlp.forward(tape, bind, x), 1);
  DTensor wT = transpose(w);
  DTensor slices = mul_colvec(matmul(wT, x), recip(sum_axis(wT, 1)));
  for (size_t j = 0; j < 3; ++j)
    for (size_t c = 0; c < 4; ++c)
      CHECK(tape.val(slices)[j * 4 + c] == doctest::Approx(mean[c]).epsilon(1e-12));
}

TEST_CASE("transolver_block: dense oracle for N=10, M=3") {
  std::mt19937_64 rng(55);
  TransolverParams params("ts", 4, 3, 1, rng);
  size_t n = 10, m = 3;
  std::vector<double> xv = random_vec(n * 4, 56);
  Tape tape;
  Binder bind(tape);
  DTensor x = tape.constant(n, 4, xv);
  DTensor y = transolver_block(tape, bind, params, x);

  // Direct dense recomputation of the slice/attend/broadcast pipeline.
  Tape t2;
  Binder b2(t2);
  DTensor x2 = t2.constant(n, 4, xv);
  DTensor w = softmax(params.slice_mlp.forward(t2, b2, x2), 1);
  const auto& wv = t2.val(w);
  std::vector<double> num(m * 4, 0.0), den(m, 0.0);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < m; ++j) {
      den[j] += wv[i * m + j];
      for (size_t c = 0; c < 4; ++c) num[j * 4 + c] += wv[i * m + j] * xv[i * 4 + c];
    }
  for (size_t j = 0; j < m; ++j)
    for (size_t c = 0; c < 4; ++c) num[j * 4 + c] /= den[j];
  DTensor slices = t2.constant(m, 4, num);
  AttnContext full = full_attn_context(m);
  DTensor attended = masked_attention(t2, b2, params.attn, slices, slices, full);
  const auto& av = t2.val(attended);
  for (size_t i = 0; i < n; ++i)
    for (size_t c = 0; c < 4; ++c) {
      double expect = 0;
      for (size_t j = 0; j < m; ++j) expect += wv[i * m + j] * av[j * 4 + c];
      CHECK(tape.val(y)[i * 4 + c] == doctest::Approx(expect).epsilon(1e-10));
    }
}

TEST_CASE("blocks pass finite-difference gradient checks") {
  MeshGraph mesh = fixture_mesh(8, 7);
  size_t n = mesh.num_nodes();
  std::mt19937_64 rng(61);

  SUBCASE("masked mha, pe none and rope") {
    for (PeMode mode : {PeMode::none, PeMode::rope}) {
      MhaParams params("mha", 8, 2, rng);
      AttnContext ctx = make_attn_context(mesh, mode, MaskMode::additive, 4);
      double err = block_grad_check(
          [&](Tape& t, Binder& b, DTensor z) {
            return masked_mha(t, b, params, z, ctx);
          },
          n, 8, random_vec(n * 8, 62));
      CHECK(err < 1e-5);
    }
  }
  SUBCASE("transformer block") {
    TransformerBlockParams params("tb", 8, 2, 16, rng);
    AttnContext ctx = make_attn_context(mesh, PeMode::none, MaskMode::additive, 4);
    double err = block_grad_check(
        [&](Tape& t, Binder& b, DTensor z) {
          return transformer_block(t, b, params, z, ctx);
        },
        n, 8, random_vec(n * 8, 63, 0.7));
    CHECK(err < 1e-5);
  }
  SUBCASE("transolver block") {
    TransolverParams params("ts", 8, 3, 2, rng);
    double err = block_grad_check(
        [&](Tape& t, Binder& b, DTensor z) {
          return transolver_block(t, b, params, z);
        },
        n, 8, random_vec(n * 8, 64, 0.7));
    CHECK(err < 1e-5);
  }
  SUBCASE("mgn block w.r.t. node latents") {
    MgnGraph graph;
    for (auto [s, r] : mesh.edges) {
      graph.senders.push_back(s);
      graph.receivers.push_back(r);
    }
    MgnBlockParams params("mgn", 8, 8, rng);
    std::vector<double> ev = random_vec(mesh.edges.size() * 8, 65, 0.5);
    double err = block_grad_check(
        [&](Tape& t, Binder& b, DTensor z) {
          DTensor e = t.constant(mesh.edges.size(), 8, ev);
          return mgn_block(t, b, params, z, e, graph).nodes;
        },
        n, 8, random_vec(n * 8, 66, 0.7));
    CHECK(err < 1e-5);
  }
}

TEST_CASE("hadamard-literal mask mode keeps non-edges reachable") {
  MeshGraph mesh = fixture_mesh(6, 8);
  std::mt19937_64 rng(71);
  MhaParams params("mha", 4, 1, rng);
  AttnContext ctx =
      make_attn_context(mesh, PeMode::none, MaskMode::hadamard_literal, 4);
  Tape tape;
  Binder bind(tape);
  size_t n = mesh.num_nodes();
  DTensor z = tape.constant(n, 4, random_vec(n * 4, 72));
  MhaDebug dbg;
  masked_mha(tape, bind, params, z, ctx, &dbg);
  // Zeroed logits still contribute exp(0) mass: rows sum to 1 over ALL nodes.
  const auto& w = tape.val(dbg.head_weights[0]);
  bool any_nonedge_mass = false;
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < n; ++j)
      if (ctx.nonedge[i * n + j] && w[i * n + j] > 0) any_nonedge_mass = true;
  CHECK(any_nonedge_mass);  // the literal reading does not remove non-edges
}
