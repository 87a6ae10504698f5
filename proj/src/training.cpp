#include "mrt/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "mrt/theory.hpp"

namespace mrt {

uint64_t substream(uint64_t seed, uint64_t purpose, uint64_t step) {
  // splitmix-style mixing for independent deterministic streams
  uint64_t x = seed + 0x9e3779b97f4a7c15ull * (purpose + 1) + step;
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

namespace {

constexpr double kPi = 3.14159265358979323846;

bool velocity_enforced(NodeType t) {
  return t != NodeType::Normal && t != NodeType::Outflow;
}

}  // namespace

double lr_at(size_t step, const TrainConfig& cfg, size_t total_steps) {
  if (cfg.warmup_steps < 1)
    throw std::invalid_argument("lr_at: warmup_steps must be >= 1");
  if (step <= cfg.warmup_steps)
    return cfg.max_lr * static_cast<double>(step) /
           static_cast<double>(cfg.warmup_steps);
  if (total_steps <= cfg.warmup_steps) return cfg.max_lr;
  if (step >= total_steps) return 0.0;
  double frac = static_cast<double>(step - cfg.warmup_steps) /
                static_cast<double>(total_steps - cfg.warmup_steps);
  return cfg.max_lr * 0.5 * (1.0 + std::cos(kPi * frac));
}

AdamWState make_adamw_state(const std::vector<Parameter*>& params) {
  AdamWState st;
  st.m.reserve(params.size());
  st.v.reserve(params.size());
  for (const Parameter* p : params) {
    st.m.emplace_back(p->size(), 0.0);
    st.v.emplace_back(p->size(), 0.0);
  }
  return st;
}

void adamw_step(std::vector<Parameter*>& params, AdamWState& state,
                const TrainConfig& cfg, double lr) {
  if (state.m.size() != params.size())
    throw std::invalid_argument("adamw_step: state size mismatch");
  state.step += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    for (size_t i = 0; i < p.size(); ++i) {
      double g = p.grad[i];
      if (!std::isfinite(g)) {
        std::ostringstream os;
        os << "adamw_step: non-finite gradient in parameter '" << p.name
           << "' at element " << i;
        throw std::runtime_error(os.str());
      }
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      p.value[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) +
                          cfg.weight_decay * p.value[i]);
    }
  }
}

namespace {

// Anchored squared-error main loss plus optional auxiliaries. Returns the
// scalar total and fills `out` with detached values.
DTensor assemble_losses(Tape& tape, Binder& bind, Model& model,
                        const GraphCache& cache, const Trajectory& traj, size_t t,
                        const TrainConfig& cfg, size_t step_index,
                        StepLosses& out) {
  size_t n = traj.num_nodes();
  size_t c = traj.schema.num_components();
  FeatureLayout layout = feature_layout(traj.schema, model.cfg.history);

  NodeFeatures feats = build_features(traj, t, model.cfg.history);
  bool noisy = false;
  for (double s : cfg.noise.sigma) noisy = noisy || s > 0.0;
  if (noisy)
    feats = add_training_noise(feats, layout, traj.schema, cfg.noise,
                               substream(cfg.seed, 1, step_index));

  // The prediction is anchored on the (noisy) input state.
  std::vector<double> anchor(n * c);
  for (size_t i = 0; i < n; ++i)
    for (size_t k = 0; k < c; ++k) anchor[i * c + k] = feats.at(i, layout.state_offset + k);
  std::vector<double> target = traj.step_values(t + 1);

  ForwardResult fwd = model_forward(tape, bind, model, cache, feats);
  DTensor pred = add(fwd.delta, tape.constant(n, c, anchor));
  DTensor err = sub(pred, tape.constant(n, c, target));
  DTensor per_node = sum_axis(mul(err, err), 1);  // N x 1
  DTensor l_main;
  if (cfg.exclude_enforced_from_loss) {
    std::vector<double> mask(n, 0.0);
    double kept = 0.0;
    for (size_t i = 0; i < n; ++i)
      if (!velocity_enforced(traj.mesh.node_type[i])) {
        mask[i] = 1.0;
        kept += 1.0;
      }
    l_main = mul_scalar(sum_all(mul(per_node, tape.constant(n, 1, mask))),
                        1.0 / std::max(kept, 1.0));
  } else {
    l_main = mean_all(per_node);
  }
  out.main = tape.val(l_main)[0];
  DTensor total = l_main;

  const MnpConfig& mnp = model.cfg.mnp;
  if (mnp.enabled && mnp.alpha != 0.0 && mnp.centers > 0 && model.has_ring) {
    auto centers = sample_centers(traj.mesh, mnp.centers,
                                  substream(cfg.seed, 2, step_index));
    StarBatch batch = build_stars(tape, fwd.latents.back(), fwd.latents.front(),
                                  cache.mesh_adj, centers, mnp.K);
    DTensor o = ring_transformer(tape, bind, model.ring, batch);
    DTensor l_mnp = mnp_loss(tape, bind, o, model.decoder, batch, target, anchor, c);
    out.mnp = tape.val(l_mnp)[0];
    total = combine_losses(total, l_mnp, mnp.alpha);
  }

  if (cfg.aux.any()) {
    const WlsGradientOperator& op = cache.wls;
    if (cfg.aux.grad_supervision > 0.0) {
      DTensor gp = sparse_matmul(op.matrix, pred);
      std::vector<double> gy(op.matrix.rows * c, 0.0);
      {
        Tape scratch(Precision::f64);
        DTensor yt = scratch.constant(n, c, target);
        DTensor gyt = sparse_matmul(op.matrix, yt);
        gy = scratch.val(gyt);
      }
      DTensor diff = sub(gp, tape.constant(op.matrix.rows, c, gy));
      DTensor l = mean_all(mul(diff, diff));
      out.grad_supervision = tape.val(l)[0];
      total = add(total, mul_scalar(l, cfg.aux.grad_supervision));
    }
    if (cfg.aux.divergence > 0.0) {
      // Velocity components of the prediction.
      std::vector<size_t> vel;
      for (size_t k = 0; k < c; ++k)
        if (traj.schema.components[k].kind == FieldKind::Velocity) vel.push_back(k);
      if (vel.size() == static_cast<size_t>(model.dim)) {
        DTensor g = sparse_matmul(op.matrix, pred);  // (n*dim) x c
        DTensor div;
        for (size_t a = 0; a < vel.size(); ++a) {
          std::vector<int64_t> rows(n);
          for (size_t i = 0; i < n; ++i)
            rows[i] = static_cast<int64_t>(i * vel.size() + a);
          DTensor da = gather_rows(slice_cols(g, vel[a], 1), rows);
          div = a == 0 ? da : add(div, da);
        }
        DTensor l = mean_all(mul(div, div));
        out.divergence = tape.val(l)[0];
        total = add(total, mul_scalar(l, cfg.aux.divergence));
      }
    }
    if (cfg.aux.cosine_sim > 0.0) {
      std::vector<double> ynorm(n, 0.0);
      for (size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (size_t k = 0; k < c; ++k) s += target[i * c + k] * target[i * c + k];
        ynorm[i] = std::sqrt(s + 1e-12);
      }
      DTensor dot = sum_axis(mul(pred, tape.constant(n, c, target)), 1);
      DTensor pnorm = sqrt_(add_scalar(sum_axis(mul(pred, pred), 1), 1e-12));
      DTensor cosv =
          mul(dot, recip(mul(pnorm, tape.constant(n, 1, ynorm))));
      DTensor l = add_scalar(neg(mean_all(cosv)), 1.0);
      out.cosine = tape.val(l)[0];
      total = add(total, mul_scalar(l, cfg.aux.cosine_sim));
    }
  }

  if (model.cfg.temporal.intermediate_supervision && !fwd.corrected.empty() &&
      cfg.intermediate_supervision_weight > 0.0) {
    DTensor acc;
    for (size_t k = 0; k < fwd.corrected.size(); ++k) {
      DTensor p = add(model.decoder.forward(tape, bind, fwd.corrected[k]),
                      tape.constant(n, c, anchor));
      DTensor e = sub(p, tape.constant(n, c, target));
      DTensor l = mean_all(sum_axis(mul(e, e), 1));
      acc = k == 0 ? l : add(acc, l);
    }
    acc = mul_scalar(acc, 1.0 / static_cast<double>(fwd.corrected.size()));
    out.intermediate = tape.val(acc)[0];
    total = add(total, mul_scalar(acc, cfg.intermediate_supervision_weight));
  }

  out.total = tape.val(total)[0];
  return total;
}

}  // namespace

StepLosses compute_losses(Model& model, const GraphCache& cache, const Trajectory& traj,
                          size_t t, const TrainConfig& cfg, size_t step_index,
                          bool do_backward) {
  Tape tape(cfg.precision);
  Binder bind(tape);
  StepLosses out;
  DTensor total = assemble_losses(tape, bind, model, cache, traj, t, cfg,
                                  step_index, out);
  if (do_backward) {
    tape.backward(total);
    bind.harvest();
  }
  return out;
}

StepLosses train_step(Model& model, const GraphCache& cache, const Trajectory& traj,
                      size_t t, const TrainConfig& cfg, AdamWState& opt,
                      size_t step_index, size_t total_steps) {
  model.zero_grad();
  StepLosses losses = compute_losses(model, cache, traj, t, cfg, step_index, true);
  double lr = lr_at(step_index + 1, cfg, total_steps);
  adamw_step(model.params, opt, cfg, lr);
  return losses;
}

std::vector<double> latent_distance(Model& model, const GraphCache& cache,
                                    const Trajectory& traj, size_t t) {
  Tape tape(Precision::f64);
  Binder bind(tape);
  NodeFeatures now = build_features(traj, t, model.cfg.history);
  ForwardResult fwd = model_forward(tape, bind, model, cache, now);
  NodeFeatures next = build_features(traj, t + 1, model.cfg.history);
  DTensor xn = tape.constant(next.num_nodes, next.width, next.values);
  DTensor zt = model.encoder.forward(tape, bind, xn);
  std::vector<double> out;
  size_t n = traj.num_nodes();
  for (DTensor zl : fwd.latents) {
    const auto& a = tape.val(zl);
    const auto& b = tape.val(zt);
    size_t d = tape.cols(zl);
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (size_t k = 0; k < d; ++k) {
        double diff = a[i * d + k] - b[i * d + k];
        s += diff * diff;
      }
      acc += std::sqrt(s);
    }
    out.push_back(acc / static_cast<double>(n));
  }
  return out;
}

TrainResult train_model(Model& model, const std::vector<Trajectory>& train_set,
                        const TrainConfig& cfg, AdamWState& opt,
                        size_t start_step) {
  TrainResult result;
  if (train_set.empty()) return result;

  std::vector<GraphCache> caches;
  caches.reserve(train_set.size());
  for (size_t i = 0; i < train_set.size(); ++i)
    caches.push_back(make_graph_cache(model, train_set[i].mesh,
                                      substream(cfg.seed, 3, i)));

  std::vector<std::pair<size_t, size_t>> pairs;  // (trajectory, t)
  for (size_t i = 0; i < train_set.size(); ++i)
    for (size_t t = 0; t + 1 < train_set[i].num_steps; ++t) pairs.emplace_back(i, t);

  size_t per_epoch = pairs.size();
  size_t total_steps = cfg.epochs * per_epoch;
  if (cfg.max_steps > 0) total_steps = std::min(total_steps, cfg.max_steps);

  size_t step = start_step;
  while (step < total_steps) {
    size_t epoch = step / per_epoch;
    auto order = pairs;
    std::mt19937_64 rng(substream(cfg.seed, 4, epoch));
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t k = step % per_epoch; k < per_epoch && step < total_steps; ++k) {
      auto [ti, t] = order[k];
      auto t0 = std::chrono::steady_clock::now();
      StepLosses losses =
          train_step(model, caches[ti], train_set[ti], t, cfg, opt, step, total_steps);
      auto t1 = std::chrono::steady_clock::now();
      double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
      result.log.push_back({step, lr_at(step + 1, cfg, total_steps), losses, ms});
      ++step;
      if (cfg.latent_probe_interval > 0 &&
          (step % cfg.latent_probe_interval == 0 || step == total_steps)) {
        const Trajectory& probe = train_set[0];
        result.latent_probe.emplace_back(
            step, latent_distance(model, caches[0], probe, probe.num_steps / 2));
      }
    }
  }
  result.steps_run = step - start_step;
  return result;
}

void write_train_log_csv(const std::string& path, const TrainResult& result) {
  std::ofstream os(path);
  os << "step,lr,loss_main,loss_mnp,loss_grad_sup,loss_div,loss_cos,loss_total,"
        "wall_ms\n";
  char buf[512];
  for (const auto& row : result.log) {
    std::snprintf(buf, sizeof(buf),
                  "%zu,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.3f\n", row.step,
                  row.lr, row.losses.main, row.losses.mnp,
                  row.losses.grad_supervision, row.losses.divergence,
                  row.losses.cosine, row.losses.total, row.wall_ms);
    os << buf;
  }
}

void write_latent_probe_csv(const std::string& path, const TrainResult& result) {
  std::ofstream os(path);
  os << "step,layer,distance\n";
  char buf[128];
  for (const auto& [step, dists] : result.latent_probe)
    for (size_t l = 0; l < dists.size(); ++l) {
      std::snprintf(buf, sizeof(buf), "%zu,%zu,%.12g\n", step, l, dists[l]);
      os << buf;
    }
}

// --- checkpointing ---------------------------------------------------------------

namespace {
constexpr char kCkptMagic[4] = {'M', 'R', 'C', 'K'};

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}
}  // namespace

void save_checkpoint(const std::string& path, const Model& model,
                     const AdamWState& opt, uint64_t step, uint64_t config_hash) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path);
  os.write(kCkptMagic, 4);
  put<uint32_t>(os, 1);
  put<uint64_t>(os, config_hash);
  put<uint64_t>(os, step);
  put<uint64_t>(os, opt.step);
  put<uint64_t>(os, model.params.size());
  for (size_t pi = 0; pi < model.params.size(); ++pi) {
    const Parameter& p = *model.params[pi];
    put<uint32_t>(os, static_cast<uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<uint64_t>(os, p.rows);
    put<uint64_t>(os, p.cols);
    os.write(reinterpret_cast<const char*>(p.value.data()),
             static_cast<std::streamsize>(p.value.size() * sizeof(double)));
    os.write(reinterpret_cast<const char*>(opt.m[pi].data()),
             static_cast<std::streamsize>(opt.m[pi].size() * sizeof(double)));
    os.write(reinterpret_cast<const char*>(opt.v[pi].data()),
             static_cast<std::streamsize>(opt.v[pi].size() * sizeof(double)));
  }
}

uint64_t load_checkpoint(const std::string& path, Model& model, AdamWState& opt,
                         uint64_t expected_config_hash) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCkptMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  uint32_t version = get<uint32_t>(is);
  if (version != 1) throw std::runtime_error("checkpoint: unsupported version");
  uint64_t hash = get<uint64_t>(is);
  if (expected_config_hash != 0 && hash != expected_config_hash)
    throw std::runtime_error("checkpoint: config hash mismatch");
  uint64_t step = get<uint64_t>(is);
  opt.step = get<uint64_t>(is);
  uint64_t count = get<uint64_t>(is);
  if (count != model.params.size())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  if (opt.m.size() != model.params.size()) opt = make_adamw_state(model.params);
  for (size_t pi = 0; pi < count; ++pi) {
    Parameter& p = *model.params[pi];
    uint32_t len = get<uint32_t>(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    uint64_t rows = get<uint64_t>(is);
    uint64_t cols = get<uint64_t>(is);
    if (name != p.name || rows != p.rows || cols != p.cols)
      throw std::runtime_error("checkpoint: parameter layout mismatch at " + name);
    is.read(reinterpret_cast<char*>(p.value.data()),
            static_cast<std::streamsize>(p.value.size() * sizeof(double)));
    is.read(reinterpret_cast<char*>(opt.m[pi].data()),
            static_cast<std::streamsize>(opt.m[pi].size() * sizeof(double)));
    is.read(reinterpret_cast<char*>(opt.v[pi].data()),
            static_cast<std::streamsize>(opt.v[pi].size() * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
  }
  return step;
}

}  // namespace mrt
