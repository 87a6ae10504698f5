#include "mrt/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace mrt {

namespace {

bool velocity_enforced(NodeType t) {
  return t != NodeType::Normal && t != NodeType::Outflow;
}

// Features for one rollout step from a raw state vector.
NodeFeatures features_from_state(const Trajectory& traj, const std::vector<double>& state,
                                 const std::vector<double>& prev, size_t t,
                                 bool with_history) {
  size_t n = traj.num_nodes(), c = traj.schema.num_components();
  FeatureLayout l = feature_layout(traj.schema, with_history);
  NodeFeatures f;
  f.num_nodes = n;
  f.width = l.width;
  f.values.assign(n * l.width, 0.0);
  auto onehot = node_type_onehot(traj.mesh);
  for (size_t i = 0; i < n; ++i) {
    for (size_t k = 0; k < kNumNodeTypes; ++k)
      f.at(i, l.onehot_offset + k) = onehot[i * kNumNodeTypes + k];
    for (size_t k = 0; k < c; ++k) f.at(i, l.state_offset + k) = state[i * c + k];
    f.at(i, l.inflow_offset) = traj.inflow[t];
  }
  if (with_history) {
    size_t dyn = 0;
    for (const auto& comp : traj.schema.components)
      if (comp.dynamical) ++dyn;
    size_t kd = 0;
    for (size_t k = 0; k < c; ++k) {
      if (!traj.schema.components[k].dynamical) continue;
      for (size_t i = 0; i < n; ++i) {
        double h = prev.empty()
                       ? 0.0
                       : (state[i * c + k] - prev[i * c + k]) / traj.delta_t;
        f.at(i, static_cast<size_t>(l.history_offset) + kd) = h;
      }
      ++kd;
    }
    (void)dyn;
  }
  return f;
}

}  // namespace

std::vector<double> enforce_bc(const std::vector<double>& pred,
                               const std::vector<double>& truth,
                               const MeshGraph& mesh, const TrajectorySchema& schema) {
  if (pred.size() != truth.size())
    throw std::invalid_argument("enforce_bc: shape mismatch");
  size_t c = schema.num_components();
  size_t n = mesh.num_nodes();
  std::vector<double> out = pred;
  for (size_t i = 0; i < n; ++i) {
    NodeType t = mesh.node_type[i];
    for (size_t k = 0; k < c; ++k) {
      FieldKind kind = schema.components[k].kind;
      bool enforce = (kind == FieldKind::Velocity && velocity_enforced(t)) ||
                     (kind == FieldKind::Pressure && t == NodeType::Inflow);
      if (enforce) out[i * c + k] = truth[i * c + k];
    }
  }
  return out;
}

StepFn model_stepper(Model& model, const GraphCache& cache, const Trajectory& traj) {
  Model* m = &model;
  const GraphCache* gc = &cache;
  const Trajectory* tr = &traj;
  return [m, gc, tr](const std::vector<double>& state, const std::vector<double>& prev,
                     size_t t) {
    size_t n = tr->num_nodes(), c = tr->schema.num_components();
    NodeFeatures f = features_from_state(*tr, state, prev, t, m->cfg.history);
    Tape tape(Precision::f64);
    Binder bind(tape);
    ForwardResult fwd = model_forward(tape, bind, *m, *gc, f);
    const auto& delta = tape.val(fwd.delta);
    std::vector<double> next(n * c);
    for (size_t i = 0; i < n * c; ++i) next[i] = state[i] + delta[i];
    return next;
  };
}

RolloutResult rollout(const StepFn& step, const Trajectory& traj, size_t horizon,
                      const RolloutResult* resume_from) {
  if (horizon + 1 > traj.num_steps)
    throw std::invalid_argument("rollout: horizon exceeds trajectory length");
  size_t n = traj.num_nodes(), c = traj.schema.num_components();
  RolloutResult res;
  size_t start_t = 0;
  double sq_mean_acc = 0.0;
  std::vector<double> prev;  // state before the current one
  if (resume_from && !resume_from->predicted.empty()) {
    res = *resume_from;
    start_t = res.predicted.size() - 1;
    if (start_t >= 1) prev = res.predicted[start_t - 1];
    for (double r : res.per_step_rmse) sq_mean_acc += r * r;
    if (res.divergence_step != SIZE_MAX) return res;
  } else {
    res.predicted.push_back(traj.step_values(0));
  }

  double init_max = 0.0;
  for (double v : res.predicted[0]) init_max = std::max(init_max, std::abs(v));
  double abort_mag = 1e6 * std::max(init_max, 1.0);

  for (size_t t = start_t; t < horizon; ++t) {
    std::vector<double> next = step(res.predicted.back(), prev, t);
    bool bad = false;
    for (double v : next)
      if (!std::isfinite(v) || std::abs(v) > abort_mag) bad = true;
    if (bad) {
      res.divergence_step = t + 1;
      break;
    }
    std::vector<double> truth = traj.step_values(t + 1);
    next = enforce_bc(next, truth, traj.mesh, traj.schema);
    prev = res.predicted.back();
    res.predicted.push_back(next);

    double acc = 0.0;
    for (size_t i = 0; i < n * c; ++i) {
      double d = next[i] - truth[i];
      acc += d * d;
    }
    double mean_sq = acc / static_cast<double>(n * c);
    res.per_step_rmse.push_back(std::sqrt(mean_sq));
    sq_mean_acc += mean_sq;
  }
  size_t steps_done = res.per_step_rmse.size();
  if (res.divergence_step != SIZE_MAX) {
    res.rollout_rmse = std::numeric_limits<double>::infinity();
  } else {
    res.rollout_rmse =
        steps_done == 0 ? 0.0 : std::sqrt(sq_mean_acc / static_cast<double>(steps_done));
  }
  return res;
}

StepperFactory model_stepper_factory(Model& model, uint64_t jumper_seed_base) {
  Model* m = &model;
  return [m, jumper_seed_base](const Trajectory& traj, size_t index) {
    auto cache = std::make_shared<GraphCache>(
        make_graph_cache(*m, traj.mesh, jumper_seed_base + 977 * index));
    StepFn inner = model_stepper(*m, *cache, traj);
    return [cache, inner](const std::vector<double>& state,
                          const std::vector<double>& prev, size_t t) {
      return inner(state, prev, t);
    };
  };
}

StepperFactory oracle_stepper_factory() {
  return [](const Trajectory& traj, size_t) {
    const Trajectory* tr = &traj;
    return [tr](const std::vector<double>&, const std::vector<double>&, size_t t) {
      return tr->step_values(t + 1);
    };
  };
}

double rmse_1step(const StepperFactory& make, const std::vector<Trajectory>& dataset) {
  if (dataset.empty()) throw std::invalid_argument("rmse_1step: empty dataset");
  double traj_acc = 0.0;
  for (size_t ti = 0; ti < dataset.size(); ++ti) {
    const Trajectory& traj = dataset[ti];
    StepFn step = make(traj, ti);
    size_t n = traj.num_nodes(), c = traj.schema.num_components();
    double step_acc = 0.0;
    size_t steps = traj.num_steps - 1;
    std::vector<double> prev;
    for (size_t t = 0; t < steps; ++t) {
      std::vector<double> state = traj.step_values(t);
      if (t > 0) prev = traj.step_values(t - 1);
      std::vector<double> pred = step(state, prev, t);
      std::vector<double> truth = traj.step_values(t + 1);
      pred = enforce_bc(pred, truth, traj.mesh, traj.schema);
      double acc = 0.0;
      for (size_t i = 0; i < n * c; ++i) {
        double d = pred[i] - truth[i];
        acc += d * d;
      }
      step_acc += acc / static_cast<double>(n * c);
    }
    traj_acc += step_acc / static_cast<double>(steps);
  }
  return std::sqrt(traj_acc / static_cast<double>(dataset.size()));
}

double rmse_rollout(const StepperFactory& make, const std::vector<Trajectory>& dataset,
                    size_t horizon) {
  if (dataset.empty()) throw std::invalid_argument("rmse_rollout: empty dataset");
  double acc = 0.0;
  for (size_t ti = 0; ti < dataset.size(); ++ti) {
    const Trajectory& traj = dataset[ti];
    size_t h = std::min(horizon, traj.num_steps - 1);
    RolloutResult res = rollout(make(traj, ti), traj, h);
    acc += res.rollout_rmse * res.rollout_rmse;
  }
  return std::sqrt(acc / static_cast<double>(dataset.size()));
}

double rmse_1step(Model& model, const std::vector<Trajectory>& dataset,
                  uint64_t jumper_seed) {
  return rmse_1step(model_stepper_factory(model, jumper_seed), dataset);
}

double rmse_rollout(Model& model, const std::vector<Trajectory>& dataset,
                    size_t horizon, uint64_t jumper_seed) {
  return rmse_rollout(model_stepper_factory(model, jumper_seed), dataset, horizon);
}

std::vector<double> latent_distance_probe(Model& model, const GraphCache& cache,
                                          const Trajectory& traj, size_t t) {
  Tape tape(Precision::f64);
  Binder bind(tape);
  NodeFeatures now = build_features(traj, t, model.cfg.history);
  ForwardResult fwd = model_forward(tape, bind, model, cache, now);
  NodeFeatures next = build_features(traj, t + 1, model.cfg.history);
  DTensor xn = tape.constant(next.num_nodes, next.width, next.values);
  DTensor zt = model.encoder.forward(tape, bind, xn);
  std::vector<double> out;
  size_t n = traj.num_nodes(), d = model.cfg.width;
  const auto& b = tape.val(zt);
  for (DTensor zl : fwd.latents) {
    const auto& a = tape.val(zl);
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

// --- subtask probes ----------------------------------------------------------------

namespace {

// Tiny self-contained 2-layer MLP regression used only by the probes.
struct ProbeNet {
  Parameter w1, b1, w2, b2;
  ProbeNet(size_t in, size_t hidden, size_t out, std::mt19937_64& rng)
      : w1("probe.w1", in, hidden),
        b1("probe.b1", 1, hidden),
        w2("probe.w2", hidden, out),
        b2("probe.b2", 1, out) {
    init_uniform(w1, in, rng);
    init_uniform(w2, hidden, rng);
  }
};

double probe_eval(ProbeNet& net, const std::vector<double>& x, size_t rows, size_t in,
                  const std::vector<double>& y, size_t out_dim) {
  Tape tape(Precision::f64);
  Binder bind(tape);
  DTensor xt = tape.constant(rows, in, x);
  DTensor h = tanh_(add_rowvec(matmul(xt, bind(net.w1)), bind(net.b1)));
  DTensor p = add_rowvec(matmul(h, bind(net.w2)), bind(net.b2));
  DTensor err = sub(p, tape.constant(rows, out_dim, y));
  DTensor loss = mean_all(mul(err, err));
  return tape.val(loss)[0];
}

}  // namespace

ProbeReport subtask_probe(const std::vector<std::vector<double>>& latents_per_layer,
                          size_t latent_width, const std::vector<ProbeTask>& tasks,
                          const ProbeConfig& cfg) {
  ProbeReport rep;
  for (const auto& t : tasks) rep.tasks.push_back(t.name);
  rep.loss.resize(latents_per_layer.size());

  for (size_t layer = 0; layer < latents_per_layer.size(); ++layer) {
    const auto& lat = latents_per_layer[layer];
    size_t rows = lat.size() / latent_width;
    size_t holdout = std::max<size_t>(1, static_cast<size_t>(
                                             std::floor(cfg.holdout_fraction *
                                                        static_cast<double>(rows))));
    size_t train_rows = rows - holdout;
    for (const ProbeTask& task : tasks) {
      std::mt19937_64 rng(cfg.seed * 31 + layer * 7 + rep.loss[layer].size());
      // Deterministic shuffled split shared across layers for a task.
      std::vector<size_t> order(rows);
      for (size_t i = 0; i < rows; ++i) order[i] = i;
      std::mt19937_64 split_rng(cfg.seed);
      std::shuffle(order.begin(), order.end(), split_rng);

      auto gather = [&](size_t begin, size_t count, std::vector<double>& xo,
                        std::vector<double>& yo) {
        xo.resize(count * latent_width);
        yo.resize(count * task.task_dim);
        for (size_t r = 0; r < count; ++r) {
          size_t src = order[begin + r];
          std::copy(lat.begin() + src * latent_width,
                    lat.begin() + (src + 1) * latent_width,
                    xo.begin() + r * latent_width);
          std::copy(task.targets.begin() + src * task.task_dim,
                    task.targets.begin() + (src + 1) * task.task_dim,
                    yo.begin() + r * task.task_dim);
        }
      };
      std::vector<double> xtr, ytr, xho, yho;
      gather(0, train_rows, xtr, ytr);
      gather(train_rows, holdout, xho, yho);

      ProbeNet net(latent_width, cfg.hidden, task.task_dim, rng);
      std::vector<Parameter*> ps{&net.w1, &net.b1, &net.w2, &net.b2};
      TrainConfig tc;
      tc.max_lr = cfg.lr;
      tc.warmup_steps = 1;
      tc.weight_decay = 0.0;
      AdamWState opt = make_adamw_state(ps);
      for (size_t it = 0; it < cfg.train_steps; ++it) {
        for (Parameter* p : ps) p->zero_grad();
        Tape tape(Precision::f64);
        Binder bind(tape);
        DTensor xt = tape.constant(train_rows, latent_width, xtr);
        DTensor h = tanh_(add_rowvec(matmul(xt, bind(net.w1)), bind(net.b1)));
        DTensor p = add_rowvec(matmul(h, bind(net.w2)), bind(net.b2));
        DTensor err = sub(p, tape.constant(train_rows, task.task_dim, ytr));
        DTensor loss = mean_all(mul(err, err));
        tape.backward(loss);
        bind.harvest();
        adamw_step(ps, opt, tc, cfg.lr);
      }
      rep.loss[layer].push_back(
          probe_eval(net, xho, holdout, latent_width, yho, task.task_dim));
    }
  }
  return rep;
}

ProbeData collect_probe_data(Model& model, const GraphCache& cache,
                             const Trajectory& traj, const std::vector<size_t>& steps) {
  size_t n = traj.num_nodes(), c = traj.schema.num_components();
  size_t d = model.cfg.width;
  ProbeData data;
  data.latents.resize(model.cfg.depth + 1);

  std::vector<size_t> vel, pres;
  for (size_t k = 0; k < c; ++k) {
    if (traj.schema.components[k].kind == FieldKind::Velocity) vel.push_back(k);
    if (traj.schema.components[k].kind == FieldKind::Pressure) pres.push_back(k);
  }
  ProbeTask tvel{"velocity", {}, vel.size()};
  ProbeTask tpres{"pressure_proxy", {}, std::max<size_t>(pres.size(), 1)};
  ProbeTask tgrad{"gradient_magnitude_proxy", {}, 1};

  for (size_t t : steps) {
    if (t + 1 >= traj.num_steps) continue;
    Tape tape(Precision::f64);
    Binder bind(tape);
    NodeFeatures f = build_features(traj, t, model.cfg.history);
    ForwardResult fwd = model_forward(tape, bind, model, cache, f);
    for (size_t l = 0; l < fwd.latents.size(); ++l) {
      const auto& v = tape.val(fwd.latents[l]);
      data.latents[l].insert(data.latents[l].end(), v.begin(), v.end());
    }
    std::vector<double> next = traj.step_values(t + 1);
    for (size_t i = 0; i < n; ++i) {
      for (size_t k : vel) tvel.targets.push_back(next[i * c + k]);
      if (pres.empty()) tpres.targets.push_back(0.0);
      for (size_t k : pres) tpres.targets.push_back(next[i * c + k]);
    }
    // WSS analogue: WLS gradient magnitude of the scalar component.
    if (!pres.empty()) {
      Tape scratch(Precision::f64);
      std::vector<double> s(n);
      for (size_t i = 0; i < n; ++i) s[i] = next[i * c + pres[0]];
      DTensor st = scratch.constant(n, 1, s);
      DTensor g = sparse_matmul(cache.wls.matrix, st);
      const auto& gv = scratch.val(g);
      int dim = cache.wls.dim;
      for (size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int a = 0; a < dim; ++a)
          acc += gv[i * dim + a] * gv[i * dim + a];
        tgrad.targets.push_back(std::sqrt(acc));
      }
    } else {
      for (size_t i = 0; i < n; ++i) tgrad.targets.push_back(0.0);
    }
    data.rows += n;
  }
  (void)d;
  data.tasks = {tvel, tpres, tgrad};
  return data;
}

}  // namespace mrt
