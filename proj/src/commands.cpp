#include "mrt/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <json.hpp>

#include "mrt/theory.hpp"
#include "mrt/training.hpp"

namespace fs = std::filesystem;

namespace mrt {

namespace {

void run_pool(size_t threads, size_t tasks, const std::function<void(size_t)>& fn) {
  if (threads <= 1 || tasks <= 1) {
    for (size_t i = 0; i < tasks; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  size_t workers = std::min(threads, tasks);
  for (size_t w = 0; w < workers; ++w)
    pool.emplace_back([&]() {
      for (size_t i = next.fetch_add(1); i < tasks; i = next.fetch_add(1)) fn(i);
    });
  for (auto& th : pool) th.join();
}

size_t model_input_width(const ExperimentConfig& cfg) {
  return feature_layout(advection_diffusion_schema(), cfg.model.history).width;
}

}  // namespace

void write_manifest(const std::string& out_dir, const ExperimentConfig& cfg,
                    const std::string& command) {
  fs::create_directories(out_dir);
  nlohmann::json j;
  j["command"] = command;
  j["config"] = nlohmann::json::parse(cfg.to_json());
  char hash[32];
  std::snprintf(hash, sizeof(hash), "%016llx",
                static_cast<unsigned long long>(cfg.content_hash()));
  j["config_hash"] = hash;
  std::ofstream os(fs::path(out_dir) / "manifest.json");
  os << j.dump(2) << "\n";
}

int cmd_generate(const GenerateOptions& opt) {
  DatasetConfig dc;
  dc.nodes = opt.nodes;
  dc.steps = opt.steps;
  dc.dt = opt.dt;
  size_t test = opt.test_trajectories ? opt.test_trajectories
                                      : std::max<size_t>(1, opt.trajectories / 6);
  if (test >= opt.trajectories) test = opt.trajectories - 1;
  dc.train_trajectories = opt.trajectories - test;
  dc.test_trajectories = test;
  dc.seed = opt.seed;
  DatasetSplit split = generate_dataset(dc, opt.threads);
  save_dataset(opt.out_dir, split);
  std::cout << "generated " << split.train.size() << " train + " << split.test.size()
            << " test trajectories (" << dc.nodes << " nodes, " << dc.steps
            << " steps) -> " << opt.out_dir << "\n";
  return 0;
}

DatasetSplit ensure_dataset(const ExperimentConfig& cfg, const std::string& out_dir,
                            size_t threads) {
  std::string dir = (fs::path(out_dir) / "dataset").string();
  if (fs::exists(fs::path(dir) / "dataset.json")) {
    DatasetSplit split = load_dataset(dir);
    if (split.seed == cfg.dataset.seed &&
        split.train.size() == cfg.dataset.train_trajectories &&
        split.test.size() == cfg.dataset.test_trajectories)
      return split;
  }
  DatasetSplit split = generate_dataset(cfg.dataset, threads);
  save_dataset(dir, split);
  return split;
}

SeedMetrics run_seed(const ExperimentConfig& cfg, const DatasetSplit& data,
                     uint64_t seed, const std::string& checkpoint_path,
                     const std::string& train_log_path,
                     const std::string& latent_probe_path, bool resume) {
  const TrajectorySchema schema = advection_diffusion_schema();
  size_t in_w = model_input_width(cfg);
  size_t out_w = schema.num_components();
  Model model = build_model(cfg.model, in_w, out_w, 2, seed);

  TrainConfig tc = cfg.train;
  tc.seed = seed;
  AdamWState opt = make_adamw_state(model.params);

  size_t start_step = 0;
  if (resume && !checkpoint_path.empty() && fs::exists(checkpoint_path))
    start_step = load_checkpoint(checkpoint_path, model, opt, cfg.content_hash());

  TrainResult tr = train_model(model, data.train, tc, opt, start_step);
  if (!checkpoint_path.empty())
    save_checkpoint(checkpoint_path, model, opt, start_step + tr.steps_run,
                    cfg.content_hash());
  if (!train_log_path.empty()) write_train_log_csv(train_log_path, tr);
  if (!latent_probe_path.empty() && !tr.latent_probe.empty())
    write_latent_probe_csv(latent_probe_path, tr);

  SeedMetrics m;
  m.seed = seed;
  m.steps_trained = start_step + tr.steps_run;
  m.rmse_1step = rmse_1step(model, data.test, substream(seed, 5, 0));
  m.rmse_rollout =
      rmse_rollout(model, data.test, cfg.eval_horizon, substream(seed, 5, 0));
  return m;
}

EvalSummary summarize(std::vector<SeedMetrics> rows) {
  EvalSummary s;
  s.per_seed = std::move(rows);
  size_t n = s.per_seed.size();
  if (n == 0) return s;
  for (const auto& r : s.per_seed) {
    s.mean_1step += r.rmse_1step;
    s.mean_rollout += r.rmse_rollout;
  }
  s.mean_1step /= static_cast<double>(n);
  s.mean_rollout /= static_cast<double>(n);
  if (n > 1) {
    double v1 = 0, vr = 0;
    for (const auto& r : s.per_seed) {
      v1 += (r.rmse_1step - s.mean_1step) * (r.rmse_1step - s.mean_1step);
      vr += (r.rmse_rollout - s.mean_rollout) * (r.rmse_rollout - s.mean_rollout);
    }
    s.std_1step = std::sqrt(v1 / static_cast<double>(n - 1));
    s.std_rollout = std::sqrt(vr / static_cast<double>(n - 1));
  }
  return s;
}

void write_metrics_csv(const std::string& path, const EvalSummary& summary) {
  std::ofstream os(path);
  os << "seed,rmse_1step,rmse_rollout,steps_trained\n";
  char buf[256];
  for (const auto& r : summary.per_seed) {
    std::snprintf(buf, sizeof(buf), "%llu,%.12g,%.12g,%llu\n",
                  static_cast<unsigned long long>(r.seed), r.rmse_1step,
                  r.rmse_rollout, static_cast<unsigned long long>(r.steps_trained));
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "mean,%.12g,%.12g,\nstd,%.12g,%.12g,\n",
                summary.mean_1step, summary.mean_rollout, summary.std_1step,
                summary.std_rollout);
  os << buf;
}

int cmd_train(const ExperimentConfig& cfg, const std::string& out_dir, size_t threads) {
  fs::create_directories(out_dir);
  write_manifest(out_dir, cfg, "train");
  DatasetSplit data = ensure_dataset(cfg, out_dir, threads);
  std::vector<SeedMetrics> rows(cfg.seeds.size());
  run_pool(threads, cfg.seeds.size(), [&](size_t i) {
    uint64_t seed = cfg.seeds[i];
    std::string tag = "seed" + std::to_string(seed);
    rows[i] = run_seed(cfg, data, seed,
                       (fs::path(out_dir) / ("checkpoint_" + tag + ".mrck")).string(),
                       (fs::path(out_dir) / ("train_log_" + tag + ".csv")).string(),
                       (fs::path(out_dir) / ("latent_probe_" + tag + ".csv")).string(),
                       /*resume=*/true);
  });
  EvalSummary summary = summarize(rows);
  write_metrics_csv((fs::path(out_dir) / "metrics.csv").string(), summary);
  std::cout << "train done: mean 1-step " << summary.mean_1step << ", mean rollout "
            << summary.mean_rollout << "\n";
  return 0;
}

int cmd_eval(const ExperimentConfig& cfg, const std::string& out_dir, bool oracle,
             bool probes) {
  fs::create_directories(out_dir);
  write_manifest(out_dir, cfg, "eval");
  DatasetSplit data = ensure_dataset(cfg, out_dir, 1);
  const TrajectorySchema schema = advection_diffusion_schema();

  std::vector<SeedMetrics> rows;
  nlohmann::json report;
  for (uint64_t seed : cfg.seeds) {
    SeedMetrics m;
    m.seed = seed;
    if (oracle) {
      m.rmse_1step = rmse_1step(oracle_stepper_factory(), data.test);
      m.rmse_rollout =
          rmse_rollout(oracle_stepper_factory(), data.test, cfg.eval_horizon);
      rows.push_back(m);
      continue;
    }
    std::string ckpt =
        (fs::path(out_dir) / ("checkpoint_seed" + std::to_string(seed) + ".mrck"))
            .string();
    size_t in_w = model_input_width(cfg);
    Model model = build_model(cfg.model, in_w, schema.num_components(), 2, seed);
    AdamWState opt = make_adamw_state(model.params);
    if (fs::exists(ckpt))
      m.steps_trained = load_checkpoint(ckpt, model, opt, cfg.content_hash());
    m.rmse_1step = rmse_1step(model, data.test, substream(seed, 5, 0));
    m.rmse_rollout =
        rmse_rollout(model, data.test, cfg.eval_horizon, substream(seed, 5, 0));
    rows.push_back(m);

    if (probes && !data.test.empty()) {
      const Trajectory& traj = data.test[0];
      GraphCache cache = make_graph_cache(model, traj.mesh, substream(seed, 5, 0));
      std::vector<size_t> steps;
      for (size_t t = 0; t + 1 < traj.num_steps; t += traj.num_steps / 4 + 1)
        steps.push_back(t);
      ProbeData pd = collect_probe_data(model, cache, traj, steps);
      ProbeConfig pc;
      pc.seed = seed;
      ProbeReport rep = subtask_probe(pd.latents, cfg.model.width, pd.tasks, pc);
      nlohmann::json jr;
      jr["tasks"] = rep.tasks;
      jr["loss_per_layer"] = rep.loss;
      jr["latent_distance"] = latent_distance_probe(model, cache, traj,
                                                    traj.num_steps / 2);
      report["probes"]["seed" + std::to_string(seed)] = jr;
    }
  }
  EvalSummary summary = summarize(rows);
  write_metrics_csv((fs::path(out_dir) / "metrics.csv").string(), summary);
  report["mean_rmse_1step"] = summary.mean_1step;
  report["mean_rmse_rollout"] = summary.mean_rollout;
  report["std_rmse_1step"] = summary.std_1step;
  report["std_rmse_rollout"] = summary.std_rollout;
  std::ofstream os(fs::path(out_dir) / "report.json");
  os << report.dump(2) << "\n";
  std::cout << "eval done: mean 1-step " << summary.mean_1step << ", mean rollout "
            << summary.mean_rollout << "\n";
  return 0;
}

std::vector<AblationCell> ablation_cells(const ExperimentConfig& base,
                                         const std::string& axis) {
  std::vector<AblationCell> cells;
  auto push = [&](const std::string& label, ExperimentConfig cfg) {
    cells.push_back({label, std::move(cfg)});
  };
  if (axis == "pe_mode") {
    for (PeMode m : {PeMode::none, PeMode::rope, PeMode::learned_abs,
                     PeMode::learned_relbias, PeMode::distance_weighted}) {
      ExperimentConfig c = base;
      c.model.pe_mode = m;
      push(pe_mode_to_string(m), c);
    }
  } else if (axis == "mnp_centers") {
    for (size_t n : {size_t(0), size_t(64), size_t(256)}) {
      ExperimentConfig c = base;
      c.model.mnp.enabled = n > 0;
      c.model.mnp.centers = n;
      push("centers_" + std::to_string(n), c);
    }
  } else if (axis == "temporal_frequency") {
    {
      ExperimentConfig c = base;
      c.model.temporal.enabled = false;
      push("off", c);
    }
    for (TemporalFrequency f :
         {TemporalFrequency::last_layer_only, TemporalFrequency::every_layer}) {
      ExperimentConfig c = base;
      c.model.temporal.enabled = true;
      c.model.temporal.frequency = f;
      push(temporal_frequency_to_string(f), c);
    }
  } else if (axis == "gate_mixer") {
    struct Variant {
      const char* label;
      bool gate, mixer;
    };
    for (Variant v : {Variant{"full", true, true}, Variant{"no_gate", false, true},
                      Variant{"no_mixer", true, false},
                      Variant{"ca_only", false, false}}) {
      ExperimentConfig c = base;
      c.model.temporal.enabled = true;
      c.model.temporal.use_gate = v.gate;
      c.model.temporal.use_mixer = v.mixer;
      push(v.label, c);
    }
  } else if (axis == "aux_losses") {
    {
      ExperimentConfig c = base;
      c.train.aux = {};
      push("none", c);
    }
    {
      ExperimentConfig c = base;
      c.train.aux = {};
      c.train.aux.grad_supervision = 0.1;
      push("grad_supervision", c);
    }
    {
      ExperimentConfig c = base;
      c.train.aux = {};
      c.train.aux.divergence = 0.1;
      push("divergence", c);
    }
    {
      ExperimentConfig c = base;
      c.train.aux = {};
      c.train.aux.cosine_sim = 0.1;
      push("cosine_sim", c);
    }
  } else if (axis == "width_vs_depth") {
    size_t in_w = model_input_width(base);
    size_t out_w = advection_diffusion_schema().num_components();
    size_t target = count_model_params(base.model, in_w, out_w, 2);
    for (size_t depth : {size_t(1), size_t(2), size_t(4), size_t(8)}) {
      ExperimentConfig c = base;
      c.model.depth = depth;
      c.model.width = base.model.heads;  // floor; the matcher grows it
      c.model = match_param_count(c.model, target, in_w, out_w, 2);
      push("L" + std::to_string(depth) + "_d" + std::to_string(c.model.width), c);
    }
  } else {
    throw std::invalid_argument("cmd_ablate: unknown axis " + axis);
  }
  return cells;
}

int cmd_ablate(const ExperimentConfig& cfg, const std::string& axis,
               const std::string& out_dir, size_t threads) {
  fs::create_directories(out_dir);
  write_manifest(out_dir, cfg, "ablate:" + axis);
  DatasetSplit data = ensure_dataset(cfg, out_dir, threads);
  std::vector<AblationCell> cells = ablation_cells(cfg, axis);

  // Flatten (cell, seed) tasks for the pool; results keyed by slot.
  struct Task {
    size_t cell, seed_idx;
  };
  std::vector<Task> tasks;
  for (size_t c = 0; c < cells.size(); ++c)
    for (size_t s = 0; s < cfg.seeds.size(); ++s) tasks.push_back({c, s});
  std::vector<std::vector<SeedMetrics>> results(cells.size(),
                                                std::vector<SeedMetrics>(cfg.seeds.size()));
  run_pool(threads, tasks.size(), [&](size_t i) {
    auto [c, s] = tasks[i];
    results[c][s] = run_seed(cells[c].cfg, data, cfg.seeds[s], "", "", "", false);
  });

  std::string path = (fs::path(out_dir) / ("ablate_" + axis + ".csv")).string();
  std::ofstream os(path);
  os << "cell,mean_rmse_1step,std_rmse_1step,mean_rmse_rollout,std_rmse_rollout,"
        "seeds\n";
  char buf[512];
  for (size_t c = 0; c < cells.size(); ++c) {
    EvalSummary s = summarize(results[c]);
    std::snprintf(buf, sizeof(buf), "%s,%.12g,%.12g,%.12g,%.12g,%zu\n",
                  cells[c].label.c_str(), s.mean_1step, s.std_1step, s.mean_rollout,
                  s.std_rollout, cfg.seeds.size());
    os << buf;
  }
  std::cout << "ablate " << axis << ": " << cells.size() << " cells x "
            << cfg.seeds.size() << " seeds -> " << path << "\n";
  return 0;
}

int cmd_verify(const std::string& out_dir) {
  fs::create_directories(out_dir);
  bool ok = true;
  auto line = [&](bool pass, const std::string& what) {
    std::cout << (pass ? "[PASS] " : "[FAIL] ") << what << "\n";
    ok = ok && pass;
  };

  // WLS exactness on affine fields over random nondegenerate stencils.
  {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double worst = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
      size_t nn = 3 + rep % 5;
      std::vector<double> offs;
      for (size_t k = 0; k < nn; ++k) {
        offs.push_back(0.1 * u(rng));
        offs.push_back(0.1 * u(rng));
      }
      WlsStencil st = make_stencil(offs, 2, 0.1);
      if (st.eig_min < 1e-10 * st.h * st.h) continue;
      double ax = u(rng), ay = u(rng);
      std::vector<double> diffs(nn);
      for (size_t k = 0; k < nn; ++k)
        diffs[k] = ax * offs[k * 2] + ay * offs[k * 2 + 1];
      auto g = wls_gradient(diffs, st);
      worst = std::max({worst, std::abs(g[0] - ax), std::abs(g[1] - ay)});
    }
    line(worst < 1e-10, "wls gradient exact on affine fields, max err " +
                            std::to_string(worst));
  }

  // Quadratic-field convergence on an h-scaled stencil family.
  {
    std::vector<double> hs = {0.1, 0.05, 0.025};
    std::vector<double> errs, errs2;
    for (double h : hs) {
      std::vector<double> offs;
      for (int k = 0; k < 7; ++k) {
        double ang = 2.0 * 3.14159265358979323846 * k / 7.0 + 0.3;
        offs.push_back(h * std::cos(ang) * (0.7 + 0.3 * ((k * 37 % 10) / 10.0)));
        offs.push_back(h * std::sin(ang) * (0.7 + 0.3 * ((k * 53 % 10) / 10.0)));
      }
      WlsStencil st = make_stencil(offs, 2, h);
      auto u = [](double x, double y) { return 3.0 * x * x + 2.0 * x * y - y * y; };
      std::vector<double> diffs(7);
      for (int k = 0; k < 7; ++k)
        diffs[k] = u(offs[k * 2], offs[k * 2 + 1]) - u(0, 0);
      auto g = wls_gradient(diffs, st);
      double ex = g[0], ey = g[1];  // true gradient at origin is (0, 0)
      double err = std::hypot(ex, ey);
      errs.push_back(err);
      errs2.push_back(err * err);
    }
    auto slope = [&](const std::vector<double>& e) {
      double s = std::log(e.front() / e.back()) / std::log(hs.front() / hs.back());
      return s;
    };
    double s1 = slope(errs), s2 = slope(errs2);
    line(s1 >= 0.9, "quadratic-field gradient error slope " + std::to_string(s1));
    line(s2 >= 1.8, "consistency (squared) slope " + std::to_string(s2));
  }

  // Assumption sweep on generated meshes.
  {
    MeshGraph mesh = generate_mesh(400, 11);
    GeometricContext geo = geometric_context(mesh);
    Adjacency adj = build_adjacency(mesh);
    double worst_c0 = 1e30;
    size_t checked = 0;
    for (uint32_t i = 0; i < mesh.num_nodes(); ++i) {
      if (adj.degree[i] < 3) continue;
      auto rep = check_assumption(mesh_stencil(mesh, geo, i));
      if (!rep.satisfied) continue;
      worst_c0 = std::min(worst_c0, rep.c0_hat);
      ++checked;
    }
    line(checked > 300 && worst_c0 > 1e-4,
         "assumption spectral bounds on mesh stencils, min c0 " +
             std::to_string(worst_c0));
  }

  // Theorem 1 sweep with measured constants.
  {
    Theorem1Report rep =
        theorem1_bound_check({121, 441, 1681}, {0.0, 1e-4, 1e-3, 1e-2}, 3);
    line(rep.consistency_slope >= 1.8,
         "theorem-1 consistency slope " + std::to_string(rep.consistency_slope));
    line(rep.constant_stable, "theorem-1 constant stability, spread " +
                                  std::to_string(rep.c_max / rep.c_min));
    std::ofstream sweep(fs::path(out_dir) / "theorem1_sweep.csv");
    sweep << "h,eps,lhs,rhs_basis,constant\n";
    char buf[256];
    for (const auto& c : rep.cells) {
      std::snprintf(buf, sizeof(buf), "%.12g,%.12g,%.12g,%.12g,%.12g\n", c.h, c.eps,
                    c.lhs, c.rhs_basis, c.constant);
      sweep << buf;
    }
  }

  // A-stability grids.
  {
    bool astable = true;
    for (double theta : {0.5, 0.75, 1.0}) {
      StabilityGrid g = stability_region(theta);
      for (uint8_t s : g.stable) astable = astable && s;
    }
    line(astable, "A-stability for theta in {0.5, 0.75, 1.0} on 401x401 grid");

    StabilityGrid g0 = stability_region(0.0);
    bool euler_ok = true;
    for (size_t ix = 0; ix < g0.nx && euler_ok; ++ix) {
      double re = g0.re_min + (g0.re_max - g0.re_min) * ix / double(g0.nx - 1);
      for (size_t iy = 0; iy < g0.ny; ++iy) {
        double im = g0.im_min + (g0.im_max - g0.im_min) * iy / double(g0.ny - 1);
        bool disk = std::abs(std::complex<double>(1.0 + re, im)) <= 1.0;
        if (disk != (g0.stable[ix * g0.ny + iy] != 0)) {
          euler_ok = false;
          break;
        }
      }
    }
    line(euler_ok, "forward-Euler region equals |1+z| <= 1 on grid");

    std::mt19937_64 rng(123);
    std::uniform_real_distribution<double> ut(0.0, 1.0), uz(-5.0, 5.0);
    double worst = 0.0;
    for (int k = 0; k < 10000; ++k)
      worst = std::max(worst, identity_check(ut(rng), {uz(rng), uz(rng)}));
    line(worst < 1e-12, "theta-difference identity residual " + std::to_string(worst));
  }

  std::cout << (ok ? "verify: all checks passed\n" : "verify: FAILURES present\n");
  return ok ? 0 : 1;
}

}  // namespace mrt
