#include "mrt/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace mrt {

using nlohmann::json;

namespace {

void check_keys(const json& obj, const std::set<std::string>& allowed,
                const std::string& path) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      throw std::invalid_argument("config: unknown key '" + path + it.key() + "'");
}

}  // namespace

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

ExperimentConfig default_experiment_config() {
  ExperimentConfig cfg;
  cfg.train.noise.sigma = {0.02, 0.02, 0.02};
  return cfg;
}

std::string ExperimentConfig::to_json() const {
  json j;
  j["dataset"] = {{"nodes", dataset.nodes},
                  {"steps", dataset.steps},
                  {"dt", dataset.dt},
                  {"train_trajectories", dataset.train_trajectories},
                  {"test_trajectories", dataset.test_trajectories},
                  {"seed", dataset.seed},
                  {"kappa", dataset.params.kappa},
                  {"u0", dataset.params.u0},
                  {"vortex", dataset.params.vortex},
                  {"decay", dataset.params.decay},
                  {"inflow_scalar", dataset.params.inflow_scalar}};
  j["model"] = {{"architecture", architecture_to_string(model.architecture)},
                {"depth", model.depth},
                {"width", model.width},
                {"heads", model.heads},
                {"slices", model.slices},
                {"ffn_hidden", model.ffn_hidden},
                {"pe_mode", pe_mode_to_string(model.pe_mode)},
                {"mask_mode", model.mask_mode == MaskMode::additive
                                  ? "additive"
                                  : "hadamard_literal"},
                {"jumper_frac", model.jumper_frac},
                {"history", model.history},
                {"mnp",
                 {{"enabled", model.mnp.enabled},
                  {"centers", model.mnp.centers},
                  {"K", model.mnp.K},
                  {"alpha", model.mnp.alpha},
                  {"attend_center", model.mnp.attend_center}}},
                {"temporal",
                 {{"enabled", model.temporal.enabled},
                  {"frequency", temporal_frequency_to_string(model.temporal.frequency)},
                  {"gate_mode", gate_mode_to_string(model.temporal.gate_mode)},
                  {"intermediate_supervision",
                   model.temporal.intermediate_supervision},
                  {"use_gate", model.temporal.use_gate},
                  {"use_mixer", model.temporal.use_mixer}}}};
  j["train"] = {{"epochs", train.epochs},
                {"max_steps", train.max_steps},
                {"max_lr", train.max_lr},
                {"warmup_steps", train.warmup_steps},
                {"beta1", train.beta1},
                {"beta2", train.beta2},
                {"weight_decay", train.weight_decay},
                {"noise", train.noise.sigma},
                {"aux",
                 {{"grad_supervision", train.aux.grad_supervision},
                  {"divergence", train.aux.divergence},
                  {"cosine_sim", train.aux.cosine_sim}}},
                {"exclude_enforced_from_loss", train.exclude_enforced_from_loss},
                {"intermediate_supervision_weight",
                 train.intermediate_supervision_weight},
                {"latent_probe_interval", train.latent_probe_interval},
                {"precision", train.precision == Precision::f32 ? "f32" : "f64"}};
  j["eval"] = {{"horizon", eval_horizon}};
  j["seeds"] = seeds;
  return j.dump(2);
}

uint64_t ExperimentConfig::content_hash() const { return fnv1a64(to_json()); }

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json j = json::parse(json_text);
  ExperimentConfig cfg = default_experiment_config();
  check_keys(j, {"dataset", "model", "train", "eval", "seeds"}, "");

  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    check_keys(d,
               {"nodes", "steps", "dt", "train_trajectories", "test_trajectories",
                "seed", "kappa", "u0", "vortex", "decay", "inflow_scalar"},
               "dataset.");
    cfg.dataset.nodes = d.value("nodes", cfg.dataset.nodes);
    cfg.dataset.steps = d.value("steps", cfg.dataset.steps);
    cfg.dataset.dt = d.value("dt", cfg.dataset.dt);
    cfg.dataset.train_trajectories =
        d.value("train_trajectories", cfg.dataset.train_trajectories);
    cfg.dataset.test_trajectories =
        d.value("test_trajectories", cfg.dataset.test_trajectories);
    cfg.dataset.seed = d.value("seed", cfg.dataset.seed);
    cfg.dataset.params.kappa = d.value("kappa", cfg.dataset.params.kappa);
    cfg.dataset.params.u0 = d.value("u0", cfg.dataset.params.u0);
    cfg.dataset.params.vortex = d.value("vortex", cfg.dataset.params.vortex);
    cfg.dataset.params.decay = d.value("decay", cfg.dataset.params.decay);
    cfg.dataset.params.inflow_scalar =
        d.value("inflow_scalar", cfg.dataset.params.inflow_scalar);
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    check_keys(m,
               {"architecture", "depth", "width", "heads", "slices", "ffn_hidden",
                "pe_mode", "mask_mode", "jumper_frac", "history", "mnp", "temporal"},
               "model.");
    if (m.contains("architecture"))
      cfg.model.architecture = architecture_from_string(m["architecture"]);
    cfg.model.depth = m.value("depth", cfg.model.depth);
    cfg.model.width = m.value("width", cfg.model.width);
    cfg.model.heads = m.value("heads", cfg.model.heads);
    cfg.model.slices = m.value("slices", cfg.model.slices);
    cfg.model.ffn_hidden = m.value("ffn_hidden", cfg.model.ffn_hidden);
    if (m.contains("pe_mode")) cfg.model.pe_mode = pe_mode_from_string(m["pe_mode"]);
    if (m.contains("mask_mode")) {
      std::string s = m["mask_mode"];
      if (s == "additive") cfg.model.mask_mode = MaskMode::additive;
      else if (s == "hadamard_literal") cfg.model.mask_mode = MaskMode::hadamard_literal;
      else throw std::invalid_argument("config: unknown mask_mode " + s);
    }
    cfg.model.jumper_frac = m.value("jumper_frac", cfg.model.jumper_frac);
    cfg.model.history = m.value("history", cfg.model.history);
    if (m.contains("mnp")) {
      const json& n = m["mnp"];
      check_keys(n, {"enabled", "centers", "K", "alpha", "attend_center"},
                 "model.mnp.");
      cfg.model.mnp.enabled = n.value("enabled", cfg.model.mnp.enabled);
      cfg.model.mnp.centers = n.value("centers", cfg.model.mnp.centers);
      cfg.model.mnp.K = n.value("K", cfg.model.mnp.K);
      cfg.model.mnp.alpha = n.value("alpha", cfg.model.mnp.alpha);
      cfg.model.mnp.attend_center =
          n.value("attend_center", cfg.model.mnp.attend_center);
    }
    if (m.contains("temporal")) {
      const json& t = m["temporal"];
      check_keys(t,
                 {"enabled", "frequency", "gate_mode", "intermediate_supervision",
                  "use_gate", "use_mixer"},
                 "model.temporal.");
      cfg.model.temporal.enabled = t.value("enabled", cfg.model.temporal.enabled);
      if (t.contains("frequency"))
        cfg.model.temporal.frequency = temporal_frequency_from_string(t["frequency"]);
      if (t.contains("gate_mode"))
        cfg.model.temporal.gate_mode = gate_mode_from_string(t["gate_mode"]);
      cfg.model.temporal.intermediate_supervision = t.value(
          "intermediate_supervision", cfg.model.temporal.intermediate_supervision);
      cfg.model.temporal.use_gate = t.value("use_gate", cfg.model.temporal.use_gate);
      cfg.model.temporal.use_mixer = t.value("use_mixer", cfg.model.temporal.use_mixer);
    }
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    check_keys(t,
               {"epochs", "max_steps", "max_lr", "warmup_steps", "beta1", "beta2",
                "weight_decay", "noise", "aux", "exclude_enforced_from_loss",
                "intermediate_supervision_weight", "latent_probe_interval",
                "precision"},
               "train.");
    cfg.train.epochs = t.value("epochs", cfg.train.epochs);
    cfg.train.max_steps = t.value("max_steps", cfg.train.max_steps);
    cfg.train.max_lr = t.value("max_lr", cfg.train.max_lr);
    cfg.train.warmup_steps = t.value("warmup_steps", cfg.train.warmup_steps);
    cfg.train.beta1 = t.value("beta1", cfg.train.beta1);
    cfg.train.beta2 = t.value("beta2", cfg.train.beta2);
    cfg.train.weight_decay = t.value("weight_decay", cfg.train.weight_decay);
    if (t.contains("noise"))
      cfg.train.noise.sigma = t["noise"].get<std::vector<double>>();
    if (t.contains("aux")) {
      const json& a = t["aux"];
      check_keys(a, {"grad_supervision", "divergence", "cosine_sim"}, "train.aux.");
      cfg.train.aux.grad_supervision =
          a.value("grad_supervision", cfg.train.aux.grad_supervision);
      cfg.train.aux.divergence = a.value("divergence", cfg.train.aux.divergence);
      cfg.train.aux.cosine_sim = a.value("cosine_sim", cfg.train.aux.cosine_sim);
    }
    cfg.train.exclude_enforced_from_loss = t.value(
        "exclude_enforced_from_loss", cfg.train.exclude_enforced_from_loss);
    cfg.train.intermediate_supervision_weight =
        t.value("intermediate_supervision_weight",
                cfg.train.intermediate_supervision_weight);
    cfg.train.latent_probe_interval =
        t.value("latent_probe_interval", cfg.train.latent_probe_interval);
    if (t.contains("precision")) {
      std::string p = t["precision"];
      if (p == "f32") cfg.train.precision = Precision::f32;
      else if (p == "f64") cfg.train.precision = Precision::f64;
      else throw std::invalid_argument("config: unknown precision " + p);
    }
  }
  if (j.contains("eval")) {
    check_keys(j["eval"], {"horizon"}, "eval.");
    cfg.eval_horizon = j["eval"].value("horizon", cfg.eval_horizon);
  }
  if (j.contains("seeds")) cfg.seeds = j["seeds"].get<std::vector<uint64_t>>();
  if (cfg.seeds.empty()) throw std::invalid_argument("config: seeds must be nonempty");
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("config: cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_experiment_config(ss.str());
}

}  // namespace mrt
