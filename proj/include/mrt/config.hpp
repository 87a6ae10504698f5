#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mrt/model.hpp"
#include "mrt/synthetic.hpp"
#include "mrt/training.hpp"

namespace mrt {

/// Complete declarative run description. A config plus its seed list fully
/// determines every artifact a run writes.
struct ExperimentConfig {
  DatasetConfig dataset;
  ModelConfig model;
  TrainConfig train;
  size_t eval_horizon = 99;
  std::vector<uint64_t> seeds{1, 2, 3, 4, 5};

  uint64_t content_hash() const;
  std::string to_json() const;
};

ExperimentConfig default_experiment_config();

/// Parses and validates a config JSON string. Unknown keys are rejected with
/// the offending path in the message.
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);

uint64_t fnv1a64(const std::string& s);

}  // namespace mrt
