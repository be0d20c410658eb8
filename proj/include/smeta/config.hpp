#pragma once

#include <cstdint>
#include <string>

namespace smeta {

enum class RunMethod { kProtonet, kMaml };

RunMethod run_method_from_string(const std::string& name);
std::string run_method_name(RunMethod m);

// Flat experiment configuration. Parsed from `key = value` text (one pair
// per line, '#' comments) plus command-line overrides of the same form.
// Unknown keys are rejected by name; every field is range-checked by
// validate_config before a run starts.
struct RunConfig {
  RunMethod method = RunMethod::kProtonet;
  bool normalize = false;  // protonet: score on unit-norm prototypes

  // Penalty weights: lambda1 scales the condition-number term, lambda2 the
  // squared Frobenius term (adapted-head batch matrix), lambda_entropy the
  // singular-value entropy term on the scoring prototypes.
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double lambda_entropy = 0.0;

  double alpha = 0.1;   // inner-loop step size
  double beta = 0.005;  // outer-loop step size
  int inner_steps_train = 5;
  int inner_steps_eval = 10;

  int n_way = 5;
  int k_shot = 1;
  int n_query = 10;
  int episodes = 2000;  // training episodes per run
  int batch = 4;        // episodes per outer step (adapted-head method)
  int eval_episodes = 400;

  // Task family: gaussian class clusters in ambient_dim dimensions, means on
  // the radius sphere, within-class noise noise_std, class_pool classes.
  // The embedding is narrower than n_way so each episode's predictor rows
  // span it; conditioning comparisons are then about genuine spectra rather
  // than the noise floor of an unspanned dimension.
  int ambient_dim = 16;
  int embed_dim = 4;
  double class_radius = 4.0;
  double noise_std = 1.0;
  int class_pool = 64;

  uint64_t seed = 1;  // master seed of the first run
  int seeds = 20;     // paired-run count; run i uses master seed + i
  std::string out_dir = "out";
};

// Parses `key = value` lines. Throws std::invalid_argument naming the first
// unknown key or unparseable value. Later lines override earlier ones.
RunConfig parse_config(const std::string& text, const RunConfig& base = RunConfig());
RunConfig load_config(const std::string& path, const RunConfig& base = RunConfig());

// Applies one `key=value` override in place.
void apply_override(RunConfig& cfg, const std::string& assignment);

// Range checks (positive counts, non-negative weights, method-specific
// coherence). Throws std::invalid_argument naming the offending key.
void validate_config(const RunConfig& cfg);

// Canonical `key = value` dump (every key, parse round-trip exact).
std::string config_to_string(const RunConfig& cfg);

}  // namespace smeta
