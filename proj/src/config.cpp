#include "smeta/config.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace smeta {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_real(const std::string& key, const std::string& value) {
  char* end = nullptr;
  double v = std::strtod(value.c_str(), &end);
  if (end == value.c_str() || *end != '\0') {
    throw std::invalid_argument("config: bad numeric value for " + key + ": '" + value + "'");
  }
  return v;
}

int parse_int(const std::string& key, const std::string& value) {
  double v = parse_real(key, value);
  int i = static_cast<int>(v);
  if (static_cast<double>(i) != v) {
    throw std::invalid_argument("config: " + key + " must be an integer, got '" + value + "'");
  }
  return i;
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
  char* end = nullptr;
  unsigned long long v = std::strtoull(value.c_str(), &end, 10);
  if (end == value.c_str() || *end != '\0') {
    throw std::invalid_argument("config: bad seed value for " + key + ": '" + value + "'");
  }
  return static_cast<uint64_t>(v);
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  throw std::invalid_argument("config: " + key + " expects true/false, got '" + value + "'");
}

void assign(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "method") {
    cfg.method = run_method_from_string(value);
  } else if (key == "normalize") {
    cfg.normalize = parse_bool(key, value);
  } else if (key == "lambda1") {
    cfg.lambda1 = parse_real(key, value);
  } else if (key == "lambda2") {
    cfg.lambda2 = parse_real(key, value);
  } else if (key == "lambda_entropy") {
    cfg.lambda_entropy = parse_real(key, value);
  } else if (key == "alpha") {
    cfg.alpha = parse_real(key, value);
  } else if (key == "beta") {
    cfg.beta = parse_real(key, value);
  } else if (key == "inner_steps_train") {
    cfg.inner_steps_train = parse_int(key, value);
  } else if (key == "inner_steps_eval") {
    cfg.inner_steps_eval = parse_int(key, value);
  } else if (key == "n_way") {
    cfg.n_way = parse_int(key, value);
  } else if (key == "k_shot") {
    cfg.k_shot = parse_int(key, value);
  } else if (key == "n_query") {
    cfg.n_query = parse_int(key, value);
  } else if (key == "episodes") {
    cfg.episodes = parse_int(key, value);
  } else if (key == "batch") {
    cfg.batch = parse_int(key, value);
  } else if (key == "eval_episodes") {
    cfg.eval_episodes = parse_int(key, value);
  } else if (key == "ambient_dim") {
    cfg.ambient_dim = parse_int(key, value);
  } else if (key == "embed_dim") {
    cfg.embed_dim = parse_int(key, value);
  } else if (key == "class_radius") {
    cfg.class_radius = parse_real(key, value);
  } else if (key == "noise_std") {
    cfg.noise_std = parse_real(key, value);
  } else if (key == "class_pool") {
    cfg.class_pool = parse_int(key, value);
  } else if (key == "seed") {
    cfg.seed = parse_u64(key, value);
  } else if (key == "seeds") {
    cfg.seeds = parse_int(key, value);
  } else if (key == "out_dir") {
    cfg.out_dir = value;
  } else {
    throw std::invalid_argument("config: unknown key '" + key + "'");
  }
}

void require(bool ok, const char* message) {
  if (!ok) throw std::invalid_argument(std::string("config: ") + message);
}

}  // namespace

RunMethod run_method_from_string(const std::string& name) {
  if (name == "protonet") return RunMethod::kProtonet;
  if (name == "maml") return RunMethod::kMaml;
  throw std::invalid_argument("config: unknown method '" + name + "'");
}

std::string run_method_name(RunMethod m) {
  return m == RunMethod::kProtonet ? "protonet" : "maml";
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  size_t eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw std::invalid_argument("config: override needs key=value, got '" + assignment + "'");
  }
  std::string key = trim(assignment.substr(0, eq));
  std::string value = trim(assignment.substr(eq + 1));
  if (key.empty()) {
    throw std::invalid_argument("config: empty key in override '" + assignment + "'");
  }
  assign(cfg, key, value);
}

RunConfig parse_config(const std::string& text, const RunConfig& base) {
  RunConfig cfg = base;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      apply_override(cfg, line);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(std::string(e.what()) + " (line " + std::to_string(lineno) +
                                  ")");
    }
  }
  return cfg;
}

RunConfig load_config(const std::string& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) {
    throw std::invalid_argument("config: cannot open " + path);
  }
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), base);
}

void validate_config(const RunConfig& cfg) {
  require(cfg.lambda1 >= 0.0, "lambda1 must be >= 0");
  require(cfg.lambda2 >= 0.0, "lambda2 must be >= 0");
  require(cfg.lambda_entropy >= 0.0, "lambda_entropy must be >= 0");
  require(cfg.alpha > 0.0, "alpha must be > 0");
  require(cfg.beta > 0.0, "beta must be > 0");
  require(cfg.inner_steps_train >= 0, "inner_steps_train must be >= 0");
  require(cfg.inner_steps_eval >= 0, "inner_steps_eval must be >= 0");
  require(cfg.n_way >= 2, "n_way must be >= 2");
  require(cfg.k_shot >= 1, "k_shot must be >= 1");
  require(cfg.n_query >= 1, "n_query must be >= 1");
  require(cfg.episodes >= 1, "episodes must be >= 1");
  require(cfg.batch >= 1, "batch must be >= 1");
  require(cfg.eval_episodes >= 0, "eval_episodes must be >= 0");
  require(cfg.ambient_dim >= 1, "ambient_dim must be >= 1");
  require(cfg.embed_dim >= 1, "embed_dim must be >= 1");
  require(cfg.class_radius > 0.0, "class_radius must be > 0");
  require(cfg.noise_std >= 0.0, "noise_std must be >= 0");
  require(cfg.class_pool >= cfg.n_way, "class_pool must be >= n_way");
  require(cfg.seeds >= 1, "seeds must be >= 1");
  require(!cfg.out_dir.empty(), "out_dir must not be empty");
  if (cfg.method == RunMethod::kProtonet) {
    require(cfg.lambda2 == 0.0, "lambda2 applies to the adapted-head method only");
  } else {
    require(cfg.lambda_entropy == 0.0, "lambda_entropy applies to the prototype method only");
    require(!cfg.normalize, "normalize applies to the prototype method only");
  }
}

std::string config_to_string(const RunConfig& cfg) {
  std::ostringstream out;
  char buf[64];
  auto real = [&buf](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  out << "method = " << run_method_name(cfg.method) << "\n";
  out << "normalize = " << (cfg.normalize ? "true" : "false") << "\n";
  out << "lambda1 = " << real(cfg.lambda1) << "\n";
  out << "lambda2 = " << real(cfg.lambda2) << "\n";
  out << "lambda_entropy = " << real(cfg.lambda_entropy) << "\n";
  out << "alpha = " << real(cfg.alpha) << "\n";
  out << "beta = " << real(cfg.beta) << "\n";
  out << "inner_steps_train = " << cfg.inner_steps_train << "\n";
  out << "inner_steps_eval = " << cfg.inner_steps_eval << "\n";
  out << "n_way = " << cfg.n_way << "\n";
  out << "k_shot = " << cfg.k_shot << "\n";
  out << "n_query = " << cfg.n_query << "\n";
  out << "episodes = " << cfg.episodes << "\n";
  out << "batch = " << cfg.batch << "\n";
  out << "eval_episodes = " << cfg.eval_episodes << "\n";
  out << "ambient_dim = " << cfg.ambient_dim << "\n";
  out << "embed_dim = " << cfg.embed_dim << "\n";
  out << "class_radius = " << real(cfg.class_radius) << "\n";
  out << "noise_std = " << real(cfg.noise_std) << "\n";
  out << "class_pool = " << cfg.class_pool << "\n";
  std::snprintf(buf, sizeof buf, "%" PRIu64, cfg.seed);
  out << "seed = " << buf << "\n";
  out << "seeds = " << cfg.seeds << "\n";
  out << "out_dir = " << cfg.out_dir << "\n";
  return out.str();
}

}  // namespace smeta
