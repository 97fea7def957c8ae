#include "mkat/config.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "mkat/io.hpp"
#include "mkat/record.hpp"

namespace mkat {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    fail(ErrorKind::invalid_argument, "config key '" + key + "': bad number '" + value + "'");
  }
}

int parse_int(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const long v = std::stol(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return static_cast<int>(v);
  } catch (const std::exception&) {
    fail(ErrorKind::invalid_argument, "config key '" + key + "': bad integer '" + value + "'");
  }
}

int64_t parse_i64(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const long long v = std::stoll(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    fail(ErrorKind::invalid_argument, "config key '" + key + "': bad integer '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  fail(ErrorKind::invalid_argument, "config key '" + key + "': bad boolean '" + value + "'");
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : value) {
    if (c == ',') {
      if (!trim(cur).empty()) out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!trim(cur).empty()) out.push_back(trim(cur));
  return out;
}

}  // namespace

ExperimentConfig default_config() { return ExperimentConfig{}; }

void ExperimentConfig::validate() const {
  train.validate();
  pair.validate();
  if (methods.empty()) fail(ErrorKind::invalid_argument, "config: empty method list");
  for (const auto& m : methods) parse_method(m);
  if (seeds.empty()) fail(ErrorKind::invalid_argument, "config: empty seed list");
  if (n_target_test < 2 * pair.target_classes || n_surrogate < 2 * pair.source_classes)
    fail(ErrorKind::invalid_argument, "config: evaluation sets too small");
  if (discrepancy_mode != "auto") parse_discrepancy_mode(discrepancy_mode);
  if (trials < 1) fail(ErrorKind::invalid_argument, "config: trials must be >= 1");
  if (pretrain.steps < 1 || pretrain.batch_size < 1 || pretrain.learning_rate <= 0.0)
    fail(ErrorKind::invalid_argument, "config: bad pretrain settings");
}

KeyValues parse_key_values(const std::string& text, const std::string& context) {
  KeyValues out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped.front() == '#') continue;
    const size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::invalid_argument,
           context + ":" + std::to_string(lineno) + ": expected key=value, got '" + stripped + "'");
    out.emplace_back(trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
  }
  return out;
}

void apply_key_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  // Training recipe.
  if (key == "alpha") cfg.train.inner_lr = parse_double(key, value);
  else if (key == "beta") cfg.train.meta_lr = parse_double(key, value);
  else if (key == "finetune_lr") cfg.train.finetune_lr = parse_double(key, value);
  else if (key == "momentum") cfg.train.momentum = parse_double(key, value);
  else if (key == "lambda") cfg.train.lambda = parse_double(key, value);
  else if (key == "stage1_iters") cfg.train.stage1_iters = parse_int(key, value);
  else if (key == "stage2_iters") cfg.train.stage2_iters = parse_int(key, value);
  else if (key == "inner_steps") cfg.train.inner_steps = parse_int(key, value);
  else if (key == "batch_size") cfg.train.batch_size = parse_int(key, value);
  else if (key == "source_batch_size") cfg.train.source_batch_size = parse_int(key, value);
  else if (key == "outer_variant") cfg.train.outer.variant = parse_outer_variant(value);
  else if (key == "literal_eq5_signs") cfg.train.outer.literal_signs = parse_bool(key, value);
  else if (key == "supcon_temperature") cfg.train.outer.supcon_temperature = parse_double(key, value);
  // Modality pair.
  else if (key == "source_classes") cfg.pair.source_classes = parse_int(key, value);
  else if (key == "target_classes") cfg.pair.target_classes = parse_int(key, value);
  else if (key == "delta") cfg.pair.delta = parse_double(key, value);
  else if (key == "transform") cfg.pair.transform = parse_transform(value);
  else if (key == "noise") cfg.pair.noise = parse_double(key, value);
  else if (key == "n_source") cfg.pair.n_source = parse_int(key, value);
  else if (key == "n_target") cfg.pair.n_target = parse_int(key, value);
  else if (key == "latent_dim") cfg.pair.latent_dim = parse_int(key, value);
  else if (key == "source_raw_dim") cfg.pair.source_raw_dim = parse_int(key, value);
  else if (key == "target_raw_dim") cfg.pair.target_raw_dim = parse_int(key, value);
  else if (key == "subclusters") cfg.pair.subclusters = parse_int(key, value);
  // Model shape / pretraining.
  else if (key == "embed_dim") cfg.pretrain.embed_dim = parse_int(key, value);
  else if (key == "hidden_dim") cfg.pretrain.hidden_dim = parse_int(key, value);
  else if (key == "encoder_depth") cfg.pretrain.encoder_depth = parse_int(key, value);
  else if (key == "pretrain_steps") cfg.pretrain.steps = parse_int(key, value);
  else if (key == "pretrain_batch_size") cfg.pretrain.batch_size = parse_int(key, value);
  else if (key == "pretrain_lr") cfg.pretrain.learning_rate = parse_double(key, value);
  else if (key == "pretrain_momentum") cfg.pretrain.momentum = parse_double(key, value);
  else if (key == "pretrain_target_error") cfg.pretrain.target_train_error = parse_double(key, value);
  // Experiment plumbing.
  else if (key == "methods") cfg.methods = split_list(value);
  else if (key == "seeds") {
    cfg.seeds.clear();
    for (const auto& s : split_list(value))
      cfg.seeds.push_back(static_cast<uint64_t>(parse_i64(key, s)));
  }
  else if (key == "seed") cfg.data_seed = static_cast<uint64_t>(parse_i64(key, value));
  else if (key == "n_target_test") cfg.n_target_test = parse_int(key, value);
  else if (key == "n_surrogate") cfg.n_surrogate = parse_int(key, value);
  else if (key == "mode") {
    if (value != "auto") parse_discrepancy_mode(value);
    cfg.discrepancy_mode = value;
  }
  else if (key == "trials") cfg.trials = parse_i64(key, value);
  else if (key == "out") cfg.out_dir = value;
  else
    fail(ErrorKind::invalid_argument, "unknown config key '" + key + "'");
}

void apply_key_values(ExperimentConfig& cfg, const KeyValues& kvs) {
  for (const auto& [key, value] : kvs) apply_key_value(cfg, key, value);
}

ExperimentConfig load_config_file(const std::string& path) {
  ExperimentConfig cfg = default_config();
  apply_key_values(cfg, parse_key_values(read_text_file(path), path));
  return cfg;
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> kv;
  const auto num = [](double v) { return format_double(v); };
  kv.emplace_back("alpha", num(cfg.train.inner_lr));
  kv.emplace_back("beta", num(cfg.train.meta_lr));
  kv.emplace_back("finetune_lr", num(cfg.train.finetune_lr));
  kv.emplace_back("momentum", num(cfg.train.momentum));
  kv.emplace_back("lambda", num(cfg.train.lambda));
  kv.emplace_back("stage1_iters", std::to_string(cfg.train.stage1_iters));
  kv.emplace_back("stage2_iters", std::to_string(cfg.train.stage2_iters));
  kv.emplace_back("inner_steps", std::to_string(cfg.train.inner_steps));
  kv.emplace_back("batch_size", std::to_string(cfg.train.batch_size));
  kv.emplace_back("source_batch_size", std::to_string(cfg.train.source_batch_size));
  kv.emplace_back("outer_variant", outer_variant_name(cfg.train.outer.variant));
  kv.emplace_back("literal_eq5_signs", cfg.train.outer.literal_signs ? "true" : "false");
  kv.emplace_back("supcon_temperature", num(cfg.train.outer.supcon_temperature));
  kv.emplace_back("source_classes", std::to_string(cfg.pair.source_classes));
  kv.emplace_back("target_classes", std::to_string(cfg.pair.target_classes));
  kv.emplace_back("delta", num(cfg.pair.delta));
  kv.emplace_back("transform", transform_name(cfg.pair.transform));
  kv.emplace_back("noise", num(cfg.pair.noise));
  kv.emplace_back("n_source", std::to_string(cfg.pair.n_source));
  kv.emplace_back("n_target", std::to_string(cfg.pair.n_target));
  kv.emplace_back("latent_dim", std::to_string(cfg.pair.latent_dim));
  kv.emplace_back("source_raw_dim", std::to_string(cfg.pair.source_raw_dim));
  kv.emplace_back("target_raw_dim", std::to_string(cfg.pair.target_raw_dim));
  kv.emplace_back("subclusters", std::to_string(cfg.pair.subclusters));
  kv.emplace_back("embed_dim", std::to_string(cfg.pretrain.embed_dim));
  kv.emplace_back("hidden_dim", std::to_string(cfg.pretrain.hidden_dim));
  kv.emplace_back("encoder_depth", std::to_string(cfg.pretrain.encoder_depth));
  kv.emplace_back("pretrain_steps", std::to_string(cfg.pretrain.steps));
  kv.emplace_back("pretrain_batch_size", std::to_string(cfg.pretrain.batch_size));
  kv.emplace_back("pretrain_lr", num(cfg.pretrain.learning_rate));
  kv.emplace_back("pretrain_momentum", num(cfg.pretrain.momentum));
  kv.emplace_back("pretrain_target_error", num(cfg.pretrain.target_train_error));
  {
    std::string methods;
    for (const auto& m : cfg.methods) {
      if (!methods.empty()) methods += ',';
      methods += m;
    }
    kv.emplace_back("methods", methods);
  }
  {
    std::string seeds;
    for (uint64_t s : cfg.seeds) {
      if (!seeds.empty()) seeds += ',';
      seeds += std::to_string(s);
    }
    kv.emplace_back("seeds", seeds);
  }
  kv.emplace_back("seed", std::to_string(cfg.data_seed));
  kv.emplace_back("n_target_test", std::to_string(cfg.n_target_test));
  kv.emplace_back("n_surrogate", std::to_string(cfg.n_surrogate));
  kv.emplace_back("mode", cfg.discrepancy_mode);
  kv.emplace_back("trials", std::to_string(cfg.trials));
  if (!cfg.out_dir.empty()) kv.emplace_back("out", cfg.out_dir);

  std::sort(kv.begin(), kv.end());
  std::string out;
  for (const auto& [k, v] : kv) {
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
  return out;
}

}  // namespace mkat
