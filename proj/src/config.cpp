#include "idguard/config.hpp"

#include <fstream>
#include <stdexcept>

namespace idguard {

using nlohmann::json;

std::string to_string(WeightStrategy s) {
  switch (s) {
    case WeightStrategy::kEquivalent: return "equivalent";
    case WeightStrategy::kPrior: return "prior";
    case WeightStrategy::kKpi: return "kpi";
    case WeightStrategy::kMgda: return "mgda";
  }
  return "?";
}

WeightStrategy weight_strategy_from_string(const std::string& s) {
  if (s == "equivalent") return WeightStrategy::kEquivalent;
  if (s == "prior") return WeightStrategy::kPrior;
  if (s == "kpi") return WeightStrategy::kKpi;
  if (s == "mgda") return WeightStrategy::kMgda;
  throw std::invalid_argument("unknown weighting.strategy: " + s);
}

std::string to_string(PriorMode m) {
  switch (m) {
    case PriorMode::kGradientPrior: return "gradient_prior";
    case PriorMode::kRandomNoise: return "random_noise";
    case PriorMode::kNone: return "none";
  }
  return "?";
}

PriorMode prior_mode_from_string(const std::string& s) {
  if (s == "gradient_prior") return PriorMode::kGradientPrior;
  if (s == "random_noise") return PriorMode::kRandomNoise;
  if (s == "none") return PriorMode::kNone;
  throw std::invalid_argument("unknown trainer.prior_mode: " + s);
}

namespace {

void expect_keys(const json& obj, const std::string& path, const std::vector<std::string>& allowed) {
  for (const auto& [k, v] : obj.items()) {
    bool ok = false;
    for (const auto& a : allowed)
      if (k == a) {
        ok = true;
        break;
      }
    if (!ok) throw std::invalid_argument("unknown config key: " + (path.empty() ? k : path + "." + k));
  }
}

template <typename T>
void get_to(const json& obj, const char* key, T& target, const std::string& path) {
  if (!obj.contains(key)) return;
  try {
    obj.at(key).get_to(target);
  } catch (const json::exception& e) {
    throw std::invalid_argument("bad value for config key " + path + "." + key + ": " + e.what());
  }
}

ModelDesc model_from_json(const json& j, const std::string& path) {
  expect_keys(j, path,
              {"name", "base_channels", "downsamples", "res_blocks", "instance_norm",
               "attribute_arity", "feature_tap", "epochs", "gate_mse"});
  ModelDesc d;
  get_to(j, "name", d.name, path);
  get_to(j, "base_channels", d.base_channels, path);
  get_to(j, "downsamples", d.downsamples, path);
  get_to(j, "res_blocks", d.res_blocks, path);
  get_to(j, "instance_norm", d.instance_norm, path);
  get_to(j, "attribute_arity", d.attribute_arity, path);
  get_to(j, "feature_tap", d.feature_tap, path);
  get_to(j, "epochs", d.epochs, path);
  get_to(j, "gate_mse", d.gate_mse, path);
  return d;
}

json model_to_json(const ModelDesc& d) {
  return json{{"name", d.name},
              {"base_channels", d.base_channels},
              {"downsamples", d.downsamples},
              {"res_blocks", d.res_blocks},
              {"instance_norm", d.instance_norm},
              {"attribute_arity", d.attribute_arity},
              {"feature_tap", d.feature_tap},
              {"epochs", d.epochs},
              {"gate_mse", d.gate_mse}};
}

}  // namespace

RunConfig config_from_json(const json& j) {
  RunConfig c = default_toy_config();
  c.models.clear();

  expect_keys(j, "",
              {"seed", "image_size", "epsilon", "pgd", "prior", "weighting", "optimizer",
               "thresholds", "models", "dataset", "surrogate", "embedder", "loss", "metrics",
               "trainer", "adv_train"});
  get_to(j, "seed", c.seed, "");
  get_to(j, "image_size", c.image_size, "");
  get_to(j, "epsilon", c.epsilon, "");

  if (j.contains("pgd")) {
    const json& p = j.at("pgd");
    expect_keys(p, "pgd", {"iters", "step", "random_start"});
    get_to(p, "iters", c.pgd.iters, "pgd");
    get_to(p, "step", c.pgd.step, "pgd");
    get_to(p, "random_start", c.pgd.random_start, "pgd");
  }
  if (j.contains("prior")) {
    const json& p = j.at("prior");
    expect_keys(p, "prior", {"sample_count"});
    get_to(p, "sample_count", c.prior.sample_count, "prior");
  }
  if (j.contains("weighting")) {
    const json& p = j.at("weighting");
    expect_keys(p, "weighting", {"strategy", "alpha", "kpi_floor", "beta_floor", "mgda"});
    std::string strat = to_string(c.weighting.strategy);
    get_to(p, "strategy", strat, "weighting");
    c.weighting.strategy = weight_strategy_from_string(strat);
    get_to(p, "alpha", c.weighting.alpha, "weighting");
    get_to(p, "kpi_floor", c.weighting.kpi_floor, "weighting");
    get_to(p, "beta_floor", c.weighting.beta_floor, "weighting");
    if (p.contains("mgda")) {
      const json& m = p.at("mgda");
      expect_keys(m, "weighting.mgda", {"max_iters", "tol", "normalize_gradients"});
      get_to(m, "max_iters", c.weighting.mgda.max_iters, "weighting.mgda");
      get_to(m, "tol", c.weighting.mgda.tol, "weighting.mgda");
      get_to(m, "normalize_gradients", c.weighting.mgda.normalize_gradients, "weighting.mgda");
    }
  }
  if (j.contains("optimizer")) {
    const json& p = j.at("optimizer");
    expect_keys(p, "optimizer", {"learning_rate", "batch_size", "max_iterations"});
    get_to(p, "learning_rate", c.optimizer.learning_rate, "optimizer");
    get_to(p, "batch_size", c.optimizer.batch_size, "optimizer");
    get_to(p, "max_iterations", c.optimizer.max_iterations, "optimizer");
  }
  if (j.contains("thresholds")) {
    const json& p = j.at("thresholds");
    expect_keys(p, "thresholds", {"l2face", "id_sim"});
    get_to(p, "l2face", c.thresholds.l2face, "thresholds");
    get_to(p, "id_sim", c.thresholds.id_sim, "thresholds");
  }
  if (j.contains("models")) {
    const json& arr = j.at("models");
    if (!arr.is_array()) throw std::invalid_argument("models must be an array");
    for (size_t i = 0; i < arr.size(); ++i)
      c.models.push_back(model_from_json(arr[i], "models." + std::to_string(i)));
  } else {
    c.models = default_toy_config().models;
  }
  if (j.contains("dataset")) {
    const json& p = j.at("dataset");
    expect_keys(p, "dataset", {"count", "samples_per_identity", "holdout_per_identity"});
    get_to(p, "count", c.dataset.count, "dataset");
    get_to(p, "samples_per_identity", c.dataset.samples_per_identity, "dataset");
    get_to(p, "holdout_per_identity", c.dataset.holdout_per_identity, "dataset");
  }
  if (j.contains("surrogate")) {
    const json& p = j.at("surrogate");
    expect_keys(p, "surrogate", {"base_channels", "downsamples", "res_blocks", "epochs", "gate_mse"});
    get_to(p, "base_channels", c.surrogate.base_channels, "surrogate");
    get_to(p, "downsamples", c.surrogate.downsamples, "surrogate");
    get_to(p, "res_blocks", c.surrogate.res_blocks, "surrogate");
    get_to(p, "epochs", c.surrogate.epochs, "surrogate");
    get_to(p, "gate_mse", c.surrogate.gate_mse, "surrogate");
  }
  if (j.contains("embedder")) {
    const json& p = j.at("embedder");
    expect_keys(p, "embedder", {"embed_dim", "base_channels", "epochs", "margin_gate", "softmax_scale"});
    get_to(p, "embed_dim", c.embedder.embed_dim, "embedder");
    get_to(p, "base_channels", c.embedder.base_channels, "embedder");
    get_to(p, "epochs", c.embedder.epochs, "embedder");
    get_to(p, "margin_gate", c.embedder.margin_gate, "embedder");
    get_to(p, "softmax_scale", c.embedder.softmax_scale, "embedder");
  }
  if (j.contains("loss")) {
    const json& p = j.at("loss");
    expect_keys(p, "loss", {"normalization"});
    get_to(p, "normalization", c.loss.normalization, "loss");
  }
  if (j.contains("metrics")) {
    const json& p = j.at("metrics");
    expect_keys(p, "metrics", {"channel_mode", "eval_embedder_path", "triptych_count"});
    get_to(p, "channel_mode", c.metrics.channel_mode, "metrics");
    get_to(p, "eval_embedder_path", c.metrics.eval_embedder_path, "metrics");
    get_to(p, "triptych_count", c.metrics.triptych_count, "metrics");
  }
  if (j.contains("trainer")) {
    const json& p = j.at("trainer");
    expect_keys(p, "trainer",
                {"prior_mode", "model_learning_rate", "model_batch_size", "checkpoint_every",
                 "log_every", "threads"});
    std::string mode = to_string(c.trainer.prior_mode);
    get_to(p, "prior_mode", mode, "trainer");
    c.trainer.prior_mode = prior_mode_from_string(mode);
    get_to(p, "model_learning_rate", c.trainer.model_learning_rate, "trainer");
    get_to(p, "model_batch_size", c.trainer.model_batch_size, "trainer");
    get_to(p, "checkpoint_every", c.trainer.checkpoint_every, "trainer");
    get_to(p, "log_every", c.trainer.log_every, "trainer");
    get_to(p, "threads", c.trainer.threads, "trainer");
  }
  if (j.contains("adv_train")) {
    const json& p = j.at("adv_train");
    expect_keys(p, "adv_train",
                {"model_index", "iterations", "n_g", "n_m", "model_learning_rate",
                 "gen_learning_rate"});
    get_to(p, "model_index", c.adv_train.model_index, "adv_train");
    get_to(p, "iterations", c.adv_train.iterations, "adv_train");
    get_to(p, "n_g", c.adv_train.n_g, "adv_train");
    get_to(p, "n_m", c.adv_train.n_m, "adv_train");
    get_to(p, "model_learning_rate", c.adv_train.model_learning_rate, "adv_train");
    get_to(p, "gen_learning_rate", c.adv_train.gen_learning_rate, "adv_train");
  }
  c.validate();
  return c;
}

void RunConfig::validate() const {
  auto bad = [](const std::string& m) { throw std::invalid_argument("config: " + m); };
  if (epsilon <= 0.0) bad("epsilon must be > 0");
  if (image_size < 32) bad("image_size must be >= 32");
  if (pgd.iters < 1) bad("pgd.iters must be >= 1");
  if (pgd.step <= 0.0) bad("pgd.step must be > 0");
  if (pgd.step > epsilon) bad("pgd.step must be <= epsilon");
  if (prior.sample_count < 1) bad("prior.sample_count must be >= 1");
  if (thresholds.l2face <= 0.0 || thresholds.id_sim <= 0.0) bad("thresholds must be positive");
  if (models.empty()) bad("at least one model descriptor is required");
  const bool needs_alpha =
      weighting.strategy == WeightStrategy::kPrior || weighting.strategy == WeightStrategy::kKpi;
  if (needs_alpha && weighting.alpha.size() != models.size())
    bad("weighting.alpha length must equal the number of models for strategy " +
        to_string(weighting.strategy));
  for (double a : weighting.alpha)
    if (a <= 0.0) bad("weighting.alpha entries must be > 0");
  if (weighting.kpi_floor <= 0.0 || weighting.kpi_floor > 1.0) bad("weighting.kpi_floor out of (0,1]");
  if (weighting.beta_floor <= 0.0) bad("weighting.beta_floor must be > 0");
  if (weighting.mgda.max_iters < 1) bad("weighting.mgda.max_iters must be >= 1");
  if (weighting.mgda.tol <= 0.0) bad("weighting.mgda.tol must be > 0");
  if (optimizer.learning_rate <= 0.0) bad("optimizer.learning_rate must be > 0");
  if (optimizer.batch_size < 1) bad("optimizer.batch_size must be >= 1");
  if (optimizer.max_iterations < 1) bad("optimizer.max_iterations must be >= 1");
  for (const auto& m : models) {
    if (m.attribute_arity < 1) bad("model attribute_arity must be >= 1");
    if (m.base_channels < 4) bad("model base_channels must be >= 4");
    if (m.downsamples < 1 || m.downsamples > 3) bad("model downsamples must be in [1,3]");
    if (m.res_blocks < 0) bad("model res_blocks must be >= 0");
    if (m.feature_tap != "encoder" && m.feature_tap != "decoder")
      bad("model feature_tap must be 'encoder' or 'decoder'");
  }
  if (dataset.count < 1) bad("dataset.count must be >= 1");
  if (dataset.samples_per_identity < 1) bad("dataset.samples_per_identity must be >= 1");
  if (dataset.holdout_per_identity < 0 ||
      dataset.holdout_per_identity >= dataset.samples_per_identity)
    bad("dataset.holdout_per_identity must be in [0, samples_per_identity)");
  if (loss.normalization != "rms" && loss.normalization != "raw_sum")
    bad("loss.normalization must be 'rms' or 'raw_sum'");
  if (metrics.channel_mode != "mean" && metrics.channel_mode != "sum")
    bad("metrics.channel_mode must be 'mean' or 'sum'");
  if (embedder.embed_dim < 2) bad("embedder.embed_dim must be >= 2");
  if (trainer.threads < 1) bad("trainer.threads must be >= 1");
  if (adv_train.model_index < 0 || adv_train.model_index >= static_cast<int>(models.size()))
    bad("adv_train.model_index out of range");
  if (adv_train.n_g < 1 || adv_train.n_m < 1) bad("adv_train.n_g / n_m must be >= 1");
}

nlohmann::json RunConfig::to_json() const {
  json models_j = json::array();
  for (const auto& m : models) models_j.push_back(model_to_json(m));
  return json{
      {"seed", seed},
      {"image_size", image_size},
      {"epsilon", epsilon},
      {"pgd", {{"iters", pgd.iters}, {"step", pgd.step}, {"random_start", pgd.random_start}}},
      {"prior", {{"sample_count", prior.sample_count}}},
      {"weighting",
       {{"strategy", to_string(weighting.strategy)},
        {"alpha", weighting.alpha},
        {"kpi_floor", weighting.kpi_floor},
        {"beta_floor", weighting.beta_floor},
        {"mgda",
         {{"max_iters", weighting.mgda.max_iters},
          {"tol", weighting.mgda.tol},
          {"normalize_gradients", weighting.mgda.normalize_gradients}}}}},
      {"optimizer",
       {{"learning_rate", optimizer.learning_rate},
        {"batch_size", optimizer.batch_size},
        {"max_iterations", optimizer.max_iterations}}},
      {"thresholds", {{"l2face", thresholds.l2face}, {"id_sim", thresholds.id_sim}}},
      {"models", models_j},
      {"dataset",
       {{"count", dataset.count},
        {"samples_per_identity", dataset.samples_per_identity},
        {"holdout_per_identity", dataset.holdout_per_identity}}},
      {"surrogate",
       {{"base_channels", surrogate.base_channels},
        {"downsamples", surrogate.downsamples},
        {"res_blocks", surrogate.res_blocks},
        {"epochs", surrogate.epochs},
        {"gate_mse", surrogate.gate_mse}}},
      {"embedder",
       {{"embed_dim", embedder.embed_dim},
        {"base_channels", embedder.base_channels},
        {"epochs", embedder.epochs},
        {"margin_gate", embedder.margin_gate},
        {"softmax_scale", embedder.softmax_scale}}},
      {"loss", {{"normalization", loss.normalization}}},
      {"metrics",
       {{"channel_mode", metrics.channel_mode},
        {"eval_embedder_path", metrics.eval_embedder_path},
        {"triptych_count", metrics.triptych_count}}},
      {"trainer",
       {{"prior_mode", to_string(trainer.prior_mode)},
        {"model_learning_rate", trainer.model_learning_rate},
        {"model_batch_size", trainer.model_batch_size},
        {"checkpoint_every", trainer.checkpoint_every},
        {"log_every", trainer.log_every},
        {"threads", trainer.threads}}},
      {"adv_train",
       {{"model_index", adv_train.model_index},
        {"iterations", adv_train.iterations},
        {"n_g", adv_train.n_g},
        {"n_m", adv_train.n_m},
        {"model_learning_rate", adv_train.model_learning_rate},
        {"gen_learning_rate", adv_train.gen_learning_rate}}}};
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("override must look like key.path=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;  // unquoted strings like kpi or encoder
  }

  std::vector<std::string> parts;
  std::string cur;
  for (char ch : path) {
    if (ch == '.') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  parts.push_back(cur);
  if (parts.empty() || parts.front().empty())
    throw std::invalid_argument("empty override path: " + assignment);

  json* node = &j;
  for (size_t i = 0; i + 1 < parts.size(); ++i) {
    const std::string& p = parts[i];
    if (node->is_array() || (!p.empty() && std::isdigit(static_cast<unsigned char>(p[0])))) {
      const size_t idx = static_cast<size_t>(std::stoul(p));
      if (!node->is_array() || idx >= node->size())
        throw std::invalid_argument("override index out of range: " + assignment);
      node = &(*node)[idx];
    } else {
      node = &(*node)[p];
    }
  }
  const std::string& leaf = parts.back();
  if (node->is_array()) {
    const size_t idx = static_cast<size_t>(std::stoul(leaf));
    if (idx >= node->size()) throw std::invalid_argument("override index out of range: " + assignment);
    (*node)[idx] = value;
  } else {
    (*node)[leaf] = value;
  }
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file: " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config parse error in " + path + ": " + e.what());
  }
  for (const auto& o : overrides) apply_override(j, o);
  return config_from_json(j);
}

RunConfig default_toy_config() {
  RunConfig c;
  c.models = {
      ModelDesc{"cnet-s", 12, 1, 1, false, 5, "encoder", 40, 0.008},
      ModelDesc{"cnet-m", 12, 2, 2, false, 5, "encoder", 40, 0.008},
      ModelDesc{"cnet-d", 14, 3, 3, true, 5, "encoder", 60, 0.010},
  };
  c.weighting.alpha = {1.0, 1.0, 1.0};
  return c;
}

}  // namespace idguard
