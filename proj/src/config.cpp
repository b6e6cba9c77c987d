#include "rflab/config.hpp"

#include <fstream>
#include <set>

#include "rflab/rng.hpp"

namespace rflab {

double ExperimentConfig::lambda_for(Variant v) const {
  switch (v) {
    case Variant::L2SP: return lambdas.l2sp;
    case Variant::KD: return lambdas.kd;
    case Variant::CARFT:
    case Variant::CARFT_MSE: return lambdas.carft;
    case Variant::LIPSUM:
    case Variant::LIPSUM_KLD: return lambdas.lipsum;
    case Variant::FEATKD: return lambdas.featkd;
    default: return 0.0;
  }
}

namespace {

class Section {
 public:
  Section(const nlohmann::json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config: '" + name_ + "' must be an object");
  }

  ~Section() = default;

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config: bad value for '" + std::string(key) + "' in '" + name_ + "'");
    }
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  void finish() {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key()))
        throw ConfigError("config: unknown field '" + item.key() + "' in '" + name_ + "'");
  }

  const nlohmann::json& raw() const { return j_; }

 private:
  const nlohmann::json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

void check(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError("config: " + msg);
}

}  // namespace

ExperimentConfig parse_config(const nlohmann::json& j) {
  ExperimentConfig c;
  Section root(j, "root");

  if (root.has("benchmark")) {
    Section s(j.at("benchmark"), "benchmark");
    s.get("classes", c.benchmark.classes);
    s.get("input_dim", c.benchmark.input_dim);
    s.get("shift_domains", c.benchmark.shift_domains);
    s.get("angle_scales", c.benchmark.angle_scales);
    s.get("bias_scales", c.benchmark.bias_scales);
    s.get("noise_sigma", c.benchmark.noise_sigma);
    s.get("n_pretrain", c.benchmark.n_pretrain);
    s.get("n_train", c.benchmark.n_train);
    s.get("n_val", c.benchmark.n_val);
    s.get("n_test_per_domain", c.benchmark.n_test_per_domain);
    s.finish();
  }
  if (root.has("model")) {
    Section s(j.at("model"), "model");
    s.get("input_dim", c.model.input_dim);
    s.get("hidden_dim", c.model.hidden_dim);
    s.get("embed_dim", c.model.embed_dim);
    s.get("vocab", c.model.vocab);
    s.get("token_dim", c.model.token_dim);
    s.get("token_len", c.model.token_len);
    s.finish();
  }
  if (root.has("pretrain")) {
    Section s(j.at("pretrain"), "pretrain");
    s.get("steps", c.pretrain.steps);
    s.get("batch", c.pretrain.batch);
    s.get("lr", c.pretrain.lr);
    s.get("temperature", c.pretrain.temperature);
    s.finish();
  }
  if (root.has("finetune")) {
    Section s(j.at("finetune"), "finetune");
    s.get("steps", c.finetune.steps);
    s.get("batch", c.finetune.batch);
    s.get("peak_lr", c.finetune.peak_lr);
    s.get("warmup_frac", c.finetune.warmup_frac);
    s.get("eval_every", c.finetune.eval_every);
    s.get("kld_tau", c.finetune.kld_tau);
    s.get("ema_decay", c.finetune.ema_decay);
    s.get("guide_tokens", c.finetune.guide_tokens);
    s.get("guide_len", c.finetune.guide_len);
    s.get("context_texts", c.finetune.context_texts);
    s.get("probe_steps", c.finetune.probe_steps);
    s.get("probe_lr", c.finetune.probe_lr);
    if (s.has("token_seed")) {
      std::uint64_t ts = 0;
      s.get("token_seed", ts);
      c.finetune.token_seed = ts;
    }
    s.get("lambda_l2sp", c.lambdas.l2sp);
    s.get("lambda_kd", c.lambdas.kd);
    s.get("lambda_carft", c.lambdas.carft);
    s.get("lambda_lipsum", c.lambdas.lipsum);
    s.get("lambda_featkd", c.lambdas.featkd);
    s.finish();
  }
  root.get("methods", c.methods);
  root.get("seeds", c.seeds);
  if (root.has("posthoc")) {
    Section s(j.at("posthoc"), "posthoc");
    s.get("wise_lambdas", c.posthoc.wise_lambdas);
    s.get("wise_methods", c.posthoc.wise_methods);
    s.get("tpgm_regs", c.posthoc.tpgm_regs);
    s.get("tpgm_methods", c.posthoc.tpgm_methods);
    s.get("tpgm_steps", c.posthoc.tpgm_steps);
    s.get("tpgm_lr", c.posthoc.tpgm_lr);
    s.get("soup_lr_factors", c.posthoc.soup_lr_factors);
    s.get("soup_step_counts", c.posthoc.soup_step_counts);
    s.get("ensemble_max", c.posthoc.ensemble_max);
    s.finish();
  }
  if (root.has("eval")) {
    Section s(j.at("eval"), "eval");
    s.get("token_pool", c.eval.token_pool);
    s.get("ece_bins", c.eval.ece_bins);
    s.get("energy_inputs", c.eval.energy_inputs);
    s.finish();
  }
  root.get("output_dir", c.output_dir);
  root.finish();

  check(!c.methods.empty(), "field 'methods' must list at least one method");
  check(!c.seeds.empty(), "field 'seeds' must list at least one seed");
  for (const std::string& m : c.methods) {
    try {
      parse_method(m);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }
  check(c.benchmark.classes >= 2, "benchmark.classes must be at least 2");
  check(c.benchmark.shift_domains >= 1, "benchmark.shift_domains must be at least 1");
  check(c.benchmark.noise_sigma > 0.0, "benchmark.noise_sigma must be positive");
  check(c.benchmark.angle_scales.size() == c.benchmark.shift_domains,
        "benchmark.angle_scales must match shift_domains");
  check(c.benchmark.bias_scales.size() == c.benchmark.shift_domains,
        "benchmark.bias_scales must match shift_domains");
  check(c.benchmark.input_dim == c.model.input_dim,
        "benchmark.input_dim must equal model.input_dim");
  check(c.benchmark.classes <= c.model.vocab, "benchmark.classes must not exceed model.vocab");
  check(c.pretrain.steps >= 1, "pretrain.steps must be at least 1");
  check(c.pretrain.temperature > 0.0, "pretrain.temperature must be positive");
  check(c.finetune.steps >= 1, "finetune.steps must be at least 1");
  check(c.finetune.warmup_frac >= 0.0 && c.finetune.warmup_frac < 1.0,
        "finetune.warmup_frac must be in [0,1)");
  check(c.finetune.ema_decay >= 0.0 && c.finetune.ema_decay <= 1.0,
        "finetune.ema_decay must be in [0,1]");
  check(c.lambdas.l2sp >= 0.0 && c.lambdas.kd >= 0.0 && c.lambdas.carft >= 0.0 &&
            c.lambdas.lipsum >= 0.0 && c.lambdas.featkd >= 0.0,
        "regularization coefficients must be non-negative");
  for (double l : c.posthoc.wise_lambdas)
    check(l >= 0.0 && l <= 1.0, "posthoc.wise_lambdas entries must be in [0,1]");
  check(c.posthoc.tpgm_steps >= 1, "posthoc.tpgm_steps must be at least 1");
  check(c.posthoc.ensemble_max >= 1, "posthoc.ensemble_max must be at least 1");
  check(c.eval.token_pool >= 1, "eval.token_pool must be at least 1");
  check(c.eval.ece_bins >= 1, "eval.ece_bins must be at least 1");
  check(c.eval.energy_inputs == "reference_test" || c.eval.energy_inputs == "reference_val",
        "eval.energy_inputs must be 'reference_test' or 'reference_val'");
  return c;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config: " + std::string(e.what()));
  }
  return parse_config(j);
}

std::string config_hash(const nlohmann::json& j) {
  std::uint64_t h = fnv1a64(j.dump());
  char buf[17];
  static const char* hex = "0123456789abcdef";
  for (int i = 0; i < 16; ++i) buf[15 - i] = hex[(h >> (4 * i)) & 0xf];
  buf[16] = '\0';
  return std::string(buf);
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["benchmark"] = {{"classes", c.benchmark.classes},
                    {"input_dim", c.benchmark.input_dim},
                    {"shift_domains", c.benchmark.shift_domains},
                    {"angle_scales", c.benchmark.angle_scales},
                    {"bias_scales", c.benchmark.bias_scales},
                    {"noise_sigma", c.benchmark.noise_sigma},
                    {"n_pretrain", c.benchmark.n_pretrain},
                    {"n_train", c.benchmark.n_train},
                    {"n_val", c.benchmark.n_val},
                    {"n_test_per_domain", c.benchmark.n_test_per_domain}};
  j["model"] = {{"input_dim", c.model.input_dim},   {"hidden_dim", c.model.hidden_dim},
                {"embed_dim", c.model.embed_dim},   {"vocab", c.model.vocab},
                {"token_dim", c.model.token_dim},   {"token_len", c.model.token_len}};
  j["pretrain"] = {{"steps", c.pretrain.steps},
                   {"batch", c.pretrain.batch},
                   {"lr", c.pretrain.lr},
                   {"temperature", c.pretrain.temperature}};
  j["finetune"] = {{"steps", c.finetune.steps},
                   {"batch", c.finetune.batch},
                   {"peak_lr", c.finetune.peak_lr},
                   {"warmup_frac", c.finetune.warmup_frac},
                   {"eval_every", c.finetune.eval_every},
                   {"kld_tau", c.finetune.kld_tau},
                   {"ema_decay", c.finetune.ema_decay},
                   {"guide_tokens", c.finetune.guide_tokens},
                   {"guide_len", c.finetune.guide_len},
                   {"context_texts", c.finetune.context_texts},
                   {"probe_steps", c.finetune.probe_steps},
                   {"probe_lr", c.finetune.probe_lr},
                   {"lambda_l2sp", c.lambdas.l2sp},
                   {"lambda_kd", c.lambdas.kd},
                   {"lambda_carft", c.lambdas.carft},
                   {"lambda_lipsum", c.lambdas.lipsum},
                   {"lambda_featkd", c.lambdas.featkd}};
  if (c.finetune.token_seed) j["finetune"]["token_seed"] = *c.finetune.token_seed;
  j["methods"] = c.methods;
  j["seeds"] = c.seeds;
  j["posthoc"] = {{"wise_lambdas", c.posthoc.wise_lambdas},
                  {"wise_methods", c.posthoc.wise_methods},
                  {"tpgm_regs", c.posthoc.tpgm_regs},
                  {"tpgm_methods", c.posthoc.tpgm_methods},
                  {"tpgm_steps", c.posthoc.tpgm_steps},
                  {"tpgm_lr", c.posthoc.tpgm_lr},
                  {"soup_lr_factors", c.posthoc.soup_lr_factors},
                  {"soup_step_counts", c.posthoc.soup_step_counts},
                  {"ensemble_max", c.posthoc.ensemble_max}};
  j["eval"] = {{"token_pool", c.eval.token_pool},
               {"ece_bins", c.eval.ece_bins},
               {"energy_inputs", c.eval.energy_inputs}};
  j["output_dir"] = c.output_dir;
  return j;
}

}  // namespace rflab
