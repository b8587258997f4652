#include "mmfuse/config.hpp"

#include "mmfuse/checkpoint.hpp"

#include <set>

namespace mmfuse {

namespace {

void check_keys(const nlohmann::json& j, const std::string& section, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ValidationError((section.empty() ? "config" : section) + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.contains(key)) {
      throw ValidationError("unknown config key '" + (section.empty() ? key : section + "." + key) + "'");
    }
  }
}

template <typename T>
void read(const nlohmann::json& j, const std::string& section, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(out);
  } catch (const nlohmann::json::exception&) {
    throw ValidationError("config key '" + section + "." + key + "' has the wrong type");
  }
}

const std::set<std::string> kDataKeys{"path",
                                      "n_train",
                                      "n_val",
                                      "n_test",
                                      "height",
                                      "width",
                                      "sar_channels",
                                      "opt_channels",
                                      "target_urban_fraction",
                                      "informativeness_sar",
                                      "informativeness_opt",
                                      "speckle_strength",
                                      "additive_noise_std",
                                      "blob_sigma",
                                      "seed"};

}  // namespace

void RunConfig::validate() const {
  try {
    data.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("data.") + e.what());
  }
  train.validate();
  try {
    train.model.resolve(1, 1, 0);
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("model: ") + e.what());
  }
  if (analysis.split != "train" && analysis.split != "val" && analysis.split != "test") {
    throw ValidationError("analysis.split must be train, val or test");
  }
  if (!(analysis.threshold > 0.0 && analysis.threshold < 1.0)) {
    throw ValidationError("analysis.threshold must lie in (0, 1)");
  }
  if (seeds.empty()) throw ValidationError("multi_seed.seeds must not be empty");
}

nlohmann::json apply_overrides(nlohmann::json config, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ValidationError("override '" + o + "' is not of the form key=value");
    const std::string key = o.substr(0, eq), text = o.substr(eq + 1);
    nlohmann::json value;
    try {
      value = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception&) {
      value = text;
    }
    nlohmann::json* node = &config;
    size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (part.empty()) throw ValidationError("override key '" + key + "' has an empty component");
      if (!node->is_object()) *node = nlohmann::json::object();
      node = &(*node)[part];
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    *node = value;
  }
  return config;
}

RunConfig parse_run_config(const nlohmann::json& j) {
  check_keys(j, "", {"output_dir", "data", "model", "train", "loss", "analysis", "multi_seed"});
  RunConfig c;
  std::string s;
  if (j.contains("output_dir")) {
    read(j, "", "output_dir", s);
    c.output_dir = s;
  }

  const auto data = j.value("data", nlohmann::json::object());
  check_keys(data, "data", kDataKeys);
  if (data.contains("path")) {
    read(data, "data", "path", s);
    c.data_path = s;
  }
  read(data, "data", "n_train", c.data.n_train);
  read(data, "data", "n_val", c.data.n_val);
  read(data, "data", "n_test", c.data.n_test);
  read(data, "data", "height", c.data.height);
  read(data, "data", "width", c.data.width);
  read(data, "data", "sar_channels", c.data.sar_channels);
  read(data, "data", "opt_channels", c.data.opt_channels);
  read(data, "data", "target_urban_fraction", c.data.target_urban_fraction);
  read(data, "data", "informativeness_sar", c.data.informativeness_sar);
  read(data, "data", "informativeness_opt", c.data.informativeness_opt);
  read(data, "data", "speckle_strength", c.data.speckle_strength);
  read(data, "data", "additive_noise_std", c.data.additive_noise_std);
  read(data, "data", "blob_sigma", c.data.blob_sigma);
  if (data.contains("seed") && data.at("seed").is_number_integer() && data.at("seed").get<std::int64_t>() < 0) {
    throw ValidationError("data.seed must be nonnegative");
  }
  read(data, "data", "seed", c.data.seed);

  const auto model = j.value("model", nlohmann::json::object());
  check_keys(model, "model", {"base_channels", "depth", "tap_points", "zero_excitation_init"});
  read(model, "model", "base_channels", c.train.model.base_channels);
  read(model, "model", "depth", c.train.model.depth);
  read(model, "model", "tap_points", c.train.model.tap_points);
  read(model, "model", "zero_excitation_init", c.train.model.zero_excitation_init);

  const auto train = j.value("train", nlohmann::json::object());
  check_keys(train, "train",
             {"epochs", "batch_size", "learning_rate", "weight_decay", "beta1", "beta2", "adam_epsilon", "seed",
              "eval_every", "augment", "select_best"});
  read(train, "train", "epochs", c.train.epochs);
  read(train, "train", "batch_size", c.train.batch_size);
  read(train, "train", "learning_rate", c.train.optimizer.learning_rate);
  read(train, "train", "weight_decay", c.train.optimizer.weight_decay);
  read(train, "train", "beta1", c.train.optimizer.beta1);
  read(train, "train", "beta2", c.train.optimizer.beta2);
  read(train, "train", "adam_epsilon", c.train.optimizer.epsilon);
  if (train.contains("seed") && train.at("seed").is_number_integer() && train.at("seed").get<std::int64_t>() < 0) {
    throw ValidationError("train.seed must be nonnegative");
  }
  read(train, "train", "seed", c.train.seed);
  read(train, "train", "eval_every", c.train.eval_every);
  read(train, "train", "augment", c.train.augment);
  read(train, "train", "select_best", c.train.select_best);

  const auto loss = j.value("loss", nlohmann::json::object());
  check_keys(loss, "loss", {"power", "epsilon"});
  read(loss, "loss", "power", c.train.loss.power);
  read(loss, "loss", "epsilon", c.train.loss.epsilon);

  const auto analysis = j.value("analysis", nlohmann::json::object());
  check_keys(analysis, "analysis", {"metric", "threshold", "split"});
  if (analysis.contains("metric")) {
    read(analysis, "analysis", "metric", s);
    c.analysis.metric = parse_metric(s);
  }
  read(analysis, "analysis", "threshold", c.analysis.threshold);
  read(analysis, "analysis", "split", c.analysis.split);
  c.train.threshold = c.analysis.threshold;

  const auto ms = j.value("multi_seed", nlohmann::json::object());
  check_keys(ms, "multi_seed", {"seeds"});
  read(ms, "multi_seed", "seeds", c.seeds);

  c.train.dataset = c.data_path;
  c.train.output_dir = c.output_dir;
  c.validate();
  return c;
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json data = c.data;
  data["path"] = c.data_path.string();
  return {{"output_dir", c.output_dir.string()},
          {"data", data},
          {"model",
           {{"base_channels", c.train.model.base_channels},
            {"depth", c.train.model.depth},
            {"tap_points", c.train.model.tap_points},
            {"zero_excitation_init", c.train.model.zero_excitation_init}}},
          {"train",
           {{"epochs", c.train.epochs},
            {"batch_size", c.train.batch_size},
            {"learning_rate", c.train.optimizer.learning_rate},
            {"weight_decay", c.train.optimizer.weight_decay},
            {"beta1", c.train.optimizer.beta1},
            {"beta2", c.train.optimizer.beta2},
            {"adam_epsilon", c.train.optimizer.epsilon},
            {"seed", c.train.seed},
            {"eval_every", c.train.eval_every},
            {"augment", c.train.augment},
            {"select_best", c.train.select_best}}},
          {"loss", {{"power", c.train.loss.power}, {"epsilon", c.train.loss.epsilon}}},
          {"analysis",
           {{"metric", to_string(c.analysis.metric)}, {"threshold", c.analysis.threshold}, {"split", c.analysis.split}}},
          {"multi_seed", {{"seeds", c.seeds}}}};
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  return parse_run_config(apply_overrides(read_json(path), overrides));
}

}  // namespace mmfuse
