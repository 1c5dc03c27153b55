#include "affinity/train.hpp"

#include "json.hpp"

namespace affinity {

using nlohmann::json;

void TrainConfig::validate() const {
  if (learning_rate <= 0) throw ValueError("train config: learning_rate must be positive");
  if (epochs < 1) throw ValueError("train config: epochs must be >= 1");
  if (batch_size < 1) throw ValueError("train config: batch_size must be >= 1");
  if (k_folds < 2) throw ValueError("train config: k_folds must be >= 2");
  if (adam_beta1 < 0 || adam_beta1 >= 1 || adam_beta2 < 0 || adam_beta2 >= 1)
    throw ValueError("train config: adam betas must be in [0, 1)");
  if (adam_eps <= 0) throw ValueError("train config: adam_eps must be positive");
}

std::string TrainConfig::to_json() const {
  json j;
  j["learning_rate"] = learning_rate;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["seed"] = seed;
  j["adam_beta1"] = adam_beta1;
  j["adam_beta2"] = adam_beta2;
  j["adam_eps"] = adam_eps;
  j["k_folds"] = k_folds;
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValueError(std::string("train config: invalid JSON: ") + e.what());
  }
  TrainConfig c;
  try {
    if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"].get<double>();
    if (j.contains("epochs")) c.epochs = j["epochs"].get<int>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<int>();
    if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
    if (j.contains("adam_beta1")) c.adam_beta1 = j["adam_beta1"].get<double>();
    if (j.contains("adam_beta2")) c.adam_beta2 = j["adam_beta2"].get<double>();
    if (j.contains("adam_eps")) c.adam_eps = j["adam_eps"].get<double>();
    if (j.contains("k_folds")) c.k_folds = j["k_folds"].get<int>();
  } catch (const json::exception& e) {
    throw ValueError(std::string("train config: bad field type: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace affinity
