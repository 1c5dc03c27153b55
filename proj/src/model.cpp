#include "affinity/model.hpp"

#include "affinity/errors.hpp"
#include "json.hpp"

namespace affinity {

using nlohmann::json;

void ModelConfig::validate() const {
  if (num_layers < 1) throw ConfigError("config: num_layers must be >= 1");
  if (num_query_heads < 1 || num_key_value_heads < 1)
    throw ConfigError("config: head counts must be >= 1");
  if (hidden_dim % num_query_heads != 0)
    throw ConfigError("config: hidden_dim " + std::to_string(hidden_dim) +
                      " not divisible by num_query_heads " + std::to_string(num_query_heads));
  if (head_dim() % 2 != 0)
    throw ConfigError("config: head_dim " + std::to_string(head_dim()) +
                      " must be even for rotary embeddings");
  if (num_query_heads % num_key_value_heads != 0)
    throw ConfigError("config: num_query_heads " + std::to_string(num_query_heads) +
                      " not divisible by num_key_value_heads " + std::to_string(num_key_value_heads));
  if (intermediate_dim < 1) throw ConfigError("config: intermediate_dim must be >= 1");
  if (vocabulary_size < 1) throw ConfigError("config: vocabulary_size must be >= 1");
  if (rope_max_wavelength <= 0) throw ConfigError("config: rope_max_wavelength must be positive");
  if (rope_scaling_factor <= 0) throw ConfigError("config: rope_scaling_factor must be positive");
  if (norm_epsilon <= 0) throw ConfigError("config: norm_epsilon must be positive");
  if (dropout < 0 || dropout >= 1) throw ConfigError("config: dropout must be in [0, 1)");
  if (max_seq_len < 1) throw ConfigError("config: max_seq_len must be >= 1");
  if (num_classes < 2) throw ConfigError("config: num_classes must be >= 2");
}

size_t ModelConfig::parameter_count() const {
  const size_t h = static_cast<size_t>(hidden_dim);
  const size_t i = static_cast<size_t>(intermediate_dim);
  const size_t v = static_cast<size_t>(vocabulary_size);
  const size_t kd = static_cast<size_t>(kv_dim());
  const size_t c = static_cast<size_t>(num_classes);
  const size_t per_layer = 2 * h * h + 2 * h * kd + 3 * h * i + 2 * h;
  return v * h + static_cast<size_t>(num_layers) * per_layer + h  // final gain
         + h * h + h                                              // hidden dense
         + h * c + c;                                             // output dense
}

std::vector<double> rope_inverse_frequencies(const ModelConfig& config) {
  const int half = config.head_dim() / 2;
  std::vector<double> inv_freq(static_cast<size_t>(half));
  for (int i = 0; i < half; ++i)
    inv_freq[static_cast<size_t>(i)] =
        std::pow(config.rope_max_wavelength, -2.0 * i / config.head_dim());
  return inv_freq;
}

std::string ModelConfig::to_json() const {
  json j;
  j["num_layers"] = num_layers;
  j["num_query_heads"] = num_query_heads;
  j["num_key_value_heads"] = num_key_value_heads;
  j["hidden_dim"] = hidden_dim;
  j["intermediate_dim"] = intermediate_dim;
  j["vocabulary_size"] = vocabulary_size;
  j["rope_max_wavelength"] = rope_max_wavelength;
  j["rope_scaling_factor"] = rope_scaling_factor;
  j["norm_epsilon"] = norm_epsilon;
  j["dropout"] = dropout;
  j["max_seq_len"] = max_seq_len;
  j["num_classes"] = num_classes;
  j["causal_attention"] = causal_attention;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  ModelConfig c;
  try {
    if (j.contains("num_layers")) c.num_layers = j["num_layers"].get<int>();
    if (j.contains("num_query_heads")) c.num_query_heads = j["num_query_heads"].get<int>();
    if (j.contains("num_key_value_heads")) c.num_key_value_heads = j["num_key_value_heads"].get<int>();
    if (j.contains("hidden_dim")) c.hidden_dim = j["hidden_dim"].get<int>();
    if (j.contains("intermediate_dim")) c.intermediate_dim = j["intermediate_dim"].get<int>();
    if (j.contains("vocabulary_size")) c.vocabulary_size = j["vocabulary_size"].get<int>();
    if (j.contains("rope_max_wavelength")) c.rope_max_wavelength = j["rope_max_wavelength"].get<double>();
    if (j.contains("rope_scaling_factor")) c.rope_scaling_factor = j["rope_scaling_factor"].get<double>();
    if (j.contains("norm_epsilon")) c.norm_epsilon = j["norm_epsilon"].get<double>();
    if (j.contains("dropout")) c.dropout = j["dropout"].get<double>();
    if (j.contains("max_seq_len")) c.max_seq_len = j["max_seq_len"].get<int>();
    if (j.contains("num_classes")) c.num_classes = j["num_classes"].get<int>();
    if (j.contains("causal_attention")) c.causal_attention = j["causal_attention"].get<bool>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: bad field type: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace affinity
