#pragma once

#include <json.hpp>
#include <set>
#include <string>

#include "viewsel/errors.hpp"
#include "viewsel/fusion_model.hpp"

namespace viewsel::detail {

inline nlohmann::json fusion_to_json(const FusionConfig& c) {
  return {{"d_in", c.d_in},
          {"d_model", c.d_model},
          {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},
          {"d_ff", c.d_ff},
          {"dropout", c.dropout},
          {"pe_count", c.pe_count},
          {"use_projection", c.use_projection},
          {"head_hidden", c.head_hidden},
          {"layer_norm_eps", c.layer_norm_eps}};
}

/// Rejects keys outside `allowed`; `where` names the section in the message.
inline void reject_unknown_keys(const nlohmann::json& obj, const std::set<std::string>& allowed,
                                const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

/// Overlays the keys present in `j` onto `c`.
inline void fusion_from_json(const nlohmann::json& j, FusionConfig& c) {
  reject_unknown_keys(j,
                      {"d_in", "d_model", "n_layers", "n_heads", "d_ff", "dropout", "pe_count",
                       "use_projection", "head_hidden", "layer_norm_eps"},
                      "fusion");
  try {
    if (j.contains("d_in")) c.d_in = j.at("d_in").get<std::size_t>();
    if (j.contains("d_model")) c.d_model = j.at("d_model").get<std::size_t>();
    if (j.contains("n_layers")) c.n_layers = j.at("n_layers").get<std::size_t>();
    if (j.contains("n_heads")) c.n_heads = j.at("n_heads").get<std::size_t>();
    if (j.contains("d_ff")) c.d_ff = j.at("d_ff").get<std::size_t>();
    if (j.contains("dropout")) c.dropout = j.at("dropout").get<double>();
    if (j.contains("pe_count")) c.pe_count = j.at("pe_count").get<std::size_t>();
    if (j.contains("use_projection")) c.use_projection = j.at("use_projection").get<bool>();
    if (j.contains("head_hidden")) c.head_hidden = j.at("head_hidden").get<std::size_t>();
    if (j.contains("layer_norm_eps")) c.layer_norm_eps = j.at("layer_norm_eps").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("fusion: ") + e.what());
  }
}

}  // namespace viewsel::detail
