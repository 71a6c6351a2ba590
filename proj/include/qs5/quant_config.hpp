#pragma once

// Component-wise quantization configurations named like "W4A8SSM8".
//
//   name   := "FP" | token+
//   token  := "W" bits      non-SSM weights
//           | "A" bits      non-SSM activations
//           | "SSM" bits    Bbar, C, D (and Abar unless overridden)
//           | "Abar" bits   Abar only ("Ā" is accepted as an alias)
//           | "SSMA" bits   activations inside the SSM
//
// Each token appears at most once, in the order above.

#include <cctype>
#include <optional>
#include <string>
#include <string_view>

#include "qs5/error.hpp"
#include "qs5/quant.hpp"
#include "qs5/ssm.hpp"

namespace qs5 {

struct QuantConfig {
  std::optional<int> w_bits;
  std::optional<int> a_bits;
  std::optional<int> ssm_w_bits;
  std::optional<int> abar_bits;
  std::optional<int> ssm_a_bits;

  bool is_fp() const { return !w_bits && !a_bits && !ssm_w_bits && !abar_bits && !ssm_a_bits; }

  std::optional<int> weight_bits() const { return w_bits; }
  std::optional<int> act_bits() const { return a_bits; }
  std::optional<int> ssm_weight_bits() const { return ssm_w_bits ? ssm_w_bits : w_bits; }
  std::optional<int> effective_abar_bits() const { return abar_bits ? abar_bits : ssm_weight_bits(); }
  std::optional<int> ssm_act_bits() const { return ssm_a_bits ? ssm_a_bits : a_bits; }

  ScanQuant scan_quant() const { return {effective_abar_bits(), ssm_weight_bits(), ssm_act_bits()}; }

  bool operator==(const QuantConfig&) const = default;
};

inline constexpr std::string_view kQuantGrammar =
    "FP | [W<bits>][A<bits>][SSM<bits>][Abar<bits>][SSMA<bits>] with bits in 1..16, "
    "e.g. W8A8, W4A8SSM8, W2A8Abar8, W8A4SSMA8";

inline QuantConfig parse_quant_config(std::string_view name) {
  if (name == "FP")
    return {};
  if (name.empty())
    throw ParseError("empty quantization config name; grammar: " + std::string(kQuantGrammar));

  std::string text(name);
  for (std::size_t pos; (pos = text.find("\xC4\x80")) != std::string::npos;)  // Ā
    text.replace(pos, 2, "Abar");

  struct Token {
    std::string_view prefix;
    std::optional<int> QuantConfig::*field;
  };
  // Longer prefixes first where one is a prefix of another.
  static constexpr Token order[] = {{"W", &QuantConfig::w_bits},
                                    {"A", &QuantConfig::a_bits},
                                    {"SSM", &QuantConfig::ssm_w_bits},
                                    {"Abar", &QuantConfig::abar_bits},
                                    {"SSMA", &QuantConfig::ssm_a_bits}};

  QuantConfig cfg;
  std::size_t pos = 0;
  int next_slot = 0;
  const std::string_view s = text;
  while (pos < s.size()) {
    int matched = -1;
    std::size_t best_len = 0;
    for (int t = 0; t < 5; ++t) {
      const auto& p = order[t].prefix;
      if (s.substr(pos, p.size()) == p && pos + p.size() < s.size() &&
          std::isdigit(static_cast<unsigned char>(s[pos + p.size()])) && p.size() > best_len) {
        matched = t;
        best_len = p.size();
      }
    }
    if (matched < 0)
      throw ParseError("unrecognized token at '" + std::string(s.substr(pos)) + "' in quant config '" +
                       std::string(name) + "'; grammar: " + std::string(kQuantGrammar));
    if (matched < next_slot)
      throw ParseError("token '" + std::string(order[matched].prefix) + "' repeated or out of order in '" +
                       std::string(name) + "'; grammar: " + std::string(kQuantGrammar));
    pos += best_len;
    std::size_t end = pos;
    while (end < s.size() && std::isdigit(static_cast<unsigned char>(s[end])))
      ++end;
    if (end - pos > 2)
      throw ParseError("bit width out of range in '" + std::string(name) + "'; grammar: " + std::string(kQuantGrammar));
    const int bits = std::stoi(std::string(s.substr(pos, end - pos)));
    if (bits < kMinBits || bits > kMaxBits)
      throw ParseError("bit width " + std::to_string(bits) + " outside 1..16 in '" + std::string(name) +
                       "'; grammar: " + std::string(kQuantGrammar));
    cfg.*(order[matched].field) = bits;
    next_slot = matched + 1;
    pos = end;
  }
  return cfg;
}

inline std::string render_name(const QuantConfig& cfg) {
  if (cfg.is_fp())
    return "FP";
  std::string out;
  auto add = [&](const char* prefix, const std::optional<int>& bits) {
    if (bits)
      out += prefix + std::to_string(*bits);
  };
  add("W", cfg.w_bits);
  add("A", cfg.a_bits);
  add("SSM", cfg.ssm_w_bits);
  add("Abar", cfg.abar_bits);
  add("SSMA", cfg.ssm_a_bits);
  return out;
}

}  // namespace qs5
