#pragma once

// Architecture and training hyperparameters, plus the flat key=value config
// format ('#' comments, unknown keys rejected by name).

#include <array>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cebsnet/tensor.hpp"

namespace cebsnet {

enum class SwapLayout { LeadingBlock, Strided };
enum class Precision { Single, Double };

struct ModelConfig {
  std::array<i64, 5> stage_widths{16, 32, 64, 128, 128};
  static constexpr std::array<i64, 5> stage_strides{2, 4, 8, 16, 32};
  i64 fpn_width = 64;           // D
  double swap_ratio = 0.25;     // r in [0,1]
  SwapLayout swap_layout = SwapLayout::LeadingBlock;
  i64 input_size = 64;          // declared size; forward accepts any /32 size
  std::array<i64, 4> k_per_level{5, 10, 20, 40};  // levels 4,3,2,1
  double beta = 0.5;
  double gamma_fesm_init = 0.5;  // blend value; stored as a sigmoid logit
  double gamma_sca_init = 0.0;
  bool align_corners = false;
  Precision precision = Precision::Single;

  void validate() const {
    for (i64 w : stage_widths) {
      check(w >= 1, "stage_widths entries must be >= 1");
    }
    check(fpn_width >= 1, "fpn_width must be >= 1");
    check(swap_ratio >= 0.0 && swap_ratio <= 1.0,
          "swap_ratio out of [0,1]: " + std::to_string(swap_ratio));
    check(input_size >= 32 && input_size % 32 == 0,
          "input_size must be divisible by 32, got " +
              std::to_string(input_size));
    for (i64 k : k_per_level) {
      check(k >= 1, "k_per_level entries must be >= 1");
    }
    check(beta >= 0.0 && beta <= 1.0,
          "beta out of [0,1]: " + std::to_string(beta));
    check(gamma_fesm_init > 0.0 && gamma_fesm_init < 1.0,
          "gamma_fesm_init must lie strictly inside (0,1)");
  }

  // k for level i in {4,3,2,1}.
  i64 k_for_level(int level) const {
    check(level >= 1 && level <= 4, "k_for_level: level out of range");
    return k_per_level[static_cast<size_t>(4 - level)];
  }
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  i64 batch_size = 4;
  i64 epochs = 10;
  i64 max_iterations = 0;  // 0 = bounded by epochs only
  std::uint64_t seed = 0;
  i64 eval_every = 0;  // epochs between val evaluations; 0 = off
  bool augment = false;

  void validate() const {
    check(learning_rate >= 0.0, "learning_rate must be >= 0");
    check(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam_beta1 out of [0,1)");
    check(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam_beta2 out of [0,1)");
    check(adam_eps > 0.0, "adam_eps must be positive");
    check(weight_decay >= 0.0, "weight_decay must be >= 0");
    check(batch_size >= 1, "batch_size must be >= 1");
    check(epochs >= 0, "epochs must be >= 0");
    check(max_iterations >= 0, "max_iterations must be >= 0");
    check(eval_every >= 0, "eval_every must be >= 0");
  }
};

struct FullConfig {
  ModelConfig model;
  TrainConfig train;

  void validate() const {
    model.validate();
    train.validate();
  }
};

// --- key=value codec -------------------------------------------------------

namespace cfgdetail {

inline std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  size_t e = s.find_last_not_of(" \t\r\n");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

// Accepts decimals and "a/b" rationals (swap_ratio is specified as one).
inline double parse_real(const std::string& key, const std::string& v) {
  const size_t slash = v.find('/');
  try {
    if (slash != std::string::npos) {
      const double num = std::stod(v.substr(0, slash));
      const double den = std::stod(v.substr(slash + 1));
      check(den != 0.0, "config key '" + key + "': zero denominator");
      return num / den;
    }
    size_t pos = 0;
    const double d = std::stod(v, &pos);
    check(pos == v.size(), "config key '" + key + "': bad value '" + v + "'");
    return d;
  } catch (const ContractError&) {
    throw;
  } catch (...) {
    throw ContractError("config key '" + key + "': bad value '" + v + "'");
  }
}

inline i64 parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const long long d = std::stoll(v, &pos);
    check(pos == v.size(), "config key '" + key + "': bad value '" + v + "'");
    return d;
  } catch (const ContractError&) {
    throw;
  } catch (...) {
    throw ContractError("config key '" + key + "': bad value '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ContractError("config key '" + key + "': bad boolean '" + v + "'");
}

template <size_t N>
std::array<i64, N> parse_int_list(const std::string& key,
                                  const std::string& v) {
  std::array<i64, N> out{};
  std::stringstream ss(v);
  std::string item;
  size_t i = 0;
  while (std::getline(ss, item, ',')) {
    check(i < N, "config key '" + key + "': expected " + std::to_string(N) +
                     " comma-separated values");
    out[i++] = parse_int(key, trim(item));
  }
  check(i == N, "config key '" + key + "': expected " + std::to_string(N) +
                    " comma-separated values");
  return out;
}

}  // namespace cfgdetail

// Parses config text; unknown keys are contract violations naming the key.
inline FullConfig parse_config_text(const std::string& text) {
  FullConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = cfgdetail::trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    check(eq != std::string::npos, "config line " + std::to_string(lineno) +
                                       ": expected key=value, got '" + line +
                                       "'");
    const std::string key = cfgdetail::trim(line.substr(0, eq));
    const std::string val = cfgdetail::trim(line.substr(eq + 1));
    using namespace cfgdetail;
    if (key == "stage_widths") {
      cfg.model.stage_widths = parse_int_list<5>(key, val);
    } else if (key == "fpn_width") {
      cfg.model.fpn_width = parse_int(key, val);
    } else if (key == "swap_ratio") {
      cfg.model.swap_ratio = parse_real(key, val);
      check(cfg.model.swap_ratio >= 0.0 && cfg.model.swap_ratio <= 1.0,
            "swap_ratio out of [0,1]: " + val);
    } else if (key == "swap_layout") {
      if (val == "leading") {
        cfg.model.swap_layout = SwapLayout::LeadingBlock;
      } else if (val == "strided") {
        cfg.model.swap_layout = SwapLayout::Strided;
      } else {
        throw ContractError("config key 'swap_layout': unknown layout '" +
                            val + "'");
      }
    } else if (key == "input_size") {
      cfg.model.input_size = parse_int(key, val);
    } else if (key == "k_per_level") {
      cfg.model.k_per_level = parse_int_list<4>(key, val);
    } else if (key == "beta") {
      cfg.model.beta = parse_real(key, val);
      check(cfg.model.beta >= 0.0 && cfg.model.beta <= 1.0,
            "beta out of [0,1]: " + val);
    } else if (key == "gamma_fesm_init") {
      cfg.model.gamma_fesm_init = parse_real(key, val);
    } else if (key == "gamma_sca_init") {
      cfg.model.gamma_sca_init = parse_real(key, val);
    } else if (key == "align_corners") {
      cfg.model.align_corners = parse_bool(key, val);
    } else if (key == "precision") {
      if (val == "single") {
        cfg.model.precision = Precision::Single;
      } else if (val == "double") {
        cfg.model.precision = Precision::Double;
      } else {
        throw ContractError("config key 'precision': expected single|double");
      }
    } else if (key == "learning_rate") {
      cfg.train.learning_rate = parse_real(key, val);
    } else if (key == "adam_beta1") {
      cfg.train.adam_beta1 = parse_real(key, val);
    } else if (key == "adam_beta2") {
      cfg.train.adam_beta2 = parse_real(key, val);
    } else if (key == "adam_eps") {
      cfg.train.adam_eps = parse_real(key, val);
    } else if (key == "weight_decay") {
      cfg.train.weight_decay = parse_real(key, val);
    } else if (key == "batch_size") {
      cfg.train.batch_size = parse_int(key, val);
    } else if (key == "epochs") {
      cfg.train.epochs = parse_int(key, val);
    } else if (key == "max_iterations") {
      cfg.train.max_iterations = parse_int(key, val);
    } else if (key == "seed") {
      cfg.train.seed = static_cast<std::uint64_t>(parse_int(key, val));
    } else if (key == "eval_every") {
      cfg.train.eval_every = parse_int(key, val);
    } else if (key == "augment") {
      cfg.train.augment = parse_bool(key, val);
    } else {
      throw ContractError("config: unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

inline std::string serialize_config(const FullConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  os << "stage_widths=";
  for (size_t i = 0; i < 5; ++i) {
    os << cfg.model.stage_widths[i] << (i + 1 < 5 ? "," : "\n");
  }
  os << "fpn_width=" << cfg.model.fpn_width << "\n";
  os << "swap_ratio=" << cfg.model.swap_ratio << "\n";
  os << "swap_layout="
     << (cfg.model.swap_layout == SwapLayout::LeadingBlock ? "leading"
                                                           : "strided")
     << "\n";
  os << "input_size=" << cfg.model.input_size << "\n";
  os << "k_per_level=";
  for (size_t i = 0; i < 4; ++i) {
    os << cfg.model.k_per_level[i] << (i + 1 < 4 ? "," : "\n");
  }
  os << "beta=" << cfg.model.beta << "\n";
  os << "gamma_fesm_init=" << cfg.model.gamma_fesm_init << "\n";
  os << "gamma_sca_init=" << cfg.model.gamma_sca_init << "\n";
  os << "align_corners=" << (cfg.model.align_corners ? 1 : 0) << "\n";
  os << "precision="
     << (cfg.model.precision == Precision::Single ? "single" : "double")
     << "\n";
  os << "learning_rate=" << cfg.train.learning_rate << "\n";
  os << "adam_beta1=" << cfg.train.adam_beta1 << "\n";
  os << "adam_beta2=" << cfg.train.adam_beta2 << "\n";
  os << "adam_eps=" << cfg.train.adam_eps << "\n";
  os << "weight_decay=" << cfg.train.weight_decay << "\n";
  os << "batch_size=" << cfg.train.batch_size << "\n";
  os << "epochs=" << cfg.train.epochs << "\n";
  os << "max_iterations=" << cfg.train.max_iterations << "\n";
  os << "seed=" << cfg.train.seed << "\n";
  os << "eval_every=" << cfg.train.eval_every << "\n";
  os << "augment=" << (cfg.train.augment ? 1 : 0) << "\n";
  return os.str();
}

}  // namespace cebsnet
