#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "ldif/diffusion/objective.hpp"
#include "ldif/diffusion/samplers.hpp"
#include "ldif/errors.hpp"
#include "ldif/harness/io.hpp"
#include "ldif/network/model_config.hpp"

namespace ldif {

enum class Precision { F64, F32 };

struct TrainConfig {
  std::size_t iterations = 2000;
  std::size_t batch_size = 64;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  bool ema = true;
  double ema_decay = 0.999;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
};

struct AnalysisConfig {
  std::size_t grid = 64;
};

// Everything a run needs. Text form: one `key = value` per line, `#`
// comments, unknown keys rejected. configs/reference.cfg lists every key
// with its default.
struct RunConfig {
  ModelConfig model;
  Precision precision = Precision::F64;
  double cosine_s = 0.008;
  LogNormalSigma train_sigma;
  TrainConfig train;
  SamplerConfig sampler;
  std::size_t sample_count = 64;
  std::size_t sample_cols = 8;
  AnalysisConfig analysis;
  std::string data = "synthetic:shapes";
  std::string output_dir = "runs/default";
};

namespace detail {

template <class V>
V parse_number(const std::string& key, const std::string& s) {
  std::istringstream is(s);
  V v{};
  is >> v;
  if (!is || !(is >> std::ws).eof()) throw ConfigError("config key '" + key + "': cannot parse '" + s + "'");
  return v;
}

inline std::size_t parse_count(const std::string& key, const std::string& s) {
  if (!s.empty() && s[0] == '-') throw ConfigError("config key '" + key + "': must be non-negative");
  return parse_number<std::size_t>(key, s);
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + s + "'");
}

inline std::vector<std::size_t> parse_list(const std::string& key, const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t"), e = item.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    out.push_back(parse_count(key, item.substr(b, e - b + 1)));
  }
  return out;
}

inline std::string join_list(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define LDIF_COUNT(K, M)                                                                                       \
  Field { K, [](RunConfig& c, const std::string& v) { c.M = parse_count(K, v); },                              \
          [](const RunConfig& c) { return std::to_string(c.M); } }
#define LDIF_REAL(K, M)                                                                                        \
  Field { K, [](RunConfig& c, const std::string& v) { c.M = parse_number<double>(K, v); },                     \
          [](const RunConfig& c) { return format_double(c.M); } }
#define LDIF_BOOL(K, M)                                                                                        \
  Field { K, [](RunConfig& c, const std::string& v) { c.M = parse_bool(K, v); },                               \
          [](const RunConfig& c) { return std::string(c.M ? "true" : "false"); } }
#define LDIF_TEXT(K, M)                                                                                        \
  Field { K, [](RunConfig& c, const std::string& v) { c.M = v; }, [](const RunConfig& c) { return c.M; } }
#define LDIF_LIST(K, M)                                                                                        \
  Field { K, [](RunConfig& c, const std::string& v) { c.M = parse_list(K, v); },                               \
          [](const RunConfig& c) { return join_list(c.M); } }

inline const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      Field{"mode", [](RunConfig& c, const std::string& v) { c.model.mode = parse_mode(v); },
            [](const RunConfig& c) { return std::string(to_string(c.model.mode)); }},
      Field{"setting", [](RunConfig& c, const std::string& v) { c.model.setting = parse_setting(v); },
            [](const RunConfig& c) { return std::string(to_string(c.model.setting)); }},
      Field{"precision",
            [](RunConfig& c, const std::string& v) {
              if (v == "f64") {
                c.precision = Precision::F64;
              } else if (v == "f32") {
                c.precision = Precision::F32;
              } else {
                throw ConfigError("config key 'precision': expected f64 or f32, got '" + v + "'");
              }
            },
            [](const RunConfig& c) { return std::string(c.precision == Precision::F64 ? "f64" : "f32"); }},
      Field{"seed", [](RunConfig& c, const std::string& v) { c.model.seed = parse_number<std::uint64_t>("seed", v); },
            [](const RunConfig& c) { return std::to_string(c.model.seed); }},
      LDIF_COUNT("schedule.steps", model.steps),
      LDIF_REAL("schedule.cosine_s", cosine_s),
      LDIF_REAL("schedule.train_log_sigma_mean", train_sigma.mean),
      LDIF_REAL("schedule.train_log_sigma_std", train_sigma.std),
      LDIF_COUNT("unet.resolution", model.unet.resolution),
      LDIF_COUNT("unet.in_channels", model.unet.in_channels),
      LDIF_COUNT("unet.base_channels", model.unet.base_channels),
      LDIF_LIST("unet.channel_mult", model.unet.channel_mult),
      LDIF_LIST("unet.attention_levels", model.unet.attention_levels),
      LDIF_BOOL("unet.mid_attention", model.unet.mid_attention),
      LDIF_COUNT("unet.heads", model.unet.heads),
      LDIF_COUNT("unet.groups", model.unet.groups),
      LDIF_BOOL("unet.use_skips", model.unet.use_skips),
      LDIF_COUNT("embed.sin_dim", model.embed.sin_dim),
      LDIF_COUNT("embed.emb_dim", model.embed.emb_dim),
      LDIF_COUNT("embed.num_classes", model.embed.num_classes),
      LDIF_COUNT("embed.aux_dim", model.embed.aux_dim),
      LDIF_COUNT("lora.rank", model.lora.rank),
      LDIF_COUNT("lora.bases", model.lora.bases),
      LDIF_BOOL("lora.compositional", model.lora.compositional),
      Field{"lora.table_init",
            [](RunConfig& c, const std::string& v) {
              if (v == "interpolation") {
                c.model.lora.init = TableInit::Interpolation;
              } else if (v == "random") {
                c.model.lora.init = TableInit::Random;
              } else {
                throw ConfigError("config key 'lora.table_init': expected interpolation or random");
              }
            },
            [](const RunConfig& c) {
              return std::string(c.model.lora.init == TableInit::Interpolation ? "interpolation" : "random");
            }},
      Field{"lora.projections",
            [](RunConfig& c, const std::string& v) {
              std::array<bool, 4> mask{false, false, false, false};
              const std::string names = "qkvo";
              for (char ch : v) {
                if (ch == ',' || ch == ' ') continue;
                const auto i = names.find(ch);
                if (i == std::string::npos) throw ConfigError("config key 'lora.projections': unknown projection '" +
                                                              std::string(1, ch) + "' (use q, k, v, o)");
                mask[i] = true;
              }
              c.model.lora.projections = mask;
            },
            [](const RunConfig& c) {
              std::string s;
              for (int i = 0; i < 4; ++i) {
                if (c.model.lora.projections[i]) s += (s.empty() ? "" : ",") + std::string(1, "qkvo"[i]);
              }
              return s;
            }},
      LDIF_BOOL("lora.class_adapters", model.lora.class_adapters),
      LDIF_COUNT("lora.mlp_hidden1", model.lora.mlp.hidden1),
      LDIF_COUNT("lora.mlp_hidden2", model.lora.mlp.hidden2),
      LDIF_COUNT("lora.mlp_groups", model.lora.mlp.groups),
      LDIF_BOOL("lora.mlp_zero_init", model.lora.mlp.zero_init_output),
      LDIF_COUNT("train.iterations", train.iterations),
      LDIF_COUNT("train.batch_size", train.batch_size),
      LDIF_REAL("train.lr", train.lr),
      LDIF_REAL("train.beta1", train.beta1),
      LDIF_REAL("train.beta2", train.beta2),
      LDIF_REAL("train.adam_eps", train.adam_eps),
      LDIF_BOOL("train.ema", train.ema),
      LDIF_REAL("train.ema_decay", train.ema_decay),
      LDIF_COUNT("train.checkpoint_every", train.checkpoint_every),
      Field{"sampler.kind", [](RunConfig& c, const std::string& v) { c.sampler.kind = parse_sampler(v); },
            [](const RunConfig& c) { return std::string(to_string(c.sampler.kind)); }},
      LDIF_COUNT("sampler.steps", sampler.steps),
      LDIF_REAL("sampler.sigma_min", sampler.sigma_min),
      LDIF_REAL("sampler.sigma_max", sampler.sigma_max),
      LDIF_REAL("sampler.rho", sampler.rho),
      Field{"sampler.seed",
            [](RunConfig& c, const std::string& v) { c.sampler.seed = parse_number<std::uint64_t>("sampler.seed", v); },
            [](const RunConfig& c) { return std::to_string(c.sampler.seed); }},
      LDIF_COUNT("sampler.count", sample_count),
      LDIF_COUNT("sampler.grid_cols", sample_cols),
      LDIF_COUNT("analysis.grid", analysis.grid),
      LDIF_TEXT("data", data),
      LDIF_TEXT("output_dir", output_dir),
  };
  return f;
}

#undef LDIF_COUNT
#undef LDIF_REAL
#undef LDIF_BOOL
#undef LDIF_TEXT
#undef LDIF_LIST

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r"), e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

}  // namespace detail

inline std::vector<std::string> run_config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : detail::fields()) keys.push_back(f.key);
  return keys;
}

// Applies one `key = value` setting.
inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : detail::fields()) {
    if (f.key == key) return f.set(cfg, value);
  }
  throw ConfigError("unknown config key '" + key + "'");
}

inline void validate(const RunConfig& cfg) {
  if (cfg.train.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(cfg.train.lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (!(cfg.train.beta1 >= 0.0 && cfg.train.beta1 < 1.0 && cfg.train.beta2 >= 0.0 && cfg.train.beta2 < 1.0)) {
    throw ConfigError("train.beta1/beta2 must lie in [0, 1)");
  }
  if (!(cfg.train.ema_decay >= 0.0 && cfg.train.ema_decay < 1.0)) throw ConfigError("train.ema_decay must lie in [0, 1)");
  if (!(cfg.train_sigma.std >= 0.0)) throw ConfigError("schedule.train_log_sigma_std must be non-negative");
  if (cfg.sampler.steps < 2) throw ConfigError("sampler.steps must be at least 2");
  if (cfg.sample_count == 0) throw ConfigError("sampler.count must be positive");
  if (cfg.analysis.grid < 2) throw ConfigError("analysis.grid must be at least 2");
  if (cfg.model.lora.rank == 0) throw ConfigError("lora.rank must be at least 1");
}

inline RunConfig parse_run_config(std::istream& in, const std::string& origin = "config") {
  RunConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    try {
      set_config_value(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  validate(cfg);
  return cfg;
}

inline RunConfig parse_run_config(const std::string& text) {
  std::istringstream is(text);
  return parse_run_config(is);
}

inline RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse_run_config(in, path.string());
}

// Canonical text form; parse_run_config(to_text(c)) reproduces c.
inline std::string to_text(const RunConfig& cfg) {
  std::string s;
  for (const auto& f : detail::fields()) s += f.key + " = " + f.get(cfg) + "\n";
  return s;
}

}  // namespace ldif
