#pragma once

#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ldif/conditioning/ledger.hpp"
#include "ldif/conditioning/similarity.hpp"
#include "ldif/harness/io.hpp"
#include "ldif/harness/run_config.hpp"
#include "ldif/network/closed_form.hpp"
#include "ldif/network/unet.hpp"

namespace ldif {

// ---------------------------------------------------------------------------
// Composition-weight similarity

struct OmegaBlock {
  std::string label;
  std::vector<std::vector<double>> omega;   // grid point -> q|k|v|o weights concatenated
  std::vector<std::vector<double>> cosine;  // grid x grid
  std::vector<double> reference_profile;    // cosine against the reference point
  double near_mean = 0.0;                   // pairs at most a tenth of the grid apart
  double far_mean = 0.0;                    // pairs at least half the grid apart
};

struct OmegaAnalysis {
  Setting setting = Setting::Discrete;
  std::vector<double> grid;  // timesteps (ascending) or noise levels (descending)
  std::size_t reference_index = 0;
  std::vector<OmegaBlock> blocks;
};

// Evaluation grid: `points` evenly spaced timesteps in [1, T], or the first
// `points` levels of the power sigma grid.
inline std::vector<double> omega_grid(const ModelConfig& cfg, std::size_t points, const SamplerConfig& sc) {
  std::vector<double> g;
  if (cfg.setting == Setting::Discrete) {
    const double T = static_cast<double>(cfg.resolved_steps());
    for (std::size_t i = 0; i < points; ++i) {
      g.push_back(std::round(1.0 + (T - 1.0) * static_cast<double>(i) / static_cast<double>(points - 1)));
    }
  } else {
    const auto s = power_sigma_grid(points, sc.sigma_min, sc.sigma_max, sc.rho).sigma;
    g.assign(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(points));
  }
  return g;
}

template <class T>
OmegaAnalysis analyze_omega(const NanoUNet<T>& net, std::size_t points, const SamplerConfig& sc = {}) {
  const ModelConfig& cfg = net.config();
  if (!cfg.uses_lora()) throw DataError("model has no LoRA conditioning (mode " + std::string(to_string(cfg.mode)) + ")");
  if (cfg.setting == Setting::Discrete && !cfg.lora.compositional) {
    throw DataError("per-step LoRA has no composition weights to compare");
  }
  if (points < 2) throw ConfigError("omega analysis needs at least two grid points");
  OmegaAnalysis a;
  a.setting = cfg.setting;
  a.grid = omega_grid(cfg, points, sc);
  Conditions<T> c;
  if (cfg.setting == Setting::Discrete) {
    for (double t : a.grid) c.t.push_back(static_cast<std::size_t>(t));
    std::size_t best = 0;
    for (std::size_t i = 1; i < points; ++i) {
      if (std::abs(a.grid[i] - 500.0) < std::abs(a.grid[best] - 500.0)) best = i;
    }
    a.reference_index = best;
  } else {
    c.sigma = a.grid;
    a.reference_index = points / 2;
  }
  NoGradGuard ng;
  const HookInputs<T> in = net.hook_inputs(c, points);
  const std::size_t near = (points - 1) / 10, far = points / 2;  // far = ceil((points - 1) / 2)
  for (const auto& [label, block] : net.attention_blocks()) {
    OmegaBlock ob;
    ob.label = label;
    ob.omega.assign(points, {});
    for (int p = 0; p < 4; ++p) {
      const Var<T> w = block->projection(p).omega(in);
      if (!w) continue;
      const std::size_t m = w->shape()[1];
      for (std::size_t i = 0; i < points; ++i) {
        for (std::size_t j = 0; j < m; ++j) ob.omega[i].push_back(static_cast<double>(w->value.at(i, j)));
      }
    }
    if (ob.omega[0].empty()) continue;
    try {
      ob.cosine = cosine_matrix(ob.omega);
    } catch (const NumericError&) {
      throw NumericError("block " + label + ": composition weights are zero, cosine similarity is undefined");
    }
    ob.reference_profile = ob.cosine[a.reference_index];
    double ns = 0, fs_ = 0;
    std::size_t nn = 0, nf = 0;
    for (std::size_t i = 0; i < points; ++i) {
      for (std::size_t j = 0; j < points; ++j) {
        const std::size_t d = i > j ? i - j : j - i;
        if (d >= 1 && d <= near) {
          ns += ob.cosine[i][j];
          ++nn;
        }
        if (d >= far) {
          fs_ += ob.cosine[i][j];
          ++nf;
        }
      }
    }
    ob.near_mean = nn ? ns / static_cast<double>(nn) : 1.0;
    ob.far_mean = nf ? fs_ / static_cast<double>(nf) : 0.0;
    a.blocks.push_back(std::move(ob));
  }
  if (a.blocks.empty()) throw DataError("no attention projection carries composition weights");
  return a;
}

// Per block: cos_<label>.csv, cos_<label>.pgm, ref_<label>.csv; plus summary.csv.
inline void write_omega_report(const fs::path& dir, const OmegaAnalysis& a) {
  const std::string axis = a.setting == Setting::Discrete ? "t" : "sigma";
  std::string summary = "block,near_mean,far_mean,ordered\n";
  for (const auto& b : a.blocks) {
    std::string csv = axis;
    for (double g : a.grid) csv += "," + format_double(g);
    csv += "\n";
    for (std::size_t i = 0; i < a.grid.size(); ++i) {
      csv += format_double(a.grid[i]);
      for (double v : b.cosine[i]) csv += "," + format_double(v);
      csv += "\n";
    }
    write_file_atomic(dir / ("cos_" + b.label + ".csv"), csv);
    write_file_atomic(dir / ("cos_" + b.label + ".pgm"), encode_heatmap(b.cosine));
    std::string ref = axis + ",cosine_vs_" + axis + "=" + format_double(a.grid[a.reference_index]) + "\n";
    for (std::size_t i = 0; i < a.grid.size(); ++i) {
      ref += format_double(a.grid[i]) + "," + format_double(b.reference_profile[i]) + "\n";
    }
    write_file_atomic(dir / ("ref_" + b.label + ".csv"), ref);
    summary += b.label + "," + format_double(b.near_mean) + "," + format_double(b.far_mean) + "," +
               (b.near_mean > b.far_mean ? "true" : "false") + "\n";
  }
  write_file_atomic(dir / "summary.csv", summary);
}

// ---------------------------------------------------------------------------
// Parameter accounting

struct ModeTotals {
  ConditioningMode mode;
  std::size_t total = 0, lora = 0, conditioning = 0;
};

struct ParamReport {
  ModelConfig config;
  ParamLedger ledger;
  std::size_t closed_form_lora = 0;
  bool closed_form_ok = false;
  std::vector<ModeTotals> modes;
  bool identity_ok = false;  // with_lora = baseline + LoRA + composition params
};

inline ParamReport param_report(const ModelConfig& cfg) {
  ParamReport r;
  r.config = cfg;
  r.ledger = param_ledger(NanoUNet<double>(cfg).params());
  r.closed_form_lora = closed_form_lora_params(cfg);
  r.closed_form_ok = r.closed_form_lora == r.ledger.lora;
  for (auto m : {ConditioningMode::Baseline, ConditioningMode::OnlyLoRA, ConditioningMode::WithLoRA,
                 ConditioningMode::AdaLNOnly}) {
    ModelConfig c = cfg;
    c.mode = m;
    const auto l = param_ledger(NanoUNet<double>(c).params());
    r.modes.push_back({m, l.total, l.lora, l.conditioning});
  }
  const auto& base = r.modes[0];
  const auto& with = r.modes[2];
  r.identity_ok = with.total == base.total + with.lora + (with.conditioning - base.conditioning);
  return r;
}

// Component = parameter name with the trailing tensor segment removed.
inline std::string param_report_text(const ParamReport& r) {
  std::ostringstream os;
  const auto& l = r.ledger;
  os << "mode " << to_string(r.config.mode) << ", setting " << to_string(r.config.setting) << "\n";
  os << "total parameters      " << l.total << "\n";
  os << "base network          " << l.base() << "\n";
  os << "LoRA matrices         " << l.lora << "\n";
  os << "other conditioning    " << l.conditioning << "\n";
  os << "LoRA share            " << std::fixed << std::setprecision(2) << 100.0 * l.lora_share() << " %\n";
  os << "closed-form LoRA      " << r.closed_form_lora << (r.closed_form_ok ? "  (matches enumeration)" : "  (MISMATCH)")
     << "\n\n";
  os << "per mode:\n";
  for (const auto& m : r.modes) {
    os << "  " << std::left << std::setw(12) << to_string(m.mode) << std::right << " total " << std::setw(9)
       << m.total << "  lora " << std::setw(7) << m.lora << "  conditioning " << std::setw(7) << m.conditioning
       << "  delta vs baseline " << static_cast<long long>(m.total) - static_cast<long long>(r.modes[0].total)
       << "\n";
  }
  os << "with_lora = baseline + LoRA + composition: " << (r.identity_ok ? "holds" : "VIOLATED") << "\n\n";
  os << "per component:\n";
  std::vector<std::pair<std::string, std::size_t>> comps;
  for (const auto& row : l.rows) {
    const std::string c = row.name.substr(0, row.name.find_last_of('.'));
    if (comps.empty() || comps.back().first != c) {
      comps.emplace_back(c, row.count);
    } else {
      comps.back().second += row.count;
    }
  }
  for (const auto& [name, n] : comps) os << "  " << std::left << std::setw(40) << name << std::right << std::setw(9) << n << "\n";
  return os.str();
}

inline std::string param_ledger_csv(const ParamLedger& l) {
  std::string s = "name,count,is_lora,is_conditioning\n";
  for (const auto& r : l.rows) {
    s += r.name + "," + std::to_string(r.count) + "," + (r.is_lora ? "1" : "0") + "," + (r.is_conditioning ? "1" : "0") +
         "\n";
  }
  return s;
}

}  // namespace ldif
