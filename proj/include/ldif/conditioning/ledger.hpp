#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ldif/numerics/autograd.hpp"

namespace ldif {

struct LedgerRow {
  std::string name;
  std::size_t count = 0;
  bool is_lora = false;          // LoRA A/B matrices (time or class banks)
  bool is_conditioning = false;  // composition tables/MLPs, heads, embedder
};

struct ParamLedger {
  std::vector<LedgerRow> rows;
  std::size_t total = 0;
  std::size_t lora = 0;
  std::size_t conditioning = 0;

  std::size_t base() const { return total - lora - conditioning; }
  double lora_share() const { return total ? static_cast<double>(lora) / static_cast<double>(total) : 0.0; }
};

inline bool is_lora_param(const std::string& name) {
  return name.find(".lora.") != std::string::npos || name.find(".class_lora.") != std::string::npos;
}

inline bool is_conditioning_param(const std::string& name) {
  if (is_lora_param(name)) return false;
  for (const char* tag : {".omega_table", ".omega_mlp.", ".ss_head.", ".adaln."}) {
    if (name.find(tag) != std::string::npos) return true;
  }
  return name.rfind("cond.", 0) == 0;
}

template <class T>
ParamLedger param_ledger(const ParamStore<T>& store) {
  ParamLedger l;
  for (const auto& p : store.params()) {
    LedgerRow r{p->name, p->value.size(), is_lora_param(p->name), is_conditioning_param(p->name)};
    l.total += r.count;
    if (r.is_lora) l.lora += r.count;
    if (r.is_conditioning) l.conditioning += r.count;
    l.rows.push_back(std::move(r));
  }
  return l;
}

}  // namespace ldif
