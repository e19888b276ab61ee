#pragma once

#include <optional>
#include <string>
#include <vector>

namespace treelm {

// Pretraining variant grid: m, mp, mt, mpt, mpt-sla and the x-counterparts
// with the PoS auxiliary task. SLA is only offered together with both
// contrastive losses, matching the grid.
struct Variant {
  std::string name;
  bool pos_task = false;   // "x": PoS tagging on gold-tagged data
  bool phrase = false;     // "p": phrase-guided contrastive loss
  bool tree = false;       // "t": tree-guided contrastive loss
  bool sla = false;        // "-sla": syntax-aware local attention

  static std::optional<Variant> parse(const std::string& name);
  static const std::vector<std::string>& grid();
};

}  // namespace treelm
