#include "treelm/variant.hpp"

namespace treelm {

const std::vector<std::string>& Variant::grid() {
  static const std::vector<std::string> g = {"m",  "mp",  "mt",  "mpt",  "mpt-sla",
                                             "mx", "mxp", "mxt", "mxpt", "mxpt-sla"};
  return g;
}

std::optional<Variant> Variant::parse(const std::string& name) {
  bool known = false;
  for (const auto& g : grid())
    if (g == name) known = true;
  if (!known) return std::nullopt;
  Variant v;
  v.name = name;
  v.sla = name.size() >= 4 && name.compare(name.size() - 4, 4, "-sla") == 0;
  const std::string stem = v.sla ? name.substr(0, name.size() - 4) : name;
  v.pos_task = stem.find('x') != std::string::npos;
  v.phrase = stem.find('p') != std::string::npos;
  v.tree = stem.find('t') != std::string::npos;
  return v;
}

}  // namespace treelm
