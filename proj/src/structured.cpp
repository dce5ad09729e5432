#include "medco/structured.hpp"

namespace medco {

std::string format_nudge(const PromptCatalog& catalog, Language lang) {
  const auto& entry = catalog.get(lang, "format_nudge");
  return entry.user ? entry.user->render({}) : entry.system.render({});
}

}  // namespace medco
