#pragma once

#include <functional>
#include <string>

#include "medco/agents.hpp"
#include "medco/backends.hpp"

namespace medco {

/// Calls `binding` and parses the reply. On ParseError the reply and the
/// format nudge are appended to the history and the call is retried once
/// (tag.attempt = 1); a second failure propagates with the last raw text.
template <typename T>
T structured_call(const Backends& backends, const std::string& binding, ChatRequest request,
                  const PromptCatalog& catalog, Language lang, const std::function<T(const std::string&)>& parse);

/// Text of the format nudge in the given language.
std::string format_nudge(const PromptCatalog& catalog, Language lang);

template <typename T>
T structured_call(const Backends& backends, const std::string& binding, ChatRequest request,
                  const PromptCatalog& catalog, Language lang, const std::function<T(const std::string&)>& parse) {
  request.tag.attempt = 0;
  std::string reply = backends.chat(binding, request);
  try {
    return parse(reply);
  } catch (const ParseError&) {
  }
  request.history.push_back({"assistant", reply, {}});
  request.history.push_back({"user", format_nudge(catalog, lang), {}});
  request.tag.attempt = 1;
  reply = backends.chat(binding, request);
  return parse(reply);
}

}  // namespace medco
