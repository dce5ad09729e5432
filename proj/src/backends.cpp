#include "medco/backends.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "medco/text.hpp"

namespace medco {

using nlohmann::json;

// --- profiles -------------------------------------------------------------------

void BackendProfile::validate() const {
  if (name.empty()) throw Error(ErrorCode::validation, "backend profile without a name");
  static const std::vector<std::string> kinds = {"scripted", "live", "hashing", "live_embedding"};
  if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end()) {
    throw Error(ErrorCode::validation, fmt::format("profile {}: unknown kind '{}'", name, kind));
  }
  if (max_retries < 0 || max_retries > 5) {
    throw Error(ErrorCode::validation, fmt::format("profile {}: max_retries {} outside 0..5", name, max_retries));
  }
  if (temperature < 0) throw Error(ErrorCode::validation, fmt::format("profile {}: negative temperature", name));
  if (timeout_ms <= 0) throw Error(ErrorCode::validation, fmt::format("profile {}: timeout must be positive", name));
  if (kind == "hashing" && dimension <= 0) {
    throw Error(ErrorCode::validation, fmt::format("profile {}: dimension must be positive", name));
  }
  if ((kind == "live" || kind == "live_embedding") && endpoint.empty()) {
    throw Error(ErrorCode::validation, fmt::format("profile {}: live profile needs an endpoint", name));
  }
}

void to_json(json& j, const BackendProfile& p) {
  j = json{{"name", p.name},
           {"kind", p.kind},
           {"endpoint", p.endpoint},
           {"model_id", p.model_id},
           {"temperature", p.temperature},
           {"timeout_ms", p.timeout_ms},
           {"max_retries", p.max_retries},
           {"api_key_ref", p.api_key_ref},
           {"dimension", p.dimension},
           {"fixtures", p.fixtures},
           {"simulated_fallback", p.simulated_fallback}};
}

void from_json(const json& j, BackendProfile& p) {
  BackendProfile d;
  p.name = j.value("name", d.name);
  p.kind = j.value("kind", d.kind);
  p.endpoint = j.value("endpoint", d.endpoint);
  p.model_id = j.value("model_id", d.model_id);
  p.temperature = j.value("temperature", d.temperature);
  p.timeout_ms = j.value("timeout_ms", d.timeout_ms);
  p.max_retries = j.value("max_retries", d.max_retries);
  p.api_key_ref = j.value("api_key_ref", d.api_key_ref);
  p.dimension = j.value("dimension", d.dimension);
  p.fixtures = j.value("fixtures", d.fixtures);
  p.simulated_fallback = j.value("simulated_fallback", d.simulated_fallback);
}

// --- limiter --------------------------------------------------------------------

InflightLimiter::InflightLimiter(std::size_t capacity) : capacity_(std::max<std::size_t>(1, capacity)) {}

void InflightLimiter::acquire() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return in_flight_ < capacity_; });
  ++in_flight_;
  peak_ = std::max(peak_, in_flight_);
}

void InflightLimiter::release() {
  {
    std::lock_guard lock(mu_);
    if (in_flight_ > 0) --in_flight_;
  }
  cv_.notify_one();
}

void InflightLimiter::set_capacity(std::size_t capacity) {
  {
    std::lock_guard lock(mu_);
    capacity_ = std::max<std::size_t>(1, capacity);
  }
  cv_.notify_all();
}

std::size_t InflightLimiter::capacity() const {
  std::lock_guard lock(mu_);
  return capacity_;
}

std::size_t InflightLimiter::in_flight() const {
  std::lock_guard lock(mu_);
  return in_flight_;
}

std::size_t InflightLimiter::peak() const {
  std::lock_guard lock(mu_);
  return peak_;
}

InflightLimiter& global_limiter() {
  static InflightLimiter limiter(4);
  return limiter;
}

// --- http transport ---------------------------------------------------------------

namespace {

class HttplibTransport : public HttpTransport {
 public:
  HttpResponse post(const std::string& url, const std::map<std::string, std::string>& headers,
                    const std::string& body, std::chrono::milliseconds timeout) override {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) return {0, {}, "endpoint has no scheme: " + url};
    auto path_start = url.find('/', scheme_end + 3);
    std::string origin = path_start == std::string::npos ? url : url.substr(0, path_start);
    std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

    httplib::Client client(origin);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers h;
    for (const auto& [k, v] : headers) h.emplace(k, v);
    auto res = client.Post(path, h, body, "application/json");
    if (!res) return {0, {}, httplib::to_string(res.error())};
    return {res->status, res->body, {}};
  }
};

std::string resolve_api_key(const BackendProfile& p) {
  if (p.api_key_ref.empty()) return {};
  const char* v = std::getenv(p.api_key_ref.c_str());
  if (!v || !*v) {
    throw Error(ErrorCode::auth, fmt::format("profile {}: environment variable {} is not set", p.name, p.api_key_ref));
  }
  return v;
}

std::string join_url(const std::string& base, std::string_view suffix) {
  std::string out = base;
  while (!out.empty() && out.back() == '/') out.pop_back();
  out += suffix;
  return out;
}

bool transient(int status) { return status == 0 || status == 408 || status == 429 || status >= 500; }

/// Posts with retry. Returns the successful body.
std::string post_with_retry(const BackendProfile& profile, HttpTransport& transport, InflightLimiter* limiter,
                            const Sleeper& sleeper, const RetryPolicy& retry, const std::string& url,
                            const std::string& body) {
  std::map<std::string, std::string> headers;
  if (auto key = resolve_api_key(profile); !key.empty()) headers["Authorization"] = "Bearer " + key;
  HttpResponse last;
  for (int attempt = 0; attempt <= profile.max_retries; ++attempt) {
    if (attempt > 0) {
      auto delay = retry.delay_for(attempt - 1);
      if (sleeper) {
        sleeper(delay);
      } else {
        std::this_thread::sleep_for(delay);
      }
    }
    {
      std::optional<InflightLimiter::Permit> permit;
      if (limiter) permit.emplace(*limiter);
      last = transport.post(url, headers, body, std::chrono::milliseconds(profile.timeout_ms));
    }
    if (last.status >= 200 && last.status < 300) return last.body;
    if (last.status == 401 || last.status == 403) {
      throw BackendError(ErrorCode::auth, fmt::format("profile {}: authentication failed ({})", profile.name,
                                                      last.status),
                         last.body, last.status);
    }
    if (!transient(last.status)) break;
    spdlog::warn("profile {}: transient failure (status {}{}), attempt {}/{}", profile.name, last.status,
                 last.error.empty() ? "" : ", " + last.error, attempt + 1, profile.max_retries + 1);
  }
  throw BackendError(ErrorCode::backend,
                     fmt::format("profile {}: request failed with status {}{}", profile.name, last.status,
                                 last.error.empty() ? "" : " (" + last.error + ")"),
                     last.body, last.status);
}

}  // namespace

std::shared_ptr<HttpTransport> make_http_transport() { return std::make_shared<HttplibTransport>(); }

std::chrono::milliseconds RetryPolicy::delay_for(int attempt) const {
  auto d = base_delay * (1LL << std::min(attempt, 16));
  return std::min(std::chrono::duration_cast<std::chrono::milliseconds>(d), max_delay);
}

// --- live chat --------------------------------------------------------------------

LiveChatClient::LiveChatClient(BackendProfile profile, std::shared_ptr<HttpTransport> transport,
                               InflightLimiter* limiter, Sleeper sleeper, RetryPolicy retry)
    : profile_(std::move(profile)),
      transport_(std::move(transport)),
      limiter_(limiter),
      sleeper_(std::move(sleeper)),
      retry_(retry) {
  profile_.validate();
}

json LiveChatClient::request_body(const ChatRequest& request) const {
  json messages = json::array();
  if (!request.system.empty()) messages.push_back({{"role", "system"}, {"content", request.system}});
  for (const auto& turn : request.history) {
    if (turn.images.empty()) {
      messages.push_back({{"role", turn.role}, {"content", turn.content}});
      continue;
    }
    json parts = json::array();
    parts.push_back({{"type", "text"}, {"text", turn.content}});
    for (const auto& img : turn.images) {
      parts.push_back({{"type", "image_url"},
                       {"image_url", {{"url", fmt::format("data:{};base64,{}", img.mime, img.base64)}}}});
    }
    messages.push_back({{"role", turn.role}, {"content", parts}});
  }
  return json{{"model", profile_.model_id}, {"temperature", profile_.temperature}, {"messages", messages}};
}

std::string LiveChatClient::chat(const ChatRequest& request) {
  std::string body = request_body(request).dump();
  std::string payload = post_with_retry(profile_, *transport_, limiter_, sleeper_, retry_,
                                        join_url(profile_.endpoint, "/chat/completions"), body);
  try {
    auto j = json::parse(payload);
    const auto& content = j.at("choices").at(0).at("message").at("content");
    if (!content.is_string() || content.get<std::string>().empty()) throw std::runtime_error("empty content");
    return content.get<std::string>();
  } catch (const std::exception& e) {
    throw BackendError(ErrorCode::backend, fmt::format("profile {}: malformed response: {}", profile_.name, e.what()),
                       payload, 200);
  }
}

LiveEmbeddingClient::LiveEmbeddingClient(BackendProfile profile, std::shared_ptr<HttpTransport> transport,
                                         InflightLimiter* limiter, Sleeper sleeper, RetryPolicy retry)
    : profile_(std::move(profile)),
      transport_(std::move(transport)),
      limiter_(limiter),
      sleeper_(std::move(sleeper)),
      retry_(retry) {
  profile_.validate();
}

std::vector<std::vector<float>> LiveEmbeddingClient::embed(const std::vector<std::string>& texts) {
  if (texts.empty()) throw Error(ErrorCode::invalid_argument, "embed called with an empty batch");
  json body{{"model", profile_.model_id}, {"input", texts}};
  std::string payload = post_with_retry(profile_, *transport_, limiter_, sleeper_, retry_,
                                        join_url(profile_.endpoint, "/embeddings"), body.dump());
  std::vector<std::vector<float>> out(texts.size());
  try {
    auto j = json::parse(payload);
    const auto& data = j.at("data");
    if (data.size() != texts.size()) throw std::runtime_error("embedding count mismatch");
    for (std::size_t i = 0; i < data.size(); ++i) {
      std::size_t idx = data[i].value("index", i);
      if (idx >= out.size()) throw std::runtime_error("embedding index out of range");
      auto v = data[i].at("embedding").get<std::vector<float>>();
      double norm = 0;
      for (float x : v) norm += double(x) * x;
      norm = std::sqrt(norm);
      if (norm == 0 || v.empty()) throw std::runtime_error("zero embedding");
      for (float& x : v) x = float(x / norm);
      out[idx] = std::move(v);
    }
  } catch (const std::exception& e) {
    throw BackendError(ErrorCode::backend, fmt::format("profile {}: malformed response: {}", profile_.name, e.what()),
                       payload, 200);
  }
  for (const auto& v : out) {
    if (v.empty()) throw BackendError(ErrorCode::backend, "embedding response missing an index", payload, 200);
    if (dimension_ == 0) dimension_ = v.size();
    if (v.size() != dimension_) throw BackendError(ErrorCode::backend, "embedding dimension changed", payload, 200);
  }
  return out;
}

// --- scripted ---------------------------------------------------------------------

std::string content_hash(const std::string& system, const std::vector<ChatTurn>& history) {
  std::string buf = system;
  for (const auto& t : history) {
    buf += '\x1f';
    buf += t.role;
    buf += '\x1e';
    buf += t.content;
  }
  return text::hex64(text::fnv1a64(buf));
}

std::string ScriptedProvider::key(const std::string& session_tag, const std::string& role, int turn) {
  return fmt::format("{}/{}/{}", session_tag, role, turn);
}

namespace {
std::string purpose_key(const std::string& tag, const std::string& role, const std::string& purpose, int turn) {
  return fmt::format("{}/{}/{}/{}", tag, role, purpose, turn);
}
}  // namespace

void ScriptedProvider::register_reply(const std::string& session_tag, const std::string& role, int turn,
                                      std::string reply) {
  std::lock_guard lock(mu_);
  replies_[key(session_tag, role, turn)] = std::move(reply);
}

void ScriptedProvider::register_reply(const std::string& session_tag, const std::string& role,
                                      const std::string& purpose, int turn, std::string reply,
                                      std::optional<int> attempt) {
  std::string k = purpose_key(session_tag, role, purpose, turn);
  if (attempt) k += fmt::format("#{}", *attempt);
  std::lock_guard lock(mu_);
  replies_[k] = std::move(reply);
}

void ScriptedProvider::register_hash(const std::string& hash, std::string reply) {
  std::lock_guard lock(mu_);
  replies_["hash:" + hash] = std::move(reply);
}

void ScriptedProvider::set_fallback(Responder responder) {
  std::lock_guard lock(mu_);
  fallback_ = std::move(responder);
}

void ScriptedProvider::load_fixtures(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot read fixture file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::format, fmt::format("fixture file {}: {}", path.string(), e.what()));
  }
  if (!j.is_array()) throw Error(ErrorCode::format, "fixture file must hold an array: " + path.string());
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& e = j[i];
    if (!e.is_object() || !e.contains("reply") || !e["reply"].is_string()) {
      throw Error(ErrorCode::format, fmt::format("fixture {} in {} has no reply", i, path.string()));
    }
    std::string reply = e["reply"].get<std::string>();
    if (e.contains("content_hash")) {
      register_hash(e["content_hash"].get<std::string>(), reply);
    } else if (e.contains("purpose")) {
      std::optional<int> attempt;
      if (e.contains("attempt")) attempt = e["attempt"].get<int>();
      register_reply(e.value("session_tag", ""), e.value("role", ""), e["purpose"].get<std::string>(),
                     e.value("turn", 0), reply, attempt);
    } else {
      register_reply(e.value("session_tag", ""), e.value("role", ""), e.value("turn", 0), reply);
    }
  }
}

std::string ScriptedProvider::chat(const ChatRequest& request) {
  Responder fallback;
  {
    std::lock_guard lock(mu_);
    log_.push_back(request);
    const auto& t = request.tag;
    std::string pk = purpose_key(t.session_tag, t.role, t.purpose, t.turn);
    for (const std::string& k : {fmt::format("{}#{}", pk, t.attempt), pk, key(t.session_tag, t.role, t.turn),
                                 "hash:" + content_hash(request.system, request.history)}) {
      auto it = replies_.find(k);
      if (it != replies_.end()) return it->second;
    }
    fallback = fallback_;
  }
  if (fallback) return fallback(request);
  throw Error(ErrorCode::missing_fixture,
              fmt::format("missing fixture for key {} (purpose {}, content hash {})",
                          key(request.tag.session_tag, request.tag.role, request.tag.turn), request.tag.purpose,
                          content_hash(request.system, request.history)));
}

std::size_t ScriptedProvider::calls() const {
  std::lock_guard lock(mu_);
  return log_.size();
}

std::vector<ChatRequest> ScriptedProvider::requests() const {
  std::lock_guard lock(mu_);
  return log_;
}

// --- hashing embedder -----------------------------------------------------------------

HashingEmbedder::HashingEmbedder(std::size_t dimension, std::uint64_t seed) : dimension_(dimension), seed_(seed) {
  if (dimension_ == 0) throw Error(ErrorCode::invalid_argument, "embedding dimension must be positive");
}

std::vector<float> HashingEmbedder::embed_one(const std::string& s) const {
  std::vector<double> acc(dimension_, 0.0);
  auto add = [&](const std::string& token) {
    std::uint64_t h = text::fnv1a64(token, seed_);
    std::size_t bucket = h % dimension_;
    acc[bucket] += (h >> 63) ? -1.0 : 1.0;
  };
  std::string word;
  char32_t prev_cjk = 0;
  auto flush_word = [&] {
    if (!word.empty()) add("w:" + word);
    word.clear();
  };
  for (char32_t cp : text::utf8_decode(s)) {
    if (text::is_cjk(cp)) {
      flush_word();
      add("u:" + text::utf8_encode(cp));
      if (prev_cjk) add("b:" + text::utf8_encode(prev_cjk) + text::utf8_encode(cp));
      prev_cjk = cp;
      continue;
    }
    prev_cjk = 0;
    if (cp < 128 && std::isalnum(static_cast<unsigned char>(cp))) {
      word += static_cast<char>(std::tolower(static_cast<unsigned char>(cp)));
    } else {
      flush_word();
    }
  }
  flush_word();

  double norm = 0;
  for (double x : acc) norm += x * x;
  std::vector<float> out(dimension_, 0.0f);
  if (norm == 0) {
    out[0] = 1.0f;
    return out;
  }
  norm = std::sqrt(norm);
  for (std::size_t i = 0; i < dimension_; ++i) out[i] = static_cast<float>(acc[i] / norm);
  return out;
}

std::vector<std::vector<float>> HashingEmbedder::embed(const std::vector<std::string>& texts) {
  if (texts.empty()) throw Error(ErrorCode::invalid_argument, "embed called with an empty batch");
  std::vector<std::vector<float>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(embed_one(t));
  return out;
}

// --- registry -------------------------------------------------------------------------

void Backends::add_chat(const std::string& profile, std::shared_ptr<ChatProvider> provider) {
  providers_[profile] = std::move(provider);
}

void Backends::bind(const std::string& binding, const std::string& profile) { bindings_[binding] = profile; }

void Backends::set_embedder(std::shared_ptr<EmbeddingProvider> embedder) { embedder_ = std::move(embedder); }

bool Backends::has_binding(const std::string& binding) const { return bindings_.count(binding) > 0; }

const std::string& Backends::profile_for(const std::string& binding) const {
  auto it = bindings_.find(binding);
  if (it == bindings_.end()) throw Error(ErrorCode::not_found, "no backend bound for " + binding);
  return it->second;
}

ChatProvider& Backends::provider(const std::string& binding) const {
  const auto& name = profile_for(binding);
  auto it = providers_.find(name);
  if (it == providers_.end()) throw Error(ErrorCode::not_found, "unknown backend profile " + name);
  return *it->second;
}

EmbeddingProvider& Backends::embedder() const {
  if (!embedder_) throw Error(ErrorCode::not_found, "no embedding backend configured");
  return *embedder_;
}

std::string Backends::chat(const std::string& binding, const ChatRequest& request) const {
  auto start = std::chrono::steady_clock::now();
  std::string reply = provider(binding).chat(request);
  if (audit_) {
    ChatExchange ex;
    ex.profile = profile_for(binding);
    ex.tag = request.tag;
    ex.system = request.system;
    ex.history = request.history;
    ex.reply = reply;
    ex.latency = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
    audit_(ex);
  }
  return reply;
}

void Backends::set_audit(std::function<void(const ChatExchange&)> sink) { audit_ = std::move(sink); }

Backends Backends::scripted(std::shared_ptr<ScriptedProvider> provider, std::size_t embed_dim) {
  Backends b;
  b.add_chat("scripted", std::move(provider));
  for (const char* binding : {"patient", "student", "radiologist", "expert", "chair", "judge", "vision", "extract"}) {
    b.bind(binding, "scripted");
  }
  b.set_embedder(std::make_shared<HashingEmbedder>(embed_dim));
  return b;
}

}  // namespace medco
