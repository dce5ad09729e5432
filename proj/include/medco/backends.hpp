#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "medco/error.hpp"

namespace medco {

/// Provider failure carrying the raw response payload when one was received.
class BackendError : public Error {
 public:
  BackendError(ErrorCode code, const std::string& message, std::string payload = {}, int status = 0)
      : Error(code, message), payload_(std::move(payload)), status_(status) {}

  const std::string& payload() const noexcept { return payload_; }
  int status() const noexcept { return status_; }

 private:
  std::string payload_;
  int status_;
};

struct BackendProfile {
  std::string name;
  std::string kind = "scripted";  // scripted | live | hashing | live_embedding
  std::string endpoint;           // base URL, e.g. https://host/v1
  std::string model_id;
  double temperature = 0.0;
  int timeout_ms = 60000;
  int max_retries = 3;
  std::string api_key_ref;  // environment variable holding the key
  int dimension = 256;      // hashing embedder only
  std::string fixtures;     // scripted only: optional fixture file
  bool simulated_fallback = true;

  /// Throws validation on max_retries outside 0..5, negative temperature,
  /// empty name, or an unknown kind.
  void validate() const;
};

void to_json(nlohmann::json& j, const BackendProfile& p);
void from_json(const nlohmann::json& j, BackendProfile& p);

struct ImagePayload {
  std::string mime = "image/png";
  std::string base64;
};

struct ChatTurn {
  std::string role;  // "user" or "assistant"
  std::string content;
  std::vector<ImagePayload> images;
};

/// Identifies a call for fixture lookup and audit logging.
struct CallTag {
  std::string session_tag;
  std::string patient_id;
  std::string role;
  std::string purpose = "dialogue";
  int turn = 0;
  int attempt = 0;
};

struct ChatRequest {
  std::string system;
  std::vector<ChatTurn> history;
  CallTag tag;
};

struct ChatExchange {
  std::string profile;
  CallTag tag;
  std::string system;
  std::vector<ChatTurn> history;
  std::string reply;
  int prompt_tokens = 0;
  int completion_tokens = 0;
  std::chrono::milliseconds latency{0};
};

class ChatProvider {
 public:
  virtual ~ChatProvider() = default;
  /// Returns the assistant text verbatim.
  virtual std::string chat(const ChatRequest& request) = 0;
  virtual bool live() const { return false; }
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  /// One unit vector per input, in input order. Throws invalid_argument on
  /// an empty batch.
  virtual std::vector<std::vector<float>> embed(const std::vector<std::string>& texts) = 0;
  virtual std::size_t dimension() const = 0;
};

// --- concurrency bound ------------------------------------------------------

/// Counting gate bounding in-flight live calls.
class InflightLimiter {
 public:
  explicit InflightLimiter(std::size_t capacity);

  void acquire();
  void release();
  void set_capacity(std::size_t capacity);
  std::size_t capacity() const;
  std::size_t in_flight() const;
  std::size_t peak() const;

  class Permit {
   public:
    explicit Permit(InflightLimiter& l) : l_(l) { l_.acquire(); }
    ~Permit() { l_.release(); }
    Permit(const Permit&) = delete;
    Permit& operator=(const Permit&) = delete;

   private:
    InflightLimiter& l_;
  };

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::size_t capacity_;
  std::size_t in_flight_ = 0;
  std::size_t peak_ = 0;
};

/// Process-wide limiter shared by every live client (default capacity 4).
InflightLimiter& global_limiter();

// --- live wire client -------------------------------------------------------

struct HttpResponse {
  int status = 0;  // 0 means the request never completed
  std::string body;
  std::string error;
};

class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResponse post(const std::string& url, const std::map<std::string, std::string>& headers,
                            const std::string& body, std::chrono::milliseconds timeout) = 0;
};

/// httplib-backed transport (http and https).
std::shared_ptr<HttpTransport> make_http_transport();

using Sleeper = std::function<void(std::chrono::milliseconds)>;

struct RetryPolicy {
  std::chrono::milliseconds base_delay{500};
  std::chrono::milliseconds max_delay{8000};

  std::chrono::milliseconds delay_for(int attempt) const;  // attempt counts from 0
};

/// Chat-completions client. Retries network errors, 429 and 5xx up to
/// profile.max_retries times; 401/403 raise auth immediately.
class LiveChatClient : public ChatProvider {
 public:
  LiveChatClient(BackendProfile profile, std::shared_ptr<HttpTransport> transport,
                 InflightLimiter* limiter = &global_limiter(), Sleeper sleeper = {}, RetryPolicy retry = {});

  std::string chat(const ChatRequest& request) override;
  bool live() const override { return true; }

  /// Request body sent for a given request (exposed for tests).
  nlohmann::json request_body(const ChatRequest& request) const;

 private:
  BackendProfile profile_;
  std::shared_ptr<HttpTransport> transport_;
  InflightLimiter* limiter_;
  Sleeper sleeper_;
  RetryPolicy retry_;
};

/// Embeddings endpoint client; vectors are re-normalized to unit length.
class LiveEmbeddingClient : public EmbeddingProvider {
 public:
  LiveEmbeddingClient(BackendProfile profile, std::shared_ptr<HttpTransport> transport,
                      InflightLimiter* limiter = &global_limiter(), Sleeper sleeper = {}, RetryPolicy retry = {});

  std::vector<std::vector<float>> embed(const std::vector<std::string>& texts) override;
  std::size_t dimension() const override { return dimension_; }

 private:
  BackendProfile profile_;
  std::shared_ptr<HttpTransport> transport_;
  InflightLimiter* limiter_;
  Sleeper sleeper_;
  RetryPolicy retry_;
  std::size_t dimension_ = 0;
};

// --- offline providers ------------------------------------------------------

/// FNV hash over the system text and history (role + content).
std::string content_hash(const std::string& system, const std::vector<ChatTurn>& history);

/// Canned replies keyed by (session_tag, role, turn) or by content hash.
/// Lookup order: tag with purpose and attempt, tag with purpose, plain tag,
/// content hash, fallback responder. A miss raises missing_fixture.
class ScriptedProvider : public ChatProvider {
 public:
  using Responder = std::function<std::string(const ChatRequest&)>;

  void register_reply(const std::string& session_tag, const std::string& role, int turn, std::string reply);
  void register_reply(const std::string& session_tag, const std::string& role, const std::string& purpose, int turn,
                      std::string reply, std::optional<int> attempt = std::nullopt);
  void register_hash(const std::string& hash, std::string reply);
  void set_fallback(Responder responder);

  /// Fixture file: JSON array of {session_tag, role, turn, [purpose], [attempt], reply}
  /// or {content_hash, reply}.
  void load_fixtures(const std::filesystem::path& path);

  std::string chat(const ChatRequest& request) override;

  std::size_t calls() const;
  std::vector<ChatRequest> requests() const;

  static std::string key(const std::string& session_tag, const std::string& role, int turn);

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::string> replies_;
  Responder fallback_;
  std::vector<ChatRequest> log_;
};

/// Token-hash bag embedder. Lowercased ASCII words plus CJK unigrams and
/// bigrams are hashed with a sign bit into `dimension` buckets.
class HashingEmbedder : public EmbeddingProvider {
 public:
  explicit HashingEmbedder(std::size_t dimension = 256, std::uint64_t seed = 0);

  std::vector<std::vector<float>> embed(const std::vector<std::string>& texts) override;
  std::vector<float> embed_one(const std::string& text) const;
  std::size_t dimension() const override { return dimension_; }

 private:
  std::size_t dimension_;
  std::uint64_t seed_;
};

// --- registry ---------------------------------------------------------------

/// Chat providers by profile name plus bindings from purpose names (patient,
/// student, radiologist, expert, chair, judge, vision, extract) to profiles.
class Backends {
 public:
  void add_chat(const std::string& profile, std::shared_ptr<ChatProvider> provider);
  void bind(const std::string& binding, const std::string& profile);
  void set_embedder(std::shared_ptr<EmbeddingProvider> embedder);

  bool has_binding(const std::string& binding) const;
  const std::string& profile_for(const std::string& binding) const;
  ChatProvider& provider(const std::string& binding) const;
  EmbeddingProvider& embedder() const;

  /// Calls the provider bound to `binding` and records the exchange.
  std::string chat(const std::string& binding, const ChatRequest& request) const;

  void set_audit(std::function<void(const ChatExchange&)> sink);

  /// Every chat provider wraps one scripted provider (set up by callers that want to script all roles).
  static Backends scripted(std::shared_ptr<ScriptedProvider> provider, std::size_t embed_dim = 256);

 private:
  std::map<std::string, std::shared_ptr<ChatProvider>> providers_;
  std::map<std::string, std::string> bindings_;
  std::shared_ptr<EmbeddingProvider> embedder_;
  std::function<void(const ChatExchange&)> audit_;
};

}  // namespace medco
