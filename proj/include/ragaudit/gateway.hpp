#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "ragaudit/common.hpp"
#include "ragaudit/encoder.hpp"

namespace ragaudit {

struct LMClientConfig {
  std::string base_url;           // e.g. http://127.0.0.1:8000
  std::string model;
  double timeout_s = 30.0;
  int max_parallel = 1;           // in-flight request bound
  int retries = 3;                // additional attempts after the first
  double backoff_ms = 50.0;       // base for exponential backoff
  std::string auth_env;           // env var holding the bearer token

  void validate() const;
};

/// Language-model access used by generator attribution. Implementations
/// must be safe for concurrent calls and must never sample when scoring:
/// forced_continuation_logprobs is a pure function of its arguments.
class LMClient {
 public:
  virtual ~LMClient() = default;

  /// Completes `prompt`, returning at most `max_tokens` answer tokens.
  virtual std::vector<std::string> generate(const std::string& prompt, int max_tokens) = 0;

  /// Scores a forced continuation: one log-probability per answer token,
  /// teacher-forced after `prompt`.
  virtual Vec forced_continuation_logprobs(const std::string& prompt,
                                           const std::vector<std::string>& answer_tokens) = 0;
};

/// Scripted generator whose exact Shapley values have a closed form:
/// v_j(S) = logistic(base_logits[j] + sum_{i in S} influence[i][j]).
/// Document membership is recovered by parsing the rendered prompt's
/// document slots, so the mock exercises the same text path as a real
/// backend. Documents with identical text share the influence row of the
/// first occurrence.
struct MockLMSpec {
  struct Entry {
    std::string query;
    std::vector<std::string> answer_tokens;
    Vec base_logits;                 // one per answer token
    std::vector<std::string> docs;   // document texts, retrieval order
    std::vector<Vec> influence;      // docs x answer tokens
  };
  std::vector<Entry> entries;

  /// Synthetic game for estimator benchmarks: k docs, m answer tokens,
  /// uniform base logits in [-1,1] and influences in [-2,2].
  static MockLMSpec random_game(int k, int m, std::uint64_t seed);

  static MockLMSpec from_json_text(const std::string& text);
  static MockLMSpec from_file(const std::string& path);
  std::string to_json_text() const;

  void validate() const;

  /// Closed-form value vector for entry `e` given a member mask over its
  /// document list; the analytic ground truth the prompt path must match.
  Vec value_for_mask(std::size_t entry_index, std::uint32_t mask) const;
};

class MockLM final : public LMClient {
 public:
  explicit MockLM(MockLMSpec spec, int max_parallel = 64);

  std::vector<std::string> generate(const std::string& prompt, int max_tokens) override;
  Vec forced_continuation_logprobs(const std::string& prompt,
                                   const std::vector<std::string>& answer_tokens) override;

  /// Total client calls, including injected failures.
  std::size_t call_count() const { return calls_.load(); }
  std::size_t logprob_call_count() const { return logprob_calls_.load(); }
  /// Highest number of simultaneously in-flight calls observed.
  int peak_in_flight() const { return peak_.load(); }
  /// The next `n` calls throw a transport error.
  void inject_failures(int n) { fail_next_.store(n); }

  const MockLMSpec& spec() const { return spec_; }

 private:
  struct Flight;
  std::size_t match_entry(const std::string& query) const;
  void maybe_fail();

  MockLMSpec spec_;
  int max_parallel_;
  std::atomic<std::size_t> calls_{0};
  std::atomic<std::size_t> logprob_calls_{0};
  std::atomic<int> fail_next_{0};
  int in_flight_ = 0;
  std::atomic<int> peak_{0};
  std::mutex gate_mu_;
  std::condition_variable gate_cv_;
};

/// Decorates any client with the retry policy from LMClientConfig.
/// Transport errors are retried with exponential backoff; other errors
/// propagate immediately.
class RetryingLMClient final : public LMClient {
 public:
  RetryingLMClient(std::shared_ptr<LMClient> inner, int retries, double backoff_ms);

  std::vector<std::string> generate(const std::string& prompt, int max_tokens) override;
  Vec forced_continuation_logprobs(const std::string& prompt,
                                   const std::vector<std::string>& answer_tokens) override;

 private:
  template <class Fn>
  auto with_retries(Fn&& fn) -> decltype(fn());

  std::shared_ptr<LMClient> inner_;
  int retries_;
  double backoff_ms_;
};

/// OpenAI-style completions client. Scoring uses the echo form: the full
/// text (prompt, newline, answer tokens joined by single spaces) is sent
/// with max_tokens=0, echo=true, logprobs=1, and the answer token region is
/// located through the reported text offsets. A tokenization disagreement
/// over that region is a hard token_alignment error, never silently
/// re-tokenized.
class HttpLMClient final : public LMClient {
 public:
  explicit HttpLMClient(LMClientConfig config);
  ~HttpLMClient() override;

  std::vector<std::string> generate(const std::string& prompt, int max_tokens) override;
  Vec forced_continuation_logprobs(const std::string& prompt,
                                   const std::vector<std::string>& answer_tokens) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Joins answer tokens into the continuation text the wire protocol scores.
std::string join_answer_tokens(const std::vector<std::string>& tokens);

class EmbeddingClient {
 public:
  virtual ~EmbeddingClient() = default;
  /// Fixed-dimension embedding; the dimension is latched on the first call
  /// and any later change is a dimension_mismatch error.
  Vec embed_text(const std::string& text);

 protected:
  virtual Vec fetch(const std::string& text) = 0;

 private:
  std::mutex mu_;
  int dimension_ = -1;
};

/// Lookup-table embeddings with an optional deterministic hash fallback.
class MockEmbeddingClient final : public EmbeddingClient {
 public:
  MockEmbeddingClient(std::vector<std::pair<std::string, Vec>> table, int fallback_dim = 0);
  std::size_t call_count() const { return calls_.load(); }

 protected:
  Vec fetch(const std::string& text) override;

 private:
  std::vector<std::pair<std::string, Vec>> table_;
  int fallback_dim_;
  std::atomic<std::size_t> calls_{0};
};

class HttpEmbeddingClient final : public EmbeddingClient {
 public:
  explicit HttpEmbeddingClient(LMClientConfig config);
  ~HttpEmbeddingClient() override;

 protected:
  Vec fetch(const std::string& text) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct GradientOracleRequest {
  std::string side;                  // "query" or "context"
  Eigen::MatrixXd embeddings;        // n x h
  std::vector<bool> pooled;          // n; false marks pad rows
  Eigen::VectorXd companion_encoding;  // h, encoding of the fixed side
};

struct GradientOracleResponse {
  double score = 0.0;
  Eigen::MatrixXd gradient;  // n x h
};

class GradientOracleClient {
 public:
  virtual ~GradientOracleClient() = default;
  virtual GradientOracleResponse evaluate(const GradientOracleRequest& request) = 0;
};

/// In-process oracle over a ReferenceEncoder; also backs the mock server's
/// /grad endpoint so wire IG and in-process IG share one arithmetic path.
class LocalGradientOracle final : public GradientOracleClient {
 public:
  explicit LocalGradientOracle(ReferenceEncoder encoder) : encoder_(std::move(encoder)) {}
  GradientOracleResponse evaluate(const GradientOracleRequest& request) override;
  const ReferenceEncoder& encoder() const { return encoder_; }

 private:
  ReferenceEncoder encoder_;
};

class HttpGradientOracle final : public GradientOracleClient {
 public:
  explicit HttpGradientOracle(LMClientConfig config);
  ~HttpGradientOracle() override;
  GradientOracleResponse evaluate(const GradientOracleRequest& request) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// HTTP server exposing the mock backends: POST /v1/completions (MockLM),
/// POST /v1/embeddings (MockEmbeddingClient) and POST /grad
/// (LocalGradientOracle). Integration tests run it on an ephemeral port;
/// the standalone binary in tools/ serves the same routes.
class MockServer {
 public:
  MockServer(std::shared_ptr<MockLM> lm, std::shared_ptr<LocalGradientOracle> grad,
             std::shared_ptr<MockEmbeddingClient> embeddings);
  ~MockServer();

  /// Binds and serves on a background thread. port 0 picks a free port.
  /// Returns the bound port.
  int start(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace ragaudit
