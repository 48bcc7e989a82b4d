#include "ragaudit/gateway.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

namespace ragaudit {

namespace {

using nlohmann::json;

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct ParsedPrompt {
  std::string query;
  std::vector<std::string> doc_texts;
};

// Recovers the document slots and the query from a rendered prompt. A slot
// starts at a line "Document <n>: ..." and continues until a blank line or
// the next slot; the query is the remainder of the last "Query: " line.
ParsedPrompt parse_prompt(const std::string& prompt) {
  ParsedPrompt parsed;
  std::istringstream in(prompt);
  std::string line;
  std::string current;
  bool in_doc = false;
  auto flush_doc = [&]() {
    if (in_doc) {
      parsed.doc_texts.push_back(current);
      current.clear();
      in_doc = false;
    }
  };
  while (std::getline(in, line)) {
    if (line.rfind("Document ", 0) == 0) {
      const std::size_t colon = line.find(": ");
      if (colon != std::string::npos) {
        bool numeric = colon > 9;
        for (std::size_t i = 9; i < colon && numeric; ++i)
          numeric = std::isdigit(static_cast<unsigned char>(line[i])) != 0;
        if (numeric) {
          flush_doc();
          in_doc = true;
          current = line.substr(colon + 2);
          continue;
        }
      }
    }
    if (line.rfind("Query: ", 0) == 0) {
      flush_doc();
      parsed.query = line.substr(7);
      continue;
    }
    if (line.empty()) {
      flush_doc();
    } else if (in_doc) {
      current += "\n" + line;
    }
  }
  flush_doc();
  return parsed;
}

std::vector<std::pair<std::string, std::size_t>> split_whitespace_with_offsets(const std::string& text,
                                                                               std::size_t base) {
  std::vector<std::pair<std::string, std::size_t>> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (std::isspace(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    out.emplace_back(text.substr(i, j - i), base + i);
    i = j;
  }
  return out;
}

std::string trim_left(const std::string& s) {
  std::size_t i = 0;
  while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
  return s.substr(i);
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (int r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  if (!j.is_array() || j.empty()) throw RagError(ErrorCode::schema, "expected a non-empty 2d array");
  const int rows = static_cast<int>(j.size());
  const int cols = static_cast<int>(j.at(0).size());
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const json& row = j.at(static_cast<std::size_t>(r));
    if (static_cast<int>(row.size()) != cols)
      throw RagError(ErrorCode::schema, "ragged 2d array in request");
    for (int c = 0; c < cols; ++c) m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return m;
}

}  // namespace

void LMClientConfig::validate() const {
  if (max_parallel < 1) throw RagError(ErrorCode::invalid_config, "max_parallel must be >= 1");
  if (timeout_s <= 0) throw RagError(ErrorCode::invalid_config, "timeout must be positive");
  if (retries < 0) throw RagError(ErrorCode::invalid_config, "retry count must be >= 0");
  if (backoff_ms < 0) throw RagError(ErrorCode::invalid_config, "backoff must be >= 0");
}

// ---------------------------------------------------------------------------
// MockLMSpec

MockLMSpec MockLMSpec::random_game(int k, int m, std::uint64_t seed) {
  if (k < 1 || m < 1) throw RagError(ErrorCode::invalid_config, "random game needs k >= 1 and m >= 1");
  Rng rng(seed);
  MockLMSpec spec;
  Entry entry;
  entry.query = "mock game " + std::to_string(seed);
  for (int j = 0; j < m; ++j) {
    entry.answer_tokens.push_back("answer" + std::to_string(j));
    entry.base_logits.push_back(rng.uniform01() * 2.0 - 1.0);
  }
  for (int i = 0; i < k; ++i) {
    entry.docs.push_back("mock document " + std::to_string(i) + " for game " + std::to_string(seed));
    Vec row(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) row[static_cast<std::size_t>(j)] = rng.uniform01() * 4.0 - 2.0;
    entry.influence.push_back(std::move(row));
  }
  spec.entries.push_back(std::move(entry));
  return spec;
}

void MockLMSpec::validate() const {
  if (entries.empty()) throw RagError(ErrorCode::invalid_config, "mock spec has no entries");
  for (const Entry& e : entries) {
    const std::size_t m = e.answer_tokens.size();
    if (m == 0) throw RagError(ErrorCode::invalid_config, "mock entry has an empty answer script");
    if (e.base_logits.size() != m)
      throw RagError(ErrorCode::invalid_config, "mock entry base_logits length must match answer tokens");
    if (e.influence.size() != e.docs.size())
      throw RagError(ErrorCode::invalid_config, "mock entry influence rows must match doc count");
    for (const Vec& row : e.influence)
      if (row.size() != m)
        throw RagError(ErrorCode::invalid_config, "mock entry influence row length must match answer tokens");
  }
}

Vec MockLMSpec::value_for_mask(std::size_t entry_index, std::uint32_t mask) const {
  const Entry& e = entries.at(entry_index);
  const std::size_t m = e.answer_tokens.size();
  Vec out(m);
  for (std::size_t j = 0; j < m; ++j) {
    double logit = e.base_logits[j];
    for (std::size_t i = 0; i < e.docs.size(); ++i)
      if (mask & (1u << i)) logit += e.influence[i][j];
    out[j] = logistic(logit);
  }
  return out;
}

MockLMSpec MockLMSpec::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw RagError(ErrorCode::schema, std::string("mock spec is not valid JSON: ") + e.what());
  }
  MockLMSpec spec;
  for (const json& je : j.at("entries")) {
    Entry e;
    e.query = je.at("query").get<std::string>();
    e.answer_tokens = je.at("answer_tokens").get<std::vector<std::string>>();
    e.base_logits = je.at("base_logits").get<Vec>();
    e.docs = je.value("docs", std::vector<std::string>{});
    if (je.contains("influence"))
      for (const json& row : je.at("influence")) e.influence.push_back(row.get<Vec>());
    spec.entries.push_back(std::move(e));
  }
  spec.validate();
  return spec;
}

MockLMSpec MockLMSpec::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw RagError(ErrorCode::io, "cannot open mock spec " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

std::string MockLMSpec::to_json_text() const {
  json j;
  j["entries"] = json::array();
  for (const Entry& e : entries) {
    json je;
    je["query"] = e.query;
    je["answer_tokens"] = e.answer_tokens;
    je["base_logits"] = e.base_logits;
    je["docs"] = e.docs;
    je["influence"] = e.influence;
    j["entries"].push_back(std::move(je));
  }
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// MockLM

struct MockLM::Flight {
  MockLM& lm;
  explicit Flight(MockLM& owner) : lm(owner) {
    std::unique_lock<std::mutex> lock(lm.gate_mu_);
    lm.gate_cv_.wait(lock, [&] { return lm.in_flight_ < lm.max_parallel_; });
    ++lm.in_flight_;
    int expected = lm.peak_.load();
    while (lm.in_flight_ > expected && !lm.peak_.compare_exchange_weak(expected, lm.in_flight_)) {
    }
  }
  ~Flight() {
    {
      std::lock_guard<std::mutex> lock(lm.gate_mu_);
      --lm.in_flight_;
    }
    lm.gate_cv_.notify_one();
  }
};

MockLM::MockLM(MockLMSpec spec, int max_parallel) : spec_(std::move(spec)), max_parallel_(max_parallel) {
  spec_.validate();
  if (max_parallel_ < 1) throw RagError(ErrorCode::invalid_config, "max_parallel must be >= 1");
}

std::size_t MockLM::match_entry(const std::string& query) const {
  for (std::size_t i = 0; i < spec_.entries.size(); ++i)
    if (spec_.entries[i].query == query) return i;
  throw RagError(ErrorCode::invalid_config, "mock LM has no entry for query '" + query + "'");
}

void MockLM::maybe_fail() {
  int expected = fail_next_.load();
  while (expected > 0) {
    if (fail_next_.compare_exchange_weak(expected, expected - 1))
      throw RagError(ErrorCode::transport, "injected transport failure");
  }
}

std::vector<std::string> MockLM::generate(const std::string& prompt, int max_tokens) {
  Flight flight(*this);
  calls_.fetch_add(1);
  maybe_fail();
  if (max_tokens < 1) throw RagError(ErrorCode::invalid_config, "generation token cap must be >= 1");
  const ParsedPrompt parsed = parse_prompt(prompt);
  const MockLMSpec::Entry& entry = spec_.entries[match_entry(parsed.query)];
  if (entry.answer_tokens.empty()) throw RagError(ErrorCode::empty_generation, "mock script is empty");
  std::vector<std::string> out = entry.answer_tokens;
  if (static_cast<int>(out.size()) > max_tokens) out.resize(static_cast<std::size_t>(max_tokens));
  return out;
}

Vec MockLM::forced_continuation_logprobs(const std::string& prompt,
                                         const std::vector<std::string>& answer_tokens) {
  Flight flight(*this);
  calls_.fetch_add(1);
  logprob_calls_.fetch_add(1);
  maybe_fail();
  if (answer_tokens.empty())
    throw RagError(ErrorCode::empty_input, "forced continuation needs at least one answer token");
  const ParsedPrompt parsed = parse_prompt(prompt);
  const std::size_t entry_index = match_entry(parsed.query);
  const MockLMSpec::Entry& entry = spec_.entries[entry_index];
  if (answer_tokens.size() > entry.answer_tokens.size())
    throw RagError(ErrorCode::token_alignment, "forced answer is longer than the mock script");
  for (std::size_t j = 0; j < answer_tokens.size(); ++j)
    if (answer_tokens[j] != entry.answer_tokens[j])
      throw RagError(ErrorCode::token_alignment,
                     "forced token " + std::to_string(j) + " ('" + answer_tokens[j] +
                         "') disagrees with the mock tokenization ('" + entry.answer_tokens[j] + "')");

  std::uint32_t mask = 0;
  for (const std::string& text : parsed.doc_texts) {
    for (std::size_t i = 0; i < entry.docs.size(); ++i) {
      if (entry.docs[i] == text) {
        mask |= (1u << i);  // identical texts resolve to the first row
        break;
      }
    }
  }
  const Vec values = spec_.value_for_mask(entry_index, mask);
  Vec logprobs(answer_tokens.size());
  for (std::size_t j = 0; j < answer_tokens.size(); ++j) logprobs[j] = std::log(values[j]);
  return logprobs;
}

// ---------------------------------------------------------------------------
// RetryingLMClient

RetryingLMClient::RetryingLMClient(std::shared_ptr<LMClient> inner, int retries, double backoff_ms)
    : inner_(std::move(inner)), retries_(retries), backoff_ms_(backoff_ms) {
  if (!inner_) throw RagError(ErrorCode::invalid_config, "retrying client needs an inner client");
}

template <class Fn>
auto RetryingLMClient::with_retries(Fn&& fn) -> decltype(fn()) {
  int attempt = 0;
  for (;;) {
    try {
      return fn();
    } catch (const RagError& e) {
      if (e.code() != ErrorCode::transport || attempt >= retries_) throw;
      if (backoff_ms_ > 0) {
        const double delay = backoff_ms_ * std::pow(2.0, attempt);
        std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(delay));
      }
      ++attempt;
    }
  }
}

std::vector<std::string> RetryingLMClient::generate(const std::string& prompt, int max_tokens) {
  return with_retries([&] { return inner_->generate(prompt, max_tokens); });
}

Vec RetryingLMClient::forced_continuation_logprobs(const std::string& prompt,
                                                   const std::vector<std::string>& answer_tokens) {
  return with_retries([&] { return inner_->forced_continuation_logprobs(prompt, answer_tokens); });
}

// ---------------------------------------------------------------------------
// HttpLMClient

std::string join_answer_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

namespace {

// Shared httplib plumbing for the three HTTP clients.
struct HttpBackend {
  LMClientConfig config;
  httplib::Client client;
  std::mutex gate_mu;
  std::condition_variable gate_cv;
  int in_flight = 0;

  explicit HttpBackend(LMClientConfig cfg) : config(std::move(cfg)), client(config.base_url) {
    config.validate();
    client.set_connection_timeout(std::chrono::duration<double>(config.timeout_s));
    client.set_read_timeout(std::chrono::duration<double>(config.timeout_s));
    if (!config.auth_env.empty()) {
      if (const char* token = std::getenv(config.auth_env.c_str()))
        client.set_default_headers({{"Authorization", std::string("Bearer ") + token}});
    }
  }

  json post(const std::string& path, const json& body) {
    {
      std::unique_lock<std::mutex> lock(gate_mu);
      gate_cv.wait(lock, [&] { return in_flight < config.max_parallel; });
      ++in_flight;
    }
    struct Release {
      HttpBackend& b;
      ~Release() {
        {
          std::lock_guard<std::mutex> lock(b.gate_mu);
          --b.in_flight;
        }
        b.gate_cv.notify_one();
      }
    } release{*this};

    int attempt = 0;
    for (;;) {
      httplib::Result res = client.Post(path, body.dump(), "application/json");
      if (res && res->status >= 200 && res->status < 300) {
        try {
          return json::parse(res->body);
        } catch (const std::exception& e) {
          throw RagError(ErrorCode::transport, std::string("malformed response body: ") + e.what());
        }
      }
      const bool retryable = !res || res->status >= 500 || res->status == 429;
      if (!retryable)
        throw RagError(ErrorCode::transport,
                       "request to " + path + " rejected with status " + std::to_string(res->status) + ": " + res->body);
      if (attempt >= config.retries) {
        if (!res)
          throw RagError(ErrorCode::transport,
                         "request to " + path + " failed: " + httplib::to_string(res.error()));
        throw RagError(ErrorCode::transport,
                       "request to " + path + " failed after " + std::to_string(attempt + 1) +
                           " attempts, last status " + std::to_string(res->status));
      }
      if (config.backoff_ms > 0) {
        const double delay = config.backoff_ms * std::pow(2.0, attempt);
        std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(delay));
      }
      ++attempt;
    }
  }
};

}  // namespace

struct HttpLMClient::Impl {
  HttpBackend backend;
  explicit Impl(LMClientConfig cfg) : backend(std::move(cfg)) {}
};

HttpLMClient::HttpLMClient(LMClientConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}
HttpLMClient::~HttpLMClient() = default;

std::vector<std::string> HttpLMClient::generate(const std::string& prompt, int max_tokens) {
  json body = {{"model", impl_->backend.config.model},
               {"prompt", prompt},
               {"max_tokens", max_tokens},
               {"echo", false},
               {"logprobs", 1}};
  const json res = impl_->backend.post("/v1/completions", body);
  try {
    const json& choice = res.at("choices").at(0);
    if (choice.contains("logprobs") && choice.at("logprobs").contains("tokens"))
      return choice.at("logprobs").at("tokens").get<std::vector<std::string>>();
    std::vector<std::string> tokens;
    for (auto& [tok, off] : split_whitespace_with_offsets(choice.at("text").get<std::string>(), 0)) {
      (void)off;
      tokens.push_back(tok);
    }
    return tokens;
  } catch (const json::exception& e) {
    throw RagError(ErrorCode::transport, std::string("unexpected completions response shape: ") + e.what());
  }
}

Vec HttpLMClient::forced_continuation_logprobs(const std::string& prompt,
                                               const std::vector<std::string>& answer_tokens) {
  if (answer_tokens.empty())
    throw RagError(ErrorCode::empty_input, "forced continuation needs at least one answer token");
  const std::string full_text = prompt + "\n" + join_answer_tokens(answer_tokens);
  json body = {{"model", impl_->backend.config.model},
               {"prompt", full_text},
               {"max_tokens", 0},
               {"echo", true},
               {"logprobs", 1}};
  const json res = impl_->backend.post("/v1/completions", body);

  try {
    const json& lp = res.at("choices").at(0).at("logprobs");
    const auto& tokens = lp.at("tokens");
    const auto& token_logprobs = lp.at("token_logprobs");
    const auto& offsets = lp.at("text_offset");
    if (tokens.size() != token_logprobs.size() || tokens.size() != offsets.size())
      throw RagError(ErrorCode::transport, "logprob arrays disagree in length");

    const std::size_t answer_begin = prompt.size() + 1;  // past the separator newline
    Vec out;
    std::size_t next = 0;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      if (offsets.at(t).get<std::size_t>() < answer_begin) continue;
      if (next >= answer_tokens.size())
        throw RagError(ErrorCode::token_alignment, "server returned more answer tokens than were forced");
      const std::string tok = trim_left(tokens.at(t).get<std::string>());
      if (tok != answer_tokens[next])
        throw RagError(ErrorCode::token_alignment,
                       "server tokenization '" + tok + "' disagrees with forced token '" +
                           answer_tokens[next] + "' at position " + std::to_string(next));
      if (token_logprobs.at(t).is_null())
        throw RagError(ErrorCode::token_alignment,
                       "server returned no logprob for answer token " + std::to_string(next));
      out.push_back(token_logprobs.at(t).get<double>());
      ++next;
    }
    if (next != answer_tokens.size())
      throw RagError(ErrorCode::token_alignment, "server returned fewer answer tokens than were forced");
    return out;
  } catch (const json::exception& e) {
    throw RagError(ErrorCode::transport, std::string("unexpected completions response shape: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Embeddings

Vec EmbeddingClient::embed_text(const std::string& text) {
  Vec v = fetch(text);
  std::lock_guard<std::mutex> lock(mu_);
  if (dimension_ < 0) {
    dimension_ = static_cast<int>(v.size());
  } else if (dimension_ != static_cast<int>(v.size())) {
    throw RagError(ErrorCode::dimension_mismatch,
                   "embedding dimension changed from " + std::to_string(dimension_) + " to " +
                       std::to_string(v.size()));
  }
  return v;
}

MockEmbeddingClient::MockEmbeddingClient(std::vector<std::pair<std::string, Vec>> table, int fallback_dim)
    : table_(std::move(table)), fallback_dim_(fallback_dim) {}

Vec MockEmbeddingClient::fetch(const std::string& text) {
  calls_.fetch_add(1);
  for (const auto& [key, vec] : table_)
    if (key == text) return vec;
  if (fallback_dim_ > 0) {
    Rng rng(fnv1a64(text));
    Vec v(static_cast<std::size_t>(fallback_dim_));
    for (double& x : v) x = rng.normal();
    return v;
  }
  throw RagError(ErrorCode::invalid_config, "mock embedding table has no entry for the text");
}

struct HttpEmbeddingClient::Impl {
  HttpBackend backend;
  explicit Impl(LMClientConfig cfg) : backend(std::move(cfg)) {}
};

HttpEmbeddingClient::HttpEmbeddingClient(LMClientConfig config)
    : impl_(std::make_unique<Impl>(std::move(config))) {}
HttpEmbeddingClient::~HttpEmbeddingClient() = default;

Vec HttpEmbeddingClient::fetch(const std::string& text) {
  json body = {{"model", impl_->backend.config.model}, {"input", text}};
  const json res = impl_->backend.post("/v1/embeddings", body);
  try {
    return res.at("data").at(0).at("embedding").get<Vec>();
  } catch (const json::exception& e) {
    throw RagError(ErrorCode::transport, std::string("unexpected embeddings response shape: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Gradient oracle

GradientOracleResponse LocalGradientOracle::evaluate(const GradientOracleRequest& request) {
  if (request.side != "query" && request.side != "context")
    throw RagError(ErrorCode::shape_mismatch, "gradient request side must be 'query' or 'context'");
  if (request.embeddings.cols() != encoder_.hidden())
    throw RagError(ErrorCode::shape_mismatch, "gradient request embedding width does not match encoder");
  if (static_cast<int>(request.pooled.size()) != request.embeddings.rows())
    throw RagError(ErrorCode::shape_mismatch, "gradient request pool mask length does not match rows");
  if (request.companion_encoding.size() != encoder_.hidden())
    throw RagError(ErrorCode::shape_mismatch, "gradient request companion encoding has the wrong size");
  const ReferenceEncoder::ScoreGrad sg =
      encoder_.score_and_grad(request.embeddings, request.pooled, request.companion_encoding);
  GradientOracleResponse out;
  out.score = sg.score;
  out.gradient = sg.grad;
  return out;
}

struct HttpGradientOracle::Impl {
  HttpBackend backend;
  explicit Impl(LMClientConfig cfg) : backend(std::move(cfg)) {}
};

HttpGradientOracle::HttpGradientOracle(LMClientConfig config)
    : impl_(std::make_unique<Impl>(std::move(config))) {}
HttpGradientOracle::~HttpGradientOracle() = default;

GradientOracleResponse HttpGradientOracle::evaluate(const GradientOracleRequest& request) {
  json body;
  body["side"] = request.side;
  body["embeddings"] = matrix_to_json(request.embeddings);
  body["pooled"] = request.pooled;
  json companion = json::array();
  for (int i = 0; i < request.companion_encoding.size(); ++i) companion.push_back(request.companion_encoding(i));
  body["companion_encoding"] = std::move(companion);

  const json res = impl_->backend.post("/grad", body);
  try {
    GradientOracleResponse out;
    out.score = res.at("score").get<double>();
    out.gradient = matrix_from_json(res.at("gradient"));
    if (out.gradient.rows() != request.embeddings.rows() || out.gradient.cols() != request.embeddings.cols())
      throw RagError(ErrorCode::shape_mismatch, "gradient response shape does not match the request");
    return out;
  } catch (const json::exception& e) {
    throw RagError(ErrorCode::transport, std::string("unexpected gradient response shape: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// MockServer

struct MockServer::Impl {
  std::shared_ptr<MockLM> lm;
  std::shared_ptr<LocalGradientOracle> grad;
  std::shared_ptr<MockEmbeddingClient> embeddings;
  httplib::Server server;
  std::thread worker;

  static void fail(httplib::Response& res, int status, const RagError& e) {
    json err = {{"error", {{"message", e.what()}, {"code", error_code_name(e.code())}}}};
    res.status = status;
    res.set_content(err.dump(), "application/json");
  }

  void wire_routes() {
    server.Post("/v1/completions", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        const json body = json::parse(req.body);
        const std::string prompt = body.at("prompt").get<std::string>();
        const int max_tokens = body.value("max_tokens", 0);
        const bool echo = body.value("echo", false);
        json logprobs = {{"tokens", json::array()},
                         {"token_logprobs", json::array()},
                         {"text_offset", json::array()}};
        std::string text;
        if (echo && max_tokens == 0) {
          // Echo scoring: everything after the query line is the forced
          // continuation, tokenized on whitespace.
          const std::size_t q = prompt.rfind("\nQuery: ");
          const std::size_t line_end = q == std::string::npos ? std::string::npos : prompt.find('\n', q + 1);
          if (line_end == std::string::npos)
            throw RagError(ErrorCode::schema, "echo request has no continuation after the query line");
          const std::string prompt_part = prompt.substr(0, line_end);
          const std::string continuation = prompt.substr(line_end + 1);
          const auto prompt_tokens = split_whitespace_with_offsets(prompt_part, 0);
          const auto answer_tokens = split_whitespace_with_offsets(continuation, line_end + 1);
          std::vector<std::string> forced;
          for (const auto& [tok, off] : answer_tokens) {
            (void)off;
            forced.push_back(tok);
          }
          const Vec lps = lm->forced_continuation_logprobs(prompt_part, forced);
          for (const auto& [tok, off] : prompt_tokens) {
            logprobs["tokens"].push_back(tok);
            logprobs["token_logprobs"].push_back(nullptr);
            logprobs["text_offset"].push_back(off);
          }
          for (std::size_t t = 0; t < answer_tokens.size(); ++t) {
            logprobs["tokens"].push_back(answer_tokens[t].first);
            logprobs["token_logprobs"].push_back(lps[t]);
            logprobs["text_offset"].push_back(answer_tokens[t].second);
          }
          text = prompt;
        } else {
          const std::vector<std::string> tokens = lm->generate(prompt, max_tokens);
          text = join_answer_tokens(tokens);
          std::size_t offset = prompt.size();
          for (const std::string& tok : tokens) {
            logprobs["tokens"].push_back(tok);
            logprobs["token_logprobs"].push_back(nullptr);
            logprobs["text_offset"].push_back(offset);
            offset += tok.size() + 1;
          }
        }
        json out = {{"object", "text_completion"},
                    {"model", body.value("model", "mock")},
                    {"choices", json::array({{{"index", 0},
                                              {"text", text},
                                              {"logprobs", logprobs},
                                              {"finish_reason", "stop"}}})}};
        res.set_content(out.dump(), "application/json");
      } catch (const RagError& e) {
        fail(res, e.code() == ErrorCode::transport ? 503 : 400, e);
      } catch (const std::exception& e) {
        fail(res, 400, RagError(ErrorCode::schema, e.what()));
      }
    });

    server.Post("/grad", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        const json body = json::parse(req.body);
        GradientOracleRequest request;
        request.side = body.at("side").get<std::string>();
        request.embeddings = matrix_from_json(body.at("embeddings"));
        request.pooled = body.at("pooled").get<std::vector<bool>>();
        const auto companion = body.at("companion_encoding").get<Vec>();
        request.companion_encoding =
            Eigen::Map<const Eigen::VectorXd>(companion.data(), static_cast<int>(companion.size()));
        const GradientOracleResponse response = grad->evaluate(request);
        json out = {{"score", response.score}, {"gradient", matrix_to_json(response.gradient)}};
        res.set_content(out.dump(), "application/json");
      } catch (const RagError& e) {
        fail(res, 400, e);
      } catch (const std::exception& e) {
        fail(res, 400, RagError(ErrorCode::schema, e.what()));
      }
    });

    server.Post("/v1/embeddings", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        const json body = json::parse(req.body);
        const Vec v = embeddings->embed_text(body.at("input").get<std::string>());
        json out = {{"data", json::array({{{"embedding", v}, {"index", 0}}})}};
        res.set_content(out.dump(), "application/json");
      } catch (const RagError& e) {
        fail(res, 400, e);
      } catch (const std::exception& e) {
        fail(res, 400, RagError(ErrorCode::schema, e.what()));
      }
    });
  }
};

MockServer::MockServer(std::shared_ptr<MockLM> lm, std::shared_ptr<LocalGradientOracle> grad,
                       std::shared_ptr<MockEmbeddingClient> embeddings)
    : impl_(std::make_unique<Impl>()) {
  impl_->lm = std::move(lm);
  impl_->grad = std::move(grad);
  impl_->embeddings = std::move(embeddings);
  impl_->wire_routes();
}

MockServer::~MockServer() { stop(); }

int MockServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
    if (bound <= 0) throw RagError(ErrorCode::transport, "mock server could not bind a port");
  } else if (!impl_->server.bind_to_port(host, port)) {
    throw RagError(ErrorCode::transport, "mock server could not bind port " + std::to_string(port));
  }
  impl_->worker = std::thread([this] { impl_->server.listen_after_bind(); });
  while (!impl_->server.is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(1));
  return bound;
}

void MockServer::stop() {
  if (impl_ && impl_->worker.joinable()) {
    impl_->server.stop();
    impl_->worker.join();
  }
}

}  // namespace ragaudit
