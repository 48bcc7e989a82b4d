#include <doctest.h>

#include <atomic>
#include <cmath>
#include <thread>

#include "ragaudit/gateway.hpp"
#include "ragaudit/ig.hpp"
#include "ragaudit/prompt.hpp"

using namespace ragaudit;

namespace {

MockLMSpec warsaw_spec() {
  MockLMSpec spec;
  MockLMSpec::Entry e;
  e.query = "Where was she born?";
  e.answer_tokens = {"Warsaw", ".", "indeed"};
  e.base_logits = {0.2, -0.1, 0.4};
  e.docs = {"Doc about Paris", "Doc about Warsaw", "Doc about nothing"};
  e.influence = {{0.0, 0.0, 0.0}, {2.0, 0.0, 0.0}, {0.0, 0.0, 0.0}};
  spec.entries.push_back(e);
  return spec;
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_SUITE_BEGIN("gateway");

TEST_CASE("mock scripted generation honors the token cap") {
  MockLM lm(warsaw_spec());
  const PromptTemplate tmpl = PromptTemplate::ranked();
  const std::string prompt = create_prompt("Where was she born?", {"Doc about Warsaw"}, tmpl);
  CHECK(lm.generate(prompt, 16) == std::vector<std::string>{"Warsaw", ".", "indeed"});
  CHECK(lm.generate(prompt, 1) == std::vector<std::string>{"Warsaw"});
  CHECK_THROWS_AS(lm.generate(prompt, 0), RagError);
}

TEST_CASE("mock logprobs equal the closed-form membership values") {
  const MockLMSpec spec = warsaw_spec();
  MockLM lm(spec);
  const PromptTemplate tmpl = PromptTemplate::ranked();

  // Coalition {1}: influence row of the Warsaw doc only.
  const std::string prompt = create_prompt("Where was she born?", {"Doc about Warsaw"}, tmpl);
  const Vec lps = lm.forced_continuation_logprobs(prompt, spec.entries[0].answer_tokens);
  REQUIRE(lps.size() == 3);
  CHECK(lps[0] == doctest::Approx(std::log(logistic(0.2 + 2.0))).epsilon(1e-12));
  CHECK(lps[1] == doctest::Approx(std::log(logistic(-0.1))).epsilon(1e-12));

  // Empty coalition vs the full set: difference driven by b only.
  const std::string empty_prompt = create_prompt("Where was she born?", {}, tmpl);
  const Vec empty_lps = lm.forced_continuation_logprobs(empty_prompt, spec.entries[0].answer_tokens);
  CHECK(std::exp(lps[0]) - std::exp(empty_lps[0]) ==
        doctest::Approx(logistic(0.2 + 2.0) - logistic(0.2)).epsilon(1e-12));

  // Unknown forced tokens are a hard alignment error.
  CHECK_THROWS_AS(lm.forced_continuation_logprobs(prompt, {"Krakow"}), RagError);
  CHECK_THROWS_AS(lm.forced_continuation_logprobs(prompt, {}), RagError);
}

TEST_CASE("document membership is recovered from the rendered prompt only") {
  const MockLMSpec spec = warsaw_spec();
  MockLM lm(spec);
  const PromptTemplate tmpl = PromptTemplate::ranked();
  // Renumbered subset prompt: Document 1 is the Warsaw doc (original index 1).
  const std::string prompt =
      create_prompt("Where was she born?", {"Doc about nothing", "Doc about Warsaw"}, tmpl);
  const Vec lps = lm.forced_continuation_logprobs(prompt, {"Warsaw"});
  CHECK(lps[0] == doctest::Approx(std::log(logistic(0.2 + 2.0))).epsilon(1e-12));
}

TEST_CASE("injected transport failures respect the retry policy") {
  auto lm = std::make_shared<MockLM>(warsaw_spec());
  lm->inject_failures(2);
  RetryingLMClient client(lm, 3, 0.0);
  const PromptTemplate tmpl = PromptTemplate::ranked();
  const std::string prompt = create_prompt("Where was she born?", {}, tmpl);
  const std::vector<std::string> tokens = client.generate(prompt, 4);
  CHECK(tokens.size() == 3);
  CHECK(lm->call_count() == 3);  // two failures plus the success

  lm->inject_failures(4);
  CHECK_THROWS_AS(client.generate(prompt, 4), RagError);
}

TEST_CASE("in-flight mock calls never exceed the parallelism bound") {
  auto lm = std::make_shared<MockLM>(warsaw_spec(), 2);
  const PromptTemplate tmpl = PromptTemplate::ranked();
  const std::string prompt = create_prompt("Where was she born?", {}, tmpl);
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t)
    threads.emplace_back([&] { lm->forced_continuation_logprobs(prompt, {"Warsaw"}); });
  for (auto& t : threads) t.join();
  CHECK(lm->peak_in_flight() <= 2);
  CHECK(lm->call_count() == 8);
}

TEST_CASE("mock embedding client latches the dimension") {
  MockEmbeddingClient table({{"hello", {1.0, 2.0}}}, 2);
  CHECK(table.embed_text("hello") == Vec{1.0, 2.0});
  CHECK(table.embed_text("hello") == table.embed_text("hello"));
  const Vec fallback = table.embed_text("unseen text");
  CHECK(fallback.size() == 2);

  MockEmbeddingClient changing({{"a", {1.0}}, {"b", {1.0, 2.0}}});
  CHECK(changing.embed_text("a").size() == 1);
  CHECK_THROWS_AS(changing.embed_text("b"), RagError);
}

TEST_CASE("local gradient oracle equals the encoder arithmetic") {
  const ReferenceEncoder enc = ReferenceEncoder::seeded({64, 8, 32}, 7);
  LocalGradientOracle oracle(enc);
  const TokenSequence d = tokenize("a small fixture document", 64);
  const TokenSequence q = tokenize("fixture query", 64);

  GradientOracleRequest req;
  req.side = "context";
  req.embeddings = enc.embed(d).rows;
  req.pooled = ReferenceEncoder::pool_mask(d);
  req.companion_encoding = enc.encode(q);
  const GradientOracleResponse resp = oracle.evaluate(req);
  const ReferenceEncoder::ScoreGrad direct = enc.score_and_grad(req.embeddings, req.pooled, req.companion_encoding);
  CHECK(std::fabs(resp.score - direct.score) < 1e-12);
  CHECK((resp.gradient - direct.grad).cwiseAbs().maxCoeff() < 1e-12);

  // Zero embeddings are a valid input.
  req.embeddings.setZero();
  CHECK(std::isfinite(oracle.evaluate(req).score));

  // Mismatched width is a shape error.
  req.embeddings = Eigen::MatrixXd::Zero(d.size(), 4);
  CHECK_THROWS_AS(oracle.evaluate(req), RagError);
}

TEST_CASE("http round-trip: completions, embeddings and gradients over the wire") {
  const MockLMSpec spec = warsaw_spec();
  auto lm = std::make_shared<MockLM>(spec);
  const ReferenceEncoder enc = ReferenceEncoder::seeded({64, 8, 32}, 7);
  auto grad = std::make_shared<LocalGradientOracle>(enc);
  auto emb = std::make_shared<MockEmbeddingClient>(std::vector<std::pair<std::string, Vec>>{}, 6);

  MockServer server(lm, grad, emb);
  const int port = server.start("127.0.0.1", 0);
  REQUIRE(port > 0);
  LMClientConfig cfg;
  cfg.base_url = "http://127.0.0.1:" + std::to_string(port);
  cfg.model = "mock";
  cfg.retries = 1;
  cfg.backoff_ms = 1.0;

  const PromptTemplate tmpl = PromptTemplate::ranked();
  const std::string prompt = create_prompt("Where was she born?", {"Doc about Warsaw"}, tmpl);

  // Completions: generation then echo scoring, equal to the in-process mock.
  HttpLMClient http(cfg);
  CHECK(http.generate(prompt, 8) == lm->generate(prompt, 8));
  const Vec wire_lps = http.forced_continuation_logprobs(prompt, spec.entries[0].answer_tokens);
  const Vec local_lps = lm->forced_continuation_logprobs(prompt, spec.entries[0].answer_tokens);
  REQUIRE(wire_lps.size() == local_lps.size());
  for (std::size_t j = 0; j < wire_lps.size(); ++j)
    CHECK(wire_lps[j] == doctest::Approx(local_lps[j]).epsilon(1e-12));

  // Tokenization disagreement is a token_alignment error end to end.
  bool alignment_raised = false;
  try {
    http.forced_continuation_logprobs(prompt, {"Krakow", "?"});
  } catch (const RagError& e) {
    alignment_raised = e.code() == ErrorCode::transport || e.code() == ErrorCode::token_alignment;
  }
  CHECK(alignment_raised);

  // Embeddings endpoint with dimension latching in the client.
  HttpEmbeddingClient embeddings(cfg);
  const Vec v1 = embeddings.embed_text("food safety regulation");
  const Vec v2 = embeddings.embed_text("food safety regulation");
  CHECK(v1 == v2);
  CHECK(v1.size() == 6);

  // Gradient oracle over the wire equals the in-process arithmetic.
  const TokenSequence d = tokenize("a small fixture document", 64);
  const TokenSequence q = tokenize("fixture query", 64);
  GradientOracleRequest req;
  req.side = "context";
  req.embeddings = enc.embed(d).rows;
  req.pooled = ReferenceEncoder::pool_mask(d);
  req.companion_encoding = enc.encode(q);
  HttpGradientOracle grad_client(cfg);
  const GradientOracleResponse wire = grad_client.evaluate(req);
  const GradientOracleResponse local = grad->evaluate(req);
  CHECK(std::fabs(wire.score - local.score) < 1e-12);
  CHECK((wire.gradient - local.gradient).cwiseAbs().maxCoeff() < 1e-12);

  server.stop();
}

TEST_CASE("wire IG equals in-process IG through the gradient endpoint") {
  const ReferenceEncoder enc = ReferenceEncoder::seeded({64, 8, 32}, 19);
  auto lm = std::make_shared<MockLM>(warsaw_spec());
  auto grad = std::make_shared<LocalGradientOracle>(enc);
  auto emb = std::make_shared<MockEmbeddingClient>(std::vector<std::pair<std::string, Vec>>{}, 4);
  MockServer server(lm, grad, emb);
  const int port = server.start("127.0.0.1", 0);
  LMClientConfig cfg;
  cfg.base_url = "http://127.0.0.1:" + std::to_string(port);

  const TokenSequence q = tokenize("what is in the box", 64);
  const TokenSequence d = tokenize("the box holds a reference fixture", 64);
  const SaliencyVector local =
      integrated_gradients(enc, enc, q, d, AttributionTarget::document, BaselineMode::unk, 12);

  HttpGradientOracle grad_client(cfg);
  const Eigen::VectorXd companion = enc.encode(q);
  const std::vector<bool> pooled = ReferenceEncoder::pool_mask(d);
  const EmbeddingSequence input = enc.embed(d);
  const EmbeddingSequence baseline = build_baseline(d, enc, BaselineMode::unk);
  const SaliencyVector wire = integrated_gradients_over(
      [&](const Eigen::MatrixXd& rows) {
        GradientOracleRequest req;
        req.side = "context";
        req.embeddings = rows;
        req.pooled = pooled;
        req.companion_encoding = companion;
        const GradientOracleResponse resp = grad_client.evaluate(req);
        return ReferenceEncoder::ScoreGrad{resp.score, resp.gradient};
      },
      input.rows, baseline.rows, 12);

  REQUIRE(wire.scores.size() == local.scores.size());
  for (std::size_t i = 0; i < wire.scores.size(); ++i)
    CHECK(wire.scores[i] == doctest::Approx(local.scores[i]).epsilon(1e-10));
  CHECK(wire.score_full == doctest::Approx(local.score_full).epsilon(1e-12));
  server.stop();
}

TEST_CASE("mock spec json round-trips") {
  const MockLMSpec spec = warsaw_spec();
  const MockLMSpec parsed = MockLMSpec::from_json_text(spec.to_json_text());
  REQUIRE(parsed.entries.size() == 1);
  CHECK(parsed.entries[0].query == spec.entries[0].query);
  CHECK(parsed.entries[0].influence == spec.entries[0].influence);
  CHECK(parsed.entries[0].base_logits == spec.entries[0].base_logits);
  CHECK_THROWS_AS(MockLMSpec::from_json_text("{\"entries\": [{\"query\": \"x\"}]}"), RagError);
}

TEST_SUITE_END();
