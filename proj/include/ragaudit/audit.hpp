#pragma once

#include <nlohmann/json.hpp>

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ragaudit/encoder.hpp"
#include "ragaudit/gateway.hpp"
#include "ragaudit/generator.hpp"
#include "ragaudit/ig.hpp"
#include "ragaudit/metrics.hpp"
#include "ragaudit/shapley.hpp"

namespace ragaudit {

using Report = nlohmann::ordered_json;

enum class OrderingCondition { original, shuffled, no_duplicates, shuffled_no_duplicates };

OrderingCondition condition_from_string(const std::string& s);
const char* condition_name(OrderingCondition condition);

struct DocumentEntry {
  std::string id;
  std::string text;
};

struct PreRetrievedEntry {
  std::string query;
  std::vector<std::string> ranked_doc_ids;
  Vec scores;
  std::vector<std::string> docs;  // texts aligned with ranked_doc_ids
};

struct AuditConfig {
  std::uint64_t seed = 0;
  std::vector<std::string> queries;

  // Exactly one document source.
  std::vector<DocumentEntry> corpus;             // inline or corpus_file
  std::vector<PreRetrievedEntry> pre_retrieved;  // ranking_file

  int top_k = 10;
  OrderingCondition condition = OrderingCondition::original;

  struct Retriever {
    std::uint64_t seed = 7;
    ReferenceEncoder::Shape shape;
    std::string weights_file;       // overrides the seeded weights
    BaselineMode baseline_mode = BaselineMode::unk;
    int steps = 100;
    std::string gradient_endpoint;  // route score/gradient calls over the wire
  } retriever;

  struct Generator {
    std::optional<MockLMSpec> mock;
    std::optional<LMClientConfig> client;
    PromptTemplate prompt_template = PromptTemplate::ranked();
    int max_tokens = 64;
    ValueScale scale = ValueScale::probability;
  } generator;

  struct Attribution {
    AttributionMethod method = AttributionMethod::pmc;
    SamplerConfig sampler;
    int enumeration_cap = 12;
  } attribution;

  struct Metrics {
    std::vector<double> p_grid = default_persistence_grid();
    int failure_threshold = 2;
    int bootstrap_resamples = 1000;
    double bootstrap_level = 0.95;
  } metrics;

  int parallelism = 1;

  /// Parses and validates a config document; file sources are resolved
  /// relative to `base_dir`.
  static AuditConfig from_json(const nlohmann::json& j, const std::string& base_dir = ".");
  static AuditConfig from_file(const std::string& path);

  void validate() const;

  /// Hash of the canonical config serialization, recorded as provenance.
  std::string config_hash() const;
  nlohmann::ordered_json to_json() const;
};

struct AuditOutcome {
  Report report;
  bool partial_failures = false;
  /// Mock-client diagnostics (zero when a real client is configured).
  std::size_t lm_logprob_calls = 0;
  std::size_t distinct_coalitions = 0;
};

/// Runs the full audit: retrieve (or load) top-k per query, apply the
/// ordering condition, attribute retriever and generator, compute alignment
/// metrics and corpus-level aggregates. Per-query errors are recorded in
/// the report and the run continues.
AuditOutcome run_audit(const AuditConfig& config);

/// Structural validation of an emitted report against the shipped schema.
void validate_report(const Report& report);

std::string format_persistence(double p);

}  // namespace ragaudit
