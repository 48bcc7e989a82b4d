#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "ragaudit/gateway.hpp"
#include "ragaudit/prompt.hpp"
#include "ragaudit/shapley.hpp"

namespace ragaudit {

struct GenerationRecord {
  std::string prompt;                      // rendered over the full document set
  std::vector<std::string> answer_tokens;  // t_{n+1..m}
  Vec logprobs;                            // per answer token, under the full set

  int token_count() const { return static_cast<int>(answer_tokens.size()); }
};

enum class ValueScale { probability, log_probability };

ValueScale value_scale_from_string(const std::string& s);
const char* value_scale_name(ValueScale scale);

/// Generates the unperturbed answer that every later coalition evaluation
/// is forced to, then scores it once under its own prompt.
GenerationRecord generate_unperturbed(const std::string& query, const std::vector<std::string>& docs,
                                      const PromptTemplate& tmpl, LMClient& client, int max_tokens);

/// The generator viewed as a set function over document subsets: value j is
/// the model's probability (or log probability) of original answer token j
/// under the coalition's prompt with the original answer teacher-forced.
/// Evaluations are cached so each distinct coalition costs one client call.
class ConstrainedValueOracle final : public SetValueOracle {
 public:
  ConstrainedValueOracle(std::string query, std::vector<std::string> docs, PromptTemplate tmpl,
                         GenerationRecord record, std::shared_ptr<LMClient> client,
                         ValueScale scale = ValueScale::probability);

  int arity() const override { return static_cast<int>(docs_.size()); }
  Vec evaluate(const std::vector<int>& members) const override;

  std::size_t distinct_coalitions() const;
  const GenerationRecord& record() const { return record_; }
  ValueScale scale() const { return scale_; }

  /// Evaluates a batch of coalitions with at most `parallelism` client
  /// calls in flight; results land in the cache in a deterministic state
  /// regardless of completion order.
  void prefetch(const std::vector<Coalition>& coalitions, int parallelism) const;

 private:
  std::string query_;
  std::vector<std::string> docs_;
  PromptTemplate tmpl_;
  GenerationRecord record_;
  std::shared_ptr<LMClient> client_;
  ValueScale scale_;
  mutable std::mutex mu_;
  mutable std::map<std::uint32_t, Vec> cache_;
};

/// Convenience free-function form of the oracle contract.
Vec constrained_value(const ConstrainedValueOracle& oracle, const std::vector<int>& coalition);

enum class AttributionMethod { exact, kshap, mc, pmc };

AttributionMethod attribution_method_from_string(const std::string& s);
const char* attribution_method_name(AttributionMethod method);

/// End-to-end generator attribution for a recorded generation: wraps the
/// constrained oracle and dispatches to the requested estimator. Row i
/// aligns with docs[i].
AttributionMatrix attribute_recorded(const ConstrainedValueOracle& oracle, SamplerConfig sampler,
                                     AttributionMethod method, int enumeration_cap = 12,
                                     int parallelism = 1);

/// Generates the unperturbed answer first, then attributes it.
AttributionMatrix attribute_documents(const std::string& query, const std::vector<std::string>& docs,
                                      const PromptTemplate& tmpl, std::shared_ptr<LMClient> client,
                                      SamplerConfig sampler, AttributionMethod method,
                                      ValueScale scale = ValueScale::probability, int max_tokens = 64,
                                      int enumeration_cap = 12, int parallelism = 1);

/// Mean attribution per document over all output tokens.
Vec document_importance(const AttributionMatrix& matrix);

}  // namespace ragaudit
