#include "ragaudit/generator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <set>
#include <thread>

namespace ragaudit {

ValueScale value_scale_from_string(const std::string& s) {
  if (s == "probability") return ValueScale::probability;
  if (s == "log_probability") return ValueScale::log_probability;
  throw RagError(ErrorCode::invalid_config, "unknown value scale '" + s + "'");
}

const char* value_scale_name(ValueScale scale) {
  return scale == ValueScale::probability ? "probability" : "log_probability";
}

AttributionMethod attribution_method_from_string(const std::string& s) {
  if (s == "exact") return AttributionMethod::exact;
  if (s == "kshap") return AttributionMethod::kshap;
  if (s == "mc") return AttributionMethod::mc;
  if (s == "pmc") return AttributionMethod::pmc;
  throw RagError(ErrorCode::invalid_config, "unknown attribution method '" + s + "'");
}

const char* attribution_method_name(AttributionMethod method) {
  switch (method) {
    case AttributionMethod::exact: return "exact";
    case AttributionMethod::kshap: return "kshap";
    case AttributionMethod::mc: return "mc";
    case AttributionMethod::pmc: return "pmc";
  }
  return "?";
}

GenerationRecord generate_unperturbed(const std::string& query, const std::vector<std::string>& docs,
                                      const PromptTemplate& tmpl, LMClient& client, int max_tokens) {
  if (max_tokens < 1) throw RagError(ErrorCode::invalid_config, "decoding config needs a token cap >= 1");
  GenerationRecord record;
  record.prompt = create_prompt(query, docs, tmpl);
  record.answer_tokens = client.generate(record.prompt, max_tokens);
  if (record.answer_tokens.empty())
    throw RagError(ErrorCode::empty_generation, "generator produced an empty answer");
  record.logprobs = client.forced_continuation_logprobs(record.prompt, record.answer_tokens);
  return record;
}

ConstrainedValueOracle::ConstrainedValueOracle(std::string query, std::vector<std::string> docs,
                                               PromptTemplate tmpl, GenerationRecord record,
                                               std::shared_ptr<LMClient> client, ValueScale scale)
    : query_(std::move(query)),
      docs_(std::move(docs)),
      tmpl_(std::move(tmpl)),
      record_(std::move(record)),
      client_(std::move(client)),
      scale_(scale) {
  if (docs_.empty()) throw RagError(ErrorCode::invalid_config, "constrained oracle needs at least one document");
  if (record_.answer_tokens.empty())
    throw RagError(ErrorCode::empty_generation, "constrained oracle needs a recorded answer");
  if (!client_) throw RagError(ErrorCode::invalid_config, "constrained oracle needs a client");
}

Vec ConstrainedValueOracle::evaluate(const std::vector<int>& members) const {
  const std::uint32_t mask = coalition_mask(members, arity());
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = cache_.find(mask);
    if (it != cache_.end()) return it->second;
  }

  std::vector<std::string> subset;
  subset.reserve(members.size());
  for (int i : members) subset.push_back(docs_[static_cast<std::size_t>(i)]);
  const std::string prompt = create_prompt(query_, subset, tmpl_);
  const Vec logprobs = client_->forced_continuation_logprobs(prompt, record_.answer_tokens);
  if (logprobs.size() != record_.answer_tokens.size())
    throw RagError(ErrorCode::token_alignment, "client returned the wrong number of token scores");

  Vec value(logprobs.size());
  for (std::size_t j = 0; j < logprobs.size(); ++j)
    value[j] = scale_ == ValueScale::probability ? std::exp(logprobs[j]) : logprobs[j];

  std::lock_guard<std::mutex> lock(mu_);
  auto [it, inserted] = cache_.emplace(mask, std::move(value));
  (void)inserted;
  return it->second;
}

std::size_t ConstrainedValueOracle::distinct_coalitions() const {
  std::lock_guard<std::mutex> lock(mu_);
  return cache_.size();
}

void ConstrainedValueOracle::prefetch(const std::vector<Coalition>& coalitions, int parallelism) const {
  if (parallelism < 1) throw RagError(ErrorCode::invalid_config, "parallelism must be >= 1");
  if (parallelism == 1 || coalitions.size() < 2) {
    for (const Coalition& c : coalitions) evaluate(c.members);
    return;
  }
  std::vector<std::uint32_t> masks;
  std::vector<std::vector<int>> member_lists;
  {
    std::lock_guard<std::mutex> lock(mu_);
    std::set<std::uint32_t> wanted;
    for (const Coalition& c : coalitions) {
      const std::uint32_t mask = coalition_mask(c.members, arity());
      if (!cache_.count(mask) && wanted.insert(mask).second) member_lists.push_back(c.members);
    }
  }
  std::atomic<std::size_t> cursor{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = cursor.fetch_add(1);
      if (i >= member_lists.size()) return;
      try {
        evaluate(member_lists[i]);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> threads;
  const int n_threads = std::min<int>(parallelism, static_cast<int>(member_lists.size()));
  threads.reserve(static_cast<std::size_t>(n_threads));
  for (int t = 0; t < n_threads; ++t) threads.emplace_back(worker);
  for (std::thread& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

Vec constrained_value(const ConstrainedValueOracle& oracle, const std::vector<int>& coalition) {
  return oracle.evaluate(coalition);
}

AttributionMatrix attribute_recorded(const ConstrainedValueOracle& oracle, SamplerConfig sampler,
                                     AttributionMethod method, int enumeration_cap, int parallelism) {
  const int k = oracle.arity();
  switch (method) {
    case AttributionMethod::exact: {
      if (parallelism > 1 && k <= enumeration_cap) {
        std::vector<Coalition> all;
        for (std::uint32_t mask = 0; mask < (1u << k); ++mask)
          all.push_back(Coalition{coalition_members(mask, k), {}});
        oracle.prefetch(all, parallelism);
      }
      return exact_shapley(oracle, enumeration_cap);
    }
    case AttributionMethod::kshap: {
      std::vector<Coalition> pool = sample_coalitions(sampler, k);
      oracle.prefetch(pool, parallelism);
      evaluate_pool(oracle, pool);
      return kernel_shap(pool, k);
    }
    case AttributionMethod::mc:
    case AttributionMethod::pmc: {
      sampler.pairing = method == AttributionMethod::pmc ? SamplerConfig::Pairing::paired
                                                         : SamplerConfig::Pairing::random;
      if (method == AttributionMethod::pmc &&
          sampler.strategy != SamplerConfig::Strategy::complementary)
        throw RagError(ErrorCode::invalid_config, "pmc requires complementary pool sampling");
      if (parallelism > 1) {
        std::vector<Coalition> pool = sample_coalitions(sampler, k);
        oracle.prefetch(pool, parallelism);
      }
      return mc_shap(oracle, sampler);
    }
  }
  throw RagError(ErrorCode::invalid_config, "unreachable attribution method");
}

AttributionMatrix attribute_documents(const std::string& query, const std::vector<std::string>& docs,
                                      const PromptTemplate& tmpl, std::shared_ptr<LMClient> client,
                                      SamplerConfig sampler, AttributionMethod method, ValueScale scale,
                                      int max_tokens, int enumeration_cap, int parallelism) {
  if (docs.empty()) throw RagError(ErrorCode::invalid_config, "attribution needs at least one document");
  GenerationRecord record = generate_unperturbed(query, docs, tmpl, *client, max_tokens);
  ConstrainedValueOracle oracle(query, docs, tmpl, std::move(record), std::move(client), scale);
  return attribute_recorded(oracle, sampler, method, enumeration_cap, parallelism);
}

Vec document_importance(const AttributionMatrix& matrix) {
  if (matrix.outputs < 1)
    throw RagError(ErrorCode::invalid_config, "attribution matrix has no output columns");
  return matrix.row_means();
}

}  // namespace ragaudit
