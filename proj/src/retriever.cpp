#include "ragaudit/retriever.hpp"

#include <algorithm>

namespace ragaudit {

double retrieval_score(const ReferenceEncoder& enc_q, const ReferenceEncoder& enc_d,
                       const TokenSequence& q, const TokenSequence& d) {
  if (enc_q.hidden() != enc_d.hidden())
    throw RagError(ErrorCode::dimension_mismatch, "query and context encoders disagree on hidden size");
  return enc_q.encode(q).dot(enc_d.encode(d));
}

std::vector<std::pair<int, double>> retrieve_topk(const ReferenceEncoder& enc_q,
                                                  const ReferenceEncoder& enc_d,
                                                  const TokenSequence& q,
                                                  const std::vector<TokenSequence>& corpus, int k) {
  if (corpus.empty()) throw RagError(ErrorCode::empty_corpus, "cannot retrieve from an empty corpus");
  if (k < 1 || k > static_cast<int>(corpus.size()))
    throw RagError(ErrorCode::invalid_config, "top-k must satisfy 1 <= k <= corpus size");

  const Eigen::VectorXd query_enc = enc_q.encode(q);
  std::vector<std::pair<int, double>> scored;
  scored.reserve(corpus.size());
  for (int i = 0; i < static_cast<int>(corpus.size()); ++i) {
    if (enc_q.hidden() != enc_d.hidden())
      throw RagError(ErrorCode::dimension_mismatch, "query and context encoders disagree on hidden size");
    scored.emplace_back(i, query_enc.dot(enc_d.encode(corpus[static_cast<std::size_t>(i)])));
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  scored.resize(static_cast<std::size_t>(k));
  return scored;
}

}  // namespace ragaudit
