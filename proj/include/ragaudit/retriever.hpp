#pragma once

#include <utility>
#include <vector>

#include "ragaudit/encoder.hpp"
#include "ragaudit/tokenizer.hpp"

namespace ragaudit {

/// Dot-product relevance of a query/document pair under a bi-encoder.
double retrieval_score(const ReferenceEncoder& enc_q, const ReferenceEncoder& enc_d,
                       const TokenSequence& q, const TokenSequence& d);

/// Brute-force top-k over a small corpus. Descending score, ties broken by
/// ascending corpus index.
std::vector<std::pair<int, double>> retrieve_topk(const ReferenceEncoder& enc_q,
                                                  const ReferenceEncoder& enc_d,
                                                  const TokenSequence& q,
                                                  const std::vector<TokenSequence>& corpus, int k);

}  // namespace ragaudit
