#pragma once

#include <functional>
#include <string>

#include "ragaudit/encoder.hpp"
#include "ragaudit/tokenizer.hpp"

namespace ragaudit {

enum class BaselineMode { zeros, mask, pad, unk };

BaselineMode baseline_mode_from_string(const std::string& s);
const char* baseline_mode_name(BaselineMode mode);

enum class AttributionTarget { query, document };

struct SaliencyVector {
  Vec scores;  // aligned to the target TokenSequence positions
  AttributionTarget target = AttributionTarget::document;
  BaselineMode baseline_mode = BaselineMode::unk;
  int steps = 100;
  double score_full = 0.0;      // s at the input embeddings
  double score_baseline = 0.0;  // s at the baseline embeddings
};

/// Baseline embeddings per the replacement rule: special-token rows keep
/// their input embeddings; non-special rows become the mode token's
/// embedding at the same position, or the zero vector for mode zeros.
EmbeddingSequence build_baseline(const TokenSequence& x, const ReferenceEncoder& enc, BaselineMode mode);

/// Score + gradient provider along the interpolation path. Lets the same
/// path integral run against the in-process encoder or a remote gradient
/// endpoint.
using ScoreGradFn = std::function<ReferenceEncoder::ScoreGrad(const Eigen::MatrixXd& rows)>;

/// Path-integral attribution from baseline to input over `steps`
/// interpolation intervals (trapezoidal weights over the steps+1 grid
/// points, so linear scores are attributed exactly at any L).
SaliencyVector integrated_gradients_over(const ScoreGradFn& score_grad, const Eigen::MatrixXd& input_rows,
                                         const Eigen::MatrixXd& baseline_rows, int steps);

/// Convenience wrapper: attribute one side of a query/document pair while
/// the other side stays at its full encoding.
SaliencyVector integrated_gradients(const ReferenceEncoder& enc_q, const ReferenceEncoder& enc_d,
                                    const TokenSequence& q, const TokenSequence& d,
                                    AttributionTarget target, BaselineMode mode, int steps);

/// (sum of saliency scores) / (s_full - s_baseline); the additivity quality
/// ratio. Throws when the denominator is below 1e-12 in magnitude.
double additivity_ratio(const SaliencyVector& saliency, double s_full, double s_baseline);

}  // namespace ragaudit
