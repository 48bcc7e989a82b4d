#include "ragaudit/ig.hpp"

#include <cmath>

namespace ragaudit {

BaselineMode baseline_mode_from_string(const std::string& s) {
  if (s == "zeros") return BaselineMode::zeros;
  if (s == "mask") return BaselineMode::mask;
  if (s == "pad") return BaselineMode::pad;
  if (s == "unk") return BaselineMode::unk;
  throw RagError(ErrorCode::invalid_config, "unknown baseline mode '" + s + "'");
}

const char* baseline_mode_name(BaselineMode mode) {
  switch (mode) {
    case BaselineMode::zeros: return "zeros";
    case BaselineMode::mask: return "mask";
    case BaselineMode::pad: return "pad";
    case BaselineMode::unk: return "unk";
  }
  return "?";
}

EmbeddingSequence build_baseline(const TokenSequence& x, const ReferenceEncoder& enc, BaselineMode mode) {
  int replacement_id = -1;
  switch (mode) {
    case BaselineMode::zeros: break;
    case BaselineMode::mask: replacement_id = special_token::mask; break;
    case BaselineMode::pad: replacement_id = special_token::pad; break;
    case BaselineMode::unk: replacement_id = special_token::unk; break;
  }
  if (replacement_id >= enc.vocab())
    throw RagError(ErrorCode::unknown_special_token, "baseline token id outside encoder vocabulary");

  EmbeddingSequence baseline = enc.embed(x);
  for (int i = 0; i < x.size(); ++i) {
    if (x.is_special[static_cast<std::size_t>(i)]) continue;
    if (mode == BaselineMode::zeros) {
      baseline.rows.row(i).setZero();
    } else {
      baseline.rows.row(i) = enc.token_embedding(replacement_id, i).transpose();
    }
  }
  return baseline;
}

SaliencyVector integrated_gradients_over(const ScoreGradFn& score_grad, const Eigen::MatrixXd& input_rows,
                                         const Eigen::MatrixXd& baseline_rows, int steps) {
  if (steps < 1) throw RagError(ErrorCode::invalid_steps, "integration steps must be >= 1");
  if (input_rows.rows() != baseline_rows.rows() || input_rows.cols() != baseline_rows.cols())
    throw RagError(ErrorCode::shape_mismatch, "input and baseline embedding shapes disagree");

  const Eigen::MatrixXd diff = input_rows - baseline_rows;
  Eigen::MatrixXd grad_sum = Eigen::MatrixXd::Zero(input_rows.rows(), input_rows.cols());
  SaliencyVector out;
  out.steps = steps;
  for (int l = 0; l <= steps; ++l) {
    const double alpha = static_cast<double>(l) / steps;
    const Eigen::MatrixXd point = baseline_rows + alpha * diff;
    const ReferenceEncoder::ScoreGrad sg = score_grad(point);
    const double weight = (l == 0 || l == steps) ? 0.5 / steps : 1.0 / steps;
    grad_sum += weight * sg.grad;
    if (l == 0) out.score_baseline = sg.score;
    if (l == steps) out.score_full = sg.score;
  }

  out.scores.resize(static_cast<std::size_t>(input_rows.rows()));
  for (int i = 0; i < input_rows.rows(); ++i)
    out.scores[static_cast<std::size_t>(i)] = diff.row(i).dot(grad_sum.row(i));
  return out;
}

SaliencyVector integrated_gradients(const ReferenceEncoder& enc_q, const ReferenceEncoder& enc_d,
                                    const TokenSequence& q, const TokenSequence& d,
                                    AttributionTarget target, BaselineMode mode, int steps) {
  if (enc_q.hidden() != enc_d.hidden())
    throw RagError(ErrorCode::dimension_mismatch, "query and context encoders disagree on hidden size");

  const TokenSequence& side = target == AttributionTarget::query ? q : d;
  const ReferenceEncoder& enc_side = target == AttributionTarget::query ? enc_q : enc_d;
  const TokenSequence& other = target == AttributionTarget::query ? d : q;
  const ReferenceEncoder& enc_other = target == AttributionTarget::query ? enc_d : enc_q;
  if (side.size() == 0) throw RagError(ErrorCode::empty_input, "attribution target side is empty");

  const Eigen::VectorXd fixed_encoding = enc_other.encode(other);
  const std::vector<bool> pooled = ReferenceEncoder::pool_mask(side);
  const EmbeddingSequence input = enc_side.embed(side);
  const EmbeddingSequence baseline = build_baseline(side, enc_side, mode);

  SaliencyVector out = integrated_gradients_over(
      [&](const Eigen::MatrixXd& rows) { return enc_side.score_and_grad(rows, pooled, fixed_encoding); },
      input.rows, baseline.rows, steps);
  out.target = target;
  out.baseline_mode = mode;
  return out;
}

double additivity_ratio(const SaliencyVector& saliency, double s_full, double s_baseline) {
  const double denom = s_full - s_baseline;
  if (std::fabs(denom) < 1e-12)
    throw RagError(ErrorCode::degenerate_denominator,
                   "additivity ratio undefined: |s_full - s_baseline| < 1e-12");
  double total = 0.0;
  for (double v : saliency.scores) total += v;
  return total / denom;
}

}  // namespace ragaudit
