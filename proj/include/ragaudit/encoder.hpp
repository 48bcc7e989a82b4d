#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "ragaudit/common.hpp"
#include "ragaudit/tokenizer.hpp"

namespace ragaudit {

struct EmbeddingSequence {
  Eigen::MatrixXd rows;  // n x hidden

  int positions() const { return static_cast<int>(rows.rows()); }
  int hidden() const { return static_cast<int>(rows.cols()); }
};

/// Minimal dense bi-encoder half: token embedding + frozen sinusoidal
/// positional embedding, mean pooling over non-pad positions, a single
/// projection and a tanh (or identity) nonlinearity. Gradients of the
/// dot-product score with respect to every per-position embedding are
/// available in closed form, which is what makes the attribution stack
/// exactly testable.
class ReferenceEncoder {
 public:
  enum class Activation { tanh_act, identity };

  struct Shape {
    int vocab = 256;
    int hidden = 16;
    int max_len = 64;
  };

  struct ScoreGrad {
    double score = 0.0;
    Eigen::MatrixXd grad;  // n x hidden, d(score)/d(row)
  };

  /// Deterministic random weights; the same seed always yields the same
  /// encoder on every platform.
  static ReferenceEncoder seeded(const Shape& shape, std::uint64_t seed,
                                 Activation act = Activation::tanh_act);
  static ReferenceEncoder from_file(const std::string& path);

  void save_json(const std::string& path) const;
  void save_binary(const std::string& path) const;

  int vocab() const { return static_cast<int>(embedding_.rows()); }
  int hidden() const { return static_cast<int>(embedding_.cols()); }
  int max_len() const { return max_len_; }
  Activation activation() const { return activation_; }
  void set_activation(Activation act) { activation_ = act; }
  void set_projection(const Eigen::MatrixXd& w, const Eigen::VectorXd& b);

  /// Token embedding evaluated at an input position: table[id] + pos[position].
  Eigen::VectorXd token_embedding(int token_id, int position) const;

  /// Phi(x): one row per position.
  EmbeddingSequence embed(const TokenSequence& x) const;

  /// Pooled encoding from raw rows. `pooled[i]` false excludes the row
  /// (pad positions). Throws if nothing is pooled.
  Eigen::VectorXd encode_rows(const Eigen::MatrixXd& rows, const std::vector<bool>& pooled) const;

  Eigen::VectorXd encode(const TokenSequence& x) const;

  /// Score against a fixed companion encoding plus the closed-form gradient
  /// with respect to every row of `rows`.
  ScoreGrad score_and_grad(const Eigen::MatrixXd& rows, const std::vector<bool>& pooled,
                           const Eigen::VectorXd& companion_encoding) const;

  /// Pool mask for a token sequence: everything except pad.
  static std::vector<bool> pool_mask(const TokenSequence& x);

 private:
  ReferenceEncoder() = default;

  Eigen::MatrixXd embedding_;   // vocab x hidden
  Eigen::MatrixXd positional_;  // max_len x hidden, sinusoidal, frozen
  Eigen::MatrixXd projection_;  // hidden x hidden
  Eigen::VectorXd bias_;        // hidden
  int max_len_ = 0;
  Activation activation_ = Activation::tanh_act;

  void build_positional();
};

}  // namespace ragaudit
