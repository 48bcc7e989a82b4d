#include "ragaudit/encoder.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace ragaudit {

namespace {

using nlohmann::json;

constexpr char kBinaryMagic[8] = {'R', 'A', 'G', 'E', 'N', 'C', '1', '\0'};

std::vector<double> flatten(const Eigen::MatrixXd& m) {
  std::vector<double> out(static_cast<std::size_t>(m.size()));
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c)
      out[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
  return out;
}

Eigen::MatrixXd unflatten(const std::vector<double>& v, int rows, int cols, const char* what) {
  if (static_cast<int>(v.size()) != rows * cols)
    throw RagError(ErrorCode::schema, std::string("weight field '") + what + "' has the wrong element count");
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = v[static_cast<std::size_t>(r * cols + c)];
  return m;
}

}  // namespace

void ReferenceEncoder::build_positional() {
  const int h = hidden();
  positional_ = Eigen::MatrixXd::Zero(max_len_, h);
  for (int pos = 0; pos < max_len_; ++pos) {
    for (int c = 0; c < h; ++c) {
      const double rate = std::pow(10000.0, -2.0 * (c / 2) / h);
      positional_(pos, c) = (c % 2 == 0) ? std::sin(pos * rate) : std::cos(pos * rate);
    }
  }
}

ReferenceEncoder ReferenceEncoder::seeded(const Shape& shape, std::uint64_t seed, Activation act) {
  if (shape.vocab <= special_token::count || shape.hidden < 1 || shape.max_len < 2)
    throw RagError(ErrorCode::invalid_config, "encoder shape out of range");
  ReferenceEncoder enc;
  enc.max_len_ = shape.max_len;
  enc.activation_ = act;
  Rng rng(seed);
  const double emb_scale = 1.0 / std::sqrt(static_cast<double>(shape.hidden));
  enc.embedding_ = Eigen::MatrixXd(shape.vocab, shape.hidden);
  for (int r = 0; r < shape.vocab; ++r)
    for (int c = 0; c < shape.hidden; ++c) enc.embedding_(r, c) = rng.normal() * emb_scale;
  enc.projection_ = Eigen::MatrixXd(shape.hidden, shape.hidden);
  for (int r = 0; r < shape.hidden; ++r)
    for (int c = 0; c < shape.hidden; ++c) enc.projection_(r, c) = rng.normal() * emb_scale;
  enc.bias_ = Eigen::VectorXd(shape.hidden);
  for (int c = 0; c < shape.hidden; ++c) enc.bias_(c) = rng.normal() * 0.1;
  enc.build_positional();
  return enc;
}

void ReferenceEncoder::set_projection(const Eigen::MatrixXd& w, const Eigen::VectorXd& b) {
  if (w.rows() != hidden() || w.cols() != hidden() || b.size() != hidden())
    throw RagError(ErrorCode::dimension_mismatch, "projection shape does not match hidden size");
  projection_ = w;
  bias_ = b;
}

Eigen::VectorXd ReferenceEncoder::token_embedding(int token_id, int position) const {
  if (token_id < 0 || token_id >= vocab())
    throw RagError(ErrorCode::unknown_special_token,
                   "token id " + std::to_string(token_id) + " outside vocabulary");
  if (position < 0 || position >= max_len_)
    throw RagError(ErrorCode::invalid_config,
                   "position " + std::to_string(position) + " outside max_len " + std::to_string(max_len_));
  return embedding_.row(token_id).transpose() + positional_.row(position).transpose();
}

EmbeddingSequence ReferenceEncoder::embed(const TokenSequence& x) const {
  x.check();
  if (x.size() > max_len_)
    throw RagError(ErrorCode::invalid_config,
                   "sequence length " + std::to_string(x.size()) + " exceeds max_len " + std::to_string(max_len_));
  EmbeddingSequence seq;
  seq.rows = Eigen::MatrixXd(x.size(), hidden());
  for (int i = 0; i < x.size(); ++i)
    seq.rows.row(i) = token_embedding(x.tokens[static_cast<std::size_t>(i)], i).transpose();
  return seq;
}

std::vector<bool> ReferenceEncoder::pool_mask(const TokenSequence& x) {
  std::vector<bool> pooled(static_cast<std::size_t>(x.size()));
  for (int i = 0; i < x.size(); ++i)
    pooled[static_cast<std::size_t>(i)] = x.tokens[static_cast<std::size_t>(i)] != special_token::pad;
  return pooled;
}

Eigen::VectorXd ReferenceEncoder::encode_rows(const Eigen::MatrixXd& rows,
                                              const std::vector<bool>& pooled) const {
  if (rows.cols() != hidden())
    throw RagError(ErrorCode::dimension_mismatch, "embedding width does not match encoder hidden size");
  if (static_cast<int>(pooled.size()) != rows.rows())
    throw RagError(ErrorCode::shape_mismatch, "pool mask length does not match row count");
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(hidden());
  int n = 0;
  for (int i = 0; i < rows.rows(); ++i) {
    if (!pooled[static_cast<std::size_t>(i)]) continue;
    mean += rows.row(i).transpose();
    ++n;
  }
  if (n == 0) throw RagError(ErrorCode::empty_input, "nothing to pool: all positions are pad");
  mean /= n;
  Eigen::VectorXd pre = projection_ * mean + bias_;
  if (activation_ == Activation::tanh_act) return pre.array().tanh().matrix();
  return pre;
}

Eigen::VectorXd ReferenceEncoder::encode(const TokenSequence& x) const {
  return encode_rows(embed(x).rows, pool_mask(x));
}

ReferenceEncoder::ScoreGrad ReferenceEncoder::score_and_grad(
    const Eigen::MatrixXd& rows, const std::vector<bool>& pooled,
    const Eigen::VectorXd& companion_encoding) const {
  if (companion_encoding.size() != hidden())
    throw RagError(ErrorCode::dimension_mismatch, "companion encoding has the wrong dimension");
  const Eigen::VectorXd enc = encode_rows(rows, pooled);
  ScoreGrad out;
  out.score = enc.dot(companion_encoding);

  // s = act(W z + b) . e_fix with z the pooled mean, so every pooled row
  // shares the gradient (1/n) W^T (act'(pre) .* e_fix).
  Eigen::VectorXd act_prime;
  if (activation_ == Activation::tanh_act) {
    act_prime = (1.0 - enc.array().square()).matrix();
  } else {
    act_prime = Eigen::VectorXd::Ones(hidden());
  }
  int n = 0;
  for (bool p : pooled)
    if (p) ++n;
  const Eigen::VectorXd common =
      projection_.transpose() * (act_prime.array() * companion_encoding.array()).matrix() / n;
  out.grad = Eigen::MatrixXd::Zero(rows.rows(), hidden());
  for (int i = 0; i < rows.rows(); ++i)
    if (pooled[static_cast<std::size_t>(i)]) out.grad.row(i) = common.transpose();
  return out;
}

void ReferenceEncoder::save_json(const std::string& path) const {
  json j;
  j["vocab"] = vocab();
  j["h"] = hidden();
  j["max_len"] = max_len_;
  j["activation"] = activation_ == Activation::tanh_act ? "tanh" : "identity";
  j["embedding"] = flatten(embedding_);
  j["projection"] = flatten(projection_);
  j["bias"] = std::vector<double>(bias_.data(), bias_.data() + bias_.size());
  std::ofstream out(path);
  if (!out) throw RagError(ErrorCode::io, "cannot write " + path);
  out << j.dump();
}

void ReferenceEncoder::save_binary(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RagError(ErrorCode::io, "cannot write " + path);
  out.write(kBinaryMagic, sizeof(kBinaryMagic));
  const std::int32_t dims[4] = {static_cast<std::int32_t>(vocab()), static_cast<std::int32_t>(hidden()),
                                static_cast<std::int32_t>(max_len_),
                                activation_ == Activation::tanh_act ? 0 : 1};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  auto write_mat = [&](const Eigen::MatrixXd& m) {
    const std::vector<double> flat = flatten(m);
    out.write(reinterpret_cast<const char*>(flat.data()),
              static_cast<std::streamsize>(flat.size() * sizeof(double)));
  };
  write_mat(embedding_);
  write_mat(projection_);
  const std::vector<double> b(bias_.data(), bias_.data() + bias_.size());
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size() * sizeof(double)));
}

ReferenceEncoder ReferenceEncoder::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RagError(ErrorCode::io, "cannot open " + path);
  char magic[8] = {};
  in.read(magic, sizeof(magic));
  ReferenceEncoder enc;
  if (in && std::memcmp(magic, kBinaryMagic, sizeof(kBinaryMagic)) == 0) {
    std::int32_t dims[4];
    in.read(reinterpret_cast<char*>(dims), sizeof(dims));
    if (!in) throw RagError(ErrorCode::schema, "truncated weight file " + path);
    const int vocab = dims[0], h = dims[1];
    enc.max_len_ = dims[2];
    enc.activation_ = dims[3] == 0 ? Activation::tanh_act : Activation::identity;
    auto read_mat = [&](int rows, int cols) {
      std::vector<double> flat(static_cast<std::size_t>(rows) * cols);
      in.read(reinterpret_cast<char*>(flat.data()),
              static_cast<std::streamsize>(flat.size() * sizeof(double)));
      if (!in) throw RagError(ErrorCode::schema, "truncated weight file " + path);
      return unflatten(flat, rows, cols, "binary");
    };
    enc.embedding_ = read_mat(vocab, h);
    enc.projection_ = read_mat(h, h);
    Eigen::MatrixXd b = read_mat(1, h);
    enc.bias_ = b.row(0).transpose();
  } else {
    in.close();
    std::ifstream text(path);
    json j;
    try {
      text >> j;
    } catch (const std::exception& e) {
      throw RagError(ErrorCode::schema, std::string("weight file is neither binary nor JSON: ") + e.what());
    }
    const int vocab = j.at("vocab").get<int>();
    const int h = j.at("h").get<int>();
    enc.max_len_ = j.at("max_len").get<int>();
    enc.activation_ =
        j.value("activation", "tanh") == std::string("identity") ? Activation::identity : Activation::tanh_act;
    enc.embedding_ = unflatten(j.at("embedding").get<std::vector<double>>(), vocab, h, "embedding");
    enc.projection_ = unflatten(j.at("projection").get<std::vector<double>>(), h, h, "projection");
    const auto bias = j.at("bias").get<std::vector<double>>();
    if (static_cast<int>(bias.size()) != h)
      throw RagError(ErrorCode::schema, "weight field 'bias' has the wrong element count");
    enc.bias_ = Eigen::Map<const Eigen::VectorXd>(bias.data(), h);
  }
  if (enc.vocab() <= special_token::count || enc.hidden() < 1 || enc.max_len_ < 2)
    throw RagError(ErrorCode::schema, "weight file declares an invalid shape");
  enc.build_positional();
  return enc;
}

}  // namespace ragaudit
