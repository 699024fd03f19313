#include "evparse/nn.hpp"

#include <cmath>

namespace evparse::nn {

Parameter glorot(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                 std::mt19937_64& rng) {
  double std_dev = std::sqrt(2.0 / static_cast<double>(rows + cols));
  std::normal_distribution<double> dist(0.0, std_dev);
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
  return Parameter(name, std::move(m));
}

Parameter zeros(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  return Parameter(name, Mat::Zero(rows, cols));
}

Parameter ones(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  return Parameter(name, Mat::Ones(rows, cols));
}

TransformerBlock TransformerBlock::create(const std::string& prefix,
                                          std::size_t dim, std::size_t n_heads,
                                          std::mt19937_64& rng) {
  TransformerBlock block;
  block.n_heads = n_heads;
  auto d = static_cast<Eigen::Index>(dim);
  block.ln1_gamma = ones(prefix + ".ln1.gamma", 1, d);
  block.ln1_beta = zeros(prefix + ".ln1.beta", 1, d);
  block.w_q = glorot(prefix + ".attn.wq", d, d, rng);
  block.w_k = glorot(prefix + ".attn.wk", d, d, rng);
  block.w_v = glorot(prefix + ".attn.wv", d, d, rng);
  block.w_o = glorot(prefix + ".attn.wo", d, d, rng);
  block.ln2_gamma = ones(prefix + ".ln2.gamma", 1, d);
  block.ln2_beta = zeros(prefix + ".ln2.beta", 1, d);
  block.ff_w1 = glorot(prefix + ".ff.w1", d, 4 * d, rng);
  block.ff_b1 = zeros(prefix + ".ff.b1", 1, 4 * d);
  block.ff_w2 = glorot(prefix + ".ff.w2", 4 * d, d, rng);
  block.ff_b2 = zeros(prefix + ".ff.b2", 1, d);
  return block;
}

Var TransformerBlock::forward(Tape& tape, Var x, double dropout, bool train,
                              std::mt19937_64& rng) {
  const auto dim = tape.value(x).cols();
  const int head_dim = static_cast<int>(dim) / static_cast<int>(n_heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Var normed = tape.layer_norm(x, tape.param(ln1_gamma), tape.param(ln1_beta));
  Var q = tape.matmul(normed, tape.param(w_q));
  Var k = tape.matmul(normed, tape.param(w_k));
  Var v = tape.matmul(normed, tape.param(w_v));

  std::vector<Var> head_outputs;
  head_outputs.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    int at = static_cast<int>(h) * head_dim;
    Var qh = tape.slice_cols(q, at, head_dim);
    Var kh = tape.slice_cols(k, at, head_dim);
    Var vh = tape.slice_cols(v, at, head_dim);
    Var scores = tape.scale(tape.matmul(qh, kh, false, true), scale);
    Var attn = tape.softmax_rows(scores);
    head_outputs.push_back(tape.matmul(attn, vh));
  }
  Var context = n_heads == 1 ? head_outputs.front() : tape.hstack(head_outputs);
  Var attended = tape.matmul(context, tape.param(w_o));
  x = tape.add(x, tape.dropout(attended, dropout, rng, train));

  Var normed2 = tape.layer_norm(x, tape.param(ln2_gamma), tape.param(ln2_beta));
  Var hidden = tape.gelu(tape.add_row_broadcast(
      tape.matmul(normed2, tape.param(ff_w1)), tape.param(ff_b1)));
  Var ff = tape.add_row_broadcast(tape.matmul(hidden, tape.param(ff_w2)),
                                  tape.param(ff_b2));
  return tape.add(x, tape.dropout(ff, dropout, rng, train));
}

void TransformerBlock::collect(std::vector<Parameter*>& out) {
  for (Parameter* p : {&ln1_gamma, &ln1_beta, &w_q, &w_k, &w_v, &w_o,
                       &ln2_gamma, &ln2_beta, &ff_w1, &ff_b1, &ff_w2, &ff_b2}) {
    out.push_back(p);
  }
}

Biaffine Biaffine::create(const std::string& prefix, std::size_t left_dim,
                          std::size_t right_dim, std::mt19937_64& rng) {
  Biaffine b;
  auto l = static_cast<Eigen::Index>(left_dim);
  auto r = static_cast<Eigen::Index>(right_dim);
  b.u_mat = glorot(prefix + ".u_mat", l, r, rng);
  b.u_left = glorot(prefix + ".u_left", l, 1, rng);
  b.v_right = glorot(prefix + ".v_right", r, 1, rng);
  b.bias = zeros(prefix + ".bias", 1, 1);
  return b;
}

Var Biaffine::pairwise(Tape& tape, Var left, Var right) {
  Var bilinear =
      tape.matmul(tape.matmul(left, tape.param(u_mat)), right, false, true);
  Var with_left =
      tape.add_col_broadcast(bilinear, tape.matmul(left, tape.param(u_left)));
  Var with_right = tape.add_row_broadcast(
      with_left, tape.transpose(tape.matmul(right, tape.param(v_right))));
  return tape.add_scalar_broadcast(with_right, tape.param(bias));
}

Var Biaffine::paired(Tape& tape, Var left, Var right) {
  Var bilinear =
      tape.row_sum(tape.cmul(tape.matmul(left, tape.param(u_mat)), right));
  Var with_left = tape.add(bilinear, tape.matmul(left, tape.param(u_left)));
  Var with_right = tape.add(with_left, tape.matmul(right, tape.param(v_right)));
  return tape.add_scalar_broadcast(with_right, tape.param(bias));
}

void Biaffine::collect(std::vector<Parameter*>& out) {
  for (Parameter* p : {&u_mat, &u_left, &v_right, &bias}) out.push_back(p);
}

AdamOptimizer::AdamOptimizer(std::vector<Parameter*> params,
                             double learning_rate, double beta1, double beta2,
                             double eps)
    : params_(std::move(params)),
      learning_rate_(learning_rate),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Parameter* p : params_) {
    m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
}

void AdamOptimizer::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void AdamOptimizer::step() {
  ++t_;
  double correction1 = 1.0 - std::pow(beta1_, t_);
  double correction2 = 1.0 - std::pow(beta2_, t_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
    Mat m_hat = m_[i] / correction1;
    Mat v_hat = v_[i] / correction2;
    p.value.array() -=
        learning_rate_ * m_hat.array() / (v_hat.array().sqrt() + eps_);
  }
}

}  // namespace evparse::nn
