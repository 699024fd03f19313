#include "evparse/autodiff.hpp"

#include <cassert>
#include <cmath>

namespace evparse::ad {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

double gauss_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }
double gauss_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

}  // namespace

Var Tape::push(Mat value, std::function<void(Tape&, const Mat&)> backprop) {
  Node node;
  node.value = std::move(value);
  node.backprop = std::move(backprop);
  nodes_.push_back(std::move(node));
  return {static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Mat value) { return push(std::move(value), nullptr); }

Var Tape::param(Parameter& p) {
  Node node;
  node.parameter = &p;
  nodes_.push_back(std::move(node));
  return {static_cast<int>(nodes_.size()) - 1};
}

const Mat& Tape::value(Var v) const { return val(v.id); }

double Tape::scalar(Var v) const {
  const Mat& m = val(v.id);
  assert(m.rows() == 1 && m.cols() == 1);
  return m(0, 0);
}

Var Tape::add(Var a, Var b) {
  return push(val(a.id) + val(b.id), [a, b](Tape& t, const Mat& g) {
    t.grad(a) += g;
    t.grad(b) += g;
  });
}

Var Tape::add_row_broadcast(Var a, Var row) {
  Mat out = val(a.id);
  out.rowwise() += val(row.id).row(0);
  return push(std::move(out), [a, row](Tape& t, const Mat& g) {
    t.grad(a) += g;
    t.grad(row) += g.colwise().sum();
  });
}

Var Tape::add_col_broadcast(Var a, Var col) {
  Mat out = val(a.id);
  out.colwise() += val(col.id).col(0);
  return push(std::move(out), [a, col](Tape& t, const Mat& g) {
    t.grad(a) += g;
    t.grad(col) += g.rowwise().sum();
  });
}

Var Tape::add_scalar_broadcast(Var a, Var scalar) {
  Mat out = val(a.id).array() + val(scalar.id)(0, 0);
  return push(std::move(out), [a, scalar](Tape& t, const Mat& g) {
    t.grad(a) += g;
    t.grad(scalar)(0, 0) += g.sum();
  });
}

Var Tape::scale(Var a, double factor) {
  return push(val(a.id) * factor, [a, factor](Tape& t, const Mat& g) {
    t.grad(a) += factor * g;
  });
}

Var Tape::matmul(Var a, Var b, bool trans_a, bool trans_b) {
  const Mat& A = val(a.id);
  const Mat& B = val(b.id);
  Mat out;
  if (!trans_a && !trans_b) out = A * B;
  else if (trans_a && !trans_b) out = A.transpose() * B;
  else if (!trans_a && trans_b) out = A * B.transpose();
  else out = A.transpose() * B.transpose();

  return push(std::move(out), [a, b, trans_a, trans_b](Tape& t, const Mat& g) {
    const Mat& A = t.val(a.id);
    const Mat& B = t.val(b.id);
    if (!trans_a) {
      t.grad(a) += trans_b ? Mat(g * B) : Mat(g * B.transpose());
    } else {
      t.grad(a) += trans_b ? Mat(B.transpose() * g.transpose())
                           : Mat(B * g.transpose());
    }
    if (!trans_b) {
      t.grad(b) += trans_a ? Mat(A * g) : Mat(A.transpose() * g);
    } else {
      t.grad(b) += trans_a ? Mat(g.transpose() * A.transpose())
                           : Mat(g.transpose() * A);
    }
  });
}

Var Tape::cmul(Var a, Var b) {
  return push(val(a.id).cwiseProduct(val(b.id)), [a, b](Tape& t, const Mat& g) {
    t.grad(a) += g.cwiseProduct(t.val(b.id));
    t.grad(b) += g.cwiseProduct(t.val(a.id));
  });
}

Var Tape::row_sum(Var a) {
  Mat out = val(a.id).rowwise().sum();
  return push(std::move(out), [a](Tape& t, const Mat& g) {
    t.grad(a) += g.replicate(1, t.val(a.id).cols());
  });
}

Var Tape::transpose(Var a) {
  return push(val(a.id).transpose(), [a](Tape& t, const Mat& g) {
    t.grad(a) += g.transpose();
  });
}

Var Tape::slice_cols(Var a, int start, int count) {
  Mat out = val(a.id).middleCols(start, count);
  return push(std::move(out), [a, start, count](Tape& t, const Mat& g) {
    t.grad(a).middleCols(start, count) += g;
  });
}

Var Tape::gather_rows(Var a, std::vector<int> rows) {
  const Mat& A = val(a.id);
  Mat out(rows.size(), A.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = A.row(rows[i]);
  return push(std::move(out), [a, rows = std::move(rows)](Tape& t, const Mat& g) {
    Mat& ga = t.grad(a);
    for (std::size_t i = 0; i < rows.size(); ++i) ga.row(rows[i]) += g.row(i);
  });
}

Var Tape::vstack(const std::vector<Var>& parts) {
  Eigen::Index rows = 0;
  for (Var p : parts) rows += val(p.id).rows();
  Mat out(rows, val(parts.front().id).cols());
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleRows(at, val(p.id).rows()) = val(p.id);
    at += val(p.id).rows();
  }
  return push(std::move(out), [parts](Tape& t, const Mat& g) {
    Eigen::Index at = 0;
    for (Var p : parts) {
      Eigen::Index r = t.val(p.id).rows();
      t.grad(p) += g.middleRows(at, r);
      at += r;
    }
  });
}

Var Tape::hstack(const std::vector<Var>& parts) {
  Eigen::Index cols = 0;
  for (Var p : parts) cols += val(p.id).cols();
  Mat out(val(parts.front().id).rows(), cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleCols(at, val(p.id).cols()) = val(p.id);
    at += val(p.id).cols();
  }
  return push(std::move(out), [parts](Tape& t, const Mat& g) {
    Eigen::Index at = 0;
    for (Var p : parts) {
      Eigen::Index c = t.val(p.id).cols();
      t.grad(p) += g.middleCols(at, c);
      at += c;
    }
  });
}

Var Tape::gelu(Var a) {
  Mat out = val(a.id).unaryExpr([](double x) { return x * gauss_cdf(x); });
  return push(std::move(out), [a](Tape& t, const Mat& g) {
    const Mat& x = t.val(a.id);
    Mat d = x.unaryExpr([](double v) { return gauss_cdf(v) + v * gauss_pdf(v); });
    t.grad(a) += g.cwiseProduct(d);
  });
}

Var Tape::sigmoid(Var a) {
  Mat out = val(a.id).unaryExpr([](double x) { return stable_sigmoid(x); });
  Var v = push(std::move(out), nullptr);
  nodes_[v.id].backprop = [a, v](Tape& t, const Mat& g) {
    const Mat& y = t.val(v.id);
    t.grad(a) += g.cwiseProduct(y.cwiseProduct(Mat::Ones(y.rows(), y.cols()) - y));
  };
  return v;
}

Var Tape::softmax_rows(Var a) {
  const Mat& x = val(a.id);
  Mat out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mx = x.row(r).maxCoeff();
    Eigen::ArrayXd e = (x.row(r).array() - mx).exp();
    out.row(r) = (e / e.sum()).matrix();
  }
  Var v = push(std::move(out), nullptr);
  nodes_[v.id].backprop = [a, v](Tape& t, const Mat& g) {
    const Mat& p = t.val(v.id);
    Mat gp = g.cwiseProduct(p);
    Eigen::VectorXd dot = gp.rowwise().sum();
    Mat adj = g;
    adj.colwise() -= dot;
    t.grad(a) += adj.cwiseProduct(p);
  };
  return v;
}

Var Tape::layer_norm(Var a, Var gamma, Var beta, double eps) {
  const Mat& x = val(a.id);
  const Eigen::Index m = x.cols();
  Mat xhat(x.rows(), m);
  Eigen::VectorXd inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mean = x.row(r).mean();
    Eigen::RowVectorXd centered = x.row(r).array() - mean;
    double var = centered.squaredNorm() / static_cast<double>(m);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std(r) = is;
    xhat.row(r) = centered * is;
  }
  Mat out = xhat;
  out.array().rowwise() *= val(gamma.id).row(0).array();
  out.rowwise() += val(beta.id).row(0);

  return push(std::move(out), [a, gamma, beta, xhat = std::move(xhat),
                               inv_std = std::move(inv_std)](Tape& t, const Mat& g) {
    const Eigen::Index m = g.cols();
    t.grad(beta) += g.colwise().sum();
    t.grad(gamma) += g.cwiseProduct(xhat).colwise().sum();
    Mat dxhat = g;
    dxhat.array().rowwise() *= t.val(gamma.id).row(0).array();
    Mat dx(g.rows(), m);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      double mean_d = dxhat.row(r).mean();
      double mean_dx = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
      dx.row(r) =
          inv_std(r) * (dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx);
    }
    t.grad(a) += dx;
  });
}

Var Tape::dropout(Var a, double rate, std::mt19937_64& rng, bool train) {
  if (!train || rate <= 0.0) return a;
  const Mat& x = val(a.id);
  std::bernoulli_distribution keep(1.0 - rate);
  Mat mask(x.rows(), x.cols());
  double scale = 1.0 / (1.0 - rate);
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      mask(r, c) = keep(rng) ? scale : 0.0;
  Mat out = x.cwiseProduct(mask);  // before the capture moves the mask
  return push(std::move(out), [a, mask = std::move(mask)](Tape& t, const Mat& g) {
    t.grad(a) += g.cwiseProduct(mask);
  });
}

Var Tape::softmax_cross_entropy(Var logits, const std::vector<int>& target) {
  const Mat& x = val(logits.id);
  assert(static_cast<std::size_t>(x.rows()) == target.size());
  const double n = static_cast<double>(x.rows());
  Mat probs(x.rows(), x.cols());
  double loss = 0.0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mx = x.row(r).maxCoeff();
    Eigen::ArrayXd shifted = x.row(r).array() - mx;
    double lse = std::log(shifted.exp().sum());
    probs.row(r) = (shifted - lse).exp().matrix();
    loss -= shifted(target[r]) - lse;
  }
  Mat out(1, 1);
  out(0, 0) = loss / n;
  return push(std::move(out), [logits, target, probs = std::move(probs),
                               n](Tape& t, const Mat& g) {
    Mat d = probs;
    for (Eigen::Index r = 0; r < d.rows(); ++r) d(r, target[r]) -= 1.0;
    t.grad(logits) += (g(0, 0) / n) * d;
  });
}

Var Tape::sigmoid_bce(Var logits, const Mat& targets, const Mat& mask) {
  const Mat& x = val(logits.id);
  assert(x.rows() == targets.rows() && x.cols() == targets.cols());
  assert(x.rows() == mask.rows() && x.cols() == mask.cols());
  double count = mask.sum();
  Mat out(1, 1);
  if (count == 0.0) {
    out(0, 0) = 0.0;
    return constant(std::move(out));
  }
  double loss = 0.0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (mask(r, c) == 0.0) continue;
      loss += softplus(x(r, c)) - targets(r, c) * x(r, c);
    }
  }
  out(0, 0) = loss / count;
  return push(std::move(out),
              [logits, targets, mask, count](Tape& t, const Mat& g) {
                const Mat& x = t.val(logits.id);
                Mat d(x.rows(), x.cols());
                for (Eigen::Index r = 0; r < x.rows(); ++r)
                  for (Eigen::Index c = 0; c < x.cols(); ++c)
                    d(r, c) = mask(r, c) == 0.0
                                  ? 0.0
                                  : stable_sigmoid(x(r, c)) - targets(r, c);
                t.grad(logits) += (g(0, 0) / count) * d;
              });
}

Var Tape::weighted_sum(const std::vector<std::pair<double, Var>>& terms) {
  Mat out = Mat::Zero(1, 1);
  for (const auto& [c, v] : terms) out(0, 0) += c * val(v.id)(0, 0);
  return push(std::move(out), [terms](Tape& t, const Mat& g) {
    for (const auto& [c, v] : terms) t.grad(v)(0, 0) += c * g(0, 0);
  });
}

void Tape::backward(Var loss) {
  assert(loss.valid());
  assert(val(loss.id).rows() == 1 && val(loss.id).cols() == 1);
  for (auto& node : nodes_) {
    const Mat& v = node.parameter ? node.parameter->value : node.value;
    node.grad = Mat::Zero(v.rows(), v.cols());
  }
  nodes_[loss.id].grad(0, 0) = 1.0;
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    Node& node = nodes_[i];
    if (i > loss.id) continue;  // created after the loss, cannot contribute
    if (node.backprop && node.grad.cwiseAbs().sum() != 0.0) {
      node.backprop(*this, node.grad);
    }
    if (node.parameter) node.parameter->grad += node.grad;
  }
}

}  // namespace evparse::ad
