#include <functional>
#include <random>

#include "doctest.h"

#include "evparse/autodiff.hpp"
#include "evparse/nn.hpp"

using namespace evparse;
using ad::Mat;
using ad::Parameter;
using ad::Tape;
using ad::Var;

namespace {

Mat random_mat(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c,
               double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = dist(rng);
  return m;
}

// Central finite differences of build() against the analytic gradients of
// every listed parameter.
double max_grad_error(const std::function<double()>& loss,
                      const std::function<void()>& backward,
                      std::vector<Parameter*> params, double step = 1e-6) {
  for (Parameter* p : params) p->zero_grad();
  backward();
  double worst = 0.0;
  for (Parameter* p : params) {
    Mat analytic = p->grad;
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double saved = p->value.data()[i];
      p->value.data()[i] = saved + step;
      double up = loss();
      p->value.data()[i] = saved - step;
      double down = loss();
      p->value.data()[i] = saved;
      double fd = (up - down) / (2.0 * step);
      double an = analytic.data()[i];
      double scale = std::max(std::abs(an), std::abs(fd));
      double err = scale < 1e-6 ? std::abs(an - fd) : std::abs(an - fd) / scale;
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("elementary op gradients") {
  std::mt19937_64 rng(3);
  Parameter a("a", random_mat(rng, 3, 4));
  Parameter b("b", random_mat(rng, 4, 2));
  Parameter row("row", random_mat(rng, 1, 2));
  Parameter col("col", random_mat(rng, 3, 1));
  Parameter s("s", random_mat(rng, 1, 1));
  Mat weights = random_mat(rng, 3, 2);

  auto build = [&](Tape& tape) {
    Var x = tape.matmul(tape.param(a), tape.param(b));
    x = tape.add_row_broadcast(x, tape.param(row));
    x = tape.add_col_broadcast(x, tape.param(col));
    x = tape.add_scalar_broadcast(x, tape.param(s));
    x = tape.gelu(x);
    x = tape.cmul(x, tape.constant(weights));
    Var summed = tape.row_sum(x);                    // 3x1
    Var t = tape.transpose(summed);                  // 1x3
    return tape.row_sum(t);                          // 1x1
  };
  auto loss = [&] {
    Tape tape;
    return tape.scalar(build(tape));
  };
  auto backward = [&] {
    Tape tape;
    tape.backward(build(tape));
  };
  CHECK(max_grad_error(loss, backward, {&a, &b, &row, &col, &s}) < 1e-6);
}

TEST_CASE("matmul transpose variants") {
  std::mt19937_64 rng(5);
  for (auto [ta, tb] : {std::pair{false, false}, {true, false},
                        {false, true}, {true, true}}) {
    CAPTURE(ta);
    CAPTURE(tb);
    Parameter a("a", random_mat(rng, ta ? 4 : 3, ta ? 3 : 4));
    Parameter b("b", random_mat(rng, tb ? 2 : 4, tb ? 4 : 2));
    auto build = [&, ta = ta, tb = tb](Tape& tape) {
      Var x = tape.matmul(tape.param(a), tape.param(b), ta, tb);
      return tape.row_sum(tape.transpose(tape.row_sum(tape.sigmoid(x))));
    };
    auto loss = [&] {
      Tape tape;
      return tape.scalar(build(tape));
    };
    auto backward = [&] {
      Tape tape;
      tape.backward(build(tape));
    };
    CHECK(max_grad_error(loss, backward, {&a, &b}) < 1e-6);
  }
}

TEST_CASE("softmax rows sums to one and matches finite differences") {
  std::mt19937_64 rng(7);
  Parameter a("a", random_mat(rng, 4, 5));
  {
    Tape tape;
    Mat p = tape.value(tape.softmax_rows(tape.param(a)));
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      CHECK(p.row(r).sum() == doctest::Approx(1.0).epsilon(1e-9));
      CHECK(p.row(r).minCoeff() > 0.0);
    }
  }
  Mat pick = random_mat(rng, 4, 5);
  auto build = [&](Tape& tape) {
    Var p = tape.softmax_rows(tape.param(a));
    return tape.row_sum(tape.transpose(tape.row_sum(tape.cmul(p, tape.constant(pick)))));
  };
  auto loss = [&] {
    Tape tape;
    return tape.scalar(build(tape));
  };
  auto backward = [&] {
    Tape tape;
    tape.backward(build(tape));
  };
  CHECK(max_grad_error(loss, backward, {&a}) < 1e-6);
}

TEST_CASE("layer norm gradients") {
  std::mt19937_64 rng(9);
  Parameter a("a", random_mat(rng, 3, 6));
  Parameter gamma("gamma", random_mat(rng, 1, 6));
  Parameter beta("beta", random_mat(rng, 1, 6));
  Mat pick = random_mat(rng, 3, 6);
  auto build = [&](Tape& tape) {
    Var y = tape.layer_norm(tape.param(a), tape.param(gamma), tape.param(beta));
    return tape.row_sum(tape.transpose(tape.row_sum(tape.cmul(y, tape.constant(pick)))));
  };
  auto loss = [&] {
    Tape tape;
    return tape.scalar(build(tape));
  };
  auto backward = [&] {
    Tape tape;
    tape.backward(build(tape));
  };
  CHECK(max_grad_error(loss, backward, {&a, &gamma, &beta}) < 1e-6);
}

TEST_CASE("gather, stack and slice gradients") {
  std::mt19937_64 rng(11);
  Parameter a("a", random_mat(rng, 4, 6));
  Parameter b("b", random_mat(rng, 2, 6));
  Mat pick = random_mat(rng, 5, 3);
  auto build = [&](Tape& tape) {
    Var stacked = tape.vstack({tape.param(a), tape.param(b)});   // 6x6
    Var gathered = tape.gather_rows(stacked, {0, 0, 5, 3, 1});   // 5x6
    Var left = tape.slice_cols(gathered, 0, 3);
    Var right = tape.slice_cols(gathered, 3, 3);
    Var joined = tape.hstack({left, right});                     // 5x6
    Var mixed = tape.cmul(tape.slice_cols(joined, 1, 3), tape.constant(pick));
    return tape.row_sum(tape.transpose(tape.row_sum(mixed)));
  };
  auto loss = [&] {
    Tape tape;
    return tape.scalar(build(tape));
  };
  auto backward = [&] {
    Tape tape;
    tape.backward(build(tape));
  };
  CHECK(max_grad_error(loss, backward, {&a, &b}) < 1e-6);
}

TEST_CASE("fused losses") {
  std::mt19937_64 rng(13);
  Parameter logits("logits", random_mat(rng, 5, 4));
  std::vector<int> target{1, 3, 0, 2, 2};

  SUBCASE("softmax cross entropy gradient") {
    auto build = [&](Tape& tape) {
      return tape.softmax_cross_entropy(tape.param(logits), target);
    };
    auto loss = [&] {
      Tape tape;
      return tape.scalar(build(tape));
    };
    auto backward = [&] {
      Tape tape;
      tape.backward(build(tape));
    };
    CHECK(max_grad_error(loss, backward, {&logits}) < 1e-6);
  }

  SUBCASE("cross entropy approaches zero at the gold indicator limit") {
    Mat sharp = Mat::Zero(3, 4);
    std::vector<int> t{0, 2, 3};
    for (int r = 0; r < 3; ++r) sharp(r, t[r]) = 40.0;  // near-one-hot softmax
    Parameter p("p", sharp);
    Tape tape;
    CHECK(tape.scalar(tape.softmax_cross_entropy(tape.param(p), t)) ==
          doctest::Approx(0.0).epsilon(1e-12));
  }

  SUBCASE("sigmoid bce gradient with mask") {
    Mat targets = Mat::Zero(5, 4);
    Mat mask = Mat::Zero(5, 4);
    std::uniform_int_distribution<int> coin(0, 1);
    for (Eigen::Index r = 0; r < 5; ++r) {
      for (Eigen::Index c = 0; c < 4; ++c) {
        targets(r, c) = coin(rng);
        mask(r, c) = coin(rng);
      }
    }
    auto build = [&](Tape& tape) {
      return tape.sigmoid_bce(tape.param(logits), targets, mask);
    };
    auto loss = [&] {
      Tape tape;
      return tape.scalar(build(tape));
    };
    auto backward = [&] {
      Tape tape;
      tape.backward(build(tape));
    };
    CHECK(max_grad_error(loss, backward, {&logits}) < 1e-6);
  }

  SUBCASE("bce approaches zero at the gold indicator limit") {
    Mat targets(1, 2);
    targets << 1.0, 0.0;
    Mat strong(1, 2);
    strong << 40.0, -40.0;
    Parameter p("p", strong);
    Tape tape;
    CHECK(tape.scalar(tape.sigmoid_bce(tape.param(p), targets,
                                       Mat::Ones(1, 2))) ==
          doctest::Approx(0.0).epsilon(1e-12));
  }

  SUBCASE("empty mask contributes exactly zero") {
    Tape tape;
    Var l = tape.sigmoid_bce(tape.param(logits), Mat::Zero(5, 4), Mat::Zero(5, 4));
    CHECK(tape.scalar(l) == 0.0);
  }
}

TEST_CASE("dropout is identity in eval mode and masks in train mode") {
  std::mt19937_64 rng(17);
  Parameter a("a", random_mat(rng, 6, 6));
  Tape tape;
  Var x = tape.param(a);
  Var eval = tape.dropout(x, 0.5, rng, /*train=*/false);
  CHECK(eval.id == x.id);  // no node inserted

  Var train = tape.dropout(x, 0.5, rng, /*train=*/true);
  const Mat& dropped = tape.value(train);
  std::size_t zeros = 0;
  for (Eigen::Index i = 0; i < dropped.size(); ++i) {
    double v = dropped.data()[i];
    if (v == 0.0) {
      ++zeros;
    } else {
      CHECK(v == doctest::Approx(2.0 * a.value.data()[i]));
    }
  }
  CHECK(zeros > 0);
  CHECK(zeros < static_cast<std::size_t>(dropped.size()));
}

TEST_CASE("transformer block and biaffine gradients") {
  std::mt19937_64 rng(19);
  auto block = nn::TransformerBlock::create("blk", 6, 2, rng);
  auto biaffine = nn::Biaffine::create("bi", 6, 6, rng);
  Parameter x("x", random_mat(rng, 4, 6, 0.5));
  Mat pick = random_mat(rng, 4, 4);
  std::mt19937_64 fwd_rng(0);

  auto build = [&](Tape& tape) {
    Var h = block.forward(tape, tape.param(x), 0.0, false, fwd_rng);
    Var scores = biaffine.pairwise(tape, h, h);
    return tape.row_sum(
        tape.transpose(tape.row_sum(tape.cmul(tape.sigmoid(scores),
                                              tape.constant(pick)))));
  };
  std::vector<Parameter*> params{&x};
  block.collect(params);
  biaffine.collect(params);
  auto loss = [&] {
    Tape tape;
    return tape.scalar(build(tape));
  };
  auto backward = [&] {
    Tape tape;
    tape.backward(build(tape));
  };
  CHECK(max_grad_error(loss, backward, params) < 5e-6);
}

TEST_CASE("paired biaffine equals the matching pairwise entries") {
  std::mt19937_64 rng(23);
  auto biaffine = nn::Biaffine::create("bi", 5, 3, rng);
  Parameter left("l", random_mat(rng, 4, 5));
  Parameter right("r", random_mat(rng, 6, 3));
  Tape tape;
  Var l = tape.param(left);
  Var r = tape.param(right);
  Mat all = tape.value(biaffine.pairwise(tape, l, r));
  Mat paired = tape.value(biaffine.paired(
      tape, tape.gather_rows(l, {0, 2, 3}), tape.gather_rows(r, {5, 1, 4})));
  CHECK(paired(0, 0) == doctest::Approx(all(0, 5)).epsilon(1e-12));
  CHECK(paired(1, 0) == doctest::Approx(all(2, 1)).epsilon(1e-12));
  CHECK(paired(2, 0) == doctest::Approx(all(3, 4)).epsilon(1e-12));
}

TEST_CASE("adam reduces a quadratic") {
  Parameter p("p", Mat::Ones(3, 3) * 5.0);
  nn::AdamOptimizer adam({&p}, 0.1);
  for (int step = 0; step < 200; ++step) {
    adam.zero_grad();
    p.grad = 2.0 * p.value;  // d/dp ||p||^2
    adam.step();
  }
  CHECK(p.value.cwiseAbs().maxCoeff() < 0.05);
}
