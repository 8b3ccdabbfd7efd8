#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "irlm/model.hpp"
#include "irlm/rng.hpp"

using namespace irlm;

namespace {

ModelParams tiny_irlm(Index h, Index v, uint64_t seed) {
  return init_params(Arch::irlm, h, v, seed);
}

}  // namespace

TEST_CASE("forward_step hand example: diagonal recurrence") {
  ModelParams p;
  p.W = Matrix::Zero(1, 2);
  p.W(0, 0) = 1.0;
  p.Z = Matrix::Zero(2, 1);
  p.recurrent_kind = RecurrentKind::diagonal;
  p.r = Vector::Constant(1, 0.5);
  p.nonlinearity = {Activation::identity, 1.0};

  HiddenState s = HiddenState::zero(1);
  s.x[0] = 1.0;
  HiddenState out = forward_step(p, s, 0, true);
  CHECK(out.x[0] == 1.5);  // 0.5 * 1 + 1
}

TEST_CASE("zero input and zero state stay at zero for every nonlinearity") {
  for (Activation a : {Activation::identity, Activation::logistic, Activation::rectifier,
                       Activation::smoothed_rectifier}) {
    ModelParams p;
    p.W = Matrix::Zero(3, 2);
    p.Z = Matrix::Zero(2, 3);
    p.recurrent_kind = RecurrentKind::dense;
    p.R = Matrix::Zero(3, 3);
    p.nonlinearity = {a, 1.0};
    HiddenState out = forward_step(p, HiddenState::zero(3), 0, false);
    if (a == Activation::logistic) {
      CHECK(out.x.isApproxToConstant(0.5));  // sigma(0)
    } else {
      CHECK(out.x.isZero(0.0));
    }
  }
}

TEST_CASE("smoothed rectifier values and derivative") {
  Nonlinearity f{Activation::smoothed_rectifier, 1.0};
  CHECK(f.value(-5.0) == 0.0);
  CHECK(f.value(0.0) == 0.0);
  CHECK(f.value(5.0) == Catch::Approx(4.000090795737405).epsilon(1e-12));
  CHECK(f.derivative(-1.0) == 0.0);
  double t = std::tanh(5.0);
  CHECK(f.derivative(5.0) == Catch::Approx(t * t).epsilon(1e-12));
}

TEST_CASE("smoothed rectifier shape properties") {
  Nonlinearity f{Activation::smoothed_rectifier, 1.0};
  // zero on the nonpositive axis
  for (double x = -10.0; x <= 0.0; x += 0.37) CHECK(f.value(x) == 0.0);
  // approaches x - a from below as x grows
  CHECK(std::abs(f.value(40.0) - (40.0 - 1.0)) < 1e-12);
  // monotone nondecreasing on a sampled grid
  double prev = f.value(-3.0);
  for (double x = -3.0; x <= 8.0; x += 0.01) {
    double y = f.value(x);
    CHECK(y >= prev);
    prev = y;
  }
}

TEST_CASE("predict_distribution matches softmax hand values") {
  ModelParams p;
  p.W = Matrix::Zero(1, 3);
  p.Z = Matrix::Zero(3, 1);
  p.recurrent_kind = RecurrentKind::diagonal;
  p.r = Vector::Zero(1);
  p.nonlinearity = {Activation::identity, 1.0};

  HiddenState s = HiddenState::zero(1);
  SECTION("equal logits give the uniform distribution") {
    Vector probs = predict_distribution(p, s);
    for (int i = 0; i < 3; ++i) CHECK(probs[i] == Catch::Approx(1.0 / 3).epsilon(1e-14));
  }
  SECTION("softmax of (ln 2, 0)") {
    ModelParams q = p;
    q.W = Matrix::Zero(1, 2);
    q.Z = Matrix::Zero(2, 1);
    q.Z(0, 0) = std::log(2.0);
    HiddenState s1 = HiddenState::zero(1);
    s1.x[0] = 1.0;
    Vector probs = predict_distribution(q, s1);
    CHECK(probs[0] == Catch::Approx(2.0 / 3).epsilon(1e-14));
    CHECK(probs[1] == Catch::Approx(1.0 / 3).epsilon(1e-14));
  }
  SECTION("an all-zero mask collapses to uniform regardless of state") {
    ModelParams q = tiny_irlm(4, 5, 7);
    HiddenState st = HiddenState::zero(4);
    st.x << 1.0, -2.0, 3.0, 0.25;
    Vector mask = Vector::Zero(4);
    Vector probs = predict_distribution(q, st, &mask);
    for (int i = 0; i < 5; ++i) CHECK(probs[i] == Catch::Approx(0.2).epsilon(1e-14));
  }
}

TEST_CASE("predict_distribution sums to 1 on random states") {
  ModelParams p = tiny_irlm(6, 11, 42);
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    HiddenState s = HiddenState::zero(6);
    for (Index i = 0; i < 6; ++i) s.x[i] = rng.uniform(-20.0, 20.0);
    Vector probs = predict_distribution(p, s);
    double sum = 0.0;
    for (Index i = 0; i < probs.size(); ++i) {
      CHECK(probs[i] >= 0.0);
      sum += probs[i];
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("IRLM state Jacobian is diag(r)^tau") {
  // powers of two throughout so elementwise products are exact in binary fp
  ModelParams p;
  p.W = Matrix::Zero(3, 2);
  p.W.col(0) << 0.25, 0.5, 1.0;
  p.W.col(1) << 0.125, 0.25, 0.5;
  p.Z = Matrix::Zero(2, 3);
  p.recurrent_kind = RecurrentKind::diagonal;
  p.r = Vector(3);
  p.r << 0.5, 0.25, -0.5;
  p.nonlinearity = {Activation::identity, 1.0};

  const std::vector<int32_t> toks = {0, 1, 1, 0, 1};
  const Vector delta = (Vector(3) << 1.0, -0.5, 0.25).finished();

  HiddenState base = HiddenState::zero(3);
  HiddenState pert = base;
  pert.x += delta;
  Vector decay = Vector::Ones(3);
  for (size_t t = 0; t < toks.size(); ++t) {
    base = forward_step(p, base, toks[t], true);
    pert = forward_step(p, pert, toks[t], true);
    decay = decay.cwiseProduct(p.r);
    Vector expected = decay.cwiseProduct(delta);
    for (Index i = 0; i < 3; ++i) CHECK(pert.x[i] - base.x[i] == expected[i]);
  }
}

TEST_CASE("direct IRLM logits: single-term and zero-recurrence cases") {
  ModelParams p = tiny_irlm(4, 6, 3);
  SECTION("history of length 1 is the tau=0 term") {
    std::vector<int32_t> hist = {2};
    double direct = direct_irlm_logits(p, hist, 5);
    double expected = p.Z.row(5).dot(p.W.col(2));
    CHECK(direct == Catch::Approx(expected).epsilon(1e-14));
  }
  SECTION("r = 0 kills all lagged terms") {
    p.r.setZero();
    std::vector<int32_t> hist = {1, 3, 0, 2};
    std::vector<int32_t> last = {2};
    CHECK(direct_irlm_logits(p, hist, 4) ==
          Catch::Approx(direct_irlm_logits(p, last, 4)).epsilon(1e-14));
  }
  SECTION("usage error on non-IRLM parameters") {
    ModelParams q = init_params(Arch::rnn, 4, 6, 3);
    std::vector<int32_t> hist = {0};
    CHECK_THROWS_AS(direct_irlm_logits(q, hist, 0), UsageError);
  }
}

TEST_CASE("recursive and direct IRLM logits agree on random models") {
  Rng rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    ModelParams p = tiny_irlm(4, 6, 100 + trial);
    int len = 1 + static_cast<int>(rng.uniform() * 10);
    std::vector<int32_t> hist;
    for (int i = 0; i < len; ++i) hist.push_back(static_cast<int32_t>(rng.uniform() * 6));
    HiddenState s = HiddenState::zero(4);
    for (int32_t tok : hist) s = forward_step(p, s, tok, true);
    for (int32_t next = 0; next < 6; ++next) {
      double recursive = p.Z.row(next).dot(s.x);
      double direct = direct_irlm_logits(p, hist, next);
      double rel = std::abs(recursive - direct) /
                   std::max({std::abs(recursive), std::abs(direct), 1e-8});
      CHECK(rel <= 1e-10);
    }
  }
}

TEST_CASE("init_params LCU recipe sets the diagonal pattern") {
  InitSpec spec;
  spec.lcu = LcuConfig{128, 384, 0.7, 1.0};
  ModelParams p = init_params(Arch::irlm, 512, 100, 11, spec);
  int long_count = 0, short_count = 0;
  for (Index i = 0; i < 512; ++i) {
    if (p.r[i] == 0.9) ++long_count;
    if (p.r[i] == 0.0) ++short_count;
  }
  CHECK(long_count == 384);
  CHECK(short_count == 128);
  REQUIRE(p.lcu.has_value());
  CHECK(p.lcu->n_long == 384);

  spec.lcu = LcuConfig{100, 384, 0.7, 1.0};
  CHECK_THROWS_AS(init_params(Arch::irlm, 512, 100, 11, spec), UsageError);
}

TEST_CASE("init_params is deterministic given the seed") {
  ModelParams a = init_params(Arch::rnn, 8, 13, 77);
  ModelParams b = init_params(Arch::rnn, 8, 13, 77);
  CHECK(a.W == b.W);
  CHECK(a.Z == b.Z);
  CHECK(a.R == b.R);
  ModelParams c = init_params(Arch::rnn, 8, 13, 78);
  CHECK(a.W != c.W);
}

TEST_CASE("block initialization honors the mask and the long-context recipe") {
  InitSpec spec;
  spec.block = BlockMask{384, 128};
  spec.block_long_diag = 0.9;
  ModelParams p = init_params(Arch::block_rnn, 512, 50, 5, spec);
  for (Index i = 0; i < 384; ++i) CHECK(p.R(i, i) == 0.9);
  // smaller block all zeros
  CHECK(p.R.block(384, 384, 128, 128).isZero(0.0));
  // cross-block entries exactly zero
  CHECK(p.R.block(0, 384, 384, 128).isZero(0.0));
  CHECK(p.R.block(384, 0, 128, 384).isZero(0.0));
}

TEST_CASE("skip connection with zero R_skip reproduces the plain trajectory") {
  ModelParams plain = init_params(Arch::rnn, 5, 7, 21,
                                  {.nonlinearity = {Activation::smoothed_rectifier, 1.0}});
  ModelParams skip = plain;
  skip.R_skip = Matrix::Zero(5, 5);

  std::vector<int32_t> toks = {0, 3, 3, 1, 6, 2, 2, 5};
  std::vector<uint8_t> ws = {1, 0, 1, 1, 0, 0, 1, 0};
  HiddenState a = HiddenState::zero(5);
  HiddenState b = HiddenState::zero(5);
  for (size_t t = 0; t < toks.size(); ++t) {
    a = forward_step(plain, a, toks[t], ws[t] != 0);
    b = forward_step(skip, b, toks[t], ws[t] != 0);
    for (Index i = 0; i < 5; ++i) CHECK(a.x[i] == b.x[i]);
  }
}

TEST_CASE("forward_step flags divergence") {
  ModelParams p = tiny_irlm(2, 3, 1);
  HiddenState s = HiddenState::zero(2);
  s.x[0] = std::numeric_limits<double>::infinity();
  // inf * 0 in the recurrence produces NaN
  p.r[0] = 0.0;
  CHECK_THROWS_AS(forward_step(p, s, 0, true), NumericError);
}
