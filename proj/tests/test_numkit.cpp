#include <cmath>
#include <limits>
#include <numeric>

#include <gtest/gtest.h>

#include "sentdecomp/numkit.hpp"
#include "sentdecomp/random.hpp"
#include "test_util.hpp"

namespace sentdecomp::numkit {
namespace {

using testing::error_code_of;

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.normal();
  }
  return m;
}

double reconstruction_error(const Matrix& m, const SvdResult& s) {
  return (m - s.U * s.S.asDiagonal() * s.Vt).norm() / m.norm();
}

TEST(Svd, IdentityHasUnitSingularValues) {
  const SvdResult s = svd(Matrix::Identity(3, 3));
  ASSERT_EQ(s.S.size(), 3);
  for (Eigen::Index i = 0; i < 3; ++i) EXPECT_NEAR(s.S(i), 1.0, 1e-12);
}

TEST(Svd, RankOneOuterProduct) {
  Vector u = random_matrix(5, 1, 1).col(0);
  Vector v = random_matrix(4, 1, 2).col(0);
  u *= 2.0 / u.norm();
  v *= 3.0 / v.norm();
  const SvdResult s = svd(u * v.transpose());
  EXPECT_NEAR(s.S(0), 6.0, 1e-10);
  for (Eigen::Index i = 1; i < s.S.size(); ++i) EXPECT_NEAR(s.S(i), 0.0, 1e-10);
  EXPECT_NEAR(std::abs(s.Vt.row(0).dot(v.normalized())), 1.0, 1e-10);
}

TEST(Svd, RandomTallMatrixMatchesReferenceFactorization) {
  const Matrix m = random_matrix(20, 10, 3);
  const SvdResult s = svd(m);
  EXPECT_LE(reconstruction_error(m, s), 1e-5);
  EXPECT_LE((s.U.transpose() * s.U - Matrix::Identity(10, 10)).cwiseAbs().maxCoeff(), 1e-5);
  EXPECT_LE((s.Vt * s.Vt.transpose() - Matrix::Identity(10, 10)).cwiseAbs().maxCoeff(), 1e-5);
  const Eigen::BDCSVD<Matrix> reference(m);
  EXPECT_LE((s.S - reference.singularValues()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Svd, WideMatrixAndSortedValues) {
  const Matrix m = random_matrix(6, 15, 4);
  const SvdResult s = svd(m);
  ASSERT_EQ(s.U.rows(), 6);
  ASSERT_EQ(s.U.cols(), 6);
  ASSERT_EQ(s.Vt.rows(), 6);
  ASSERT_EQ(s.Vt.cols(), 15);
  EXPECT_LE(reconstruction_error(m, s), 1e-5);
  for (Eigen::Index i = 1; i < s.S.size(); ++i) EXPECT_GE(s.S(i - 1), s.S(i));
  const Eigen::BDCSVD<Matrix> reference(m);
  EXPECT_LE((s.S - reference.singularValues()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Svd, RightVectorsHavePositiveLargestEntry) {
  const SvdResult a = svd(random_matrix(8, 5, 5));
  const SvdResult b = svd(-random_matrix(8, 5, 5));
  for (Eigen::Index i = 0; i < a.Vt.rows(); ++i) {
    Eigen::Index idx = 0;
    a.Vt.row(i).cwiseAbs().maxCoeff(&idx);
    EXPECT_GT(a.Vt(i, idx), 0.0);
  }
  // Negating the input cannot flip the right vectors under the sign rule.
  EXPECT_LE((a.Vt - b.Vt).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Svd, RankDeficientStillOrthonormal) {
  Matrix m = random_matrix(7, 4, 6);
  m.col(3) = m.col(0) + m.col(1);
  const SvdResult s = svd(m);
  EXPECT_NEAR(s.S(3), 0.0, 1e-10);
  EXPECT_LE((s.U.transpose() * s.U - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LE((s.Vt * s.Vt.transpose() - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LE(reconstruction_error(m, s), 1e-10);
}

TEST(Svd, RejectsNonFinite) {
  Matrix m = Matrix::Identity(2, 2);
  m(0, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_EQ(error_code_of([&] { svd(m); }), ErrorCode::kNonFinite);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamSet params{Matrix::Constant(1, 1, 1.0)};
  const ParamSet grads{Matrix::Constant(1, 1, 1.0)};
  AdamState state = AdamState::init(params, AdamConfig{0.1});
  const AdamResult r = adam_step(params, grads, state);
  // m_hat = 1, v_hat = 1, update = lr * 1 / (1 + eps).
  EXPECT_NEAR(r.params[0](0, 0), 1.0 - 0.1 / (1.0 + 1e-8), 1e-15);
  EXPECT_NEAR(r.params[0](0, 0), 0.9, 1e-7);
  EXPECT_EQ(r.state.step, 1u);
  EXPECT_EQ(state.step, 0u);  // input state untouched
}

TEST(Adam, ZeroGradientKeepsParamsAndDecaysMoments) {
  ParamSet params{Matrix::Constant(2, 2, 0.5)};
  AdamState state = AdamState::init(params, AdamConfig{});
  state.first_moment[0].setConstant(1.0);
  state.second_moment[0].setConstant(1.0);
  state.step = 3;
  const AdamResult r = adam_step(params, ParamSet{Matrix::Zero(2, 2)}, state);
  EXPECT_EQ(r.state.first_moment[0](0, 0), 0.9);
  EXPECT_EQ(r.state.second_moment[0](0, 0), 0.999);
  // Accumulated momentum still moves the parameter; a fresh state does not.
  const AdamResult fresh = adam_step(params, ParamSet{Matrix::Zero(2, 2)}, AdamState::init(params, AdamConfig{}));
  EXPECT_EQ(fresh.params[0], params[0]);
}

TEST(Adam, DeterministicAndMatchesInPlaceVariant) {
  ParamSet params{random_matrix(3, 4, 7), random_matrix(4, 1, 8)};
  const ParamSet grads{random_matrix(3, 4, 9), random_matrix(4, 1, 10)};
  AdamState s = AdamState::init(params, AdamConfig{0.01});
  AdamResult a{params, s};
  AdamResult b{params, s};
  ParamSet in_place = params;
  AdamState in_place_state = s;
  for (int i = 0; i < 5; ++i) {
    a = adam_step(a.params, grads, a.state);
    b = adam_step(b.params, grads, b.state);
    adam_update(in_place, grads, in_place_state);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    EXPECT_EQ(a.params[i], b.params[i]);
    EXPECT_EQ(a.params[i], in_place[i]);
  }
}

TEST(Adam, RejectsShapeMismatchAndNonFiniteGrad) {
  ParamSet params{Matrix::Zero(2, 2)};
  const AdamState s = AdamState::init(params, AdamConfig{});
  EXPECT_EQ(error_code_of([&] { adam_step(params, ParamSet{Matrix::Zero(3, 2)}, s); }), ErrorCode::kShapeMismatch);
  Matrix bad = Matrix::Zero(2, 2);
  bad(1, 1) = std::numeric_limits<double>::infinity();
  EXPECT_EQ(error_code_of([&] { adam_step(params, ParamSet{bad}, s); }), ErrorCode::kNonFinite);
}

TEST(CosineDecay, EndpointsAndMonotone) {
  EXPECT_DOUBLE_EQ(cosine_decay_lr(1.0, 0, 30), 1.0);
  EXPECT_NEAR(cosine_decay_lr(1.0, 29, 30), 0.1, 1e-12);
  for (std::size_t e = 1; e < 30; ++e) EXPECT_LT(cosine_decay_lr(1.0, e, 30), cosine_decay_lr(1.0, e - 1, 30));
  EXPECT_DOUBLE_EQ(cosine_decay_lr(0.5, 0, 1), 0.5);
}

TEST(CrossEntropy, EqualLogitsGiveLogC) {
  const CrossEntropy ce = cross_entropy(Vector::Zero(4), 2);
  EXPECT_NEAR(ce.loss, std::log(4.0), 1e-15);
  EXPECT_NEAR(ce.grad(2), 0.25 - 1.0, 1e-15);
  EXPECT_NEAR(ce.grad.sum(), 0.0, 1e-15);
}

TEST(CrossEntropy, LargeLogitsDoNotOverflow) {
  Vector logits(2);
  logits << 1000.0, 0.0;
  const CrossEntropy ce = cross_entropy(logits, 0);
  EXPECT_TRUE(std::isfinite(ce.loss));
  EXPECT_NEAR(ce.loss, 0.0, 1e-12);
  EXPECT_NEAR(cross_entropy(logits, 1).loss, 1000.0, 1e-9);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Vector point = random_matrix(6, 1, 100 + seed).col(0);
    const std::size_t label = seed % 6;
    const DifferentiableFn f = [&](const Vector& x) {
      const CrossEntropy ce = cross_entropy(x, label);
      return ValueAndGrad{ce.loss, ce.grad};
    };
    EXPECT_LE(grad_check(f, point, 1e-5), 1e-5);
  }
}

TEST(CrossEntropy, LabelOutOfRange) {
  EXPECT_EQ(error_code_of([] { cross_entropy(Vector::Zero(3), 3); }), ErrorCode::kLabelRange);
}

TEST(Softmax, ColumnsSumToOne) {
  const Matrix p = softmax_columns(random_matrix(5, 7, 11) * 50.0);
  for (Eigen::Index j = 0; j < p.cols(); ++j) EXPECT_NEAR(p.col(j).sum(), 1.0, 1e-12);
}

TEST(GradCheck, QuadraticIsExact) {
  const DifferentiableFn f = [](const Vector& x) { return ValueAndGrad{x.squaredNorm(), 2.0 * x}; };
  EXPECT_LE(grad_check(f, random_matrix(8, 1, 12).col(0), 1e-4), 1e-7);
}

TEST(GradCheck, ReportsDiscontinuityWithoutThrowing) {
  const DifferentiableFn step = [](const Vector& x) {
    return ValueAndGrad{x(0) >= 0.0 ? 1.0 : 0.0, Vector::Zero(1)};
  };
  double err = 0.0;
  EXPECT_NO_THROW(err = grad_check(step, Vector::Zero(1), 1e-4));
  EXPECT_GT(err, 0.5);
}

TEST(GradCheck, NonFiniteEvaluationThrows) {
  const DifferentiableFn f = [](const Vector& x) { return ValueAndGrad{std::log(x(0)), Vector::Constant(1, 1.0 / x(0))}; };
  EXPECT_EQ(error_code_of([&] { grad_check(f, Vector::Constant(1, 1e-6), 1e-4); }), ErrorCode::kNonFinite);
}

TEST(Flatten, RoundTrip) {
  const ParamSet p{random_matrix(2, 3, 13), random_matrix(4, 1, 14)};
  const Vector flat = flatten(p);
  EXPECT_EQ(flat.size(), 10);
  const ParamSet back = unflatten(flat, p);
  EXPECT_EQ(back[0], p[0]);
  EXPECT_EQ(back[1], p[1]);
}

TEST(Cosine, ZeroVectorGivesZero) {
  Vector a(3);
  a << 1, 2, 3;
  EXPECT_EQ(cosine(a, Vector::Zero(3)), 0.0);
  EXPECT_NEAR(cosine(a, 2.0 * a), 1.0, 1e-15);
  EXPECT_NEAR(cosine(a, -a), -1.0, 1e-15);
}

TEST(Argmax, LowestIndexWinsTies) {
  Vector v(4);
  v << 1.0, 3.0, 3.0, 2.0;
  EXPECT_EQ(argmax(v), 1u);
}

TEST(Scores, HandComputedMacroF1) {
  // Class 0: tp 2, fp 1, fn 0 -> f1 0.8. Class 1: tp 1, fp 0, fn 1 -> f1 2/3.
  // Class 2 never appears in the truth and is excluded from the macro mean.
  const std::vector<std::size_t> truth{0, 0, 1, 1};
  const std::vector<std::size_t> pred{0, 0, 1, 0};
  const ClassificationScores s = score_predictions(truth, pred, 3);
  EXPECT_DOUBLE_EQ(s.accuracy, 0.75);
  EXPECT_NEAR(s.per_class_f1[0], 0.8, 1e-15);
  EXPECT_NEAR(s.per_class_f1[1], 2.0 / 3.0, 1e-15);
  EXPECT_EQ(s.per_class_f1[2], 0.0);
  EXPECT_NEAR(s.macro_f1, (0.8 + 2.0 / 3.0) / 2.0, 1e-15);
}

}  // namespace
}  // namespace sentdecomp::numkit
