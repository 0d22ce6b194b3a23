#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace sentdecomp::numkit {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// An ordered collection of parameter tensors. Trainable models expose their
// weights as a ParamSet so optimizers and gradient checkers can treat them
// uniformly; gradients use the same layout.
using ParamSet = std::vector<Matrix>;

// ---------------------------------------------------------------------------
// SVD
// ---------------------------------------------------------------------------

// Thin factorization M = U * diag(S) * Vt with r = min(m, n):
// U is m x r, S has r entries sorted descending, Vt is r x n.
struct SvdResult {
  Matrix U;
  Vector S;
  Matrix Vt;
};

// One-sided Jacobi SVD. Each right singular vector (row of Vt) is signed so
// that its largest-magnitude entry is positive; ties resolve to the lowest
// index. Throws ErrorCode::kNonFinite on NaN/Inf input.
SvdResult svd(const Matrix& m);

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::uint64_t step = 0;
  ParamSet first_moment;
  ParamSet second_moment;
  AdamConfig config;

  // Zero moments shaped like `params`.
  static AdamState init(const ParamSet& params, const AdamConfig& config);
};

struct AdamResult {
  ParamSet params;
  AdamState state;
};

// Bias-corrected Adam update. Pure: the returned state is the only carrier of
// optimizer history. Throws on shape mismatch or non-finite gradients.
AdamResult adam_step(ParamSet params, const ParamSet& grads, AdamState state);

// In-place variant used inside training loops; identical arithmetic.
void adam_update(ParamSet& params, const ParamSet& grads, AdamState& state);

// Cosine decay from `base` to base/10 across `total_epochs`; epoch 0 -> base.
double cosine_decay_lr(double base, std::size_t epoch, std::size_t total_epochs);

// ---------------------------------------------------------------------------
// Losses and similarity
// ---------------------------------------------------------------------------

struct CrossEntropy {
  double loss = 0.0;
  Vector grad;  // softmax(logits) - onehot(label)
};

CrossEntropy cross_entropy(const Vector& logits, std::size_t label);

// Column-wise stabilized softmax.
Matrix softmax_columns(const Matrix& logits);

// Cosine similarity; 0 when either vector has zero norm.
double cosine(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b);

// Index of the maximum entry; the lowest index wins ties.
std::size_t argmax(const Eigen::Ref<const Vector>& v);

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

struct ValueAndGrad {
  double value = 0.0;
  Vector grad;
};

using DifferentiableFn = std::function<ValueAndGrad(const Vector&)>;

// Maximum over coordinates of |analytic - central| / (|analytic| + |central| + 1e-12),
// where central is (f(x + h e_i) - f(x - h e_i)) / 2h. Throws
// ErrorCode::kNonFinite if any evaluation is not finite.
double grad_check(const DifferentiableFn& f, const Vector& point, double h);

// Flattening helpers so grad_check can drive ParamSet-shaped models.
Vector flatten(const ParamSet& params);
ParamSet unflatten(const Vector& flat, const ParamSet& like);

// ---------------------------------------------------------------------------
// Classification scores
// ---------------------------------------------------------------------------

struct ClassificationScores {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> per_class_f1;  // 0 for classes absent from `truth`
};

// Macro-F1 averages over classes that occur in `truth`.
ClassificationScores score_predictions(std::span<const std::size_t> truth,
                                       std::span<const std::size_t> predicted,
                                       std::size_t num_classes);

}  // namespace sentdecomp::numkit
