#include "sentdecomp/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "sentdecomp/error.hpp"

namespace sentdecomp::numkit {

namespace {

constexpr const char* kModule = "numkit";

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) {
    throw Error(ErrorCode::kNonFinite, kModule, std::string(what) + " contains NaN or Inf");
  }
}

// Jacobi rotations on the columns of `a` (rows >= cols) until every pair is
// orthogonal to working precision. `v` accumulates the rotations.
void orthogonalize_columns(Matrix& a, Matrix& v) {
  const Eigen::Index q = a.cols();
  constexpr int kMaxSweeps = 80;
  constexpr double kTol = 1e-15;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (Eigen::Index i = 0; i + 1 < q; ++i) {
      for (Eigen::Index j = i + 1; j < q; ++j) {
        const double alpha = a.col(i).squaredNorm();
        const double beta = a.col(j).squaredNorm();
        const double gamma = a.col(i).dot(a.col(j));
        if (gamma == 0.0 || std::abs(gamma) <= kTol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (Eigen::Index r = 0; r < a.rows(); ++r) {
          const double ai = a(r, i);
          const double aj = a(r, j);
          a(r, i) = c * ai - s * aj;
          a(r, j) = s * ai + c * aj;
        }
        for (Eigen::Index r = 0; r < v.rows(); ++r) {
          const double vi = v(r, i);
          const double vj = v(r, j);
          v(r, i) = c * vi - s * vj;
          v(r, j) = s * vi + c * vj;
        }
      }
    }
    if (!rotated) break;
  }
}

// Fills column `col` of `u` with a unit vector orthogonal to columns [0, col).
void complete_basis_column(Matrix& u, Eigen::Index col) {
  const Eigen::Index rows = u.rows();
  for (Eigen::Index e = 0; e < rows; ++e) {
    Vector candidate = Vector::Unit(rows, e);
    for (int pass = 0; pass < 2; ++pass) {
      for (Eigen::Index k = 0; k < col; ++k) {
        candidate -= u.col(k).dot(candidate) * u.col(k);
      }
    }
    const double norm = candidate.norm();
    if (norm > 0.5) {
      u.col(col) = candidate / norm;
      return;
    }
  }
}

// Thin SVD of a tall (rows >= cols) matrix.
SvdResult svd_tall(const Matrix& m) {
  Matrix a = m;
  Matrix v = Matrix::Identity(m.cols(), m.cols());
  orthogonalize_columns(a, v);

  const Eigen::Index q = a.cols();
  Vector norms(q);
  for (Eigen::Index i = 0; i < q; ++i) norms(i) = a.col(i).norm();

  std::vector<Eigen::Index> order(static_cast<std::size_t>(q));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index x, Eigen::Index y) { return norms(x) > norms(y); });

  SvdResult out;
  out.U = Matrix::Zero(a.rows(), q);
  out.S = Vector::Zero(q);
  out.Vt = Matrix::Zero(q, q);
  const double cutoff = (q > 0 ? norms(order[0]) : 0.0) * 1e-12;
  for (Eigen::Index i = 0; i < q; ++i) {
    const Eigen::Index src = order[static_cast<std::size_t>(i)];
    out.S(i) = norms(src);
    out.Vt.row(i) = v.col(src).transpose();
    if (norms(src) > cutoff && norms(src) > 0.0) {
      out.U.col(i) = a.col(src) / norms(src);
    } else {
      complete_basis_column(out.U, i);
    }
  }
  return out;
}

}  // namespace

SvdResult svd(const Matrix& m) {
  require_finite(m, "svd input");
  SvdResult out;
  if (m.rows() >= m.cols()) {
    out = svd_tall(m);
  } else {
    SvdResult t = svd_tall(m.transpose());
    out.U = t.Vt.transpose();
    out.S = std::move(t.S);
    out.Vt = t.U.transpose();
  }
  for (Eigen::Index i = 0; i < out.Vt.rows(); ++i) {
    Eigen::Index pivot = 0;
    double best = -1.0;
    for (Eigen::Index j = 0; j < out.Vt.cols(); ++j) {
      if (std::abs(out.Vt(i, j)) > best) {
        best = std::abs(out.Vt(i, j));
        pivot = j;
      }
    }
    if (out.Vt(i, pivot) < 0.0) {
      out.Vt.row(i) *= -1.0;
      out.U.col(i) *= -1.0;
    }
  }
  return out;
}

AdamState AdamState::init(const ParamSet& params, const AdamConfig& config) {
  AdamState state;
  state.config = config;
  state.first_moment.reserve(params.size());
  state.second_moment.reserve(params.size());
  for (const Matrix& p : params) {
    state.first_moment.push_back(Matrix::Zero(p.rows(), p.cols()));
    state.second_moment.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
  return state;
}

void adam_update(ParamSet& params, const ParamSet& grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size() ||
      params.size() != state.second_moment.size()) {
    throw Error(ErrorCode::kShapeMismatch, kModule, "adam: parameter/gradient/state count mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].rows() != grads[i].rows() || params[i].cols() != grads[i].cols() ||
        params[i].rows() != state.first_moment[i].rows() ||
        params[i].cols() != state.first_moment[i].cols()) {
      throw Error(ErrorCode::kShapeMismatch, kModule,
                  "adam: shape mismatch in parameter " + std::to_string(i));
    }
    require_finite(grads[i], "adam gradient");
  }

  const AdamConfig& c = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& m = state.first_moment[i];
    Matrix& v = state.second_moment[i];
    m = c.beta1 * m + (1.0 - c.beta1) * grads[i];
    v = c.beta2 * v + (1.0 - c.beta2) * grads[i].cwiseAbs2();
    params[i].array() -= c.lr * (m.array() / correction1) /
                         ((v.array() / correction2).sqrt() + c.eps);
  }
}

AdamResult adam_step(ParamSet params, const ParamSet& grads, AdamState state) {
  adam_update(params, grads, state);
  return AdamResult{std::move(params), std::move(state)};
}

double cosine_decay_lr(double base, std::size_t epoch, std::size_t total_epochs) {
  if (total_epochs <= 1) return base;
  const double floor = base / 10.0;
  const double progress = std::min(1.0, static_cast<double>(epoch) /
                                             static_cast<double>(total_epochs - 1));
  return floor + (base - floor) * 0.5 * (1.0 + std::cos(M_PI * progress));
}

CrossEntropy cross_entropy(const Vector& logits, std::size_t label) {
  if (label >= static_cast<std::size_t>(logits.size())) {
    throw Error(ErrorCode::kLabelRange, kModule,
                "cross_entropy: label " + std::to_string(label) + " outside " +
                    std::to_string(logits.size()) + " classes");
  }
  const double shift = logits.maxCoeff();
  const Vector exps = (logits.array() - shift).exp();
  const double total = exps.sum();
  CrossEntropy out;
  out.loss = std::log(total) - (logits(static_cast<Eigen::Index>(label)) - shift);
  out.grad = exps / total;
  out.grad(static_cast<Eigen::Index>(label)) -= 1.0;
  return out;
}

Matrix softmax_columns(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const double shift = logits.col(c).maxCoeff();
    out.col(c) = (logits.col(c).array() - shift).exp();
    out.col(c) /= out.col(c).sum();
  }
  return out;
}

double cosine(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

std::size_t argmax(const Eigen::Ref<const Vector>& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return static_cast<std::size_t>(best);
}

double grad_check(const DifferentiableFn& f, const Vector& point, double h) {
  const ValueAndGrad at = f(point);
  if (!std::isfinite(at.value) || !at.grad.allFinite()) {
    throw Error(ErrorCode::kNonFinite, kModule, "grad_check: non-finite evaluation at point");
  }
  if (at.grad.size() != point.size()) {
    throw Error(ErrorCode::kShapeMismatch, kModule, "grad_check: gradient size mismatch");
  }
  double worst = 0.0;
  Vector probe = point;
  for (Eigen::Index i = 0; i < point.size(); ++i) {
    probe(i) = point(i) + h;
    const double up = f(probe).value;
    probe(i) = point(i) - h;
    const double down = f(probe).value;
    probe(i) = point(i);
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw Error(ErrorCode::kNonFinite, kModule,
                  "grad_check: non-finite evaluation at coordinate " + std::to_string(i));
    }
    const double central = (up - down) / (2.0 * h);
    const double analytic = at.grad(i);
    const double rel =
        std::abs(analytic - central) / (std::abs(analytic) + std::abs(central) + 1e-12);
    worst = std::max(worst, rel);
  }
  return worst;
}

Vector flatten(const ParamSet& params) {
  Eigen::Index total = 0;
  for (const Matrix& p : params) total += p.size();
  Vector flat(total);
  Eigen::Index offset = 0;
  for (const Matrix& p : params) {
    flat.segment(offset, p.size()) = p.reshaped();
    offset += p.size();
  }
  return flat;
}

ParamSet unflatten(const Vector& flat, const ParamSet& like) {
  ParamSet out;
  out.reserve(like.size());
  Eigen::Index offset = 0;
  for (const Matrix& p : like) {
    if (offset + p.size() > flat.size()) {
      throw Error(ErrorCode::kShapeMismatch, kModule, "unflatten: vector too short");
    }
    out.push_back(flat.segment(offset, p.size()).reshaped(p.rows(), p.cols()));
    offset += p.size();
  }
  if (offset != flat.size()) {
    throw Error(ErrorCode::kShapeMismatch, kModule, "unflatten: vector too long");
  }
  return out;
}

ClassificationScores score_predictions(std::span<const std::size_t> truth,
                                       std::span<const std::size_t> predicted,
                                       std::size_t num_classes) {
  if (truth.size() != predicted.size()) {
    throw Error(ErrorCode::kShapeMismatch, kModule, "score_predictions: length mismatch");
  }
  ClassificationScores out;
  out.per_class_f1.assign(num_classes, 0.0);
  if (truth.empty()) return out;

  std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const std::size_t y = truth[i];
    const std::size_t p = predicted[i];
    if (y >= num_classes || p >= num_classes) {
      throw Error(ErrorCode::kLabelRange, kModule, "score_predictions: label out of range");
    }
    if (y == p) {
      ++correct;
      ++tp[y];
    } else {
      ++fp[p];
      ++fn[y];
    }
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());

  double f1_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const std::size_t support = tp[c] + fn[c];
    const std::size_t denom = 2 * tp[c] + fp[c] + fn[c];
    out.per_class_f1[c] = denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
    if (support > 0) {
      f1_sum += out.per_class_f1[c];
      ++present;
    }
  }
  out.macro_f1 = present == 0 ? 0.0 : f1_sum / static_cast<double>(present);
  return out;
}

}  // namespace sentdecomp::numkit
