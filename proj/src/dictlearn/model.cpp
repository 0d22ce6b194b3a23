#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "sentdecomp/dictlearn.hpp"
#include "sentdecomp/random.hpp"

namespace sentdecomp::dictlearn {

namespace {

constexpr const char* kModule = "dictlearn";

struct Activations {
  Matrix pre_ctx;
  Matrix pre_stat;
  Matrix ctx;
  Matrix stat;
  Matrix mask;  // empty unless topk is set
};

void activate(Matrix& m, Nonlinearity n) {
  if (n == Nonlinearity::kRelu) m = m.cwiseMax(0.0);
}

Matrix topk_mask(const Matrix& ctx, const Matrix& stat, std::size_t topk) {
  const Eigen::Index k = ctx.rows();
  Matrix mask = Matrix::Zero(k, ctx.cols());
  std::vector<Eigen::Index> order(static_cast<std::size_t>(k));
  for (Eigen::Index t = 0; t < ctx.cols(); ++t) {
    const Vector magnitude = (ctx.col(t) + stat.col(t)).cwiseAbs();
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    const auto keep = static_cast<std::ptrdiff_t>(std::min<std::size_t>(topk, order.size()));
    std::partial_sort(order.begin(), order.begin() + keep, order.end(), [&](Eigen::Index a, Eigen::Index b) {
      return magnitude(a) > magnitude(b) || (magnitude(a) == magnitude(b) && a < b);
    });
    for (std::ptrdiff_t i = 0; i < keep; ++i) mask(order[static_cast<std::size_t>(i)], t) = 1.0;
  }
  return mask;
}

Activations run_encoder(const DictModel& model, const Matrix& x) {
  if (static_cast<std::size_t>(x.rows()) != model.dim_contextual()) {
    throw Error(ErrorCode::kShapeMismatch, kModule,
                "input dimension " + std::to_string(x.rows()) + " != model dimension " +
                    std::to_string(model.dim_contextual()));
  }
  Activations a;
  a.pre_ctx = model[DictModel::kEncCtx] * x;
  a.pre_ctx.colwise() += model[DictModel::kBiasCtx].col(0);
  a.pre_stat = model[DictModel::kEncStatic] * x;
  a.pre_stat.colwise() += model[DictModel::kBiasStatic].col(0);
  a.ctx = a.pre_ctx;
  a.stat = a.pre_stat;
  activate(a.ctx, model.nonlinearity);
  activate(a.stat, model.nonlinearity);
  if (model.topk) {
    a.mask = topk_mask(a.ctx, a.stat, *model.topk);
    a.ctx = a.ctx.cwiseProduct(a.mask);
    a.stat = a.stat.cwiseProduct(a.mask);
  }
  return a;
}

Matrix activation_derivative(const Matrix& pre, Nonlinearity n) {
  if (n == Nonlinearity::kIdentity) return Matrix::Ones(pre.rows(), pre.cols());
  return (pre.array() > 0.0).cast<double>().matrix();
}

Matrix sign_of(const Matrix& m) {
  return m.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

// Cross-entropy of each column against its label; returns the summed loss and
// writes softmax - onehot into `grad`.
double batch_cross_entropy(const Matrix& logits, const std::vector<std::size_t>& labels, Matrix& grad) {
  grad = numkit::softmax_columns(logits);
  double total = 0.0;
  for (Eigen::Index t = 0; t < logits.cols(); ++t) {
    const std::size_t label = labels[static_cast<std::size_t>(t)];
    if (label >= static_cast<std::size_t>(logits.rows())) {
      throw Error(ErrorCode::kLabelRange, kModule, "label " + std::to_string(label) + " outside head");
    }
    const auto y = static_cast<Eigen::Index>(label);
    const double shift = logits.col(t).maxCoeff();
    total += std::log((logits.col(t).array() - shift).exp().sum()) - (logits(y, t) - shift);
    grad(y, t) -= 1.0;
  }
  return total;
}

constexpr std::size_t kSeedSamples = 4096;
constexpr int kSeedIterations = 20;

// Atoms seeded from the data: k-means++ selection over unit-normalized token
// embeddings, then a few rounds of sign-invariant spherical k-means. Falls back
// to random directions when the corpus has fewer usable tokens than atoms.
Matrix seed_atoms(const Corpus& corpus, std::size_t k, Rng& rng) {
  const auto d = static_cast<Eigen::Index>(corpus.dim_contextual());
  const std::vector<std::size_t> order = rng.permutation(corpus.num_tokens());
  Matrix samples(d, static_cast<Eigen::Index>(std::min(order.size(), kSeedSamples)));
  Eigen::Index n = 0;
  for (std::size_t i = 0; i < order.size() && n < samples.cols(); ++i) {
    const Vector x = corpus.contextual.row(static_cast<Eigen::Index>(order[i])).cast<double>().transpose();
    const double norm = x.norm();
    if (norm > 0.0) samples.col(n++) = x / norm;
  }
  samples.conservativeResize(d, n);

  Matrix atoms(d, static_cast<Eigen::Index>(k));
  for (Eigen::Index j = 0; j < atoms.cols(); ++j) {
    for (Eigen::Index r = 0; r < d; ++r) atoms(r, j) = rng.normal();
  }
  atoms.colwise().normalize();
  if (static_cast<std::size_t>(n) < k) return atoms;

  // Greedy k-means++: each new atom is the best of a few distance-weighted
  // candidates, where distance is the squared sine to the nearest chosen atom.
  const int candidates = 2 + static_cast<int>(std::log(static_cast<double>(k)));
  Vector distance = Vector::Constant(n, 1.0);
  for (Eigen::Index j = 0; j < atoms.cols(); ++j) {
    Eigen::Index best_pick = -1;
    Vector best_distance;
    for (int c = 0; c < candidates; ++c) {
      Eigen::Index pick = 0;
      const double total = distance.sum();
      if (j == 0 || !(total > 0.0)) {
        pick = static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(n)));
      } else {
        double target = rng.uniform() * total;
        for (pick = 0; pick + 1 < n && target >= distance(pick); ++pick) target -= distance(pick);
      }
      const Vector cosines = samples.transpose() * samples.col(pick);
      Vector updated = distance.cwiseMin((1.0 - cosines.array().square()).cwiseMax(0.0).matrix());
      if (best_pick < 0 || updated.sum() < best_distance.sum()) {
        best_pick = pick;
        best_distance = std::move(updated);
      }
      if (j == 0) break;
    }
    atoms.col(j) = samples.col(best_pick);
    distance = std::move(best_distance);
  }

  for (int iter = 0; iter < kSeedIterations; ++iter) {
    const Matrix cosines = atoms.transpose() * samples;  // k x n
    Matrix sums = Matrix::Zero(d, atoms.cols());
    for (Eigen::Index t = 0; t < n; ++t) {
      Eigen::Index best = 0;
      cosines.col(t).cwiseAbs().maxCoeff(&best);
      sums.col(best) += (cosines(best, t) < 0.0 ? -1.0 : 1.0) * samples.col(t);
    }
    for (Eigen::Index j = 0; j < atoms.cols(); ++j) {
      const double norm = sums.col(j).norm();
      if (norm > 0.0) atoms.col(j) = sums.col(j) / norm;
    }
  }
  return atoms;
}

void require_finite_term(double value, const char* term) {
  if (!std::isfinite(value)) {
    throw Error(ErrorCode::kNonFinite, kModule, std::string("non-finite loss term: ") + term);
  }
}

}  // namespace

std::string_view to_string(Nonlinearity n) {
  return n == Nonlinearity::kIdentity ? "identity" : "relu";
}

Nonlinearity parse_nonlinearity(std::string_view name) {
  if (name == "identity" || name == "linear") return Nonlinearity::kIdentity;
  if (name == "relu") return Nonlinearity::kRelu;
  throw Error(ErrorCode::kConfig, kModule, "unknown nonlinearity '" + std::string(name) + "'");
}

void DictConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::kConfig, kModule, what); };
  if (k < 1) bad("k must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) bad("lr must be positive");
  if (epochs < 1) bad("epochs must be >= 1");
  if (batch_size < 1) bad("batch_size must be >= 1");
  for (double a : {alpha_pos, alpha_dep, alpha_static, alpha_sparse}) {
    if (!(a >= 0.0) || !std::isfinite(a)) bad("loss weights must be finite and >= 0");
  }
  if (!(l1_ctx >= 0.0) || !(l1_static >= 0.0)) bad("l1 coefficients must be >= 0");
  if (topk && (*topk < 1 || *topk > k)) bad("topk must lie in [1, k]");
}

DictModel DictModel::zeros(std::size_t k, std::size_t dim_ctx, std::size_t dim_static, std::size_t num_pos,
                           std::size_t num_dep, Nonlinearity nonlinearity, std::optional<std::size_t> topk) {
  const auto K = static_cast<Eigen::Index>(k);
  const auto D = static_cast<Eigen::Index>(dim_ctx);
  const auto S = static_cast<Eigen::Index>(dim_static);
  const auto P = static_cast<Eigen::Index>(num_pos);
  const auto Q = static_cast<Eigen::Index>(num_dep);
  DictModel m;
  m.nonlinearity = nonlinearity;
  m.topk = topk;
  m.params.resize(kNumSlots);
  m.params[kEncCtx] = Matrix::Zero(K, D);
  m.params[kBiasCtx] = Matrix::Zero(K, 1);
  m.params[kEncStatic] = Matrix::Zero(K, D);
  m.params[kBiasStatic] = Matrix::Zero(K, 1);
  m.params[kDict] = Matrix::Zero(D, K);
  m.params[kDictStatic] = Matrix::Zero(S, K);
  m.params[kHeadPos] = Matrix::Zero(P, K);
  m.params[kBiasPos] = Matrix::Zero(P, 1);
  m.params[kHeadDep] = Matrix::Zero(Q, K);
  m.params[kBiasDep] = Matrix::Zero(Q, 1);
  return m;
}

void DictModel::check() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::kShapeMismatch, kModule, what); };
  if (params.size() != kNumSlots) fail("model has wrong number of parameter tensors");
  const Eigen::Index K = params[kDict].cols();
  const Eigen::Index D = params[kDict].rows();
  if (params[kEncCtx].rows() != K || params[kEncCtx].cols() != D) fail("E_ctx shape");
  if (params[kEncStatic].rows() != K || params[kEncStatic].cols() != D) fail("E_static shape");
  if (params[kBiasCtx].rows() != K || params[kBiasCtx].cols() != 1) fail("b_ctx shape");
  if (params[kBiasStatic].rows() != K || params[kBiasStatic].cols() != 1) fail("b_static shape");
  if (params[kDictStatic].cols() != K) fail("D_static shape");
  if (params[kHeadPos].cols() != K || params[kBiasPos].rows() != params[kHeadPos].rows()) fail("POS head shape");
  if (params[kHeadDep].cols() != K || params[kBiasDep].rows() != params[kHeadDep].rows()) fail("DEP head shape");
  for (const Matrix& p : params) {
    if (!p.allFinite()) throw Error(ErrorCode::kNonFinite, kModule, "model contains NaN/Inf");
  }
}

DictModel init_model(const Corpus& corpus, const DictConfig& config) {
  config.validate();
  DictModel m = DictModel::zeros(config.k, corpus.dim_contextual(), corpus.dim_static(), corpus.pos_vocab.size(),
                                 corpus.dep_vocab.size(), config.nonlinearity, config.topk);
  Rng rng(derive_seed(config.seed, "dictlearn/init"));
  auto fill_normal = [&](Matrix& target, double scale) {
    for (Eigen::Index c = 0; c < target.cols(); ++c) {
      for (Eigen::Index r = 0; r < target.rows(); ++r) target(r, c) = scale * rng.normal();
    }
  };
  m[DictModel::kDict] = seed_atoms(corpus, config.k, rng);
  fill_normal(m[DictModel::kDictStatic], 1.0);
  m[DictModel::kDictStatic].colwise().normalize();
  // The two encoders split the least-squares code of the seeded dictionary.
  const Matrix pinv = m[DictModel::kDict].completeOrthogonalDecomposition().pseudoInverse();
  m[DictModel::kEncCtx] = 0.5 * pinv;
  m[DictModel::kEncStatic] = 0.5 * pinv;
  fill_normal(m[DictModel::kHeadPos], 0.01);
  fill_normal(m[DictModel::kHeadDep], 0.01);
  return m;
}

SparseCode encode(const DictModel& model, const Eigen::Ref<const Vector>& x) {
  const Activations a = run_encoder(model, Matrix(x));
  return SparseCode{a.ctx.col(0), a.stat.col(0)};
}

BatchCodes encode_batch(const DictModel& model, const Matrix& contextual) {
  Activations a = run_encoder(model, contextual);
  return BatchCodes{std::move(a.ctx), std::move(a.stat)};
}

ForwardResult forward(const DictModel& model, const Eigen::Ref<const Vector>& x) {
  ForwardResult out;
  out.code = encode(model, x);
  const Vector z = out.code.combined();
  out.recon_ctx = model[DictModel::kDict] * z;
  out.recon_static = model[DictModel::kDictStatic] * out.code.stat;
  out.logits_pos = model[DictModel::kHeadPos] * z + model[DictModel::kBiasPos].col(0);
  out.logits_dep = model[DictModel::kHeadDep] * z + model[DictModel::kBiasDep].col(0);
  return out;
}

Batch make_batch(const Corpus& corpus, std::span<const std::size_t> rows) {
  Batch b;
  b.contextual.resize(corpus.contextual.cols(), static_cast<Eigen::Index>(rows.size()));
  b.static_emb.resize(corpus.static_emb.cols(), static_cast<Eigen::Index>(rows.size()));
  b.pos.reserve(rows.size());
  b.dep.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(rows[i]);
    const auto c = static_cast<Eigen::Index>(i);
    b.contextual.col(c) = corpus.contextual.row(r).transpose().cast<double>();
    b.static_emb.col(c) = corpus.static_emb.row(r).transpose().cast<double>();
    b.pos.push_back(corpus.tokens[rows[i]].pos_id);
    b.dep.push_back(corpus.tokens[rows[i]].dep_id);
  }
  return b;
}

Batch make_batch(const Corpus& corpus) {
  std::vector<std::size_t> rows(corpus.num_tokens());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return make_batch(corpus, rows);
}

LossResult loss(const DictModel& model, const Batch& batch, const DictConfig& config) {
  const std::size_t n = batch.size();
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, kModule, "loss on an empty batch");
  if (static_cast<std::size_t>(batch.static_emb.rows()) != model.dim_static()) {
    throw Error(ErrorCode::kShapeMismatch, kModule, "static dimension mismatch");
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  const Activations a = run_encoder(model, batch.contextual);
  const Matrix& D = model[DictModel::kDict];
  const Matrix& D_static = model[DictModel::kDictStatic];
  const Matrix& W_pos = model[DictModel::kHeadPos];
  const Matrix& W_dep = model[DictModel::kHeadDep];

  const Matrix z = a.ctx + a.stat;
  const Matrix resid_ctx = D * z - batch.contextual;
  const Matrix resid_static = D_static * a.stat - batch.static_emb;
  Matrix logits_pos = W_pos * z;
  logits_pos.colwise() += model[DictModel::kBiasPos].col(0);
  Matrix logits_dep = W_dep * z;
  logits_dep.colwise() += model[DictModel::kBiasDep].col(0);

  Matrix g_pos, g_dep;
  LossResult out;
  out.terms.recon_ctx = resid_ctx.squaredNorm() * inv_n;
  out.terms.recon_static = resid_static.squaredNorm() * inv_n;
  out.terms.ce_pos = batch_cross_entropy(logits_pos, batch.pos, g_pos) * inv_n;
  out.terms.ce_dep = batch_cross_entropy(logits_dep, batch.dep, g_dep) * inv_n;
  out.terms.sparsity =
      (config.l1_ctx * a.ctx.cwiseAbs().sum() + config.l1_static * a.stat.cwiseAbs().sum()) * inv_n;
  require_finite_term(out.terms.recon_ctx, "recon_ctx");
  require_finite_term(out.terms.recon_static, "recon_static");
  require_finite_term(out.terms.ce_pos, "ce_pos");
  require_finite_term(out.terms.ce_dep, "ce_dep");
  require_finite_term(out.terms.sparsity, "sparsity");
  out.total = out.terms.recon_ctx + config.alpha_pos * out.terms.ce_pos + config.alpha_dep * out.terms.ce_dep +
              config.alpha_static * out.terms.recon_static + config.alpha_sparse * out.terms.sparsity;

  // Upstream gradients of the mean objective.
  const Matrix d_recon_ctx = (2.0 * inv_n) * resid_ctx;
  const Matrix d_recon_static = (2.0 * config.alpha_static * inv_n) * resid_static;
  g_pos *= config.alpha_pos * inv_n;
  g_dep *= config.alpha_dep * inv_n;

  ParamSet& grads = out.grads;
  grads.resize(DictModel::kNumSlots);
  grads[DictModel::kDict] = d_recon_ctx * z.transpose();
  grads[DictModel::kDictStatic] = d_recon_static * a.stat.transpose();
  grads[DictModel::kHeadPos] = g_pos * z.transpose();
  grads[DictModel::kBiasPos] = g_pos.rowwise().sum();
  grads[DictModel::kHeadDep] = g_dep * z.transpose();
  grads[DictModel::kBiasDep] = g_dep.rowwise().sum();

  const Matrix d_z = D.transpose() * d_recon_ctx + W_pos.transpose() * g_pos + W_dep.transpose() * g_dep;
  const double l1_scale = config.alpha_sparse * inv_n;
  Matrix d_ctx = d_z + (l1_scale * config.l1_ctx) * sign_of(a.ctx);
  Matrix d_stat = d_z + D_static.transpose() * d_recon_static + (l1_scale * config.l1_static) * sign_of(a.stat);
  if (a.mask.size() > 0) {
    d_ctx = d_ctx.cwiseProduct(a.mask);
    d_stat = d_stat.cwiseProduct(a.mask);
  }
  const Matrix d_pre_ctx = d_ctx.cwiseProduct(activation_derivative(a.pre_ctx, model.nonlinearity));
  const Matrix d_pre_stat = d_stat.cwiseProduct(activation_derivative(a.pre_stat, model.nonlinearity));
  grads[DictModel::kEncCtx] = d_pre_ctx * batch.contextual.transpose();
  grads[DictModel::kBiasCtx] = d_pre_ctx.rowwise().sum();
  grads[DictModel::kEncStatic] = d_pre_stat * batch.contextual.transpose();
  grads[DictModel::kBiasStatic] = d_pre_stat.rowwise().sum();
  return out;
}

void normalize_atoms(DictModel& model) {
  Matrix& D = model[DictModel::kDict];
  for (Eigen::Index j = 0; j < D.cols(); ++j) {
    const double norm = D.col(j).norm();
    if (norm == 0.0 || !std::isfinite(norm)) continue;
    D.col(j) /= norm;
    model[DictModel::kEncCtx].row(j) *= norm;
    model[DictModel::kBiasCtx](j, 0) *= norm;
    model[DictModel::kEncStatic].row(j) *= norm;
    model[DictModel::kBiasStatic](j, 0) *= norm;
    model[DictModel::kDictStatic].col(j) /= norm;
    model[DictModel::kHeadPos].col(j) /= norm;
    model[DictModel::kHeadDep].col(j) /= norm;
  }
}

}  // namespace sentdecomp::dictlearn
