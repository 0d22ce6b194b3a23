#include "sentdecomp/probes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "sentdecomp/csv.hpp"
#include "sentdecomp/error.hpp"
#include "sentdecomp/random.hpp"

namespace sentdecomp::probes {

namespace {

constexpr const char* kModule = "probes";

[[noreturn]] void fail(ErrorCode code, const std::string& what) { throw Error(code, kModule, what); }

Matrix token_inputs(const Corpus& corpus) { return corpus.contextual.cast<double>().transpose(); }

Matrix gather_columns(const Matrix& m, std::span<const std::size_t> cols) {
  Matrix out(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = m.col(static_cast<Eigen::Index>(cols[i]));
  return out;
}

}  // namespace

ProbeLoss probe_loss(const ProbeModel& model, const Matrix& inputs, std::span<const std::size_t> labels) {
  if (static_cast<std::size_t>(inputs.cols()) != labels.size() || labels.empty()) {
    fail(ErrorCode::kShapeMismatch, "probe batch needs one label per input column");
  }
  const auto batch = static_cast<double>(labels.size());
  ProbeLoss out;
  out.grads.reserve(model.params.size());
  for (const Matrix& p : model.params) out.grads.push_back(Matrix::Zero(p.rows(), p.cols()));

  Matrix hidden;
  Matrix logits;
  if (model.arch == ProbeArch::kLinear) {
    logits = model.params[0] * inputs;
    logits.colwise() += model.params[1].col(0);
  } else {
    hidden = model.params[0] * inputs;
    hidden.colwise() += model.params[1].col(0);
    hidden = hidden.cwiseMax(0.0);
    logits = model.params[2] * hidden;
    logits.colwise() += model.params[3].col(0);
  }

  Matrix dlogits(logits.rows(), logits.cols());
  for (Eigen::Index t = 0; t < logits.cols(); ++t) {
    const numkit::CrossEntropy ce = numkit::cross_entropy(logits.col(t), labels[static_cast<std::size_t>(t)]);
    out.value += ce.loss;
    dlogits.col(t) = ce.grad / batch;
  }
  out.value /= batch;

  if (model.arch == ProbeArch::kLinear) {
    out.grads[0] = dlogits * inputs.transpose();
    out.grads[1] = dlogits.rowwise().sum();
  } else {
    out.grads[2] = dlogits * hidden.transpose();
    out.grads[3] = dlogits.rowwise().sum();
    const Matrix dhidden = (model.params[2].transpose() * dlogits).cwiseProduct(
        (hidden.array() > 0.0).cast<double>().matrix());
    out.grads[0] = dhidden * inputs.transpose();
    out.grads[1] = dhidden.rowwise().sum();
  }
  return out;
}

namespace {

double mean_loss(const ProbeModel& model, const Matrix& inputs, std::span<const std::size_t> labels) {
  const Matrix logits = model.logits(inputs);
  double total = 0.0;
  for (Eigen::Index t = 0; t < logits.cols(); ++t) {
    total += numkit::cross_entropy(logits.col(t), labels[static_cast<std::size_t>(t)]).loss;
  }
  return total / static_cast<double>(labels.size());
}

Matrix gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = stddev * rng.normal();
  }
  return m;
}

ProbeMetrics score(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                   std::size_t num_classes, ProbeMode mode) {
  const numkit::ClassificationScores s = numkit::score_predictions(truth, predicted, num_classes);
  ProbeMetrics m;
  m.accuracy = s.accuracy;
  m.macro_f1 = s.macro_f1;
  m.per_class_f1 = s.per_class_f1;
  m.mode = mode;
  return m;
}

}  // namespace

std::string_view to_string(ProbeTarget t) {
  switch (t) {
    case ProbeTarget::kPos: return "pos";
    case ProbeTarget::kDep: return "dep";
    case ProbeTarget::kPosition: return "position";
  }
  return "unknown";
}

std::string_view to_string(ProbeArch a) { return a == ProbeArch::kLinear ? "linear" : "mlp"; }

std::string_view to_string(ProbeMode m) {
  switch (m) {
    case ProbeMode::kStandard: return "standard";
    case ProbeMode::kShuffled: return "shuffled";
    case ProbeMode::kRandom: return "random";
  }
  return "unknown";
}

ProbeTarget parse_target(std::string_view name) {
  if (name == "pos") return ProbeTarget::kPos;
  if (name == "dep") return ProbeTarget::kDep;
  if (name == "position") return ProbeTarget::kPosition;
  fail(ErrorCode::kConfig, "unknown probe target '" + std::string(name) + "'");
}

ProbeArch parse_arch(std::string_view name) {
  if (name == "linear") return ProbeArch::kLinear;
  if (name == "mlp") return ProbeArch::kMlp;
  fail(ErrorCode::kConfig, "unknown probe arch '" + std::string(name) + "'");
}

std::vector<std::string> target_classes(const Corpus& corpus, ProbeTarget target) {
  switch (target) {
    case ProbeTarget::kPos: return corpus.pos_vocab;
    case ProbeTarget::kDep: return corpus.dep_vocab;
    case ProbeTarget::kPosition: break;
  }
  std::size_t max_position = 0;
  for (const TokenRecord& t : corpus.tokens) max_position = std::max(max_position, t.position);
  const std::size_t n = std::min(kPositionBuckets, max_position + 1);
  std::vector<std::string> classes;
  for (std::size_t i = 0; i < n; ++i) {
    classes.push_back(i + 1 == kPositionBuckets ? std::to_string(i) + "+" : std::to_string(i));
  }
  return classes;
}

std::vector<std::size_t> target_labels(const Corpus& corpus, ProbeTarget target, std::size_t num_classes) {
  std::vector<std::size_t> labels;
  labels.reserve(corpus.num_tokens());
  for (const TokenRecord& t : corpus.tokens) {
    switch (target) {
      case ProbeTarget::kPos: labels.push_back(t.pos_id); break;
      case ProbeTarget::kDep: labels.push_back(t.dep_id); break;
      case ProbeTarget::kPosition: labels.push_back(std::min(t.position, num_classes - 1)); break;
    }
  }
  return labels;
}

Matrix ProbeModel::logits(const Matrix& inputs) const {
  Matrix out;
  if (arch == ProbeArch::kLinear) {
    out = params[0] * inputs;
    out.colwise() += params[1].col(0);
    return out;
  }
  Matrix hidden = params[0] * inputs;
  hidden.colwise() += params[1].col(0);
  out = params[2] * hidden.cwiseMax(0.0);
  out.colwise() += params[3].col(0);
  return out;
}

void ProbeModel::check() const {
  const std::size_t expected = arch == ProbeArch::kLinear ? 2 : 4;
  if (params.size() != expected) fail(ErrorCode::kShapeMismatch, "wrong number of probe tensors");
  const Eigen::Index out_rows = params[expected - 2].rows();
  if (static_cast<std::size_t>(out_rows) != classes.size()) {
    fail(ErrorCode::kShapeMismatch, "probe output size differs from the class count");
  }
  if (params[1].rows() != params[0].rows() || params[1].cols() != 1) fail(ErrorCode::kShapeMismatch, "bad b1 shape");
  if (arch == ProbeArch::kMlp &&
      (params[2].cols() != params[0].rows() || params[3].rows() != params[2].rows() || params[3].cols() != 1)) {
    fail(ErrorCode::kShapeMismatch, "bad second-layer shape");
  }
  for (const Matrix& p : params) {
    if (!p.allFinite()) fail(ErrorCode::kNonFinite, "probe weights are not finite");
  }
}

TrainedProbe train_probe(const Corpus& train, const Corpus& val, ProbeTarget target, ProbeArch arch,
                         const ProbeHyper& hyper, ProbeMode mode, std::uint64_t seed) {
  if (train.num_tokens() == 0) fail(ErrorCode::kInvalidArgument, "empty training split");
  if (val.num_tokens() == 0) fail(ErrorCode::kInvalidArgument, "empty validation split");
  if (mode == ProbeMode::kRandom) fail(ErrorCode::kInvalidArgument, "use random_baseline for random mode");
  if (hyper.batch_size == 0 || hyper.max_epochs == 0 || !(hyper.lr > 0.0)) {
    fail(ErrorCode::kConfig, "probe batch size, epochs and learning rate must be positive");
  }
  if (train.dim_contextual() != val.dim_contextual()) fail(ErrorCode::kShapeMismatch, "split dimensions differ");
  if (target != ProbeTarget::kPosition && target_classes(train, target) != target_classes(val, target)) {
    fail(ErrorCode::kShapeMismatch, "split vocabularies differ");
  }

  Rng rng(seed);
  TrainedProbe out;
  ProbeModel& model = out.model;
  model.arch = arch;
  model.target = target;
  model.classes = target_classes(train, target);
  const std::size_t num_classes = model.classes.size();
  const auto c = static_cast<Eigen::Index>(num_classes);
  const auto d = static_cast<Eigen::Index>(train.dim_contextual());

  // Output layers start at zero so an untrained probe predicts uniformly.
  if (arch == ProbeArch::kLinear) {
    model.params = {Matrix::Zero(c, d), Matrix::Zero(c, 1)};
  } else {
    const auto h = static_cast<Eigen::Index>(hyper.hidden == 0 ? 2 * train.dim_contextual() : hyper.hidden);
    model.params = {gaussian(rng, h, d, std::sqrt(2.0 / static_cast<double>(d))), Matrix::Zero(h, 1),
                    Matrix::Zero(c, h), Matrix::Zero(c, 1)};
  }

  const Matrix train_x = token_inputs(train);
  const Matrix val_x = token_inputs(val);
  std::vector<std::size_t> train_y = target_labels(train, target, num_classes);
  const std::vector<std::size_t> val_y = target_labels(val, target, num_classes);
  if (mode == ProbeMode::kShuffled) rng.shuffle(train_y);
  out.metrics.single_class =
      std::adjacent_find(train_y.begin(), train_y.end(), std::not_equal_to<>()) == train_y.end();

  numkit::AdamState adam = numkit::AdamState::init(model.params, numkit::AdamConfig{hyper.lr});
  ParamSet best = model.params;
  double best_loss = mean_loss(model, val_x, val_y);
  std::size_t since_best = 0;
  const std::size_t n = train.num_tokens();
  std::vector<std::size_t> batch_labels;
  std::size_t epochs = 0;
  for (std::size_t epoch = 0; epoch < hyper.max_epochs && since_best < hyper.patience; ++epoch) {
    const std::vector<std::size_t> order = rng.permutation(n);
    for (std::size_t start = 0; start < n; start += hyper.batch_size) {
      const std::span<const std::size_t> rows(order.data() + start, std::min(n, start + hyper.batch_size) - start);
      batch_labels.clear();
      for (std::size_t r : rows) batch_labels.push_back(train_y[r]);
      const ProbeLoss step = probe_loss(model, gather_columns(train_x, rows), batch_labels);
      if (!std::isfinite(step.value)) fail(ErrorCode::kNonFinite, "probe loss is not finite");
      numkit::adam_update(model.params, step.grads, adam);
    }
    ++epochs;
    const double val_loss = mean_loss(model, val_x, val_y);
    if (!std::isfinite(val_loss)) fail(ErrorCode::kNonFinite, "probe validation loss is not finite");
    if (val_loss < best_loss) {
      best_loss = val_loss;
      best = model.params;
      since_best = 0;
    } else {
      ++since_best;
    }
  }
  model.params = std::move(best);
  model.check();

  const bool single_class = out.metrics.single_class;
  out.metrics = eval_probe(model, val);
  out.metrics.mode = mode;
  out.metrics.single_class = single_class;
  out.metrics.epochs = epochs;
  return out;
}

ProbeMetrics random_baseline(const Corpus& val, ProbeTarget target, std::uint64_t seed) {
  const std::size_t num_classes = target_classes(val, target).size();
  if (num_classes == 0) fail(ErrorCode::kInvalidArgument, "empty target vocabulary");
  const std::vector<std::size_t> truth = target_labels(val, target, num_classes);
  Rng rng(seed);
  std::vector<std::size_t> predicted(truth.size());
  for (std::size_t& p : predicted) p = static_cast<std::size_t>(rng.uniform_index(num_classes));
  return score(truth, predicted, num_classes, ProbeMode::kRandom);
}

ProbeMetrics eval_probe(const ProbeModel& model, const Corpus& data) {
  model.check();
  if (data.dim_contextual() != model.input_dim()) fail(ErrorCode::kShapeMismatch, "probe input dimension differs");
  if (model.target != ProbeTarget::kPosition && target_classes(data, model.target) != model.classes) {
    fail(ErrorCode::kShapeMismatch, "probe vocabulary differs from the corpus vocabulary");
  }
  const std::vector<std::size_t> truth = target_labels(data, model.target, model.num_classes());
  const Matrix logits = model.logits(token_inputs(data));
  std::vector<std::size_t> predicted(truth.size());
  for (Eigen::Index t = 0; t < logits.cols(); ++t) predicted[static_cast<std::size_t>(t)] = numkit::argmax(logits.col(t));
  return score(truth, predicted, model.num_classes(), ProbeMode::kStandard);
}

Matrix probe_svd_alignment(const ProbeModel& model) {
  if (model.arch != ProbeArch::kLinear) fail(ErrorCode::kInvalidArgument, "SVD alignment needs a linear probe");
  model.check();
  const Matrix& w = model.params[0];
  const numkit::SvdResult s = numkit::svd(w);
  const Eigen::Index r = std::min(w.rows(), w.cols());
  Matrix out(w.rows(), r);
  for (Eigen::Index c = 0; c < w.rows(); ++c) {
    for (Eigen::Index j = 0; j < r; ++j) {
      out(c, j) = std::clamp(numkit::cosine(w.row(c).transpose(), s.Vt.row(j).transpose()), -1.0, 1.0);
    }
  }
  return out;
}

std::string probe_results_csv(const std::vector<ProbeResultRow>& rows) {
  std::string out = csv_row({"model_name", "target", "arch", "mode", "accuracy", "macro_f1", "seed"});
  for (const ProbeResultRow& r : rows) {
    out += csv_row({r.model_name, std::string(to_string(r.target)), r.arch, std::string(to_string(r.mode)),
                    format_number(r.accuracy), format_number(r.macro_f1), std::to_string(r.seed)});
  }
  return out;
}

std::string svd_alignment_csv(const std::vector<SvdAlignment>& tables) {
  std::string out = csv_row({"target", "class", "singular_index", "cosine"});
  for (const SvdAlignment& t : tables) {
    for (Eigen::Index c = 0; c < t.cosines.rows(); ++c) {
      for (Eigen::Index j = 0; j < t.cosines.cols(); ++j) {
        out += csv_row({std::string(to_string(t.target)), t.classes.at(static_cast<std::size_t>(c)),
                        std::to_string(j + 1), format_number(t.cosines(c, j))});
      }
    }
  }
  return out;
}

}  // namespace sentdecomp::probes
