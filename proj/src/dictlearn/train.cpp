#include <algorithm>
#include <atomic>
#include <limits>
#include <cmath>
#include <future>
#include <numeric>
#include <thread>

#include "sentdecomp/csv.hpp"
#include "sentdecomp/dictlearn.hpp"
#include "sentdecomp/random.hpp"

namespace sentdecomp::dictlearn {

namespace {

constexpr const char* kModule = "dictlearn";
constexpr std::size_t kEvalBlock = 2048;

void add_terms(LossTerms& acc, const LossTerms& t, double weight) {
  acc.recon_ctx += weight * t.recon_ctx;
  acc.recon_static += weight * t.recon_static;
  acc.ce_pos += weight * t.ce_pos;
  acc.ce_dep += weight * t.ce_dep;
  acc.sparsity += weight * t.sparsity;
}

double sample(Rng& rng, const Range& r) {
  if (r.log_scale) {
    return std::exp(rng.uniform(std::log(r.lo), std::log(r.hi)));
  }
  return rng.uniform(r.lo, r.hi);
}

}  // namespace

Evaluation evaluate(const DictModel& model, const Corpus& data) {
  const std::size_t n = data.num_tokens();
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, kModule, "evaluation on an empty split");
  double sq_err = 0.0;
  double l1_ctx = 0.0;
  std::vector<std::size_t> pred_pos, pred_dep, true_pos, true_dep;
  pred_pos.reserve(n);
  pred_dep.reserve(n);
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < n; start += kEvalBlock) {
    const std::size_t end = std::min(n, start + kEvalBlock);
    rows.resize(end - start);
    std::iota(rows.begin(), rows.end(), start);
    const Batch batch = make_batch(data, rows);
    const BatchCodes codes = encode_batch(model, batch.contextual);
    const Matrix z = codes.ctx + codes.stat;
    sq_err += (model[DictModel::kDict] * z - batch.contextual).squaredNorm();
    l1_ctx += codes.ctx.cwiseAbs().sum();
    Matrix logits_pos = model[DictModel::kHeadPos] * z;
    logits_pos.colwise() += model[DictModel::kBiasPos].col(0);
    Matrix logits_dep = model[DictModel::kHeadDep] * z;
    logits_dep.colwise() += model[DictModel::kBiasDep].col(0);
    for (Eigen::Index t = 0; t < z.cols(); ++t) {
      pred_pos.push_back(numkit::argmax(logits_pos.col(t)));
      pred_dep.push_back(numkit::argmax(logits_dep.col(t)));
    }
    true_pos.insert(true_pos.end(), batch.pos.begin(), batch.pos.end());
    true_dep.insert(true_dep.end(), batch.dep.begin(), batch.dep.end());
  }
  Evaluation e;
  const double tokens = static_cast<double>(n);
  e.val_recon = sq_err / (tokens * static_cast<double>(model.dim_contextual()));
  e.l1_s_contextual = l1_ctx / (tokens * static_cast<double>(model.k()));
  e.f1_pos = numkit::score_predictions(true_pos, pred_pos, model.num_pos()).macro_f1;
  e.f1_dep = numkit::score_predictions(true_dep, pred_dep, model.num_dep()).macro_f1;
  return e;
}

TrainResult train(const Corpus& train_split, const Corpus& val_split, const DictConfig& config) {
  config.validate();
  if (train_split.num_tokens() == 0) throw Error(ErrorCode::kInvalidArgument, kModule, "empty training split");
  if (val_split.num_tokens() == 0) throw Error(ErrorCode::kInvalidArgument, kModule, "empty validation split");
  if (train_split.dim_contextual() != val_split.dim_contextual() ||
      train_split.dim_static() != val_split.dim_static() || train_split.pos_vocab != val_split.pos_vocab ||
      train_split.dep_vocab != val_split.dep_vocab) {
    throw Error(ErrorCode::kShapeMismatch, kModule, "training and validation splits disagree on dims or vocab");
  }

  TrainResult result{init_model(train_split, config), {}};
  DictModel& model = result.model;
  numkit::AdamState adam = numkit::AdamState::init(model.params, numkit::AdamConfig{config.lr});
  Rng rng(derive_seed(config.seed, "dictlearn/batches"));
  const std::size_t n = train_split.num_tokens();

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    adam.config.lr = numkit::cosine_decay_lr(config.lr, epoch, config.epochs);
    const std::vector<std::size_t> order = rng.permutation(n);
    EpochRecord record;
    record.epoch = epoch + 1;
    record.lr = adam.config.lr;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      const Batch batch =
          make_batch(train_split, std::span<const std::size_t>(order.data() + start, end - start));
      try {
        LossResult step = loss(model, batch, config);
        const double weight = static_cast<double>(end - start) / static_cast<double>(n);
        record.total += weight * step.total;
        add_terms(record.terms, step.terms, weight);
        numkit::adam_update(model.params, step.grads, adam);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kNonFinite) throw;
        throw TrainingDiverged("epoch " + std::to_string(epoch + 1) + ": " + e.what(), result.history);
      }
    }
    normalize_atoms(model);
    try {
      model.check();
    } catch (const Error& e) {
      throw TrainingDiverged("epoch " + std::to_string(epoch + 1) + ": " + e.what(), result.history);
    }
    const Evaluation eval = evaluate(model, val_split);
    record.val_recon = eval.val_recon;
    record.val_f1_pos = eval.f1_pos;
    record.val_f1_dep = eval.f1_dep;
    result.history.push_back(record);
  }
  return result;
}

std::string history_csv(const TrainHistory& history) {
  std::string out = csv_row({"epoch", "lr", "total", "recon_ctx", "recon_static", "ce_pos", "ce_dep", "sparsity",
                             "val_recon", "val_f1_pos", "val_f1_dep"});
  for (const EpochRecord& r : history) {
    out += csv_row({std::to_string(r.epoch), format_number(r.lr), format_number(r.total),
                    format_number(r.terms.recon_ctx), format_number(r.terms.recon_static),
                    format_number(r.terms.ce_pos), format_number(r.terms.ce_dep), format_number(r.terms.sparsity),
                    format_number(r.val_recon), format_number(r.val_f1_pos), format_number(r.val_f1_dep)});
  }
  return out;
}

std::vector<TrialRow> sweep(const Corpus& train_split, const Corpus& val_split, const SearchSpace& space,
                            std::size_t n_trials, std::uint64_t seed, std::size_t max_threads) {
  if (space.k.empty() || space.nonlinearities.empty()) {
    throw Error(ErrorCode::kConfig, kModule, "search space needs at least one k and one nonlinearity");
  }
  std::vector<TrialRow> rows(n_trials);
  Rng rng(derive_seed(seed, "dictlearn/sweep"));
  for (std::size_t i = 0; i < n_trials; ++i) {
    DictConfig& c = rows[i].config;
    rows[i].trial = i + 1;
    c.lr = sample(rng, space.lr);
    c.k = space.k[rng.uniform_index(space.k.size())];
    c.nonlinearity = space.nonlinearities[rng.uniform_index(space.nonlinearities.size())];
    c.alpha_pos = sample(rng, space.alpha_pos);
    c.alpha_dep = sample(rng, space.alpha_dep);
    c.alpha_static = sample(rng, space.alpha_static);
    c.alpha_sparse = sample(rng, space.alpha_sparse);
    c.l1_ctx = sample(rng, space.l1_ctx);
    c.l1_static = sample(rng, space.l1_static);
    c.epochs = space.epochs;
    c.batch_size = space.batch_size;
    if (space.topk) c.topk = std::min(*space.topk, c.k);
    c.seed = derive_seed(seed, "dictlearn/trial/" + std::to_string(i));
  }

  auto run_trial = [&](TrialRow& row) {
    try {
      const TrainResult trained = train(train_split, val_split, row.config);
      row.eval = evaluate(trained.model, val_split);
    } catch (const Error& e) {
      row.error = std::string(sentdecomp::to_string(e.code())) + ": " + e.what();
      row.eval.val_recon = row.eval.f1_pos = row.eval.f1_dep = row.eval.l1_s_contextual =
          std::numeric_limits<double>::quiet_NaN();
    }
  };

  std::size_t workers = max_threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : max_threads;
  workers = std::min(workers, std::max<std::size_t>(1, n_trials));
  if (workers <= 1) {
    for (TrialRow& row : rows) run_trial(row);
    return rows;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::future<void>> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.push_back(std::async(std::launch::async, [&] {
      for (std::size_t i = next++; i < rows.size(); i = next++) run_trial(rows[i]);
    }));
  }
  for (auto& f : pool) f.get();
  return rows;
}

std::string sweep_csv(const std::vector<TrialRow>& rows) {
  std::string out =
      csv_row({"trial", "lr", "k", "nonlinearity", "val_recon", "l1_s_contextual", "f1_pos", "f1_dep"});
  for (const TrialRow& r : rows) {
    out += csv_row({std::to_string(r.trial), format_number(r.config.lr), std::to_string(r.config.k),
                    std::string(to_string(r.config.nonlinearity)), format_number(r.eval.val_recon),
                    format_number(r.eval.l1_s_contextual), format_number(r.eval.f1_pos),
                    format_number(r.eval.f1_dep)});
  }
  return out;
}

std::optional<std::size_t> best_trial(const std::vector<TrialRow>& rows) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i].ok()) continue;
    if (!best) {
      best = i;
      continue;
    }
    const Evaluation& a = rows[i].eval;
    const Evaluation& b = rows[*best].eval;
    if (a.f1_pos > b.f1_pos || (a.f1_pos == b.f1_pos && a.val_recon < b.val_recon)) best = i;
  }
  return best;
}

}  // namespace sentdecomp::dictlearn
