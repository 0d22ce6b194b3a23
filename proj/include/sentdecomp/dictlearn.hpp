#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sentdecomp/corpus.hpp"
#include "sentdecomp/error.hpp"
#include "sentdecomp/numkit.hpp"

namespace sentdecomp::dictlearn {

using numkit::Matrix;
using numkit::ParamSet;
using numkit::Vector;

enum class Nonlinearity { kIdentity, kRelu };

std::string_view to_string(Nonlinearity n);
Nonlinearity parse_nonlinearity(std::string_view name);

struct DictConfig {
  std::size_t k = 64;
  Nonlinearity nonlinearity = Nonlinearity::kIdentity;
  double lr = 1e-3;
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  double alpha_pos = 1.0;
  double alpha_dep = 1.0;
  double alpha_static = 1.0;
  double alpha_sparse = 1.0;
  double l1_ctx = 1e-3;
  double l1_static = 1e-3;
  // Hard sparsity: keep only the topk largest-magnitude atoms of each token.
  std::optional<std::size_t> topk;
  std::uint64_t seed = 0;

  // Throws ErrorCode::kConfig on an invalid combination.
  void validate() const;
};

// Encoder/decoder weights. All tensors live in `params`, indexed by Slot, so
// the optimizer and gradient checker see a single ParamSet.
struct DictModel {
  enum Slot : std::size_t {
    kEncCtx,      // k x d
    kBiasCtx,     // k x 1
    kEncStatic,   // k x d
    kBiasStatic,  // k x 1
    kDict,        // d x k, atoms are columns
    kDictStatic,  // d_s x k
    kHeadPos,     // |POS| x k
    kBiasPos,     // |POS| x 1
    kHeadDep,     // |DEP| x k
    kBiasDep,     // |DEP| x 1
    kNumSlots
  };

  ParamSet params;
  Nonlinearity nonlinearity = Nonlinearity::kIdentity;
  std::optional<std::size_t> topk;

  // Zero-initialized model with consistent shapes.
  static DictModel zeros(std::size_t k, std::size_t dim_ctx, std::size_t dim_static,
                         std::size_t num_pos, std::size_t num_dep, Nonlinearity nonlinearity,
                         std::optional<std::size_t> topk = std::nullopt);

  Matrix& operator[](Slot s) { return params[s]; }
  const Matrix& operator[](Slot s) const { return params[s]; }

  std::size_t k() const { return static_cast<std::size_t>(params[kDict].cols()); }
  std::size_t dim_contextual() const { return static_cast<std::size_t>(params[kDict].rows()); }
  std::size_t dim_static() const { return static_cast<std::size_t>(params[kDictStatic].rows()); }
  std::size_t num_pos() const { return static_cast<std::size_t>(params[kHeadPos].rows()); }
  std::size_t num_dep() const { return static_cast<std::size_t>(params[kHeadDep].rows()); }

  // Throws kShapeMismatch / kNonFinite when the invariants do not hold.
  void check() const;
};

// Seeded initialization: atoms from greedy k-means++ and spherical k-means over
// the corpus tokens, both encoders at half the dictionary pseudo-inverse,
// random unit static atoms and small random heads.
DictModel init_model(const Corpus& corpus, const DictConfig& config);

struct SparseCode {
  Vector ctx;
  Vector stat;

  Vector combined() const { return ctx + stat; }
};

// z_ctx = act(E_ctx x + b_ctx), z_static = act(E_static x + b_static). With
// topk set, the support is the topk largest entries of |z_ctx + z_static| and
// both parts are zeroed outside it.
SparseCode encode(const DictModel& model, const Eigen::Ref<const Vector>& x);

struct ForwardResult {
  Vector recon_ctx;     // D (z_ctx + z_static)
  Vector recon_static;  // D_static z_static
  Vector logits_pos;
  Vector logits_dep;
  SparseCode code;
};

ForwardResult forward(const DictModel& model, const Eigen::Ref<const Vector>& x);

// Column-major token batch: column t is one token.
struct Batch {
  Matrix contextual;   // d x B
  Matrix static_emb;   // d_s x B
  std::vector<std::size_t> pos;
  std::vector<std::size_t> dep;

  std::size_t size() const { return pos.size(); }
};

Batch make_batch(const Corpus& corpus, std::span<const std::size_t> rows);
Batch make_batch(const Corpus& corpus);

// Batched encoder output, k x B each.
struct BatchCodes {
  Matrix ctx;
  Matrix stat;
};

BatchCodes encode_batch(const DictModel& model, const Matrix& contextual);

// Per-token means of the unweighted objective terms. `sparsity` already
// includes the l1 coefficients but not alpha_sparse.
struct LossTerms {
  double recon_ctx = 0.0;
  double recon_static = 0.0;
  double ce_pos = 0.0;
  double ce_dep = 0.0;
  double sparsity = 0.0;
};

struct LossResult {
  double total = 0.0;
  LossTerms terms;
  ParamSet grads;  // same layout as DictModel::params
};

// total = mean_t[ |x - x^|^2 + a_pos CE_pos + a_dep CE_dep + a_static |w - w^|^2
//                 + a_sparse (l1_ctx |z_ctx|_1 + l1_static |z_static|_1) ]
// with exact gradients (topk support held fixed). Throws kNonFinite naming
// the offending term.
LossResult loss(const DictModel& model, const Batch& batch, const DictConfig& config);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double total = 0.0;
  LossTerms terms;
  double val_recon = 0.0;
  double val_f1_pos = 0.0;
  double val_f1_dep = 0.0;
};

using TrainHistory = std::vector<EpochRecord>;

struct TrainResult {
  DictModel model;
  TrainHistory history;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& message, TrainHistory history)
      : Error(ErrorCode::kDivergence, "dictlearn", message), history_(std::move(history)) {}
  const TrainHistory& history() const { return history_; }

 private:
  TrainHistory history_;
};

// Rescales every atom to unit norm and absorbs the scale into the encoder
// rows, static decoder columns and head columns.
void normalize_atoms(DictModel& model);

TrainResult train(const Corpus& train_split, const Corpus& val_split, const DictConfig& config);

struct Evaluation {
  double val_recon = 0.0;        // mean over tokens of |x - x^|^2 / d
  double f1_pos = 0.0;           // macro-F1 of the POS head
  double f1_dep = 0.0;
  double l1_s_contextual = 0.0;  // mean over tokens of |z_ctx|_1 / k
};

Evaluation evaluate(const DictModel& model, const Corpus& data);

std::string history_csv(const TrainHistory& history);

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

struct Range {
  double lo = 0.0;
  double hi = 1.0;
  bool log_scale = false;
};

struct SearchSpace {
  Range lr{1e-4, 1e-2, true};
  std::vector<std::size_t> k{64, 128, 256, 512};
  std::vector<Nonlinearity> nonlinearities{Nonlinearity::kIdentity, Nonlinearity::kRelu};
  Range alpha_pos{0.0, 1.0, false};
  Range alpha_dep{0.0, 1.0, false};
  Range alpha_static{0.0, 1.0, false};
  Range alpha_sparse{0.0, 1.0, false};
  Range l1_ctx{1e-6, 1e-2, true};
  Range l1_static{1e-6, 1e-2, true};
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  std::optional<std::size_t> topk;
};

struct TrialRow {
  std::size_t trial = 0;
  DictConfig config;
  Evaluation eval;
  std::string error;  // empty on success

  bool ok() const { return error.empty(); }
};

// Seeded random search. Trials are sampled sequentially from `seed` and then
// trained on up to `max_threads` workers (0 = hardware concurrency); the
// table is ordered by trial index regardless of scheduling.
std::vector<TrialRow> sweep(const Corpus& train_split, const Corpus& val_split,
                            const SearchSpace& space, std::size_t n_trials, std::uint64_t seed,
                            std::size_t max_threads = 0);

// Columns: trial,lr,k,nonlinearity,val_recon,l1_s_contextual,f1_pos,f1_dep
std::string sweep_csv(const std::vector<TrialRow>& rows);

// Highest f1_pos among successful trials, ties to lower val_recon then lower
// index. Empty when every trial failed.
std::optional<std::size_t> best_trial(const std::vector<TrialRow>& rows);

// ---------------------------------------------------------------------------
// Atom analytics
// ---------------------------------------------------------------------------

// k x T matrix of combined codes z = z_ctx + z_static for every corpus token.
Matrix encode_corpus(const DictModel& model, const Corpus& corpus);

struct AtomLabel {
  std::size_t label = 0;
  double confidence = 0.0;
  std::size_t support = 0;  // tokens whose top-n contains the atom
};

// For every atom: over tokens where it ranks among the `top_n` largest |z|
// (zero activations never count), the share of the most frequent label.
std::vector<AtomLabel> atom_label_assignment(const DictModel& model, const Corpus& corpus,
                                             LabelKind kind, std::size_t top_n = 5);

struct PosDeviation {
  Matrix values;                             // k x |POS|
  std::vector<std::size_t> absent_classes;  // zero columns
};

// (j, c) = mean z_j over tokens of POS c minus the global mean of z_j.
PosDeviation atom_pos_deviation(const DictModel& model, const Corpus& corpus);

// Cosine similarity between dictionary columns. Throws kDegenerate on a
// zero-norm atom.
Matrix atom_orthogonality(const DictModel& model);

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

nlohmann::json to_json(const DictConfig& config);
// Keys absent from `j` keep the values in `defaults`; unknown keys are
// rejected with kConfig.
DictConfig dict_config_from_json(const nlohmann::json& j, DictConfig defaults = {});

struct SavedModel {
  DictModel model;
  DictConfig config;
  std::string pos_vocab_hash;
  std::string dep_vocab_hash;
  std::string model_name;
};

std::string vocab_hash(const std::vector<std::string>& vocab);

void save_model(const DictModel& model, const DictConfig& config, const Corpus& corpus,
                const std::filesystem::path& dir);
SavedModel load_model(const std::filesystem::path& dir);

// Throws kShapeMismatch when the corpus dims or vocabularies differ from the
// ones the model was trained on.
void check_compatible(const SavedModel& saved, const Corpus& corpus);

}  // namespace sentdecomp::dictlearn
