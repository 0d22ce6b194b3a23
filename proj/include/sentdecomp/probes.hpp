#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sentdecomp/corpus.hpp"
#include "sentdecomp/numkit.hpp"

namespace sentdecomp::probes {

using numkit::Matrix;
using numkit::ParamSet;
using numkit::Vector;

enum class ProbeTarget { kPos, kDep, kPosition };
enum class ProbeArch { kLinear, kMlp };
enum class ProbeMode { kStandard, kShuffled, kRandom };

std::string_view to_string(ProbeTarget t);
std::string_view to_string(ProbeArch a);
std::string_view to_string(ProbeMode m);
ProbeTarget parse_target(std::string_view name);
ProbeArch parse_arch(std::string_view name);

// Token positions 0..30 keep their own class; 31 and beyond share the last one.
constexpr std::size_t kPositionBuckets = 32;

// Class names for a target. For kPosition the vocabulary covers the observed
// positions of `corpus`, clipped to kPositionBuckets.
std::vector<std::string> target_classes(const Corpus& corpus, ProbeTarget target);

// Per-token label ids, clipped into `num_classes` for kPosition.
std::vector<std::size_t> target_labels(const Corpus& corpus, ProbeTarget target,
                                       std::size_t num_classes);

// Linear: params = {W1 (C x d), b1 (C x 1)}.
// MLP:    params = {W1 (h x d), b1 (h x 1), W2 (C x h), b2 (C x 1)}, ReLU hidden.
struct ProbeModel {
  ProbeArch arch = ProbeArch::kLinear;
  ProbeTarget target = ProbeTarget::kPos;
  ParamSet params;
  std::vector<std::string> classes;

  std::size_t num_classes() const { return classes.size(); }
  std::size_t input_dim() const { return static_cast<std::size_t>(params.at(0).cols()); }

  // C x B logits for a d x B input.
  Matrix logits(const Matrix& inputs) const;

  // Throws kShapeMismatch / kNonFinite when the invariants do not hold.
  void check() const;
};

struct ProbeLoss {
  double value = 0.0;  // mean cross-entropy
  ParamSet grads;      // same layout as ProbeModel::params
};

// Mean cross-entropy of the d x B `inputs` against `labels` with exact gradients.
ProbeLoss probe_loss(const ProbeModel& model, const Matrix& inputs, std::span<const std::size_t> labels);

struct ProbeMetrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> per_class_f1;
  ProbeMode mode = ProbeMode::kStandard;
  bool single_class = false;  // training labels had one distinct value
  std::size_t epochs = 0;     // epochs actually run
};

struct ProbeHyper {
  std::size_t batch_size = 128;
  double lr = 1e-3;
  std::size_t max_epochs = 50;
  std::size_t patience = 5;
  std::size_t hidden = 0;  // MLP width; 0 means 2 * d
};

struct TrainedProbe {
  ProbeModel model;
  ProbeMetrics metrics;
};

// Cross-entropy with Adam and early stopping on validation loss; the weights
// of the best validation epoch are kept. In shuffled mode the training labels
// are permuted before training and the validation labels are left alone.
TrainedProbe train_probe(const Corpus& train, const Corpus& val, ProbeTarget target, ProbeArch arch,
                         const ProbeHyper& hyper, ProbeMode mode, std::uint64_t seed);

// Uniform random predictions over the target vocabulary.
ProbeMetrics random_baseline(const Corpus& val, ProbeTarget target, std::uint64_t seed);

// Throws kShapeMismatch when the corpus dims or vocabulary differ from the
// model's.
ProbeMetrics eval_probe(const ProbeModel& model, const Corpus& data);

// C x min(C, d): cosine between each class row of W1 and each right singular
// vector of W1, columns by descending singular value. Linear probes only.
Matrix probe_svd_alignment(const ProbeModel& model);

struct ProbeResultRow {
  std::string model_name;
  ProbeTarget target = ProbeTarget::kPos;
  std::string arch;  // "linear", "mlp" or "none" for the random baseline
  ProbeMode mode = ProbeMode::kStandard;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::uint64_t seed = 0;
};

// Columns: model_name,target,arch,mode,accuracy,macro_f1,seed
std::string probe_results_csv(const std::vector<ProbeResultRow>& rows);

struct SvdAlignment {
  ProbeTarget target = ProbeTarget::kPos;
  std::vector<std::string> classes;
  Matrix cosines;
};

// Columns: target,class,singular_index,cosine (singular_index is 1-based).
std::string svd_alignment_csv(const std::vector<SvdAlignment>& tables);

}  // namespace sentdecomp::probes
