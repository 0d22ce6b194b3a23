#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "sentdecomp/corpus.hpp"
#include "sentdecomp/dictlearn.hpp"

// Mean-pooling algebra over a trained dictionary. With z the combined code of
// a token, s = mean x_t, z_bar = mean z_t and s_hat = D z_bar, the contribution
// of atom k is a_k = z_bar_k <d_k, s>, so sum_k a_k = <s_hat, s>.
// Special tokens (see is_special_token) are left out of every analysis here.
namespace sentdecomp::attribution {

using dictlearn::DictModel;
using numkit::Matrix;
using numkit::Vector;

struct PooledSentence {
  std::size_t sentence_id = 0;
  std::size_t num_tokens = 0;  // tokens that entered the mean
  Vector s;                    // d
  Vector z_bar;                // k
  Vector s_hat;                // D z_bar
};

// Throws kInvalidArgument when the sentence is absent or has only special tokens.
PooledSentence pool_sentence(const DictModel& model, const Corpus& corpus, std::size_t sentence_id);

// Every sentence with at least one regular token, in corpus order.
std::vector<PooledSentence> pool_corpus(const DictModel& model, const Corpus& corpus);

enum class Scope { kSentence, kCorpusAverage };

enum class NormalizationOrder {
  kAverageThenNormalize,  // normalize the mean of the per-sentence a vectors
  kNormalizeThenAverage,  // mean of per-sentence a_norm, degenerate sentences skipped
};

std::string_view to_string(NormalizationOrder order);
NormalizationOrder parse_normalization_order(std::string_view name);

// Below this |sum a| the normalization is reported as degenerate.
constexpr double kDegenerateSum = 1e-12;

struct AttributionReport {
  Vector a;
  Vector a_norm;            // zeros when degenerate
  bool degenerate = false;
  Scope scope = Scope::kSentence;
  std::size_t sentences = 1;
};

AttributionReport atom_contributions(const PooledSentence& pooled, const DictModel& model);

// Throws kInvalidArgument when no sentence can be pooled.
AttributionReport corpus_contributions(const DictModel& model, const Corpus& corpus,
                                       NormalizationOrder order = NormalizationOrder::kAverageThenNormalize);

struct AtomStats {
  Vector mean;
  Vector variance;  // population variance
};

AtomStats atom_stats(const DictModel& model, const Corpus& corpus);

struct ClassFractions {
  Matrix pi;                            // k x C; row j sums to 1 unless flagged
  std::vector<std::size_t> zero_rows;  // atoms with no activation mass
};

// pi(j, c) = sum of |z_tj| over tokens of class c / sum of |z_tj| over all tokens.
ClassFractions class_fractions(const DictModel& model, const Corpus& corpus, LabelKind kind);

struct ClassAttribution {
  LabelKind kind = LabelKind::kPos;
  std::vector<std::string> classes;
  Vector shares;  // sums to 1
  ClassFractions fractions;
  AttributionReport atoms;  // corpus-level contributions the shares are built from
};

// share(c) = sum_j pi(j, c) a_norm_j, renormalized to sum to 1. Throws
// kDegenerate when the corpus-level normalization is degenerate.
ClassAttribution class_attribution(const DictModel& model, const Corpus& corpus, LabelKind kind,
                                   NormalizationOrder order = NormalizationOrder::kAverageThenNormalize);

// Columns: atom,mean,variance
std::string atom_stats_csv(const AtomStats& stats);
// Columns: atom,a,a_norm
std::string atom_contributions_csv(const AttributionReport& report);
// Columns: class,share
std::string class_attribution_csv(const ClassAttribution& attribution);

}  // namespace sentdecomp::attribution
