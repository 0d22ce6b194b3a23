#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace sentdecomp {

using EmbeddingMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct TokenRecord {
  std::size_t sentence_id = 0;
  std::size_t position = 0;
  std::string word;
  std::size_t pos_id = 0;
  std::size_t dep_id = 0;

  bool operator==(const TokenRecord&) const = default;
};

// Contiguous token rows [begin, end) belonging to one sentence.
struct SentenceSpan {
  std::size_t sentence_id = 0;
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
};

// Token-aligned embeddings and labels. Row t of `contextual` and `static_emb`
// belongs to tokens[t]; rows are ordered by (sentence_id, position).
struct Corpus {
  std::vector<TokenRecord> tokens;
  EmbeddingMatrix contextual;
  EmbeddingMatrix static_emb;
  std::vector<std::string> pos_vocab;
  std::vector<std::string> dep_vocab;
  std::string model_name;
  std::size_t num_sentences = 0;
  // Manifest keys outside the version-1 core set (exporter provenance etc.),
  // carried through load/save untouched.
  nlohmann::json manifest_extras = nlohmann::json::object();

  std::size_t num_tokens() const { return tokens.size(); }
  std::size_t dim_contextual() const { return static_cast<std::size_t>(contextual.cols()); }
  std::size_t dim_static() const { return static_cast<std::size_t>(static_emb.cols()); }

  std::vector<SentenceSpan> sentences() const;

  bool operator==(const Corpus& other) const;
};

enum class LabelKind { kPos, kDep };

std::size_t label_of(const TokenRecord& token, LabelKind kind);
const std::vector<std::string>& vocab_of(const Corpus& corpus, LabelKind kind);
std::string_view to_string(LabelKind kind);

// Throws Error with the first violated invariant.
void validate_corpus(const Corpus& corpus);

Corpus load_corpus(const std::filesystem::path& dir);
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);

// Sentence delimiters and padding markers that some exporters keep as rows.
bool is_special_token(std::string_view word);

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct SplitSpec {
  double train_frac = 0.8;
  double val_frac = 0.1;
  double test_frac = 0.1;
  std::uint64_t seed = 0;
};

struct CorpusSplits {
  Corpus train;
  Corpus val;
  Corpus test;
};

// Whole-sentence partition. Split sizes are round(frac * n) for train and val,
// the remainder for test; a split with a positive fraction that would end up
// empty is an error. Sentence ids are preserved.
CorpusSplits split_corpus(const Corpus& corpus, const SplitSpec& spec);

// Sub-corpus containing the given sentences (indices into corpus.sentences()),
// kept in original order.
Corpus select_sentences(const Corpus& corpus, std::span<const std::size_t> sentence_indices);

// ---------------------------------------------------------------------------
// Synthetic corpora with a known dictionary
// ---------------------------------------------------------------------------

enum class SupportMode {
  // The other active atoms of a token share the dominant atom's label group.
  kLabelGrouped,
  // The other active atoms are drawn from all remaining atoms.
  kUniform,
};

struct SyntheticSpec {
  std::size_t k = 32;
  std::size_t d = 64;
  std::size_t n_sentences = 200;
  std::size_t tokens_per_sentence = 8;
  std::size_t active_atoms = 3;
  double noise_std = 0.0;
  std::uint64_t seed = 0;
  // 0 selects min(17, k / active_atoms) for grouped support, min(17, k) otherwise.
  std::size_t num_pos_labels = 0;
  SupportMode support = SupportMode::kLabelGrouped;
  double max_abs_cosine = 0.3;
};

struct GroundTruth {
  Eigen::MatrixXd dictionary;  // d x k, unit-norm columns
  Eigen::MatrixXd codes;       // k x T, exactly active_atoms nonzeros per column
  std::vector<bool> static_atom;
  std::size_t num_pos_labels = 0;
  std::size_t num_dep_labels = 0;

  std::size_t pos_label_of_atom(std::size_t atom) const { return atom % num_pos_labels; }
  std::size_t dep_label_of_atom(std::size_t atom) const {
    return (atom / num_pos_labels) % num_dep_labels;
  }
};

struct SyntheticCorpus {
  Corpus corpus;
  GroundTruth truth;
};

// Each token draws a dominant atom uniformly (coefficient in [2, 3]) plus
// active_atoms - 1 companions (coefficients in [0.25, 1]); x = D* z* + noise.
// pos_id is the dominant atom modulo the POS vocabulary size; the static row is
// D* applied to the code restricted to static atoms (the first ceil(k/2)).
SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

const std::vector<std::string>& universal_pos_tags();
const std::vector<std::string>& universal_dep_relations();

}  // namespace sentdecomp
