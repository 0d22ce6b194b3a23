#include "sentdecomp/corpus.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <sstream>

#include "sentdecomp/blob_io.hpp"
#include "sentdecomp/error.hpp"
#include "sentdecomp/random.hpp"

namespace sentdecomp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kModule = "corpus-io";
constexpr int kFormatVersion = 1;
constexpr const char* kTokensHeader = "sentence_id\tposition\tword\tpos_id\tdep_id";

const char* const kCoreManifestKeys[] = {"version",     "model_name",    "dim_contextual",
                                         "dim_static",  "num_tokens",    "num_sentences",
                                         "pos_vocab",   "dep_vocab"};

[[noreturn]] void fail(ErrorCode code, const std::string& message) {
  throw Error(code, kModule, message);
}

std::size_t parse_index(std::string_view field, std::size_t line_no, const char* column) {
  std::size_t value = 0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
    fail(ErrorCode::kInvalidFormat, "tokens.tsv line " + std::to_string(line_no) + ": bad " +
                                        column + " '" + std::string(field) + "'");
  }
  return value;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

std::size_t manifest_count(const json& manifest, const char* key) {
  if (!manifest.contains(key) || !manifest[key].is_number_integer() ||
      manifest[key].get<long long>() < 0) {
    fail(ErrorCode::kInvalidFormat, std::string("manifest key '") + key +
                                        "' missing or not a non-negative integer");
  }
  return manifest[key].get<std::size_t>();
}

std::vector<std::string> manifest_vocab(const json& manifest, const char* key) {
  if (!manifest.contains(key) || !manifest[key].is_array()) {
    fail(ErrorCode::kInvalidFormat, std::string("manifest key '") + key + "' missing or not an array");
  }
  std::vector<std::string> vocab;
  for (const json& entry : manifest[key]) {
    if (!entry.is_string()) fail(ErrorCode::kInvalidFormat, std::string(key) + " has a non-string entry");
    vocab.push_back(entry.get<std::string>());
  }
  return vocab;
}

EmbeddingMatrix to_matrix(const std::vector<float>& values, std::size_t rows, std::size_t cols) {
  EmbeddingMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  std::copy(values.begin(), values.end(), m.data());
  return m;
}

}  // namespace

std::size_t label_of(const TokenRecord& token, LabelKind kind) {
  return kind == LabelKind::kPos ? token.pos_id : token.dep_id;
}

const std::vector<std::string>& vocab_of(const Corpus& corpus, LabelKind kind) {
  return kind == LabelKind::kPos ? corpus.pos_vocab : corpus.dep_vocab;
}

std::string_view to_string(LabelKind kind) { return kind == LabelKind::kPos ? "pos" : "dep"; }

bool is_special_token(std::string_view word) {
  static const std::string_view kSpecial[] = {"[CLS]", "[SEP]", "[PAD]", "<s>", "</s>", "<pad>"};
  return std::find(std::begin(kSpecial), std::end(kSpecial), word) != std::end(kSpecial);
}

std::vector<SentenceSpan> Corpus::sentences() const {
  std::vector<SentenceSpan> spans;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (spans.empty() || spans.back().sentence_id != tokens[t].sentence_id) {
      spans.push_back(SentenceSpan{tokens[t].sentence_id, t, t + 1});
    } else {
      spans.back().end = t + 1;
    }
  }
  return spans;
}

bool Corpus::operator==(const Corpus& other) const {
  auto same_bits = [](const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::equal(a.data(), a.data() + a.size(), b.data(), [](float x, float y) {
             return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y);
           });
  };
  return tokens == other.tokens && same_bits(contextual, other.contextual) &&
         same_bits(static_emb, other.static_emb) && pos_vocab == other.pos_vocab &&
         dep_vocab == other.dep_vocab && model_name == other.model_name &&
         num_sentences == other.num_sentences && manifest_extras == other.manifest_extras;
}

void validate_corpus(const Corpus& corpus) {
  const auto t = static_cast<Eigen::Index>(corpus.tokens.size());
  if (corpus.contextual.rows() != t || corpus.static_emb.rows() != t) {
    fail(ErrorCode::kDimensionMismatch,
         "row counts differ: tokens=" + std::to_string(t) +
             " contextual=" + std::to_string(corpus.contextual.rows()) +
             " static=" + std::to_string(corpus.static_emb.rows()));
  }
  if (!corpus.contextual.allFinite()) fail(ErrorCode::kNonFinite, "contextual embeddings contain NaN/Inf");
  if (!corpus.static_emb.allFinite()) fail(ErrorCode::kNonFinite, "static embeddings contain NaN/Inf");

  std::size_t groups = 0;
  for (std::size_t i = 0; i < corpus.tokens.size(); ++i) {
    const TokenRecord& tok = corpus.tokens[i];
    const std::string where = "token " + std::to_string(i);
    if (tok.word.empty()) fail(ErrorCode::kInvalidFormat, where + ": empty word");
    if (tok.word.find_first_of("\t\n\r") != std::string::npos) {
      fail(ErrorCode::kInvalidFormat, where + ": word contains tab or newline");
    }
    if (tok.pos_id >= corpus.pos_vocab.size()) {
      fail(ErrorCode::kLabelRange, where + ": pos_id " + std::to_string(tok.pos_id) +
                                       " >= pos_vocab size " + std::to_string(corpus.pos_vocab.size()));
    }
    if (tok.dep_id >= corpus.dep_vocab.size()) {
      fail(ErrorCode::kLabelRange, where + ": dep_id " + std::to_string(tok.dep_id) +
                                       " >= dep_vocab size " + std::to_string(corpus.dep_vocab.size()));
    }
    const bool starts_sentence = i == 0 || corpus.tokens[i - 1].sentence_id != tok.sentence_id;
    if (starts_sentence) {
      if (i > 0 && tok.sentence_id < corpus.tokens[i - 1].sentence_id) {
        fail(ErrorCode::kInvalidFormat, where + ": sentences out of order");
      }
      if (tok.position != 0) fail(ErrorCode::kInvalidFormat, where + ": sentence does not start at position 0");
      ++groups;
    } else if (tok.position != corpus.tokens[i - 1].position + 1) {
      fail(ErrorCode::kInvalidFormat, where + ": position gap or disorder within sentence");
    }
  }
  if (groups != corpus.num_sentences) {
    fail(ErrorCode::kDimensionMismatch, "num_sentences=" + std::to_string(corpus.num_sentences) +
                                            " but tokens form " + std::to_string(groups) + " sentences");
  }
}

Corpus load_corpus(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  std::error_code ec;
  if (!fs::is_regular_file(manifest_path, ec)) {
    fail(ErrorCode::kMissingFile, "missing " + manifest_path.string());
  }
  json manifest;
  try {
    manifest = json::parse(read_text_file(manifest_path, kModule));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kInvalidFormat, std::string("manifest.json: ") + e.what());
  }
  if (!manifest.is_object()) fail(ErrorCode::kInvalidFormat, "manifest.json is not an object");
  if (manifest_count(manifest, "version") != kFormatVersion) {
    fail(ErrorCode::kInvalidFormat, "unsupported corpus format version");
  }

  Corpus corpus;
  if (!manifest.contains("model_name") || !manifest["model_name"].is_string()) {
    fail(ErrorCode::kInvalidFormat, "manifest key 'model_name' missing or not a string");
  }
  corpus.model_name = manifest["model_name"].get<std::string>();
  const std::size_t dim_ctx = manifest_count(manifest, "dim_contextual");
  const std::size_t dim_static = manifest_count(manifest, "dim_static");
  const std::size_t num_tokens = manifest_count(manifest, "num_tokens");
  corpus.num_sentences = manifest_count(manifest, "num_sentences");
  corpus.pos_vocab = manifest_vocab(manifest, "pos_vocab");
  corpus.dep_vocab = manifest_vocab(manifest, "dep_vocab");
  for (auto it = manifest.begin(); it != manifest.end(); ++it) {
    if (std::find(std::begin(kCoreManifestKeys), std::end(kCoreManifestKeys), it.key()) ==
        std::end(kCoreManifestKeys)) {
      corpus.manifest_extras[it.key()] = it.value();
    }
  }

  const std::string tsv = read_text_file(dir / "tokens.tsv", kModule);
  std::istringstream lines(tsv);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line == kTokensHeader) continue;
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 5) {
      fail(ErrorCode::kInvalidFormat, "tokens.tsv line " + std::to_string(line_no) + ": expected 5 columns");
    }
    TokenRecord tok;
    tok.sentence_id = parse_index(fields[0], line_no, "sentence_id");
    tok.position = parse_index(fields[1], line_no, "position");
    tok.word = std::string(fields[2]);
    tok.pos_id = parse_index(fields[3], line_no, "pos_id");
    tok.dep_id = parse_index(fields[4], line_no, "dep_id");
    corpus.tokens.push_back(std::move(tok));
  }
  if (corpus.tokens.size() != num_tokens) {
    fail(ErrorCode::kDimensionMismatch, "manifest num_tokens=" + std::to_string(num_tokens) +
                                            " but tokens.tsv has " + std::to_string(corpus.tokens.size()));
  }

  corpus.contextual =
      to_matrix(read_f32_blob(dir / "contextual.f32", num_tokens * dim_ctx, kModule), num_tokens, dim_ctx);
  corpus.static_emb =
      to_matrix(read_f32_blob(dir / "static.f32", num_tokens * dim_static, kModule), num_tokens, dim_static);

  validate_corpus(corpus);
  return corpus;
}

void save_corpus(const Corpus& corpus, const fs::path& dir) {
  validate_corpus(corpus);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());

  json manifest = corpus.manifest_extras.is_object() ? corpus.manifest_extras : json::object();
  manifest["version"] = kFormatVersion;
  manifest["model_name"] = corpus.model_name;
  manifest["dim_contextual"] = corpus.dim_contextual();
  manifest["dim_static"] = corpus.dim_static();
  manifest["num_tokens"] = corpus.num_tokens();
  manifest["num_sentences"] = corpus.num_sentences;
  manifest["pos_vocab"] = corpus.pos_vocab;
  manifest["dep_vocab"] = corpus.dep_vocab;
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n", kModule);

  std::string tsv = std::string(kTokensHeader) + "\n";
  for (const TokenRecord& tok : corpus.tokens) {
    tsv += std::to_string(tok.sentence_id) + '\t' + std::to_string(tok.position) + '\t' + tok.word +
           '\t' + std::to_string(tok.pos_id) + '\t' + std::to_string(tok.dep_id) + '\n';
  }
  write_text_file(dir / "tokens.tsv", tsv, kModule);

  write_f32_blob(dir / "contextual.f32",
                 std::span<const float>(corpus.contextual.data(), static_cast<std::size_t>(corpus.contextual.size())),
                 kModule);
  write_f32_blob(dir / "static.f32",
                 std::span<const float>(corpus.static_emb.data(), static_cast<std::size_t>(corpus.static_emb.size())),
                 kModule);
}

Corpus select_sentences(const Corpus& corpus, std::span<const std::size_t> sentence_indices) {
  const std::vector<SentenceSpan> spans = corpus.sentences();
  std::vector<std::size_t> chosen(sentence_indices.begin(), sentence_indices.end());
  std::sort(chosen.begin(), chosen.end());
  chosen.erase(std::unique(chosen.begin(), chosen.end()), chosen.end());

  std::size_t rows = 0;
  for (std::size_t s : chosen) {
    if (s >= spans.size()) fail(ErrorCode::kInvalidArgument, "sentence index out of range");
    rows += spans[s].size();
  }

  Corpus out;
  out.pos_vocab = corpus.pos_vocab;
  out.dep_vocab = corpus.dep_vocab;
  out.model_name = corpus.model_name;
  out.manifest_extras = corpus.manifest_extras;
  out.num_sentences = chosen.size();
  out.contextual.resize(static_cast<Eigen::Index>(rows), corpus.contextual.cols());
  out.static_emb.resize(static_cast<Eigen::Index>(rows), corpus.static_emb.cols());
  out.tokens.reserve(rows);
  Eigen::Index row = 0;
  for (std::size_t s : chosen) {
    const SentenceSpan& span = spans[s];
    const auto n = static_cast<Eigen::Index>(span.size());
    const auto begin = static_cast<Eigen::Index>(span.begin);
    out.contextual.middleRows(row, n) = corpus.contextual.middleRows(begin, n);
    out.static_emb.middleRows(row, n) = corpus.static_emb.middleRows(begin, n);
    out.tokens.insert(out.tokens.end(), corpus.tokens.begin() + static_cast<std::ptrdiff_t>(span.begin),
                      corpus.tokens.begin() + static_cast<std::ptrdiff_t>(span.end));
    row += n;
  }
  return out;
}

CorpusSplits split_corpus(const Corpus& corpus, const SplitSpec& spec) {
  const double fracs[] = {spec.train_frac, spec.val_frac, spec.test_frac};
  for (double f : fracs) {
    if (!(f >= 0.0 && f < 1.0)) fail(ErrorCode::kInvalidArgument, "split fractions must lie in [0, 1)");
  }
  if (spec.train_frac <= 0.0) fail(ErrorCode::kInvalidArgument, "train fraction must be positive");
  if (std::abs(spec.train_frac + spec.val_frac + spec.test_frac - 1.0) > 1e-9) {
    fail(ErrorCode::kInvalidArgument, "split fractions must sum to 1");
  }
  const std::size_t n = corpus.sentences().size();
  if (n < 3) fail(ErrorCode::kInvalidArgument, "splitting needs at least 3 sentences");

  const auto n_train = static_cast<std::size_t>(std::llround(spec.train_frac * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(spec.val_frac * static_cast<double>(n)));
  if (n_train + n_val > n) fail(ErrorCode::kInvalidArgument, "split fractions over-allocate sentences");
  const std::size_t n_test = n - n_train - n_val;
  const std::size_t sizes[] = {n_train, n_val, n_test};
  for (int i = 0; i < 3; ++i) {
    if (fracs[i] > 0.0 && sizes[i] == 0) {
      fail(ErrorCode::kInvalidArgument, "a split with positive fraction would be empty");
    }
  }
  if (spec.test_frac == 0.0 && n_test != 0) {
    fail(ErrorCode::kInvalidArgument, "test fraction is zero but rounding leaves test sentences");
  }

  Rng rng(spec.seed);
  const std::vector<std::size_t> order = rng.permutation(n);
  const auto first = order.begin();
  const std::vector<std::size_t> train(first, first + static_cast<std::ptrdiff_t>(n_train));
  const std::vector<std::size_t> val(first + static_cast<std::ptrdiff_t>(n_train),
                                     first + static_cast<std::ptrdiff_t>(n_train + n_val));
  const std::vector<std::size_t> test(first + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  return CorpusSplits{select_sentences(corpus, train), select_sentences(corpus, val),
                      select_sentences(corpus, test)};
}

const std::vector<std::string>& universal_pos_tags() {
  static const std::vector<std::string> tags = {"ADJ",  "ADP",   "ADV",  "AUX",   "CCONJ", "DET",
                                                "INTJ", "NOUN",  "NUM",  "PART",  "PRON",  "PROPN",
                                                "PUNCT", "SCONJ", "SYM", "VERB",  "X"};
  return tags;
}

const std::vector<std::string>& universal_dep_relations() {
  static const std::vector<std::string> rels = {
      "root",  "nsubj", "obj",   "amod", "advmod", "det",   "case",     "nmod",  "obl",
      "conj",  "cc",    "aux",   "mark", "compound", "punct", "nummod", "xcomp", "ccomp",
      "acl",   "advcl", "appos", "cop",  "iobj",  "expl",  "flat",     "fixed", "parataxis",
      "csubj", "dep",   "discourse", "vocative", "orphan", "list", "goeswith", "reparandum",
      "dislocated", "clf"};
  return rels;
}

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  if (spec.k == 0 || spec.d == 0) fail(ErrorCode::kInvalidArgument, "k and d must be positive");
  if (spec.active_atoms == 0 || spec.active_atoms > spec.k) {
    fail(ErrorCode::kInvalidArgument, "active_atoms must lie in [1, k]");
  }
  if (spec.k > 4 * spec.d) fail(ErrorCode::kInvalidArgument, "k must not exceed 4 * d");
  if (!(spec.noise_std >= 0.0)) fail(ErrorCode::kInvalidArgument, "noise_std must be non-negative");
  if (spec.n_sentences == 0 || spec.tokens_per_sentence == 0) {
    fail(ErrorCode::kInvalidArgument, "need at least one sentence and one token per sentence");
  }

  const bool grouped = spec.support == SupportMode::kLabelGrouped;
  std::size_t num_pos = spec.num_pos_labels;
  if (num_pos == 0) {
    num_pos = grouped ? std::max<std::size_t>(1, std::min<std::size_t>(17, spec.k / spec.active_atoms))
                      : std::min<std::size_t>(17, spec.k);
  }
  if (num_pos > spec.k) fail(ErrorCode::kInvalidArgument, "more POS labels than atoms");
  if (grouped && spec.k / num_pos < spec.active_atoms) {
    fail(ErrorCode::kInfeasible, "label groups are smaller than active_atoms");
  }
  const std::size_t num_dep = (spec.k + num_pos - 1) / num_pos;

  Rng rng(spec.seed);
  GroundTruth truth;
  truth.num_pos_labels = num_pos;
  truth.num_dep_labels = num_dep;
  truth.dictionary = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(spec.d), static_cast<Eigen::Index>(spec.k));
  constexpr int kMaxTriesPerAtom = 2000;
  for (std::size_t j = 0; j < spec.k; ++j) {
    const auto col = static_cast<Eigen::Index>(j);
    bool placed = false;
    for (int attempt = 0; attempt < kMaxTriesPerAtom && !placed; ++attempt) {
      Eigen::VectorXd candidate(static_cast<Eigen::Index>(spec.d));
      for (Eigen::Index r = 0; r < candidate.size(); ++r) candidate(r) = rng.normal();
      candidate.normalize();
      placed = true;
      for (Eigen::Index prev = 0; prev < col && placed; ++prev) {
        placed = std::abs(candidate.dot(truth.dictionary.col(prev))) <= spec.max_abs_cosine;
      }
      if (placed) truth.dictionary.col(col) = candidate;
    }
    if (!placed) {
      fail(ErrorCode::kInfeasible, "could not place atom " + std::to_string(j) + " with |cos| <= " +
                                       std::to_string(spec.max_abs_cosine) + " after " +
                                       std::to_string(kMaxTriesPerAtom) + " tries");
    }
  }
  truth.static_atom.assign(spec.k, false);
  for (std::size_t j = 0; j < (spec.k + 1) / 2; ++j) truth.static_atom[j] = true;

  std::vector<std::vector<std::size_t>> groups(num_pos);
  for (std::size_t j = 0; j < spec.k; ++j) groups[j % num_pos].push_back(j);

  const std::size_t total = spec.n_sentences * spec.tokens_per_sentence;
  truth.codes = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(spec.k), static_cast<Eigen::Index>(total));

  Corpus corpus;
  corpus.model_name = "synthetic";
  corpus.num_sentences = spec.n_sentences;
  corpus.pos_vocab.resize(num_pos);
  for (std::size_t c = 0; c < num_pos; ++c) {
    corpus.pos_vocab[c] = c < universal_pos_tags().size() ? universal_pos_tags()[c] : "POS" + std::to_string(c);
  }
  corpus.dep_vocab.resize(num_dep);
  for (std::size_t c = 0; c < num_dep; ++c) {
    corpus.dep_vocab[c] =
        c < universal_dep_relations().size() ? universal_dep_relations()[c] : "dep" + std::to_string(c);
  }
  corpus.contextual.resize(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(spec.d));
  corpus.static_emb.resize(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(spec.d));
  corpus.tokens.reserve(total);

  Eigen::VectorXd static_mask(static_cast<Eigen::Index>(spec.k));
  for (std::size_t j = 0; j < spec.k; ++j) static_mask(static_cast<Eigen::Index>(j)) = truth.static_atom[j] ? 1.0 : 0.0;

  std::size_t t = 0;
  for (std::size_t s = 0; s < spec.n_sentences; ++s) {
    for (std::size_t p = 0; p < spec.tokens_per_sentence; ++p, ++t) {
      const auto col = static_cast<Eigen::Index>(t);
      const std::size_t dominant = static_cast<std::size_t>(rng.uniform_index(spec.k));
      truth.codes(static_cast<Eigen::Index>(dominant), col) = rng.uniform(2.0, 3.0);

      std::vector<std::size_t> pool;
      if (grouped) {
        for (std::size_t j : groups[dominant % num_pos]) {
          if (j != dominant) pool.push_back(j);
        }
      } else {
        for (std::size_t j = 0; j < spec.k; ++j) {
          if (j != dominant) pool.push_back(j);
        }
      }
      for (std::size_t a = 1; a < spec.active_atoms; ++a) {
        const std::size_t pick = static_cast<std::size_t>(rng.uniform_index(pool.size()));
        truth.codes(static_cast<Eigen::Index>(pool[pick]), col) = rng.uniform(0.25, 1.0);
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
      }

      Eigen::VectorXd x = truth.dictionary * truth.codes.col(col);
      if (spec.noise_std > 0.0) {
        for (Eigen::Index r = 0; r < x.size(); ++r) x(r) += spec.noise_std * rng.normal();
      }
      const Eigen::VectorXd w = truth.dictionary * truth.codes.col(col).cwiseProduct(static_mask);
      corpus.contextual.row(col) = x.cast<float>().transpose();
      corpus.static_emb.row(col) = w.cast<float>().transpose();

      TokenRecord tok;
      tok.sentence_id = s;
      tok.position = p;
      tok.word = "atom" + std::to_string(dominant);
      tok.pos_id = truth.pos_label_of_atom(dominant);
      tok.dep_id = truth.dep_label_of_atom(dominant);
      corpus.tokens.push_back(std::move(tok));
    }
  }
  validate_corpus(corpus);
  return SyntheticCorpus{std::move(corpus), std::move(truth)};
}

}  // namespace sentdecomp
