#include "sentdecomp/attribution.hpp"

#include <cmath>
#include <numeric>

#include "sentdecomp/csv.hpp"
#include "sentdecomp/error.hpp"

namespace sentdecomp::attribution {

namespace {

constexpr const char* kModule = "attribution";

[[noreturn]] void fail(ErrorCode code, const std::string& what) { throw Error(code, kModule, what); }

std::vector<std::size_t> regular_rows(const Corpus& corpus, const SentenceSpan& span) {
  std::vector<std::size_t> rows;
  for (std::size_t r = span.begin; r < span.end; ++r) {
    if (!is_special_token(corpus.tokens[r].word)) rows.push_back(r);
  }
  return rows;
}

std::vector<std::size_t> all_regular_rows(const Corpus& corpus) {
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < corpus.num_tokens(); ++r) {
    if (!is_special_token(corpus.tokens[r].word)) rows.push_back(r);
  }
  return rows;
}

// k x n combined codes for the given token rows.
Matrix codes_for(const DictModel& model, const Corpus& corpus, std::span<const std::size_t> rows) {
  const dictlearn::Batch batch = dictlearn::make_batch(corpus, rows);
  const dictlearn::BatchCodes codes = dictlearn::encode_batch(model, batch.contextual);
  return codes.ctx + codes.stat;
}

PooledSentence pool_rows(const DictModel& model, const Corpus& corpus, std::size_t sentence_id,
                         std::span<const std::size_t> rows) {
  const dictlearn::Batch batch = dictlearn::make_batch(corpus, rows);
  const dictlearn::BatchCodes codes = dictlearn::encode_batch(model, batch.contextual);
  PooledSentence p;
  p.sentence_id = sentence_id;
  p.num_tokens = rows.size();
  p.s = batch.contextual.rowwise().mean();
  p.z_bar = (codes.ctx + codes.stat).rowwise().mean();
  p.s_hat = model[DictModel::kDict] * p.z_bar;
  return p;
}

void normalize(AttributionReport& report) {
  const double total = report.a.sum();
  report.degenerate = !(std::abs(total) > kDegenerateSum);
  report.a_norm = report.degenerate ? Vector::Zero(report.a.size()) : Vector(report.a / total);
}

void check_model(const DictModel& model, const Corpus& corpus) {
  if (model.dim_contextual() != corpus.dim_contextual()) {
    fail(ErrorCode::kShapeMismatch, "model and corpus dimensions differ");
  }
}

}  // namespace

std::string_view to_string(NormalizationOrder order) {
  return order == NormalizationOrder::kAverageThenNormalize ? "average_then_normalize" : "normalize_then_average";
}

NormalizationOrder parse_normalization_order(std::string_view name) {
  if (name == "average_then_normalize") return NormalizationOrder::kAverageThenNormalize;
  if (name == "normalize_then_average") return NormalizationOrder::kNormalizeThenAverage;
  fail(ErrorCode::kConfig, "unknown normalization order '" + std::string(name) + "'");
}

PooledSentence pool_sentence(const DictModel& model, const Corpus& corpus, std::size_t sentence_id) {
  check_model(model, corpus);
  for (const SentenceSpan& span : corpus.sentences()) {
    if (span.sentence_id != sentence_id) continue;
    const std::vector<std::size_t> rows = regular_rows(corpus, span);
    if (rows.empty()) fail(ErrorCode::kInvalidArgument, "sentence " + std::to_string(sentence_id) + " has no regular tokens");
    return pool_rows(model, corpus, sentence_id, rows);
  }
  fail(ErrorCode::kInvalidArgument, "no sentence with id " + std::to_string(sentence_id));
}

std::vector<PooledSentence> pool_corpus(const DictModel& model, const Corpus& corpus) {
  check_model(model, corpus);
  std::vector<PooledSentence> out;
  for (const SentenceSpan& span : corpus.sentences()) {
    const std::vector<std::size_t> rows = regular_rows(corpus, span);
    if (!rows.empty()) out.push_back(pool_rows(model, corpus, span.sentence_id, rows));
  }
  return out;
}

AttributionReport atom_contributions(const PooledSentence& pooled, const DictModel& model) {
  const Matrix& dict = model[DictModel::kDict];
  if (pooled.z_bar.size() != dict.cols() || pooled.s.size() != dict.rows()) {
    fail(ErrorCode::kShapeMismatch, "pooled sentence does not match the model");
  }
  AttributionReport report;
  report.a = pooled.z_bar.cwiseProduct(dict.transpose() * pooled.s);
  if (!report.a.allFinite()) fail(ErrorCode::kNonFinite, "atom contributions are not finite");
  normalize(report);
  return report;
}

AttributionReport corpus_contributions(const DictModel& model, const Corpus& corpus, NormalizationOrder order) {
  const std::vector<PooledSentence> pooled = pool_corpus(model, corpus);
  if (pooled.empty()) fail(ErrorCode::kInvalidArgument, "no sentence to pool");
  const auto k = static_cast<Eigen::Index>(model.k());
  AttributionReport report;
  report.scope = Scope::kCorpusAverage;
  report.sentences = pooled.size();
  report.a = Vector::Zero(k);
  Vector norm_sum = Vector::Zero(k);
  std::size_t usable = 0;
  for (const PooledSentence& p : pooled) {
    const AttributionReport one = atom_contributions(p, model);
    report.a += one.a;
    if (!one.degenerate) {
      norm_sum += one.a_norm;
      ++usable;
    }
  }
  report.a /= static_cast<double>(pooled.size());
  if (order == NormalizationOrder::kAverageThenNormalize) {
    normalize(report);
  } else {
    report.degenerate = usable == 0;
    report.a_norm = usable == 0 ? Vector::Zero(k) : Vector(norm_sum / static_cast<double>(usable));
  }
  return report;
}

AtomStats atom_stats(const DictModel& model, const Corpus& corpus) {
  check_model(model, corpus);
  const std::vector<std::size_t> rows = all_regular_rows(corpus);
  const auto k = static_cast<Eigen::Index>(model.k());
  AtomStats stats{Vector::Zero(k), Vector::Zero(k)};
  if (rows.empty()) return stats;
  const Matrix z = codes_for(model, corpus, rows);
  stats.mean = z.rowwise().mean();
  stats.variance = (z.colwise() - stats.mean).array().square().rowwise().mean();
  return stats;
}

ClassFractions class_fractions(const DictModel& model, const Corpus& corpus, LabelKind kind) {
  check_model(model, corpus);
  const auto k = static_cast<Eigen::Index>(model.k());
  const auto num_classes = static_cast<Eigen::Index>(vocab_of(corpus, kind).size());
  ClassFractions out;
  Matrix mass = Matrix::Zero(k, num_classes);
  const std::vector<std::size_t> rows = all_regular_rows(corpus);
  if (!rows.empty()) {
    const Matrix z = codes_for(model, corpus, rows).cwiseAbs();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto c = static_cast<Eigen::Index>(label_of(corpus.tokens[rows[i]], kind));
      mass.col(c) += z.col(static_cast<Eigen::Index>(i));
    }
  }
  out.pi = Matrix::Zero(k, num_classes);
  for (Eigen::Index j = 0; j < k; ++j) {
    const double total = mass.row(j).sum();
    if (total > 0.0) {
      out.pi.row(j) = mass.row(j) / total;
    } else {
      out.zero_rows.push_back(static_cast<std::size_t>(j));
    }
  }
  return out;
}

ClassAttribution class_attribution(const DictModel& model, const Corpus& corpus, LabelKind kind,
                                   NormalizationOrder order) {
  ClassAttribution out;
  out.kind = kind;
  out.classes = vocab_of(corpus, kind);
  out.atoms = corpus_contributions(model, corpus, order);
  if (out.atoms.degenerate) fail(ErrorCode::kDegenerate, "corpus-level contributions sum to zero");
  out.fractions = class_fractions(model, corpus, kind);
  Vector shares = out.fractions.pi.transpose() * out.atoms.a_norm;
  const double total = shares.sum();
  if (!(std::abs(total) > kDegenerateSum)) fail(ErrorCode::kDegenerate, "class shares sum to zero");
  out.shares = shares / total;
  return out;
}

std::string atom_stats_csv(const AtomStats& stats) {
  std::string out = csv_row({"atom", "mean", "variance"});
  for (Eigen::Index j = 0; j < stats.mean.size(); ++j) {
    out += csv_row({std::to_string(j), format_number(stats.mean(j)), format_number(stats.variance(j))});
  }
  return out;
}

std::string atom_contributions_csv(const AttributionReport& report) {
  std::string out = csv_row({"atom", "a", "a_norm"});
  for (Eigen::Index j = 0; j < report.a.size(); ++j) {
    out += csv_row({std::to_string(j), format_number(report.a(j)),
                    report.degenerate ? std::string("nan") : format_number(report.a_norm(j))});
  }
  return out;
}

std::string class_attribution_csv(const ClassAttribution& attribution) {
  std::string out = csv_row({"class", "share"});
  for (std::size_t c = 0; c < attribution.classes.size(); ++c) {
    out += csv_row({attribution.classes[c], format_number(attribution.shares(static_cast<Eigen::Index>(c)))});
  }
  return out;
}

}  // namespace sentdecomp::attribution
