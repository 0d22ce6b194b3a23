#include <algorithm>
#include <cmath>
#include <numeric>

#include "sentdecomp/dictlearn.hpp"

namespace sentdecomp::dictlearn {

namespace {

constexpr std::size_t kBlock = 2048;

}  // namespace

Matrix encode_corpus(const DictModel& model, const Corpus& corpus) {
  const std::size_t n = corpus.num_tokens();
  Matrix codes(static_cast<Eigen::Index>(model.k()), static_cast<Eigen::Index>(n));
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < n; start += kBlock) {
    const std::size_t end = std::min(n, start + kBlock);
    rows.resize(end - start);
    std::iota(rows.begin(), rows.end(), start);
    const Batch batch = make_batch(corpus, rows);
    const BatchCodes c = encode_batch(model, batch.contextual);
    codes.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) = c.ctx + c.stat;
  }
  return codes;
}

std::vector<AtomLabel> atom_label_assignment(const DictModel& model, const Corpus& corpus, LabelKind kind,
                                             std::size_t top_n) {
  const std::size_t k = model.k();
  const std::size_t num_labels = vocab_of(corpus, kind).size();
  const Matrix codes = encode_corpus(model, corpus);
  std::vector<std::vector<std::size_t>> counts(k, std::vector<std::size_t>(num_labels, 0));

  std::vector<Eigen::Index> active;
  for (Eigen::Index t = 0; t < codes.cols(); ++t) {
    active.clear();
    for (Eigen::Index j = 0; j < codes.rows(); ++j) {
      if (codes(j, t) != 0.0) active.push_back(j);
    }
    const std::size_t keep = std::min(top_n, active.size());
    std::partial_sort(active.begin(), active.begin() + static_cast<std::ptrdiff_t>(keep), active.end(),
                      [&](Eigen::Index a, Eigen::Index b) {
                        const double ma = std::abs(codes(a, t));
                        const double mb = std::abs(codes(b, t));
                        return ma > mb || (ma == mb && a < b);
                      });
    const std::size_t label = label_of(corpus.tokens[static_cast<std::size_t>(t)], kind);
    for (std::size_t i = 0; i < keep; ++i) ++counts[static_cast<std::size_t>(active[i])][label];
  }

  std::vector<AtomLabel> out(k);
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t total = std::accumulate(counts[j].begin(), counts[j].end(), std::size_t{0});
    out[j].support = total;
    if (total == 0) continue;
    const auto best = std::max_element(counts[j].begin(), counts[j].end());
    out[j].label = static_cast<std::size_t>(best - counts[j].begin());
    out[j].confidence = static_cast<double>(*best) / static_cast<double>(total);
  }
  return out;
}

PosDeviation atom_pos_deviation(const DictModel& model, const Corpus& corpus) {
  const auto k = static_cast<Eigen::Index>(model.k());
  const auto num_pos = static_cast<Eigen::Index>(corpus.pos_vocab.size());
  const Matrix codes = encode_corpus(model, corpus);
  PosDeviation out;
  out.values = Matrix::Zero(k, num_pos);
  if (codes.cols() == 0) {
    for (Eigen::Index c = 0; c < num_pos; ++c) out.absent_classes.push_back(static_cast<std::size_t>(c));
    return out;
  }
  const Vector global_mean = codes.rowwise().mean();
  Matrix sums = Matrix::Zero(k, num_pos);
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_pos), 0);
  for (Eigen::Index t = 0; t < codes.cols(); ++t) {
    const std::size_t c = corpus.tokens[static_cast<std::size_t>(t)].pos_id;
    sums.col(static_cast<Eigen::Index>(c)) += codes.col(t);
    ++counts[c];
  }
  for (Eigen::Index c = 0; c < num_pos; ++c) {
    const std::size_t n = counts[static_cast<std::size_t>(c)];
    if (n == 0) {
      out.absent_classes.push_back(static_cast<std::size_t>(c));
      continue;
    }
    out.values.col(c) = sums.col(c) / static_cast<double>(n) - global_mean;
  }
  return out;
}

Matrix atom_orthogonality(const DictModel& model) {
  Matrix atoms = model[DictModel::kDict];
  for (Eigen::Index j = 0; j < atoms.cols(); ++j) {
    const double norm = atoms.col(j).norm();
    if (norm == 0.0) {
      throw Error(ErrorCode::kDegenerate, "dictlearn", "atom " + std::to_string(j) + " has zero norm");
    }
    atoms.col(j) /= norm;
  }
  Matrix gram = atoms.transpose() * atoms;
  gram = (0.5 * (gram + gram.transpose())).cwiseMax(-1.0).cwiseMin(1.0);
  gram.diagonal().setOnes();
  return gram;
}

}  // namespace sentdecomp::dictlearn
