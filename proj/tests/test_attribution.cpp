#include <cmath>

#include <gtest/gtest.h>

#include "dict_fixtures.hpp"
#include "sentdecomp/attribution.hpp"
#include "test_util.hpp"

namespace sentdecomp::attribution {
namespace {

using dictlearn::Nonlinearity;
using testing::error_code_of;

struct Tok {
  std::size_t sentence;
  std::vector<float> x;
  std::size_t pos = 0;
  std::string word = "w";
};

Corpus make_corpus(const std::vector<Tok>& toks, std::vector<std::string> pos_vocab = {"NOUN", "VERB", "ADJ"}) {
  Corpus c;
  c.model_name = "fixture";
  c.pos_vocab = std::move(pos_vocab);
  c.dep_vocab = {"root", "nsubj"};
  const auto d = static_cast<Eigen::Index>(toks.front().x.size());
  c.contextual.resize(static_cast<Eigen::Index>(toks.size()), d);
  c.static_emb = Eigen::MatrixXf::Zero(static_cast<Eigen::Index>(toks.size()), 1);
  std::size_t position = 0;
  for (std::size_t t = 0; t < toks.size(); ++t) {
    position = (t > 0 && toks[t - 1].sentence == toks[t].sentence) ? position + 1 : 0;
    c.tokens.push_back({toks[t].sentence, position, toks[t].word, toks[t].pos, 0});
    for (Eigen::Index j = 0; j < d; ++j) c.contextual(static_cast<Eigen::Index>(t), j) = toks[t].x[static_cast<std::size_t>(j)];
  }
  c.num_sentences = toks.back().sentence + 1;
  validate_corpus(c);
  return c;
}

// z = x and D = I, so every reconstruction is exact.
DictModel identity_model(std::size_t d, std::size_t num_pos = 3) {
  DictModel m = DictModel::zeros(d, d, 1, num_pos, 2, Nonlinearity::kIdentity);
  m[DictModel::kEncCtx] = Matrix::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  m[DictModel::kDict] = Matrix::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  return m;
}

Vector row(const Corpus& c, Eigen::Index t) { return c.contextual.row(t).cast<double>().transpose(); }

TEST(Pool, SingleTokenSentence) {
  const Corpus c = make_corpus({{0, {1.0f, -2.0f, 0.5f}}});
  testing::DictProblem p = testing::random_dict_problem(1, Nonlinearity::kRelu, 4, 3, 1);
  const PooledSentence pooled = pool_sentence(p.model, c, 0);
  EXPECT_EQ(pooled.num_tokens, 1u);
  EXPECT_EQ(pooled.s, row(c, 0));
  EXPECT_LE((pooled.z_bar - dictlearn::encode(p.model, row(c, 0)).combined()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Pool, IdenticalTokensAverageToOneCode) {
  const Corpus c = make_corpus({{0, {0.3f, 0.7f}}, {0, {0.3f, 0.7f}}, {0, {0.3f, 0.7f}}});
  const testing::DictProblem p = testing::random_dict_problem(2, Nonlinearity::kIdentity, 5, 2, 1);
  const PooledSentence pooled = pool_sentence(p.model, c, 0);
  EXPECT_LE((pooled.z_bar - dictlearn::encode(p.model, row(c, 0)).combined()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Pool, DecodingCommutesWithTheMean) {
  SyntheticSpec spec;
  spec.k = 16;
  spec.d = 24;
  spec.n_sentences = 30;
  spec.support = SupportMode::kUniform;
  const Corpus c = generate_synthetic(spec).corpus;
  const testing::DictProblem p = testing::random_dict_problem(3, Nonlinearity::kRelu, 16, 24, 1);
  for (const SentenceSpan& span : c.sentences()) {
    const PooledSentence pooled = pool_sentence(p.model, c, span.sentence_id);
    Vector mean_decoded = Vector::Zero(24);
    for (std::size_t t = span.begin; t < span.end; ++t) {
      mean_decoded += dictlearn::forward(p.model, row(c, static_cast<Eigen::Index>(t))).recon_ctx;
    }
    mean_decoded /= static_cast<double>(span.size());
    EXPECT_LE((pooled.s_hat - mean_decoded).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Pool, SpecialTokensAreSkipped) {
  const Corpus c = make_corpus({{0, {9.0f, 9.0f}, 0, "[CLS]"},
                                {0, {1.0f, 0.0f}},
                                {0, {0.0f, 1.0f}},
                                {0, {9.0f, 9.0f}, 0, "[SEP]"},
                                {1, {5.0f, 5.0f}, 0, "[CLS]"}});
  const DictModel m = identity_model(2);
  const PooledSentence pooled = pool_sentence(m, c, 0);
  EXPECT_EQ(pooled.num_tokens, 2u);
  EXPECT_EQ(pooled.s, (Vector{{0.5, 0.5}}));
  EXPECT_EQ(error_code_of([&] { pool_sentence(m, c, 1); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(pool_corpus(m, c).size(), 1u);
  const AtomStats stats = atom_stats(m, c);
  EXPECT_EQ(stats.mean, (Vector{{0.5, 0.5}}));
}

TEST(Pool, MissingSentenceIsAnError) {
  const Corpus c = make_corpus({{0, {1.0f}}});
  EXPECT_EQ(error_code_of([&] { pool_sentence(identity_model(1), c, 4); }), ErrorCode::kInvalidArgument);
}

TEST(Contributions, ZeroCodeIsDegenerate) {
  const Corpus c = make_corpus({{0, {1.0f, 2.0f}}});
  DictModel m = identity_model(2);
  m[DictModel::kEncCtx].setZero();
  const AttributionReport r = atom_contributions(pool_sentence(m, c, 0), m);
  EXPECT_TRUE(r.a.isZero());
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(atom_contributions_csv(r), "atom,a,a_norm\n0,0,nan\n1,0,nan\n");
}

TEST(Contributions, ExactReconstructionSumsToSquaredNorm) {
  const Corpus c = make_corpus({{0, {1.0f, -2.0f, 2.0f}}, {0, {3.0f, 0.0f, 0.0f}}});
  const DictModel m = identity_model(3);
  const PooledSentence pooled = pool_sentence(m, c, 0);
  const AttributionReport r = atom_contributions(pooled, m);
  EXPECT_NEAR(r.a.sum(), pooled.s.squaredNorm(), 1e-12);
  EXPECT_NEAR(r.a_norm.sum(), 1.0, 1e-12);
  // s = (2, -1, 1): a = s squared, ||s||^2 = 6.
  EXPECT_NEAR(r.a_norm(0), 4.0 / 6.0, 1e-12);
}

TEST(Contributions, SumMatchesInnerProductOfReconstruction) {
  SyntheticSpec spec;
  spec.k = 8;
  spec.d = 12;
  spec.n_sentences = 20;
  spec.noise_std = 0.2;
  const Corpus c = generate_synthetic(spec).corpus;
  const testing::DictProblem p = testing::random_dict_problem(9, Nonlinearity::kIdentity);
  for (const PooledSentence& pooled : pool_corpus(p.model, c)) {
    const AttributionReport r = atom_contributions(pooled, p.model);
    const double expected = pooled.s_hat.dot(pooled.s);
    EXPECT_LE(std::abs(r.a.sum() - expected), 1e-9 * std::abs(expected));
  }
}

TEST(Contributions, ScalingTokensKeepsNormalizedShares) {
  SyntheticSpec spec;
  spec.k = 8;
  spec.d = 12;
  spec.n_sentences = 10;
  spec.noise_std = 0.1;
  const Corpus c = generate_synthetic(spec).corpus;
  Corpus doubled = c;
  doubled.contextual *= 2.0f;
  for (Nonlinearity nl : {Nonlinearity::kIdentity, Nonlinearity::kRelu}) {
    testing::DictProblem p = testing::random_dict_problem(10, nl);
    // Biases break homogeneity, so the property is stated for bias-free encoders.
    p.model[DictModel::kBiasCtx].setZero();
    p.model[DictModel::kBiasStatic].setZero();
    for (std::size_t id = 0; id < c.num_sentences; ++id) {
      const AttributionReport a = atom_contributions(pool_sentence(p.model, c, id), p.model);
      const AttributionReport b = atom_contributions(pool_sentence(p.model, doubled, id), p.model);
      ASSERT_FALSE(a.degenerate);
      EXPECT_LE((b.a - 4.0 * a.a).cwiseAbs().maxCoeff(), 1e-9 * (1.0 + a.a.cwiseAbs().maxCoeff()));
      EXPECT_LE((b.a_norm - a.a_norm).cwiseAbs().maxCoeff(), 1e-6);
    }
  }
}

TEST(Contributions, NormalizationOrderFlag) {
  const Corpus c = make_corpus({{0, {1.0f, 0.0f}}, {1, {0.0f, 3.0f}}});
  const DictModel m = identity_model(2);
  const AttributionReport avg_first = corpus_contributions(m, c, NormalizationOrder::kAverageThenNormalize);
  EXPECT_EQ(avg_first.scope, Scope::kCorpusAverage);
  EXPECT_EQ(avg_first.sentences, 2u);
  EXPECT_NEAR(avg_first.a_norm(0), 0.1, 1e-12);
  EXPECT_NEAR(avg_first.a_norm(1), 0.9, 1e-12);
  const AttributionReport norm_first = corpus_contributions(m, c, NormalizationOrder::kNormalizeThenAverage);
  EXPECT_NEAR(norm_first.a_norm(0), 0.5, 1e-12);
  EXPECT_NEAR(norm_first.a_norm(1), 0.5, 1e-12);
  EXPECT_EQ(parse_normalization_order(to_string(NormalizationOrder::kNormalizeThenAverage)),
            NormalizationOrder::kNormalizeThenAverage);
  EXPECT_EQ(error_code_of([] { parse_normalization_order("sum"); }), ErrorCode::kConfig);
}

TEST(Stats, ConstantAndHalfActiveAtoms) {
  const Corpus c = make_corpus({{0, {2.0f, 1.0f}}, {0, {2.0f, 0.0f}}, {1, {2.0f, 1.0f}}, {1, {2.0f, 0.0f}}});
  const AtomStats stats = atom_stats(identity_model(2), c);
  EXPECT_DOUBLE_EQ(stats.mean(0), 2.0);
  EXPECT_DOUBLE_EQ(stats.variance(0), 0.0);
  EXPECT_DOUBLE_EQ(stats.mean(1), 0.5);
  EXPECT_DOUBLE_EQ(stats.variance(1), 0.25);
  EXPECT_EQ(atom_stats_csv(stats), "atom,mean,variance\n0,2,0\n1,0.5,0.25\n");
}

TEST(Fractions, AtomOnOneClassIsOneHot) {
  // Atom 0 fires on NOUN only, atom 1 evenly on every class, atom 2 never.
  const Corpus c = make_corpus({{0, {1.0f, 1.0f, 0.0f}, 0},
                                {0, {0.0f, -1.0f, 0.0f}, 1},
                                {1, {3.0f, 1.0f, 0.0f}, 0},
                                {1, {0.0f, 1.0f, 0.0f}, 2},
                                {1, {0.0f, 1.0f, 0.0f}, 1},
                                {1, {0.0f, 1.0f, 0.0f}, 2}});
  const ClassFractions f = class_fractions(identity_model(3), c, LabelKind::kPos);
  EXPECT_EQ(f.pi.row(0), (Matrix{{1.0, 0.0, 0.0}}));
  for (Eigen::Index col = 0; col < 3; ++col) EXPECT_NEAR(f.pi(1, col), 1.0 / 3.0, 1e-12);
  EXPECT_EQ(f.zero_rows, std::vector<std::size_t>{2});
  EXPECT_TRUE(f.pi.row(2).isZero());
}

TEST(Fractions, TrainedModelRowsSumToOne) {
  SyntheticSpec spec;
  spec.k = 8;
  spec.d = 16;
  spec.n_sentences = 60;
  spec.active_atoms = 2;
  const Corpus c = generate_synthetic(spec).corpus;
  const CorpusSplits s = split_corpus(c, SplitSpec{});
  dictlearn::DictConfig config;
  config.k = 8;
  config.epochs = 2;
  const DictModel m = dictlearn::train(s.train, s.val, config).model;
  const ClassFractions f = class_fractions(m, c, LabelKind::kDep);
  for (Eigen::Index j = 0; j < f.pi.rows(); ++j) {
    if (std::find(f.zero_rows.begin(), f.zero_rows.end(), static_cast<std::size_t>(j)) == f.zero_rows.end()) {
      EXPECT_NEAR(f.pi.row(j).sum(), 1.0, 1e-6);
    }
  }
  const ClassAttribution attribution = class_attribution(m, c, LabelKind::kPos);
  EXPECT_NEAR(attribution.shares.sum(), 1.0, 1e-6);
  EXPECT_NEAR(attribution.atoms.a_norm.sum(), 1.0, 1e-6);
}

TEST(ClassShares, SingleClassCorpus) {
  const Corpus c = make_corpus({{0, {1.0f, 2.0f}, 1}, {0, {0.5f, -1.0f}, 1}, {1, {2.0f, 2.0f}, 1}});
  const ClassAttribution r = class_attribution(identity_model(2), c, LabelKind::kPos);
  EXPECT_EQ(r.classes, c.pos_vocab);
  EXPECT_NEAR(r.shares(1), 1.0, 1e-12);
  EXPECT_NEAR(r.shares(0), 0.0, 1e-12);
  EXPECT_NEAR(r.shares(2), 0.0, 1e-12);
}

TEST(ClassShares, IdentityFractionsReproduceAtomShares) {
  // One atom per class: class c tokens only activate atom c, so pi = I.
  const Corpus c = make_corpus({{0, {1.0f, 0.0f, 0.0f}, 0},
                                {0, {0.0f, 2.0f, 0.0f}, 1},
                                {1, {0.0f, 0.0f, 1.5f}, 2},
                                {1, {0.5f, 0.0f, 0.0f}, 0}});
  const ClassAttribution r = class_attribution(identity_model(3), c, LabelKind::kPos);
  EXPECT_TRUE(r.fractions.pi.isApprox(Matrix::Identity(3, 3)));
  EXPECT_LE((r.shares - r.atoms.a_norm).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(class_attribution_csv(r).substr(0, 12), "class,share\n");
}

TEST(ClassShares, DegenerateCorpusIsReported) {
  const Corpus c = make_corpus({{0, {1.0f, 2.0f}}});
  DictModel m = identity_model(2);
  m[DictModel::kEncCtx].setZero();
  EXPECT_EQ(error_code_of([&] { class_attribution(m, c, LabelKind::kPos); }), ErrorCode::kDegenerate);
}

}  // namespace
}  // namespace sentdecomp::attribution
