#include <cmath>

#include <gtest/gtest.h>

#include "sentdecomp/probes.hpp"
#include "sentdecomp/random.hpp"
#include "test_util.hpp"

namespace sentdecomp::probes {
namespace {

using testing::error_code_of;

// Tokens with Gaussian embeddings and the given POS ids, split into sentences
// of `per_sentence` tokens.
Corpus labelled_corpus(const std::vector<std::size_t>& pos, std::vector<std::string> vocab, std::size_t d,
                       std::size_t per_sentence, std::uint64_t seed) {
  Rng rng(seed);
  Corpus c;
  c.model_name = "fixture";
  c.pos_vocab = std::move(vocab);
  c.dep_vocab = {"root"};
  c.num_sentences = (pos.size() + per_sentence - 1) / per_sentence;
  c.contextual.resize(static_cast<Eigen::Index>(pos.size()), static_cast<Eigen::Index>(d));
  c.static_emb = Eigen::MatrixXf::Zero(static_cast<Eigen::Index>(pos.size()), 1);
  for (std::size_t t = 0; t < pos.size(); ++t) {
    c.tokens.push_back({t / per_sentence, t % per_sentence, "w", pos[t], 0});
    for (std::size_t j = 0; j < d; ++j) {
      c.contextual(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)) = static_cast<float>(rng.normal());
    }
  }
  return c;
}

// 17 balanced, linearly separable classes of eight atoms each. One active
// atom per token keeps label-free probes from mapping whole classes at once.
CorpusSplits balanced_synthetic(std::size_t sentences = 800) {
  SyntheticSpec spec;
  spec.k = 136;
  spec.d = 136;
  spec.active_atoms = 1;
  spec.n_sentences = sentences;
  spec.seed = 3;
  return split_corpus(generate_synthetic(spec).corpus, SplitSpec{0.6, 0.4, 0.0, 3});
}

ProbeModel linear_model(const Matrix& w) {
  ProbeModel m;
  m.params = {w, Matrix::Zero(w.rows(), 1)};
  for (Eigen::Index c = 0; c < w.rows(); ++c) m.classes.push_back("c" + std::to_string(c));
  return m;
}

double gradient_error(const ProbeModel& model, const Matrix& inputs, const std::vector<std::size_t>& labels) {
  const ParamSet like = model.params;
  const numkit::DifferentiableFn fn = [&](const Vector& flat) {
    ProbeModel m = model;
    m.params = numkit::unflatten(flat, like);
    const ProbeLoss r = probe_loss(m, inputs, labels);
    return numkit::ValueAndGrad{r.value, numkit::flatten(r.grads)};
  };
  return numkit::grad_check(fn, numkit::flatten(model.params), 1e-5);
}

TEST(ProbeLossTest, GradientsMatchFiniteDifferences) {
  Rng rng(4);
  auto gauss = [&](Eigen::Index r, Eigen::Index c) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = 0.5 * rng.normal();
    return m;
  };
  const Matrix inputs = gauss(6, 7);
  const std::vector<std::size_t> labels{0, 1, 2, 3, 0, 2, 1};
  ProbeModel linear = linear_model(gauss(4, 6));
  linear.params[1] = gauss(4, 1);
  EXPECT_LE(gradient_error(linear, inputs, labels), 1e-5);

  ProbeModel mlp = linear;
  mlp.arch = ProbeArch::kMlp;
  mlp.params = {gauss(9, 6), gauss(9, 1), gauss(4, 9), gauss(4, 1)};
  EXPECT_LE(gradient_error(mlp, inputs, labels), 1e-5);
}

TEST(ProbeLossTest, EqualLogitsGiveLogC) {
  const ProbeModel m = linear_model(Matrix::Zero(4, 3));
  EXPECT_NEAR(probe_loss(m, Matrix::Ones(3, 5), std::vector<std::size_t>{0, 1, 2, 3, 0}).value, std::log(4.0), 1e-12);
}

TEST(Eval, AlwaysClassZeroOnClassZeroData) {
  const Corpus data = labelled_corpus(std::vector<std::size_t>(20, 0), {"NOUN", "VERB"}, 3, 5, 1);
  ProbeModel m = linear_model(Matrix::Zero(2, 3));
  m.classes = data.pos_vocab;
  m.params[1](0, 0) = 1.0;
  const ProbeMetrics r = eval_probe(m, data);
  EXPECT_DOUBLE_EQ(r.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(r.macro_f1, 1.0);
}

TEST(Eval, RandomWeightsAreNearChance) {
  const CorpusSplits s = balanced_synthetic();
  Rng rng(8);
  Matrix w(17, 136);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
  ProbeModel m = linear_model(w);
  m.classes = s.val.pos_vocab;
  // Each class row is a random direction, so predictions ignore the labels.
  EXPECT_NEAR(eval_probe(m, s.val).accuracy, 1.0 / 17.0, 0.05);
}

TEST(Eval, MismatchedVocabularyOrDimension) {
  const Corpus data = labelled_corpus({0, 1, 0, 1}, {"NOUN", "VERB"}, 3, 2, 1);
  ProbeModel m = linear_model(Matrix::Zero(3, 3));
  EXPECT_EQ(error_code_of([&] { eval_probe(m, data); }), ErrorCode::kShapeMismatch);
  m = linear_model(Matrix::Zero(2, 4));
  m.classes = data.pos_vocab;
  EXPECT_EQ(error_code_of([&] { eval_probe(m, data); }), ErrorCode::kShapeMismatch);
}

TEST(Train, SeparableCorpusIsLearnedAndDeterministic) {
  const CorpusSplits s = balanced_synthetic();
  const TrainedProbe a = train_probe(s.train, s.val, ProbeTarget::kPos, ProbeArch::kLinear, {}, ProbeMode::kStandard, 5);
  const TrainedProbe b = train_probe(s.train, s.val, ProbeTarget::kPos, ProbeArch::kLinear, {}, ProbeMode::kStandard, 5);
  EXPECT_GE(a.metrics.accuracy, 0.99);
  EXPECT_EQ(a.metrics.accuracy, b.metrics.accuracy);
  EXPECT_EQ(a.metrics.per_class_f1, b.metrics.per_class_f1);
  EXPECT_EQ(a.model.params[0], b.model.params[0]);
  EXPECT_FALSE(a.metrics.single_class);
}

TEST(Train, ShuffledLabelsStayNearChance) {
  const CorpusSplits s = balanced_synthetic();
  const TrainedProbe r = train_probe(s.train, s.val, ProbeTarget::kPos, ProbeArch::kLinear, {}, ProbeMode::kShuffled, 5);
  EXPECT_NEAR(r.metrics.accuracy, 1.0 / 17.0, 0.05);
  EXPECT_EQ(r.metrics.mode, ProbeMode::kShuffled);
}

TEST(Train, SingleClassTrainingIsFlagged) {
  const Corpus train = labelled_corpus(std::vector<std::size_t>(40, 1), {"NOUN", "VERB"}, 4, 4, 1);
  const Corpus val = labelled_corpus(std::vector<std::size_t>(8, 1), {"NOUN", "VERB"}, 4, 4, 2);
  ProbeHyper hyper;
  hyper.max_epochs = 3;
  const TrainedProbe r = train_probe(train, val, ProbeTarget::kPos, ProbeArch::kMlp, hyper, ProbeMode::kStandard, 1);
  EXPECT_TRUE(r.metrics.single_class);
  EXPECT_LE(r.metrics.epochs, 3u);
}

TEST(Train, EmptySplitsAndBadInputs) {
  const Corpus some = labelled_corpus({0, 1, 0, 1}, {"NOUN", "VERB"}, 3, 2, 1);
  const Corpus none = labelled_corpus({}, {"NOUN", "VERB"}, 3, 2, 1);
  EXPECT_EQ(error_code_of([&] { train_probe(none, some, ProbeTarget::kPos, ProbeArch::kLinear, {}, ProbeMode::kStandard, 1); }),
            ErrorCode::kInvalidArgument);
  EXPECT_EQ(error_code_of([&] { train_probe(some, none, ProbeTarget::kPos, ProbeArch::kLinear, {}, ProbeMode::kStandard, 1); }),
            ErrorCode::kInvalidArgument);
  ProbeHyper zero;
  zero.lr = 0.0;
  EXPECT_EQ(error_code_of([&] { train_probe(some, some, ProbeTarget::kPos, ProbeArch::kLinear, zero, ProbeMode::kStandard, 1); }),
            ErrorCode::kConfig);
  EXPECT_EQ(error_code_of([] { parse_target("lemma"); }), ErrorCode::kConfig);
  EXPECT_EQ(error_code_of([] { parse_arch("transformer"); }), ErrorCode::kConfig);
}

TEST(RandomBaseline, UniformNotMajority) {
  std::vector<std::size_t> labels(2000, 0);
  for (std::size_t i = 0; i < labels.size(); i += 10) labels[i] = 1;
  const Corpus val = labelled_corpus(labels, {"NOUN", "VERB"}, 2, 10, 1);
  const ProbeMetrics r = random_baseline(val, ProbeTarget::kPos, 3);
  EXPECT_NEAR(r.accuracy, 0.5, 0.05);
  EXPECT_EQ(r.mode, ProbeMode::kRandom);
  const ProbeMetrics again = random_baseline(val, ProbeTarget::kPos, 3);
  EXPECT_EQ(r.accuracy, again.accuracy);
  EXPECT_EQ(r.per_class_f1, again.per_class_f1);
}

TEST(RandomBaseline, BalancedSeventeenClasses) {
  const CorpusSplits s = balanced_synthetic();
  EXPECT_NEAR(random_baseline(s.val, ProbeTarget::kPos, 9).accuracy, 1.0 / 17.0, 0.05);
}

TEST(Position, BucketsClipAtThirtyOne) {
  const Corpus c = labelled_corpus(std::vector<std::size_t>(40, 0), {"NOUN"}, 2, 40, 1);
  const std::vector<std::string> classes = target_classes(c, ProbeTarget::kPosition);
  ASSERT_EQ(classes.size(), kPositionBuckets);
  EXPECT_EQ(classes.front(), "0");
  EXPECT_EQ(classes.back(), "31+");
  const std::vector<std::size_t> labels = target_labels(c, ProbeTarget::kPosition, classes.size());
  EXPECT_EQ(labels[5], 5u);
  EXPECT_EQ(labels[31], 31u);
  EXPECT_EQ(labels[39], 31u);

  const Corpus short_sentences = labelled_corpus(std::vector<std::size_t>(12, 0), {"NOUN"}, 2, 4, 1);
  EXPECT_EQ(target_classes(short_sentences, ProbeTarget::kPosition).size(), 4u);
}

TEST(Svd, OrthogonalRowsGiveSignedPermutation) {
  Matrix w = Matrix::Zero(3, 5);
  w(0, 2) = 2.0;
  w(1, 0) = -1.0;
  w(2, 4) = 0.5;
  const Matrix a = probe_svd_alignment(linear_model(w));
  ASSERT_EQ(a.rows(), 3);
  ASSERT_EQ(a.cols(), 3);
  for (Eigen::Index r = 0; r < 3; ++r) {
    EXPECT_NEAR(a.row(r).cwiseAbs().maxCoeff(), 1.0, 1e-12);
    EXPECT_NEAR(a.row(r).cwiseAbs().sum(), 1.0, 1e-12);
    EXPECT_NEAR(a.col(r).cwiseAbs().sum(), 1.0, 1e-12);
  }
  // Columns follow descending singular value: the largest row comes first.
  EXPECT_NEAR(std::abs(a(0, 0)), 1.0, 1e-12);
}

TEST(Svd, RankOneWeights) {
  Matrix w(4, 6);
  const Vector dir{{1.0, -2.0, 0.5, 0.0, 3.0, 1.0}};
  const Vector scale{{1.0, -3.0, 0.2, 2.0}};
  w = scale * dir.transpose();
  const Matrix a = probe_svd_alignment(linear_model(w));
  ASSERT_EQ(a.cols(), 4);
  for (Eigen::Index r = 0; r < 4; ++r) {
    EXPECT_NEAR(std::abs(a(r, 0)), 1.0, 1e-9);
    for (Eigen::Index j = 1; j < 4; ++j) EXPECT_NEAR(a(r, j), 0.0, 1e-9);
  }
}

TEST(Svd, RejectsMlp) {
  ProbeModel m = linear_model(Matrix::Identity(2, 2));
  m.arch = ProbeArch::kMlp;
  m.params = {Matrix::Identity(2, 2), Matrix::Zero(2, 1), Matrix::Identity(2, 2), Matrix::Zero(2, 1)};
  EXPECT_EQ(error_code_of([&] { probe_svd_alignment(m); }), ErrorCode::kInvalidArgument);
}

TEST(Csv, ResultAndAlignmentTables) {
  const std::string results = probe_results_csv({{"synthetic", ProbeTarget::kDep, "mlp", ProbeMode::kShuffled, 0.25, 0.5, 7}});
  EXPECT_EQ(results, "model_name,target,arch,mode,accuracy,macro_f1,seed\nsynthetic,dep,mlp,shuffled,0.25,0.5,7\n");
  const std::string svd = svd_alignment_csv({{ProbeTarget::kPos, {"NOUN"}, Matrix::Constant(1, 1, -1.0)}});
  EXPECT_EQ(svd, "target,class,singular_index,cosine\npos,NOUN,1,-1\n");
}

}  // namespace
}  // namespace sentdecomp::probes
