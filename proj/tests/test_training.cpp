#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "support.hpp"
#include "virso/error.hpp"
#include "virso/synth.hpp"
#include "virso/training.hpp"

using namespace virso;
using namespace virso::train;

namespace {

struct Toy {
  synth::SynthResult data;
  model::VirsoConfig config;
  std::unique_ptr<model::GraphContext> ctx;
};

Toy make_toy(std::size_t samples = 30) {
  synth::SynthSpec spec;
  spec.n_target = 60;
  spec.profile_length = 4;
  spec.sample_count = samples;
  spec.seed = 5;
  Toy t{synth::generate_dataset(spec), {}, nullptr};
  t.config.blocks = 2;
  t.config.d_v = 8;
  t.config.modes = 8;
  t.config.d_latent = 8;
  t.config.embed_hidden = 16;
  t.config.head_hidden = 16;
  t.config.alpha_anchors = 4;
  t.config.input_width = spec.input_width();
  t.config.output_channels = synth::kChannels;
  t.ctx = std::make_unique<model::GraphContext>(
      model::prepare_context(t.data.points, mesh::build_knn(t.data.points, 6), t.config));
  return t;
}

Schedule quick_schedule(std::size_t epochs) {
  Schedule s;
  s.lr = 3e-3;
  s.batch = 4;
  s.max_epochs = epochs;
  s.patience = 100;
  s.seed = 11;
  return s;
}

}  // namespace

TEST(Split, SizesCoverAndDeterminism) {
  const auto s = split_dataset(100, {0.8, 0.1, 0.1}, 3);
  EXPECT_EQ(s.train.size(), 80u);
  EXPECT_EQ(s.val.size(), 10u);
  EXPECT_EQ(s.test.size(), 10u);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.val.begin(), s.val.end());
  all.insert(s.test.begin(), s.test.end());
  EXPECT_EQ(all.size(), 100u);
  const auto again = split_dataset(100, {0.8, 0.1, 0.1}, 3);
  EXPECT_EQ(again.train, s.train);
  EXPECT_EQ(again.test, s.test);
  EXPECT_NE(split_dataset(100, {0.8, 0.1, 0.1}, 4).train, s.train);
}

TEST(Split, DefaultSyntheticSplit) {
  const auto s = split_dataset(950, {600.0 / 950, 150.0 / 950, 200.0 / 950}, 0);
  EXPECT_EQ(s.train.size(), 600u);
  EXPECT_EQ(s.val.size(), 150u);
  EXPECT_EQ(s.test.size(), 200u);
}

TEST(Split, RejectsBadFractions) {
  EXPECT_THROW(split_dataset(10, {0.5, 0.5, 0.5}, 0), Error);
  EXPECT_THROW(split_dataset(10, {-0.1, 0.6, 0.5}, 0), Error);
  EXPECT_THROW(split_dataset(3, {0.9, 0.05, 0.05}, 0), Error);
}

TEST(RelativeL2, TrivialCases) {
  const Matrix truth = test::random_matrix(7, 3, 1);
  const auto same = relative_l2(truth, truth);
  for (double e : same.per_channel) EXPECT_EQ(e, 0.0);
  const auto twice = relative_l2(2.0 * truth, truth);
  for (double e : twice.per_channel) EXPECT_NEAR(e, 1.0, 1e-15);
  EXPECT_NEAR(twice.sum, 3.0, 1e-14);
  EXPECT_NEAR(twice.mean, 1.0, 1e-15);
}

TEST(RelativeL2, HandComputedFiveByTwo) {
  const Matrix pred = test::random_matrix(5, 2, 2);
  const Matrix truth = test::random_matrix(5, 2, 3);
  const auto e = relative_l2(pred, truth);
  for (Eigen::Index c = 0; c < 2; ++c) {
    double num = 0.0, den = 0.0;
    for (Eigen::Index i = 0; i < 5; ++i) {
      num += (pred(i, c) - truth(i, c)) * (pred(i, c) - truth(i, c));
      den += truth(i, c) * truth(i, c);
    }
    EXPECT_NEAR(e.per_channel[static_cast<std::size_t>(c)], std::sqrt(num / den), 1e-14);
  }
}

TEST(RelativeL2, ZeroTruthChannelIsUndefined) {
  Matrix truth = test::random_matrix(4, 2, 4);
  truth.col(1).setZero();
  try {
    relative_l2(truth, truth);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kUndefinedMetric);
  }
}

TEST(RelativeL2, PositiveUnlessEqual) {
  const Matrix truth = test::random_matrix(6, 2, 5);
  Matrix pred = truth;
  pred(3, 1) += 1e-6;
  EXPECT_GT(relative_l2(pred, truth).sum, 0.0);
}

TEST(MagnitudeLoss, ConsistentComponentsGiveZero) {
  const Matrix comps = test::random_matrix(6, 3, 6);
  const Vector mag = comps.rowwise().norm();
  EXPECT_NEAR(magnitude_consistency_loss(comps, mag), 0.0, 1e-15);
}

TEST(MagnitudeLoss, FourNodeDirectEvaluation) {
  const Matrix comps = test::random_matrix(4, 3, 7);
  const Vector mag = test::random_matrix(4, 1, 8).col(0).cwiseAbs();
  double num = 0.0, den = 0.0;
  for (Eigen::Index i = 0; i < 4; ++i) {
    const double s = comps(i, 0) * comps(i, 0) + comps(i, 1) * comps(i, 1) + comps(i, 2) * comps(i, 2);
    num += (s - mag(i) * mag(i)) * (s - mag(i) * mag(i));
    den += std::pow(mag(i), 4);
  }
  EXPECT_NEAR(magnitude_consistency_loss(comps, mag), std::sqrt(num / den), 1e-14);
}

TEST(MagnitudeLoss, ZeroMagnitudeIsUndefined) {
  EXPECT_THROW(magnitude_consistency_loss(Matrix::Ones(3, 3), Vector::Zero(3)), Error);
}

TEST(MagnitudeLoss, BatchedFormSumsPerSample) {
  const Matrix comps = test::random_matrix(8, 3, 9);
  const Matrix truth = test::random_matrix(8, 3, 10);
  const Matrix sq = truth.rowwise().squaredNorm();
  const ad::IndexList sample = ad::make_indices({0, 0, 0, 0, 1, 1, 1, 1});
  const double batched = magnitude_consistency_loss(ad::constant(comps), sq, sample, 2).item();
  const double a = magnitude_consistency_loss(comps.topRows(4), truth.topRows(4).rowwise().norm());
  const double b = magnitude_consistency_loss(comps.bottomRows(4), truth.bottomRows(4).rowwise().norm());
  EXPECT_NEAR(batched, a + b, 1e-13);

  ad::Value p = ad::parameter(comps, "u");
  std::vector<ad::Value> params{p};
  ad::GradCheckOptions opt;
  opt.probe_count = 24;
  EXPECT_LT(ad::grad_check([&] { return magnitude_consistency_loss(p, sq, sample, 2); }, params, opt)
                .max_relative_error,
            1e-6);
}

TEST(Normalizer, RoundTripBothModesThousandChannels) {
  const Matrix x = test::random_matrix(20, 1000, 12, 50.0);
  for (auto mode : {NormMode::kMinMax, NormMode::kGaussian}) {
    const auto n = Normalizer::fit(mode, x);
    EXPECT_LT((n.invert(n.apply(x)) - x).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Normalizer, MinMaxRangeAndGaussianMoments) {
  const Matrix x = test::random_matrix(50, 4, 13, 3.0);
  const Matrix y = Normalizer::fit(NormMode::kMinMax, x).apply(x);
  for (Eigen::Index c = 0; c < 4; ++c) {
    EXPECT_NEAR(y.col(c).minCoeff(), -1.0, 1e-14);
    EXPECT_NEAR(y.col(c).maxCoeff(), 1.0, 1e-14);
  }
  const Matrix z = Normalizer::fit(NormMode::kGaussian, x).apply(x);
  for (Eigen::Index c = 0; c < 4; ++c) {
    EXPECT_NEAR(z.col(c).mean(), 0.0, 1e-13);
    EXPECT_NEAR(std::sqrt(z.col(c).array().square().mean()), 1.0, 1e-13);
  }
}

TEST(Normalizer, ConstantChannelStaysFinite) {
  Matrix x = test::random_matrix(10, 2, 14);
  x.col(1).setConstant(3.0);
  for (auto mode : {NormMode::kMinMax, NormMode::kGaussian}) {
    const auto n = Normalizer::fit(mode, x);
    EXPECT_TRUE(n.apply(x).allFinite());
    EXPECT_LT((n.invert(n.apply(x)) - x).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Normalizer, UsageErrors) {
  Normalizer n;
  EXPECT_THROW(n.apply(Matrix::Ones(2, 2)), Error);
  const auto f = Normalizer::fit(NormMode::kMinMax, Matrix::Ones(3, 2));
  EXPECT_THROW(f.apply(Matrix::Ones(3, 3)), Error);
  EXPECT_THROW(Normalizer::fit(NormMode::kMinMax, Matrix::Ones(3, 2), 1.0, -1.0), Error);
}

TEST(Normalizer, FittedOnTrainRowsOnly) {
  const Toy t = make_toy();
  const Dataset& full = t.data.dataset;
  const auto a = fit_normalizers(full, NormMode::kMinMax, NormMode::kGaussian);

  // Same training rows with every val/test sample withheld.
  Dataset train_only;
  train_only.n = full.n;
  train_only.q = full.q;
  train_only.channels = full.channels;
  const auto idx = full.indices(Split::kTrain);
  train_only.inputs.resize(static_cast<Eigen::Index>(idx.size()), full.inputs.cols());
  train_only.targets.resize(static_cast<Eigen::Index>(idx.size()), full.targets.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    train_only.inputs.row(static_cast<Eigen::Index>(r)) = full.inputs.row(static_cast<Eigen::Index>(idx[r]));
    train_only.targets.row(static_cast<Eigen::Index>(r)) = full.targets.row(static_cast<Eigen::Index>(idx[r]));
  }
  train_only.split.assign(idx.size(), Split::kTrain);
  const auto b = fit_normalizers(train_only, NormMode::kMinMax, NormMode::kGaussian);
  EXPECT_TRUE(a.input.a() == b.input.a());
  EXPECT_TRUE(a.input.b() == b.input.b());
  EXPECT_TRUE(a.target.a() == b.target.a());
  EXPECT_TRUE(a.target.b() == b.target.b());

  // Perturbing a test sample leaves the statistics untouched.
  Dataset poisoned = full;
  poisoned.targets.row(static_cast<Eigen::Index>(full.indices(Split::kTest).front())).array() += 1e6;
  const auto c = fit_normalizers(poisoned, NormMode::kMinMax, NormMode::kGaussian);
  EXPECT_TRUE(a.target.b() == c.target.b());
}

TEST(Percentiles, SingleAndConstant) {
  const auto one = nearest_rank_percentiles({0.3});
  for (double v : {one.best, one.p25, one.p50, one.p75, one.p95, one.worst}) EXPECT_EQ(v, 0.3);
  const auto flat = nearest_rank_percentiles(std::vector<double>(9, 0.1));
  for (double v : {flat.best, flat.p25, flat.p50, flat.p75, flat.p95, flat.worst}) EXPECT_EQ(v, 0.1);
  EXPECT_THROW(nearest_rank_percentiles({}), Error);
}

TEST(Percentiles, TwentyInjectedErrorsMatchSortOracle) {
  std::vector<double> v(20);
  std::iota(v.begin(), v.end(), 1.0);
  std::mt19937_64 rng(15);
  std::shuffle(v.begin(), v.end(), rng);
  const auto p = nearest_rank_percentiles(v);
  // Nearest rank ceil(p N / 100) on the sorted values 1..20.
  EXPECT_EQ(p.best, 1.0);
  EXPECT_EQ(p.p25, 5.0);
  EXPECT_EQ(p.p50, 10.0);
  EXPECT_EQ(p.p75, 15.0);
  EXPECT_EQ(p.p95, 19.0);
  EXPECT_EQ(p.worst, 20.0);
}

TEST(Schedule, StepDecay) {
  Schedule s;
  EXPECT_EQ(s.learning_rate(0), 1e-3);
  EXPECT_EQ(s.learning_rate(39), 1e-3);
  EXPECT_EQ(s.learning_rate(40), 5e-4);
  EXPECT_EQ(s.learning_rate(80), 2.5e-4);
}

TEST(Schedule, PaperDefaults) {
  Schedule s;
  EXPECT_EQ(s.batch, 16u);
  EXPECT_EQ(s.max_epochs, 500u);
  EXPECT_EQ(s.weight_decay, 1e-3);
  EXPECT_EQ(s.decay, 0.5);
  EXPECT_EQ(s.decay_step, 40u);
  EXPECT_EQ(s.patience, 40u);
}

TEST(Schedule, Validation) {
  Schedule s;
  s.lr = 0.0;
  EXPECT_THROW(s.validate(), Error);
  s = Schedule{};
  s.accumulation = 32;
  EXPECT_THROW(s.validate(), Error);
  s = Schedule{};
  s.patience = 0;
  EXPECT_THROW(s.validate(), Error);
}

TEST(Fit, ReducesValidationLossAndKeepsBest) {
  Toy t = make_toy();
  auto norms = fit_normalizers(t.data.dataset, NormMode::kMinMax, NormMode::kMinMax);
  auto m = model::VirsoModel::initialize(t.config, 3);
  const auto report = fit(m, *t.ctx, norms, t.data.dataset, quick_schedule(25));
  ASSERT_EQ(report.epochs.size(), 25u);
  EXPECT_LT(report.best_val_loss, 0.5 * report.initial_val_loss);
  double running = report.epochs.front().val_loss;
  for (const auto& e : report.epochs) {
    running = std::min(running, e.val_loss);
    EXPECT_GE(e.val_loss, report.best_val_loss);
  }
  EXPECT_EQ(running, report.best_val_loss);
  EXPECT_EQ(report.epochs[report.best_epoch].val_loss, report.best_val_loss);
  // The returned model is the best checkpoint.
  EXPECT_EQ(validation_loss(m, *t.ctx, norms, t.data.dataset, t.data.dataset.indices(Split::kVal)),
            report.best_val_loss);
  EXPECT_EQ(report.stop_reason, "max_epochs");
}

TEST(Fit, PatienceOneStopsAfterTwoEpochsWhenValidationWorsens) {
  Toy t = make_toy();
  auto norms = fit_normalizers(t.data.dataset, NormMode::kMinMax, NormMode::kMinMax);
  auto m = model::VirsoModel::initialize(t.config, 3);
  fit(m, *t.ctx, norms, t.data.dataset, quick_schedule(25));

  // Training targets replaced by a mirrored field: from a model that already
  // fits validation, every further epoch moves validation error up.
  Dataset d = t.data.dataset;
  for (auto i : d.indices(Split::kTrain)) {
    Matrix f = d.target(i);
    f = (-1.0 * f).rowwise() + 2.0 * f.colwise().maxCoeff();
    d.targets.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const RowVector>(f.data(), f.size());
  }
  Schedule s = quick_schedule(50);
  s.patience = 1;
  const auto report = fit(m, *t.ctx, norms, d, s);
  ASSERT_EQ(report.epochs.size(), 2u);
  EXPECT_GT(report.epochs[0].val_loss, report.initial_val_loss);
  EXPECT_GT(report.epochs[1].val_loss, report.epochs[0].val_loss);
  EXPECT_EQ(report.stop_reason, "early_stopping");
  EXPECT_EQ(report.best_epoch, 0u);
}

TEST(Fit, BitIdenticalAcrossRuns) {
  Toy t = make_toy();
  auto norms = fit_normalizers(t.data.dataset, NormMode::kMinMax, NormMode::kMinMax);
  auto a = model::VirsoModel::initialize(t.config, 4);
  auto b = model::VirsoModel::initialize(t.config, 4);
  const auto ra = fit(a, *t.ctx, norms, t.data.dataset, quick_schedule(4));
  const auto rb = fit(b, *t.ctx, norms, t.data.dataset, quick_schedule(4));
  for (std::size_t i = 0; i < ra.epochs.size(); ++i) {
    EXPECT_EQ(ra.epochs[i].train_loss, rb.epochs[i].train_loss);
    EXPECT_EQ(ra.epochs[i].val_loss, rb.epochs[i].val_loss);
  }
  const auto sa = a.snapshot();
  const auto sb = b.snapshot();
  for (std::size_t i = 0; i < sa.size(); ++i) EXPECT_TRUE(sa[i] == sb[i]);
}

TEST(Fit, GradientAccumulationMatchesFullBatch) {
  Toy t = make_toy();
  auto norms = fit_normalizers(t.data.dataset, NormMode::kMinMax, NormMode::kMinMax);
  auto a = model::VirsoModel::initialize(t.config, 5);
  auto b = model::VirsoModel::initialize(t.config, 5);
  Schedule s = quick_schedule(2);
  fit(a, *t.ctx, norms, t.data.dataset, s);
  s.accumulation = 2;
  fit(b, *t.ctx, norms, t.data.dataset, s);
  const auto sa = a.snapshot();
  const auto sb = b.snapshot();
  double diff = 0.0;
  for (std::size_t i = 0; i < sa.size(); ++i) diff = std::max(diff, (sa[i] - sb[i]).cwiseAbs().maxCoeff());
  EXPECT_LT(diff, 1e-9);
}

TEST(Fit, DivergenceRestoresLastGoodParameters) {
  Toy t = make_toy();
  auto norms = fit_normalizers(t.data.dataset, NormMode::kMinMax, NormMode::kMinMax);
  auto m = model::VirsoModel::initialize(t.config, 6);
  const auto before = m.snapshot();
  Schedule s = quick_schedule(3);
  s.lr = 1e300;
  try {
    fit(m, *t.ctx, norms, t.data.dataset, s);
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_TRUE(e.kind() == ErrorKind::kDivergence || e.kind() == ErrorKind::kInvalidParameter) << e.what();
  }
  const auto after = m.snapshot();
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(before[i] == after[i]);
}

TEST(Fit, RequiresFittedNormalizers) {
  Toy t = make_toy();
  auto m = model::VirsoModel::initialize(t.config, 7);
  EXPECT_THROW(fit(m, *t.ctx, Normalizers{}, t.data.dataset, quick_schedule(1)), Error);
}

TEST(Evaluate, PhysicalUnitsAndPercentiles) {
  Toy t = make_toy();
  auto norms = fit_normalizers(t.data.dataset, NormMode::kMinMax, NormMode::kGaussian);
  auto m = model::VirsoModel::initialize(t.config, 8);
  const auto idx = t.data.dataset.indices(Split::kTest);
  const auto report = evaluate(m, *t.ctx, norms, t.data.dataset, idx);
  ASSERT_EQ(report.samples, idx.size());
  Matrix in(static_cast<Eigen::Index>(idx.size()), t.data.dataset.inputs.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    in.row(static_cast<Eigen::Index>(r)) = t.data.dataset.inputs.row(static_cast<Eigen::Index>(idx[r]));
  }
  const auto preds = predict(m, *t.ctx, norms, in, 2);
  std::vector<double> means;
  for (std::size_t r = 0; r < idx.size(); ++r) {
    means.push_back(relative_l2(preds[r], t.data.dataset.target(idx[r])).mean);
  }
  EXPECT_NEAR(report.mean, std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(means.size()),
              1e-12);
  std::sort(means.begin(), means.end());
  EXPECT_EQ(report.percentiles.best, means.front());
  EXPECT_EQ(report.percentiles.worst, means.back());
  EXPECT_THROW(evaluate(m, *t.ctx, norms, t.data.dataset, {}), Error);
}

TEST(Predict, ChunkSizeDoesNotChangeResults) {
  Toy t = make_toy();
  auto norms = fit_normalizers(t.data.dataset, NormMode::kMinMax, NormMode::kMinMax);
  auto m = model::VirsoModel::initialize(t.config, 9);
  const Matrix in = t.data.dataset.inputs.topRows(5);
  const auto a = predict(m, *t.ctx, norms, in, 1);
  const auto b = predict(m, *t.ctx, norms, in, 5);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LT((a[i] - b[i]).cwiseAbs().maxCoeff(), 1e-10);
}
