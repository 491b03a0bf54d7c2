#include "virso/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "virso/error.hpp"

namespace virso::train {

using ad::Value;
using Index = Eigen::Index;

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Matrix Dataset::target(std::size_t i) const {
  return Eigen::Map<const Matrix>(targets.row(static_cast<Index>(i)).data(), static_cast<Index>(n),
                                  static_cast<Index>(channels));
}

std::vector<std::size_t> Dataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.size(); ++i)
    if (split[i] == s) out.push_back(i);
  return out;
}

void Dataset::validate() const {
  if (n == 0 || q == 0 || channels == 0) throw Error(ErrorKind::kInvalidInput, "dataset dimensions must be positive");
  if (inputs.rows() != targets.rows()) throw Error(ErrorKind::kInvalidInput, "input and target counts differ");
  if (inputs.cols() != static_cast<Index>(q)) throw Error(ErrorKind::kInvalidInput, "input width differs from q");
  if (targets.cols() != static_cast<Index>(n * channels)) {
    throw Error(ErrorKind::kInvalidInput, "target width differs from n*C");
  }
  if (split.size() != size()) throw Error(ErrorKind::kInvalidInput, "split labels do not cover the dataset");
  if (!inputs.allFinite() || !targets.allFinite()) throw Error(ErrorKind::kInvalidInput, "non-finite dataset values");
}

SplitIndices split_dataset(std::size_t count, const std::array<double, 3>& f, std::uint64_t seed) {
  for (double x : f)
    if (!(x >= 0.0)) throw Error(ErrorKind::kInvalidParameter, "split fractions must be non-negative");
  if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) {
    throw Error(ErrorKind::kInvalidParameter, "split fractions must sum to 1");
  }
  const auto n_train = static_cast<std::size_t>(std::llround(f[0] * static_cast<double>(count)));
  const auto n_val = static_cast<std::size_t>(std::llround(f[1] * static_cast<double>(count)));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= count) {
    throw Error(ErrorKind::kInvalidParameter, "split of " + std::to_string(count) + " samples leaves an empty part");
  }
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  SplitIndices out;
  out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                 order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  out.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  for (auto* v : {&out.train, &out.val, &out.test}) std::sort(v->begin(), v->end());
  return out;
}

void assign_split(Dataset& data, const SplitIndices& s) {
  data.split.assign(data.size(), Split::kTrain);
  for (auto i : s.val) data.split.at(i) = Split::kVal;
  for (auto i : s.test) data.split.at(i) = Split::kTest;
}

// ---------------------------------------------------------------------------
// Normalization

std::string to_string(NormMode m) { return m == NormMode::kMinMax ? "minmax" : "gaussian"; }

NormMode norm_mode_from_string(const std::string& s) {
  if (s == "minmax") return NormMode::kMinMax;
  if (s == "gaussian") return NormMode::kGaussian;
  throw Error(ErrorKind::kConfig, "unknown normalization '" + s + "'");
}

namespace {
constexpr double kFloor = 1e-12;
}

Normalizer Normalizer::fit(NormMode mode, const Matrix& x, double low, double high) {
  if (x.rows() == 0 || x.cols() == 0) throw Error(ErrorKind::kInvalidInput, "cannot fit a normalizer on no data");
  if (!(high > low)) throw Error(ErrorKind::kInvalidParameter, "normalizer range needs high > low");
  Normalizer n;
  n.mode_ = mode;
  n.low_ = low;
  n.high_ = high;
  const Index c = x.cols();
  n.a_.resize(c);
  n.b_.resize(c);
  for (Index j = 0; j < c; ++j) {
    if (mode == NormMode::kMinMax) {
      n.a_(j) = x.col(j).minCoeff();
      n.b_(j) = x.col(j).maxCoeff();
    } else {
      const double mu = x.col(j).mean();
      const double var = (x.col(j).array() - mu).square().mean();
      n.a_(j) = mu;
      n.b_(j) = std::max(std::sqrt(var), kFloor);
    }
  }
  n.fitted_ = true;
  return n;
}

Normalizer Normalizer::from_parameters(NormMode mode, Vector a, Vector b, double low, double high) {
  if (a.size() != b.size()) throw Error(ErrorKind::kShapeMismatch, "normalizer parameter lengths differ");
  Normalizer n;
  n.mode_ = mode;
  n.a_ = std::move(a);
  n.b_ = std::move(b);
  n.low_ = low;
  n.high_ = high;
  n.fitted_ = true;
  return n;
}

void Normalizer::check(const Matrix& x) const {
  if (!fitted_) throw Error(ErrorKind::kInvalidUsage, "normalizer used before fitting");
  if (x.cols() != a_.size()) {
    throw Error(ErrorKind::kShapeMismatch, "normalizer has " + std::to_string(a_.size()) + " channels, got " +
                                               std::to_string(x.cols()));
  }
}

RowVector Normalizer::scale() const {
  if (mode_ == NormMode::kGaussian) return b_.transpose();
  return ((b_ - a_).cwiseMax(kFloor) / (high_ - low_)).transpose();
}

RowVector Normalizer::offset() const {
  if (mode_ == NormMode::kGaussian) return a_.transpose();
  return a_.transpose() - low_ * scale();
}

Matrix Normalizer::apply(const Matrix& x) const {
  check(x);
  const RowVector s = scale();
  const RowVector o = offset();
  return (x.rowwise() - o).array().rowwise() / s.array();
}

Matrix Normalizer::invert(const Matrix& y) const {
  check(y);
  const RowVector s = scale();
  const RowVector o = offset();
  Matrix x = y.array().rowwise() * s.array();
  x.rowwise() += o;
  return x;
}

Normalizers fit_normalizers(const Dataset& data, NormMode input_mode, NormMode target_mode) {
  const auto train = data.indices(Split::kTrain);
  if (train.empty()) throw Error(ErrorKind::kInvalidInput, "no training samples to fit normalizers on");
  Matrix in(static_cast<Index>(train.size()), data.inputs.cols());
  Matrix out(static_cast<Index>(train.size() * data.n), static_cast<Index>(data.channels));
  for (std::size_t r = 0; r < train.size(); ++r) {
    in.row(static_cast<Index>(r)) = data.inputs.row(static_cast<Index>(train[r]));
    out.middleRows(static_cast<Index>(r * data.n), static_cast<Index>(data.n)) = data.target(train[r]);
  }
  return {Normalizer::fit(input_mode, in), Normalizer::fit(target_mode, out)};
}

// ---------------------------------------------------------------------------
// Metrics

ChannelErrors relative_l2(const Matrix& pred, const Matrix& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) {
    throw Error(ErrorKind::kShapeMismatch, "prediction and truth shapes differ");
  }
  ChannelErrors e;
  for (Index c = 0; c < truth.cols(); ++c) {
    const double denom = truth.col(c).norm();
    if (denom == 0.0) throw Error(ErrorKind::kUndefinedMetric, "truth channel " + std::to_string(c) + " has zero norm");
    e.per_channel.push_back((pred.col(c) - truth.col(c)).norm() / denom);
  }
  e.sum = std::accumulate(e.per_channel.begin(), e.per_channel.end(), 0.0);
  e.mean = e.sum / static_cast<double>(e.per_channel.size());
  return e;
}

double magnitude_consistency_loss(const Matrix& pred, const Vector& truth_magnitude) {
  if (pred.cols() != 3 || pred.rows() != truth_magnitude.size()) {
    throw Error(ErrorKind::kShapeMismatch, "magnitude loss needs n x 3 components and n magnitudes");
  }
  const Vector u2 = truth_magnitude.array().square();
  const double denom = u2.norm();
  if (denom == 0.0) throw Error(ErrorKind::kUndefinedMetric, "true velocity magnitude is identically zero");
  return (pred.rowwise().squaredNorm() - u2).norm() / denom;
}

Value magnitude_consistency_loss(const Value& comps, const Matrix& truth_sq, const ad::IndexList& node_sample,
                                 std::size_t batch) {
  if (comps.cols() != 3 || comps.rows() != truth_sq.rows() || truth_sq.cols() != 1) {
    throw Error(ErrorKind::kShapeMismatch, "magnitude loss needs (B n) x 3 components");
  }
  const auto b = static_cast<Index>(batch);
  const Value sq = ad::elementwise_mul(comps, comps);
  const Value mag2 = ad::matmul(sq, ad::constant(Matrix::Ones(3, 1)));
  const Value diff = ad::sub(mag2, ad::constant(truth_sq));
  const Value num = ad::sqrt(ad::scatter_add_rows(ad::elementwise_mul(diff, diff), node_sample, b));
  Matrix denom = Matrix::Zero(b, 1);
  for (Index r = 0; r < truth_sq.rows(); ++r) denom((*node_sample)[static_cast<std::size_t>(r)], 0) += truth_sq(r, 0) * truth_sq(r, 0);
  for (Index i = 0; i < b; ++i) {
    if (denom(i, 0) == 0.0) throw Error(ErrorKind::kUndefinedMetric, "true velocity magnitude is identically zero");
    denom(i, 0) = 1.0 / std::sqrt(denom(i, 0));
  }
  return ad::sum(ad::elementwise_mul(num, ad::constant(denom)));
}

Percentiles nearest_rank_percentiles(std::vector<double> v) {
  if (v.empty()) throw Error(ErrorKind::kInvalidInput, "percentiles of an empty split");
  std::sort(v.begin(), v.end());
  auto rank = [&](double p) {
    const auto r = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(v.size())));
    return v[std::clamp<std::size_t>(r, 1, v.size()) - 1];
  };
  return {v.front(), rank(25), rank(50), rank(75), rank(95), v.back()};
}

// ---------------------------------------------------------------------------
// Schedule

void Schedule::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::kConfig, m); };
  if (!(lr > 0.0)) fail("lr must be > 0");
  if (decay_step == 0) fail("decay_step must be >= 1");
  if (!(decay > 0.0 && decay <= 1.0)) fail("decay must be in (0, 1]");
  if (batch == 0) fail("batch must be >= 1");
  if (max_epochs == 0) fail("max_epochs must be >= 1");
  if (weight_decay < 0.0) fail("weight_decay must be >= 0");
  if (patience == 0) fail("patience must be >= 1");
  if (accumulation == 0 || accumulation > batch) fail("accumulation must be in [1, batch]");
  if (magnitude_weight < 0.0) fail("magnitude_weight must be >= 0");
}

double Schedule::learning_rate(std::size_t epoch) const {
  return lr * std::pow(decay, static_cast<double>(epoch / decay_step));
}

// ---------------------------------------------------------------------------
// Prediction and evaluation

std::vector<Matrix> predict(const model::VirsoModel& model, const model::GraphContext& ctx, const Normalizers& norms,
                            const Matrix& inputs, std::size_t chunk) {
  const ad::NoGradGuard no_grad;
  const Matrix normalized = norms.input.apply(inputs);
  const auto n = static_cast<Index>(ctx.num_nodes());
  std::vector<Matrix> out;
  out.reserve(static_cast<std::size_t>(inputs.rows()));
  for (Index start = 0; start < inputs.rows(); start += static_cast<Index>(chunk)) {
    const Index b = std::min<Index>(static_cast<Index>(chunk), inputs.rows() - start);
    const Matrix y = norms.target.invert(model::forward(model, ctx, normalized.middleRows(start, b)).data());
    for (Index i = 0; i < b; ++i) out.push_back(y.middleRows(i * n, n));
  }
  return out;
}

namespace {

Matrix gather_inputs(const Dataset& data, const std::vector<std::size_t>& idx) {
  Matrix m(static_cast<Index>(idx.size()), data.inputs.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) m.row(static_cast<Index>(r)) = data.inputs.row(static_cast<Index>(idx[r]));
  return m;
}

std::vector<ChannelErrors> errors_for(const model::VirsoModel& model, const model::GraphContext& ctx,
                                      const Normalizers& norms, const Dataset& data,
                                      const std::vector<std::size_t>& idx) {
  if (idx.empty()) throw Error(ErrorKind::kInvalidInput, "evaluation on an empty split");
  const auto preds = predict(model, ctx, norms, gather_inputs(data, idx));
  std::vector<ChannelErrors> out;
  for (std::size_t r = 0; r < idx.size(); ++r) out.push_back(relative_l2(preds[r], data.target(idx[r])));
  return out;
}

}  // namespace

EvalReport evaluate(const model::VirsoModel& model, const model::GraphContext& ctx, const Normalizers& norms,
                    const Dataset& data, const std::vector<std::size_t>& idx) {
  const auto errs = errors_for(model, ctx, norms, data, idx);
  EvalReport r;
  r.samples = errs.size();
  const std::size_t c = data.channels;
  r.channel_mean.assign(c, 0.0);
  std::vector<std::vector<double>> per_channel(c);
  for (const auto& e : errs) {
    r.sample_mean.push_back(e.mean);
    for (std::size_t j = 0; j < c; ++j) {
      r.channel_mean[j] += e.per_channel[j] / static_cast<double>(errs.size());
      per_channel[j].push_back(e.per_channel[j]);
    }
  }
  r.mean = std::accumulate(r.sample_mean.begin(), r.sample_mean.end(), 0.0) / static_cast<double>(errs.size());
  r.percentiles = nearest_rank_percentiles(r.sample_mean);
  for (auto& v : per_channel) r.channel_percentiles.push_back(nearest_rank_percentiles(std::move(v)));
  return r;
}

double validation_loss(const model::VirsoModel& model, const model::GraphContext& ctx, const Normalizers& norms,
                       const Dataset& data, const std::vector<std::size_t>& idx) {
  const auto errs = errors_for(model, ctx, norms, data, idx);
  double total = 0.0;
  for (const auto& e : errs) total += e.sum;
  return total / static_cast<double>(errs.size());
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

struct Prepared {
  Matrix inputs;      // normalized, all samples
  Matrix inv_norms;   // count x C, 1 / ||truth_c||
  RowVector scale, offset;
};

Prepared prepare(const Dataset& data, const Normalizers& norms) {
  Prepared p;
  p.inputs = norms.input.apply(data.inputs);
  p.inv_norms.resize(static_cast<Index>(data.size()), static_cast<Index>(data.channels));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Matrix t = data.target(i);
    for (Index c = 0; c < t.cols(); ++c) {
      const double norm = t.col(c).norm();
      if (norm == 0.0) {
        throw Error(ErrorKind::kUndefinedMetric,
                    "sample " + std::to_string(i) + " channel " + std::to_string(c) + " has zero norm");
      }
      p.inv_norms(static_cast<Index>(i), c) = 1.0 / norm;
    }
  }
  p.scale = norms.target.scale();
  p.offset = norms.target.offset();
  return p;
}

/// Channel-summed relative L2 summed over the micro-batch (not yet averaged).
Value batch_loss(const model::VirsoModel& model, const model::GraphContext& ctx, const Dataset& data,
                 const Prepared& prep, const Schedule& schedule, const std::vector<std::size_t>& idx) {
  const auto b = static_cast<Index>(idx.size());
  const auto n = static_cast<Index>(data.n);
  const auto c = static_cast<Index>(data.channels);
  Matrix in(b, prep.inputs.cols());
  Matrix truth(b * n, c);
  Matrix inv(b, c);
  for (Index r = 0; r < b; ++r) {
    const auto s = idx[static_cast<std::size_t>(r)];
    in.row(r) = prep.inputs.row(static_cast<Index>(s));
    truth.middleRows(r * n, n) = data.target(s);
    inv.row(r) = prep.inv_norms.row(static_cast<Index>(s));
  }
  const auto layout = ctx.layout(idx.size());
  const Value pred = model::forward(model, ctx, in);
  const Value phys = ad::linear(pred, ad::constant(prep.scale.transpose().asDiagonal().toDenseMatrix()),
                                ad::constant(prep.offset));
  const Value diff = ad::sub(phys, ad::constant(truth));
  const Value norms = ad::sqrt(ad::scatter_add_rows(ad::elementwise_mul(diff, diff), layout->node_sample, b));
  Value loss = ad::sum(ad::elementwise_mul(norms, ad::constant(inv)));
  if (schedule.velocity_channels && schedule.magnitude_weight > 0.0) {
    const auto& ch = *schedule.velocity_channels;
    Matrix select = Matrix::Zero(c, 3);
    for (Index k = 0; k < 3; ++k) select(static_cast<Index>(ch[static_cast<std::size_t>(k)]), k) = 1.0;
    const Matrix truth_comps = truth * select;
    const Matrix truth_sq = truth_comps.rowwise().squaredNorm();
    const Value mag = magnitude_consistency_loss(ad::matmul(phys, ad::constant(select)), truth_sq,
                                                 layout->node_sample, idx.size());
    loss = ad::add(loss, ad::scalar_mul(mag, schedule.magnitude_weight));
  }
  return loss;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

Value training_loss(const model::VirsoModel& model, const model::GraphContext& ctx, const Normalizers& norms,
                    const Dataset& data, const std::vector<std::size_t>& indices, const Schedule& schedule) {
  if (indices.empty()) throw Error(ErrorKind::kInvalidUsage, "training_loss needs at least one sample");
  for (auto i : indices)
    if (i >= data.size()) throw Error(ErrorKind::kInvalidUsage, "sample index out of range");
  return batch_loss(model, ctx, data, prepare(data, norms), schedule, indices);
}

TrainReport fit(model::VirsoModel& model, const model::GraphContext& ctx, const Normalizers& norms,
                const Dataset& data, const Schedule& schedule, const EpochCallback& on_epoch) {
  schedule.validate();
  data.validate();
  if (!norms.input.fitted() || !norms.target.fitted()) {
    throw Error(ErrorKind::kInvalidUsage, "normalizers must be fitted on the training split first");
  }
  if (ctx.num_nodes() != data.n) throw Error(ErrorKind::kShapeMismatch, "graph and dataset node counts differ");
  if (schedule.velocity_channels) {
    for (auto ch : *schedule.velocity_channels)
      if (ch >= data.channels) throw Error(ErrorKind::kConfig, "velocity channel index out of range");
  }
  auto train = data.indices(Split::kTrain);
  const auto val = data.indices(Split::kVal);
  if (train.empty() || val.empty()) throw Error(ErrorKind::kInvalidInput, "train and val splits must be non-empty");

  const auto t0 = std::chrono::steady_clock::now();
  const Prepared prep = prepare(data, norms);
  auto params = model.parameters();
  ad::AdamState adam;
  adam.weight_decay = schedule.weight_decay;
  std::mt19937_64 rng(schedule.seed);

  TrainReport report;
  report.initial_val_loss = validation_loss(model, ctx, norms, data, val);
  report.best_val_loss = report.initial_val_loss;
  auto best = model.snapshot();
  bool have_best = false;
  std::size_t stale = 0;
  report.stop_reason = "max_epochs";

  for (std::size_t epoch = 0; epoch < schedule.max_epochs; ++epoch) {
    const auto te = std::chrono::steady_clock::now();
    adam.lr = schedule.learning_rate(epoch);
    std::shuffle(train.begin(), train.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < train.size(); start += schedule.batch) {
      const std::size_t end = std::min(train.size(), start + schedule.batch);
      const std::size_t count = end - start;
      for (auto& p : params) p.zero_grad();
      const std::size_t micro = (count + schedule.accumulation - 1) / schedule.accumulation;
      for (std::size_t m = start; m < end; m += micro) {
        const std::vector<std::size_t> idx(train.begin() + static_cast<std::ptrdiff_t>(m),
                                           train.begin() + static_cast<std::ptrdiff_t>(std::min(end, m + micro)));
        const Value loss = batch_loss(model, ctx, data, prep, schedule, idx);
        if (!std::isfinite(loss.item())) {
          model.restore(best);
          throw Error(ErrorKind::kDivergence, "training loss became non-finite at epoch " + std::to_string(epoch) +
                                                  "; restored the best checkpoint");
        }
        loss_sum += loss.item();
        ad::backward(ad::scalar_mul(loss, 1.0 / static_cast<double>(count)));
      }
      try {
        ad::adam_step(params, adam);
      } catch (const Error& e) {
        model.restore(best);
        throw Error(e.kind(), std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                                  "; restored the best checkpoint");
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = adam.lr;
    rec.train_loss = loss_sum / static_cast<double>(train.size());
    rec.val_loss = validation_loss(model, ctx, norms, data, val);
    rec.seconds = seconds_since(te);
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (!std::isfinite(rec.val_loss)) {
      model.restore(best);
      throw Error(ErrorKind::kDivergence, "validation loss became non-finite at epoch " + std::to_string(epoch));
    }
    if (!have_best || rec.val_loss < report.best_val_loss) {
      have_best = true;
      report.best_val_loss = rec.val_loss;
      report.best_epoch = epoch;
      best = model.snapshot();
      stale = 0;
    } else if (++stale >= schedule.patience) {
      report.stop_reason = "early_stopping";
      break;
    }
  }
  model.restore(best);
  report.wall_seconds = seconds_since(t0);
  return report;
}

}  // namespace virso::train
