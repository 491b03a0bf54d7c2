#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "virso/ad.hpp"
#include "virso/model.hpp"
#include "virso/types.hpp"

namespace virso::train {

enum class Split : std::uint8_t { kTrain = 0, kVal = 1, kTest = 2 };

std::string to_string(Split s);

/// Paired sparse inputs and dense fields, physical units. Targets are stored
/// one sample per row, node-major: entry (s, i*C + c) is channel c at node i.
struct Dataset {
  std::size_t n = 0;  // nodes
  std::size_t q = 0;  // input width
  std::size_t channels = 0;
  Matrix inputs;   // count x q
  Matrix targets;  // count x (n*C)
  std::vector<Split> split;

  std::size_t size() const { return static_cast<std::size_t>(inputs.rows()); }
  /// n x C field of sample i.
  Matrix target(std::size_t i) const;
  std::vector<std::size_t> indices(Split s) const;
  /// Throws kInvalidInput on inconsistent shapes or non-finite values.
  void validate() const;
};

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

/// Seeded shuffle, then the first round(f0 N) to train, next round(f1 N) to val,
/// the rest to test.
SplitIndices split_dataset(std::size_t count, const std::array<double, 3>& fractions, std::uint64_t seed);
void assign_split(Dataset& data, const SplitIndices& split);

enum class NormMode { kMinMax, kGaussian };
std::string to_string(NormMode m);
NormMode norm_mode_from_string(const std::string& s);

/// Per-channel affine normalization. Columns are channels, rows observations.
class Normalizer {
 public:
  Normalizer() = default;
  static Normalizer fit(NormMode mode, const Matrix& observations, double low = -1.0, double high = 1.0);
  /// Rebuild from stored parameters (checkpoint loading).
  static Normalizer from_parameters(NormMode mode, Vector a, Vector b, double low, double high);

  Matrix apply(const Matrix& x) const;
  Matrix invert(const Matrix& y) const;
  /// invert(y) = y .* scale + offset, row-broadcast.
  RowVector scale() const;
  RowVector offset() const;

  NormMode mode() const { return mode_; }
  bool fitted() const { return fitted_; }
  std::size_t channels() const { return static_cast<std::size_t>(a_.size()); }
  /// minmax: (min, max); gaussian: (mean, std).
  const Vector& a() const { return a_; }
  const Vector& b() const { return b_; }
  double low() const { return low_; }
  double high() const { return high_; }

 private:
  void check(const Matrix& x) const;
  NormMode mode_ = NormMode::kMinMax;
  Vector a_, b_;
  double low_ = -1.0, high_ = 1.0;
  bool fitted_ = false;
};

struct Normalizers {
  Normalizer input;
  Normalizer target;
};

/// Fits both normalizers on the training rows only.
Normalizers fit_normalizers(const Dataset& data, NormMode input_mode, NormMode target_mode);

struct ChannelErrors {
  std::vector<double> per_channel;
  double mean = 0.0;
  double sum = 0.0;
};

/// ||pred_c - truth_c|| / ||truth_c|| per channel (fractions, not percent).
ChannelErrors relative_l2(const Matrix& pred, const Matrix& truth);

/// ||ux^2 + uy^2 + uz^2 - u^2|| / ||u^2||, u^2 the true squared magnitude.
double magnitude_consistency_loss(const Matrix& pred_components, const Vector& truth_magnitude);
/// Differentiable batch form: components (B n) x 3, truth squared magnitude
/// (B n) x 1 constant; returns the sum over samples.
ad::Value magnitude_consistency_loss(const ad::Value& pred_components, const Matrix& truth_sq_magnitude,
                                     const ad::IndexList& node_sample, std::size_t batch);

struct Schedule {
  double lr = 1e-3;
  std::size_t decay_step = 40;
  double decay = 0.5;
  std::size_t batch = 16;
  std::size_t max_epochs = 500;
  double weight_decay = 1e-3;
  std::size_t patience = 40;
  std::uint64_t seed = 0;
  /// Micro-batches per optimizer step (batch 16 emulated as 4 x 4, ...).
  std::size_t accumulation = 1;
  /// Channel indices (x, y, z) for the magnitude consistency term; off when empty.
  std::optional<std::array<std::size_t, 3>> velocity_channels;
  double magnitude_weight = 0.1;

  void validate() const;
  double learning_rate(std::size_t epoch) const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct Percentiles {
  double best = 0, p25 = 0, p50 = 0, p75 = 0, p95 = 0, worst = 0;
};

/// Nearest-rank order statistics of an unsorted sample.
Percentiles nearest_rank_percentiles(std::vector<double> values);

struct EvalReport {
  std::size_t samples = 0;
  std::vector<double> channel_mean;   // mean over samples, per channel
  double mean = 0.0;                  // mean over samples of the channel-mean error
  std::vector<double> sample_mean;    // per sample, channel-mean error
  Percentiles percentiles;            // over sample_mean
  std::vector<Percentiles> channel_percentiles;
};

struct TrainReport {
  double initial_val_loss = 0.0;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::string stop_reason;
  double wall_seconds = 0.0;
  std::optional<EvalReport> test;
};

/// Physical-unit prediction for a batch of physical inputs: one n x C matrix per row.
std::vector<Matrix> predict(const model::VirsoModel& model, const model::GraphContext& ctx,
                            const Normalizers& norms, const Matrix& inputs, std::size_t chunk = 16);

EvalReport evaluate(const model::VirsoModel& model, const model::GraphContext& ctx, const Normalizers& norms,
                    const Dataset& data, const std::vector<std::size_t>& indices);

/// Mean over `indices` of the channel-summed relative L2 (the early-stopping metric).
double validation_loss(const model::VirsoModel& model, const model::GraphContext& ctx, const Normalizers& norms,
                       const Dataset& data, const std::vector<std::size_t>& indices);

/// The differentiable training objective summed over `indices`: channel-summed
/// relative L2 in physical units, plus the weighted magnitude term when enabled.
ad::Value training_loss(const model::VirsoModel& model, const model::GraphContext& ctx, const Normalizers& norms,
                        const Dataset& data, const std::vector<std::size_t>& indices, const Schedule& schedule);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch Adam with step decay and early stopping. On return the model
/// holds the best-validation parameters. On divergence the best parameters are
/// restored and kDivergence is thrown.
TrainReport fit(model::VirsoModel& model, const model::GraphContext& ctx, const Normalizers& norms,
                const Dataset& data, const Schedule& schedule, const EpochCallback& on_epoch = {});

}  // namespace virso::train
