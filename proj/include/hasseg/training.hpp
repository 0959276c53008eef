#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hasseg/config.hpp"
#include "hasseg/network.hpp"
#include "hasseg/volume.hpp"

namespace hasseg {

struct AugmentConfig {
  int orientations = 8;            // each step draws one flip from the first `orientations` group elements
  double erase_probability = 0.5;  // chance of zeroing one cuboid of the image per step
  double erase_scale_lo = 0.15;
  double erase_scale_hi = 0.35;

  bool operator==(const AugmentConfig&) const = default;
};

struct TrainConfig {
  double learning_rate = 1e-5;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 1e-4;
  int epochs_per_level = 30;
  int batch_size = 1;
  int context_levels = 2;
  std::uint64_t seed = 1;
  AugmentConfig augment;

  /// Throws ConfigError.
  void validate() const;
  /// Keys under `train.`; absent keys keep their defaults.
  static TrainConfig from_config(const Config& cfg);
  void to_config(Config& cfg) const;

  bool operator==(const TrainConfig&) const = default;
};

// ---- tensor <-> volume ----

/// 1 x 1 x D x H x W tensor holding the volume data.
Tensor<float> volume_tensor(const Volume& v);
/// Class index per voxel (0 or 1) from a binary mask.
std::vector<std::uint8_t> mask_labels(const Volume& mask);
/// Foreground channel (index 1) of a 1 x C x D x H x W probability tensor.
Volume foreground_probability(const Tensor<float>& prob, std::array<float, 3> spacing);

// ---- loss ----

template <typename T>
struct LossTerms {
  Tensor<T> total;
  double main_ce = 0.0;
  std::vector<double> aux_ce;  // index m-1 is branch m
  double weight_decay = 0.0;   // lambda * sum of squares
};

/// Main CE + sum over branches of CE against the label downscaled (nearest) to
/// 1/2^m + lambda * sum of squares of every Main-group parameter. CE terms are
/// computed from logits. Requires batch 1; throws ShapeError if a branch's
/// grid differs from its downscaled label.
template <typename T>
LossTerms<T> composite_loss(Tape<T>& tape, const ForwardResult<T>& out, const Volume& label,
                            const ParamStore<T>& params, double lambda);

// ---- optimizer ----

struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<float>> m, v;  // one entry per parameter, in store order

  /// Zero moments shaped like `params`.
  static AdamState zeros(const ParamStore<float>& params);
  bool operator==(const AdamState&) const = default;
};

/// One bias-corrected Adam update of every parameter from its gradient (a
/// parameter without a gradient sees a zero gradient). Throws ShapeError if
/// the state does not match the store.
void adam_step(ParamStore<float>& params, AdamState& state, const TrainConfig& cfg);

// ---- training ----

/// One training case on the network grid: image already normalized and
/// resampled, mask on the same grid.
struct Sample {
  std::string id;
  Volume image;
  Volume mask;
};

/// Normalizes to [0,1], resamples by `factor` (image trilinear, mask nearest)
/// and zero-pads the end of every axis to a multiple of 8.
Sample prepare_sample(const std::string& id, const Volume& image, const Volume& mask, double factor);

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  int level = 1;
  int epoch = 0;  // completed epochs
  NetworkSpec spec;
  TrainConfig train;
  ParamStore<float> params;
  AdamState adam;
  std::string rng_state;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c);
/// Throws IoError on malformed input.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin = "buffer");
void write_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint read_checkpoint(const std::string& path);

struct EpochRecord {
  int level = 1;
  int epoch = 1;  // 1-based
  double mean_loss = 0.0;
  double main_ce = 0.0;
  std::vector<double> aux_ce;
  double weight_decay = 0.0;

  /// `level epoch mean_loss main_ce aux_ce_1 ... wd`
  std::string str() const;
};

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  /// Called after every completed epoch with the current state.
  std::function<void(const Checkpoint&)> on_checkpoint;
  /// Return true to stop after the epoch just completed.
  std::function<bool(int completed_epochs)> should_stop;
};

/// Trains level `level` from a fresh initialization. For level > 1, `prev`
/// holds the predecessor's foreground probability for every sample (same
/// grids). Passing `resume` continues a stopped run; the result is bitwise
/// the same as an uninterrupted run.
Checkpoint train_level(int level, const std::vector<Sample>& data, const std::vector<Volume>* prev,
                       const NetworkSpec& spec, const TrainConfig& cfg, const TrainHooks& hooks = {},
                       const Checkpoint* resume = nullptr);

/// Eval-mode foreground probability for a network-grid input.
Volume predict_probability(const NetworkSpec& spec, ParamStore<float>& params, const Volume& input);

/// Eval-mode probabilities of `ckpt` on every sample joined with `prev` (zero for level 1).
std::vector<Volume> predecessor_maps(Checkpoint& ckpt, const std::vector<Sample>& data,
                                     const std::vector<Volume>* prev);

struct CascadeResult {
  std::vector<Volume> prob_per_level;  // foreground probability on the original grid
  Volume mask;                         // p_fg >= 0.5 on the original grid
  std::array<std::size_t, 3> network_dims{0, 0, 0};
  bool padded = false;
};

/// Normalize, resample by `factor`, pad to multiples of 8, run levels in
/// order on join(x, previous probability), crop, resample the probabilities
/// back with trilinear and threshold the last one. Throws ValueError if
/// `levels` is empty.
CascadeResult infer_cascade(const Volume& image, std::vector<Checkpoint>& levels, double factor);

}  // namespace hasseg
