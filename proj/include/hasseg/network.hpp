#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hasseg/config.hpp"
#include "hasseg/ops.hpp"
#include "hasseg/tape.hpp"
#include "hasseg/tensor.hpp"

namespace hasseg {

/// Attention placement and widths. SAM j / UAM j sit at decoder stage j, where
/// stage 1 is the deepest (1/4 resolution) and stage 3 the full-resolution one;
/// a count of n enables stages 1..n.
struct AttentionSpec {
  int sam_count = 3;
  int uam_count = 3;
  int shrink_channels = 32;
  int out_channels = 64;

  bool operator==(const AttentionSpec&) const = default;
};

struct NetworkSpec {
  static constexpr int kLevels = 4;  // three 2x poolings
  static constexpr int kStages = 3;  // decoder merges

  int in_channels = 1;
  int base_channels = 16;
  int shallow_kernel = 3;
  int deep_kernel = 5;
  AttentionSpec attention;
  // Deep-supervision side branches; branch m predicts at scale 1/2^m.
  int branch_count = 2;
  int classes = 2;

  /// Throws ConfigError on any out-of-range field.
  void validate() const;

  int level_channels(int level) const { return base_channels << level; }
  /// Encoder levels 0-1 use the shallow kernel, levels 2-3 the deep one.
  int encoder_kernel(int level) const { return level >= 2 ? deep_kernel : shallow_kernel; }
  /// Only the deepest decoder block uses the deep kernel.
  int decoder_kernel(int stage) const { return stage == 1 ? deep_kernel : shallow_kernel; }
  bool has_sam(int stage) const { return stage <= attention.sam_count; }
  bool has_uam(int stage) const { return stage <= attention.uam_count; }
  /// Decoder stage whose output feeds side branch m.
  static int branch_stage(int m) { return kStages - m; }

  /// Reads `network.*` keys; absent keys keep their defaults.
  static NetworkSpec from_config(const Config& cfg);
  /// Writes every field under `network.*`.
  void to_config(Config& cfg) const;

  bool operator==(const NetworkSpec&) const = default;
};

/// Main-network weights W versus side-branch weights w^m. Weight decay applies
/// to the main group only.
enum class ParamGroup { Main, Side };

/// Ordered, uniquely named parameters plus batch-norm running statistics.
template <typename T>
class ParamStore {
 public:
  struct Param {
    std::string name;
    Tensor<T> tensor;
    ParamGroup group;
  };
  struct BatchNorm {
    std::string name;
    BatchNormStats<T> stats;
  };

  /// Adds a zero-initialized parameter. Throws ValueError on a duplicate name.
  Tensor<T>& add(const std::string& name, Shape shape, ParamGroup group);
  BatchNormStats<T>& add_batchnorm(const std::string& name, std::size_t channels);

  bool contains(const std::string& name) const;
  /// Throws ValueError for an unknown name.
  Tensor<T>& at(const std::string& name);
  const Tensor<T>& at(const std::string& name) const;
  BatchNormStats<T>& batchnorm(const std::string& name);

  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  std::vector<BatchNorm>& batchnorms() { return batchnorms_; }
  const std::vector<BatchNorm>& batchnorms() const { return batchnorms_; }

  std::size_t parameter_count() const;
  void set_requires_grad(bool value);
  void clear_grads();

  /// Deep copy (fresh storage, no gradients).
  ParamStore clone() const;
  template <typename U>
  ParamStore<U> cast() const;

 private:
  std::vector<Param> params_;
  std::vector<BatchNorm> batchnorms_;
};

extern template class ParamStore<float>;
extern template class ParamStore<double>;

struct ParamDecl {
  std::string name;
  Shape shape;
  ParamGroup group;
  enum class Init { HeTruncated, One, Zero } init;
  double fan_in = 0.0;  // HeTruncated only
};

/// Parameters and batch-norm layers (name, channels) of `spec`, in canonical order.
struct ParamLayout {
  std::vector<ParamDecl> params;
  std::vector<std::pair<std::string, std::size_t>> batchnorms;

  std::size_t parameter_count() const;
};

ParamLayout parameter_layout(const NetworkSpec& spec);

/// Throws ShapeError unless `params` holds exactly the layout of `spec`.
template <typename T>
void check_params(const NetworkSpec& spec, const ParamStore<T>& params);

/// Allocates every parameter of `spec` and draws conv weights from a normal
/// truncated at 2 sigma with sigma = sqrt(2 / fan_in). Each parameter uses its own
/// RNG stream derived from (seed, name), so ablations that drop modules keep the
/// remaining initial values. BN gamma = 1, beta = 0, biases 0.
ParamStore<float> init_params(const NetworkSpec& spec, std::uint64_t seed);

/// Softmax attention map A(X) recorded during a forward pass.
template <typename T>
struct AttentionProbe {
  std::string module;  // e.g. "dec2.sam"
  Tensor<T> weights;
};

template <typename T>
struct ForwardResult {
  Tensor<T> main_logits;
  Tensor<T> main_prob;
  std::vector<Tensor<T>> aux_logits;  // index m-1 is branch m (scale 1/2^m)
  std::vector<Tensor<T>> aux_probs;
  std::vector<AttentionProbe<T>> attention;
  std::vector<std::string> params_used;  // in order of use
};

/// Attention module on `input` using parameters under `prefix`:
/// P = relu(bn(conv1x1(x))), W = bn(conv3(relu(bn(conv3(P))))), A = softmax_c(W),
/// T = A * P, out = relu(bn(conv1x1(concat(P, T)))). `probe` receives A if non-null.
template <typename T>
Tensor<T> attention_module(Tape<T>& tape, const Tensor<T>& input, ParamStore<T>& params,
                           const std::string& prefix, Mode mode, Tensor<T>* probe = nullptr,
                           std::vector<std::string>* used = nullptr);

/// Runs the network on N x in_channels x D x H x W input; D, H, W must be multiples of 8.
template <typename T>
ForwardResult<T> forward(const NetworkSpec& spec, ParamStore<T>& params, Tape<T>& tape,
                         const Tensor<T>& input, Mode mode);

}  // namespace hasseg
