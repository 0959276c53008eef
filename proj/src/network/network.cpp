#include "hasseg/network.hpp"

#include <cmath>

#include "hasseg/error.hpp"
#include "hasseg/rng.hpp"

namespace hasseg {

namespace {

constexpr int kAttentionKernel = 3;

std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void require_range(const char* key, int v, int lo, int hi) {
  if (v < lo || v > hi) {
    throw ConfigError(std::string("network.") + key + " = " + std::to_string(v) + " outside [" +
                      std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
}

std::size_t cube(int k) { return static_cast<std::size_t>(k) * k * k; }

Shape conv_shape(int out, int in, int k) {
  return Shape{static_cast<std::size_t>(out), static_cast<std::size_t>(in), static_cast<std::size_t>(k),
               static_cast<std::size_t>(k), static_cast<std::size_t>(k)};
}

// Appends declarations in canonical order.
class Builder {
 public:
  explicit Builder(ParamLayout& layout) : layout_(layout) {}

  void conv(const std::string& name, int out, int in, int k, ParamGroup group = ParamGroup::Main) {
    layout_.params.push_back({name + ".weight", conv_shape(out, in, k), group, ParamDecl::Init::HeTruncated,
                              static_cast<double>(in) * static_cast<double>(cube(k))});
  }
  void bias(const std::string& name, int out, ParamGroup group) {
    layout_.params.push_back(
        {name + ".bias", Shape{static_cast<std::size_t>(out)}, group, ParamDecl::Init::Zero, 0.0});
  }
  void up(const std::string& name, int in, int out) {
    layout_.params.push_back({name + ".weight",
                              Shape{static_cast<std::size_t>(in), static_cast<std::size_t>(out), 2, 2, 2},
                              ParamGroup::Main, ParamDecl::Init::HeTruncated, static_cast<double>(in)});
  }
  void bn(const std::string& name, int channels) {
    const auto c = static_cast<std::size_t>(channels);
    layout_.params.push_back({name + ".gamma", Shape{c}, ParamGroup::Main, ParamDecl::Init::One, 0.0});
    layout_.params.push_back({name + ".beta", Shape{c}, ParamGroup::Main, ParamDecl::Init::Zero, 0.0});
    layout_.batchnorms.emplace_back(name, c);
  }
  void attention(const std::string& prefix, int in, const AttentionSpec& a) {
    conv(prefix + ".p", a.shrink_channels, in, 1);
    bn(prefix + ".p_bn", a.shrink_channels);
    conv(prefix + ".h1", a.shrink_channels, a.shrink_channels, kAttentionKernel);
    bn(prefix + ".h1_bn", a.shrink_channels);
    conv(prefix + ".h2", a.shrink_channels, a.shrink_channels, kAttentionKernel);
    bn(prefix + ".h2_bn", a.shrink_channels);
    conv(prefix + ".out", a.out_channels, 2 * a.shrink_channels, 1);
    bn(prefix + ".out_bn", a.out_channels);
  }

 private:
  ParamLayout& layout_;
};

}  // namespace

void NetworkSpec::validate() const {
  require_range("in_channels", in_channels, 1, 64);
  require_range("base_channels", base_channels, 1, 1024);
  require_range("shallow_kernel", shallow_kernel, 1, 9);
  require_range("deep_kernel", deep_kernel, 1, 9);
  if (shallow_kernel % 2 == 0 || deep_kernel % 2 == 0) {
    throw ConfigError("network kernels must be odd so 'same' padding exists");
  }
  require_range("sam_count", attention.sam_count, 0, kStages);
  require_range("uam_count", attention.uam_count, 0, kStages);
  require_range("attention_shrink", attention.shrink_channels, 1, 1024);
  require_range("attention_out", attention.out_channels, 1, 1024);
  require_range("branch_count", branch_count, 0, 2);
  require_range("classes", classes, 2, 2);
}

NetworkSpec NetworkSpec::from_config(const Config& cfg) {
  NetworkSpec s;
  auto geti = [&](const char* key, int fallback) {
    return static_cast<int>(cfg.get_int(std::string("network.") + key, fallback));
  };
  s.in_channels = geti("in_channels", s.in_channels);
  s.base_channels = geti("base_channels", s.base_channels);
  s.shallow_kernel = geti("shallow_kernel", s.shallow_kernel);
  s.deep_kernel = geti("deep_kernel", s.deep_kernel);
  s.attention.sam_count = geti("sam_count", s.attention.sam_count);
  s.attention.uam_count = geti("uam_count", s.attention.uam_count);
  s.attention.shrink_channels = geti("attention_shrink", s.attention.shrink_channels);
  s.attention.out_channels = geti("attention_out", s.attention.out_channels);
  s.branch_count = geti("branch_count", s.branch_count);
  s.classes = geti("classes", s.classes);
  return s;
}

void NetworkSpec::to_config(Config& cfg) const {
  auto seti = [&](const char* key, int v) { cfg.set(std::string("network.") + key, std::to_string(v)); };
  seti("in_channels", in_channels);
  seti("base_channels", base_channels);
  seti("shallow_kernel", shallow_kernel);
  seti("deep_kernel", deep_kernel);
  seti("sam_count", attention.sam_count);
  seti("uam_count", attention.uam_count);
  seti("attention_shrink", attention.shrink_channels);
  seti("attention_out", attention.out_channels);
  seti("branch_count", branch_count);
  seti("classes", classes);
}

// ---- ParamStore ----

template <typename T>
Tensor<T>& ParamStore<T>::add(const std::string& name, Shape shape, ParamGroup group) {
  if (contains(name)) throw ValueError("duplicate parameter name " + name);
  params_.push_back(Param{name, Tensor<T>(std::move(shape)), group});
  return params_.back().tensor;
}

template <typename T>
BatchNormStats<T>& ParamStore<T>::add_batchnorm(const std::string& name, std::size_t channels) {
  for (const auto& b : batchnorms_) {
    if (b.name == name) throw ValueError("duplicate batch-norm name " + name);
  }
  BatchNorm b{name, {}};
  b.stats.running_mean.assign(channels, T(0));
  b.stats.running_var.assign(channels, T(1));
  batchnorms_.push_back(std::move(b));
  return batchnorms_.back().stats;
}

template <typename T>
bool ParamStore<T>::contains(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return true;
  }
  return false;
}

template <typename T>
Tensor<T>& ParamStore<T>::at(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p.tensor;
  }
  throw ValueError("parameter store has no parameter named " + name);
}

template <typename T>
const Tensor<T>& ParamStore<T>::at(const std::string& name) const {
  return const_cast<ParamStore*>(this)->at(name);
}

template <typename T>
BatchNormStats<T>& ParamStore<T>::batchnorm(const std::string& name) {
  for (auto& b : batchnorms_) {
    if (b.name == name) return b.stats;
  }
  throw ValueError("parameter store has no batch-norm named " + name);
}

template <typename T>
std::size_t ParamStore<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template <typename T>
void ParamStore<T>::set_requires_grad(bool value) {
  for (auto& p : params_) p.tensor.set_requires_grad(value);
}

template <typename T>
void ParamStore<T>::clear_grads() {
  for (auto& p : params_) p.tensor.clear_grad();
}

template <typename T>
ParamStore<T> ParamStore<T>::clone() const {
  ParamStore out;
  for (const auto& p : params_) {
    Tensor<T> t = p.tensor.clone();
    t.set_requires_grad(p.tensor.requires_grad());
    out.params_.push_back(Param{p.name, t, p.group});
  }
  out.batchnorms_ = batchnorms_;
  return out;
}

template <typename T>
template <typename U>
ParamStore<U> ParamStore<T>::cast() const {
  ParamStore<U> out;
  for (const auto& p : params_) {
    auto& t = out.add(p.name, p.tensor.shape(), p.group);
    auto src = p.tensor.data();
    auto dst = t.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<U>(src[i]);
  }
  for (const auto& b : batchnorms_) {
    auto& s = out.add_batchnorm(b.name, b.stats.running_mean.size());
    for (std::size_t i = 0; i < b.stats.running_mean.size(); ++i) {
      s.running_mean[i] = static_cast<U>(b.stats.running_mean[i]);
      s.running_var[i] = static_cast<U>(b.stats.running_var[i]);
    }
    s.ready = b.stats.ready;
  }
  return out;
}

template class ParamStore<float>;
template class ParamStore<double>;
template ParamStore<double> ParamStore<float>::cast<double>() const;
template ParamStore<float> ParamStore<double>::cast<float>() const;
template ParamStore<float> ParamStore<float>::cast<float>() const;
template ParamStore<double> ParamStore<double>::cast<double>() const;

// ---- init ----

std::size_t ParamLayout::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.shape.numel();
  return n;
}

ParamLayout parameter_layout(const NetworkSpec& spec) {
  spec.validate();
  ParamLayout layout;
  Builder b(layout);
  for (int l = 0; l < NetworkSpec::kLevels; ++l) {
    const std::string p = "enc" + std::to_string(l);
    const int in = l == 0 ? spec.in_channels : spec.level_channels(l - 1);
    const int c = spec.level_channels(l), k = spec.encoder_kernel(l);
    b.conv(p + ".conv1", c, in, k);
    b.bn(p + ".bn1", c);
    b.conv(p + ".conv2", c, c, k);
    b.bn(p + ".bn2", c);
  }
  int prev = spec.level_channels(NetworkSpec::kLevels - 1);
  std::vector<int> tap_channels(NetworkSpec::kStages + 1, 0);
  for (int j = 1; j <= NetworkSpec::kStages; ++j) {
    const std::string p = "dec" + std::to_string(j);
    const int c = spec.level_channels(NetworkSpec::kLevels - 1 - j);
    b.up(p + ".up", prev, c);
    int skip = c;
    if (spec.has_sam(j)) {
      b.attention(p + ".sam", c, spec.attention);
      skip = spec.attention.out_channels;
    }
    const int merged = skip + c;
    if (spec.has_uam(j)) {
      b.attention(p + ".uam", merged, spec.attention);
      prev = spec.attention.out_channels;
      tap_channels[j] = prev;
    } else {
      const int k = spec.decoder_kernel(j);
      b.conv(p + ".block.conv1", c, merged, k);
      b.bn(p + ".block.bn1", c);
      b.conv(p + ".block.conv2", c, c, k);
      b.bn(p + ".block.bn2", c);
      prev = c;
      tap_channels[j] = merged;
    }
  }
  b.conv("head", spec.classes, prev, 1);
  b.bias("head", spec.classes, ParamGroup::Main);
  for (int m = 1; m <= spec.branch_count; ++m) {
    const std::string name = "aux" + std::to_string(m);
    b.conv(name, spec.classes, tap_channels[NetworkSpec::branch_stage(m)], 1, ParamGroup::Side);
    b.bias(name, spec.classes, ParamGroup::Side);
  }
  return layout;
}

template <typename T>
void check_params(const NetworkSpec& spec, const ParamStore<T>& params) {
  const ParamLayout layout = parameter_layout(spec);
  const auto& have = params.params();
  if (have.size() != layout.params.size() || params.batchnorms().size() != layout.batchnorms.size()) {
    throw ShapeError("parameter store does not match the network spec (" + std::to_string(have.size()) +
                     " parameters, spec declares " + std::to_string(layout.params.size()) + ")");
  }
  for (std::size_t i = 0; i < have.size(); ++i) {
    const auto& d = layout.params[i];
    if (have[i].name != d.name || have[i].tensor.shape() != d.shape || have[i].group != d.group) {
      throw ShapeError("parameter store does not match the network spec at " + d.name + " " + d.shape.str() +
                       " (store has " + have[i].name + " " + have[i].tensor.shape().str() + ")");
    }
  }
}

template void check_params(const NetworkSpec&, const ParamStore<float>&);
template void check_params(const NetworkSpec&, const ParamStore<double>&);

ParamStore<float> init_params(const NetworkSpec& spec, std::uint64_t seed) {
  const ParamLayout layout = parameter_layout(spec);
  ParamStore<float> store;
  for (const auto& d : layout.params) {
    auto& t = store.add(d.name, d.shape, d.group);
    switch (d.init) {
      case ParamDecl::Init::Zero:
        break;
      case ParamDecl::Init::One:
        for (auto& v : t.data()) v = 1.f;
        break;
      case ParamDecl::Init::HeTruncated: {
        Rng rng(mix_seed(seed, name_hash(d.name)));
        const double sigma = std::sqrt(2.0 / d.fan_in);
        for (auto& v : t.data()) v = static_cast<float>(sigma * rng.truncated_normal(2.0));
        break;
      }
    }
  }
  for (const auto& [name, channels] : layout.batchnorms) store.add_batchnorm(name, channels);
  return store;
}

// ---- forward ----

namespace {

template <typename T>
class Layers {
 public:
  Layers(ParamStore<T>& params, Tape<T>& tape, Mode mode, std::vector<std::string>* used)
      : params_(params), tape_(tape), mode_(mode), used_(used) {}

  Tensor<T>& param(const std::string& name) {
    if (used_) used_->push_back(name);
    return params_.at(name);
  }

  Tensor<T> conv(const Tensor<T>& x, const std::string& name, bool with_bias = false) {
    const Tensor<T>& w = param(name + ".weight");
    const Tensor<T> b = with_bias ? param(name + ".bias") : Tensor<T>();
    const int k = static_cast<int>(w.shape()[2]);
    return ops::conv3d(tape_, x, w, b, 1, k / 2);
  }

  Tensor<T> bn(const Tensor<T>& x, const std::string& name) {
    const Tensor<T>& g = param(name + ".gamma");
    const Tensor<T>& b = param(name + ".beta");
    return ops::batchnorm3d(tape_, x, g, b, params_.batchnorm(name), mode_);
  }

  Tensor<T> conv_bn_relu(const Tensor<T>& x, const std::string& conv_name, const std::string& bn_name) {
    return ops::relu(tape_, bn(conv(x, conv_name), bn_name));
  }

  Tensor<T> block(const Tensor<T>& x, const std::string& prefix, const char* conv1, const char* bn1,
                  const char* conv2, const char* bn2) {
    const Tensor<T> h = conv_bn_relu(x, prefix + conv1, prefix + bn1);
    return conv_bn_relu(h, prefix + conv2, prefix + bn2);
  }

  Tape<T>& tape() { return tape_; }
  Mode mode() const { return mode_; }
  ParamStore<T>& params() { return params_; }
  std::vector<std::string>* used() { return used_; }

 private:
  ParamStore<T>& params_;
  Tape<T>& tape_;
  Mode mode_;
  std::vector<std::string>* used_;
};

}  // namespace

template <typename T>
Tensor<T> attention_module(Tape<T>& tape, const Tensor<T>& input, ParamStore<T>& params,
                           const std::string& prefix, Mode mode, Tensor<T>* probe,
                           std::vector<std::string>* used) {
  Layers<T> L(params, tape, mode, used);
  const Shape& pw = params.at(prefix + ".p.weight").shape();
  require_5d(input.shape(), "attention module input");
  if (pw[1] != input.shape().c()) {
    throw ShapeError(prefix + ": attention module expects " + std::to_string(pw[1]) +
                     " input channels, got " + std::to_string(input.shape().c()));
  }
  const Tensor<T> p = L.conv_bn_relu(input, prefix + ".p", prefix + ".p_bn");
  const Tensor<T> h = L.conv_bn_relu(p, prefix + ".h1", prefix + ".h1_bn");
  // No ReLU before the softmax: the attention logits keep their sign.
  const Tensor<T> w = L.bn(L.conv(h, prefix + ".h2"), prefix + ".h2_bn");
  const Tensor<T> a = ops::softmax_channels(tape, w);
  if (probe) *probe = a;
  const Tensor<T> t = ops::mul(tape, a, p);
  return L.conv_bn_relu(ops::concat_channels(tape, p, t), prefix + ".out", prefix + ".out_bn");
}

template <typename T>
ForwardResult<T> forward(const NetworkSpec& spec, ParamStore<T>& params, Tape<T>& tape,
                         const Tensor<T>& input, Mode mode) {
  spec.validate();
  require_5d(input.shape(), "network input");
  const Shape& s = input.shape();
  if (s.c() != static_cast<std::size_t>(spec.in_channels)) {
    throw ShapeError("network input has " + std::to_string(s.c()) + " channels, spec expects " +
                     std::to_string(spec.in_channels));
  }
  if (s.d() % 8 || s.h() % 8 || s.w() % 8 || s.d() == 0 || s.h() == 0 || s.w() == 0) {
    throw ShapeError("network input spatial dims must be positive multiples of 8, got " + s.str());
  }

  check_params(spec, params);

  ForwardResult<T> out;
  Layers<T> L(params, tape, mode, &out.params_used);

  std::vector<Tensor<T>> skips;
  Tensor<T> x = input;
  for (int l = 0; l < NetworkSpec::kLevels; ++l) {
    if (l > 0) x = ops::maxpool3d(tape, x);
    x = L.block(x, "enc" + std::to_string(l), ".conv1", ".bn1", ".conv2", ".bn2");
    skips.push_back(x);
  }

  std::vector<Tensor<T>> taps(NetworkSpec::kStages + 1);
  for (int j = 1; j <= NetworkSpec::kStages; ++j) {
    const std::string p = "dec" + std::to_string(j);
    const Tensor<T> up = ops::conv_transpose3d(tape, x, L.param(p + ".up.weight"));
    Tensor<T> skip = skips[static_cast<std::size_t>(NetworkSpec::kLevels - 1 - j)];
    if (spec.has_sam(j)) {
      AttentionProbe<T> probe{p + ".sam", {}};
      skip = attention_module(tape, skip, params, p + ".sam", mode, &probe.weights, &out.params_used);
      out.attention.push_back(std::move(probe));
    }
    const Tensor<T> merged = ops::concat_channels(tape, skip, up);
    if (spec.has_uam(j)) {
      AttentionProbe<T> probe{p + ".uam", {}};
      x = attention_module(tape, merged, params, p + ".uam", mode, &probe.weights, &out.params_used);
      out.attention.push_back(std::move(probe));
      taps[j] = x;
    } else {
      x = L.block(merged, p + ".block", ".conv1", ".bn1", ".conv2", ".bn2");
      taps[j] = merged;
    }
  }

  out.main_logits = L.conv(x, "head", true);
  out.main_prob = ops::softmax_channels(tape, out.main_logits);
  for (int m = 1; m <= spec.branch_count; ++m) {
    const Tensor<T> logits = L.conv(taps[NetworkSpec::branch_stage(m)], "aux" + std::to_string(m), true);
    out.aux_logits.push_back(logits);
    out.aux_probs.push_back(ops::softmax_channels(tape, logits));
  }
  return out;
}

template Tensor<float> attention_module(Tape<float>&, const Tensor<float>&, ParamStore<float>&,
                                        const std::string&, Mode, Tensor<float>*, std::vector<std::string>*);
template Tensor<double> attention_module(Tape<double>&, const Tensor<double>&, ParamStore<double>&,
                                         const std::string&, Mode, Tensor<double>*,
                                         std::vector<std::string>*);
template ForwardResult<float> forward(const NetworkSpec&, ParamStore<float>&, Tape<float>&,
                                      const Tensor<float>&, Mode);
template ForwardResult<double> forward(const NetworkSpec&, ParamStore<double>&, Tape<double>&,
                                       const Tensor<double>&, Mode);

}  // namespace hasseg
