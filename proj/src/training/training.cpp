#include "hasseg/training.hpp"

#include <cmath>
#include <numeric>

#include "hasseg/error.hpp"
#include "hasseg/ops.hpp"
#include "hasseg/rng.hpp"

namespace hasseg {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("train: " + msg); };
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be finite and >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2 must be in [0, 1)");
  if (!(adam_eps > 0.0) || !std::isfinite(adam_eps)) fail("adam_eps must be > 0");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) fail("weight_decay must be finite and >= 0");
  if (epochs_per_level < 0) fail("epochs_per_level must be >= 0");
  if (batch_size != 1) fail("batch_size must be 1 (batch-norm statistics are defined per volume)");
  if (context_levels < 1) fail("context_levels must be >= 1");
  if (augment.orientations < 1 || augment.orientations > 8) {
    fail("orientations must be in 1..8 (the flip group has 8 elements)");
  }
  if (!(augment.erase_probability >= 0.0 && augment.erase_probability <= 1.0)) {
    fail("erase_probability must be in [0, 1]");
  }
  if (!(augment.erase_scale_lo >= 0.0 && augment.erase_scale_lo <= augment.erase_scale_hi &&
        augment.erase_scale_hi <= 1.0)) {
    fail("erase scales must satisfy 0 <= erase_scale_lo <= erase_scale_hi <= 1");
  }
}

TrainConfig TrainConfig::from_config(const Config& cfg) {
  TrainConfig t;
  t.learning_rate = cfg.get_double("train.learning_rate", t.learning_rate);
  t.beta1 = cfg.get_double("train.beta1", t.beta1);
  t.beta2 = cfg.get_double("train.beta2", t.beta2);
  t.adam_eps = cfg.get_double("train.adam_eps", t.adam_eps);
  t.weight_decay = cfg.get_double("train.weight_decay", t.weight_decay);
  t.epochs_per_level = static_cast<int>(cfg.get_int("train.epochs_per_level", t.epochs_per_level));
  t.batch_size = static_cast<int>(cfg.get_int("train.batch_size", t.batch_size));
  t.context_levels = static_cast<int>(cfg.get_int("train.context_levels", t.context_levels));
  t.seed = cfg.get_u64("train.seed", t.seed);
  t.augment.orientations = static_cast<int>(cfg.get_int("train.orientations", t.augment.orientations));
  t.augment.erase_probability = cfg.get_double("train.erase_probability", t.augment.erase_probability);
  t.augment.erase_scale_lo = cfg.get_double("train.erase_scale_lo", t.augment.erase_scale_lo);
  t.augment.erase_scale_hi = cfg.get_double("train.erase_scale_hi", t.augment.erase_scale_hi);
  return t;
}

void TrainConfig::to_config(Config& cfg) const {
  cfg.set("train.learning_rate", format_double(learning_rate));
  cfg.set("train.beta1", format_double(beta1));
  cfg.set("train.beta2", format_double(beta2));
  cfg.set("train.adam_eps", format_double(adam_eps));
  cfg.set("train.weight_decay", format_double(weight_decay));
  cfg.set("train.epochs_per_level", std::to_string(epochs_per_level));
  cfg.set("train.batch_size", std::to_string(batch_size));
  cfg.set("train.context_levels", std::to_string(context_levels));
  cfg.set("train.seed", std::to_string(seed));
  cfg.set("train.orientations", std::to_string(augment.orientations));
  cfg.set("train.erase_probability", format_double(augment.erase_probability));
  cfg.set("train.erase_scale_lo", format_double(augment.erase_scale_lo));
  cfg.set("train.erase_scale_hi", format_double(augment.erase_scale_hi));
}

Tensor<float> volume_tensor(const Volume& v) {
  return Tensor<float>(Shape{1, 1, v.dims[0], v.dims[1], v.dims[2]}, v.data);
}

std::vector<std::uint8_t> mask_labels(const Volume& mask) {
  std::vector<std::uint8_t> labels(mask.data.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const float v = mask.data[i];
    if (v != 0.f && v != 1.f) throw ValueError("mask_labels: mask must contain only 0 and 1");
    labels[i] = v == 1.f ? 1 : 0;
  }
  return labels;
}

Volume foreground_probability(const Tensor<float>& prob, std::array<float, 3> spacing) {
  const Shape& s = prob.shape();
  require_5d(s, "foreground_probability");
  if (s.n() != 1 || s.c() < 2) throw ShapeError("foreground_probability: expected 1 x C x D x H x W with C >= 2");
  Volume out({s.d(), s.h(), s.w()}, spacing, VolumeKind::Prob);
  const auto p = prob.data();
  std::copy(p.begin() + static_cast<std::ptrdiff_t>(s.spatial()), p.begin() + static_cast<std::ptrdiff_t>(2 * s.spatial()),
            out.data.begin());
  return out;
}

template <typename T>
LossTerms<T> composite_loss(Tape<T>& tape, const ForwardResult<T>& out, const Volume& label,
                            const ParamStore<T>& params, double lambda) {
  const Shape& s = out.main_logits.shape();
  require_5d(s, "composite_loss");
  if (s.n() != 1) throw ShapeError("composite_loss: batch size must be 1");
  if (std::array<std::size_t, 3>{s.d(), s.h(), s.w()} != label.dims) {
    throw ShapeError("composite_loss: label grid does not match main output " + s.str());
  }
  LossTerms<T> terms;
  Tensor<T> main = ops::cross_entropy(tape, out.main_logits, std::span<const std::uint8_t>(mask_labels(label)));
  terms.main_ce = static_cast<double>(main.item());
  Tensor<T> total = main;

  for (std::size_t i = 0; i < out.aux_logits.size(); ++i) {
    const std::size_t f = std::size_t{1} << (i + 1);
    std::array<std::size_t, 3> dims{};
    for (int a = 0; a < 3; ++a) {
      if (label.dims[a] % f != 0) throw ShapeError("composite_loss: label extent not divisible by " + std::to_string(f));
      dims[a] = label.dims[a] / f;
    }
    const Shape& as = out.aux_logits[i].shape();
    if (as.rank() != 5 || std::array<std::size_t, 3>{as.d(), as.h(), as.w()} != dims) {
      throw ShapeError("composite_loss: side branch " + std::to_string(i + 1) + " output " + as.str() +
                       " does not match the 1/" + std::to_string(f) + " label grid");
    }
    const Volume small = resample(label, dims, Interp::Nearest);
    Tensor<T> ce = ops::cross_entropy(tape, out.aux_logits[i], std::span<const std::uint8_t>(mask_labels(small)));
    terms.aux_ce.push_back(static_cast<double>(ce.item()));
    total = ops::add(tape, total, ce);
  }

  if (lambda != 0.0) {
    Tensor<T> decay;
    for (const auto& p : params.params()) {
      if (p.group != ParamGroup::Main) continue;
      Tensor<T> sq = ops::sum_squares(tape, p.tensor);
      decay = decay.defined() ? ops::add(tape, decay, sq) : sq;
    }
    if (decay.defined()) {
      decay = ops::scale(tape, decay, static_cast<T>(lambda));
      terms.weight_decay = static_cast<double>(decay.item());
      total = ops::add(tape, total, decay);
    }
  }
  terms.total = total;
  return terms;
}

template LossTerms<float> composite_loss(Tape<float>&, const ForwardResult<float>&, const Volume&,
                                         const ParamStore<float>&, double);
template LossTerms<double> composite_loss(Tape<double>&, const ForwardResult<double>&, const Volume&,
                                          const ParamStore<double>&, double);

AdamState AdamState::zeros(const ParamStore<float>& params) {
  AdamState s;
  for (const auto& p : params.params()) {
    s.m.emplace_back(p.tensor.numel(), 0.f);
    s.v.emplace_back(p.tensor.numel(), 0.f);
  }
  return s;
}

void adam_step(ParamStore<float>& params, AdamState& state, const TrainConfig& cfg) {
  auto& ps = params.params();
  if (state.m.size() != ps.size() || state.v.size() != ps.size()) {
    throw ShapeError("adam_step: optimizer state has " + std::to_string(state.m.size()) + " entries for " +
                     std::to_string(ps.size()) + " parameters");
  }
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (state.m[i].size() != ps[i].tensor.numel() || state.v[i].size() != ps[i].tensor.numel()) {
      throw ShapeError("adam_step: optimizer state shape mismatch for " + ps[i].name);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t), c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Tensor<float>& p = ps[i].tensor;
    auto x = p.data();
    const bool has = p.has_grad();
    std::span<const float> g = has ? std::span<const float>(p.grad()) : std::span<const float>();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < x.size(); ++j) {
      // Moments are stored in float but updated in double.
      const double gj = has ? g[j] : 0.0;
      m[j] = static_cast<float>(cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj);
      v[j] = static_cast<float>(cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj);
      const double mhat = m[j] / c1, vhat = v[j] / c2;
      x[j] = static_cast<float>(x[j] - cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps));
    }
  }
}

namespace {

Volume pad_to_multiple(const Volume& v, std::size_t multiple) {
  std::array<std::size_t, 3> dims{};
  for (int a = 0; a < 3; ++a) dims[a] = (v.dims[a] + multiple - 1) / multiple * multiple;
  if (dims == v.dims) return v;
  Volume out(dims, v.spacing, v.kind);
  std::fill(out.data.begin(), out.data.end(), 0.f);
  for (std::size_t d = 0; d < v.dims[0]; ++d)
    for (std::size_t h = 0; h < v.dims[1]; ++h)
      for (std::size_t w = 0; w < v.dims[2]; ++w) out.at(d, h, w) = v.at(d, h, w);
  return out;
}

Volume crop(const Volume& v, std::array<std::size_t, 3> dims) {
  if (dims == v.dims) return v;
  Volume out(dims, v.spacing, v.kind);
  for (std::size_t d = 0; d < dims[0]; ++d)
    for (std::size_t h = 0; h < dims[1]; ++h)
      for (std::size_t w = 0; w < dims[2]; ++w) out.at(d, h, w) = v.at(d, h, w);
  return out;
}

Volume zeros_like(const Volume& v, VolumeKind kind) {
  Volume out(v.dims, v.spacing, kind);
  std::fill(out.data.begin(), out.data.end(), 0.f);
  return out;
}

constexpr std::uint64_t kTrainStream = 0x747261696e;  // "train"

}  // namespace

Sample prepare_sample(const std::string& id, const Volume& image, const Volume& mask, double factor) {
  require_same_grid(image, mask, "prepare_sample");
  Sample s;
  s.id = id;
  s.image = pad_to_multiple(resample(normalize_minmax(image), factor, Interp::Trilinear), 8);
  s.mask = pad_to_multiple(resample(mask, factor, Interp::Nearest), 8);
  return s;
}

std::string EpochRecord::str() const {
  std::string s = std::to_string(level) + " " + std::to_string(epoch) + " " + format_double(mean_loss) + " " +
                  format_double(main_ce);
  for (double a : aux_ce) s += " " + format_double(a);
  s += " " + format_double(weight_decay);
  return s;
}

Checkpoint train_level(int level, const std::vector<Sample>& data, const std::vector<Volume>* prev,
                       const NetworkSpec& spec, const TrainConfig& cfg, const TrainHooks& hooks,
                       const Checkpoint* resume) {
  spec.validate();
  cfg.validate();
  if (level < 1) throw ValueError("train_level: level must be >= 1");
  if (data.empty()) throw ValueError("train_level: training set is empty");
  if (level > 1) {
    if (!prev || prev->size() != data.size()) {
      throw ValueError("train_level: level " + std::to_string(level) +
                       " needs a predecessor probability map for every training volume");
    }
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    require_same_grid(data[i].image, data[i].mask, "train_level");
    if (prev && level > 1) require_same_grid(data[i].image, (*prev)[i], "train_level predecessor");
  }

  Checkpoint st;
  if (resume) {
    if (resume->level != level || !(resume->spec == spec) || !(resume->train == cfg)) {
      throw ConfigError("train_level: checkpoint does not match the requested level, network or training config");
    }
    st.level = resume->level;
    st.epoch = resume->epoch;
    st.spec = resume->spec;
    st.train = resume->train;
    st.params = resume->params.clone();
    st.adam = resume->adam;
    st.rng_state = resume->rng_state;
  } else {
    st.level = level;
    st.spec = spec;
    st.train = cfg;
    st.params = init_params(spec, mix_seed(cfg.seed, static_cast<std::uint64_t>(level)));
    st.adam = AdamState::zeros(st.params);
    st.rng_state = Rng(mix_seed(cfg.seed, kTrainStream, static_cast<std::uint64_t>(level))).state();
  }
  st.params.set_requires_grad(true);

  Rng rng;
  rng.restore(st.rng_state);
  const auto orients = orientation_set(cfg.augment.orientations);
  std::vector<std::size_t> order(data.size());

  for (int epoch = st.epoch + 1; epoch <= cfg.epochs_per_level; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);

    EpochRecord rec;
    rec.level = level;
    rec.epoch = epoch;
    rec.aux_ce.assign(static_cast<std::size_t>(spec.branch_count), 0.0);
    for (std::size_t idx : order) {
      const Sample& s = data[idx];
      const Orientation& o = orients[rng.uniform_index(orients.size())];
      Volume img = apply_orientation(s.image, o);
      const Volume mask = apply_orientation(s.mask, o);
      if (rng.uniform() < cfg.augment.erase_probability) {
        img = random_erase(img, mask, cfg.augment.erase_scale_lo, cfg.augment.erase_scale_hi, rng);
      }
      if (level > 1) img = join(img, apply_orientation((*prev)[idx], o));

      Tape<float> tape;
      const auto out = forward(spec, st.params, tape, volume_tensor(img), Mode::Train);
      const auto loss = composite_loss(tape, out, mask, st.params, cfg.weight_decay);
      tape.backward(loss.total);
      adam_step(st.params, st.adam, cfg);
      st.params.clear_grads();

      rec.mean_loss += static_cast<double>(loss.total.item());
      rec.main_ce += loss.main_ce;
      for (std::size_t m = 0; m < loss.aux_ce.size(); ++m) rec.aux_ce[m] += loss.aux_ce[m];
      rec.weight_decay += loss.weight_decay;
    }
    const double n = static_cast<double>(data.size());
    rec.mean_loss /= n;
    rec.main_ce /= n;
    for (double& a : rec.aux_ce) a /= n;
    rec.weight_decay /= n;

    st.epoch = epoch;
    st.rng_state = rng.state();
    if (hooks.on_epoch) hooks.on_epoch(rec);
    if (hooks.on_checkpoint) hooks.on_checkpoint(st);
    if (epoch < cfg.epochs_per_level && hooks.should_stop && hooks.should_stop(epoch)) break;
  }
  st.params.set_requires_grad(false);
  return st;
}

Volume predict_probability(const NetworkSpec& spec, ParamStore<float>& params, const Volume& input) {
  Tape<float> tape(false);
  const auto out = forward(spec, params, tape, volume_tensor(input), Mode::Eval);
  return foreground_probability(out.main_prob, input.spacing);
}

std::vector<Volume> predecessor_maps(Checkpoint& ckpt, const std::vector<Sample>& data,
                                     const std::vector<Volume>* prev) {
  if (ckpt.level > 1 && (!prev || prev->size() != data.size())) {
    throw ValueError("predecessor_maps: level " + std::to_string(ckpt.level) + " needs its own predecessor maps");
  }
  std::vector<Volume> maps;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Volume input = ckpt.level > 1 ? join(data[i].image, (*prev)[i]) : data[i].image;
    maps.push_back(predict_probability(ckpt.spec, ckpt.params, input));
  }
  return maps;
}

CascadeResult infer_cascade(const Volume& image, std::vector<Checkpoint>& levels, double factor) {
  if (levels.empty()) throw ValueError("infer_cascade: no checkpoints");
  for (std::size_t k = 0; k < levels.size(); ++k) {
    if (levels[k].level != static_cast<int>(k) + 1) {
      throw ValueError("infer_cascade: checkpoints must be ordered by level starting at 1");
    }
  }
  CascadeResult r;
  const Volume scaled = resample(normalize_minmax(image), factor, Interp::Trilinear);
  const Volume x = pad_to_multiple(scaled, 8);
  r.network_dims = x.dims;
  r.padded = x.dims != scaled.dims;

  Volume prob = zeros_like(x, VolumeKind::Prob);
  for (auto& ckpt : levels) {
    prob = predict_probability(ckpt.spec, ckpt.params, join(x, prob));
    Volume full = resample(crop(prob, scaled.dims), image.dims, Interp::Trilinear);
    full.spacing = image.spacing;
    r.prob_per_level.push_back(std::move(full));
  }
  r.mask = Volume(image.dims, image.spacing, VolumeKind::Mask);
  const Volume& last = r.prob_per_level.back();
  for (std::size_t i = 0; i < last.data.size(); ++i) r.mask.data[i] = last.data[i] >= 0.5f ? 1.f : 0.f;
  return r;
}

}  // namespace hasseg
