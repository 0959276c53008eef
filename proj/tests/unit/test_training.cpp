#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "../support/test_util.hpp"
#include "hasseg/error.hpp"
#include "hasseg/grad_check.hpp"
#include "hasseg/phantom.hpp"
#include "hasseg/training.hpp"

using namespace hasseg;
namespace ht = hasseg::testing;

namespace {

NetworkSpec tiny_spec() {
  NetworkSpec s;
  s.base_channels = 2;
  s.attention.shrink_channels = 3;
  s.attention.out_channels = 4;
  return s;
}

Volume random_mask(std::array<std::size_t, 3> dims, Rng& rng) {
  Volume m(dims, {1, 1, 1}, VolumeKind::Mask);
  for (auto& v : m.data) v = rng.uniform() < 0.4 ? 1.f : 0.f;
  return m;
}

// -log softmax(z)[y] averaged over voxels, straight from the definition.
double ce_oracle(const Tensor<double>& logits, const Volume& label) {
  const Shape& s = logits.shape();
  const auto z = logits.data();
  double total = 0;
  for (std::size_t v = 0; v < s.spatial(); ++v) {
    double denom = 0;
    for (std::size_t c = 0; c < s.c(); ++c) denom += std::exp(z[c * s.spatial() + v]);
    const std::size_t y = label.data[v] == 1.f ? 1 : 0;
    total += std::log(denom) - z[y * s.spatial() + v];
  }
  return total / static_cast<double>(s.spatial());
}

Volume downscale_oracle(const Volume& label, std::size_t f) {
  // Nearest with voxel-centre mapping at an integer factor picks index f*i + f/2.
  Volume out({label.dims[0] / f, label.dims[1] / f, label.dims[2] / f}, label.spacing, VolumeKind::Mask);
  for (std::size_t d = 0; d < out.dims[0]; ++d)
    for (std::size_t h = 0; h < out.dims[1]; ++h)
      for (std::size_t w = 0; w < out.dims[2]; ++w) out.at(d, h, w) = label.at(f * d + f / 2, f * h + f / 2, f * w + f / 2);
  return out;
}

ForwardResult<double> random_outputs(Rng& rng, std::size_t n, int branches) {
  ForwardResult<double> r;
  r.main_logits = ht::random_tensor<double>(Shape{1, 2, n, n, n}, rng, -3, 3);
  for (int m = 1; m <= branches; ++m) {
    const std::size_t k = n >> m;
    r.aux_logits.push_back(ht::random_tensor<double>(Shape{1, 2, k, k, k}, rng, -3, 3));
  }
  return r;
}

std::vector<Sample> phantom_samples(int count, std::size_t size, std::uint64_t seed) {
  PhantomSpec ps;
  ps.dims = {size, size, size};
  ps.semi_axis_min = size * 0.18;
  ps.semi_axis_max = size * 0.3;
  std::vector<Sample> out;
  for (int i = 0; i < count; ++i) {
    const Phantom p = generate_phantom(ps, mix_seed(seed, static_cast<std::uint64_t>(i)));
    out.push_back(prepare_sample("p" + std::to_string(i), p.image, p.mask, 1.0));
  }
  return out;
}

TrainConfig quick_config(int epochs) {
  TrainConfig c;
  c.learning_rate = 3e-3;
  c.beta1 = 0.9;
  c.epochs_per_level = epochs;
  c.context_levels = 2;
  c.seed = 5;
  return c;
}

}  // namespace

TEST(TrainConfig, ValidationAndRoundTrip) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.learning_rate, 1e-5);
  EXPECT_EQ(c.beta1, 0.5);
  EXPECT_EQ(c.beta2, 0.999);
  EXPECT_EQ(c.epochs_per_level, 30);
  EXPECT_EQ(c.context_levels, 2);

  for (auto mutate : std::vector<std::function<void(TrainConfig&)>>{
           [](TrainConfig& t) { t.batch_size = 2; }, [](TrainConfig& t) { t.context_levels = 0; },
           [](TrainConfig& t) { t.beta1 = 1.0; }, [](TrainConfig& t) { t.learning_rate = -1; },
           [](TrainConfig& t) { t.augment.orientations = 12; }, [](TrainConfig& t) { t.augment.erase_scale_lo = 0.9; },
           [](TrainConfig& t) { t.epochs_per_level = -1; }}) {
    TrainConfig bad;
    mutate(bad);
    EXPECT_THROW(bad.validate(), ConfigError);
  }

  c.learning_rate = 0.1 + 0.2;
  c.seed = 18446744073709551615ull;
  c.augment.erase_probability = 1.0 / 3.0;
  Config cfg;
  c.to_config(cfg);
  EXPECT_EQ(TrainConfig::from_config(Config::parse(cfg.str())), c);
}

TEST(CompositeLoss, ReducesToCrossEntropy) {
  Rng rng(1);
  const auto out = random_outputs(rng, 8, 0);
  const Volume y = random_mask({8, 8, 8}, rng);
  ParamStore<double> params;
  Tape<double> tape(false);
  const auto terms = composite_loss(tape, out, y, params, 0.0);
  const auto ce = ops::cross_entropy(tape, out.main_logits, std::span<const std::uint8_t>(mask_labels(y)));
  EXPECT_EQ(terms.total.item(), ce.item());
  EXPECT_NEAR(terms.total.item(), ce_oracle(out.main_logits, y), 1e-12);
}

TEST(CompositeLoss, PerfectPredictionsGiveZero) {
  Rng rng(2);
  const Volume y = random_mask({8, 8, 8}, rng);
  ForwardResult<double> out;
  auto confident = [](const Volume& label) {
    const std::size_t n = label.size();
    Tensor<double> t(Shape{1, 2, label.dims[0], label.dims[1], label.dims[2]});
    for (std::size_t v = 0; v < n; ++v) {
      t.data()[v] = label.data[v] == 1.f ? -40.0 : 40.0;
      t.data()[n + v] = -t.data()[v];
    }
    return t;
  };
  out.main_logits = confident(y);
  out.aux_logits = {confident(downscale_oracle(y, 2)), confident(downscale_oracle(y, 4))};
  ParamStore<double> params;
  Tape<double> tape(false);
  EXPECT_LT(composite_loss(tape, out, y, params, 0.0).total.item(), 1e-15);
}

TEST(CompositeLoss, TermByTermOracle) {
  Rng rng(3);
  const NetworkSpec spec = tiny_spec();
  ParamStore<double> params = init_params(spec, 9).cast<double>();
  for (int trial = 0; trial < 5; ++trial) {
    const auto out = random_outputs(rng, 16, 2);
    const Volume y = random_mask({16, 16, 16}, rng);
    const double lambda = rng.uniform(1e-4, 1e-1);
    Tape<double> tape(false);
    const auto terms = composite_loss(tape, out, y, params, lambda);

    double sq = 0;
    for (const auto& p : params.params()) {
      if (p.name.rfind("aux", 0) == 0) continue;
      for (double v : p.tensor.data()) sq += v * v;
    }
    const double main = ce_oracle(out.main_logits, y);
    const double a1 = ce_oracle(out.aux_logits[0], downscale_oracle(y, 2));
    const double a2 = ce_oracle(out.aux_logits[1], downscale_oracle(y, 4));
    EXPECT_NEAR(terms.main_ce, main, 1e-12);
    ASSERT_EQ(terms.aux_ce.size(), 2u);
    EXPECT_NEAR(terms.aux_ce[0], a1, 1e-12);
    EXPECT_NEAR(terms.aux_ce[1], a2, 1e-12);
    EXPECT_NEAR(terms.weight_decay, lambda * sq, 1e-12 * lambda * sq);
    EXPECT_NEAR(terms.total.item(), main + a1 + a2 + lambda * sq, 1e-10);
  }
}

TEST(CompositeLoss, AdditiveInBranches) {
  Rng rng(4);
  const auto full = random_outputs(rng, 16, 2);
  const Volume y = random_mask({16, 16, 16}, rng);
  ParamStore<double> params;
  Tape<double> tape(false);
  auto fewer = full;
  fewer.aux_logits.pop_back();
  const auto a = composite_loss(tape, full, y, params, 0.0);
  const auto b = composite_loss(tape, fewer, y, params, 0.0);
  EXPECT_EQ(a.total.item(), b.total.item() + a.aux_ce[1]);
}

TEST(CompositeLoss, ShapeErrors) {
  Rng rng(5);
  auto out = random_outputs(rng, 16, 2);
  ParamStore<double> params;
  Tape<double> tape(false);
  EXPECT_THROW(composite_loss(tape, out, random_mask({8, 8, 8}, rng), params, 0.0), ShapeError);
  std::swap(out.aux_logits[0], out.aux_logits[1]);
  EXPECT_THROW(composite_loss(tape, out, random_mask({16, 16, 16}, rng), params, 0.0), ShapeError);
}

TEST(CompositeLoss, GradientThroughNetwork) {
  const NetworkSpec spec = tiny_spec();
  ParamStore<double> params = init_params(spec, 4).cast<double>();
  Rng rng(6);
  const Volume y = random_mask({8, 8, 8}, rng);
  Tensor<double> x = ht::random_tensor<double>(Shape{1, 1, 8, 8, 8}, rng, 0, 1);
  // Populate running stats so eval-free train forwards are the only path used.
  std::vector<Tensor<double>> inputs;
  for (auto& p : params.params()) inputs.push_back(p.tensor);
  GradCheckOptions opt;
  opt.coordinates = 12;
  opt.directions = 2;
  const auto r = grad_check(
      [&](Tape<double>& tape) {
        const auto out = forward(spec, params, tape, x, Mode::Train);
        return composite_loss(tape, out, y, params, 1e-2).total;
      },
      inputs, opt);
  EXPECT_LT(r.max_rel_error, 1e-5) << r.worst;
}

TEST(Adam, ZeroGradientAndZeroRate) {
  ParamStore<float> params = init_params(tiny_spec(), 1);
  const ParamStore<float> before = params.clone();
  AdamState st = AdamState::zeros(params);
  TrainConfig cfg;
  for (auto& p : params.params()) std::fill(p.tensor.ensure_grad().begin(), p.tensor.ensure_grad().end(), 0.f);
  adam_step(params, st, cfg);
  for (std::size_t i = 0; i < params.params().size(); ++i) {
    const std::span<const float> a = params.params()[i].tensor.data(), b = before.params()[i].tensor.data();
    ASSERT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
  }

  Rng rng(7);
  for (auto& p : params.params()) {
    for (float& g : p.tensor.ensure_grad()) g = static_cast<float>(rng.uniform(-1, 1));
  }
  cfg.learning_rate = 0.0;
  adam_step(params, st, cfg);
  for (std::size_t i = 0; i < params.params().size(); ++i) {
    const std::span<const float> a = params.params()[i].tensor.data(), b = before.params()[i].tensor.data();
    ASSERT_EQ(std::memcmp(a.data(), b.data(), a.size_bytes()), 0);
  }
}

TEST(Adam, FirstStepOracle) {
  ParamStore<float> params;
  Tensor<float>& w = params.add("w", Shape{6}, ParamGroup::Main);
  const float grads[6] = {3.f, -2e-3f, 1e-6f, -50.f, 0.f, 0.25f};
  std::copy(grads, grads + 6, w.ensure_grad().begin());
  AdamState st = AdamState::zeros(params);
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  adam_step(params, st, cfg);
  for (int i = 0; i < 6; ++i) {
    // m_hat = g and v_hat = g^2 after bias correction, so the step is lr * g / (|g| + eps).
    const double g = grads[i];
    const double expect = -cfg.learning_rate * g / (std::fabs(g) + cfg.adam_eps);
    EXPECT_NEAR(w.data()[i], expect, 1e-9) << i;
  }
  EXPECT_EQ(st.step, 1u);
  AdamState wrong;
  EXPECT_THROW(adam_step(params, wrong, cfg), ShapeError);
}

TEST(Adam, MatchesDoubleRecurrenceOverSteps) {
  ParamStore<float> params;
  Tensor<float>& w = params.add("w", Shape{1}, ParamGroup::Main);
  w.data()[0] = 0.5f;
  AdamState st = AdamState::zeros(params);
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  double x = 0.5, m = 0, v = 0;
  for (int t = 1; t <= 20; ++t) {
    const double g = 2.0 * (w.data()[0] - 0.1);  // d/dx (x - 0.1)^2
    w.ensure_grad()[0] = static_cast<float>(g);
    adam_step(params, st, cfg);
    m = cfg.beta1 * m + (1 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
    x -= cfg.learning_rate * (m / (1 - std::pow(cfg.beta1, t))) /
         (std::sqrt(v / (1 - std::pow(cfg.beta2, t))) + cfg.adam_eps);
    EXPECT_NEAR(w.data()[0], x, 1e-5);
  }
}

TEST(Join, AutoContextProperties) {
  Rng rng(8);
  Volume x({4, 5, 6}, {1, 1, 1}, VolumeKind::Image), p({4, 5, 6}, {1, 1, 1}, VolumeKind::Prob);
  for (auto& v : x.data) v = static_cast<float>(rng.uniform());
  for (auto& v : p.data) v = static_cast<float>(rng.uniform());
  Volume zero = p;
  std::fill(zero.data.begin(), zero.data.end(), 0.f);
  EXPECT_EQ(join(x, zero).data, x.data);
  EXPECT_EQ(join(x, p).data, join(p, x).data);
  const Volume j = join(x, p);
  for (std::size_t i = 0; i < j.data.size(); ++i) {
    EXPECT_EQ(j.data[i], x.data[i] + p.data[i]);
    EXPECT_LE(j.data[i], 2.f);
  }
}

TEST(PrepareSample, NormalizesResamplesPads) {
  Rng rng(9);
  Volume img({10, 12, 20}, {0.5f, 0.5f, 0.5f}, VolumeKind::Image);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform(30, 200));
  const Volume mask = random_mask({10, 12, 20}, rng);
  const Sample s = prepare_sample("a", img, mask, 0.5);
  EXPECT_EQ(s.image.dims, (std::array<std::size_t, 3>{8, 8, 16}));
  EXPECT_EQ(s.mask.dims, s.image.dims);
  for (float v : s.image.data) {
    EXPECT_GE(v, 0.f);
    EXPECT_LE(v, 1.f);
  }
  EXPECT_EQ(s.image.at(6, 0, 0), 0.f);  // padding
  EXPECT_NO_THROW(s.mask.validate());
}

TEST(Checkpoint, RoundTripAndErrors) {
  Checkpoint c;
  c.level = 2;
  c.epoch = 7;
  c.spec = tiny_spec();
  c.train = quick_config(9);
  c.params = init_params(c.spec, 3);
  c.params.batchnorms()[1].stats.ready = true;
  c.params.batchnorms()[1].stats.running_mean[0] = -0.f;
  c.adam = AdamState::zeros(c.params);
  c.adam.step = 42;
  c.adam.m[0][0] = 1e-40f;
  c.rng_state = Rng(3).state();

  const auto bytes = encode_checkpoint(c);
  const Checkpoint d = decode_checkpoint(bytes);
  EXPECT_EQ(encode_checkpoint(d), bytes);
  EXPECT_EQ(d.level, 2);
  EXPECT_EQ(d.epoch, 7);
  EXPECT_EQ(d.spec, c.spec);
  EXPECT_EQ(d.train, c.train);
  EXPECT_EQ(d.adam, c.adam);
  EXPECT_EQ(d.rng_state, c.rng_state);
  EXPECT_TRUE(std::signbit(d.params.batchnorms()[1].stats.running_mean[0]));

  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), IoError);
  EXPECT_THROW(decode_checkpoint({bytes.begin(), bytes.end() - 5}), IoError);
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(decode_checkpoint(extra), IoError);
  EXPECT_THROW(read_checkpoint("/nonexistent/x.ckpt"), IoError);

  Checkpoint mismatched = c;
  mismatched.spec.base_channels = 3;
  EXPECT_THROW(decode_checkpoint(encode_checkpoint(mismatched)), IoError);
}

TEST(TrainLevel, Errors) {
  const auto data = phantom_samples(1, 16, 1);
  EXPECT_THROW(train_level(1, {}, nullptr, tiny_spec(), quick_config(1)), ValueError);
  EXPECT_THROW(train_level(2, data, nullptr, tiny_spec(), quick_config(1)), ValueError);
  TrainConfig bad = quick_config(1);
  bad.batch_size = 4;
  EXPECT_THROW(train_level(1, data, nullptr, tiny_spec(), bad), ConfigError);
}

TEST(TrainLevel, ZeroEpochsKeepsInitialization) {
  const auto data = phantom_samples(1, 16, 2);
  const TrainConfig cfg = quick_config(0);
  const Checkpoint c = train_level(1, data, nullptr, tiny_spec(), cfg);
  EXPECT_EQ(c.epoch, 0);
  const ParamStore<float> init = init_params(tiny_spec(), mix_seed(cfg.seed, std::uint64_t{1}));
  for (std::size_t i = 0; i < init.params().size(); ++i) {
    const auto a = c.params.params()[i].tensor.data(), b = init.params()[i].tensor.data();
    ASSERT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
  }
}

TEST(TrainLevel, LossDecreasesAndIsFinite) {
  const auto data = phantom_samples(4, 16, 3);
  std::vector<EpochRecord> log;
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& r) { log.push_back(r); };
  train_level(1, data, nullptr, tiny_spec(), quick_config(6), hooks);
  ASSERT_EQ(log.size(), 6u);
  for (const auto& r : log) {
    EXPECT_TRUE(std::isfinite(r.mean_loss));
    EXPECT_EQ(r.aux_ce.size(), 2u);
    EXPECT_NEAR(r.mean_loss, r.main_ce + r.aux_ce[0] + r.aux_ce[1] + r.weight_decay, 1e-5);
  }
  EXPECT_LT(log.back().mean_loss, log.front().mean_loss);
  const std::string line = log[0].str();
  EXPECT_EQ(line.substr(0, 4), "1 1 ");
  EXPECT_EQ(std::count(line.begin(), line.end(), ' '), 6);
}

TEST(TrainLevel, ResumeIsBitwiseAndRunsAreDeterministic) {
  const auto data = phantom_samples(2, 16, 4);
  const TrainConfig cfg = quick_config(3);
  const auto full = encode_checkpoint(train_level(1, data, nullptr, tiny_spec(), cfg));
  EXPECT_EQ(encode_checkpoint(train_level(1, data, nullptr, tiny_spec(), cfg)), full);

  TrainHooks stop;
  stop.should_stop = [](int epoch) { return epoch == 1; };
  const Checkpoint partial = train_level(1, data, nullptr, tiny_spec(), cfg, stop);
  EXPECT_EQ(partial.epoch, 1);
  // Resume from a checkpoint that went through the file format.
  const Checkpoint reloaded = decode_checkpoint(encode_checkpoint(partial));
  const Checkpoint resumed = train_level(1, data, nullptr, tiny_spec(), cfg, {}, &reloaded);
  EXPECT_EQ(encode_checkpoint(resumed), full);

  TrainConfig other = cfg;
  other.learning_rate = 1e-2;
  EXPECT_THROW(train_level(1, data, nullptr, tiny_spec(), other, {}, &reloaded), ConfigError);
}

TEST(Cascade, MatchesPipelineOracle) {
  const auto data = phantom_samples(2, 16, 5);
  TrainConfig cfg = quick_config(1);
  Checkpoint l1 = train_level(1, data, nullptr, tiny_spec(), cfg);
  const auto prev = predecessor_maps(l1, data, nullptr);
  Checkpoint l2 = train_level(2, data, &prev, tiny_spec(), cfg);

  PhantomSpec ps;
  ps.dims = {12, 16, 20};
  ps.semi_axis_min = 3;
  ps.semi_axis_max = 4;
  const Phantom p = generate_phantom(ps, 77);

  std::vector<Checkpoint> levels{l1, l2};
  const CascadeResult r = infer_cascade(p.image, levels, 1.0);
  EXPECT_TRUE(r.padded);
  EXPECT_EQ(r.network_dims, (std::array<std::size_t, 3>{16, 16, 24}));
  ASSERT_EQ(r.prob_per_level.size(), 2u);

  // Oracle: normalize, pad by hand, chain join -> forward -> join -> forward, crop.
  const Volume norm = normalize_minmax(p.image);
  Volume x({16, 16, 24}, norm.spacing, VolumeKind::Image);
  std::fill(x.data.begin(), x.data.end(), 0.f);
  for (std::size_t d = 0; d < 12; ++d)
    for (std::size_t h = 0; h < 16; ++h)
      for (std::size_t w = 0; w < 20; ++w) x.at(d, h, w) = norm.at(d, h, w);
  const Volume p1 = predict_probability(l1.spec, l1.params, x);
  Volume x2 = x;
  for (std::size_t i = 0; i < x2.data.size(); ++i) x2.data[i] += p1.data[i];
  const Volume p2 = predict_probability(l2.spec, l2.params, x2);
  for (std::size_t d = 0; d < 12; ++d)
    for (std::size_t h = 0; h < 16; ++h)
      for (std::size_t w = 0; w < 20; ++w) {
        ASSERT_EQ(r.prob_per_level[0].at(d, h, w), p1.at(d, h, w));
        ASSERT_EQ(r.prob_per_level[1].at(d, h, w), p2.at(d, h, w));
        ASSERT_EQ(r.mask.at(d, h, w), p2.at(d, h, w) >= 0.5f ? 1.f : 0.f);
      }
  EXPECT_NO_THROW(r.mask.validate());
  EXPECT_EQ(r.mask.spacing, p.image.spacing);

  std::vector<Checkpoint> none;
  EXPECT_THROW(infer_cascade(p.image, none, 1.0), ValueError);
  std::vector<Checkpoint> wrong{l2};
  EXPECT_THROW(infer_cascade(p.image, wrong, 1.0), ValueError);
}

TEST(Cascade, ResamplesBackToOriginalGrid) {
  const auto data = phantom_samples(1, 16, 6);
  Checkpoint l1 = train_level(1, data, nullptr, tiny_spec(), quick_config(1));
  PhantomSpec ps;
  ps.dims = {20, 20, 20};
  ps.semi_axis_min = 4;
  ps.semi_axis_max = 6;
  const Phantom p = generate_phantom(ps, 3);
  std::vector<Checkpoint> levels{l1};
  const CascadeResult r = infer_cascade(p.image, levels, 0.4);
  EXPECT_EQ(r.network_dims, (std::array<std::size_t, 3>{8, 8, 8}));
  EXPECT_EQ(r.mask.dims, p.image.dims);
  for (float v : r.prob_per_level[0].data) {
    EXPECT_GE(v, 0.f);
    EXPECT_LE(v, 1.f);
  }
}
