#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "kinegraph/error.hpp"
#include "kinegraph/model.hpp"
#include "test_support.hpp"

using namespace kinegraph;

namespace {

ModelConfig small_config(std::size_t classes = 4) {
  ModelConfig c;
  c.joints = 5;
  c.classes = classes;
  c.channels = {4, 6};
  c.strides = {1, 2};
  c.frames = 10;
  c.aux_tap = 2;
  return c;
}

ClassTemplateSet identity_templates(std::size_t classes, std::size_t joints) {
  return {std::vector<Matrix>(classes, Matrix::identity(joints))};
}

ClassTemplateSet random_templates(std::mt19937_64& rng, std::size_t classes, std::size_t joints) {
  ClassTemplateSet t;
  for (std::size_t m = 0; m < classes; ++m) t.templates.push_back(testing::random_symmetric(rng, joints));
  return t;
}

Features random_features(std::mt19937_64& rng, std::size_t frames, std::size_t joints, std::size_t channels) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Features f = Features::zeros(frames, joints, channels);
  for (double& x : f.data) x = u(rng);
  return f;
}

MsTcParams identity_ms_tc(std::size_t channels, std::size_t kernel, std::size_t branches) {
  MsTcParams p;
  for (std::size_t b = 0; b < branches; ++b) {
    Matrix k(kernel, channels);
    for (std::size_t c = 0; c < channels; ++c) k(kernel / 2, c) = 1.0;
    p.depthwise.push_back(k);
    p.pointwise.push_back(Matrix::identity(channels));
  }
  p.pool_pointwise = Matrix::identity(channels);
  p.skip = Matrix::identity(channels);
  return p;
}

}  // namespace

TEST_CASE("init_params is deterministic per seed") {
  const auto cfg = small_config();
  CHECK(init_params(cfg, 3).checksum() == init_params(cfg, 3).checksum());
  CHECK(init_params(cfg, 3).values == init_params(cfg, 3).values);
  CHECK(init_params(cfg, 3).checksum() != init_params(cfg, 4).checksum());
}

TEST_CASE("default configuration size") {
  const ModelConfig cfg;
  const std::size_t count = parameter_count(cfg);
  MESSAGE("default parameter count: " << count);
  CHECK(count >= 1'241'000);
  CHECK(count <= 1'679'000);
  const auto layout = ModelLayout::build(cfg);
  CHECK(layout.blocks.size() == 9);
  CHECK(layout.blocks[0].hops == 4);
  CHECK(layout.blocks[1].hops == 1);
  CHECK(layout.blocks[3].residual.has_value());
  CHECK_FALSE(layout.blocks[1].residual.has_value());
  CHECK(cfg.frame_schedule() == std::vector<std::size_t>{64, 64, 64, 64, 32, 32, 16, 16, 16, 16});
}

TEST_CASE("config validation") {
  ModelConfig cfg;
  cfg.aux_tap = 4;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.aux_tap = 6;
  CHECK_NOTHROW(cfg.validate());
  cfg.lambda = -0.1;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = ModelConfig{};
  cfg.frames = 4;  // dilation 2 branch pads by 4
  CHECK_THROWS_AS(cfg.validate(), Error);
  CHECK(ModelConfig::from_json(small_config().to_json()).to_json() == small_config().to_json());
}

TEST_CASE("embedding examples") {
  std::mt19937_64 rng(1);
  const auto x = testing::random_sequence(rng, 3, 4);
  const Matrix pe = sinusoidal_pe(4, 6);
  const auto zero_map = embed_input(x, Matrix(3, 6), pe);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t v = 0; v < 4; ++v)
      for (std::size_t c = 0; c < 6; ++c) CHECK(zero_map.at(t, v, c) == pe(v, c));

  Matrix extend(3, 5);
  for (std::size_t k = 0; k < 3; ++k) extend(k, k) = 1.0;
  const auto padded = embed_input(x, extend, Matrix(4, 5));
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t v = 0; v < 4; ++v) {
      for (std::size_t k = 0; k < 3; ++k) CHECK(padded.at(t, v, k) == x.at(t, v, k));
      CHECK(padded.at(t, v, 3) == 0.0);
      CHECK(padded.at(t, v, 4) == 0.0);
    }

  const Matrix two = sinusoidal_pe(2, 2);
  CHECK(two(0, 0) == 0.0);
  CHECK(two(0, 1) == 1.0);
  CHECK(two(1, 0) == std::sin(1.0));
  CHECK(two(1, 1) == std::cos(1.0));
  CHECK(two.row(0)[0] != two.row(1)[0]);

  CHECK_THROWS_AS(embed_input(x, Matrix(2, 6), pe), Error);
}

TEST_CASE("MS-TC identity configuration scales by the branch count") {
  std::mt19937_64 rng(2);
  const auto f = random_features(rng, 6, 3, 4);
  const MsTcConfig cfg{1, {1, 1}, 1, 1};
  const auto out = ms_tc_forward(f, identity_ms_tc(4, 1, 2), cfg);
  REQUIRE(out.data.size() == f.data.size());
  for (std::size_t i = 0; i < f.data.size(); ++i) CHECK(out.data[i] == 4.0 * f.data[i]);
}

TEST_CASE("MS-TC stride and boundary rules") {
  std::mt19937_64 rng(3);
  MsTcParams p;
  for (int b = 0; b < 2; ++b) {
    p.depthwise.push_back(testing::random_matrix(rng, 5, 2));
    p.pointwise.push_back(testing::random_matrix(rng, 2, 2));
  }
  p.pool_pointwise = testing::random_matrix(rng, 2, 2);
  p.skip = testing::random_matrix(rng, 2, 2);
  const auto halved = ms_tc_forward(random_features(rng, 64, 2, 2), p, {5, {1, 2}, 3, 2});
  CHECK(halved.frames == 32);
  CHECK(ms_tc_forward(random_features(rng, 7, 2, 2), p, {5, {1, 2}, 3, 2}).frames == 4);

  try {
    ms_tc_forward(random_features(rng, 4, 2, 2), p, {5, {1, 2}, 3, 1});
    FAIL("expected TooShort");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::TooShort);
  }
  CHECK_NOTHROW(ms_tc_forward(random_features(rng, 5, 2, 2), p, {5, {1, 2}, 3, 1}));
}

TEST_CASE("MS-TC maps a constant signal to a constant away from the boundary") {
  // Depthwise taps sum to one per channel; pointwise maps are identity.
  MsTcParams p = identity_ms_tc(2, 5, 2);
  const double taps[] = {0.1, 0.2, 0.4, 0.2, 0.1};
  for (Matrix& k : p.depthwise)
    for (std::size_t i = 0; i < 5; ++i) k(i, 0) = k(i, 1) = taps[i];
  Features f = Features::zeros(16, 3, 2);
  for (std::size_t t = 0; t < 16; ++t)
    for (std::size_t v = 0; v < 3; ++v) {
      f.at(t, v, 0) = 1.5;
      f.at(t, v, 1) = -0.5;
    }
  const auto out = ms_tc_forward(f, p, {5, {1, 2}, 3, 1});
  for (std::size_t t = 4; t < 12; ++t)
    for (std::size_t v = 0; v < 3; ++v) {
      CHECK(out.at(t, v, 0) == doctest::Approx(6.0).epsilon(1e-14));
      CHECK(out.at(t, v, 1) == doctest::Approx(-2.0).epsilon(1e-14));
    }
  CHECK(out.at(0, 0, 0) != doctest::Approx(6.0));
}

TEST_CASE("forward shapes and determinism") {
  std::mt19937_64 rng(4);
  for (std::size_t m : {5u, 60u, 120u}) {
    const auto cfg = small_config(m);
    const auto params = init_params(cfg, 1);
    const auto x = testing::random_sequence(rng, cfg.frames, cfg.joints);
    const auto out = model_forward({x, x}, params);
    CHECK(out.logits.rows() == 2);
    CHECK(out.logits.cols() == m);
    CHECK(all_finite(out.logits));
    CHECK(out.logits.row(0)[0] == out.logits.row(1)[0]);
    CHECK(std::equal(out.logits.row(0).begin(), out.logits.row(0).end(), out.logits.row(1).begin()));
    REQUIRE(out.theta.size() == 2);
    CHECK(out.theta[0].rows() == cfg.joints);
    CHECK(out.theta[0].cols() == 6);
  }
  const auto cfg = small_config();
  CHECK_THROWS_AS(model_forward({testing::random_sequence(rng, 9, 5)}, init_params(cfg, 1)), Error);
}

TEST_CASE("zero input with zero PE and zero biases gives zero logits") {
  auto cfg = small_config();
  cfg.pe = PeKind::None;
  const auto params = init_params(cfg, 9);
  const auto x = SkeletonSequence::zeros(cfg.frames, cfg.joints, 3);
  CHECK(max_abs(model_forward({x}, params).logits) == 0.0);
  CHECK(max_abs(model_forward({x, x}, params, {BnMode::Batch}).logits) == 0.0);
}

TEST_CASE("forward is covariant under batch permutations") {
  std::mt19937_64 rng(5);
  const auto cfg = small_config();
  const auto params = init_params(cfg, 2);
  std::vector<SkeletonSequence> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(testing::random_sequence(rng, cfg.frames, cfg.joints));
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  std::vector<SkeletonSequence> shuffled;
  for (std::size_t i : perm) shuffled.push_back(batch[i]);

  const auto a = model_forward(batch, params);
  const auto b = model_forward(shuffled, params);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < cfg.classes; ++k) CHECK(b.logits(i, k) == a.logits(perm[i], k));

  // Batch statistics sum in a different order, so allow rounding.
  const auto c = model_forward(batch, params, {BnMode::Batch});
  const auto d = model_forward(shuffled, params, {BnMode::Batch});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < cfg.classes; ++k) CHECK(d.logits(i, k) == doctest::Approx(c.logits(perm[i], k)));
}

TEST_CASE("the auxiliary head never changes the main logits") {
  std::mt19937_64 rng(6);
  const auto cfg = small_config();
  const auto params = init_params(cfg, 5);
  const auto templates = random_templates(rng, cfg.classes, cfg.joints);
  std::vector<SkeletonSequence> batch{testing::random_sequence(rng, cfg.frames, cfg.joints),
                                      testing::random_sequence(rng, cfg.frames, cfg.joints)};
  for (BnMode mode : {BnMode::Frozen, BnMode::Batch}) {
    const auto with = model_forward(batch, params, {mode, &templates});
    const auto without = model_forward(batch, params, {mode, nullptr});
    CHECK(with.logits == without.logits);
    REQUIRE(with.aux_logits);
    CHECK_FALSE(without.aux_logits);
  }
}

TEST_CASE("staged forward equals the one-shot forward") {
  std::mt19937_64 rng(7);
  const auto cfg = small_config();
  const auto params = init_params(cfg, 5);
  const std::vector<SkeletonSequence> batch{testing::random_sequence(rng, cfg.frames, cfg.joints)};
  EncoderState s = embed_batch(batch, params);
  run_blocks(s, params, {}, 1);
  EncoderState resumed = s;
  run_blocks(resumed, params, {}, 2);
  CHECK(apply_heads(resumed, params, {}).logits == model_forward(batch, params).logits);
  CHECK_THROWS_AS(apply_heads(s, params, {}), Error);
}

TEST_CASE("PC-AC head examples") {
  std::mt19937_64 rng(8);
  const std::vector<double> w{0.3, -0.7, 1.1};
  const Matrix theta = testing::random_matrix(rng, 4, 3);
  const auto same = pcac_logits(theta, identity_templates(5, 4), w, 0.25);
  for (double z : same) CHECK(z == same[0]);

  const auto bias_only = pcac_logits(Matrix(4, 3), random_templates(rng, 3, 4), w, -0.4);
  for (double z : bias_only) CHECK(z == -0.4);

  const ClassTemplateSet hand{{Matrix{{1, 1}, {1, 1}}, Matrix::identity(2)}};
  const std::vector<double> one{1.0};
  CHECK(pcac_logits(Matrix{{1.0}, {1.0}}, hand, one, 0.0) == std::vector<double>{2.0, 1.0});

  CHECK_THROWS_AS(pcac_logits(theta, identity_templates(2, 5), w, 0.0), Error);
}

TEST_CASE("cross-entropy examples") {
  const std::vector<double> uniform(5, 0.3);
  CHECK(aux_loss(uniform, 2) == doctest::Approx(std::log(5.0)).epsilon(1e-15));
  CHECK(aux_loss(uniform, 2) == doctest::Approx(1.60944).epsilon(1e-5));
  CHECK(aux_loss(std::vector<double>{0, 20, 0}, 1) < 1e-8);
  CHECK(aux_loss(std::vector<double>{1, 0}, 0) == doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-15));
  CHECK(aux_loss(std::vector<double>{1, 0}, 0) == doctest::Approx(0.31326).epsilon(1e-5));
  CHECK(std::isfinite(aux_loss(std::vector<double>{1000, -1000}, 1)));
  CHECK_THROWS_AS(aux_loss(uniform, 5), Error);
}

TEST_CASE("multi-task loss composition") {
  CHECK(total_loss(1.0, 0.5, 0.2).total == doctest::Approx(1.1).epsilon(1e-15));
  CHECK(total_loss(0.7, 3.0, 0.0).total == 0.7);
  const double l5 = std::log(5.0);
  CHECK(total_loss(l5, l5, 0.2).total == doctest::Approx(1.2 * l5).epsilon(1e-15));
  CHECK(total_loss(l5, l5, 0.2).total == doctest::Approx(1.93133).epsilon(1e-5));
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int i = 0; i < 1000; ++i) {
    const double p = u(rng), a = u(rng), l = u(rng) / 10.0;
    const auto b = total_loss(p, a, l);
    CHECK(b.total == p + l * a);
    CHECK(b.primary == p);
    CHECK(b.aux == a);
    CHECK(b.lambda == l);
  }
}

TEST_CASE("ensemble fusion") {
  const auto r = ensemble_scores({Matrix{{2.0, 0.0}}, Matrix{{0.0, 1.0}}});
  CHECK(r.fused(0, 0) == doctest::Approx(1.0 / (1.0 + std::exp(-2.0)) + 1.0 / (1.0 + std::exp(1.0))).epsilon(1e-15));
  CHECK(r.fused(0, 0) == doctest::Approx(1.150).epsilon(1e-3));
  CHECK(r.fused(0, 1) == doctest::Approx(0.850).epsilon(1e-3));
  CHECK(r.predictions == std::vector<std::size_t>{0});

  CHECK(ensemble_scores({Matrix{{1.0, 1.0, 0.0}}}).predictions[0] == 0);

  std::mt19937_64 rng(10);
  const Matrix s = testing::random_matrix(rng, 50, 7, -3.0, 3.0);
  const auto single = ensemble_scores({s});
  CHECK(ensemble_scores({s, s}).predictions == single.predictions);
  for (std::size_t i = 0; i < 50; ++i) CHECK(single.predictions[i] == argmax(s.row(i)));

  try {
    ensemble_scores({Matrix(2, 3), Matrix(2, 4)});
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ShapeMismatch);
  }
}

TEST_CASE("model JSON round trip") {
  const auto cfg = small_config();
  auto params = init_params(cfg, 12);
  params.bn[1].mean[0] = 0.25;
  const auto back = ModelParams::from_json(Json::parse(canonical_dump(params.to_json(), FloatFormat::Full)));
  CHECK(back.values == params.values);
  CHECK(back.bn[1].mean == params.bn[1].mean);
  CHECK(back.checksum() == params.checksum());

  Json doc = params.to_json();
  doc["params"]["block1.w4"].erase(0);
  try {
    ModelParams::from_json(doc);
    FAIL("expected schema error");
  } catch (const SchemaError& e) {
    CHECK(e.path() == "/params/block1.w4");
  }
}
