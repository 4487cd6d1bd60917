#include <doctest.h>

#include <filesystem>

#include "bootrl/checkpoint.hpp"
#include "bootrl/model.hpp"
#include "helpers.hpp"

using namespace bootrl;
using namespace bootrl::lm;
using testutil::tiny_config;

TEST_SUITE_BEGIN("model");

TEST_CASE("layout covers every tensor exactly once") {
  const ModelConfig cfg = tiny_config();
  const ParamLayout layout(cfg);
  std::size_t total = 0;
  for (const auto& t : layout.tensors()) {
    CHECK(t.offset == total);
    total += t.size;
  }
  CHECK(total == layout.total_size());
  CHECK_THROWS_AS(layout.find("no_such_tensor"), ConfigError);
}

TEST_CASE("config validation") {
  ModelConfig cfg = tiny_config();
  cfg.d_model = 15;  // not divisible by heads
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.n_layers = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("softmax rows are normalized distributions") {
  const auto params = Parameters::init(tiny_config(), 1, "policy");
  const auto tokens = testutil::random_tokens(24, 2);
  const ForwardResult out = forward(params, tokens);
  for (Eigen::Index t = 0; t < out.logprobs.rows(); ++t) {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < out.logprobs.cols(); ++i) {
      sum += std::exp(static_cast<double>(out.logprobs(t, i)));
    }
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }
  CHECK(std::isfinite(out.reward));
  for (Eigen::Index t = 0; t < out.values.size(); ++t) {
    CHECK(std::isfinite(out.values(t)));
  }
}

TEST_CASE("causality: perturbing a token leaves earlier outputs unchanged") {
  for (int layers : {1, 2, 3}) {
    const auto params = Parameters::init(tiny_config(layers), 3, "policy");
    auto tokens = testutil::random_tokens(20, 4);
    const ForwardResult a = forward(params, tokens);
    tokens[10] = tokens[10] == 7 ? 9 : 7;
    const ForwardResult b = forward(params, tokens);
    for (Eigen::Index t = 0; t < 10; ++t) {
      for (Eigen::Index i = 0; i < a.logprobs.cols(); ++i) {
        CHECK(a.logprobs(t, i) == b.logprobs(t, i));
      }
      CHECK(a.values(t) == b.values(t));
    }
    bool changed = false;
    for (Eigen::Index i = 0; i < a.logprobs.cols(); ++i) {
      if (a.logprobs(10, i) != b.logprobs(10, i)) changed = true;
    }
    CHECK(changed);
  }
}

TEST_CASE("forward matches the straight-loop reference") {
  const auto params = Parameters::init(tiny_config(), 5, "policy");
  const auto tokens = testutil::random_tokens(12, 6);
  Net<float> net(params.config);
  ForwardCache<float> cache;
  net.hidden_forward(params.data.data(), tokens, cache);
  const RowMatf logits = net.logits(params.data.data(), cache.final_norm_out);
  const auto ref = testutil::naive_forward_logits(params, tokens);
  double max_diff = 0.0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    for (int v = 0; v < params.config.vocab_size; ++v) {
      max_diff = std::max(
          max_diff,
          std::abs(static_cast<double>(logits(static_cast<Eigen::Index>(t), v)) -
                   ref[t][static_cast<std::size_t>(v)]));
    }
  }
  CHECK(max_diff < 1e-5);
}

TEST_CASE("context overflow is rejected") {
  const auto params = Parameters::init(tiny_config(1, 2, 16, 8), 7, "policy");
  CHECK_THROWS_AS(forward(params, testutil::random_tokens(9, 8)),
                  PromptOverflow);
}

TEST_CASE("zero parameters give the uniform loss ln V") {
  auto params = Parameters::init(tiny_config(), 9, "policy");
  std::fill(params.data.begin(), params.data.end(), 0.0f);
  const auto tokens = testutil::random_tokens(10, 10);
  std::vector<uint8_t> mask(tokens.size(), 1);
  const LmLossResult out = lm_loss(params, tokens, mask);
  CHECK(out.loss ==
        doctest::Approx(std::log(params.config.vocab_size)).epsilon(1e-6));
}

TEST_CASE("all-false mask gives zero loss and zero gradients") {
  const auto params = Parameters::init(tiny_config(), 11, "policy");
  const auto tokens = testutil::random_tokens(10, 12);
  std::vector<uint8_t> mask(tokens.size(), 0);
  const LmLossResult out = lm_loss(params, tokens, mask);
  CHECK(out.loss == 0.0);
  CHECK(out.masked == 0);
  for (float g : out.grads) CHECK(g == 0.0f);
}

TEST_CASE("loss equals the manual masked mean of forward log-probs") {
  const auto params = Parameters::init(tiny_config(), 13, "policy");
  const auto tokens = testutil::random_tokens(16, 14);
  std::vector<uint8_t> mask(tokens.size(), 0);
  Rng rng(15);
  for (std::size_t t = 1; t < mask.size(); ++t) mask[t] = rng.bernoulli(0.5);
  const ForwardResult fwd = forward(params, tokens);
  double manual = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 1; t < tokens.size(); ++t) {
    if (!mask[t]) continue;
    manual -= static_cast<double>(
        fwd.logprobs(static_cast<Eigen::Index>(t - 1), tokens[t]));
    ++n;
  }
  const LmLossResult out = lm_loss(params, tokens, mask);
  REQUIRE(n > 0);
  CHECK(out.masked == n);
  CHECK(out.loss == doctest::Approx(manual / static_cast<double>(n))
                        .epsilon(1e-6));
}

TEST_CASE("no gradient flows from positions after the last masked target") {
  const auto params = Parameters::init(tiny_config(), 17, "policy");
  const auto tokens = testutil::random_tokens(12, 18);
  std::vector<uint8_t> mask(tokens.size(), 0);
  mask[3] = 1;  // only token 3 is a target (scored at row 2)
  const LmLossResult out = lm_loss(params, tokens, mask);
  const ParamLayout layout(params.config);
  const auto& wpe = layout.find("wpe");
  const int d = params.config.d_model;
  for (std::size_t pos = 3; pos < tokens.size(); ++pos) {
    for (int i = 0; i < d; ++i) {
      CHECK(out.grads[wpe.offset + pos * static_cast<std::size_t>(d) +
                      static_cast<std::size_t>(i)] == 0.0f);
    }
  }
  // ...while earlier positions do receive gradient.
  double sum = 0.0;
  for (int i = 0; i < d; ++i) {
    sum += std::abs(out.grads[wpe.offset + 2 * static_cast<std::size_t>(d) +
                              static_cast<std::size_t>(i)]);
  }
  CHECK(sum > 0.0);
}

TEST_CASE("analytic LM-loss gradient matches central finite differences") {
  const ModelConfig cfg = tiny_config();
  const auto params32 = Parameters::init(cfg, 19, "policy");
  const std::vector<double> params = testutil::to_double(params32.data);
  const auto tokens = testutil::random_tokens(14, 20);
  std::vector<uint8_t> mask(tokens.size(), 0);
  Rng mask_rng(21);
  for (std::size_t t = 1; t < mask.size(); ++t) mask[t] = mask_rng.bernoulli(0.6);

  Net<double> net(cfg);
  std::vector<double> grads(params.size(), 0.0);
  lm_loss_and_grad<double>(net, params.data(), tokens, mask, grads.data());

  Rng coord_rng(22);
  int checked = 0;
  for (int trial = 0; trial < 120; ++trial) {
    const std::size_t c = coord_rng.uniform_u64(params.size());
    // h = 1e-3 first; a coordinate dominated by truncation error gets one
    // refinement at 1e-4 (a wrong gradient fails at every step size).
    double rel = 1.0;
    for (const double h : {1e-3, 1e-4}) {
      std::vector<double> p = params;
      p[c] += h;
      const double up =
          lm_loss_and_grad<double>(net, p.data(), tokens, mask, nullptr);
      p[c] -= 2 * h;
      const double down =
          lm_loss_and_grad<double>(net, p.data(), tokens, mask, nullptr);
      const double fd = (up - down) / (2 * h);
      const double denom = std::max({std::abs(fd), std::abs(grads[c]), 1e-8});
      rel = std::abs(fd - grads[c]) / denom;
      if (rel < 1e-4) break;
    }
    CHECK(rel < 1e-4);
    ++checked;
  }
  CHECK(checked >= 100);
}

TEST_CASE("reward head gradient matches finite differences") {
  const ModelConfig cfg = tiny_config();
  const auto params32 = Parameters::init(cfg, 23, "rm");
  const std::vector<double> params = testutil::to_double(params32.data);
  const auto tokens = testutil::random_tokens(10, 24);

  Net<double> net(cfg);
  const auto score = [&](const std::vector<double>& p) {
    ForwardCache<double> cache;
    net.hidden_forward(p.data(), tokens, cache);
    return net.reward(p.data(), cache.final_norm_out,
                      static_cast<Eigen::Index>(tokens.size()) - 1);
  };
  std::vector<double> grads(params.size(), 0.0);
  {
    ForwardCache<double> cache;
    net.hidden_forward(params.data(), tokens, cache);
    net.backward(params.data(), tokens, cache, nullptr, nullptr, 1.0,
                 static_cast<Eigen::Index>(tokens.size()) - 1, grads.data());
  }
  Rng coord_rng(25);
  const double h = 1e-3;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t c = coord_rng.uniform_u64(params.size());
    std::vector<double> p = params;
    p[c] += h;
    const double up = score(p);
    p[c] -= 2 * h;
    const double down = score(p);
    const double fd = (up - down) / (2 * h);
    const double denom = std::max({std::abs(fd), std::abs(grads[c]), 1e-8});
    CHECK(std::abs(fd - grads[c]) / denom < 1e-4);
  }
}

TEST_CASE("reward_score is deterministic and reads the last non-PAD slot") {
  const auto params = Parameters::init(tiny_config(), 27, "rm");
  auto tokens = testutil::random_tokens(12, 28);
  const float a = reward_score(params, tokens);
  const float b = reward_score(params, tokens);
  CHECK(a == b);
  CHECK(std::isfinite(a));

  // Right-padding does not move the scored position.
  auto padded = tokens;
  padded.push_back(0);
  padded.push_back(0);
  CHECK(reward_score(params, padded) == a);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  const auto params = Parameters::init(tiny_config(), 29, "sft");
  const auto prefix =
      std::filesystem::temp_directory_path() / "bootrl_ckpt_test";
  save_checkpoint(params, prefix);
  const Parameters back = load_checkpoint(prefix);
  CHECK(back.role == "sft");
  CHECK(back.config == params.config);
  REQUIRE(back.data.size() == params.data.size());
  CHECK(std::memcmp(back.data.data(), params.data.data(),
                    params.data.size() * sizeof(float)) == 0);

  const auto tokens = testutil::random_tokens(16, 30);
  const ForwardResult f1 = forward(params, tokens);
  const ForwardResult f2 = forward(back, tokens);
  for (Eigen::Index t = 0; t < f1.logprobs.rows(); ++t) {
    for (Eigen::Index v = 0; v < f1.logprobs.cols(); ++v) {
      CHECK(f1.logprobs(t, v) == f2.logprobs(t, v));
    }
  }
  std::filesystem::remove(prefix.string() + ".json");
  std::filesystem::remove(prefix.string() + ".bin");
}

TEST_CASE("corrupted checkpoints are rejected") {
  auto params = Parameters::init(tiny_config(), 31, "rm");
  const auto prefix =
      std::filesystem::temp_directory_path() / "bootrl_ckpt_bad";
  params.data[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(save_checkpoint(params, prefix), StageError);
  CHECK_FALSE(checkpoint_exists(prefix));
}

TEST_SUITE_END();
