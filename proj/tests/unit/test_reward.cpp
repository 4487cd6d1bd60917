#include <doctest.h>

#include "bootrl/reward.hpp"
#include "helpers.hpp"

using namespace bootrl;
using namespace bootrl::reward;
using testutil::tiny_config;

TEST_SUITE_BEGIN("reward");

TEST_CASE("pairwise loss values") {
  SUBCASE("equal scores give ln 2") {
    CHECK(pairwise_loss(0.7, 0.7, 0.0).loss ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("difference of one") {
    CHECK(pairwise_loss(1.0, 0.0, 0.0).loss ==
          doctest::Approx(0.3132616875182228).epsilon(1e-9));
  }
  SUBCASE("large margins drive the loss to zero") {
    CHECK(pairwise_loss(40.0, 0.0, 0.0).loss < 1e-9);
    CHECK(pairwise_loss(40.0, 0.0, 0.0).loss > 0.0);
  }
  SUBCASE("analytic gradient of the scalar loss") {
    const double h = 1e-6;
    for (double sc : {-1.5, 0.0, 0.8}) {
      for (double sr : {-0.3, 0.4}) {
        for (double lambda : {0.0, 0.01}) {
          const PairwiseLoss p = pairwise_loss(sc, sr, lambda);
          const double fd_c = (pairwise_loss(sc + h, sr, lambda).loss -
                               pairwise_loss(sc - h, sr, lambda).loss) /
                              (2 * h);
          const double fd_r = (pairwise_loss(sc, sr + h, lambda).loss -
                               pairwise_loss(sc, sr - h, lambda).loss) /
                              (2 * h);
          CHECK(p.d_chosen == doctest::Approx(fd_c).epsilon(1e-5));
          CHECK(p.d_rejected == doctest::Approx(fd_r).epsilon(1e-5));
        }
      }
    }
  }
}

TEST_CASE("translation invariance holds exactly when lambda is zero") {
  Rng rng(81);
  for (int i = 0; i < 50; ++i) {
    const double sc = rng.uniform_real() * 4 - 2;
    const double sr = rng.uniform_real() * 4 - 2;
    const double c = rng.uniform_real() * 2 - 1;
    CHECK(std::abs(pairwise_loss(sc + c, sr + c, 0.0).loss -
                   pairwise_loss(sc, sr, 0.0).loss) < 1e-12);
  }
  // ...and breaks as soon as lambda > 0.
  const double base = pairwise_loss(0.5, -0.5, 0.01).loss;
  const double shifted = pairwise_loss(1.5, 0.5, 0.01).loss;
  CHECK(std::abs(base - shifted) > 1e-3);
}

TEST_CASE("raising the chosen score strictly lowers the loss") {
  Rng rng(83);
  for (int i = 0; i < 50; ++i) {
    const double sc = rng.uniform_real() * 4 - 2;
    const double sr = rng.uniform_real() * 4 - 2;
    CHECK(pairwise_loss(sc + 0.05, sr, 0.0).loss <
          pairwise_loss(sc, sr, 0.0).loss);
    CHECK(pairwise_loss(sc, sr, 0.0).d_chosen < 0.0);
  }
}

TEST_CASE("pairwise gradient through the model matches finite differences") {
  const auto cfg = tiny_config();
  const auto params32 = lm::Parameters::init(cfg, 85, "rm");
  const std::vector<double> params = testutil::to_double(params32.data);
  const auto chosen = testutil::random_tokens(12, 86);
  const auto rejected = testutil::random_tokens(10, 87);
  lm::Net<double> net(cfg);

  for (double lambda : {0.0, 0.01}) {
    std::vector<double> grads(params.size(), 0.0);
    pairwise_rm_loss_and_grad<double>(net, params.data(), chosen, rejected,
                                      lambda, grads.data());
    Rng coord_rng(88);
    const double h = 1e-3;
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t c = coord_rng.uniform_u64(params.size());
      std::vector<double> p = params;
      p[c] += h;
      const double up = pairwise_rm_loss_and_grad<double>(
          net, p.data(), chosen, rejected, lambda, nullptr);
      p[c] -= 2 * h;
      const double down = pairwise_rm_loss_and_grad<double>(
          net, p.data(), chosen, rejected, lambda, nullptr);
      const double fd = (up - down) / (2 * h);
      const double denom = std::max({std::abs(fd), std::abs(grads[c]), 1e-8});
      CHECK(std::abs(fd - grads[c]) / denom < 1e-4);
    }
  }
}

namespace {

/// Sentinel-separable pairs: chosen texts carry a "##" marker.
std::vector<PairExample> sentinel_pairs(int n, uint64_t seed) {
  std::vector<PairExample> pairs;
  Rng rng(seed);
  const auto& v = textkit::vocab();
  for (int i = 0; i < n; ++i) {
    std::string body = "question " + std::to_string(rng.uniform_int(10, 99)) +
                       " about " + std::to_string(rng.uniform_int(10, 99));
    PairExample ex;
    ex.sample_id = "s" + std::to_string(i);
    std::string good = body + " ## right";
    std::string bad = body + " so wrong";
    ex.chosen = v.encode(good);
    ex.chosen.insert(ex.chosen.begin(), textkit::Vocab::kBos);
    ex.chosen.push_back(textkit::Vocab::kEos);
    ex.rejected = v.encode(bad);
    ex.rejected.insert(ex.rejected.begin(), textkit::Vocab::kBos);
    ex.rejected.push_back(textkit::Vocab::kEos);
    pairs.push_back(std::move(ex));
  }
  return pairs;
}

}  // namespace

TEST_CASE("an untrained model ranks at chance level") {
  // Both sides drawn iid from the same text distribution, so the expected
  // ranking accuracy of any fixed scorer is exactly one half.
  const auto params = lm::Parameters::init(tiny_config(), 89, "rm");
  Rng rng(90);
  const auto& v = textkit::vocab();
  auto random_text = [&] {
    std::string s = "score ";
    const auto n = 4 + rng.uniform_u64(24);
    for (uint64_t i = 0; i < n; ++i) {
      s.push_back(static_cast<char>('a' + rng.uniform_u64(26)));
      if (rng.bernoulli(0.2)) s.push_back(' ');
    }
    return s;
  };
  std::vector<PairExample> pairs;
  for (int i = 0; i < 240; ++i) {
    PairExample ex;
    ex.sample_id = "r" + std::to_string(i);
    auto enc = [&](const std::string& text) {
      std::vector<int> ids = v.encode(text);
      ids.insert(ids.begin(), textkit::Vocab::kBos);
      ids.push_back(textkit::Vocab::kEos);
      return ids;
    };
    ex.chosen = enc(random_text());
    ex.rejected = enc(random_text());
    pairs.push_back(std::move(ex));
  }
  const double acc = ranking_accuracy(params, pairs, 2);
  CHECK(acc > 0.4);
  CHECK(acc < 0.6);
}

TEST_CASE("a separable sentinel set is learned to high accuracy") {
  const auto cfg = tiny_config(2, 2, 32, 96);
  const auto init = lm::Parameters::init(cfg, 91, "sft");
  const auto pairs = sentinel_pairs(120, 92);
  RmConfig rm_cfg;
  rm_cfg.epochs = 6;
  rm_cfg.batch_size = 8;
  rm_cfg.lr = 1e-3;
  rm_cfg.seed = 93;
  rm_cfg.heldout_fraction = 0.2;
  rm_cfg.threads = 2;
  const RmResult out = train_rm(init, pairs, rm_cfg);
  CHECK(out.params.role == "rm");
  CHECK(out.heldout_pairs > 0);
  CHECK(out.heldout_accuracy >= 0.95);
}

TEST_CASE("training on an empty pair set is a configuration error") {
  const auto init = lm::Parameters::init(tiny_config(), 95, "sft");
  CHECK_THROWS_AS(train_rm(init, {}, RmConfig{}), ConfigError);
}

TEST_CASE("held-out split never leaks a question across the split") {
  // Same question id must land on one side regardless of pair order; train
  // twice with shuffled inputs and check the reported split sizes agree.
  const auto cfg = tiny_config(1, 2, 16, 96);
  const auto init = lm::Parameters::init(cfg, 97, "sft");
  auto pairs = sentinel_pairs(60, 98);
  // give only 10 distinct question ids
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    pairs[i].sample_id = "q" + std::to_string(i % 10);
  }
  RmConfig rm_cfg;
  rm_cfg.epochs = 1;
  rm_cfg.batch_size = 16;
  rm_cfg.heldout_fraction = 0.3;
  rm_cfg.seed = 99;
  const RmResult out = train_rm(init, pairs, rm_cfg);
  // each question contributes 6 pairs; the held-out count must be a
  // multiple of 6
  CHECK(out.heldout_pairs % 6 == 0);
  CHECK(out.train_pairs + out.heldout_pairs == pairs.size());
}

TEST_SUITE_END();
