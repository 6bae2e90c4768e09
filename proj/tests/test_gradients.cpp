#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "ttnlab/network.hpp"

using namespace ttnlab;

namespace {

class LayerGradient : public ::testing::TestWithParam<LayerKind> {};

}  // namespace

TEST_P(LayerGradient, MatchesFiniteDifferencesOnRandomInstances) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto check = testkit::check_layer_gradient(GetParam(), 1000 + seed);
    EXPECT_LT(check.forward_mismatch, 1e-5) << check.instance;
    EXPECT_LT(check.rel_error_32, 1e-2) << check.instance;
    EXPECT_LT(check.rel_error_64, 1e-4) << check.instance;
  }
}

INSTANTIATE_TEST_SUITE_P(AllKinds, LayerGradient,
                         ::testing::Values(LayerKind::conv2d, LayerKind::linear, LayerKind::relu,
                                           LayerKind::maxpool2d, LayerKind::globalavgpool, LayerKind::batchnorm2d),
                         [](const auto& info) { return std::string(to_string(info.param)); });

// Whole-network backward against finite differences of the training loss.
TEST(NetworkGradient, BackwardMatchesFiniteDifferencesOfCrossEntropy) {
  ModelCheckpoint model = testkit::random_model(9, 3, {3, 4}, 6);
  std::mt19937_64 rng(4);
  const Tensor x = testkit::random_tensor({6, 3, 6, 6}, rng, 0, 1);
  const std::vector<int> labels{0, 1, 2, 0, 1, 2};

  TrainingTape tape;
  Tensor dlogits;
  cross_entropy(forward_train(model, x, tape), labels, &dlogits);
  const auto grads = backward(model, tape, dlogits);

  auto loss = [&](const ModelCheckpoint& m) {
    TrainingTape t;
    return cross_entropy(forward_train(m, x, t), labels, nullptr);
  };
  double diff = 0.0, norm_a = 0.0, norm_n = 0.0;
  for (const auto& [name, g] : grads) {
    ASSERT_EQ(g.shape(), model.parameters.at(name).shape()) << name;
    for (std::size_t i = 0; i < g.numel(); i += 3) {
      ModelCheckpoint plus = model, minus = model;
      const float h = 1e-3f;
      plus.parameters.at(name)[i] += h;
      minus.parameters.at(name)[i] -= h;
      const double step = double(plus.parameters.at(name)[i]) - double(minus.parameters.at(name)[i]);
      const double numeric = (loss(plus) - loss(minus)) / step;
      diff += (numeric - g[i]) * (numeric - g[i]);
      norm_a += double(g[i]) * g[i];
      norm_n += numeric * numeric;
    }
  }
  EXPECT_LT(std::sqrt(diff) / std::sqrt(std::max(norm_a, norm_n)), 1e-2);
}
