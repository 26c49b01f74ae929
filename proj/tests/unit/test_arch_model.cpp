#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "helpers.hpp"
#include "sne/arch.hpp"
#include "sne/energy.hpp"
#include "sne/model.hpp"

using namespace sne;
using namespace sne::arch;
using sne::testing::random_tensor;

namespace {

ArchSpec tiny(NetKind kind, bool head = true) {
  ArchSpec s;
  s.name = "tiny";
  s.kind = kind;
  s.in_channels = 3;
  s.in_height = s.in_width = 4;
  s.classes = 2;
  s.blocks = {Block::conv(4, 3, 1, 1), Block::norm(), Block::act(), Block::maxpool(2, 2), Block::linear(5), Block::act()};
  s.feature_dim = 5;
  s.has_head = head;
  s.timesteps = 3;
  return s;
}

}  // namespace

TEST(Arch, HandCountedParametersAndMacs) {
  const auto a = analyze(tiny(NetKind::ann));
  // conv 4*3*9, norm 2*4, linear 16*5+5, head 5*2+2
  EXPECT_EQ(a.parameter_count, 108u + 8 + 85 + 12);
  ASSERT_EQ(a.layers.size(), 3u);
  EXPECT_EQ(a.layers[0].macs, 4u * 4 * 4 * 3 * 9);
  EXPECT_EQ(a.layers[1].macs, 16u * 5);
  EXPECT_EQ(a.layers[2].id, "head");
  EXPECT_EQ(a.layers[2].macs, 10u);
  EXPECT_EQ(energy::total_macs(tiny(NetKind::ann)), 1728u + 80 + 10);
}

TEST(Arch, HeadlessSpecHasNoHeadParameters) {
  EXPECT_EQ(parameter_count(tiny(NetKind::snn, false)), 108u + 8 + 85);
}

TEST(Arch, RejectsFeatureDimMismatch) {
  auto s = tiny(NetKind::ann);
  s.feature_dim = 6;
  EXPECT_THROW(analyze(s), std::invalid_argument);
}

TEST(Arch, RejectsUnterminatedSkip) {
  auto s = tiny(NetKind::ann);
  s.blocks.insert(s.blocks.begin(), Block::skip_begin());
  EXPECT_THROW(analyze(s), std::invalid_argument);
}

TEST(Arch, RejectsZeroTimesteps) {
  auto s = tiny(NetKind::snn);
  s.timesteps = 0;
  EXPECT_THROW(analyze(s), std::invalid_argument);
}

TEST(Arch, FullScaleCountsAreNearPublishedValues) {
  VggOptions v19;
  v19.depth = 19;
  EXPECT_NEAR(parameter_count(vgg_spec(v19)) / 20.0e6, 1.0, 0.02);
  EXPECT_NEAR(energy::total_macs(vgg_spec(v19)) / 398.0e6, 1.0, 0.05);
  VggOptions v11;
  v11.depth = 11;
  EXPECT_NEAR(parameter_count(vgg_spec(v11)) / 9.3e6, 1.0, 0.02);
  ResNetOptions r18;
  EXPECT_NEAR(parameter_count(resnet_spec(r18)) / 11.3e6, 1.0, 0.02);
  EXPECT_NEAR(energy::total_macs(resnet_spec(r18)) / 555.0e6, 1.0, 0.05);
}

TEST(Arch, WidthDivisorShrinksChannels) {
  VggOptions o;
  o.depth = 5;
  const auto full = conv_widths(vgg_spec(o));
  o.width_divisor = 8;
  const auto small = conv_widths(vgg_spec(o));
  ASSERT_EQ(full.size(), small.size());
  for (std::size_t i = 0; i < full.size(); ++i) EXPECT_EQ(small[i] * 8, full[i]);
}

TEST(Arch, FeatureLayerWithoutActivationEndsAtNorm) {
  VggOptions o;
  o.depth = 5;
  o.width_divisor = 8;
  o.image_size = 8;
  o.feature_dim = 12;
  o.feature_activation = false;
  const auto s = vgg_spec(o);
  EXPECT_EQ(s.feature_dim, 12u);
  EXPECT_EQ(s.blocks.back().type, BlockType::norm);
  o.feature_activation = true;
  EXPECT_EQ(vgg_spec(o).blocks.back().type, BlockType::activation);
}

TEST(Arch, ResNetContainsSkipsWithProjections) {
  ResNetOptions o;
  o.depth = 10;
  o.base_channels = 8;
  o.image_size = 8;
  const auto a = analyze(resnet_spec(o));
  bool projection = false;
  for (const auto& l : a.layers) projection |= l.projection;
  EXPECT_TRUE(projection);
}

TEST(Model, AnnForwardShapes) {
  Model m(tiny(NetKind::ann), 1);
  const Tensor x = random_tensor({2, 3, 4, 4}, 2, 0, 1);
  EXPECT_EQ(m.features(x).shape(), (Shape{2, 5}));
  EXPECT_EQ(m.forward(x).shape(), (Shape{2, 2}));
  EXPECT_EQ(m.parameter_count(), parameter_count(m.spec()));
}

TEST(Model, SnnFeaturesAreFiringRates) {
  Model m(tiny(NetKind::snn, false), 1);
  const Tensor x = random_tensor({3, 3, 4, 4}, 3, 0, 1);
  const Tensor f = m.features(x);
  ASSERT_EQ(f.shape(), (Shape{3, 5}));
  for (real v : f.data()) {
    EXPECT_GE(v, 0);
    EXPECT_LE(v, 1);
    EXPECT_NEAR(v * 3, std::round(v * 3), 1e-12);
  }
  EXPECT_THROW(m.head(f), std::logic_error);
}

TEST(Model, SameSeedSameWeightsDifferentSeedDifferent) {
  Model a(tiny(NetKind::ann), 5), b(tiny(NetKind::ann), 5), c(tiny(NetKind::ann), 6);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  EXPECT_TRUE(sne::testing::bitwise_equal(pa[0], pb[0]));
  EXPECT_FALSE(sne::testing::bitwise_equal(pa[0], pc[0]));
}

TEST(Model, KaimingBound) {
  Tensor w(Shape{1000});
  Rng rng(1);
  kaiming_uniform(w, 27, rng);
  const double bound = std::sqrt(6.0 / 27);
  double mx = 0;
  for (real v : w.data()) mx = std::max(mx, std::abs(static_cast<double>(v)));
  EXPECT_LE(mx, bound);
  EXPECT_GT(mx, 0.9 * bound);
}

TEST(Model, CloneIsIndependent) {
  Model a(tiny(NetKind::ann), 5);
  Model b = a.clone();
  a.parameters()[0][0] += 1;
  EXPECT_NE(a.parameters()[0][0], b.parameters()[0][0]);
  const Tensor x = random_tensor({2, 3, 4, 4}, 2, 0, 1);
  Model c = b.clone();
  EXPECT_TRUE(sne::testing::bitwise_equal(b.forward(x), c.forward(x)));
}

TEST(Model, RejectsWrongInputShape) {
  Model m(tiny(NetKind::ann), 1);
  EXPECT_THROW(m.forward(Tensor::zeros({2, 1, 4, 4})), std::invalid_argument);
  EXPECT_THROW(m.forward(Tensor::zeros({0, 3, 4, 4})), std::invalid_argument);
}

TEST(Model, ResetStatesClearsEveryLif) {
  Model m(tiny(NetKind::snn, false), 1);
  m.features(random_tensor({2, 3, 4, 4}, 3, 0, 1));
  bool any_set = false;
  for (const auto* s : m.lif_states()) any_set |= !s->is_reset();
  EXPECT_TRUE(any_set);
  m.reset_states();
  for (const auto* s : m.lif_states()) EXPECT_TRUE(s->is_reset());
}

TEST(Model, TraceMarksOnlyTheFirstLayerAnalog) {
  Model m(tiny(NetKind::snn, false), 1);
  energy::EnergyTrace trace;
  m.features(random_tensor({2, 3, 4, 4}, 3, 0, 1), {false, snn::SpikeMode::hard, &trace});
  ASSERT_EQ(trace.layers.size(), 2u);
  EXPECT_TRUE(trace.layers[0].analog_input);
  EXPECT_FALSE(trace.layers[1].analog_input);
  EXPECT_EQ(trace.layers[0].timesteps, 3u);
  EXPECT_EQ(trace.layers[1].input_numel, 16u);
}

TEST(Model, ResNetForwardRuns) {
  ResNetOptions o;
  o.depth = 10;
  o.base_channels = 4;
  o.image_size = 8;
  o.kind = NetKind::snn;
  Model m(resnet_spec(o), 3);
  const Tensor y = m.forward(random_tensor({2, 3, 8, 8}, 4, 0, 1));
  EXPECT_EQ(y.shape(), (Shape{2, 10}));
}

TEST(Model, TrainingStepReducesLoss) {
  Model m(tiny(NetKind::ann), 1);
  const Tensor x = random_tensor({8, 3, 4, 4}, 2, 0, 1);
  const std::vector<int> y{0, 1, 0, 1, 0, 1, 0, 1};
  double first = 0, last = 0;
  auto params = m.parameters();
  for (int step = 0; step < 30; ++step) {
    TapeScope scope;
    Tensor loss = ops::cross_entropy(m.forward(x, {true}), y);
    if (step == 0) first = loss.item();
    last = loss.item();
    scope.tape().backward(loss);
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (std::size_t i = 0; i < p.numel(); ++i) p[i] -= real(0.1) * p.grad()[i];
      p.zero_grad();
    }
  }
  EXPECT_LT(last, first * 0.5);
}
