#include <gtest/gtest.h>

#include "helpers.hpp"
#include "sne/energy.hpp"
#include "sne/model.hpp"

using namespace sne;
using namespace sne::energy;
using arch::ArchSpec;
using arch::Block;

namespace {

ArchSpec two_layer() {
  ArchSpec s;
  s.name = "two-layer";
  s.kind = arch::NetKind::snn;
  s.in_channels = 2;
  s.in_height = s.in_width = 4;
  s.blocks = {Block::conv(3, 1, 1, 0), Block::act(), Block::conv(2, 2, 2, 0), Block::act(), Block::linear(4), Block::act()};
  s.feature_dim = 4;
  s.has_head = false;
  s.timesteps = 2;
  return s;
}

// Synapses that read input (c, y, x): every output position whose window
// covers it, times the output channels.
std::uint64_t conv_fanout(std::size_t y, std::size_t x, std::size_t h, std::size_t w, std::size_t k,
                          std::size_t stride, std::size_t pad, std::size_t out_c) {
  const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (w + 2 * pad - k) / stride + 1;
  std::uint64_t n = 0;
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const long y0 = static_cast<long>(oy * stride) - static_cast<long>(pad);
      const long x0 = static_cast<long>(ox * stride) - static_cast<long>(pad);
      if (static_cast<long>(y) >= y0 && static_cast<long>(y) < y0 + static_cast<long>(k) &&
          static_cast<long>(x) >= x0 && static_cast<long>(x) < x0 + static_cast<long>(k))
        n += out_c;
    }
  return n;
}

LayerTrace spikes_trace(const std::string& id, const std::vector<int>& spikes, std::size_t numel, std::size_t T,
                        std::size_t B) {
  LayerTrace t;
  t.id = id;
  for (int s : spikes) t.input_sum += s;
  t.input_numel = numel;
  t.samples = B;
  t.timesteps = T;
  return t;
}

}  // namespace

TEST(Macs, DefinitionExamples) {
  ArchSpec lin;
  lin.name = "lin";
  lin.in_channels = 100;
  lin.in_height = lin.in_width = 1;
  lin.blocks = {Block::linear(10, false)};
  lin.feature_dim = 10;
  lin.has_head = false;
  EXPECT_EQ(total_macs(lin), 1000u);

  ArchSpec conv;
  conv.name = "conv";
  conv.in_channels = 3;
  conv.in_height = conv.in_width = 4;
  conv.blocks = {Block::conv(8, 1, 1, 0), Block::avgpool()};
  conv.feature_dim = 8;
  conv.has_head = false;
  const auto m = count_macs(conv, 3, 4, 4);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0].macs, 384u);
}

TEST(Acs, EventEnumerationOracle) {
  const auto spec = two_layer();
  const std::size_t T = 2, B = 3;
  // Rate 0.5 on half of the inputs: even positions fire at t = 0 only.
  std::vector<int> s2(T * B * 48, 0), s4(T * B * 8, 0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < 48; i += 2) s2[(0 * B + b) * 48 + i] = 1;
  Rng rng(7);
  for (auto& v : s4) v = rng.uniform() < 0.3;

  EnergyTrace trace;
  LayerTrace first;
  first.id = "L00.conv";
  first.input_sum = 12.5;
  first.input_numel = 32;
  first.samples = B;
  first.timesteps = T;
  first.analog_input = true;
  trace.layers = {first, spikes_trace("L02.conv", s2, 48, T, B), spikes_trace("L04.linear", s4, 8, T, B)};

  std::uint64_t conv_events = 0, linear_events = 0;
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < 4; ++y)
          for (std::size_t x = 0; x < 4; ++x)
            if (s2[(t * B + b) * 48 + (c * 4 + y) * 4 + x]) conv_events += conv_fanout(y, x, 4, 4, 2, 2, 0, 2);
      for (std::size_t i = 0; i < 8; ++i)
        if (s4[(t * B + b) * 8 + i]) linear_events += 4;
    }

  const auto ledger = count_acs(spec, trace);
  EXPECT_EQ(ledger.layers.at("L02.conv").ac_ops, conv_events);
  EXPECT_EQ(ledger.layers.at("L04.linear").ac_ops, linear_events);
  EXPECT_EQ(ledger.layers.at("L00.conv").ac_ops, 0u);
  EXPECT_EQ(ledger.layers.at("L00.conv").mac_ops, 32u * 3 * T * B);
  EXPECT_EQ(ledger.input_layer_macs(), 32u * 3 * T * B);
  EXPECT_EQ(ledger.ac_ops(), conv_events + linear_events);
  EXPECT_EQ(ledger.layers.at("L02.conv").spike_count, 24u * B);
}

TEST(Acs, ZeroSpikesGiveZeroAcs) {
  const auto spec = two_layer();
  EnergyTrace trace;
  LayerTrace first;
  first.id = "L00.conv";
  first.input_numel = 32;
  first.samples = 1;
  first.timesteps = 2;
  first.analog_input = true;
  trace.layers = {first, spikes_trace("L02.conv", {}, 48, 2, 1), spikes_trace("L04.linear", {}, 8, 2, 1)};
  const auto ledger = count_acs(spec, trace);
  EXPECT_EQ(ledger.ac_ops(), 0u);
  for (const auto& [id, r] : ledger.layers)
    if (r.spike_count == 0) EXPECT_EQ(r.ac_ops, 0u) << id;
}

TEST(Acs, SaturatedInputAtOneStepEqualsMacs) {
  auto spec = two_layer();
  spec.timesteps = 1;
  EnergyTrace trace;
  LayerTrace first;
  first.id = "L00.conv";
  first.input_numel = 32;
  first.samples = 1;
  first.analog_input = true;
  trace.layers = {first, spikes_trace("L02.conv", std::vector<int>(48, 1), 48, 1, 1),
                  spikes_trace("L04.linear", std::vector<int>(8, 1), 8, 1, 1)};
  const auto ledger = count_acs(spec, trace);
  const auto macs = count_macs(spec, 2, 4, 4);
  EXPECT_EQ(ledger.layers.at("L02.conv").ac_ops, macs[1].macs);
  EXPECT_EQ(ledger.layers.at("L04.linear").ac_ops, macs[2].macs);
}

TEST(Acs, MissingTraceIsRejected) {
  EnergyTrace trace;
  EXPECT_THROW(count_acs(two_layer(), trace), std::invalid_argument);
}

TEST(Acs, MonotoneInSpikesAndBoundedByMacsTimesT) {
  const auto spec = two_layer();
  Rng rng(3);
  std::vector<int> s2(2 * 48, 0), s4(2 * 8, 0);
  std::uint64_t prev_conv = 0, prev_lin = 0;
  const auto macs = count_macs(spec, 2, 4, 4);
  for (int round = 0; round < 40; ++round) {
    s2[rng.below(s2.size())] = 1;
    s4[rng.below(s4.size())] = 1;
    EnergyTrace trace;
    LayerTrace first;
    first.id = "L00.conv";
    first.input_numel = 32;
    first.samples = 1;
    first.timesteps = 2;
    first.analog_input = true;
    trace.layers = {first, spikes_trace("L02.conv", s2, 48, 2, 1), spikes_trace("L04.linear", s4, 8, 2, 1)};
    const auto l = count_acs(spec, trace);
    const auto c = l.layers.at("L02.conv").ac_ops, n = l.layers.at("L04.linear").ac_ops;
    EXPECT_GE(c, prev_conv);
    EXPECT_GE(n, prev_lin);
    EXPECT_LE(c, macs[1].macs * 2);
    EXPECT_LE(n, macs[2].macs * 2);
    prev_conv = c;
    prev_lin = n;
  }
}

TEST(Acs, ModelTraceProducesConsistentLedger) {
  arch::Model m(two_layer(), 4);
  EnergyTrace trace;
  m.features(sne::testing::random_tensor({3, 2, 4, 4}, 5, 0, 3), {false, snn::SpikeMode::hard, &trace});
  const auto l = count_acs(m.spec(), trace);
  std::uint64_t ac = 0, mac = 0;
  for (const auto& [id, r] : l.layers) {
    ac += r.ac_ops;
    mac += r.mac_ops;
    EXPECT_LE(r.ac_ops, r.static_macs * r.timesteps * r.samples) << id;
  }
  EXPECT_EQ(l.ac_ops(), ac);
  EXPECT_EQ(l.mac_ops(), mac);
  EXPECT_GE(l.mean_firing_rate(), 0);
  EXPECT_LE(l.mean_firing_rate(), 1);
}

TEST(Merge, IdentityCommutativityAssociativity) {
  EnergyLedger a, b, c;
  LayerRecord r;
  r.id = "L00.conv";
  r.static_macs = 10;
  r.ac_ops = 3;
  r.spike_count = 2;
  a.layers[r.id] = r;
  r.ac_ops = 5;
  b.layers[r.id] = r;
  LayerRecord h;
  h.id = "head";
  h.mac_ops = 7;
  c.layers[h.id] = h;
  EXPECT_EQ(merge_ledgers({a, EnergyLedger{}}), a);
  EXPECT_EQ(merge_ledgers({a, b}), merge_ledgers({b, a}));
  EXPECT_EQ(merge_ledgers({merge_ledgers({a, b}), c}), merge_ledgers({a, merge_ledgers({b, c})}));
  EXPECT_EQ(merge_ledgers({a, b}).ac_ops(), 8u);
}

TEST(Merge, SchemaMismatchIsRejected) {
  EnergyLedger a, b;
  LayerRecord r;
  r.id = "x";
  r.static_macs = 1;
  a.layers[r.id] = r;
  r.static_macs = 2;
  b.layers[r.id] = r;
  EXPECT_THROW(merge_ledgers({a, b}), std::invalid_argument);
}

TEST(Merge, PrefixRenamesEveryLayer) {
  EnergyLedger a;
  LayerRecord r;
  r.id = "L00.conv";
  a.layers[r.id] = r;
  const auto p = with_prefix(a, "s1/");
  ASSERT_EQ(p.layers.count("s1/L00.conv"), 1u);
  EXPECT_EQ(p.layers.at("s1/L00.conv").id, "s1/L00.conv");
}
