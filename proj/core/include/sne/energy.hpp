#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sne/arch.hpp"

namespace sne::energy {

// What one parameterised layer received during a forward pass.
struct LayerTrace {
  std::string id;
  // Sum of input activations over every timestep and sample. For binary
  // inputs this is the number of incoming spikes.
  double input_sum = 0;
  std::uint64_t input_numel = 0;  // per sample and timestep
  std::uint64_t samples = 0;
  std::uint64_t timesteps = 1;
  // Real-valued input (pixels or firing rates): executed as MACs.
  bool analog_input = false;
};

struct EnergyTrace {
  std::vector<LayerTrace> layers;
  const LayerTrace* find(const std::string& id) const;
};

struct LayerRecord {
  std::string id;
  std::uint64_t static_macs = 0;  // per sample and timestep
  std::uint64_t mac_ops = 0;
  std::uint64_t ac_ops = 0;
  std::uint64_t spike_count = 0;
  std::uint64_t neuron_count = 0;  // input neurons per sample and timestep
  std::uint64_t timesteps = 1;
  std::uint64_t samples = 0;
  bool analog_input = false;
  bool snn = false;  // layer belongs to a spiking network

  bool operator==(const LayerRecord&) const = default;
};

// Integer op counters keyed by layer id. Totals are always recomputed from the
// per-layer entries.
struct EnergyLedger {
  std::map<std::string, LayerRecord> layers;

  std::uint64_t mac_ops() const;
  std::uint64_t ac_ops() const;
  std::uint64_t spike_count() const;
  // MACs spent by layers fed with real-valued input inside a spiking network.
  std::uint64_t input_layer_macs() const;
  // Incoming spikes over incoming spike slots, spiking-input layers only.
  double mean_firing_rate() const;
  bool empty() const { return layers.empty(); }

  bool operator==(const EnergyLedger&) const = default;
};

struct LayerMacs {
  std::string id;
  std::uint64_t macs = 0;  // per sample
};

// Static multiply-accumulate counts per layer for one sample and timestep.
std::vector<LayerMacs> count_macs(const arch::ArchSpec& spec, std::size_t channels,
                                  std::size_t height, std::size_t width);
std::uint64_t total_macs(const arch::ArchSpec& spec);

// Ledger for a recorded pass. Spiking-input layers cost
//   AC = static MACs x (mean input rate over timesteps and positions) x T
// per sample, rounded to the nearest op per layer; analog-input layers and
// every layer of an ann cost their static MACs per executed timestep.
EnergyLedger count_acs(const arch::ArchSpec& spec, const EnergyTrace& trace);

// Elementwise sum keyed by layer id. Records that share an id must agree on
// static geometry.
EnergyLedger merge_ledgers(const std::vector<EnergyLedger>& ledgers);
void merge_into(EnergyLedger& into, const EnergyLedger& other);
EnergyLedger with_prefix(const EnergyLedger& ledger, const std::string& prefix);

}  // namespace sne::energy
