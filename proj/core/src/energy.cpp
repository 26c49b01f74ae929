#include "sne/energy.hpp"

#include <cmath>
#include <stdexcept>

namespace sne::energy {

const LayerTrace* EnergyTrace::find(const std::string& id) const {
  for (const auto& l : layers)
    if (l.id == id) return &l;
  return nullptr;
}

std::uint64_t EnergyLedger::mac_ops() const {
  std::uint64_t n = 0;
  for (const auto& [id, r] : layers) n += r.mac_ops;
  return n;
}

std::uint64_t EnergyLedger::ac_ops() const {
  std::uint64_t n = 0;
  for (const auto& [id, r] : layers) n += r.ac_ops;
  return n;
}

std::uint64_t EnergyLedger::spike_count() const {
  std::uint64_t n = 0;
  for (const auto& [id, r] : layers) n += r.spike_count;
  return n;
}

std::uint64_t EnergyLedger::input_layer_macs() const {
  std::uint64_t n = 0;
  for (const auto& [id, r] : layers)
    if (r.analog_input && r.snn) n += r.mac_ops;
  return n;
}

double EnergyLedger::mean_firing_rate() const {
  double spikes = 0, slots = 0;
  for (const auto& [id, r] : layers) {
    if (r.analog_input) continue;
    spikes += static_cast<double>(r.spike_count);
    slots += static_cast<double>(r.neuron_count * r.timesteps * r.samples);
  }
  return slots > 0 ? spikes / slots : 0.0;
}

std::vector<LayerMacs> count_macs(const arch::ArchSpec& spec, std::size_t channels,
                                  std::size_t height, std::size_t width) {
  if (channels != spec.in_channels || height != spec.in_height || width != spec.in_width) {
    throw std::invalid_argument("count_macs: input " + std::to_string(channels) + "x" +
                                std::to_string(height) + "x" + std::to_string(width) +
                                " does not match arch '" + spec.name + "'");
  }
  std::vector<LayerMacs> out;
  for (const auto& l : arch::analyze(spec).layers) out.push_back({l.id, l.macs});
  return out;
}

std::uint64_t total_macs(const arch::ArchSpec& spec) {
  std::uint64_t n = 0;
  for (const auto& l : count_macs(spec, spec.in_channels, spec.in_height, spec.in_width)) n += l.macs;
  return n;
}

EnergyLedger count_acs(const arch::ArchSpec& spec, const EnergyTrace& trace) {
  EnergyLedger ledger;
  for (const auto& layer : arch::analyze(spec).layers) {
    const LayerTrace* t = trace.find(layer.id);
    if (!t) {
      throw std::invalid_argument("count_acs: no trace recorded for layer " + layer.id + " of '" +
                                  spec.name + "'");
    }
    if (t->input_numel != layer.input.numel()) {
      throw std::invalid_argument("count_acs: trace for " + layer.id + " has " +
                                  std::to_string(t->input_numel) + " inputs, layer expects " +
                                  std::to_string(layer.input.numel()));
    }
    LayerRecord r;
    r.id = layer.id;
    r.static_macs = layer.macs;
    r.neuron_count = t->input_numel;
    r.timesteps = t->timesteps;
    r.samples = t->samples;
    r.snn = spec.kind == arch::NetKind::snn;
    r.analog_input = t->analog_input || !r.snn;
    if (r.analog_input) {
      r.mac_ops = r.static_macs * r.timesteps * r.samples;
    } else {
      // Integer arithmetic keeps the count exact for binary inputs.
      const auto spikes = static_cast<unsigned __int128>(std::llround(t->input_sum));
      r.spike_count = static_cast<std::uint64_t>(spikes);
      const unsigned __int128 num = static_cast<unsigned __int128>(r.static_macs) * spikes;
      const unsigned __int128 den = t->input_numel;
      r.ac_ops = den ? static_cast<std::uint64_t>((num + den / 2) / den) : 0;
    }
    ledger.layers[r.id] = r;
  }
  return ledger;
}

void merge_into(EnergyLedger& into, const EnergyLedger& other) {
  for (const auto& [id, r] : other.layers) {
    auto it = into.layers.find(id);
    if (it == into.layers.end()) {
      into.layers.emplace(id, r);
      continue;
    }
    auto& a = it->second;
    if (a.static_macs != r.static_macs || a.neuron_count != r.neuron_count ||
        a.timesteps != r.timesteps || a.analog_input != r.analog_input || a.snn != r.snn) {
      throw std::invalid_argument("merge_ledgers: layer " + id + " has incompatible schemas");
    }
    a.mac_ops += r.mac_ops;
    a.ac_ops += r.ac_ops;
    a.spike_count += r.spike_count;
    a.samples += r.samples;
  }
}

EnergyLedger merge_ledgers(const std::vector<EnergyLedger>& ledgers) {
  EnergyLedger out;
  for (const auto& l : ledgers) merge_into(out, l);
  return out;
}

EnergyLedger with_prefix(const EnergyLedger& ledger, const std::string& prefix) {
  EnergyLedger out;
  for (const auto& [id, r] : ledger.layers) {
    LayerRecord copy = r;
    copy.id = prefix + id;
    out.layers.emplace(copy.id, copy);
  }
  return out;
}

}  // namespace sne::energy
