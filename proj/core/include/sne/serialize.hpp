#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "sne/arch.hpp"
#include "sne/energy.hpp"
#include "sne/ensemble.hpp"
#include "sne/losses.hpp"
#include "sne/model.hpp"
#include "sne/optim.hpp"
#include "sne/partition.hpp"

namespace sne {

using json = nlohmann::json;

namespace snn {
void to_json(json& j, const LIFParams& p);
void from_json(const json& j, LIFParams& p);
}  // namespace snn

namespace arch {
void to_json(json& j, const Block& b);
void from_json(const json& j, Block& b);
void to_json(json& j, const ArchSpec& s);
void from_json(const json& j, ArchSpec& s);
}  // namespace arch

namespace partition {
void to_json(json& j, const PartitionPlan& p);
void from_json(const json& j, PartitionPlan& p);
}  // namespace partition

namespace energy {
void to_json(json& j, const LayerRecord& r);
void from_json(const json& j, LayerRecord& r);
void to_json(json& j, const EnergyLedger& l);
void from_json(const json& j, EnergyLedger& l);
// Totals only.
json ledger_summary(const EnergyLedger& l);
}  // namespace energy

namespace losses {
void to_json(json& j, const DistillConfig& c);
void from_json(const json& j, DistillConfig& c);
}  // namespace losses

void to_json(json& j, const OptimizerConfig& c);
void from_json(const json& j, OptimizerConfig& c);

namespace io {

json read_json(const std::filesystem::path& path);
// Writes atomically through a temporary file in the same directory.
void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const json& j);

void save_plan(const std::filesystem::path& path, const partition::PartitionPlan& plan);
partition::PartitionPlan load_plan(const std::filesystem::path& path);

// Binary checkpoint: "SNECKPT1", u32 version, u64 header length, JSON header
// (kind, spec(s), buffer table, user metadata), then little-endian f64
// values of every buffer in table order.
void save_model(const std::filesystem::path& path, arch::Model& model, const json& meta = json::object());
arch::Model load_model(const std::filesystem::path& path, json* meta = nullptr);

void save_ensemble(const std::filesystem::path& path, ensemble::EnsembleModel& model, const json& meta = json::object());
ensemble::EnsembleModel load_ensemble(const std::filesystem::path& path, json* meta = nullptr);

// Header of any checkpoint without reading the values.
json checkpoint_header(const std::filesystem::path& path);

}  // namespace io
}  // namespace sne
