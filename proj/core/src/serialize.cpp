#include "sne/serialize.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace sne {

namespace snn {
void to_json(json& j, const LIFParams& p) {
  j = {{"tau_m", p.tau_m}, {"v_th", p.v_th}, {"v_reset", p.v_reset}, {"surrogate_slope", p.surrogate_slope}};
}
void from_json(const json& j, LIFParams& p) {
  p = LIFParams{};
  p.tau_m = j.value("tau_m", p.tau_m);
  p.v_th = j.value("v_th", p.v_th);
  p.v_reset = j.value("v_reset", p.v_reset);
  p.surrogate_slope = j.value("surrogate_slope", p.surrogate_slope);
}
}  // namespace snn

namespace arch {
void to_json(json& j, const Block& b) {
  j = {{"type", to_string(b.type)}};
  switch (b.type) {
    case BlockType::conv:
      j["out"] = b.out_channels;
      j["kernel"] = b.kernel;
      j["stride"] = b.stride;
      j["padding"] = b.padding;
      j["bias"] = b.bias;
      break;
    case BlockType::linear:
      j["out"] = b.out_channels;
      j["bias"] = b.bias;
      break;
    case BlockType::maxpool:
      j["window"] = b.kernel;
      j["stride"] = b.stride;
      break;
    default:
      break;
  }
}
void from_json(const json& j, Block& b) {
  b = Block{block_type_from_string(j.at("type").get<std::string>())};
  b.out_channels = j.value("out", std::size_t{0});
  b.kernel = j.value(b.type == BlockType::maxpool ? "window" : "kernel", std::size_t{0});
  b.stride = j.value("stride", std::size_t{1});
  b.padding = j.value("padding", std::size_t{0});
  b.bias = j.value("bias", false);
}
void to_json(json& j, const ArchSpec& s) {
  j = {{"name", s.name},
       {"kind", to_string(s.kind)},
       {"input", {s.in_channels, s.in_height, s.in_width}},
       {"classes", s.classes},
       {"feature_dim", s.feature_dim},
       {"has_head", s.has_head},
       {"timesteps", s.timesteps},
       {"lif", s.lif},
       {"blocks", s.blocks}};
}
void from_json(const json& j, ArchSpec& s) {
  s = ArchSpec{};
  s.name = j.at("name").get<std::string>();
  s.kind = net_kind_from_string(j.at("kind").get<std::string>());
  const auto in = j.at("input").get<std::vector<std::size_t>>();
  if (in.size() != 3) throw std::invalid_argument("arch spec: input must be [C, H, W]");
  s.in_channels = in[0];
  s.in_height = in[1];
  s.in_width = in[2];
  s.classes = j.at("classes").get<std::size_t>();
  s.feature_dim = j.at("feature_dim").get<std::size_t>();
  s.has_head = j.value("has_head", true);
  s.timesteps = j.value("timesteps", std::size_t{4});
  if (j.contains("lif")) s.lif = j.at("lif").get<snn::LIFParams>();
  s.blocks = j.at("blocks").get<std::vector<Block>>();
}
}  // namespace arch

namespace partition {
void to_json(json& j, const PartitionPlan& p) {
  j = {{"scheme", to_string(p.scheme)}, {"seed", p.seed}, {"feature_dim", p.feature_dim}, {"subsets", p.subsets}};
}
void from_json(const json& j, PartitionPlan& p) {
  p.scheme = scheme_from_string(j.at("scheme").get<std::string>());
  p.seed = j.value("seed", std::uint64_t{0});
  p.subsets = j.at("subsets").get<std::vector<std::vector<std::size_t>>>();
  std::size_t d = 0;
  for (const auto& s : p.subsets) d += s.size();
  p.feature_dim = j.value("feature_dim", d);
}
}  // namespace partition

namespace energy {
void to_json(json& j, const LayerRecord& r) {
  j = {{"id", r.id},
       {"static_macs", r.static_macs},
       {"mac_ops", r.mac_ops},
       {"ac_ops", r.ac_ops},
       {"spike_count", r.spike_count},
       {"neuron_count", r.neuron_count},
       {"timesteps", r.timesteps},
       {"samples", r.samples},
       {"analog_input", r.analog_input},
       {"snn", r.snn}};
}
void from_json(const json& j, LayerRecord& r) {
  r.id = j.at("id").get<std::string>();
  r.static_macs = j.at("static_macs").get<std::uint64_t>();
  r.mac_ops = j.at("mac_ops").get<std::uint64_t>();
  r.ac_ops = j.at("ac_ops").get<std::uint64_t>();
  r.spike_count = j.at("spike_count").get<std::uint64_t>();
  r.neuron_count = j.at("neuron_count").get<std::uint64_t>();
  r.timesteps = j.at("timesteps").get<std::uint64_t>();
  r.samples = j.at("samples").get<std::uint64_t>();
  r.analog_input = j.at("analog_input").get<bool>();
  r.snn = j.at("snn").get<bool>();
}
void to_json(json& j, const EnergyLedger& l) {
  j = json::array();
  for (const auto& [id, r] : l.layers) j.push_back(r);
}
void from_json(const json& j, EnergyLedger& l) {
  l.layers.clear();
  for (const auto& e : j) {
    auto r = e.get<LayerRecord>();
    l.layers[r.id] = r;
  }
}
json ledger_summary(const EnergyLedger& l) {
  return {{"mac_ops", l.mac_ops()},
          {"ac_ops", l.ac_ops()},
          {"spike_count", l.spike_count()},
          {"input_layer_macs", l.input_layer_macs()},
          {"mean_firing_rate", l.mean_firing_rate()}};
}
}  // namespace energy

namespace losses {
void to_json(json& j, const DistillConfig& c) {
  j = {{"alpha", c.alpha}, {"lambda", c.lambda}, {"n_students", c.n_students}, {"feature_dim", c.feature_dim}};
}
void from_json(const json& j, DistillConfig& c) {
  c = DistillConfig{};
  c.alpha = j.value("alpha", c.alpha);
  c.lambda = j.value("lambda", c.lambda);
  c.n_students = j.value("n_students", c.n_students);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
}
}  // namespace losses

void to_json(json& j, const OptimizerConfig& c) {
  j = {{"kind", c.kind},   {"lr", c.lr},       {"momentum", c.momentum}, {"weight_decay", c.weight_decay},
       {"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps}};
}
void from_json(const json& j, OptimizerConfig& c) {
  c = OptimizerConfig{};
  c.kind = j.value("kind", c.kind);
  c.lr = j.value("lr", c.lr);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
}

namespace io {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'S', 'N', 'E', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

struct Slot {
  std::string name;
  Shape shape;
  std::span<real> values;
};

std::vector<Slot> model_slots(arch::Model& m, const std::string& prefix) {
  std::vector<Slot> out;
  for (auto& b : m.buffers()) out.push_back({prefix + b.name, b.shape, b.values});
  return out;
}

std::vector<Slot> ensemble_slots(ensemble::EnsembleModel& m) {
  std::vector<Slot> out;
  for (std::size_t i = 0; i < m.size(); ++i) {
    auto s = model_slots(m.students[i], "s" + std::to_string(i) + "/");
    out.insert(out.end(), s.begin(), s.end());
  }
  out.push_back({"head.weight", m.head_weight.shape(), m.head_weight.data()});
  out.push_back({"head.bias", m.head_bias.shape(), m.head_bias.data()});
  return out;
}

void write_checkpoint(const fs::path& path, json header, const std::vector<Slot>& slots) {
  json table = json::array();
  for (const auto& s : slots) table.push_back({{"name", s.name}, {"shape", s.shape}});
  header["buffers"] = table;
  const std::string text = header.dump();
  std::string blob(kMagic, sizeof kMagic);
  auto put = [&blob](const void* p, std::size_t n) { blob.append(static_cast<const char*>(p), n); };
  put(&kVersion, sizeof kVersion);
  const std::uint64_t len = text.size();
  put(&len, sizeof len);
  blob += text;
  for (const auto& s : slots)
    for (real v : s.values) {
      const double d = v;
      put(&d, sizeof d);
    }
  write_text(path, blob);
}

std::string read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open checkpoint " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

json parse_header(const std::string& blob, const fs::path& path, std::size_t& offset) {
  const std::size_t fixed = sizeof kMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (blob.size() < fixed || std::memcmp(blob.data(), kMagic, sizeof kMagic) != 0) {
    throw std::invalid_argument(path.string() + ": not a checkpoint (bad magic)");
  }
  std::uint32_t version;
  std::memcpy(&version, blob.data() + sizeof kMagic, sizeof version);
  if (version != kVersion) {
    throw std::invalid_argument(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  std::uint64_t len;
  std::memcpy(&len, blob.data() + sizeof kMagic + sizeof version, sizeof len);
  if (blob.size() < fixed + len) throw std::invalid_argument(path.string() + ": truncated checkpoint header");
  offset = fixed + len;
  return json::parse(blob.substr(fixed, len));
}

void read_values(const std::string& blob, std::size_t offset, const json& header, const std::vector<Slot>& slots,
                 const fs::path& path) {
  const auto& table = header.at("buffers");
  if (table.size() != slots.size()) {
    throw std::invalid_argument(path.string() + ": checkpoint has " + std::to_string(table.size()) +
                                " buffers, model expects " + std::to_string(slots.size()));
  }
  std::size_t total = 0;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (table[i].at("name").get<std::string>() != slots[i].name || table[i].at("shape").get<Shape>() != slots[i].shape) {
      throw std::invalid_argument(path.string() + ": buffer " + std::to_string(i) + " is " +
                                  table[i].at("name").get<std::string>() + ", expected " + slots[i].name + " " +
                                  shape_str(slots[i].shape));
    }
    total += slots[i].values.size();
  }
  if (blob.size() != offset + total * sizeof(double)) {
    throw std::invalid_argument(path.string() + ": expected " + std::to_string(total) + " values, file holds " +
                                std::to_string((blob.size() - offset) / sizeof(double)));
  }
  const char* p = blob.data() + offset;
  for (const auto& s : slots)
    for (real& v : s.values) {
      double d;
      std::memcpy(&d, p, sizeof d);
      p += sizeof d;
      v = static_cast<real>(d);
    }
}

}  // namespace

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void save_plan(const fs::path& path, const partition::PartitionPlan& plan) { write_json(path, plan); }

partition::PartitionPlan load_plan(const fs::path& path) {
  auto plan = read_json(path).get<partition::PartitionPlan>();
  partition::require_valid(plan, plan.feature_dim);
  return plan;
}

void save_model(const fs::path& path, arch::Model& model, const json& meta) {
  json header = {{"kind", "model"}, {"spec", model.spec()}, {"meta", meta}};
  write_checkpoint(path, header, model_slots(model, ""));
}

arch::Model load_model(const fs::path& path, json* meta) {
  const std::string blob = read_all(path);
  std::size_t offset = 0;
  const json header = parse_header(blob, path, offset);
  if (header.value("kind", "") != "model") throw std::invalid_argument(path.string() + ": not a single-model checkpoint");
  arch::Model model(header.at("spec").get<arch::ArchSpec>(), 0);
  read_values(blob, offset, header, model_slots(model, ""), path);
  if (meta) *meta = header.value("meta", json::object());
  return model;
}

void save_ensemble(const fs::path& path, ensemble::EnsembleModel& model, const json& meta) {
  json specs = json::array();
  for (const auto& s : model.students) specs.push_back(s.spec());
  json header = {{"kind", "ensemble"}, {"students", specs}, {"plan", model.plan},
                 {"classes", model.classes}, {"distill", model.distill}, {"meta", meta}};
  write_checkpoint(path, header, ensemble_slots(model));
}

ensemble::EnsembleModel load_ensemble(const fs::path& path, json* meta) {
  const std::string blob = read_all(path);
  std::size_t offset = 0;
  const json header = parse_header(blob, path, offset);
  if (header.value("kind", "") != "ensemble") throw std::invalid_argument(path.string() + ": not an ensemble checkpoint");
  auto model = ensemble::make_ensemble(header.at("students").get<std::vector<arch::ArchSpec>>(),
                                       header.at("plan").get<partition::PartitionPlan>(),
                                       header.at("classes").get<std::size_t>(),
                                       header.at("distill").get<losses::DistillConfig>(), 0);
  read_values(blob, offset, header, ensemble_slots(model), path);
  if (meta) *meta = header.value("meta", json::object());
  return model;
}

json checkpoint_header(const fs::path& path) {
  const std::string blob = read_all(path);
  std::size_t offset = 0;
  return parse_header(blob, path, offset);
}

}  // namespace io
}  // namespace sne
