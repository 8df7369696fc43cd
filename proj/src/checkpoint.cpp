#include "twins/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "twins/binary_io.hpp"

namespace twins {

namespace {

constexpr uint8_t kDtypeF32 = 1;
constexpr uint8_t kDtypeF64 = 2;

void write_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
  io::write_le<uint32_t>(out, static_cast<uint32_t>(name.size()));
  io::write_bytes(out, name.data(), name.size());
  io::write_le<uint8_t>(out, kDtypeF64);
  io::write_le<uint32_t>(out, static_cast<uint32_t>(t.shape.size()));
  for (int d : t.shape) io::write_le<int64_t>(out, d);
  for (double v : t.data) io::write_f64_le(out, v);
}

struct NamedTensor {
  std::string full_name;
  Tensor tensor;
};

NamedTensor read_tensor(std::istream& in) {
  NamedTensor nt;
  const auto name_len = io::read_le<uint32_t>(in, "tensor name length");
  if (name_len > (1u << 20)) throw FormatError("implausible tensor name length");
  nt.full_name.resize(name_len);
  io::read_bytes(in, nt.full_name.data(), name_len, "tensor name");
  const auto dtype = io::read_le<uint8_t>(in, "tensor dtype");
  if (dtype != kDtypeF32 && dtype != kDtypeF64)
    throw FormatError("unknown tensor dtype " + std::to_string(dtype));
  const auto rank = io::read_le<uint32_t>(in, "tensor rank");
  if (rank > 16) throw FormatError("implausible tensor rank");
  int64_t count = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    const auto dim = io::read_le<int64_t>(in, "tensor dim");
    if (dim < 0 || dim > (int64_t{1} << 32)) throw FormatError("implausible tensor dim");
    nt.tensor.shape.push_back(static_cast<int>(dim));
    count *= dim;
  }
  nt.tensor.data.resize(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    nt.tensor.data[static_cast<size_t>(i)] =
        dtype == kDtypeF64
            ? io::read_f64_le(in, "tensor payload")
            : static_cast<double>(io::read_f32_le(in, "tensor payload"));
  }
  return nt;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot create checkpoint " + path.string());

  nlohmann::json meta = ckpt.config;
  meta["format_version"] = kCheckpointVersion;
  meta["epochs_completed"] = ckpt.epochs_completed;
  meta["optimizer_step"] = ckpt.opt_state.step;
  meta["arch"] = ckpt.params.arch.to_json();
  meta["loss_history"] = nlohmann::json::array();
  for (const LossBreakdown& l : ckpt.loss_history)
    meta["loss_history"].push_back({{"invariance", l.invariance},
                                    {"redundancy", l.redundancy},
                                    {"lambda", l.lambda},
                                    {"total", l.total}});
  const std::string config_text = meta.dump();

  io::write_bytes(out, kCheckpointMagic, 8);
  io::write_le<uint32_t>(out, kCheckpointVersion);
  io::write_le<uint64_t>(out, config_text.size());
  io::write_bytes(out, config_text.data(), config_text.size());

  uint32_t count = static_cast<uint32_t>(ckpt.params.tensors.size() + ckpt.opt_state.m.size() +
                                         ckpt.opt_state.v.size() + ckpt.extra.size());
  io::write_le<uint32_t>(out, count);
  for (const Tensor& t : ckpt.params.tensors) write_tensor(out, "model." + t.name, t);
  for (const Tensor& t : ckpt.opt_state.m) write_tensor(out, "adam.m." + t.name, t);
  for (const Tensor& t : ckpt.opt_state.v) write_tensor(out, "adam.v." + t.name, t);
  for (const Tensor& t : ckpt.extra) write_tensor(out, "extra." + t.name, t);
  if (!out) throw FormatError("short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());

  char magic[8];
  io::read_bytes(in, magic, 8, "checkpoint magic");
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw FormatError("bad checkpoint magic in " + path.string());
  const auto version = io::read_le<uint32_t>(in, "checkpoint version");
  if (version != kCheckpointVersion)
    throw VersionError("checkpoint " + path.string() + " has format version " +
                       std::to_string(version) + ", this build reads version " +
                       std::to_string(kCheckpointVersion));

  const auto config_len = io::read_le<uint64_t>(in, "config length");
  if (config_len > (uint64_t{1} << 30)) throw FormatError("implausible config length");
  std::string config_text(static_cast<size_t>(config_len), '\0');
  io::read_bytes(in, config_text.data(), config_text.size(), "config JSON");

  Checkpoint ckpt;
  try {
    ckpt.config = nlohmann::json::parse(config_text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  if (!ckpt.config.contains("arch")) throw FormatError("checkpoint config missing arch");
  ckpt.params.arch = ArchDescriptor::from_json(ckpt.config.at("arch"));
  ckpt.epochs_completed = ckpt.config.value("epochs_completed", 0);
  ckpt.opt_state.step = ckpt.config.value("optimizer_step", int64_t{0});
  if (ckpt.config.contains("loss_history")) {
    for (const auto& jl : ckpt.config.at("loss_history")) {
      LossBreakdown l;
      l.invariance = jl.value("invariance", 0.0);
      l.redundancy = jl.value("redundancy", 0.0);
      l.lambda = jl.value("lambda", 0.0);
      l.total = jl.value("total", 0.0);
      ckpt.loss_history.push_back(l);
    }
  }

  const auto count = io::read_le<uint32_t>(in, "tensor count");
  for (uint32_t i = 0; i < count; ++i) {
    NamedTensor nt = read_tensor(in);
    auto strip = [&nt](const char* prefix) {
      const size_t len = std::strlen(prefix);
      nt.tensor.name = nt.full_name.substr(len);
      return nt.tensor;
    };
    if (nt.full_name.starts_with("model.")) {
      ckpt.params.tensors.push_back(strip("model."));
    } else if (nt.full_name.starts_with("adam.m.")) {
      ckpt.opt_state.m.push_back(strip("adam.m."));
    } else if (nt.full_name.starts_with("adam.v.")) {
      ckpt.opt_state.v.push_back(strip("adam.v."));
    } else if (nt.full_name.starts_with("extra.")) {
      ckpt.extra.push_back(strip("extra."));
    } else {
      throw FormatError("tensor '" + nt.full_name + "' has no recognized role prefix");
    }
  }
  return ckpt;
}

}  // namespace twins
