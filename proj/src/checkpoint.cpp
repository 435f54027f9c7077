#include "dexined/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "dexined/config.hpp"
#include "json.hpp"

namespace dexined {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads are written in host byte order");

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::size_t kHeaderBytes = 8 + 4 + 8;

template <typename Real>
const char* dtype_name() {
  return sizeof(Real) == 4 ? "f32" : "f64";
}

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "f32") return 4;
  if (dtype == "f64") return 8;
  fail(ErrorKind::Integrity, "unknown tensor dtype '" + dtype + "'");
}

struct Raw {
  CheckpointManifest manifest;
  json optimizer;
  std::vector<char> payload;
};

Raw read_raw(const fs::path& path, bool with_payload) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open checkpoint " + path.string());
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);

  char header[kHeaderBytes] = {};
  if (!in.read(header, 8) || std::memcmp(header, kCheckpointMagic, 8) != 0) {
    fail(ErrorKind::Format, path.string() + " is not a checkpoint (bad magic)");
  }
  if (!in.read(header + 8, 12)) fail(ErrorKind::Truncated, path.string() + ": header is truncated");
  std::uint32_t version = 0;
  std::uint64_t manifest_len = 0;
  std::memcpy(&version, header + 8, 4);
  std::memcpy(&manifest_len, header + 12, 8);
  if (version != kCheckpointVersion) {
    fail(ErrorKind::Version, path.string() + ": checkpoint version " + std::to_string(version) + ", expected " +
                                 std::to_string(kCheckpointVersion));
  }
  if (manifest_len > file_size - kHeaderBytes) fail(ErrorKind::Truncated, path.string() + ": manifest is truncated");
  std::string text(manifest_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(manifest_len));

  Raw raw;
  CheckpointManifest& m = raw.manifest;
  m.version = version;
  try {
    const json doc = json::parse(text);
    m.step = doc.at("step").get<std::int64_t>();
    m.model = model_config_from_json(doc.at("model").dump());
    raw.optimizer = doc.value("optimizer", json::object());
    for (const auto& t : doc.at("tensors")) {
      CheckpointTensorInfo info;
      info.name = t.at("name").get<std::string>();
      const auto dims = t.at("shape").get<std::vector<std::int64_t>>();
      if (dims.size() != 4) fail(ErrorKind::Integrity, "tensor " + info.name + " does not have 4 dimensions");
      info.shape = Shape{dims[0], dims[1], dims[2], dims[3]};
      info.dtype = t.at("dtype").get<std::string>();
      info.offset = t.at("offset").get<std::uint64_t>();
      info.nbytes = t.at("nbytes").get<std::uint64_t>();
      m.tensors.push_back(std::move(info));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, path.string() + ": malformed manifest: " + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Config) fail(ErrorKind::Format, path.string() + ": bad model config: " + e.what());
    throw;
  }

  std::uint64_t expected_offset = 0;
  for (const auto& t : m.tensors) {
    for (std::int64_t d : {t.shape.n, t.shape.c, t.shape.h, t.shape.w}) {
      if (d < 0) fail(ErrorKind::Integrity, "tensor " + t.name + " has a negative dimension");
    }
    if (t.nbytes != static_cast<std::uint64_t>(t.shape.numel()) * dtype_size(t.dtype)) {
      fail(ErrorKind::Integrity, "tensor " + t.name + ": shape " + t.shape.str() + " disagrees with " +
                                     std::to_string(t.nbytes) + " payload bytes");
    }
    if (t.offset != expected_offset) fail(ErrorKind::Integrity, "tensor " + t.name + " has an unexpected offset");
    expected_offset += t.nbytes;
  }
  const std::uint64_t available = file_size - kHeaderBytes - manifest_len;
  if (available < expected_offset) fail(ErrorKind::Truncated, path.string() + ": tensor payload is truncated");
  if (available > expected_offset) fail(ErrorKind::Integrity, path.string() + ": trailing bytes after payload");

  if (with_payload) {
    raw.payload.resize(expected_offset);
    if (!in.read(raw.payload.data(), static_cast<std::streamsize>(expected_offset))) {
      fail(ErrorKind::Truncated, path.string() + ": tensor payload is truncated");
    }
  }
  return raw;
}

template <typename Real>
void copy_tensor(const Raw& raw, const CheckpointTensorInfo& info, Tensor<Real>& dst) {
  if (info.shape != dst.shape()) {
    fail(ErrorKind::Integrity, "tensor " + info.name + " has shape " + info.shape.str() + ", model expects " +
                                   dst.shape().str());
  }
  const char* src = raw.payload.data() + info.offset;
  Real* out = dst.raw();
  const std::size_t n = dst.size();
  if (info.dtype == dtype_name<Real>()) {
    std::memcpy(out, src, n * sizeof(Real));
  } else if (info.dtype == "f32") {
    for (std::size_t i = 0; i < n; ++i) {
      float v;
      std::memcpy(&v, src + i * 4, 4);
      out[i] = static_cast<Real>(v);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      double v;
      std::memcpy(&v, src + i * 8, 8);
      out[i] = static_cast<Real>(v);
    }
  }
}

}  // namespace

template <typename Real>
void save_checkpoint(const fs::path& path, const DexiNed<Real>& model, const OptimizerState<Real>* optimizer,
                     std::int64_t step) {
  std::vector<std::pair<std::string, const Tensor<Real>*>> tensors;
  for (const auto& p : model.parameters()) tensors.emplace_back(p->name, &p->value);
  if (optimizer != nullptr) {
    for (std::size_t i = 0; i < optimizer->names.size(); ++i) {
      tensors.emplace_back("adam/m/" + optimizer->names[i], &optimizer->m[i]);
      tensors.emplace_back("adam/v/" + optimizer->names[i], &optimizer->v[i]);
    }
  }

  json list = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    const Shape s = t->shape();
    const std::uint64_t nbytes = t->size() * sizeof(Real);
    list.push_back(json{{"name", name},
                        {"shape", {s.n, s.c, s.h, s.w}},
                        {"dtype", dtype_name<Real>()},
                        {"offset", offset},
                        {"nbytes", nbytes}});
    offset += nbytes;
  }
  json doc;
  doc["step"] = step;
  doc["model"] = json::parse(model_config_to_json(model.config()));
  doc["optimizer"] = optimizer != nullptr ? json{{"present", true}, {"step", optimizer->step}}
                                          : json{{"present", false}};
  doc["tensors"] = std::move(list);
  const std::string text = doc.dump();

  const fs::path tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write checkpoint " + path.string());
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t len = text.size();
    out.write(kCheckpointMagic, 8);
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& entry : tensors) {
      const Tensor<Real>& t = *entry.second;
      out.write(reinterpret_cast<const char*>(t.raw()), static_cast<std::streamsize>(t.size() * sizeof(Real)));
    }
    out.close();
    if (!out) fail(ErrorKind::Io, "cannot write checkpoint " + path.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::Io, "cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

CheckpointManifest read_checkpoint_manifest(const fs::path& path) { return read_raw(path, false).manifest; }

template <typename Real>
LoadedCheckpoint<Real> load_checkpoint(const fs::path& path) {
  const Raw raw = read_raw(path, true);
  LoadedCheckpoint<Real> out;
  out.step = raw.manifest.step;
  out.model = std::make_unique<DexiNed<Real>>(raw.manifest.model, 0);

  auto find = [&](const std::string& name) -> const CheckpointTensorInfo* {
    for (const auto& t : raw.manifest.tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  };
  for (auto& p : out.model->parameters()) {
    const CheckpointTensorInfo* info = find(p->name);
    if (info == nullptr) fail(ErrorKind::Integrity, "checkpoint lacks parameter " + p->name);
    copy_tensor(raw, *info, p->value);
  }

  out.has_optimizer = raw.optimizer.value("present", false);
  if (out.has_optimizer) {
    out.optimizer.initialize(out.model->parameters());
    out.optimizer.step = raw.optimizer.value("step", std::int64_t{0});
    for (std::size_t i = 0; i < out.optimizer.names.size(); ++i) {
      const std::string& name = out.optimizer.names[i];
      const CheckpointTensorInfo* m = find("adam/m/" + name);
      const CheckpointTensorInfo* v = find("adam/v/" + name);
      if (m == nullptr || v == nullptr) fail(ErrorKind::Integrity, "checkpoint lacks optimizer state for " + name);
      copy_tensor(raw, *m, out.optimizer.m[i]);
      copy_tensor(raw, *v, out.optimizer.v[i]);
    }
  }
  return out;
}

template void save_checkpoint<float>(const fs::path&, const DexiNed<float>&, const OptimizerState<float>*,
                                     std::int64_t);
template void save_checkpoint<double>(const fs::path&, const DexiNed<double>&, const OptimizerState<double>*,
                                      std::int64_t);
template LoadedCheckpoint<float> load_checkpoint<float>(const fs::path&);
template LoadedCheckpoint<double> load_checkpoint<double>(const fs::path&);

}  // namespace dexined
