#include "nres/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "config_json.hpp"
#include "nres/errors.hpp"

namespace nres {

namespace {

constexpr char kMagic[4] = {'N', 'R', 'E', 'S'};
constexpr uint32_t kVersion = 1;
constexpr uint8_t kDtypeF32 = 0;

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<uint32_t>(f)); }

// Sequential reader that reports the byte offset of whatever went wrong.
class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  size_t offset() const { return pos_; }
  size_t remaining() const { return bytes_.size() - pos_; }

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError("checkpoint: " + what + " at offset " + std::to_string(pos_));
  }

  void raw(void* dst, size_t n, const char* what) {
    if (remaining() < n) {
      fail("truncated while reading " + std::string(what) + " (" + std::to_string(n) +
           " bytes needed, " + std::to_string(remaining()) + " left)");
    }
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  uint32_t u32(const char* what) {
    uint8_t b[4];
    raw(b, 4, what);
    return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
           static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
  }

  uint64_t u64(const char* what) {
    uint8_t b[8];
    raw(b, 8, what);
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }

  std::string str(size_t n, const char* what) {
    std::string s(n, '\0');
    raw(s.data(), n, what);
    return s;
  }

 private:
  std::string bytes_;
  size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, tensor] : ckpt.tensors) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out.append(name);
    put_u32(out, static_cast<uint32_t>(tensor.ndim()));
    for (int64_t d : tensor.shape()) put_u64(out, static_cast<uint64_t>(d));
    out.push_back(static_cast<char>(kDtypeF32));
    for (int64_t i = 0; i < tensor.numel(); ++i) put_f32(out, tensor.data()[i]);
  }

  Json meta = Json::object();
  if (ckpt.model_config) meta["model"] = to_json(*ckpt.model_config);
  if (ckpt.extension_config) meta["extension"] = to_json(*ckpt.extension_config);
  meta["step"] = ckpt.step;
  std::string blob = meta.dump();
  put_u32(out, static_cast<uint32_t>(blob.size()));
  out.append(blob);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("checkpoint: cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw FormatError("checkpoint: write to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("checkpoint: cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(std::move(bytes));

  char magic[4];
  r.raw(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("checkpoint: bad magic at offset 0 (not a model file)");
  }
  uint32_t version = r.u32("version");
  if (version != kVersion) {
    throw FormatError("checkpoint: unknown version " + std::to_string(version) + " at offset 4");
  }

  Checkpoint ckpt;
  uint32_t count = r.u32("tensor count");
  ckpt.tensors.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = r.u32("tensor name length");
    std::string name = r.str(name_len, "tensor name");
    uint32_t ndim = r.u32("tensor rank");
    if (ndim == 0 || ndim > 8) r.fail("implausible tensor rank " + std::to_string(ndim));
    std::vector<int64_t> dims(ndim);
    int64_t numel = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      uint64_t extent = r.u64("tensor extent");
      if (extent == 0 || extent > (1ull << 32)) {
        r.fail("implausible extent " + std::to_string(extent) + " for tensor '" + name + "'");
      }
      dims[d] = static_cast<int64_t>(extent);
      numel *= dims[d];
    }
    uint8_t dtype;
    r.raw(&dtype, 1, "dtype");
    if (dtype != kDtypeF32) {
      r.fail("unsupported dtype " + std::to_string(dtype) + " for tensor '" + name + "'");
    }
    Tensor t(dims);
    for (int64_t e = 0; e < numel; ++e) {
      t.data()[e] = std::bit_cast<float>(r.u32("tensor data"));
    }
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }

  uint32_t json_len = r.u32("metadata length");
  size_t json_at = r.offset();
  std::string blob = r.str(json_len, "metadata");
  if (r.remaining() != 0) {
    r.fail(std::to_string(r.remaining()) + " trailing bytes");
  }
  Json meta = Json::parse(blob, nullptr, /*allow_exceptions=*/false);
  if (meta.is_discarded() || !meta.is_object()) {
    throw FormatError("checkpoint: metadata at offset " + std::to_string(json_at) +
                      " is not valid JSON");
  }
  try {
    check_keys(meta, {"model", "extension", "step"}, "checkpoint");
    if (meta.contains("model")) {
      ckpt.model_config = model_config_from_json(meta["model"], "checkpoint.model");
    }
    if (meta.contains("extension")) {
      ckpt.extension_config =
          extension_config_from_json(meta["extension"], "checkpoint.extension");
    }
    ckpt.step = json_int(meta, "step", 0, "checkpoint");
  } catch (const ConfigError& e) {
    // The file, not the caller, is at fault when its metadata is bad.
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  return ckpt;
}

Checkpoint make_checkpoint(const BackboneModel& model, int64_t step) {
  Checkpoint ckpt;
  ckpt.model_config = model.config;
  ckpt.step = step;
  visit_params(model, [&](const std::string& name, const Tensor& t) {
    ckpt.tensors.emplace_back(name, t);
  });
  return ckpt;
}

Checkpoint make_checkpoint(const ExtendedModel& model, int64_t step) {
  Checkpoint ckpt;
  ckpt.model_config = model.backbone.config;
  ckpt.extension_config = model.config;
  ckpt.step = step;
  auto& m = const_cast<ExtendedModel&>(model);  // traversal only reads
  for (const ParamRef& ref : all_parameters(m)) {
    ckpt.tensors.emplace_back(ref.name, *ref.tensor);
  }
  return ckpt;
}

namespace {

// Overwrites every parameter of an assembled model from the snapshot's name
// map, insisting on an exact one-to-one match.
void fill_params(std::vector<ParamRef> refs, const Checkpoint& ckpt) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, tensor] : ckpt.tensors) {
    if (!by_name.emplace(name, &tensor).second) {
      throw FormatError("checkpoint: duplicate tensor '" + name + "'");
    }
  }
  for (ParamRef& ref : refs) {
    auto it = by_name.find(ref.name);
    if (it == by_name.end()) {
      throw FormatError("checkpoint: missing tensor '" + ref.name + "'");
    }
    if (!ref.tensor->same_shape(*it->second)) {
      throw FormatError("checkpoint: tensor '" + ref.name + "' has shape " +
                        it->second->shape_str() + ", expected " + ref.tensor->shape_str());
    }
    *ref.tensor = *it->second;
    by_name.erase(it);
  }
  if (!by_name.empty()) {
    throw FormatError("checkpoint: unexpected tensor '" + by_name.begin()->first + "'");
  }
}

}  // namespace

BackboneModel backbone_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.model_config) {
    throw FormatError("checkpoint: no model config; cannot rebuild a backbone");
  }
  if (ckpt.extension_config) {
    throw FormatError("checkpoint: holds an extended model, not a bare backbone");
  }
  BackboneModel model = init_backbone(*ckpt.model_config, 0);
  std::vector<ParamRef> refs;
  visit_params(model, [&](const std::string& name, Tensor& t) { refs.push_back({name, &t}); });
  fill_params(std::move(refs), ckpt);
  return model;
}

ExtendedModel extended_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.model_config) {
    throw FormatError("checkpoint: no model config; cannot rebuild a model");
  }
  if (!ckpt.extension_config) {
    throw FormatError("checkpoint: no extension config; holds a bare backbone");
  }
  ExtendedModel model =
      attach_extension(init_backbone(*ckpt.model_config, 0), *ckpt.extension_config, 0);
  fill_params(all_parameters(model), ckpt);
  return model;
}

}  // namespace nres
