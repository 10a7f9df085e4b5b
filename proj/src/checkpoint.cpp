#include "pam/checkpoint.hpp"

#include "pam/error.hpp"
#include "pam/volume.hpp"

#include <bit>
#include <cstdio>
#include <cstring>

namespace pam {

namespace {

constexpr std::string_view kMagic = "PAMCKPT1\n";

}  // namespace

std::string model_kind_name(ModelKind kind) {
  return kind == ModelKind::kBox2Mask ? "box2mask" : "propmask";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "box2mask") return ModelKind::kBox2Mask;
  if (name == "propmask") return ModelKind::kPropMask;
  throw Error("bad_model", "model must be box2mask or propmask, got '" + std::string(name) + "'");
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string Checkpoint::hash() const { return hash_hex(params.hash()); }

std::string encode_checkpoint(const Checkpoint& ckpt) {
  static_assert(std::endian::native == std::endian::little,
                "PAMCKPT1 payload assumes a little-endian host");
  nlohmann::ordered_json m;
  m["model"] = model_kind_name(ckpt.kind);
  m["config"] = ckpt.config.to_json();
  auto list = nlohmann::ordered_json::array();
  for (const auto& e : ckpt.params.entries()) list.push_back({e.name, e.tensor.shape()});
  m["params"] = std::move(list);
  m["hash"] = ckpt.hash();
  m["finetuned"] = ckpt.finetuned;
  m["base_hash"] = ckpt.base_hash ? nlohmann::ordered_json(*ckpt.base_hash) : nullptr;

  std::string out(kMagic);
  out += m.dump();
  out += '\n';
  out += '\0';
  for (const auto& e : ckpt.params.entries())
    out.append(reinterpret_cast<const char*>(e.tensor.data()),
               sizeof(float) * static_cast<std::size_t>(e.tensor.numel()));
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.substr(0, kMagic.size()) != kMagic) throw Error("bad_magic", "not a PAMCKPT1 file");
  const auto eol = bytes.find('\n', kMagic.size());
  if (eol == std::string_view::npos) throw Error("truncated", "manifest line is incomplete");
  if (eol + 1 >= bytes.size()) throw Error("truncated", "manifest separator missing");
  if (bytes[eol + 1] != '\0') throw Error("bad_header", "manifest not followed by 0x00");

  Checkpoint ckpt;
  std::string declared_hash;
  try {
    const auto m = nlohmann::json::parse(bytes.substr(kMagic.size(), eol - kMagic.size()));
    ckpt.kind = parse_model_kind(m.at("model").get<std::string>());
    ckpt.config = NetConfig::from_json(m.at("config"));
    for (const auto& p : m.at("params"))
      ckpt.params.add(p.at(0).get<std::string>(), p.at(1).get<Shape>());
    declared_hash = m.value("hash", "");
    ckpt.finetuned = m.value("finetuned", false);
    if (m.contains("base_hash") && !m["base_hash"].is_null())
      ckpt.base_hash = m["base_hash"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad_header", std::string("checkpoint manifest: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw Error("bad_header", std::string("checkpoint manifest: ") + e.what());
  }

  std::size_t offset = eol + 2;
  const std::size_t need = sizeof(float) * static_cast<std::size_t>(ckpt.params.count());
  if (bytes.size() - offset < need)
    throw Error("truncated", "payload has " + std::to_string(bytes.size() - offset) +
                                 " bytes, expected " + std::to_string(need));
  if (bytes.size() - offset > need) throw Error("bad_header", "payload longer than manifest");
  for (auto& e : ckpt.params.entries()) {
    const std::size_t n = sizeof(float) * static_cast<std::size_t>(e.tensor.numel());
    std::memcpy(e.tensor.data(), bytes.data() + offset, n);
    offset += n;
  }
  if (!declared_hash.empty() && declared_hash != ckpt.hash())
    throw Error("bad_header", "parameter hash does not match manifest");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

template <typename Scalar>
void assign_parameters(ParameterSet<Scalar>& dst, const ParameterSet<float>& src) {
  if (dst.size() != src.size())
    throw Error("checkpoint_mismatch", "checkpoint has " + std::to_string(src.size()) +
                                           " tensors, model expects " +
                                           std::to_string(dst.size()));
  for (auto& e : dst.entries()) {
    if (!src.contains(e.name)) throw Error("checkpoint_mismatch", "missing tensor " + e.name);
    const auto& s = src.get(e.name);
    if (s.shape() != e.tensor.shape())
      throw Error("checkpoint_mismatch", e.name + " has shape " + shape_str(s.shape()) +
                                             ", model expects " + shape_str(e.tensor.shape()));
    for (Index i = 0; i < s.numel(); ++i) e.tensor[i] = static_cast<Scalar>(s[i]);
  }
}

template <typename Scalar>
ParameterSet<float> export_parameters(const ParameterSet<Scalar>& src) {
  ParameterSet<float> out;
  for (const auto& e : src.entries()) {
    auto& t = out.add(e.name, e.tensor.shape());
    for (Index i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(e.tensor[i]);
  }
  return out;
}

template void assign_parameters(ParameterSet<float>&, const ParameterSet<float>&);
template void assign_parameters(ParameterSet<double>&, const ParameterSet<float>&);
template ParameterSet<float> export_parameters(const ParameterSet<float>&);
template ParameterSet<float> export_parameters(const ParameterSet<double>&);

}  // namespace pam
