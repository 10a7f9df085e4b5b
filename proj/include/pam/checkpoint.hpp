#pragma once

#include "pam/nn.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace pam {

enum class ModelKind { kBox2Mask, kPropMask };

std::string model_kind_name(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);

/// PAMCKPT1: "PAMCKPT1\n", one JSON manifest line, 0x00, then every
/// parameter as little-endian float32 in manifest order.
///
/// Manifest: {"model", "config", "params": [[name, shape], ...],
///            "hash", "finetuned", "base_hash"}.
struct Checkpoint {
  ModelKind kind = ModelKind::kBox2Mask;
  NetConfig config;
  ParameterSet<float> params;
  bool finetuned = false;
  std::optional<std::string> base_hash;  ///< hash of the checkpoint this was finetuned from

  /// Hex FNV-1a of names, shapes and values.
  std::string hash() const;
};

std::string hash_hex(std::uint64_t h);

std::string encode_checkpoint(const Checkpoint& ckpt);
/// Errors: bad_magic, truncated, bad_header.
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Copies values into `dst` by name. Errors (checkpoint_mismatch) when a name
/// is missing, extra, or shaped differently.
template <typename Scalar>
void assign_parameters(ParameterSet<Scalar>& dst, const ParameterSet<float>& src);

template <typename Scalar>
ParameterSet<float> export_parameters(const ParameterSet<Scalar>& src);

}  // namespace pam
