#pragma once

#include <stdexcept>
#include <string>

#include "eqvs/grad.hpp"

namespace eqvs {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Versioned tensor container: a text header listing names and shapes,
/// followed by the tensors as little-endian float32 in header order.
///
///   EQVS-CHECKPOINT 1
///   kind <kind>
///   digest <config digest>
///   meta <one-line json>
///   tensor <name> <rank> <d0> ...
///   end
struct Checkpoint {
  static constexpr int kVersion = 1;

  std::string kind;
  std::string digest;
  std::string meta = "{}";
  grad::ParamSet<float> params;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Byte image of save_checkpoint, used for digests and comparisons.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& bytes, const std::string& origin = "<memory>");

}  // namespace eqvs
