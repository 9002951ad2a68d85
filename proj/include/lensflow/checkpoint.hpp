#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "lensflow/flow_model.hpp"
#include "lensflow/lens_geometry.hpp"

namespace lensflow {

/// One trained torus: flow parameters plus the prior they were trained from.
struct Checkpoint {
  FlowTransform flow;
  PriorParams prior;
  Chart chart = Chart::one;
  int lens_p = 2;
  int lens_q = 1;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kCheckpointTensors = "tensors.bin";
inline constexpr const char* kCheckpointManifest = "manifest.json";
inline constexpr int kCheckpointFormat = 1;

/// Writes `dir`/tensors.bin (little-endian float64, column-major, named_tensors
/// order) and `dir`/manifest.json describing every tensor's layer, kind,
/// shape and offset. Creates `dir` if needed.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& checkpoint);

/// Inverse of save_checkpoint; bit-exact. Throws CheckpointError on a missing
/// file, a malformed manifest, or a size/shape mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace lensflow
