#pragma once

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mixforge/mixer.hpp"
#include "mixforge/models.hpp"
#include "mixforge/tensor.hpp"

namespace mixforge {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Tensor blob: a single binary file holding named double tensors.
//   "MFTB" | u32 version | u32 count | per tensor (name, dims, raw doubles)
//   | u64 FNV-1a checksum over everything before it.
// Writes are atomic (temp file + rename). Layout is little-endian; the
// reproducibility contract is same-platform.
// ---------------------------------------------------------------------------

void save_tensor_blob(const std::string& path,
                      const std::vector<std::pair<std::string, const Tensor*>>& tensors);

// Throws CorruptFileError on truncation/checksum mismatch; never returns a
// partial result.
std::map<std::string, Tensor> load_tensor_blob(const std::string& path);

// ---------------------------------------------------------------------------
// Checkpoints: blob at `path`, JSON sidecar at `path` + ".json".
// ---------------------------------------------------------------------------

// Sidecar path for a checkpoint path.
std::string sidecar_path(const std::string& checkpoint_path);
Json read_sidecar(const std::string& checkpoint_path);
void write_json_atomic(const std::string& path, const Json& j);

// Classifier checkpoints. `extra` is merged into the sidecar (seed, epoch,
// metrics digest, ...). Loading rebuilds the architecture from the sidecar
// and validates every tensor name and shape against it.
void save_model_checkpoint(const std::string& path, ClassifierModel& model, const Json& extra);
std::unique_ptr<ClassifierModel> load_model_checkpoint(const std::string& path);

// Mixer checkpoints; the sidecar records k, alpha, strategy, architecture
// config, current tau, source dataset and teacher identifier.
void save_mixer_checkpoint(const std::string& path, MixingModule& mixer, const Json& extra);
std::unique_ptr<MixingModule> load_mixer_checkpoint(const std::string& path);

}  // namespace mixforge
