#pragma once

#include <string>

#include "hbmcn/model.hpp"

namespace hbmcn {

/// Checkpoint file: "HBMC" magic, u32 LE version, u64 LE manifest length,
/// JSON manifest {config, tensors:[{name,shape,offset}]}, then raw f32 LE
/// blobs at the listed offsets (relative to the blob section). The tensor
/// list covers parameters, batch-norm running statistics, and one
/// "momentum/<param>" entry per parameter, in registration order.
void save_checkpoint(const Model<float>& model, const std::string& path);

/// Rebuilds the model from the embedded config and fills every tensor by
/// name. Throws on bad magic, unknown version, truncated data, or any
/// mismatch between the file's name/shape set and the rebuilt model's.
Model<float> load_checkpoint(const std::string& path);

}  // namespace hbmcn
