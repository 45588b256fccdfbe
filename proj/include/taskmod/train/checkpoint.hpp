// SPDX-License-Identifier: Apache-2.0
//
// Parameter checkpoints: a little-endian binary file with one record per
// parameter in id order, plus a JSON sidecar listing ids, shapes, owners and
// roles for inspection.
//
//   magic "MTCK1\0\0\0", u32 version, u32 count, then per record:
//   u32 id length, id bytes, u8 owner kind, i32 owner task, u8 role,
//   u32 rank, rank x i64 dims, size x f64 values.

#pragma once

#include <filesystem>

#include "taskmod/network/parameter_store.hpp"

namespace taskmod {

// Writes `path` and `path` + ".json". Throws IoError.
void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store);
// Throws IoError or FormatError (bad magic, version, truncation, trailing
// bytes, unknown enum values).
ParameterStore load_checkpoint(const std::filesystem::path& path);

// Throws IncompatibleError unless both stores have the same ids, shapes,
// owners and roles.
void require_same_layout(const ParameterStore& expected, const ParameterStore& actual);

}  // namespace taskmod
