// sed/params.h

// Copyright 2026 The noisysed Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// Named parameter storage and the checkpoint file format.
//
// Checkpoint layout (all integers and floats little-endian):
//
//   bytes  "SEDCKPT1"
//   u32    metadata length, then that many bytes of UTF-8 text
//   u32    entry count
//   per entry, in insertion order:
//     u8   kind (0 = learnable parameter, 1 = buffer)
//     u32  path length, then the path bytes (e.g. "stem.0.conv.weight")
//     u32  rank
//     u64  extent of each axis
//     f64  values in row-major order

#pragma once

#include <deque>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sed/autograd.h"

namespace sed {

class ParamStore {
 public:
  struct Param {
    std::string path;
    ad::Var var;
  };
  struct Buffer {
    std::string path;
    Tensor value;
  };

  ad::Var& add_param(const std::string& path, Tensor init);
  Tensor& add_buffer(const std::string& path, Tensor init);

  ad::Var& param(const std::string& path);
  const ad::Var& param(const std::string& path) const;
  Tensor& buffer(const std::string& path);
  const Tensor& buffer(const std::string& path) const;
  bool has_param(const std::string& path) const;

  std::deque<Param>& params() { return params_; }
  const std::deque<Param>& params() const { return params_; }
  std::deque<Buffer>& buffers() { return buffers_; }
  const std::deque<Buffer>& buffers() const { return buffers_; }

  std::vector<ad::Var> leaves() const;
  std::size_t num_values() const;
  void zero_grad();

  /// Deep copy with fresh, independent leaves.
  ParamStore clone() const;

  /// Overwrites values from `other`; both must have identical layouts.
  void copy_values_from(const ParamStore& other);

  /// Throws unless both stores hold the same paths with the same shapes.
  void require_same_layout(const ParamStore& other) const;

  bool values_equal(const ParamStore& other) const;

 private:
  std::deque<Param> params_;
  std::deque<Buffer> buffers_;
  std::map<std::string, std::size_t> param_index_;
  std::map<std::string, std::size_t> buffer_index_;
};

std::string encode_checkpoint(const ParamStore& store,
                              const std::string& metadata);

/// Decodes into a fresh store; `metadata` receives the header text.
ParamStore decode_checkpoint(std::string_view bytes, std::string& metadata,
                             const std::string& source = "checkpoint");

void save_checkpoint(const std::filesystem::path& path,
                     const ParamStore& store, const std::string& metadata);
ParamStore load_checkpoint(const std::filesystem::path& path,
                           std::string& metadata);

/// Loads values into an existing store with the same layout.
void load_checkpoint_into(const std::filesystem::path& path,
                          ParamStore& store);

}  // namespace sed
