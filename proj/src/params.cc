// src/params.cc

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

#include "sed/params.h"

#include "sed/io_util.h"

namespace sed {

namespace {

constexpr std::string_view kMagic = "SEDCKPT1";

void put_tensor(ByteWriter& w, std::uint8_t kind, const std::string& path,
                const Tensor& t) {
  w.put<std::uint8_t>(kind);
  w.put_string(path);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) w.put<std::uint64_t>(d);
  for (double v : t.values()) w.put<double>(v);
}

}  // namespace

ad::Var& ParamStore::add_param(const std::string& path, Tensor init) {
  if (param_index_.count(path) || buffer_index_.count(path)) {
    throw std::invalid_argument("duplicate parameter path " + path);
  }
  param_index_[path] = params_.size();
  params_.push_back({path, ad::Var::parameter(std::move(init))});
  return params_.back().var;
}

Tensor& ParamStore::add_buffer(const std::string& path, Tensor init) {
  if (param_index_.count(path) || buffer_index_.count(path)) {
    throw std::invalid_argument("duplicate buffer path " + path);
  }
  buffer_index_[path] = buffers_.size();
  buffers_.push_back({path, std::move(init)});
  return buffers_.back().value;
}

ad::Var& ParamStore::param(const std::string& path) {
  auto it = param_index_.find(path);
  if (it == param_index_.end()) {
    throw std::out_of_range("no parameter " + path);
  }
  return params_[it->second].var;
}

const ad::Var& ParamStore::param(const std::string& path) const {
  return const_cast<ParamStore*>(this)->param(path);
}

Tensor& ParamStore::buffer(const std::string& path) {
  auto it = buffer_index_.find(path);
  if (it == buffer_index_.end()) throw std::out_of_range("no buffer " + path);
  return buffers_[it->second].value;
}

const Tensor& ParamStore::buffer(const std::string& path) const {
  return const_cast<ParamStore*>(this)->buffer(path);
}

bool ParamStore::has_param(const std::string& path) const {
  return param_index_.count(path) != 0;
}

std::vector<ad::Var> ParamStore::leaves() const {
  std::vector<ad::Var> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.var);
  return out;
}

std::size_t ParamStore::num_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.var.value().size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& p : params_) out.add_param(p.path, p.var.value());
  for (const auto& b : buffers_) out.add_buffer(b.path, b.value);
  return out;
}

void ParamStore::require_same_layout(const ParamStore& other) const {
  auto fail = [](const std::string& what) {
    throw ShapeError("parameter layout mismatch: " + what);
  };
  if (params_.size() != other.params_.size() ||
      buffers_.size() != other.buffers_.size()) {
    fail("entry counts differ");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].path != other.params_[i].path ||
        params_[i].var.shape() != other.params_[i].var.shape()) {
      fail(params_[i].path);
    }
  }
  for (std::size_t i = 0; i < buffers_.size(); ++i) {
    if (buffers_[i].path != other.buffers_[i].path ||
        buffers_[i].value.shape() != other.buffers_[i].value.shape()) {
      fail(buffers_[i].path);
    }
  }
}

void ParamStore::copy_values_from(const ParamStore& other) {
  require_same_layout(other);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    params_[i].var.mutable_value() = other.params_[i].var.value();
  }
  for (std::size_t i = 0; i < buffers_.size(); ++i) {
    buffers_[i].value = other.buffers_[i].value;
  }
}

bool ParamStore::values_equal(const ParamStore& other) const {
  if (params_.size() != other.params_.size() ||
      buffers_.size() != other.buffers_.size()) {
    return false;
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].path != other.params_[i].path ||
        !(params_[i].var.value() == other.params_[i].var.value())) {
      return false;
    }
  }
  for (std::size_t i = 0; i < buffers_.size(); ++i) {
    if (buffers_[i].path != other.buffers_[i].path ||
        !(buffers_[i].value == other.buffers_[i].value)) {
      return false;
    }
  }
  return true;
}

std::string encode_checkpoint(const ParamStore& store,
                              const std::string& metadata) {
  ByteWriter w;
  w.put_bytes(kMagic);
  w.put_string(metadata);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(store.params().size() +
                                                  store.buffers().size()));
  for (const auto& p : store.params()) put_tensor(w, 0, p.path, p.var.value());
  for (const auto& b : store.buffers()) put_tensor(w, 1, b.path, b.value);
  return w.str();
}

ParamStore decode_checkpoint(std::string_view bytes, std::string& metadata,
                             const std::string& source) {
  ByteReader r(bytes, source);
  if (r.get_bytes(kMagic.size()) != kMagic) {
    throw IoError(source + ": not a checkpoint (bad magic)");
  }
  metadata = r.get_string();
  const auto count = r.get<std::uint32_t>();
  ParamStore store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto kind = r.get<std::uint8_t>();
    std::string path = r.get_string();
    const auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    std::vector<double> data(numel(shape));
    for (double& v : data) v = r.get<double>();
    Tensor t(std::move(shape), std::move(data));
    if (kind == 0) {
      store.add_param(path, std::move(t));
    } else if (kind == 1) {
      store.add_buffer(path, std::move(t));
    } else {
      throw IoError(source + ": unknown entry kind for " + path);
    }
  }
  if (!r.done()) throw IoError(source + ": trailing bytes");
  return store;
}

void save_checkpoint(const std::filesystem::path& path,
                     const ParamStore& store, const std::string& metadata) {
  write_file_atomic(path, encode_checkpoint(store, metadata));
}

ParamStore load_checkpoint(const std::filesystem::path& path,
                           std::string& metadata) {
  return decode_checkpoint(read_file(path), metadata, path.string());
}

void load_checkpoint_into(const std::filesystem::path& path,
                          ParamStore& store) {
  std::string meta;
  ParamStore loaded = load_checkpoint(path, meta);
  store.copy_values_from(loaded);
}

}  // namespace sed
