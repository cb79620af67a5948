#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cloze/autodiff.hpp"

namespace cloze {

// Named-array container: "CORF", u32 version, u32 array count, then per
// array: u32 name length, UTF-8 name, u8 tag, u32 rank, u64 extents, payload.
// All integers and IEEE-754 payloads are little-endian.

enum class ArrayTag : std::uint8_t { f64 = 0, f32 = 1, text = 2 };

struct NamedArray {
  std::string name;
  ArrayTag tag = ArrayTag::f64;
  Tensor value;      // f64 / f32
  std::string text;  // text
};

constexpr std::uint32_t kContainerVersion = 1;

/// Written to a temporary file and renamed into place.
void write_arrays(const std::string& path, const std::vector<NamedArray>& arrays);
std::vector<NamedArray> read_arrays(const std::string& path);

/// Replaces `path` atomically with `contents`.
void write_file_atomic(const std::string& path, const std::string& contents);
std::string read_file(const std::string& path);

struct Checkpoint {
  std::string fingerprint;
  std::string vocabulary;  // serialized, may be empty
  std::uint64_t step = 0;
  std::vector<NamedArray> parameters;
  std::vector<NamedArray> moments;  // "m.<name>" / "v.<name>"

  const NamedArray* find(const std::string& name) const;
  void save(const std::string& path, ArrayTag precision = ArrayTag::f64) const;
  static Checkpoint load(const std::string& path);
};

Checkpoint capture(const ParameterStore& store, const std::string& fingerprint);
/// Copies values into `store`; every parameter must be present with its shape.
void restore(ParameterStore& store, const Checkpoint& ckpt, const std::string& fingerprint);

/// Elementwise mean of parameters; optimizer moments are dropped.
Checkpoint average_checkpoints(const std::vector<Checkpoint>& checkpoints);
Checkpoint average_checkpoints(const std::vector<std::string>& paths);

}  // namespace cloze
