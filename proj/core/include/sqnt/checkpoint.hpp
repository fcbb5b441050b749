#pragma once

// Binary tensor container ("SQNT" files) and network checkpoints.
//
// Layout, little-endian: magic "SQNT", u32 version, u64 architecture
// fingerprint, u32 record count, then per record: u32 name length, name,
// u8 dtype, u32 rank, i64 dims[rank], payload.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sqnt/network.hpp"
#include "sqnt/tensor.hpp"

namespace sqnt {

inline constexpr std::uint32_t kContainerVersion = 1;

enum class DType : std::uint8_t { f32 = 1, f64 = 2, i32 = 3 };

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Record {
  std::string name;
  DType dtype = DType::f64;
  Shape dims;
  std::vector<double> reals;         // f32 / f64
  std::vector<std::int32_t> ints;    // i32
};

class RecordFile {
 public:
  std::uint64_t fingerprint = 0;

  /// Stores `t`; with DType::f32 the values are rounded to single precision.
  void put(const std::string& name, const Tensor& t, DType dtype = DType::f64);
  void put_ints(const std::string& name, Shape dims, std::vector<std::int32_t> values);
  void put_scalar(const std::string& name, double v) { put(name, Tensor::scalar(v)); }
  /// Text stored as an i32 record of bytes.
  void put_text(const std::string& name, const std::string& text);
  std::string text(const std::string& name) const;

  bool contains(const std::string& name) const { return find(name) != nullptr; }
  const Record* find(const std::string& name) const;
  /// Throws FormatError when missing or of integer type.
  Tensor tensor(const std::string& name) const;
  std::vector<std::int32_t> ints(const std::string& name) const;
  double scalar(const std::string& name) const;
  const std::vector<Record>& records() const { return records_; }

  std::string serialize() const;
  static RecordFile deserialize(const std::string& bytes);
  /// Atomic write: temporary file in the same directory, then rename.
  void save(const std::string& path) const;
  static RecordFile load(const std::string& path);

 private:
  std::vector<Record> records_;
};

/// Writes `bytes` to `path` atomically.
void write_file_atomic(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);

struct CheckpointMeta {
  int bits_w = 32;
  int bits_a = 32;
  DType storage = DType::f64;
};

/// Architecture, parameters, quantizer scales, and (when bits_w < 32) the
/// quantized normalized kernels "<kernel>.wq".
RecordFile make_checkpoint(Network& net, const CheckpointMeta& meta);
void save_checkpoint(Network& net, const std::string& path, const CheckpointMeta& meta);

struct LoadedCheckpoint {
  Network net;
  CheckpointMeta meta;
  RecordFile file;
};

/// Rebuilds the network from the stored architecture.
LoadedCheckpoint load_checkpoint(const std::string& path);
LoadedCheckpoint load_checkpoint(const RecordFile& file);
/// Loads parameters into an existing network; refuses a fingerprint mismatch.
void load_parameters(Network& net, const RecordFile& file);

std::vector<BlockSpec> decode_architecture(const RecordFile& file);

}  // namespace sqnt
