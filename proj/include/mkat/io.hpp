#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mkat/dataset.hpp"
#include "mkat/discrepancy.hpp"
#include "mkat/mat.hpp"
#include "mkat/model.hpp"

namespace mkat {

// Tensor container: magic "MKAT", format version u16, dtype code u8
// (f64 = 1, i64 = 2), rank u8, dims as u64 little-endian, then the row-major
// payload little-endian. Files hold one or more records back to back;
// round-trips are bit-exact.
inline constexpr uint16_t kTensorFormatVersion = 1;
inline constexpr uint8_t kDtypeF64 = 1;
inline constexpr uint8_t kDtypeI64 = 2;

struct TensorRecord {
  uint8_t dtype{0};
  std::vector<uint64_t> dims;
  std::vector<double> f64;
  std::vector<int64_t> i64;
};

void write_record(std::ostream& out, const Mat& values);
void write_record(std::ostream& out, const std::vector<int64_t>& values);  // rank-1 i64
TensorRecord read_record(std::istream& in, const std::string& context);
Mat record_to_mat(const TensorRecord& rec, const std::string& context);

// Single-tensor file (feature dumps).
void save_mat(const std::string& path, const Mat& values);
Mat load_mat(const std::string& path);

// Dataset file: inputs (f64 rank 2), labels (i64 rank 1), meta (i64 rank 1:
// class count, generator seed).
void save_dataset(const std::string& path, const Dataset& data);
Dataset load_dataset(const std::string& path);

// Checkpoint file: dims record (i64 rank 1: input, embed, hidden, classes,
// depth) followed by every parameter tensor in blocks() order.
void save_params(const std::string& path, const ModelParams& params);
ModelParams load_params(const std::string& path);

// Logit table file: logits (f64 rank 2), labels (i64 rank 1), meta (i64
// rank 1: target class count).
void save_logit_table(const std::string& path, const LogitTable& table);
LogitTable load_logit_table(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& contents);

}  // namespace mkat
