#include "mkat/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mkat {

namespace {

constexpr char kMagic[4] = {'M', 'K', 'A', 'T'};

void put_u16(std::ostream& out, uint16_t v) {
  const char bytes[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  out.write(bytes, 2);
}

void put_u64(std::ostream& out, uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(bytes, 8);
}

uint64_t get_u64(std::istream& in, const std::string& context) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8))
    fail(ErrorKind::io_error, context + ": truncated file");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes[i]) << (8 * i);
  return v;
}

void write_header(std::ostream& out, uint8_t dtype, const std::vector<uint64_t>& dims) {
  out.write(kMagic, 4);
  put_u16(out, kTensorFormatVersion);
  out.put(static_cast<char>(dtype));
  out.put(static_cast<char>(dims.size()));
  for (uint64_t d : dims) put_u64(out, d);
}

}  // namespace

void write_record(std::ostream& out, const Mat& values) {
  write_header(out, kDtypeF64,
               {static_cast<uint64_t>(values.rows), static_cast<uint64_t>(values.cols)});
  for (double v : values.data) put_u64(out, std::bit_cast<uint64_t>(v));
}

void write_record(std::ostream& out, const std::vector<int64_t>& values) {
  write_header(out, kDtypeI64, {static_cast<uint64_t>(values.size())});
  for (int64_t v : values) put_u64(out, std::bit_cast<uint64_t>(v));
}

TensorRecord read_record(std::istream& in, const std::string& context) {
  char magic[4];
  if (!in.read(magic, 4)) fail(ErrorKind::io_error, context + ": truncated file");
  if (std::memcmp(magic, kMagic, 4) != 0)
    fail(ErrorKind::io_error, context + ": bad magic (not a tensor container)");
  unsigned char vb[2];
  if (!in.read(reinterpret_cast<char*>(vb), 2))
    fail(ErrorKind::io_error, context + ": truncated file");
  const uint16_t version = static_cast<uint16_t>(vb[0]) | (static_cast<uint16_t>(vb[1]) << 8);
  if (version != kTensorFormatVersion)
    fail(ErrorKind::io_error,
         context + ": unsupported format version " + std::to_string(version));
  const int dtype = in.get();
  const int rank = in.get();
  if (dtype == EOF || rank == EOF) fail(ErrorKind::io_error, context + ": truncated file");
  if (dtype != kDtypeF64 && dtype != kDtypeI64)
    fail(ErrorKind::io_error, context + ": unknown dtype code " + std::to_string(dtype));
  if (rank < 1 || rank > 2)
    fail(ErrorKind::io_error, context + ": unsupported rank " + std::to_string(rank));

  TensorRecord rec;
  rec.dtype = static_cast<uint8_t>(dtype);
  uint64_t count = 1;
  for (int i = 0; i < rank; ++i) {
    const uint64_t d = get_u64(in, context);
    if (d == 0 || d > (1u << 30)) fail(ErrorKind::io_error, context + ": implausible dimension");
    rec.dims.push_back(d);
    count *= d;
  }
  if (count > (1u << 30)) fail(ErrorKind::io_error, context + ": implausible element count");
  if (rec.dtype == kDtypeF64) {
    rec.f64.reserve(count);
    for (uint64_t i = 0; i < count; ++i)
      rec.f64.push_back(std::bit_cast<double>(get_u64(in, context)));
  } else {
    rec.i64.reserve(count);
    for (uint64_t i = 0; i < count; ++i)
      rec.i64.push_back(std::bit_cast<int64_t>(get_u64(in, context)));
  }
  return rec;
}

Mat record_to_mat(const TensorRecord& rec, const std::string& context) {
  if (rec.dtype != kDtypeF64 || rec.dims.size() != 2)
    fail(ErrorKind::io_error, context + ": expected a rank-2 f64 record");
  return Mat(static_cast<int>(rec.dims[0]), static_cast<int>(rec.dims[1]), rec.f64);
}

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io_error, "cannot open " + path + " for writing");
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io_error, "cannot open " + path);
  return in;
}

std::vector<int64_t> labels_to_i64(const std::vector<int>& labels) {
  return std::vector<int64_t>(labels.begin(), labels.end());
}

std::vector<int> labels_from_record(const TensorRecord& rec, const std::string& context) {
  if (rec.dtype != kDtypeI64 || rec.dims.size() != 1)
    fail(ErrorKind::io_error, context + ": expected a rank-1 i64 label record");
  return std::vector<int>(rec.i64.begin(), rec.i64.end());
}

}  // namespace

void save_mat(const std::string& path, const Mat& values) {
  auto out = open_out(path);
  write_record(out, values);
  if (!out.good()) fail(ErrorKind::io_error, "short write to " + path);
}

Mat load_mat(const std::string& path) {
  auto in = open_in(path);
  return record_to_mat(read_record(in, path), path);
}

void save_dataset(const std::string& path, const Dataset& data) {
  auto out = open_out(path);
  write_record(out, data.inputs);
  write_record(out, labels_to_i64(data.labels));
  write_record(out, std::vector<int64_t>{data.num_classes, static_cast<int64_t>(data.seed)});
  if (!out.good()) fail(ErrorKind::io_error, "short write to " + path);
}

Dataset load_dataset(const std::string& path) {
  auto in = open_in(path);
  Dataset data;
  data.inputs = record_to_mat(read_record(in, path), path);
  data.labels = labels_from_record(read_record(in, path), path);
  const TensorRecord meta = read_record(in, path);
  if (meta.dtype != kDtypeI64 || meta.i64.size() != 2)
    fail(ErrorKind::io_error, path + ": malformed dataset meta record");
  data.num_classes = static_cast<int>(meta.i64[0]);
  data.seed = static_cast<uint64_t>(meta.i64[1]);
  data.validate();
  return data;
}

void save_params(const std::string& path, const ModelParams& params) {
  auto out = open_out(path);
  const Dims& d = params.dims;
  write_record(out, std::vector<int64_t>{d.input_dim, d.embed_dim, d.hidden_dim, d.classes,
                                         d.encoder_depth});
  for (const Mat* block : blocks(params)) write_record(out, *block);
  if (!out.good()) fail(ErrorKind::io_error, "short write to " + path);
}

ModelParams load_params(const std::string& path) {
  auto in = open_in(path);
  const TensorRecord dims_rec = read_record(in, path);
  if (dims_rec.dtype != kDtypeI64 || dims_rec.i64.size() != 5)
    fail(ErrorKind::io_error, path + ": malformed checkpoint dims record");
  Dims dims;
  dims.input_dim = static_cast<int>(dims_rec.i64[0]);
  dims.embed_dim = static_cast<int>(dims_rec.i64[1]);
  dims.hidden_dim = static_cast<int>(dims_rec.i64[2]);
  dims.classes = static_cast<int>(dims_rec.i64[3]);
  dims.encoder_depth = static_cast<int>(dims_rec.i64[4]);

  // Template with the right shapes; then overwrite every block, checking that
  // the stored tensors agree with the dims record.
  ModelParams params = init_params(dims, /*seed=*/0);
  for (Mat* block : blocks(params)) {
    const Mat stored = record_to_mat(read_record(in, path), path);
    if (stored.rows != block->rows || stored.cols != block->cols)
      fail(ErrorKind::io_error, path + ": checkpoint tensor is " + std::to_string(stored.rows) +
                                    "x" + std::to_string(stored.cols) + ", dims record implies " +
                                    std::to_string(block->rows) + "x" +
                                    std::to_string(block->cols));
    *block = stored;
  }
  return params;
}

void save_logit_table(const std::string& path, const LogitTable& table) {
  auto out = open_out(path);
  write_record(out, table.logits);
  write_record(out, labels_to_i64(table.labels));
  write_record(out, std::vector<int64_t>{table.target_classes});
  if (!out.good()) fail(ErrorKind::io_error, "short write to " + path);
}

LogitTable load_logit_table(const std::string& path) {
  auto in = open_in(path);
  LogitTable table;
  table.logits = record_to_mat(read_record(in, path), path);
  table.labels = labels_from_record(read_record(in, path), path);
  const TensorRecord meta = read_record(in, path);
  if (meta.dtype != kDtypeI64 || meta.i64.size() != 1)
    fail(ErrorKind::io_error, path + ": malformed logit table meta record");
  table.target_classes = static_cast<int>(meta.i64[0]);
  table.validate();
  return table;
}

std::string read_text_file(const std::string& path) {
  auto in = open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& contents) {
  auto out = open_out(path);
  out << contents;
  if (!out.good()) fail(ErrorKind::io_error, "short write to " + path);
}

}  // namespace mkat
