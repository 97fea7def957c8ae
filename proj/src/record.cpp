#include "mkat/record.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "mkat/error.hpp"

namespace mkat {

int RunRecord::count_stage(int stage) const {
  int n = 0;
  for (const auto& row : steps)
    if (row.stage == stage) ++n;
  return n;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

constexpr const char* kHeader =
    "kind,step,stage,inner_loss,outer_loss,outer_prime,train_loss,train_error,"
    "tag,source_probe_error,target_test_error,db_index,discrepancy";

double parse_cell(const std::string& cell) {
  if (cell.empty()) return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
    fail(ErrorKind::io_error, "runrecord: bad numeric cell '" + cell + "'");
  return v;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

}  // namespace

void write_runrecord_csv(std::ostream& out, const RunRecord& record) {
  out << "# mkat-runrecord schema=" << RunRecord::kSchemaVersion << " method=" << record.method
      << " seed=" << record.seed << "\n";
  for (const auto& note : record.notes) out << "# note: " << note << "\n";
  out << kHeader << "\n";
  for (const auto& row : record.steps) {
    out << "step," << row.step << ',' << row.stage << ',' << format_double(row.inner_loss) << ','
        << format_double(row.outer_loss) << ',' << format_double(row.outer_prime) << ','
        << format_double(row.train_loss) << ',' << format_double(row.train_error) << ",,,,,\n";
  }
  for (const auto& row : record.checkpoints) {
    out << "checkpoint,,,,,,,," << row.tag << ',' << format_double(row.source_probe_error) << ','
        << format_double(row.target_test_error) << ',' << format_double(row.db_index) << ','
        << format_double(row.discrepancy) << "\n";
  }
}

void write_runrecord_csv_file(const std::string& path, const RunRecord& record) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io_error, "cannot open " + path + " for writing");
  write_runrecord_csv(out, record);
  if (!out.good()) fail(ErrorKind::io_error, "short write to " + path);
}

RunRecord read_runrecord_csv_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io_error, "cannot open " + path);
  RunRecord record;
  std::string line;
  bool saw_schema = false;
  bool saw_header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.front() == '#') {
      std::istringstream meta(line.substr(1));
      std::string token;
      while (meta >> token) {
        if (token.rfind("schema=", 0) == 0) {
          const int version = std::stoi(token.substr(7));
          if (version != RunRecord::kSchemaVersion)
            fail(ErrorKind::io_error, "runrecord: schema version " + std::to_string(version) +
                                          " does not match expected " +
                                          std::to_string(RunRecord::kSchemaVersion));
          saw_schema = true;
        } else if (token.rfind("method=", 0) == 0) {
          record.method = token.substr(7);
        } else if (token.rfind("seed=", 0) == 0) {
          record.seed = std::stoull(token.substr(5));
        } else if (token == "note:") {
          std::string rest;
          std::getline(meta, rest);
          if (!rest.empty() && rest.front() == ' ') rest.erase(0, 1);
          record.notes.push_back(rest);
        }
      }
      continue;
    }
    if (!saw_header) {
      if (line != kHeader) fail(ErrorKind::io_error, "runrecord: unexpected header in " + path);
      saw_header = true;
      continue;
    }
    const auto cells = split_csv(line);
    if (cells.size() != 13) fail(ErrorKind::io_error, "runrecord: malformed row in " + path);
    if (cells[0] == "step") {
      StepRow row;
      row.step = static_cast<int>(parse_cell(cells[1]));
      row.stage = static_cast<int>(parse_cell(cells[2]));
      row.inner_loss = parse_cell(cells[3]);
      row.outer_loss = parse_cell(cells[4]);
      row.outer_prime = parse_cell(cells[5]);
      row.train_loss = parse_cell(cells[6]);
      row.train_error = parse_cell(cells[7]);
      record.steps.push_back(row);
    } else if (cells[0] == "checkpoint") {
      CheckpointRow row;
      row.tag = cells[8];
      row.source_probe_error = parse_cell(cells[9]);
      row.target_test_error = parse_cell(cells[10]);
      row.db_index = parse_cell(cells[11]);
      row.discrepancy = parse_cell(cells[12]);
      record.checkpoints.push_back(row);
    } else {
      fail(ErrorKind::io_error, "runrecord: unknown row kind '" + cells[0] + "'");
    }
  }
  if (!saw_schema) fail(ErrorKind::io_error, "runrecord: missing schema line in " + path);
  return record;
}

}  // namespace mkat
