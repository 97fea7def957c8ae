#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace mkat {

// Per-step training metrics. Stage-1 rows carry the bi-level losses; plain
// finetuning rows carry the task loss. Absent quantities are NaN and
// serialize as empty CSV cells.
struct StepRow {
  int step{0};
  int stage{0};
  double inner_loss{0.0};
  double outer_loss{0.0};
  double outer_prime{0.0};
  double train_loss{0.0};
  double train_error{0.0};
};

// Per-checkpoint evaluation metrics.
struct CheckpointRow {
  std::string tag;
  double source_probe_error{0.0};
  double target_test_error{0.0};
  double db_index{0.0};
  double discrepancy{0.0};
};

// Append-only, schema-versioned run log; carries everything the reports
// aggregate (losses per step, probe/discrepancy per checkpoint).
struct RunRecord {
  static constexpr int kSchemaVersion = 1;

  std::string method;
  uint64_t seed{0};
  std::vector<std::string> notes;
  std::vector<StepRow> steps;
  std::vector<CheckpointRow> checkpoints;

  int count_stage(int stage) const;
};

// CSV serialization is canonical and byte-stable: the same record always
// produces the same bytes, and parsing its own output round-trips exactly.
void write_runrecord_csv(std::ostream& out, const RunRecord& record);
void write_runrecord_csv_file(const std::string& path, const RunRecord& record);
RunRecord read_runrecord_csv_file(const std::string& path);

// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace mkat
