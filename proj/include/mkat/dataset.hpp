#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mkat/mat.hpp"

namespace mkat {

// Labeled example table for one modality.
struct Dataset {
  Mat inputs;               // n x raw_dim
  std::vector<int> labels;  // in [0, num_classes)
  int num_classes{0};
  std::string modality;
  uint64_t seed{0};
  std::string provenance;  // generator knob settings

  int size() const { return inputs.rows; }
  int raw_dim() const { return inputs.cols; }
  void validate() const;
};

}  // namespace mkat
