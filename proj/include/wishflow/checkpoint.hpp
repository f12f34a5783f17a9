#pragma once

#include <string>

#include "wishflow/params.hpp"
#include "wishflow/train.hpp"

namespace wishflow::checkpoint {

// Checkpoint directory layout:
//   manifest.txt    '# iter N', '# adam ...' headers, then one line per
//                   array: name rows cols byte-offset trainable
//   params.bin      little-endian doubles, row-major, at manifest offsets
//   optimizer.bin   Adam first moments at the manifest offsets, second
//                   moments in the same order after them
//   config.snapshot free-form text
void save(const std::string &dir, const ParamStore &store, const train::AdamState *opt,
          long iter, const std::string &config_snapshot);

struct Loaded {
  long iter = 0;
  std::string config_snapshot;
};

// Restores parameter values (creating missing entries) and, when opt is
// non-null and optimizer.bin exists, the Adam accumulators.
Loaded load(const std::string &dir, ParamStore &store, train::AdamState *opt);

} // namespace wishflow::checkpoint
