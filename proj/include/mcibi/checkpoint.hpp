#ifndef MCIBI_CHECKPOINT_HPP_
#define MCIBI_CHECKPOINT_HPP_

#include <string>

#include "mcibi/memory_bank.hpp"
#include "mcibi/nn.hpp"

namespace mcibi {

// Versioned binary container: model parameters, optimizer velocity, the
// memory bank, the iteration counter and the config hash. Save/load/save
// round-trips byte-identically.
struct CheckpointMeta {
  uint64_t config_hash = 0;
  int iteration = 0;
};

void save_checkpoint(const std::string& path, const nn::ParamRegistry& params,
                     const nn::SgdOptimizer& opt, const MemoryBank& bank,
                     const CheckpointMeta& meta);

// Loads into existing params (names and shapes must match) and replaces the
// bank and optimizer buffers.
CheckpointMeta load_checkpoint(const std::string& path, nn::ParamRegistry& params,
                               nn::SgdOptimizer& opt, MemoryBank& bank);

// Plain-text dump of the bank for the export-memory command.
std::string bank_to_text(const MemoryBank& bank);

}  // namespace mcibi

#endif  // MCIBI_CHECKPOINT_HPP_
