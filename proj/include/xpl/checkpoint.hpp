#pragma once

#include <filesystem>
#include <iosfwd>

#include "xpl/model.hpp"

namespace xpl {

// Text checkpoint of one model:
//   xpl-checkpoint 1
//   model <A|B>
//   hidden <w1,w2,...>
//   embed_dim <d>
//   init_seed <seed>
//   visual_dim <C_v>
//   audio_dim <C_a>
//   tensors <count>
//   tensor <name> <rank> <dim...>
//   <values, space separated, shortest round-trip decimal>
// Tensors appear in EncoderParams::tensors() order.
void write_checkpoint(std::ostream& os, const Model& m);
Model read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const Model& m);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace xpl
