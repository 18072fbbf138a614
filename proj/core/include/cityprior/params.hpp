#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace cityprior {

// View into one learnable tensor (or its gradient). Blocks are collected in
// a fixed order so parameter and gradient collections line up index-for-index
// and checkpoints are written deterministically.
struct NamedBlock {
  std::string name;
  std::vector<std::size_t> shape;
  double* data = nullptr;
  std::size_t size = 0;
};

std::size_t total_size(const std::vector<NamedBlock>& blocks);
void zero_blocks(std::vector<NamedBlock>& blocks);
// dst += src, blockwise; layouts must match.
void add_blocks(std::vector<NamedBlock>& dst, const std::vector<NamedBlock>& src);
double global_norm(const std::vector<NamedBlock>& blocks);
void scale_blocks(std::vector<NamedBlock>& blocks, double s);

// Checkpoint container: little-endian binary with magic "CPCK", version u32,
// a JSON config header, then named float32 tensors.
struct CheckpointTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> data;
};

void write_checkpoint(const std::string& path, const std::string& header_json,
                      const std::vector<NamedBlock>& blocks);

struct Checkpoint {
  std::string header_json;
  std::vector<CheckpointTensor> tensors;
};
Checkpoint read_checkpoint(const std::string& path);

// Copies tensors into matching blocks by name; throws on missing tensors or
// shape mismatches.
void load_into_blocks(const Checkpoint& ckpt, std::vector<NamedBlock>& blocks);

}  // namespace cityprior
