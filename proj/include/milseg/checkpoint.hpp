#ifndef MILSEG_CHECKPOINT_HPP
#define MILSEG_CHECKPOINT_HPP

#include "milseg/segnet.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace milseg {

/// Little-endian checkpoint layout:
///
///   "MILSEG01"
///   u32 class_count, u32 input_channels, f64 dropout_rate, u64 seed,
///   u32 layer_count, then per layer: u8 kind, u8 frozen, u8 head, u8 0,
///                                    u32 channels, u32 kernel
///   per conv layer in order: weights then bias as raw f64
///
/// Momentum buffers are not stored.
struct Checkpoint {
  NetworkSpec spec;
  NetworkParams params;
};

std::vector<unsigned char> encode_checkpoint(const NetworkSpec& spec, const NetworkParams& params);
Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes);

void save_checkpoint(const std::filesystem::path& path, const NetworkSpec& spec, const NetworkParams& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace milseg

#endif  // MILSEG_CHECKPOINT_HPP
