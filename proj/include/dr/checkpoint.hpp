#ifndef DR_CHECKPOINT_HPP
#define DR_CHECKPOINT_HPP

#include <string>

#include "dr/model.hpp"

namespace dr {

// Checkpoint layout, little-endian throughout:
//   magic "DRCK" | version u32 | tensor count u32
//   per tensor: name_len u16 | name bytes | rank u8 | dims u32[rank]
//               | dtype u8 (0 = f32) | data offset u64 (absolute)
//   payload: contiguous f32 data in directory order
//   footer: crc32 u32 over the payload bytes
// The model architecture rides along as a synthetic "meta.arch" tensor so a
// checkpoint is self-describing.

void checkpoint_save(const denoiser& den, const std::string& path);
denoiser checkpoint_load(const std::string& path);

uint32_t crc32_bytes(const void* data, size_t len);

// fnv64 of the raw file contents; recorded in run metadata.
uint64_t file_hash(const std::string& path);

}  // namespace dr

#endif
