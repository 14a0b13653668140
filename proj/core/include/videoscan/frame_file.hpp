#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "videoscan/carrier_memory.hpp"
#include "videoscan/config.hpp"

namespace videoscan {

// Binary frame-embedding file:
//   "VSCN" | u32 version | u32 T | u32 N | u32 d | T*N*d little-endian f32
inline constexpr std::uint32_t kFrameFileVersion = 1;

void save_frames(const std::vector<FrameTokens>& frames, std::ostream& out);
void save_frames(const std::vector<FrameTokens>& frames, const std::filesystem::path& path);

// Frames come back indexed 0..T-1. When `expect` is given, N and d must
// match its tokens_per_frame and model_dim (Error kConfig otherwise).
std::vector<FrameTokens> load_frames(std::istream& in, const ModelConfig* expect = nullptr);
std::vector<FrameTokens> load_frames(const std::filesystem::path& path,
                                     const ModelConfig* expect = nullptr);

}  // namespace videoscan
