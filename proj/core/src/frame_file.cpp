#include "videoscan/frame_file.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>
#include <string>

#include "videoscan/error.hpp"

namespace videoscan {

namespace {

constexpr std::array<char, 4> kMagic = {'V', 'S', 'C', 'N'};
constexpr std::size_t kHeaderBytes = 4 + 4 * 4;

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(const unsigned char* b) {
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

}  // namespace

void save_frames(const std::vector<FrameTokens>& frames, std::ostream& out) {
  std::uint32_t n = 0;
  std::uint32_t d = 0;
  if (!frames.empty()) {
    n = static_cast<std::uint32_t>(frames.front().embeddings.rows());
    d = static_cast<std::uint32_t>(frames.front().embeddings.cols());
  }
  for (const auto& f : frames) {
    if (f.embeddings.rows() != n || f.embeddings.cols() != d) {
      throw Error(ErrorCode::kShape, "all frames in a file must share N and d");
    }
  }
  out.write(kMagic.data(), kMagic.size());
  put_u32(out, kFrameFileVersion);
  put_u32(out, static_cast<std::uint32_t>(frames.size()));
  put_u32(out, n);
  put_u32(out, d);
  for (const auto& f : frames) {
    for (float x : f.embeddings.flat()) put_u32(out, std::bit_cast<std::uint32_t>(x));
  }
  if (!out) throw Error(ErrorCode::kFormat, "failed writing frame file");
}

void save_frames(const std::vector<FrameTokens>& frames, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kFormat, "cannot open " + path.string() + " for writing");
  save_frames(frames, out);
}

std::vector<FrameTokens> load_frames(std::istream& in, const ModelConfig* expect) {
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (bytes.size() < kHeaderBytes) {
    throw Error(ErrorCode::kLength, "frame file header needs " + std::to_string(kHeaderBytes) +
                                        " bytes, got " + std::to_string(bytes.size()));
  }
  if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw Error(ErrorCode::kFormat, "bad frame file magic");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t version = get_u32(p + 4);
  if (version != kFrameFileVersion) {
    throw Error(ErrorCode::kFormat, "unsupported frame file version " + std::to_string(version));
  }
  const std::size_t t = get_u32(p + 8);
  const std::size_t n = get_u32(p + 12);
  const std::size_t d = get_u32(p + 16);
  const std::size_t expected = kHeaderBytes + t * n * d * 4;
  if (bytes.size() != expected) {
    throw Error(ErrorCode::kLength, "frame file should be " + std::to_string(expected) +
                                        " bytes, got " + std::to_string(bytes.size()));
  }
  if (expect && t > 0 && (n != expect->tokens_per_frame || d != expect->model_dim)) {
    throw Error(ErrorCode::kConfig, "frame file has N=" + std::to_string(n) + ", d=" +
                                        std::to_string(d) + " but the model expects N=" +
                                        std::to_string(expect->tokens_per_frame) + ", d=" +
                                        std::to_string(expect->model_dim));
  }
  std::vector<FrameTokens> frames(t);
  const unsigned char* cur = p + kHeaderBytes;
  for (std::size_t i = 0; i < t; ++i) {
    frames[i].index = i;
    frames[i].embeddings = Matrix(n, d);
    for (float& x : frames[i].embeddings.flat()) {
      x = std::bit_cast<float>(get_u32(cur));
      cur += 4;
    }
  }
  return frames;
}

std::vector<FrameTokens> load_frames(const std::filesystem::path& path, const ModelConfig* expect) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kFormat, "cannot open " + path.string());
  return load_frames(in, expect);
}

}  // namespace videoscan
