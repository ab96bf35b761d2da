// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "dlab/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>

#include "dlab/error.hpp"

namespace dlab {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n)
      fail(ErrorCode::kTruncated, std::string("checkpoint truncated while reading ") + what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint64_t uint(std::size_t width, const char* what) {
    auto s = take(width, what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < width; ++i) v |= std::uint64_t{s[i]} << (8 * i);
    return v;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::uint8_t> encode_container(const Container& c) {
  std::vector<std::uint8_t> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  put_u32(out, c.class_count);
  put_u32(out, static_cast<std::uint32_t>(c.descriptor.size()));
  out.insert(out.end(), c.descriptor.begin(), c.descriptor.end());
  put_u64(out, c.payload.size());
  const std::size_t payload_start = out.size();
  for (double v : c.payload) put_u64(out, std::bit_cast<std::uint64_t>(v));
  const std::uint64_t sum =
      fnv1a64(std::span<const std::uint8_t>(out).subspan(payload_start, c.payload.size() * 8));
  put_u64(out, sum);
  return out;
}

Container decode_container(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (bytes.size() < kCheckpointMagic.size()) fail(ErrorCode::kTruncated, "checkpoint shorter than its magic");
  auto magic = r.take(kCheckpointMagic.size(), "magic");
  if (!std::equal(magic.begin(), magic.end(), kCheckpointMagic.begin()))
    fail(ErrorCode::kMagic, "not a dlab checkpoint (bad magic)");

  Container c;
  c.class_count = static_cast<std::uint32_t>(r.uint(4, "class count"));
  const auto desc_len = static_cast<std::size_t>(r.uint(4, "descriptor length"));
  auto desc = r.take(desc_len, "descriptor");
  c.descriptor.assign(desc.begin(), desc.end());
  const std::uint64_t count = r.uint(8, "value count");
  if (count > r.remaining() / 8) fail(ErrorCode::kTruncated, "checkpoint truncated in payload");
  auto payload = r.take(static_cast<std::size_t>(count) * 8, "payload");
  const std::uint64_t stored = r.uint(8, "checksum");
  if (r.remaining() != 0) fail(ErrorCode::kValidation, "trailing bytes after checkpoint checksum");
  if (fnv1a64(payload) != stored) fail(ErrorCode::kChecksum, "checkpoint payload checksum mismatch");

  c.payload.resize(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < c.payload.size(); ++i) {
    std::uint64_t bits = 0;
    for (std::size_t b = 0; b < 8; ++b) bits |= std::uint64_t{payload[i * 8 + b]} << (8 * b);
    c.payload[i] = std::bit_cast<double>(bits);
    if (!std::isfinite(c.payload[i])) fail(ErrorCode::kValidation, "checkpoint holds a non-finite value");
  }
  return c;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::kIo, "cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::kIo, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::kIo, "cannot move " + tmp.string() + " into place: " + ec.message());
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kNotFound, "missing file: " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_container(const std::filesystem::path& path, const Container& c) {
  const auto bytes = encode_container(c);
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

Container read_container(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_container(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

}  // namespace dlab
