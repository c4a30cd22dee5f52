#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace kdadapt {

// Incremental SHA-256 used for artifact fingerprints and cache keys.
class ContentHash {
  public:
    ContentHash();
    ~ContentHash();
    ContentHash(const ContentHash &) = delete;
    ContentHash &operator=(const ContentHash &) = delete;

    ContentHash &update(std::string_view bytes);
    ContentHash &update(std::span<const std::uint8_t> bytes);
    // Length-prefixed field, so that ("ab","c") and ("a","bc") differ.
    ContentHash &field(std::string_view bytes);
    ContentHash &field(std::uint64_t value);
    ContentHash &field(double value);

    // Lowercase hex digest. The object cannot be updated afterwards.
    std::string hex();

  private:
    void *ctx_;
    bool finished_ = false;
};

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::string &path);

} // namespace kdadapt
