#include "kdadapt/hash.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include <openssl/evp.h>

#include "kdadapt/error.hpp"

namespace kdadapt {

namespace {
EVP_MD_CTX *as_ctx(void *p) { return static_cast<EVP_MD_CTX *>(p); }
} // namespace

ContentHash::ContentHash() : ctx_(EVP_MD_CTX_new()) {
    if (ctx_ == nullptr || EVP_DigestInit_ex(as_ctx(ctx_), EVP_sha256(), nullptr) != 1)
        fail(ErrorCategory::io, "cannot initialise SHA-256 context");
}

ContentHash::~ContentHash() { EVP_MD_CTX_free(as_ctx(ctx_)); }

ContentHash &ContentHash::update(std::string_view bytes) {
    EVP_DigestUpdate(as_ctx(ctx_), bytes.data(), bytes.size());
    return *this;
}

ContentHash &ContentHash::update(std::span<const std::uint8_t> bytes) {
    EVP_DigestUpdate(as_ctx(ctx_), bytes.data(), bytes.size());
    return *this;
}

ContentHash &ContentHash::field(std::string_view bytes) {
    field(static_cast<std::uint64_t>(bytes.size()));
    return update(bytes);
}

ContentHash &ContentHash::field(std::uint64_t value) {
    std::array<std::uint8_t, 8> le{};
    for (int i = 0; i < 8; ++i)
        le[i] = static_cast<std::uint8_t>(value >> (8 * i));
    return update(std::span<const std::uint8_t>(le));
}

ContentHash &ContentHash::field(double value) { return field(std::bit_cast<std::uint64_t>(value)); }

std::string ContentHash::hex() {
    if (finished_)
        fail(ErrorCategory::validation, "digest already finalised");
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(as_ctx(ctx_), digest.data(), &len);
    finished_ = true;
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(kHex[digest[i] >> 4]);
        out.push_back(kHex[digest[i] & 0xf]);
    }
    return out;
}

std::string sha256_hex(std::string_view bytes) { return ContentHash().update(bytes).hex(); }

std::string sha256_file(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorCategory::io, "cannot open " + path);
    ContentHash hash;
    std::array<char, 1 << 16> buffer{};
    while (in) {
        in.read(buffer.data(), buffer.size());
        hash.update(std::string_view(buffer.data(), static_cast<std::size_t>(in.gcount())));
    }
    return hash.hex();
}

} // namespace kdadapt
