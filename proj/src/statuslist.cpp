#include "capauth/statuslist.hpp"

#include <zlib.h>

#include <bit>
#include <stdexcept>

#include "capauth/base64url.hpp"

namespace capauth::statuslist {

size_t Bitstring::popcount() const {
    size_t total = 0;
    for (uint8_t b : bytes_) total += static_cast<size_t>(std::popcount(b));
    return total;
}

std::string encode_compressed(const Bitstring& bits) {
    const auto& raw = bits.bytes();
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(),
                  static_cast<uLong>(raw.size()), Z_BEST_COMPRESSION) != Z_OK)
        throw std::runtime_error("deflate failed");
    compressed.resize(bound);
    return b64url::encode(compressed);
}

Result<Bitstring, std::string> decode_compressed(const std::string& encoded,
                                                 size_t capacity_bits) {
    auto compressed = b64url::decode(encoded);
    if (!compressed) return std::string("bad base64url in status list");
    size_t expected = (capacity_bits + 7) / 8;
    std::vector<uint8_t> raw(expected);
    uLongf out_len = static_cast<uLongf>(expected);
    int rc = uncompress(raw.data(), &out_len, compressed->data(),
                        static_cast<uLong>(compressed->size()));
    if (rc != Z_OK) return std::string("inflate failed");
    if (out_len != expected)
        return std::string("status list size does not match capacity");
    return Bitstring(std::move(raw), capacity_bits);
}

}  // namespace capauth::statuslist
