#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "capauth/result.hpp"

namespace capauth::statuslist {

// Revocation bitstring: bit i is the revocation state of the credential
// with revocationListIndex i. Bit order is little-endian within bytes.
class Bitstring {
public:
    explicit Bitstring(size_t capacity_bits)
        : capacity_(capacity_bits), bytes_((capacity_bits + 7) / 8, 0) {}

    Bitstring(std::vector<uint8_t> bytes, size_t capacity_bits)
        : capacity_(capacity_bits), bytes_(std::move(bytes)) {}

    size_t capacity() const { return capacity_; }

    bool test(size_t index) const {
        if (index >= capacity_) return false;
        return (bytes_[index >> 3] >> (index & 7)) & 1;
    }

    void set(size_t index) {
        if (index >= capacity_) return;
        bytes_[index >> 3] |= static_cast<uint8_t>(1u << (index & 7));
    }

    size_t popcount() const;

    const std::vector<uint8_t>& bytes() const { return bytes_; }

private:
    size_t capacity_;
    std::vector<uint8_t> bytes_;
};

// Deflate-compress then base64url-encode the raw bitstring bytes (the
// all-zero common case compresses to a few dozen bytes).
std::string encode_compressed(const Bitstring& bits);

// Inverse of encode_compressed; fails on bad base64url, bad compressed
// data, or a decompressed size that disagrees with the stated capacity.
Result<Bitstring, std::string> decode_compressed(const std::string& encoded,
                                                 size_t capacity_bits);

}  // namespace capauth::statuslist
