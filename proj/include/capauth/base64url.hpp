#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace capauth::b64url {

// Unpadded base64url (RFC 4648 section 5). Decoding rejects padding,
// whitespace and any character outside the alphabet.
std::string encode(std::span<const uint8_t> data);
std::string encode(std::string_view data);

std::optional<std::vector<uint8_t>> decode(std::string_view text);
std::optional<std::string> decode_string(std::string_view text);

}  // namespace capauth::b64url
