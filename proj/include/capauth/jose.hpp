#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "capauth/result.hpp"

typedef struct evp_pkey_st EVP_PKEY;

namespace capauth::jose {

using json = nlohmann::json;

// The four signature algorithms the system supports. "EdDSA" always means
// Ed25519; Ed448 keys are rejected.
enum class SignatureAlgorithm { EdDSA, RS256, PS256, ES512 };

std::string to_string(SignatureAlgorithm alg);
std::optional<SignatureAlgorithm> parse_algorithm(std::string_view name);

enum class KeyError {
    UnsupportedAlgorithm,
    MalformedKey,
    MissingMember,
    CryptoFailure,
};
std::string to_string(KeyError err);

using EvpKeyHandle = std::shared_ptr<EVP_PKEY>;

// Verification-side key: a public JWK plus the parsed crypto handle.
class PublicKey {
public:
    static Result<PublicKey, KeyError> from_jwk(const json& jwk);

    const json& jwk() const { return jwk_; }
    EVP_PKEY* handle() const { return pkey_.get(); }
    // Key type as the JWK "kty" member (OKP, RSA, EC).
    const std::string& kty() const { return kty_; }

private:
    PublicKey(json jwk, std::string kty, EvpKeyHandle pkey)
        : jwk_(std::move(jwk)), kty_(std::move(kty)), pkey_(std::move(pkey)) {}

    json jwk_;
    std::string kty_;
    EvpKeyHandle pkey_;
};

class KeyPair {
public:
    static Result<KeyPair, KeyError> from_private_jwk(const json& jwk);

    SignatureAlgorithm algorithm() const { return alg_; }
    // Public members only; safe to publish in headers and cnf claims.
    const json& public_jwk() const { return public_jwk_; }
    // Includes the private members; for key files on disk.
    json private_jwk() const;
    EVP_PKEY* handle() const { return pkey_.get(); }

private:
    friend KeyPair generate_keypair(SignatureAlgorithm,
                                    std::optional<std::string_view>);
    KeyPair(SignatureAlgorithm alg, json public_jwk, EvpKeyHandle pkey)
        : alg_(alg), public_jwk_(std::move(public_jwk)), pkey_(std::move(pkey)) {}

    SignatureAlgorithm alg_;
    json public_jwk_;
    EvpKeyHandle pkey_;
};

// Generates a fresh keypair. A seed makes generation fully deterministic
// (test mode only; seeded keys must never be used in production).
// RS256/PS256 use 2048-bit RSA, ES512 uses curve P-521.
KeyPair generate_keypair(SignatureAlgorithm alg,
                         std::optional<std::string_view> seed = std::nullopt);

// Canonical key identifier: SHA-256 over the required JWK members in
// lexicographic order with no whitespace, rendered as 64 lowercase hex
// characters. Stable under member reordering and extra members.
Result<std::string, KeyError> thumbprint(const json& jwk);

struct SignedEnvelope {
    json header;
    json claims;
    std::vector<uint8_t> signature;
    // base64url(header).base64url(claims).base64url(signature), unpadded
    std::string compact;
};

// Signs header+claims into a compact JWS. Fills header["alg"] from the key
// when absent; throws std::invalid_argument when a present alg disagrees
// with the key or when header/claims are not JSON objects.
SignedEnvelope sign_envelope(json header, const json& claims, const KeyPair& key);

enum class VerifyError {
    MalformedCompact,
    MalformedBase64,
    MalformedJson,
    UnsupportedAlgorithm,
    SignatureMismatch,
};
std::string to_string(VerifyError err);

// Splits and decodes a compact JWS without checking the signature.
Result<SignedEnvelope, VerifyError> decode_envelope(std::string_view compact);

// Full verification: decode, require a supported header alg compatible with
// the key, and check the signature over the exact transmitted segments.
Result<SignedEnvelope, VerifyError> verify_envelope(std::string_view compact,
                                                    const PublicKey& key);
Result<SignedEnvelope, VerifyError> verify_envelope(std::string_view compact,
                                                    const json& public_jwk);

}  // namespace capauth::jose
