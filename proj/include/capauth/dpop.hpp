#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <string_view>

#include <json.hpp>

#include "capauth/jose.hpp"
#include "capauth/result.hpp"

namespace capauth::dpop {

using json = nlohmann::json;

// Acceptance window for the proof's iat, in seconds around the verifier's
// clock. The past bound tolerates clock skew across operators; the small
// future allowance tolerates skewed issuers.
struct FreshnessWindow {
    int64_t past = 300;
    int64_t future = 30;
};

// Tracks seen jti values until they age out of the freshness window.
// check_and_insert is atomic: two concurrent presentations of the same jti
// cannot both succeed.
class ReplayCache {
public:
    explicit ReplayCache(size_t capacity = 100000) : capacity_(capacity) {}

    // Returns false when the jti was already present (replay).
    bool check_and_insert(const std::string& jti, int64_t now, int64_t ttl);

    size_t size() const;

private:
    size_t capacity_;
    mutable std::mutex mu_;
    std::map<std::string, int64_t> expiry_;
};

struct UriError {
    std::string message;
};

// Lowercases scheme and host, drops default ports and strips query and
// fragment. Comparison of htu values happens on this form.
Result<std::string, UriError> normalize_uri(std::string_view uri);

bool valid_method(std::string_view method);

// Builds a proof JWS: header {typ:"dpop+jwt", alg, jwk=public key}, claims
// {htm, htu, iat, jti} with a fresh 128-bit random jti.
// Throws std::invalid_argument on a bad method or URI.
std::string create_proof(const jose::KeyPair& key, std::string_view method,
                         std::string_view uri, int64_t now);

enum class ProofError {
    Malformed,
    BadType,
    UnsupportedAlgorithm,
    BadSignature,
    MethodMismatch,
    UriMismatch,
    StaleIat,
    FutureIat,
    ReplayedJti,
};
std::string to_string(ProofError err);

// Verifies a proof against the expected method/URI and the freshness
// window; on success returns the prover's public JWK from the header and
// records the jti in the cache.
Result<json, ProofError> verify_proof(std::string_view compact,
                                      std::string_view expected_method,
                                      std::string_view expected_uri, int64_t now,
                                      ReplayCache& cache,
                                      const FreshnessWindow& window = {});

}  // namespace capauth::dpop
