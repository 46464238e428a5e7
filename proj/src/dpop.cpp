#include "capauth/dpop.hpp"

#include <openssl/rand.h>

#include <algorithm>
#include <cctype>
#include <stdexcept>

#include "capauth/base64url.hpp"

namespace capauth::dpop {

namespace {

std::string random_jti() {
    uint8_t buf[16];
    if (RAND_bytes(buf, sizeof(buf)) != 1)
        throw std::runtime_error("RAND_bytes failed");
    return b64url::encode(std::span<const uint8_t>(buf, sizeof(buf)));
}

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

}  // namespace

bool ReplayCache::check_and_insert(const std::string& jti, int64_t now,
                                   int64_t ttl) {
    std::lock_guard lock(mu_);
    // Purge expired entries; beyond their TTL the freshness check rejects
    // the proof anyway.
    for (auto it = expiry_.begin(); it != expiry_.end();) {
        it = it->second <= now ? expiry_.erase(it) : std::next(it);
    }
    if (expiry_.count(jti)) return false;
    if (expiry_.size() >= capacity_) expiry_.erase(expiry_.begin());
    expiry_[jti] = now + ttl;
    return true;
}

size_t ReplayCache::size() const {
    std::lock_guard lock(mu_);
    return expiry_.size();
}

Result<std::string, UriError> normalize_uri(std::string_view uri) {
    size_t scheme_end = uri.find("://");
    if (scheme_end == std::string_view::npos || scheme_end == 0)
        return UriError{"missing scheme"};
    std::string scheme = lower(uri.substr(0, scheme_end));
    if (scheme != "http" && scheme != "https")
        return UriError{"unsupported scheme"};

    std::string_view rest = uri.substr(scheme_end + 3);
    size_t path_start = rest.find_first_of("/?#");
    std::string_view hostport =
        path_start == std::string_view::npos ? rest : rest.substr(0, path_start);
    if (hostport.empty()) return UriError{"missing host"};

    std::string host;
    std::string port;
    size_t colon = hostport.rfind(':');
    if (colon != std::string_view::npos) {
        host = lower(hostport.substr(0, colon));
        port = std::string(hostport.substr(colon + 1));
        if (port.empty() ||
            !std::all_of(port.begin(), port.end(),
                         [](unsigned char c) { return std::isdigit(c); }))
            return UriError{"bad port"};
    } else {
        host = lower(hostport);
    }
    if (host.empty()) return UriError{"missing host"};
    if ((scheme == "http" && port == "80") || (scheme == "https" && port == "443"))
        port.clear();

    std::string path = "/";
    if (path_start != std::string_view::npos && rest[path_start] == '/') {
        std::string_view tail = rest.substr(path_start);
        size_t cut = tail.find_first_of("?#");
        path = std::string(cut == std::string_view::npos ? tail : tail.substr(0, cut));
    }

    std::string out = scheme + "://" + host;
    if (!port.empty()) out += ":" + port;
    out += path;
    return out;
}

bool valid_method(std::string_view method) {
    return method == "GET" || method == "POST" || method == "PUT" ||
           method == "DELETE";
}

std::string create_proof(const jose::KeyPair& key, std::string_view method,
                         std::string_view uri, int64_t now) {
    if (!valid_method(method))
        throw std::invalid_argument("unsupported HTTP method for DPoP proof");
    auto normalized = normalize_uri(uri);
    if (!normalized)
        throw std::invalid_argument("bad DPoP URI: " + normalized.error().message);

    json header{{"typ", "dpop+jwt"},
                {"alg", jose::to_string(key.algorithm())},
                {"jwk", key.public_jwk()}};
    json claims{{"htm", std::string(method)},
                {"htu", normalized.value()},
                {"iat", now},
                {"jti", random_jti()}};
    return jose::sign_envelope(std::move(header), claims, key).compact;
}

std::string to_string(ProofError err) {
    switch (err) {
        case ProofError::Malformed: return "malformed_proof";
        case ProofError::BadType: return "bad_typ";
        case ProofError::UnsupportedAlgorithm: return "unsupported_alg";
        case ProofError::BadSignature: return "bad_signature";
        case ProofError::MethodMismatch: return "method_mismatch";
        case ProofError::UriMismatch: return "uri_mismatch";
        case ProofError::StaleIat: return "stale_iat";
        case ProofError::FutureIat: return "future_iat";
        case ProofError::ReplayedJti: return "replayed_jti";
    }
    return "?";
}

Result<json, ProofError> verify_proof(std::string_view compact,
                                      std::string_view expected_method,
                                      std::string_view expected_uri, int64_t now,
                                      ReplayCache& cache,
                                      const FreshnessWindow& window) {
    auto decoded = jose::decode_envelope(compact);
    if (!decoded) return ProofError::Malformed;
    const auto& env = decoded.value();

    auto typ = env.header.find("typ");
    if (typ == env.header.end() || *typ != "dpop+jwt") return ProofError::BadType;

    auto alg_it = env.header.find("alg");
    if (alg_it == env.header.end() || !alg_it->is_string())
        return ProofError::UnsupportedAlgorithm;
    if (!jose::parse_algorithm(alg_it->get<std::string>()))
        return ProofError::UnsupportedAlgorithm;

    auto jwk_it = env.header.find("jwk");
    if (jwk_it == env.header.end() || !jwk_it->is_object())
        return ProofError::Malformed;
    auto key = jose::PublicKey::from_jwk(*jwk_it);
    if (!key) return ProofError::Malformed;

    // The proof must verify under its own embedded key; it can never speak
    // for any other key.
    auto verified = jose::verify_envelope(compact, key.value());
    if (!verified) {
        if (verified.error() == jose::VerifyError::UnsupportedAlgorithm)
            return ProofError::UnsupportedAlgorithm;
        return ProofError::BadSignature;
    }

    const auto& claims = env.claims;
    auto htm = claims.find("htm");
    if (htm == claims.end() || !htm->is_string()) return ProofError::Malformed;
    if (htm->get<std::string>() != expected_method)
        return ProofError::MethodMismatch;

    auto htu = claims.find("htu");
    if (htu == claims.end() || !htu->is_string()) return ProofError::Malformed;
    auto proof_uri = normalize_uri(htu->get<std::string>());
    auto want_uri = normalize_uri(expected_uri);
    if (!proof_uri || !want_uri) return ProofError::UriMismatch;
    if (proof_uri.value() != want_uri.value()) return ProofError::UriMismatch;

    auto iat = claims.find("iat");
    if (iat == claims.end() || !iat->is_number_integer())
        return ProofError::Malformed;
    int64_t issued = iat->get<int64_t>();
    if (issued < now - window.past) return ProofError::StaleIat;
    if (issued > now + window.future) return ProofError::FutureIat;

    auto jti = claims.find("jti");
    // 16 bytes of entropy is at least 22 chars base64url (32 as hex).
    if (jti == claims.end() || !jti->is_string() ||
        jti->get<std::string>().size() < 22)
        return ProofError::Malformed;
    int64_t ttl = window.past + 60;
    if (!cache.check_and_insert(jti->get<std::string>(), now, ttl))
        return ProofError::ReplayedJti;

    return *jwk_it;
}

}  // namespace capauth::dpop
