#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "capauth/capability.hpp"
#include "capauth/http.hpp"
#include "capauth/jose.hpp"

namespace capauth::client {

using json = nlohmann::json;

enum class ErrorKind {
    Transport,  // could not reach or parse (exit code 1)
    Denied,     // the server said no (exit code 2)
    Protocol,   // bad local input (exit code 1)
};

struct Error {
    ErrorKind kind;
    std::string message;
    json server_error;  // body of a 4xx/5xx response when available
};

struct HttpReply {
    int status = 0;
    std::string body;
    std::string content_type;
};

// One hook for all outbound requests so tests can run without sockets.
using Transport = std::function<Result<HttpReply, std::string>(
    const std::string& method, const std::string& url,
    const std::vector<std::pair<std::string, std::string>>& headers,
    const std::string& body, const std::string& content_type)>;

// Real loopback/LAN HTTP transport (plain http URLs).
Transport default_transport();

// POST {authority}/token with a fresh proof; returns the compact token.
Result<std::string, Error> request_token(const std::string& authority_url,
                                         const jose::KeyPair& key,
                                         const Transport& transport, int64_t now);

// Bundle tokens (all cnf-bound to `key`) into a holder-signed presentation:
// claims {iss: thumbprint, vp: [tokens...], iat}.
Result<std::string, Error> combine_presentation(
    const std::vector<std::string>& tokens, const jose::KeyPair& key,
    int64_t now);

// Delegate `parent` (which must be cnf-bound to `key`) to `delegatee_jwk`,
// attenuated by `mask`. The mask must not exceed the parent's capabilities.
Result<std::string, Error> delegate(const std::string& parent,
                                    const json& delegatee_jwk,
                                    const CapabilitySet& mask,
                                    const jose::KeyPair& key, int64_t now,
                                    int64_t lifetime = 3600);

// Issue an authenticated resource request: Authorization: DPoP <token> plus
// a proof minted for exactly this method/URL. 4xx/5xx come back as replies,
// not errors.
Result<HttpReply, Error> access_resource(const std::string& url,
                                         const std::string& token,
                                         const jose::KeyPair& key,
                                         const std::string& method,
                                         const std::string& body,
                                         const Transport& transport, int64_t now);

// POST {authority}/introspect; returns the introspection object.
Result<json, Error> introspect(const std::string& authority_url,
                               const std::string& token,
                               const Transport& transport);

// POST {authority}/admin/revoke (the authority only honors loopback peers).
Result<json, Error> revoke(const std::string& authority_url, size_t index,
                           const Transport& transport);

// Structural (unverified) capability view of a token or delegation chain;
// used for client-side mask validation before signing a delegation.
Result<CapabilitySet, Error> declared_capabilities(const std::string& compact);

}  // namespace capauth::client
