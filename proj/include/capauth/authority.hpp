#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "capauth/capability.hpp"
#include "capauth/dpop.hpp"
#include "capauth/http.hpp"
#include "capauth/jose.hpp"
#include "capauth/statuslist.hpp"

namespace capauth {

struct AuthorityConfig {
    std::string url;
    AccessTable access_table;
    size_t status_list_capacity = 16384;
    int64_t token_lifetime = 3600;
    dpop::FreshnessWindow dpop_window;
};

enum class IssueError {
    EmptyCapabilities,
    StatusListExhausted,
};

std::string_view to_string(IssueError e);

// One tenant's authorization server: issues capability tokens to proven
// keys listed in its access table, answers introspection, and publishes the
// signed revocation status list.
class Authority {
public:
    Authority(AuthorityConfig config, jose::KeyPair keypair);

    const std::string& url() const { return config_.url; }
    const json& public_jwk() const { return keypair_.public_jwk(); }
    std::string token_endpoint() const { return config_.url + "/token"; }
    std::string status_list_url() const { return config_.url + "/status-list"; }

    // POST /token: DPoP-proven request. 200 with {"access_token", "token_type"}
    // on success; 400 invalid_dpop_proof; 403 access_denied.
    HttpResponse handle_token_request(std::string_view method,
                                      std::string_view dpop_header, int64_t now);

    // Returns the compact token, or an error once the status list is full.
    Result<std::string, IssueError> issue_access_token(const json& subject_jwk,
                                                       const CapabilitySet& caps,
                                                       int64_t now);

    // {"active": bool}; never errors on unknown or foreign tokens.
    json handle_introspection(std::string_view token, int64_t now) const;

    // Sets the revocation bit. False when the index was never allocated.
    bool revoke(size_t index, int64_t now);

    // Compact signed status-list credential covering the current bitstring.
    std::string serve_revocation_list(int64_t now) const;

    // Admin: replaces the capability set for a client key (atomic snapshot
    // semantics for concurrent readers).
    void grant(const std::string& thumbprint, CapabilitySet caps);

    std::optional<size_t> issued_index(const std::string& jti) const;
    size_t next_index() const;

    // Access table plus revocation history; consumed by audit replay.
    json snapshot() const;

private:
    AuthorityConfig config_;
    jose::KeyPair keypair_;
    dpop::ReplayCache replay_cache_;

    mutable std::mutex mu_;
    statuslist::Bitstring revocation_bits_;
    size_t next_index_ = 0;
    std::map<std::string, size_t> issued_;        // jti -> index
    std::map<size_t, int64_t> revoked_at_;        // index -> timestamp
};

}  // namespace capauth
