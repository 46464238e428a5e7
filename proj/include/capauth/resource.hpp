#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
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

enum class StorageError { NotFound, IoFailure };

// Path-addressed object store rooted at a directory. Writes are atomic
// (temp file + rename), so concurrent writers to one path never tear.
class Storage {
public:
    explicit Storage(std::string root);

    Result<std::string, StorageError> get(const std::string& path) const;
    Result<Unit, StorageError> put(const std::string& path, std::string_view bytes);
    Result<Unit, StorageError> remove(const std::string& path);

private:
    std::string file_for(const std::string& path) const;
    std::string root_;
    std::atomic<uint64_t> tmp_counter_{0};
};

enum class RevocationMode { Introspection, StatusList };

std::string to_string(RevocationMode mode);
std::optional<RevocationMode> parse_revocation_mode(std::string_view name);

struct ResourceConfig {
    ResourceTable table;
    std::string storage_root;
    std::string base_url;  // externally visible origin, e.g. http://127.0.0.1:9100
    RevocationMode revocation_mode = RevocationMode::StatusList;
    int64_t status_cache_max_age = 60;
    dpop::FreshnessWindow dpop_window;
    size_t max_delegation_depth = 4;
};

// A request denial: protocol error string plus the pipeline stage that
// produced it (the stage lands in the audit log, the code in the response).
struct Denial {
    int status;
    std::string code;   // e.g. "invalid-token"
    std::string stage;  // e.g. "signature"
    std::string detail;
};

struct VerifiedToken {
    CapabilitySet capabilities;
    json holder_jwk;     // cnf key of the outermost envelope
    json records;        // audit records: [{iss, index, subject, capabilities}]
};

using AuditSink = std::function<void(const json& line)>;

// The multi-tenant storage front-end: every request runs the verification
// pipeline (path -> authority lookup -> DPoP -> token checks -> revocation
// -> capability check) before any storage operation executes.
class ResourceServer {
public:
    ResourceServer(ResourceConfig config, HttpGet http_get, HttpPost http_post,
                   AuditSink audit = {});

    HttpResponse handle_resource_request(std::string_view method,
                                         std::string_view uri,
                                         std::string_view dpop_header,
                                         std::string_view authorization_header,
                                         std::string_view body, int64_t now);

    // Single token or delegation chain. `pinned` forces the issuer (the
    // path's governing authority); without it the issuer is resolved from
    // the token's own iss against the resource table.
    Result<VerifiedToken, Denial> verify_token_or_chain(
        const std::string& compact, const std::string& expected_holder,
        const std::optional<AuthorityDescriptor>& pinned, int64_t now,
        size_t depth = 0);

    // Holder-signed bundle of tokens; capabilities are the union over all
    // inner tokens, each of which must pass the full token pipeline.
    Result<VerifiedToken, Denial> verify_presentation(const std::string& compact,
                                                      const json& prover_jwk,
                                                      int64_t now);

    // True when the credential is still active under the configured mode.
    // Every infrastructure failure reads as revoked (fail closed).
    bool check_revocation(const std::string& compact, const json& claims,
                          const AuthorityDescriptor& authority, int64_t now);

    size_t status_fetch_count() const { return fetch_count_.load(); }
    Storage& storage() { return storage_; }
    const ResourceConfig& config() const { return config_; }

private:
    Result<VerifiedToken, Denial> verify_single_token(
        const std::string& compact, const std::string& expected_holder,
        const std::optional<AuthorityDescriptor>& pinned, int64_t now);

    void audit(const json& line);

    ResourceConfig config_;
    Storage storage_;
    HttpGet http_get_;
    HttpPost http_post_;
    AuditSink audit_;
    dpop::ReplayCache replay_cache_;

    struct CachedList {
        int64_t fetched_at = 0;
        statuslist::Bitstring bits{0};
    };
    mutable std::mutex cache_mu_;
    std::map<std::string, CachedList> status_cache_;
    std::atomic<size_t> fetch_count_{0};
};

}  // namespace capauth
