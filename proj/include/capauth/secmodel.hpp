#pragma once

#include <cstdint>
#include <functional>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "capauth/result.hpp"

namespace capauth::secmodel {

using json = nlohmann::json;

// Scope limits for the bounded-exhaustive search. Every size from 1 up to
// the bound is enumerated (revocation servers start at 0: a world without
// a revocation server is structurally legal).
struct Bounds {
    int tokens = 3;
    int authorities = 2;
    int servers = 2;
    int revocation_servers = 1;
};

// Rule removals for mutation coverage: each disables one structural fact
// the constructive enumerator normally enforces.
enum class Mutation {
    None,
    SkipValidityFilter,       // servers may authorize invalid tokens
    SkipRevocationExclusion,  // revocation servers may revoke authorized tokens
    FreeOwnership,            // authority token sets detach from ownership
};

std::string to_string(Mutation m);
std::optional<Mutation> parse_mutation(std::string_view name);

// One bounded world. Token sets are bitmasks indexed by token id.
struct ModelUniverse {
    int tokens = 0;
    int authorities = 0;
    int servers = 0;
    uint32_t valid = 0;                      // validity attribute per token
    std::vector<int> owner;                  // issuing authority per token
    std::vector<uint32_t> authority_tokens;  // tokens each authority owns
    std::vector<uint32_t> authorized;        // tokens each server accepts
    std::vector<int> revocation_servers;     // which servers also revoke
    std::vector<uint32_t> revoked;           // parallel to revocation_servers
};

struct Violation {
    uint64_t universe = 0;  // index in enumeration order
    std::string assertion;  // validTokenUsage | detectForgedTokens | tokenRevocationMechanism
    std::string detail;
};

inline constexpr uint64_t kEnumerationCap = 10'000'000;

// Streams every structurally valid universe exactly once in a fixed order.
// Returns the universe count, or an error when the cap is exceeded.
Result<uint64_t, std::string> enumerate_universes(
    const Bounds& bounds, Mutation mutation,
    const std::function<void(const ModelUniverse&, uint64_t index)>& visit);

// Evaluates the three assertions on one universe.
std::vector<Violation> check_assertions(const ModelUniverse& u, uint64_t index);

struct CheckReport {
    uint64_t universes = 0;
    uint64_t violating_universes = 0;
    std::vector<Violation> violations;  // capped sample, earliest first
};

Result<CheckReport, std::string> run_check(const Bounds& bounds,
                                           Mutation mutation = Mutation::None,
                                           size_t max_reported = 100);

struct Nonconformance {
    size_t line_number = 0;  // 1-based within the log
    std::string reason;
    json line;
};

struct ReplayReport {
    size_t lines = 0;
    size_t granted = 0;
    std::vector<Nonconformance> nonconformances;
};

// Replays a resource-server audit log against authority snapshots:
// every granted line must be justified by credentials the snapshot's access
// tables actually grant, that reach the requested operation, and that were
// not revoked longer than `revocation_grace` seconds before the grant.
// Snapshot shape: {"authorities": {url: {access_table, revoked: [{index, at}]}},
//                  "revocation_grace": seconds}
Result<ReplayReport, std::string> replay_audit(std::istream& log,
                                               const json& snapshot);

}  // namespace capauth::secmodel
