#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "capauth/result.hpp"

namespace capauth {

using json = nlohmann::json;

enum class Operation { Read, Write };

std::string to_string(Operation op);
std::optional<Operation> parse_operation(std::string_view name);

using OperationSet = std::set<Operation>;

enum class PathError { Empty, NotAbsolute, Traversal };
std::string to_string(PathError err);

// Canonical absolute path: leading "/", no empty/"." segments, no trailing
// slash except the root itself. Any ".." segment is rejected.
Result<std::string, PathError> normalize_path(std::string_view raw);

// Path-scoped grants. A capability on a path covers that path and its whole
// subtree, respecting segment boundaries ("/data/drone1" never covers
// "/data/drone12").
class CapabilitySet {
public:
    CapabilitySet() = default;

    // Path must already be normalized; empty op sets are ignored.
    void add(const std::string& path, const OperationSet& ops);

    bool grants(std::string_view path, Operation op) const;

    // Intersection under grant semantics: the result grants (p,o) exactly
    // when both inputs do. Never widens either side.
    CapabilitySet attenuate(const CapabilitySet& requested) const;

    // Equality of grant relations (not of representations).
    bool equivalent_to(const CapabilitySet& other) const;

    // True when every grant of this set is also granted by `outer`.
    bool subset_of(const CapabilitySet& outer) const;

    bool empty() const { return entries_.empty(); }
    size_t size() const { return entries_.size(); }
    const std::map<std::string, OperationSet>& entries() const { return entries_; }

    // The VC claim layout: an array of single-path objects, e.g.
    // [{"/data/drone1":["read","write"]},{"/data/drone2":["read"]}].
    json to_json() const;
    static Result<CapabilitySet, std::string> from_json(const json& j);

private:
    std::map<std::string, OperationSet> entries_;
};

// Authorization-server side: client key thumbprint -> granted capabilities.
class AccessTable {
public:
    void set(const std::string& thumbprint, CapabilitySet caps);
    std::optional<CapabilitySet> find(const std::string& thumbprint) const;
    bool empty() const { return entries_.empty(); }
    const std::map<std::string, CapabilitySet>& entries() const { return entries_; }

    // { "<thumbprint>": { "<path>": ["read","write"], ... }, ... }
    json to_json() const;
    static Result<AccessTable, std::string> from_json(const json& j);

private:
    std::map<std::string, CapabilitySet> entries_;
};

struct AuthorityDescriptor {
    std::string url;
    json jwk;
};

// Resource-server side: managed path prefix -> governing authority.
// Lookups use longest segment-prefix match.
class ResourceTable {
public:
    void set(const std::string& prefix, AuthorityDescriptor authority);

    enum class LookupError { NoMatchingPrefix };
    Result<AuthorityDescriptor, LookupError> lookup(std::string_view path) const;

    // Reverse lookup used when verifying presentations: authority by URL.
    std::optional<AuthorityDescriptor> find_by_url(std::string_view url) const;

    const std::map<std::string, AuthorityDescriptor>& entries() const {
        return entries_;
    }

    // { "<prefix>": { "url": "...", "jwk": { ... } }, ... }
    json to_json() const;
    static Result<ResourceTable, std::string> from_json(const json& j);

private:
    std::map<std::string, AuthorityDescriptor> entries_;
};

}  // namespace capauth
