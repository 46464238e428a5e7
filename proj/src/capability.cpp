#include "capauth/capability.hpp"

#include <algorithm>

namespace capauth {

std::string to_string(Operation op) {
    return op == Operation::Read ? "read" : "write";
}

std::optional<Operation> parse_operation(std::string_view name) {
    if (name == "read") return Operation::Read;
    if (name == "write") return Operation::Write;
    return std::nullopt;
}

std::string to_string(PathError err) {
    switch (err) {
        case PathError::Empty: return "empty_path";
        case PathError::NotAbsolute: return "not_absolute";
        case PathError::Traversal: return "traversal";
    }
    return "?";
}

Result<std::string, PathError> normalize_path(std::string_view raw) {
    if (raw.empty()) return PathError::Empty;
    if (raw.front() != '/') return PathError::NotAbsolute;

    std::string out;
    size_t i = 0;
    while (i < raw.size()) {
        while (i < raw.size() && raw[i] == '/') ++i;
        size_t start = i;
        while (i < raw.size() && raw[i] != '/') ++i;
        std::string_view segment = raw.substr(start, i - start);
        if (segment.empty() || segment == ".") continue;
        if (segment == "..") return PathError::Traversal;
        out += '/';
        out += segment;
    }
    if (out.empty()) out = "/";
    return out;
}

namespace {

// True when `prefix` covers `path` under subtree semantics, respecting
// segment boundaries.
bool segment_prefix(std::string_view prefix, std::string_view path) {
    if (prefix == "/") return true;
    if (path.size() < prefix.size()) return false;
    if (path.compare(0, prefix.size(), prefix) != 0) return false;
    return path.size() == prefix.size() || path[prefix.size()] == '/';
}

OperationSet intersect(const OperationSet& a, const OperationSet& b) {
    OperationSet out;
    for (Operation op : a)
        if (b.count(op)) out.insert(op);
    return out;
}

}  // namespace

void CapabilitySet::add(const std::string& path, const OperationSet& ops) {
    if (ops.empty()) return;
    auto& slot = entries_[path];
    slot.insert(ops.begin(), ops.end());
}

bool CapabilitySet::grants(std::string_view path, Operation op) const {
    for (const auto& [cap_path, ops] : entries_) {
        if (ops.count(op) && segment_prefix(cap_path, path)) return true;
    }
    return false;
}

CapabilitySet CapabilitySet::attenuate(const CapabilitySet& requested) const {
    CapabilitySet out;
    for (const auto& [pa, opsa] : entries_) {
        for (const auto& [pb, opsb] : requested.entries_) {
            // Intersection of two subtrees is the deeper one (or empty).
            const std::string* deeper = nullptr;
            if (segment_prefix(pa, pb)) {
                deeper = &pb;
            } else if (segment_prefix(pb, pa)) {
                deeper = &pa;
            } else {
                continue;
            }
            auto ops = intersect(opsa, opsb);
            if (!ops.empty()) out.add(*deeper, ops);
        }
    }
    // Drop entries already covered by an ancestor entry.
    for (auto it = out.entries_.begin(); it != out.entries_.end();) {
        bool covered = false;
        for (const auto& [other, ops] : out.entries_) {
            if (other == it->first) continue;
            if (segment_prefix(other, it->first) &&
                std::includes(ops.begin(), ops.end(), it->second.begin(),
                              it->second.end())) {
                covered = true;
                break;
            }
        }
        it = covered ? out.entries_.erase(it) : std::next(it);
    }
    return out;
}

bool CapabilitySet::equivalent_to(const CapabilitySet& other) const {
    // Grant relations generated by path subtrees agree everywhere iff they
    // agree on the union of both sets' capability paths.
    for (const auto* side : {this, &other}) {
        for (const auto& [path, ops] : side->entries_) {
            for (Operation op : {Operation::Read, Operation::Write}) {
                if (grants(path, op) != other.grants(path, op)) return false;
            }
        }
    }
    return true;
}

bool CapabilitySet::subset_of(const CapabilitySet& outer) const {
    for (const auto& [path, ops] : entries_) {
        for (Operation op : ops) {
            if (!outer.grants(path, op)) return false;
        }
    }
    return true;
}

json CapabilitySet::to_json() const {
    json out = json::array();
    for (const auto& [path, ops] : entries_) {
        json op_list = json::array();
        for (Operation op : ops) op_list.push_back(to_string(op));
        out.push_back(json{{path, op_list}});
    }
    return out;
}

Result<CapabilitySet, std::string> CapabilitySet::from_json(const json& j) {
    if (!j.is_array()) return std::string("capabilities must be an array");
    CapabilitySet out;
    for (const auto& item : j) {
        if (!item.is_object() || item.size() != 1)
            return std::string("capability entries must be single-path objects");
        for (const auto& [path, op_list] : item.items()) {
            auto normalized = normalize_path(path);
            if (!normalized)
                return "bad capability path: " + to_string(normalized.error());
            if (!op_list.is_array())
                return std::string("operations must be an array");
            OperationSet ops;
            for (const auto& op_name : op_list) {
                if (!op_name.is_string())
                    return std::string("operations must be strings");
                auto op = parse_operation(op_name.get<std::string>());
                if (!op) return "unknown operation: " + op_name.get<std::string>();
                ops.insert(*op);
            }
            if (ops.empty()) return std::string("empty operation set");
            out.add(normalized.value(), ops);
        }
    }
    return out;
}

void AccessTable::set(const std::string& thumbprint, CapabilitySet caps) {
    entries_[thumbprint] = std::move(caps);
}

std::optional<CapabilitySet> AccessTable::find(const std::string& thumbprint) const {
    auto it = entries_.find(thumbprint);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

json AccessTable::to_json() const {
    json out = json::object();
    for (const auto& [thumb, caps] : entries_) {
        json entry = json::object();
        for (const auto& [path, ops] : caps.entries()) {
            json op_list = json::array();
            for (Operation op : ops) op_list.push_back(to_string(op));
            entry[path] = op_list;
        }
        out[thumb] = entry;
    }
    return out;
}

namespace {

bool valid_thumbprint(std::string_view s) {
    if (s.size() != 64) return false;
    return std::all_of(s.begin(), s.end(), [](char c) {
        return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
    });
}

}  // namespace

Result<AccessTable, std::string> AccessTable::from_json(const json& j) {
    if (!j.is_object()) return std::string("access table must be an object");
    AccessTable out;
    for (const auto& [thumb, entry] : j.items()) {
        if (!valid_thumbprint(thumb))
            return "invalid thumbprint key: " + thumb;
        if (!entry.is_object())
            return std::string("access table entries must be objects");
        CapabilitySet caps;
        for (const auto& [path, op_list] : entry.items()) {
            auto normalized = normalize_path(path);
            if (!normalized)
                return "bad path in access table: " + to_string(normalized.error());
            if (!op_list.is_array())
                return std::string("operations must be an array");
            OperationSet ops;
            for (const auto& op_name : op_list) {
                if (!op_name.is_string())
                    return std::string("operations must be strings");
                auto op = parse_operation(op_name.get<std::string>());
                if (!op) return "unknown operation: " + op_name.get<std::string>();
                ops.insert(*op);
            }
            if (ops.empty()) return std::string("empty operation set");
            caps.add(normalized.value(), ops);
        }
        out.set(thumb, std::move(caps));
    }
    return out;
}

void ResourceTable::set(const std::string& prefix, AuthorityDescriptor authority) {
    entries_[prefix] = std::move(authority);
}

Result<AuthorityDescriptor, ResourceTable::LookupError> ResourceTable::lookup(
    std::string_view path) const {
    const AuthorityDescriptor* best = nullptr;
    size_t best_len = 0;
    for (const auto& [prefix, authority] : entries_) {
        if (segment_prefix(prefix, path) && prefix.size() >= best_len) {
            best = &authority;
            best_len = prefix.size();
        }
    }
    if (!best) return LookupError::NoMatchingPrefix;
    return *best;
}

std::optional<AuthorityDescriptor> ResourceTable::find_by_url(
    std::string_view url) const {
    for (const auto& [prefix, authority] : entries_) {
        if (authority.url == url) return authority;
    }
    return std::nullopt;
}

json ResourceTable::to_json() const {
    json out = json::object();
    for (const auto& [prefix, authority] : entries_) {
        out[prefix] = json{{"url", authority.url}, {"jwk", authority.jwk}};
    }
    return out;
}

Result<ResourceTable, std::string> ResourceTable::from_json(const json& j) {
    if (!j.is_object()) return std::string("resource table must be an object");
    ResourceTable out;
    for (const auto& [prefix, entry] : j.items()) {
        auto normalized = normalize_path(prefix);
        if (!normalized)
            return "bad prefix in resource table: " + to_string(normalized.error());
        if (!entry.is_object() || !entry.contains("url") ||
            !entry["url"].is_string() || !entry.contains("jwk"))
            return std::string("resource table entries need url and jwk");
        out.set(normalized.value(),
                AuthorityDescriptor{entry["url"].get<std::string>(), entry["jwk"]});
    }
    return out;
}

}  // namespace capauth
