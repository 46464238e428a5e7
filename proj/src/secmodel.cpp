#include "capauth/secmodel.hpp"

#include <bit>
#include <string>

#include "capauth/capability.hpp"

namespace capauth::secmodel {

std::string to_string(Mutation m) {
    switch (m) {
        case Mutation::None: return "none";
        case Mutation::SkipValidityFilter: return "skip-validity-filter";
        case Mutation::SkipRevocationExclusion: return "skip-revocation-exclusion";
        case Mutation::FreeOwnership: return "free-ownership";
    }
    return "none";
}

std::optional<Mutation> parse_mutation(std::string_view name) {
    if (name == "none") return Mutation::None;
    if (name == "skip-validity-filter") return Mutation::SkipValidityFilter;
    if (name == "skip-revocation-exclusion")
        return Mutation::SkipRevocationExclusion;
    if (name == "free-ownership") return Mutation::FreeOwnership;
    return std::nullopt;
}

namespace {

// Depth-first odometer enumeration. Subset order for a fixed mask m is the
// standard (s - m) & m walk starting at the empty set, which is fixed and
// duplicate-free; combined with the outer loops this makes the whole stream
// deterministic.
struct Enumerator {
    const Bounds& bounds;
    Mutation mutation;
    const std::function<void(const ModelUniverse&, uint64_t)>& visit;
    uint64_t index = 0;
    bool overflow = false;

    void emit(const ModelUniverse& u) {
        if (index >= kEnumerationCap) {
            overflow = true;
            return;
        }
        visit(u, index);
        ++index;
    }

    void revoked_slots(ModelUniverse& u, uint32_t rev_base, size_t i) {
        if (overflow) return;
        if (i == u.revocation_servers.size()) {
            emit(u);
            return;
        }
        uint32_t s = 0;
        while (true) {
            u.revoked[i] = s;
            revoked_slots(u, rev_base, i + 1);
            if (overflow) return;
            if (s == rev_base) break;
            s = (s - rev_base) & rev_base;
        }
    }

    void rs_choices(ModelUniverse& u) {
        const uint32_t all_mask = (1u << u.tokens) - 1;
        uint32_t auth_union = 0;
        for (uint32_t a : u.authorized) auth_union |= a;
        const uint32_t rev_base = mutation == Mutation::SkipRevocationExclusion
                                      ? all_mask
                                      : (all_mask & ~auth_union);
        for (uint32_t rs_mask = 0; rs_mask < (1u << u.servers); ++rs_mask) {
            if (std::popcount(rs_mask) >
                static_cast<int>(bounds.revocation_servers))
                continue;
            u.revocation_servers.clear();
            for (int s = 0; s < u.servers; ++s)
                if (rs_mask >> s & 1u) u.revocation_servers.push_back(s);
            u.revoked.assign(u.revocation_servers.size(), 0);
            revoked_slots(u, rev_base, 0);
            if (overflow) return;
        }
    }

    void authorized_slots(ModelUniverse& u, uint32_t base, size_t i) {
        if (overflow) return;
        if (i == u.authorized.size()) {
            rs_choices(u);
            return;
        }
        uint32_t s = 0;
        while (true) {
            u.authorized[i] = s;
            authorized_slots(u, base, i + 1);
            if (overflow) return;
            if (s == base) break;
            s = (s - base) & base;
        }
    }

    void free_authority_slots(ModelUniverse& u, uint32_t server_base, size_t i) {
        if (overflow) return;
        if (i == u.authority_tokens.size()) {
            authorized_slots(u, server_base, 0);
            return;
        }
        const uint32_t all_mask = (1u << u.tokens) - 1;
        uint32_t s = 0;
        while (true) {
            u.authority_tokens[i] = s;
            free_authority_slots(u, server_base, i + 1);
            if (overflow) return;
            if (s == all_mask) break;
            s = (s - all_mask) & all_mask;
        }
    }

    void authority_assignments(ModelUniverse& u) {
        const uint32_t all_mask = (1u << u.tokens) - 1;
        const uint32_t server_base =
            mutation == Mutation::SkipValidityFilter ? all_mask : u.valid;
        if (mutation == Mutation::FreeOwnership) {
            free_authority_slots(u, server_base, 0);
            return;
        }
        // Fact: each authority owns exactly the tokens whose owner it is.
        u.authority_tokens.assign(u.authorities, 0);
        for (int t = 0; t < u.tokens; ++t)
            u.authority_tokens[u.owner[t]] |= 1u << t;
        authorized_slots(u, server_base, 0);
    }

    void run() {
        for (int nt = 1; nt <= bounds.tokens && !overflow; ++nt) {
            for (int na = 1; na <= bounds.authorities && !overflow; ++na) {
                for (int ns = 1; ns <= bounds.servers && !overflow; ++ns) {
                    ModelUniverse u;
                    u.tokens = nt;
                    u.authorities = na;
                    u.servers = ns;
                    u.owner.assign(nt, 0);
                    u.authority_tokens.assign(na, 0);
                    u.authorized.assign(ns, 0);
                    const uint32_t all_mask = (1u << nt) - 1;
                    uint64_t owner_codes = 1;
                    for (int t = 0; t < nt; ++t) owner_codes *= na;
                    for (uint32_t valid = 0; valid <= all_mask && !overflow;
                         ++valid) {
                        u.valid = valid;
                        for (uint64_t code = 0; code < owner_codes && !overflow;
                             ++code) {
                            uint64_t c = code;
                            for (int t = 0; t < nt; ++t) {
                                u.owner[t] = static_cast<int>(c % na);
                                c /= na;
                            }
                            authority_assignments(u);
                        }
                    }
                }
            }
        }
    }
};

}  // namespace

Result<uint64_t, std::string> enumerate_universes(
    const Bounds& bounds, Mutation mutation,
    const std::function<void(const ModelUniverse&, uint64_t)>& visit) {
    if (bounds.tokens < 1 || bounds.authorities < 1 || bounds.servers < 1 ||
        bounds.revocation_servers < 0) {
        return std::string("bounds must be at least 1 (revocation servers: 0)");
    }
    if (bounds.tokens > 20 || bounds.authorities > 8 || bounds.servers > 8) {
        return std::string("bounds too large for bitmask enumeration");
    }
    Enumerator e{bounds, mutation, visit};
    e.run();
    if (e.overflow) {
        return std::string("enumeration exceeds the cap of " +
                           std::to_string(kEnumerationCap) + " universes");
    }
    return e.index;
}

std::vector<Violation> check_assertions(const ModelUniverse& u, uint64_t index) {
    std::vector<Violation> out;
    // validTokenUsage: every valid token appears in its owning authority's set.
    for (int t = 0; t < u.tokens; ++t) {
        if (!(u.valid >> t & 1u)) continue;
        int a = u.owner[t];
        if (!(u.authority_tokens[a] >> t & 1u)) {
            out.push_back({index, "validTokenUsage",
                           "valid token " + std::to_string(t) +
                               " missing from authority " + std::to_string(a)});
        }
    }
    // detectForgedTokens: servers only authorize valid tokens.
    for (int s = 0; s < u.servers; ++s) {
        for (int t = 0; t < u.tokens; ++t) {
            if ((u.authorized[s] >> t & 1u) && !(u.valid >> t & 1u)) {
                out.push_back({index, "detectForgedTokens",
                               "server " + std::to_string(s) +
                                   " authorizes invalid token " +
                                   std::to_string(t)});
            }
        }
    }
    // tokenRevocationMechanism: revoked tokens are authorized nowhere.
    for (size_t i = 0; i < u.revocation_servers.size(); ++i) {
        for (int t = 0; t < u.tokens; ++t) {
            if (!(u.revoked[i] >> t & 1u)) continue;
            for (int s = 0; s < u.servers; ++s) {
                if (u.authorized[s] >> t & 1u) {
                    out.push_back(
                        {index, "tokenRevocationMechanism",
                         "revoked token " + std::to_string(t) +
                             " still authorized by server " + std::to_string(s)});
                    break;
                }
            }
        }
    }
    return out;
}

Result<CheckReport, std::string> run_check(const Bounds& bounds,
                                           Mutation mutation,
                                           size_t max_reported) {
    CheckReport report;
    auto count = enumerate_universes(
        bounds, mutation, [&](const ModelUniverse& u, uint64_t index) {
            auto violations = check_assertions(u, index);
            if (violations.empty()) return;
            ++report.violating_universes;
            for (auto& v : violations) {
                if (report.violations.size() < max_reported)
                    report.violations.push_back(std::move(v));
            }
        });
    if (!count) return count.error();
    report.universes = *count;
    return report;
}

namespace {

std::optional<Operation> parse_operation(const std::string& name) {
    if (name == "read") return Operation::Read;
    if (name == "write") return Operation::Write;
    return std::nullopt;
}

struct SnapshotAuthority {
    AccessTable table;
    std::map<uint64_t, int64_t> revoked_at;  // index -> revocation time
};

}  // namespace

Result<ReplayReport, std::string> replay_audit(std::istream& log,
                                               const json& snapshot) {
    if (!snapshot.is_object() || !snapshot.contains("authorities") ||
        !snapshot["authorities"].is_object()) {
        return std::string("snapshot needs an \"authorities\" object");
    }
    int64_t grace = 0;
    if (snapshot.contains("revocation_grace")) {
        if (!snapshot["revocation_grace"].is_number_integer() ||
            snapshot["revocation_grace"].get<int64_t>() < 0) {
            return std::string("revocation_grace must be a non-negative integer");
        }
        grace = snapshot["revocation_grace"].get<int64_t>();
    }

    std::map<std::string, SnapshotAuthority> authorities;
    for (const auto& [url, entry] : snapshot["authorities"].items()) {
        if (!entry.is_object() || !entry.contains("access_table")) {
            return "snapshot authority " + url + " lacks an access_table";
        }
        auto table = AccessTable::from_json(entry["access_table"]);
        if (!table) return "snapshot authority " + url + ": " + table.error();
        SnapshotAuthority sa;
        sa.table = std::move(*table);
        if (entry.contains("revoked")) {
            if (!entry["revoked"].is_array()) {
                return "snapshot authority " + url + ": revoked must be an array";
            }
            for (const auto& r : entry["revoked"]) {
                if (!r.is_object() || !r.contains("index") ||
                    !r["index"].is_number_integer() ||
                    r["index"].get<int64_t>() < 0 || !r.contains("at") ||
                    !r["at"].is_number_integer()) {
                    return "snapshot authority " + url + ": bad revoked entry";
                }
                sa.revoked_at[r["index"].get<uint64_t>()] =
                    r["at"].get<int64_t>();
            }
        }
        authorities.emplace(url, std::move(sa));
    }

    ReplayReport report;
    std::string raw;
    size_t line_number = 0;
    while (std::getline(log, raw)) {
        ++line_number;
        if (raw.empty()) continue;
        auto line = json::parse(raw, nullptr, false);
        if (line.is_discarded() || !line.is_object()) {
            return "line " + std::to_string(line_number) + ": not a JSON object";
        }
        ++report.lines;
        if (!line.contains("decision") || !line["decision"].is_string()) {
            return "line " + std::to_string(line_number) + ": missing decision";
        }
        if (line["decision"] != "granted") continue;
        ++report.granted;

        auto flag = [&](std::string reason) {
            report.nonconformances.push_back(
                Nonconformance{line_number, std::move(reason), line});
        };

        if (!line.contains("ts") || !line["ts"].is_number_integer() ||
            !line.contains("path") || !line["path"].is_string() ||
            !line.contains("operation") || !line["operation"].is_string() ||
            !line.contains("vcs") || !line["vcs"].is_array()) {
            return "line " + std::to_string(line_number) +
                   ": granted line missing ts/path/operation/vcs";
        }
        const int64_t ts = line["ts"].get<int64_t>();
        const std::string path = line["path"].get<std::string>();
        auto op = parse_operation(line["operation"].get<std::string>());
        if (!op) {
            return "line " + std::to_string(line_number) + ": unknown operation";
        }

        CapabilitySet justified;
        bool records_ok = true;
        for (const auto& record : line["vcs"]) {
            if (!record.is_object() || !record.contains("iss") ||
                !record["iss"].is_string() || !record.contains("subject") ||
                !record["subject"].is_string() || !record.contains("index") ||
                !record["index"].is_number_integer() ||
                record["index"].get<int64_t>() < 0 ||
                !record.contains("capabilities")) {
                return "line " + std::to_string(line_number) +
                       ": malformed credential record";
            }
            const std::string iss = record["iss"].get<std::string>();
            auto authority = authorities.find(iss);
            if (authority == authorities.end()) {
                flag("credential names unknown authority " + iss);
                records_ok = false;
                continue;
            }
            auto caps = CapabilitySet::from_json(record["capabilities"]);
            if (!caps) {
                return "line " + std::to_string(line_number) + ": " + caps.error();
            }
            auto granted =
                authority->second.table.find(record["subject"].get<std::string>());
            if (!granted) {
                flag("subject " + record["subject"].get<std::string>() +
                     " absent from " + iss + " access table");
                records_ok = false;
                continue;
            }
            if (!caps->subset_of(*granted)) {
                flag("credential capabilities exceed the access-table grant");
                records_ok = false;
                continue;
            }
            auto revoked =
                authority->second.revoked_at.find(record["index"].get<uint64_t>());
            if (revoked != authority->second.revoked_at.end() &&
                ts >= revoked->second + grace) {
                flag("credential index " +
                     std::to_string(record["index"].get<uint64_t>()) +
                     " used " + std::to_string(ts - revoked->second) +
                     "s after revocation (grace " + std::to_string(grace) + "s)");
                records_ok = false;
                continue;
            }
            for (const auto& [p, ops] : caps->entries()) justified.add(p, ops);
        }
        if (records_ok && !justified.grants(path, *op)) {
            flag("no verified capability grants " +
                 std::string(to_string(*op)) + " on " + path);
        }
    }
    return report;
}

}  // namespace capauth::secmodel
