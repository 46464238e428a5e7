// Bounded model checker: enumeration counts against an independent oracle,
// determinism/uniqueness, the three assertions, mutation coverage, and
// audit-log replay (hand-built and against the live resource server).
#include <doctest.h>
#include <unistd.h>

#include <filesystem>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "capauth/dpop.hpp"

#include "capauth/authority.hpp"
#include "capauth/client.hpp"
#include "capauth/resource.hpp"
#include "capauth/secmodel.hpp"

using namespace capauth;
using namespace capauth::secmodel;
using json = nlohmann::json;

namespace {

std::string serialize(const ModelUniverse& u) {
    std::ostringstream s;
    s << u.tokens << '|' << u.authorities << '|' << u.servers << '|' << u.valid
      << '|';
    for (int o : u.owner) s << o << ',';
    s << '|';
    for (auto m : u.authority_tokens) s << m << ',';
    s << '|';
    for (auto m : u.authorized) s << m << ',';
    s << '|';
    for (int r : u.revocation_servers) s << r << ',';
    s << '|';
    for (auto m : u.revoked) s << m << ',';
    return s.str();
}

uint64_t count_universes(const Bounds& b, Mutation m = Mutation::None) {
    auto count = enumerate_universes(b, m, [](const ModelUniverse&, uint64_t) {});
    REQUIRE(count.ok());
    return *count;
}

}  // namespace

TEST_CASE("universe counts match the independent combinatorial oracle") {
    // All-1 bounds, closed form by hand: one token, one authority, one server,
    // at most one revocation server.
    //   valid token:   server set in {∅,{t}};
    //                  ∅  -> rs ∈ { none, rs with revoked ∅ or {t} } = 3
    //                  {t} -> rs ∈ { none, rs with revoked ∅ }        = 2
    //   invalid token: server set must be ∅
    //                  -> rs ∈ { none, rs with revoked ∅ or {t} }     = 3
    //   total 5 + 3 = 8.
    CHECK(count_universes({1, 1, 1, 1}) == 8);

    // Frozen values from a brute-force Python enumeration written against the
    // same structural facts but with an unrelated loop structure.
    CHECK(count_universes({2, 1, 1, 1}) == 42);
    CHECK(count_universes({1, 1, 2, 1}) == 27);
    CHECK(count_universes({2, 2, 1, 1}) == 194);
    CHECK(count_universes({2, 2, 2, 1}) == 866);
    CHECK(count_universes({3, 2, 2, 1}) == 9533);   // default bounds
    CHECK(count_universes({3, 2, 2, 2}) == 22150);

    // The mutated search spaces were frozen from the same oracle.
    CHECK(count_universes({3, 2, 2, 1}, Mutation::SkipValidityFilter) == 26822);
    CHECK(count_universes({3, 2, 2, 1}, Mutation::SkipRevocationExclusion) ==
          22764);
    CHECK(count_universes({3, 2, 2, 1}, Mutation::FreeOwnership) == 511706);
}

TEST_CASE("enumeration is deterministic and duplicate-free") {
    std::vector<std::string> first, second;
    auto c1 = enumerate_universes({2, 2, 2, 1}, Mutation::None,
                                  [&](const ModelUniverse& u, uint64_t) {
                                      first.push_back(serialize(u));
                                  });
    auto c2 = enumerate_universes({2, 2, 2, 1}, Mutation::None,
                                  [&](const ModelUniverse& u, uint64_t) {
                                      second.push_back(serialize(u));
                                  });
    REQUIRE(c1.ok());
    REQUIRE(c2.ok());
    CHECK(first == second);
    CHECK(first.size() == 866);

    std::set<std::string> unique(first.begin(), first.end());
    CHECK(unique.size() == first.size());
}

TEST_CASE("every emitted universe satisfies the structural facts") {
    const Bounds bounds{3, 2, 2, 1};
    uint64_t bad = 0;
    uint64_t expected_index = 0;
    auto count = enumerate_universes(
        bounds, Mutation::None, [&](const ModelUniverse& u, uint64_t index) {
            bool ok = index == expected_index++;
            ok = ok && static_cast<int>(u.owner.size()) == u.tokens;
            ok = ok && static_cast<int>(u.authority_tokens.size()) == u.authorities;
            ok = ok && static_cast<int>(u.authorized.size()) == u.servers;
            ok = ok && u.revoked.size() == u.revocation_servers.size();
            ok = ok && static_cast<int>(u.revocation_servers.size()) <=
                           bounds.revocation_servers;
            const uint32_t all_mask = (1u << u.tokens) - 1;
            ok = ok && (u.valid | all_mask) == all_mask;
            // Ownership fact: authority sets are exactly the owner partition.
            std::vector<uint32_t> derived(u.authorities, 0);
            for (int t = 0; t < u.tokens; ++t) {
                if (u.owner[t] < 0 || u.owner[t] >= u.authorities) ok = false;
                else derived[u.owner[t]] |= 1u << t;
            }
            ok = ok && derived == u.authority_tokens;
            // Validity fact: servers authorize only valid tokens.
            uint32_t auth_union = 0;
            for (uint32_t a : u.authorized) {
                ok = ok && (a & ~u.valid) == 0;
                auth_union |= a;
            }
            // Revocation fact: revoked sets never intersect authorized sets.
            int prev = -1;
            for (size_t i = 0; i < u.revocation_servers.size(); ++i) {
                ok = ok && u.revocation_servers[i] > prev &&
                     u.revocation_servers[i] < u.servers;
                prev = u.revocation_servers[i];
                ok = ok && (u.revoked[i] & auth_union) == 0;
                ok = ok && (u.revoked[i] | all_mask) == all_mask;
            }
            if (!ok) ++bad;
        });
    REQUIRE(count.ok());
    CHECK(*count == 9533);
    CHECK(bad == 0);
}

TEST_CASE("check_assertions pinpoints each violation kind") {
    ModelUniverse u;
    u.tokens = 2;
    u.authorities = 1;
    u.servers = 1;
    u.valid = 0b11;
    u.owner = {0, 0};
    u.authority_tokens = {0b11};
    u.authorized = {0b01};
    u.revocation_servers = {0};
    u.revoked = {0b10};
    CHECK(check_assertions(u, 0).empty());

    SUBCASE("valid token missing from its owner") {
        u.authority_tokens = {0b01};  // token 1 owned but not listed
        auto v = check_assertions(u, 7);
        REQUIRE(v.size() == 1);
        CHECK(v[0].assertion == "validTokenUsage");
        CHECK(v[0].universe == 7);
    }
    SUBCASE("server authorizing an invalid token") {
        u.valid = 0b10;  // token 0 invalid yet authorized
        auto v = check_assertions(u, 3);
        REQUIRE(!v.empty());
        CHECK(v[0].assertion == "detectForgedTokens");
    }
    SUBCASE("revoked token still authorized somewhere") {
        u.revoked = {0b01};  // token 0 both revoked and authorized
        auto v = check_assertions(u, 9);
        REQUIRE(v.size() == 1);
        CHECK(v[0].assertion == "tokenRevocationMechanism");
    }
}

TEST_CASE("default bounds: zero violations; each mutation is caught") {
    auto clean = run_check({3, 2, 2, 1});
    REQUIRE(clean.ok());
    CHECK(clean->universes == 9533);
    CHECK(clean->violating_universes == 0);
    CHECK(clean->violations.empty());

    struct Case {
        Mutation mutation;
        const char* expected_assertion;
    };
    for (const auto& c :
         {Case{Mutation::SkipValidityFilter, "detectForgedTokens"},
          Case{Mutation::SkipRevocationExclusion, "tokenRevocationMechanism"},
          Case{Mutation::FreeOwnership, "validTokenUsage"}}) {
        CAPTURE(to_string(c.mutation));
        auto report = run_check({3, 2, 2, 1}, c.mutation);
        REQUIRE(report.ok());
        CHECK(report->violating_universes >= 1);
        REQUIRE(!report->violations.empty());
        for (const auto& v : report->violations) {
            CHECK(v.assertion == c.expected_assertion);
        }
    }
}

TEST_CASE("bounds validation and the enumeration cap") {
    CHECK(!enumerate_universes({0, 1, 1, 1}, Mutation::None,
                               [](const ModelUniverse&, uint64_t) {})
               .ok());
    CHECK(!enumerate_universes({1, 1, 1, -1}, Mutation::None,
                               [](const ModelUniverse&, uint64_t) {})
               .ok());
    CHECK(!enumerate_universes({21, 1, 1, 1}, Mutation::None,
                               [](const ModelUniverse&, uint64_t) {})
               .ok());

    auto blown = run_check({8, 4, 4, 4});
    REQUIRE(!blown.ok());
    CHECK(blown.error().find("cap") != std::string::npos);
}

// ---------------------------------------------------------------------------
// Audit replay

namespace {

json base_snapshot(const std::string& subject) {
    return json{
        {"authorities",
         {{"https://a.example",
           {{"url", "https://a.example"},
            {"access_table",
             {{subject,
               {{"/data/drone1", json::array({"read", "write"})},
                {"/data/drone2", json::array({"read"})}}}}},
            {"revoked", json::array({{{"index", 7}, {"at", 1000}}})}}}}},
        {"revocation_grace", 60}};
}

json granted_line(const std::string& subject, int64_t ts,
                  const std::string& path, const std::string& op,
                  uint64_t index, const json& caps) {
    return json{{"ts", ts},
                {"prover", subject},
                {"path", path},
                {"operation", op},
                {"decision", "granted"},
                {"stage", "storage"},
                {"status", 200},
                {"vcs", json::array({{{"iss", "https://a.example"},
                                      {"index", index},
                                      {"subject", subject},
                                      {"capabilities", caps}}})}};
}

Result<ReplayReport, std::string> replay_lines(const std::vector<json>& lines,
                                               const json& snapshot) {
    std::ostringstream log;
    for (const auto& l : lines) log << l.dump() << "\n";
    std::istringstream in(log.str());
    return replay_audit(in, snapshot);
}

}  // namespace

TEST_CASE("replay accepts conforming grants and skips denials") {
    const std::string subject(64, 'a');
    auto caps = json::parse(R"([{"/data/drone1": ["read"]}])");
    std::vector<json> lines = {
        granted_line(subject, 500, "/data/drone1/f", "read", 0, caps),
        // Within the grace window after revocation at t=1000.
        granted_line(subject, 1059, "/data/drone1/f", "read", 7, caps),
        json{{"ts", 501}, {"decision", "denied"}, {"stage", "dpop"},
             {"status", 401}, {"prover", ""}, {"path", "/data/drone1/f"},
             {"operation", "read"}},
    };
    auto report = replay_lines(lines, base_snapshot(subject));
    REQUIRE(report.ok());
    CHECK(report->lines == 3);
    CHECK(report->granted == 2);
    CHECK(report->nonconformances.empty());
}

TEST_CASE("replay flags every class of unjustified grant") {
    const std::string subject(64, 'a');
    auto caps = json::parse(R"([{"/data/drone1": ["read"]}])");
    const json snapshot = base_snapshot(subject);

    SUBCASE("grant after the grace window of a revoked credential") {
        auto report = replay_lines(
            {granted_line(subject, 1060, "/data/drone1/f", "read", 7, caps)},
            snapshot);
        REQUIRE(report.ok());
        REQUIRE(report->nonconformances.size() == 1);
        CHECK(report->nonconformances[0].reason.find("revocation") !=
              std::string::npos);
    }
    SUBCASE("credential capabilities exceeding the access table") {
        auto wide = json::parse(R"([{"/data/drone2": ["read","write"]}])");
        auto report = replay_lines(
            {granted_line(subject, 500, "/data/drone2/f", "write", 0, wide)},
            snapshot);
        REQUIRE(report.ok());
        REQUIRE(report->nonconformances.size() == 1);
        CHECK(report->nonconformances[0].reason.find("exceed") !=
              std::string::npos);
    }
    SUBCASE("unknown issuer") {
        auto line = granted_line(subject, 500, "/data/drone1/f", "read", 0, caps);
        line["vcs"][0]["iss"] = "https://unknown.example";
        auto report = replay_lines({line}, snapshot);
        REQUIRE(report.ok());
        CHECK(report->nonconformances.size() == 1);
    }
    SUBCASE("subject missing from the access table") {
        auto line = granted_line(subject, 500, "/data/drone1/f", "read", 0, caps);
        line["vcs"][0]["subject"] = std::string(64, 'b');
        auto report = replay_lines({line}, snapshot);
        REQUIRE(report.ok());
        CHECK(report->nonconformances.size() == 1);
    }
    SUBCASE("granted operation not covered by the verified capabilities") {
        auto report = replay_lines(
            {granted_line(subject, 500, "/data/drone1/f", "write", 0, caps)},
            snapshot);
        REQUIRE(report.ok());
        REQUIRE(report->nonconformances.size() == 1);
        CHECK(report->nonconformances[0].reason.find("grants") !=
              std::string::npos);
    }
    SUBCASE("malformed lines are hard errors") {
        std::istringstream in("this is not json\n");
        CHECK(!replay_audit(in, snapshot).ok());

        auto incomplete = json{{"decision", "granted"}, {"ts", 1}};
        CHECK(!replay_lines({incomplete}, snapshot).ok());
    }
}

// The live server's own audit stream must replay clean (implementation
// conforms to the model), and a snapshot tampered after the fact must not.
TEST_CASE("replay validates a live resource-server session") {
    constexpr int64_t kNow = 1750000000;
    constexpr const char* kUrl = "https://a.example";
    auto authority_key =
        jose::generate_keypair(jose::SignatureAlgorithm::EdDSA, "sm-auth");
    auto client_key =
        jose::generate_keypair(jose::SignatureAlgorithm::EdDSA, "sm-client");
    auto delegatee_key =
        jose::generate_keypair(jose::SignatureAlgorithm::EdDSA, "sm-delegatee");
    auto client_thumb = jose::thumbprint(client_key.public_jwk()).value();

    AccessTable table;
    {
        auto caps = CapabilitySet::from_json(json::parse(
            R"([{"/data/drone1": ["read","write"]}, {"/data/drone2": ["read"]}])"));
        REQUIRE(caps.ok());
        table.set(client_thumb, *caps);
    }
    Authority authority(AuthorityConfig{kUrl, std::move(table), 16384, 3600, {}},
                        authority_key);

    ResourceTable rtable;
    rtable.set("/data", {kUrl, authority_key.public_jwk()});
    ResourceConfig cfg;
    cfg.table = std::move(rtable);
    cfg.storage_root = std::filesystem::temp_directory_path().string() +
                       "/capauth-sm-replay-" + std::to_string(::getpid());
    cfg.base_url = "https://storage.example";
    cfg.revocation_mode = RevocationMode::StatusList;
    cfg.status_cache_max_age = 60;

    int64_t list_now = kNow;
    std::ostringstream log;
    ResourceServer rs(
        std::move(cfg),
        [&](const std::string& url) -> Result<std::string, TransportError> {
            if (url == authority.status_list_url())
                return authority.serve_revocation_list(list_now);
            return TransportError{"unreachable"};
        },
        HttpPost{}, [&](const json& line) { log << line.dump() << "\n"; });

    auto issue = [&]() {
        auto caps = CapabilitySet::from_json(json::parse(
            R"([{"/data/drone1": ["read","write"]}, {"/data/drone2": ["read"]}])"));
        auto token =
            authority.issue_access_token(client_key.public_jwk(), *caps, kNow);
        REQUIRE(token.ok());
        return *token;
    };
    auto request = [&](const std::string& method, const std::string& path,
                       const std::string& token, const jose::KeyPair& key,
                       int64_t now, const std::string& body = "") {
        auto proof = dpop::create_proof(key, method, "https://storage.example" +
                                                         path, now);
        return rs.handle_resource_request(method, path, proof, "DPoP " + token,
                                          body, now);
    };

    auto token = issue();
    CHECK(request("PUT", "/data/drone1/f", token, client_key, kNow, "v").status ==
          200);
    CHECK(request("GET", "/data/drone1/f", token, client_key, kNow + 1).status ==
          200);
    CHECK(request("PUT", "/data/drone2/f", token, client_key, kNow + 2, "v")
              .status == 403);

    // Delegated read, then a presentation carrying the original token.
    auto mask = CapabilitySet::from_json(json::parse(R"([{"/data/drone1": ["read"]}])"));
    auto delegated = client::delegate(token, delegatee_key.public_jwk(), *mask,
                                      client_key, kNow, 600);
    REQUIRE(delegated.ok());
    CHECK(request("GET", "/data/drone1/f", *delegated, delegatee_key, kNow + 3)
              .status == 200);
    auto vp = client::combine_presentation({token}, client_key, kNow);
    REQUIRE(vp.ok());
    CHECK(request("GET", "/data/drone2/f", *vp, client_key, kNow + 4).status ==
          404);  // authorized; absent

    // Revoke, then exercise the legitimate cache window and the refusal after.
    auto jti = jose::decode_envelope(token)->claims["jti"].get<std::string>();
    REQUIRE(authority.revoke(*authority.issued_index(jti), kNow + 5));
    CHECK(request("GET", "/data/drone1/f", token, client_key, kNow + 6).status ==
          200);  // cached status list is still fresh
    list_now = kNow + 100;
    CHECK(request("GET", "/data/drone1/f", token, client_key, kNow + 100)
              .status == 401);

    json snapshot = {{"authorities", {{kUrl, authority.snapshot()}}},
                     {"revocation_grace", 60}};
    {
        std::istringstream in(log.str());
        auto report = replay_audit(in, snapshot);
        REQUIRE(report.ok());
        CHECK(report->lines == 7);
        // Authorization was granted five times: the 404 on an authorized but
        // absent object still records a granted decision.
        CHECK(report->granted == 5);
        CHECK(report->nonconformances.empty());
    }

    // Tamper with the snapshot: drop the drone1 capabilities. Every grant
    // touching drone1 is now unjustified.
    json tampered = snapshot;
    tampered["authorities"][kUrl]["access_table"][client_thumb] =
        json{{"/data/drone2", json::array({"read"})}};
    {
        std::istringstream in(log.str());
        auto report = replay_audit(in, tampered);
        REQUIRE(report.ok());
        CHECK(report->nonconformances.size() >= 4);
    }
}

TEST_CASE("replay conformance matches server decisions on a randomized run") {
    constexpr int64_t kNow = 1750000000;
    constexpr const char* kUrl = "https://a.example";
    auto authority_key =
        jose::generate_keypair(jose::SignatureAlgorithm::EdDSA, "sm-fz-auth");
    auto client_key =
        jose::generate_keypair(jose::SignatureAlgorithm::EdDSA, "sm-fz-client");
    auto outsider_key =
        jose::generate_keypair(jose::SignatureAlgorithm::EdDSA, "sm-fz-out");
    auto client_thumb = jose::thumbprint(client_key.public_jwk()).value();

    AccessTable table;
    {
        auto caps = CapabilitySet::from_json(json::parse(
            R"([{"/data/drone1": ["read","write"]}, {"/data/drone2": ["read"]}])"));
        REQUIRE(caps.ok());
        table.set(client_thumb, *caps);
    }
    Authority authority(AuthorityConfig{kUrl, std::move(table), 16384, 3600, {}},
                        authority_key);

    ResourceTable rtable;
    rtable.set("/data", {kUrl, authority_key.public_jwk()});
    ResourceConfig cfg;
    cfg.table = std::move(rtable);
    cfg.storage_root = std::filesystem::temp_directory_path().string() +
                       "/capauth-sm-fuzz-" + std::to_string(::getpid());
    cfg.base_url = "https://storage.example";
    cfg.revocation_mode = RevocationMode::StatusList;
    cfg.status_cache_max_age = 60;

    int64_t list_now = kNow;
    std::ostringstream log;
    size_t server_grants = 0;
    ResourceServer rs(
        std::move(cfg),
        [&](const std::string& url) -> Result<std::string, TransportError> {
            if (url == authority.status_list_url())
                return authority.serve_revocation_list(list_now);
            return TransportError{"unreachable"};
        },
        HttpPost{},
        [&](const json& line) {
            log << line.dump() << "\n";
            if (line["decision"] == "granted") ++server_grants;
        });

    std::mt19937 rng(20250815);
    auto caps = CapabilitySet::from_json(json::parse(
        R"([{"/data/drone1": ["read","write"]}, {"/data/drone2": ["read"]}])"));
    std::vector<std::string> tokens;
    for (int i = 0; i < 6; ++i) {
        auto t = authority.issue_access_token(client_key.public_jwk(), *caps,
                                              kNow);
        REQUIRE(t.ok());
        tokens.push_back(*t);
    }
    // A token bound to a key the table does not know stays usable only by
    // its own holder and is never granted beyond its capabilities.
    auto foreign = authority.issue_access_token(outsider_key.public_jwk(),
                                                CapabilitySet{}, kNow);

    int64_t now = kNow;
    const char* paths[] = {"/data/drone1/a", "/data/drone1/b", "/data/drone2/a",
                           "/other/x"};
    const char* methods[] = {"GET", "PUT", "DELETE"};
    for (int i = 0; i < 300; ++i) {
        now += static_cast<int64_t>(rng() % 3);
        list_now = now;
        const std::string path = paths[rng() % 4];
        const std::string method = methods[rng() % 3];
        const std::string& token = tokens[rng() % tokens.size()];
        const jose::KeyPair& key = (rng() % 8 == 0) ? outsider_key : client_key;
        auto proof = dpop::create_proof(key, method,
                                        "https://storage.example" + path, now);
        (void)rs.handle_resource_request(method, path, proof, "DPoP " + token,
                                         "payload", now);
        if (i == 150) {
            auto jti =
                jose::decode_envelope(tokens[0])->claims["jti"].get<std::string>();
            authority.revoke(*authority.issued_index(jti), now);
        }
    }

    json snapshot = {{"authorities", {{kUrl, authority.snapshot()}}},
                     {"revocation_grace", 60}};
    std::istringstream in(log.str());
    auto report = replay_audit(in, snapshot);
    REQUIRE(report.ok());
    CHECK(report->lines == 300);
    CHECK(report->granted == server_grants);
    CHECK(report->granted > 50);  // the run actually exercised grants
    CHECK(report->nonconformances.empty());
}
