// Client-side flows: token requests, presentations, delegation, resource
// access — all through an inspectable fake transport.
#include <doctest.h>

#include <string>
#include <vector>

#include "capauth/authority.hpp"
#include "capauth/client.hpp"
#include "capauth/dpop.hpp"
#include "capauth/jose.hpp"

using namespace capauth;
using json = nlohmann::json;

namespace {

constexpr int64_t kNow = 1750000000;
constexpr const char* kUrl = "https://drone-services.org";

CapabilitySet caps_of(const char* spec) {
    auto parsed = CapabilitySet::from_json(json::parse(spec));
    REQUIRE(parsed.ok());
    return *parsed;
}

struct Recorded {
    std::string method, url, body, content_type;
    std::vector<std::pair<std::string, std::string>> headers;
};

std::string header_value(const Recorded& r, const std::string& name) {
    for (const auto& [k, v] : r.headers)
        if (k == name) return v;
    return "";
}

}  // namespace

TEST_CASE("request_token mints a proof for the token endpoint and parses") {
    auto key = jose::generate_keypair(jose::SignatureAlgorithm::EdDSA, "cl-key");
    Recorded seen;
    client::Transport transport =
        [&](const std::string& method, const std::string& url,
            const std::vector<std::pair<std::string, std::string>>& headers,
            const std::string& body, const std::string& content_type)
        -> Result<client::HttpReply, std::string> {
        seen = {method, url, body, content_type, headers};
        return client::HttpReply{200, json{{"access_token", "tok123"},
                                           {"token_type", "DPoP"}}
                                          .dump(),
                                 "application/json"};
    };

    auto token = client::request_token(kUrl, key, transport, kNow);
    REQUIRE(token.ok());
    CHECK(*token == "tok123");
    CHECK(seen.method == "POST");
    CHECK(seen.url == std::string(kUrl) + "/token");

    // The DPoP header is a fresh proof bound to exactly that endpoint.
    dpop::ReplayCache cache;
    auto proof = dpop::verify_proof(header_value(seen, "DPoP"), "POST",
                                    std::string(kUrl) + "/token", kNow, cache);
    REQUIRE(proof.ok());
    CHECK(*jose::thumbprint(*proof) == *jose::thumbprint(key.public_jwk()));
}

TEST_CASE("request_token against a live in-process authority") {
    auto authority_key =
        jose::generate_keypair(jose::SignatureAlgorithm::EdDSA, "cl-auth");
    auto client_key =
        jose::generate_keypair(jose::SignatureAlgorithm::EdDSA, "cl-holder");
    AccessTable table;
    table.set(*jose::thumbprint(client_key.public_jwk()),
              caps_of(R"([{"/data/drone1": ["read","write"]}])"));
    Authority authority(AuthorityConfig{kUrl, std::move(table), 16384, 3600, {}},
                        authority_key);

    client::Transport transport =
        [&](const std::string& method, const std::string& url,
            const std::vector<std::pair<std::string, std::string>>& headers,
            const std::string&, const std::string&)
        -> Result<client::HttpReply, std::string> {
        REQUIRE(url == authority.token_endpoint());
        std::string proof;
        for (const auto& [k, v] : headers)
            if (k == "DPoP") proof = v;
        auto res = authority.handle_token_request(method, proof, kNow);
        return client::HttpReply{res.status, res.body, res.content_type};
    };

    auto token = client::request_token(kUrl, client_key, transport, kNow);
    REQUIRE(token.ok());
    auto envelope = jose::verify_envelope(*token, authority.public_jwk());
    REQUIRE(envelope.ok());
    CHECK(envelope->claims["iss"] == kUrl);

    // An unknown key gets the denial surfaced with the server's error object.
    auto outsider =
        jose::generate_keypair(jose::SignatureAlgorithm::EdDSA, "cl-outsider");
    auto denied = client::request_token(kUrl, outsider, transport, kNow);
    REQUIRE(!denied.ok());
    CHECK(denied.error().kind == client::ErrorKind::Denied);
    CHECK(denied.error().server_error["error"] == "access_denied");
}

TEST_CASE("request_token maps transport and parse failures") {
    auto key = jose::generate_keypair(jose::SignatureAlgorithm::EdDSA, "cl-key");
    client::Transport down = [](const std::string&, const std::string&,
                                const std::vector<std::pair<std::string, std::string>>&,
                                const std::string&, const std::string&)
        -> Result<client::HttpReply, std::string> {
        return std::string("connection refused");
    };
    auto err = client::request_token(kUrl, key, down, kNow);
    REQUIRE(!err.ok());
    CHECK(err.error().kind == client::ErrorKind::Transport);

    client::Transport junk = [](const std::string&, const std::string&,
                                const std::vector<std::pair<std::string, std::string>>&,
                                const std::string&, const std::string&)
        -> Result<client::HttpReply, std::string> {
        return client::HttpReply{200, "not json", "text/plain"};
    };
    auto err2 = client::request_token(kUrl, key, junk, kNow);
    REQUIRE(!err2.ok());
    CHECK(err2.error().kind == client::ErrorKind::Transport);
}

namespace {

// A minimal authority-signed capability token for client-side tests.
std::string make_token(const jose::KeyPair& issuer, const json& holder_jwk,
                       const char* caps) {
    json claims = {
        {"iss", kUrl},
        {"iat", kNow},
        {"exp", kNow + 3600},
        {"jti", "client-test-jti-000000000001"},
        {"cnf", {{"jwk", holder_jwk}}},
        {"vc",
         {{"credentialSubject", {{"capabilities", json::parse(caps)}}},
          {"credentialStatus",
           {{"statusListUrl", std::string(kUrl) + "/status-list"},
            {"revocationListIndex", 0}}}}}};
    return jose::sign_envelope(json{{"typ", "at+jwt"}}, claims, issuer).compact;
}

}  // namespace

TEST_CASE("combine_presentation bundles holder-bound tokens in order") {
    auto issuer = jose::generate_keypair(jose::SignatureAlgorithm::EdDSA, "cl-iss");
    auto holder = jose::generate_keypair(jose::SignatureAlgorithm::EdDSA, "cl-h");
    auto t1 = make_token(issuer, holder.public_jwk(),
                         R"([{"/data/drone1": ["read"]}])");
    auto t2 = make_token(issuer, holder.public_jwk(),
                         R"([{"/data/drone2": ["read"]}])");

    auto vp = client::combine_presentation({t1, t2}, holder, kNow);
    REQUIRE(vp.ok());
    auto envelope = jose::verify_envelope(*vp, holder.public_jwk());
    REQUIRE(envelope.ok());
    CHECK(envelope->header["typ"] == "vp+jwt");
    CHECK(envelope->claims["iss"] == *jose::thumbprint(holder.public_jwk()));
    CHECK(envelope->claims["iat"] == kNow);
    REQUIRE(envelope->claims["vp"].is_array());
    REQUIRE(envelope->claims["vp"].size() == 2);
    CHECK(envelope->claims["vp"][0] == t1);
    CHECK(envelope->claims["vp"][1] == t2);
}

TEST_CASE("combine_presentation rejects foreign-bound tokens and empty input") {
    auto issuer = jose::generate_keypair(jose::SignatureAlgorithm::EdDSA, "cl-iss");
    auto holder = jose::generate_keypair(jose::SignatureAlgorithm::EdDSA, "cl-h");
    auto other = jose::generate_keypair(jose::SignatureAlgorithm::EdDSA, "cl-o");
    auto mine = make_token(issuer, holder.public_jwk(),
                           R"([{"/data/drone1": ["read"]}])");
    auto theirs = make_token(issuer, other.public_jwk(),
                             R"([{"/data/drone2": ["read"]}])");

    auto vp = client::combine_presentation({mine, theirs}, holder, kNow);
    REQUIRE(!vp.ok());
    CHECK(vp.error().kind == client::ErrorKind::Protocol);

    auto empty = client::combine_presentation({}, holder, kNow);
    REQUIRE(!empty.ok());
    CHECK(empty.error().kind == client::ErrorKind::Protocol);

    auto garbage = client::combine_presentation({"x.y"}, holder, kNow);
    REQUIRE(!garbage.ok());
    CHECK(garbage.error().kind == client::ErrorKind::Protocol);
}

TEST_CASE("delegate signs an attenuated, holder-bound envelope") {
    auto issuer = jose::generate_keypair(jose::SignatureAlgorithm::EdDSA, "cl-iss");
    auto holder = jose::generate_keypair(jose::SignatureAlgorithm::EdDSA, "cl-h");
    auto delegatee =
        jose::generate_keypair(jose::SignatureAlgorithm::EdDSA, "cl-d");
    auto parent = make_token(issuer, holder.public_jwk(),
                             R"([{"/data/drone1": ["read","write"]}])");
    auto mask = caps_of(R"([{"/data/drone1": ["read"]}])");

    auto d = client::delegate(parent, delegatee.public_jwk(), mask, holder,
                              kNow, 600);
    REQUIRE(d.ok());
    auto envelope = jose::verify_envelope(*d, holder.public_jwk());
    REQUIRE(envelope.ok());
    CHECK(envelope->header["typ"] == "dlg+jwt");
    CHECK(envelope->claims["iss"] == *jose::thumbprint(holder.public_jwk()));
    CHECK(envelope->claims["parent"] == parent);
    CHECK(envelope->claims["cnf"]["jwk"] == delegatee.public_jwk());
    CHECK(envelope->claims["iat"] == kNow);
    CHECK(envelope->claims["exp"] == kNow + 600);
    auto att = CapabilitySet::from_json(envelope->claims["att"]);
    REQUIRE(att.ok());
    CHECK(att->equivalent_to(mask));
}

TEST_CASE("delegate refuses widening, foreign parents, and bad lifetimes") {
    auto issuer = jose::generate_keypair(jose::SignatureAlgorithm::EdDSA, "cl-iss");
    auto holder = jose::generate_keypair(jose::SignatureAlgorithm::EdDSA, "cl-h");
    auto other = jose::generate_keypair(jose::SignatureAlgorithm::EdDSA, "cl-o");
    auto delegatee =
        jose::generate_keypair(jose::SignatureAlgorithm::EdDSA, "cl-d");
    auto parent = make_token(issuer, holder.public_jwk(),
                             R"([{"/data/drone1": ["read"]}])");

    // Mask asks for write the parent does not have.
    auto widen = client::delegate(parent, delegatee.public_jwk(),
                                  caps_of(R"([{"/data/drone1": ["read","write"]}])"),
                                  holder, kNow, 600);
    REQUIRE(!widen.ok());
    CHECK(widen.error().kind == client::ErrorKind::Protocol);

    // Mask names a path outside the parent.
    auto outside = client::delegate(parent, delegatee.public_jwk(),
                                    caps_of(R"([{"/data/other": ["read"]}])"),
                                    holder, kNow, 600);
    REQUIRE(!outside.ok());

    // The signer does not hold the parent.
    auto not_mine = client::delegate(parent, delegatee.public_jwk(),
                                     caps_of(R"([{"/data/drone1": ["read"]}])"),
                                     other, kNow, 600);
    REQUIRE(!not_mine.ok());

    // Degenerate lifetime and empty mask.
    CHECK(!client::delegate(parent, delegatee.public_jwk(),
                            caps_of(R"([{"/data/drone1": ["read"]}])"), holder,
                            kNow, 0)
               .ok());
    CHECK(!client::delegate(parent, delegatee.public_jwk(), CapabilitySet{},
                            holder, kNow, 600)
               .ok());
}

TEST_CASE("declared_capabilities follows delegation chains structurally") {
    auto issuer = jose::generate_keypair(jose::SignatureAlgorithm::EdDSA, "cl-iss");
    auto holder = jose::generate_keypair(jose::SignatureAlgorithm::EdDSA, "cl-h");
    auto d1 = jose::generate_keypair(jose::SignatureAlgorithm::EdDSA, "cl-d1");
    auto d2 = jose::generate_keypair(jose::SignatureAlgorithm::EdDSA, "cl-d2");
    auto parent = make_token(
        issuer, holder.public_jwk(),
        R"([{"/data/drone1": ["read","write"]}, {"/data/drone2": ["read"]}])");

    auto plain = client::declared_capabilities(parent);
    REQUIRE(plain.ok());
    CHECK(plain->grants("/data/drone1/x", Operation::Write));
    CHECK(plain->grants("/data/drone2/x", Operation::Read));

    auto hop1 = client::delegate(
        parent, d1.public_jwk(),
        caps_of(R"([{"/data/drone1": ["read","write"]}])"), holder, kNow, 600);
    REQUIRE(hop1.ok());
    auto hop2 = client::delegate(*hop1, d2.public_jwk(),
                                 caps_of(R"([{"/data/drone1": ["read"]}])"), d1,
                                 kNow, 600);
    REQUIRE(hop2.ok());

    auto effective = client::declared_capabilities(*hop2);
    REQUIRE(effective.ok());
    CHECK(effective->grants("/data/drone1/x", Operation::Read));
    CHECK(!effective->grants("/data/drone1/x", Operation::Write));
    CHECK(!effective->grants("/data/drone2/x", Operation::Read));

    // A second-hop mask cannot resurrect what the first hop dropped.
    auto resurrect = client::delegate(
        *hop1, d2.public_jwk(), caps_of(R"([{"/data/drone2": ["read"]}])"), d1,
        kNow, 600);
    REQUIRE(!resurrect.ok());

    CHECK(!client::declared_capabilities("garbage").ok());
}

TEST_CASE("access_resource sends token and matching proof, returns replies") {
    auto key = jose::generate_keypair(jose::SignatureAlgorithm::EdDSA, "cl-key");
    const std::string url = "https://storage.example/data/drone1/f";
    Recorded seen;
    int status_to_return = 200;
    client::Transport transport =
        [&](const std::string& method, const std::string& u,
            const std::vector<std::pair<std::string, std::string>>& headers,
            const std::string& body, const std::string& content_type)
        -> Result<client::HttpReply, std::string> {
        seen = {method, u, body, content_type, headers};
        return client::HttpReply{status_to_return, "payload",
                                 "application/octet-stream"};
    };

    auto reply = client::access_resource(url, "tok", key, "PUT", "bytes",
                                         transport, kNow);
    REQUIRE(reply.ok());
    CHECK(reply->status == 200);
    CHECK(reply->body == "payload");
    CHECK(seen.method == "PUT");
    CHECK(seen.url == url);
    CHECK(seen.body == "bytes");
    CHECK(header_value(seen, "Authorization") == "DPoP tok");

    dpop::ReplayCache cache;
    auto proof =
        dpop::verify_proof(header_value(seen, "DPoP"), "PUT", url, kNow, cache);
    REQUIRE(proof.ok());

    // Denials come back as ordinary replies for the caller to interpret.
    status_to_return = 403;
    auto denied = client::access_resource(url, "tok", key, "GET", "",
                                          transport, kNow);
    REQUIRE(denied.ok());
    CHECK(denied->status == 403);

    // Proofs are minted per request: two calls never share a jti.
    auto again = client::access_resource(url, "tok", key, "GET", "", transport,
                                         kNow);
    REQUIRE(again.ok());
    auto jti1 = jose::decode_envelope(header_value(seen, "DPoP"));
    auto first = client::access_resource(url, "tok", key, "GET", "", transport,
                                         kNow);
    auto jti2 = jose::decode_envelope(header_value(seen, "DPoP"));
    REQUIRE(jti1.ok());
    REQUIRE(jti2.ok());
    CHECK(jti1->claims["jti"] != jti2->claims["jti"]);

    client::Transport down = [](const std::string&, const std::string&,
                                const std::vector<std::pair<std::string, std::string>>&,
                                const std::string&, const std::string&)
        -> Result<client::HttpReply, std::string> {
        return std::string("no route to host");
    };
    auto err = client::access_resource(url, "tok", key, "GET", "", down, kNow);
    REQUIRE(!err.ok());
    CHECK(err.error().kind == client::ErrorKind::Transport);
}

TEST_CASE("introspect and revoke hit the expected endpoints") {
    Recorded seen;
    client::Transport transport =
        [&](const std::string& method, const std::string& url,
            const std::vector<std::pair<std::string, std::string>>& headers,
            const std::string& body, const std::string& content_type)
        -> Result<client::HttpReply, std::string> {
        seen = {method, url, body, content_type, headers};
        if (url.find("/introspect") != std::string::npos)
            return client::HttpReply{200, R"({"active": true})",
                                     "application/json"};
        return client::HttpReply{200, R"({"index": 3, "revoked": true})",
                                 "application/json"};
    };

    auto active = client::introspect(kUrl, "tok.abc.def", transport);
    REQUIRE(active.ok());
    CHECK((*active)["active"] == true);
    CHECK(seen.method == "POST");
    CHECK(seen.url == std::string(kUrl) + "/introspect");
    CHECK(seen.body == "token=tok.abc.def");
    CHECK(seen.content_type == "application/x-www-form-urlencoded");

    auto revoked = client::revoke(kUrl, 3, transport);
    REQUIRE(revoked.ok());
    CHECK((*revoked)["revoked"] == true);
    CHECK(seen.url == std::string(kUrl) + "/admin/revoke");
    CHECK(json::parse(seen.body)["index"] == 3);
}
