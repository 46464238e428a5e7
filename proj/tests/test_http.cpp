// End-to-end coverage of the HTTP layer: real loopback sockets, the JSON
// config loaders, and the client's default transport.
#include <doctest.h>
#include <httplib.h>
#include <unistd.h>

#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>

#include "capauth/authority.hpp"
#include "capauth/client.hpp"
#include "capauth/dpop.hpp"
#include "capauth/http_service.hpp"
#include "capauth/resource.hpp"

using namespace capauth;
using json = nlohmann::json;

namespace {

int64_t wall_clock() { return static_cast<int64_t>(std::time(nullptr)); }

std::filesystem::path fresh_dir(const std::string& tag) {
    auto dir = std::filesystem::temp_directory_path() /
               ("capauth-http-" + tag + "-" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
    REQUIRE(out.good());
}

HttpGet real_http_get() {
    auto transport = client::default_transport();
    return [transport](const std::string& url)
               -> Result<std::string, TransportError> {
        auto reply = transport("GET", url, {}, "", "");
        if (!reply.ok()) return TransportError{reply.error()};
        if (reply->status < 200 || reply->status >= 300)
            return TransportError{"status " + std::to_string(reply->status)};
        return std::move(reply->body);
    };
}

HttpPost real_http_post() {
    auto transport = client::default_transport();
    return [transport](const std::string& url, const std::string& body,
                       const std::string& content_type)
               -> Result<std::string, TransportError> {
        auto reply = transport("POST", url, {}, body, content_type);
        if (!reply.ok()) return TransportError{reply.error()};
        if (reply->status < 200 || reply->status >= 300)
            return TransportError{"status " + std::to_string(reply->status)};
        return std::move(reply->body);
    };
}

// A resource server needs its public URL before binding; scan a port range
// so parallel test runs do not collide.
struct BoundResource {
    std::unique_ptr<ResourceServer> server;
    std::unique_ptr<service::ServiceHandle> handle;
    std::string base_url;
};

BoundResource bind_resource(ResourceConfig cfg_template) {
    for (int port = 18870; port < 18930; ++port) {
        ResourceConfig cfg = cfg_template;
        cfg.base_url = "http://127.0.0.1:" + std::to_string(port);
        auto server = std::make_unique<ResourceServer>(
            std::move(cfg), real_http_get(), real_http_post(), AuditSink{});
        try {
            auto handle = service::serve_resource(*server, "127.0.0.1", port);
            std::string url = handle->base_url();
            return {std::move(server), std::move(handle), std::move(url)};
        } catch (const std::runtime_error&) {
            continue;  // port taken; try the next one
        }
    }
    REQUIRE(false);
    return {};
}

}  // namespace

TEST_CASE("config loaders accept the documented shapes and resolve paths") {
    auto dir = fresh_dir("cfg");
    auto key = jose::generate_keypair(jose::SignatureAlgorithm::EdDSA);
    write_file(dir / "authority.jwk", key.private_jwk().dump());

    const std::string thumb = jose::thumbprint(key.public_jwk()).value();
    json authority_cfg = {
        {"url", "http://127.0.0.1:1"},
        {"key", "authority.jwk"},  // relative to the config file
        {"access_table",
         {{thumb, {{"/data/drone1", json::array({"read", "write"})}}}}},
        {"status_list_capacity", 256},
        {"token_lifetime", 120}};
    write_file(dir / "authority.json", authority_cfg.dump());

    auto loaded = service::load_authority_config((dir / "authority.json").string());
    REQUIRE(loaded.ok());
    CHECK(loaded->first.url == "http://127.0.0.1:1");
    CHECK(loaded->first.status_list_capacity == 256);
    CHECK(loaded->first.token_lifetime == 120);
    CHECK(loaded->first.access_table.find(thumb).has_value());
    CHECK(loaded->second.public_jwk() == key.public_jwk());

    json resource_cfg = {
        {"resource_table",
         {{"/data", {{"url", "http://127.0.0.1:1"}, {"jwk", key.public_jwk()}}}}},
        {"storage_root", (dir / "store").string()},
        {"revocation_mode", "introspection"},
        {"status_cache_max_age", 5},
        {"max_delegation_depth", 2}};
    write_file(dir / "resource.json", resource_cfg.dump());

    auto rcfg = service::load_resource_config((dir / "resource.json").string());
    REQUIRE(rcfg.ok());
    CHECK(rcfg->base_url.empty());
    CHECK(rcfg->revocation_mode == RevocationMode::Introspection);
    CHECK(rcfg->status_cache_max_age == 5);
    CHECK(rcfg->max_delegation_depth == 2);
    CHECK(rcfg->table.find_by_url("http://127.0.0.1:1").has_value());

    SUBCASE("loader errors are descriptive") {
        CHECK(!service::load_authority_config((dir / "missing.json").string())
                   .ok());
        write_file(dir / "broken.json", "{nope");
        CHECK(!service::load_authority_config((dir / "broken.json").string())
                   .ok());
        json no_key = authority_cfg;
        no_key.erase("key");
        write_file(dir / "nokey.json", no_key.dump());
        CHECK(!service::load_authority_config((dir / "nokey.json").string()).ok());
        json bad_mode = resource_cfg;
        bad_mode["revocation_mode"] = "carrier-pigeon";
        write_file(dir / "badmode.json", bad_mode.dump());
        CHECK(!service::load_resource_config((dir / "badmode.json").string())
                   .ok());
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("token, access, introspection, and revocation over real sockets") {
    auto dir = fresh_dir("e2e");
    auto authority_key = jose::generate_keypair(jose::SignatureAlgorithm::EdDSA);
    auto client_key = jose::generate_keypair(jose::SignatureAlgorithm::EdDSA);
    const std::string thumb = jose::thumbprint(client_key.public_jwk()).value();

    AccessTable table;
    auto caps = CapabilitySet::from_json(json::parse(
        R"([{"/data/drone1": ["read","write"]}, {"/data/drone2": ["read"]}])"));
    REQUIRE(caps.ok());
    table.set(thumb, *caps);

    // The authority's advertised URL must match its socket; bind first, then
    // construct the authority around the resulting URL.
    auto placeholder = std::make_unique<Authority>(
        AuthorityConfig{"http://placeholder", AccessTable{}, 64, 3600, {}},
        authority_key);
    auto pre = service::serve_authority(*placeholder, "127.0.0.1", 0);
    const std::string authority_url = pre->base_url();
    const int authority_port = pre->port();
    pre->stop();
    placeholder.reset();

    Authority authority(
        AuthorityConfig{authority_url, std::move(table), 64, 3600, {}},
        authority_key);
    auto auth_handle =
        service::serve_authority(authority, "127.0.0.1", authority_port);
    CHECK(auth_handle->base_url() == authority_url);

    ResourceConfig rcfg;
    ResourceTable rtable;
    rtable.set("/data", {authority_url, authority_key.public_jwk()});
    rcfg.table = std::move(rtable);
    rcfg.storage_root = (dir / "store").string();
    rcfg.revocation_mode = RevocationMode::Introspection;
    auto bound = bind_resource(std::move(rcfg));

    auto transport = client::default_transport();
    auto token =
        client::request_token(authority_url, client_key, transport, wall_clock());
    REQUIRE(token.ok());

    auto put = client::access_resource(bound.base_url + "/data/drone1/f", *token,
                                       client_key, "PUT", "payload", transport,
                                       wall_clock());
    REQUIRE(put.ok());
    CHECK(put->status == 200);

    auto get = client::access_resource(bound.base_url + "/data/drone1/f", *token,
                                       client_key, "GET", "", transport,
                                       wall_clock());
    REQUIRE(get.ok());
    CHECK(get->status == 200);
    CHECK(get->body == "payload");
    CHECK(get->content_type == "application/octet-stream");

    auto denied = client::access_resource(bound.base_url + "/data/drone2/f",
                                          *token, client_key, "PUT", "x",
                                          transport, wall_clock());
    REQUIRE(denied.ok());
    CHECK(denied->status == 403);

    SUBCASE("DPoP proof bound to a different URL is rejected") {
        auto proof = dpop::create_proof(client_key, "GET",
                                        "http://evil.example/data/drone1/f",
                                        wall_clock());
        httplib::Client raw("127.0.0.1", bound.handle->port());
        auto res = raw.Get("/data/drone1/f",
                           {{"DPoP", proof}, {"Authorization", "DPoP " + *token}});
        REQUIRE(res);
        CHECK(res->status == 401);
    }

    SUBCASE("introspection flips after revocation; denial follows") {
        auto before = client::introspect(authority_url, *token, transport);
        REQUIRE(before.ok());
        CHECK((*before)["active"] == true);

        auto revoked = client::revoke(authority_url, 0, transport);
        REQUIRE(revoked.ok());
        CHECK((*revoked)["revoked"] == true);

        auto after = client::introspect(authority_url, *token, transport);
        REQUIRE(after.ok());
        CHECK((*after)["active"] == false);

        auto blocked = client::access_resource(
            bound.base_url + "/data/drone1/f", *token, client_key, "GET", "",
            transport, wall_clock());
        REQUIRE(blocked.ok());
        CHECK(blocked->status == 401);
    }

    SUBCASE("unlisted keys get access_denied with a server error object") {
        auto outsider = jose::generate_keypair(jose::SignatureAlgorithm::EdDSA);
        auto refused =
            client::request_token(authority_url, outsider, transport,
                                  wall_clock());
        REQUIRE(!refused.ok());
        CHECK(refused.error().kind == client::ErrorKind::Denied);
        CHECK(refused.error().server_error["error"] == "access_denied");
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("authority endpoints: status list, jwk, malformed introspection") {
    auto key = jose::generate_keypair(jose::SignatureAlgorithm::EdDSA);
    Authority authority(AuthorityConfig{"http://a", AccessTable{}, 64, 3600, {}},
                        key);
    auto handle = service::serve_authority(authority);
    httplib::Client raw("127.0.0.1", handle->port());

    auto status = raw.Get("/status-list");
    REQUIRE(status);
    CHECK(status->status == 200);
    CHECK(status->get_header_value("Content-Type") == "application/jwt");
    auto envelope = jose::decode_envelope(status->body);
    REQUIRE(envelope.ok());
    CHECK(envelope->header["typ"] == "statuslist+jwt");

    auto jwk = raw.Get("/jwk");
    REQUIRE(jwk);
    CHECK(jwk->status == 200);
    CHECK(json::parse(jwk->body) == key.public_jwk());

    auto empty = raw.Post("/introspect", "", "application/x-www-form-urlencoded");
    REQUIRE(empty);
    CHECK(empty->status == 400);

    auto inactive = raw.Post("/introspect", "token=not-a-real-token",
                             "application/x-www-form-urlencoded");
    REQUIRE(inactive);
    CHECK(inactive->status == 200);
    CHECK(json::parse(inactive->body)["active"] == false);

    auto unknown = raw.Post("/admin/revoke", R"({"index": 99})",
                            "application/json");
    REQUIRE(unknown);
    CHECK(unknown->status == 404);
}

TEST_CASE("stopping a service frees its port for reuse") {
    auto key = jose::generate_keypair(jose::SignatureAlgorithm::EdDSA);
    Authority authority(AuthorityConfig{"http://a", AccessTable{}, 64, 3600, {}},
                        key);
    auto first = service::serve_authority(authority);
    const int port = first->port();
    first->stop();
    auto second = service::serve_authority(authority, "127.0.0.1", port);
    CHECK(second->port() == port);
    httplib::Client raw("127.0.0.1", port);
    auto jwk = raw.Get("/jwk");
    REQUIRE(jwk);
    CHECK(jwk->status == 200);
}
