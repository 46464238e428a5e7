#include "capauth/http_service.hpp"

#include <httplib.h>

#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace capauth::service {

namespace fs = std::filesystem;

struct ServiceHandle::Impl {
    httplib::Server server;
    std::thread thread;
    std::string host;
    int port = 0;
};

ServiceHandle::ServiceHandle() : impl_(std::make_unique<Impl>()) {}

ServiceHandle::~ServiceHandle() { stop(); }

void ServiceHandle::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

int ServiceHandle::port() const { return impl_->port; }

std::string ServiceHandle::base_url() const {
    return "http://" + impl_->host + ":" + std::to_string(impl_->port);
}

namespace {

int64_t wall_clock() { return static_cast<int64_t>(std::time(nullptr)); }

void send(httplib::Response& res, const HttpResponse& out) {
    res.status = out.status;
    res.set_content(out.body, out.content_type);
}

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

bool is_loopback_peer(const httplib::Request& req) {
    return req.remote_addr == "127.0.0.1" || req.remote_addr == "::1" ||
           req.remote_addr.rfind("127.", 0) == 0;
}

std::unique_ptr<ServiceHandle> launch(std::unique_ptr<ServiceHandle> handle,
                                      const std::string& host, int port) {
    auto& impl = *handle->impl_;
    impl.host = host;
    if (port == 0) {
        int bound = impl.server.bind_to_any_port(host);
        if (bound <= 0) {
            throw std::runtime_error("cannot bind a port on " + host);
        }
        impl.port = bound;
    } else {
        if (!impl.server.bind_to_port(host, port)) {
            throw std::runtime_error("cannot bind " + host + ":" +
                                     std::to_string(port));
        }
        impl.port = port;
    }
    auto* server = &impl.server;
    impl.thread = std::thread([server] { server->listen_after_bind(); });
    server->wait_until_ready();
    return handle;
}

}  // namespace

std::unique_ptr<ServiceHandle> serve_authority(Authority& authority,
                                               const std::string& host,
                                               int port) {
    auto handle = std::unique_ptr<ServiceHandle>(new ServiceHandle());
    auto& srv = handle->impl_->server;

    srv.Post("/token", [&authority](const httplib::Request& req,
                                    httplib::Response& res) {
        send(res, authority.handle_token_request(
                      "POST", req.get_header_value("DPoP"), wall_clock()));
    });

    srv.Post("/introspect", [&authority](const httplib::Request& req,
                                         httplib::Response& res) {
        std::string token;
        if (req.has_param("token")) {
            token = req.get_param_value("token");
        } else {
            auto body = json::parse(req.body, nullptr, false);
            if (body.is_object() && body.contains("token") &&
                body["token"].is_string()) {
                token = body["token"].get<std::string>();
            }
        }
        if (token.empty()) {
            send_json(res, 400, {{"error", "invalid_request"}});
            return;
        }
        send_json(res, 200, authority.handle_introspection(token, wall_clock()));
    });

    srv.Get("/status-list", [&authority](const httplib::Request&,
                                         httplib::Response& res) {
        res.status = 200;
        res.set_content(authority.serve_revocation_list(wall_clock()),
                        "application/jwt");
    });

    srv.Get("/jwk", [&authority](const httplib::Request&,
                                 httplib::Response& res) {
        send_json(res, 200, authority.public_jwk());
    });

    srv.Post("/admin/revoke", [&authority](const httplib::Request& req,
                                           httplib::Response& res) {
        if (!is_loopback_peer(req)) {
            send_json(res, 403, {{"error", "forbidden"}});
            return;
        }
        auto body = json::parse(req.body, nullptr, false);
        if (!body.is_object() || !body.contains("index") ||
            !body["index"].is_number_unsigned()) {
            send_json(res, 400, {{"error", "invalid_request"}});
            return;
        }
        size_t index = body["index"].get<size_t>();
        if (!authority.revoke(index, wall_clock())) {
            send_json(res, 404, {{"error", "unknown_index"}});
            return;
        }
        send_json(res, 200, {{"index", index}, {"revoked", true}});
    });

    // Audit-replay support: the access table and revocation times as one
    // consistent snapshot.
    srv.Get("/admin/snapshot", [&authority](const httplib::Request& req,
                                            httplib::Response& res) {
        if (!is_loopback_peer(req)) {
            send_json(res, 403, {{"error", "forbidden"}});
            return;
        }
        send_json(res, 200, authority.snapshot());
    });

    return launch(std::move(handle), host, port);
}

std::unique_ptr<ServiceHandle> serve_resource(ResourceServer& server,
                                              const std::string& host,
                                              int port) {
    auto handle = std::unique_ptr<ServiceHandle>(new ServiceHandle());
    auto& srv = handle->impl_->server;

    auto forward = [&server](const httplib::Request& req,
                             httplib::Response& res) {
        send(res, server.handle_resource_request(
                      req.method, req.path, req.get_header_value("DPoP"),
                      req.get_header_value("Authorization"), req.body,
                      wall_clock()));
    };
    srv.Get(R"(/.*)", forward);
    srv.Put(R"(/.*)", forward);
    srv.Post(R"(/.*)", forward);
    srv.Delete(R"(/.*)", forward);

    return launch(std::move(handle), host, port);
}

namespace {

Result<json, std::string> read_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return "cannot open " + path;
    std::ostringstream buf;
    buf << in.rdbuf();
    auto parsed = json::parse(buf.str(), nullptr, false);
    if (parsed.is_discarded()) return "invalid JSON in " + path;
    return parsed;
}

std::string resolve_relative(const std::string& config_path,
                             const std::string& member) {
    fs::path p(member);
    if (p.is_absolute()) return member;
    return (fs::path(config_path).parent_path() / p).string();
}

}  // namespace

Result<std::pair<AuthorityConfig, jose::KeyPair>, std::string>
load_authority_config(const std::string& path) {
    auto doc = read_json_file(path);
    if (!doc) return doc.error();
    if (!doc->is_object()) return std::string("config must be a JSON object");

    AuthorityConfig cfg;
    if (!doc->contains("url") || !(*doc)["url"].is_string()) {
        return std::string("config needs a string \"url\"");
    }
    cfg.url = (*doc)["url"].get<std::string>();

    if (!doc->contains("access_table")) {
        return std::string("config needs an \"access_table\"");
    }
    auto table = AccessTable::from_json((*doc)["access_table"]);
    if (!table) return "access_table: " + table.error();
    cfg.access_table = std::move(*table);

    if (doc->contains("status_list_capacity")) {
        if (!(*doc)["status_list_capacity"].is_number_unsigned()) {
            return std::string("status_list_capacity must be a positive integer");
        }
        cfg.status_list_capacity = (*doc)["status_list_capacity"].get<size_t>();
    }
    if (doc->contains("token_lifetime")) {
        if (!(*doc)["token_lifetime"].is_number_integer() ||
            (*doc)["token_lifetime"].get<int64_t>() <= 0) {
            return std::string("token_lifetime must be a positive integer");
        }
        cfg.token_lifetime = (*doc)["token_lifetime"].get<int64_t>();
    }

    if (!doc->contains("key")) {
        return std::string("config needs a \"key\" (private JWK or file path)");
    }
    json jwk;
    if ((*doc)["key"].is_string()) {
        auto loaded =
            read_json_file(resolve_relative(path, (*doc)["key"].get<std::string>()));
        if (!loaded) return loaded.error();
        jwk = std::move(*loaded);
    } else if ((*doc)["key"].is_object()) {
        jwk = (*doc)["key"];
    } else {
        return std::string("\"key\" must be a JWK object or a file path");
    }
    auto key = jose::KeyPair::from_private_jwk(jwk);
    if (!key) return "key: " + jose::to_string(key.error());

    return std::make_pair(std::move(cfg), std::move(*key));
}

Result<ResourceConfig, std::string> load_resource_config(
    const std::string& path) {
    auto doc = read_json_file(path);
    if (!doc) return doc.error();
    if (!doc->is_object()) return std::string("config must be a JSON object");

    ResourceConfig cfg;
    if (!doc->contains("resource_table")) {
        return std::string("config needs a \"resource_table\"");
    }
    auto table = ResourceTable::from_json((*doc)["resource_table"]);
    if (!table) return "resource_table: " + table.error();
    cfg.table = std::move(*table);

    if (!doc->contains("storage_root") || !(*doc)["storage_root"].is_string()) {
        return std::string("config needs a string \"storage_root\"");
    }
    cfg.storage_root =
        resolve_relative(path, (*doc)["storage_root"].get<std::string>());

    if (doc->contains("base_url")) {
        if (!(*doc)["base_url"].is_string()) {
            return std::string("base_url must be a string");
        }
        cfg.base_url = (*doc)["base_url"].get<std::string>();
    }
    if (doc->contains("revocation_mode")) {
        if (!(*doc)["revocation_mode"].is_string()) {
            return std::string("revocation_mode must be a string");
        }
        auto mode =
            parse_revocation_mode((*doc)["revocation_mode"].get<std::string>());
        if (!mode) {
            return std::string(
                "revocation_mode must be \"introspection\" or \"status-list\"");
        }
        cfg.revocation_mode = *mode;
    }
    if (doc->contains("status_cache_max_age")) {
        if (!(*doc)["status_cache_max_age"].is_number_integer() ||
            (*doc)["status_cache_max_age"].get<int64_t>() < 0) {
            return std::string("status_cache_max_age must be a non-negative integer");
        }
        cfg.status_cache_max_age = (*doc)["status_cache_max_age"].get<int64_t>();
    }
    if (doc->contains("max_delegation_depth")) {
        if (!(*doc)["max_delegation_depth"].is_number_unsigned()) {
            return std::string("max_delegation_depth must be a positive integer");
        }
        cfg.max_delegation_depth = (*doc)["max_delegation_depth"].get<size_t>();
    }
    return cfg;
}

}  // namespace capauth::service
