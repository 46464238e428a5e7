#pragma once

#include <memory>
#include <string>
#include <utility>

#include "capauth/authority.hpp"
#include "capauth/resource.hpp"

namespace capauth::service {

// A service bound to a socket and answering on a background thread.
// Destruction (or stop()) shuts the listener down and joins the thread.
class ServiceHandle {
public:
    ServiceHandle();
    ~ServiceHandle();
    ServiceHandle(const ServiceHandle&) = delete;
    ServiceHandle& operator=(const ServiceHandle&) = delete;

    int port() const;
    std::string base_url() const;  // http://host:port
    void stop();

    struct Impl;                   // internal
    std::unique_ptr<Impl> impl_;   // internal: touched only by serve_*
};

// Expose an authority over HTTP: POST /token, POST /introspect,
// GET /status-list, GET /jwk, and loopback-only POST /admin/revoke.
// port 0 picks any free port. Throws std::runtime_error when binding fails.
// The authority must outlive the handle.
std::unique_ptr<ServiceHandle> serve_authority(Authority& authority,
                                               const std::string& host = "127.0.0.1",
                                               int port = 0);

// Expose a resource server over HTTP: GET/PUT/POST/DELETE on every path.
std::unique_ptr<ServiceHandle> serve_resource(ResourceServer& server,
                                              const std::string& host = "127.0.0.1",
                                              int port = 0);

// Loads {"url", "key" (private JWK object or file path), "access_table",
// "status_list_capacity"?, "token_lifetime"?}. Relative key paths resolve
// against the config file's directory.
Result<std::pair<AuthorityConfig, jose::KeyPair>, std::string>
load_authority_config(const std::string& path);

// Loads {"resource_table", "storage_root", "base_url"?, "revocation_mode"?,
// "status_cache_max_age"?, "max_delegation_depth"?}. An empty base_url is
// filled in by the service executable from its listen address.
Result<ResourceConfig, std::string> load_resource_config(const std::string& path);

}  // namespace capauth::service
