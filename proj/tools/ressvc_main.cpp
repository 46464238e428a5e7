// Resource-service executable: multi-tenant object storage guarded by the
// capability verification pipeline. Audit lines (one JSON object per
// request) go to --audit or stdout.
#include <csignal>
#include <cstdio>
#include <fstream>
#include <memory>
#include <mutex>
#include <string>

#include <CLI11.hpp>

#include "capauth/client.hpp"
#include "capauth/http_service.hpp"
#include "capauth/resource.hpp"

namespace {

bool parse_listen(const std::string& listen, std::string& host, int& port) {
    auto colon = listen.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == listen.size())
        return false;
    host = listen.substr(0, colon);
    try {
        size_t used = 0;
        port = std::stoi(listen.substr(colon + 1), &used);
        if (used != listen.size() - colon - 1) return false;
    } catch (const std::exception&) {
        return false;
    }
    return port >= 0 && port <= 65535;
}

int wait_for_signal() {
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);
    int sig = 0;
    sigwait(&set, &sig);
    return sig;
}

// Revocation-infrastructure transports over real HTTP. Non-2xx responses
// surface as transport errors so the server fails closed.
capauth::HttpGet real_http_get() {
    auto transport = capauth::client::default_transport();
    return [transport](const std::string& url)
               -> capauth::Result<std::string, capauth::TransportError> {
        auto reply = transport("GET", url, {}, "", "");
        if (!reply.ok()) return capauth::TransportError{reply.error()};
        if (reply->status < 200 || reply->status >= 300)
            return capauth::TransportError{"status " +
                                           std::to_string(reply->status)};
        return std::move(reply->body);
    };
}

capauth::HttpPost real_http_post() {
    auto transport = capauth::client::default_transport();
    return [transport](const std::string& url, const std::string& body,
                       const std::string& content_type)
               -> capauth::Result<std::string, capauth::TransportError> {
        auto reply = transport("POST", url, {}, body, content_type);
        if (!reply.ok()) return capauth::TransportError{reply.error()};
        if (reply->status < 200 || reply->status >= 300)
            return capauth::TransportError{"status " +
                                           std::to_string(reply->status)};
        return std::move(reply->body);
    };
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Capability-guarded object storage"};
    std::string config_path;
    std::string listen = "127.0.0.1:0";
    std::string audit_path;
    app.add_option("--config", config_path, "JSON config file")
        ->required()
        ->check(CLI::ExistingFile);
    app.add_option("--listen", listen, "HOST:PORT bind address (port 0 = any)");
    app.add_option("--audit", audit_path,
                   "append audit JSON lines to this file (default: stdout)");
    CLI11_PARSE(app, argc, argv);

    std::string host;
    int port = 0;
    if (!parse_listen(listen, host, port)) {
        std::fprintf(stderr, "invalid --listen %s (expected HOST:PORT)\n",
                     listen.c_str());
        return 1;
    }

    auto cfg = capauth::service::load_resource_config(config_path);
    if (!cfg.ok()) {
        std::fprintf(stderr, "config: %s\n", cfg.error().c_str());
        return 1;
    }
    if (cfg->base_url.empty()) {
        // DPoP proofs bind to the URL clients dial, so it must be concrete.
        if (port == 0) {
            std::fprintf(stderr,
                         "config has no base_url: --listen needs an explicit "
                         "port so clients and DPoP proofs agree on the URL\n");
            return 1;
        }
        cfg->base_url = "http://" + host + ":" + std::to_string(port);
    }

    auto audit_stream = std::make_shared<std::ofstream>();
    if (!audit_path.empty()) {
        audit_stream->open(audit_path, std::ios::app);
        if (!*audit_stream) {
            std::fprintf(stderr, "cannot open audit file %s\n",
                         audit_path.c_str());
            return 1;
        }
    }
    auto audit_mutex = std::make_shared<std::mutex>();
    capauth::AuditSink audit = [audit_stream, audit_mutex,
                                to_file = !audit_path.empty()](
                                   const nlohmann::json& line) {
        std::lock_guard<std::mutex> lock(*audit_mutex);
        if (to_file) {
            *audit_stream << line.dump() << "\n";
            audit_stream->flush();
        } else {
            std::printf("%s\n", line.dump().c_str());
            std::fflush(stdout);
        }
    };

    capauth::ResourceServer server(std::move(*cfg), real_http_get(),
                                   real_http_post(), std::move(audit));

    try {
        auto handle = capauth::service::serve_resource(server, host, port);
        std::fprintf(stderr, "resource server %s listening on %s\n",
                     server.config().base_url.c_str(),
                     handle->base_url().c_str());
        wait_for_signal();
        handle->stop();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "serve: %s\n", e.what());
        return 1;
    }
    return 0;
}
