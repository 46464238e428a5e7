// Authorization-service executable: loads a JSON config and answers
// POST /token, POST /introspect, GET /status-list, GET /jwk, and the
// loopback-only POST /admin/revoke until interrupted.
#include <csignal>
#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "capauth/authority.hpp"
#include "capauth/http_service.hpp"

namespace {

// "HOST:PORT" -> pair; IPv6 literals are out of scope for this tool.
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

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Capability token authority"};
    std::string config_path;
    std::string listen = "127.0.0.1:0";
    app.add_option("--config", config_path, "JSON config file")
        ->required()
        ->check(CLI::ExistingFile);
    app.add_option("--listen", listen, "HOST:PORT bind address (port 0 = any)");
    CLI11_PARSE(app, argc, argv);

    std::string host;
    int port = 0;
    if (!parse_listen(listen, host, port)) {
        std::fprintf(stderr, "invalid --listen %s (expected HOST:PORT)\n",
                     listen.c_str());
        return 1;
    }

    auto loaded = capauth::service::load_authority_config(config_path);
    if (!loaded.ok()) {
        std::fprintf(stderr, "config: %s\n", loaded.error().c_str());
        return 1;
    }
    capauth::Authority authority(std::move(loaded->first),
                                 std::move(loaded->second));

    try {
        auto handle = capauth::service::serve_authority(authority, host, port);
        std::printf("authority %s listening on %s\n", authority.url().c_str(),
                    handle->base_url().c_str());
        std::fflush(stdout);
        wait_for_signal();
        handle->stop();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "serve: %s\n", e.what());
        return 1;
    }
    return 0;
}
