// Operator CLI: key generation, token acquisition, presentation combination,
// delegation, authenticated resource access, introspection, revocation, and
// the benchmark harness.
//
// Exit codes: 0 success, 1 transport/parse/input error, 2 authorization
// denial (including HTTP 4xx/5xx on get/put).
#include <sys/stat.h>

#include <cstdio>
#include <ctime>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "capauth/bench.hpp"
#include "capauth/client.hpp"
#include "capauth/jose.hpp"

using json = nlohmann::json;
using namespace capauth;

namespace {

int exit_for(client::ErrorKind kind) {
    return kind == client::ErrorKind::Denied ? 2 : 1;
}

int fail(const client::Error& err) {
    std::fprintf(stderr, "error: %s\n", err.message.c_str());
    if (!err.server_error.is_null())
        std::fprintf(stderr, "server: %s\n", err.server_error.dump().c_str());
    return exit_for(err.kind);
}

bool write_output(const std::string& out_path, const std::string& content,
                  bool trailing_newline) {
    if (out_path.empty()) {
        std::fwrite(content.data(), 1, content.size(), stdout);
        if (trailing_newline && (content.empty() || content.back() != '\n'))
            std::fputc('\n', stdout);
        return true;
    }
    std::ofstream out(out_path, std::ios::binary);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (trailing_newline && (content.empty() || content.back() != '\n'))
        out.put('\n');
    if (!out) {
        std::fprintf(stderr, "cannot write %s\n", out_path.c_str());
        return false;
    }
    return true;
}

std::optional<std::string> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string trim(std::string s) {
    while (!s.empty() && (s.back() == '\n' || s.back() == '\r' ||
                          s.back() == ' ' || s.back() == '\t'))
        s.pop_back();
    size_t start = s.find_first_not_of(" \t\r\n");
    return start == std::string::npos ? "" : s.substr(start);
}

std::optional<jose::KeyPair> load_key(const std::string& path) {
    if (path.empty()) {
        std::fprintf(stderr, "this command needs --key PATH\n");
        return std::nullopt;
    }
    auto text = read_file(path);
    if (!text) {
        std::fprintf(stderr, "cannot read key file %s\n", path.c_str());
        return std::nullopt;
    }
    auto jwk = json::parse(*text, nullptr, false);
    if (jwk.is_discarded()) {
        std::fprintf(stderr, "key file %s is not valid JSON\n", path.c_str());
        return std::nullopt;
    }
    auto key = jose::KeyPair::from_private_jwk(jwk);
    if (!key.ok()) {
        std::fprintf(stderr, "key file %s: %s\n", path.c_str(),
                     jose::to_string(key.error()).c_str());
        return std::nullopt;
    }
    return std::move(*key);
}

std::optional<std::string> load_token(const std::string& path) {
    auto text = read_file(path);
    if (!text) {
        std::fprintf(stderr, "cannot read token file %s\n", path.c_str());
        return std::nullopt;
    }
    auto token = trim(*text);
    if (token.empty()) {
        std::fprintf(stderr, "token file %s is empty\n", path.c_str());
        return std::nullopt;
    }
    return token;
}

// Inline JSON first; otherwise a path to a JSON file.
std::optional<json> load_json_arg(const std::string& value) {
    auto inline_json = json::parse(value, nullptr, false);
    if (!inline_json.is_discarded()) return inline_json;
    auto text = read_file(value);
    if (!text) return std::nullopt;
    auto from_file = json::parse(*text, nullptr, false);
    if (from_file.is_discarded()) return std::nullopt;
    return from_file;
}

int64_t wall_clock() { return static_cast<int64_t>(std::time(nullptr)); }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Capability-token client"};
    app.require_subcommand(1);
    app.fallthrough();  // --key/--out/--json may follow the subcommand

    std::string key_path, out_path;
    bool as_json = false;
    app.add_option("--key", key_path, "private JWK file");
    app.add_option("--out", out_path, "write output here instead of stdout");
    app.add_flag("--json", as_json, "machine-readable JSON output");

    auto* keygen = app.add_subcommand("keygen", "generate a private JWK");
    std::string alg_name = "EdDSA";
    keygen->add_option("--alg", alg_name, "EdDSA | RS256 | PS256 | ES512");

    auto* token_cmd =
        app.add_subcommand("token", "request an access token (DPoP-proven)");
    std::string authority_url;
    token_cmd->add_option("--authority", authority_url, "authority base URL")
        ->required();

    std::string url, token_path, data_path, body_inline;
    auto* get = app.add_subcommand("get", "read an object");
    get->add_option("url", url, "object URL")->required();
    get->add_option("--token", token_path, "compact token/VP file")->required();

    auto* put = app.add_subcommand("put", "write an object");
    put->add_option("url", url, "object URL")->required();
    put->add_option("--token", token_path, "compact token/VP file")->required();
    put->add_option("--data", data_path, "body file (default: stdin)");
    put->add_option("--body", body_inline, "inline body string");

    auto* combine = app.add_subcommand(
        "combine", "bundle tokens into a holder-signed presentation");
    std::vector<std::string> token_files;
    combine->add_option("tokens", token_files, "token files (one compact each)")
        ->required();

    auto* delegate_cmd =
        app.add_subcommand("delegate", "sign an attenuated delegation");
    std::string delegatee_path, mask_arg;
    int64_t lifetime = 3600;
    delegate_cmd->add_option("--token", token_path, "parent token file")
        ->required();
    delegate_cmd
        ->add_option("--delegatee", delegatee_path, "delegatee public JWK file")
        ->required();
    delegate_cmd
        ->add_option("--mask", mask_arg,
                     "attenuation mask, inline JSON or a file path, e.g. "
                     "[{\"/data/drone1\": [\"read\"]}]")
        ->required();
    delegate_cmd->add_option("--lifetime", lifetime, "seconds (default 3600)");

    auto* introspect_cmd =
        app.add_subcommand("introspect", "query a token's live state");
    introspect_cmd->add_option("--authority", authority_url, "authority base URL")
        ->required();
    introspect_cmd->add_option("--token", token_path, "compact token file")
        ->required();

    auto* revoke_cmd = app.add_subcommand("revoke", "revoke by list index");
    size_t revoke_index = 0;
    revoke_cmd->add_option("--authority", authority_url, "authority base URL")
        ->required();
    revoke_cmd->add_option("--index", revoke_index, "revocation-list index")
        ->required();

    auto* bench_cmd =
        app.add_subcommand("bench", "signature-algorithm benchmark grid");
    std::vector<std::string> bench_algs;
    std::vector<int> bench_loads;
    int bench_reps = 3, bench_warmup = 16;
    size_t bench_workers = 0;
    std::string over_http;
    bench_cmd->add_option("--algs", bench_algs,
                          "algorithms (default: EdDSA RS256 PS256 ES512)");
    bench_cmd->add_option("--loads", bench_loads,
                          "request loads (default: 100..1000 step 100)");
    bench_cmd->add_option("--reps", bench_reps, "repetitions per cell (>= 3)");
    bench_cmd->add_option("--warmup", bench_warmup, "warm-up iterations");
    bench_cmd->add_option("--workers", bench_workers,
                          "throughput worker threads (0 = auto)");
    bench_cmd->add_option(
        "--over-http", over_http,
        "drive throughput over loopback HTTP, e.g. http://127.0.0.1");

    CLI11_PARSE(app, argc, argv);
    const int64_t now = wall_clock();

    if (*keygen) {
        auto alg = jose::parse_algorithm(alg_name);
        if (!alg) {
            std::fprintf(stderr, "unknown algorithm %s\n", alg_name.c_str());
            return 1;
        }
        auto key = jose::generate_keypair(*alg);
        json priv = key.private_jwk();
        auto thumb = jose::thumbprint(key.public_jwk());
        json result = as_json ? json{{"jwk", priv},
                                     {"thumbprint", thumb.ok() ? *thumb : ""}}
                              : priv;
        if (!write_output(out_path, result.dump(2), true)) return 1;
        if (!out_path.empty()) ::chmod(out_path.c_str(), 0600);
        return 0;
    }

    if (*token_cmd) {
        auto key = load_key(key_path);
        if (!key) return 1;
        auto token = client::request_token(authority_url, *key,
                                           client::default_transport(), now);
        if (!token.ok()) return fail(token.error());
        auto text = as_json ? json{{"token", *token}}.dump() : *token;
        return write_output(out_path, text, true) ? 0 : 1;
    }

    if (*get || *put) {
        auto key = load_key(key_path);
        if (!key) return 1;
        auto token = load_token(token_path);
        if (!token) return 1;
        std::string body;
        std::string method = "GET";
        if (*put) {
            method = "PUT";
            if (!body_inline.empty()) {
                body = body_inline;
            } else if (!data_path.empty()) {
                auto data = read_file(data_path);
                if (!data) {
                    std::fprintf(stderr, "cannot read %s\n", data_path.c_str());
                    return 1;
                }
                body = std::move(*data);
            } else {
                std::ostringstream buf;
                buf << std::cin.rdbuf();
                body = buf.str();
            }
        }
        auto reply = client::access_resource(url, *token, *key, method, body,
                                             client::default_transport(), now);
        if (!reply.ok()) return fail(reply.error());
        std::string text =
            as_json ? json{{"status", reply->status},
                           {"content_type", reply->content_type},
                           {"body", reply->body}}
                          .dump()
                    : reply->body;
        if (!write_output(out_path, text, as_json || *put)) return 1;
        return reply->status < 400 ? 0 : 2;
    }

    if (*combine) {
        auto key = load_key(key_path);
        if (!key) return 1;
        std::vector<std::string> tokens;
        for (const auto& file : token_files) {
            auto token = load_token(file);
            if (!token) return 1;
            tokens.push_back(std::move(*token));
        }
        auto vp = client::combine_presentation(tokens, *key, now);
        if (!vp.ok()) return fail(vp.error());
        auto text = as_json ? json{{"token", *vp}}.dump() : *vp;
        return write_output(out_path, text, true) ? 0 : 1;
    }

    if (*delegate_cmd) {
        auto key = load_key(key_path);
        if (!key) return 1;
        auto parent = load_token(token_path);
        if (!parent) return 1;
        auto delegatee_text = read_file(delegatee_path);
        if (!delegatee_text) {
            std::fprintf(stderr, "cannot read %s\n", delegatee_path.c_str());
            return 1;
        }
        auto delegatee = json::parse(*delegatee_text, nullptr, false);
        if (delegatee.is_discarded()) {
            std::fprintf(stderr, "delegatee file is not valid JSON\n");
            return 1;
        }
        // Accept either a bare public JWK or a keygen --json output.
        if (delegatee.contains("jwk")) delegatee = delegatee["jwk"];
        if (delegatee.contains("d")) delegatee.erase("d");
        for (const char* member : {"p", "q", "dp", "dq", "qi"})
            if (delegatee.contains(member)) delegatee.erase(member);
        auto mask_json = load_json_arg(mask_arg);
        if (!mask_json) {
            std::fprintf(stderr, "--mask is neither JSON nor a readable file\n");
            return 1;
        }
        auto mask = CapabilitySet::from_json(*mask_json);
        if (!mask.ok()) {
            std::fprintf(stderr, "mask: %s\n", mask.error().c_str());
            return 1;
        }
        auto delegated =
            client::delegate(*parent, delegatee, *mask, *key, now, lifetime);
        if (!delegated.ok()) return fail(delegated.error());
        auto text = as_json ? json{{"token", *delegated}}.dump() : *delegated;
        return write_output(out_path, text, true) ? 0 : 1;
    }

    if (*introspect_cmd) {
        auto token = load_token(token_path);
        if (!token) return 1;
        auto result =
            client::introspect(authority_url, *token, client::default_transport());
        if (!result.ok()) return fail(result.error());
        return write_output(out_path, result->dump(), true) ? 0 : 1;
    }

    if (*revoke_cmd) {
        auto result = client::revoke(authority_url, revoke_index,
                                     client::default_transport());
        if (!result.ok()) return fail(result.error());
        return write_output(out_path, result->dump(), true) ? 0 : 1;
    }

    if (*bench_cmd) {
        bench::BenchConfig cfg;
        if (!bench_algs.empty()) {
            cfg.algorithms.clear();
            for (const auto& name : bench_algs) {
                auto alg = jose::parse_algorithm(name);
                if (!alg) {
                    std::fprintf(stderr, "unknown algorithm %s\n", name.c_str());
                    return 1;
                }
                cfg.algorithms.push_back(*alg);
            }
        }
        if (!bench_loads.empty()) cfg.loads = bench_loads;
        cfg.repetitions = bench_reps;
        cfg.warmup = bench_warmup;
        cfg.workers = bench_workers;
        cfg.over_http_host = over_http;
        try {
            auto cells = bench::run_bench(cfg);
            std::string text;
            if (as_json) {
                json rows = json::array();
                for (const auto& c : cells) {
                    rows.push_back({{"algorithm", jose::to_string(c.algorithm)},
                                    {"load", c.load},
                                    {"gen_ms", c.gen_ms},
                                    {"verify_ms", c.verify_ms},
                                    {"throughput_rps", c.throughput_rps},
                                    {"stddev", c.stddev}});
                }
                text = rows.dump(2);
            } else {
                text = bench::to_csv(cells);
            }
            return write_output(out_path, text, true) ? 0 : 1;
        } catch (const std::exception& e) {
            std::fprintf(stderr, "bench: %s\n", e.what());
            return 1;
        }
    }

    return 1;
}
