#include "capauth/bench.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "capauth/authority.hpp"
#include "capauth/client.hpp"
#include "capauth/dpop.hpp"
#include "capauth/http_service.hpp"
#include "capauth/resource.hpp"

namespace capauth::bench {

namespace {

using Clock = std::chrono::steady_clock;

constexpr const char* kIssuerUrl = "https://bench.issuer";
constexpr const char* kBaseUrl = "https://bench.storage";
constexpr const char* kObjectPath = "/data/drone1/f";

double ms_between(Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration<double, std::milli>(b - a).count();
}

double mean(const std::vector<double>& xs) {
    double s = 0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

double sample_stddev(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    double m = mean(xs);
    double acc = 0;
    for (double x : xs) acc += (x - m) * (x - m);
    return std::sqrt(acc / static_cast<double>(xs.size() - 1));
}

std::string fresh_storage_root() {
    static std::atomic<uint64_t> counter{0};
    auto dir = std::filesystem::temp_directory_path() /
               ("capauth-bench-" + std::to_string(::getpid()) + "-" +
                std::to_string(counter.fetch_add(1)));
    return dir.string();
}

// One algorithm's measurement stack: an issuing authority, a resource server
// whose table trusts it, and a holder key. Reused across loads.
struct AlgContext {
    jose::SignatureAlgorithm alg;
    jose::KeyPair authority_key;
    jose::KeyPair client_key;
    std::string client_thumb;
    Authority authority;
    std::unique_ptr<ResourceServer> rs;
    std::unique_ptr<service::ServiceHandle> http;  // only in over-http mode
    std::string resource_base;                     // origin requests target
    CapabilitySet caps;

    AlgContext(jose::SignatureAlgorithm algorithm, const json& capabilities,
               const std::string& over_http_host)
        : alg(algorithm),
          authority_key(jose::generate_keypair(
              algorithm, "bench-authority-" + jose::to_string(algorithm))),
          client_key(jose::generate_keypair(
              algorithm, "bench-client-" + jose::to_string(algorithm))),
          client_thumb(jose::thumbprint(client_key.public_jwk()).value()),
          authority(make_config(capabilities, client_thumb), authority_key) {
        auto parsed = CapabilitySet::from_json(capabilities);
        if (!parsed) throw std::invalid_argument("capabilities: " + parsed.error());
        caps = std::move(*parsed);

        HttpGet get = [this](const std::string& url)
            -> Result<std::string, TransportError> {
            if (url == authority.status_list_url())
                return authority.serve_revocation_list(
                    static_cast<int64_t>(std::time(nullptr)));
            return TransportError{"unreachable " + url};
        };

        if (over_http_host.empty()) {
            rs = std::make_unique<ResourceServer>(
                make_resource_config(kBaseUrl), std::move(get), HttpPost{});
            resource_base = kBaseUrl;
        } else {
            // Find a bindable port, then build the server around it so the
            // advertised base_url matches what proofs are minted against.
            std::string host = over_http_host;
            auto scheme = host.find("://");
            if (scheme != std::string::npos) host = host.substr(scheme + 3);
            auto colon = host.find(':');
            if (colon != std::string::npos) host = host.substr(0, colon);
            if (host.empty()) host = "127.0.0.1";
            for (int port = 18930; port < 18990; ++port) {
                std::string base = "http://" + host + ":" + std::to_string(port);
                auto candidate = std::make_unique<ResourceServer>(
                    make_resource_config(base), get, HttpPost{});
                try {
                    http = service::serve_resource(*candidate, host, port);
                } catch (const std::runtime_error&) {
                    continue;
                }
                rs = std::move(candidate);
                resource_base = base;
                break;
            }
            if (!rs) throw std::runtime_error("no free port for the bench service");
        }

        auto seeded = rs->storage().put(kObjectPath, "bench-object-bytes");
        if (!seeded) throw std::runtime_error("cannot seed bench storage");
    }

    AuthorityConfig make_config(const json& capabilities,
                                const std::string& thumb) {
        AccessTable table;
        auto parsed = CapabilitySet::from_json(capabilities);
        if (!parsed) throw std::invalid_argument("capabilities: " + parsed.error());
        table.set(thumb, std::move(*parsed));
        // Capacity sized for the whole grid: every generation trial issues
        // real tokens with fresh status-list indices.
        return AuthorityConfig{kIssuerUrl, std::move(table), 1u << 18, 7200, {}};
    }

    ResourceConfig make_resource_config(const std::string& base) {
        ResourceTable table;
        table.set("/data/drone1", {kIssuerUrl, authority_key.public_jwk()});
        table.set("/data/drone2", {kIssuerUrl, authority_key.public_jwk()});
        ResourceConfig cfg;
        cfg.table = std::move(table);
        cfg.storage_root = fresh_storage_root();
        cfg.base_url = base;
        cfg.revocation_mode = RevocationMode::StatusList;
        cfg.status_cache_max_age = 3600;
        return cfg;
    }

    std::string issue_one(int64_t now) {
        auto token = authority.issue_access_token(client_key.public_jwk(), caps, now);
        if (!token) {
            throw std::runtime_error("token issuance failed: " +
                                     std::string(to_string(token.error())));
        }
        return std::move(*token);
    }

    // The verification pipeline's claim checks (issuer, signature, binding,
    // expiry, capability probe) without transport: the Figure-2 "verification
    // time" cost.
    void verify_one(const std::string& compact, int64_t now) const {
        auto envelope = jose::verify_envelope(compact, authority.public_jwk());
        if (!envelope) throw std::runtime_error("bench verify: bad signature");
        const json& claims = envelope->claims;
        if (claims["iss"] != kIssuerUrl)
            throw std::runtime_error("bench verify: issuer mismatch");
        auto thumb = jose::thumbprint(claims["cnf"]["jwk"]);
        if (!thumb || *thumb != client_thumb)
            throw std::runtime_error("bench verify: binding mismatch");
        if (claims["exp"].get<int64_t>() <= now)
            throw std::runtime_error("bench verify: expired");
        auto parsed =
            CapabilitySet::from_json(claims["vc"]["credentialSubject"]["capabilities"]);
        if (!parsed || !parsed->grants(kObjectPath, Operation::Read))
            throw std::runtime_error("bench verify: capability check failed");
    }
};

double measure_generation(AlgContext& ctx, int load) {
    auto t0 = Clock::now();
    auto now = static_cast<int64_t>(std::time(nullptr));
    for (int i = 0; i < load; ++i) (void)ctx.issue_one(now);
    return ms_between(t0, Clock::now()) / load;
}

double measure_verification(const AlgContext& ctx, const std::string& token,
                            int load) {
    auto now = static_cast<int64_t>(std::time(nullptr));
    auto t0 = Clock::now();
    for (int i = 0; i < load; ++i) ctx.verify_one(token, now);
    return ms_between(t0, Clock::now()) / load;
}

// Closed loop: each worker mints a proof (client-side signing cost) and
// drives the full request pipeline; the cell's rate is total requests over
// wall time.
double measure_throughput(AlgContext& ctx, const std::string& token, int load,
                          size_t workers) {
    const std::string url = ctx.resource_base + kObjectPath;
    std::atomic<int> failures{0};
    std::string first_failure;
    std::mutex failure_mu;

    auto run_requests = [&](int count) {
        client::Transport transport;
        if (ctx.http) transport = client::default_transport();
        for (int i = 0; i < count; ++i) {
            auto now = static_cast<int64_t>(std::time(nullptr));
            int status = 0;
            std::string body;
            if (ctx.http) {
                auto reply = client::access_resource(url, token, ctx.client_key,
                                                     "GET", "", transport, now);
                if (!reply) {
                    status = -1;
                    body = reply.error().message;
                } else {
                    status = reply->status;
                    body = reply->body;
                }
            } else {
                auto proof = dpop::create_proof(ctx.client_key, "GET", url, now);
                auto res = ctx.rs->handle_resource_request(
                    "GET", kObjectPath, proof, "DPoP " + token, "", now);
                status = res.status;
                body = res.body;
            }
            if (status != 200) {
                failures.fetch_add(1);
                std::lock_guard lock(failure_mu);
                if (first_failure.empty())
                    first_failure = "status " + std::to_string(status) + ": " + body;
            }
        }
    };

    auto t0 = Clock::now();
    std::vector<std::thread> pool;
    int remaining = load;
    for (size_t w = 0; w < workers; ++w) {
        int share = remaining / static_cast<int>(workers - w);
        remaining -= share;
        if (share > 0) pool.emplace_back(run_requests, share);
    }
    for (auto& t : pool) t.join();
    double seconds = ms_between(t0, Clock::now()) / 1000.0;

    if (failures.load() != 0) {
        throw std::runtime_error("throughput request failed (" +
                                 std::to_string(failures.load()) + "/" +
                                 std::to_string(load) + "): " + first_failure);
    }
    return load / seconds;
}

}  // namespace

json default_capabilities() {
    return json::parse(
        R"([{"/data/drone1": ["read","write"]}, {"/data/drone2": ["read"]}])");
}

std::vector<BenchCell> run_bench(const BenchConfig& cfg) {
    if (cfg.algorithms.empty()) {
        throw std::invalid_argument("at least one algorithm is required");
    }
    if (cfg.loads.empty()) throw std::invalid_argument("loads must be non-empty");
    for (size_t i = 0; i + 1 < cfg.loads.size(); ++i) {
        if (cfg.loads[i] >= cfg.loads[i + 1])
            throw std::invalid_argument("loads must be strictly increasing");
    }
    if (cfg.loads.front() <= 0) throw std::invalid_argument("loads must be positive");
    if (cfg.repetitions < 3)
        throw std::invalid_argument("repetitions must be at least 3");
    if (cfg.warmup < 0) throw std::invalid_argument("warmup must be non-negative");

    size_t workers = cfg.workers;
    if (workers == 0) {
        workers = std::thread::hardware_concurrency();
        if (workers == 0) workers = 4;
    }

    std::vector<BenchCell> cells;
    for (auto alg : cfg.algorithms) {
        AlgContext ctx(alg, cfg.capabilities, cfg.over_http_host);
        auto warm_now = static_cast<int64_t>(std::time(nullptr));
        std::string probe = ctx.issue_one(warm_now);
        for (int i = 0; i < cfg.warmup; ++i) {
            (void)ctx.issue_one(warm_now);
            ctx.verify_one(probe, warm_now);
        }

        for (int load : cfg.loads) {
            std::vector<double> gen, verify, rps;
            for (int rep = 0; rep < cfg.repetitions; ++rep) {
                gen.push_back(measure_generation(ctx, load));
                verify.push_back(measure_verification(ctx, probe, load));
                rps.push_back(measure_throughput(
                    ctx, probe, load,
                    std::min(workers, static_cast<size_t>(load))));
            }
            cells.push_back(BenchCell{alg, load, mean(gen), mean(verify),
                                      mean(rps), sample_stddev(gen)});
        }
    }
    return cells;
}

std::string to_csv(const std::vector<BenchCell>& cells) {
    std::ostringstream out;
    out << "# load = total requests per trial (not concurrent clients)\n"
        << "# gen_ms / verify_ms: per-operation means across repetitions;\n"
        << "# stddev: between-repetition standard deviation of gen_ms;\n"
        << "# throughput_rps: closed-loop rate including per-request proof "
           "signing\n"
        << "algorithm,load,gen_ms,verify_ms,throughput_rps,stddev\n";
    char row[160];
    for (const auto& c : cells) {
        std::snprintf(row, sizeof(row), "%s,%d,%.6f,%.6f,%.1f,%.6f\n",
                      jose::to_string(c.algorithm).c_str(), c.load, c.gen_ms,
                      c.verify_ms, c.throughput_rps, c.stddev);
        out << row;
    }
    return out.str();
}

}  // namespace capauth::bench
