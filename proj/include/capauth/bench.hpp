#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "capauth/jose.hpp"

namespace capauth::bench {

using json = nlohmann::json;

// The default capability payload: read/write on drone1, read-only on drone2.
json default_capabilities();

struct BenchConfig {
    std::vector<jose::SignatureAlgorithm> algorithms{
        jose::SignatureAlgorithm::EdDSA, jose::SignatureAlgorithm::RS256,
        jose::SignatureAlgorithm::PS256, jose::SignatureAlgorithm::ES512};
    std::vector<int> loads{100, 200, 300, 400, 500, 600, 700, 800, 900, 1000};
    int warmup = 16;
    int repetitions = 3;    // must be >= 3
    json capabilities = default_capabilities();
    size_t workers = 0;     // throughput worker threads; 0 = available parallelism
    // When set (e.g. "http://127.0.0.1"), throughput drives a real loopback
    // HTTP stack instead of in-process calls; latency cells are unaffected.
    std::string over_http_host;
};

struct BenchCell {
    jose::SignatureAlgorithm algorithm;
    int load;               // total requests (and signing operations) per trial
    double gen_ms;          // mean per-token generation time
    double verify_ms;       // mean per-token verification time (full claim checks)
    double throughput_rps;  // closed-loop requests per second
    double stddev;          // between-repetition stddev of gen_ms
};

// Runs the full grid. Throws std::invalid_argument on a bad config and
// std::runtime_error when a request inside the throughput loop fails.
std::vector<BenchCell> run_bench(const BenchConfig& cfg);

// RFC-4180 rows under a '#'-commented preamble documenting the load unit.
std::string to_csv(const std::vector<BenchCell>& cells);

}  // namespace capauth::bench
