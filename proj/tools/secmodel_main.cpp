// Bounded security-model checker CLI.
//   secmodel check  [--bounds t,a,s,rs] [--mutate NAME] [--max-reported N]
//   secmodel replay --log PATH --snapshot PATH
// Reports are JSON on stdout. Exit 0 = clean, 1 = usage/input error,
// 2 = violations or nonconformances found.
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "capauth/secmodel.hpp"

using json = nlohmann::json;
using namespace capauth;

namespace {

bool parse_bounds(const std::string& text, secmodel::Bounds& bounds) {
    std::istringstream in(text);
    std::string part;
    std::vector<int> values;
    while (std::getline(in, part, ',')) {
        try {
            size_t used = 0;
            values.push_back(std::stoi(part, &used));
            if (used != part.size()) return false;
        } catch (const std::exception&) {
            return false;
        }
    }
    if (values.size() != 4) return false;
    bounds = {values[0], values[1], values[2], values[3]};
    return true;
}

json violation_to_json(const secmodel::Violation& v) {
    return {{"universe", v.universe},
            {"assertion", v.assertion},
            {"detail", v.detail}};
}

int run_check_command(const std::string& bounds_text,
                      const std::string& mutate_name, size_t max_reported) {
    secmodel::Bounds bounds;
    if (!parse_bounds(bounds_text, bounds)) {
        std::fprintf(stderr, "invalid --bounds %s (expected t,a,s,rs)\n",
                     bounds_text.c_str());
        return 1;
    }
    auto mutation = secmodel::parse_mutation(mutate_name);
    if (!mutation) {
        std::fprintf(stderr,
                     "unknown --mutate %s (none, skip-validity-filter, "
                     "skip-revocation-exclusion, free-ownership)\n",
                     mutate_name.c_str());
        return 1;
    }

    auto report = secmodel::run_check(bounds, *mutation, max_reported);
    if (!report.ok()) {
        std::fprintf(stderr, "check: %s\n", report.error().c_str());
        return 1;
    }
    json out = {{"bounds",
                 {{"tokens", bounds.tokens},
                  {"authorities", bounds.authorities},
                  {"servers", bounds.servers},
                  {"revocation_servers", bounds.revocation_servers}}},
                {"mutation", secmodel::to_string(*mutation)},
                {"universes", report->universes},
                {"violating_universes", report->violating_universes},
                {"violations", json::array()}};
    for (const auto& v : report->violations)
        out["violations"].push_back(violation_to_json(v));
    std::printf("%s\n", out.dump(2).c_str());
    return report->violating_universes == 0 ? 0 : 2;
}

int run_replay_command(const std::string& log_path,
                       const std::string& snapshot_path) {
    std::ifstream snapshot_file(snapshot_path);
    if (!snapshot_file) {
        std::fprintf(stderr, "cannot read snapshot %s\n", snapshot_path.c_str());
        return 1;
    }
    json snapshot = json::parse(snapshot_file, nullptr, false);
    if (snapshot.is_discarded()) {
        std::fprintf(stderr, "snapshot %s is not valid JSON\n",
                     snapshot_path.c_str());
        return 1;
    }
    std::ifstream log(log_path);
    if (!log) {
        std::fprintf(stderr, "cannot read log %s\n", log_path.c_str());
        return 1;
    }

    auto report = secmodel::replay_audit(log, snapshot);
    if (!report.ok()) {
        std::fprintf(stderr, "replay: %s\n", report.error().c_str());
        return 1;
    }
    json out = {{"lines", report->lines},
                {"granted", report->granted},
                {"nonconformances", json::array()}};
    for (const auto& n : report->nonconformances) {
        out["nonconformances"].push_back({{"line_number", n.line_number},
                                          {"reason", n.reason},
                                          {"line", n.line}});
    }
    std::printf("%s\n", out.dump(2).c_str());
    return report->nonconformances.empty() ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bounded model checker for the capability security model"};
    app.require_subcommand(1);

    auto* check = app.add_subcommand(
        "check", "enumerate bounded universes and verify the assertions");
    std::string bounds_text = "3,2,2,1";
    std::string mutate_name = "none";
    size_t max_reported = 100;
    check->add_option("--bounds", bounds_text,
                      "tokens,authorities,servers,revocation_servers");
    check->add_option("--mutate", mutate_name,
                      "seed a rule mutation to demonstrate counterexamples");
    check->add_option("--max-reported", max_reported,
                      "cap on violations included in the report");

    auto* replay = app.add_subcommand(
        "replay", "validate a resource-server audit log against snapshots");
    std::string log_path, snapshot_path;
    replay->add_option("--log", log_path, "audit log (JSON lines)")
        ->required()
        ->check(CLI::ExistingFile);
    replay
        ->add_option("--snapshot", snapshot_path,
                     "authority snapshot JSON "
                     "({\"authorities\": {...}, \"revocation_grace\": s})")
        ->required()
        ->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    if (*check) return run_check_command(bounds_text, mutate_name, max_reported);
    return run_replay_command(log_path, snapshot_path);
}
