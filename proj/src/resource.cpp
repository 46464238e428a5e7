#include "capauth/resource.hpp"

#include <unistd.h>

#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <utility>

namespace capauth {

namespace fs = std::filesystem;

namespace {

std::optional<std::string> get_string(const json& obj, const char* member) {
    auto it = obj.find(member);
    if (it == obj.end() || !it->is_string()) return std::nullopt;
    return it->get<std::string>();
}

std::optional<Operation> operation_for(std::string_view method) {
    if (method == "GET") return Operation::Read;
    if (method == "PUT" || method == "POST" || method == "DELETE")
        return Operation::Write;
    return std::nullopt;
}

void merge_into(CapabilitySet& into, const CapabilitySet& from) {
    for (const auto& [path, ops] : from.entries()) into.add(path, ops);
}

json error_body(const Denial& d) {
    json body{{"error", d.code}};
    if (!d.detail.empty()) body["error_description"] = d.detail;
    return body;
}

Denial invalid_token(std::string stage, std::string detail) {
    return Denial{401, "invalid-token", std::move(stage), std::move(detail)};
}

}  // namespace

std::string to_string(RevocationMode mode) {
    return mode == RevocationMode::Introspection ? "introspection" : "status-list";
}

std::optional<RevocationMode> parse_revocation_mode(std::string_view name) {
    if (name == "introspection") return RevocationMode::Introspection;
    if (name == "status-list") return RevocationMode::StatusList;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Storage

Storage::Storage(std::string root) : root_(std::move(root)) {
    if (!root_.empty() && root_.back() == '/') root_.pop_back();
    fs::create_directories(root_);
}

std::string Storage::file_for(const std::string& path) const {
    return root_ + path;
}

Result<std::string, StorageError> Storage::get(const std::string& path) const {
    const std::string file = file_for(path);
    std::error_code ec;
    if (!fs::is_regular_file(file, ec)) return StorageError::NotFound;
    std::ifstream in(file, std::ios::binary);
    if (!in) return StorageError::IoFailure;
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) return StorageError::IoFailure;
    return buf.str();
}

Result<Unit, StorageError> Storage::put(const std::string& path,
                                        std::string_view bytes) {
    const std::string file = file_for(path);
    std::error_code ec;
    fs::create_directories(fs::path(file).parent_path(), ec);
    if (ec) return StorageError::IoFailure;

    const std::string tmp = file + ".tmp." + std::to_string(::getpid()) + "." +
                            std::to_string(tmp_counter_.fetch_add(1));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) return StorageError::IoFailure;
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) return StorageError::IoFailure;
    }
    fs::rename(tmp, file, ec);
    if (ec) {
        fs::remove(tmp, ec);
        return StorageError::IoFailure;
    }
    return Unit{};
}

Result<Unit, StorageError> Storage::remove(const std::string& path) {
    std::error_code ec;
    if (!fs::remove(file_for(path), ec)) return StorageError::NotFound;
    if (ec) return StorageError::IoFailure;
    return Unit{};
}

// ---------------------------------------------------------------------------
// ResourceServer

ResourceServer::ResourceServer(ResourceConfig config, HttpGet http_get,
                               HttpPost http_post, AuditSink audit)
    : config_(std::move(config)),
      storage_(config_.storage_root),
      http_get_(std::move(http_get)),
      http_post_(std::move(http_post)),
      audit_(std::move(audit)) {
    if (!config_.base_url.empty() && config_.base_url.back() == '/')
        config_.base_url.pop_back();
}

void ResourceServer::audit(const json& line) {
    if (audit_) audit_(line);
}

HttpResponse ResourceServer::handle_resource_request(
    std::string_view method, std::string_view uri, std::string_view dpop_header,
    std::string_view authorization_header, std::string_view body, int64_t now) {
    std::string full_uri(uri);
    if (full_uri.find("://") == std::string::npos)
        full_uri = config_.base_url + full_uri;

    json line{{"ts", now},
              {"prover", ""},
              {"path", std::string(uri)},
              {"operation", ""},
              {"decision", "denied"},
              {"stage", ""},
              {"status", 0}};

    auto deny = [&](const Denial& d) {
        line["decision"] = "denied";
        line["stage"] = d.stage;
        line["status"] = d.status;
        audit(line);
        return HttpResponse{d.status, error_body(d).dump()};
    };

    // Stage 1: path resolution against the resource table.
    auto split = split_url(full_uri);
    if (!split)
        return deny(Denial{404, "unmanaged-path", "path", "unparseable URI"});
    auto path = normalize_path(split->path);
    if (!path)
        return deny(Denial{404, "unmanaged-path", "path", to_string(path.error())});
    line["path"] = *path;

    auto authority = config_.table.lookup(*path);
    if (!authority)
        return deny(Denial{404, "unmanaged-path", "path",
                           "no authority governs this path"});

    auto op = operation_for(method);
    if (!op)
        return deny(Denial{401, "invalid-dpop", "dpop", "unsupported method"});
    line["operation"] = to_string(*op);

    // Stage 2: proof of possession bound to this exact request.
    auto proof = dpop::verify_proof(dpop_header, method, full_uri, now,
                                    replay_cache_, config_.dpop_window);
    if (!proof)
        return deny(Denial{401, "invalid-dpop", "dpop",
                           dpop::to_string(proof.error())});
    const json prover_jwk = *proof;
    auto prover_thumb = jose::thumbprint(prover_jwk);
    if (!prover_thumb)
        return deny(Denial{401, "invalid-dpop", "dpop", "unusable proof key"});
    line["prover"] = *prover_thumb;

    // Stage 3: the access token (single, delegated chain, or presentation).
    std::string token;
    {
        std::string_view h = authorization_header;
        while (!h.empty() && (h.front() == ' ' || h.front() == '\t'))
            h.remove_prefix(1);
        size_t space = h.find(' ');
        if (space == std::string_view::npos)
            return deny(invalid_token("token", "missing or malformed authorization header"));
        std::string scheme(h.substr(0, space));
        for (auto& c : scheme) c = static_cast<char>(std::tolower(c));
        if (scheme != "dpop")
            return deny(invalid_token("token", "authorization scheme must be DPoP"));
        h.remove_prefix(space + 1);
        while (!h.empty() && h.front() == ' ') h.remove_prefix(1);
        if (h.empty())
            return deny(invalid_token("token", "empty token"));
        token.assign(h);
    }

    auto outer = jose::decode_envelope(token);
    if (!outer)
        return deny(invalid_token("token", jose::to_string(outer.error())));

    Result<VerifiedToken, Denial> verified =
        outer->claims.contains("vp")
            ? verify_presentation(token, prover_jwk, now)
            : verify_token_or_chain(token, *prover_thumb, *authority, now);
    if (!verified) return deny(verified.error());

    // Stage 4: capability check for the requested operation.
    if (!verified->capabilities.grants(*path, *op))
        return deny(Denial{403, "insufficient-capabilities", "capabilities",
                           "no capability grants " + to_string(*op) + " on " + *path});

    // Stage 5: storage. The request is authorized from here on.
    line["decision"] = "granted";
    line["vcs"] = verified->records;

    auto finish = [&](int status, std::string body, std::string content_type) {
        line["stage"] = "storage";
        line["status"] = status;
        audit(line);
        return HttpResponse{status, std::move(body), std::move(content_type)};
    };

    if (*op == Operation::Read) {
        auto data = storage_.get(*path);
        if (!data) {
            if (data.error() == StorageError::NotFound)
                return finish(404, json{{"error", "not-found"}}.dump(),
                              "application/json");
            return finish(500, json{{"error", "storage-failure"}}.dump(),
                          "application/json");
        }
        return finish(200, std::move(*data), "application/octet-stream");
    }

    // Writes: PUT/POST store the body, DELETE removes the object.
    if (method == "DELETE") {
        auto removed = storage_.remove(*path);
        if (!removed) {
            if (removed.error() == StorageError::NotFound)
                return finish(404, json{{"error", "not-found"}}.dump(),
                              "application/json");
            return finish(500, json{{"error", "storage-failure"}}.dump(),
                          "application/json");
        }
        return finish(200, json{{"deleted", *path}}.dump(), "application/json");
    }

    auto stored = storage_.put(*path, body);
    if (!stored)
        return finish(500, json{{"error", "storage-failure"}}.dump(),
                      "application/json");
    return finish(200, json{{"stored", *path}}.dump(), "application/json");
}

Result<VerifiedToken, Denial> ResourceServer::verify_token_or_chain(
    const std::string& compact, const std::string& expected_holder,
    const std::optional<AuthorityDescriptor>& pinned, int64_t now, size_t depth) {
    auto env = jose::decode_envelope(compact);
    if (!env) return invalid_token("token", jose::to_string(env.error()));
    const json& claims = env->claims;

    if (!claims.contains("parent"))
        return verify_single_token(compact, expected_holder, pinned, now);

    // Delegation envelope: signed by the delegator (the parent's cnf key),
    // bound to the delegatee via its own cnf, carrying an attenuation mask.
    if (depth >= config_.max_delegation_depth)
        return invalid_token("delegation", "chain too deep");

    auto iss = get_string(claims, "iss");
    if (!iss) return invalid_token("delegation", "missing delegator iss");
    auto parent = get_string(claims, "parent");
    if (!parent) return invalid_token("delegation", "parent must be a string");

    auto parent_info = verify_token_or_chain(*parent, *iss, pinned, now, depth + 1);
    if (!parent_info) return parent_info.error();

    // The recursion has proved parent.cnf == *iss, so the delegator's key is
    // the parent's holder key.
    auto verified = jose::verify_envelope(compact, parent_info->holder_jwk);
    if (!verified)
        return invalid_token("delegation", jose::to_string(verified.error()));

    if (!claims.contains("cnf") || !claims["cnf"].is_object() ||
        !claims["cnf"].contains("jwk"))
        return invalid_token("delegation", "missing cnf");
    auto holder_thumb = jose::thumbprint(claims["cnf"]["jwk"]);
    if (!holder_thumb) return invalid_token("delegation", "bad cnf key");
    if (*holder_thumb != expected_holder)
        return invalid_token("binding", "delegatee key does not match prover");

    auto exp = claims.find("exp");
    if (exp == claims.end() || !exp->is_number_integer())
        return invalid_token("delegation", "missing exp");
    if (exp->get<int64_t>() <= now)
        return Denial{401, "expired-token", "expiry", "delegation expired"};

    if (!claims.contains("att"))
        return invalid_token("delegation", "missing attenuation mask");
    auto mask = CapabilitySet::from_json(claims["att"]);
    if (!mask) return invalid_token("delegation", mask.error());

    VerifiedToken out;
    out.capabilities = parent_info->capabilities.attenuate(*mask);
    out.holder_jwk = claims["cnf"]["jwk"];
    out.records = parent_info->records;
    for (auto& record : out.records)
        record["capabilities"] = out.capabilities.to_json();
    return out;
}

Result<VerifiedToken, Denial> ResourceServer::verify_single_token(
    const std::string& compact, const std::string& expected_holder,
    const std::optional<AuthorityDescriptor>& pinned, int64_t now) {
    auto env = jose::decode_envelope(compact);
    if (!env) return invalid_token("token", jose::to_string(env.error()));
    const json& claims = env->claims;

    // Issuer: pinned to the path's governing authority, or resolved from the
    // token's own iss for presentation members.
    auto iss = get_string(claims, "iss");
    if (!iss) return invalid_token("issuer", "missing iss");
    AuthorityDescriptor authority;
    if (pinned) {
        if (*iss != pinned->url)
            return invalid_token("issuer",
                                 "token issuer does not govern this path");
        authority = *pinned;
    } else {
        auto found = config_.table.find_by_url(*iss);
        if (!found)
            return invalid_token("issuer", "unknown issuer: " + *iss);
        authority = *found;
    }

    auto verified = jose::verify_envelope(compact, authority.jwk);
    if (!verified)
        return invalid_token("signature", jose::to_string(verified.error()));

    if (!claims.contains("cnf") || !claims["cnf"].is_object() ||
        !claims["cnf"].contains("jwk"))
        return invalid_token("binding", "missing cnf");
    auto holder_thumb = jose::thumbprint(claims["cnf"]["jwk"]);
    if (!holder_thumb) return invalid_token("binding", "bad cnf key");
    if (*holder_thumb != expected_holder)
        return invalid_token("binding", "token is bound to a different key");

    auto exp = claims.find("exp");
    if (exp == claims.end() || !exp->is_number_integer())
        return invalid_token("expiry", "missing exp");
    if (exp->get<int64_t>() <= now)
        return Denial{401, "expired-token", "expiry", "token expired"};

    if (!claims.contains("vc") || !claims["vc"].is_object())
        return invalid_token("token", "missing vc");
    const json& vc = claims["vc"];
    if (!vc.contains("credentialStatus") || !vc["credentialStatus"].is_object())
        return invalid_token("token", "missing credentialStatus");
    const json& status = vc["credentialStatus"];
    if (!status.contains("revocationListIndex") ||
        !status["revocationListIndex"].is_number_unsigned())
        return invalid_token("token", "missing revocationListIndex");

    if (!check_revocation(compact, claims, authority, now))
        return Denial{401, "revoked-token", "revocation",
                      "credential revoked or status unavailable"};

    if (!vc.contains("credentialSubject") ||
        !vc["credentialSubject"].is_object() ||
        !vc["credentialSubject"].contains("capabilities"))
        return invalid_token("token", "missing capabilities");
    auto caps = CapabilitySet::from_json(vc["credentialSubject"]["capabilities"]);
    if (!caps) return invalid_token("token", caps.error());

    VerifiedToken out;
    out.capabilities = std::move(*caps);
    out.holder_jwk = claims["cnf"]["jwk"];
    out.records = json::array({json{
        {"iss", *iss},
        {"index", status["revocationListIndex"].get<uint64_t>()},
        {"subject", *holder_thumb},
        {"capabilities", out.capabilities.to_json()},
    }});
    return out;
}

Result<VerifiedToken, Denial> ResourceServer::verify_presentation(
    const std::string& compact, const json& prover_jwk, int64_t now) {
    auto thumb = jose::thumbprint(prover_jwk);
    if (!thumb) return invalid_token("vp-signature", "unusable prover key");

    auto verified = jose::verify_envelope(compact, prover_jwk);
    if (!verified)
        return invalid_token("vp-signature", jose::to_string(verified.error()));
    const json& claims = verified->claims;

    auto iss = get_string(claims, "iss");
    if (!iss || *iss != *thumb)
        return invalid_token("vp-iss",
                             "presentation iss must equal the prover thumbprint");

    auto vp = claims.find("vp");
    if (vp == claims.end() || !vp->is_array())
        return invalid_token("vp", "vp must be an array of tokens");

    VerifiedToken out;
    out.holder_jwk = prover_jwk;
    out.records = json::array();
    for (const auto& item : *vp) {
        if (!item.is_string())
            return invalid_token("vp", "vp entries must be compact tokens");
        auto inner = verify_token_or_chain(item.get<std::string>(), *thumb,
                                           std::nullopt, now);
        if (!inner) return inner.error();  // all-or-nothing
        merge_into(out.capabilities, inner->capabilities);
        for (const auto& record : inner->records) out.records.push_back(record);
    }
    return out;
}

bool ResourceServer::check_revocation(const std::string& compact,
                                      const json& claims,
                                      const AuthorityDescriptor& authority,
                                      int64_t now) {
    if (config_.revocation_mode == RevocationMode::Introspection) {
        if (!http_post_) return false;
        auto response = http_post_(authority.url + "/introspect",
                                   "token=" + compact,
                                   "application/x-www-form-urlencoded");
        if (!response) return false;
        json body = json::parse(*response, nullptr, false);
        if (body.is_discarded() || !body.contains("active") ||
            !body["active"].is_boolean())
            return false;
        return body["active"].get<bool>();
    }

    // Status-list mode.
    const json& status = claims["vc"]["credentialStatus"];
    auto url = get_string(status, "statusListUrl");
    if (!url) return false;
    size_t index = status["revocationListIndex"].get<uint64_t>();

    {
        std::lock_guard lock(cache_mu_);
        auto it = status_cache_.find(*url);
        if (it != status_cache_.end() &&
            now - it->second.fetched_at < config_.status_cache_max_age) {
            return index < it->second.bits.capacity() &&
                   !it->second.bits.test(index);
        }
    }

    if (!http_get_) return false;
    auto fetched = http_get_(*url);
    if (!fetched) return false;
    fetch_count_.fetch_add(1);

    auto envelope = jose::verify_envelope(*fetched, authority.jwk);
    if (!envelope) return false;
    const json& list_claims = envelope->claims;
    if (!list_claims.contains("statusList") ||
        !list_claims["statusList"].is_object())
        return false;
    const json& list = list_claims["statusList"];
    if (!list.contains("capacity") || !list["capacity"].is_number_unsigned() ||
        !list.contains("encodedList") || !list["encodedList"].is_string())
        return false;
    auto bits = statuslist::decode_compressed(
        list["encodedList"].get<std::string>(),
        list["capacity"].get<size_t>());
    if (!bits) return false;

    bool active = index < bits->capacity() && !bits->test(index);
    {
        std::lock_guard lock(cache_mu_);
        status_cache_[*url] = CachedList{now, std::move(*bits)};
    }
    return active;
}

}  // namespace capauth
