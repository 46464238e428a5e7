#include "capauth/authority.hpp"

#include <openssl/rand.h>

#include <stdexcept>

#include "capauth/base64url.hpp"

namespace capauth {

namespace {

std::string random_jti() {
    uint8_t buf[16];
    if (RAND_bytes(buf, sizeof(buf)) != 1) {
        throw std::runtime_error("RAND_bytes failed");
    }
    return b64url::encode(std::span<const uint8_t>(buf, sizeof(buf)));
}

json oauth_error(std::string_view code, std::string_view detail) {
    json body{{"error", std::string(code)}};
    if (!detail.empty()) {
        body["error_description"] = std::string(detail);
    }
    return body;
}

}  // namespace

std::string_view to_string(IssueError e) {
    switch (e) {
        case IssueError::EmptyCapabilities: return "empty capability set";
        case IssueError::StatusListExhausted: return "status list exhausted";
    }
    return "issue error";
}

Authority::Authority(AuthorityConfig config, jose::KeyPair keypair)
    : config_(std::move(config)),
      keypair_(std::move(keypair)),
      revocation_bits_(config_.status_list_capacity) {
    if (config_.url.empty()) {
        throw std::invalid_argument("authority url must not be empty");
    }
    if (config_.url.back() == '/') {
        config_.url.pop_back();
    }
}

HttpResponse Authority::handle_token_request(std::string_view method,
                                             std::string_view dpop_header,
                                             int64_t now) {
    if (method != "POST" || dpop_header.empty()) {
        return {400, oauth_error("invalid_dpop_proof", "proof required on POST").dump()};
    }
    auto proof = dpop::verify_proof(dpop_header, "POST", token_endpoint(), now,
                                    replay_cache_, config_.dpop_window);
    if (!proof) {
        return {400, oauth_error("invalid_dpop_proof", dpop::to_string(proof.error())).dump()};
    }
    const json& holder_jwk = *proof;
    auto thumb = jose::thumbprint(holder_jwk);
    if (!thumb) {
        return {400, oauth_error("invalid_dpop_proof", "unusable proof key").dump()};
    }

    std::optional<CapabilitySet> caps;
    {
        std::lock_guard lock(mu_);
        caps = config_.access_table.find(*thumb);
    }
    if (!caps || caps->empty()) {
        return {403, oauth_error("access_denied", "").dump()};
    }

    auto token = issue_access_token(holder_jwk, *caps, now);
    if (!token) {
        return {403, oauth_error("access_denied", to_string(token.error())).dump()};
    }
    json body{{"access_token", *token}, {"token_type", "DPoP"}};
    return {200, body.dump()};
}

Result<std::string, IssueError> Authority::issue_access_token(
    const json& subject_jwk, const CapabilitySet& caps, int64_t now) {
    if (caps.empty()) {
        return IssueError::EmptyCapabilities;
    }
    size_t index = 0;
    std::string jti = random_jti();
    {
        std::lock_guard lock(mu_);
        if (next_index_ >= config_.status_list_capacity) {
            return IssueError::StatusListExhausted;
        }
        index = next_index_++;
        issued_[jti] = index;
    }

    json claims{
        {"iss", config_.url},
        {"iat", now},
        {"exp", now + config_.token_lifetime},
        {"jti", jti},
        {"cnf", json{{"jwk", subject_jwk}}},
        {"vc",
         json{{"credentialSubject", json{{"capabilities", caps.to_json()}}},
              {"credentialStatus",
               json{{"statusListUrl", status_list_url()},
                    {"revocationListIndex", index}}}}},
    };
    json header{{"typ", "at+jwt"}};
    auto envelope = jose::sign_envelope(std::move(header), claims, keypair_);
    return std::move(envelope.compact);
}

json Authority::handle_introspection(std::string_view token, int64_t now) const {
    json inactive{{"active", false}};
    auto verified = jose::verify_envelope(token, keypair_.public_jwk());
    if (!verified) {
        return inactive;
    }
    const json& claims = verified->claims;
    if (claims.value("iss", "") != config_.url) {
        return inactive;
    }
    if (!claims.contains("exp") || !claims["exp"].is_number_integer() ||
        claims["exp"].get<int64_t>() <= now) {
        return inactive;
    }
    const json* status = nullptr;
    if (claims.contains("vc") && claims["vc"].contains("credentialStatus")) {
        status = &claims["vc"]["credentialStatus"];
    }
    if (status == nullptr || !status->contains("revocationListIndex") ||
        !(*status)["revocationListIndex"].is_number_unsigned()) {
        return inactive;
    }
    size_t index = (*status)["revocationListIndex"].get<size_t>();
    {
        std::lock_guard lock(mu_);
        if (index >= next_index_ || revocation_bits_.test(index)) {
            return inactive;
        }
    }
    return json{{"active", true}};
}

bool Authority::revoke(size_t index, int64_t now) {
    std::lock_guard lock(mu_);
    if (index >= next_index_) {
        return false;
    }
    if (!revocation_bits_.test(index)) {
        revocation_bits_.set(index);
        revoked_at_.emplace(index, now);
    }
    return true;
}

std::string Authority::serve_revocation_list(int64_t now) const {
    std::string encoded;
    size_t capacity = 0;
    {
        std::lock_guard lock(mu_);
        encoded = statuslist::encode_compressed(revocation_bits_);
        capacity = revocation_bits_.capacity();
    }
    json claims{
        {"iss", config_.url},
        {"iat", now},
        {"statusList", json{{"capacity", capacity}, {"encodedList", encoded}}},
    };
    json header{{"typ", "statuslist+jwt"}};
    return jose::sign_envelope(std::move(header), claims, keypair_).compact;
}

void Authority::grant(const std::string& thumbprint, CapabilitySet caps) {
    std::lock_guard lock(mu_);
    config_.access_table.set(thumbprint, std::move(caps));
}

std::optional<size_t> Authority::issued_index(const std::string& jti) const {
    std::lock_guard lock(mu_);
    auto it = issued_.find(jti);
    if (it == issued_.end()) {
        return std::nullopt;
    }
    return it->second;
}

size_t Authority::next_index() const {
    std::lock_guard lock(mu_);
    return next_index_;
}

json Authority::snapshot() const {
    std::lock_guard lock(mu_);
    json revoked = json::array();
    for (const auto& [index, at] : revoked_at_) {
        revoked.push_back(json{{"index", index}, {"at", at}});
    }
    return json{
        {"url", config_.url},
        {"access_table", config_.access_table.to_json()},
        {"revoked", revoked},
    };
}

}  // namespace capauth
