#include "capauth/client.hpp"

#include <httplib.h>

#include "capauth/dpop.hpp"

namespace capauth::client {

namespace {

Error transport_error(std::string message) {
    return Error{ErrorKind::Transport, std::move(message), json()};
}

Error protocol_error(std::string message) {
    return Error{ErrorKind::Protocol, std::move(message), json()};
}

Error denied(int status, const std::string& body) {
    json detail;
    auto parsed = json::parse(body, nullptr, false);
    if (!parsed.is_discarded()) detail = std::move(parsed);
    return Error{ErrorKind::Denied,
                 "server returned status " + std::to_string(status),
                 std::move(detail)};
}

Result<json, Error> parse_json_body(const HttpReply& reply) {
    auto parsed = json::parse(reply.body, nullptr, false);
    if (parsed.is_discarded() || !parsed.is_object()) {
        return transport_error("response body is not a JSON object");
    }
    return parsed;
}

}  // namespace

Transport default_transport() {
    return [](const std::string& method, const std::string& url,
              const std::vector<std::pair<std::string, std::string>>& headers,
              const std::string& body, const std::string& content_type)
               -> Result<HttpReply, std::string> {
        auto split = split_url(url);
        if (!split) return std::string("unparseable URL: " + url);
        httplib::Client cli(split->origin);
        cli.set_connection_timeout(5, 0);
        cli.set_read_timeout(10, 0);
        httplib::Headers hdrs;
        for (const auto& [name, value] : headers) hdrs.emplace(name, value);
        httplib::Result res;
        if (method == "GET") {
            res = cli.Get(split->path, hdrs);
        } else if (method == "POST") {
            res = cli.Post(split->path, hdrs, body, content_type);
        } else if (method == "PUT") {
            res = cli.Put(split->path, hdrs, body, content_type);
        } else if (method == "DELETE") {
            res = cli.Delete(split->path, hdrs, body, content_type);
        } else {
            return std::string("unsupported method: " + method);
        }
        if (!res) return std::string(httplib::to_string(res.error()));
        HttpReply reply;
        reply.status = res->status;
        reply.body = res->body;
        reply.content_type = res->get_header_value("Content-Type");
        return reply;
    };
}

Result<std::string, Error> request_token(const std::string& authority_url,
                                         const jose::KeyPair& key,
                                         const Transport& transport,
                                         int64_t now) {
    const std::string endpoint = authority_url + "/token";
    std::string proof;
    try {
        proof = dpop::create_proof(key, "POST", endpoint, now);
    } catch (const std::exception& e) {
        return protocol_error(e.what());
    }
    auto reply = transport("POST", endpoint, {{"DPoP", proof}}, "",
                           "application/x-www-form-urlencoded");
    if (!reply) return transport_error(reply.error());
    if (reply->status != 200) return denied(reply->status, reply->body);
    auto parsed = parse_json_body(*reply);
    if (!parsed) return parsed.error();
    if (!parsed->contains("access_token") ||
        !(*parsed)["access_token"].is_string()) {
        return transport_error("token response lacks access_token");
    }
    return (*parsed)["access_token"].get<std::string>();
}

Result<CapabilitySet, Error> declared_capabilities(const std::string& compact) {
    auto env = jose::decode_envelope(compact);
    if (!env) {
        return protocol_error("undecodable token: " + jose::to_string(env.error()));
    }
    const json& claims = env->claims;
    if (claims.contains("parent") && claims["parent"].is_string()) {
        auto parent = declared_capabilities(claims["parent"].get<std::string>());
        if (!parent) return parent.error();
        if (!claims.contains("att")) {
            return protocol_error("delegation lacks an attenuation mask");
        }
        auto mask = CapabilitySet::from_json(claims["att"]);
        if (!mask) return protocol_error("bad attenuation mask: " + mask.error());
        return parent->attenuate(*mask);
    }
    if (!claims.contains("vc") || !claims["vc"].is_object() ||
        !claims["vc"].contains("credentialSubject") ||
        !claims["vc"]["credentialSubject"].contains("capabilities")) {
        return protocol_error("token carries no capability credential");
    }
    auto caps =
        CapabilitySet::from_json(claims["vc"]["credentialSubject"]["capabilities"]);
    if (!caps) return protocol_error("bad capability list: " + caps.error());
    return *caps;
}

namespace {

// A token is usable by `key` only if its cnf binds that key.
Result<Unit, Error> check_binding(const jose::SignedEnvelope& env,
                                  const std::string& holder_thumbprint) {
    const json& claims = env.claims;
    if (!claims.contains("cnf") || !claims["cnf"].is_object() ||
        !claims["cnf"].contains("jwk")) {
        return protocol_error("token lacks a cnf.jwk binding");
    }
    auto thumb = jose::thumbprint(claims["cnf"]["jwk"]);
    if (!thumb) {
        return protocol_error("token cnf.jwk: " + jose::to_string(thumb.error()));
    }
    if (*thumb != holder_thumbprint) {
        return protocol_error("token is bound to a different key");
    }
    return Unit{};
}

}  // namespace

Result<std::string, Error> combine_presentation(
    const std::vector<std::string>& tokens, const jose::KeyPair& key,
    int64_t now) {
    if (tokens.empty()) {
        return protocol_error("a presentation needs at least one token");
    }
    auto thumb = jose::thumbprint(key.public_jwk());
    if (!thumb) return protocol_error(jose::to_string(thumb.error()));
    for (const auto& token : tokens) {
        auto env = jose::decode_envelope(token);
        if (!env) {
            return protocol_error("undecodable token: " +
                                  jose::to_string(env.error()));
        }
        auto bound = check_binding(*env, *thumb);
        if (!bound) return bound.error();
    }
    json claims = {{"iss", *thumb}, {"vp", tokens}, {"iat", now}};
    return jose::sign_envelope(json{{"typ", "vp+jwt"}}, claims, key).compact;
}

Result<std::string, Error> delegate(const std::string& parent,
                                    const json& delegatee_jwk,
                                    const CapabilitySet& mask,
                                    const jose::KeyPair& key, int64_t now,
                                    int64_t lifetime) {
    if (lifetime <= 0) return protocol_error("lifetime must be positive");
    if (mask.empty()) return protocol_error("attenuation mask is empty");
    auto env = jose::decode_envelope(parent);
    if (!env) {
        return protocol_error("undecodable parent: " +
                              jose::to_string(env.error()));
    }
    auto thumb = jose::thumbprint(key.public_jwk());
    if (!thumb) return protocol_error(jose::to_string(thumb.error()));
    auto bound = check_binding(*env, *thumb);
    if (!bound) return bound.error();
    auto parent_caps = declared_capabilities(parent);
    if (!parent_caps) return parent_caps.error();
    if (!mask.subset_of(*parent_caps)) {
        return protocol_error("mask exceeds the parent token's capabilities");
    }
    auto delegatee_thumb = jose::thumbprint(delegatee_jwk);
    if (!delegatee_thumb) {
        return protocol_error("delegatee key: " +
                              jose::to_string(delegatee_thumb.error()));
    }
    json claims = {{"iss", *thumb},
                   {"cnf", {{"jwk", delegatee_jwk}}},
                   {"parent", parent},
                   {"att", mask.to_json()},
                   {"iat", now},
                   {"exp", now + lifetime}};
    return jose::sign_envelope(json{{"typ", "dlg+jwt"}}, claims, key).compact;
}

Result<HttpReply, Error> access_resource(const std::string& url,
                                         const std::string& token,
                                         const jose::KeyPair& key,
                                         const std::string& method,
                                         const std::string& body,
                                         const Transport& transport,
                                         int64_t now) {
    std::string proof;
    try {
        proof = dpop::create_proof(key, method, url, now);
    } catch (const std::exception& e) {
        return protocol_error(e.what());
    }
    std::vector<std::pair<std::string, std::string>> headers = {
        {"DPoP", proof}, {"Authorization", "DPoP " + token}};
    auto reply = transport(method, url, headers, body,
                           "application/octet-stream");
    if (!reply) return transport_error(reply.error());
    return *reply;
}

Result<json, Error> introspect(const std::string& authority_url,
                               const std::string& token,
                               const Transport& transport) {
    auto reply = transport("POST", authority_url + "/introspect", {},
                           "token=" + token,
                           "application/x-www-form-urlencoded");
    if (!reply) return transport_error(reply.error());
    if (reply->status != 200) return denied(reply->status, reply->body);
    auto parsed = parse_json_body(*reply);
    if (!parsed) return parsed.error();
    return *parsed;
}

Result<json, Error> revoke(const std::string& authority_url, size_t index,
                           const Transport& transport) {
    json body = {{"index", index}};
    auto reply = transport("POST", authority_url + "/admin/revoke", {},
                           body.dump(), "application/json");
    if (!reply) return transport_error(reply.error());
    if (reply->status != 200) return denied(reply->status, reply->body);
    auto parsed = parse_json_body(*reply);
    if (!parsed) return parsed.error();
    return *parsed;
}

}  // namespace capauth::client
