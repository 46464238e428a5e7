#pragma once

#include <functional>
#include <string>
#include <optional>
#include <string_view>

#include "capauth/result.hpp"

namespace capauth {

struct HttpResponse {
    int status = 200;
    std::string body;
    std::string content_type = "application/json";
};

struct TransportError {
    std::string message;
};

// Transport hooks so services can be exercised fully in-process; the real
// implementations wrap an HTTP client.
using HttpGet =
    std::function<Result<std::string, TransportError>(const std::string& url)>;
using HttpPost = std::function<Result<std::string, TransportError>(
    const std::string& url, const std::string& body,
    const std::string& content_type)>;

struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;    // starts with '/', query/fragment stripped
};

std::optional<SplitUrl> split_url(std::string_view url);

}  // namespace capauth
