#include "capauth/http.hpp"

namespace capauth {

std::optional<SplitUrl> split_url(std::string_view url) {
    size_t scheme_end = url.find("://");
    if (scheme_end == std::string_view::npos || scheme_end == 0) {
        return std::nullopt;
    }
    size_t host_start = scheme_end + 3;
    size_t path_start = url.find_first_of("/?#", host_start);
    if (path_start == host_start) return std::nullopt;  // empty host

    SplitUrl out;
    if (path_start == std::string_view::npos) {
        out.origin = std::string(url);
        out.path = "/";
        return out;
    }
    out.origin = std::string(url.substr(0, path_start));
    if (url[path_start] != '/') {
        out.path = "/";
        return out;
    }
    std::string_view tail = url.substr(path_start);
    size_t cut = tail.find_first_of("?#");
    out.path = std::string(cut == std::string_view::npos ? tail : tail.substr(0, cut));
    return out;
}

}  // namespace capauth
