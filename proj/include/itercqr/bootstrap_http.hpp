#pragma once

#include <httplib.h>

#include "itercqr/bootstrap.hpp"

namespace itercqr {

// POSTs through cpp-httplib (plain HTTP; this build carries no TLS). Kept out
// of bootstrap.hpp so test binaries never pull the HTTP stack in.
inline HttpResponse default_http_transport(const HttpRequest& req) {
    auto scheme_end = req.url.find("://");
    if (scheme_end == std::string::npos) {
        return {0, "", true, "malformed endpoint URL: " + req.url};
    }
    std::string scheme = req.url.substr(0, scheme_end);
    if (scheme != "http") {
        return {0, "", true, "unsupported endpoint scheme '" + scheme + "' (this build is plain HTTP only)"};
    }
    auto path_start = req.url.find('/', scheme_end + 3);
    std::string host = req.url.substr(scheme_end + 3,
                                      path_start == std::string::npos
                                          ? std::string::npos
                                          : path_start - scheme_end - 3);
    std::string path = path_start == std::string::npos ? "/" : req.url.substr(path_start);

    httplib::Client client(("http://" + host).c_str());
    client.set_connection_timeout(0, req.timeout_ms * 1000);
    client.set_read_timeout(req.timeout_ms / 1000, (req.timeout_ms % 1000) * 1000);
    httplib::Headers headers;
    std::string content_type = "application/json";
    for (const auto& [k, v] : req.headers) {
        if (k == "Content-Type") {
            content_type = v;
        } else {
            headers.emplace(k, v);
        }
    }
    auto result = client.Post(path.c_str(), headers, req.body, content_type.c_str());
    if (!result) {
        return {0, "", true, httplib::to_string(result.error())};
    }
    return {result->status, result->body, false, ""};
}

}  // namespace itercqr
