#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "calign/error.hpp"
#include "calign/runner.hpp"

namespace calign {

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos)
    throw RunnerError(RunnerError::Kind::transport, "endpoint URL lacks a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

class HttplibTransport : public HttpTransport {
 public:
  explicit HttplibTransport(int timeout_seconds) : timeout_seconds_(timeout_seconds) {}

  HttpResponse post(const std::string& url, const std::map<std::string, std::string>& headers,
                    const std::string& body) override {
    const auto parts = split_url(url);
    httplib::Client client(parts.origin);
    client.set_connection_timeout(timeout_seconds_, 0);
    client.set_read_timeout(timeout_seconds_, 0);
    client.set_write_timeout(timeout_seconds_, 0);
    httplib::Headers h;
    for (const auto& [k, v] : headers) h.emplace(k, v);
    auto res = client.Post(parts.path, h, body, "application/json");
    if (!res) {
      throw RunnerError(RunnerError::Kind::transport,
                        "request to " + parts.origin + " failed: " + httplib::to_string(res.error()));
    }
    return {res->status, res->body};
  }

 private:
  int timeout_seconds_;
};

}  // namespace

std::shared_ptr<HttpTransport> make_httplib_transport(int timeout_seconds) {
  return std::make_shared<HttplibTransport>(timeout_seconds);
}

}  // namespace calign
