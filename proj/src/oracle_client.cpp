#include "irspot/oracle_client.hpp"

#include "irspot/base64.hpp"
#include "irspot/error.hpp"

#include <httplib.h>

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <bit>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <mutex>

namespace irspot {

namespace {

void ignore_sigpipe() {
    static std::once_flag once;
    std::call_once(once, [] { ::signal(SIGPIPE, SIG_IGN); });
}

}  // namespace

SubprocessTransport::SubprocessTransport(const std::string& command,
                                         std::chrono::milliseconds timeout)
    : timeout_(timeout) {
    ignore_sigpipe();
    int in_pipe[2];
    int out_pipe[2];
    if (::pipe(in_pipe) != 0) throw OracleError("pipe failed: " + std::string(std::strerror(errno)));
    if (::pipe(out_pipe) != 0) {
        ::close(in_pipe[0]);
        ::close(in_pipe[1]);
        throw OracleError("pipe failed: " + std::string(std::strerror(errno)));
    }
    pid_ = ::fork();
    if (pid_ < 0) {
        for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) ::close(fd);
        throw OracleError("fork failed: " + std::string(std::strerror(errno)));
    }
    if (pid_ == 0) {
        // Own process group, so teardown reaches everything the shell spawns.
        ::setpgid(0, 0);
        ::dup2(in_pipe[0], STDIN_FILENO);
        ::dup2(out_pipe[1], STDOUT_FILENO);
        for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) ::close(fd);
        ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
        ::_exit(127);
    }
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
    ::fcntl(to_child_, F_SETFD, FD_CLOEXEC);
    ::fcntl(from_child_, F_SETFD, FD_CLOEXEC);
}

SubprocessTransport::~SubprocessTransport() {
    if (to_child_ >= 0) ::close(to_child_);
    if (from_child_ >= 0) ::close(from_child_);
    if (pid_ > 0) {
        int status = 0;
        // Give the oracle a moment to exit on EOF before killing it.
        for (int i = 0; i < 50; ++i) {
            if (::waitpid(pid_, &status, WNOHANG) == pid_) return;
            ::usleep(2000);
        }
        ::kill(-pid_, SIGKILL);
        ::kill(pid_, SIGKILL);
        ::waitpid(pid_, &status, 0);
    }
}

std::string SubprocessTransport::exchange(const std::string&, const std::string& request_line) {
    if (to_child_ < 0) throw OracleError("oracle process is closed");
    std::string payload = request_line;
    payload += '\n';
    std::size_t written = 0;
    while (written < payload.size()) {
        const ssize_t n = ::write(to_child_, payload.data() + written, payload.size() - written);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw OracleError("oracle process unreachable: " + std::string(std::strerror(errno)));
        }
        written += static_cast<std::size_t>(n);
    }

    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    for (;;) {
        if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
            std::string line = buffer_.substr(0, nl);
            buffer_.erase(0, nl + 1);
            return line;
        }
        const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
            deadline - std::chrono::steady_clock::now());
        if (remaining.count() <= 0) throw OracleError("oracle timed out");
        pollfd pfd{from_child_, POLLIN, 0};
        const int rc = ::poll(&pfd, 1, static_cast<int>(remaining.count()));
        if (rc < 0) {
            if (errno == EINTR) continue;
            throw OracleError("poll failed: " + std::string(std::strerror(errno)));
        }
        if (rc == 0) throw OracleError("oracle timed out");
        char chunk[65536];
        const ssize_t n = ::read(from_child_, chunk, sizeof chunk);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw OracleError("oracle read failed: " + std::string(std::strerror(errno)));
        }
        if (n == 0) throw OracleError("oracle process closed its output");
        buffer_.append(chunk, static_cast<std::size_t>(n));
    }
}

struct HttpTransport::Impl {
    explicit Impl(const std::string& url) : client(url) {}
    httplib::Client client;
};

HttpTransport::HttpTransport(const std::string& base_url, std::chrono::milliseconds timeout)
    : impl_(std::make_unique<Impl>(base_url)) {
    if (!impl_->client.is_valid()) throw OracleError("invalid oracle URL: " + base_url);
    const auto sec = timeout.count() / 1000;
    const auto usec = (timeout.count() % 1000) * 1000;
    impl_->client.set_connection_timeout(sec, usec);
    impl_->client.set_read_timeout(sec, usec);
    impl_->client.set_write_timeout(sec, usec);
    impl_->client.set_keep_alive(true);
}

HttpTransport::~HttpTransport() = default;

std::string HttpTransport::exchange(const std::string& op, const std::string& request_line) {
    auto res = impl_->client.Post("/" + op, request_line, "application/json");
    if (!res) throw OracleError("oracle unreachable: " + httplib::to_string(res.error()));
    std::string body = res->body;
    while (!body.empty() && (body.back() == '\n' || body.back() == '\r')) body.pop_back();
    if (res->status != 200) {
        // Non-2xx replies may still carry a protocol error object.
        if (body.empty()) throw OracleError("oracle HTTP status " + std::to_string(res->status));
    }
    return body;
}

std::unique_ptr<OracleTransport> make_transport(const std::string& endpoint,
                                                std::chrono::milliseconds timeout) {
    if (endpoint.empty()) throw OracleError("external oracle needs an endpoint");
    if (endpoint.rfind("http://", 0) == 0 || endpoint.rfind("https://", 0) == 0) {
        return std::make_unique<HttpTransport>(endpoint, timeout);
    }
    return std::make_unique<SubprocessTransport>(endpoint, timeout);
}

static_assert(std::endian::native == std::endian::little, "pixel encoding assumes little-endian");

nlohmann::json image_request(const std::string& op, const Image& img) {
    std::vector<std::uint8_t> bytes(img.size() * sizeof(float));
    std::size_t k = 0;
    for (double v : img.data()) {
        const float f = static_cast<float>(v);
        std::memcpy(bytes.data() + k, &f, sizeof f);
        k += sizeof f;
    }
    return {{"op", op},
            {"width", img.width()},
            {"height", img.height()},
            {"pixels", base64_encode(bytes)}};
}

Image image_from_request(const nlohmann::json& request) {
    try {
        const auto width = request.at("width").get<std::size_t>();
        const auto height = request.at("height").get<std::size_t>();
        const auto bytes = base64_decode(request.at("pixels").get<std::string>());
        if (width == 0 || height == 0) throw ImageError("zero-dimension image");
        if (bytes.size() != width * height * 3 * sizeof(float)) {
            throw ImageError("pixel payload does not match width x height x 3 f32");
        }
        std::vector<double> data(width * height * 3);
        for (std::size_t i = 0; i < data.size(); ++i) {
            float f;
            std::memcpy(&f, bytes.data() + i * sizeof f, sizeof f);
            data[i] = f;
        }
        return Image(height, width, std::move(data));
    } catch (const nlohmann::json::exception& e) {
        throw ImageError(std::string("malformed image request: ") + e.what());
    }
}

EmbeddingVector parse_embed_response(const std::string& line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
        throw OracleError("malformed oracle response: not JSON");
    }
    if (!j.is_object()) throw OracleError("malformed oracle response: not an object");
    if (j.contains("error")) {
        throw OracleError("oracle error: " +
                          (j["error"].is_string() ? j["error"].get<std::string>() : j["error"].dump()));
    }
    if (!j.contains("embedding") || !j["embedding"].is_array()) {
        throw OracleError("malformed oracle response: missing embedding");
    }
    EmbeddingVector out;
    double sq = 0.0;
    for (const auto& v : j["embedding"]) {
        if (!v.is_number()) throw OracleError("malformed oracle response: non-numeric embedding");
        const double x = v.get<double>();
        if (!std::isfinite(x)) throw OracleError("malformed oracle response: non-finite value");
        out.values.push_back(x);
        sq += x * x;
    }
    if (out.values.empty()) throw OracleError("malformed oracle response: empty embedding");
    out.unit_norm = std::abs(std::sqrt(sq) - 1.0) <= 1e-6;
    return out;
}

ExternalEmbeddingOracle::ExternalEmbeddingOracle(std::unique_ptr<OracleTransport> transport,
                                                 std::size_t input_size)
    : transport_(std::move(transport)), input_size_(input_size) {}

EmbeddingVector ExternalEmbeddingOracle::do_embed(const Image& clamped) {
    if (input_size_ != 0 && (clamped.height() != input_size_ || clamped.width() != input_size_)) {
        throw OracleError("wrong image size for oracle: expected " + std::to_string(input_size_) +
                          "x" + std::to_string(input_size_));
    }
    const std::string line = transport_->exchange("embed", image_request("embed", clamped).dump());
    EmbeddingVector out = parse_embed_response(line);
    if (dims_ && *dims_ != out.size()) {
        throw OracleError("oracle embedding length changed from " + std::to_string(*dims_) + " to " +
                          std::to_string(out.size()));
    }
    dims_ = out.size();
    return out;
}

std::unique_ptr<EmbeddingOracle> make_oracle(const OracleConfig& cfg) {
    if (cfg.threshold <= 0.0) throw Error("oracle threshold must be > 0");
    if (cfg.kind == OracleConfig::Kind::Reference) return std::make_unique<ReferenceEmbedding>();
    return std::make_unique<ExternalEmbeddingOracle>(make_transport(cfg.endpoint, cfg.timeout),
                                                     cfg.input_size);
}

}  // namespace irspot
