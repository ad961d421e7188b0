#pragma once

#include "irspot/embedding.hpp"
#include "irspot/image.hpp"

#include <json.hpp>

#include <chrono>
#include <memory>
#include <optional>
#include <string>

namespace irspot {

/// One request line out, one response line back. Implementations own a
/// single connection and allow one request in flight.
class OracleTransport {
public:
    virtual ~OracleTransport() = default;
    virtual std::string exchange(const std::string& op, const std::string& request_line) = 0;
};

/// Runs `command` through /bin/sh and speaks newline-delimited JSON over its
/// stdin/stdout.
class SubprocessTransport final : public OracleTransport {
public:
    SubprocessTransport(const std::string& command, std::chrono::milliseconds timeout);
    ~SubprocessTransport() override;
    SubprocessTransport(const SubprocessTransport&) = delete;
    SubprocessTransport& operator=(const SubprocessTransport&) = delete;

    std::string exchange(const std::string& op, const std::string& request_line) override;

private:
    int pid_ = -1;
    int to_child_ = -1;
    int from_child_ = -1;
    std::string buffer_;
    std::chrono::milliseconds timeout_;
};

/// POSTs each request to <base_url>/<op>.
class HttpTransport final : public OracleTransport {
public:
    HttpTransport(const std::string& base_url, std::chrono::milliseconds timeout);
    ~HttpTransport() override;

    std::string exchange(const std::string& op, const std::string& request_line) override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

std::unique_ptr<OracleTransport> make_transport(const std::string& endpoint,
                                                std::chrono::milliseconds timeout);

/// {"op":op,"width":W,"height":H,"pixels":base64(row-major little-endian f32 RGB)}
nlohmann::json image_request(const std::string& op, const Image& img);

/// Inverse of image_request, for oracle servers and test stubs.
Image image_from_request(const nlohmann::json& request);

/// Parses {"embedding":[...]} or {"error":"msg"}; anything else is an OracleError.
EmbeddingVector parse_embed_response(const std::string& line);

/// Embedding oracle reached over the wire protocol. The first response fixes
/// the embedding length; a later reply of a different length is an error.
class ExternalEmbeddingOracle final : public EmbeddingOracle {
public:
    ExternalEmbeddingOracle(std::unique_ptr<OracleTransport> transport, std::size_t input_size = 0);

protected:
    EmbeddingVector do_embed(const Image& clamped) override;

private:
    std::unique_ptr<OracleTransport> transport_;
    std::size_t input_size_;
    std::optional<std::size_t> dims_;
};

}  // namespace irspot
