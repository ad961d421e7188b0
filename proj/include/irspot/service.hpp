#pragma once

#include "irspot/calibration.hpp"
#include "irspot/embedding.hpp"
#include "irspot/error.hpp"
#include "irspot/optimizer.hpp"
#include "irspot/spot_model.hpp"
#include "irspot/study.hpp"

#include <json.hpp>

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace httplib {
class Server;
}

namespace irspot {

/// Error surfaced to HTTP clients as {"error": {"code", "message", "field"?}}.
class ServiceError : public Error {
public:
    ServiceError(int status, std::string code, const std::string& message, std::string field = {})
        : Error(message), status_(status), code_(std::move(code)), field_(std::move(field)) {}

    int status() const noexcept { return status_; }
    const std::string& code() const noexcept { return code_; }
    const std::string& field() const noexcept { return field_; }

private:
    int status_;
    std::string code_;
    std::string field_;
};

struct ServiceConfig {
    AttackConfig attack;
    CalibrationSettings calibration;
    std::size_t jobs = 1;
    std::optional<std::filesystem::path> state_dir;
    std::chrono::seconds idle_timeout{3600};
    std::string cors_origin = "*";
    std::function<std::chrono::steady_clock::time_point()> clock = [] {
        return std::chrono::steady_clock::now();
    };
};

/// Stateful backend for the interactive calibration loop. Sessions are
/// independent; requests against one session are serialised.
class SessionService {
public:
    SessionService(ServiceConfig cfg, const OracleFactory& make_oracle);
    ~SessionService();

    nlohmann::json create(const nlohmann::json& body);
    nlohmann::json get(const std::string& id);
    nlohmann::json put_config(const std::string& id, const nlohmann::json& body);
    nlohmann::json put_target(const std::string& id, const nlohmann::json& body);
    nlohmann::json step(const std::string& id, const nlohmann::json& body);
    nlohmann::json calibrate(const std::string& id, const nlohmann::json& body);

    /// Drops sessions idle for longer than the configured timeout.
    std::size_t expire_idle();
    std::size_t session_count() const;

    /// Registers every route (and CORS handling) on `server`.
    void mount(httplib::Server& server);

private:
    struct Session;
    class OraclePool;

    std::shared_ptr<Session> find(const std::string& id);
    void persist(const Session& s) const;
    void load_snapshots();

    ServiceConfig cfg_;
    std::unique_ptr<OraclePool> pool_;
    mutable std::mutex mu_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
};

}  // namespace irspot
