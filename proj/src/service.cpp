#include "irspot/service.hpp"

#include "irspot/base64.hpp"
#include "irspot/error.hpp"
#include "irspot/image.hpp"

#include <httplib.h>

#include <cstring>
#include <ctime>
#include <fstream>
#include <random>

namespace irspot {

namespace fs = std::filesystem;

namespace {

std::string new_session_id() {
    static std::mutex mu;
    static std::random_device rd;
    std::lock_guard lock(mu);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string id;
    for (int i = 0; i < 4; ++i) {
        std::uint32_t v = rd();
        for (int k = 0; k < 8; ++k, v >>= 4) id += kHex[v & 0xf];
    }
    return id;
}

std::string utc_timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

Image image_field(const nlohmann::json& body, const char* field) {
    if (!body.contains(field)) throw ServiceError(400, "missing_field", std::string("missing ") + field, field);
    if (!body[field].is_string()) {
        throw ServiceError(400, "bad_field", std::string(field) + " must be a base64 PNG string", field);
    }
    try {
        const auto bytes = base64_decode(body[field].get<std::string>());
        return decode_image(bytes);
    } catch (const Error& e) {
        throw ServiceError(400, "bad_image", std::string(field) + ": " + e.what(), field);
    }
}

std::string preview_png(const Image& img) { return base64_encode(encode_png(img)); }

PerturbationConfig parse_config(const nlohmann::json& body, std::size_t h, std::size_t w,
                                const std::string& prefix) {
    try {
        PerturbationConfig cfg = config_from_json(body);
        validate(cfg, h, w);
        return cfg;
    } catch (const ValidationError& e) {
        const std::string field = prefix.empty() ? e.field() : prefix + "." + e.field();
        throw ServiceError(422, "invalid_config", e.what(), field);
    }
}

// Lossless image encoding for snapshots.
nlohmann::json raw_image(const Image& img) {
    std::vector<std::uint8_t> bytes(img.size() * sizeof(double));
    std::memcpy(bytes.data(), img.data().data(), bytes.size());
    return {{"height", img.height()}, {"width", img.width()}, {"f64", base64_encode(bytes)}};
}

Image raw_image_from(const nlohmann::json& j) {
    const auto h = j.at("height").get<std::size_t>();
    const auto w = j.at("width").get<std::size_t>();
    const auto bytes = base64_decode(j.at("f64").get<std::string>());
    std::vector<double> data(h * w * 3);
    if (bytes.size() != data.size() * sizeof(double)) throw Error("snapshot image size mismatch");
    std::memcpy(data.data(), bytes.data(), bytes.size());
    return Image(h, w, std::move(data));
}

}  // namespace

class SessionService::OraclePool {
public:
    OraclePool(std::size_t size, const OracleFactory& make) {
        for (std::size_t i = 0; i < std::max<std::size_t>(size, 1); ++i) free_.push_back(make());
    }

    class Lease {
    public:
        Lease(OraclePool& pool, std::unique_ptr<EmbeddingOracle> o) : pool_(pool), oracle_(std::move(o)) {}
        ~Lease() { pool_.give_back(std::move(oracle_)); }
        Lease(const Lease&) = delete;
        Lease& operator=(const Lease&) = delete;
        EmbeddingOracle& operator*() { return *oracle_; }

    private:
        OraclePool& pool_;
        std::unique_ptr<EmbeddingOracle> oracle_;
    };

    Lease acquire() {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return !free_.empty(); });
        auto o = std::move(free_.back());
        free_.pop_back();
        return Lease(*this, std::move(o));
    }

private:
    void give_back(std::unique_ptr<EmbeddingOracle> o) {
        {
            std::lock_guard lock(mu_);
            free_.push_back(std::move(o));
        }
        cv_.notify_one();
    }

    std::mutex mu_;
    std::condition_variable cv_;
    std::vector<std::unique_ptr<EmbeddingOracle>> free_;
};

struct SessionService::Session {
    std::string id;
    Image attacker;
    EmbeddingVector victim;
    PerturbationConfig config;
    std::optional<PerturbationConfig> target;
    std::vector<std::pair<std::size_t, double>> history;
    std::size_t revision = 0;
    std::uint64_t seed = 0;
    std::optional<AttackStepper> stepper;
    std::chrono::steady_clock::time_point last_access;
    std::mutex mu;

    nlohmann::json state() const {
        nlohmann::json hist = nlohmann::json::array();
        for (const auto& [rev, loss] : history) hist.push_back({{"revision", rev}, {"loss", loss}});
        return {{"id", id},
                {"revision", revision},
                {"width", attacker.width()},
                {"height", attacker.height()},
                {"config", to_json(config)},
                {"target", target ? to_json(*target) : nlohmann::json()},
                {"loss", history.back().second},
                {"history", std::move(hist)}};
    }
};

SessionService::SessionService(ServiceConfig cfg, const OracleFactory& make_oracle)
    : cfg_(std::move(cfg)), pool_(std::make_unique<OraclePool>(cfg_.jobs, make_oracle)) {
    validate(cfg_.attack);
    if (cfg_.state_dir) {
        fs::create_directories(*cfg_.state_dir);
        load_snapshots();
    }
}

SessionService::~SessionService() = default;

std::shared_ptr<SessionService::Session> SessionService::find(const std::string& id) {
    std::lock_guard lock(mu_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw ServiceError(404, "not_found", "no session " + id);
    return it->second;
}

std::size_t SessionService::session_count() const {
    std::lock_guard lock(mu_);
    return sessions_.size();
}

std::size_t SessionService::expire_idle() {
    const auto now = cfg_.clock();
    std::vector<std::string> expired;
    {
        std::lock_guard lock(mu_);
        for (auto it = sessions_.begin(); it != sessions_.end();) {
            std::unique_lock session_lock(it->second->mu, std::try_to_lock);
            if (session_lock.owns_lock() && now - it->second->last_access > cfg_.idle_timeout) {
                expired.push_back(it->first);
                session_lock.unlock();
                it = sessions_.erase(it);
            } else {
                ++it;
            }
        }
    }
    if (cfg_.state_dir) {
        for (const auto& id : expired) fs::remove(*cfg_.state_dir / (id + ".json"));
    }
    return expired.size();
}

void SessionService::persist(const Session& s) const {
    if (!cfg_.state_dir) return;
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& [rev, loss] : s.history) hist.push_back({rev, loss});
    const nlohmann::json snap = {{"id", s.id},
                                 {"attacker", raw_image(s.attacker)},
                                 {"victim_embedding", s.victim.values},
                                 {"config", to_json(s.config)},
                                 {"target", s.target ? to_json(*s.target) : nlohmann::json()},
                                 {"history", std::move(hist)},
                                 {"revision", s.revision},
                                 {"seed", s.seed}};
    const fs::path final_path = *cfg_.state_dir / (s.id + ".json");
    const fs::path tmp = final_path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        out << snap.dump();
    }
    fs::rename(tmp, final_path);
}

void SessionService::load_snapshots() {
    for (const auto& entry : fs::directory_iterator(*cfg_.state_dir)) {
        if (entry.path().extension() != ".json") continue;
        try {
            std::ifstream in(entry.path());
            const nlohmann::json j = nlohmann::json::parse(in);
            auto s = std::make_shared<Session>();
            s->id = j.at("id").get<std::string>();
            s->attacker = raw_image_from(j.at("attacker"));
            s->victim.values = j.at("victim_embedding").get<std::vector<double>>();
            s->config = config_from_json(j.at("config"));
            if (!j.at("target").is_null()) s->target = config_from_json(j.at("target"));
            for (const auto& h : j.at("history")) {
                s->history.emplace_back(h[0].get<std::size_t>(), h[1].get<double>());
            }
            s->revision = j.at("revision").get<std::size_t>();
            s->seed = j.at("seed").get<std::uint64_t>();
            s->last_access = cfg_.clock();
            if (s->history.empty()) continue;
            sessions_[s->id] = std::move(s);
        } catch (const std::exception&) {
            // Unreadable snapshots are left on disk and ignored.
        }
    }
}

nlohmann::json SessionService::create(const nlohmann::json& body) {
    if (!body.is_object()) throw ServiceError(400, "bad_request", "body must be a JSON object");
    auto s = std::make_shared<Session>();
    s->attacker = image_field(body, "attacker");

    auto lease = pool_->acquire();
    if (body.contains("victim_embedding")) {
        try {
            s->victim.values = body["victim_embedding"].get<std::vector<double>>();
        } catch (const nlohmann::json::exception&) {
            throw ServiceError(400, "bad_field", "victim_embedding must be an array of numbers",
                               "victim_embedding");
        }
        if (s->victim.values.empty()) {
            throw ServiceError(400, "bad_field", "victim_embedding is empty", "victim_embedding");
        }
    } else {
        const Image victim = image_field(body, "victim");
        if (!victim.same_shape(s->attacker)) {
            throw ServiceError(422, "size_mismatch", "attacker and victim sizes differ", "victim");
        }
        s->victim = (*lease).embed(victim);
    }

    s->seed = cfg_.attack.seed;
    if (body.contains("seed")) {
        if (!body["seed"].is_number_unsigned()) {
            throw ServiceError(400, "bad_field", "seed must be a non-negative integer", "seed");
        }
        s->seed = body["seed"].get<std::uint64_t>();
    }
    const std::size_t h = s->attacker.height();
    const std::size_t w = s->attacker.width();
    if (body.contains("target") && !body["target"].is_null()) {
        s->target = parse_config(body["target"], h, w, "target");
    }

    AttackConfig attack = cfg_.attack;
    attack.seed = s->seed;
    s->config = initial_config(attack, h, w);
    s->config.amp = 0.0;
    Objective objective(s->attacker, s->victim, *lease);
    const double loss = objective.value(s->config);
    s->history.emplace_back(0, loss);
    s->last_access = cfg_.clock();
    s->id = new_session_id();

    nlohmann::json out = s->state();
    persist(*s);
    std::lock_guard lock(mu_);
    sessions_[s->id] = s;
    return out;
}

nlohmann::json SessionService::get(const std::string& id) {
    auto s = find(id);
    std::lock_guard lock(s->mu);
    return s->state();
}

nlohmann::json SessionService::put_config(const std::string& id, const nlohmann::json& body) {
    auto s = find(id);
    std::lock_guard lock(s->mu);
    s->last_access = cfg_.clock();
    PerturbationConfig config = parse_config(body, s->attacker.height(), s->attacker.width(), "");

    auto lease = pool_->acquire();
    Objective objective(s->attacker, s->victim, *lease);
    const double loss = objective.value(config);
    s->config = std::move(config);
    s->stepper.reset();  // manual edit: Adam moments start over
    ++s->revision;
    s->history.emplace_back(s->revision, loss);
    persist(*s);
    return {{"revision", s->revision},
            {"loss", loss},
            {"preview", preview_png(clamp01(synthesize(s->attacker, s->config)))}};
}

nlohmann::json SessionService::put_target(const std::string& id, const nlohmann::json& body) {
    auto s = find(id);
    std::lock_guard lock(s->mu);
    s->last_access = cfg_.clock();
    s->target = parse_config(body, s->attacker.height(), s->attacker.width(), "");
    ++s->revision;
    s->history.emplace_back(s->revision, s->history.back().second);
    persist(*s);
    return {{"revision", s->revision}, {"target", to_json(*s->target)}};
}

nlohmann::json SessionService::step(const std::string& id, const nlohmann::json& body) {
    if (!body.is_object() || !body.contains("n") || !body["n"].is_number_integer()) {
        throw ServiceError(422, "invalid_step", "n must be an integer >= 1", "n");
    }
    const auto n = body["n"].get<long long>();
    if (n < 1) throw ServiceError(422, "invalid_step", "n must be >= 1", "n");

    auto s = find(id);
    std::lock_guard lock(s->mu);
    s->last_access = cfg_.clock();
    AttackConfig attack = cfg_.attack;
    attack.seed = s->seed;
    if (!s->stepper) {
        s->stepper.emplace(s->config, attack, Goal::Minimize, s->attacker.height(), s->attacker.width());
    }

    auto lease = pool_->acquire();
    Objective objective(s->attacker, s->victim, *lease);
    std::vector<double> trajectory;
    for (long long i = 0; i < n; ++i) trajectory.push_back(s->stepper->step(objective));
    s->config = s->stepper->config();
    const double loss = objective.value(s->config);
    ++s->revision;
    s->history.emplace_back(s->revision, loss);
    persist(*s);
    return {{"revision", s->revision},
            {"config", to_json(s->config)},
            {"trajectory", trajectory},
            {"loss", loss},
            {"dropped_spots", s->stepper->dropped_spots()}};
}

nlohmann::json SessionService::calibrate(const std::string& id, const nlohmann::json& body) {
    if (!body.is_object()) throw ServiceError(400, "bad_request", "body must be a JSON object");
    auto s = find(id);
    std::lock_guard lock(s->mu);
    s->last_access = cfg_.clock();
    if (!s->target) {
        throw ServiceError(409, "no_target", "session has no target configuration; run or import an attack first");
    }
    const Image on = image_field(body, "on");
    const Image off = image_field(body, "off");
    if (!on.same_shape(off)) throw ServiceError(422, "size_mismatch", "on and off frames differ in size", "off");
    if (!on.same_shape(s->attacker)) {
        throw ServiceError(422, "size_mismatch", "frames do not match the session canvas", "on");
    }
    auto lease = pool_->acquire();
    return to_json(calibrate_once(on, off, *s->target, s->victim, *lease, cfg_.calibration, utc_timestamp()));
}

void SessionService::mount(httplib::Server& server) {
    const std::string origin = cfg_.cors_origin;
    server.set_default_headers({{"Access-Control-Allow-Origin", origin},
                                {"Access-Control-Allow-Methods", "GET, POST, PUT, OPTIONS"},
                                {"Access-Control-Allow-Headers", "Content-Type"}});
    server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    using Handler = std::function<nlohmann::json(const httplib::Request&, const nlohmann::json&)>;
    auto wrap = [this](Handler handler, int ok_status) {
        return [this, handler, ok_status](const httplib::Request& req, httplib::Response& res) {
            auto fail = [&](int status, const std::string& code, const std::string& message,
                            const std::string& field) {
                nlohmann::json err = {{"code", code}, {"message", message}};
                if (!field.empty()) err["field"] = field;
                res.status = status;
                res.set_content(nlohmann::json{{"error", err}}.dump(), "application/json");
            };
            try {
                expire_idle();
                nlohmann::json body;
                if (!req.body.empty()) {
                    try {
                        body = nlohmann::json::parse(req.body);
                    } catch (const nlohmann::json::parse_error&) {
                        return fail(400, "malformed_json", "request body is not valid JSON", "");
                    }
                }
                const nlohmann::json out = handler(req, body);
                res.status = ok_status;
                res.set_content(out.dump(), "application/json");
            } catch (const ServiceError& e) {
                fail(e.status(), e.code(), e.what(), e.field());
            } catch (const ValidationError& e) {
                fail(422, "invalid", e.what(), e.field());
            } catch (const OracleError& e) {
                fail(502, "oracle_error", e.what(), "");
            } catch (const std::exception& e) {
                fail(500, "internal", e.what(), "");
            }
        };
    };

    server.Post("/sessions", wrap([this](const auto&, const auto& body) { return create(body); }, 201));
    server.Get(R"(/sessions/([0-9a-f]+))",
               wrap([this](const auto& req, const auto&) { return get(req.matches[1]); }, 200));
    server.Put(R"(/sessions/([0-9a-f]+)/config)",
               wrap([this](const auto& req, const auto& body) { return put_config(req.matches[1], body); }, 200));
    server.Put(R"(/sessions/([0-9a-f]+)/target)",
               wrap([this](const auto& req, const auto& body) { return put_target(req.matches[1], body); }, 200));
    server.Post(R"(/sessions/([0-9a-f]+)/step)",
                wrap([this](const auto& req, const auto& body) { return step(req.matches[1], body); }, 200));
    server.Post(R"(/sessions/([0-9a-f]+)/calibrate)",
                wrap([this](const auto& req, const auto& body) { return calibrate(req.matches[1], body); }, 200));
}

}  // namespace irspot
