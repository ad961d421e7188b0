#include "irspot/base64.hpp"
#include "irspot/image.hpp"
#include "irspot/service.hpp"
#include "irspot/synthetic.hpp"

#include <httplib.h>
#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <set>
#include <thread>

using namespace irspot;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::size_t kSize = 64;

std::string png64(const Image& img) { return base64_encode(encode_png(img)); }

// Images pass through 8-bit PNG on the wire; tests compare against the
// quantised versions.
Image quantised(const Image& img) { return decode_image(encode_png(img)); }

OracleFactory reference_factory() {
    return [] { return std::make_unique<ReferenceEmbedding>(); };
}

ServiceConfig small_config() {
    ServiceConfig cfg;
    cfg.attack.n_spots = 3;
    cfg.attack.seed = 11;
    return cfg;
}

json pair_body(std::uint64_t a = 1, std::uint64_t v = 2) {
    return {{"attacker", png64(synthetic_face(a, kSize))}, {"victim", png64(synthetic_face(v, kSize))}};
}

template <typename F>
ServiceError service_error(F&& f) {
    try {
        f();
    } catch (const ServiceError& e) {
        return e;
    }
    ADD_FAILURE() << "no ServiceError thrown";
    return ServiceError(0, "", "");
}

PerturbationConfig demo_config() {
    PerturbationConfig cfg;
    cfg.amp = 0.02;
    cfg.spots = {{20, 24, 5, 1.0}, {44, 30, 4, 0.8}};
    return cfg;
}

std::string run_cli(const std::string& args) {
    const std::string cmd = std::string(IRSPOT_CLI) + " " + args;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (pipe == nullptr) return {};
    std::string out;
    char buf[256];
    while (std::fgets(buf, sizeof buf, pipe) != nullptr) out += buf;
    pclose(pipe);
    return out;
}

}  // namespace

TEST(SessionCreate, AttackerEqualsVictimGivesZeroLoss) {
    SessionService svc(small_config(), reference_factory());
    const std::string face = png64(synthetic_face(1, kSize));
    const json s = svc.create({{"attacker", face}, {"victim", face}});
    EXPECT_EQ(s["loss"], 0.0);
    EXPECT_EQ(s["revision"], 0);
    EXPECT_EQ(s["id"].get<std::string>().size(), 32u);
    EXPECT_EQ(s["config"]["amp"], 0.0);
    EXPECT_TRUE(s["target"].is_null());
}

TEST(SessionCreate, MissingOrBadFields) {
    SessionService svc(small_config(), reference_factory());
    const std::string face = png64(synthetic_face(1, kSize));
    auto e = service_error([&] { svc.create({{"attacker", face}}); });
    EXPECT_EQ(e.status(), 400);
    EXPECT_EQ(e.field(), "victim");
    e = service_error([&] { svc.create({{"victim", face}}); });
    EXPECT_EQ(e.status(), 400);
    e = service_error([&] { svc.create({{"attacker", face}, {"victim", "bm90IGEgcG5n"}}); });
    EXPECT_EQ(e.status(), 400);
    EXPECT_EQ(e.code(), "bad_image");
    e = service_error(
        [&] { svc.create({{"attacker", face}, {"victim", png64(synthetic_face(2, kSize / 2))}}); });
    EXPECT_EQ(e.status(), 422);
    EXPECT_EQ(svc.session_count(), 0u);
}

TEST(SessionCreate, AcceptsVictimEmbedding) {
    SessionService svc(small_config(), reference_factory());
    ReferenceEmbedding oracle;
    const Image a = quantised(synthetic_face(1, kSize));
    const auto v = oracle.embed(quantised(synthetic_face(2, kSize)));
    const json s = svc.create({{"attacker", png64(a)}, {"victim_embedding", v.values}});
    EXPECT_NEAR(s["loss"].get<double>(), distance(oracle.embed(a), v), 1e-12);
}

TEST(SessionCreate, InitialLossMatchesCliAttackWithZeroIterations) {
    const fs::path dir = fs::temp_directory_path() / "irspot_test_service_cli";
    fs::create_directories(dir);
    save_image(synthetic_face(1, kSize), dir / "a.png");
    save_image(synthetic_face(2, kSize), dir / "v.png");
    const std::string out = run_cli("attack --iters 0 --attacker " + (dir / "a.png").string() +
                                    " --victim " + (dir / "v.png").string());
    const auto pos = out.find("initial_distance ");
    ASSERT_NE(pos, std::string::npos) << out;
    const double cli = std::stod(out.substr(pos + 17));

    SessionService svc(small_config(), reference_factory());
    const json s = svc.create(pair_body());
    EXPECT_NEAR(s["loss"].get<double>(), cli, 1e-12);
}

TEST(SessionConfig, AmpZeroReproducesInitialLoss) {
    SessionService svc(small_config(), reference_factory());
    const json s = svc.create(pair_body());
    PerturbationConfig zero = demo_config();
    zero.amp = 0.0;
    const json r = svc.put_config(s["id"], to_json(zero));
    EXPECT_EQ(r["revision"], 1);
    EXPECT_EQ(r["loss"], s["loss"]);
}

TEST(SessionConfig, ResubmissionIsDeterministic) {
    SessionService svc(small_config(), reference_factory());
    const std::string id = svc.create(pair_body())["id"];
    const json a = svc.put_config(id, to_json(demo_config()));
    const json b = svc.put_config(id, to_json(demo_config()));
    EXPECT_EQ(a["loss"], b["loss"]);
    EXPECT_EQ(a["preview"], b["preview"]);
    EXPECT_EQ(b["revision"].get<int>(), a["revision"].get<int>() + 1);
    const json state = svc.get(id);
    EXPECT_EQ(state["history"].size(), 3u);
    EXPECT_EQ(state["history"][2]["revision"], 2);
}

TEST(SessionConfig, PreviewIsClampedSynthesis) {
    SessionService svc(small_config(), reference_factory());
    const std::string id = svc.create(pair_body())["id"];
    PerturbationConfig hot = demo_config();
    hot.amp = 20.0;
    const json r = svc.put_config(id, to_json(hot));
    const Image preview = decode_image(base64_decode(r["preview"].get<std::string>()));
    const Image expected = quantised(clamp01(synthesize(quantised(synthetic_face(1, kSize)), hot)));
    EXPECT_EQ(preview, expected);
}

TEST(SessionConfig, TargetReplayMatchesAttackBestDistance) {
    ServiceConfig cfg = small_config();
    cfg.attack.max_iters = 40;
    SessionService svc(cfg, reference_factory());
    const std::string id = svc.create(pair_body())["id"];

    ReferenceEmbedding oracle;
    const AttackResult attack = run_attack(quantised(synthetic_face(1, kSize)),
                                           quantised(synthetic_face(2, kSize)), cfg.attack, oracle);
    const json r = svc.put_config(id, to_json(attack.best_config));
    EXPECT_NEAR(r["loss"].get<double>(), attack.best_distance, 1e-9);
}

TEST(SessionConfig, InvariantViolationsAreFieldPrecise) {
    SessionService svc(small_config(), reference_factory());
    const std::string id = svc.create(pair_body())["id"];
    json bad = to_json(demo_config());
    bad["spots"][1]["sigma"] = -1.0;
    auto e = service_error([&] { svc.put_config(id, bad); });
    EXPECT_EQ(e.status(), 422);
    EXPECT_EQ(e.field(), "spots[1].sigma");
    EXPECT_EQ(svc.get(id)["revision"], 0);
    e = service_error([&] { svc.put_config("ffff", to_json(demo_config())); });
    EXPECT_EQ(e.status(), 404);
}

TEST(SessionStep, RejectsNonPositiveCounts) {
    SessionService svc(small_config(), reference_factory());
    const std::string id = svc.create(pair_body())["id"];
    EXPECT_EQ(service_error([&] { svc.step(id, {{"n", 0}}); }).status(), 422);
    EXPECT_EQ(service_error([&] { svc.step(id, {{"n", -3}}); }).status(), 422);
    EXPECT_EQ(service_error([&] { svc.step(id, {{"n", 1.5}}); }).status(), 422);
    EXPECT_EQ(service_error([&] { svc.step(id, json::object()); }).status(), 422);
    EXPECT_EQ(svc.get(id)["revision"], 0);
}

TEST(SessionStep, SplitStepsMatchSingleStep) {
    SessionService svc(small_config(), reference_factory());
    const std::string a = svc.create(pair_body())["id"];
    const std::string b = svc.create(pair_body())["id"];
    const json once = svc.step(a, {{"n", 10}});
    const json first = svc.step(b, {{"n", 5}});
    const json second = svc.step(b, {{"n", 5}});
    std::vector<double> joined = first["trajectory"];
    for (double v : second["trajectory"]) joined.push_back(v);
    EXPECT_EQ(joined, once["trajectory"].get<std::vector<double>>());
    EXPECT_EQ(second["config"], once["config"]);
    EXPECT_EQ(second["loss"], once["loss"]);
    EXPECT_EQ(second["revision"], 2);
    EXPECT_LT(once["loss"].get<double>(), svc.get(a)["history"][0]["loss"].get<double>());
}

TEST(SessionStep, ManualEditResetsMoments) {
    SessionService svc(small_config(), reference_factory());
    const std::string a = svc.create(pair_body())["id"];
    const std::string b = svc.create(pair_body())["id"];
    svc.step(a, {{"n", 5}});
    svc.put_config(a, to_json(demo_config()));
    const json after_edit = svc.step(a, {{"n", 5}});
    svc.put_config(b, to_json(demo_config()));
    const json fresh = svc.step(b, {{"n", 5}});
    EXPECT_EQ(after_edit["trajectory"], fresh["trajectory"]);
    EXPECT_EQ(after_edit["config"], fresh["config"]);
}

TEST(SessionCalibrate, RequiresTarget) {
    SessionService svc(small_config(), reference_factory());
    const json s = svc.create(pair_body());
    const std::string face = png64(synthetic_face(1, kSize));
    const auto e = service_error([&] { svc.calibrate(s["id"], {{"on", face}, {"off", face}}); });
    EXPECT_EQ(e.status(), 409);
}

TEST(SessionCalibrate, PerfectImplementationIsAllOk) {
    SessionService svc(small_config(), reference_factory());
    const std::string id = svc.create(pair_body())["id"];
    PerturbationConfig target;
    target.amp = 1.0;
    target.spots = {{20, 22, 4, 1.0}, {44, 40, 5, 0.9}};
    EXPECT_EQ(svc.put_target(id, to_json(target))["revision"], 1);

    const Image off = quantised(synthetic_face(5, kSize));
    const Image on = clamp01(synthesize(off, target));
    const json report = svc.calibrate(id, {{"on", png64(on)}, {"off", png64(off)}});
    ASSERT_EQ(report["spots"].size(), 2u);
    for (const auto& spot : report["spots"]) {
        EXPECT_TRUE(spot["found"]);
        EXPECT_LE(std::hypot(spot["offset_vector"][0].get<double>(), spot["offset_vector"][1].get<double>()),
                  1.0);
        EXPECT_EQ(spot["brightness_verdict"], "ok");
        EXPECT_EQ(spot["size_verdict"], "ok");
    }
    EXPECT_TRUE(report["current_loss"].is_number());
    EXPECT_EQ(report["timestamp"].get<std::string>().back(), 'Z');
}

TEST(SessionCalibrate, PlantedShiftIsReported) {
    SessionService svc(small_config(), reference_factory());
    const std::string id = svc.create(pair_body())["id"];
    PerturbationConfig target;
    target.amp = 1.0;
    target.spots = {{24, 26, 4, 1.0}};
    svc.put_target(id, to_json(target));
    PerturbationConfig moved = target;
    moved.spots[0].px += 5;
    moved.spots[0].py -= 3;
    const Image off = quantised(synthetic_face(5, kSize));
    const json report = svc.calibrate(id, {{"on", png64(clamp01(synthesize(off, moved)))}, {"off", png64(off)}});
    const auto& offset = report["spots"][0]["offset_vector"];
    // The offset is the correction that moves the lit spot onto its target.
    EXPECT_NEAR(offset[0].get<double>(), -5.0, 1.0);
    EXPECT_NEAR(offset[1].get<double>(), 3.0, 1.0);
}

TEST(SessionCalibrate, SizeMismatch) {
    SessionService svc(small_config(), reference_factory());
    const std::string id = svc.create(pair_body())["id"];
    svc.put_target(id, to_json(demo_config()));
    const std::string big = png64(synthetic_face(1, kSize));
    const std::string small = png64(synthetic_face(1, kSize / 2));
    EXPECT_EQ(service_error([&] { svc.calibrate(id, {{"on", big}, {"off", small}}); }).status(), 422);
    EXPECT_EQ(service_error([&] { svc.calibrate(id, {{"on", small}, {"off", small}}); }).status(), 422);
}

TEST(SessionStore, GetDoesNotMutate) {
    SessionService svc(small_config(), reference_factory());
    const std::string id = svc.create(pair_body())["id"];
    const json a = svc.get(id);
    const json b = svc.get(id);
    EXPECT_EQ(a, b);
    EXPECT_EQ(service_error([&] { svc.get("0123"); }).status(), 404);
}

TEST(SessionStore, IdleSessionsExpire) {
    auto now = std::chrono::steady_clock::time_point{};
    ServiceConfig cfg = small_config();
    cfg.idle_timeout = std::chrono::seconds(60);
    cfg.clock = [&now] { return now; };
    SessionService svc(cfg, reference_factory());
    const std::string stale = svc.create(pair_body())["id"];
    now += std::chrono::seconds(40);
    const std::string fresh = svc.create(pair_body())["id"];
    now += std::chrono::seconds(30);
    EXPECT_EQ(svc.expire_idle(), 1u);
    EXPECT_EQ(svc.session_count(), 1u);
    EXPECT_EQ(service_error([&] { svc.get(stale); }).status(), 404);
    EXPECT_NO_THROW(svc.get(fresh));
}

TEST(SessionStore, SnapshotsSurviveRestart) {
    const fs::path dir = fs::temp_directory_path() / "irspot_test_service_state";
    fs::remove_all(dir);
    ServiceConfig cfg = small_config();
    cfg.state_dir = dir;
    std::string id;
    json before;
    {
        SessionService svc(cfg, reference_factory());
        id = svc.create(pair_body())["id"];
        svc.put_config(id, to_json(demo_config()));
        svc.put_target(id, to_json(demo_config()));
        before = svc.get(id);
    }
    SessionService restarted(cfg, reference_factory());
    EXPECT_EQ(restarted.get(id), before);
    const json r = restarted.put_config(id, to_json(demo_config()));
    EXPECT_EQ(r["revision"], before["revision"].get<int>() + 1);
    EXPECT_EQ(r["loss"], before["loss"]);
}

TEST(SessionStore, ConcurrentMutationsKeepRevisionsDense) {
    ServiceConfig cfg = small_config();
    cfg.jobs = 2;
    SessionService svc(cfg, reference_factory());
    const std::string id = svc.create(pair_body())["id"];
    std::vector<std::thread> threads;
    std::mutex mu;
    std::vector<int> revisions;
    for (int t = 0; t < 4; ++t) {
        threads.emplace_back([&, t] {
            for (int i = 0; i < 5; ++i) {
                PerturbationConfig c = demo_config();
                c.spots[0].px += t + 0.1 * i;
                const int rev = svc.put_config(id, to_json(c))["revision"];
                std::lock_guard lock(mu);
                revisions.push_back(rev);
            }
        });
    }
    for (auto& th : threads) th.join();
    std::sort(revisions.begin(), revisions.end());
    for (int i = 0; i < 20; ++i) EXPECT_EQ(revisions[i], i + 1);
    const json history = svc.get(id)["history"];
    ASSERT_EQ(history.size(), 21u);
    for (int i = 0; i < 21; ++i) EXPECT_EQ(history[i]["revision"], i);
}

class SessionHttp : public ::testing::Test {
protected:
    void SetUp() override {
        ServiceConfig cfg = small_config();
        cfg.cors_origin = "http://ui.example";
        service_ = std::make_unique<SessionService>(cfg, reference_factory());
        service_->mount(server_);
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    }
    void TearDown() override {
        server_.stop();
        thread_.join();
    }

    httplib::Server server_;
    std::unique_ptr<SessionService> service_;
    std::unique_ptr<httplib::Client> client_;
    std::thread thread_;
    int port_ = 0;
};

TEST_F(SessionHttp, FullRoundTrip) {
    auto res = client_->Post("/sessions", pair_body().dump(), "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 201);
    EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "http://ui.example");
    const json created = json::parse(res->body);
    const std::string base = "/sessions/" + created["id"].get<std::string>();

    res = client_->Put(base + "/config", to_json(demo_config()).dump(), "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    EXPECT_EQ(json::parse(res->body)["revision"], 1);

    res = client_->Post(base + "/step", R"({"n":3})", "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    EXPECT_EQ(json::parse(res->body)["trajectory"].size(), 3u);

    res = client_->Get(base);
    ASSERT_TRUE(res);
    EXPECT_EQ(json::parse(res->body)["revision"], 2);

    res = client_->Put(base + "/target", to_json(demo_config()).dump(), "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
}

TEST_F(SessionHttp, ErrorBodies) {
    auto res = client_->Post("/sessions", "{not json", "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 400);
    EXPECT_EQ(json::parse(res->body)["error"]["code"], "malformed_json");

    res = client_->Post("/sessions", json{{"attacker", png64(synthetic_face(1, kSize))}}.dump(),
                        "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 400);
    const json err = json::parse(res->body)["error"];
    EXPECT_EQ(err["field"], "victim");
    EXPECT_TRUE(err["message"].is_string());

    res = client_->Get("/sessions/abcdef");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 404);
    EXPECT_EQ(json::parse(res->body)["error"]["code"], "not_found");

    const std::string id = json::parse(client_->Post("/sessions", pair_body().dump(), "application/json")->body)["id"];
    res = client_->Post("/sessions/" + id + "/step", R"({"n":0})", "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 422);
    EXPECT_EQ(json::parse(res->body)["error"]["field"], "n");

    res = client_->Post("/sessions/" + id + "/calibrate", R"({"on":"","off":""})", "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 409);
}

TEST_F(SessionHttp, CorsPreflight) {
    auto res = client_->Options("/sessions");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 204);
    EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "http://ui.example");
    EXPECT_NE(res->get_header_value("Access-Control-Allow-Methods").find("PUT"), std::string::npos);
}

TEST(SessionHttpOracle, OracleFailureIs502) {
    httplib::Server server;
    SessionService svc(small_config(), [] {
        OracleConfig cfg;
        cfg.kind = OracleConfig::Kind::External;
        cfg.endpoint = "false";
        return make_oracle(cfg);
    });
    svc.mount(server);
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread t([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    httplib::Client client("127.0.0.1", port);
    auto res = client.Post("/sessions", pair_body().dump(), "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 502);
    EXPECT_EQ(json::parse(res->body)["error"]["code"], "oracle_error");
    server.stop();
    t.join();
}
