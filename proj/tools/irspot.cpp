// irspot: command-line front end for infrared spot attacks.
//
//   irspot attack --attacker a.png --victim v.png [--out result.json]
//   irspot dodge --image a.png
//   irspot calibrate --on on.png --off off.png --target cfg.json --victim v.png
//   irspot study --attacker a.png --victims dir/ --out report.json
//   irspot radiometry --pled 5 --eta 0.33 --r 0.0158
//   irspot serve --port 8080
//   irspot corpus --out dir/

#include "irspot/calibration.hpp"
#include "irspot/dodging.hpp"
#include "irspot/embedding.hpp"
#include "irspot/error.hpp"
#include "irspot/image.hpp"
#include "irspot/optimizer.hpp"
#include "irspot/oracle_client.hpp"
#include "irspot/service.hpp"
#include "irspot/spot_model.hpp"
#include "irspot/study.hpp"

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include <charconv>
#include <csignal>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace irspot;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitOracle = 2;
constexpr int kExitNoExample = 3;

struct GlobalOptions {
    std::string oracle = "reference";
    double oracle_timeout = 10.0;
    double threshold = kDefaultThreshold;
    std::size_t spots = 5;
    std::size_t iters = 200;
    std::size_t refine = 200;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    std::size_t size = 0;
    double amp_max = ParameterBounds{}.amp_max;
    bool blackbox = false;
    bool central = false;
};

OracleConfig oracle_config(const GlobalOptions& g) {
    OracleConfig cfg;
    cfg.threshold = g.threshold;
    cfg.timeout = std::chrono::milliseconds(static_cast<long long>(g.oracle_timeout * 1000.0));
    cfg.input_size = g.size;
    if (g.oracle != "reference") {
        cfg.kind = OracleConfig::Kind::External;
        cfg.endpoint = g.oracle;
    }
    return cfg;
}

OracleFactory oracle_factory(const GlobalOptions& g) {
    const OracleConfig cfg = oracle_config(g);
    return [cfg] { return make_oracle(cfg); };
}

AttackConfig attack_config(const GlobalOptions& g) {
    AttackConfig cfg;
    cfg.n_spots = g.spots;
    cfg.max_iters = g.iters;
    cfg.refine_iters = g.refine;
    cfg.threshold = g.threshold;
    cfg.seed = g.seed;
    cfg.bounds.amp_max = g.amp_max;
    cfg.grad_mode = g.blackbox ? GradMode::BlackBox : GradMode::WhiteBox;
    cfg.fd_scheme = g.central ? FdScheme::Central : FdScheme::Forward;
    validate(cfg);
    return cfg;
}

Image read_input(const std::string& path, std::size_t size) {
    Image img = load_image(path);
    if (size != 0) img = resize_bilinear(img, size, size);
    return img;
}

// Shortest round-trip representation, always with a decimal point.
std::string format_number(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    std::string s(buf, res.ptr);
    if (s.find_first_of(".eEni") == std::string::npos) s += ".0";
    return s;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path);
    out << text;
}

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(path, e.what());
    }
}

std::string utc_now() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct AttackOptions {
    std::string attacker;
    std::string victim;
    std::string out;
    std::string config_out;
    std::string image_out;
};

int cmd_attack(const GlobalOptions& g, const AttackOptions& o) {
    const Image attacker = read_input(o.attacker, g.size);
    const Image victim = read_input(o.victim, g.size);
    if (!attacker.same_shape(victim)) throw ValidationError("victim", "attacker and victim sizes differ");
    const AttackConfig cfg = attack_config(g);
    auto oracle = make_oracle(oracle_config(g));
    const AttackResult result = run_attack(attacker, victim, cfg, *oracle);

    if (!o.out.empty()) write_text(o.out, to_json(result).dump(2) + "\n");
    if (!o.config_out.empty()) write_text(o.config_out, to_json(result.best_config).dump(2) + "\n");
    if (!o.image_out.empty()) save_image(clamp01(synthesize(attacker, result.best_config)), o.image_out);

    std::cout << "initial_distance " << format_number(result.initial_distance) << "\n"
              << "distance " << format_number(result.best_distance) << "\n"
              << "success " << (result.success ? "true" : "false") << "\n"
              << "oracle_calls " << result.oracle_calls << "\n";
    return result.success ? kExitOk : kExitNoExample;
}

struct DodgeOptions {
    std::string image;
    std::string landmarks = "reference";
    double flood = 0.0;
    std::string out;
};

int cmd_dodge(const GlobalOptions& g, const DodgeOptions& o) {
    const Image base = read_input(o.image, g.size);
    auto oracle = make_oracle(oracle_config(g));
    nlohmann::json report;
    bool dodged = false;

    if (o.flood > 0.0) {
        std::unique_ptr<LandmarkOracle> lm;
        if (o.landmarks == "reference") {
            lm = std::make_unique<ReferenceLandmarkStub>();
        } else {
            lm = std::make_unique<ExternalLandmarkOracle>(make_transport(
                o.landmarks, std::chrono::milliseconds(static_cast<long long>(g.oracle_timeout * 1000.0))));
        }
        const Image lit = flood_illuminate(base, o.flood);
        const bool no_face = check_dodge_landmark(lit, *lm);
        const bool mismatch = check_dodge_embedding(base, lit, *oracle, g.threshold);
        report["flood"] = {{"strength", o.flood}, {"landmarks_lost", no_face}, {"embedding_mismatch", mismatch}};
        dodged = no_face || mismatch;
    } else {
        const AttackResult result = run_dodge(base, attack_config(g), *oracle);
        report["attack"] = to_json(result);
        dodged = result.success;
        std::cout << "distance " << format_number(result.best_distance) << "\n";
    }
    report["dodged"] = dodged;
    if (!o.out.empty()) write_text(o.out, report.dump(2) + "\n");
    std::cout << "dodged " << (dodged ? "true" : "false") << "\n";
    return dodged ? kExitOk : kExitNoExample;
}

struct CalibrateOptions {
    std::string on;
    std::string off;
    std::string target;
    std::string victim;
    std::string out;
};

int cmd_calibrate(const GlobalOptions& g, const CalibrateOptions& o) {
    const Image on = read_input(o.on, g.size);
    const Image off = read_input(o.off, g.size);
    if (!on.same_shape(off)) throw ValidationError("off", "on and off frames differ in size");
    const PerturbationConfig target = config_from_json(read_json(o.target));
    validate(target, on.height(), on.width());
    auto oracle = make_oracle(oracle_config(g));
    const EmbeddingVector victim = oracle->embed(read_input(o.victim, g.size));
    const CalibrationReport report = calibrate_once(on, off, target, victim, *oracle, {}, utc_now());
    const std::string text = to_json(report).dump(2) + "\n";
    if (!o.out.empty()) write_text(o.out, text);
    std::cout << text;
    return kExitOk;
}

struct StudyOptions {
    std::vector<std::string> attackers;
    std::string victims;
    std::string out = "study_report.json";
    std::size_t stop_after = 0;
};

int cmd_study(const GlobalOptions& g, const StudyOptions& o) {
    StudyConfig cfg;
    for (const auto& a : o.attackers) cfg.attackers.emplace_back(a);
    cfg.victim_dir = o.victims;
    cfg.attack = attack_config(g);
    cfg.output = o.out;
    cfg.jobs = g.jobs;
    cfg.canvas = g.size;
    if (o.stop_after > 0) cfg.stop_after = o.stop_after;
    const StudyReport report = run_study(cfg, oracle_factory(g));

    write_text(o.out, to_json(report).dump(2) + "\n");
    std::filesystem::path csv = o.out;
    csv.replace_extension(".csv");
    write_text(csv.string(), to_csv(report));

    for (const auto& s : report.summaries) {
        std::cout << s.attacker << " (" << s.bin.lo << ", " << s.bin.hi << "]: " << s.n_success << "/"
                  << s.n_victims << "\n";
    }
    if (!report.complete) std::cout << "incomplete; rerun to resume from the checkpoint\n";
    return kExitOk;
}

int cmd_radiometry(double p_led, double eta, double r) {
    std::cout << format_number(radiated_power({p_led, eta, r})) << "\n";
    return kExitOk;
}

struct ServeOptions {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string state_dir;
    double idle_timeout = 3600.0;
    std::string cors_origin = "*";
};

httplib::Server* g_server = nullptr;

int cmd_serve(const GlobalOptions& g, const ServeOptions& o) {
    ServiceConfig cfg;
    cfg.attack = attack_config(g);
    cfg.jobs = g.jobs;
    if (!o.state_dir.empty()) cfg.state_dir = o.state_dir;
    cfg.idle_timeout = std::chrono::seconds(static_cast<long long>(o.idle_timeout));
    cfg.cors_origin = o.cors_origin;
    SessionService service(cfg, oracle_factory(g));

    httplib::Server server;
    service.mount(server);
    g_server = &server;
    std::signal(SIGINT, [](int) { if (g_server) g_server->stop(); });
    std::signal(SIGTERM, [](int) { if (g_server) g_server->stop(); });
    std::cerr << "listening on http://" << o.host << ":" << o.port << "\n";
    if (!server.listen(o.host, o.port)) throw Error("cannot listen on " + o.host + ":" + std::to_string(o.port));
    return kExitOk;
}

struct CorpusOptions {
    std::string out;
    std::uint64_t attacker_seed = 1;
    std::size_t per_bin = 10;
};

int cmd_corpus(const GlobalOptions& g, const CorpusOptions& o) {
    auto oracle = make_oracle(oracle_config(g));
    const auto counts =
        write_synthetic_corpus(o.out, *oracle, o.attacker_seed, g.size == 0 ? 64 : g.size, o.per_bin);
    const auto bins = default_study_bins();
    for (std::size_t b = 0; b < bins.size(); ++b) {
        std::cout << "(" << bins[b].lo << ", " << bins[b].hi << "]: " << counts[b] << "\n";
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Infrared spot attacks on face recognition: attack, calibrate, study"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOptions g;
    app.add_option("--oracle", g.oracle, "reference, an http:// URL, or a shell command")->capture_default_str();
    app.add_option("--oracle-timeout", g.oracle_timeout, "Per-call timeout in seconds")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app.add_option("--threshold", g.threshold, "Same-person distance threshold")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app.add_option("--spots", g.spots, "Number of infrared spots")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--iters", g.iters, "Optimizer iterations")->capture_default_str();
    app.add_option("--refine", g.refine, "Extra iterations after a success")->capture_default_str();
    app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
    app.add_option("--jobs", g.jobs, "Parallel oracle connections")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--size", g.size, "Resize inputs to size x size (0 keeps them)")->capture_default_str();
    app.add_option("--amp-max", g.amp_max, "Upper bound on the global amplitude")->capture_default_str();
    app.add_flag("--blackbox", g.blackbox, "Estimate gradients by finite differences");
    app.add_flag("--central", g.central, "Use central instead of forward differences");

    AttackOptions attack;
    auto* attack_cmd = app.add_subcommand("attack", "Impersonate the victim");
    attack_cmd->add_option("--attacker", attack.attacker)->required()->check(CLI::ExistingFile);
    attack_cmd->add_option("--victim", attack.victim)->required()->check(CLI::ExistingFile);
    attack_cmd->add_option("--out", attack.out, "AttackResult JSON");
    attack_cmd->add_option("--config-out", attack.config_out, "Best perturbation config JSON");
    attack_cmd->add_option("--image-out", attack.image_out, "Synthesized adversarial image");

    DodgeOptions dodge;
    auto* dodge_cmd = app.add_subcommand("dodge", "Avoid being recognised as oneself");
    dodge_cmd->add_option("--image", dodge.image)->required()->check(CLI::ExistingFile);
    dodge_cmd->add_option("--flood", dodge.flood, "Uniform illumination strength; 0 runs the spot optimizer");
    dodge_cmd->add_option("--landmarks", dodge.landmarks, "reference, an http:// URL, or a shell command")
        ->capture_default_str();
    dodge_cmd->add_option("--out", dodge.out, "Report JSON");

    CalibrateOptions calib;
    auto* calib_cmd = app.add_subcommand("calibrate", "Compare a lit photo with the target spots");
    calib_cmd->add_option("--on", calib.on, "Photo with the LEDs on")->required()->check(CLI::ExistingFile);
    calib_cmd->add_option("--off", calib.off, "Photo with the LEDs off")->required()->check(CLI::ExistingFile);
    calib_cmd->add_option("--target", calib.target, "Perturbation config JSON")->required()->check(CLI::ExistingFile);
    calib_cmd->add_option("--victim", calib.victim)->required()->check(CLI::ExistingFile);
    calib_cmd->add_option("--out", calib.out, "CalibrationReport JSON");

    StudyOptions study;
    auto* study_cmd = app.add_subcommand("study", "Distance-binned success-rate study");
    study_cmd->add_option("--attacker", study.attackers, "Attacker image (repeatable)")
        ->required()
        ->check(CLI::ExistingFile);
    study_cmd->add_option("--victims", study.victims, "Directory of aligned victim images")->required();
    study_cmd->add_option("--out", study.out, "Report JSON; a CSV summary is written beside it")
        ->capture_default_str();
    study_cmd->add_option("--stop-after", study.stop_after, "Stop after this many pairs (resume later)");

    double p_led = 0.0, eta = 1.0, radius = 0.0;
    auto* radio_cmd = app.add_subcommand("radiometry", "Irradiance eta * P / (pi r^2) in W/m^2");
    radio_cmd->add_option("--pled", p_led, "LED power, W")->required();
    radio_cmd->add_option("--eta", eta, "Optical efficiency in (0, 1]")->capture_default_str();
    radio_cmd->add_option("--r", radius, "Spot radius, m")->required();

    ServeOptions serve;
    auto* serve_cmd = app.add_subcommand("serve", "HTTP session service for interactive calibration");
    serve_cmd->add_option("--host", serve.host)->capture_default_str();
    serve_cmd->add_option("--port", serve.port)->capture_default_str();
    serve_cmd->add_option("--state-dir", serve.state_dir, "Persist session snapshots here");
    serve_cmd->add_option("--idle-timeout", serve.idle_timeout, "Session expiry in seconds")->capture_default_str();
    serve_cmd->add_option("--cors-origin", serve.cors_origin)->capture_default_str();

    CorpusOptions corpus;
    auto* corpus_cmd = app.add_subcommand("corpus", "Write a synthetic attacker/victim corpus for the study");
    corpus_cmd->add_option("--out", corpus.out, "Output directory")->required();
    corpus_cmd->add_option("--attacker-seed", corpus.attacker_seed)->capture_default_str();
    corpus_cmd->add_option("--per-bin", corpus.per_bin)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*attack_cmd) return cmd_attack(g, attack);
        if (*dodge_cmd) return cmd_dodge(g, dodge);
        if (*calib_cmd) return cmd_calibrate(g, calib);
        if (*study_cmd) return cmd_study(g, study);
        if (*radio_cmd) return cmd_radiometry(p_led, eta, radius);
        if (*serve_cmd) return cmd_serve(g, serve);
        if (*corpus_cmd) return cmd_corpus(g, corpus);
    } catch (const OracleError& e) {
        std::cerr << "oracle error: " << e.what() << "\n";
        return kExitOracle;
    } catch (const ValidationError& e) {
        std::cerr << "invalid " << e.field() << ": " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
