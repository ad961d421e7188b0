#include "irspot/study.hpp"

#include "irspot/error.hpp"
#include "irspot/image.hpp"
#include "irspot/synthetic.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

namespace irspot {

namespace fs = std::filesystem;

std::vector<DistanceBin> default_study_bins() { return {{1.242, 1.4}, {1.4, 1.55}, {1.55, 1.7}}; }

void validate(const StudyConfig& cfg) {
    validate(cfg.attack);
    if (cfg.attackers.empty()) throw ValidationError("attackers", "at least one attacker image is required");
    if (cfg.bins.empty()) throw ValidationError("bins", "at least one distance bin is required");
    for (std::size_t i = 0; i < cfg.bins.size(); ++i) {
        const DistanceBin& b = cfg.bins[i];
        if (!(b.lo < b.hi)) throw ValidationError("bins", "bin " + std::to_string(i) + " is empty");
        if (i > 0 && b.lo < cfg.bins[i - 1].hi) {
            throw ValidationError("bins", "bins must be disjoint and ascending");
        }
    }
    if (cfg.bins.front().lo < cfg.attack.threshold) {
        throw ValidationError("bins", "first bin must start at or above the threshold");
    }
    if (cfg.jobs == 0) throw ValidationError("jobs", "jobs must be >= 1");
}

nlohmann::json to_json(const PairRecord& r) {
    return {{"attacker", r.attacker}, {"victim", r.victim},   {"identity", r.identity},
            {"bin", r.bin},           {"original", r.original}, {"final", r.final_distance},
            {"drop", r.drop},         {"success", r.success}};
}

PairRecord pair_record_from_json(const nlohmann::json& j) {
    PairRecord r;
    r.attacker = j.at("attacker").get<std::string>();
    r.victim = j.at("victim").get<std::string>();
    r.identity = j.at("identity").get<std::string>();
    r.bin = j.at("bin").get<std::size_t>();
    r.original = j.at("original").get<double>();
    r.final_distance = j.at("final").get<double>();
    r.drop = j.at("drop").get<double>();
    r.success = j.at("success").get<bool>();
    return r;
}

std::string identity_of(const fs::path& relative) {
    if (relative.has_parent_path() && !relative.parent_path().empty()) {
        return relative.parent_path().filename().string();
    }
    std::string stem = relative.stem().string();
    const auto us = stem.find_last_of('_');
    if (us != std::string::npos && us + 1 < stem.size() &&
        std::all_of(stem.begin() + static_cast<std::ptrdiff_t>(us) + 1, stem.end(),
                    [](unsigned char c) { return std::isdigit(c); })) {
        stem.erase(us);
    }
    return stem;
}

fs::path checkpoint_path(const fs::path& output) {
    fs::path p = output;
    p += ".checkpoint.jsonl";
    return p;
}

namespace {

std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == ".png" || ext == ".ppm" || ext == ".pnm";
}

struct Subject {
    std::string id;
    Image image;
    EmbeddingVector embedding;
};

Image prepare(const fs::path& path, std::size_t canvas) {
    Image img = load_image(path);
    if (canvas != 0) img = resize_bilinear(img, canvas, canvas);
    return img;
}

std::vector<HistogramBin> histogram(const std::vector<double>& values) {
    std::map<long, std::size_t> counts;
    for (double v : values) ++counts[static_cast<long>(std::floor(v / kHistogramWidth))];
    std::vector<HistogramBin> out;
    for (const auto& [k, n] : counts) out.push_back({static_cast<double>(k) * kHistogramWidth, n});
    return out;
}

nlohmann::json histogram_json(const std::vector<HistogramBin>& h) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& b : h) out.push_back({{"lo", b.lo}, {"count", b.count}});
    return out;
}

struct PendingPair {
    std::size_t attacker;
    std::size_t victim;
    std::size_t bin;
    double original;
};

}  // namespace

StudyReport run_study(const StudyConfig& cfg, const OracleFactory& make_oracle) {
    validate(cfg);
    StudyReport report;
    report.threshold = cfg.attack.threshold;
    report.seed = cfg.attack.seed;
    report.bins = cfg.bins;

    auto oracle = make_oracle();

    std::vector<Subject> attackers;
    for (const fs::path& p : cfg.attackers) {
        Subject s{p.generic_string(), prepare(p, cfg.canvas), {}};
        s.embedding = oracle->embed(s.image);
        attackers.push_back(std::move(s));
    }

    std::vector<fs::path> victim_files;
    if (!cfg.victim_dir.empty() && fs::exists(cfg.victim_dir)) {
        for (const auto& entry : fs::recursive_directory_iterator(cfg.victim_dir)) {
            if (entry.is_regular_file() && is_image_file(entry.path())) {
                victim_files.push_back(fs::relative(entry.path(), cfg.victim_dir));
            }
        }
    } else if (!cfg.victim_dir.empty()) {
        report.warnings.push_back("victim directory does not exist: " + cfg.victim_dir.string());
    }
    std::sort(victim_files.begin(), victim_files.end(),
              [](const fs::path& a, const fs::path& b) { return a.generic_string() < b.generic_string(); });

    std::vector<Subject> victims;
    for (const fs::path& rel : victim_files) {
        Image img;
        try {
            img = prepare(cfg.victim_dir / rel, cfg.canvas);
        } catch (const ImageError& e) {
            ++report.unreadable_images;
            report.warnings.push_back(std::string("skipped unreadable image: ") + e.what());
            continue;
        }
        if (!img.same_shape(attackers.front().image)) {
            ++report.unreadable_images;
            report.warnings.push_back("skipped " + rel.generic_string() + ": canvas size differs");
            continue;
        }
        Subject s{rel.generic_string(), std::move(img), {}};
        s.embedding = oracle->embed(s.image);
        victims.push_back(std::move(s));
    }

    std::vector<PendingPair> pairs;
    for (std::size_t a = 0; a < attackers.size(); ++a) {
        for (std::size_t v = 0; v < victims.size(); ++v) {
            const double d = distance(attackers[a].embedding, victims[v].embedding);
            if (d <= cfg.attack.threshold) {
                ++report.skipped_false_positive;
                continue;
            }
            if (d > cfg.bins.back().hi) {
                ++report.skipped_too_far;
                continue;
            }
            const auto it = std::find_if(cfg.bins.begin(), cfg.bins.end(),
                                         [d](const DistanceBin& b) { return b.contains(d); });
            if (it == cfg.bins.end()) {
                ++report.skipped_unbinned;
                continue;
            }
            pairs.push_back({a, v, static_cast<std::size_t>(it - cfg.bins.begin()), d});
        }
    }

    auto key = [&](const PendingPair& p) {
        return attackers[p.attacker].id + "\n" + victims[p.victim].id;
    };

    // Resume from the checkpoint.
    std::map<std::string, PairRecord> done;
    const fs::path ckpt = cfg.output.empty() ? fs::path() : checkpoint_path(cfg.output);
    if (!ckpt.empty() && fs::exists(ckpt)) {
        std::ifstream in(ckpt);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            try {
                PairRecord r = pair_record_from_json(nlohmann::json::parse(line));
                done[r.attacker + "\n" + r.victim] = r;
            } catch (const nlohmann::json::exception&) {
                report.warnings.push_back("ignored malformed checkpoint line");
            }
        }
    }

    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (!done.contains(key(pairs[i]))) todo.push_back(i);
    }
    const std::size_t budget = cfg.stop_after ? std::min(*cfg.stop_after, todo.size()) : todo.size();

    std::ofstream ckpt_out;
    if (!ckpt.empty()) {
        if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
        ckpt_out.open(ckpt, std::ios::app);
        if (!ckpt_out) throw Error("cannot open checkpoint " + ckpt.string());
    }

    std::mutex mu;
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    auto worker = [&](std::unique_ptr<EmbeddingOracle> own) {
        for (;;) {
            if (failed.load()) return;
            const std::size_t slot = next.fetch_add(1);
            if (slot >= budget) return;
            const PendingPair& p = pairs[todo[slot]];
            AttackConfig attack = cfg.attack;
            attack.seed = cfg.attack.seed ^ fnv1a(key(p));
            try {
                const AttackResult result = run_attack(attackers[p.attacker].image,
                                                       victims[p.victim].embedding, attack, *own);
                PairRecord r;
                r.attacker = attackers[p.attacker].id;
                r.victim = victims[p.victim].id;
                r.identity = identity_of(r.victim);
                r.bin = p.bin;
                r.original = p.original;
                r.final_distance = result.best_distance;
                r.drop = r.original - r.final_distance;
                r.success = r.final_distance < cfg.attack.threshold;
                std::lock_guard lock(mu);
                if (ckpt_out.is_open()) {
                    ckpt_out << to_json(r).dump() << '\n';
                    ckpt_out.flush();
                }
                done[key(p)] = r;
            } catch (...) {
                std::lock_guard lock(mu);
                if (!error) error = std::current_exception();
                failed = true;
                return;
            }
        }
    };

    const std::size_t jobs = std::min(cfg.jobs, std::max<std::size_t>(budget, 1));
    if (jobs <= 1) {
        worker(std::move(oracle));
    } else {
        std::vector<std::thread> threads;
        for (std::size_t j = 0; j < jobs; ++j) {
            threads.emplace_back(worker, j == 0 ? std::move(oracle) : make_oracle());
        }
        for (auto& t : threads) t.join();
    }
    if (error) std::rethrow_exception(error);

    report.complete = true;
    for (const PendingPair& p : pairs) {
        const auto it = done.find(key(p));
        if (it == done.end()) {
            report.complete = false;
            continue;
        }
        report.records.push_back(it->second);
    }
    std::sort(report.records.begin(), report.records.end(), [](const PairRecord& a, const PairRecord& b) {
        return std::tie(a.attacker, a.victim) < std::tie(b.attacker, b.victim);
    });

    std::vector<double> originals, finals;
    for (const Subject& a : attackers) {
        std::vector<BinSummary> rows(cfg.bins.size());
        double drop_sum = 0.0;
        std::size_t drop_n = 0;
        for (std::size_t b = 0; b < cfg.bins.size(); ++b) {
            rows[b].attacker = a.id;
            rows[b].bin = cfg.bins[b];
        }
        for (const PairRecord& r : report.records) {
            if (r.attacker != a.id) continue;
            ++rows[r.bin].n_victims;
            if (r.success) ++rows[r.bin].n_success;
            drop_sum += r.drop;
            ++drop_n;
            originals.push_back(r.original);
            finals.push_back(r.final_distance);
        }
        for (BinSummary& row : rows) {
            row.success_rate = row.n_victims == 0
                                   ? 0.0
                                   : static_cast<double>(row.n_success) / static_cast<double>(row.n_victims);
            report.summaries.push_back(row);
        }
        report.mean_drop.emplace_back(a.id, drop_n == 0 ? std::nan("") : drop_sum / static_cast<double>(drop_n));
    }
    report.original_histogram = histogram(originals);
    report.final_histogram = histogram(finals);
    return report;
}

nlohmann::json to_json(const StudyReport& report) {
    nlohmann::json bins = nlohmann::json::array();
    for (const DistanceBin& b : report.bins) bins.push_back({b.lo, b.hi});
    nlohmann::json summary = nlohmann::json::array();
    for (const BinSummary& s : report.summaries) {
        summary.push_back({{"attacker", s.attacker},
                           {"bin", {s.bin.lo, s.bin.hi}},
                           {"n_victims", s.n_victims},
                           {"n_success", s.n_success},
                           {"success_rate", s.success_rate}});
    }
    nlohmann::json drops = nlohmann::json::array();
    for (const auto& [attacker, mean] : report.mean_drop) {
        drops.push_back({{"attacker", attacker},
                         {"mean_drop", std::isnan(mean) ? nlohmann::json() : nlohmann::json(mean)}});
    }
    nlohmann::json records = nlohmann::json::array();
    for (const PairRecord& r : report.records) records.push_back(to_json(r));
    return {{"format", "irspot-study-report/1"},
            {"complete", report.complete},
            {"threshold", report.threshold},
            {"seed", report.seed},
            {"bins", std::move(bins)},
            {"bin_note",
             "bins are (lo, hi]; pairs at or below the threshold (false positives) and above the "
             "last bin are not attacked; the middle default bin is (1.4, 1.55], correcting a "
             "'(4.4, 1.55]' typo in some descriptions of this protocol"},
            {"summary", std::move(summary)},
            {"mean_drop", std::move(drops)},
            {"histograms",
             {{"bin_width", kHistogramWidth},
              {"original", histogram_json(report.original_histogram)},
              {"final", histogram_json(report.final_histogram)}}},
            {"skipped",
             {{"false_positive", report.skipped_false_positive},
              {"too_far", report.skipped_too_far},
              {"unbinned", report.skipped_unbinned},
              {"unreadable", report.unreadable_images}}},
            {"records", std::move(records)},
            {"warnings", report.warnings}};
}

std::string to_csv(const StudyReport& report) {
    auto num = [](double v) {
        char buf[32];
        return std::string(buf, std::to_chars(buf, buf + sizeof buf, v).ptr);
    };
    std::ostringstream out;
    out << "attacker,bin_lo,bin_hi,n_victims,n_success,success_rate\n";
    for (const BinSummary& s : report.summaries) {
        out << s.attacker << ',' << num(s.bin.lo) << ',' << num(s.bin.hi) << ',' << s.n_victims << ','
            << s.n_success << ',' << num(s.success_rate) << '\n';
    }
    return out.str();
}

double radiated_power(const RadiometryInput& in) {
    if (!(in.r > 0.0) || !std::isfinite(in.r)) throw ValidationError("r", "spot radius must be > 0");
    if (!(in.p_led > 0.0) || !std::isfinite(in.p_led)) {
        throw ValidationError("p_led", "LED power must be > 0");
    }
    if (!(in.eta > 0.0 && in.eta <= 1.0)) throw ValidationError("eta", "efficiency must be in (0, 1]");
    return in.eta * in.p_led / (std::numbers::pi * in.r * in.r);
}

std::vector<std::size_t> write_synthetic_corpus(const fs::path& dir, EmbeddingOracle& oracle,
                                                std::uint64_t attacker_seed, std::size_t size,
                                                std::size_t per_bin, const std::vector<DistanceBin>& bins,
                                                std::uint64_t first_victim_seed, std::size_t max_candidates) {
    auto round_trip = [](const Image& img) { return decode_image(encode_png(img)); };
    fs::create_directories(dir / "victims");
    const Image attacker = round_trip(synthetic_face(attacker_seed, size));
    save_image(attacker, dir / "attacker.png");
    const EmbeddingVector ea = oracle.embed(attacker);

    std::vector<std::size_t> counts(bins.size(), 0);
    std::size_t filled = 0;
    for (std::size_t i = 0; i < max_candidates && filled < bins.size(); ++i) {
        const std::uint64_t seed = first_victim_seed + i;
        const Image victim = round_trip(synthetic_face(seed, size));
        const double d = distance(ea, oracle.embed(victim));
        for (std::size_t b = 0; b < bins.size(); ++b) {
            if (!bins[b].contains(d) || counts[b] >= per_bin) continue;
            save_image(victim, dir / "victims" / ("synth" + std::to_string(seed) + ".png"));
            if (++counts[b] == per_bin) ++filled;
            break;
        }
    }
    return counts;
}

}  // namespace irspot
