#pragma once

#include "irspot/embedding.hpp"
#include "irspot/optimizer.hpp"

#include <json.hpp>

#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace irspot {

/// Half-open distance interval (lo, hi].
struct DistanceBin {
    double lo = 0.0;
    double hi = 0.0;

    bool contains(double d) const noexcept { return d > lo && d <= hi; }
    friend bool operator==(const DistanceBin&, const DistanceBin&) = default;
};

std::vector<DistanceBin> default_study_bins();

struct StudyConfig {
    std::vector<std::filesystem::path> attackers;
    std::filesystem::path victim_dir;
    std::vector<DistanceBin> bins = default_study_bins();
    AttackConfig attack;
    /// Report path; the checkpoint lives next to it as <out>.checkpoint.jsonl.
    std::filesystem::path output;
    std::size_t jobs = 1;
    /// Resize every image to canvas x canvas when non-zero.
    std::size_t canvas = 0;
    /// Stop after this many newly attacked pairs (simulates an interruption).
    std::optional<std::size_t> stop_after;
};

void validate(const StudyConfig& cfg);

struct PairRecord {
    std::string attacker;
    std::string victim;
    std::string identity;
    std::size_t bin = 0;
    double original = 0.0;
    double final_distance = 0.0;
    double drop = 0.0;
    bool success = false;

    friend bool operator==(const PairRecord&, const PairRecord&) = default;
};

nlohmann::json to_json(const PairRecord& r);
PairRecord pair_record_from_json(const nlohmann::json& j);

struct BinSummary {
    std::string attacker;
    DistanceBin bin;
    std::size_t n_victims = 0;
    std::size_t n_success = 0;
    double success_rate = 0.0;
};

struct HistogramBin {
    double lo = 0.0;
    std::size_t count = 0;
};

struct StudyReport {
    bool complete = true;
    double threshold = kDefaultThreshold;
    std::uint64_t seed = 0;
    std::vector<DistanceBin> bins;
    std::vector<BinSummary> summaries;
    std::vector<PairRecord> records;
    /// Mean (original - final) over the attacked pairs, per attacker.
    std::vector<std::pair<std::string, double>> mean_drop;
    std::vector<HistogramBin> original_histogram;
    std::vector<HistogramBin> final_histogram;
    std::size_t skipped_false_positive = 0;
    std::size_t skipped_too_far = 0;
    std::size_t skipped_unbinned = 0;
    std::size_t unreadable_images = 0;
    std::vector<std::string> warnings;
};

inline constexpr double kHistogramWidth = 0.02;

nlohmann::json to_json(const StudyReport& report);
std::string to_csv(const StudyReport& report);

/// LFW-style identity: the parent directory when nested, otherwise the file
/// stem with a trailing _NNNN removed.
std::string identity_of(const std::filesystem::path& relative);

using OracleFactory = std::function<std::unique_ptr<EmbeddingOracle>()>;

/// Bins every victim by its original distance to each attacker, attacks all
/// pairs inside the bins and aggregates. Completed pairs are appended to the
/// checkpoint so a rerun resumes where it stopped.
StudyReport run_study(const StudyConfig& cfg, const OracleFactory& make_oracle);

std::filesystem::path checkpoint_path(const std::filesystem::path& output);

/// Writes <dir>/attacker.png and <dir>/victims/synth<seed>.png: synthetic
/// faces picked so that each bin receives `per_bin` victims, measured after
/// the 8-bit PNG round trip. Returns how many victims each bin received.
std::vector<std::size_t> write_synthetic_corpus(const std::filesystem::path& dir, EmbeddingOracle& oracle,
                                                std::uint64_t attacker_seed, std::size_t size,
                                                std::size_t per_bin,
                                                const std::vector<DistanceBin>& bins = default_study_bins(),
                                                std::uint64_t first_victim_seed = 1000,
                                                std::size_t max_candidates = 5000);

struct RadiometryInput {
    double p_led = 0.0;  ///< W
    double eta = 1.0;    ///< (0, 1]
    double r = 0.0;      ///< spot radius, m
};

/// Irradiance on the skin, W/m^2: eta * p_led / (pi r^2).
double radiated_power(const RadiometryInput& in);

}  // namespace irspot
