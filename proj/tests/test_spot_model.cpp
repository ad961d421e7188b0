#include "irspot/error.hpp"
#include "irspot/spot_model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace irspot;

namespace {

PerturbationConfig random_config(std::mt19937_64& rng, std::size_t n, double h, double w) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    PerturbationConfig cfg;
    cfg.amp = 0.2 + 1.5 * u(rng);
    for (std::size_t i = 0; i < n; ++i) {
        cfg.spots.push_back({u(rng) * (w - 1), u(rng) * (h - 1), 1.5 + 6.0 * u(rng), 0.2 + 1.5 * u(rng)});
    }
    return cfg;
}

Image random_base(std::size_t h, std::size_t w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(h, w);
    for (double& v : img.data()) v = u(rng);
    return img;
}

}  // namespace

TEST(SpotModel, CentreBrightnessIsExactlyS) {
    const SpotParams spot{12.3, 7.9, 4.2, 0.83};
    EXPECT_EQ(spot_brightness(spot, spot.px, spot.py), 0.83);
}

TEST(SpotModel, ZeroCoefficientIsDark) {
    const SpotParams spot{3.0, 3.0, 2.0, 0.0};
    for (int y = 0; y < 7; ++y) {
        for (int x = 0; x < 7; ++x) EXPECT_EQ(spot_brightness(spot, x, y), 0.0);
    }
}

TEST(SpotModel, HalfBrightnessRadius) {
    const double sigma = 2.0;
    const double r_half = sigma * std::sqrt(2.0 * std::log(2.0));
    EXPECT_NEAR(half_brightness_radius(sigma), r_half, 1e-15);
    const SpotParams spot{0.0, 0.0, sigma, 1.0};
    EXPECT_NEAR(spot_brightness(spot, r_half, 0.0), 0.5, 1e-12);
    EXPECT_NEAR(spot_brightness(spot, r_half / std::sqrt(2.0), r_half / std::sqrt(2.0)), 0.5, 1e-12);
}

TEST(SpotModel, NormalPdfKernelIsSelectable) {
    const double sigma = 3.0;
    EXPECT_NEAR(kernel_profile(KernelKind::NormalPdfOfSquaredDistance, 0.0, sigma),
                1.0 / (sigma * std::sqrt(2.0 * std::numbers::pi)), 1e-15);
    const double d2 = 2.5;
    EXPECT_NEAR(kernel_profile(KernelKind::NormalPdfOfSquaredDistance, d2, sigma),
                std::exp(-d2 * d2 / (2 * sigma * sigma)) / (sigma * std::sqrt(2.0 * std::numbers::pi)), 1e-15);
}

TEST(SpotModel, EmptyEffectGivesZeroField) {
    PerturbationConfig cfg;
    cfg.amp = 1.0;
    cfg.spots = {{4, 4, 2, 0}, {10, 3, 5, 0}};
    for (double v : render_field(cfg, 12, 16).values) EXPECT_EQ(v, 0.0);
}

TEST(SpotModel, TwoIdenticalSpotsDoubleTheField) {
    const SpotParams spot{6.5, 9.25, 3.0, 0.7};
    PerturbationConfig one, two;
    one.spots = {spot};
    two.spots = {spot, spot};
    const auto a = render_field(one, 16, 16);
    const auto b = render_field(two, 16, 16);
    for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_EQ(b.values[i], 2.0 * a.values[i]);
}

TEST(SpotModel, FieldMatchesNaiveLoop) {
    std::mt19937_64 rng(42);
    const PerturbationConfig cfg = random_config(rng, 5, 32, 32);
    const SpotField field = render_field(cfg, 32, 32);
    for (std::size_t y = 0; y < 32; ++y) {
        for (std::size_t x = 0; x < 32; ++x) {
            double expected = 0.0;
            for (const auto& sp : cfg.spots) {
                const double dx = double(x) - sp.px, dy = double(y) - sp.py;
                expected += sp.s * std::exp(-(dx * dx + dy * dy) / (2.0 * sp.sigma * sp.sigma));
            }
            EXPECT_NEAR(field.at(y, x), expected, 1e-12);
        }
    }
}

TEST(SpotModel, ColorizeAppliesRatio) {
    SpotField field{1, 2, {1.0, 0.0}};
    const PixelDelta d = colorize(field, kDefaultColorRatio);
    EXPECT_EQ(d.at(0, 0, 0), 0.0852);
    EXPECT_EQ(d.at(0, 0, 1), 0.0533);
    EXPECT_EQ(d.at(0, 0, 2), 0.1521);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(d.at(0, 1, c), 0.0);
}

TEST(SpotModel, ColorizedChannelRatioIsFixed) {
    PerturbationConfig cfg;
    cfg.spots = {{5, 5, 3, 0.9}};
    const PixelDelta d = colorize(render_field(cfg, 11, 11), cfg.color_ratio);
    for (std::size_t y = 0; y < 11; ++y) {
        for (std::size_t x = 0; x < 11; ++x) {
            ASSERT_GT(d.at(y, x, 1), 0.0);
            EXPECT_NEAR(d.at(y, x, 2) / d.at(y, x, 1), 0.1521 / 0.0533, 1e-12);
        }
    }
}

TEST(SpotModel, ZeroAmpReturnsBaseExactly) {
    const Image base = random_base(10, 12, 1);
    PerturbationConfig cfg;
    cfg.amp = 0.0;
    cfg.spots = {{3, 4, 2, 1}};
    EXPECT_EQ(synthesize(base, cfg), base);
}

TEST(SpotModel, DoublingAmpDoublesPerturbation) {
    const Image base = random_base(10, 12, 2);
    PerturbationConfig cfg;
    cfg.amp = 0.3;
    cfg.spots = {{3, 4, 2, 1}, {8, 6, 3, 0.5}};
    const PixelDelta d1 = diff(synthesize(base, cfg), base);
    cfg.amp = 0.6;
    const PixelDelta d2 = diff(synthesize(base, cfg), base);
    for (std::size_t i = 0; i < base.size(); ++i) EXPECT_NEAR(d2.data()[i], 2.0 * d1.data()[i], 1e-15);
}

TEST(SpotModel, SingleSpotOnBlackAtCentre) {
    const Image black(120, 160);
    PerturbationConfig cfg;
    cfg.amp = 0.4;
    cfg.spots = {{80, 60, 6, 1}};
    const Image out = synthesize(black, cfg);
    EXPECT_NEAR(out.at(60, 80, 0), 0.4 * 0.0852, 1e-15);
    EXPECT_NEAR(out.at(60, 80, 1), 0.4 * 0.0533, 1e-15);
    EXPECT_NEAR(out.at(60, 80, 2), 0.4 * 0.1521, 1e-15);
}

TEST(SpotModel, SynthesisNeverClamps) {
    const Image white(8, 8, 1.0);
    PerturbationConfig cfg;
    cfg.amp = 3.0;
    cfg.spots = {{4, 4, 2, 5}};
    EXPECT_GT(synthesize(white, cfg).at(4, 4, 2), 1.0);
}

TEST(SpotModel, AmpPartialIsColorizedField) {
    const Image base = random_base(12, 12, 3);
    PerturbationConfig cfg;
    cfg.amp = 0.8;
    cfg.spots = {{4, 5, 2.5, 0.9}, {9, 7, 3, 0.4}};
    const SpotJacobian jac = spot_jacobian(base, cfg);
    ASSERT_EQ(jac.partials.size(), cfg.parameter_count());
    const PixelDelta c = colorize(render_field(cfg, 12, 12), cfg.color_ratio);
    for (std::size_t i = 0; i < base.size(); ++i) EXPECT_NEAR(jac.partials[0].data()[i], c.data()[i], 1e-15);
}

TEST(SpotModel, PositionPartialVanishesAtCentre) {
    const Image base(9, 9);
    PerturbationConfig cfg;
    cfg.amp = 1.0;
    cfg.spots = {{4, 4, 2, 1}};
    const SpotJacobian jac = spot_jacobian(base, cfg);
    for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_EQ(jac.partials[param_index(0, kPx)].at(4, 4, c), 0.0);
        EXPECT_EQ(jac.partials[param_index(0, kPy)].at(4, 4, c), 0.0);
    }
}

TEST(SpotModel, JacobianMatchesCentralDifferences) {
    std::mt19937_64 rng(7);
    const std::size_t h = 14, w = 18;
    const Image base = random_base(h, w, 4);
    for (int trial = 0; trial < 5; ++trial) {
        const PerturbationConfig cfg = random_config(rng, 3, h, w);
        const SpotJacobian jac = spot_jacobian(base, cfg);
        const auto theta = cfg.to_vector();
        const double step = 1e-4;
        for (std::size_t k = 0; k < theta.size(); ++k) {
            PerturbationConfig plus = cfg, minus = cfg;
            auto tp = theta, tm = theta;
            tp[k] += step;
            tm[k] -= step;
            plus.assign_vector(tp);
            minus.assign_vector(tm);
            const Image ip = synthesize(base, plus), im = synthesize(base, minus);
            double num = 0.0, den = 0.0;
            for (std::size_t i = 0; i < base.size(); ++i) {
                const double fd = (ip.data()[i] - im.data()[i]) / (2 * step);
                const double an = jac.partials[k].data()[i];
                num += (fd - an) * (fd - an);
                den += an * an;
            }
            EXPECT_LE(std::sqrt(num), 1e-4 * std::sqrt(den) + 1e-12) << "trial " << trial << " param " << k;
        }
    }
}

TEST(SpotModel, PullbackContractsJacobian) {
    std::mt19937_64 rng(9);
    const Image base = random_base(10, 13, 5);
    const PerturbationConfig cfg = random_config(rng, 2, 10, 13);
    PixelDelta cot(Image(10, 13));
    std::uniform_real_distribution<double> u(-1, 1);
    for (double& v : cot.data()) v = u(rng);
    const auto fused = pullback(cfg, cot);
    const auto jac = spot_jacobian(base, cfg);
    ASSERT_EQ(fused.size(), jac.partials.size());
    for (std::size_t k = 0; k < fused.size(); ++k) {
        double dot = 0.0;
        for (std::size_t i = 0; i < base.size(); ++i) dot += jac.partials[k].data()[i] * cot.data()[i];
        EXPECT_NEAR(fused[k], dot, 1e-10 * (1 + std::abs(dot)));
    }
}

TEST(SpotModel, FlatVectorRoundTrip) {
    PerturbationConfig cfg;
    cfg.amp = 0.5;
    cfg.spots = {{1, 2, 3, 4}, {5, 6, 7, 8}};
    const auto v = cfg.to_vector();
    EXPECT_EQ(v, (std::vector<double>{0.5, 3, 1, 2, 4, 7, 5, 6, 8}));
    PerturbationConfig back;
    back.spots.resize(2);
    back.assign_vector(v);
    EXPECT_EQ(back, cfg);
}

TEST(SpotModel, ValidationNamesTheField) {
    PerturbationConfig cfg;
    cfg.amp = 0.5;
    cfg.spots = {{1, 2, 3, 4}, {5, 6, 7, 8}, {5, 6, -1, 8}};
    try {
        validate(cfg);
        FAIL() << "expected ValidationError";
    } catch (const ValidationError& e) {
        EXPECT_EQ(e.field(), "spots[2].sigma");
    }
    cfg.spots[2].sigma = 1;
    cfg.spots[1].s = -0.1;
    try {
        validate(cfg);
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_EQ(e.field(), "spots[1].s");
    }
    cfg.spots[1].s = 1;
    cfg.amp = -1;
    EXPECT_THROW(validate(cfg), ValidationError);
    cfg.amp = std::nan("");
    EXPECT_THROW(validate(cfg), ValidationError);
}

TEST(SpotModel, ValidationChecksCanvasMargin) {
    PerturbationConfig cfg;
    cfg.amp = 1;
    cfg.spots = {{-5.9, 3, 2, 1}};
    EXPECT_NO_THROW(validate(cfg, 10, 10));
    cfg.spots[0].px = -6.1;
    try {
        validate(cfg, 10, 10);
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_EQ(e.field(), "spots[0].px");
    }
}

TEST(SpotModel, JsonRoundTrip) {
    PerturbationConfig cfg;
    cfg.amp = 0.125;
    cfg.color_ratio = {0.1, 0.2, 0.3};
    cfg.spots = {{10.5, 20.25, 3, 0.75}};
    const auto j = to_json(cfg);
    EXPECT_EQ(config_from_json(j), cfg);
    EXPECT_EQ(config_from_json(nlohmann::json::parse(j.dump())), cfg);
}

TEST(SpotModel, JsonDefaultsAndErrors) {
    const auto cfg = config_from_json(nlohmann::json::parse(R"({"amp":1,"spots":[{"px":1,"py":2,"sigma":3,"s":0.5}]})"));
    EXPECT_EQ(cfg.color_ratio, kDefaultColorRatio);
    EXPECT_EQ(cfg.kernel, KernelKind::Gaussian);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"spots":[]})")), ValidationError);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"amp":1,"spots":[{"px":1}]})")), ValidationError);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"amp":"x","spots":[]})")), ValidationError);
}
