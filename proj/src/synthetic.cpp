#include "irspot/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

namespace irspot {

namespace {

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double between(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * unit(rng); }

// Soft-edged ellipse coverage in [0,1].
double ellipse(double x, double y, double cx, double cy, double rx, double ry, double soft) {
    const double dx = (x - cx) / rx;
    const double dy = (y - cy) / ry;
    const double r = std::sqrt(dx * dx + dy * dy);
    return std::clamp((1.0 - r) / soft + 0.5, 0.0, 1.0);
}

void blend(std::array<double, 3>& px, const std::array<double, 3>& color, double alpha) {
    for (std::size_t c = 0; c < 3; ++c) px[c] = px[c] * (1.0 - alpha) + color[c] * alpha;
}

}  // namespace

Image synthetic_face(std::uint64_t seed, std::size_t size) {
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + 1);
    const double n = static_cast<double>(size);

    const double tone = between(rng, 0.35, 0.85);
    const std::array<double, 3> skin{tone, tone * between(rng, 0.7, 0.85), tone * between(rng, 0.55, 0.75)};
    const std::array<double, 3> bg{between(rng, 0.1, 0.9), between(rng, 0.1, 0.9), between(rng, 0.1, 0.9)};
    const double hair_level = between(rng, 0.05, 0.5);
    const std::array<double, 3> hair{hair_level, hair_level * 0.8, hair_level * 0.6};
    const std::array<double, 3> dark{0.08, 0.06, 0.06};
    const std::array<double, 3> lips{tone * 0.8, tone * 0.45, tone * 0.45};

    const double face_cx = 0.5 + between(rng, -0.04, 0.04);
    const double face_cy = 0.55 + between(rng, -0.03, 0.03);
    const double face_rx = between(rng, 0.30, 0.40);
    const double face_ry = between(rng, 0.40, 0.48);
    const double eye_dx = between(rng, 0.13, 0.19);
    const double eye_y = between(rng, 0.40, 0.48);
    const double eye_r = between(rng, 0.035, 0.06);
    const double brow_y = eye_y - between(rng, 0.06, 0.10);
    const double mouth_y = between(rng, 0.72, 0.80);
    const double mouth_w = between(rng, 0.10, 0.18);
    const double hair_line = between(rng, 0.12, 0.25);
    const double light_dir = between(rng, -0.3, 0.3);
    const std::array<double, 4> tex{between(rng, 0, 6.3), between(rng, 0, 6.3), between(rng, 5, 11),
                                    between(rng, 5, 11)};

    Image img(size, size);
    for (std::size_t yi = 0; yi < size; ++yi) {
        for (std::size_t xi = 0; xi < size; ++xi) {
            const double x = (static_cast<double>(xi) + 0.5) / n;
            const double y = (static_cast<double>(yi) + 0.5) / n;
            std::array<double, 3> px = bg;
            const double shade = 1.0 + light_dir * (x - 0.5);
            std::array<double, 3> lit{skin[0] * shade, skin[1] * shade, skin[2] * shade};
            blend(px, lit, ellipse(x, y, face_cx, face_cy, face_rx, face_ry, 0.08));
            if (y < hair_line + 0.08 * std::cos((x - 0.5) * 6.0)) {
                blend(px, hair, ellipse(x, y, face_cx, face_cy, face_rx * 1.08, face_ry * 1.08, 0.1));
            }
            for (double side : {-1.0, 1.0}) {
                const double ex = face_cx + side * eye_dx;
                blend(px, {0.9, 0.9, 0.88}, ellipse(x, y, ex, eye_y, eye_r * 1.6, eye_r, 0.3));
                blend(px, dark, ellipse(x, y, ex, eye_y, eye_r * 0.7, eye_r * 0.7, 0.3));
                blend(px, hair, 0.8 * ellipse(x, y, ex, brow_y, eye_r * 2.0, eye_r * 0.35, 0.4));
            }
            const std::array<double, 3> nose{lit[0] * 0.8, lit[1] * 0.8, lit[2] * 0.8};
            blend(px, nose, 0.6 * ellipse(x, y, face_cx + 0.02, (eye_y + mouth_y) / 2, 0.035, 0.08, 0.5));
            blend(px, lips, ellipse(x, y, face_cx, mouth_y, mouth_w, 0.025, 0.4));
            const double texture =
                0.02 * std::sin(tex[2] * 6.28 * x + tex[0]) * std::sin(tex[3] * 6.28 * y + tex[1]);
            for (std::size_t c = 0; c < 3; ++c) {
                img.at(yi, xi, c) = std::clamp(px[c] + texture, 0.0, 1.0);
            }
        }
    }
    return img;
}

}  // namespace irspot
