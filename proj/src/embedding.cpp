#include "irspot/embedding.hpp"

#include "irspot/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace irspot {

EmbeddingVector EmbeddingOracle::embed(const Image& img) {
    if (img.empty()) throw OracleError("embed: empty image");
    return do_embed(clamp01(img));
}

PixelDelta EmbeddingOracle::embed_vjp(const Image& img, std::span<const double> cotangent) {
    if (!has_image_gradient()) throw OracleError("oracle does not expose image gradients");
    PixelDelta grad = do_embed_vjp(clamp01(img), cotangent);
    auto g = grad.data();
    auto v = img.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (v[i] < 0.0 || v[i] > 1.0) g[i] = 0.0;
    }
    return grad;
}

PixelDelta EmbeddingOracle::do_embed_vjp(const Image&, std::span<const double>) {
    throw OracleError("oracle does not expose image gradients");
}

namespace {

using Matrix = std::vector<double>;  // row-major

constexpr std::size_t N = ReferenceEmbedding::kGrid;

// Area-averaging operator mapping `len` samples onto N cells (N x len).
Matrix area_weights(std::size_t len) {
    Matrix w(N * len, 0.0);
    const double cell = static_cast<double>(len) / static_cast<double>(N);
    for (std::size_t i = 0; i < N; ++i) {
        const double lo = static_cast<double>(i) * cell;
        const double hi = lo + cell;
        for (std::size_t p = static_cast<std::size_t>(lo); p < len && static_cast<double>(p) < hi; ++p) {
            const double overlap =
                std::min(hi, static_cast<double>(p + 1)) - std::max(lo, static_cast<double>(p));
            if (overlap > 0.0) w[i * len + p] = overlap / cell;
        }
    }
    return w;
}

// Orthonormal DCT-II basis, C[k][n].
const Matrix& dct_basis() {
    static const Matrix basis = [] {
        Matrix c(N * N);
        for (std::size_t k = 0; k < N; ++k) {
            const double alpha = k == 0 ? std::sqrt(1.0 / N) : std::sqrt(2.0 / N);
            for (std::size_t n = 0; n < N; ++n) {
                c[k * N + n] = alpha * std::cos(std::numbers::pi * (2.0 * n + 1.0) * k / (2.0 * N));
            }
        }
        return c;
    }();
    return basis;
}

void check_size(const Image& img) {
    if (img.height() < N || img.width() < N) {
        throw OracleError("reference embedding needs at least 16x16 pixels, got " +
                          std::to_string(img.height()) + "x" + std::to_string(img.width()));
    }
}

// Luma plane -> N x N area average.
Matrix downsample(const Image& img, const Matrix& wy, const Matrix& wx) {
    const std::size_t h = img.height();
    const std::size_t w = img.width();
    const auto& luma = ReferenceEmbedding::kLuma;
    // rows[i][x] = sum_y wy[i][y] * gray[y][x]
    Matrix rows(N * w, 0.0);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t i = 0; i < N; ++i) {
            const double a = wy[i * h + y];
            if (a == 0.0) continue;
            for (std::size_t x = 0; x < w; ++x) {
                const double gray = luma[0] * img.at(y, x, 0) + luma[1] * img.at(y, x, 1) +
                                    luma[2] * img.at(y, x, 2);
                rows[i * w + x] += a * gray;
            }
        }
    }
    Matrix out(N * N, 0.0);
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t j = 0; j < N; ++j) {
            double acc = 0.0;
            for (std::size_t x = 0; x < w; ++x) acc += rows[i * w + x] * wx[j * w + x];
            out[i * N + j] = acc;
        }
    }
    return out;
}

// C * M * C^T
Matrix dct2(const Matrix& m) {
    const Matrix& c = dct_basis();
    Matrix tmp(N * N, 0.0), out(N * N, 0.0);
    for (std::size_t k = 0; k < N; ++k)
        for (std::size_t j = 0; j < N; ++j) {
            double acc = 0.0;
            for (std::size_t n = 0; n < N; ++n) acc += c[k * N + n] * m[n * N + j];
            tmp[k * N + j] = acc;
        }
    for (std::size_t k = 0; k < N; ++k)
        for (std::size_t l = 0; l < N; ++l) {
            double acc = 0.0;
            for (std::size_t j = 0; j < N; ++j) acc += tmp[k * N + j] * c[l * N + j];
            out[k * N + l] = acc;
        }
    return out;
}

// C^T * M * C (adjoint of dct2)
Matrix dct2_adjoint(const Matrix& m) {
    const Matrix& c = dct_basis();
    Matrix tmp(N * N, 0.0), out(N * N, 0.0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t l = 0; l < N; ++l) {
            double acc = 0.0;
            for (std::size_t k = 0; k < N; ++k) acc += c[k * N + n] * m[k * N + l];
            tmp[n * N + l] = acc;
        }
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t j = 0; j < N; ++j) {
            double acc = 0.0;
            for (std::size_t l = 0; l < N; ++l) acc += tmp[n * N + l] * c[l * N + j];
            out[n * N + j] = acc;
        }
    return out;
}

constexpr double kDegenerateNorm = 1e-10;

struct Forward {
    std::vector<double> coeffs;
    double norm = 0.0;
};

Forward forward(const Image& img) {
    check_size(img);
    const Matrix wy = area_weights(img.height());
    const Matrix wx = area_weights(img.width());
    const Matrix freq = dct2(downsample(img, wy, wx));
    const auto& order = ReferenceEmbedding::zigzag();
    Forward f;
    f.coeffs.resize(ReferenceEmbedding::kDims);
    for (std::size_t d = 0; d < ReferenceEmbedding::kDims; ++d) {
        const auto [r, c] = order[d + 1];  // skip DC
        f.coeffs[d] = freq[r * N + c];
    }
    double sq = 0.0;
    for (double v : f.coeffs) sq += v * v;
    f.norm = std::sqrt(sq);
    return f;
}

}  // namespace

const std::vector<std::pair<std::size_t, std::size_t>>& ReferenceEmbedding::zigzag() {
    static const auto order = [] {
        std::vector<std::pair<std::size_t, std::size_t>> out;
        out.reserve(N * N);
        for (std::size_t diag = 0; diag < 2 * N - 1; ++diag) {
            const std::size_t lo = diag < N ? 0 : diag - N + 1;
            const std::size_t hi = diag < N ? diag : N - 1;
            if (diag % 2 == 0) {
                // up-right: row decreasing
                for (std::size_t r = hi + 1; r-- > lo;) out.emplace_back(r, diag - r);
            } else {
                for (std::size_t r = lo; r <= hi; ++r) out.emplace_back(r, diag - r);
            }
        }
        return out;
    }();
    return order;
}

EmbeddingVector ReferenceEmbedding::do_embed(const Image& clamped) {
    Forward f = forward(clamped);
    EmbeddingVector out;
    if (f.norm < kDegenerateNorm) {
        out.values.assign(kDims, 0.0);
        out.unit_norm = false;
        return out;
    }
    out.values = std::move(f.coeffs);
    for (double& v : out.values) v /= f.norm;
    out.unit_norm = true;
    return out;
}

PixelDelta ReferenceEmbedding::do_embed_vjp(const Image& clamped, std::span<const double> cotangent) {
    if (cotangent.size() != kDims) {
        throw OracleError("cotangent length " + std::to_string(cotangent.size()) + " != 64");
    }
    const Forward f = forward(clamped);
    const std::size_t h = clamped.height();
    const std::size_t w = clamped.width();
    PixelDelta grad(h, w);
    if (f.norm < kDegenerateNorm) return grad;

    // d<w, c/|c|>/dc = (w - e <w,e>) / |c|
    double we = 0.0;
    for (std::size_t d = 0; d < kDims; ++d) we += cotangent[d] * f.coeffs[d] / f.norm;
    Matrix freq_bar(N * N, 0.0);
    const auto& order = zigzag();
    for (std::size_t d = 0; d < kDims; ++d) {
        const auto [r, c] = order[d + 1];
        freq_bar[r * N + c] = (cotangent[d] - f.coeffs[d] / f.norm * we) / f.norm;
    }
    const Matrix down_bar = dct2_adjoint(freq_bar);
    const Matrix wy = area_weights(h);
    const Matrix wx = area_weights(w);

    // gray_bar = wy^T * down_bar * wx
    Matrix tmp(N * w, 0.0);  // down_bar * wx
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < N; ++j) {
            const double a = down_bar[i * N + j];
            for (std::size_t x = 0; x < w; ++x) tmp[i * w + x] += a * wx[j * w + x];
        }
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double g = 0.0;
            for (std::size_t i = 0; i < N; ++i) g += wy[i * h + y] * tmp[i * w + x];
            for (std::size_t c = 0; c < 3; ++c) grad.at(y, x, c) = kLuma[c] * g;
        }
    }
    return grad;
}

double distance(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.size() != b.size()) {
        throw Error("distance: embedding length mismatch (" + std::to_string(a.size()) + " vs " +
                    std::to_string(b.size()) + ")");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.values[i] - b.values[i];
        sum += d * d;
    }
    return sum;
}

bool same_person(const EmbeddingVector& a, const EmbeddingVector& b, const OracleConfig& cfg) {
    return distance(a, b) < cfg.threshold;
}

}  // namespace irspot
