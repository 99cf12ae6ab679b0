#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace nsde {

/// Dense state vector. Length is the embedding dimension of its context.
using Vector = std::vector<double>;

inline void require_same_size(std::span<const double> a, std::span<const double> b,
                              const char* where) {
    if (a.size() != b.size()) {
        throw DimensionError(std::string(where) + ": length " + std::to_string(a.size()) +
                             " vs " + std::to_string(b.size()));
    }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    require_same_size(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double squared_norm(std::span<const double> a) {
    double s = 0.0;
    for (double v : a) s += v * v;
    return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(squared_norm(a)); }

inline Vector operator+(const Vector& a, const Vector& b) {
    require_same_size(a, b, "add");
    Vector out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

inline Vector operator-(const Vector& a, const Vector& b) {
    require_same_size(a, b, "subtract");
    Vector out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

inline Vector operator*(double s, const Vector& a) {
    Vector out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = s * a[i];
    return out;
}

inline bool all_finite(std::span<const double> a) {
    return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

/// Componentwise arithmetic mean of equally sized vectors.
inline Vector mean_of(std::span<const Vector> points) {
    if (points.empty()) throw ValidationError("mean_of: empty input");
    Vector m(points.front().size(), 0.0);
    for (const auto& p : points) {
        require_same_size(m, p, "mean_of");
        for (std::size_t i = 0; i < m.size(); ++i) m[i] += p[i];
    }
    const double n = static_cast<double>(points.size());
    for (auto& v : m) v /= n;
    return m;
}

/// Row-major dense matrix.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries)
        : rows_(rows), cols_(cols), data_(std::move(entries)) {
        if (data_.size() != rows_ * cols_) {
            throw DimensionError("Matrix: entries.size() != rows * cols");
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<const double> row(std::size_t r) const {
        return {data_.data() + r * cols_, cols_};
    }
    Vector row_vector(std::size_t r) const {
        auto s = row(r);
        return {s.begin(), s.end()};
    }

    Matrix transposed() const {
        Matrix t(cols_, rows_);
        for (std::size_t r = 0; r < rows_; ++r)
            for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
        return t;
    }

    bool is_symmetric(double tol) const {
        if (rows_ != cols_) return false;
        for (std::size_t r = 0; r < rows_; ++r)
            for (std::size_t c = r + 1; c < cols_; ++c)
                if (std::abs((*this)(r, c) - (*this)(c, r)) > tol) return false;
        return true;
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline Matrix operator*(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions differ");
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
        }
    return out;
}

inline Vector operator*(const Matrix& a, std::span<const double> x) {
    if (a.cols() != x.size()) throw DimensionError("matvec: matrix cols != vector length");
    Vector out(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double s = 0.0;
        const auto r = a.row(i);
        for (std::size_t j = 0; j < x.size(); ++j) s += r[j] * x[j];
        out[i] = s;
    }
    return out;
}

inline Vector operator*(const Matrix& a, const Vector& x) {
    return a * std::span<const double>(x);
}

/// Deterministic pseudo-random stream.
///
/// Algorithm (frozen): SplitMix64. The state is a 64-bit counter advanced by
/// the golden-ratio increment 0x9E3779B97F4A7C15 and passed through the
/// Stafford variant-13 finalizer. Uniforms use the top 53 bits; Gaussians use
/// the Marsaglia polar method, caching the second variate of each pair.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : seed_(seed), state_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64() noexcept {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() noexcept {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    double standard_normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u = 0.0;
        double v = 0.0;
        double s = 0.0;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

    /// Index in [0, n).
    std::size_t below(std::size_t n) noexcept {
        return static_cast<std::size_t>(uniform() * static_cast<double>(n));
    }

private:
    std::uint64_t seed_;
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Seed for the i-th independent path of a run seeded with `seed`.
inline std::uint64_t path_seed(std::uint64_t seed, std::uint64_t path_index) noexcept {
    return seed ^ path_index;
}

inline double standard_normal(RngStream& rng) noexcept { return rng.standard_normal(); }

/// Deterministic Fisher-Yates shuffle driven by an RngStream.
template <typename T>
void shuffle(std::vector<T>& items, RngStream& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::swap(items[i - 1], items[rng.below(i)]);
    }
}

struct EigenDecomposition {
    std::vector<double> values;  // descending
    Matrix vectors;              // one eigenvector per row
};

namespace detail {

// Flip so the first component with |v| > eps is positive.
inline void normalize_sign(std::span<double> v) {
    for (double c : v) {
        if (std::abs(c) > 1e-14) {
            if (c < 0) for (auto& x : v) x = -x;
            return;
        }
    }
}

inline std::size_t first_nonzero(std::span<const double> v) {
    for (std::size_t i = 0; i < v.size(); ++i)
        if (std::abs(v[i]) > 1e-14) return i;
    return v.size();
}

inline EigenDecomposition sort_eigenpairs(std::vector<double> values,
                                          std::vector<Vector> vecs) {
    double scale = 0.0;
    for (double v : values) scale = std::max(scale, std::abs(v));
    const double tie = 1e-12 * std::max(scale, 1.0);

    for (auto& v : vecs) normalize_sign(v);
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (std::abs(values[a] - values[b]) > tie) return values[a] > values[b];
        // equal eigenvalues: the vector aligned with the earlier axis first
        const auto fa = first_nonzero(vecs[a]);
        const auto fb = first_nonzero(vecs[b]);
        if (fa != fb) return fa < fb;
        return std::lexicographical_compare(vecs[b].begin(), vecs[b].end(),
                                            vecs[a].begin(), vecs[a].end());
    });

    const std::size_t d = vecs.empty() ? 0 : vecs.front().size();
    EigenDecomposition out{{}, Matrix(order.size(), d)};
    for (std::size_t r = 0; r < order.size(); ++r) {
        out.values.push_back(values[order[r]]);
        for (std::size_t c = 0; c < d; ++c) out.vectors(r, c) = vecs[order[r]][c];
    }
    return out;
}

}  // namespace detail

/// Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
inline EigenDecomposition jacobi_eigen(const Matrix& sym, int max_sweeps = 100) {
    if (sym.rows() != sym.cols()) throw DimensionError("jacobi_eigen: matrix not square");
    const std::size_t n = sym.rows();
    Matrix a = sym;
    Matrix v = Matrix::identity(n);

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (off < 1e-30) break;

        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<double> values(n);
    std::vector<Vector> vecs(n, Vector(n));
    for (std::size_t i = 0; i < n; ++i) {
        values[i] = a(i, i);
        for (std::size_t k = 0; k < n; ++k) vecs[i][k] = v(k, i);
    }
    return detail::sort_eigenpairs(std::move(values), std::move(vecs));
}

/// Leading k eigenpairs of a symmetric positive semidefinite matrix by power
/// iteration with Hotelling deflation.
inline EigenDecomposition power_eigen(const Matrix& sym, std::size_t k, RngStream& rng,
                                      int max_iter = 5000, double tol = 1e-13) {
    const std::size_t n = sym.rows();
    Matrix a = sym;
    std::vector<double> values;
    std::vector<Vector> vecs;
    for (std::size_t e = 0; e < k; ++e) {
        Vector x(n);
        for (auto& c : x) c = rng.uniform(-1.0, 1.0);
        double lambda = 0.0;
        for (int it = 0; it < max_iter; ++it) {
            // orthogonalize against found vectors to fight deflation round-off
            for (const auto& u : vecs) {
                const double proj = dot(x, u);
                for (std::size_t i = 0; i < n; ++i) x[i] -= proj * u[i];
            }
            const double nx = norm(x);
            if (nx < 1e-300) break;
            for (auto& c : x) c /= nx;
            Vector y = a * x;
            const double next = dot(x, y);
            const double ny = norm(y);
            if (ny < 1e-300) {
                lambda = 0.0;
                break;
            }
            Vector diff(n);
            for (std::size_t i = 0; i < n; ++i) diff[i] = y[i] / ny - x[i];
            x = std::move(y);
            const bool done = std::abs(next - lambda) <= tol * std::max(1.0, std::abs(next)) &&
                              norm(diff) < 1e-9;
            lambda = next;
            if (done) break;
        }
        const double nx = norm(x);
        if (nx > 0) for (auto& c : x) c /= nx;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) a(i, j) -= lambda * x[i] * x[j];
        values.push_back(lambda);
        vecs.push_back(std::move(x));
    }
    return detail::sort_eigenpairs(std::move(values), std::move(vecs));
}

/// Dimension at and above which PCA switches from Jacobi to power iteration.
inline constexpr std::size_t kPowerIterationThreshold = 64;

struct PcaFit {
    Matrix basis;  // k x d, orthonormal rows
    Vector mean;
    std::vector<double> explained_variance;
    bool degenerate = false;  // covariance was (numerically) zero
};

/// Sample covariance (divisor n-1; n when a single point is given).
inline Matrix sample_covariance(std::span<const Vector> points, const Vector& mean) {
    const std::size_t d = mean.size();
    Matrix cov(d, d);
    for (const auto& p : points) {
        require_same_size(p, mean, "sample_covariance");
        for (std::size_t i = 0; i < d; ++i) {
            const double di = p[i] - mean[i];
            for (std::size_t j = i; j < d; ++j) cov(i, j) += di * (p[j] - mean[j]);
        }
    }
    const double denom = points.size() > 1 ? static_cast<double>(points.size() - 1) : 1.0;
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i; j < d; ++j) {
            cov(i, j) /= denom;
            cov(j, i) = cov(i, j);
        }
    return cov;
}

inline PcaFit pca_fit(std::span<const Vector> points, std::size_t k) {
    if (points.empty()) throw ValidationError("pca_fit: no points");
    const std::size_t d = points.front().size();
    if (k == 0 || k > std::min(d, points.size())) {
        throw DimensionError("pca_fit: k=" + std::to_string(k) + " outside [1, min(d=" +
                             std::to_string(d) + ", n=" + std::to_string(points.size()) + ")]");
    }
    PcaFit fit;
    fit.mean = mean_of(points);
    const Matrix cov = sample_covariance(points, fit.mean);

    double trace = 0.0;
    for (std::size_t i = 0; i < d; ++i) trace += cov(i, i);
    if (trace <= 1e-300) {
        fit.basis = Matrix(k, d);
        for (std::size_t r = 0; r < k; ++r) fit.basis(r, r) = 1.0;
        fit.explained_variance.assign(k, 0.0);
        fit.degenerate = true;
        return fit;
    }

    EigenDecomposition eig;
    if (d < kPowerIterationThreshold) {
        eig = jacobi_eigen(cov);
    } else {
        RngStream rng(0x5eedULL);
        eig = power_eigen(cov, k, rng);
    }
    fit.basis = Matrix(k, d);
    for (std::size_t r = 0; r < k; ++r) {
        for (std::size_t c = 0; c < d; ++c) fit.basis(r, c) = eig.vectors(r, c);
        fit.explained_variance.push_back(std::max(0.0, eig.values[r]));
    }
    return fit;
}

/// basis * (x - mean)
inline Vector pca_project(const Matrix& basis, const Vector& mean, const Vector& x) {
    if (basis.cols() != mean.size() || mean.size() != x.size()) {
        throw DimensionError("pca_project: basis/mean/x dimensions disagree");
    }
    return basis * (x - mean);
}

inline Vector pca_project(const PcaFit& fit, const Vector& x) {
    return pca_project(fit.basis, fit.mean, x);
}

/// mean + basis^T g, the affine inverse of pca_project on the fitted plane.
inline Vector pca_lift(const PcaFit& fit, std::span<const double> g) {
    if (g.size() != fit.basis.rows()) throw DimensionError("pca_lift: coordinate length != k");
    Vector x = fit.mean;
    for (std::size_t r = 0; r < fit.basis.rows(); ++r) {
        const auto row = fit.basis.row(r);
        for (std::size_t c = 0; c < x.size(); ++c) x[c] += g[r] * row[c];
    }
    return x;
}

}  // namespace nsde
