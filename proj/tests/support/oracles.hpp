#pragma once

// Independent reference implementations used only by the tests. Nothing here
// calls into the library's numeric code except to read tensor values.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "bet/tensor.hpp"

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

inline Matrix to_matrix(const bet::Tensor& t) {
    Matrix m(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.data()[i * t.cols() + j];
    return m;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    const std::size_t n = a.size(), k = b.size(), m = b.empty() ? 0 : b[0].size();
    Matrix c(n, std::vector<double>(m, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += a[i][p] * b[p][j];
            c[i][j] = s;
        }
    return c;
}

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.empty() ? 0 : a[0].size(), std::vector<double>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i].size(); ++j) t[j][i] = a[i][j];
    return t;
}

// Softmax of each row over columns where visible(i, j) is true.
inline Matrix causal_softmax(const Matrix& logits, const std::function<bool(std::size_t, std::size_t)>& visible) {
    Matrix out(logits.size(), std::vector<double>(logits.empty() ? 0 : logits[0].size(), 0.0));
    for (std::size_t i = 0; i < logits.size(); ++i) {
        double mx = -1e300;
        for (std::size_t j = 0; j < logits[i].size(); ++j)
            if (visible(i, j)) mx = std::max(mx, logits[i][j]);
        double z = 0.0;
        for (std::size_t j = 0; j < logits[i].size(); ++j)
            if (visible(i, j)) z += std::exp(logits[i][j] - mx);
        for (std::size_t j = 0; j < logits[i].size(); ++j)
            if (visible(i, j)) out[i][j] = std::exp(logits[i][j] - mx) / z;
    }
    return out;
}

inline double max_abs_diff(const Matrix& a, const bet::Tensor& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i].size(); ++j)
            worst = std::max(worst, std::fabs(a[i][j] - b.data()[i * b.cols() + j]));
    return worst;
}

// ---------------------------------------------------------------------------
// Central finite differences against reverse-mode gradients.

inline constexpr double kFdStep = 1e-6;
inline constexpr double kFdTolerance = 1e-4;
// Denominator floor: below this magnitude both gradients are treated as zero
// and the difference is judged absolutely.
inline constexpr double kFdFloor = 1e-5;

inline double relative_error(double analytic, double numeric) {
    return std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), kFdFloor});
}

struct GradCheck {
    double worst = 0.0;
    std::string where;
    std::size_t checked = 0;
};

// `loss` must rebuild the graph from the current values of `params` and
// return a scalar.
inline GradCheck check_gradients(const std::function<bet::Tensor()>& loss, std::vector<bet::Tensor> params,
                                 const std::vector<std::string>& names = {}) {
    for (auto& p : params) p.zero_grad();
    loss().backward();
    std::vector<std::vector<double>> analytic;
    for (auto& p : params) {
        if (p.has_grad())
            analytic.emplace_back(p.grad().begin(), p.grad().end());
        else
            analytic.emplace_back(p.size(), 0.0);
    }
    GradCheck out;
    bet::NoGradGuard no_grad;
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto w = params[k].mutable_data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double saved = w[i];
            w[i] = saved + kFdStep;
            const double up = loss().item();
            w[i] = saved - kFdStep;
            const double down = loss().item();
            w[i] = saved;
            const double numeric = (up - down) / (2 * kFdStep);
            const double err = relative_error(analytic[k][i], numeric);
            ++out.checked;
            if (err > out.worst) {
                out.worst = err;
                out.where = (k < names.size() ? names[k] : "param" + std::to_string(k)) + "[" + std::to_string(i) + "]";
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dependency trees.

// Random rooted tree over n tokens: nodes are attached in a random order, each
// to a uniformly chosen node already in the tree. heads are 0-based, -1 root.
inline std::vector<int> random_tree(std::size_t n, std::mt19937_64& rng) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<int> heads(n, -1);
    for (std::size_t k = 1; k < n; ++k) {
        std::uniform_int_distribution<std::size_t> pick(0, k - 1);
        heads[order[k]] = order[pick(rng)];
    }
    return heads;
}

// Enumerates every ancestor of token t+1 together with its tree distance,
// keeps those strictly left of t+1 and returns the closest one; t otherwise.
inline std::size_t hint_by_enumeration(const std::vector<int>& heads, std::size_t t) {
    const int target = static_cast<int>(t + 1);
    std::map<int, int> distance;
    int node = heads[target], d = 1;
    while (node != -1 && !distance.count(node)) {
        distance[node] = d++;
        node = heads[node];
    }
    int best = -1, best_d = 1 << 30;
    for (auto [pos, dist] : distance) {
        if (pos < target && dist < best_d) {
            best = pos;
            best_d = dist;
        }
    }
    return best < 0 ? t : static_cast<std::size_t>(best);
}

// ---------------------------------------------------------------------------
// Attention statistics by flat enumeration (two-pass mean and variance).

struct FlatStats {
    std::vector<double> diag, lower;

    void add(const Matrix& a, bool include_first_row = true) {
        for (std::size_t i = include_first_row ? 0 : 1; i < a.size(); ++i) {
            diag.push_back(a[i][i]);
            for (std::size_t j = 0; j < i; ++j) lower.push_back(a[i][j]);
        }
    }

    static double mean(const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    }

    static double pstd(const std::vector<double>& v) {
        const double m = mean(v);
        double s = 0.0;
        for (double x : v) s += (x - m) * (x - m);
        return std::sqrt(s / static_cast<double>(v.size()));
    }
};

// Random causal row-stochastic matrix with strictly positive visible entries.
inline Matrix random_causal_matrix(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.01, 1.0);
    Matrix a(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        double z = 0.0;
        for (std::size_t j = 0; j <= i; ++j) z += a[i][j] = u(rng);
        for (std::size_t j = 0; j <= i; ++j) a[i][j] /= z;
    }
    return a;
}

inline bet::Tensor to_tensor(const Matrix& m) {
    std::vector<double> flat;
    for (const auto& row : m) flat.insert(flat.end(), row.begin(), row.end());
    return bet::Tensor::from({m.size(), m.empty() ? 0 : m[0].size()}, std::move(flat));
}

}  // namespace oracle
