#include "semicon/pseudolabel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include <spdlog/spdlog.h>

namespace semicon::pseudo {

void PseudoConfig::validate() const {
    if (subgroup_size < 2) throw std::invalid_argument("subgroup size k must be at least 2");
}

double PurityEstimate::at_most(std::size_t n) const {
    if (cumulative.empty()) return 0.0;
    return cumulative[std::min(n, cumulative.size() - 1)];
}

FeatureBatch normalize_rows(const FeatureBatch& batch) {
    FeatureBatch out = batch;
    for (Eigen::Index i = 0; i < out.vectors.rows(); ++i) {
        const double norm = out.vectors.row(i).norm();
        if (!(norm > 0.0) || !std::isfinite(norm)) {
            throw std::invalid_argument("cannot normalize row " + std::to_string(i) +
                                        ": zero or non-finite norm");
        }
        out.vectors.row(i) /= norm;
    }
    out.normalized = true;
    return out;
}

double cosine_similarity(const Eigen::Ref<const Eigen::RowVectorXd>& a,
                         const Eigen::Ref<const Eigen::RowVectorXd>& b) {
    return std::clamp(a.dot(b), -1.0, 1.0);
}

PseudoNegativeSet synthesize_pseudo_negatives(const FeatureBatch& f_un, const FeatureBatch& f_pos,
                                              const PseudoConfig& cfg, Rng& rng) {
    cfg.validate();
    f_un.validate();
    f_pos.validate();
    const std::size_t k = static_cast<std::size_t>(cfg.subgroup_size);
    if (f_un.rows() < k) {
        throw std::invalid_argument("need at least k=" + std::to_string(k) +
                                    " unlabeled features, got " + std::to_string(f_un.rows()));
    }
    if (f_un.vectors.cols() != f_pos.vectors.cols()) {
        throw std::invalid_argument("unlabeled and positive features differ in dimension");
    }
    const FeatureBatch un = normalize_rows(f_un);
    const FeatureBatch pos = normalize_rows(f_pos);

    PseudoNegativeSet out;
    const std::size_t groups = un.rows() / k;
    out.dropped = un.rows() - groups * k;
    if (out.dropped > 0) {
        spdlog::debug("pseudo-negatives: dropping {} trailing features (k={})", out.dropped, k);
    }
    std::uniform_int_distribution<std::size_t> pick(0, pos.rows() - 1);
    out.anchor = pick(rng);
    const Eigen::RowVectorXd anchor = pos.vectors.row(static_cast<Eigen::Index>(out.anchor));

    const std::size_t rank = (k + 1) / 2;  // ceil(k / 2), 1-based
    out.vectors.resize(static_cast<Eigen::Index>(groups), un.vectors.cols());
    std::vector<std::size_t> order(k);
    for (std::size_t g = 0; g < groups; ++g) {
        std::vector<double> sims(k);
        for (std::size_t j = 0; j < k; ++j) {
            sims[j] = cosine_similarity(un.vectors.row(static_cast<Eigen::Index>(g * k + j)), anchor);
        }
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (sims[a] != sims[b]) return sims[a] < sims[b];
            return un.source_indices[g * k + a] < un.source_indices[g * k + b];
        });
        const std::size_t row = g * k + order[rank - 1];
        out.rows.push_back(row);
        out.source_indices.push_back(un.source_indices[row]);
        out.vectors.row(static_cast<Eigen::Index>(g)) = un.vectors.row(static_cast<Eigen::Index>(row));
        out.similarities.push_back(std::move(sims));
    }
    return out;
}

PurityEstimate purity_exact(std::size_t pool, std::size_t positives, std::size_t draw) {
    if (positives > pool) throw std::invalid_argument("positives K must not exceed pool size N");
    if (draw < 1 || draw > pool) throw std::invalid_argument("draw size m must lie in [1, N]");
    PurityEstimate est;
    est.pool = pool;
    est.positives = positives;
    est.draw = draw;
    const std::size_t n_max = std::min(positives, draw);
    const std::size_t negatives = pool - positives;
    const std::size_t n_min = draw > negatives ? draw - negatives : 0;

    // log of C(K,n) C(N-K,m-n) up to a constant, via the term ratio
    // p(n+1)/p(n) = (K-n)(m-n) / ((n+1)(N-K-m+n+1)); normalized with log-sum-exp.
    std::vector<double> log_w(n_max + 1, -std::numeric_limits<double>::infinity());
    log_w[n_min] = 0.0;
    for (std::size_t n = n_min; n < n_max; ++n) {
        const double num = std::log(static_cast<double>(positives - n)) +
                           std::log(static_cast<double>(draw - n));
        const double den = std::log(static_cast<double>(n + 1)) +
                           std::log(static_cast<double>(negatives + n + 1 - draw));
        log_w[n + 1] = log_w[n] + num - den;
    }
    const double peak = *std::max_element(log_w.begin(), log_w.end());
    double total = 0.0;
    for (double lw : log_w) total += std::exp(lw - peak);
    const double log_z = peak + std::log(total);

    est.pmf.resize(n_max + 1);
    est.cumulative.resize(n_max + 1);
    double running = 0.0;
    for (std::size_t n = 0; n <= n_max; ++n) {
        est.pmf[n] = std::exp(log_w[n] - log_z);
        running += est.pmf[n];
        est.cumulative[n] = std::min(running, 1.0);
    }
    return est;
}

}  // namespace semicon::pseudo
