#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "semicon/rng.hpp"
#include "semicon/types.hpp"

namespace semicon::pseudo {

struct PseudoConfig {
    int subgroup_size = 16;
    void validate() const;
};

struct PseudoNegativeSet {
    Matrix vectors;                       // one unit row per subgroup
    std::vector<std::size_t> rows;        // selected row positions within f_un
    std::vector<std::size_t> source_indices;
    std::size_t anchor = 0;               // row of f_pos used as anchor
    std::vector<std::vector<double>> similarities;  // per subgroup, in member order
    std::size_t dropped = 0;              // trailing rows that did not fill a subgroup

    std::size_t size() const { return rows.size(); }
};

struct PurityEstimate {
    std::size_t pool = 0;       // N
    std::size_t positives = 0;  // K
    std::size_t draw = 0;       // m
    std::vector<double> pmf;         // p(n), n = 0..min(K, m)
    std::vector<double> cumulative;  // p(n' <= n)

    double at_most(std::size_t n) const;
};

// Scales every row to unit L2 norm; throws naming the first zero row.
FeatureBatch normalize_rows(const FeatureBatch& batch);

// Dot product of unit vectors clamped to [-1, 1].
double cosine_similarity(const Eigen::Ref<const Eigen::RowVectorXd>& a,
                         const Eigen::Ref<const Eigen::RowVectorXd>& b);

// Median-similarity pseudo-negative selection. f_un is split in source order
// into floor(X / k) subgroups of k rows (the remainder is dropped); one anchor
// is drawn uniformly from f_pos; each subgroup contributes the member at
// ascending similarity rank ceil(k / 2), ties broken by smaller source index.
PseudoNegativeSet synthesize_pseudo_negatives(const FeatureBatch& f_un, const FeatureBatch& f_pos,
                                              const PseudoConfig& cfg, Rng& rng);

// Hypergeometric probabilities of drawing n positives in m draws without
// replacement from a pool of N containing K positives.
PurityEstimate purity_exact(std::size_t pool, std::size_t positives, std::size_t draw);

}  // namespace semicon::pseudo
