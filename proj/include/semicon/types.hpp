#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>

namespace semicon {

// Row-major double matrix: one embedding per row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Embedding rows with their provenance in the originating dataset.
struct FeatureBatch {
    Matrix vectors;  // N x d
    bool normalized = false;
    std::vector<std::size_t> source_indices;

    std::size_t rows() const { return static_cast<std::size_t>(vectors.rows()); }
    void validate() const;
};

// Default provenance 0..N-1.
FeatureBatch make_feature_batch(Matrix vectors);

// Projector outputs z and predictor outputs p for the two views of a batch.
struct ViewEmbeddings {
    Matrix z1, z2, p1, p2;

    void validate() const;
};

}  // namespace semicon
