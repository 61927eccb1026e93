#include "semicon/types.hpp"

#include <numeric>
#include <stdexcept>

namespace semicon {

void FeatureBatch::validate() const {
    if (vectors.rows() < 1) throw std::invalid_argument("feature batch must hold at least one row");
    if (source_indices.size() != rows()) {
        throw std::invalid_argument("feature batch provenance does not match its row count");
    }
    if (!vectors.allFinite()) throw std::invalid_argument("feature batch contains non-finite values");
}

FeatureBatch make_feature_batch(Matrix vectors) {
    FeatureBatch batch;
    batch.source_indices.resize(static_cast<std::size_t>(vectors.rows()));
    std::iota(batch.source_indices.begin(), batch.source_indices.end(), std::size_t{0});
    batch.vectors = std::move(vectors);
    return batch;
}

void ViewEmbeddings::validate() const {
    const bool shapes = z1.rows() == z2.rows() && z1.rows() == p1.rows() && z1.rows() == p2.rows() &&
                        z1.cols() == z2.cols() && z1.cols() == p1.cols() && z1.cols() == p2.cols();
    if (!shapes) throw std::invalid_argument("view embeddings disagree in shape");
    if (!(z1.allFinite() && z2.allFinite() && p1.allFinite() && p2.allFinite())) {
        throw std::invalid_argument("view embeddings contain non-finite values");
    }
}

}  // namespace semicon
