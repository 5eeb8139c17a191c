#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace heparl {

struct ExtraTreesParams {
    int n_trees = 50;
    int k_candidate_features = 0; // 0 = ceil(sqrt(d))
    int n_min_leaf = 5;           // nodes smaller than this become leaves
    int max_depth = 0;            // 0 = unbounded
    std::uint64_t seed = 0;
};

/// Ensemble of extremely randomized regression trees. Every tree is grown
/// on the full dataset (no bootstrapping): at each node k features are drawn
/// uniformly, one uniform random cut-point is drawn per feature inside the
/// feature's node range, and the split with the largest variance reduction
/// (summed over outputs) is kept. Leaves predict per-output target means;
/// the ensemble prediction is the average over trees. Deterministic for a
/// fixed seed. Immutable once fitted.
class ExtraTreesModel {
public:
    ExtraTreesModel() = default;

    static ExtraTreesModel fit(std::span<const double> inputs, std::size_t n_rows,
                               std::size_t n_features, std::span<const double> targets,
                               std::size_t n_outputs, const ExtraTreesParams& params);

    /// Scalar-target convenience used by the regression surface.
    static ExtraTreesModel fit(const std::vector<std::vector<double>>& inputs,
                               const std::vector<double>& targets,
                               const ExtraTreesParams& params);

    void predict(std::span<const double> input, std::span<double> out) const;
    double predict_scalar(std::span<const double> input) const;

    /// Per-tree Laplace smoothing of leaf frequencies before averaging:
    /// (mean_o * count + alpha) / (count + alpha * n_outputs). With one-hot
    /// targets and alpha = 1 this is the pseudo-count-1 class frequency.
    void predict_smoothed(std::span<const double> input, double alpha,
                          std::span<double> out) const;

    std::size_t n_features() const { return n_features_; }
    std::size_t n_outputs() const { return n_outputs_; }
    std::size_t n_trees() const { return trees_.size(); }
    bool empty() const { return trees_.empty(); }

    /// Training-target range per output; every prediction lies inside it.
    double target_min(std::size_t output = 0) const { return target_min_[output]; }
    double target_max(std::size_t output = 0) const { return target_max_[output]; }

    /// Versioned text serialization; thresholds and leaf values are written
    /// as hexfloats so a round trip preserves predictions bit-exactly.
    void save(std::ostream& out) const;
    static ExtraTreesModel load(std::istream& in);

private:
    struct Node {
        std::int32_t feature = -1; // -1 = leaf
        double threshold = 0.0;
        std::int32_t left = -1;
        std::int32_t right = -1;
        std::int32_t leaf_offset = -1; // into leaf_values
        double leaf_count = 0.0;
    };
    struct Tree {
        std::vector<Node> nodes;
        std::vector<double> leaf_values; // n_leaves * n_outputs means
    };

    const Node& walk(const Tree& tree, std::span<const double> input) const;

    std::size_t n_features_ = 0;
    std::size_t n_outputs_ = 0;
    std::vector<double> target_min_, target_max_;
    std::vector<Tree> trees_;

    friend class TreeBuilder;
};

} // namespace heparl
