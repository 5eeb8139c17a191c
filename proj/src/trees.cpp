#include "heparl/trees.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <string>

#include "heparl/errors.hpp"
#include "heparl/parallel.hpp"
#include "heparl/rng.hpp"
#include "heparl/serial_util.hpp"

namespace heparl {

class TreeBuilder {
public:
    TreeBuilder(std::span<const double> inputs, std::span<const double> targets,
                std::size_t n_rows, std::size_t n_features, std::size_t n_outputs,
                int k, int n_min_leaf, int max_depth, std::uint64_t seed)
        : x_(inputs), y_(targets), n_(n_rows), d_(n_features), m_(n_outputs), k_(k),
          n_min_(n_min_leaf), max_depth_(max_depth), rng_(make_engine(seed)) {
        rows_.resize(n_);
        std::iota(rows_.begin(), rows_.end(), 0);
        feature_pool_.resize(d_);
        std::iota(feature_pool_.begin(), feature_pool_.end(), 0);
        left_sum_.resize(m_);
        node_sum_.resize(m_);
    }

    ExtraTreesModel::Tree build() {
        tree_ = {};
        build_node(0, n_, 0);
        return std::move(tree_);
    }

private:
    double input(std::size_t row, std::size_t feature) const {
        return x_[row * d_ + feature];
    }
    const double* target(std::size_t row) const { return &y_[row * m_]; }

    bool targets_constant(std::size_t begin, std::size_t end) const {
        const double* first = target(rows_[begin]);
        for (std::size_t i = begin + 1; i < end; ++i) {
            const double* t = target(rows_[i]);
            for (std::size_t o = 0; o < m_; ++o) {
                if (t[o] != first[o]) return false;
            }
        }
        return true;
    }

    std::int32_t make_leaf(std::size_t begin, std::size_t end) {
        const double count = static_cast<double>(end - begin);
        ExtraTreesModel::Node node;
        node.leaf_offset = static_cast<std::int32_t>(tree_.leaf_values.size());
        node.leaf_count = count;
        for (std::size_t o = 0; o < m_; ++o) {
            double sum = 0.0;
            for (std::size_t i = begin; i < end; ++i) sum += target(rows_[i])[o];
            tree_.leaf_values.push_back(sum / count);
        }
        tree_.nodes.push_back(node);
        return static_cast<std::int32_t>(tree_.nodes.size() - 1);
    }

    /// Draws a cut strictly inside (lo, hi) and scores it by the split's
    /// variance reduction. Returns false for a constant feature.
    bool score_feature(std::size_t feature, std::size_t begin, std::size_t end,
                       double& cut, double& score) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (std::size_t i = begin; i < end; ++i) {
            double v = input(rows_[i], feature);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        if (!(lo < hi)) return false;
        cut = std::uniform_real_distribution<double>(lo, hi)(rng_);
        if (cut <= lo) cut = std::nextafter(lo, hi);

        std::fill(left_sum_.begin(), left_sum_.end(), 0.0);
        std::size_t n_left = 0;
        for (std::size_t i = begin; i < end; ++i) {
            if (input(rows_[i], feature) < cut) {
                const double* t = target(rows_[i]);
                for (std::size_t o = 0; o < m_; ++o) left_sum_[o] += t[o];
                ++n_left;
            }
        }
        const std::size_t n_node = end - begin;
        if (n_left == 0 || n_left == n_node) return false;

        // Maximizing variance reduction == maximizing sum_o of
        // (sum_L)^2/n_L + (sum_R)^2/n_R, the total being fixed.
        score = 0.0;
        const double nl = static_cast<double>(n_left);
        const double nr = static_cast<double>(n_node - n_left);
        for (std::size_t o = 0; o < m_; ++o) {
            const double right = node_sum_[o] - left_sum_[o];
            score += left_sum_[o] * left_sum_[o] / nl + right * right / nr;
        }
        return true;
    }

    std::int32_t build_node(std::size_t begin, std::size_t end, int depth) {
        const std::size_t n_node = end - begin;
        if (n_node < static_cast<std::size_t>(n_min_) ||
            (max_depth_ > 0 && depth >= max_depth_) || targets_constant(begin, end)) {
            return make_leaf(begin, end);
        }

        std::fill(node_sum_.begin(), node_sum_.end(), 0.0);
        for (std::size_t i = begin; i < end; ++i) {
            const double* t = target(rows_[i]);
            for (std::size_t o = 0; o < m_; ++o) node_sum_[o] += t[o];
        }

        double best_score = -std::numeric_limits<double>::infinity();
        std::size_t best_feature = 0;
        double best_cut = 0.0;
        bool found = false;

        // k candidate features drawn without replacement.
        const std::size_t k = std::min<std::size_t>(k_, d_);
        for (std::size_t i = 0; i < k; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, d_ - 1);
            std::swap(feature_pool_[i], feature_pool_[pick(rng_)]);
            const std::size_t feature = feature_pool_[i];
            double cut, score;
            if (!score_feature(feature, begin, end, cut, score)) continue;
            if (score > best_score) {
                best_score = score;
                best_feature = feature;
                best_cut = cut;
                found = true;
            }
        }
        if (!found) {
            // Every sampled candidate was constant; fall back to the first
            // splittable feature so the node is not forced into a leaf.
            for (std::size_t feature = 0; feature < d_ && !found; ++feature) {
                double cut, score;
                if (score_feature(feature, begin, end, cut, score)) {
                    best_feature = feature;
                    best_cut = cut;
                    found = true;
                }
            }
            if (!found) return make_leaf(begin, end); // all features constant
        }

        auto mid_it = std::partition(rows_.begin() + begin, rows_.begin() + end,
                                     [&](std::size_t row) {
                                         return input(row, best_feature) < best_cut;
                                     });
        const std::size_t mid = static_cast<std::size_t>(mid_it - rows_.begin());

        const std::int32_t index = static_cast<std::int32_t>(tree_.nodes.size());
        tree_.nodes.emplace_back();
        const std::int32_t left = build_node(begin, mid, depth + 1);
        const std::int32_t right = build_node(mid, end, depth + 1);
        ExtraTreesModel::Node& node = tree_.nodes[index];
        node.feature = static_cast<std::int32_t>(best_feature);
        node.threshold = best_cut;
        node.left = left;
        node.right = right;
        return index;
    }

    std::span<const double> x_, y_;
    std::size_t n_, d_, m_;
    int k_, n_min_, max_depth_;
    std::mt19937_64 rng_;
    std::vector<std::size_t> rows_;
    std::vector<std::size_t> feature_pool_;
    std::vector<double> left_sum_, node_sum_;
    ExtraTreesModel::Tree tree_;
};

ExtraTreesModel ExtraTreesModel::fit(std::span<const double> inputs, std::size_t n_rows,
                                     std::size_t n_features, std::span<const double> targets,
                                     std::size_t n_outputs, const ExtraTreesParams& params) {
    if (n_rows == 0) throw ValidationError("cannot fit extra trees on empty data");
    if (n_features == 0) throw ValidationError("cannot fit extra trees without features");
    if (inputs.size() != n_rows * n_features || targets.size() != n_rows * n_outputs) {
        throw ValidationError("dimension mismatch between inputs and targets");
    }
    if (params.n_trees < 1) throw ValidationError("n_trees must be >= 1");
    if (params.n_min_leaf < 1) throw ValidationError("n_min_leaf must be >= 1");
    if (params.k_candidate_features > static_cast<int>(n_features)) {
        throw ValidationError("k_candidate_features exceeds the feature dimension");
    }
    const int k = params.k_candidate_features > 0
                      ? params.k_candidate_features
                      : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n_features))));

    ExtraTreesModel model;
    model.n_features_ = n_features;
    model.n_outputs_ = n_outputs;
    model.target_min_.assign(n_outputs, std::numeric_limits<double>::infinity());
    model.target_max_.assign(n_outputs, -std::numeric_limits<double>::infinity());
    for (std::size_t r = 0; r < n_rows; ++r) {
        for (std::size_t o = 0; o < n_outputs; ++o) {
            const double t = targets[r * n_outputs + o];
            model.target_min_[o] = std::min(model.target_min_[o], t);
            model.target_max_[o] = std::max(model.target_max_[o], t);
        }
    }

    model.trees_.resize(params.n_trees);
    parallel_chunks(params.n_trees, [&](std::size_t begin, std::size_t end) {
        for (std::size_t t = begin; t < end; ++t) {
            TreeBuilder builder(inputs, targets, n_rows, n_features, n_outputs, k,
                                params.n_min_leaf, params.max_depth,
                                mix_seed(params.seed, t));
            model.trees_[t] = builder.build();
        }
    });
    return model;
}

ExtraTreesModel ExtraTreesModel::fit(const std::vector<std::vector<double>>& inputs,
                                     const std::vector<double>& targets,
                                     const ExtraTreesParams& params) {
    if (inputs.empty()) throw ValidationError("cannot fit extra trees on empty data");
    if (inputs.size() != targets.size()) {
        throw ValidationError("dimension mismatch between inputs and targets");
    }
    const std::size_t d = inputs.front().size();
    std::vector<double> flat;
    flat.reserve(inputs.size() * d);
    for (const auto& row : inputs) {
        if (row.size() != d) throw ValidationError("inconsistent input dimension");
        flat.insert(flat.end(), row.begin(), row.end());
    }
    return fit(flat, inputs.size(), d, targets, 1, params);
}

const ExtraTreesModel::Node& ExtraTreesModel::walk(const Tree& tree,
                                                   std::span<const double> input) const {
    const Node* node = &tree.nodes[0];
    while (node->feature >= 0) {
        node = input[node->feature] < node->threshold ? &tree.nodes[node->left]
                                                      : &tree.nodes[node->right];
    }
    return *node;
}

void ExtraTreesModel::predict(std::span<const double> input, std::span<double> out) const {
    if (input.size() != n_features_) throw ValidationError("prediction dimension mismatch");
    if (out.size() != n_outputs_) throw ValidationError("output dimension mismatch");
    std::fill(out.begin(), out.end(), 0.0);
    for (const Tree& tree : trees_) {
        const Node& leaf = walk(tree, input);
        for (std::size_t o = 0; o < n_outputs_; ++o) {
            out[o] += tree.leaf_values[leaf.leaf_offset + o];
        }
    }
    const double scale = 1.0 / static_cast<double>(trees_.size());
    for (auto& v : out) v *= scale;
}

double ExtraTreesModel::predict_scalar(std::span<const double> input) const {
    double out = 0.0;
    predict(input, {&out, 1});
    return out;
}

void ExtraTreesModel::predict_smoothed(std::span<const double> input, double alpha,
                                       std::span<double> out) const {
    if (input.size() != n_features_) throw ValidationError("prediction dimension mismatch");
    if (out.size() != n_outputs_) throw ValidationError("output dimension mismatch");
    std::fill(out.begin(), out.end(), 0.0);
    const double denom_extra = alpha * static_cast<double>(n_outputs_);
    for (const Tree& tree : trees_) {
        const Node& leaf = walk(tree, input);
        const double c = leaf.leaf_count;
        for (std::size_t o = 0; o < n_outputs_; ++o) {
            const double mean = tree.leaf_values[leaf.leaf_offset + o];
            out[o] += (mean * c + alpha) / (c + denom_extra);
        }
    }
    const double scale = 1.0 / static_cast<double>(trees_.size());
    for (auto& v : out) v *= scale;
}

namespace {

constexpr const char* kMagic = "extratrees";
constexpr int kFormatVersion = 1;

using serial::read_double;
using serial::read_int;
using serial::read_token;
using serial::write_hex;

} // namespace

void ExtraTreesModel::save(std::ostream& out) const {
    out << kMagic << ' ' << kFormatVersion << '\n';
    out << n_features_ << ' ' << n_outputs_ << ' ' << trees_.size() << '\n';
    out << "range";
    for (std::size_t o = 0; o < n_outputs_; ++o) {
        out << ' ';
        write_hex(out, target_min_[o]);
        out << ' ';
        write_hex(out, target_max_[o]);
    }
    out << '\n';
    for (const Tree& tree : trees_) {
        out << "tree " << tree.nodes.size() << '\n';
        for (const Node& node : tree.nodes) {
            if (node.feature < 0) {
                out << "l " << static_cast<long>(node.leaf_count);
                for (std::size_t o = 0; o < n_outputs_; ++o) {
                    out << ' ';
                    write_hex(out, tree.leaf_values[node.leaf_offset + o]);
                }
                out << '\n';
            } else {
                out << "i " << node.feature << ' ';
                write_hex(out, node.threshold);
                out << ' ' << node.left << ' ' << node.right << '\n';
            }
        }
    }
}

ExtraTreesModel ExtraTreesModel::load(std::istream& in) {
    if (read_token(in, "magic") != kMagic) {
        throw ValidationError("not an extra-trees model file");
    }
    if (read_int(in, "version") != kFormatVersion) {
        throw ValidationError("unsupported extra-trees model format version");
    }
    ExtraTreesModel model;
    model.n_features_ = static_cast<std::size_t>(read_int(in, "n_features"));
    model.n_outputs_ = static_cast<std::size_t>(read_int(in, "n_outputs"));
    const long n_trees = read_int(in, "n_trees");
    if (model.n_outputs_ == 0 || n_trees <= 0) {
        throw ValidationError("malformed extra-trees model header");
    }
    if (read_token(in, "range") != "range") {
        throw ValidationError("malformed extra-trees model: missing range");
    }
    model.target_min_.resize(model.n_outputs_);
    model.target_max_.resize(model.n_outputs_);
    for (std::size_t o = 0; o < model.n_outputs_; ++o) {
        model.target_min_[o] = read_double(in, "target_min");
        model.target_max_[o] = read_double(in, "target_max");
    }
    model.trees_.reserve(n_trees);
    for (long t = 0; t < n_trees; ++t) {
        if (read_token(in, "tree") != "tree") {
            throw ValidationError("malformed extra-trees model: missing tree");
        }
        const long n_nodes = read_int(in, "n_nodes");
        Tree tree;
        tree.nodes.reserve(n_nodes);
        for (long i = 0; i < n_nodes; ++i) {
            const std::string kind = read_token(in, "node kind");
            Node node;
            if (kind == "l") {
                node.leaf_count = static_cast<double>(read_int(in, "leaf count"));
                node.leaf_offset = static_cast<std::int32_t>(tree.leaf_values.size());
                for (std::size_t o = 0; o < model.n_outputs_; ++o) {
                    tree.leaf_values.push_back(read_double(in, "leaf value"));
                }
            } else if (kind == "i") {
                node.feature = static_cast<std::int32_t>(read_int(in, "feature"));
                node.threshold = read_double(in, "threshold");
                node.left = static_cast<std::int32_t>(read_int(in, "left"));
                node.right = static_cast<std::int32_t>(read_int(in, "right"));
                if (node.feature < 0 ||
                    node.feature >= static_cast<std::int32_t>(model.n_features_)) {
                    throw ValidationError("node feature out of range in model file");
                }
            } else {
                throw ValidationError("unknown node kind in model file: " + kind);
            }
            tree.nodes.push_back(node);
        }
        for (const Node& node : tree.nodes) {
            if (node.feature >= 0 &&
                (node.left < 0 || node.right < 0 || node.left >= n_nodes ||
                 node.right >= n_nodes)) {
                throw ValidationError("node child out of range in model file");
            }
        }
        model.trees_.push_back(std::move(tree));
    }
    return model;
}

} // namespace heparl
