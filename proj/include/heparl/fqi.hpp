#pragma once

#include <iosfwd>
#include <span>

#include "heparl/state.hpp"
#include "heparl/trees.hpp"

namespace heparl {

struct FqiConfig {
    double gamma = 0.99;     // in [0, 1)
    int n_iterations = 30;   // fixed budget; tree-based FQI is not a contraction
    ExtraTreesParams trees;
};

/// Q(s, a) realized as a single extra-trees regressor over the input
/// state ⊕ one-hot(action).
class QEnsemble {
public:
    QEnsemble() = default;
    QEnsemble(ExtraTreesModel model, std::size_t state_dimension, int n_actions);

    double value(std::span<const double> state, int action) const;
    double max_value(std::span<const double> state) const;

    /// argmax over actions, ties broken toward the lowest index.
    int best_action(std::span<const double> state) const;

    std::size_t state_dimension() const { return state_dimension_; }
    int n_actions() const { return n_actions_; }
    double target_min() const { return model_.target_min(); }
    double target_max() const { return model_.target_max(); }
    const ExtraTreesModel& model() const { return model_; }

    void save(std::ostream& out) const;
    static QEnsemble load(std::istream& in);

private:
    ExtraTreesModel model_;
    std::size_t state_dimension_ = 0;
    int n_actions_ = 0;
};

/// Fitted Q-Iteration: Q_0 == 0 and at every iteration a fresh ensemble is
/// regressed onto y = r + gamma * max_a' Q_prev(s', a') (y = r on terminal
/// transitions). Iteration i reseeds the forest with mix_seed(seed, i), so a
/// shorter run is a prefix of a longer one.
QEnsemble fitted_q_iteration(const TransitionSet& data, const FqiConfig& config);

struct GreedyPolicy {
    const QEnsemble* q = nullptr;
};

int greedy_action(const GreedyPolicy& policy, std::span<const double> state);

} // namespace heparl
