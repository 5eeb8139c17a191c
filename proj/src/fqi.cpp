#include "heparl/fqi.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <vector>

#include "heparl/errors.hpp"
#include "heparl/parallel.hpp"
#include "heparl/rng.hpp"

namespace heparl {

namespace {

thread_local std::vector<double> tls_input;

} // namespace

QEnsemble::QEnsemble(ExtraTreesModel model, std::size_t state_dimension, int n_actions)
    : model_(std::move(model)), state_dimension_(state_dimension), n_actions_(n_actions) {
    if (n_actions_ < 1) throw ValidationError("QEnsemble requires n_actions >= 1");
    if (model_.n_features() != state_dimension_ + static_cast<std::size_t>(n_actions_)) {
        throw ValidationError("QEnsemble layout mismatch with fitted model");
    }
}

double QEnsemble::value(std::span<const double> state, int action) const {
    if (state.size() != state_dimension_) {
        throw ValidationError("state dimension mismatch in Q evaluation");
    }
    if (action < 0 || action >= n_actions_) {
        throw ValidationError("action index out of range in Q evaluation");
    }
    auto& input = tls_input;
    input.assign(state_dimension_ + n_actions_, 0.0);
    std::copy(state.begin(), state.end(), input.begin());
    input[state_dimension_ + action] = 1.0;
    return model_.predict_scalar(input);
}

double QEnsemble::max_value(std::span<const double> state) const {
    double best = value(state, 0);
    for (int a = 1; a < n_actions_; ++a) best = std::max(best, value(state, a));
    return best;
}

int QEnsemble::best_action(std::span<const double> state) const {
    int best = 0;
    double best_value = value(state, 0);
    for (int a = 1; a < n_actions_; ++a) {
        double v = value(state, a);
        if (v > best_value) {
            best_value = v;
            best = a;
        }
    }
    return best;
}

void QEnsemble::save(std::ostream& out) const {
    out << "qensemble 1\n" << state_dimension_ << ' ' << n_actions_ << '\n';
    model_.save(out);
}

QEnsemble QEnsemble::load(std::istream& in) {
    std::string magic;
    int version = 0;
    if (!(in >> magic >> version) || magic != "qensemble" || version != 1) {
        throw ValidationError("not a Q-ensemble model file");
    }
    std::size_t state_dimension = 0;
    int n_actions = 0;
    if (!(in >> state_dimension >> n_actions)) {
        throw ValidationError("malformed Q-ensemble header");
    }
    return QEnsemble(ExtraTreesModel::load(in), state_dimension, n_actions);
}

QEnsemble fitted_q_iteration(const TransitionSet& data, const FqiConfig& config) {
    if (data.transitions.empty()) throw ValidationError("FQI requires a non-empty dataset");
    if (data.n_actions < 1) throw ValidationError("FQI requires n_actions >= 1");
    if (!(config.gamma >= 0.0 && config.gamma < 1.0)) {
        throw ValidationError("gamma must lie in [0, 1)");
    }
    if (config.n_iterations < 1) throw ValidationError("n_iterations must be >= 1");

    const std::size_t n = data.transitions.size();
    const std::size_t dim = data.state_dimension();
    const std::size_t input_dim = dim + static_cast<std::size_t>(data.n_actions);

    std::vector<double> inputs(n * input_dim, 0.0);
    std::vector<double> next_states(n * dim);
    std::vector<double> rewards(n);
    std::vector<std::uint8_t> terminal(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Transition& tr = data.transitions[i];
        if (tr.state.dimension() != dim || tr.next_state.dimension() != dim) {
            throw ValidationError("inconsistent state dimension in transition set");
        }
        if (tr.action < 0 || tr.action >= data.n_actions) {
            throw ValidationError("transition action out of range");
        }
        tr.state.write_input(&inputs[i * input_dim]);
        inputs[i * input_dim + dim + tr.action] = 1.0;
        tr.next_state.write_input(&next_states[i * dim]);
        rewards[i] = tr.reward;
        terminal[i] = tr.terminal ? 1 : 0;
    }

    std::vector<double> targets = rewards; // Q_0 == 0, so y_1 = r everywhere
    ExtraTreesParams params = config.trees;
    ExtraTreesModel model;

    for (int iteration = 0; iteration < config.n_iterations; ++iteration) {
        if (iteration > 0 && config.gamma > 0.0) {
            const QEnsemble q(std::move(model), dim, data.n_actions);
            parallel_chunks(n, [&](std::size_t begin, std::size_t end) {
                for (std::size_t i = begin; i < end; ++i) {
                    targets[i] = rewards[i];
                    if (!terminal[i]) {
                        std::span<const double> ns(&next_states[i * dim], dim);
                        targets[i] += config.gamma * q.max_value(ns);
                    }
                }
            });
        }
        params.seed = mix_seed(config.trees.seed, static_cast<std::uint64_t>(iteration));
        model = ExtraTreesModel::fit(inputs, n, input_dim, targets, 1, params);
    }
    return QEnsemble(std::move(model), dim, data.n_actions);
}

int greedy_action(const GreedyPolicy& policy, std::span<const double> state) {
    if (!policy.q) throw ValidationError("greedy policy has no fitted Q");
    return policy.q->best_action(state);
}

} // namespace heparl
