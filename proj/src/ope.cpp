#include "heparl/ope.hpp"

#include <algorithm>
#include <cmath>

#include "heparl/errors.hpp"

namespace heparl {

EvalPolicy::EvalPolicy(const QEnsemble& q, double epsilon) : q_(&q), epsilon_(epsilon) {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
        throw ValidationError("policy epsilon must lie in [0,1]");
    }
}

double EvalPolicy::prob(std::span<const double> state, int action) const {
    const int k = q_->n_actions();
    if (action < 0 || action >= k) throw ValidationError("action index out of range");
    double p = epsilon_ / static_cast<double>(k);
    if (action == q_->best_action(state)) p += 1.0 - epsilon_;
    return p;
}

BehaviorModel::BehaviorModel(ExtraTreesModel model, double floor)
    : model_(std::move(model)), floor_(floor) {
    if (model_.n_outputs() < 1) throw ValidationError("behavior model needs >= 1 action");
    if (!(floor_ >= 0.0)) throw ValidationError("probability floor must be >= 0");
}

std::vector<double> BehaviorModel::distribution(std::span<const double> state) const {
    std::vector<double> probs(model_.n_outputs());
    model_.predict_smoothed(state, 1.0, probs);
    const double k = static_cast<double>(probs.size());
    for (auto& p : probs) p = (p + floor_) / (1.0 + k * floor_);
    return probs;
}

double BehaviorModel::prob(std::span<const double> state, int action) const {
    if (action < 0 || action >= n_actions()) {
        throw ValidationError("action index out of range");
    }
    return distribution(state)[action];
}

BehaviorModel fit_behavior_policy(const TransitionSet& data, const ExtraTreesParams& params,
                                  double floor) {
    if (data.transitions.empty()) {
        throw ValidationError("behavior policy requires a non-empty dataset");
    }
    const std::size_t n = data.transitions.size();
    const std::size_t dim = data.state_dimension();
    const std::size_t k = static_cast<std::size_t>(data.n_actions);
    std::vector<double> inputs(n * dim);
    std::vector<double> targets(n * k, 0.0); // one-hot logged actions
    for (std::size_t i = 0; i < n; ++i) {
        const Transition& tr = data.transitions[i];
        tr.state.write_input(&inputs[i * dim]);
        targets[i * k + tr.action] = 1.0;
    }
    return BehaviorModel(ExtraTreesModel::fit(inputs, n, dim, targets, k, params), floor);
}

std::vector<EvalTrajectory> build_eval_trajectories(const TransitionSet& policy_view,
                                                    const TransitionSet& behavior_view) {
    const auto& pt = policy_view.transitions;
    const auto& bt = behavior_view.transitions;
    if (pt.size() != bt.size()) {
        throw ValidationError("transition-set views do not align");
    }
    std::vector<EvalTrajectory> trajectories;
    for (std::size_t i = 0; i < pt.size(); ++i) {
        if (pt[i].patient_id != bt[i].patient_id || pt[i].step != bt[i].step ||
            pt[i].action != bt[i].action || pt[i].reward != bt[i].reward) {
            throw ValidationError("transition-set views do not align");
        }
        if (trajectories.empty() || pt[i].step == 0) {
            trajectories.push_back({pt[i].patient_id, {}});
        }
        EvalStep step;
        step.policy_state = pt[i].state.to_input();
        step.behavior_state = bt[i].state.to_input();
        step.action = pt[i].action;
        step.reward = pt[i].reward;
        trajectories.back().steps.push_back(std::move(step));
    }
    return trajectories;
}

std::string method_name(OpeMethod method) {
    switch (method) {
        case OpeMethod::IS: return "IS";
        case OpeMethod::WIS: return "WIS";
        case OpeMethod::StepIS: return "stepIS";
        case OpeMethod::StepWIS: return "stepWIS";
    }
    return "?";
}

double trajectory_weight(const EvalTrajectory& trajectory, const PolicyDistribution& pi,
                         const PolicyDistribution& mu, std::size_t upto) {
    if (upto >= trajectory.steps.size()) {
        throw ValidationError("weight index exceeds trajectory length");
    }
    double rho = 1.0;
    for (std::size_t t = 0; t <= upto; ++t) {
        const EvalStep& step = trajectory.steps[t];
        rho *= pi.prob(step.policy_state, step.action) /
               mu.prob(step.behavior_state, step.action);
    }
    return rho;
}

namespace {

struct Prepared {
    std::vector<std::vector<double>> rho; // cumulative ratios per step
    std::vector<double> returns;          // discounted return per trajectory
    std::size_t max_len = 0;
};

Prepared prepare(const std::vector<EvalTrajectory>& trajectories,
                 const PolicyDistribution& pi, const PolicyDistribution& mu, double gamma) {
    Prepared prep;
    prep.rho.reserve(trajectories.size());
    prep.returns.reserve(trajectories.size());
    for (const auto& trajectory : trajectories) {
        if (trajectory.steps.empty()) throw ValidationError("empty trajectory");
        std::vector<double> cumulative;
        cumulative.reserve(trajectory.steps.size());
        double rho = 1.0, ret = 0.0, discount = 1.0;
        for (const EvalStep& step : trajectory.steps) {
            rho *= pi.prob(step.policy_state, step.action) /
                   mu.prob(step.behavior_state, step.action);
            cumulative.push_back(rho);
            ret += discount * step.reward;
            discount *= gamma;
        }
        prep.max_len = std::max(prep.max_len, cumulative.size());
        prep.rho.push_back(std::move(cumulative));
        prep.returns.push_back(ret);
    }
    return prep;
}

WeightSummary summarize(const Prepared& prep) {
    WeightSummary summary;
    double sum = 0.0, sum_sq = 0.0;
    summary.min = std::numeric_limits<double>::infinity();
    summary.max = -summary.min;
    for (const auto& rho : prep.rho) {
        const double w = rho.back();
        summary.min = std::min(summary.min, w);
        summary.max = std::max(summary.max, w);
        sum += w;
        sum_sq += w * w;
    }
    summary.effective_sample_size = sum_sq > 0.0 ? sum * sum / sum_sq : 0.0;
    return summary;
}

} // namespace

OpeEstimate estimate(const std::vector<EvalTrajectory>& trajectories,
                     const PolicyDistribution& pi, const PolicyDistribution& mu,
                     double gamma, OpeMethod method) {
    if (trajectories.empty()) {
        throw ValidationError("OPE requires at least one trajectory");
    }
    Prepared prep = prepare(trajectories, pi, mu, gamma);
    const double n = static_cast<double>(trajectories.size());

    OpeEstimate result;
    result.method = method;
    result.weights = summarize(prep);

    switch (method) {
        case OpeMethod::IS: {
            double sum = 0.0;
            for (std::size_t i = 0; i < prep.rho.size(); ++i) {
                sum += prep.rho[i].back() * prep.returns[i];
            }
            result.value = sum / n;
            break;
        }
        case OpeMethod::WIS: {
            double num = 0.0, denom = 0.0;
            for (std::size_t i = 0; i < prep.rho.size(); ++i) {
                num += prep.rho[i].back() * prep.returns[i];
                denom += prep.rho[i].back();
            }
            if (denom <= 0.0) throw DegenerateWeightsError("degenerate weights: WIS");
            result.value = num / denom;
            break;
        }
        case OpeMethod::StepIS: {
            double sum = 0.0;
            for (std::size_t i = 0; i < prep.rho.size(); ++i) {
                double discount = 1.0;
                const auto& traj = trajectories[i];
                for (std::size_t t = 0; t < traj.steps.size(); ++t) {
                    sum += discount * prep.rho[i][t] * traj.steps[t].reward;
                    discount *= gamma;
                }
            }
            result.value = sum / n;
            break;
        }
        case OpeMethod::StepWIS: {
            // Per-decision normalization over the trajectories still alive
            // at step t.
            double value = 0.0, discount = 1.0;
            for (std::size_t t = 0; t < prep.max_len; ++t) {
                double num = 0.0, denom = 0.0;
                for (std::size_t i = 0; i < prep.rho.size(); ++i) {
                    if (t < prep.rho[i].size()) {
                        denom += prep.rho[i][t];
                        num += prep.rho[i][t] * trajectories[i].steps[t].reward;
                    }
                }
                if (denom <= 0.0) {
                    throw DegenerateWeightsError("degenerate weights: stepWIS at step " +
                                                 std::to_string(t));
                }
                value += discount * num / denom;
                discount *= gamma;
            }
            result.value = value;
            break;
        }
    }
    return result;
}

double behavior_return(const std::vector<EvalTrajectory>& trajectories, double gamma) {
    if (trajectories.empty()) {
        throw ValidationError("behavior return requires at least one trajectory");
    }
    double sum = 0.0;
    for (const auto& trajectory : trajectories) {
        double ret = 0.0, discount = 1.0;
        for (const EvalStep& step : trajectory.steps) {
            ret += discount * step.reward;
            discount *= gamma;
        }
        sum += ret;
    }
    return sum / static_cast<double>(trajectories.size());
}

} // namespace heparl
