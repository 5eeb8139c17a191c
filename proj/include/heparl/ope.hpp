#pragma once

#include <span>
#include <string>
#include <vector>

#include "heparl/fqi.hpp"
#include "heparl/state.hpp"
#include "heparl/trees.hpp"

namespace heparl {

/// Action-propensity provider: both the evaluation policy pi and the
/// behavior estimate mu implement this, and the estimators depend on them
/// only through the queried propensities.
class PolicyDistribution {
public:
    virtual ~PolicyDistribution() = default;
    virtual double prob(std::span<const double> state, int action) const = 0;
};

/// epsilon-greedy evaluation policy around a fitted Q:
/// pi(a|s) = (1 - eps) * 1{a == greedy(s)} + eps / K.
class EvalPolicy : public PolicyDistribution {
public:
    EvalPolicy(const QEnsemble& q, double epsilon = 0.0);
    double prob(std::span<const double> state, int action) const override;
    int greedy(std::span<const double> state) const { return q_->best_action(state); }
    double epsilon() const { return epsilon_; }

private:
    const QEnsemble* q_;
    double epsilon_;
};

/// Behavior-policy estimate: extra-trees grown on one-hot action targets,
/// leaf class frequencies Laplace-smoothed with pseudo-count 1, and a
/// probability floor so importance ratios stay finite:
/// mu(a|s) = (p_hat(a|s) + floor) / (1 + K * floor).
class BehaviorModel : public PolicyDistribution {
public:
    BehaviorModel() = default;
    BehaviorModel(ExtraTreesModel model, double floor);
    double prob(std::span<const double> state, int action) const override;
    std::vector<double> distribution(std::span<const double> state) const;
    int n_actions() const { return static_cast<int>(model_.n_outputs()); }
    double floor() const { return floor_; }

private:
    ExtraTreesModel model_;
    double floor_ = 1e-3;
};

BehaviorModel fit_behavior_policy(const TransitionSet& data, const ExtraTreesParams& params,
                                  double floor = 1e-3);

/// One logged step, carrying the state in both representations so the
/// policy and the behavior model may use different feature layouts (the
/// experiment's OPPO/OPPE indicator flags differ per arm).
struct EvalStep {
    std::vector<double> policy_state;
    std::vector<double> behavior_state;
    int action = 0;
    double reward = 0.0;
};

struct EvalTrajectory {
    std::string patient_id;
    std::vector<EvalStep> steps;
};

/// Groups two views of the same transitions (same patients, same order)
/// into per-patient trajectories.
std::vector<EvalTrajectory> build_eval_trajectories(const TransitionSet& policy_view,
                                                    const TransitionSet& behavior_view);

enum class OpeMethod { IS, WIS, StepIS, StepWIS };
inline constexpr OpeMethod kAllOpeMethods[] = {OpeMethod::IS, OpeMethod::WIS,
                                               OpeMethod::StepIS, OpeMethod::StepWIS};
std::string method_name(OpeMethod method);

struct WeightSummary {
    double min = 0.0;
    double max = 0.0;
    double effective_sample_size = 0.0; // (sum w)^2 / sum w^2
};

struct OpeEstimate {
    OpeMethod method = OpeMethod::IS;
    double value = 0.0;
    WeightSummary weights; // full-trajectory importance weights
};

/// Cumulative importance ratio prod_{k<=upto} pi(a_k|s_k) / mu(a_k|s_k).
double trajectory_weight(const EvalTrajectory& trajectory, const PolicyDistribution& pi,
                         const PolicyDistribution& mu, std::size_t upto);

/// The four IPS estimators. WIS variants throw DegenerateWeightsError when
/// every weight at a required normalization point is zero.
OpeEstimate estimate(const std::vector<EvalTrajectory>& trajectories,
                     const PolicyDistribution& pi, const PolicyDistribution& mu,
                     double gamma, OpeMethod method);

/// On-policy baseline: mean discounted return of the logged trajectories.
double behavior_return(const std::vector<EvalTrajectory>& trajectories, double gamma);

} // namespace heparl
