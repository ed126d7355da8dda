#pragma once

// Bi-level inverse MPC: fit the cost weights of a lower-level receding-horizon
// controller so that its first controls reproduce a reference sequence.

#include <Eigen/Core>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fidgap/ecm_rint.hpp"
#include "fidgap/mpc_engine.hpp"
#include "fidgap/types.hpp"

namespace fidgap::inverse {

/// replay: each step's problem starts from a recorded state (defender view of the
/// reference run). free_rolling: the lower-level loop evolves on its own model.
enum class Anchoring { replay, free_rolling };
const char* to_string(Anchoring a);
Anchoring anchoring_from_string(const std::string& s);

struct Scenario {
  std::function<mpc::MpcProblem(const ThetaParams&, const Eigen::VectorXd& x0)> build;
  std::vector<Eigen::VectorXd> anchors;  // replay: one per step; free_rolling: anchors[0] is the start
  int steps = 0;
  Anchoring anchoring = Anchoring::replay;
  mpc::SolverOptions solver;
  mpc::SensitivityOptions sensitivity;

  void validate() const;
};

/// Scenario over the Rint controller. Anchor t is (soc_t, i_prev_t [A]).
Scenario rint_scenario(const rint::RintParams& rint, const mpc::HorizonSettings& settings, double dt,
                       std::vector<Eigen::VectorXd> anchors, int steps, Anchoring anchoring);

class LossEvaluationError : public std::runtime_error {
 public:
  LossEvaluationError(const std::string& what, int step) : std::runtime_error(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

struct Rollout {
  double loss = 0.0;
  Eigen::VectorXd controls;            // u*_{0|t}(theta), stacked over t
  std::vector<Eigen::VectorXd> states; // x0 of each lower-level problem
};

Rollout rollout(const ThetaParams& theta, const Eigen::VectorXd& u_adv, const Scenario& scenario);
double bilevel_loss(const ThetaParams& theta, const Eigen::VectorXd& u_adv, const Scenario& scenario);

struct Gradient {
  Eigen::Vector2d value = Eigen::Vector2d::Zero();  // (dL/dq, dL/dr)
  double loss = 0.0;
  std::vector<int> fallback_steps;
  std::vector<std::string> fallback_reasons;
};

Gradient pdp_gradient(const ThetaParams& theta, const Eigen::VectorXd& u_adv, const Scenario& scenario);
Eigen::Vector2d fd_gradient(const ThetaParams& theta, const Eigen::VectorXd& u_adv, const Scenario& scenario,
                            double h = 1e-6);

struct FitSchedule {
  double alpha = 0.1;
  int max_iters = 500;
  double tol = 1e-8;
  double epsilon = 1e-8;  // projection floor for q and r
  int max_halvings = 20;

  void validate() const;

  friend bool operator==(const FitSchedule&, const FitSchedule&) = default;
};

enum class FitStatus { converged, max_iter, stalled };
const char* to_string(FitStatus s);

struct FitReport {
  std::vector<ThetaParams> theta_history;
  std::vector<double> loss_history;
  std::vector<double> grad_norm_history;
  std::vector<double> step_history;  // accepted step length, 0 for the initial entry
  FitStatus status = FitStatus::max_iter;
  int iterations = 0;
  int fallback_steps = 0;
  Eigen::VectorXd control_errors;  // u*(theta_final) - u_adv per step
};

std::pair<ThetaParams, FitReport> fit_theta(const Eigen::VectorXd& u_adv, const ThetaParams& theta0,
                                            const FitSchedule& schedule, const Scenario& scenario);

}  // namespace fidgap::inverse
