#pragma once

// Finite-horizon constrained MPC for affine dynamics and quadratic tracking cost.
//
// Dynamics are condensed onto the control sequence (single shooting) and the
// resulting QP is solved with the dense interior-point solver. Constraints that
// are smooth but nonlinear in the state (terminal voltage through an OCV curve)
// are handled by sequential linearization inside a trust region.

#include <Eigen/Core>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "fidgap/ecm_rint.hpp"
#include "fidgap/spm_model.hpp"
#include "fidgap/types.hpp"

namespace fidgap::mpc {

enum class ConstraintTag { stealth, adversarial };

/// a'z + b'u + offset <= 0
struct AffineForm {
  Eigen::VectorXd state;
  Eigen::VectorXd control;
  double offset = 0.0;
};

struct SmoothEval {
  double value = 0.0;
  Eigen::VectorXd d_state;
  Eigen::VectorXd d_control;
  Eigen::MatrixXd state_hessian;  // empty when not provided
};

/// g(z, u) <= 0 with a gradient callback. Must be affine in u.
struct SmoothForm {
  std::function<SmoothEval(const Eigen::VectorXd& state, const Eigen::VectorXd& control)> eval;
};

struct StageConstraint {
  std::string name;
  ConstraintTag tag = ConstraintTag::stealth;
  int stage = 0;  // 0..N; stage N carries no control
  std::variant<AffineForm, SmoothForm> form;
};

/// z' = a z + b u + offset
struct StageDynamics {
  Eigen::MatrixXd a;
  Eigen::MatrixXd b;
  Eigen::VectorXd offset;
};

/// q * sum_k |C z_k - ref|^2 (k = 0..N) + r * sum_k |u_k / control_scale|^2 (k = 0..N-1)
struct TrackingCost {
  Eigen::MatrixXd output;
  Eigen::VectorXd reference;
  ThetaParams theta;
  double control_scale = 1.0;
};

struct MpcProblem {
  int horizon = 0;
  int state_dim = 0;
  int control_dim = 0;
  std::vector<StageDynamics> dynamics;  // one per stage, or a single time-invariant entry
  TrackingCost cost;
  std::vector<StageConstraint> constraints;
  Eigen::VectorXd initial_state;
  double target = 0.0;
  Limits limits;
  std::optional<double> slack_weight;  // set by soften()

  void validate() const;
  const StageDynamics& dynamics_at(int k) const {
    return dynamics.size() == 1 ? dynamics.front() : dynamics.at(static_cast<std::size_t>(k));
  }
  bool softened() const { return slack_weight.has_value(); }
};

enum class MpcStatus { optimal, softened_optimal, infeasible, max_iter };
const char* to_string(MpcStatus status);

struct MpcSolution {
  Eigen::VectorXd controls;              // stacked u_0..u_{N-1}, problem units
  std::vector<Eigen::VectorXd> states;   // z_0..z_N
  Eigen::VectorXd multipliers;           // one per problem constraint
  Eigen::VectorXd slacks;                // one per problem constraint, zero when hard
  Eigen::VectorXd slack_multipliers;     // for s >= 0
  double kkt_residual = 0.0;
  double cost = 0.0;
  MpcStatus status = MpcStatus::max_iter;
  int outer_iterations = 0;
  int qp_iterations = 0;

  Eigen::VectorXd control(int k) const;
  Eigen::VectorXd first_control() const { return control(0); }
  double max_slack() const { return slacks.size() ? slacks.maxCoeff() : 0.0; }
};

struct SolverOptions {
  double kkt_tol = 1e-8;
  double feas_tol = 1e-6;
  double slack_tol = 1e-8;
  int max_outer = 30;
  double trust_control = 10.0;  // problem control units
  double trust_output = 0.2;    // output (SoC) units
  double tie_break = 1e-10;     // added to r when r == 0
  bool verbose = false;

  friend bool operator==(const SolverOptions&, const SolverOptions&) = default;
};

/// Affine maps from the initial state and the stacked controls to each predicted state:
/// z_k = phi[k] z_0 + gamma[k] U + psi[k].
struct Condensed {
  std::vector<Eigen::MatrixXd> phi;
  std::vector<Eigen::MatrixXd> gamma;
  std::vector<Eigen::VectorXd> psi;
};

Condensed condense(const MpcProblem& problem);
std::vector<Eigen::VectorXd> predict_states(const MpcProblem& problem, const Condensed& condensed,
                                            const Eigen::VectorXd& controls);
SmoothEval evaluate_constraint(const StageConstraint& c, const Eigen::VectorXd& state,
                               const Eigen::VectorXd& control);
double evaluate_cost(const MpcProblem& problem, const std::vector<Eigen::VectorXd>& states,
                     const Eigen::VectorXd& controls, const Eigen::VectorXd& slacks);
/// r with the tie-breaking regularization applied.
double effective_r(const MpcProblem& problem, const SolverOptions& options = {});

MpcSolution solve(const MpcProblem& problem, const SolverOptions& options = {},
                  const Eigen::VectorXd* warm_start = nullptr);

/// Adversarial constraints g <= 0 become g - s <= 0, s >= 0 with slack_weight * s^2 in the cost.
MpcProblem soften(const MpcProblem& problem, double slack_weight);

/// Max-norm of stationarity (scaled control coordinates), primal feasibility, dual
/// feasibility and complementarity for the problem as posed (softened or not).
double kkt_residual(const MpcSolution& solution, const MpcProblem& problem, const SolverOptions& options = {});

/// First-order sensitivity of the optimal control sequence with respect to the cost
/// weights and the initial state, by implicit differentiation of the KKT system with
/// the active set frozen. `ok` is false when the active set is not strictly
/// complementary or the reduced KKT matrix is singular.
struct SensitivityOptions {
  double active_tol = 1e-7;      // |g| below this counts as binding
  double multiplier_tol = 1e-10; // lambda above this counts as strictly active

  friend bool operator==(const SensitivityOptions&, const SensitivityOptions&) = default;
};

struct Sensitivity {
  bool ok = false;
  std::string reason;
  Eigen::MatrixXd d_theta;  // (N m) x 2, columns d/dq and d/dr, problem control units
  Eigen::MatrixXd d_x0;     // (N m) x n
  int active = 0;
};

Sensitivity sensitivity(const MpcProblem& problem, const MpcSolution& solution,
                        const SensitivityOptions& options = {}, const SolverOptions& solver = {});

// --- problem builders --------------------------------------------------------

struct HorizonSettings {
  int horizon = 10;
  double soc_target = 0.8;
  Limits limits;
  double control_scale = 1.0;  // A (low fidelity) or A/m^2 (high fidelity)

  friend bool operator==(const HorizonSettings&, const HorizonSettings&) = default;
};

/// State (anode nodes, cathode nodes, previous current density), control = current increment in A/m^2.
/// `gamma` empty builds the benign problem without the adversarial constraint.
MpcProblem build_high_fidelity_problem(const spm::SpmParams& spm, const spm::DiffusionOperators& ops,
                                       const ThetaParams& theta_h, const std::optional<AttackLevel>& gamma,
                                       const HorizonSettings& settings, double area, const spm::SpmState& x0);

/// State (SoC, previous current in A), control = current increment in A.
MpcProblem build_low_fidelity_problem(const rint::RintParams& rint, const ThetaParams& theta,
                                      const HorizonSettings& settings, double dt, double soc0, double i_init);

// --- closed loop -------------------------------------------------------------

using ProblemBuilder = std::function<MpcProblem(int t)>;
using PlantStep = std::function<void(int t, const Eigen::VectorXd& control)>;

struct ClosedLoop {
  std::vector<Eigen::VectorXd> applied;
  std::vector<MpcSolution> solutions;
  int max_iter_steps = 0;
};

class ClosedLoopFailure : public std::runtime_error {
 public:
  ClosedLoopFailure(const std::string& what, int step, ClosedLoop partial)
      : std::runtime_error(what), step_(step), partial_(std::move(partial)) {}
  int step() const { return step_; }
  const ClosedLoop& partial() const { return partial_; }

 private:
  int step_;
  ClosedLoop partial_;
};

/// At each t: build from the current plant observation, solve, apply the first control.
ClosedLoop receding_horizon(const ProblemBuilder& build, const PlantStep& plant, int steps,
                            const SolverOptions& options = {});

}  // namespace fidgap::mpc
