#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "advrl/envs.hpp"
#include "advrl/policy.hpp"
#include "advrl/tensor.hpp"

namespace advrl {

enum class Norm { linf, l2, l1 };

std::string to_string(Norm norm);
/// Parses "linf", "l2" or "l1".
std::optional<Norm> parse_norm(std::string_view text);

/// Perturbation constraint set: norm family, budget parameter ε and the
/// feature box the adversarial observation is clipped to.
struct AttackSpec {
  Norm norm = Norm::linf;
  double epsilon = 0.0;
  double clip_low = 0.0;
  double clip_high = 1.0;

  void validate() const;
  friend bool operator==(const AttackSpec&, const AttackSpec&) = default;
};

/// J(θ, x, y) and ∇ₓJ for one observation.
struct AttackGradient {
  double loss = 0.0;
  Tensor grad;
  std::size_t target_action = 0;
};

struct Perturbation {
  Tensor eta;
  AttackSpec spec;
};

/// Budget on the named norm of η for an observation with d elements:
/// ε for ℓ∞, ε√d for ℓ2, εd for ℓ1.
double norm_budget(const AttackSpec& spec, std::size_t d);
double norm_of(const Tensor& t, Norm norm);

/// Cross-entropy between the policy's action distribution y and the one-hot
/// distribution on argmax(y), i.e. J = −log y[argmax y]. Q-value networks
/// are first turned into a distribution with a temperature-1 softmax.
/// Throws DegenerateLossError when y[target] <= 1e-12.
AttackGradient attack_loss(const PolicyNetwork& source, const Observation& obs);

/// η = ε·sign(∇ₓJ), with sign(0) = 0.
Perturbation perturb_linf(const AttackGradient& g, const AttackSpec& spec);

/// η = ε√d·∇ₓJ/‖∇ₓJ‖₂. Throws DegenerateGradientError when the norm is
/// below 1e-12.
Perturbation perturb_l2(const AttackGradient& g, const AttackSpec& spec);

/// Spends the budget εd greedily on the coordinates with the largest |∇ₓJ|
/// (ties by lowest index), pushing each toward clip_high (positive gradient)
/// or clip_low (negative) until the bound or the budget is reached.
Perturbation perturb_l1(const AttackGradient& g, const Observation& obs, const AttackSpec& spec);

/// Dispatches on spec.norm.
Perturbation perturb(const AttackGradient& g, const Observation& obs, const AttackSpec& spec);

/// clip(obs + η, clip_low, clip_high) with η computed from `source`.
///
/// ε = 0 returns `obs` unchanged. Throws DegenerateLossError or
/// DegenerateGradientError (gradient norm below 1e-12, any norm) so the
/// caller can run the step unattacked and count it.
Observation craft(const PolicyNetwork& source, const Observation& obs, const AttackSpec& spec);

/// Same as craft() but also returns the gradient it used.
Observation craft(const PolicyNetwork& source, const Observation& obs, const AttackSpec& spec,
                  AttackGradient& used);

}  // namespace advrl
