#include "advrl/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "advrl/autodiff.hpp"
#include "advrl/errors.hpp"

namespace advrl {

namespace {

constexpr double kDegenerateProb = 1e-12;
constexpr double kDegenerateNorm = 1e-12;

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

std::string to_string(Norm norm) {
  switch (norm) {
    case Norm::linf:
      return "linf";
    case Norm::l2:
      return "l2";
    case Norm::l1:
      return "l1";
  }
  return {};
}

std::optional<Norm> parse_norm(std::string_view text) {
  if (text == "linf") return Norm::linf;
  if (text == "l2") return Norm::l2;
  if (text == "l1") return Norm::l1;
  return std::nullopt;
}

void AttackSpec::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ContractError("attack epsilon must be finite and >= 0");
  if (!(clip_low < clip_high)) throw ContractError("attack clip_low must be below clip_high");
}

double norm_budget(const AttackSpec& spec, std::size_t d) {
  const double dd = static_cast<double>(d);
  switch (spec.norm) {
    case Norm::linf:
      return spec.epsilon;
    case Norm::l2:
      return spec.epsilon * std::sqrt(dd);
    case Norm::l1:
      return spec.epsilon * dd;
  }
  return 0.0;
}

double norm_of(const Tensor& t, Norm norm) {
  double acc = 0.0;
  for (double v : t.data()) {
    switch (norm) {
      case Norm::linf:
        acc = std::max(acc, std::abs(v));
        break;
      case Norm::l2:
        acc += v * v;
        break;
      case Norm::l1:
        acc += std::abs(v);
        break;
    }
  }
  return norm == Norm::l2 ? std::sqrt(acc) : acc;
}

AttackGradient attack_loss(const PolicyNetwork& source, const Observation& obs) {
  const auto& spec = source.spec();
  if (obs.frames.shape() != spec.input_shape) {
    throw ContractError("observation shape " + shape_string(obs.frames.shape()) +
                        " does not match source network input " + shape_string(spec.input_shape));
  }
  Shape batched{1};
  batched.insert(batched.end(), spec.input_shape.begin(), spec.input_shape.end());

  Tape tape;
  Var x = tape.variable(obs.frames.reshaped(batched));
  auto trace = trace_network(tape, source, x, false);
  // Both heads reduce to softmax(output): logits for the distribution head,
  // Q-values at temperature 1 for the q head.
  Var log_probs = tape.log_softmax(trace.output);
  const std::size_t target = argmax(tape.value(log_probs).data());
  const double p_target = std::exp(tape.value(log_probs)[target]);
  if (!(p_target > kDegenerateProb)) {
    throw DegenerateLossError("target action probability " + std::to_string(p_target) + " is ~0");
  }
  Var loss = tape.scale(tape.pick(log_probs, {target}), -1.0);

  AttackGradient out;
  out.loss = tape.value(loss).item();
  out.grad = input_gradient(tape, loss, x).reshaped(spec.input_shape);
  out.target_action = target;
  return out;
}

Perturbation perturb_linf(const AttackGradient& g, const AttackSpec& spec) {
  spec.validate();
  if (spec.norm != Norm::linf) throw ContractError("perturb_linf needs an linf attack spec");
  Tensor eta(g.grad.shape());
  for (std::size_t i = 0; i < eta.size(); ++i) eta[i] = spec.epsilon * sign(g.grad[i]);
  return {std::move(eta), spec};
}

Perturbation perturb_l2(const AttackGradient& g, const AttackSpec& spec) {
  spec.validate();
  if (spec.norm != Norm::l2) throw ContractError("perturb_l2 needs an l2 attack spec");
  const double gnorm = norm_of(g.grad, Norm::l2);
  if (!(gnorm > kDegenerateNorm)) {
    throw DegenerateGradientError("gradient l2 norm " + std::to_string(gnorm) + " too small to normalize");
  }
  const double scale = norm_budget(spec, g.grad.size()) / gnorm;
  Tensor eta(g.grad.shape());
  for (std::size_t i = 0; i < eta.size(); ++i) eta[i] = g.grad[i] * scale;
  return {std::move(eta), spec};
}

Perturbation perturb_l1(const AttackGradient& g, const Observation& obs, const AttackSpec& spec) {
  spec.validate();
  if (spec.norm != Norm::l1) throw ContractError("perturb_l1 needs an l1 attack spec");
  if (obs.frames.shape() != g.grad.shape()) {
    throw DimensionError("perturb_l1: observation " + shape_string(obs.frames.shape()) +
                         " and gradient " + shape_string(g.grad.shape()) + " differ");
  }
  const auto grad = g.grad.data();
  std::vector<std::size_t> order(grad.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(grad[a]) > std::abs(grad[b]); });

  Tensor eta(g.grad.shape());
  double budget = norm_budget(spec, grad.size());
  for (std::size_t i : order) {
    if (budget <= 0.0) break;
    if (grad[i] == 0.0) break;  // sorted: the rest are zero too
    const double x = obs.frames[i];
    const double room = grad[i] > 0.0 ? spec.clip_high - x : x - spec.clip_low;
    const double step = std::min(budget, std::max(room, 0.0));
    eta[i] = grad[i] > 0.0 ? step : -step;
    budget -= step;
  }
  return {std::move(eta), spec};
}

Perturbation perturb(const AttackGradient& g, const Observation& obs, const AttackSpec& spec) {
  switch (spec.norm) {
    case Norm::linf:
      return perturb_linf(g, spec);
    case Norm::l2:
      return perturb_l2(g, spec);
    case Norm::l1:
      return perturb_l1(g, obs, spec);
  }
  throw ContractError("unknown norm");
}

Observation craft(const PolicyNetwork& source, const Observation& obs, const AttackSpec& spec,
                  AttackGradient& used) {
  spec.validate();
  if (spec.epsilon == 0.0) return obs;
  used = attack_loss(source, obs);
  if (!(norm_of(used.grad, Norm::l2) > kDegenerateNorm)) {
    throw DegenerateGradientError("attack gradient is numerically zero");
  }
  const Perturbation p = perturb(used, obs, spec);
  Observation out = obs;
  for (std::size_t i = 0; i < out.frames.size(); ++i) {
    out.frames[i] = std::clamp(out.frames[i] + p.eta[i], spec.clip_low, spec.clip_high);
  }
  return out;
}

Observation craft(const PolicyNetwork& source, const Observation& obs, const AttackSpec& spec) {
  AttackGradient unused;
  return craft(source, obs, spec, unused);
}

}  // namespace advrl
