#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "advrl/autodiff.hpp"
#include "advrl/envs.hpp"
#include "advrl/rng.hpp"
#include "advrl/tensor.hpp"

namespace advrl {

enum class HeadKind { distribution, q };
enum class PolicyKind { stochastic, q_value };

std::string to_string(HeadKind head);
std::string to_string(PolicyKind kind);

struct LayerSpec {
  enum class Type { conv, dense, relu, flatten };

  Type type = Type::relu;
  std::size_t size = 0;  // filters (conv) or units (dense)
  std::size_t kernel = 0;
  std::size_t stride = 1;

  static LayerSpec conv(std::size_t filters, std::size_t kernel, std::size_t stride) {
    return {Type::conv, filters, kernel, stride};
  }
  static LayerSpec dense(std::size_t units) { return {Type::dense, units, 0, 1}; }
  static LayerSpec relu() { return {Type::relu, 0, 0, 1}; }
  static LayerSpec flatten() { return {Type::flatten, 0, 0, 1}; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ArchitectureSpec {
  Shape input_shape;  // c×h×w
  std::vector<LayerSpec> layers;
  std::size_t action_count = 0;
  HeadKind head = HeadKind::distribution;
  // Extra scalar head off the last hidden layer, used as a learned baseline.
  bool value_head = false;

  /// Output shape after each layer (per single observation). Throws
  /// DimensionError if the chain is inconsistent or does not end in a dense
  /// layer of `action_count` units.
  std::vector<Shape> layer_shapes() const;
  void validate() const { (void)layer_shapes(); }

  /// conv(8, 4×4, stride 2) → relu → flatten → dense(64) → relu → dense(A).
  /// Inputs too small for the kernel get flatten → dense(64) → relu → dense(A).
  static ArchitectureSpec desk(Shape input_shape, std::size_t action_count, HeadKind head,
                               bool value_head = false);

  friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;
};

struct Provenance {
  std::string algorithm;
  std::uint64_t seed = 0;
  double training_return = 0.0;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct NamedTensor {
  std::string name;
  Tensor value;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

class PolicyNetwork {
 public:
  /// Throws DimensionError if `weights` do not match `spec` and
  /// ContractError if `kind` disagrees with the head.
  PolicyNetwork(ArchitectureSpec spec, PolicyKind kind, Provenance provenance,
                std::vector<NamedTensor> weights);

  /// He-style uniform initialization from `seed`; biases start at zero.
  static PolicyNetwork initialize(ArchitectureSpec spec, PolicyKind kind, Provenance provenance,
                                  std::uint64_t seed);

  /// Names and shapes the weights for `spec` must have, in storage order.
  static std::vector<std::pair<std::string, Shape>> weight_layout(const ArchitectureSpec& spec);

  const ArchitectureSpec& spec() const { return spec_; }
  PolicyKind kind() const { return kind_; }
  const Provenance& provenance() const { return provenance_; }
  void set_provenance(Provenance p) { provenance_ = std::move(p); }

  const std::vector<NamedTensor>& weights() const { return weights_; }
  Tensor& weight(std::size_t i) { return weights_[i].value; }
  const Tensor& weight(std::size_t i) const { return weights_[i].value; }
  std::size_t parameter_count() const;

  friend bool operator==(const PolicyNetwork&, const PolicyNetwork&) = default;

 private:
  ArchitectureSpec spec_;
  PolicyKind kind_;
  Provenance provenance_;
  std::vector<NamedTensor> weights_;
};

/// Vars produced by tracing a network on a tape.
struct NetworkTrace {
  Var output;                // n×A logits or Q-values
  std::optional<Var> value;  // n×1, only with a value head
  std::vector<Var> params;   // one per weight, in storage order
};

/// Records the forward pass for a batch input (n×c×h×w) on `tape`. Weights
/// become variables when `weights_require_grad`, constants otherwise.
NetworkTrace trace_network(Tape& tape, const PolicyNetwork& net, Var input,
                           bool weights_require_grad);

/// Logits or Q-values for a batch n×c×h×w, shaped n×A.
Tensor forward_batch(const PolicyNetwork& net, const Tensor& batch);

struct ActionDistribution {
  Tensor probs;
};

struct QValues {
  Tensor values;
};

using PolicyOutput = std::variant<ActionDistribution, QValues>;

/// Softmax over the logits (distribution head) or raw Q-values (q head).
/// Throws ContractError if the observation shape differs from the spec.
PolicyOutput forward_policy(const PolicyNetwork& net, const Observation& obs);

/// Softmax of q/T with max subtraction. Throws ContractError if T <= 0.
ActionDistribution q_to_distribution(const QValues& q, double temperature = 1.0);

/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

/// Argmax of Q-values or probabilities.
std::size_t act_greedy(const PolicyNetwork& net, const Observation& obs);

/// Samples from the network's action distribution. Throws ContractError for
/// q-head networks.
std::size_t act_stochastic(const PolicyNetwork& net, const Observation& obs, Rng& rng);

/// Inverse-CDF draw from a probability vector.
std::size_t sample_action(std::span<const double> probs, Rng& rng);

void save_checkpoint(const PolicyNetwork& net, const std::filesystem::path& path);
/// Throws CheckpointError with kind version_mismatch, shape_inconsistency
/// or malformed.
PolicyNetwork load_checkpoint(const std::filesystem::path& path);

std::string serialize_checkpoint(const PolicyNetwork& net);
PolicyNetwork parse_checkpoint(const std::string& text);

}  // namespace advrl
