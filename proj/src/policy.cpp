#include "advrl/policy.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "advrl/errors.hpp"
#include "advrl/numfmt.hpp"

namespace advrl {

std::string to_string(HeadKind head) { return head == HeadKind::q ? "q" : "distribution"; }
std::string to_string(PolicyKind kind) { return kind == PolicyKind::q_value ? "q-value" : "stochastic"; }

// ---------------------------------------------------------------------------
// Architecture

std::vector<Shape> ArchitectureSpec::layer_shapes() const {
  if (input_shape.size() != 3 || shape_size(input_shape) == 0) {
    throw DimensionError("architecture input must be c×h×w, got " + shape_string(input_shape));
  }
  if (action_count < 2) throw DimensionError("architecture needs at least 2 actions");
  if (layers.empty() || layers.back().type != LayerSpec::Type::dense ||
      layers.back().size != action_count) {
    throw DimensionError("architecture must end in dense(" + std::to_string(action_count) + ")");
  }
  std::vector<Shape> shapes;
  Shape cur = input_shape;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string where = "layer " + std::to_string(i) + ": ";
    switch (l.type) {
      case LayerSpec::Type::conv: {
        if (cur.size() != 3) throw DimensionError(where + "conv needs c×h×w input, got " + shape_string(cur));
        if (l.size == 0 || l.kernel == 0 || l.stride == 0) throw DimensionError(where + "conv sizes must be positive");
        if (l.kernel > cur[1] || l.kernel > cur[2]) {
          throw DimensionError(where + "kernel " + std::to_string(l.kernel) + " larger than input " +
                               shape_string(cur));
        }
        cur = {l.size, (cur[1] - l.kernel) / l.stride + 1, (cur[2] - l.kernel) / l.stride + 1};
        break;
      }
      case LayerSpec::Type::dense:
        if (cur.size() != 1) throw DimensionError(where + "dense needs flat input, got " + shape_string(cur));
        if (l.size == 0) throw DimensionError(where + "dense needs units > 0");
        cur = {l.size};
        break;
      case LayerSpec::Type::relu:
        break;
      case LayerSpec::Type::flatten:
        cur = {shape_size(cur)};
        break;
    }
    shapes.push_back(cur);
  }
  return shapes;
}

ArchitectureSpec ArchitectureSpec::desk(Shape input_shape, std::size_t action_count, HeadKind head,
                                        bool value_head) {
  ArchitectureSpec spec;
  spec.action_count = action_count;
  spec.head = head;
  spec.value_head = value_head;
  constexpr std::size_t kernel = 4;
  if (input_shape.size() == 3 && input_shape[1] >= kernel && input_shape[2] >= kernel) {
    spec.layers = {LayerSpec::conv(8, kernel, 2), LayerSpec::relu(), LayerSpec::flatten(),
                   LayerSpec::dense(64), LayerSpec::relu(), LayerSpec::dense(action_count)};
  } else {
    spec.layers = {LayerSpec::flatten(), LayerSpec::dense(64), LayerSpec::relu(),
                   LayerSpec::dense(action_count)};
  }
  spec.input_shape = std::move(input_shape);
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// Network

namespace {

// Width of the activation feeding the final dense layer.
std::size_t last_hidden_width(const ArchitectureSpec& spec, const std::vector<Shape>& shapes) {
  return spec.layers.size() >= 2 ? shape_size(shapes[spec.layers.size() - 2])
                                 : shape_size(spec.input_shape);
}

}  // namespace

std::vector<std::pair<std::string, Shape>> PolicyNetwork::weight_layout(const ArchitectureSpec& spec) {
  const auto shapes = spec.layer_shapes();
  std::vector<std::pair<std::string, Shape>> out;
  Shape cur = spec.input_shape;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    const std::string prefix = "l" + std::to_string(i);
    if (l.type == LayerSpec::Type::conv) {
      out.emplace_back(prefix + ".w", Shape{l.size, cur[0], l.kernel, l.kernel});
      out.emplace_back(prefix + ".b", Shape{l.size});
    } else if (l.type == LayerSpec::Type::dense) {
      out.emplace_back(prefix + ".w", Shape{cur[0], l.size});
      out.emplace_back(prefix + ".b", Shape{l.size});
    }
    cur = shapes[i];
  }
  if (spec.value_head) {
    out.emplace_back("value.w", Shape{last_hidden_width(spec, shapes), 1});
    out.emplace_back("value.b", Shape{1});
  }
  return out;
}

PolicyNetwork::PolicyNetwork(ArchitectureSpec spec, PolicyKind kind, Provenance provenance,
                             std::vector<NamedTensor> weights)
    : spec_(std::move(spec)), kind_(kind), provenance_(std::move(provenance)), weights_(std::move(weights)) {
  const auto layout = weight_layout(spec_);
  if ((kind_ == PolicyKind::q_value) != (spec_.head == HeadKind::q)) {
    throw ContractError("policy kind " + to_string(kind_) + " does not match head " + to_string(spec_.head));
  }
  if (layout.size() != weights_.size()) {
    throw DimensionError("expected " + std::to_string(layout.size()) + " weight tensors, got " +
                         std::to_string(weights_.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (weights_[i].name != layout[i].first || weights_[i].value.shape() != layout[i].second) {
      throw DimensionError("weight " + std::to_string(i) + " should be " + layout[i].first + " " +
                           shape_string(layout[i].second) + ", got " + weights_[i].name + " " +
                           shape_string(weights_[i].value.shape()));
    }
  }
}

PolicyNetwork PolicyNetwork::initialize(ArchitectureSpec spec, PolicyKind kind, Provenance provenance,
                                        std::uint64_t seed) {
  Rng rng(seed);
  const auto layout = weight_layout(spec);
  const std::string final_prefix = "l" + std::to_string(spec.layers.size() - 1) + ".";
  std::vector<NamedTensor> weights;
  for (const auto& [name, shape] : layout) {
    Tensor t(shape);
    if (name.ends_with(".w")) {
      const std::size_t fan_in = shape.size() == 4 ? shape[1] * shape[2] * shape[3] : shape[0];
      double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      if (name.starts_with(final_prefix) || name.starts_with("value.")) bound *= 0.1;
      for (auto& v : t.data()) v = (2.0 * uniform01(rng) - 1.0) * bound;
    }
    weights.push_back({name, std::move(t)});
  }
  return PolicyNetwork(std::move(spec), kind, std::move(provenance), std::move(weights));
}

std::size_t PolicyNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const auto& w : weights_) n += w.value.size();
  return n;
}

NetworkTrace trace_network(Tape& tape, const PolicyNetwork& net, Var input, bool weights_require_grad) {
  const auto& spec = net.spec();
  const Shape& in_shape = tape.value(input).shape();
  if (in_shape.size() != 4 || Shape(in_shape.begin() + 1, in_shape.end()) != spec.input_shape) {
    throw ContractError("network expects batches of " + shape_string(spec.input_shape) + ", got " +
                        shape_string(in_shape));
  }
  const std::size_t batch = in_shape[0];

  NetworkTrace trace{input, std::nullopt, {}};
  for (const auto& w : net.weights()) {
    trace.params.push_back(weights_require_grad ? tape.variable_ref(w.value) : tape.constant_ref(w.value));
  }

  Var x = input;
  Var hidden = input;
  std::size_t p = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    if (i + 1 == spec.layers.size()) hidden = x;
    switch (l.type) {
      case LayerSpec::Type::conv:
        x = tape.add_channel_bias(tape.conv2d(x, trace.params[p], l.stride), trace.params[p + 1]);
        p += 2;
        break;
      case LayerSpec::Type::dense:
        x = tape.add_bias(tape.matmul(x, trace.params[p]), trace.params[p + 1]);
        p += 2;
        break;
      case LayerSpec::Type::relu:
        x = tape.relu(x);
        break;
      case LayerSpec::Type::flatten:
        x = tape.reshape(x, {batch, tape.value(x).size() / batch});
        break;
    }
  }
  trace.output = x;
  if (spec.value_head) {
    Var h = hidden;
    if (tape.value(h).rank() != 2) h = tape.reshape(h, {batch, tape.value(h).size() / batch});
    trace.value = tape.add_bias(tape.matmul(h, trace.params[p]), trace.params[p + 1]);
  }
  return trace;
}

Tensor forward_batch(const PolicyNetwork& net, const Tensor& batch) {
  Tape tape;
  auto in = tape.constant_ref(batch);
  auto trace = trace_network(tape, net, in, false);
  return tape.value(trace.output);
}

namespace {

Tensor single_output(const PolicyNetwork& net, const Observation& obs) {
  const auto& spec = net.spec();
  if (obs.frames.shape() != spec.input_shape) {
    throw ContractError("observation shape " + shape_string(obs.frames.shape()) +
                        " does not match network input " + shape_string(spec.input_shape));
  }
  Shape batched{1};
  batched.insert(batched.end(), spec.input_shape.begin(), spec.input_shape.end());
  return forward_batch(net, obs.frames.reshaped(batched)).reshaped({spec.action_count});
}

Tensor softmax(const Tensor& logits, double temperature) {
  Tensor out = logits;
  double mx = out[0];
  for (double v : out.data()) mx = std::max(mx, v);
  double total = 0.0;
  for (auto& v : out.data()) {
    v = std::exp((v - mx) / temperature);
    total += v;
  }
  for (auto& v : out.data()) v /= total;
  return out;
}

}  // namespace

PolicyOutput forward_policy(const PolicyNetwork& net, const Observation& obs) {
  Tensor out = single_output(net, obs);
  if (net.spec().head == HeadKind::q) return QValues{std::move(out)};
  return ActionDistribution{softmax(out, 1.0)};
}

ActionDistribution q_to_distribution(const QValues& q, double temperature) {
  if (!(temperature > 0.0)) throw ContractError("softmax temperature must be positive");
  return {softmax(q.values, temperature)};
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::size_t act_greedy(const PolicyNetwork& net, const Observation& obs) {
  const auto out = forward_policy(net, obs);
  if (const auto* q = std::get_if<QValues>(&out)) return argmax(q->values.data());
  return argmax(std::get<ActionDistribution>(out).probs.data());
}

std::size_t sample_action(std::span<const double> probs, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  // u landed in the rounding slack above the cumulative sum.
  for (std::size_t i = probs.size(); i-- > 0;) {
    if (probs[i] > 0.0) return i;
  }
  return 0;
}

std::size_t act_stochastic(const PolicyNetwork& net, const Observation& obs, Rng& rng) {
  if (net.spec().head == HeadKind::q) {
    throw ContractError("act_stochastic needs a distribution head; use act_greedy for q-value policies");
  }
  const auto out = forward_policy(net, obs);
  return sample_action(std::get<ActionDistribution>(out).probs.data(), rng);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kMagic = "advrl-policy-checkpoint";
constexpr int kVersion = 1;

[[noreturn]] void malformed(const std::string& what) {
  throw CheckpointError(CheckpointError::Kind::malformed, "malformed checkpoint: " + what);
}

std::string layer_line(const LayerSpec& l) {
  switch (l.type) {
    case LayerSpec::Type::conv:
      return "conv " + std::to_string(l.size) + " " + std::to_string(l.kernel) + " " + std::to_string(l.stride);
    case LayerSpec::Type::dense:
      return "dense " + std::to_string(l.size);
    case LayerSpec::Type::relu:
      return "relu";
    case LayerSpec::Type::flatten:
      return "flatten";
  }
  return {};
}

class LineReader {
 public:
  explicit LineReader(const std::string& text) : in_(text) {}

  std::vector<std::string> next(const std::string& what) {
    std::string line;
    if (!std::getline(in_, line)) malformed("unexpected end of file, expected " + what);
    ++line_no_;
    std::istringstream ls(line);
    std::vector<std::string> tokens;
    for (std::string t; ls >> t;) tokens.push_back(t);
    if (tokens.empty()) malformed("blank line " + std::to_string(line_no_));
    return tokens;
  }

  std::vector<std::string> keyed(const std::string& key, std::size_t values) {
    auto t = next(key);
    if (t[0] != key || t.size() != values + 1) {
      malformed("line " + std::to_string(line_no_) + ": expected '" + key + "' with " +
                std::to_string(values) + " value(s)");
    }
    return t;
  }

 private:
  std::istringstream in_;
  std::size_t line_no_ = 0;
};

std::uint64_t to_uint(const std::string& s) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) malformed("bad integer '" + s + "'");
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    malformed("bad integer '" + s + "'");
  }
}

double to_hex_double(const std::string& s) {
  auto v = parse_hex(s);
  if (!v) malformed("bad float '" + s + "'");
  return *v;
}

}  // namespace

std::string serialize_checkpoint(const PolicyNetwork& net) {
  const auto& spec = net.spec();
  std::ostringstream os;
  os << kMagic << '\n';
  os << "version " << kVersion << '\n';
  os << "kind " << to_string(net.kind()) << '\n';
  os << "algorithm " << (net.provenance().algorithm.empty() ? "-" : net.provenance().algorithm) << '\n';
  os << "seed " << net.provenance().seed << '\n';
  os << "training_return " << format_hex(net.provenance().training_return) << '\n';
  os << "input " << spec.input_shape[0] << ' ' << spec.input_shape[1] << ' ' << spec.input_shape[2] << '\n';
  os << "actions " << spec.action_count << '\n';
  os << "head " << to_string(spec.head) << '\n';
  os << "value_head " << (spec.value_head ? 1 : 0) << '\n';
  os << "layers " << spec.layers.size() << '\n';
  for (const auto& l : spec.layers) os << layer_line(l) << '\n';
  os << "weights " << net.weights().size() << '\n';
  for (const auto& w : net.weights()) {
    os << "tensor " << w.name << ' ' << w.value.rank();
    for (auto d : w.value.shape()) os << ' ' << d;
    os << '\n';
    const auto data = w.value.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      os << format_hex(data[i]) << ((i + 1) % 8 == 0 || i + 1 == data.size() ? '\n' : ' ');
    }
  }
  os << "end\n";
  return os.str();
}

PolicyNetwork parse_checkpoint(const std::string& text) {
  LineReader r(text);
  auto magic = r.next("header");
  if (magic.size() != 1 || magic[0] != kMagic) malformed("missing '" + std::string(kMagic) + "' header");
  const auto version = r.keyed("version", 1);
  if (to_uint(version[1]) != kVersion) {
    throw CheckpointError(CheckpointError::Kind::version_mismatch,
                          "checkpoint version " + version[1] + " is not supported (expected " +
                              std::to_string(kVersion) + ")");
  }

  const auto kind_tok = r.keyed("kind", 1)[1];
  PolicyKind kind;
  if (kind_tok == "q-value") {
    kind = PolicyKind::q_value;
  } else if (kind_tok == "stochastic") {
    kind = PolicyKind::stochastic;
  } else {
    malformed("unknown kind '" + kind_tok + "'");
  }
  Provenance prov;
  prov.algorithm = r.keyed("algorithm", 1)[1];
  if (prov.algorithm == "-") prov.algorithm.clear();
  prov.seed = to_uint(r.keyed("seed", 1)[1]);
  prov.training_return = to_hex_double(r.keyed("training_return", 1)[1]);

  ArchitectureSpec spec;
  const auto in = r.keyed("input", 3);
  spec.input_shape = {to_uint(in[1]), to_uint(in[2]), to_uint(in[3])};
  spec.action_count = to_uint(r.keyed("actions", 1)[1]);
  const auto head = r.keyed("head", 1)[1];
  if (head == "q") {
    spec.head = HeadKind::q;
  } else if (head == "distribution") {
    spec.head = HeadKind::distribution;
  } else {
    malformed("unknown head '" + head + "'");
  }
  spec.value_head = to_uint(r.keyed("value_head", 1)[1]) != 0;
  const auto n_layers = to_uint(r.keyed("layers", 1)[1]);
  for (std::uint64_t i = 0; i < n_layers; ++i) {
    auto t = r.next("layer");
    if (t[0] == "conv" && t.size() == 4) {
      spec.layers.push_back(LayerSpec::conv(to_uint(t[1]), to_uint(t[2]), to_uint(t[3])));
    } else if (t[0] == "dense" && t.size() == 2) {
      spec.layers.push_back(LayerSpec::dense(to_uint(t[1])));
    } else if (t[0] == "relu" && t.size() == 1) {
      spec.layers.push_back(LayerSpec::relu());
    } else if (t[0] == "flatten" && t.size() == 1) {
      spec.layers.push_back(LayerSpec::flatten());
    } else {
      malformed("bad layer descriptor '" + t[0] + "'");
    }
  }

  const auto n_weights = to_uint(r.keyed("weights", 1)[1]);
  std::vector<NamedTensor> weights;
  for (std::uint64_t i = 0; i < n_weights; ++i) {
    auto t = r.next("tensor");
    if (t[0] != "tensor" || t.size() < 3) malformed("expected tensor header");
    const auto rank = to_uint(t[2]);
    if (t.size() != 3 + rank || rank == 0) malformed("tensor " + t[1] + " has a bad shape line");
    Shape shape;
    for (std::uint64_t d = 0; d < rank; ++d) shape.push_back(to_uint(t[3 + d]));
    if (shape_size(shape) == 0) malformed("tensor " + t[1] + " has an empty shape");
    std::vector<double> data;
    data.reserve(shape_size(shape));
    while (data.size() < shape_size(shape)) {
      for (const auto& tok : r.next("tensor values")) data.push_back(to_hex_double(tok));
    }
    if (data.size() != shape_size(shape)) malformed("tensor " + t[1] + " has extra values");
    weights.push_back({t[1], Tensor(std::move(shape), std::move(data))});
  }
  auto end = r.next("end");
  if (end.size() != 1 || end[0] != "end") malformed("missing end marker");

  try {
    return PolicyNetwork(std::move(spec), kind, std::move(prov), std::move(weights));
  } catch (const ContractError& e) {
    throw CheckpointError(CheckpointError::Kind::shape_inconsistency,
                          std::string("checkpoint shapes are inconsistent: ") + e.what());
  }
}

void save_checkpoint(const PolicyNetwork& net, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << serialize_checkpoint(net);
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

PolicyNetwork load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace advrl
