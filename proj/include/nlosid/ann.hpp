#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "nlosid/error.hpp"
#include "nlosid/kernels.hpp"
#include "nlosid/rng.hpp"
#include "nlosid/tensor.hpp"

namespace nlosid::ann {

enum class LayerKind : std::uint8_t { dense = 0, conv1d = 1, relu = 2, flatten = 3, concat = 4, softmax_head = 5 };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv1d: return "conv1d";
    case LayerKind::relu: return "relu";
    case LayerKind::flatten: return "flatten";
    case LayerKind::concat: return "concat";
    case LayerKind::softmax_head: return "softmax-head";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int units = 0;    // dense, softmax-head
  int kernels = 0;  // conv1d
  int width = 0;    // conv1d
  int stride = 1;   // conv1d

  static LayerSpec dense(int units) { return {LayerKind::dense, units, 0, 0, 1}; }
  static LayerSpec conv1d(int kernels, int width, int stride = 1) {
    return {LayerKind::conv1d, 0, kernels, width, stride};
  }
  static LayerSpec relu() { return {LayerKind::relu, 0, 0, 0, 1}; }
  static LayerSpec flatten() { return {LayerKind::flatten, 0, 0, 0, 1}; }
  static LayerSpec softmax_head(int units) { return {LayerKind::softmax_head, units, 0, 0, 1}; }

  std::string describe() const {
    std::ostringstream s;
    s << to_string(kind);
    if (kind == LayerKind::dense || kind == LayerKind::softmax_head) s << "(" << units << ")";
    if (kind == LayerKind::conv1d) s << "(" << kernels << "x" << width << "/" << stride << ")";
    return s.str();
  }

  bool operator==(const LayerSpec&) const = default;
};

/// Layer lists of the two-branch network. Both branches read the raw
/// histogram; their (flat) outputs are concatenated and fed to the trunk,
/// whose output feeds the identity and position heads.
struct Architecture {
  std::vector<LayerSpec> conv_branch;
  std::vector<LayerSpec> dense_branch;
  std::vector<LayerSpec> trunk;
  bool operator==(const Architecture&) const = default;
};

inline Architecture default_architecture() {
  return {
      {LayerSpec::conv1d(16, 9, 2), LayerSpec::relu(), LayerSpec::conv1d(32, 5, 2), LayerSpec::relu(),
       LayerSpec::flatten()},
      {LayerSpec::dense(64), LayerSpec::relu()},
      {LayerSpec::dense(64), LayerSpec::relu()},
  };
}

struct FeatureShape {
  std::size_t channels = 1;
  std::size_t length = 0;
  std::size_t size() const { return channels * length; }
  bool flat() const { return channels == 1; }
};

struct Layer {
  LayerSpec spec;
  std::string name;
  FeatureShape in, out;
  int weight = -1;  // parameter tensor index
  int bias = -1;
};

/// Parallel conv/dense branches, merged by concatenation into a trunk with
/// two softmax heads (identity over n_classes, position over n_locations).
struct TwoHeadNetwork {
  Architecture arch;
  std::size_t n_bins = 0;
  int n_classes = 3;
  int n_locations = 7;
  std::vector<Layer> conv_branch;
  std::vector<Layer> dense_branch;
  std::vector<Layer> trunk;
  Layer head_class;
  Layer head_loc;
  /// Declaration order: conv branch, dense branch, trunk, identity head,
  /// position head; weight before bias within a layer.
  std::vector<Tensor> parameters;
  std::vector<std::string> parameter_names;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : parameters) n += t.size();
    return n;
  }
};

/// Per-head loss weights; 0 drops a head from the objective.
struct HeadWeights {
  double identity = 1.0;
  double position = 1.0;
};

// ---------------------------------------------------------------------------
// Single-sample reference operations
// ---------------------------------------------------------------------------

/// y = W x + b with W stored [m × n].
inline Tensor dense_forward(const Tensor& x, const Tensor& weights, const Tensor& bias) {
  if (weights.rank() != 2 || x.size() != weights.shape[1] || bias.size() != weights.shape[0])
    throw ShapeError("dense_forward: x" + Tensor::shape_string(x.shape) + " W" + Tensor::shape_string(weights.shape) +
                     " b" + Tensor::shape_string(bias.shape));
  const std::size_t m = weights.shape[0], n = weights.shape[1];
  Tensor y({m});
  for (std::size_t o = 0; o < m; ++o) y[o] = bias[o] + dot(weights.data() + o * n, x.data(), n);
  return y;
}

/// Valid cross-correlation of a single-channel signal with k kernels of width
/// w: output [k × (floor((n − w)/stride) + 1)].
inline Tensor conv1d_forward(const Tensor& x, const Tensor& kernels, int stride) {
  if (kernels.rank() != 2) throw ShapeError("conv1d_forward: kernels must be [k x w]");
  if (stride < 1) throw ShapeError("conv1d_forward: stride must be >= 1");
  const std::size_t n = x.size(), k = kernels.shape[0], w = kernels.shape[1];
  if (w == 0 || w > n)
    throw ShapeError("conv1d_forward: kernel width " + std::to_string(w) + " exceeds input length " +
                     std::to_string(n));
  const std::size_t out_len = (n - w) / static_cast<std::size_t>(stride) + 1;
  Tensor y({k, out_len});
  for (std::size_t kk = 0; kk < k; ++kk)
    for (std::size_t p = 0; p < out_len; ++p)
      y[kk * out_len + p] = dot(kernels.data() + kk * w, x.data() + p * static_cast<std::size_t>(stride), w);
  return y;
}

inline void softmax_inplace(double* z, std::size_t n) {
  double m = z[0];
  for (std::size_t i = 1; i < n; ++i) m = std::max(m, z[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += z[i] = std::exp(z[i] - m);
  for (std::size_t i = 0; i < n; ++i) z[i] /= sum;
}

inline Tensor softmax(const Tensor& logits) {
  if (logits.size() == 0) throw ShapeError("softmax: empty input");
  Tensor p = logits;
  softmax_inplace(p.data(), p.size());
  return p;
}

inline constexpr double kProbabilityFloor = 1e-12;

/// −log(max(p[target], 1e-12)) for a 0-based target index.
inline double cross_entropy_index(const double* probs, std::size_t target) {
  return -std::log(std::max(probs[target], kProbabilityFloor));
}

inline double cross_entropy(const Tensor& probs, const Tensor& target) {
  if (probs.size() != target.size()) throw ShapeError("cross_entropy: size mismatch");
  std::size_t hot = target.size();
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] == 1.0) {
      if (hot != target.size()) throw std::invalid_argument("cross_entropy: target is not one-hot");
      hot = i;
    } else if (target[i] != 0.0) {
      throw std::invalid_argument("cross_entropy: target is not one-hot");
    }
  }
  if (hot == target.size()) throw std::invalid_argument("cross_entropy: target is not one-hot");
  return cross_entropy_index(probs.data(), hot);
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

namespace detail {

inline void infer_layer(Layer& layer, const FeatureShape& in, const std::string& prev_name) {
  layer.in = in;
  const auto& s = layer.spec;
  auto incompatible = [&](const std::string& why) {
    throw ShapeError("incompatible layers '" + prev_name + "' -> '" + layer.name + "': " + why);
  };
  switch (s.kind) {
    case LayerKind::dense:
    case LayerKind::softmax_head:
      if (s.units < 1) incompatible("units must be positive");
      if (!in.flat())
        incompatible("dense input has " + std::to_string(in.channels) + " channels; insert a flatten layer");
      layer.out = {1, static_cast<std::size_t>(s.units)};
      break;
    case LayerKind::conv1d: {
      if (s.kernels < 1 || s.width < 1 || s.stride < 1) incompatible("conv1d sizes must be positive");
      if (static_cast<std::size_t>(s.width) > in.length)
        incompatible("kernel width " + std::to_string(s.width) + " exceeds input length " + std::to_string(in.length));
      const std::size_t len = (in.length - static_cast<std::size_t>(s.width)) / static_cast<std::size_t>(s.stride) + 1;
      layer.out = {static_cast<std::size_t>(s.kernels), len};
      break;
    }
    case LayerKind::relu:
      layer.out = in;
      break;
    case LayerKind::flatten:
      layer.out = {1, in.size()};
      break;
    case LayerKind::concat:
      incompatible("concat is implicit between the branches and the trunk");
  }
}

inline void add_parameters(TwoHeadNetwork& net, Layer& layer) {
  const auto& s = layer.spec;
  if (s.kind == LayerKind::dense || s.kind == LayerKind::softmax_head) {
    layer.weight = static_cast<int>(net.parameters.size());
    net.parameters.emplace_back(std::vector<std::size_t>{static_cast<std::size_t>(s.units), layer.in.size()});
    net.parameter_names.push_back(layer.name + ".weight");
    layer.bias = static_cast<int>(net.parameters.size());
    net.parameters.emplace_back(std::vector<std::size_t>{static_cast<std::size_t>(s.units)});
    net.parameter_names.push_back(layer.name + ".bias");
  } else if (s.kind == LayerKind::conv1d) {
    layer.weight = static_cast<int>(net.parameters.size());
    net.parameters.emplace_back(std::vector<std::size_t>{static_cast<std::size_t>(s.kernels), layer.in.channels,
                                                         static_cast<std::size_t>(s.width)});
    net.parameter_names.push_back(layer.name + ".weight");
    layer.bias = static_cast<int>(net.parameters.size());
    net.parameters.emplace_back(std::vector<std::size_t>{static_cast<std::size_t>(s.kernels)});
    net.parameter_names.push_back(layer.name + ".bias");
  }
}

inline FeatureShape build_list(TwoHeadNetwork& net, const std::vector<LayerSpec>& specs, std::vector<Layer>& out,
                               const std::string& list_name, FeatureShape in, std::string prev_name) {
  for (std::size_t i = 0; i < specs.size(); ++i) {
    Layer layer;
    layer.spec = specs[i];
    layer.name = list_name + "[" + std::to_string(i) + "]:" + specs[i].describe();
    infer_layer(layer, in, prev_name);
    add_parameters(net, layer);
    in = layer.out;
    prev_name = layer.name;
    out.push_back(std::move(layer));
  }
  return in;
}

inline std::string last_name(const std::vector<Layer>& list, const std::string& fallback) {
  return list.empty() ? fallback : list.back().name;
}

}  // namespace detail

/// Builds the network without initializing parameters (all zero).
inline TwoHeadNetwork build_network_shapes(const Architecture& arch, std::size_t n_bins, int n_classes,
                                           int n_locations) {
  if (n_bins == 0) throw ShapeError("build_network: n_bins must be positive");
  if (n_classes < 1 || n_locations < 1) throw ShapeError("build_network: head sizes must be positive");
  TwoHeadNetwork net;
  net.arch = arch;
  net.n_bins = n_bins;
  net.n_classes = n_classes;
  net.n_locations = n_locations;
  const FeatureShape input{1, n_bins};
  const auto conv_out = detail::build_list(net, arch.conv_branch, net.conv_branch, "conv", input, "input");
  const auto dense_out = detail::build_list(net, arch.dense_branch, net.dense_branch, "dense", input, "input");
  if (!conv_out.flat())
    throw ShapeError("incompatible layers '" + detail::last_name(net.conv_branch, "input") +
                     "' -> 'concat': branch output must be flat; end the branch with flatten");
  if (!dense_out.flat())
    throw ShapeError("incompatible layers '" + detail::last_name(net.dense_branch, "input") +
                     "' -> 'concat': branch output must be flat; end the branch with flatten");
  const FeatureShape merged{1, conv_out.size() + dense_out.size()};
  const auto trunk_out = detail::build_list(net, arch.trunk, net.trunk, "trunk", merged, "concat");
  const auto trunk_name = detail::last_name(net.trunk, "concat");

  net.head_class.spec = LayerSpec::softmax_head(n_classes);
  net.head_class.name = "head_identity:" + net.head_class.spec.describe();
  detail::infer_layer(net.head_class, trunk_out, trunk_name);
  detail::add_parameters(net, net.head_class);
  net.head_loc.spec = LayerSpec::softmax_head(n_locations);
  net.head_loc.name = "head_position:" + net.head_loc.spec.describe();
  detail::infer_layer(net.head_loc, trunk_out, trunk_name);
  detail::add_parameters(net, net.head_loc);
  return net;
}

/// Fan-in of a parameter tensor: product of all but the leading dimension.
inline std::size_t fan_in(const Tensor& t) {
  if (t.rank() <= 1) return 0;
  return t.size() / t.shape[0];
}

/// Weights uniform in ±sqrt(6 / fan_in), biases zero, drawn in declaration
/// order from one seeded stream.
inline void initialize(TwoHeadNetwork& net, std::uint64_t seed) {
  CounterRng rng(derive_seed(seed, "init"));
  for (auto& t : net.parameters) {
    const auto fi = fan_in(t);
    if (fi == 0) {
      std::fill(t.values.begin(), t.values.end(), 0.0);
      continue;
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(fi));
    for (auto& v : t.values) v = rng.uniform(-limit, limit);
  }
}

struct HeadOutputs {
  Tensor class_probs;
  Tensor loc_probs;
};

HeadOutputs forward(const TwoHeadNetwork& net, std::span<const double> x);

/// Builds, initializes and dry-runs the network on a zero input.
inline TwoHeadNetwork build_network(const Architecture& arch, std::size_t n_bins, int n_classes, int n_locations,
                                    std::uint64_t seed) {
  auto net = build_network_shapes(arch, n_bins, n_classes, n_locations);
  initialize(net, seed);
  const std::vector<double> zeros(n_bins, 0.0);
  auto out = forward(net, zeros);
  if (out.class_probs.size() != static_cast<std::size_t>(n_classes) ||
      out.loc_probs.size() != static_cast<std::size_t>(n_locations))
    throw ShapeError("build_network: dry run produced wrong head sizes");
  return net;
}

// ---------------------------------------------------------------------------
// Batched forward / backward
// ---------------------------------------------------------------------------

/// Activations of every layer for a batch, each stored as batch × size.
struct Activations {
  std::size_t batch = 0;
  std::vector<std::vector<double>> conv;   // conv[0] = input
  std::vector<std::vector<double>> dense;  // dense[0] = input
  std::vector<std::vector<double>> trunk;  // trunk[0] = concatenation
  std::vector<double> probs_class;
  std::vector<double> probs_loc;
};

/// Reusable buffers for one worker. Keeping them alive across batches avoids
/// re-allocating (and re-faulting) large activation arrays on every call.
struct Workspace {
  Activations acts;
  kernels::ConvScratch scratch;
  std::vector<double> dclass, dloc, g0, g1, dconv, ddense;
};

namespace detail {

using ConvScratch = kernels::ConvScratch;

inline kernels::ConvGeometry conv_geometry(const Layer& layer) {
  return {layer.in.channels, layer.in.length, static_cast<std::size_t>(layer.spec.kernels),
          static_cast<std::size_t>(layer.spec.width), static_cast<std::size_t>(layer.spec.stride)};
}

inline void layer_forward(const Layer& layer, const std::vector<Tensor>& params, const std::vector<double>& in,
                          std::vector<double>& out, std::size_t batch, ConvScratch& scratch) {
  const std::size_t n_in = layer.in.size(), n_out = layer.out.size();
  out.resize(batch * n_out);
  switch (layer.spec.kind) {
    case LayerKind::dense:
    case LayerKind::softmax_head:
      kernels::dense_forward_batch(params[layer.weight].data(), params[layer.bias].data(), in.data(), out.data(), batch,
                                   n_in, n_out);
      break;
    case LayerKind::conv1d:
      kernels::conv_forward_batch(conv_geometry(layer), params[layer.weight].data(), params[layer.bias].data(),
                                  in.data(), out.data(), batch, scratch.ph, scratch.tmp);
      break;
    case LayerKind::relu:
      for (std::size_t i = 0; i < batch * n_in; ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
      break;
    case LayerKind::flatten:
      out = in;
      break;
    case LayerKind::concat:
      throw ShapeError("concat cannot appear inside a layer list");
  }
}

/// Accumulates parameter gradients into `grads` and, when `din` is non-null,
/// writes the input gradient.
inline void layer_backward(const Layer& layer, const std::vector<Tensor>& params, const std::vector<double>& in,
                           const std::vector<double>& out, const std::vector<double>& dout, std::vector<double>* din,
                           std::vector<Tensor>& grads, std::size_t batch, ConvScratch& scratch) {
  const std::size_t n_in = layer.in.size(), n_out = layer.out.size();
  if (din) din->resize(batch * n_in);
  double* dx = din ? din->data() : nullptr;
  switch (layer.spec.kind) {
    case LayerKind::dense:
    case LayerKind::softmax_head:
      kernels::dense_backward_batch(params[layer.weight].data(), in.data(), dout.data(), grads[layer.weight].data(),
                                    grads[layer.bias].data(), dx, batch, n_in, n_out);
      break;
    case LayerKind::conv1d:
      kernels::conv_backward_batch(conv_geometry(layer), params[layer.weight].data(), in.data(), dout.data(),
                                   grads[layer.weight].data(), grads[layer.bias].data(), dx, batch, scratch);
      break;
    case LayerKind::relu:
      if (din)
        for (std::size_t i = 0; i < batch * n_in; ++i) (*din)[i] = out[i] > 0.0 ? dout[i] : 0.0;
      break;
    case LayerKind::flatten:
      if (din) *din = dout;
      break;
    case LayerKind::concat:
      throw ShapeError("concat cannot appear inside a layer list");
  }
}

inline void forward_list(const std::vector<Layer>& layers, const std::vector<Tensor>& params,
                         std::vector<std::vector<double>>& acts, std::size_t batch, ConvScratch& scratch) {
  acts.resize(layers.size() + 1);
  for (std::size_t i = 0; i < layers.size(); ++i) layer_forward(layers[i], params, acts[i], acts[i + 1], batch, scratch);
}

/// Backpropagates `grad` (the gradient at the list output) through a layer
/// list. On return `grad` holds the gradient at the list input when
/// `need_input_grad`; `spare` is scratch.
inline void backward_list(const std::vector<Layer>& layers, const std::vector<Tensor>& params,
                          const std::vector<std::vector<double>>& acts, std::vector<double>& grad,
                          std::vector<double>& spare, std::vector<Tensor>& grads, std::size_t batch,
                          bool need_input_grad, ConvScratch& scratch) {
  for (std::size_t i = layers.size(); i-- > 0;) {
    const bool want = i > 0 || need_input_grad;
    layer_backward(layers[i], params, acts[i], acts[i + 1], grad, want ? &spare : nullptr, grads, batch, scratch);
    if (!want) return;
    grad.swap(spare);
  }
}

}  // namespace detail

/// Forward pass for `batch` samples stored contiguously in `x`.
inline void forward_batch(const TwoHeadNetwork& net, std::span<const double> x, std::size_t batch, Workspace& ws) {
  if (x.size() != batch * net.n_bins)
    throw ShapeError("forward: input holds " + std::to_string(x.size()) + " values, expected " +
                     std::to_string(batch) + " x " + std::to_string(net.n_bins));
  auto& acts = ws.acts;
  acts.batch = batch;
  acts.conv.resize(net.conv_branch.size() + 1);
  acts.conv[0].assign(x.begin(), x.end());
  detail::forward_list(net.conv_branch, net.parameters, acts.conv, batch, ws.scratch);
  acts.dense.resize(net.dense_branch.size() + 1);
  acts.dense[0].assign(x.begin(), x.end());
  detail::forward_list(net.dense_branch, net.parameters, acts.dense, batch, ws.scratch);

  const auto& a = acts.conv.back();
  const auto& b = acts.dense.back();
  const std::size_t na = a.size() / batch, nb = b.size() / batch;
  acts.trunk.resize(net.trunk.size() + 1);
  auto& merged = acts.trunk[0];
  merged.resize(batch * (na + nb));
  for (std::size_t s = 0; s < batch; ++s) {
    std::copy_n(a.data() + s * na, na, merged.data() + s * (na + nb));
    std::copy_n(b.data() + s * nb, nb, merged.data() + s * (na + nb) + na);
  }
  detail::forward_list(net.trunk, net.parameters, acts.trunk, batch, ws.scratch);

  detail::layer_forward(net.head_class, net.parameters, acts.trunk.back(), acts.probs_class, batch, ws.scratch);
  detail::layer_forward(net.head_loc, net.parameters, acts.trunk.back(), acts.probs_loc, batch, ws.scratch);
  const auto nc = static_cast<std::size_t>(net.n_classes), nl = static_cast<std::size_t>(net.n_locations);
  for (std::size_t s = 0; s < batch; ++s) {
    softmax_inplace(acts.probs_class.data() + s * nc, nc);
    softmax_inplace(acts.probs_loc.data() + s * nl, nl);
  }
}

inline HeadOutputs forward(const TwoHeadNetwork& net, std::span<const double> x) {
  if (x.size() != net.n_bins)
    throw ShapeError("forward: input length " + std::to_string(x.size()) + " != n_bins " +
                     std::to_string(net.n_bins));
  Workspace ws;
  forward_batch(net, x, 1, ws);
  return {Tensor({static_cast<std::size_t>(net.n_classes)}, ws.acts.probs_class),
          Tensor({static_cast<std::size_t>(net.n_locations)}, ws.acts.probs_loc)};
}

/// Zero tensors shaped like the network parameters.
inline std::vector<Tensor> zero_gradients(const TwoHeadNetwork& net) {
  std::vector<Tensor> g;
  g.reserve(net.parameters.size());
  for (const auto& t : net.parameters) g.emplace_back(t.shape);
  return g;
}

/// 0-based targets for one sample.
struct Targets {
  int person = 0;
  int position = 0;
};

/// Sum over the batch of w_id·CE(identity) + w_pos·CE(position).
inline double batch_loss(const TwoHeadNetwork& net, const Activations& acts, std::span<const Targets> targets,
                         const HeadWeights& w) {
  const auto nc = static_cast<std::size_t>(net.n_classes), nl = static_cast<std::size_t>(net.n_locations);
  double loss = 0.0;
  for (std::size_t s = 0; s < acts.batch; ++s) {
    if (w.identity != 0.0)
      loss += w.identity *
              cross_entropy_index(acts.probs_class.data() + s * nc, static_cast<std::size_t>(targets[s].person));
    if (w.position != 0.0)
      loss += w.position *
              cross_entropy_index(acts.probs_loc.data() + s * nl, static_cast<std::size_t>(targets[s].position));
  }
  return loss;
}

/// Reverse-mode gradients of `scale`·(summed batch loss), accumulated into
/// `grads`. Returns the unscaled summed loss.
inline double backward_batch(const TwoHeadNetwork& net, std::span<const double> x, std::span<const Targets> targets,
                             const HeadWeights& w, double scale, std::vector<Tensor>& grads, Workspace& ws) {
  const std::size_t batch = targets.size();
  forward_batch(net, x, batch, ws);
  const auto& acts = ws.acts;
  const double loss = batch_loss(net, acts, targets, w);

  const auto nc = static_cast<std::size_t>(net.n_classes), nl = static_cast<std::size_t>(net.n_locations);
  // d(-log p_t)/dz = p − onehot(t); the floored region is flat.
  ws.dclass.assign(batch * nc, 0.0);
  ws.dloc.assign(batch * nl, 0.0);
  for (std::size_t s = 0; s < batch; ++s) {
    const auto tc = static_cast<std::size_t>(targets[s].person);
    const auto tl = static_cast<std::size_t>(targets[s].position);
    if (tc >= nc || tl >= nl) throw ShapeError("backward: target index out of range");
    const double* pc = acts.probs_class.data() + s * nc;
    const double* pl = acts.probs_loc.data() + s * nl;
    if (w.identity != 0.0 && pc[tc] >= kProbabilityFloor)
      for (std::size_t i = 0; i < nc; ++i) ws.dclass[s * nc + i] = scale * w.identity * (pc[i] - (i == tc ? 1.0 : 0.0));
    if (w.position != 0.0 && pl[tl] >= kProbabilityFloor)
      for (std::size_t i = 0; i < nl; ++i) ws.dloc[s * nl + i] = scale * w.position * (pl[i] - (i == tl ? 1.0 : 0.0));
  }

  const auto& trunk_out = acts.trunk.back();
  detail::layer_backward(net.head_class, net.parameters, trunk_out, acts.probs_class, ws.dclass, &ws.g0, grads, batch,
                         ws.scratch);
  detail::layer_backward(net.head_loc, net.parameters, trunk_out, acts.probs_loc, ws.dloc, &ws.g1, grads, batch,
                         ws.scratch);
  for (std::size_t i = 0; i < ws.g0.size(); ++i) ws.g0[i] += ws.g1[i];

  detail::backward_list(net.trunk, net.parameters, acts.trunk, ws.g0, ws.g1, grads, batch, true, ws.scratch);
  const std::size_t na = acts.conv.back().size() / batch, nb = acts.dense.back().size() / batch;
  ws.dconv.resize(batch * na);
  ws.ddense.resize(batch * nb);
  for (std::size_t s = 0; s < batch; ++s) {
    std::copy_n(ws.g0.data() + s * (na + nb), na, ws.dconv.data() + s * na);
    std::copy_n(ws.g0.data() + s * (na + nb) + na, nb, ws.ddense.data() + s * nb);
  }
  detail::backward_list(net.conv_branch, net.parameters, acts.conv, ws.dconv, ws.g1, grads, batch, false, ws.scratch);
  detail::backward_list(net.dense_branch, net.parameters, acts.dense, ws.ddense, ws.g1, grads, batch, false,
                        ws.scratch);
  return loss;
}

inline double backward_batch(const TwoHeadNetwork& net, std::span<const double> x, std::span<const Targets> targets,
                             const HeadWeights& w, double scale, std::vector<Tensor>& grads) {
  Workspace ws;
  return backward_batch(net, x, targets, w, scale, grads, ws);
}

/// Joint loss of one sample (0-based targets).
inline double loss(const TwoHeadNetwork& net, std::span<const double> x, const Targets& t, const HeadWeights& w = {}) {
  Workspace ws;
  forward_batch(net, x, 1, ws);
  return batch_loss(net, ws.acts, std::span<const Targets>(&t, 1), w);
}

/// Exact gradients of the single-sample joint loss, one tensor per parameter.
inline std::vector<Tensor> backward(const TwoHeadNetwork& net, std::span<const double> x, const Targets& t,
                                    const HeadWeights& w = {}) {
  if (x.size() != net.n_bins) throw ShapeError("backward: input length mismatch");
  auto grads = zero_gradients(net);
  backward_batch(net, x, std::span<const Targets>(&t, 1), w, 1.0, grads);
  return grads;
}

}  // namespace nlosid::ann
