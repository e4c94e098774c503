#pragma once

#include <array>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "forge/autodiff.hpp"
#include "forge/core.hpp"

namespace forge {

enum class Activation { None, Tanh, Relu };

inline std::string activation_name(Activation a) {
  switch (a) {
    case Activation::None: return "none";
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
  }
  throw Error("unknown activation");
}

inline Activation activation_from(const std::string& s) {
  if (s == "none") return Activation::None;
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  throw Error("unknown activation: " + s);
}

/// How a network consumes the (n, 5, m) batch tensor.
enum class InputLayout {
  FlattenPerSymbol,  // dense stack over the flattened 5m window, per symbol
  TimeSeries,        // recurrent cell over m steps of 5 channels, per symbol
  CrossSection,      // convolutions along the symbol axis, then a dense head
};

inline std::string layout_name(InputLayout l) {
  switch (l) {
    case InputLayout::FlattenPerSymbol: return "flatten";
    case InputLayout::TimeSeries: return "timeseries";
    case InputLayout::CrossSection: return "crosssection";
  }
  throw Error("unknown layout");
}

inline InputLayout layout_from(const std::string& s) {
  if (s == "flatten") return InputLayout::FlattenPerSymbol;
  if (s == "timeseries") return InputLayout::TimeSeries;
  if (s == "crosssection") return InputLayout::CrossSection;
  throw Error("unknown layout: " + s);
}

/// Weight masks are empty until pruning assigns them; an empty mask means
/// every entry is live. Masked entries keep their stored value but act as 0.
struct DenseLayer {
  Tensor w, b, mask;
  Activation act = Activation::None;
};

/// Gate order everywhere: input, forget, cell candidate, output.
struct LstmLayer {
  std::array<Tensor, 4> wx, wh, b;
  std::array<Tensor, 4> mask_x, mask_h;
  std::size_t in = 0, hidden = 0;
};

struct ConvLayer {
  Tensor k, b, mask;  // k: [width, in, out]
  Activation act = Activation::None;
};

using Layer = std::variant<DenseLayer, LstmLayer, ConvLayer>;

struct NetworkGraph {
  InputLayout layout = InputLayout::FlattenPerSymbol;
  std::size_t m = 0;
  std::size_t channels = 5;
  std::vector<Layer> layers;
};

namespace detail {

inline Tensor glorot(Rng& rng, std::vector<std::size_t> shape, std::size_t fan_in,
                     std::size_t fan_out) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = rng.uniform(-a, a);
  return t;
}

struct ParamRef {
  Tensor* value;
  Tensor* mask;  // nullptr for biases (never masked)
};

inline void collect_params(NetworkGraph& net, std::vector<ParamRef>& out) {
  for (auto& layer : net.layers) {
    if (auto* d = std::get_if<DenseLayer>(&layer)) {
      out.push_back({&d->w, &d->mask});
      out.push_back({&d->b, nullptr});
    } else if (auto* l = std::get_if<LstmLayer>(&layer)) {
      for (int g = 0; g < 4; ++g) out.push_back({&l->wx[g], &l->mask_x[g]});
      for (int g = 0; g < 4; ++g) out.push_back({&l->wh[g], &l->mask_h[g]});
      for (int g = 0; g < 4; ++g) out.push_back({&l->b[g], nullptr});
    } else {
      auto& c = std::get<ConvLayer>(layer);
      out.push_back({&c.k, &c.mask});
      out.push_back({&c.b, nullptr});
    }
  }
}

}  // namespace detail

inline std::vector<detail::ParamRef> param_refs(NetworkGraph& net) {
  std::vector<detail::ParamRef> out;
  detail::collect_params(net, out);
  return out;
}

struct NetGradients {
  std::vector<Tensor> by_param;  // aligned with param_refs order
};

/// A forward run on a tape: the output node, the input leaf, and the
/// parameter leaves in param_refs order (for gradient harvesting).
struct ForwardPass {
  Var output;
  Var input;
  std::vector<Var> params;
};

namespace detail {

inline Var activate(Tape& t, Var v, Activation a) {
  switch (a) {
    case Activation::None: return v;
    case Activation::Tanh: return t.tanh_(v);
    case Activation::Relu: return t.relu_(v);
  }
  throw Error("unknown activation");
}

// Pushes the parameter leaf and applies its mask (if any) as a constant.
inline Var masked_param(Tape& t, const Tensor& w, const Tensor& mask, std::vector<Var>& params) {
  Var v = t.leaf(w);
  params.push_back(v);
  if (mask.numel() == 0) return v;
  return t.mul(v, t.leaf(mask));
}

}  // namespace detail

/// Forward over the whole batch tensor x of shape (n, channels, m).
/// Output node has shape (n, 1).
inline ForwardPass run_forward(Tape& tape, const NetworkGraph& net, const Tensor& x) {
  if (x.shape.size() != 3 || x.shape[1] != net.channels || x.shape[2] != net.m)
    throw Error("forward: input shape does not match network");
  const std::size_t n = x.shape[0];
  ForwardPass fp;
  fp.input = tape.leaf(x);
  Var cur = fp.input;

  std::size_t layer_ix = 0;
  if (net.layout == InputLayout::FlattenPerSymbol || net.layout == InputLayout::CrossSection) {
    cur = tape.reshape(cur, {n, net.channels * net.m});
  } else {
    // Recurrent path: first layer must be the cell.
    const auto* cell = net.layers.empty() ? nullptr : std::get_if<LstmLayer>(&net.layers[0]);
    if (!cell) throw Error("forward: timeseries network must start with a recurrent cell");
    Var h = tape.leaf(Tensor::zeros({n, cell->hidden}));
    Var c = tape.leaf(Tensor::zeros({n, cell->hidden}));
    std::array<Var, 4> wx, wh, b;
    for (int g = 0; g < 4; ++g) {
      wx[g] = detail::masked_param(tape, cell->wx[g], cell->mask_x[g], fp.params);
    }
    for (int g = 0; g < 4; ++g) {
      wh[g] = detail::masked_param(tape, cell->wh[g], cell->mask_h[g], fp.params);
    }
    for (int g = 0; g < 4; ++g) {
      b[g] = tape.leaf(cell->b[g]);
      fp.params.push_back(b[g]);
    }
    for (std::size_t j = 0; j < net.m; ++j) {
      Var xj = tape.slice_time(fp.input, j);
      auto gate = [&](int g) { return tape.add(tape.linear(xj, wx[g], b[g]), tape.matmul(h, wh[g])); };
      Var gi = tape.sigmoid_(gate(0));
      Var gf = tape.sigmoid_(gate(1));
      Var gc = tape.tanh_(gate(2));
      Var go = tape.sigmoid_(gate(3));
      c = tape.add(tape.mul(gf, c), tape.mul(gi, gc));
      h = tape.mul(go, tape.tanh_(c));
    }
    cur = h;
    layer_ix = 1;
  }

  for (; layer_ix < net.layers.size(); ++layer_ix) {
    const Layer& layer = net.layers[layer_ix];
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      Var w = detail::masked_param(tape, d->w, d->mask, fp.params);
      Var b = tape.leaf(d->b);
      fp.params.push_back(b);
      cur = detail::activate(tape, tape.linear(cur, w, b), d->act);
    } else if (const auto* cv = std::get_if<ConvLayer>(&layer)) {
      Var k = detail::masked_param(tape, cv->k, cv->mask, fp.params);
      Var b = tape.leaf(cv->b);
      fp.params.push_back(b);
      cur = detail::activate(tape, tape.conv_rows(cur, k, b), cv->act);
    } else {
      throw Error("forward: recurrent cell allowed only as the first layer");
    }
  }
  fp.output = cur;
  return fp;
}

/// Convenience inference: per-symbol factor values, no tape kept.
inline std::vector<double> forward_values(const NetworkGraph& net, const Tensor& x) {
  Tape tape;
  ForwardPass fp = run_forward(tape, net, x);
  return tape.value(fp.output).data;
}

inline NetGradients collect_grads(const Tape& tape, const ForwardPass& fp) {
  NetGradients g;
  g.by_param.reserve(fp.params.size());
  for (Var v : fp.params) g.by_param.push_back(tape.grad(v));
  return g;
}

inline void accumulate(NetGradients& into, const NetGradients& add) {
  if (into.by_param.empty()) {
    into = add;
    return;
  }
  if (into.by_param.size() != add.by_param.size()) throw Error("gradient accumulation mismatch");
  for (std::size_t i = 0; i < add.by_param.size(); ++i)
    for (std::size_t j = 0; j < add.by_param[i].data.size(); ++j)
      into.by_param[i].data[j] += add.by_param[i].data[j];
}

inline double gradient_norm(const NetGradients& g) {
  double s = 0.0;
  for (const auto& t : g.by_param)
    for (double v : t.data) s += v * v;
  return std::sqrt(s);
}

inline void clip_gradients(NetGradients& g, double max_norm) {
  const double n = gradient_norm(g);
  if (n <= max_norm || n == 0.0) return;
  const double c = max_norm / n;
  for (auto& t : g.by_param)
    for (double& v : t.data) v *= c;
}

/// theta <- theta - lr * (g masked). Masked weight entries never move, so
/// their stored values stay exactly what they were when the mask was set.
inline void sgd_step(NetworkGraph& net, const NetGradients& grads, double lr) {
  if (lr <= 0.0) throw Error("sgd_step: learning rate must be > 0");
  auto refs = param_refs(net);
  if (refs.size() != grads.by_param.size()) throw Error("sgd_step: gradient count mismatch");
  for (std::size_t i = 0; i < refs.size(); ++i) {
    Tensor& p = *refs[i].value;
    const Tensor& g = grads.by_param[i];
    if (!p.same_shape(g)) throw Error("sgd_step: gradient shape mismatch");
    const Tensor* mask = refs[i].mask;
    const bool masked = mask && mask->numel() != 0;
    for (std::size_t j = 0; j < p.data.size(); ++j) {
      const double m = masked ? mask->data[j] : 1.0;
      p.data[j] -= lr * g.data[j] * m;
    }
  }
}

// ---------------------------------------------------------------------------
// Builders

inline NetworkGraph build_fcn(std::size_t hidden_layers, std::size_t width, std::size_t m,
                              std::uint64_t seed, Activation act = Activation::Tanh) {
  if (hidden_layers < 3 || hidden_layers > 5) throw Error("build_fcn: hidden layers must be 3-5");
  if (width < 64 || width > 128) throw Error("build_fcn: width must be 64-128");
  if (m < 1) throw Error("build_fcn: m must be >= 1");
  Rng rng(seed);
  NetworkGraph net;
  net.layout = InputLayout::FlattenPerSymbol;
  net.m = m;
  std::size_t in = net.channels * m;
  for (std::size_t i = 0; i < hidden_layers; ++i) {
    DenseLayer d;
    d.w = detail::glorot(rng, {in, width}, in, width);
    d.b = Tensor::zeros({width});
    d.act = act;
    net.layers.emplace_back(std::move(d));
    in = width;
  }
  DenseLayer out;
  out.w = detail::glorot(rng, {in, 1}, in, 1);
  out.b = Tensor::zeros({1});
  out.act = Activation::None;
  net.layers.emplace_back(std::move(out));
  return net;
}

inline NetworkGraph build_recurrent(std::size_t hidden, std::size_t m, std::uint64_t seed) {
  if (hidden < 1) throw Error("build_recurrent: width must be >= 1");
  if (m < 1) throw Error("build_recurrent: m must be >= 1");
  Rng rng(seed);
  NetworkGraph net;
  net.layout = InputLayout::TimeSeries;
  net.m = m;
  LstmLayer cell;
  cell.in = net.channels;
  cell.hidden = hidden;
  for (int g = 0; g < 4; ++g) {
    cell.wx[g] = detail::glorot(rng, {cell.in, hidden}, cell.in, hidden);
    cell.wh[g] = detail::glorot(rng, {hidden, hidden}, hidden, hidden);
    cell.b[g] = Tensor::zeros({hidden});
  }
  // Forget gate opens at init so early gradients reach across the unroll.
  for (double& v : cell.b[1].data) v = 1.0;
  net.layers.emplace_back(std::move(cell));
  DenseLayer head;
  head.w = detail::glorot(rng, {hidden, 1}, hidden, 1);
  head.b = Tensor::zeros({1});
  head.act = Activation::None;
  net.layers.emplace_back(std::move(head));
  return net;
}

inline NetworkGraph build_cross_sectional_conv(std::size_t kernel_width, std::size_t n_layers,
                                               std::size_t m, std::uint64_t seed,
                                               std::size_t features = 16) {
  if (kernel_width < 1) throw Error("build_cross_sectional_conv: kernel width must be >= 1");
  if (n_layers < 1) throw Error("build_cross_sectional_conv: need at least one conv layer");
  if (m < 1 || features < 1) throw Error("build_cross_sectional_conv: bad dimensions");
  Rng rng(seed);
  NetworkGraph net;
  net.layout = InputLayout::CrossSection;
  net.m = m;
  std::size_t in = net.channels * m;
  for (std::size_t i = 0; i < n_layers; ++i) {
    ConvLayer c;
    c.k = detail::glorot(rng, {kernel_width, in, features}, kernel_width * in, features);
    c.b = Tensor::zeros({features});
    c.act = Activation::Tanh;
    net.layers.emplace_back(std::move(c));
    in = features;
  }
  DenseLayer head;
  head.w = detail::glorot(rng, {features, 1}, features, 1);
  head.b = Tensor::zeros({1});
  head.act = Activation::None;
  net.layers.emplace_back(std::move(head));
  return net;
}

/// Structural contract shared by every builder and the loader.
inline void validate_network(const NetworkGraph& net) {
  if (net.layers.empty()) throw Error("network has no layers");
  const auto* last = std::get_if<DenseLayer>(&net.layers.back());
  if (!last || last->act != Activation::None)
    throw Error("network output layer must be dense and unactivated");
  if (last->w.shape[1] != 1) throw Error("network output layer must emit one value per symbol");
}

// ---------------------------------------------------------------------------
// Serialization (text, hexfloat; round-trip is bit-exact)

namespace detail {

inline void write_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
  out << name << ' ' << t.shape.size();
  for (auto d : t.shape) out << ' ' << d;
  char buf[48];
  for (double v : t.data) {
    std::snprintf(buf, sizeof buf, " %a", v);
    out << buf;
  }
  out << '\n';
}

inline Tensor read_tensor(std::istream& in, const std::string& expect) {
  std::string name;
  in >> name;
  if (name != expect) throw Error("network file: expected tensor " + expect + ", got " + name);
  std::size_t rank;
  in >> rank;
  std::vector<std::size_t> shape(rank);
  for (auto& d : shape) in >> d;
  Tensor t = Tensor::zeros(shape);
  std::string tok;
  for (double& v : t.data) {
    in >> tok;
    char* end = nullptr;
    v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str()) throw Error("network file: bad value token " + tok);
  }
  if (!in) throw Error("network file: truncated tensor " + expect);
  return t;
}

}  // namespace detail

inline void save_network(const NetworkGraph& net, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for write: " + path);
  out << "FORGE-NET 1\n";
  out << "layout " << layout_name(net.layout) << '\n';
  out << "m " << net.m << '\n';
  out << "channels " << net.channels << '\n';
  out << "layers " << net.layers.size() << '\n';
  for (const auto& layer : net.layers) {
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
      out << "dense " << activation_name(d->act) << ' ' << (d->mask.numel() != 0) << '\n';
      detail::write_tensor(out, "w", d->w);
      detail::write_tensor(out, "b", d->b);
      if (d->mask.numel() != 0) detail::write_tensor(out, "mask", d->mask);
    } else if (const auto* l = std::get_if<LstmLayer>(&layer)) {
      const bool has_mask = l->mask_x[0].numel() != 0;
      out << "lstm " << l->in << ' ' << l->hidden << ' ' << has_mask << '\n';
      for (int g = 0; g < 4; ++g) detail::write_tensor(out, "wx", l->wx[g]);
      for (int g = 0; g < 4; ++g) detail::write_tensor(out, "wh", l->wh[g]);
      for (int g = 0; g < 4; ++g) detail::write_tensor(out, "b", l->b[g]);
      if (has_mask) {
        for (int g = 0; g < 4; ++g) detail::write_tensor(out, "maskx", l->mask_x[g]);
        for (int g = 0; g < 4; ++g) detail::write_tensor(out, "maskh", l->mask_h[g]);
      }
    } else {
      const auto& c = std::get<ConvLayer>(layer);
      out << "conv " << activation_name(c.act) << ' ' << (c.mask.numel() != 0) << '\n';
      detail::write_tensor(out, "k", c.k);
      detail::write_tensor(out, "b", c.b);
      if (c.mask.numel() != 0) detail::write_tensor(out, "mask", c.mask);
    }
  }
}

inline NetworkGraph load_network(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open: " + path);
  std::string magic, version;
  in >> magic >> version;
  if (magic != "FORGE-NET" || version != "1") throw Error("not a network file: " + path);
  NetworkGraph net;
  std::string key, val;
  in >> key >> val;
  if (key != "layout") throw Error("network file: missing layout");
  net.layout = layout_from(val);
  std::size_t n_layers = 0;
  in >> key >> net.m;
  if (key != "m") throw Error("network file: missing m");
  in >> key >> net.channels;
  if (key != "channels") throw Error("network file: missing channels");
  in >> key >> n_layers;
  if (key != "layers") throw Error("network file: missing layer count");
  for (std::size_t i = 0; i < n_layers; ++i) {
    std::string kind;
    in >> kind;
    if (kind == "dense") {
      DenseLayer d;
      std::string act;
      int has_mask;
      in >> act >> has_mask;
      d.act = activation_from(act);
      d.w = detail::read_tensor(in, "w");
      d.b = detail::read_tensor(in, "b");
      if (has_mask) d.mask = detail::read_tensor(in, "mask");
      net.layers.emplace_back(std::move(d));
    } else if (kind == "lstm") {
      LstmLayer l;
      int has_mask;
      in >> l.in >> l.hidden >> has_mask;
      for (int g = 0; g < 4; ++g) l.wx[g] = detail::read_tensor(in, "wx");
      for (int g = 0; g < 4; ++g) l.wh[g] = detail::read_tensor(in, "wh");
      for (int g = 0; g < 4; ++g) l.b[g] = detail::read_tensor(in, "b");
      if (has_mask) {
        for (int g = 0; g < 4; ++g) l.mask_x[g] = detail::read_tensor(in, "maskx");
        for (int g = 0; g < 4; ++g) l.mask_h[g] = detail::read_tensor(in, "maskh");
      }
      net.layers.emplace_back(std::move(l));
    } else if (kind == "conv") {
      ConvLayer c;
      std::string act;
      int has_mask;
      in >> act >> has_mask;
      c.act = activation_from(act);
      c.k = detail::read_tensor(in, "k");
      c.b = detail::read_tensor(in, "b");
      if (has_mask) c.mask = detail::read_tensor(in, "mask");
      net.layers.emplace_back(std::move(c));
    } else {
      throw Error("network file: unknown layer kind " + kind);
    }
  }
  validate_network(net);
  return net;
}

// ---------------------------------------------------------------------------
// Attribution

/// Gradient of one symbol's factor value w.r.t. its own input window.
/// `x` is (channels, m) for per-symbol nets; cross-section nets need the
/// batch variant below because one symbol alone is not a valid input.
inline Tensor saliency(const NetworkGraph& net, const Tensor& x) {
  if (net.layout == InputLayout::CrossSection)
    throw Error("saliency: cross-section nets need saliency_in_batch");
  if (x.shape.size() != 2 || x.shape[0] != net.channels || x.shape[1] != net.m)
    throw Error("saliency: expected a (channels, m) window");
  Tensor batch({1, net.channels, net.m}, x.data);
  Tape tape;
  ForwardPass fp = run_forward(tape, net, batch);
  tape.backward(fp.output, Tensor({1, 1}, {1.0}));
  Tensor g = tape.grad(fp.input);
  return Tensor({net.channels, net.m}, std::move(g.data));
}

/// Same, for one row of a full batch (works for every layout).
inline Tensor saliency_in_batch(const NetworkGraph& net, const Tensor& batch, std::size_t row) {
  if (batch.shape.size() != 3) throw Error("saliency: batch must be rank 3");
  const std::size_t n = batch.shape[0];
  if (row >= n) throw Error("saliency: row out of range");
  Tape tape;
  ForwardPass fp = run_forward(tape, net, batch);
  Tensor seed = Tensor::zeros({n, 1});
  seed.data[row] = 1.0;
  tape.backward(fp.output, seed);
  const Tensor& g = tape.grad(fp.input);
  Tensor out = Tensor::zeros({net.channels, net.m});
  const std::size_t per = net.channels * net.m;
  for (std::size_t i = 0; i < per; ++i) out.data[i] = g.data[row * per + i];
  return out;
}

}  // namespace forge
