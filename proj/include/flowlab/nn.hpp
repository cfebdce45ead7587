#pragma once
// Small dense MLP with hand-written backprop, Adam, and a binary checkpoint
// format. The network maps (state, time features, class embedding) to a
// velocity vector of the same dimension as the state.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "flowlab/errors.hpp"
#include "flowlab/io.hpp"
#include "flowlab/rng.hpp"
#include "flowlab/vec.hpp"

namespace flowlab {

enum class Activation : std::uint8_t { Tanh = 0, Silu = 1 };

inline double activate(Activation a, double z) {
  if (a == Activation::Tanh) return std::tanh(z);
  return z / (1.0 + std::exp(-z));  // silu
}

inline double activate_deriv(Activation a, double z) {
  if (a == Activation::Tanh) {
    double t = std::tanh(z);
    return 1.0 - t * t;
  }
  double s = 1.0 / (1.0 + std::exp(-z));
  return s * (1.0 + z * (1.0 - s));
}

// Fixed sinusoidal clock: [t, sin(2*pi*t), cos(2*pi*t), sin(4*pi*t), ...].
// Width must be 0 (time-blind) or odd (t plus whole sin/cos pairs).
inline void time_features(double t, int width, double* out) {
  if (width == 0) return;
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  out[0] = t;
  for (int j = 1; 2 * j - 1 < width; ++j) {
    out[2 * j - 1] = std::sin(kTwoPi * j * t);
    out[2 * j] = std::cos(kTwoPi * j * t);
  }
}

struct NetworkSpec {
  int input_dim = 0;
  std::vector<int> hidden_dims;
  int time_embed_dim = 5;
  int num_classes = 0;  // 0 = unconditioned; class 0 is the null label otherwise
  int cond_embed_dim = 0;
  Activation activation = Activation::Silu;

  int cond_width() const { return num_classes > 0 ? cond_embed_dim : 0; }
  int in_width() const { return input_dim + time_embed_dim + cond_width(); }

  void validate() const {
    if (input_dim <= 0) throw std::invalid_argument("network: input_dim must be positive");
    for (int h : hidden_dims)
      if (h <= 0) throw std::invalid_argument("network: hidden widths must be positive");
    if (time_embed_dim < 0 || (time_embed_dim > 0 && time_embed_dim % 2 == 0))
      throw std::invalid_argument("network: time_embed_dim must be 0 or odd");
    if (num_classes < 0 || cond_embed_dim < 0)
      throw std::invalid_argument("network: class counts must be non-negative");
    if (num_classes > 0 && cond_embed_dim == 0)
      throw std::invalid_argument("network: conditioned net needs cond_embed_dim > 0");
  }
};

struct DenseLayer {
  Matrix w;  // out x in
  Vec b;     // out
};

struct Network {
  NetworkSpec spec;
  std::vector<DenseLayer> layers;
  Matrix embed;  // num_classes x cond_embed_dim; empty when unconditioned
};

inline Network zero_like(const Network& net) {
  Network z;
  z.spec = net.spec;
  z.layers.reserve(net.layers.size());
  for (const auto& l : net.layers)
    z.layers.push_back({Matrix(l.w.rows, l.w.cols), Vec(l.b.size(), 0.0)});
  z.embed = Matrix(net.embed.rows, net.embed.cols);
  return z;
}

// Draw order is pinned for reproducibility: layer weights row-major in layer
// order (biases stay zero), then the embedding table row-major.
inline Network init_network(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (spec.hidden_dims.empty())
    throw std::invalid_argument("init_network: at least one hidden layer required");
  Rng rng(seed);
  Network net;
  net.spec = spec;
  int in = spec.in_width();
  std::vector<int> outs = spec.hidden_dims;
  outs.push_back(spec.input_dim);
  for (int out : outs) {
    DenseLayer layer{Matrix(out, in), Vec(out, 0.0)};
    double bound = std::sqrt(3.0 / in);
    for (double& w : layer.w.data) w = rng.uniform(-bound, bound);
    net.layers.push_back(std::move(layer));
    in = out;
  }
  net.embed = Matrix(spec.num_classes, spec.num_classes > 0 ? spec.cond_embed_dim : 0);
  for (double& e : net.embed.data) e = rng.uniform(-0.5, 0.5);
  return net;
}

inline void check_class_id(const NetworkSpec& spec, int class_id) {
  int limit = spec.num_classes > 0 ? spec.num_classes : 1;
  if (class_id < 0 || class_id >= limit)
    throw std::invalid_argument("class_id " + std::to_string(class_id) + " out of range [0, " +
                                std::to_string(limit) + ")");
}

// Activations cached by the forward pass, reused by both backward passes.
struct ForwardTrace {
  Vec input;                // assembled [x | time features | class embedding]
  std::vector<Vec> pre;     // pre-activation z per layer
  std::vector<Vec> post;    // post-activation h per layer (last entry linear)
  int class_id = 0;
};

inline Vec assemble_input(const Network& net, const Vec& x, double t, int class_id) {
  const NetworkSpec& s = net.spec;
  if (int(x.size()) != s.input_dim) throw std::invalid_argument("forward: x has wrong dimension");
  if (t < 0.0 || t > 1.0) throw std::invalid_argument("forward: t outside [0, 1]");
  check_class_id(s, class_id);
  Vec u(s.in_width());
  for (int i = 0; i < s.input_dim; ++i) u[i] = x[i];
  time_features(t, s.time_embed_dim, u.data() + s.input_dim);
  if (s.cond_width() > 0)
    for (int j = 0; j < s.cond_embed_dim; ++j)
      u[s.input_dim + s.time_embed_dim + j] = net.embed.at(class_id, j);
  return u;
}

inline Vec forward_trace(const Network& net, const Vec& x, double t, int class_id,
                         ForwardTrace& trace) {
  if (net.layers.empty()) throw std::invalid_argument("forward: network has no layers");
  trace.input = assemble_input(net, x, t, class_id);
  trace.class_id = class_id;
  trace.pre.clear();
  trace.post.clear();
  const Vec* h = &trace.input;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    Vec z = matvec(net.layers[i].w, *h);
    axpy(1.0, net.layers[i].b, z);
    trace.pre.push_back(std::move(z));
    const Vec& zr = trace.pre.back();
    if (i + 1 < net.layers.size()) {
      Vec a(zr.size());
      for (std::size_t k = 0; k < zr.size(); ++k) a[k] = activate(net.spec.activation, zr[k]);
      trace.post.push_back(std::move(a));
    } else {
      trace.post.push_back(zr);  // output layer is linear
    }
    h = &trace.post.back();
  }
  return trace.post.back();
}

inline Vec forward(const Network& net, const Vec& x, double t, int class_id = 0) {
  ForwardTrace trace;
  return forward_trace(net, x, t, class_id, trace);
}

// Gradients of upstream^T * output w.r.t. every parameter, accumulated into a
// zero_like(net) shape. Embedding rows other than trace.class_id stay zero.
inline Network backward_params(const Network& net, const ForwardTrace& trace,
                               const Vec& upstream) {
  std::size_t layer_count = net.layers.size();
  if (upstream.size() != net.layers.back().b.size())
    throw std::invalid_argument("backward_params: upstream has wrong dimension");
  Network grads = zero_like(net);
  Vec delta = upstream;
  for (std::size_t i = layer_count; i-- > 0;) {
    const Vec& h_in = (i == 0) ? trace.input : trace.post[i - 1];
    Matrix& gw = grads.layers[i].w;
    for (int r = 0; r < gw.rows; ++r)
      for (int c = 0; c < gw.cols; ++c) gw.at(r, c) = delta[r] * h_in[c];
    grads.layers[i].b = delta;
    Vec back = matvec_t(net.layers[i].w, delta);
    if (i == 0) {
      const NetworkSpec& s = net.spec;
      if (s.cond_width() > 0)
        for (int j = 0; j < s.cond_embed_dim; ++j)
          grads.embed.at(trace.class_id, j) = back[s.input_dim + s.time_embed_dim + j];
      break;
    }
    for (std::size_t k = 0; k < back.size(); ++k)
      back[k] *= activate_deriv(net.spec.activation, trace.pre[i - 1][k]);
    delta = std::move(back);
  }
  return grads;
}

// Gradient of upstream^T * output w.r.t. the state input x, parameters fixed.
inline Vec backward_input(const Network& net, const ForwardTrace& trace, const Vec& upstream) {
  if (upstream.size() != net.layers.back().b.size())
    throw std::invalid_argument("backward_input: upstream has wrong dimension");
  Vec delta = upstream;
  for (std::size_t i = net.layers.size(); i-- > 0;) {
    Vec back = matvec_t(net.layers[i].w, delta);
    if (i == 0) {
      back.resize(net.spec.input_dim);
      return back;
    }
    for (std::size_t k = 0; k < back.size(); ++k)
      back[k] *= activate_deriv(net.spec.activation, trace.pre[i - 1][k]);
    delta = std::move(back);
  }
  throw std::invalid_argument("backward_input: network has no layers");
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline void adam_update(double* p, double* m, double* v, const double* g, std::size_t n,
                        long long step, const AdamConfig& c) {
  double bc1 = 1.0 - std::pow(c.beta1, double(step));
  double bc2 = 1.0 - std::pow(c.beta2, double(step));
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
    p[i] -= c.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + c.eps);
  }
}

inline void check_grad_block_finite(const Vec& g, const std::string& name) {
  if (!all_finite(g)) throw numeric_abort("non-finite gradient in " + name);
}

struct AdamState {
  AdamConfig cfg;
  long long step = 0;
  Network m, v;
};

inline AdamState make_adam(const Network& shape, AdamConfig cfg = {}) {
  return AdamState{cfg, 0, zero_like(shape), zero_like(shape)};
}

inline void adam_step(AdamState& st, Network& params, const Network& grads) {
  if (grads.layers.size() != params.layers.size())
    throw std::invalid_argument("adam_step: layer count mismatch");
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    check_grad_block_finite(grads.layers[i].w.data, "layer " + std::to_string(i + 1) + " weights");
    check_grad_block_finite(grads.layers[i].b, "layer " + std::to_string(i + 1) + " bias");
  }
  check_grad_block_finite(grads.embed.data, "embedding");
  st.step += 1;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    auto& p = params.layers[i];
    auto& g = grads.layers[i];
    if (g.w.data.size() != p.w.data.size() || g.b.size() != p.b.size())
      throw std::invalid_argument("adam_step: shape mismatch in layer " + std::to_string(i + 1));
    adam_update(p.w.data.data(), st.m.layers[i].w.data.data(), st.v.layers[i].w.data.data(),
                g.w.data.data(), p.w.data.size(), st.step, st.cfg);
    adam_update(p.b.data(), st.m.layers[i].b.data(), st.v.layers[i].b.data(), g.b.data(),
                p.b.size(), st.step, st.cfg);
  }
  if (grads.embed.data.size() != params.embed.data.size())
    throw std::invalid_argument("adam_step: embedding shape mismatch");
  adam_update(params.embed.data.data(), st.m.embed.data.data(), st.v.embed.data.data(),
              grads.embed.data.data(), params.embed.data.size(), st.step, st.cfg);
}

// Flat-vector Adam for asset parameters.
struct AdamVecState {
  AdamConfig cfg;
  long long step = 0;
  Vec m, v;
};

inline AdamVecState make_adam_vec(std::size_t n, AdamConfig cfg = {}) {
  return AdamVecState{cfg, 0, Vec(n, 0.0), Vec(n, 0.0)};
}

inline void adam_step(AdamVecState& st, Vec& params, const Vec& grads) {
  if (params.size() != st.m.size() || grads.size() != params.size())
    throw std::invalid_argument("adam_step: vector shape mismatch");
  check_grad_block_finite(grads, "asset parameters");
  st.step += 1;
  adam_update(params.data(), st.m.data(), st.v.data(), grads.data(), params.size(), st.step,
              st.cfg);
}

// ---- checkpoint format ----
// "RFPR" | u32 version | u32 input_dim | u32 num_classes | u32 cond_embed_dim
// | u8 activation | u32 layer_count | layer_count x u32 output width
// | f32 payload: per layer weights row-major then bias, then embedding
// row-major. time_embed_dim is recovered from the payload length.

inline constexpr char kPriorMagic[4] = {'R', 'F', 'P', 'R'};
inline constexpr std::uint32_t kPriorVersion = 1;

inline void save_checkpoint(const Network& net, std::ostream& os) {
  const NetworkSpec& s = net.spec;
  io::write_magic(os, kPriorMagic);
  io::write_u32(os, kPriorVersion);
  io::write_u32(os, std::uint32_t(s.input_dim));
  io::write_u32(os, std::uint32_t(s.num_classes));
  io::write_u32(os, std::uint32_t(s.cond_width() > 0 ? s.cond_embed_dim : 0));
  io::write_u8(os, std::uint8_t(s.activation));
  io::write_u32(os, std::uint32_t(net.layers.size()));
  for (const auto& l : net.layers) io::write_u32(os, std::uint32_t(l.w.rows));
  for (const auto& l : net.layers) {
    for (double w : l.w.data) io::write_f32(os, float(w));
    for (double b : l.b) io::write_f32(os, float(b));
  }
  for (double e : net.embed.data) io::write_f32(os, float(e));
}

inline void save_checkpoint(const Network& net, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open " + path + " for writing");
  save_checkpoint(net, os);
  os.flush();
  if (!os) throw io_error("write failed: " + path);
}

inline Network load_checkpoint(std::istream& is) {
  io::expect_magic(is, kPriorMagic);
  io::expect_version(is, kPriorVersion);
  NetworkSpec spec;
  spec.input_dim = int(io::read_u32(is, "input_dim"));
  spec.num_classes = int(io::read_u32(is, "num_classes"));
  spec.cond_embed_dim = int(io::read_u32(is, "cond_embed_dim"));
  spec.activation = Activation(io::read_u8(is, "activation"));
  if (spec.activation != Activation::Tanh && spec.activation != Activation::Silu)
    throw io_error("unknown activation code");
  std::uint32_t layer_count = io::read_u32(is, "layer_count");
  if (layer_count == 0 || layer_count > 64) throw io_error("implausible layer count");
  std::vector<int> widths(layer_count);
  for (auto& w : widths) {
    w = int(io::read_u32(is, "layer width"));
    if (w <= 0) throw io_error("non-positive layer width");
  }
  if (widths.back() != spec.input_dim) throw io_error("output width does not match input_dim");
  spec.hidden_dims.assign(widths.begin(), widths.end() - 1);

  std::ostringstream rest;
  rest << is.rdbuf();
  std::string payload = rest.str();
  if (payload.size() % 4 != 0) throw io_error("payload is not a whole number of f32 values");
  std::size_t total = payload.size() / 4;

  // Recover the first layer's input width (and so time_embed_dim) from the
  // float count; every other shape is pinned by the header.
  std::size_t known = std::size_t(spec.num_classes) * spec.cond_embed_dim;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    known += std::size_t(widths[i]);  // bias
    if (i > 0) known += std::size_t(widths[i]) * widths[i - 1];
  }
  if (total < known) throw io_error("payload too small for declared shapes");
  std::size_t w1_floats = total - known;
  if (w1_floats % std::size_t(widths[0]) != 0)
    throw io_error("payload size inconsistent with first layer width");
  int in1 = int(w1_floats / std::size_t(widths[0]));
  int cond_w = spec.num_classes > 0 ? spec.cond_embed_dim : 0;
  int ted = in1 - spec.input_dim - cond_w;
  if (ted < 0 || (ted > 0 && ted % 2 == 0))
    throw io_error("payload size implies invalid time feature width");
  spec.time_embed_dim = ted;
  spec.validate();

  std::size_t pos = 0;
  auto next_f32 = [&payload, &pos]() {
    std::uint32_t bits = std::uint32_t(std::uint8_t(payload[pos])) |
                         std::uint32_t(std::uint8_t(payload[pos + 1])) << 8 |
                         std::uint32_t(std::uint8_t(payload[pos + 2])) << 16 |
                         std::uint32_t(std::uint8_t(payload[pos + 3])) << 24;
    pos += 4;
    float v;
    std::memcpy(&v, &bits, 4);
    return double(v);
  };

  Network net;
  net.spec = spec;
  int in = in1;
  for (int out : widths) {
    DenseLayer layer{Matrix(out, in), Vec(out)};
    for (double& w : layer.w.data) w = next_f32();
    for (double& b : layer.b) b = next_f32();
    net.layers.push_back(std::move(layer));
    in = out;
  }
  net.embed = Matrix(spec.num_classes, spec.num_classes > 0 ? spec.cond_embed_dim : 0);
  for (double& e : net.embed.data) e = next_f32();
  return net;
}

inline Network load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw missing_artifact_error("checkpoint not found: " + path);
  return load_checkpoint(is);
}

}  // namespace flowlab
