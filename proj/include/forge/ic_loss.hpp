#pragma once

#include <vector>

#include "forge/autodiff.hpp"
#include "forge/batches.hpp"
#include "forge/ic.hpp"
#include "forge/network.hpp"

namespace forge {

inline Tensor batch_tensor(const WindowBatch& b) {
  return Tensor({b.n(), kChannels, b.m()}, b.x);
}

namespace detail {

/// Tape twin of kernel_g. Degenerate input collapses to a constant 0.5
/// vector, cutting the gradient path exactly like the value convention.
inline Var kernel_g_on(Tape& t, Var x, const KernelParams& kp) {
  const Tensor& xv = t.value(x);
  if (xv.numel() < 2) throw Error("kernel_g: need at least 2 values");
  if (population_std(xv.data) < kp.eps)
    return t.leaf(Tensor(xv.shape, std::vector<double>(xv.numel(), 0.5)));
  Var mean = t.mean_all(x);
  Var centered = t.sub(x, mean);
  Var sd = t.sqrt_(t.mean_all(t.mul(centered, centered)));
  return t.sigmoid_(t.scale(t.div(centered, sd), kp.p / 2.0));
}

/// Tape Pearson; a degenerate side yields a constant 0 (no gradient).
inline Var pearson_on(Tape& t, Var x, Var y, bool* degenerate) {
  Var cx = t.sub(x, t.mean_all(x));
  Var cy = t.sub(y, t.mean_all(y));
  const auto ss = [&](Var c) {
    double s = 0.0;
    for (double v : t.value(c).data) s += v * v;
    return s;
  };
  if (ss(cx) < 1e-24 || ss(cy) < 1e-24) {
    if (degenerate) *degenerate = true;
    return t.leaf(Tensor::scalar(0.0));
  }
  if (degenerate) *degenerate = false;
  Var sxy = t.sum_all(t.mul(cx, cy));
  Var sxx = t.sum_all(t.mul(cx, cx));
  Var syy = t.sum_all(t.mul(cy, cy));
  return t.div(sxy, t.sqrt_(t.mul(sxx, syy)));
}

}  // namespace detail

struct IcLossResult {
  double loss = 0.0;
  std::vector<double> day_ic;  // surrogate IC per batch, in input order
  NetGradients grads;          // d(loss)/d(theta), param_refs order
  std::size_t degenerate_days = 0;
};

/// Loss = -(1/q) * sum of surrogate ICs over the q batches. Each batch gets
/// its own tape (the unrolled graphs are large); gradients accumulate
/// linearly, so the per-batch sum equals the joint gradient.
inline IcLossResult ic_loss(const NetworkGraph& net, const std::vector<const WindowBatch*>& days,
                            const KernelParams& kp = {}) {
  if (days.empty()) throw Error("ic_loss: empty batch set");
  IcLossResult res;
  const double q = static_cast<double>(days.size());
  for (const WindowBatch* b : days) {
    if (b->n() < 3) throw Error("ic_loss: batch needs at least 3 symbols");
    Tape tape;
    ForwardPass fp = run_forward(tape, net, batch_tensor(*b));
    Var x = tape.reshape(fp.output, {b->n()});
    Var gy = tape.leaf(Tensor({b->n()}, kernel_g(b->returns, kp)));
    bool degen = false;
    Var ic = detail::pearson_on(tape, detail::kernel_g_on(tape, x, kp), gy, &degen);
    if (degen) ++res.degenerate_days;
    const double ic_val = tape.value(ic).data[0];
    res.day_ic.push_back(ic_val);
    res.loss -= ic_val / q;
    tape.backward(ic, Tensor::scalar(-1.0 / q));
    accumulate(res.grads, collect_grads(tape, fp));
  }
  return res;
}

inline IcLossResult ic_loss(const NetworkGraph& net, const std::vector<WindowBatch>& days,
                            const KernelParams& kp = {}) {
  std::vector<const WindowBatch*> ptrs;
  ptrs.reserve(days.size());
  for (const auto& b : days) ptrs.push_back(&b);
  return ic_loss(net, ptrs, kp);
}

}  // namespace forge
