// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "dlab/tape.hpp"

#include <algorithm>
#include <atomic>
#include <initializer_list>
#include <type_traits>
#include <cmath>
#include <string>

namespace dlab {

std::string_view op_name(Op op) noexcept {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kAdd: return "add";
    case Op::kAddBias: return "add_bias";
    case Op::kSub: return "sub";
    case Op::kScale: return "scale";
    case Op::kMul: return "mul";
    case Op::kMatmul: return "matmul";
    case Op::kConv2d: return "conv2d";
    case Op::kRelu: return "relu";
    case Op::kSigmoid: return "sigmoid";
    case Op::kLogSoftmax: return "log_softmax";
    case Op::kCrossEntropy: return "cross_entropy";
    case Op::kKlLogits: return "kl_logits";
    case Op::kMse: return "mse";
    case Op::kL1: return "l1";
    case Op::kClip: return "clip";
    case Op::kReshape: return "reshape";
    case Op::kMean: return "mean";
    case Op::kSum: return "sum";
    case Op::kSliceRows: return "slice_rows";
    case Op::kConcatRows: return "concat_rows";
    case Op::kTranspose: return "transpose";
    case Op::kRowNormalize: return "row_normalize";
    case Op::kGather: return "gather";
    case Op::kTileBatch: return "tile_batch";
  }
  return "unknown";
}

namespace {

std::atomic<std::uint32_t> next_tape_id{1};

template <class S>
bool is_zero(const S& x) {
  return primal(x) == 0.0 && tangent(x) == 0.0;
}

[[noreturn]] void shape_fail(Op op, const std::string& detail) {
  fail(ErrorCode::kShape, std::string(op_name(op)) + ": " + detail);
}

void expect_same(Op op, const Shape& a, const Shape& b) {
  if (a != b) shape_fail(op, "shapes " + shape_string(a) + " and " + shape_string(b) + " differ");
}

void expect_rank(Op op, const Shape& a, std::size_t rank) {
  if (a.size() != rank)
    shape_fail(op, "expected rank " + std::to_string(rank) + ", got " + shape_string(a));
}

template <class S>
S sigmoid_of(const S& x) {
  if (primal(x) >= 0.0) return S(1.0) / (S(1.0) + exp(-x));
  const S e = exp(x);
  return e / (S(1.0) + e);
}

double sigmoid_of(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Row-wise log-softmax of an [n, c] block.
template <class S>
void log_softmax_rows(const S* z, std::size_t n, std::size_t c, double inv_tau, S* out) {
  for (std::size_t i = 0; i < n; ++i) {
    const S* row = z + i * c;
    std::size_t arg = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (primal(row[j]) > primal(row[arg])) arg = j;
    const S m = row[arg] * inv_tau;
    S acc(0.0);
    for (std::size_t j = 0; j < c; ++j) acc += exp(row[j] * inv_tau - m);
    const S lse = m + log(acc);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = row[j] * inv_tau - lse;
  }
}

template <class S>
void matmul_kernel(const S* a, const S* b, S* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    S* crow = c + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const S av = a[i * k + p];
      if (is_zero(av)) continue;
      const S* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class S>
struct Kernels {
  using TensorT = BasicTensor<S>;
  using Record = typename Tape<S>::Record;

  static TensorT forward(const Record& r, const std::vector<const TensorT*>& in) {
    switch (r.op) {
      case Op::kInput:
        return r.value;
      case Op::kAdd: {
        TensorT out = *in[0];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += (*in[1])[i];
        return out;
      }
      case Op::kSub: {
        TensorT out = *in[0];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= (*in[1])[i];
        return out;
      }
      case Op::kMul: {
        TensorT out = *in[0];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*in[1])[i];
        return out;
      }
      case Op::kScale: {
        TensorT out = *in[0];
        for (auto& x : out.data()) x *= r.scalar_a;
        return out;
      }
      case Op::kRelu: {
        TensorT out = *in[0];
        for (auto& x : out.data())
          if (!(primal(x) > 0.0)) x = S(0.0);
        return out;
      }
      case Op::kSigmoid: {
        TensorT out = *in[0];
        for (auto& x : out.data()) x = sigmoid_of(x);
        return out;
      }
      case Op::kClip: {
        TensorT out = *in[0];
        for (auto& x : out.data()) {
          if (primal(x) < r.scalar_a) x = S(r.scalar_a);
          else if (primal(x) > r.scalar_b) x = S(r.scalar_b);
        }
        return out;
      }
      case Op::kAddBias: {
        TensorT out = *in[0];
        const std::size_t m = in[1]->size();
        const std::size_t n = out.size() / m;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) out[i * m + j] += (*in[1])[j];
        return out;
      }
      case Op::kMatmul: {
        const std::size_t n = in[0]->dim(0), k = in[0]->dim(1), m = in[1]->dim(1);
        TensorT out({n, m});
        matmul_kernel(in[0]->ptr(), in[1]->ptr(), out.ptr(), n, k, m);
        return out;
      }
      case Op::kConv2d:
        return conv_forward(*in[0], *in[1], *in[2]);
      case Op::kLogSoftmax: {
        TensorT out(in[0]->shape());
        log_softmax_rows(in[0]->ptr(), in[0]->dim(0), in[0]->dim(1), 1.0, out.ptr());
        return out;
      }
      case Op::kCrossEntropy: {
        const std::size_t n = in[0]->dim(0), c = in[0]->dim(1);
        std::vector<S> logp(n * c);
        log_softmax_rows(in[0]->ptr(), n, c, 1.0, logp.data());
        S acc(0.0);
        for (std::size_t i = 0; i < n; ++i) acc -= logp[i * c + r.ints[i]];
        return TensorT({1}, acc / static_cast<double>(n));
      }
      case Op::kKlLogits: {
        const std::size_t n = in[0]->dim(0), c = in[0]->dim(1);
        const double tau = r.scalar_a;
        std::vector<S> logq(n * c), logp(n * c);
        log_softmax_rows(in[0]->ptr(), n, c, 1.0 / tau, logq.data());
        log_softmax_rows(in[1]->ptr(), n, c, 1.0 / tau, logp.data());
        S acc(0.0);
        for (std::size_t i = 0; i < n * c; ++i) acc += exp(logp[i]) * (logp[i] - logq[i]);
        return TensorT({1}, acc * (tau * tau / static_cast<double>(n)));
      }
      case Op::kMse: {
        S acc(0.0);
        for (std::size_t i = 0; i < in[0]->size(); ++i) {
          const S d = (*in[0])[i] - (*in[1])[i];
          acc += d * d;
        }
        return TensorT({1}, acc / static_cast<double>(in[0]->size()));
      }
      case Op::kL1: {
        S acc(0.0);
        for (const auto& x : in[0]->data()) acc += primal(x) < 0.0 ? -x : x;
        return TensorT({1}, acc);
      }
      case Op::kReshape:
        return in[0]->reshaped(r.shape);
      case Op::kMean:
      case Op::kSum: {
        S acc(0.0);
        for (const auto& x : in[0]->data()) acc += x;
        if (r.op == Op::kMean) acc = acc / static_cast<double>(in[0]->size());
        return TensorT({1}, acc);
      }
      case Op::kSliceRows: {
        Shape s = in[0]->shape();
        const std::size_t row = in[0]->size() / s[0];
        s[0] = r.ints[1] - r.ints[0];
        std::vector<S> data(in[0]->data().begin() + static_cast<std::ptrdiff_t>(r.ints[0] * row),
                            in[0]->data().begin() + static_cast<std::ptrdiff_t>(r.ints[1] * row));
        return TensorT(std::move(s), std::move(data));
      }
      case Op::kConcatRows: {
        Shape s = in[0]->shape();
        s[0] = 0;
        std::vector<S> data;
        for (const TensorT* t : in) {
          s[0] += t->dim(0);
          data.insert(data.end(), t->data().begin(), t->data().end());
        }
        return TensorT(std::move(s), std::move(data));
      }
      case Op::kTranspose: {
        const std::size_t n = in[0]->dim(0), m = in[0]->dim(1);
        TensorT out({m, n});
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) out[j * n + i] = (*in[0])[i * m + j];
        return out;
      }
      case Op::kRowNormalize: {
        const std::size_t n = in[0]->dim(0), m = in[0]->dim(1);
        TensorT out(in[0]->shape());
        for (std::size_t i = 0; i < n; ++i) {
          const S* row = in[0]->ptr() + i * m;
          S sq(0.0);
          for (std::size_t j = 0; j < m; ++j) sq += row[j] * row[j];
          if (!(primal(sq) > 0.0)) continue;
          const S norm = sqrt(sq);
          for (std::size_t j = 0; j < m; ++j) out[i * m + j] = row[j] / norm;
        }
        return out;
      }
      case Op::kGather: {
        const std::size_t n = in[0]->dim(0), c = in[0]->dim(1);
        TensorT out({n});
        for (std::size_t i = 0; i < n; ++i) out[i] = (*in[0])[i * c + r.ints[i]];
        return out;
      }
      case Op::kTileBatch: {
        Shape s = in[0]->shape();
        s[0] = r.ints[0];
        std::vector<S> data;
        data.reserve(in[0]->size() * r.ints[0]);
        for (std::size_t k = 0; k < r.ints[0]; ++k)
          data.insert(data.end(), in[0]->data().begin(), in[0]->data().end());
        return TensorT(std::move(s), std::move(data));
      }
    }
    fail(ErrorCode::kInternal, "unhandled op in forward");
  }

  static TensorT conv_forward(const TensorT& x, const TensorT& w, const TensorT& b) {
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t o = w.dim(0), k = w.dim(2);
    const std::size_t oh = h - k + 1, ow = wd - k + 1;
    TensorT out({n, o, oh, ow});
    for (std::size_t bi = 0; bi < n; ++bi) {
      for (std::size_t oc = 0; oc < o; ++oc) {
        S* plane = out.ptr() + (bi * o + oc) * oh * ow;
        for (std::size_t i = 0; i < oh * ow; ++i) plane[i] = b[oc];
        for (std::size_t ic = 0; ic < c; ++ic) {
          const S* src = x.ptr() + (bi * c + ic) * h * wd;
          for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
              const S wv = w[((oc * c + ic) * k + ky) * k + kx];
              for (std::size_t y = 0; y < oh; ++y) {
                const S* srow = src + (y + ky) * wd + kx;
                S* orow = plane + y * ow;
                for (std::size_t xx = 0; xx < ow; ++xx) orow[xx] += wv * srow[xx];
              }
            }
          }
        }
      }
    }
    return out;
  }

  // Accumulates into grads[i] for every input i whose pointer is non-null.
  static void backward(const Record& r, const TensorT& out, const TensorT& g,
                       const std::vector<const TensorT*>& in, const std::vector<TensorT*>& grads) {
    switch (r.op) {
      case Op::kInput:
        return;
      case Op::kAdd:
      case Op::kSub:
        if (grads[0])
          for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i];
        if (grads[1]) {
          if (r.op == Op::kAdd)
            for (std::size_t i = 0; i < g.size(); ++i) (*grads[1])[i] += g[i];
          else
            for (std::size_t i = 0; i < g.size(); ++i) (*grads[1])[i] -= g[i];
        }
        return;
      case Op::kMul:
        if (grads[0])
          for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i] * (*in[1])[i];
        if (grads[1])
          for (std::size_t i = 0; i < g.size(); ++i) (*grads[1])[i] += g[i] * (*in[0])[i];
        return;
      case Op::kScale:
        if (grads[0])
          for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i] * r.scalar_a;
        return;
      case Op::kRelu:
        if (grads[0])
          for (std::size_t i = 0; i < g.size(); ++i)
            if (primal((*in[0])[i]) > 0.0) (*grads[0])[i] += g[i];
        return;
      case Op::kSigmoid:
        if (grads[0])
          for (std::size_t i = 0; i < g.size(); ++i)
            (*grads[0])[i] += g[i] * out[i] * (S(1.0) - out[i]);
        return;
      case Op::kClip:
        if (grads[0])
          for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = primal((*in[0])[i]);
            if (x >= r.scalar_a && x <= r.scalar_b) (*grads[0])[i] += g[i];
          }
        return;
      case Op::kAddBias: {
        if (grads[0])
          for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i];
        if (grads[1]) {
          const std::size_t m = in[1]->size();
          const std::size_t n = g.size() / m;
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) (*grads[1])[j] += g[i * m + j];
        }
        return;
      }
      case Op::kMatmul: {
        const std::size_t n = in[0]->dim(0), k = in[0]->dim(1), m = in[1]->dim(1);
        const S* a = in[0]->ptr();
        const S* b = in[1]->ptr();
        if (grads[0]) {
          S* ga = grads[0]->ptr();
          for (std::size_t i = 0; i < n; ++i) {
            const S* grow = g.ptr() + i * m;
            for (std::size_t p = 0; p < k; ++p) {
              const S* brow = b + p * m;
              S acc(0.0);
              for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
              ga[i * k + p] += acc;
            }
          }
        }
        if (grads[1]) {
          S* gb = grads[1]->ptr();
          for (std::size_t i = 0; i < n; ++i) {
            const S* grow = g.ptr() + i * m;
            for (std::size_t p = 0; p < k; ++p) {
              const S av = a[i * k + p];
              if (is_zero(av)) continue;
              S* gbrow = gb + p * m;
              for (std::size_t j = 0; j < m; ++j) gbrow[j] += av * grow[j];
            }
          }
        }
        return;
      }
      case Op::kConv2d:
        conv_backward(*in[0], *in[1], g, grads[0], grads[1], grads[2]);
        return;
      case Op::kLogSoftmax: {
        if (!grads[0]) return;
        const std::size_t n = g.dim(0), c = g.dim(1);
        for (std::size_t i = 0; i < n; ++i) {
          S gs(0.0);
          for (std::size_t j = 0; j < c; ++j) gs += g[i * c + j];
          for (std::size_t j = 0; j < c; ++j)
            (*grads[0])[i * c + j] += g[i * c + j] - exp(out[i * c + j]) * gs;
        }
        return;
      }
      case Op::kCrossEntropy: {
        if (!grads[0]) return;
        const std::size_t n = in[0]->dim(0), c = in[0]->dim(1);
        std::vector<S> logp(n * c);
        log_softmax_rows(in[0]->ptr(), n, c, 1.0, logp.data());
        const S scale = g[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j) {
            S p = exp(logp[i * c + j]);
            if (j == r.ints[i]) p -= S(1.0);
            (*grads[0])[i * c + j] += p * scale;
          }
        return;
      }
      case Op::kKlLogits: {
        const std::size_t n = in[0]->dim(0), c = in[0]->dim(1);
        const double tau = r.scalar_a;
        std::vector<S> logq(n * c), logp(n * c);
        log_softmax_rows(in[0]->ptr(), n, c, 1.0 / tau, logq.data());
        log_softmax_rows(in[1]->ptr(), n, c, 1.0 / tau, logp.data());
        const S scale = g[0] * (tau / static_cast<double>(n));
        for (std::size_t i = 0; i < n; ++i) {
          S row_kl(0.0);
          for (std::size_t j = 0; j < c; ++j) {
            const std::size_t ij = i * c + j;
            row_kl += exp(logp[ij]) * (logp[ij] - logq[ij]);
          }
          for (std::size_t j = 0; j < c; ++j) {
            const std::size_t ij = i * c + j;
            const S p = exp(logp[ij]);
            if (grads[0]) (*grads[0])[ij] += (exp(logq[ij]) - p) * scale;
            if (grads[1]) (*grads[1])[ij] += p * ((logp[ij] - logq[ij]) - row_kl) * scale;
          }
        }
        return;
      }
      case Op::kMse: {
        const S scale = g[0] * (2.0 / static_cast<double>(in[0]->size()));
        for (std::size_t i = 0; i < in[0]->size(); ++i) {
          const S d = ((*in[0])[i] - (*in[1])[i]) * scale;
          if (grads[0]) (*grads[0])[i] += d;
          if (grads[1]) (*grads[1])[i] -= d;
        }
        return;
      }
      case Op::kL1:
        if (grads[0])
          for (std::size_t i = 0; i < in[0]->size(); ++i) {
            const double x = primal((*in[0])[i]);
            if (x > 0.0) (*grads[0])[i] += g[0];
            else if (x < 0.0) (*grads[0])[i] -= g[0];
          }
        return;
      case Op::kReshape:
        if (grads[0])
          for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i];
        return;
      case Op::kMean:
      case Op::kSum: {
        if (!grads[0]) return;
        const S v = r.op == Op::kMean ? g[0] / static_cast<double>(in[0]->size()) : g[0];
        for (auto& x : grads[0]->data()) x += v;
        return;
      }
      case Op::kSliceRows: {
        if (!grads[0]) return;
        const std::size_t row = in[0]->size() / in[0]->dim(0);
        S* dst = grads[0]->ptr() + r.ints[0] * row;
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
        return;
      }
      case Op::kConcatRows: {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < in.size(); ++k) {
          if (grads[k])
            for (std::size_t i = 0; i < in[k]->size(); ++i) (*grads[k])[i] += g[offset + i];
          offset += in[k]->size();
        }
        return;
      }
      case Op::kTranspose: {
        if (!grads[0]) return;
        const std::size_t n = in[0]->dim(0), m = in[0]->dim(1);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) (*grads[0])[i * m + j] += g[j * n + i];
        return;
      }
      case Op::kRowNormalize: {
        if (!grads[0]) return;
        const std::size_t n = in[0]->dim(0), m = in[0]->dim(1);
        for (std::size_t i = 0; i < n; ++i) {
          const S* row = in[0]->ptr() + i * m;
          S sq(0.0);
          for (std::size_t j = 0; j < m; ++j) sq += row[j] * row[j];
          if (!(primal(sq) > 0.0)) continue;
          const S norm = sqrt(sq);
          S dot(0.0);
          for (std::size_t j = 0; j < m; ++j) dot += out[i * m + j] * g[i * m + j];
          for (std::size_t j = 0; j < m; ++j)
            (*grads[0])[i * m + j] += (g[i * m + j] - out[i * m + j] * dot) / norm;
        }
        return;
      }
      case Op::kGather: {
        if (!grads[0]) return;
        const std::size_t c = in[0]->dim(1);
        for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i * c + r.ints[i]] += g[i];
        return;
      }
      case Op::kTileBatch: {
        if (!grads[0]) return;
        const std::size_t m = in[0]->size();
        for (std::size_t k = 0; k < r.ints[0]; ++k)
          for (std::size_t i = 0; i < m; ++i) (*grads[0])[i] += g[k * m + i];
        return;
      }
    }
    fail(ErrorCode::kInternal, "unhandled op in backward");
  }

  static void conv_backward(const TensorT& x, const TensorT& w, const TensorT& g, TensorT* gx,
                            TensorT* gw, TensorT* gb) {
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t o = w.dim(0), k = w.dim(2);
    const std::size_t oh = h - k + 1, ow = wd - k + 1;
    for (std::size_t bi = 0; bi < n; ++bi) {
      for (std::size_t oc = 0; oc < o; ++oc) {
        const S* gplane = g.ptr() + (bi * o + oc) * oh * ow;
        if (gb) {
          S acc(0.0);
          for (std::size_t i = 0; i < oh * ow; ++i) acc += gplane[i];
          (*gb)[oc] += acc;
        }
        for (std::size_t ic = 0; ic < c; ++ic) {
          const std::size_t src_off = (bi * c + ic) * h * wd;
          for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
              const std::size_t widx = ((oc * c + ic) * k + ky) * k + kx;
              S acc(0.0);
              const S wv = w[widx];
              for (std::size_t y = 0; y < oh; ++y) {
                const S* grow = gplane + y * ow;
                const std::size_t base = src_off + (y + ky) * wd + kx;
                if (gw)
                  for (std::size_t xx = 0; xx < ow; ++xx) acc += grow[xx] * x[base + xx];
                if (gx) {
                  S* dst = gx->ptr() + base;
                  for (std::size_t xx = 0; xx < ow; ++xx) dst[xx] += wv * grow[xx];
                }
              }
              if (gw) (*gw)[widx] += acc;
            }
          }
        }
      }
    }
  }
};

}  // namespace

template <class S>
Tape<S>::Tape() : id_(next_tape_id.fetch_add(1, std::memory_order_relaxed)) {}

template <class S>
const typename Tape<S>::Record& Tape<S>::at(Var v) const {
  require(v.tape == id_, ErrorCode::kInvalidArgument, "value belongs to a different tape");
  require(v.index < records_.size(), ErrorCode::kInvalidArgument, "value index out of range");
  return records_[v.index];
}

template <class S>
Var Tape<S>::push(Record record) {
  if (record.op != Op::kInput) {
    std::vector<const TensorT*> in;
    in.reserve(record.inputs.size());
    bool grad = false;
    for (std::uint32_t i : record.inputs) {
      in.push_back(&records_[i].value);
      grad = grad || records_[i].requires_grad;
    }
    record.requires_grad = grad;
    record.value = Kernels<S>::forward(record, in);
  }
  records_.push_back(std::move(record));
  return Var{id_, static_cast<std::uint32_t>(records_.size() - 1)};
}

template <class S>
Var Tape<S>::input(TensorT value, bool requires_grad) {
  require(!value.empty(), ErrorCode::kShape, "input: empty tensor");
  Record r;
  r.op = Op::kInput;
  r.value = std::move(value);
  r.requires_grad = requires_grad;
  return push(std::move(r));
}

template <class S>
Var Tape<S>::constant(const Tensor& value) {
  if constexpr (std::is_same_v<S, double>) {
    return input(value, false);
  } else {
    std::vector<S> data(value.data().begin(), value.data().end());
    return input(TensorT(value.shape(), std::move(data)), false);
  }
}

namespace {

template <class R>
R make_record(Op op, std::initializer_list<Var> inputs) {
  R r;
  r.op = op;
  for (Var v : inputs) r.inputs.push_back(v.index);
  return r;
}

}  // namespace

template <class S>
Var Tape<S>::add(Var a, Var b) {
  expect_same(Op::kAdd, at(a).value.shape(), at(b).value.shape());
  return push(make_record<Record>(Op::kAdd, {a, b}));
}

template <class S>
Var Tape<S>::sub(Var a, Var b) {
  expect_same(Op::kSub, at(a).value.shape(), at(b).value.shape());
  return push(make_record<Record>(Op::kSub, {a, b}));
}

template <class S>
Var Tape<S>::mul(Var a, Var b) {
  expect_same(Op::kMul, at(a).value.shape(), at(b).value.shape());
  return push(make_record<Record>(Op::kMul, {a, b}));
}

template <class S>
Var Tape<S>::scale(Var a, double factor) {
  at(a);
  Record r = make_record<Record>(Op::kScale, {a});
  r.scalar_a = factor;
  return push(std::move(r));
}

template <class S>
Var Tape<S>::relu(Var a) {
  at(a);
  return push(make_record<Record>(Op::kRelu, {a}));
}

template <class S>
Var Tape<S>::sigmoid(Var a) {
  at(a);
  return push(make_record<Record>(Op::kSigmoid, {a}));
}

template <class S>
Var Tape<S>::clip(Var a, double lo, double hi) {
  at(a);
  require(lo <= hi, ErrorCode::kInvalidArgument, "clip: lo > hi");
  Record r = make_record<Record>(Op::kClip, {a});
  r.scalar_a = lo;
  r.scalar_b = hi;
  return push(std::move(r));
}

template <class S>
Var Tape<S>::add_bias(Var x, Var bias) {
  const Shape& xs = at(x).value.shape();
  const Shape& bs = at(bias).value.shape();
  expect_rank(Op::kAddBias, xs, 2);
  expect_rank(Op::kAddBias, bs, 1);
  if (xs[1] != bs[0]) shape_fail(Op::kAddBias, shape_string(xs) + " vs bias " + shape_string(bs));
  return push(make_record<Record>(Op::kAddBias, {x, bias}));
}

template <class S>
Var Tape<S>::matmul(Var a, Var b) {
  const Shape& as = at(a).value.shape();
  const Shape& bs = at(b).value.shape();
  expect_rank(Op::kMatmul, as, 2);
  expect_rank(Op::kMatmul, bs, 2);
  if (as[1] != bs[0]) shape_fail(Op::kMatmul, shape_string(as) + " x " + shape_string(bs));
  return push(make_record<Record>(Op::kMatmul, {a, b}));
}

template <class S>
Var Tape<S>::conv2d(Var x, Var weight, Var bias) {
  const Shape& xs = at(x).value.shape();
  const Shape& ws = at(weight).value.shape();
  const Shape& bs = at(bias).value.shape();
  expect_rank(Op::kConv2d, xs, 4);
  expect_rank(Op::kConv2d, ws, 4);
  expect_rank(Op::kConv2d, bs, 1);
  if (ws[1] != xs[1] || ws[2] != ws[3] || bs[0] != ws[0] || ws[2] > xs[2] || ws[3] > xs[3])
    shape_fail(Op::kConv2d, "input " + shape_string(xs) + ", weight " + shape_string(ws) +
                                ", bias " + shape_string(bs));
  return push(make_record<Record>(Op::kConv2d, {x, weight, bias}));
}

template <class S>
Var Tape<S>::log_softmax(Var logits) {
  expect_rank(Op::kLogSoftmax, at(logits).value.shape(), 2);
  return push(make_record<Record>(Op::kLogSoftmax, {logits}));
}

template <class S>
Var Tape<S>::cross_entropy(Var logits, std::span<const std::size_t> labels) {
  const Shape& s = at(logits).value.shape();
  expect_rank(Op::kCrossEntropy, s, 2);
  if (labels.size() != s[0])
    shape_fail(Op::kCrossEntropy, std::to_string(labels.size()) + " labels for logits " + shape_string(s));
  for (std::size_t y : labels)
    if (y >= s[1]) shape_fail(Op::kCrossEntropy, "label " + std::to_string(y) + " out of range");
  Record r = make_record<Record>(Op::kCrossEntropy, {logits});
  r.ints.assign(labels.begin(), labels.end());
  return push(std::move(r));
}

template <class S>
Var Tape<S>::kl_logits(Var student, Var teacher, double tau) {
  const Shape& ss = at(student).value.shape();
  expect_rank(Op::kKlLogits, ss, 2);
  expect_same(Op::kKlLogits, ss, at(teacher).value.shape());
  require(tau > 0.0, ErrorCode::kInvalidArgument, "kl_logits: temperature must be positive");
  Record r = make_record<Record>(Op::kKlLogits, {student, teacher});
  r.scalar_a = tau;
  return push(std::move(r));
}

template <class S>
Var Tape<S>::mse(Var a, Var b) {
  expect_same(Op::kMse, at(a).value.shape(), at(b).value.shape());
  return push(make_record<Record>(Op::kMse, {a, b}));
}

template <class S>
Var Tape<S>::l1(Var a) {
  at(a);
  return push(make_record<Record>(Op::kL1, {a}));
}

template <class S>
Var Tape<S>::reshape(Var a, Shape shape) {
  if (shape_size(shape) != at(a).value.size())
    shape_fail(Op::kReshape, shape_string(at(a).value.shape()) + " -> " + shape_string(shape));
  Record r = make_record<Record>(Op::kReshape, {a});
  r.shape = std::move(shape);
  return push(std::move(r));
}

template <class S>
Var Tape<S>::mean(Var a) {
  at(a);
  return push(make_record<Record>(Op::kMean, {a}));
}

template <class S>
Var Tape<S>::sum(Var a) {
  at(a);
  return push(make_record<Record>(Op::kSum, {a}));
}

template <class S>
Var Tape<S>::slice_rows(Var a, std::size_t begin, std::size_t end) {
  const Shape& s = at(a).value.shape();
  if (!(begin < end && end <= s[0]))
    shape_fail(Op::kSliceRows, "rows [" + std::to_string(begin) + ", " + std::to_string(end) +
                                   ") of " + shape_string(s));
  Record r = make_record<Record>(Op::kSliceRows, {a});
  r.ints = {begin, end};
  return push(std::move(r));
}

template <class S>
Var Tape<S>::concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), ErrorCode::kShape, "concat_rows: no inputs");
  Record r;
  r.op = Op::kConcatRows;
  const Shape& first = at(parts[0]).value.shape();
  for (Var v : parts) {
    const Shape& s = at(v).value.shape();
    if (s.size() != first.size() || !std::equal(s.begin() + 1, s.end(), first.begin() + 1))
      shape_fail(Op::kConcatRows, shape_string(first) + " vs " + shape_string(s));
    r.inputs.push_back(v.index);
  }
  return push(std::move(r));
}

template <class S>
Var Tape<S>::transpose(Var a) {
  expect_rank(Op::kTranspose, at(a).value.shape(), 2);
  return push(make_record<Record>(Op::kTranspose, {a}));
}

template <class S>
Var Tape<S>::row_normalize(Var a) {
  expect_rank(Op::kRowNormalize, at(a).value.shape(), 2);
  return push(make_record<Record>(Op::kRowNormalize, {a}));
}

template <class S>
Var Tape<S>::gather(Var x, std::span<const std::size_t> index) {
  const Shape& s = at(x).value.shape();
  expect_rank(Op::kGather, s, 2);
  if (index.size() != s[0])
    shape_fail(Op::kGather, std::to_string(index.size()) + " indices for " + shape_string(s));
  for (std::size_t j : index)
    if (j >= s[1]) shape_fail(Op::kGather, "index " + std::to_string(j) + " out of range");
  Record r = make_record<Record>(Op::kGather, {x});
  r.ints.assign(index.begin(), index.end());
  return push(std::move(r));
}

template <class S>
Var Tape<S>::tile_batch(Var a, std::size_t count) {
  const Shape& s = at(a).value.shape();
  if (s.empty() || s[0] != 1 || count == 0)
    shape_fail(Op::kTileBatch, "cannot tile " + shape_string(s) + " " + std::to_string(count) + " times");
  Record r = make_record<Record>(Op::kTileBatch, {a});
  r.ints = {count};
  return push(std::move(r));
}

template <class S>
const typename Tape<S>::TensorT& Tape<S>::value(Var v) const {
  return at(v).value;
}

template <class S>
bool Tape<S>::requires_grad(Var v) const {
  return at(v).requires_grad;
}

template <class S>
Gradients<S> Tape<S>::backward(Var output, const TensorT& seed) const {
  const Record& out = at(output);
  require(seed.shape() == out.value.shape(), ErrorCode::kShape,
          "backward: seed shape " + shape_string(seed.shape()) + " does not match output " +
              shape_string(out.value.shape()));
  std::vector<TensorT> grads(output.index + 1);
  std::vector<bool> tracked(records_.size(), false);
  for (std::size_t i = 0; i <= output.index; ++i) {
    if (records_[i].requires_grad) {
      grads[i] = TensorT(records_[i].value.shape());
      tracked[i] = true;
    }
  }
  if (out.requires_grad) grads[output.index] = seed;

  std::vector<const TensorT*> in;
  std::vector<TensorT*> gin;
  for (std::size_t i = output.index + 1; i-- > 0;) {
    const Record& r = records_[i];
    if (r.op == Op::kInput || !r.requires_grad) continue;
    in.clear();
    gin.clear();
    for (std::uint32_t j : r.inputs) {
      in.push_back(&records_[j].value);
      gin.push_back(records_[j].requires_grad ? &grads[j] : nullptr);
    }
    Kernels<S>::backward(r, r.value, grads[i], in, gin);
  }
  grads.resize(records_.size());
  return Gradients<S>(id_, std::move(grads), std::move(tracked));
}

template <class S>
Gradients<S> Tape<S>::backward(Var output) const {
  const Record& out = at(output);
  require(out.value.size() == 1, ErrorCode::kShape,
          "backward without a seed needs a scalar output, got " + shape_string(out.value.shape()));
  return backward(output, TensorT(out.value.shape(), S(1.0)));
}

template <class S>
std::vector<typename Tape<S>::TensorT> Tape<S>::replay() const {
  std::vector<TensorT> values;
  values.reserve(records_.size());
  std::vector<const TensorT*> in;
  for (const Record& r : records_) {
    in.clear();
    for (std::uint32_t j : r.inputs) in.push_back(&values[j]);
    values.push_back(Kernels<S>::forward(r, in));
  }
  return values;
}

template class Tape<double>;
template class Tape<Dual>;

BasicTensor<Dual> make_dual(const Tensor& value, const Tensor& direction) {
  require(value.shape() == direction.shape(), ErrorCode::kShape,
          "make_dual: value " + shape_string(value.shape()) + " vs direction " +
              shape_string(direction.shape()));
  std::vector<Dual> data(value.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = Dual(value[i], direction[i]);
  return BasicTensor<Dual>(value.shape(), std::move(data));
}

Tensor primal_part(const BasicTensor<Dual>& t) {
  std::vector<double> data(t.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = t[i].v;
  return Tensor(t.shape(), std::move(data));
}

Tensor tangent_part(const BasicTensor<Dual>& t) {
  std::vector<double> data(t.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = t[i].d;
  return Tensor(t.shape(), std::move(data));
}

}  // namespace dlab
