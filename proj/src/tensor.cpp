#include "iid/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <unordered_set>

#include "iid/error.hpp"

namespace iid::tc {

namespace {

bool g_finite_checks = false;

void check_finite(const char* op, const std::vector<float>& v) {
  if (!g_finite_checks) return;
  for (float x : v) {
    if (!std::isfinite(x)) {
      fail_numeric(std::string("non-finite value produced by op '") + op + "'");
    }
  }
}

std::shared_ptr<detail::Node> make_node(Shape s, const char* op) {
  auto n = std::make_shared<detail::Node>();
  n->shape = s;
  n->value.assign(static_cast<size_t>(s.numel()), 0.0f);
  n->op = op;
  return n;
}

bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts)
    if (t->requires_grad()) return true;
  return false;
}

}  // namespace

std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," +
         std::to_string(s.h) + "," + std::to_string(s.w) + ")";
}

void set_finite_checks(bool on) { g_finite_checks = on; }
bool finite_checks() { return g_finite_checks; }

Tensor Tensor::zeros(Shape s, bool requires_grad) {
  auto n = make_node(s, "leaf");
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::full(Shape s, float v, bool requires_grad) {
  auto n = make_node(s, "leaf");
  std::fill(n->value.begin(), n->value.end(), v);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::from_data(Shape s, std::vector<float> data, bool requires_grad) {
  if (static_cast<std::int64_t>(data.size()) != s.numel())
    fail_args("tensor data size " + std::to_string(data.size()) +
              " does not match shape " + to_string(s));
  auto n = std::make_shared<detail::Node>();
  n->shape = s;
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::scalar(float v) { return full({1, 1, 1, 1}, v); }

std::span<float> Tensor::mutable_value() { return node_->value; }

float Tensor::item() const {
  if (node_->shape.numel() != 1) fail_args("item() on non-scalar tensor");
  return node_->value[0];
}

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

void backward(const Tensor& loss) {
  if (loss.shape().numel() != 1) fail_args("backward() expects a scalar loss");

  // Iterative post-order DFS, then run node backward fns in reverse.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  struct Frame {
    detail::Node* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.node().get(), 0});
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      detail::Node* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  auto* root = loss.node().get();
  root->ensure_grad();
  root->grad[0] = 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward_fn && n->requires_grad) n->backward_fn(*n);
  }
}

// --- elementwise -------------------------------------------------------------

namespace {

struct BroadcastPlan {
  Shape out;
  // strides (in elements) for each operand, 0 on broadcast dims
  std::int64_t sa[4], sb[4];
};

BroadcastPlan broadcast_plan(const char* op, const Shape& a, const Shape& b) {
  const int ad[4] = {a.n, a.c, a.h, a.w};
  const int bd[4] = {b.n, b.c, b.h, b.w};
  int od[4];
  for (int i = 0; i < 4; ++i) {
    if (ad[i] == bd[i]) od[i] = ad[i];
    else if (ad[i] == 1) od[i] = bd[i];
    else if (bd[i] == 1) od[i] = ad[i];
    else
      fail_args(std::string(op) + ": dim " + std::to_string(i) +
                " mismatch: " + to_string(a) + " vs " + to_string(b));
  }
  BroadcastPlan p;
  p.out = {od[0], od[1], od[2], od[3]};
  std::int64_t astr[4] = {static_cast<std::int64_t>(a.c) * a.h * a.w,
                          static_cast<std::int64_t>(a.h) * a.w, a.w, 1};
  std::int64_t bstr[4] = {static_cast<std::int64_t>(b.c) * b.h * b.w,
                          static_cast<std::int64_t>(b.h) * b.w, b.w, 1};
  for (int i = 0; i < 4; ++i) {
    p.sa[i] = ad[i] == 1 ? 0 : astr[i];
    p.sb[i] = bd[i] == 1 ? 0 : bstr[i];
  }
  return p;
}

template <class Fwd>
void broadcast_loop(const BroadcastPlan& p, const float* a, const float* b,
                    float* out, Fwd&& f) {
  std::int64_t idx = 0;
  for (int i0 = 0; i0 < p.out.n; ++i0)
    for (int i1 = 0; i1 < p.out.c; ++i1)
      for (int i2 = 0; i2 < p.out.h; ++i2) {
        std::int64_t ia = i0 * p.sa[0] + i1 * p.sa[1] + i2 * p.sa[2];
        std::int64_t ib = i0 * p.sb[0] + i1 * p.sb[1] + i2 * p.sb[2];
        for (int i3 = 0; i3 < p.out.w; ++i3)
          out[idx++] = f(a[ia + i3 * p.sa[3]], b[ib + i3 * p.sb[3]]);
      }
}

// Accumulates df(a,b)*g into da/db honoring broadcast reduction.
template <class DfA, class DfB>
void broadcast_backward(const BroadcastPlan& p, const float* a, const float* b,
                        const float* g, float* da, float* db, DfA&& dfa, DfB&& dfb) {
  std::int64_t idx = 0;
  for (int i0 = 0; i0 < p.out.n; ++i0)
    for (int i1 = 0; i1 < p.out.c; ++i1)
      for (int i2 = 0; i2 < p.out.h; ++i2) {
        std::int64_t ia = i0 * p.sa[0] + i1 * p.sa[1] + i2 * p.sa[2];
        std::int64_t ib = i0 * p.sb[0] + i1 * p.sb[1] + i2 * p.sb[2];
        for (int i3 = 0; i3 < p.out.w; ++i3, ++idx) {
          const std::int64_t ja = ia + i3 * p.sa[3];
          const std::int64_t jb = ib + i3 * p.sb[3];
          const float gv = g[idx];
          if (da) da[ja] += dfa(a[ja], b[jb]) * gv;
          if (db) db[jb] += dfb(a[ja], b[jb]) * gv;
        }
      }
}

constexpr float kDivEps = 1e-6f;

inline float safe_den(float d) {
  if (d >= 0.0f) return d < kDivEps ? kDivEps : d;
  return d > -kDivEps ? -kDivEps : d;
}

template <class Fwd, class DfA, class DfB>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd&& f,
                 DfA&& dfa, DfB&& dfb) {
  BroadcastPlan plan = broadcast_plan(name, a.shape(), b.shape());
  auto out = make_node(plan.out, name);
  broadcast_loop(plan, a.value().data(), b.value().data(), out->value.data(), f);
  check_finite(name, out->value);
  if (any_requires_grad({&a, &b})) {
    out->requires_grad = true;
    out->parents = {a.node(), b.node()};
    auto an = a.node(), bn = b.node();
    out->backward_fn = [plan, an, bn, dfa, dfb](detail::Node& self) {
      float* da = nullptr;
      float* db = nullptr;
      if (an->requires_grad) {
        an->ensure_grad();
        da = an->grad.data();
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        db = bn->grad.data();
      }
      broadcast_backward(plan, an->value.data(), bn->value.data(),
                         self.grad.data(), da, db, dfa, dfb);
    };
  }
  return Tensor::wrap(std::move(out));
}

template <class Fwd, class Df>
Tensor unary_op(const char* name, const Tensor& a, Fwd&& f, Df&& df) {
  auto out = make_node(a.shape(), name);
  const auto av = a.value();
  for (size_t i = 0; i < av.size(); ++i) out->value[i] = f(av[i]);
  check_finite(name, out->value);
  if (a.requires_grad()) {
    out->requires_grad = true;
    out->parents = {a.node()};
    auto an = a.node();
    out->backward_fn = [an, df](detail::Node& self) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        an->grad[i] += df(an->value[i], self.value[i]) * self.grad[i];
    };
  }
  return Tensor::wrap(std::move(out));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](float x, float y) { return x + y; },
      [](float, float) { return 1.0f; }, [](float, float) { return 1.0f; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](float x, float y) { return x - y; },
      [](float, float) { return 1.0f; }, [](float, float) { return -1.0f; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](float x, float y) { return x * y; },
      [](float, float y) { return y; }, [](float x, float) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      "div", a, b, [](float x, float y) { return x / safe_den(y); },
      [](float, float y) { return 1.0f / safe_den(y); },
      [](float x, float y) {
        // Inside the clamp region the output is constant in the denominator.
        if (y > -kDivEps && y < kDivEps) return 0.0f;
        return -x / (y * y);
      });
}

Tensor add_scalar(const Tensor& a, float s) {
  return unary_op(
      "add_scalar", a, [s](float x) { return x + s; },
      [](float, float) { return 1.0f; });
}

Tensor mul_scalar(const Tensor& a, float s) {
  return unary_op(
      "mul_scalar", a, [s](float x) { return x * s; },
      [s](float, float) { return s; });
}

Tensor leaky_relu(const Tensor& a) {
  return unary_op(
      "leaky_relu", a, [](float x) { return x >= 0.0f ? x : 0.1f * x; },
      [](float x, float) { return x >= 0.0f ? 1.0f : 0.1f; });
}

Tensor sigmoid(const Tensor& a) {
  constexpr float lo = 1e-6f, hi = 1.0f - 1e-6f;
  return unary_op(
      "sigmoid", a,
      [](float x) {
        float y;
        if (x >= 0.0f) {
          y = 1.0f / (1.0f + std::exp(-x));
        } else {
          const float e = std::exp(x);
          y = e / (1.0f + e);
        }
        return std::clamp(y, lo, hi);
      },
      [](float, float y) { return y * (1.0f - y); });
}

Tensor log(const Tensor& a) {
  constexpr float lo = 1e-12f;
  return unary_op(
      "log", a, [](float x) { return std::log(x < lo ? lo : x); },
      [](float x, float) { return x < lo ? 0.0f : 1.0f / x; });
}

Tensor pow(const Tensor& a, float exponent) {
  return unary_op(
      "pow", a,
      [exponent](float x) { return std::pow(x < 0.0f ? 0.0f : x, exponent); },
      [exponent](float x, float) {
        if (x <= 0.0f) return 0.0f;
        return exponent * std::pow(x, exponent - 1.0f);
      });
}

// --- conv2d ------------------------------------------------------------------

namespace {

// Strips keep the im2col buffer bounded regardless of resolution.
constexpr std::int64_t kStripFloats = 2 * 1024 * 1024;

struct ConvDims {
  int in_c, ih, iw, out_c, k, stride, pad, oh, ow;
};

ConvDims conv_dims(const Shape& in, const Shape& w, const Shape& bias,
                   int stride, int padding) {
  if (w.h != w.w) fail_args("conv2d: kernel must be square, got " + to_string(w));
  if (w.h % 2 == 0) fail_args("conv2d: kernel size must be odd, got " + std::to_string(w.h));
  if (in.c != w.c)
    fail_args("conv2d: input channel dim " + std::to_string(in.c) +
              " does not match weight in_c " + std::to_string(w.c));
  if (bias.c != w.n || bias.n != 1 || bias.h != 1 || bias.w != 1)
    fail_args("conv2d: bias shape " + to_string(bias) + " must be (1," +
              std::to_string(w.n) + ",1,1)");
  if (stride < 1) fail_args("conv2d: stride must be >= 1");
  ConvDims d;
  d.in_c = in.c;
  d.ih = in.h;
  d.iw = in.w;
  d.out_c = w.n;
  d.k = w.h;
  d.stride = stride;
  d.pad = padding;
  d.oh = (in.h + 2 * padding - d.k) / stride + 1;
  d.ow = (in.w + 2 * padding - d.k) / stride + 1;
  if (d.oh < 1 || d.ow < 1)
    fail_args("conv2d: output height/width would be empty for input " + to_string(in));
  return d;
}

// Fills col[K x (rows*ow)] for output rows [oy0, oy0+rows).
void im2col(const float* in, const ConvDims& d, int oy0, int rows, float* col) {
  const int ow = d.ow;
  for (int ic = 0; ic < d.in_c; ++ic) {
    const float* plane = in + static_cast<std::int64_t>(ic) * d.ih * d.iw;
    for (int ky = 0; ky < d.k; ++ky) {
      for (int kx = 0; kx < d.k; ++kx) {
        float* dst = col + (static_cast<std::int64_t>((ic * d.k + ky) * d.k + kx)) * rows * ow;
        for (int r = 0; r < rows; ++r, dst += ow) {
          const int oy = oy0 + r;
          const int iy = oy * d.stride + ky - d.pad;
          if (iy < 0 || iy >= d.ih) {
            std::memset(dst, 0, sizeof(float) * ow);
            continue;
          }
          const float* src = plane + static_cast<std::int64_t>(iy) * d.iw;
          if (d.stride == 1) {
            const int ox_lo = std::max(0, d.pad - kx);
            const int ox_hi = std::min(ow, d.iw + d.pad - kx);
            if (ox_lo > 0) std::memset(dst, 0, sizeof(float) * ox_lo);
            if (ox_hi > ox_lo)
              std::memcpy(dst + ox_lo, src + ox_lo + kx - d.pad,
                          sizeof(float) * (ox_hi - ox_lo));
            if (ox_hi < ow) std::memset(dst + ox_hi, 0, sizeof(float) * (ow - ox_hi));
          } else {
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * d.stride + kx - d.pad;
              dst[ox] = (ix >= 0 && ix < d.iw) ? src[ix] : 0.0f;
            }
          }
        }
      }
    }
  }
}

// Scatters dcol back into din (transpose of im2col).
void col2im_add(const float* dcol, const ConvDims& d, int oy0, int rows, float* din) {
  const int ow = d.ow;
  for (int ic = 0; ic < d.in_c; ++ic) {
    float* plane = din + static_cast<std::int64_t>(ic) * d.ih * d.iw;
    for (int ky = 0; ky < d.k; ++ky) {
      for (int kx = 0; kx < d.k; ++kx) {
        const float* src = dcol + (static_cast<std::int64_t>((ic * d.k + ky) * d.k + kx)) * rows * ow;
        for (int r = 0; r < rows; ++r, src += ow) {
          const int oy = oy0 + r;
          const int iy = oy * d.stride + ky - d.pad;
          if (iy < 0 || iy >= d.ih) continue;
          float* drow = plane + static_cast<std::int64_t>(iy) * d.iw;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * d.stride + kx - d.pad;
            if (ix >= 0 && ix < d.iw) drow[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding) {
  const ConvDims d = conv_dims(input.shape(), weight.shape(), bias.shape(),
                               stride, padding);
  const Shape in_s = input.shape();
  const Shape out_s{in_s.n, d.out_c, d.oh, d.ow};
  auto out = make_node(out_s, "conv2d");

  const std::int64_t K = static_cast<std::int64_t>(d.in_c) * d.k * d.k;
  const int strip_rows =
      static_cast<int>(std::clamp<std::int64_t>(kStripFloats / std::max<std::int64_t>(K * d.ow, 1),
                                                1, d.oh));
  std::vector<float> col(static_cast<size_t>(K) * strip_rows * d.ow);

  const float* in_data = input.value().data();
  const float* w = weight.value().data();
  const float* b = bias.value().data();
  float* out_data = out->value.data();
  const std::int64_t in_plane = static_cast<std::int64_t>(d.in_c) * d.ih * d.iw;
  const std::int64_t out_plane = static_cast<std::int64_t>(d.out_c) * d.oh * d.ow;

  for (int bi = 0; bi < in_s.n; ++bi) {
    const float* in_b = in_data + bi * in_plane;
    float* out_b = out_data + bi * out_plane;
    for (int oy0 = 0; oy0 < d.oh; oy0 += strip_rows) {
      const int rows = std::min(strip_rows, d.oh - oy0);
      const std::int64_t P = static_cast<std::int64_t>(rows) * d.ow;
      im2col(in_b, d, oy0, rows, col.data());
      for (int oc = 0; oc < d.out_c; ++oc) {
        float* orow = out_b + static_cast<std::int64_t>(oc) * d.oh * d.ow +
                      static_cast<std::int64_t>(oy0) * d.ow;
        std::fill(orow, orow + P, b[oc]);
        const float* wrow = w + static_cast<std::int64_t>(oc) * K;
        for (std::int64_t kk = 0; kk < K; ++kk) {
          const float a = wrow[kk];
          if (a == 0.0f) continue;
          const float* crow = col.data() + kk * P;
          for (std::int64_t p = 0; p < P; ++p) orow[p] += a * crow[p];
        }
      }
    }
  }
  check_finite("conv2d", out->value);

  if (any_requires_grad({&input, &weight, &bias})) {
    out->requires_grad = true;
    out->parents = {input.node(), weight.node(), bias.node()};
    auto in_n = input.node();
    auto w_n = weight.node();
    auto b_n = bias.node();
    out->backward_fn = [d, in_n, w_n, b_n, K, strip_rows](detail::Node& self) {
      const int n = self.shape.n;
      const std::int64_t in_plane = static_cast<std::int64_t>(d.in_c) * d.ih * d.iw;
      const std::int64_t out_plane = static_cast<std::int64_t>(d.out_c) * d.oh * d.ow;
      const bool need_din = in_n->requires_grad;
      const bool need_dw = w_n->requires_grad;
      const bool need_db = b_n->requires_grad;
      if (need_din) in_n->ensure_grad();
      if (need_dw) w_n->ensure_grad();
      if (need_db) b_n->ensure_grad();

      std::vector<float> col, dcol;
      if (need_dw) col.resize(static_cast<size_t>(K) * strip_rows * d.ow);
      if (need_din) dcol.resize(static_cast<size_t>(K) * strip_rows * d.ow);

      for (int bi = 0; bi < n; ++bi) {
        const float* g_b = self.grad.data() + bi * out_plane;
        const float* in_b = in_n->value.data() + bi * in_plane;
        for (int oy0 = 0; oy0 < d.oh; oy0 += strip_rows) {
          const int rows = std::min(strip_rows, d.oh - oy0);
          const std::int64_t P = static_cast<std::int64_t>(rows) * d.ow;
          if (need_dw || need_din) {
            if (need_dw) im2col(in_b, d, oy0, rows, col.data());
            if (need_din) std::fill(dcol.begin(), dcol.begin() + K * P, 0.0f);
            for (int oc = 0; oc < d.out_c; ++oc) {
              const float* grow = g_b + static_cast<std::int64_t>(oc) * d.oh * d.ow +
                                  static_cast<std::int64_t>(oy0) * d.ow;
              const float* wrow = w_n->value.data() + static_cast<std::int64_t>(oc) * K;
              float* dwrow = need_dw ? w_n->grad.data() + static_cast<std::int64_t>(oc) * K
                                     : nullptr;
              for (std::int64_t kk = 0; kk < K; ++kk) {
                if (need_din) {
                  const float a = wrow[kk];
                  if (a != 0.0f) {
                    float* drow = dcol.data() + kk * P;
                    for (std::int64_t p = 0; p < P; ++p) drow[p] += a * grow[p];
                  }
                }
                if (need_dw) {
                  const float* crow = col.data() + kk * P;
                  float acc = 0.0f;
                  for (std::int64_t p = 0; p < P; ++p) acc += grow[p] * crow[p];
                  dwrow[kk] += acc;
                }
              }
            }
            if (need_din)
              col2im_add(dcol.data(), d, oy0, rows,
                         in_n->grad.data() + bi * in_plane);
          }
          if (need_db) {
            for (int oc = 0; oc < d.out_c; ++oc) {
              const float* grow = g_b + static_cast<std::int64_t>(oc) * d.oh * d.ow +
                                  static_cast<std::int64_t>(oy0) * d.ow;
              float acc = 0.0f;
              for (std::int64_t p = 0; p < P; ++p) acc += grow[p];
              b_n->grad[oc] += acc;
            }
          }
        }
      }
    };
  }
  return Tensor::wrap(std::move(out));
}

// --- resize / pooling --------------------------------------------------------

namespace {

struct Tap {
  int i0, i1;
  float w1;  // weight of i1; i0 gets 1-w1
};

std::vector<Tap> bilinear_taps(int in_size, int out_size) {
  std::vector<Tap> taps(out_size);
  const double scale = static_cast<double>(in_size) / out_size;
  for (int o = 0; o < out_size; ++o) {
    double f = (o + 0.5) * scale - 0.5;
    if (f < 0.0) f = 0.0;
    if (f > in_size - 1) f = in_size - 1;
    const int i0 = static_cast<int>(f);
    const int i1 = std::min(i0 + 1, in_size - 1);
    taps[o] = {i0, i1, static_cast<float>(f - i0)};
  }
  return taps;
}

}  // namespace

Tensor resize_bilinear(const Tensor& input, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1)
    fail_args("resize_bilinear: target size must be >= 1, got " +
              std::to_string(out_h) + "x" + std::to_string(out_w));
  const Shape in_s = input.shape();
  const Shape out_s{in_s.n, in_s.c, out_h, out_w};
  auto out = make_node(out_s, "resize_bilinear");

  const auto ty = bilinear_taps(in_s.h, out_h);
  const auto tx = bilinear_taps(in_s.w, out_w);
  const float* src = input.value().data();
  float* dst = out->value.data();
  const std::int64_t planes = static_cast<std::int64_t>(in_s.n) * in_s.c;
  for (std::int64_t pl = 0; pl < planes; ++pl) {
    const float* sp = src + pl * in_s.h * in_s.w;
    float* dp = dst + pl * static_cast<std::int64_t>(out_h) * out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      const Tap& yt = ty[oy];
      const float* r0 = sp + static_cast<std::int64_t>(yt.i0) * in_s.w;
      const float* r1 = sp + static_cast<std::int64_t>(yt.i1) * in_s.w;
      float* drow = dp + static_cast<std::int64_t>(oy) * out_w;
      for (int ox = 0; ox < out_w; ++ox) {
        const Tap& xt = tx[ox];
        const float top = r0[xt.i0] * (1.0f - xt.w1) + r0[xt.i1] * xt.w1;
        const float bot = r1[xt.i0] * (1.0f - xt.w1) + r1[xt.i1] * xt.w1;
        drow[ox] = top * (1.0f - yt.w1) + bot * yt.w1;
      }
    }
  }
  check_finite("resize_bilinear", out->value);

  if (input.requires_grad()) {
    out->requires_grad = true;
    out->parents = {input.node()};
    auto in_n = input.node();
    out->backward_fn = [in_n, ty, tx, in_s, out_h, out_w](detail::Node& self) {
      in_n->ensure_grad();
      const std::int64_t planes = static_cast<std::int64_t>(in_s.n) * in_s.c;
      for (std::int64_t pl = 0; pl < planes; ++pl) {
        float* gp = in_n->grad.data() + pl * in_s.h * in_s.w;
        const float* sg = self.grad.data() + pl * static_cast<std::int64_t>(out_h) * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
          const Tap& yt = ty[oy];
          for (int ox = 0; ox < out_w; ++ox) {
            const Tap& xt = tx[ox];
            const float g = sg[static_cast<std::int64_t>(oy) * out_w + ox];
            gp[static_cast<std::int64_t>(yt.i0) * in_s.w + xt.i0] +=
                g * (1.0f - yt.w1) * (1.0f - xt.w1);
            gp[static_cast<std::int64_t>(yt.i0) * in_s.w + xt.i1] +=
                g * (1.0f - yt.w1) * xt.w1;
            gp[static_cast<std::int64_t>(yt.i1) * in_s.w + xt.i0] +=
                g * yt.w1 * (1.0f - xt.w1);
            gp[static_cast<std::int64_t>(yt.i1) * in_s.w + xt.i1] +=
                g * yt.w1 * xt.w1;
          }
        }
      }
    };
  }
  return Tensor::wrap(std::move(out));
}

Tensor avg_pool2(const Tensor& input) {
  const Shape in_s = input.shape();
  const int oh = (in_s.h + 1) / 2;
  const int ow = (in_s.w + 1) / 2;
  const Shape out_s{in_s.n, in_s.c, oh, ow};
  auto out = make_node(out_s, "avg_pool2");

  const float* src = input.value().data();
  float* dst = out->value.data();
  const std::int64_t planes = static_cast<std::int64_t>(in_s.n) * in_s.c;
  auto cy = [&](int y) { return y < in_s.h ? y : in_s.h - 1; };
  auto cx = [&](int x) { return x < in_s.w ? x : in_s.w - 1; };
  for (std::int64_t pl = 0; pl < planes; ++pl) {
    const float* sp = src + pl * in_s.h * in_s.w;
    float* dp = dst + pl * static_cast<std::int64_t>(oh) * ow;
    for (int oy = 0; oy < oh; ++oy) {
      const int y0 = 2 * oy, y1 = cy(2 * oy + 1);
      for (int ox = 0; ox < ow; ++ox) {
        const int x0 = 2 * ox, x1 = cx(2 * ox + 1);
        dp[static_cast<std::int64_t>(oy) * ow + ox] =
            0.25f * (sp[static_cast<std::int64_t>(y0) * in_s.w + x0] +
                     sp[static_cast<std::int64_t>(y0) * in_s.w + x1] +
                     sp[static_cast<std::int64_t>(y1) * in_s.w + x0] +
                     sp[static_cast<std::int64_t>(y1) * in_s.w + x1]);
      }
    }
  }
  check_finite("avg_pool2", out->value);

  if (input.requires_grad()) {
    out->requires_grad = true;
    out->parents = {input.node()};
    auto in_n = input.node();
    out->backward_fn = [in_n, in_s, oh, ow](detail::Node& self) {
      in_n->ensure_grad();
      const std::int64_t planes = static_cast<std::int64_t>(in_s.n) * in_s.c;
      auto cy = [&](int y) { return y < in_s.h ? y : in_s.h - 1; };
      auto cx = [&](int x) { return x < in_s.w ? x : in_s.w - 1; };
      for (std::int64_t pl = 0; pl < planes; ++pl) {
        float* gp = in_n->grad.data() + pl * in_s.h * in_s.w;
        const float* sg = self.grad.data() + pl * static_cast<std::int64_t>(oh) * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int y0 = 2 * oy, y1 = cy(2 * oy + 1);
          for (int ox = 0; ox < ow; ++ox) {
            const int x0 = 2 * ox, x1 = cx(2 * ox + 1);
            const float g = 0.25f * sg[static_cast<std::int64_t>(oy) * ow + ox];
            gp[static_cast<std::int64_t>(y0) * in_s.w + x0] += g;
            gp[static_cast<std::int64_t>(y0) * in_s.w + x1] += g;
            gp[static_cast<std::int64_t>(y1) * in_s.w + x0] += g;
            gp[static_cast<std::int64_t>(y1) * in_s.w + x1] += g;
          }
        }
      }
    };
  }
  return Tensor::wrap(std::move(out));
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) fail_args("concat_channels: empty input list");
  const Shape first = parts[0].shape();
  int total_c = 0;
  bool needs_grad = false;
  for (const Tensor& t : parts) {
    const Shape s = t.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w)
      fail_args("concat_channels: spatial/batch mismatch " + to_string(s) +
                " vs " + to_string(first));
    total_c += s.c;
    needs_grad = needs_grad || t.requires_grad();
  }
  const Shape out_s{first.n, total_c, first.h, first.w};
  auto out = make_node(out_s, "concat_channels");
  const std::int64_t hw = static_cast<std::int64_t>(first.h) * first.w;
  for (int bi = 0; bi < first.n; ++bi) {
    std::int64_t c_off = 0;
    for (const Tensor& t : parts) {
      const Shape s = t.shape();
      std::memcpy(out->value.data() + (bi * total_c + c_off) * hw,
                  t.value().data() + static_cast<std::int64_t>(bi) * s.c * hw,
                  sizeof(float) * s.c * hw);
      c_off += s.c;
    }
  }

  if (needs_grad) {
    out->requires_grad = true;
    std::vector<std::shared_ptr<detail::Node>> parent_nodes;
    for (const Tensor& t : parts) parent_nodes.push_back(t.node());
    out->parents = parent_nodes;
    out->backward_fn = [parent_nodes, total_c, hw, first](detail::Node& self) {
      for (int bi = 0; bi < first.n; ++bi) {
        std::int64_t c_off = 0;
        for (auto& p : parent_nodes) {
          const int pc = p->shape.c;
          if (p->requires_grad) {
            p->ensure_grad();
            const float* g = self.grad.data() + (bi * total_c + c_off) * hw;
            float* dst = p->grad.data() + static_cast<std::int64_t>(bi) * pc * hw;
            for (std::int64_t i = 0; i < pc * hw; ++i) dst[i] += g[i];
          }
          c_off += pc;
        }
      }
    };
  }
  return Tensor::wrap(std::move(out));
}

Tensor mean_all(const Tensor& a) {
  auto out = make_node({1, 1, 1, 1}, "mean_all");
  double acc = 0.0;
  for (float v : a.value()) acc += v;
  const double n = static_cast<double>(a.shape().numel());
  out->value[0] = static_cast<float>(acc / n);
  check_finite("mean_all", out->value);
  if (a.requires_grad()) {
    out->requires_grad = true;
    out->parents = {a.node()};
    auto an = a.node();
    out->backward_fn = [an, n](detail::Node& self) {
      an->ensure_grad();
      const float g = self.grad[0] / static_cast<float>(n);
      for (auto& x : an->grad) x += g;
    };
  }
  return Tensor::wrap(std::move(out));
}

// --- Adam --------------------------------------------------------------------

void adam_step(std::span<Tensor> params, AdamState& state,
               std::span<const std::string> names) {
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(static_cast<double>(state.beta1), t);
  const double bc2 = 1.0 - std::pow(static_cast<double>(state.beta2), t);

  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto node = params[pi].node();
    node->ensure_grad();
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    if (m.size() != node->value.size()) {
      m.assign(node->value.size(), 0.0f);
      v.assign(node->value.size(), 0.0f);
    }
    for (size_t i = 0; i < node->value.size(); ++i) {
      const float g = node->grad[i];
      if (!std::isfinite(g)) {
        const std::string name =
            pi < names.size() ? names[pi] : "#" + std::to_string(pi);
        fail_numeric("non-finite gradient in parameter '" + name + "'");
      }
      m[i] = state.beta1 * m[i] + (1.0f - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0f - state.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      node->value[i] -= static_cast<float>(state.lr * mhat /
                                           (std::sqrt(vhat) + state.eps));
    }
  }
}

}  // namespace iid::tc
