#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace iid::tc {

// Dense rank-4 layout: (batch, channels, height, width), row-major floats.
struct Shape {
  int n = 0, c = 0, h = 0, w = 0;

  std::int64_t numel() const {
    return static_cast<std::int64_t>(n) * c * h * w;
  }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

namespace detail {
struct Node {
  Shape shape;
  std::vector<float> value;
  std::vector<float> grad;  // allocated lazily during backward
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0f);
  }
};
}  // namespace detail

// Value-semantic handle onto a node of the computation graph.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape s, bool requires_grad = false);
  static Tensor full(Shape s, float v, bool requires_grad = false);
  static Tensor from_data(Shape s, std::vector<float> data, bool requires_grad = false);
  static Tensor scalar(float v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::span<const float> value() const { return node_->value; }
  // Direct mutation is reserved for leaves (parameters, input staging).
  std::span<float> mutable_value();
  std::span<const float> grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  float item() const;
  void zero_grad();

  std::shared_ptr<detail::Node> node() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Runs reverse-mode accumulation from a scalar loss.
void backward(const Tensor& loss);

// When enabled, every op forward-checks its output for NaN/Inf and throws a
// Numeric error naming the op. Training loops switch this on.
void set_finite_checks(bool on);
bool finite_checks();

// --- operators -------------------------------------------------------------

// weight (out_c, in_c, k, k) with odd k; bias (1, out_c, 1, 1).
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding);

// align-corners=false convention, same as the image-space resampler.
Tensor resize_bilinear(const Tensor& input, int out_h, int out_w);

// 2x2 mean pooling; odd extents are replicate-padded by one row/column.
Tensor avg_pool2(const Tensor& input);

// Binary elementwise ops broadcast over singleton dims only.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);  // |denominator| clamped to >= 1e-6

Tensor add_scalar(const Tensor& a, float s);
Tensor mul_scalar(const Tensor& a, float s);

Tensor leaky_relu(const Tensor& a);  // negative slope 0.1
Tensor sigmoid(const Tensor& a);     // output clamped a hair inside (0,1)
Tensor log(const Tensor& a);         // input clamped to >= 1e-12
Tensor pow(const Tensor& a, float exponent);  // base clamped to >= 0

Tensor concat_channels(std::span<const Tensor> parts);
Tensor mean_all(const Tensor& a);  // scalar; accumulates in double

// --- optimizer ---------------------------------------------------------------

struct AdamState {
  float lr = 3e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  std::int64_t step = 0;
  std::vector<std::vector<float>> m, v;  // one buffer per parameter, lazily sized
};

// Standard Adam with bias correction. Throws a Numeric error naming the
// parameter index if a gradient is non-finite.
void adam_step(std::span<Tensor> params, AdamState& state,
               std::span<const std::string> names = {});

}  // namespace iid::tc
