#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace igt {

using Shape = std::vector<int>;

class Rng;

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // sized to data when gradients are tracked
  bool requires_grad = false;
  int node_id = -1;  // position in the active tape, -1 for leaves
};

}  // namespace detail

// Dense row-major f32 tensor. Value-semantic handle over shared storage;
// once an op has recorded a tensor on the tape its contents are treated as
// immutable.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);
  static Tensor from_vector(Shape shape, std::vector<float> values,
                            bool requires_grad = false);
  // Gaussian init, mean 0.
  static Tensor randn(Shape shape, float stddev, Rng& rng,
                      bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  std::size_t numel() const { return impl_->data.size(); }

  float* data() { return impl_->data.data(); }
  const float* data() const { return impl_->data.data(); }
  std::span<const float> values() const { return impl_->data; }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool v);
  int node_id() const { return impl_ ? impl_->node_id : -1; }

  // Gradient buffer, allocated on demand for tensors that require grad.
  // Tensor is a shared handle, so gradient access is const in the
  // pointer-semantics sense (backward closures hold const captures).
  float* grad() const;
  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  void zero_grad() const;

  float item() const;                   // scalar tensors only
  float at(std::initializer_list<int> idx) const;

  detail::TensorImpl* impl() const { return impl_.get(); }
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
  friend class Tape;
};

// Reverse-mode gradient tape. Constructing a Tape makes it the active tape
// for the current thread; ops record backward closures onto it while any
// input requires grad. Destruction deactivates it. One tape per training
// step; single-threaded per tape.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  // Registers a recorded op output and its backward closure. Returns the
  // node id. The closure must accumulate (+=) into input gradients and only
  // into inputs with requires_grad set.
  int record(Tensor output, std::function<void()> backward);

  // Seeds d(loss)/d(loss) = 1 and replays closures in reverse recording
  // order, once each. Gradients of interior (recorded) tensors are reset at
  // the start of each call; leaf gradients accumulate across calls.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor output;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
  Tape* prev_ = nullptr;
};

// ---- op library ------------------------------------------------------
// All ops are pure; they record onto the active tape when any input
// requires grad. Broadcasting is limited to scalar-vs-tensor; everything
// else requires equal shapes.

Tensor matmul(const Tensor& a, const Tensor& b);          // [m,k]x[k,n]
Tensor transpose(const Tensor& a);                        // 2-D
Tensor add(const Tensor& a, const Tensor& b);             // equal shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, float c);
Tensor mul_scalar(const Tensor& a, float c);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log(const Tensor& a);   // throws std::domain_error on x <= 0
Tensor exp(const Tensor& a);
// max(a, c) elementwise; at a == c the gradient flows to the input.
Tensor max_with_scalar(const Tensor& a, float c);

// x: [m,n], bias: [n]; adds bias to every row.
Tensor add_bias(const Tensor& x, const Tensor& bias);
// Sum of all elements (f64 accumulator) as a scalar tensor.
Tensor sum(const Tensor& a);
// Mean of scalar tensors; used for batch reduction in a fixed order.
Tensor mean_of(const std::vector<Tensor>& scalars);
// Gathers rows of table ([v,d]) for each id; backward scatter-adds.
Tensor embedding(const Tensor& table, std::span<const int> ids);
// Columns [c0, c1) of a 2-D tensor.
Tensor slice_cols(const Tensor& a, int c0, int c1);
Tensor concat_cols(const std::vector<Tensor>& parts);
// Row-wise softmax of scores [t,t] where row i attends to columns 0..i.
Tensor causal_softmax(const Tensor& scores);
// Per-row layer norm with affine parameters gamma/beta of width d.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  float eps = 1e-5f);
// Value copy that does not track gradients back through its input.
Tensor detach(const Tensor& a);

// -log softmax(logits)[target] via max-subtracted log-sum-exp.
Tensor softmax_cross_entropy(const Tensor& logits, int target);
// Mean CE over rows 0..targets.size()-1 of logits [t,v].
Tensor cross_entropy_rows(const Tensor& logits, std::span<const int> targets);

// Numerically stable BCE-with-logits averaged over mask==1 indices.
// targets and mask are 0/1 tensors of the same shape as logits ([v]).
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets,
                       const Tensor& mask);
// Mean over valid rows of the per-row masked BCE mean. logits/targets are
// [t,v], mask is [v], row_valid flags rows that contribute.
Tensor bce_with_logits_rows(const Tensor& logits, const Tensor& targets,
                            const Tensor& mask,
                            std::span<const std::uint8_t> row_valid);

// Runs the active tape backward from a scalar loss.
void backward(const Tensor& loss);

// Softmax of a logit row computed in double precision (no autodiff);
// shared by decoding, evaluation, and analysis paths.
std::vector<double> softmax_f64(std::span<const float> logits);

std::string shape_str(const Shape& s);

}  // namespace igt
