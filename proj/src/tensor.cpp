#include "igt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "igt/rng.hpp"
#include "igt/threadpool.hpp"

namespace igt {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int e : s) {
    if (e < 0) throw std::invalid_argument("tensor: negative extent in shape " + shape_str(s));
    n *= static_cast<std::size_t>(e);
  }
  return n;
}

bool tracking(const Tensor& t) {
  return g_active_tape != nullptr && t.requires_grad();
}

// Registers the node if any input is tracked; out gets requires_grad and a
// zeroed grad buffer so closures can always read it.
void record(Tensor& out, bool any_tracked, std::function<void()> backward_fn) {
  if (!any_tracked || g_active_tape == nullptr) return;
  out.set_requires_grad(true);
  out.grad();  // allocate
  g_active_tape->record(out, std::move(backward_fn));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

constexpr std::size_t kParallelWork = 1u << 17;  // flops below this stay serial

void matmul_mkn(const float* a, const float* b, float* c, int m, int k, int n) {
  // c[m,n] += a[m,k] * b[k,n]; i-k-j order so the inner loop is contiguous.
  auto rows = [&](int i0, int i1) {
    for (int i = i0; i < i1; ++i) {
      float* crow = c + static_cast<std::size_t>(i) * n;
      const float* arow = a + static_cast<std::size_t>(i) * k;
      for (int kk = 0; kk < k; ++kk) {
        const float av = arow[kk];
        if (av == 0.0f) continue;
        const float* brow = b + static_cast<std::size_t>(kk) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  };
  const std::size_t work = static_cast<std::size_t>(m) * k * n;
  if (work >= kParallelWork && ThreadPool::instance().size() > 1) {
    ThreadPool::instance().parallel_for(m, rows);
  } else {
    rows(0, m);
  }
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

// ---- Tensor ----------------------------------------------------------

Tensor::Tensor(Shape shape) {
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data.assign(shape_numel(impl_->shape), 0.0f);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Tensor t(std::move(shape));
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  Tensor t(std::move(shape));
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return full({}, value, requires_grad);
}

Tensor Tensor::from_vector(Shape shape, std::vector<float> values, bool requires_grad) {
  Tensor t;
  t.impl_ = std::make_shared<detail::TensorImpl>();
  t.impl_->shape = std::move(shape);
  if (shape_numel(t.impl_->shape) != values.size()) {
    throw std::invalid_argument("from_vector: " + std::to_string(values.size()) +
                                " values for shape " + shape_str(t.impl_->shape));
  }
  t.impl_->data = std::move(values);
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::randn(Shape shape, float stddev, Rng& rng, bool requires_grad) {
  Tensor t(std::move(shape));
  for (auto& v : t.impl_->data) v = rng.normal_f(0.0f, stddev);
  t.set_requires_grad(requires_grad);
  return t;
}

void Tensor::set_requires_grad(bool v) {
  impl_->requires_grad = v;
  if (!v) impl_->grad.clear();
}

float* Tensor::grad() const {
  if (!impl_->requires_grad) {
    throw std::logic_error("grad: tensor does not require grad");
  }
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
  return impl_->grad.data();
}

void Tensor::zero_grad() const {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

float Tensor::item() const {
  if (numel() != 1) {
    throw std::invalid_argument("item: tensor has " + std::to_string(numel()) + " elements");
  }
  return impl_->data[0];
}

float Tensor::at(std::initializer_list<int> idx) const {
  if (static_cast<int>(idx.size()) != rank()) {
    throw std::invalid_argument("at: index rank mismatch");
  }
  std::size_t off = 0;
  int d = 0;
  for (int i : idx) {
    if (i < 0 || i >= impl_->shape[static_cast<std::size_t>(d)]) {
      throw std::out_of_range("at: index out of range");
    }
    off = off * static_cast<std::size_t>(impl_->shape[static_cast<std::size_t>(d)]) +
          static_cast<std::size_t>(i);
    ++d;
  }
  return impl_->data[off];
}

// ---- Tape ------------------------------------------------------------

Tape::Tape() {
  prev_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

int Tape::record(Tensor output, std::function<void()> backward) {
  const int id = static_cast<int>(nodes_.size());
  output.impl_->node_id = id;
  nodes_.push_back(Node{std::move(output), std::move(backward)});
  return id;
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(loss.shape()));
  }
  if (!loss.requires_grad() || loss.node_id() < 0) {
    throw std::logic_error("backward: loss was not recorded on this tape");
  }
  const int root = loss.node_id();
  if (root >= static_cast<int>(nodes_.size()) || !nodes_[static_cast<std::size_t>(root)].output.same_storage(loss)) {
    throw std::logic_error("backward: loss belongs to a different tape");
  }
  // Interior gradients are owned by the tape: reset them so replays stay
  // consistent; leaf gradients accumulate across calls.
  for (auto& n : nodes_) n.output.zero_grad();
  nodes_[static_cast<std::size_t>(root)].output.grad()[0] = 1.0f;
  for (int i = root; i >= 0; --i) {
    nodes_[static_cast<std::size_t>(i)].backward();
  }
}

void backward(const Tensor& loss) {
  Tape* t = Tape::active();
  if (t == nullptr) throw std::logic_error("backward: no active tape");
  t->backward(loss);
}

// ---- elementwise helpers ----------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, const char* /*name*/, Fwd fwd, Bwd bwd) {
  Tensor out(a.shape());
  const std::size_t n = a.numel();
  const float* ad = a.data();
  float* od = out.data();
  for (std::size_t i = 0; i < n; ++i) od[i] = fwd(ad[i]);
  const bool tracked = tracking(a);
  record(out, tracked, [a, out, bwd]() mutable {
    if (!a.requires_grad()) return;
    const std::size_t m = a.numel();
    const float* og = out.grad();
    const float* ad2 = a.data();
    const float* od2 = out.data();
    float* ag = a.grad();
    for (std::size_t i = 0; i < m; ++i) ag[i] += og[i] * bwd(ad2[i], od2[i]);
  });
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out(a.shape());
  const std::size_t n = a.numel();
  const float* ad = a.data();
  const float* bd = b.data();
  float* od = out.data();
  for (std::size_t i = 0; i < n; ++i) od[i] = ad[i] + bd[i];
  record(out, tracking(a) || tracking(b), [a, b, out]() mutable {
    const std::size_t m = out.numel();
    const float* og = out.grad();
    if (a.requires_grad()) {
      float* ag = a.grad();
      for (std::size_t i = 0; i < m; ++i) ag[i] += og[i];
    }
    if (b.requires_grad()) {
      float* bg = b.grad();
      for (std::size_t i = 0; i < m; ++i) bg[i] += og[i];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a.shape());
  const std::size_t n = a.numel();
  const float* ad = a.data();
  const float* bd = b.data();
  float* od = out.data();
  for (std::size_t i = 0; i < n; ++i) od[i] = ad[i] - bd[i];
  record(out, tracking(a) || tracking(b), [a, b, out]() mutable {
    const std::size_t m = out.numel();
    const float* og = out.grad();
    if (a.requires_grad()) {
      float* ag = a.grad();
      for (std::size_t i = 0; i < m; ++i) ag[i] += og[i];
    }
    if (b.requires_grad()) {
      float* bg = b.grad();
      for (std::size_t i = 0; i < m; ++i) bg[i] -= og[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a.shape());
  const std::size_t n = a.numel();
  const float* ad = a.data();
  const float* bd = b.data();
  float* od = out.data();
  for (std::size_t i = 0; i < n; ++i) od[i] = ad[i] * bd[i];
  record(out, tracking(a) || tracking(b), [a, b, out]() mutable {
    const std::size_t m = out.numel();
    const float* og = out.grad();
    if (a.requires_grad()) {
      float* ag = a.grad();
      const float* bd2 = b.data();
      for (std::size_t i = 0; i < m; ++i) ag[i] += og[i] * bd2[i];
    }
    if (b.requires_grad()) {
      float* bg = b.grad();
      const float* ad2 = a.data();
      for (std::size_t i = 0; i < m; ++i) bg[i] += og[i] * ad2[i];
    }
  });
  return out;
}

Tensor add_scalar(const Tensor& a, float c) {
  return unary_op(a, "add_scalar",
                  [c](float x) { return x + c; },
                  [](float, float) { return 1.0f; });
}

Tensor mul_scalar(const Tensor& a, float c) {
  return unary_op(a, "mul_scalar",
                  [c](float x) { return x * c; },
                  [c](float, float) { return c; });
}

Tensor relu(const Tensor& a) {
  return unary_op(a, "relu",
                  [](float x) { return x > 0.0f ? x : 0.0f; },
                  [](float x, float) { return x > 0.0f ? 1.0f : 0.0f; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(a, "sigmoid",
                  [](float x) {
                    return x >= 0.0f ? 1.0f / (1.0f + std::exp(-x))
                                     : std::exp(x) / (1.0f + std::exp(x));
                  },
                  [](float, float y) { return y * (1.0f - y); });
}

Tensor log(const Tensor& a) {
  const float* ad = a.data();
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (!(ad[i] > 0.0f)) {
      throw std::domain_error("log: non-positive input " + std::to_string(ad[i]));
    }
  }
  return unary_op(a, "log",
                  [](float x) { return std::log(x); },
                  [](float x, float) { return 1.0f / x; });
}

Tensor exp(const Tensor& a) {
  return unary_op(a, "exp",
                  [](float x) { return std::exp(x); },
                  [](float, float y) { return y; });
}

Tensor max_with_scalar(const Tensor& a, float c) {
  // Subgradient at the tie goes to the input, so a gate sitting exactly on
  // the clamp boundary still trains.
  return unary_op(a, "max_with_scalar",
                  [c](float x) { return x > c ? x : c; },
                  [c](float x, float) { return x >= c ? 1.0f : 0.0f; });
}

// ---- structural ops ---------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) +
                                " x " + shape_str(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out(Shape{m, n});
  matmul_mkn(a.data(), b.data(), out.data(), m, k, n);
  record(out, tracking(a) || tracking(b), [a, b, out, m, k, n]() mutable {
    const float* og = out.grad();
    if (a.requires_grad()) {
      // dA = dC * B^T, with B^T materialized for contiguous inner loops.
      std::vector<float> bt(static_cast<std::size_t>(n) * k);
      const float* bd = b.data();
      for (int kk = 0; kk < k; ++kk)
        for (int j = 0; j < n; ++j)
          bt[static_cast<std::size_t>(j) * k + kk] = bd[static_cast<std::size_t>(kk) * n + j];
      matmul_mkn(og, bt.data(), a.grad(), m, n, k);
    }
    if (b.requires_grad()) {
      // dB = A^T * dC as a sum of row outer products.
      float* bg = b.grad();
      const float* ad = a.data();
      for (int i = 0; i < m; ++i) {
        const float* arow = ad + static_cast<std::size_t>(i) * k;
        const float* grow = og + static_cast<std::size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
          const float av = arow[kk];
          if (av == 0.0f) continue;
          float* brow = bg + static_cast<std::size_t>(kk) * n;
          for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
        }
      }
    }
  });
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("transpose: rank-2 only");
  const int m = a.dim(0), n = a.dim(1);
  Tensor out(Shape{n, m});
  const float* ad = a.data();
  float* od = out.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      od[static_cast<std::size_t>(j) * m + i] = ad[static_cast<std::size_t>(i) * n + j];
  record(out, tracking(a), [a, out, m, n]() mutable {
    if (!a.requires_grad()) return;
    const float* og = out.grad();
    float* ag = a.grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        ag[static_cast<std::size_t>(i) * n + j] += og[static_cast<std::size_t>(j) * m + i];
  });
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 2 || bias.rank() != 1 || x.dim(1) != bias.dim(0)) {
    throw std::invalid_argument("add_bias: shapes " + shape_str(x.shape()) + " + " +
                                shape_str(bias.shape()));
  }
  const int m = x.dim(0), n = x.dim(1);
  Tensor out(x.shape());
  const float* xd = x.data();
  const float* bd = bias.data();
  float* od = out.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      od[static_cast<std::size_t>(i) * n + j] = xd[static_cast<std::size_t>(i) * n + j] + bd[j];
  record(out, tracking(x) || tracking(bias), [x, bias, out, m, n]() mutable {
    const float* og = out.grad();
    if (x.requires_grad()) {
      float* xg = x.grad();
      const std::size_t total = static_cast<std::size_t>(m) * n;
      for (std::size_t i = 0; i < total; ++i) xg[i] += og[i];
    }
    if (bias.requires_grad()) {
      float* bg = bias.grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) bg[j] += og[static_cast<std::size_t>(i) * n + j];
    }
  });
  return out;
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  const float* ad = a.data();
  for (std::size_t i = 0; i < a.numel(); ++i) acc += ad[i];
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  record(out, tracking(a), [a, out]() mutable {
    if (!a.requires_grad()) return;
    const float g = out.grad()[0];
    float* ag = a.grad();
    for (std::size_t i = 0; i < a.numel(); ++i) ag[i] += g;
  });
  return out;
}

Tensor mean_of(const std::vector<Tensor>& scalars) {
  if (scalars.empty()) throw std::invalid_argument("mean_of: empty input");
  double acc = 0.0;
  bool tracked = false;
  for (const auto& s : scalars) {
    if (s.numel() != 1) throw std::invalid_argument("mean_of: inputs must be scalars");
    acc += s.item();
    tracked = tracked || tracking(s);
  }
  const float inv = 1.0f / static_cast<float>(scalars.size());
  Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(scalars.size())));
  record(out, tracked, [scalars, out, inv]() mutable {
    const float g = out.grad()[0] * inv;
    for (auto& s : scalars) {
      if (s.requires_grad()) s.grad()[0] += g;
    }
  });
  return out;
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) throw std::invalid_argument("embedding: table must be 2-D");
  const int v = table.dim(0), d = table.dim(1);
  const int t = static_cast<int>(ids.size());
  for (int id : ids) {
    if (id < 0 || id >= v) {
      throw std::out_of_range("embedding: id " + std::to_string(id) + " outside vocab " +
                              std::to_string(v));
    }
  }
  Tensor out(Shape{t, d});
  const float* td = table.data();
  float* od = out.data();
  for (int i = 0; i < t; ++i) {
    std::memcpy(od + static_cast<std::size_t>(i) * d,
                td + static_cast<std::size_t>(ids[static_cast<std::size_t>(i)]) * d,
                sizeof(float) * static_cast<std::size_t>(d));
  }
  std::vector<int> ids_copy(ids.begin(), ids.end());
  record(out, tracking(table), [table, out, ids_copy, d]() mutable {
    if (!table.requires_grad()) return;
    const float* og = out.grad();
    float* tg = table.grad();
    for (std::size_t i = 0; i < ids_copy.size(); ++i) {
      float* row = tg + static_cast<std::size_t>(ids_copy[i]) * d;
      const float* grow = og + i * static_cast<std::size_t>(d);
      for (int j = 0; j < d; ++j) row[j] += grow[j];
    }
  });
  return out;
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
  if (a.rank() != 2) throw std::invalid_argument("slice_cols: rank-2 only");
  const int m = a.dim(0), n = a.dim(1);
  if (c0 < 0 || c1 > n || c0 >= c1) {
    throw std::invalid_argument("slice_cols: invalid range [" + std::to_string(c0) + "," +
                                std::to_string(c1) + ") of " + std::to_string(n));
  }
  const int w = c1 - c0;
  Tensor out(Shape{m, w});
  const float* ad = a.data();
  float* od = out.data();
  for (int i = 0; i < m; ++i) {
    std::memcpy(od + static_cast<std::size_t>(i) * w,
                ad + static_cast<std::size_t>(i) * n + c0,
                sizeof(float) * static_cast<std::size_t>(w));
  }
  record(out, tracking(a), [a, out, m, n, c0, w]() mutable {
    if (!a.requires_grad()) return;
    const float* og = out.grad();
    float* ag = a.grad();
    for (int i = 0; i < m; ++i) {
      float* arow = ag + static_cast<std::size_t>(i) * n + c0;
      const float* grow = og + static_cast<std::size_t>(i) * w;
      for (int j = 0; j < w; ++j) arow[j] += grow[j];
    }
  });
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
  const int m = parts[0].dim(0);
  int n = 0;
  bool tracked = false;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != m) {
      throw std::invalid_argument("concat_cols: row count mismatch");
    }
    n += p.dim(1);
    tracked = tracked || tracking(p);
  }
  Tensor out(Shape{m, n});
  float* od = out.data();
  int off = 0;
  for (const auto& p : parts) {
    const int w = p.dim(1);
    const float* pd = p.data();
    for (int i = 0; i < m; ++i) {
      std::memcpy(od + static_cast<std::size_t>(i) * n + off,
                  pd + static_cast<std::size_t>(i) * w,
                  sizeof(float) * static_cast<std::size_t>(w));
    }
    off += w;
  }
  record(out, tracked, [parts, out, m, n]() mutable {
    const float* og = out.grad();
    int off2 = 0;
    for (auto& p : parts) {
      const int w = p.dim(1);
      if (p.requires_grad()) {
        float* pg = p.grad();
        for (int i = 0; i < m; ++i) {
          const float* grow = og + static_cast<std::size_t>(i) * n + off2;
          float* prow = pg + static_cast<std::size_t>(i) * w;
          for (int j = 0; j < w; ++j) prow[j] += grow[j];
        }
      }
      off2 += w;
    }
  });
  return out;
}

Tensor causal_softmax(const Tensor& scores) {
  if (scores.rank() != 2 || scores.dim(0) != scores.dim(1)) {
    throw std::invalid_argument("causal_softmax: square matrix required, got " +
                                shape_str(scores.shape()));
  }
  const int t = scores.dim(0);
  Tensor out(scores.shape());
  const float* sd = scores.data();
  float* od = out.data();
  for (int i = 0; i < t; ++i) {
    const float* row = sd + static_cast<std::size_t>(i) * t;
    float* orow = od + static_cast<std::size_t>(i) * t;
    float mx = row[0];
    for (int j = 1; j <= i; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j <= i; ++j) {
      orow[j] = std::exp(row[j] - mx);
      denom += orow[j];
    }
    const float inv = static_cast<float>(1.0 / denom);
    for (int j = 0; j <= i; ++j) orow[j] *= inv;
    for (int j = i + 1; j < t; ++j) orow[j] = 0.0f;
  }
  record(out, tracking(scores), [scores, out, t]() mutable {
    if (!scores.requires_grad()) return;
    const float* og = out.grad();
    const float* od2 = out.data();
    float* sg = scores.grad();
    for (int i = 0; i < t; ++i) {
      const float* grow = og + static_cast<std::size_t>(i) * t;
      const float* prow = od2 + static_cast<std::size_t>(i) * t;
      float* srow = sg + static_cast<std::size_t>(i) * t;
      double dot = 0.0;
      for (int j = 0; j <= i; ++j) dot += static_cast<double>(grow[j]) * prow[j];
      for (int j = 0; j <= i; ++j) {
        srow[j] += prow[j] * (grow[j] - static_cast<float>(dot));
      }
    }
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  if (x.rank() != 2 || gamma.rank() != 1 || beta.rank() != 1 ||
      gamma.dim(0) != x.dim(1) || beta.dim(0) != x.dim(1)) {
    throw std::invalid_argument("layer_norm: shapes " + shape_str(x.shape()) + ", " +
                                shape_str(gamma.shape()) + ", " + shape_str(beta.shape()));
  }
  const int t = x.dim(0), d = x.dim(1);
  Tensor out(x.shape());
  // xhat cached for backward
  auto xhat = std::make_shared<std::vector<float>>(static_cast<std::size_t>(t) * d);
  auto inv_std = std::make_shared<std::vector<float>>(static_cast<std::size_t>(t));
  const float* xd = x.data();
  const float* gd = gamma.data();
  const float* bd = beta.data();
  float* od = out.data();
  for (int i = 0; i < t; ++i) {
    const float* row = xd + static_cast<std::size_t>(i) * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += row[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = row[j] - mu;
      var += c * c;
    }
    var /= d;
    const float istd = static_cast<float>(1.0 / std::sqrt(var + eps));
    (*inv_std)[static_cast<std::size_t>(i)] = istd;
    float* hrow = xhat->data() + static_cast<std::size_t>(i) * d;
    float* orow = od + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) {
      hrow[j] = (row[j] - static_cast<float>(mu)) * istd;
      orow[j] = gd[j] * hrow[j] + bd[j];
    }
  }
  record(out, tracking(x) || tracking(gamma) || tracking(beta),
         [x, gamma, beta, out, xhat, inv_std, t, d]() mutable {
           const float* og = out.grad();
           const float* gd2 = gamma.data();
           for (int i = 0; i < t; ++i) {
             const float* grow = og + static_cast<std::size_t>(i) * d;
             const float* hrow = xhat->data() + static_cast<std::size_t>(i) * d;
             if (gamma.requires_grad()) {
               float* gg = gamma.grad();
               for (int j = 0; j < d; ++j) gg[j] += grow[j] * hrow[j];
             }
             if (beta.requires_grad()) {
               float* bg = beta.grad();
               for (int j = 0; j < d; ++j) bg[j] += grow[j];
             }
             if (x.requires_grad()) {
               const float istd = (*inv_std)[static_cast<std::size_t>(i)];
               double sum_dh = 0.0, sum_dh_h = 0.0;
               for (int j = 0; j < d; ++j) {
                 const double dh = static_cast<double>(grow[j]) * gd2[j];
                 sum_dh += dh;
                 sum_dh_h += dh * hrow[j];
               }
               const double inv_d = 1.0 / d;
               float* xg = x.grad() + static_cast<std::size_t>(i) * d;
               for (int j = 0; j < d; ++j) {
                 const double dh = static_cast<double>(grow[j]) * gd2[j];
                 xg[j] += static_cast<float>(istd * (dh - inv_d * sum_dh - hrow[j] * inv_d * sum_dh_h));
               }
             }
           }
         });
  return out;
}

Tensor detach(const Tensor& a) {
  Tensor out(a.shape());
  std::memcpy(out.data(), a.data(), sizeof(float) * a.numel());
  return out;
}

// ---- losses -----------------------------------------------------------

namespace {

// Log-sum-exp of a row with max subtraction, f64 accumulation.
double row_logsumexp(const float* row, int v, float* mx_out) {
  float mx = row[0];
  for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
  double acc = 0.0;
  for (int j = 0; j < v; ++j) acc += std::exp(static_cast<double>(row[j]) - mx);
  if (mx_out) *mx_out = mx;
  return static_cast<double>(mx) + std::log(acc);
}

}  // namespace

Tensor softmax_cross_entropy(const Tensor& logits, int target) {
  if (logits.rank() != 1) {
    throw std::invalid_argument("softmax_cross_entropy: logits must be 1-D");
  }
  const int v = logits.dim(0);
  if (target < 0 || target >= v) {
    throw std::out_of_range("softmax_cross_entropy: target " + std::to_string(target) +
                            " outside [0," + std::to_string(v) + ")");
  }
  const double lse = row_logsumexp(logits.data(), v, nullptr);
  Tensor out = Tensor::scalar(static_cast<float>(lse - logits.data()[target]));
  record(out, tracking(logits), [logits, out, target, v]() mutable {
    if (!logits.requires_grad()) return;
    const float g = out.grad()[0];
    float mx = 0.0f;
    const double lse2 = row_logsumexp(logits.data(), v, &mx);
    const float* ld = logits.data();
    float* lg = logits.grad();
    for (int j = 0; j < v; ++j) {
      const float p = static_cast<float>(std::exp(static_cast<double>(ld[j]) - lse2));
      lg[j] += g * (p - (j == target ? 1.0f : 0.0f));
    }
  });
  return out;
}

Tensor cross_entropy_rows(const Tensor& logits, std::span<const int> targets) {
  if (logits.rank() != 2) {
    throw std::invalid_argument("cross_entropy_rows: logits must be 2-D");
  }
  const int t = static_cast<int>(targets.size());
  const int v = logits.dim(1);
  if (t == 0 || t > logits.dim(0)) {
    throw std::invalid_argument("cross_entropy_rows: " + std::to_string(t) +
                                " targets for " + std::to_string(logits.dim(0)) + " rows");
  }
  for (int tgt : targets) {
    if (tgt < 0 || tgt >= v) {
      throw std::out_of_range("cross_entropy_rows: target " + std::to_string(tgt) +
                              " outside [0," + std::to_string(v) + ")");
    }
  }
  const float* ld = logits.data();
  double acc = 0.0;
  for (int i = 0; i < t; ++i) {
    const float* row = ld + static_cast<std::size_t>(i) * v;
    acc += row_logsumexp(row, v, nullptr) - row[targets[static_cast<std::size_t>(i)]];
  }
  Tensor out = Tensor::scalar(static_cast<float>(acc / t));
  std::vector<int> tgt_copy(targets.begin(), targets.end());
  record(out, tracking(logits), [logits, out, tgt_copy, t, v]() mutable {
    if (!logits.requires_grad()) return;
    const float g = out.grad()[0] / static_cast<float>(t);
    const float* ld2 = logits.data();
    float* lg = logits.grad();
    for (int i = 0; i < t; ++i) {
      const float* row = ld2 + static_cast<std::size_t>(i) * v;
      float* grow = lg + static_cast<std::size_t>(i) * v;
      const double lse = row_logsumexp(row, v, nullptr);
      const int tgt = tgt_copy[static_cast<std::size_t>(i)];
      for (int j = 0; j < v; ++j) {
        const float p = static_cast<float>(std::exp(static_cast<double>(row[j]) - lse));
        grow[j] += g * (p - (j == tgt ? 1.0f : 0.0f));
      }
    }
  });
  return out;
}

namespace {

// max(z,0) - z*y + log(1+exp(-|z|)), per index, in double.
inline double bce_term(float z, float y) {
  const double zd = z;
  return std::max(zd, 0.0) - zd * y + std::log1p(std::exp(-std::abs(zd)));
}

inline float sigmoid_f(float z) {
  return z >= 0.0f ? 1.0f / (1.0f + std::exp(-z)) : std::exp(z) / (1.0f + std::exp(z));
}

}  // namespace

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets, const Tensor& mask) {
  check_same_shape(logits, targets, "bce_with_logits");
  check_same_shape(logits, mask, "bce_with_logits(mask)");
  const std::size_t n = logits.numel();
  const float* ld = logits.data();
  const float* td = targets.data();
  const float* md = mask.data();
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (md[i] != 0.0f) {
      acc += bce_term(ld[i], td[i]);
      ++count;
    }
  }
  if (count == 0) {
    throw std::invalid_argument("bce_with_logits: all-zero mask, mean undefined");
  }
  Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(count)));
  record(out, tracking(logits), [logits, targets, mask, out, count]() mutable {
    if (!logits.requires_grad()) return;
    const float g = out.grad()[0] / static_cast<float>(count);
    const std::size_t m = logits.numel();
    const float* ld2 = logits.data();
    const float* td2 = targets.data();
    const float* md2 = mask.data();
    float* lg = logits.grad();
    for (std::size_t i = 0; i < m; ++i) {
      if (md2[i] != 0.0f) lg[i] += g * (sigmoid_f(ld2[i]) - td2[i]);
    }
  });
  return out;
}

Tensor bce_with_logits_rows(const Tensor& logits, const Tensor& targets, const Tensor& mask,
                            std::span<const std::uint8_t> row_valid) {
  if (logits.rank() != 2) {
    throw std::invalid_argument("bce_with_logits_rows: logits must be 2-D");
  }
  check_same_shape(logits, targets, "bce_with_logits_rows");
  const int v = logits.dim(1);
  if (mask.rank() != 1 || mask.dim(0) != v) {
    throw std::invalid_argument("bce_with_logits_rows: mask must be [v]");
  }
  const int rows = static_cast<int>(row_valid.size());
  if (rows > logits.dim(0)) {
    throw std::invalid_argument("bce_with_logits_rows: more validity flags than rows");
  }
  const float* md = mask.data();
  std::size_t mask_count = 0;
  for (int j = 0; j < v; ++j) {
    if (md[j] != 0.0f) ++mask_count;
  }
  if (mask_count == 0) {
    throw std::invalid_argument("bce_with_logits_rows: all-zero mask, mean undefined");
  }
  int valid_rows = 0;
  for (auto f : row_valid) valid_rows += f ? 1 : 0;
  if (valid_rows == 0) {
    throw std::invalid_argument("bce_with_logits_rows: no valid rows");
  }
  const float* ld = logits.data();
  const float* td = targets.data();
  double acc = 0.0;
  for (int i = 0; i < rows; ++i) {
    if (!row_valid[static_cast<std::size_t>(i)]) continue;
    const float* lrow = ld + static_cast<std::size_t>(i) * v;
    const float* trow = td + static_cast<std::size_t>(i) * v;
    double row_acc = 0.0;
    for (int j = 0; j < v; ++j) {
      if (md[j] != 0.0f) row_acc += bce_term(lrow[j], trow[j]);
    }
    acc += row_acc / static_cast<double>(mask_count);
  }
  Tensor out = Tensor::scalar(static_cast<float>(acc / valid_rows));
  std::vector<std::uint8_t> valid_copy(row_valid.begin(), row_valid.end());
  record(out, tracking(logits),
         [logits, targets, mask, out, valid_copy, rows, v, mask_count, valid_rows]() mutable {
           if (!logits.requires_grad()) return;
           const float g = out.grad()[0] /
                           (static_cast<float>(mask_count) * static_cast<float>(valid_rows));
           const float* ld2 = logits.data();
           const float* td2 = targets.data();
           const float* md2 = mask.data();
           float* lg = logits.grad();
           for (int i = 0; i < rows; ++i) {
             if (!valid_copy[static_cast<std::size_t>(i)]) continue;
             const float* lrow = ld2 + static_cast<std::size_t>(i) * v;
             const float* trow = td2 + static_cast<std::size_t>(i) * v;
             float* grow = lg + static_cast<std::size_t>(i) * v;
             for (int j = 0; j < v; ++j) {
               if (md2[j] != 0.0f) grow[j] += g * (sigmoid_f(lrow[j]) - trow[j]);
             }
           }
         });
  return out;
}

std::vector<double> softmax_f64(std::span<const float> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  double mx = logits[0];
  for (float z : logits) mx = std::max(mx, static_cast<double>(z));
  double denom = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(static_cast<double>(logits[i]) - mx);
    denom += p[i];
  }
  for (auto& x : p) x /= denom;
  return p;
}

}  // namespace igt
