#include "msafeb/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "msafeb/errors.hpp"

namespace msafeb {

namespace {

std::atomic<std::uint64_t> g_next_seq{1};
std::atomic<bool> g_checked{true};
thread_local bool t_grad_enabled = true;

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (!t.defined() || t.rank() != rank) {
    std::ostringstream msg;
    msg << op << ": expected rank-" << rank << " tensor, got "
        << (t.defined() ? to_string(t.dims()) : std::string("undefined"));
    throw ShapeError(msg.str());
  }
}

void require_same_dims(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dims() != b.dims()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.dims()) +
                     " vs " + to_string(b.dims()));
  }
}

}  // namespace

/// Gradient buffers for one backward pass, keyed by tensor identity.
class GradSink {
 public:
  std::vector<float>& buffer(TensorImpl* impl) {
    auto it = grads_.find(impl);
    if (it == grads_.end()) {
      it = grads_.emplace(impl, std::vector<float>(impl->data.size(), 0.0f)).first;
    }
    return it->second;
  }
  std::vector<float>* find(TensorImpl* impl) {
    auto it = grads_.find(impl);
    return it == grads_.end() ? nullptr : &it->second;
  }
  void release(TensorImpl* impl) { grads_.erase(impl); }

 private:
  std::unordered_map<TensorImpl*, std::vector<float>> grads_;
};

std::span<const float> BackwardContext::input(std::size_t i) const {
  return inputs[i]->data;
}
const Dims& BackwardContext::input_dims(std::size_t i) const {
  return inputs[i]->dims;
}
bool BackwardContext::wants(std::size_t i) const {
  return inputs[i]->needs_grad();
}
std::span<float> BackwardContext::grad(std::size_t i) const {
  return sink->buffer(inputs[i].get());
}

std::size_t product(const Dims& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::string to_string(const Dims& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

Tensor Tensor::create(Dims dims, std::vector<float> values, bool requires_grad) {
  if (dims.empty() || dims.size() > 4) {
    throw ShapeError("tensor rank must be 1..4, got " + std::to_string(dims.size()));
  }
  for (auto d : dims) {
    if (d == 0) throw ShapeError("tensor extents must be >= 1, got " + to_string(dims));
  }
  const std::size_t expected = product(dims);
  if (values.size() != expected) {
    throw ShapeError("expected " + std::to_string(expected) + " values, got " +
                     std::to_string(values.size()));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->dims = std::move(dims);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Dims dims, bool requires_grad) {
  return full(std::move(dims), 0.0f, requires_grad);
}

Tensor Tensor::full(Dims dims, float value, bool requires_grad) {
  const std::size_t n = product(dims);
  return create(std::move(dims), std::vector<float>(n, value), requires_grad);
}

float Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item(): tensor has " + std::to_string(numel()) + " elements");
  }
  return impl_->data[0];
}

double Tensor::item_exact() const {
  const float v = item();
  return impl_->exact ? *impl_->exact : double(v);
}

float Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw ShapeError("at(): index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= impl_->dims[axis]) throw ShapeError("at(): index out of range");
    flat = flat * impl_->dims[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

std::span<const float> Tensor::grad() const {
  if (!impl_->grad) return {};
  return *impl_->grad;
}

Tensor Tensor::detach() const {
  return create(impl_->dims, impl_->data, false);
}

Tensor tensor_create(Dims dims, std::vector<float> values, bool requires_grad) {
  return Tensor::create(std::move(dims), std::move(values), requires_grad);
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_mode_enabled() { return t_grad_enabled; }

void set_checked_mode(bool on) { g_checked.store(on); }
bool checked_mode() { return g_checked.load(); }

namespace detail {

void check_finite(std::span<const float> values, const std::string& op) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(op + ": non-finite value at element " + std::to_string(i));
    }
  }
}

Tensor make_result(Dims dims, std::vector<float> data, std::string op,
                   std::vector<Tensor> inputs, BackwardFn fn) {
  if (checked_mode()) check_finite(data, op);
  Tensor out = Tensor::create(std::move(dims), std::move(data));
  if (!t_grad_enabled) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) {
    return t.impl()->needs_grad();
  });
  if (!any) return out;
  auto node = std::make_shared<Node>();
  node->seq = g_next_seq.fetch_add(1);
  node->op = std::move(op);
  node->inputs.reserve(inputs.size());
  for (auto& t : inputs) node->inputs.push_back(t.impl());
  node->backward = std::move(fn);
  out.impl()->node = std::move(node);
  return out;
}

}  // namespace detail

GraphTape GraphTape::collect(const Tensor& root) {
  GraphTape tape;
  std::unordered_set<const TensorImpl*> seen;
  std::vector<std::shared_ptr<TensorImpl>> stack{root.impl()};
  while (!stack.empty()) {
    auto impl = std::move(stack.back());
    stack.pop_back();
    if (!impl->node || !seen.insert(impl.get()).second) continue;
    Record rec{impl->node->seq, impl->node->op, {}, impl};
    for (auto& in : impl->node->inputs) {
      rec.inputs.push_back(in.get());
      if (in->node) stack.push_back(in);
    }
    tape.records_.push_back(std::move(rec));
  }
  // Sequence numbers are assigned at creation, so ascending order is a
  // topological order.
  std::sort(tape.records_.begin(), tape.records_.end(),
            [](const Record& a, const Record& b) { return a.seq < b.seq; });
  return tape;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward: loss must be a single-element tensor, got " +
                     (loss.defined() ? to_string(loss.dims()) : std::string("undefined")));
  }
  if (!loss.has_node()) {
    throw UsageError("backward: loss is detached from the tape");
  }
  const GraphTape tape = GraphTape::collect(loss);
  GradSink sink;
  sink.buffer(loss.impl().get())[0] = 1.0f;

  std::vector<TensorImpl*> leaves;
  std::unordered_set<TensorImpl*> leaf_seen;
  const auto& records = tape.records();
  for (auto it = records.rbegin(); it != records.rend(); ++it) {
    TensorImpl* out = it->output.get();
    std::vector<float>* g = sink.find(out);
    if (g == nullptr) continue;
    const Node& node = *out->node;
    BackwardContext ctx{node.inputs, out->data, *g, &sink};
    node.backward(ctx);
    for (auto& in : node.inputs) {
      if (!in->node && in->requires_grad && leaf_seen.insert(in.get()).second) {
        leaves.push_back(in.get());
      }
    }
    if (out->retain_grad) {
      auto& dst = out->grad;
      if (!dst) dst.emplace(g->size(), 0.0f);
      for (std::size_t i = 0; i < g->size(); ++i) (*dst)[i] += (*g)[i];
    }
    sink.release(out);
  }
  for (TensorImpl* leaf : leaves) {
    std::vector<float>* g = sink.find(leaf);
    if (g == nullptr) continue;
    if (!leaf->grad) {
      leaf->grad = std::move(*g);
    } else {
      for (std::size_t i = 0; i < g->size(); ++i) (*leaf->grad)[i] += (*g)[i];
    }
  }
}

// ---------------------------------------------------------------------------

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Operand& b) {
  const std::size_t n = a.numel();
  std::vector<float> out(n);
  auto av = a.data();
  switch (op) {
    case ElementwiseOp::add:
    case ElementwiseOp::mul: {
      const bool is_add = op == ElementwiseOp::add;
      if (const float* s = std::get_if<float>(&b)) {
        const float c = *s;
        for (std::size_t i = 0; i < n; ++i) out[i] = is_add ? av[i] + c : av[i] * c;
        return detail::make_result(a.dims(), std::move(out), is_add ? "add_scalar" : "mul_scalar",
                                   {a}, [c, is_add](const BackwardContext& ctx) {
                                     if (!ctx.wants(0)) return;
                                     auto ga = ctx.grad(0);
                                     for (std::size_t i = 0; i < ga.size(); ++i) {
                                       ga[i] += is_add ? ctx.grad_output[i] : ctx.grad_output[i] * c;
                                     }
                                   });
      }
      const Tensor* bt = std::get_if<Tensor>(&b);
      if (bt == nullptr) throw UsageError("elementwise: binary op needs a second operand");
      require_same_dims(a, *bt, is_add ? "add" : "mul");
      auto bv = bt->data();
      for (std::size_t i = 0; i < n; ++i) out[i] = is_add ? av[i] + bv[i] : av[i] * bv[i];
      return detail::make_result(
          a.dims(), std::move(out), is_add ? "add" : "mul", {a, *bt},
          [is_add](const BackwardContext& ctx) {
            const auto go = ctx.grad_output;
            for (std::size_t k = 0; k < 2; ++k) {
              if (!ctx.wants(k)) continue;
              auto g = ctx.grad(k);
              if (is_add) {
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
              } else {
                auto other = ctx.input(1 - k);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * other[i];
              }
            }
          });
    }
    case ElementwiseOp::scale: {
      const float* s = std::get_if<float>(&b);
      if (s == nullptr) throw UsageError("elementwise: scale needs a scalar operand");
      return elementwise(ElementwiseOp::mul, a, *s);
    }
    case ElementwiseOp::relu: {
      for (std::size_t i = 0; i < n; ++i) out[i] = av[i] > 0.0f ? av[i] : 0.0f;
      return detail::make_result(a.dims(), std::move(out), "relu", {a},
                                 [](const BackwardContext& ctx) {
                                   if (!ctx.wants(0)) return;
                                   auto g = ctx.grad(0);
                                   auto x = ctx.input(0);
                                   for (std::size_t i = 0; i < g.size(); ++i) {
                                     if (x[i] > 0.0f) g[i] += ctx.grad_output[i];
                                   }
                                 });
    }
    case ElementwiseOp::sigmoid: {
      for (std::size_t i = 0; i < n; ++i) {
        const float x = av[i];
        // Split on sign so exp never overflows.
        out[i] = x >= 0.0f ? 1.0f / (1.0f + std::exp(-x))
                           : std::exp(x) / (1.0f + std::exp(x));
      }
      return detail::make_result(a.dims(), std::move(out), "sigmoid", {a},
                                 [](const BackwardContext& ctx) {
                                   if (!ctx.wants(0)) return;
                                   auto g = ctx.grad(0);
                                   auto y = ctx.output;
                                   for (std::size_t i = 0; i < g.size(); ++i) {
                                     g[i] += ctx.grad_output[i] * y[i] * (1.0f - y[i]);
                                   }
                                 });
    }
  }
  throw UsageError("elementwise: unknown op");
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::add, a, b); }
Tensor add(const Tensor& a, float b) { return elementwise(ElementwiseOp::add, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::mul, a, b); }
Tensor scale(const Tensor& a, float factor) {
  return elementwise(ElementwiseOp::scale, a, factor);
}
Tensor relu(const Tensor& a) { return elementwise(ElementwiseOp::relu, a); }
Tensor sigmoid(const Tensor& a) { return elementwise(ElementwiseOp::sigmoid, a); }

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  Tensor out = detail::make_result({1}, {static_cast<float>(acc)}, "sum", {a},
                                   [](const BackwardContext& ctx) {
                                     if (!ctx.wants(0)) return;
                                     const float go = ctx.grad_output[0];
                                     for (float& g : ctx.grad(0)) g += go;
                                   });
  out.impl()->exact = acc;
  return out;
}

Tensor mean(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  const double n = static_cast<double>(a.numel());
  Tensor out = detail::make_result({1}, {static_cast<float>(acc / n)}, "mean", {a},
                                   [n](const BackwardContext& ctx) {
                                     if (!ctx.wants(0)) return;
                                     const float go = static_cast<float>(ctx.grad_output[0] / n);
                                     for (float& g : ctx.grad(0)) g += go;
                                   });
  out.impl()->exact = acc / n;
  return out;
}

Tensor reshape(const Tensor& a, Dims dims) {
  if (product(dims) != a.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(a.dims()) + " as " + to_string(dims));
  }
  std::vector<float> out(a.data().begin(), a.data().end());
  return detail::make_result(std::move(dims), std::move(out), "reshape", {a},
                             [](const BackwardContext& ctx) {
                               if (!ctx.wants(0)) return;
                               auto g = ctx.grad(0);
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] += ctx.grad_output[i];
                             });
}

namespace {

// Splits dims around the concatenation axis: outer x axis x inner.
struct AxisView {
  std::size_t outer, axis, inner;
};

AxisView axis_view(const Dims& d) {
  if (d.size() == 1) return {1, d[0], 1};
  std::size_t inner = 1;
  for (std::size_t i = 2; i < d.size(); ++i) inner *= d[i];
  return {d[0], d[1], inner};
}

}  // namespace

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw UsageError("concat_channels: no parts");
  const Dims& ref = parts[0].dims();
  std::size_t total = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Dims& d = parts[k].dims();
    bool ok = d.size() == ref.size();
    if (ok && d.size() >= 2) {
      ok = d[0] == ref[0];
      for (std::size_t i = 2; ok && i < d.size(); ++i) ok = d[i] == ref[i];
    }
    if (!ok) {
      throw ShapeError("concat_channels: part " + std::to_string(k) + " has dims " +
                       to_string(d) + ", incompatible with part 0 dims " + to_string(ref));
    }
    total += axis_view(d).axis;
  }
  Dims out_dims = ref;
  out_dims[ref.size() == 1 ? 0 : 1] = total;
  const AxisView ov = axis_view(out_dims);
  std::vector<float> out(product(out_dims));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const AxisView pv = axis_view(p.dims());
    auto src = p.data();
    for (std::size_t o = 0; o < pv.outer; ++o) {
      std::copy_n(src.begin() + o * pv.axis * pv.inner, pv.axis * pv.inner,
                  out.begin() + (o * ov.axis + offset) * ov.inner);
    }
    offsets.push_back(offset);
    offset += pv.axis;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return detail::make_result(
      std::move(out_dims), std::move(out), "concat_channels", std::move(inputs),
      [offsets, ov](const BackwardContext& ctx) {
        for (std::size_t k = 0; k < ctx.inputs.size(); ++k) {
          if (!ctx.wants(k)) continue;
          const AxisView pv = axis_view(ctx.input_dims(k));
          auto g = ctx.grad(k);
          for (std::size_t o = 0; o < pv.outer; ++o) {
            const float* src = ctx.grad_output.data() + (o * ov.axis + offsets[k]) * ov.inner;
            float* dst = g.data() + o * pv.axis * pv.inner;
            for (std::size_t i = 0; i < pv.axis * pv.inner; ++i) dst[i] += src[i];
          }
        }
      });
}

Tensor concat_channels(std::initializer_list<Tensor> parts) {
  return concat_channels(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor slice_channels(const Tensor& a, std::size_t begin, std::size_t count) {
  const AxisView v = axis_view(a.dims());
  if (count == 0 || begin + count > v.axis) {
    throw ShapeError("slice_channels: band [" + std::to_string(begin) + "," +
                     std::to_string(begin + count) + ") outside " + to_string(a.dims()));
  }
  Dims out_dims = a.dims();
  out_dims[a.rank() == 1 ? 0 : 1] = count;
  std::vector<float> out(product(out_dims));
  auto src = a.data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    std::copy_n(src.begin() + (o * v.axis + begin) * v.inner, count * v.inner,
                out.begin() + o * count * v.inner);
  }
  return detail::make_result(std::move(out_dims), std::move(out), "slice_channels", {a},
                             [v, begin, count](const BackwardContext& ctx) {
                               if (!ctx.wants(0)) return;
                               auto g = ctx.grad(0);
                               for (std::size_t o = 0; o < v.outer; ++o) {
                                 const float* src = ctx.grad_output.data() + o * count * v.inner;
                                 float* dst = g.data() + (o * v.axis + begin) * v.inner;
                                 for (std::size_t i = 0; i < count * v.inner; ++i) dst[i] += src[i];
                               }
                             });
}

Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  require_rank(input, 2, "dense");
  require_rank(weights, 2, "dense");
  require_rank(bias, 1, "dense");
  const std::size_t n = input.dim(0), fin = input.dim(1), fout = weights.dim(1);
  if (weights.dim(0) != fin || bias.dim(0) != fout) {
    throw ShapeError("dense: inner extents disagree: input " + to_string(input.dims()) +
                     ", weights " + to_string(weights.dims()) + ", bias " +
                     to_string(bias.dims()));
  }
  auto x = input.data();
  auto w = weights.data();
  auto b = bias.data();
  std::vector<float> out(n * fout);
  std::vector<double> acc(fout);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < fout; ++j) acc[j] = b[j];
    for (std::size_t i = 0; i < fin; ++i) {
      const double xi = x[r * fin + i];
      const float* wrow = w.data() + i * fout;
      for (std::size_t j = 0; j < fout; ++j) acc[j] += xi * wrow[j];
    }
    for (std::size_t j = 0; j < fout; ++j) out[r * fout + j] = static_cast<float>(acc[j]);
  }
  return detail::make_result(
      {n, fout}, std::move(out), "dense", {input, weights, bias},
      [n, fin, fout](const BackwardContext& ctx) {
        const auto go = ctx.grad_output;
        if (ctx.wants(0)) {
          auto gx = ctx.grad(0);
          auto w = ctx.input(1);
          for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t i = 0; i < fin; ++i) {
              double acc = 0.0;
              for (std::size_t j = 0; j < fout; ++j) acc += double(go[r * fout + j]) * w[i * fout + j];
              gx[r * fin + i] += static_cast<float>(acc);
            }
          }
        }
        if (ctx.wants(1)) {
          auto gw = ctx.grad(1);
          auto x = ctx.input(0);
          for (std::size_t i = 0; i < fin; ++i) {
            for (std::size_t j = 0; j < fout; ++j) {
              double acc = 0.0;
              for (std::size_t r = 0; r < n; ++r) acc += double(x[r * fin + i]) * go[r * fout + j];
              gw[i * fout + j] += static_cast<float>(acc);
            }
          }
        }
        if (ctx.wants(2)) {
          auto gb = ctx.grad(2);
          for (std::size_t j = 0; j < fout; ++j) {
            double acc = 0.0;
            for (std::size_t r = 0; r < n; ++r) acc += go[r * fout + j];
            gb[j] += static_cast<float>(acc);
          }
        }
      });
}

Tensor scale_channels(const Tensor& x, const Tensor& gate) {
  require_rank(x, 4, "scale_channels");
  require_rank(gate, 2, "scale_channels");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gate.dim(0) != n || gate.dim(1) != c) {
    throw ShapeError("scale_channels: gate " + to_string(gate.dims()) + " does not match " +
                     to_string(x.dims()));
  }
  auto xv = x.data();
  auto gv = gate.data();
  std::vector<float> out(x.numel());
  for (std::size_t p = 0; p < n * c; ++p) {
    for (std::size_t i = 0; i < hw; ++i) out[p * hw + i] = xv[p * hw + i] * gv[p];
  }
  return detail::make_result(x.dims(), std::move(out), "scale_channels", {x, gate},
                             [n, c, hw](const BackwardContext& ctx) {
                               const auto go = ctx.grad_output;
                               auto xv = ctx.input(0);
                               auto gv = ctx.input(1);
                               if (ctx.wants(0)) {
                                 auto gx = ctx.grad(0);
                                 for (std::size_t p = 0; p < n * c; ++p)
                                   for (std::size_t i = 0; i < hw; ++i)
                                     gx[p * hw + i] += go[p * hw + i] * gv[p];
                               }
                               if (ctx.wants(1)) {
                                 auto gg = ctx.grad(1);
                                 for (std::size_t p = 0; p < n * c; ++p) {
                                   double acc = 0.0;
                                   for (std::size_t i = 0; i < hw; ++i)
                                     acc += double(go[p * hw + i]) * xv[p * hw + i];
                                   gg[p] += static_cast<float>(acc);
                                 }
                               }
                             });
}

Tensor scale_spatial(const Tensor& x, const Tensor& gate) {
  require_rank(x, 4, "scale_spatial");
  require_rank(gate, 4, "scale_spatial");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gate.dim(0) != n || gate.dim(1) != 1 || gate.dim(2) != x.dim(2) || gate.dim(3) != x.dim(3)) {
    throw ShapeError("scale_spatial: gate " + to_string(gate.dims()) + " does not match " +
                     to_string(x.dims()));
  }
  auto xv = x.data();
  auto gv = gate.data();
  std::vector<float> out(x.numel());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < hw; ++i)
        out[(b * c + ch) * hw + i] = xv[(b * c + ch) * hw + i] * gv[b * hw + i];
  return detail::make_result(x.dims(), std::move(out), "scale_spatial", {x, gate},
                             [n, c, hw](const BackwardContext& ctx) {
                               const auto go = ctx.grad_output;
                               auto xv = ctx.input(0);
                               auto gv = ctx.input(1);
                               if (ctx.wants(0)) {
                                 auto gx = ctx.grad(0);
                                 for (std::size_t b = 0; b < n; ++b)
                                   for (std::size_t ch = 0; ch < c; ++ch)
                                     for (std::size_t i = 0; i < hw; ++i) {
                                       const std::size_t k = (b * c + ch) * hw + i;
                                       gx[k] += go[k] * gv[b * hw + i];
                                     }
                               }
                               if (ctx.wants(1)) {
                                 auto gg = ctx.grad(1);
                                 for (std::size_t b = 0; b < n; ++b)
                                   for (std::size_t i = 0; i < hw; ++i) {
                                     double acc = 0.0;
                                     for (std::size_t ch = 0; ch < c; ++ch) {
                                       const std::size_t k = (b * c + ch) * hw + i;
                                       acc += double(go[k]) * xv[k];
                                     }
                                     gg[b * hw + i] += static_cast<float>(acc);
                                   }
                               }
                             });
}

Tensor channel_mean_max(const Tensor& x) {
  require_rank(x, 4, "channel_mean_max");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  auto xv = x.data();
  std::vector<float> out(n * 2 * hw);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < hw; ++i) {
      double acc = 0.0;
      float best = xv[b * c * hw + i];
      for (std::size_t ch = 0; ch < c; ++ch) {
        const float v = xv[(b * c + ch) * hw + i];
        acc += v;
        best = std::max(best, v);
      }
      out[(b * 2) * hw + i] = static_cast<float>(acc / double(c));
      out[(b * 2 + 1) * hw + i] = best;
    }
  }
  return detail::make_result(
      {n, 2, x.dim(2), x.dim(3)}, std::move(out), "channel_mean_max", {x},
      [n, c, hw](const BackwardContext& ctx) {
        if (!ctx.wants(0)) return;
        const auto go = ctx.grad_output;
        auto xv = ctx.input(0);
        auto gx = ctx.grad(0);
        for (std::size_t b = 0; b < n; ++b) {
          for (std::size_t i = 0; i < hw; ++i) {
            const float gmean = go[(b * 2) * hw + i] / static_cast<float>(c);
            std::size_t arg = 0;
            float best = xv[b * c * hw + i];
            for (std::size_t ch = 0; ch < c; ++ch) {
              const std::size_t k = (b * c + ch) * hw + i;
              gx[k] += gmean;
              if (xv[k] > best) {
                best = xv[k];
                arg = ch;
              }
            }
            gx[(b * c + arg) * hw + i] += go[(b * 2 + 1) * hw + i];
          }
        }
      });
}

}  // namespace msafeb
