#include "claret/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <thread>
#include <sstream>
#include <unordered_set>

#include <cblas.h>

#include "claret/common.hpp"
#include "claret/rng.hpp"

extern "C" void openblas_set_num_threads(int);

namespace claret {
namespace ad {

namespace {

thread_local bool g_grad_enabled = true;

// Single-threaded BLAS: the GEMMs here are too small to amortize a worker
// pool, and a pinned count keeps runs reproducible regardless of ambient
// OPENBLAS_NUM_THREADS.
void ensure_blas_initialized() {
    static std::once_flag flag;
    std::call_once(flag, []() { openblas_set_num_threads(1); });
}

size_t shape_numel(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return n;
}

// Exact-size buffer recycling. Training graphs allocate the same tensor
// shapes every step; reusing buffers avoids the zero-fill and page-fault cost
// of fresh vectors. Recycled contents are stale: callers either overwrite
// every element or clear explicitly.
struct BufferPool {
    std::unordered_map<size_t, std::vector<std::vector<double>>> free_lists;
    size_t pooled_bytes = 0;
    static constexpr size_t kMaxPooledBytes = size_t(1) << 30;
};
thread_local BufferPool g_buffer_pool;

std::vector<double> acquire_buffer(size_t n) {
    auto it = g_buffer_pool.free_lists.find(n);
    if (it != g_buffer_pool.free_lists.end() && !it->second.empty()) {
        std::vector<double> v = std::move(it->second.back());
        it->second.pop_back();
        g_buffer_pool.pooled_bytes -= n * sizeof(double);
        return v;
    }
    return std::vector<double>(n);
}

void release_buffer(std::vector<double>&& v) {
    const size_t bytes = v.size() * sizeof(double);
    if (v.empty() || g_buffer_pool.pooled_bytes + bytes > BufferPool::kMaxPooledBytes) return;
    g_buffer_pool.pooled_bytes += bytes;
    g_buffer_pool.free_lists[v.size()].push_back(std::move(v));
}

std::string shape_str(const std::vector<size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

void ensure_grad_buffer(Tensor::Node* n) {
    if (n->grad.empty()) {
        n->grad = acquire_buffer(n->data.size());
        std::fill(n->grad.begin(), n->grad.end(), 0.0);
    }
}

using NodePtr = std::shared_ptr<Tensor::Node>;

NodePtr make_node(std::vector<size_t> shape, std::vector<double> data) {
    auto n = std::make_shared<Tensor::Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    return n;
}

// Attach parents + backward only when the tape is live.
Tensor record(NodePtr out, std::vector<NodePtr> parents, std::function<void()> backward_fn) {
    bool needs = false;
    if (g_grad_enabled) {
        for (const NodePtr& p : parents) {
            if (p->requires_grad) {
                needs = true;
                break;
            }
        }
    }
    if (needs) {
        out->requires_grad = true;
        out->parents = std::move(parents);
        out->backward_fn = std::move(backward_fn);
    }
    return Tensor(out);
}

// C[m,n] (+)= op(A)[m,k] * op(B)[k,n], row-major.
void gemm(bool ta, bool tb, size_t m, size_t n, size_t k, const double* a, const double* b,
          double* c, double beta) {
    ensure_blas_initialized();
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0, a,
                static_cast<int>(ta ? m : k), b, static_cast<int>(tb ? k : n), beta, c,
                static_cast<int>(n));
}

uint64_t splitmix64(uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace

Tensor::Node::~Node() {
    release_buffer(std::move(data));
    release_buffer(std::move(grad));
}

Tensor Tensor::zeros(const std::vector<size_t>& shape, bool requires_grad) {
    std::vector<double> buf = acquire_buffer(shape_numel(shape));
    std::fill(buf.begin(), buf.end(), 0.0);
    auto n = make_node(shape, std::move(buf));
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::full(const std::vector<size_t>& shape, double value, bool requires_grad) {
    auto n = make_node(shape, std::vector<double>(shape_numel(shape), value));
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::from_data(const std::vector<size_t>& shape, std::vector<double> data,
                         bool requires_grad) {
    if (shape_numel(shape) != data.size())
        throw DimensionError("from_data: shape " + shape_str(shape) + " does not match data size " +
                             std::to_string(data.size()));
    auto n = make_node(shape, std::move(data));
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::scalar_value(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

std::vector<double>& Tensor::grad() {
    ensure_grad_buffer(node_.get());
    return node_->grad;
}

void Tensor::zero_grad() {
    if (node_) node_->grad.clear();
}

double Tensor::scalar() const {
    if (!node_ || node_->data.size() != 1)
        throw DimensionError("scalar(): tensor is not a scalar");
    return node_->data[0];
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------- matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    const size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    auto out = make_node({m, n}, acquire_buffer(m * n));
    gemm(false, false, m, n, k, a.data().data(), b.data().data(), out->data.data(), 0.0);

    auto pa = a.node(), pb = b.node();
    Tensor::Node* po = out.get();
    return record(out, {pa, pb}, [pa, pb, po, m, n, k]() {
        if (po->grad.empty()) return;
        if (pa->requires_grad) {
            ensure_grad_buffer(pa.get());
            gemm(false, true, m, k, n, po->grad.data(), pb->data.data(), pa->grad.data(), 1.0);
        }
        if (pb->requires_grad) {
            ensure_grad_buffer(pb.get());
            gemm(true, false, k, n, m, pa->data.data(), po->grad.data(), pb->grad.data(), 1.0);
        }
    });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
    if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0))
        throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    const size_t B = a.dim(0), m = a.dim(1), k = a.dim(2);
    const size_t bk = transpose_b ? b.dim(2) : b.dim(1);
    const size_t n = transpose_b ? b.dim(1) : b.dim(2);
    if (bk != k)
        throw DimensionError("bmm: inner dimension mismatch " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    auto out = make_node({B, m, n}, acquire_buffer(B * m * n));
    for (size_t i = 0; i < B; ++i) {
        gemm(false, transpose_b, m, n, k, a.data().data() + i * m * k,
             b.data().data() + i * (transpose_b ? n * k : k * n), out->data.data() + i * m * n, 0.0);
    }
    auto pa = a.node(), pb = b.node();
    Tensor::Node* po = out.get();
    return record(out, {pa, pb}, [pa, pb, po, B, m, n, k, transpose_b]() {
        if (po->grad.empty()) return;
        for (size_t i = 0; i < B; ++i) {
            const double* g = po->grad.data() + i * m * n;
            if (pa->requires_grad) {
                ensure_grad_buffer(pa.get());
                // dA = dC * op(B)^T
                if (!transpose_b)
                    gemm(false, true, m, k, n, g, pb->data.data() + i * k * n,
                         pa->grad.data() + i * m * k, 1.0);
                else
                    gemm(false, false, m, k, n, g, pb->data.data() + i * n * k,
                         pa->grad.data() + i * m * k, 1.0);
            }
            if (pb->requires_grad) {
                ensure_grad_buffer(pb.get());
                if (!transpose_b)
                    gemm(true, false, k, n, m, pa->data.data() + i * m * k, g,
                         pb->grad.data() + i * k * n, 1.0);
                else  // dB = dC^T * A, shape [n,k]
                    gemm(true, false, n, k, m, g, pa->data.data() + i * m * k,
                         pb->grad.data() + i * n * k, 1.0);
            }
        }
    });
}

// ------------------------------------------------------- elementwise + broadcast

namespace {

// b must equal a's shape or a trailing suffix of it.
size_t broadcast_period(const Tensor& a, const Tensor& b, const char* op) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sb.size() > sa.size())
        throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(sb) + " onto " +
                             shape_str(sa));
    for (size_t i = 0; i < sb.size(); ++i) {
        if (sb[sb.size() - 1 - i] != sa[sa.size() - 1 - i])
            throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(sa) + " vs " +
                                 shape_str(sb));
    }
    return shape_numel(sb);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    const size_t period = broadcast_period(a, b, "add");
    std::vector<double> data = acquire_buffer(a.numel());
    const auto& da = a.data();
    const auto& db = b.data();
    if (period == data.size()) {
        for (size_t i = 0; i < data.size(); ++i) data[i] = da[i] + db[i];
    } else {
        for (size_t base = 0; base < data.size(); base += period)
            for (size_t j = 0; j < period; ++j) data[base + j] = da[base + j] + db[j];
    }
    auto out = make_node(a.shape(), std::move(data));
    auto pa = a.node(), pb = b.node();
    Tensor::Node* po = out.get();
    return record(out, {pa, pb}, [pa, pb, po, period]() {
        if (po->grad.empty()) return;
        if (pa->requires_grad) {
            ensure_grad_buffer(pa.get());
            for (size_t i = 0; i < po->grad.size(); ++i) pa->grad[i] += po->grad[i];
        }
        if (pb->requires_grad) {
            ensure_grad_buffer(pb.get());
            for (size_t base = 0; base < po->grad.size(); base += period)
                for (size_t j = 0; j < period; ++j) pb->grad[j] += po->grad[base + j];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
    const size_t period = broadcast_period(a, b, "mul");
    std::vector<double> data = acquire_buffer(a.numel());
    const auto& da = a.data();
    const auto& db = b.data();
    if (period == data.size()) {
        for (size_t i = 0; i < data.size(); ++i) data[i] = da[i] * db[i];
    } else {
        for (size_t base = 0; base < data.size(); base += period)
            for (size_t j = 0; j < period; ++j) data[base + j] = da[base + j] * db[j];
    }
    auto out = make_node(a.shape(), std::move(data));
    auto pa = a.node(), pb = b.node();
    Tensor::Node* po = out.get();
    return record(out, {pa, pb}, [pa, pb, po, period]() {
        if (po->grad.empty()) return;
        if (pa->requires_grad) {
            ensure_grad_buffer(pa.get());
            for (size_t base = 0; base < po->grad.size(); base += period)
                for (size_t j = 0; j < period; ++j)
                    pa->grad[base + j] += po->grad[base + j] * pb->data[j];
        }
        if (pb->requires_grad) {
            ensure_grad_buffer(pb.get());
            for (size_t base = 0; base < po->grad.size(); base += period)
                for (size_t j = 0; j < period; ++j)
                    pb->grad[j] += po->grad[base + j] * pa->data[base + j];
        }
    });
}

Tensor scale(const Tensor& a, double c) {
    std::vector<double> data = acquire_buffer(a.numel());
    const auto& da = a.data();
    for (size_t i = 0; i < data.size(); ++i) data[i] = da[i] * c;
    auto out = make_node(a.shape(), std::move(data));
    auto pa = a.node();
    Tensor::Node* po = out.get();
    return record(out, {pa}, [pa, po, c]() {
        if (po->grad.empty() || !pa->requires_grad) return;
        ensure_grad_buffer(pa.get());
        for (size_t i = 0; i < po->grad.size(); ++i) pa->grad[i] += po->grad[i] * c;
    });
}

Tensor add_scalar(const Tensor& a, double c) {
    std::vector<double> data = acquire_buffer(a.numel());
    const auto& da = a.data();
    for (size_t i = 0; i < data.size(); ++i) data[i] = da[i] + c;
    auto out = make_node(a.shape(), std::move(data));
    auto pa = a.node();
    Tensor::Node* po = out.get();
    return record(out, {pa}, [pa, po]() {
        if (po->grad.empty() || !pa->requires_grad) return;
        ensure_grad_buffer(pa.get());
        for (size_t i = 0; i < po->grad.size(); ++i) pa->grad[i] += po->grad[i];
    });
}

// ------------------------------------------------------------ shape ops

Tensor transpose(const Tensor& a) {
    if (a.ndim() != 2) throw DimensionError("transpose: expected 2-D, got " + shape_str(a.shape()));
    const size_t m = a.dim(0), n = a.dim(1);
    std::vector<double> data = acquire_buffer(m * n);
    const auto& da = a.data();
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) data[j * m + i] = da[i * n + j];
    auto out = make_node({n, m}, std::move(data));
    auto pa = a.node();
    Tensor::Node* po = out.get();
    return record(out, {pa}, [pa, po, m, n]() {
        if (po->grad.empty() || !pa->requires_grad) return;
        ensure_grad_buffer(pa.get());
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j) pa->grad[i * n + j] += po->grad[j * m + i];
    });
}

namespace {

std::vector<size_t> strides_of(const std::vector<size_t>& shape) {
    std::vector<size_t> s(shape.size(), 1);
    for (size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
    return s;
}

}  // namespace

namespace {

// head split/merge pattern [a,b,c,d] -> [a,c,b,d]; hot enough in attention to
// avoid the generic index arithmetic
bool is_swap_middle(const std::vector<size_t>& dims) {
    return dims.size() == 4 && dims[0] == 0 && dims[1] == 2 && dims[2] == 1 && dims[3] == 3;
}

void swap_middle_copy(const std::vector<size_t>& in_shape, const double* src, double* dst,
                      bool accumulate_into_src_order) {
    const size_t A = in_shape[0], B = in_shape[1], C = in_shape[2], D = in_shape[3];
    for (size_t a = 0; a < A; ++a) {
        for (size_t b = 0; b < B; ++b) {
            for (size_t c = 0; c < C; ++c) {
                const double* s = src + ((a * B + b) * C + c) * D;
                double* t = dst + ((a * C + c) * B + b) * D;
                if (accumulate_into_src_order) {
                    for (size_t d = 0; d < D; ++d) t[d] += s[d];
                } else {
                    for (size_t d = 0; d < D; ++d) t[d] = s[d];
                }
            }
        }
    }
}

}  // namespace

Tensor permute(const Tensor& a, const std::vector<size_t>& dims) {
    if (dims.size() != a.ndim())
        throw DimensionError("permute: rank mismatch for " + shape_str(a.shape()));
    std::vector<size_t> new_shape(dims.size());
    for (size_t i = 0; i < dims.size(); ++i) new_shape[i] = a.dim(dims[i]);
    const auto in_strides = strides_of(a.shape());
    const auto out_strides = strides_of(new_shape);
    const size_t total = a.numel();
    std::vector<double> data = acquire_buffer(total);
    const auto& da = a.data();
    const bool fast = is_swap_middle(dims);
    if (fast) {
        swap_middle_copy(a.shape(), da.data(), data.data(), false);
    } else {
        for (size_t out_idx = 0; out_idx < total; ++out_idx) {
            size_t rem = out_idx;
            size_t in_idx = 0;
            for (size_t d = 0; d < dims.size(); ++d) {
                const size_t coord = rem / out_strides[d];
                rem %= out_strides[d];
                in_idx += coord * in_strides[dims[d]];
            }
            data[out_idx] = da[in_idx];
        }
    }
    auto out = make_node(new_shape, std::move(data));
    auto pa = a.node();
    Tensor::Node* po = out.get();
    auto dims_copy = dims;
    auto in_shape = a.shape();
    return record(out, {pa}, [pa, po, dims_copy, in_strides, out_strides, in_shape, fast]() {
        if (po->grad.empty() || !pa->requires_grad) return;
        ensure_grad_buffer(pa.get());
        if (fast) {
            // the swap is its own inverse: walk the output layout and add
            // back into source order
            std::vector<size_t> out_shape{in_shape[0], in_shape[2], in_shape[1], in_shape[3]};
            swap_middle_copy(out_shape, po->grad.data(), pa->grad.data(), true);
            return;
        }
        for (size_t out_idx = 0; out_idx < po->grad.size(); ++out_idx) {
            size_t rem = out_idx;
            size_t in_idx = 0;
            for (size_t d = 0; d < dims_copy.size(); ++d) {
                const size_t coord = rem / out_strides[d];
                rem %= out_strides[d];
                in_idx += coord * in_strides[dims_copy[d]];
            }
            pa->grad[in_idx] += po->grad[out_idx];
        }
    });
}

Tensor reshape(const Tensor& a, const std::vector<size_t>& new_shape) {
    if (shape_numel(new_shape) != a.numel())
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                             shape_str(new_shape));
    std::vector<double> copy = acquire_buffer(a.numel());
    std::copy(a.data().begin(), a.data().end(), copy.begin());
    auto out = make_node(new_shape, std::move(copy));
    auto pa = a.node();
    Tensor::Node* po = out.get();
    return record(out, {pa}, [pa, po]() {
        if (po->grad.empty() || !pa->requires_grad) return;
        ensure_grad_buffer(pa.get());
        for (size_t i = 0; i < po->grad.size(); ++i) pa->grad[i] += po->grad[i];
    });
}

Tensor concat(const std::vector<Tensor>& parts, size_t axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    const auto& base = parts[0].shape();
    if (axis >= base.size()) throw DimensionError("concat: bad axis");
    std::vector<size_t> out_shape = base;
    size_t axis_total = 0;
    for (const Tensor& p : parts) {
        if (p.ndim() != base.size())
            throw DimensionError("concat: rank mismatch " + shape_str(p.shape()));
        for (size_t d = 0; d < base.size(); ++d) {
            if (d != axis && p.dim(d) != base[d])
                throw DimensionError("concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                                     shape_str(base));
        }
        axis_total += p.dim(axis);
    }
    out_shape[axis] = axis_total;

    size_t outer = 1, inner = 1;
    for (size_t d = 0; d < axis; ++d) outer *= base[d];
    for (size_t d = axis + 1; d < base.size(); ++d) inner *= base[d];

    std::vector<double> data = acquire_buffer(shape_numel(out_shape));
    size_t axis_offset = 0;
    for (const Tensor& p : parts) {
        const size_t pa = p.dim(axis);
        const auto& pd = p.data();
        for (size_t o = 0; o < outer; ++o) {
            std::copy(pd.begin() + static_cast<long>(o * pa * inner),
                      pd.begin() + static_cast<long>((o + 1) * pa * inner),
                      data.begin() + static_cast<long>((o * axis_total + axis_offset) * inner));
        }
        axis_offset += pa;
    }
    auto out = make_node(out_shape, std::move(data));
    std::vector<NodePtr> parents;
    for (const Tensor& p : parts) parents.push_back(p.node());
    Tensor::Node* po = out.get();
    return record(out, parents, [parents, po, outer, inner, axis_total, axis]() {
        if (po->grad.empty()) return;
        size_t axis_offset = 0;
        for (const NodePtr& pa : parents) {
            const size_t p_axis = pa->shape[axis];
            if (pa->requires_grad) {
                ensure_grad_buffer(pa.get());
                for (size_t o = 0; o < outer; ++o) {
                    const double* src = po->grad.data() + (o * axis_total + axis_offset) * inner;
                    double* dst = pa->grad.data() + o * p_axis * inner;
                    for (size_t i = 0; i < p_axis * inner; ++i) dst[i] += src[i];
                }
            }
            axis_offset += p_axis;
        }
    });
}

Tensor slice(const Tensor& a, size_t axis, size_t start, size_t end) {
    if (axis >= a.ndim() || start >= end || end > a.dim(axis))
        throw DimensionError("slice: bad range on " + shape_str(a.shape()));
    std::vector<size_t> out_shape = a.shape();
    out_shape[axis] = end - start;
    size_t outer = 1, inner = 1;
    for (size_t d = 0; d < axis; ++d) outer *= a.dim(d);
    for (size_t d = axis + 1; d < a.ndim(); ++d) inner *= a.dim(d);
    const size_t in_axis = a.dim(axis);
    const size_t out_axis = end - start;

    std::vector<double> data = acquire_buffer(outer * out_axis * inner);
    const auto& da = a.data();
    for (size_t o = 0; o < outer; ++o) {
        std::copy(da.begin() + static_cast<long>((o * in_axis + start) * inner),
                  da.begin() + static_cast<long>((o * in_axis + end) * inner),
                  data.begin() + static_cast<long>(o * out_axis * inner));
    }
    auto out = make_node(out_shape, std::move(data));
    auto pa = a.node();
    Tensor::Node* po = out.get();
    return record(out, {pa}, [pa, po, outer, inner, in_axis, out_axis, start]() {
        if (po->grad.empty() || !pa->requires_grad) return;
        ensure_grad_buffer(pa.get());
        for (size_t o = 0; o < outer; ++o) {
            const double* src = po->grad.data() + o * out_axis * inner;
            double* dst = pa->grad.data() + (o * in_axis + start) * inner;
            for (size_t i = 0; i < out_axis * inner; ++i) dst[i] += src[i];
        }
    });
}

Tensor embedding_gather(const Tensor& table, const std::vector<int32_t>& ids) {
    if (table.ndim() != 2) throw DimensionError("embedding_gather: table must be 2-D");
    const size_t v = table.dim(0), d = table.dim(1);
    std::vector<double> data = acquire_buffer(ids.size() * d);
    const auto& td = table.data();
    for (size_t t = 0; t < ids.size(); ++t) {
        if (ids[t] < 0 || static_cast<size_t>(ids[t]) >= v)
            throw DimensionError("embedding_gather: id " + std::to_string(ids[t]) +
                                 " outside table of " + std::to_string(v));
        std::copy(td.begin() + static_cast<long>(static_cast<size_t>(ids[t]) * d),
                  td.begin() + static_cast<long>((static_cast<size_t>(ids[t]) + 1) * d),
                  data.begin() + static_cast<long>(t * d));
    }
    auto out = make_node({ids.size(), d}, std::move(data));
    auto pt = table.node();
    Tensor::Node* po = out.get();
    auto ids_copy = ids;
    return record(out, {pt}, [pt, po, ids_copy, d]() {
        if (po->grad.empty() || !pt->requires_grad) return;
        ensure_grad_buffer(pt.get());
        for (size_t t = 0; t < ids_copy.size(); ++t) {
            const double* src = po->grad.data() + t * d;
            double* dst = pt->grad.data() + static_cast<size_t>(ids_copy[t]) * d;
            for (size_t i = 0; i < d; ++i) dst[i] += src[i];
        }
    });
}

// ----------------------------------------------------------- nonlinear ops

Tensor softmax(const Tensor& a, int axis) {
    const size_t rank = a.ndim();
    const size_t ax = axis < 0 ? rank + static_cast<size_t>(static_cast<long>(axis))
                               : static_cast<size_t>(axis);
    if (ax >= rank) throw DimensionError("softmax: bad axis for " + shape_str(a.shape()));
    size_t outer = 1, inner = 1;
    for (size_t d = 0; d < ax; ++d) outer *= a.dim(d);
    for (size_t d = ax + 1; d < rank; ++d) inner *= a.dim(d);
    const size_t n = a.dim(ax);

    std::vector<double> data = acquire_buffer(a.numel());
    const auto& da = a.data();
    for (size_t o = 0; o < outer; ++o) {
        for (size_t i = 0; i < inner; ++i) {
            const size_t base = o * n * inner + i;
            double mx = -1e300;
            for (size_t j = 0; j < n; ++j) mx = std::max(mx, da[base + j * inner]);
            double total = 0.0;
            for (size_t j = 0; j < n; ++j) {
                const double e = std::exp(da[base + j * inner] - mx);
                data[base + j * inner] = e;
                total += e;
            }
            for (size_t j = 0; j < n; ++j) data[base + j * inner] /= total;
        }
    }
    auto out = make_node(a.shape(), std::move(data));
    auto pa = a.node();
    Tensor::Node* po = out.get();
    return record(out, {pa}, [pa, po, outer, inner, n]() {
        if (po->grad.empty() || !pa->requires_grad) return;
        ensure_grad_buffer(pa.get());
        for (size_t o = 0; o < outer; ++o) {
            for (size_t i = 0; i < inner; ++i) {
                const size_t base = o * n * inner + i;
                double dot = 0.0;
                for (size_t j = 0; j < n; ++j)
                    dot += po->grad[base + j * inner] * po->data[base + j * inner];
                for (size_t j = 0; j < n; ++j) {
                    const size_t idx = base + j * inner;
                    pa->grad[idx] += po->data[idx] * (po->grad[idx] - dot);
                }
            }
        }
    });
}

Tensor attention_softmax(const Tensor& scores, const std::vector<size_t>& key_valid, bool causal) {
    if (scores.ndim() != 3 || scores.dim(0) != key_valid.size())
        throw DimensionError("attention_softmax: scores " + shape_str(scores.shape()) +
                             " do not match " + std::to_string(key_valid.size()) + " groups");
    const size_t groups = scores.dim(0), nq = scores.dim(1), nk = scores.dim(2);
    std::vector<double> data = acquire_buffer(scores.numel());
    std::fill(data.begin(), data.end(), 0.0);
    const auto& ds = scores.data();
    for (size_t g = 0; g < groups; ++g) {
        const size_t klim = std::min(nk, key_valid[g]);
        for (size_t i = 0; i < nq; ++i) {
            const size_t base = (g * nq + i) * nk;
            const size_t limit = causal ? std::min(klim, i + 1) : klim;
            if (limit == 0) continue;  // fully masked row stays zero
            double mx = ds[base];
            for (size_t j = 1; j < limit; ++j) mx = std::max(mx, ds[base + j]);
            double total = 0.0;
            for (size_t j = 0; j < limit; ++j) {
                const double e = std::exp(ds[base + j] - mx);
                data[base + j] = e;
                total += e;
            }
            for (size_t j = 0; j < limit; ++j) data[base + j] /= total;
        }
    }
    auto out = make_node(scores.shape(), std::move(data));
    auto pa = scores.node();
    Tensor::Node* po = out.get();
    // masked probabilities are exactly 0, so the plain softmax backward
    // formula leaves their score gradients at 0
    return record(out, {pa}, [pa, po, groups, nq, nk]() {
        if (po->grad.empty() || !pa->requires_grad) return;
        ensure_grad_buffer(pa.get());
        for (size_t g = 0; g < groups; ++g) {
            for (size_t i = 0; i < nq; ++i) {
                const size_t base = (g * nq + i) * nk;
                double dot = 0.0;
                for (size_t j = 0; j < nk; ++j) dot += po->grad[base + j] * po->data[base + j];
                for (size_t j = 0; j < nk; ++j) {
                    pa->grad[base + j] += po->data[base + j] * (po->grad[base + j] - dot);
                }
            }
        }
    });
}

Tensor layer_norm(const Tensor& a, double eps) {
    if (a.ndim() == 0) throw DimensionError("layer_norm: scalar input");
    const size_t n = a.dim(a.ndim() - 1);
    const size_t rows = a.numel() / n;
    std::vector<double> data(a.numel());
    std::vector<double> inv_std(rows);
    const auto& da = a.data();
    for (size_t r = 0; r < rows; ++r) {
        const size_t base = r * n;
        double mean = 0.0;
        for (size_t j = 0; j < n; ++j) mean += da[base + j];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (size_t j = 0; j < n; ++j) {
            const double c = da[base + j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (size_t j = 0; j < n; ++j) data[base + j] = (da[base + j] - mean) * is;
    }
    auto out = make_node(a.shape(), std::move(data));
    auto pa = a.node();
    Tensor::Node* po = out.get();
    return record(out, {pa}, [pa, po, inv_std, n]() {
        if (po->grad.empty() || !pa->requires_grad) return;
        ensure_grad_buffer(pa.get());
        const size_t rows = po->data.size() / n;
        for (size_t r = 0; r < rows; ++r) {
            const size_t base = r * n;
            double g_mean = 0.0, gx_mean = 0.0;
            for (size_t j = 0; j < n; ++j) {
                g_mean += po->grad[base + j];
                gx_mean += po->grad[base + j] * po->data[base + j];
            }
            g_mean /= static_cast<double>(n);
            gx_mean /= static_cast<double>(n);
            for (size_t j = 0; j < n; ++j) {
                pa->grad[base + j] += inv_std[r] * (po->grad[base + j] - g_mean -
                                                    po->data[base + j] * gx_mean);
            }
        }
    });
}

Tensor gelu(const Tensor& a) {
    std::vector<double> data = acquire_buffer(a.numel());
    const auto& da = a.data();
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    for (size_t i = 0; i < data.size(); ++i)
        data[i] = 0.5 * da[i] * (1.0 + std::erf(da[i] * inv_sqrt2));
    auto out = make_node(a.shape(), std::move(data));
    auto pa = a.node();
    Tensor::Node* po = out.get();
    return record(out, {pa}, [pa, po]() {
        if (po->grad.empty() || !pa->requires_grad) return;
        ensure_grad_buffer(pa.get());
        constexpr double inv_sqrt2 = 0.7071067811865475244;
        constexpr double inv_sqrt2pi = 0.3989422804014326779;
        for (size_t i = 0; i < po->grad.size(); ++i) {
            const double x = pa->data[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            pa->grad[i] += po->grad[i] * (cdf + x * pdf);
        }
    });
}

Tensor relu(const Tensor& a) {
    std::vector<double> data = acquire_buffer(a.numel());
    const auto& da = a.data();
    for (size_t i = 0; i < data.size(); ++i) data[i] = da[i] > 0.0 ? da[i] : 0.0;
    auto out = make_node(a.shape(), std::move(data));
    auto pa = a.node();
    Tensor::Node* po = out.get();
    // subgradient at 0 is 0
    return record(out, {pa}, [pa, po]() {
        if (po->grad.empty() || !pa->requires_grad) return;
        ensure_grad_buffer(pa.get());
        for (size_t i = 0; i < po->grad.size(); ++i)
            if (pa->data[i] > 0.0) pa->grad[i] += po->grad[i];
    });
}

Tensor dropout(const Tensor& a, double p, uint64_t seed) {
    if (p < 0.0 || p >= 1.0)
        throw DimensionError("dropout: p must be in [0, 1), got " + std::to_string(p));
    if (p == 0.0) return a;  // identity
    // inverted-scale mask as a constant tensor; mul provides both the
    // forward product and the backward path through pooled buffers
    std::vector<double> mask = acquire_buffer(a.numel());
    uint64_t state = seed;
    const double keep = 1.0 - p;
    for (size_t i = 0; i < mask.size(); ++i) {
        const double u = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
        mask[i] = u < p ? 0.0 : 1.0 / keep;
    }
    return mul(a, Tensor::from_data(a.shape(), std::move(mask)));
}

Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (double v : a.data()) total += v;
    auto out = make_node({1}, {total});
    auto pa = a.node();
    Tensor::Node* po = out.get();
    return record(out, {pa}, [pa, po]() {
        if (po->grad.empty() || !pa->requires_grad) return;
        ensure_grad_buffer(pa.get());
        for (size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += po->grad[0];
    });
}

Tensor mean(const Tensor& a) {
    const double n = static_cast<double>(a.numel());
    double total = 0.0;
    for (double v : a.data()) total += v;
    auto out = make_node({1}, {total / n});
    auto pa = a.node();
    Tensor::Node* po = out.get();
    return record(out, {pa}, [pa, po, n]() {
        if (po->grad.empty() || !pa->requires_grad) return;
        ensure_grad_buffer(pa.get());
        for (size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += po->grad[0] / n;
    });
}

Tensor euclidean_distance(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError("euclidean_distance: shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    double sq = 0.0;
    const auto& da = a.data();
    const auto& db = b.data();
    for (size_t i = 0; i < da.size(); ++i) {
        const double diff = da[i] - db[i];
        sq += diff * diff;
    }
    const double dist = std::sqrt(sq);
    auto out = make_node({1}, {dist});
    auto pa = a.node(), pb = b.node();
    Tensor::Node* po = out.get();
    return record(out, {pa, pb}, [pa, pb, po]() {
        if (po->grad.empty()) return;
        const double dist = po->data[0];
        if (dist < 1e-12) return;  // subgradient 0 at coincident points
        const double g = po->grad[0] / dist;
        if (pa->requires_grad) ensure_grad_buffer(pa.get());
        if (pb->requires_grad) ensure_grad_buffer(pb.get());
        for (size_t i = 0; i < pa->data.size(); ++i) {
            const double diff = pa->data[i] - pb->data[i];
            if (pa->requires_grad) pa->grad[i] += g * diff;
            if (pb->requires_grad) pb->grad[i] -= g * diff;
        }
    });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int32_t>& targets, int32_t ignore_id,
                     Reduction reduction, std::vector<double>* per_token_nll) {
    if (logits.ndim() != 2 || logits.dim(0) != targets.size())
        throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) +
                             " do not match " + std::to_string(targets.size()) + " targets");
    const size_t n = logits.dim(0), v = logits.dim(1);
    const auto& dl = logits.data();
    if (per_token_nll) per_token_nll->assign(n, 0.0);

    double total = 0.0;
    size_t counted = 0;
    for (size_t t = 0; t < n; ++t) {
        if (targets[t] == ignore_id) continue;
        if (targets[t] < 0 || static_cast<size_t>(targets[t]) >= v)
            throw DimensionError("cross_entropy: target id " + std::to_string(targets[t]) +
                                 " outside vocab of " + std::to_string(v));
        const double* row = dl.data() + t * v;
        double mx = row[0];
        for (size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double lse = 0.0;
        for (size_t j = 0; j < v; ++j) lse += std::exp(row[j] - mx);
        const double nll = std::log(lse) + mx - row[static_cast<size_t>(targets[t])];
        if (per_token_nll) (*per_token_nll)[t] = nll;
        total += nll;
        ++counted;
    }
    const double norm = reduction == Reduction::Mean ? std::max<size_t>(counted, 1) : 1;
    auto out = make_node({1}, {total / norm});
    auto pl = logits.node();
    Tensor::Node* po = out.get();
    auto targets_copy = targets;
    return record(out, {pl}, [pl, po, targets_copy, ignore_id, v, norm]() {
        if (po->grad.empty() || !pl->requires_grad) return;
        ensure_grad_buffer(pl.get());
        const double gscale = po->grad[0] / norm;
        for (size_t t = 0; t < targets_copy.size(); ++t) {
            if (targets_copy[t] == ignore_id) continue;
            const double* row = pl->data.data() + t * v;
            double* grow = pl->grad.data() + t * v;
            double mx = row[0];
            for (size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
            double lse = 0.0;
            for (size_t j = 0; j < v; ++j) lse += std::exp(row[j] - mx);
            for (size_t j = 0; j < v; ++j) {
                const double p = std::exp(row[j] - mx) / lse;
                const double indicator = j == static_cast<size_t>(targets_copy[t]) ? 1.0 : 0.0;
                grow[j] += gscale * (p - indicator);
            }
        }
    });
}

Tensor select_row(const Tensor& a, size_t row) {
    if (a.ndim() != 2 || row >= a.dim(0))
        throw DimensionError("select_row: bad row for " + shape_str(a.shape()));
    return reshape(slice(a, 0, row, row + 1), {a.dim(1)});
}

Tensor select_batch(const Tensor& a, size_t b) {
    if (a.ndim() != 3 || b >= a.dim(0))
        throw DimensionError("select_batch: bad index for " + shape_str(a.shape()));
    return reshape(slice(a, 0, b, b + 1), {a.dim(1), a.dim(2)});
}

// -------------------------------------------------------------- backward

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw DimensionError("backward: loss must be a defined scalar");
    if (!loss.node()->requires_grad) return;  // nothing reaches parameters

    // Iterative topological order.
    std::vector<NodePtr> order;
    std::unordered_set<Tensor::Node*> visited;
    std::vector<std::pair<NodePtr, size_t>> stack;
    stack.emplace_back(loss.node(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, child_idx] = stack.back();
        if (child_idx < node->parents.size()) {
            NodePtr next = node->parents[child_idx];
            ++child_idx;
            if (visited.insert(next.get()).second && !next->parents.empty())
                stack.emplace_back(next, 0);
            else if (visited.count(next.get()) == 0)
                visited.insert(next.get());
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->grad.assign(1, 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn();
    }
    // Free the tape: intermediate nodes lose parents, closures and grads.
    for (const NodePtr& n : order) {
        if (n->backward_fn) {
            n->backward_fn = nullptr;
            n->parents.clear();
            n->grad.clear();
        }
    }
}

// --------------------------------------------------------- ParameterStore

Tensor ParameterStore::create(const std::string& name, const std::vector<size_t>& shape) {
    return create(name, shape, std::vector<double>(shape_numel(shape), 0.0));
}

Tensor ParameterStore::create(const std::string& name, const std::vector<size_t>& shape,
                              std::vector<double> data) {
    if (index_.count(name)) throw StructureError("duplicate parameter name: " + name);
    Tensor t = Tensor::from_data(shape, std::move(data), true);
    index_[name] = params_.size();
    names_.push_back(name);
    params_.push_back(t);
    return t;
}

Tensor ParameterStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw StructureError("unknown parameter: " + name);
    return params_[it->second];
}

size_t ParameterStore::total_numel() const {
    size_t total = 0;
    for (const Tensor& p : params_) total += p.numel();
    return total;
}

void ParameterStore::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

// ------------------------------------------------------- finite differences

FiniteDiffReport finite_diff_check(const std::function<Tensor()>& fn, ParameterStore& params,
                                   double h, double tol, size_t coords_per_param,
                                   uint64_t sample_seed) {
    params.zero_grad();
    Tensor loss = fn();
    backward(loss);

    std::vector<std::vector<double>> analytic(params.count());
    for (size_t p = 0; p < params.count(); ++p) {
        Tensor t = params.param_at(p);
        analytic[p] = t.has_grad() ? t.node()->grad : std::vector<double>(t.numel(), 0.0);
    }

    auto eval = [&fn]() {
        NoGradGuard guard;
        return fn().scalar();
    };

    FiniteDiffReport report;
    Rng rng(sample_seed);
    for (size_t p = 0; p < params.count(); ++p) {
        Tensor t = params.param_at(p);
        std::vector<size_t> coords;
        if (coords_per_param == 0 || coords_per_param >= t.numel()) {
            coords.resize(t.numel());
            for (size_t i = 0; i < t.numel(); ++i) coords[i] = i;
        } else {
            for (size_t i = 0; i < coords_per_param; ++i)
                coords.push_back(static_cast<size_t>(rng.below(t.numel())));
        }
        for (size_t c : coords) {
            double& x = t.data()[c];
            const double orig = x;
            x = orig + h;
            const double f_plus = eval();
            x = orig - h;
            const double f_minus = eval();
            x = orig;
            const double fd = (f_plus - f_minus) / (2.0 * h);
            const double an = analytic[p][c];
            const double denom = std::max({1.0, std::abs(fd), std::abs(an)});
            const double rel = std::abs(fd - an) / denom;
            ++report.checked;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_param = params.name_at(p);
                report.worst_coord = c;
            }
            if (rel > tol) report.failures.emplace_back(params.name_at(p), c);
        }
    }
    report.pass = report.max_rel_error <= tol;
    return report;
}

}  // namespace ad
}  // namespace claret
