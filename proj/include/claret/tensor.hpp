#ifndef CLARET_TENSOR_HPP
#define CLARET_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace claret {
namespace ad {

// Dense row-major tensor participating in a define-by-run reverse-mode tape.
// Values are doubles; parameters are kept on the float32 grid by the
// optimizer so the 32-bit checkpoint format round-trips losslessly.
class Tensor {
public:
    struct Node {
        std::vector<size_t> shape;
        std::vector<double> data;
        std::vector<double> grad;  // materialized on demand, shape of data
        bool requires_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void()> backward_fn;
        int topo_mark = 0;
        ~Node();  // returns buffers to the thread-local pool
    };

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(const std::vector<size_t>& shape, bool requires_grad = false);
    static Tensor full(const std::vector<size_t>& shape, double value, bool requires_grad = false);
    static Tensor from_data(const std::vector<size_t>& shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar_value(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<size_t>& shape() const { return node_->shape; }
    size_t numel() const { return node_->data.size(); }
    size_t dim(size_t i) const { return node_->shape[i]; }
    size_t ndim() const { return node_->shape.size(); }

    std::vector<double>& data() { return node_->data; }
    const std::vector<double>& data() const { return node_->data; }
    bool requires_grad() const { return node_ && node_->requires_grad; }

    std::vector<double>& grad();             // allocates zeros on first touch
    bool has_grad() const { return node_ && !node_->grad.empty(); }
    void zero_grad();

    double scalar() const;  // numel() must be 1

    std::shared_ptr<Node> node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Scoped switch that disables tape recording (inference/evaluation paths).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};
bool grad_enabled();

// ---- op set ----
Tensor matmul(const Tensor& a, const Tensor& b);                  // [m,k]x[k,n]
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);  // [B,m,k]x[B,k,n]
Tensor add(const Tensor& a, const Tensor& b);   // equal shapes or b = trailing shape of a
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);   // same broadcast rule as add
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor transpose(const Tensor& a);              // 2-D
Tensor permute(const Tensor& a, const std::vector<size_t>& dims);
Tensor reshape(const Tensor& a, const std::vector<size_t>& new_shape);
Tensor concat(const std::vector<Tensor>& parts, size_t axis);
Tensor slice(const Tensor& a, size_t axis, size_t start, size_t end);
Tensor embedding_gather(const Tensor& table, const std::vector<int32_t>& ids);
Tensor softmax(const Tensor& a, int axis = -1);
// Softmax over the last axis of [G, nq, nk] attention scores where group g
// only sees keys j < key_valid[g] (and j <= query index when causal).
// Masked entries come out exactly 0.
Tensor attention_softmax(const Tensor& scores, const std::vector<size_t>& key_valid, bool causal);
Tensor layer_norm(const Tensor& a, double eps = 1e-5);  // last axis, no affine
Tensor gelu(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor dropout(const Tensor& a, double p, uint64_t seed);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor euclidean_distance(const Tensor& a, const Tensor& b);

enum class Reduction { Sum, Mean };
// Teacher-forced NLL over rows of logits. Rows whose target equals ignore_id
// contribute nothing. per_token_nll, when given, receives one entry per row
// (0.0 for ignored rows).
Tensor cross_entropy(const Tensor& logits, const std::vector<int32_t>& targets,
                     int32_t ignore_id, Reduction reduction,
                     std::vector<double>* per_token_nll = nullptr);

// 2-D/3-D row helpers (copying slices).
Tensor select_row(const Tensor& a, size_t row);     // [n,d] -> [d]
Tensor select_batch(const Tensor& a, size_t b);     // [B,n,d] -> [n,d]

void backward(const Tensor& loss);

// Named parameter registry with stable iteration order.
class ParameterStore {
public:
    Tensor create(const std::string& name, const std::vector<size_t>& shape);
    Tensor create(const std::string& name, const std::vector<size_t>& shape,
                  std::vector<double> data);
    Tensor get(const std::string& name) const;
    bool has(const std::string& name) const { return index_.count(name) > 0; }

    size_t count() const { return params_.size(); }
    const std::string& name_at(size_t i) const { return names_[i]; }
    Tensor param_at(size_t i) const { return params_[i]; }
    size_t total_numel() const;

    void zero_grad();

private:
    std::vector<std::string> names_;
    std::vector<Tensor> params_;
    std::unordered_map<std::string, size_t> index_;
};

struct FiniteDiffReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    size_t worst_coord = 0;
    size_t checked = 0;
    bool pass = false;
    std::vector<std::pair<std::string, size_t>> failures;
};

// Central-difference gradient check of fn (a fresh forward pass builder)
// against one analytic backward. coords_per_param == 0 checks every
// coordinate; otherwise a deterministic sample of that many per parameter.
FiniteDiffReport finite_diff_check(const std::function<Tensor()>& fn, ParameterStore& params,
                                   double h, double tol, size_t coords_per_param = 0,
                                   uint64_t sample_seed = 0);

}  // namespace ad
}  // namespace claret

#endif
