#pragma once

// Dense n-dimensional double tensors with define-by-run reverse-mode
// autodiff. The graph is recorded while grad mode is on and freed by
// backward(); leaves keep their grads until zero_grad().

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace hrf::diff {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    // Accumulates this node's grad into its inputs' grads.
    std::function<void(Node&)> backprop;

    std::size_t numel() const { return value.size(); }
    void ensure_grad();
    void add_grad(std::size_t i, double v) {
        ensure_grad();
        grad[i] += v;
    }
};

class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data,
                            bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->value.size(); }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    std::span<const double> values() const { return node_->value; }
    // In-place mutation is for leaves only (parameter updates, probes).
    std::span<double> values_mut();
    double operator[](std::size_t i) const { return node_->value[i]; }
    double item() const;

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    double grad_at(std::size_t i) const {
        return node_->grad.empty() ? 0.0 : node_->grad[i];
    }
    void zero_grad();

    std::shared_ptr<Node> node() const { return node_; }

    // Builds an op node. When grad mode is off or no input needs grad,
    // the result is a constant (no inputs, no backprop retained).
    static Tensor make_op(Shape shape, std::vector<double> value,
                          std::vector<Tensor> inputs,
                          std::function<void(Node&)> backprop);

  private:
    std::shared_ptr<Node> node_;
};

// Scoped switch that disables graph recording (pure forward evaluation).
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

bool grad_enabled();

// Reverse pass from a scalar loss. Populates grads of every reachable
// requires_grad node, then frees the traversed graph (interior nodes
// drop their input edges and closures).
void backward(const Tensor& loss);

// Little-endian binary block: magic "TSR1", u32 rank, u64 extents,
// f64 payload in row-major order.
void save_tensor(std::ostream& os, const Tensor& t);
Tensor load_tensor(std::istream& is, bool requires_grad = false);

}  // namespace hrf::diff
