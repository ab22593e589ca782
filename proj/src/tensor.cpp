#include "hrf/tensor.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace hrf::diff {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

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

void Node::ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value.assign(shape_numel(shape), 0.0);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value.assign(shape_numel(shape), v);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return full(Shape{}, v, requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
    if (shape_numel(shape) != data.size())
        throw std::invalid_argument("from_data: shape " + shape_str(shape) +
                                    " does not match data length " +
                                    std::to_string(data.size()));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

std::span<double> Tensor::values_mut() { return node_->value; }

double Tensor::item() const {
    if (numel() != 1)
        throw std::invalid_argument("item: tensor " + shape_str(shape()) +
                                    " is not a scalar");
    return node_->value[0];
}

void Tensor::zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

Tensor Tensor::make_op(Shape shape, std::vector<double> value,
                       std::vector<Tensor> inputs,
                       std::function<void(Node&)> backprop) {
    if (shape_numel(shape) != value.size())
        throw std::invalid_argument("make_op: shape/value size mismatch");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    bool needs = false;
    if (g_grad_enabled) {
        for (const auto& t : inputs)
            if (t.defined() && t.requires_grad()) needs = true;
    }
    if (needs) {
        n->requires_grad = true;
        n->inputs.reserve(inputs.size());
        for (const auto& t : inputs) n->inputs.push_back(t.node());
        n->backprop = std::move(backprop);
    }
    return Tensor(std::move(n));
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be a scalar tensor");
    Node* root = loss.node().get();
    if (!root->requires_grad) {
        root->ensure_grad();
        root->grad[0] = 1.0;
        return;
    }

    // Iterative post-order DFS; children (inputs) before parents, so the
    // reversed order is a valid topological order for the reverse pass.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    struct Frame {
        Node* n;
        std::size_t next;
    };
    std::vector<Frame> stack;
    stack.push_back({root, 0});
    seen.insert(root);
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->inputs.size()) {
            Node* child = f.n->inputs[f.next++].get();
            if (child->requires_grad && seen.insert(child).second)
                stack.push_back({child, 0});
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    for (Node* n : order) n->ensure_grad();
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop) n->backprop(*n);
    }
    // Free the traversed graph; leaves keep their grads.
    for (Node* n : order) {
        n->backprop = nullptr;
        n->inputs.clear();
    }
}

namespace {

template <typename T>
void write_le(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

constexpr char kMagic[4] = {'T', 'S', 'R', '1'};

}  // namespace

void save_tensor(std::ostream& os, const Tensor& t) {
    os.write(kMagic, 4);
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) write_le<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.values().data()),
             static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

Tensor load_tensor(std::istream& is, bool requires_grad) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("load_tensor: bad magic bytes");
    auto rank = read_le<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& d : shape) d = read_le<std::uint64_t>(is);
    std::vector<double> data(shape_numel(shape));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!is) throw std::runtime_error("load_tensor: truncated payload");
    return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

}  // namespace hrf::diff
