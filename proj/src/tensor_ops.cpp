#include "hrf/tensor_ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hrf::diff {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

std::vector<std::size_t> row_major_strides(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 0);
    std::size_t acc = 1;
    for (std::size_t i = s.size(); i-- > 0;) {
        st[i] = acc;
        acc *= s[i];
    }
    return st;
}

struct BroadcastPlan {
    Shape out;
    // Per output axis; 0 where the operand's extent is stretched.
    std::vector<std::size_t> a_str, b_str;
};

BroadcastPlan broadcast_plan(const char* op, const Shape& a, const Shape& b) {
    const std::size_t rank = std::max(a.size(), b.size());
    BroadcastPlan p;
    p.out.resize(rank);
    Shape ap(rank, 1), bp(rank, 1);
    std::copy(a.begin(), a.end(), ap.begin() + (rank - a.size()));
    std::copy(b.begin(), b.end(), bp.begin() + (rank - b.size()));
    for (std::size_t i = 0; i < rank; ++i) {
        if (ap[i] == bp[i] || ap[i] == 1 || bp[i] == 1) {
            p.out[i] = std::max(ap[i], bp[i]);
        } else {
            throw std::invalid_argument(std::string(op) + ": shapes " +
                                        shape_str(a) + " and " + shape_str(b) +
                                        " are not broadcast-compatible");
        }
    }
    auto as = row_major_strides(ap);
    auto bs = row_major_strides(bp);
    p.a_str.resize(rank);
    p.b_str.resize(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        p.a_str[i] = ap[i] == 1 ? 0 : as[i];
        p.b_str[i] = bp[i] == 1 ? 0 : bs[i];
    }
    return p;
}

// Walks the output in row-major order, handing (out_idx, a_idx, b_idx)
// to fn. Odometer-style, O(1) amortized per element.
template <typename F>
void for_each_broadcast(const BroadcastPlan& p, F&& fn) {
    const std::size_t rank = p.out.size();
    const std::size_t n = shape_numel(p.out);
    if (rank == 0) {
        if (n) fn(std::size_t{0}, std::size_t{0}, std::size_t{0});
        return;
    }
    std::vector<std::size_t> idx(rank, 0);
    std::size_t ao = 0, bo = 0;
    for (std::size_t o = 0; o < n; ++o) {
        fn(o, ao, bo);
        for (std::size_t ax = rank; ax-- > 0;) {
            ++idx[ax];
            ao += p.a_str[ax];
            bo += p.b_str[ax];
            if (idx[ax] < p.out[ax]) break;
            ao -= p.a_str[ax] * p.out[ax];
            bo -= p.b_str[ax] * p.out[ax];
            idx[ax] = 0;
        }
    }
}

// dfa(a,b), dfb(a,b) give the local partials.
template <typename F, typename DA, typename DB>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, F f,
                 DA dfa, DB dfb) {
    BroadcastPlan plan = broadcast_plan(name, a.shape(), b.shape());
    Shape out_shape = plan.out;
    std::vector<double> out(shape_numel(plan.out));
    const auto av = a.values();
    const auto bv = b.values();
    if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
    } else {
        for_each_broadcast(plan, [&](std::size_t o, std::size_t ao, std::size_t bo) {
            out[o] = f(av[ao], bv[bo]);
        });
    }
    return Tensor::make_op(
        std::move(out_shape), std::move(out), {a, b},
        [plan = std::move(plan), dfa, dfb](Node& self) {
            Node& na = *self.inputs[0];
            Node& nb = *self.inputs[1];
            const bool ga = na.requires_grad;
            const bool gb = nb.requires_grad;
            if (ga) na.ensure_grad();
            if (gb) nb.ensure_grad();
            for_each_broadcast(plan, [&](std::size_t o, std::size_t ao, std::size_t bo) {
                const double g = self.grad[o];
                if (ga) na.grad[ao] += g * dfa(na.value[ao], nb.value[bo]);
                if (gb) nb.grad[bo] += g * dfb(na.value[ao], nb.value[bo]);
            });
        });
}

template <typename F, typename DF>
Tensor unary_op(const Tensor& a, F f, DF df) {
    std::vector<double> out(a.numel());
    const auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
    return Tensor::make_op(a.shape(), std::move(out), {a}, [f, df](Node& self) {
        Node& na = *self.inputs[0];
        if (!na.requires_grad) return;
        na.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            na.grad[i] += self.grad[i] * df(na.value[i], self.value[i]);
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor divide(const Tensor& a, const Tensor& b) {
    return binary_op(
        "divide", a, b, [](double x, double y) { return x / y; },
        [](double, double y) { return 1.0 / y; },
        [](double x, double y) { return -x / (y * y); });
}

Tensor add_scalar(const Tensor& a, double c) {
    return unary_op(a, [c](double x) { return x + c; },
                    [](double, double) { return 1.0; });
}

Tensor scale(const Tensor& a, double c) {
    return unary_op(a, [c](double x) { return x * c; },
                    [c](double, double) { return c; });
}

Tensor exp(const Tensor& a) {
    return unary_op(a, [](double x) { return std::exp(x); },
                    [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    return unary_op(a, [](double x) { return std::log(x); },
                    [](double x, double) { return 1.0 / x; });
}

Tensor relu(const Tensor& a) {
    return unary_op(a, [](double x) { return x > 0.0 ? x : 0.0; },
                    [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

// Saturates cleanly: softplus(-80) underflows to ~1.8e-35 and softplus(x)
// -> x for large x without overflow.
Tensor softplus(const Tensor& a) {
    return unary_op(a,
                    [](double x) {
                        if (x > 36.0) return x;
                        return std::log1p(std::exp(x));
                    },
                    [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Tensor sin(const Tensor& a) {
    return unary_op(a, [](double x) { return std::sin(x); },
                    [](double x, double) { return std::cos(x); });
}

Tensor cos(const Tensor& a) {
    return unary_op(a, [](double x) { return std::cos(x); },
                    [](double x, double) { return -std::sin(x); });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(a,
                    [](double x) {
                        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                        : std::exp(x) / (1.0 + std::exp(x));
                    },
                    [](double, double y) { return y * (1.0 - y); });
}

Tensor sqrt(const Tensor& a) {
    return unary_op(a, [](double x) { return std::sqrt(x); },
                    [](double, double y) { return 0.5 / y; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw std::invalid_argument("matmul: expects rank-2 operands, got " +
                                    shape_str(a.shape()) + " and " +
                                    shape_str(b.shape()));
    const std::size_t m = a.shape()[0], k = a.shape()[1];
    const std::size_t k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2)
        throw std::invalid_argument("matmul: inner extents differ, " +
                                    shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    std::vector<double> out(m * n);
    {
        CMap A(a.values().data(), m, k);
        CMap B(b.values().data(), k, n);
        MMap C(out.data(), m, n);
        C.noalias() = A * B;
    }
    return Tensor::make_op(
        {m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
            Node& na = *self.inputs[0];
            Node& nb = *self.inputs[1];
            CMap G(self.grad.data(), m, n);
            if (na.requires_grad) {
                na.ensure_grad();
                MMap dA(na.grad.data(), m, k);
                CMap B(nb.value.data(), k, n);
                dA.noalias() += G * B.transpose();
            }
            if (nb.requires_grad) {
                nb.ensure_grad();
                MMap dB(nb.grad.data(), k, n);
                CMap A(na.value.data(), m, k);
                dB.noalias() += A.transpose() * G;
            }
        });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.shape()[0] != b.shape()[0] ||
        a.shape()[2] != b.shape()[1])
        throw std::invalid_argument("bmm: incompatible shapes " +
                                    shape_str(a.shape()) + " and " +
                                    shape_str(b.shape()));
    const std::size_t bs = a.shape()[0], m = a.shape()[1], k = a.shape()[2],
                      n = b.shape()[2];
    std::vector<double> out(bs * m * n);
    for (std::size_t i = 0; i < bs; ++i) {
        CMap A(a.values().data() + i * m * k, m, k);
        CMap B(b.values().data() + i * k * n, k, n);
        MMap C(out.data() + i * m * n, m, n);
        C.noalias() = A * B;
    }
    return Tensor::make_op(
        {bs, m, n}, std::move(out), {a, b}, [bs, m, k, n](Node& self) {
            Node& na = *self.inputs[0];
            Node& nb = *self.inputs[1];
            if (na.requires_grad) na.ensure_grad();
            if (nb.requires_grad) nb.ensure_grad();
            for (std::size_t i = 0; i < bs; ++i) {
                CMap G(self.grad.data() + i * m * n, m, n);
                if (na.requires_grad) {
                    MMap dA(na.grad.data() + i * m * k, m, k);
                    CMap B(nb.value.data() + i * k * n, k, n);
                    dA.noalias() += G * B.transpose();
                }
                if (nb.requires_grad) {
                    MMap dB(nb.grad.data() + i * k * n, k, n);
                    CMap A(na.value.data() + i * m * k, m, k);
                    dB.noalias() += A.transpose() * G;
                }
            }
        });
}

Tensor transpose_last2(const Tensor& a) {
    if (a.rank() < 2)
        throw std::invalid_argument("transpose_last2: rank must be >= 2");
    Shape out_shape = a.shape();
    const std::size_t m = out_shape[a.rank() - 2], n = out_shape[a.rank() - 1];
    std::swap(out_shape[a.rank() - 2], out_shape[a.rank() - 1]);
    const std::size_t batch = a.numel() / (m * n);
    std::vector<double> out(a.numel());
    const auto av = a.values();
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                out[b * m * n + j * m + i] = av[b * m * n + i * n + j];
    return Tensor::make_op(out_shape, std::move(out), {a},
                           [batch, m, n](Node& self) {
                               Node& na = *self.inputs[0];
                               if (!na.requires_grad) return;
                               na.ensure_grad();
                               for (std::size_t b = 0; b < batch; ++b)
                                   for (std::size_t i = 0; i < m; ++i)
                                       for (std::size_t j = 0; j < n; ++j)
                                           na.grad[b * m * n + i * n + j] +=
                                               self.grad[b * m * n + j * m + i];
                           });
}

namespace {

enum class Red { kSum, kMean, kMax };

Tensor reduce_all(Red op, const Tensor& a) {
    const auto av = a.values();
    if (av.empty()) throw std::invalid_argument("reduce: empty tensor");
    double v = 0.0;
    std::size_t arg = 0;
    if (op == Red::kMax) {
        v = av[0];
        for (std::size_t i = 1; i < av.size(); ++i)
            if (av[i] > v) {
                v = av[i];
                arg = i;
            }
    } else {
        for (double x : av) v += x;
        if (op == Red::kMean) v /= static_cast<double>(av.size());
    }
    const double inv_n = 1.0 / static_cast<double>(av.size());
    return Tensor::make_op(Shape{}, {v}, {a}, [op, arg, inv_n](Node& self) {
        Node& na = *self.inputs[0];
        if (!na.requires_grad) return;
        na.ensure_grad();
        const double g = self.grad[0];
        switch (op) {
            case Red::kSum:
                for (auto& d : na.grad) d += g;
                break;
            case Red::kMean:
                for (auto& d : na.grad) d += g * inv_n;
                break;
            case Red::kMax:
                na.grad[arg] += g;
                break;
        }
    });
}

Tensor reduce_axis(Red op, const Tensor& a, std::size_t axis) {
    if (axis >= a.rank())
        throw std::invalid_argument("reduce: axis " + std::to_string(axis) +
                                    " out of range for " + shape_str(a.shape()));
    const Shape& s = a.shape();
    Shape out_shape;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (i != axis) out_shape.push_back(s[i]);
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t len = s[axis];
    if (len == 0) throw std::invalid_argument("reduce: empty axis");

    const auto av = a.values();
    std::vector<double> out(outer * inner);
    std::vector<std::size_t> argmax;
    if (op == Red::kMax) argmax.resize(outer * inner);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * len * inner + i;
            if (op == Red::kMax) {
                double v = av[base];
                std::size_t arg = 0;
                for (std::size_t l = 1; l < len; ++l) {
                    const double x = av[base + l * inner];
                    if (x > v) {
                        v = x;
                        arg = l;
                    }
                }
                out[o * inner + i] = v;
                argmax[o * inner + i] = arg;
            } else {
                double v = 0.0;
                for (std::size_t l = 0; l < len; ++l) v += av[base + l * inner];
                if (op == Red::kMean) v /= static_cast<double>(len);
                out[o * inner + i] = v;
            }
        }
    }
    return Tensor::make_op(
        out_shape, std::move(out), {a},
        [op, outer, inner, len, argmax = std::move(argmax)](Node& self) {
            Node& na = *self.inputs[0];
            if (!na.requires_grad) return;
            na.ensure_grad();
            const double inv_len = 1.0 / static_cast<double>(len);
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t i = 0; i < inner; ++i) {
                    const double g = self.grad[o * inner + i];
                    const std::size_t base = o * len * inner + i;
                    switch (op) {
                        case Red::kSum:
                            for (std::size_t l = 0; l < len; ++l)
                                na.grad[base + l * inner] += g;
                            break;
                        case Red::kMean:
                            for (std::size_t l = 0; l < len; ++l)
                                na.grad[base + l * inner] += g * inv_len;
                            break;
                        case Red::kMax:
                            na.grad[base + argmax[o * inner + i] * inner] += g;
                            break;
                    }
                }
            }
        });
}

}  // namespace

Tensor sum(const Tensor& a) { return reduce_all(Red::kSum, a); }
Tensor sum(const Tensor& a, std::size_t axis) { return reduce_axis(Red::kSum, a, axis); }
Tensor mean(const Tensor& a) { return reduce_all(Red::kMean, a); }
Tensor mean(const Tensor& a, std::size_t axis) { return reduce_axis(Red::kMean, a, axis); }
Tensor max(const Tensor& a) { return reduce_all(Red::kMax, a); }
Tensor max(const Tensor& a, std::size_t axis) { return reduce_axis(Red::kMax, a, axis); }

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw std::invalid_argument("reshape: cannot view " +
                                    shape_str(a.shape()) + " as " +
                                    shape_str(shape));
    std::vector<double> out(a.values().begin(), a.values().end());
    return Tensor::make_op(std::move(shape), std::move(out), {a}, [](Node& self) {
        Node& na = *self.inputs[0];
        if (!na.requires_grad) return;
        na.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            na.grad[i] += self.grad[i];
    });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const Shape& ref = parts[0].shape();
    if (axis >= ref.size()) throw std::invalid_argument("concat: bad axis");
    Shape out_shape = ref;
    std::size_t total = 0;
    for (const Tensor& t : parts) {
        if (t.rank() != ref.size())
            throw std::invalid_argument("concat: rank mismatch");
        for (std::size_t i = 0; i < ref.size(); ++i)
            if (i != axis && t.shape()[i] != ref[i])
                throw std::invalid_argument("concat: shape mismatch " +
                                            shape_str(t.shape()) + " vs " +
                                            shape_str(ref));
        total += t.shape()[axis];
    }
    out_shape[axis] = total;

    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= ref[i];
    for (std::size_t i = axis + 1; i < ref.size(); ++i) inner *= ref[i];

    std::vector<double> out(shape_numel(out_shape));
    std::vector<std::size_t> spans;  // axis extents per part
    std::size_t offset = 0;
    for (const Tensor& t : parts) {
        const std::size_t ax = t.shape()[axis];
        spans.push_back(ax);
        const auto v = t.values();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy(v.begin() + o * ax * inner, v.begin() + (o + 1) * ax * inner,
                      out.begin() + (o * total + offset) * inner);
        offset += ax;
    }
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    return Tensor::make_op(
        out_shape, std::move(out), std::move(inputs),
        [outer, inner, total, spans = std::move(spans)](Node& self) {
            std::size_t off = 0;
            for (std::size_t p = 0; p < self.inputs.size(); ++p) {
                Node& np = *self.inputs[p];
                const std::size_t ax = spans[p];
                if (np.requires_grad) {
                    np.ensure_grad();
                    for (std::size_t o = 0; o < outer; ++o)
                        for (std::size_t i = 0; i < ax * inner; ++i)
                            np.grad[o * ax * inner + i] +=
                                self.grad[(o * total + off) * inner + i];
                }
                off += ax;
            }
        });
}

Tensor narrow(const Tensor& a, std::size_t axis, std::size_t start,
              std::size_t len) {
    if (axis >= a.rank() || start + len > a.shape()[axis])
        throw std::invalid_argument("narrow: slice out of range for " +
                                    shape_str(a.shape()));
    const Shape& s = a.shape();
    Shape out_shape = s;
    out_shape[axis] = len;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t full = s[axis];

    std::vector<double> out(outer * len * inner);
    const auto av = a.values();
    for (std::size_t o = 0; o < outer; ++o)
        std::copy(av.begin() + (o * full + start) * inner,
                  av.begin() + (o * full + start + len) * inner,
                  out.begin() + o * len * inner);
    return Tensor::make_op(out_shape, std::move(out), {a},
                           [outer, inner, full, start, len](Node& self) {
                               Node& na = *self.inputs[0];
                               if (!na.requires_grad) return;
                               na.ensure_grad();
                               for (std::size_t o = 0; o < outer; ++o)
                                   for (std::size_t i = 0; i < len * inner; ++i)
                                       na.grad[(o * full + start) * inner + i] +=
                                           self.grad[o * len * inner + i];
                           });
}

Tensor cumsum_exclusive(const Tensor& a, std::size_t axis) {
    if (axis >= a.rank())
        throw std::invalid_argument("cumsum_exclusive: bad axis for " +
                                    shape_str(a.shape()));
    const Shape& s = a.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t len = s[axis];

    std::vector<double> out(a.numel());
    const auto av = a.values();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * len * inner + i;
            double acc = 0.0;
            for (std::size_t l = 0; l < len; ++l) {
                out[base + l * inner] = acc;
                acc += av[base + l * inner];
            }
        }
    }
    return Tensor::make_op(a.shape(), std::move(out), {a},
                           [outer, inner, len](Node& self) {
                               Node& na = *self.inputs[0];
                               if (!na.requires_grad) return;
                               na.ensure_grad();
                               for (std::size_t o = 0; o < outer; ++o) {
                                   for (std::size_t i = 0; i < inner; ++i) {
                                       const std::size_t base = o * len * inner + i;
                                       double acc = 0.0;
                                       for (std::size_t l = len; l-- > 0;) {
                                           na.grad[base + l * inner] += acc;
                                           acc += self.grad[base + l * inner];
                                       }
                                   }
                               }
                           });
}

Tensor detach(const Tensor& a) {
    std::vector<double> v(a.values().begin(), a.values().end());
    return Tensor::from_data(a.shape(), std::move(v), false);
}

namespace {
std::size_t row_width(const Tensor& a, const char* name) {
    if (a.rank() == 0)
        throw std::invalid_argument(std::string(name) + ": scalar input");
    return a.numel() / a.shape()[0];
}
}  // namespace

Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& rows) {
    const std::size_t w = row_width(a, "gather_rows");
    const std::size_t n = a.shape()[0];
    Shape out_shape = a.shape();
    out_shape[0] = rows.size();
    std::vector<double> out(rows.size() * w);
    const auto av = a.values();
    for (std::size_t m = 0; m < rows.size(); ++m) {
        if (rows[m] >= n) throw std::invalid_argument("gather_rows: row out of range");
        std::copy(av.begin() + rows[m] * w, av.begin() + (rows[m] + 1) * w,
                  out.begin() + m * w);
    }
    return Tensor::make_op(out_shape, std::move(out), {a}, [rows, w](Node& self) {
        Node& na = *self.inputs[0];
        if (!na.requires_grad) return;
        na.ensure_grad();
        for (std::size_t m = 0; m < rows.size(); ++m)
            for (std::size_t j = 0; j < w; ++j)
                na.grad[rows[m] * w + j] += self.grad[m * w + j];
    });
}

Tensor scatter_rows(const Tensor& a, const std::vector<std::size_t>& rows,
                    std::size_t n_rows, double fill) {
    const std::size_t w = row_width(a, "scatter_rows");
    if (rows.size() != a.shape()[0])
        throw std::invalid_argument("scatter_rows: row list length mismatch");
    Shape out_shape = a.shape();
    out_shape[0] = n_rows;
    std::vector<double> out(n_rows * w, fill);
    const auto av = a.values();
    for (std::size_t m = 0; m < rows.size(); ++m) {
        if (rows[m] >= n_rows)
            throw std::invalid_argument("scatter_rows: row out of range");
        std::copy(av.begin() + m * w, av.begin() + (m + 1) * w,
                  out.begin() + rows[m] * w);
    }
    return Tensor::make_op(out_shape, std::move(out), {a}, [rows, w](Node& self) {
        Node& na = *self.inputs[0];
        if (!na.requires_grad) return;
        na.ensure_grad();
        for (std::size_t m = 0; m < rows.size(); ++m)
            for (std::size_t j = 0; j < w; ++j)
                na.grad[m * w + j] += self.grad[rows[m] * w + j];
    });
}

namespace {

// Patch matrix [Cin*kh*kw, Ho*Wo] with zero padding.
Tensor im2col(const Tensor& x, int kh, int kw, int stride, int pad, int ho,
              int wo) {
    const int c = static_cast<int>(x.shape()[0]);
    const int h = static_cast<int>(x.shape()[1]);
    const int w = static_cast<int>(x.shape()[2]);
    std::vector<double> out(static_cast<std::size_t>(c) * kh * kw * ho * wo, 0.0);
    const auto xv = x.values();
    const std::size_t cols = static_cast<std::size_t>(ho) * wo;
    for (int ci = 0; ci < c; ++ci) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                const std::size_t r = (static_cast<std::size_t>(ci) * kh + ky) * kw + kx;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= w) continue;
                        out[r * cols + oy * wo + ox] =
                            xv[(static_cast<std::size_t>(ci) * h + iy) * w + ix];
                    }
                }
            }
        }
    }
    return Tensor::make_op(
        {static_cast<std::size_t>(c) * kh * kw, cols}, std::move(out), {x},
        [c, h, w, kh, kw, stride, pad, ho, wo, cols](Node& self) {
            Node& nx = *self.inputs[0];
            if (!nx.requires_grad) return;
            nx.ensure_grad();
            for (int ci = 0; ci < c; ++ci)
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) {
                        const std::size_t r =
                            (static_cast<std::size_t>(ci) * kh + ky) * kw + kx;
                        for (int oy = 0; oy < ho; ++oy) {
                            const int iy = oy * stride - pad + ky;
                            if (iy < 0 || iy >= h) continue;
                            for (int ox = 0; ox < wo; ++ox) {
                                const int ix = ox * stride - pad + kx;
                                if (ix < 0 || ix >= w) continue;
                                nx.grad[(static_cast<std::size_t>(ci) * h + iy) * w +
                                        ix] += self.grad[r * cols + oy * wo + ox];
                            }
                        }
                    }
        });
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int pad) {
    if (x.rank() != 3 || w.rank() != 4)
        throw std::invalid_argument("conv2d: expects x [C,H,W], w [Co,Ci,kh,kw]");
    if (w.shape()[1] != x.shape()[0])
        throw std::invalid_argument("conv2d: channel mismatch, x " +
                                    shape_str(x.shape()) + " w " +
                                    shape_str(w.shape()));
    const int h = static_cast<int>(x.shape()[1]);
    const int wd = static_cast<int>(x.shape()[2]);
    const int kh = static_cast<int>(w.shape()[2]);
    const int kw = static_cast<int>(w.shape()[3]);
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (wd + 2 * pad - kw) / stride + 1;
    if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: empty output");

    const std::size_t cout = w.shape()[0];
    Tensor col = im2col(x, kh, kw, stride, pad, ho, wo);
    Tensor w2 = reshape(w, {cout, w.numel() / cout});
    Tensor y = matmul(w2, col);
    y = reshape(y, {cout, static_cast<std::size_t>(ho), static_cast<std::size_t>(wo)});
    if (b.defined()) {
        if (b.numel() != cout) throw std::invalid_argument("conv2d: bias size");
        y = add(y, reshape(b, {cout, 1, 1}));
    }
    return y;
}

Tensor upsample_nearest(const Tensor& x, int factor) {
    if (x.rank() != 3) throw std::invalid_argument("upsample_nearest: want [C,H,W]");
    if (factor < 1) throw std::invalid_argument("upsample_nearest: bad factor");
    const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    const std::size_t f = static_cast<std::size_t>(factor);
    std::vector<double> out(c * h * f * w * f);
    const auto xv = x.values();
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t y = 0; y < h * f; ++y)
            for (std::size_t xx = 0; xx < w * f; ++xx)
                out[(ci * h * f + y) * w * f + xx] =
                    xv[(ci * h + y / f) * w + xx / f];
    return Tensor::make_op({c, h * f, w * f}, std::move(out), {x},
                           [c, h, w, f](Node& self) {
                               Node& nx = *self.inputs[0];
                               if (!nx.requires_grad) return;
                               nx.ensure_grad();
                               for (std::size_t ci = 0; ci < c; ++ci)
                                   for (std::size_t y = 0; y < h * f; ++y)
                                       for (std::size_t xx = 0; xx < w * f; ++xx)
                                           nx.grad[(ci * h + y / f) * w + xx / f] +=
                                               self.grad[(ci * h * f + y) * w * f + xx];
                           });
}

Tensor avg_pool2(const Tensor& x) {
    if (x.rank() != 3 || x.shape()[1] % 2 || x.shape()[2] % 2)
        throw std::invalid_argument("avg_pool2: want [C,2m,2n]");
    const std::size_t c = x.shape()[0], h = x.shape()[1] / 2, w = x.shape()[2] / 2;
    std::vector<double> out(c * h * w);
    const auto xv = x.values();
    const std::size_t hw = x.shape()[1] * x.shape()[2];
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx) {
                const std::size_t base = ci * hw + 2 * y * 2 * w + 2 * xx;
                out[(ci * h + y) * w + xx] =
                    0.25 * (xv[base] + xv[base + 1] + xv[base + 2 * w] +
                            xv[base + 2 * w + 1]);
            }
    return Tensor::make_op(
        {c, h, w}, std::move(out), {x}, [c, h, w, hw](Node& self) {
            Node& nx = *self.inputs[0];
            if (!nx.requires_grad) return;
            nx.ensure_grad();
            for (std::size_t ci = 0; ci < c; ++ci)
                for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t xx = 0; xx < w; ++xx) {
                        const double g = 0.25 * self.grad[(ci * h + y) * w + xx];
                        const std::size_t base = ci * hw + 2 * y * 2 * w + 2 * xx;
                        nx.grad[base] += g;
                        nx.grad[base + 1] += g;
                        nx.grad[base + 2 * w] += g;
                        nx.grad[base + 2 * w + 1] += g;
                    }
        });
}

Tensor grid_sample_bilinear(const Tensor& map,
                            std::span<const std::array<double, 2>> uv,
                            bool zero_outside) {
    if (map.rank() != 3) throw std::invalid_argument("grid_sample: want [C,H,W]");
    const std::size_t c = map.shape()[0];
    const int h = static_cast<int>(map.shape()[1]);
    const int w = static_cast<int>(map.shape()[2]);
    const std::size_t p = uv.size();

    struct Tap {
        std::size_t i00, i01, i10, i11;  // offsets within one channel plane
        double w00, w01, w10, w11;
        bool inside;
    };
    std::vector<Tap> taps(p);
    for (std::size_t i = 0; i < p; ++i) {
        const double u = uv[i][0], v = uv[i][1];
        Tap t{};
        t.inside = !(zero_outside &&
                     (u < 0.0 || u > static_cast<double>(w) || v < 0.0 ||
                      v > static_cast<double>(h)));
        if (t.inside) {
            const double gx = u - 0.5, gy = v - 0.5;
            int x0 = static_cast<int>(std::floor(gx));
            int y0 = static_cast<int>(std::floor(gy));
            const double fx = gx - x0, fy = gy - y0;
            const int x0c = std::clamp(x0, 0, w - 1);
            const int x1c = std::clamp(x0 + 1, 0, w - 1);
            const int y0c = std::clamp(y0, 0, h - 1);
            const int y1c = std::clamp(y0 + 1, 0, h - 1);
            t.i00 = static_cast<std::size_t>(y0c) * w + x0c;
            t.i01 = static_cast<std::size_t>(y0c) * w + x1c;
            t.i10 = static_cast<std::size_t>(y1c) * w + x0c;
            t.i11 = static_cast<std::size_t>(y1c) * w + x1c;
            t.w00 = (1 - fx) * (1 - fy);
            t.w01 = fx * (1 - fy);
            t.w10 = (1 - fx) * fy;
            t.w11 = fx * fy;
        }
        taps[i] = t;
    }

    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<double> out(p * c, 0.0);
    const auto mv = map.values();
    for (std::size_t i = 0; i < p; ++i) {
        const Tap& t = taps[i];
        if (!t.inside) continue;
        for (std::size_t ci = 0; ci < c; ++ci) {
            const double* pl = mv.data() + ci * plane;
            out[i * c + ci] = t.w00 * pl[t.i00] + t.w01 * pl[t.i01] +
                              t.w10 * pl[t.i10] + t.w11 * pl[t.i11];
        }
    }
    return Tensor::make_op(
        {p, c}, std::move(out), {map},
        [taps = std::move(taps), c, plane](Node& self) {
            Node& nm = *self.inputs[0];
            if (!nm.requires_grad) return;
            nm.ensure_grad();
            for (std::size_t i = 0; i < taps.size(); ++i) {
                const Tap& t = taps[i];
                if (!t.inside) continue;
                for (std::size_t ci = 0; ci < c; ++ci) {
                    const double g = self.grad[i * c + ci];
                    double* pl = nm.grad.data() + ci * plane;
                    pl[t.i00] += t.w00 * g;
                    pl[t.i01] += t.w01 * g;
                    pl[t.i10] += t.w10 * g;
                    pl[t.i11] += t.w11 * g;
                }
            }
        });
}

Tensor softmax_lastaxis(const Tensor& a) {
    if (a.rank() == 0) throw std::invalid_argument("softmax: scalar input");
    const std::size_t last = a.rank() - 1;
    Shape keep = a.shape();
    keep[last] = 1;
    Tensor m = reshape(max(a, last), keep);
    Tensor e = exp(sub(a, detach(m)));
    Tensor s = reshape(sum(e, last), keep);
    return divide(e, s);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    Tensor y = matmul(x, w);
    if (b.defined()) y = add(y, b);
    return y;
}

}  // namespace hrf::diff
