#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "itercqr/common.hpp"

namespace itercqr {

// Reverse-mode tape over vector-valued nodes, 64-bit precision. Ops append
// nodes and record backward closures; node indices form a topological order,
// so backward() is a single reverse sweep. Parameter leaves accumulate into
// externally owned gradient buffers, letting one optimizer step consume
// gradients from many tapes. With grad disabled the tape is a plain forward
// evaluator (used by beam search).
class Tape {
public:
    using Ref = std::size_t;

    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }

    const double* vals(Ref r) const { return nodes_[r].vptr; }
    std::size_t size(Ref r) const { return nodes_[r].n; }
    double scalar(Ref r) const {
        if (nodes_[r].n != 1) {
            throw InvariantError("tape node is not a scalar");
        }
        return nodes_[r].vptr[0];
    }
    std::vector<double> value_copy(Ref r) const {
        return std::vector<double>(vals(r), vals(r) + size(r));
    }

    Ref input(std::vector<double> v) { return push(std::move(v), nullptr); }

    // External parameter leaf; backward adds into `grad` (same length).
    Ref param(const double* values, double* grad, std::size_t n) {
        Node node;
        node.vptr = values;
        node.n = n;
        node.external_grad = grad;
        nodes_.push_back(std::move(node));
        return nodes_.size() - 1;
    }

    // y = W x with W row-major rows x cols.
    Ref matvec(Ref w, std::size_t rows, std::size_t cols, Ref x) {
        if (size(w) != rows * cols || size(x) != cols) {
            throw InvariantError("matvec shape mismatch");
        }
        std::vector<double> y(rows, 0.0);
        const double* wv = vals(w);
        const double* xv = vals(x);
        for (std::size_t r = 0; r < rows; ++r) {
            double acc = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
                acc += wv[r * cols + c] * xv[c];
            }
            y[r] = acc;
        }
        return push(std::move(y), [w, x, rows, cols](Tape& t, Ref self) {
            const double* gy = t.grads(self);
            const double* wv = t.vals(w);
            const double* xv = t.vals(x);
            double* gw = t.grads_mut(w);
            double* gx = t.grads_mut(x);
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < cols; ++c) {
                    if (gw) gw[r * cols + c] += gy[r] * xv[c];
                    if (gx) gx[c] += gy[r] * wv[r * cols + c];
                }
            }
        });
    }

    // Row slice of an embedding table (rows x width, row-major).
    Ref embed_row(Ref table, std::size_t row, std::size_t width) {
        if ((row + 1) * width > size(table)) {
            throw InvariantError("embedding row out of range");
        }
        const double* tv = vals(table) + row * width;
        std::vector<double> y(tv, tv + width);
        return push(std::move(y), [table, row, width](Tape& t, Ref self) {
            const double* gy = t.grads(self);
            double* gt = t.grads_mut(table);
            if (gt) {
                for (std::size_t i = 0; i < width; ++i) {
                    gt[row * width + i] += gy[i];
                }
            }
        });
    }

    Ref slice(Ref x, std::size_t offset, std::size_t n) {
        if (offset + n > size(x)) {
            throw InvariantError("slice out of range");
        }
        const double* xv = vals(x) + offset;
        std::vector<double> y(xv, xv + n);
        return push(std::move(y), [x, offset, n](Tape& t, Ref self) {
            const double* gy = t.grads(self);
            double* gx = t.grads_mut(x);
            if (gx) {
                for (std::size_t i = 0; i < n; ++i) {
                    gx[offset + i] += gy[i];
                }
            }
        });
    }

    Ref add(Ref a, Ref b) {
        if (size(a) != size(b)) {
            throw InvariantError("add size mismatch");
        }
        std::vector<double> y(size(a));
        for (std::size_t i = 0; i < y.size(); ++i) {
            y[i] = vals(a)[i] + vals(b)[i];
        }
        return push(std::move(y), [a, b](Tape& t, Ref self) {
            const double* gy = t.grads(self);
            double* ga = t.grads_mut(a);
            double* gb = t.grads_mut(b);
            for (std::size_t i = 0; i < t.size(self); ++i) {
                if (ga) ga[i] += gy[i];
                if (gb) gb[i] += gy[i];
            }
        });
    }

    // y = k*x + c elementwise.
    Ref affine(Ref x, double k, double c) {
        std::vector<double> y(size(x));
        for (std::size_t i = 0; i < y.size(); ++i) {
            y[i] = k * vals(x)[i] + c;
        }
        return push(std::move(y), [x, k](Tape& t, Ref self) {
            const double* gy = t.grads(self);
            double* gx = t.grads_mut(x);
            if (gx) {
                for (std::size_t i = 0; i < t.size(self); ++i) {
                    gx[i] += k * gy[i];
                }
            }
        });
    }

    Ref mul(Ref a, Ref b) {
        if (size(a) != size(b)) {
            throw InvariantError("mul size mismatch");
        }
        std::vector<double> y(size(a));
        for (std::size_t i = 0; i < y.size(); ++i) {
            y[i] = vals(a)[i] * vals(b)[i];
        }
        return push(std::move(y), [a, b](Tape& t, Ref self) {
            const double* gy = t.grads(self);
            double* ga = t.grads_mut(a);
            double* gb = t.grads_mut(b);
            for (std::size_t i = 0; i < t.size(self); ++i) {
                if (ga) ga[i] += gy[i] * t.vals(b)[i];
                if (gb) gb[i] += gy[i] * t.vals(a)[i];
            }
        });
    }

    Ref sigmoid(Ref x) {
        std::vector<double> y(size(x));
        for (std::size_t i = 0; i < y.size(); ++i) {
            y[i] = 1.0 / (1.0 + std::exp(-vals(x)[i]));
        }
        return push(std::move(y), [x](Tape& t, Ref self) {
            const double* gy = t.grads(self);
            const double* yv = t.vals(self);
            double* gx = t.grads_mut(x);
            if (gx) {
                for (std::size_t i = 0; i < t.size(self); ++i) {
                    gx[i] += gy[i] * yv[i] * (1.0 - yv[i]);
                }
            }
        });
    }

    Ref tanh_op(Ref x) {
        std::vector<double> y(size(x));
        for (std::size_t i = 0; i < y.size(); ++i) {
            y[i] = std::tanh(vals(x)[i]);
        }
        return push(std::move(y), [x](Tape& t, Ref self) {
            const double* gy = t.grads(self);
            const double* yv = t.vals(self);
            double* gx = t.grads_mut(x);
            if (gx) {
                for (std::size_t i = 0; i < t.size(self); ++i) {
                    gx[i] += gy[i] * (1.0 - yv[i] * yv[i]);
                }
            }
        });
    }

    Ref concat(Ref a, Ref b) {
        std::vector<double> y;
        y.reserve(size(a) + size(b));
        y.insert(y.end(), vals(a), vals(a) + size(a));
        y.insert(y.end(), vals(b), vals(b) + size(b));
        return push(std::move(y), [a, b](Tape& t, Ref self) {
            const double* gy = t.grads(self);
            double* ga = t.grads_mut(a);
            double* gb = t.grads_mut(b);
            std::size_t na = t.size(a);
            if (ga) {
                for (std::size_t i = 0; i < na; ++i) ga[i] += gy[i];
            }
            if (gb) {
                for (std::size_t i = 0; i < t.size(b); ++i) gb[i] += gy[na + i];
            }
        });
    }

    Ref dot(Ref a, Ref b) {
        if (size(a) != size(b)) {
            throw InvariantError("dot size mismatch");
        }
        double acc = 0.0;
        for (std::size_t i = 0; i < size(a); ++i) {
            acc += vals(a)[i] * vals(b)[i];
        }
        return push({acc}, [a, b](Tape& t, Ref self) {
            double g = t.grads(self)[0];
            double* ga = t.grads_mut(a);
            double* gb = t.grads_mut(b);
            for (std::size_t i = 0; i < t.size(a); ++i) {
                if (ga) ga[i] += g * t.vals(b)[i];
                if (gb) gb[i] += g * t.vals(a)[i];
            }
        });
    }

    Ref softmax(Ref x) {
        std::vector<double> y = softmax_values(value_copy(x));
        return push(std::move(y), [x](Tape& t, Ref self) {
            const double* gy = t.grads(self);
            const double* yv = t.vals(self);
            double* gx = t.grads_mut(x);
            if (!gx) return;
            double inner = 0.0;
            for (std::size_t i = 0; i < t.size(self); ++i) {
                inner += gy[i] * yv[i];
            }
            for (std::size_t i = 0; i < t.size(self); ++i) {
                gx[i] += yv[i] * (gy[i] - inner);
            }
        });
    }

    // Gathers scalar nodes into one vector node.
    Ref pack(const std::vector<Ref>& scalars) {
        std::vector<double> y(scalars.size());
        for (std::size_t i = 0; i < scalars.size(); ++i) {
            y[i] = this->scalar(scalars[i]);
        }
        return push(std::move(y), [scalars](Tape& t, Ref self) {
            const double* gy = t.grads(self);
            for (std::size_t i = 0; i < scalars.size(); ++i) {
                double* g = t.grads_mut(scalars[i]);
                if (g) g[0] += gy[i];
            }
        });
    }

    // y = sum_i w_i * states_i, all states the same length.
    Ref weighted_sum(Ref weights, const std::vector<Ref>& states) {
        if (size(weights) != states.size() || states.empty()) {
            throw InvariantError("weighted_sum shape mismatch");
        }
        std::size_t m = size(states[0]);
        std::vector<double> y(m, 0.0);
        for (std::size_t i = 0; i < states.size(); ++i) {
            const double* sv = vals(states[i]);
            for (std::size_t j = 0; j < m; ++j) {
                y[j] += vals(weights)[i] * sv[j];
            }
        }
        return push(std::move(y), [weights, states, m](Tape& t, Ref self) {
            const double* gy = t.grads(self);
            double* gw = t.grads_mut(weights);
            for (std::size_t i = 0; i < states.size(); ++i) {
                const double* sv = t.vals(states[i]);
                double* gs = t.grads_mut(states[i]);
                double acc = 0.0;
                for (std::size_t j = 0; j < m; ++j) {
                    acc += gy[j] * sv[j];
                    if (gs) gs[j] += t.vals(weights)[i] * gy[j];
                }
                if (gw) gw[i] += acc;
            }
        });
    }

    // log of the generation/copy mixture probability of one target token:
    //   p = g * softmax(logits)[target] + (1-g) * sum_{i: src_ids[i]==target} attn_i
    // gate and attn may be absent (kNoRef), in which case p = softmax[target].
    static constexpr Ref kNoRef = static_cast<Ref>(-1);

    Ref log_mixture_prob(Ref logits, Ref attn, Ref gate, const std::vector<int>& src_ids,
                         int target) {
        std::vector<double> pv = softmax_values(value_copy(logits));
        bool use_copy = attn != kNoRef && gate != kNoRef;
        double g = use_copy ? scalar(gate) : 1.0;
        double copy_mass = 0.0;
        if (use_copy) {
            for (std::size_t i = 0; i < src_ids.size(); ++i) {
                if (src_ids[i] == target) {
                    copy_mass += vals(attn)[i];
                }
            }
        }
        double p = g * pv[static_cast<std::size_t>(target)] + (1.0 - g) * copy_mass;
        double lp = std::log(p);
        return push({lp}, [logits, attn, gate, src_ids, target, pv, g, copy_mass, p, use_copy](
                              Tape& t, Ref self) {
            double gout = t.grads(self)[0];
            double dp = gout / p;
            double* gl = t.grads_mut(logits);
            if (gl) {
                double pt = pv[static_cast<std::size_t>(target)];
                for (std::size_t j = 0; j < pv.size(); ++j) {
                    double delta = (static_cast<int>(j) == target) ? 1.0 : 0.0;
                    gl[j] += dp * g * pt * (delta - pv[j]);
                }
            }
            if (use_copy) {
                double* gg = t.grads_mut(gate);
                if (gg) gg[0] += dp * (pv[static_cast<std::size_t>(target)] - copy_mass);
                double* ga = t.grads_mut(attn);
                if (ga) {
                    for (std::size_t i = 0; i < src_ids.size(); ++i) {
                        if (src_ids[i] == target) {
                            ga[i] += dp * (1.0 - g);
                        }
                    }
                }
            }
        });
    }

    // Seeds d(root)/d(root) = 1 and sweeps the tape backwards.
    void backward(Ref root) {
        if (!grad_enabled_) {
            throw InvariantError("backward on a grad-disabled tape");
        }
        if (size(root) != 1) {
            throw InvariantError("backward root must be scalar");
        }
        grads_mut(root)[0] += 1.0;
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            if (nodes_[i].back && node_has_grad(i)) {
                nodes_[i].back(*this, i);
            }
        }
    }

    static std::vector<double> softmax_values(std::vector<double> x) {
        double mx = x[0];
        for (double v : x) {
            mx = std::max(mx, v);
        }
        double sum = 0.0;
        for (double& v : x) {
            v = std::exp(v - mx);
            sum += v;
        }
        for (double& v : x) {
            v /= sum;
        }
        return x;
    }

private:
    struct Node {
        std::vector<double> val;
        std::vector<double> grad;
        const double* vptr = nullptr;
        std::size_t n = 0;
        double* external_grad = nullptr;
        std::function<void(Tape&, Ref)> back;
    };

    std::vector<Node> nodes_;
    bool grad_enabled_;

    template <typename Back>
    Ref push(std::vector<double> v, Back&& back) {
        Node node;
        node.val = std::move(v);
        node.vptr = node.val.data();
        node.n = node.val.size();
        if constexpr (!std::is_same_v<std::decay_t<Back>, std::nullptr_t>) {
            if (grad_enabled_) {
                node.back = std::forward<Back>(back);
            }
        }
        nodes_.push_back(std::move(node));
        return nodes_.size() - 1;
    }

    bool node_has_grad(Ref r) const {
        return nodes_[r].external_grad != nullptr || !nodes_[r].grad.empty();
    }

    // Read-only gradient view; zeros if never touched.
    const double* grads(Ref r) {
        return grads_mut(r);
    }

    // Allocates the grad buffer on first touch; nullptr when grad is disabled.
    double* grads_mut(Ref r) {
        if (!grad_enabled_) {
            return nullptr;
        }
        Node& node = nodes_[r];
        if (node.external_grad) {
            return node.external_grad;
        }
        if (node.grad.empty()) {
            node.grad.assign(node.n, 0.0);
        }
        return node.grad.data();
    }
};

}  // namespace itercqr
