#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "retfiner/common.hpp"

namespace retfiner::ag {

// Reverse-mode autodiff over dense matrices. A Tape records op nodes in
// creation order (which is a valid topological order); backward() walks the
// tape in reverse, accumulating into .grad of every reachable node.
//
// Parameters are leaf nodes created with make_param and owned by the model;
// they survive Tape::clear() between steps.

template <typename T>
struct Node {
    Mat<T> value;
    Mat<T> grad;  // allocated lazily on first accumulation
    bool requires_grad{false};
    bool grad_ready{false};
    std::string name;  // set for parameters; empty for intermediates
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
    uint32_t visit_stamp{0};

    Mat<T>& ensure_grad() {
        if (!grad_ready) {
            grad.setZero(value.rows(), value.cols());
            grad_ready = true;
        }
        return grad;
    }

    void zero_grad() {
        grad_ready = false;
        if (grad.size() > 0) {
            grad.setZero();
        }
    }

    T scalar() const { return value(0, 0); }
};

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
NodePtr<T> make_param(Mat<T> value, std::string name) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    n->name = std::move(name);
    return n;
}

// Numerically exact row softmax; -inf logits map to exactly zero probability.
template <typename T>
inline void softmax_rows_inplace(Mat<T>& m) {
    for (Index r = 0; r < m.rows(); ++r) {
        T mx = -std::numeric_limits<T>::infinity();
        for (Index c = 0; c < m.cols(); ++c) {
            if (m(r, c) > mx) {
                mx = m(r, c);
            }
        }
        T sum = T(0);
        for (Index c = 0; c < m.cols(); ++c) {
            const T e = std::exp(m(r, c) - mx);
            m(r, c) = e;
            sum += e;
        }
        const T inv = T(1) / sum;
        for (Index c = 0; c < m.cols(); ++c) {
            m(r, c) *= inv;
        }
    }
}

template <typename T>
class Tape {
public:
    // When grads are disabled the ops still compute values but record nothing.
    explicit Tape(bool grads_enabled = true) : grads_enabled_(grads_enabled) {}

    bool grads_enabled() const { return grads_enabled_; }
    size_t size() const { return nodes_.size(); }

    void clear() { nodes_.clear(); }

    NodePtr<T> constant(Mat<T> value) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(value);
        return n;
    }

    NodePtr<T> scalar_constant(T v) {
        Mat<T> m(1, 1);
        m(0, 0) = v;
        return constant(std::move(m));
    }

    // C = A * B
    NodePtr<T> matmul(NodePtr<T> a, NodePtr<T> b) {
        Mat<T> v(a->value.rows(), b->value.cols());
        v.noalias() = a->value * b->value;
        return record(std::move(v), {a, b}, [](Node<T>& self) {
            auto& a = *self.parents[0];
            auto& b = *self.parents[1];
            if (a.requires_grad) {
                a.ensure_grad().noalias() += self.grad * b.value.transpose();
            }
            if (b.requires_grad) {
                b.ensure_grad().noalias() += a.value.transpose() * self.grad;
            }
        });
    }

    // C = A * B^T
    NodePtr<T> matmul_nt(NodePtr<T> a, NodePtr<T> b) {
        Mat<T> v(a->value.rows(), b->value.rows());
        v.noalias() = a->value * b->value.transpose();
        return record(std::move(v), {a, b}, [](Node<T>& self) {
            auto& a = *self.parents[0];
            auto& b = *self.parents[1];
            if (a.requires_grad) {
                a.ensure_grad().noalias() += self.grad * b.value;
            }
            if (b.requires_grad) {
                b.ensure_grad().noalias() += self.grad.transpose() * a.value;
            }
        });
    }

    // y = x * W + 1 b   (b is a [1, M] row vector broadcast over rows)
    NodePtr<T> linear(NodePtr<T> x, NodePtr<T> w, NodePtr<T> b) {
        Mat<T> v(x->value.rows(), w->value.cols());
        v.noalias() = x->value * w->value;
        v.rowwise() += b->value.row(0);
        return record(std::move(v), {x, w, b}, [](Node<T>& self) {
            auto& x = *self.parents[0];
            auto& w = *self.parents[1];
            auto& b = *self.parents[2];
            if (x.requires_grad) {
                x.ensure_grad().noalias() += self.grad * w.value.transpose();
            }
            if (w.requires_grad) {
                w.ensure_grad().noalias() += x.value.transpose() * self.grad;
            }
            if (b.requires_grad) {
                b.ensure_grad().row(0) += self.grad.colwise().sum();
            }
        });
    }

    NodePtr<T> add(NodePtr<T> a, NodePtr<T> b) {
        return record(Mat<T>(a->value + b->value), {a, b}, [](Node<T>& self) {
            for (int i = 0; i < 2; ++i) {
                auto& p = *self.parents[i];
                if (p.requires_grad) {
                    p.ensure_grad() += self.grad;
                }
            }
        });
    }

    NodePtr<T> scale(NodePtr<T> a, T c) {
        return record(Mat<T>(a->value * c), {a}, [c](Node<T>& self) {
            auto& a = *self.parents[0];
            if (a.requires_grad) {
                a.ensure_grad() += self.grad * c;
            }
        });
    }

    // y = x * s where s is a [1,1] node (e.g. a learnable inverse temperature).
    NodePtr<T> mul_scalar_node(NodePtr<T> x, NodePtr<T> s) {
        return record(Mat<T>(x->value * s->scalar()), {x, s}, [](Node<T>& self) {
            auto& x = *self.parents[0];
            auto& s = *self.parents[1];
            if (x.requires_grad) {
                x.ensure_grad() += self.grad * s.scalar();
            }
            if (s.requires_grad) {
                s.ensure_grad()(0, 0) += (self.grad.array() * x.value.array()).sum();
            }
        });
    }

    // y = x + 1 r  (r is a [1, M] row broadcast over rows)
    NodePtr<T> add_rowvec(NodePtr<T> x, NodePtr<T> r) {
        Mat<T> v = x->value;
        v.rowwise() += r->value.row(0);
        return record(std::move(v), {x, r}, [](Node<T>& self) {
            auto& x = *self.parents[0];
            auto& r = *self.parents[1];
            if (x.requires_grad) {
                x.ensure_grad() += self.grad;
            }
            if (r.requires_grad) {
                r.ensure_grad().row(0) += self.grad.colwise().sum();
            }
        });
    }

    NodePtr<T> exp_elem(NodePtr<T> x) {
        return record(Mat<T>(x->value.array().exp()), {x}, [](Node<T>& self) {
            auto& x = *self.parents[0];
            if (x.requires_grad) {
                x.ensure_grad().array() += self.grad.array() * self.value.array();
            }
        });
    }

    NodePtr<T> transpose(NodePtr<T> x) {
        return record(Mat<T>(x->value.transpose()), {x}, [](Node<T>& self) {
            auto& x = *self.parents[0];
            if (x.requires_grad) {
                x.ensure_grad() += self.grad.transpose();
            }
        });
    }

    // y.row(i) = x.row(indices[i]). Also used as the embedding lookup.
    NodePtr<T> gather_rows(NodePtr<T> x, std::vector<Index> indices) {
        Mat<T> v(static_cast<Index>(indices.size()), x->value.cols());
        for (Index i = 0; i < v.rows(); ++i) {
            v.row(i) = x->value.row(indices[static_cast<size_t>(i)]);
        }
        return record(std::move(v), {x}, [idx = std::move(indices)](Node<T>& self) {
            auto& x = *self.parents[0];
            if (x.requires_grad) {
                auto& g = x.ensure_grad();
                for (Index i = 0; i < self.grad.rows(); ++i) {
                    g.row(idx[static_cast<size_t>(i)]) += self.grad.row(i);
                }
            }
        });
    }

    NodePtr<T> concat_rows(NodePtr<T> a, NodePtr<T> b) {
        Mat<T> v(a->value.rows() + b->value.rows(), a->value.cols());
        v.topRows(a->value.rows()) = a->value;
        v.bottomRows(b->value.rows()) = b->value;
        return record(std::move(v), {a, b}, [](Node<T>& self) {
            auto& a = *self.parents[0];
            auto& b = *self.parents[1];
            if (a.requires_grad) {
                a.ensure_grad() += self.grad.topRows(a.value.rows());
            }
            if (b.requires_grad) {
                b.ensure_grad() += self.grad.bottomRows(b.value.rows());
            }
        });
    }

    // x is [batch * period, D]; pos is [period, D] added to every batch block.
    NodePtr<T> add_positional(NodePtr<T> x, NodePtr<T> pos, Index batch) {
        const Index period = pos->value.rows();
        Mat<T> v = x->value;
        for (Index b = 0; b < batch; ++b) {
            v.middleRows(b * period, period) += pos->value;
        }
        return record(std::move(v), {x, pos}, [batch, period](Node<T>& self) {
            auto& x = *self.parents[0];
            auto& pos = *self.parents[1];
            if (x.requires_grad) {
                x.ensure_grad() += self.grad;
            }
            if (pos.requires_grad) {
                auto& g = pos.ensure_grad();
                for (Index b = 0; b < batch; ++b) {
                    g += self.grad.middleRows(b * period, period);
                }
            }
        });
    }

    // Row-wise layer norm. gamma/beta are [1, D].
    NodePtr<T> layer_norm(NodePtr<T> x, NodePtr<T> gamma, NodePtr<T> beta, T eps) {
        const Index n = x->value.rows();
        const Index d = x->value.cols();
        Mat<T> xhat(n, d);
        Vec<T> inv_std(n);
        for (Index r = 0; r < n; ++r) {
            T mean = T(0);
            for (Index c = 0; c < d; ++c) {
                mean += x->value(r, c);
            }
            mean /= static_cast<T>(d);
            T var = T(0);
            for (Index c = 0; c < d; ++c) {
                const T dv = x->value(r, c) - mean;
                var += dv * dv;
            }
            var /= static_cast<T>(d);
            const T is = T(1) / std::sqrt(var + eps);
            inv_std(r) = is;
            for (Index c = 0; c < d; ++c) {
                xhat(r, c) = (x->value(r, c) - mean) * is;
            }
        }
        Mat<T> v(n, d);
        for (Index r = 0; r < n; ++r) {
            for (Index c = 0; c < d; ++c) {
                v(r, c) = xhat(r, c) * gamma->value(0, c) + beta->value(0, c);
            }
        }
        if (!grads_enabled_) {
            return record(std::move(v), {}, nullptr);
        }
        return record(std::move(v), {x, gamma, beta},
                      [xh = std::move(xhat), is = std::move(inv_std)](Node<T>& self) {
                          auto& x = *self.parents[0];
                          auto& gamma = *self.parents[1];
                          auto& beta = *self.parents[2];
                          const Index n = self.value.rows();
                          const Index d = self.value.cols();
                          if (gamma.requires_grad) {
                              auto& gg = gamma.ensure_grad();
                              for (Index r = 0; r < n; ++r) {
                                  gg.row(0).array() +=
                                      self.grad.row(r).array() * xh.row(r).array();
                              }
                          }
                          if (beta.requires_grad) {
                              beta.ensure_grad().row(0) += self.grad.colwise().sum();
                          }
                          if (x.requires_grad) {
                              auto& gx = x.ensure_grad();
                              for (Index r = 0; r < n; ++r) {
                                  T sum_dh = T(0);
                                  T sum_dh_xh = T(0);
                                  for (Index c = 0; c < d; ++c) {
                                      const T dh = self.grad(r, c) * gamma.value(0, c);
                                      sum_dh += dh;
                                      sum_dh_xh += dh * xh(r, c);
                                  }
                                  const T m1 = sum_dh / static_cast<T>(d);
                                  const T m2 = sum_dh_xh / static_cast<T>(d);
                                  for (Index c = 0; c < d; ++c) {
                                      const T dh = self.grad(r, c) * gamma.value(0, c);
                                      gx(r, c) += is(r) * (dh - m1 - xh(r, c) * m2);
                                  }
                              }
                          }
                      });
    }

    // Exact GELU: x * Phi(x).
    NodePtr<T> gelu(NodePtr<T> x) {
        constexpr T inv_sqrt2 = T(0.70710678118654752440);
        constexpr T inv_sqrt_2pi = T(0.39894228040143267794);
        Mat<T> v(x->value.rows(), x->value.cols());
        for (Index r = 0; r < v.rows(); ++r) {
            for (Index c = 0; c < v.cols(); ++c) {
                const T xv = x->value(r, c);
                v(r, c) = xv * T(0.5) * (T(1) + std::erf(xv * inv_sqrt2));
            }
        }
        return record(std::move(v), {x}, [](Node<T>& self) {
            auto& x = *self.parents[0];
            if (!x.requires_grad) {
                return;
            }
            auto& gx = x.ensure_grad();
            for (Index r = 0; r < self.grad.rows(); ++r) {
                for (Index c = 0; c < self.grad.cols(); ++c) {
                    const T xv = x.value(r, c);
                    const T cdf = T(0.5) * (T(1) + std::erf(xv * inv_sqrt2));
                    const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * xv * xv);
                    gx(r, c) += self.grad(r, c) * (cdf + xv * pdf);
                }
            }
        });
    }

    // Multi-head scaled dot-product attention over a batch of sequences.
    // q: [batch*len_q, H*dh], k/v: [batch*len_kv, H*dh].
    // additive_mask: empty, or [batch*len_q, len_kv], entries 0 or -inf,
    // shared across heads. If capture != nullptr the softmax probabilities are
    // copied out as batch*H matrices of shape [len_q, len_kv] (b-major, then h)
    // without affecting the computation.
    NodePtr<T> attention(NodePtr<T> q, NodePtr<T> k, NodePtr<T> v, Index batch, Index num_heads,
                         const Mat<T>& additive_mask, std::vector<Mat<T>>* capture = nullptr) {
        const Index dim = q->value.cols();
        const Index dh = checked_div(dim, num_heads, "attention: head count");
        const Index len_q = checked_div(q->value.rows(), batch, "attention: query rows");
        const Index len_kv = checked_div(k->value.rows(), batch, "attention: key rows");
        const T scale = T(1) / std::sqrt(static_cast<T>(dh));
        const bool has_mask = additive_mask.size() > 0;

        Mat<T> out(q->value.rows(), dim);
        auto probs = std::make_shared<std::vector<Mat<T>>>();
        probs->resize(static_cast<size_t>(batch * num_heads));
        if (capture) {
            capture->resize(static_cast<size_t>(batch * num_heads));
        }

        for (Index b = 0; b < batch; ++b) {
            for (Index h = 0; h < num_heads; ++h) {
                // contiguous per-head copies keep the GEMM kernels identical
                // across batched and single-sample call sites
                Mat<T> qh = q->value.block(b * len_q, h * dh, len_q, dh);
                Mat<T> kh = k->value.block(b * len_kv, h * dh, len_kv, dh);
                Mat<T> vh = v->value.block(b * len_kv, h * dh, len_kv, dh);
                Mat<T> s(len_q, len_kv);
                s.noalias() = qh * kh.transpose();
                s *= scale;
                if (has_mask) {
                    s += additive_mask.middleRows(b * len_q, len_q);
                }
                softmax_rows_inplace(s);
                Mat<T>& p = (*probs)[static_cast<size_t>(b * num_heads + h)];
                p = std::move(s);
                if (capture) {
                    (*capture)[static_cast<size_t>(b * num_heads + h)] = p;
                }
                out.block(b * len_q, h * dh, len_q, dh).noalias() = p * vh;
            }
        }
        if (!grads_enabled_) {
            return record(std::move(out), {}, nullptr);
        }
        return record(
            std::move(out), {q, k, v},
            [probs, batch, num_heads, dh, len_q, len_kv, scale](Node<T>& self) {
                auto& q = *self.parents[0];
                auto& k = *self.parents[1];
                auto& v = *self.parents[2];
                const bool need_q = q.requires_grad;
                const bool need_k = k.requires_grad;
                const bool need_v = v.requires_grad;
                if (need_q) q.ensure_grad();
                if (need_k) k.ensure_grad();
                if (need_v) v.ensure_grad();
                for (Index b = 0; b < batch; ++b) {
                    for (Index h = 0; h < num_heads; ++h) {
                        const Mat<T>& p = (*probs)[static_cast<size_t>(b * num_heads + h)];
                        Mat<T> go = self.grad.block(b * len_q, h * dh, len_q, dh);
                        Mat<T> vh = v.value.block(b * len_kv, h * dh, len_kv, dh);
                        if (need_v) {
                            v.grad.block(b * len_kv, h * dh, len_kv, dh).noalias() +=
                                p.transpose() * go;
                        }
                        if (!need_q && !need_k) {
                            continue;
                        }
                        Mat<T> dp(len_q, len_kv);
                        dp.noalias() = go * vh.transpose();
                        // softmax backward: ds = p .* (dp - rowsum(dp .* p))
                        Mat<T> ds(len_q, len_kv);
                        for (Index r = 0; r < len_q; ++r) {
                            T dot = T(0);
                            for (Index c = 0; c < len_kv; ++c) {
                                dot += dp(r, c) * p(r, c);
                            }
                            for (Index c = 0; c < len_kv; ++c) {
                                ds(r, c) = p(r, c) * (dp(r, c) - dot);
                            }
                        }
                        ds *= scale;
                        if (need_q) {
                            Mat<T> kh = k.value.block(b * len_kv, h * dh, len_kv, dh);
                            q.grad.block(b * len_q, h * dh, len_q, dh).noalias() += ds * kh;
                        }
                        if (need_k) {
                            Mat<T> qh = q.value.block(b * len_q, h * dh, len_q, dh);
                            k.grad.block(b * len_kv, h * dh, len_kv, dh).noalias() +=
                                ds.transpose() * qh;
                        }
                    }
                }
            });
    }

    // Rows normalized to unit L2 norm; rows with norm < min_norm are rejected.
    NodePtr<T> l2_normalize_rows(NodePtr<T> x, T min_norm = T(1e-12)) {
        const Index n = x->value.rows();
        Vec<T> norms(n);
        Mat<T> v(n, x->value.cols());
        for (Index r = 0; r < n; ++r) {
            const T nr = x->value.row(r).norm();
            if (!(nr >= min_norm)) {
                throw NumericError("degenerate embedding: row norm " + std::to_string(double(nr)) +
                                   " below " + std::to_string(double(min_norm)));
            }
            norms(r) = nr;
            v.row(r) = x->value.row(r) / nr;
        }
        if (!grads_enabled_) {
            return record(std::move(v), {}, nullptr);
        }
        return record(std::move(v), {x}, [nrm = std::move(norms)](Node<T>& self) {
            auto& x = *self.parents[0];
            if (!x.requires_grad) {
                return;
            }
            auto& gx = x.ensure_grad();
            for (Index r = 0; r < self.value.rows(); ++r) {
                const T dot = self.grad.row(r).dot(self.value.row(r));
                gx.row(r) += (self.grad.row(r) - self.value.row(r) * dot) / nrm(r);
            }
        });
    }

    // Mean softmax cross-entropy over rows whose target is >= 0.
    // targets[i] == -1 marks an inactive row (contributes nothing).
    NodePtr<T> softmax_cross_entropy(NodePtr<T> logits, std::vector<int> targets) {
        const Index n = logits->value.rows();
        const Index vsz = logits->value.cols();
        if (static_cast<Index>(targets.size()) != n) {
            throw InputError("softmax_cross_entropy: target count mismatch");
        }
        Index active = 0;
        auto probs = std::make_shared<Mat<T>>(n, vsz);
        T total = T(0);
        for (Index r = 0; r < n; ++r) {
            const int t = targets[static_cast<size_t>(r)];
            T mx = logits->value.row(r).maxCoeff();
            T sum = T(0);
            for (Index c = 0; c < vsz; ++c) {
                const T e = std::exp(logits->value(r, c) - mx);
                (*probs)(r, c) = e;
                sum += e;
            }
            const T inv = T(1) / sum;
            for (Index c = 0; c < vsz; ++c) {
                (*probs)(r, c) *= inv;
            }
            if (t >= 0) {
                if (t >= vsz) {
                    throw InputError("softmax_cross_entropy: target out of range");
                }
                total += std::log(sum) + mx - logits->value(r, t);
                ++active;
            }
        }
        if (active == 0) {
            throw InputError("softmax_cross_entropy: no active rows");
        }
        Mat<T> v(1, 1);
        v(0, 0) = total / static_cast<T>(active);
        if (!grads_enabled_) {
            return record(std::move(v), {}, nullptr);
        }
        return record(std::move(v), {logits},
                      [probs, tg = std::move(targets), active](Node<T>& self) {
                          auto& logits = *self.parents[0];
                          if (!logits.requires_grad) {
                              return;
                          }
                          auto& g = logits.ensure_grad();
                          const T w = self.grad(0, 0) / static_cast<T>(active);
                          for (Index r = 0; r < g.rows(); ++r) {
                              const int t = tg[static_cast<size_t>(r)];
                              if (t < 0) {
                                  continue;
                              }
                              g.row(r) += probs->row(r) * w;
                              g(r, t) -= w;
                          }
                      });
    }

    void backward(const NodePtr<T>& loss) {
        if (!grads_enabled_) {
            throw UsageError("backward called on a no-grad tape");
        }
        if (loss->value.size() != 1) {
            throw UsageError("backward expects a scalar loss node");
        }
        ++stamp_;
        mark_ancestors(loss.get());
        loss->ensure_grad();
        loss->grad(0, 0) = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            Node<T>& n = **it;
            if (n.visit_stamp == stamp_ && n.requires_grad && n.backward_fn && n.grad_ready) {
                n.backward_fn(n);
            }
        }
    }

private:
    NodePtr<T> record(Mat<T> value, std::vector<NodePtr<T>> parents,
                      std::function<void(Node<T>&)> backward_fn) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(value);
        if (grads_enabled_) {
            for (const auto& p : parents) {
                if (p->requires_grad) {
                    n->requires_grad = true;
                    break;
                }
            }
            n->parents = std::move(parents);
            if (n->requires_grad) {
                n->backward_fn = std::move(backward_fn);
            }
        }
        nodes_.push_back(n);
        return n;
    }

    void mark_ancestors(Node<T>* root) {
        std::vector<Node<T>*> stack{root};
        while (!stack.empty()) {
            Node<T>* n = stack.back();
            stack.pop_back();
            if (n->visit_stamp == stamp_) {
                continue;
            }
            n->visit_stamp = stamp_;
            for (const auto& p : n->parents) {
                stack.push_back(p.get());
            }
        }
    }

    bool grads_enabled_;
    std::vector<NodePtr<T>> nodes_;
    uint32_t stamp_{0};
};

}  // namespace retfiner::ag
