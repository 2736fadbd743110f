#include "mqf/tape.hpp"

#include <cmath>
#include <utility>

#include "mqf/errors.hpp"

namespace mqf {

namespace {

constexpr double kHalfLogTwoPi = 0.91893853320467274178;  // log(2*pi)/2

double sigmoid_stable(double x) {
    if (x >= 0.0) {
        double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus_stable(double x) {
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

void require_matrix(const Tensor& t, const char* who) {
    if (t.ndim() != 2) {
        throw ShapeError(std::string(who) + ": expected a matrix, got " + shape_str(t.shape()));
    }
}

// c (M×N) += a (M×K) · b (K×N). The i-k-j order accumulates each output cell
// in ascending k, identical to a plain row·column dot product, so the same
// row produces bit-identical results whether it is multiplied alone or as
// part of a larger batch.
void mm_acc(Tensor& c, const Tensor& a, const Tensor& b) {
    const std::size_t m = a.rows(), kk = a.cols(), n = b.cols();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < kk; ++k) {
            const double av = a.at(i, k);
            for (std::size_t j = 0; j < n; ++j) c.at(i, j) += av * b.at(k, j);
        }
    }
}

// c (M×K) += g (M×N) · b (K×N)ᵀ
void mm_acc_bt(Tensor& c, const Tensor& g, const Tensor& b) {
    const std::size_t m = g.rows(), n = g.cols(), kk = b.rows();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < kk; ++k) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += g.at(i, j) * b.at(k, j);
            c.at(i, k) += s;
        }
    }
}

// c (K×N) += a (M×K)ᵀ · g (M×N)
void mm_acc_at(Tensor& c, const Tensor& a, const Tensor& g) {
    const std::size_t m = a.rows(), kk = a.cols(), n = g.cols();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < kk; ++k) {
            const double av = a.at(i, k);
            for (std::size_t j = 0; j < n; ++j) c.at(k, j) += av * g.at(i, j);
        }
    }
}

}  // namespace

Parameter& ParameterStore::add(std::string name, Tensor init) {
    if (index_.count(name)) throw ArgumentError("duplicate parameter name: " + name);
    index_[name] = items_.size();
    items_.push_back(std::make_unique<Parameter>(name, std::move(init)));
    return *items_.back();
}

Parameter& ParameterStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ArgumentError("unknown parameter: " + name);
    return *items_[it->second];
}

const Parameter& ParameterStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ArgumentError("unknown parameter: " + name);
    return *items_[it->second];
}

Parameter* ParameterStore::find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : items_[it->second].get();
}

void ParameterStore::zero_grads() {
    for (auto& p : items_) p->grad.fill(0.0);
}

void ParameterStore::scale_grads(double factor) {
    for (auto& p : items_) {
        double* g = p->grad.data();
        for (std::size_t i = 0; i < p->grad.numel(); ++i) g[i] *= factor;
    }
}

double ParameterStore::grad_norm() const {
    double s = 0.0;
    for (const auto& p : items_) {
        for (std::size_t i = 0; i < p->grad.numel(); ++i) s += p->grad.at(i) * p->grad.at(i);
    }
    return std::sqrt(s);
}

double ParameterStore::value_norm() const {
    double s = 0.0;
    for (const auto& p : items_) {
        for (std::size_t i = 0; i < p->value.numel(); ++i) s += p->value.at(i) * p->value.at(i);
    }
    return std::sqrt(s);
}

int Tape::push(Op op, OpAttrs attrs, std::vector<int> inputs, Parameter* param) {
    Node node;
    node.op = op;
    node.attrs = std::move(attrs);
    node.inputs = std::move(inputs);
    node.param = param;
    if (op == Op::kConst) {
        node.requires_grad = false;
    } else if (op == Op::kParam) {
        node.requires_grad = true;
        node.value = param->value;
    } else {
        std::vector<const Tensor*> in;
        in.reserve(node.inputs.size());
        for (int id : node.inputs) {
            if (id < 0 || id >= static_cast<int>(nodes_.size())) {
                throw ContractError("tape node id out of range");
            }
            in.push_back(&nodes_[id].value);
            node.requires_grad = node.requires_grad || nodes_[id].requires_grad;
        }
        node.value = run_forward(op, node.attrs, in);
    }
    node.grad = Tensor(node.value.shape());
    nodes_.push_back(std::move(node));
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::constant(Tensor value) {
    Node node;
    node.op = Op::kConst;
    node.value = std::move(value);
    node.grad = Tensor(node.value.shape());
    nodes_.push_back(std::move(node));
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::parameter(Parameter& p) { return push(Op::kParam, {}, {}, &p); }

int Tape::matmul(int a, int b) { return push(Op::kMatMul, {}, {a, b}); }
int Tape::add(int a, int b) { return push(Op::kAdd, {}, {a, b}); }
int Tape::sub(int a, int b) { return push(Op::kSub, {}, {a, b}); }
int Tape::mul(int a, int b) { return push(Op::kMul, {}, {a, b}); }
int Tape::add_row(int a, int row) { return push(Op::kAddRow, {}, {a, row}); }

int Tape::scale(int a, double c) {
    OpAttrs attrs;
    attrs.scalar = c;
    return push(Op::kScale, std::move(attrs), {a});
}

int Tape::elementwise(Ew kind, int x) {
    switch (kind) {
        case Ew::kSigmoid: return push(Op::kSigmoid, {}, {x});
        case Ew::kTanh: return push(Op::kTanh, {}, {x});
        case Ew::kRelu: return push(Op::kRelu, {}, {x});
        case Ew::kSoftplus: return push(Op::kSoftplus, {}, {x});
        case Ew::kExp: return push(Op::kExp, {}, {x});
        case Ew::kLog1p: return push(Op::kLog1p, {}, {x});
    }
    throw ArgumentError("unknown elementwise op");
}

int Tape::slice_cols(int a, std::size_t c0, std::size_t c1) {
    OpAttrs attrs;
    attrs.i0 = static_cast<std::int64_t>(c0);
    attrs.i1 = static_cast<std::int64_t>(c1);
    return push(Op::kSliceCols, std::move(attrs), {a});
}

int Tape::reshape(int a, std::vector<std::size_t> shape) {
    OpAttrs attrs;
    attrs.dims = std::move(shape);
    return push(Op::kReshape, std::move(attrs), {a});
}

int Tape::concat_cols(const std::vector<int>& parts) {
    if (parts.empty()) throw ArgumentError("concat_cols: no inputs");
    return push(Op::kConcatCols, {}, parts);
}

int Tape::concat_rows(const std::vector<int>& parts) {
    if (parts.empty()) throw ArgumentError("concat_rows: no inputs");
    return push(Op::kConcatRows, {}, parts);
}

int Tape::repeat_rows(int a, std::size_t k) {
    if (k == 0) throw ArgumentError("repeat_rows: repeat count must be positive");
    OpAttrs attrs;
    attrs.i0 = static_cast<std::int64_t>(k);
    return push(Op::kRepeatRows, std::move(attrs), {a});
}

int Tape::broadcast_row(int a, std::size_t n) {
    if (n == 0) throw ArgumentError("broadcast_row: row count must be positive");
    OpAttrs attrs;
    attrs.i0 = static_cast<std::int64_t>(n);
    return push(Op::kBroadcastRow, std::move(attrs), {a});
}

int Tape::lagged_rows(int a, std::size_t depth) {
    OpAttrs attrs;
    attrs.i0 = static_cast<std::int64_t>(depth);
    return push(Op::kLaggedRows, std::move(attrs), {a});
}

int Tape::select_row(int a, std::size_t i) {
    OpAttrs attrs;
    attrs.i0 = static_cast<std::int64_t>(i);
    return push(Op::kSelectRow, std::move(attrs), {a});
}

int Tape::dilated_conv(int x, int kernel, std::int64_t dilation) {
    if (dilation < 1) throw ArgumentError("dilated_conv: dilation must be >= 1");
    OpAttrs attrs;
    attrs.i0 = dilation;
    return push(Op::kDilatedConv, std::move(attrs), {x, kernel});
}

int Tape::sum_all(int a) { return push(Op::kSumAll, {}, {a}); }

int Tape::pinball_sum(int pred, std::vector<double> levels, std::vector<double> targets,
                      std::vector<double> weights) {
    for (double q : levels) {
        if (!(q > 0.0 && q < 1.0)) {
            throw ArgumentError("pinball_sum: quantile level outside (0,1): " + std::to_string(q));
        }
    }
    OpAttrs attrs;
    attrs.levels = std::move(levels);
    attrs.targets = std::move(targets);
    attrs.weights = std::move(weights);
    return push(Op::kPinballSum, std::move(attrs), {pred});
}

int Tape::gauss_nll_sum(int mu, int sigma, std::vector<double> targets,
                        std::vector<double> weights) {
    OpAttrs attrs;
    attrs.targets = std::move(targets);
    attrs.weights = std::move(weights);
    return push(Op::kGaussNllSum, std::move(attrs), {mu, sigma});
}

Tensor Tape::run_forward(Op op, const OpAttrs& attrs, const std::vector<const Tensor*>& in) {
    switch (op) {
        case Op::kConst:
        case Op::kParam:
            throw ContractError("run_forward on a leaf node");
        case Op::kMatMul: {
            const Tensor &a = *in[0], &b = *in[1];
            require_matrix(a, "matmul");
            require_matrix(b, "matmul");
            if (a.cols() != b.rows()) {
                throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
            }
            Tensor out({a.rows(), b.cols()});
            mm_acc(out, a, b);
            return out;
        }
        case Op::kAdd:
        case Op::kSub:
        case Op::kMul: {
            const Tensor &a = *in[0], &b = *in[1];
            if (!a.same_shape(b)) {
                throw ShapeError("elementwise binary op: " + shape_str(a.shape()) + " vs " +
                                 shape_str(b.shape()));
            }
            Tensor out(a.shape());
            for (std::size_t i = 0; i < a.numel(); ++i) {
                if (op == Op::kAdd) out.at(i) = a.at(i) + b.at(i);
                else if (op == Op::kSub) out.at(i) = a.at(i) - b.at(i);
                else out.at(i) = a.at(i) * b.at(i);
            }
            return out;
        }
        case Op::kAddRow: {
            const Tensor &a = *in[0], &r = *in[1];
            require_matrix(a, "add_row");
            require_matrix(r, "add_row");
            if (r.rows() != 1 || r.cols() != a.cols()) {
                throw ShapeError("add_row: " + shape_str(a.shape()) + " + " + shape_str(r.shape()));
            }
            Tensor out(a.shape());
            for (std::size_t i = 0; i < a.rows(); ++i) {
                for (std::size_t j = 0; j < a.cols(); ++j) out.at(i, j) = a.at(i, j) + r.at(0, j);
            }
            return out;
        }
        case Op::kScale: {
            const Tensor& a = *in[0];
            Tensor out(a.shape());
            for (std::size_t i = 0; i < a.numel(); ++i) out.at(i) = attrs.scalar * a.at(i);
            return out;
        }
        case Op::kSigmoid:
        case Op::kTanh:
        case Op::kRelu:
        case Op::kSoftplus:
        case Op::kExp:
        case Op::kLog1p: {
            const Tensor& a = *in[0];
            Tensor out(a.shape());
            for (std::size_t i = 0; i < a.numel(); ++i) {
                double x = a.at(i);
                switch (op) {
                    case Op::kSigmoid: out.at(i) = sigmoid_stable(x); break;
                    case Op::kTanh: out.at(i) = std::tanh(x); break;
                    // NaN stays NaN instead of flushing to 0, so a poisoned
                    // upstream value reaches the loss and trips fail-fast checks
                    case Op::kRelu: out.at(i) = x > 0.0 ? x : (x == x ? 0.0 : x); break;
                    case Op::kSoftplus: out.at(i) = softplus_stable(x); break;
                    case Op::kExp: out.at(i) = std::exp(x); break;
                    case Op::kLog1p:
                        if (x <= -1.0) {
                            throw NumericError("log1p: argument " + std::to_string(x) +
                                               " outside (-1, inf)");
                        }
                        out.at(i) = std::log1p(x);
                        break;
                    default: break;
                }
            }
            return out;
        }
        case Op::kSliceCols: {
            const Tensor& a = *in[0];
            require_matrix(a, "slice_cols");
            auto c0 = static_cast<std::size_t>(attrs.i0), c1 = static_cast<std::size_t>(attrs.i1);
            if (c0 >= c1 || c1 > a.cols()) {
                throw ShapeError("slice_cols [" + std::to_string(c0) + ", " + std::to_string(c1) +
                                 ") of " + shape_str(a.shape()));
            }
            Tensor out({a.rows(), c1 - c0});
            for (std::size_t i = 0; i < a.rows(); ++i) {
                for (std::size_t j = c0; j < c1; ++j) out.at(i, j - c0) = a.at(i, j);
            }
            return out;
        }
        case Op::kReshape:
            return in[0]->reshaped(attrs.dims);
        case Op::kConcatCols: {
            const std::size_t r = (*in[0]).rows();
            std::size_t total = 0;
            for (const Tensor* t : in) {
                require_matrix(*t, "concat_cols");
                if (t->rows() != r) throw ShapeError("concat_cols: row counts differ");
                total += t->cols();
            }
            Tensor out({r, total});
            std::size_t off = 0;
            for (const Tensor* t : in) {
                for (std::size_t i = 0; i < r; ++i) {
                    for (std::size_t j = 0; j < t->cols(); ++j) out.at(i, off + j) = t->at(i, j);
                }
                off += t->cols();
            }
            return out;
        }
        case Op::kConcatRows: {
            const std::size_t c = (*in[0]).cols();
            std::size_t total = 0;
            for (const Tensor* t : in) {
                require_matrix(*t, "concat_rows");
                if (t->cols() != c) throw ShapeError("concat_rows: column counts differ");
                total += t->rows();
            }
            Tensor out({total, c});
            std::size_t off = 0;
            for (const Tensor* t : in) {
                for (std::size_t i = 0; i < t->rows(); ++i) {
                    for (std::size_t j = 0; j < c; ++j) out.at(off + i, j) = t->at(i, j);
                }
                off += t->rows();
            }
            return out;
        }
        case Op::kRepeatRows: {
            const Tensor& a = *in[0];
            require_matrix(a, "repeat_rows");
            auto k = static_cast<std::size_t>(attrs.i0);
            Tensor out({a.rows() * k, a.cols()});
            for (std::size_t i = 0; i < a.rows(); ++i) {
                for (std::size_t r = 0; r < k; ++r) {
                    for (std::size_t j = 0; j < a.cols(); ++j) out.at(i * k + r, j) = a.at(i, j);
                }
            }
            return out;
        }
        case Op::kBroadcastRow: {
            const Tensor& a = *in[0];
            require_matrix(a, "broadcast_row");
            if (a.rows() != 1) throw ShapeError("broadcast_row: input must be 1×n");
            auto n = static_cast<std::size_t>(attrs.i0);
            Tensor out({n, a.cols()});
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < a.cols(); ++j) out.at(i, j) = a.at(0, j);
            }
            return out;
        }
        case Op::kLaggedRows: {
            const Tensor& a = *in[0];
            require_matrix(a, "lagged_rows");
            auto depth = static_cast<std::size_t>(attrs.i0);
            const std::size_t t_len = a.rows(), c = a.cols();
            Tensor out({t_len, (depth + 1) * c});  // zero-padded before t=0
            for (std::size_t t = 0; t < t_len; ++t) {
                for (std::size_t d = 0; d <= depth && d <= t; ++d) {
                    for (std::size_t j = 0; j < c; ++j) out.at(t, d * c + j) = a.at(t - d, j);
                }
            }
            return out;
        }
        case Op::kSelectRow: {
            const Tensor& a = *in[0];
            require_matrix(a, "select_row");
            auto i = static_cast<std::size_t>(attrs.i0);
            if (i >= a.rows()) throw ShapeError("select_row: index out of range");
            Tensor out({1, a.cols()});
            for (std::size_t j = 0; j < a.cols(); ++j) out.at(0, j) = a.at(i, j);
            return out;
        }
        case Op::kDilatedConv: {
            const Tensor &x = *in[0], &k = *in[1];
            require_matrix(x, "dilated_conv");
            if (k.ndim() != 3 || k.shape()[0] != 2) {
                throw ShapeError("dilated_conv: kernel must be 2×c_in×c_out, got " +
                                 shape_str(k.shape()));
            }
            if (k.shape()[1] != x.cols()) {
                throw ShapeError("dilated_conv: kernel input width " +
                                 std::to_string(k.shape()[1]) + " vs signal " +
                                 std::to_string(x.cols()));
            }
            const std::size_t t_len = x.rows(), cin = x.cols(), cout = k.shape()[2];
            const std::size_t dil = static_cast<std::size_t>(attrs.i0);
            // Causal width-2 conv: tap 0 reads t - dilation (zero before the
            // sequence start), tap 1 reads t.
            Tensor out({t_len, cout});
            for (std::size_t t = 0; t < t_len; ++t) {
                for (std::size_t ci = 0; ci < cin; ++ci) {
                    if (t >= dil) {
                        const double xv = x.at(t - dil, ci);
                        for (std::size_t co = 0; co < cout; ++co)
                            out.at(t, co) += xv * k.at3(0, ci, co);
                    }
                }
                for (std::size_t ci = 0; ci < cin; ++ci) {
                    const double xv = x.at(t, ci);
                    for (std::size_t co = 0; co < cout; ++co)
                        out.at(t, co) += xv * k.at3(1, ci, co);
                }
            }
            return out;
        }
        case Op::kSumAll: {
            const Tensor& a = *in[0];
            double s = 0.0;
            for (std::size_t i = 0; i < a.numel(); ++i) s += a.at(i);
            return Tensor::scalar(s);
        }
        case Op::kPinballSum: {
            const Tensor& pred = *in[0];
            require_matrix(pred, "pinball_sum");
            const std::size_t n = pred.rows(), nq = pred.cols();
            if (attrs.levels.size() != nq || attrs.targets.size() != n ||
                attrs.weights.size() != n * nq) {
                throw ShapeError("pinball_sum: levels/targets/weights sizes do not match " +
                                 shape_str(pred.shape()));
            }
            double total = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double y = attrs.targets[i];
                for (std::size_t j = 0; j < nq; ++j) {
                    const double w = attrs.weights[i * nq + j];
                    if (w == 0.0) continue;  // masked terms contribute no arithmetic at all
                    const double q = attrs.levels[j];
                    const double p = pred.at(i, j);
                    total += w * (p > y ? (1.0 - q) * (p - y) : q * (y - p));
                }
            }
            return Tensor::scalar(total);
        }
        case Op::kGaussNllSum: {
            const Tensor &mu = *in[0], &sigma = *in[1];
            if (!mu.same_shape(sigma)) {
                throw ShapeError("gauss_nll_sum: mu " + shape_str(mu.shape()) + " vs sigma " +
                                 shape_str(sigma.shape()));
            }
            const std::size_t n = mu.numel();
            if (attrs.targets.size() != n || attrs.weights.size() != n) {
                throw ShapeError("gauss_nll_sum: targets/weights sizes do not match");
            }
            double total = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double w = attrs.weights[i];
                if (w == 0.0) continue;
                const double s = sigma.at(i);
                if (!(s > 0.0)) {
                    throw NumericError("gauss_nll_sum: sigma must be positive, got " +
                                       std::to_string(s));
                }
                const double z = (attrs.targets[i] - mu.at(i)) / s;
                total += w * (std::log(s) + 0.5 * z * z + kHalfLogTwoPi);
            }
            return Tensor::scalar(total);
        }
    }
    throw ContractError("run_forward: unknown op");
}

Tensor& Tape::grad_buffer(int node) { return nodes_[node].grad; }

void Tape::backprop(Node& node) {
    const Tensor& g = node.grad;
    switch (node.op) {
        case Op::kConst:
        case Op::kParam:
            return;
        case Op::kMatMul: {
            const Tensor& a = nodes_[node.inputs[0]].value;
            const Tensor& b = nodes_[node.inputs[1]].value;
            if (nodes_[node.inputs[0]].requires_grad) mm_acc_bt(grad_buffer(node.inputs[0]), g, b);
            if (nodes_[node.inputs[1]].requires_grad) mm_acc_at(grad_buffer(node.inputs[1]), a, g);
            return;
        }
        case Op::kAdd: {
            for (int side = 0; side < 2; ++side) {
                if (!nodes_[node.inputs[side]].requires_grad) continue;
                Tensor& d = grad_buffer(node.inputs[side]);
                for (std::size_t i = 0; i < g.numel(); ++i) d.at(i) += g.at(i);
            }
            return;
        }
        case Op::kSub: {
            if (nodes_[node.inputs[0]].requires_grad) {
                Tensor& d = grad_buffer(node.inputs[0]);
                for (std::size_t i = 0; i < g.numel(); ++i) d.at(i) += g.at(i);
            }
            if (nodes_[node.inputs[1]].requires_grad) {
                Tensor& d = grad_buffer(node.inputs[1]);
                for (std::size_t i = 0; i < g.numel(); ++i) d.at(i) -= g.at(i);
            }
            return;
        }
        case Op::kMul: {
            const Tensor& a = nodes_[node.inputs[0]].value;
            const Tensor& b = nodes_[node.inputs[1]].value;
            if (nodes_[node.inputs[0]].requires_grad) {
                Tensor& d = grad_buffer(node.inputs[0]);
                for (std::size_t i = 0; i < g.numel(); ++i) d.at(i) += g.at(i) * b.at(i);
            }
            if (nodes_[node.inputs[1]].requires_grad) {
                Tensor& d = grad_buffer(node.inputs[1]);
                for (std::size_t i = 0; i < g.numel(); ++i) d.at(i) += g.at(i) * a.at(i);
            }
            return;
        }
        case Op::kAddRow: {
            if (nodes_[node.inputs[0]].requires_grad) {
                Tensor& d = grad_buffer(node.inputs[0]);
                for (std::size_t i = 0; i < g.numel(); ++i) d.at(i) += g.at(i);
            }
            if (nodes_[node.inputs[1]].requires_grad) {
                Tensor& d = grad_buffer(node.inputs[1]);
                for (std::size_t i = 0; i < g.rows(); ++i) {
                    for (std::size_t j = 0; j < g.cols(); ++j) d.at(0, j) += g.at(i, j);
                }
            }
            return;
        }
        case Op::kScale: {
            if (!nodes_[node.inputs[0]].requires_grad) return;
            Tensor& d = grad_buffer(node.inputs[0]);
            for (std::size_t i = 0; i < g.numel(); ++i) d.at(i) += node.attrs.scalar * g.at(i);
            return;
        }
        case Op::kSigmoid: {
            if (!nodes_[node.inputs[0]].requires_grad) return;
            Tensor& d = grad_buffer(node.inputs[0]);
            const Tensor& y = node.value;
            for (std::size_t i = 0; i < g.numel(); ++i)
                d.at(i) += g.at(i) * y.at(i) * (1.0 - y.at(i));
            return;
        }
        case Op::kTanh: {
            if (!nodes_[node.inputs[0]].requires_grad) return;
            Tensor& d = grad_buffer(node.inputs[0]);
            const Tensor& y = node.value;
            for (std::size_t i = 0; i < g.numel(); ++i)
                d.at(i) += g.at(i) * (1.0 - y.at(i) * y.at(i));
            return;
        }
        case Op::kRelu: {
            if (!nodes_[node.inputs[0]].requires_grad) return;
            Tensor& d = grad_buffer(node.inputs[0]);
            const Tensor& x = nodes_[node.inputs[0]].value;
            for (std::size_t i = 0; i < g.numel(); ++i) {
                if (x.at(i) > 0.0) d.at(i) += g.at(i);  // derivative at 0 taken as 0
            }
            return;
        }
        case Op::kSoftplus: {
            if (!nodes_[node.inputs[0]].requires_grad) return;
            Tensor& d = grad_buffer(node.inputs[0]);
            const Tensor& x = nodes_[node.inputs[0]].value;
            for (std::size_t i = 0; i < g.numel(); ++i)
                d.at(i) += g.at(i) * sigmoid_stable(x.at(i));
            return;
        }
        case Op::kExp: {
            if (!nodes_[node.inputs[0]].requires_grad) return;
            Tensor& d = grad_buffer(node.inputs[0]);
            const Tensor& y = node.value;
            for (std::size_t i = 0; i < g.numel(); ++i) d.at(i) += g.at(i) * y.at(i);
            return;
        }
        case Op::kLog1p: {
            if (!nodes_[node.inputs[0]].requires_grad) return;
            Tensor& d = grad_buffer(node.inputs[0]);
            const Tensor& x = nodes_[node.inputs[0]].value;
            for (std::size_t i = 0; i < g.numel(); ++i) d.at(i) += g.at(i) / (1.0 + x.at(i));
            return;
        }
        case Op::kSliceCols: {
            if (!nodes_[node.inputs[0]].requires_grad) return;
            Tensor& d = grad_buffer(node.inputs[0]);
            auto c0 = static_cast<std::size_t>(node.attrs.i0);
            for (std::size_t i = 0; i < g.rows(); ++i) {
                for (std::size_t j = 0; j < g.cols(); ++j) d.at(i, c0 + j) += g.at(i, j);
            }
            return;
        }
        case Op::kReshape: {
            if (!nodes_[node.inputs[0]].requires_grad) return;
            Tensor& d = grad_buffer(node.inputs[0]);
            for (std::size_t i = 0; i < g.numel(); ++i) d.at(i) += g.at(i);
            return;
        }
        case Op::kConcatCols: {
            std::size_t off = 0;
            for (int id : node.inputs) {
                const Tensor& part = nodes_[id].value;
                if (nodes_[id].requires_grad) {
                    Tensor& d = grad_buffer(id);
                    for (std::size_t i = 0; i < part.rows(); ++i) {
                        for (std::size_t j = 0; j < part.cols(); ++j)
                            d.at(i, j) += g.at(i, off + j);
                    }
                }
                off += part.cols();
            }
            return;
        }
        case Op::kConcatRows: {
            std::size_t off = 0;
            for (int id : node.inputs) {
                const Tensor& part = nodes_[id].value;
                if (nodes_[id].requires_grad) {
                    Tensor& d = grad_buffer(id);
                    for (std::size_t i = 0; i < part.rows(); ++i) {
                        for (std::size_t j = 0; j < part.cols(); ++j)
                            d.at(i, j) += g.at(off + i, j);
                    }
                }
                off += part.rows();
            }
            return;
        }
        case Op::kRepeatRows: {
            if (!nodes_[node.inputs[0]].requires_grad) return;
            Tensor& d = grad_buffer(node.inputs[0]);
            auto k = static_cast<std::size_t>(node.attrs.i0);
            for (std::size_t i = 0; i < d.rows(); ++i) {
                for (std::size_t r = 0; r < k; ++r) {
                    for (std::size_t j = 0; j < d.cols(); ++j) d.at(i, j) += g.at(i * k + r, j);
                }
            }
            return;
        }
        case Op::kBroadcastRow: {
            if (!nodes_[node.inputs[0]].requires_grad) return;
            Tensor& d = grad_buffer(node.inputs[0]);
            for (std::size_t i = 0; i < g.rows(); ++i) {
                for (std::size_t j = 0; j < g.cols(); ++j) d.at(0, j) += g.at(i, j);
            }
            return;
        }
        case Op::kLaggedRows: {
            if (!nodes_[node.inputs[0]].requires_grad) return;
            Tensor& d = grad_buffer(node.inputs[0]);
            auto depth = static_cast<std::size_t>(node.attrs.i0);
            const std::size_t c = d.cols();
            for (std::size_t t = 0; t < g.rows(); ++t) {
                for (std::size_t dlag = 0; dlag <= depth && dlag <= t; ++dlag) {
                    for (std::size_t j = 0; j < c; ++j) d.at(t - dlag, j) += g.at(t, dlag * c + j);
                }
            }
            return;
        }
        case Op::kSelectRow: {
            if (!nodes_[node.inputs[0]].requires_grad) return;
            Tensor& d = grad_buffer(node.inputs[0]);
            auto i = static_cast<std::size_t>(node.attrs.i0);
            for (std::size_t j = 0; j < g.cols(); ++j) d.at(i, j) += g.at(0, j);
            return;
        }
        case Op::kDilatedConv: {
            const Tensor& x = nodes_[node.inputs[0]].value;
            const Tensor& k = nodes_[node.inputs[1]].value;
            const std::size_t t_len = x.rows(), cin = x.cols(), cout = k.shape()[2];
            const auto dil = static_cast<std::size_t>(node.attrs.i0);
            if (nodes_[node.inputs[0]].requires_grad) {
                Tensor& dx = grad_buffer(node.inputs[0]);
                for (std::size_t t = 0; t < t_len; ++t) {
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        double s = 0.0;
                        for (std::size_t co = 0; co < cout; ++co)
                            s += g.at(t, co) * k.at3(1, ci, co);
                        if (t >= dil) {
                            double s0 = 0.0;
                            for (std::size_t co = 0; co < cout; ++co)
                                s0 += g.at(t, co) * k.at3(0, ci, co);
                            dx.at(t - dil, ci) += s0;
                        }
                        dx.at(t, ci) += s;
                    }
                }
            }
            if (nodes_[node.inputs[1]].requires_grad) {
                Tensor& dk = grad_buffer(node.inputs[1]);
                for (std::size_t t = 0; t < t_len; ++t) {
                    for (std::size_t ci = 0; ci < cin; ++ci) {
                        if (t >= dil) {
                            const double xv = x.at(t - dil, ci);
                            for (std::size_t co = 0; co < cout; ++co)
                                dk.at3(0, ci, co) += xv * g.at(t, co);
                        }
                        const double xv = x.at(t, ci);
                        for (std::size_t co = 0; co < cout; ++co)
                            dk.at3(1, ci, co) += xv * g.at(t, co);
                    }
                }
            }
            return;
        }
        case Op::kSumAll: {
            if (!nodes_[node.inputs[0]].requires_grad) return;
            Tensor& d = grad_buffer(node.inputs[0]);
            const double gs = g.at(0);
            for (std::size_t i = 0; i < d.numel(); ++i) d.at(i) += gs;
            return;
        }
        case Op::kPinballSum: {
            if (!nodes_[node.inputs[0]].requires_grad) return;
            Tensor& d = grad_buffer(node.inputs[0]);
            const Tensor& pred = nodes_[node.inputs[0]].value;
            const double gs = g.at(0);
            const std::size_t n = pred.rows(), nq = pred.cols();
            for (std::size_t i = 0; i < n; ++i) {
                const double y = node.attrs.targets[i];
                for (std::size_t j = 0; j < nq; ++j) {
                    const double w = node.attrs.weights[i * nq + j];
                    if (w == 0.0) continue;
                    const double q = node.attrs.levels[j];
                    // subgradient at the kink: use the -q branch
                    const double slope = pred.at(i, j) > y ? (1.0 - q) : -q;
                    d.at(i, j) += gs * w * slope;
                }
            }
            return;
        }
        case Op::kGaussNllSum: {
            const Tensor& mu = nodes_[node.inputs[0]].value;
            const Tensor& sigma = nodes_[node.inputs[1]].value;
            const double gs = g.at(0);
            const bool want_mu = nodes_[node.inputs[0]].requires_grad;
            const bool want_sigma = nodes_[node.inputs[1]].requires_grad;
            for (std::size_t i = 0; i < mu.numel(); ++i) {
                const double w = node.attrs.weights[i];
                if (w == 0.0) continue;
                const double s = sigma.at(i);
                const double r = node.attrs.targets[i] - mu.at(i);
                if (want_mu) grad_buffer(node.inputs[0]).at(i) += gs * w * (-r / (s * s));
                if (want_sigma)
                    grad_buffer(node.inputs[1]).at(i) += gs * w * (1.0 / s - r * r / (s * s * s));
            }
            return;
        }
    }
}

void Tape::backward(int loss, double seed, bool flush_params) {
    if (loss < 0 || loss >= static_cast<int>(nodes_.size())) {
        throw ContractError("backward: node id out of range");
    }
    if (!nodes_[loss].value.is_scalar()) {
        throw ContractError("backward: loss must be scalar, got " +
                            shape_str(nodes_[loss].value.shape()));
    }
    for (auto& n : nodes_) n.grad.fill(0.0);
    nodes_[loss].grad.at(0) = seed;
    for (int i = loss; i >= 0; --i) {
        Node& n = nodes_[i];
        if (!n.requires_grad) continue;
        backprop(n);
        if (n.op == Op::kParam && flush_params) {
            Tensor& pg = n.param->grad;
            for (std::size_t j = 0; j < pg.numel(); ++j) pg.at(j) += n.grad.at(j);
        }
    }
}

void Tape::add_param_grads_to(std::map<std::string, Tensor>& sink) const {
    for (const Node& n : nodes_) {
        if (n.op != Op::kParam) continue;
        auto [it, fresh] = sink.try_emplace(n.param->name, n.grad.shape());
        Tensor& dst = it->second;
        if (!dst.same_shape(n.grad)) throw ContractError("gradient sink shape mismatch for " + n.param->name);
        for (std::size_t j = 0; j < dst.numel(); ++j) dst.at(j) += n.grad.at(j);
    }
}

bool Tape::replay_matches() const {
    for (const Node& n : nodes_) {
        if (n.op == Op::kConst || n.op == Op::kParam) continue;
        std::vector<const Tensor*> in;
        in.reserve(n.inputs.size());
        for (int id : n.inputs) in.push_back(&nodes_[id].value);
        Tensor again = run_forward(n.op, n.attrs, in);
        if (!(again == n.value)) return false;
    }
    return true;
}

}  // namespace mqf
