#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mqf/tensor.hpp"

namespace mqf {

// A named trainable tensor. Gradients accumulate additively across backward
// passes; zeroing is the caller's responsibility.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter(std::string name_, Tensor value_)
        : name(std::move(name_)), value(std::move(value_)), grad(value.shape()) {}
};

// Ordered, name-indexed parameter collection. Order is registration order and
// is the canonical order for checkpoints and optimizer state.
class ParameterStore {
public:
    Parameter& add(std::string name, Tensor init);
    Parameter& at(const std::string& name);
    const Parameter& at(const std::string& name) const;
    Parameter* find(const std::string& name);

    std::size_t size() const { return items_.size(); }
    Parameter& operator[](std::size_t i) { return *items_[i]; }
    const Parameter& operator[](std::size_t i) const { return *items_[i]; }

    void zero_grads();
    void scale_grads(double factor);
    double grad_norm() const;
    double value_norm() const;

private:
    std::vector<std::unique_ptr<Parameter>> items_;
    std::map<std::string, std::size_t> index_;
};

enum class Op : std::uint8_t {
    kConst,
    kParam,
    kMatMul,
    kAdd,
    kSub,
    kMul,
    kAddRow,
    kScale,
    kSigmoid,
    kTanh,
    kRelu,
    kSoftplus,
    kExp,
    kLog1p,
    kSliceCols,
    kReshape,
    kConcatCols,
    kConcatRows,
    kRepeatRows,
    kBroadcastRow,
    kLaggedRows,
    kSelectRow,
    kDilatedConv,
    kSumAll,
    kPinballSum,
    kGaussNllSum,
};

// Elementwise op selector mirroring the elementwise(op_kind, x) entry point.
enum class Ew { kSigmoid, kTanh, kRelu, kSoftplus, kExp, kLog1p };

struct OpAttrs {
    double scalar = 0.0;
    std::int64_t i0 = 0;
    std::int64_t i1 = 0;
    std::vector<std::size_t> dims;
    std::vector<double> levels;   // quantile levels (pinball)
    std::vector<double> targets;  // frozen regression targets
    std::vector<double> weights;  // per-term weights; 0 == masked out
};

// Define-by-run computation record. Forward values are computed eagerly as
// nodes are appended; the record stays topologically ordered by construction,
// so one reverse sweep accumulates every gradient. replay() re-runs the
// recorded forward rules and checks the stored outputs bit-exactly.
class Tape {
public:
    int constant(Tensor value);
    // One node per call; callers dedupe so each Parameter appears once.
    int parameter(Parameter& p);

    int matmul(int a, int b);
    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);
    int add_row(int a, int row);  // (M×N) + (1×N), broadcast over rows
    int scale(int a, double c);

    int elementwise(Ew kind, int x);
    int sigmoid(int x) { return elementwise(Ew::kSigmoid, x); }
    int tanh(int x) { return elementwise(Ew::kTanh, x); }
    int relu(int x) { return elementwise(Ew::kRelu, x); }
    int softplus(int x) { return elementwise(Ew::kSoftplus, x); }
    int exp(int x) { return elementwise(Ew::kExp, x); }
    int log1p(int x) { return elementwise(Ew::kLog1p, x); }

    int slice_cols(int a, std::size_t c0, std::size_t c1);  // [c0, c1)
    int reshape(int a, std::vector<std::size_t> shape);
    int concat_cols(const std::vector<int>& parts);
    int concat_rows(const std::vector<int>& parts);
    int repeat_rows(int a, std::size_t k);     // each row repeated k times in place
    int broadcast_row(int a, std::size_t n);   // (1×C) -> (n×C)
    int lagged_rows(int a, std::size_t depth);  // row t -> [x_t, x_{t-1}, ..., x_{t-depth}]
    int select_row(int a, std::size_t i);
    int dilated_conv(int x, int kernel, std::int64_t dilation);
    int sum_all(int a);

    // sum_{n,q} w[n,q] * L_{q}(target[n], pred[n,q]); terms with w == 0 are
    // skipped entirely, so masked targets cannot perturb a single bit.
    int pinball_sum(int pred, std::vector<double> levels, std::vector<double> targets,
                    std::vector<double> weights);
    // sum_n w[n] * (log sigma + 0.5*((z-mu)/sigma)^2 + 0.5*log(2*pi))
    int gauss_nll_sum(int mu, int sigma, std::vector<double> targets,
                      std::vector<double> weights);

    // References stay valid while the tape lives: nodes are stored in a deque,
    // so appending more nodes never moves existing ones.
    const Tensor& value(int node) const { return nodes_[node].value; }
    const Tensor& grad(int node) const { return nodes_[node].grad; }
    bool requires_grad(int node) const { return nodes_[node].requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    // Reverse sweep from a scalar loss node. Seeds the loss gradient with
    // `seed`, then flushes parameter-node gradients additively into their
    // Parameter.grad. Repeated calls add again. With flush_params = false the
    // gradients stay on the tape (for callers that merge them elsewhere, e.g.
    // worker threads that must not touch the shared store).
    void backward(int loss, double seed = 1.0, bool flush_params = true);

    // Adds each parameter node's accumulated gradient into sink[name],
    // creating zero-initialized entries on first use.
    void add_param_grads_to(std::map<std::string, Tensor>& sink) const;

    // Re-runs every recorded forward rule and compares against the stored
    // values bit for bit.
    bool replay_matches() const;

private:
    struct Node {
        Op op;
        OpAttrs attrs;
        std::vector<int> inputs;
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        Parameter* param = nullptr;
    };

    int push(Op op, OpAttrs attrs, std::vector<int> inputs, Parameter* param = nullptr);
    static Tensor run_forward(Op op, const OpAttrs& attrs,
                              const std::vector<const Tensor*>& inputs);
    void backprop(Node& node);
    Tensor& grad_buffer(int node);

    std::deque<Node> nodes_;
};

// Bind-or-reuse: hands out one tape node per named parameter, so graph
// builders can request the same weight many times without duplicating it.
class Binder {
public:
    Binder(Tape& tape, ParameterStore& params) : tape_(&tape), params_(&params) {}

    int operator()(const std::string& name) {
        auto it = bound_.find(name);
        if (it != bound_.end()) return it->second;
        int node = tape_->parameter(params_->at(name));
        bound_.emplace(name, node);
        return node;
    }

private:
    Tape* tape_;
    ParameterStore* params_;
    std::map<std::string, int> bound_;
};

}  // namespace mqf
