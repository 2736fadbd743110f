#include "mqf/decoder.hpp"

#include <algorithm>
#include <cmath>

#include "mqf/errors.hpp"
#include "mqf/init.hpp"
#include "mqf/normal.hpp"

namespace mqf {

namespace {

// two relu hidden layers, linear output
int mlp3(Tape& t, Binder& bind, int in, const std::string& prefix) {
    int h1 = t.relu(t.add_row(t.matmul(in, bind(prefix + ".W1")), bind(prefix + ".b1")));
    int h2 = t.relu(t.add_row(t.matmul(h1, bind(prefix + ".W2")), bind(prefix + ".b2")));
    return t.add_row(t.matmul(h2, bind(prefix + ".W3")), bind(prefix + ".b3"));
}

void add_mlp3_params(ParameterStore& params, const std::string& prefix, std::size_t in,
                     std::size_t hidden, std::size_t out, std::uint64_t seed) {
    auto dense = [&](const char* tag, std::size_t rows, std::size_t cols) {
        std::string w = prefix + ".W" + tag;
        params.add(w, glorot_uniform(seed, w, {rows, cols}, rows, cols));
        params.add(prefix + ".b" + tag, Tensor({1, cols}));
    };
    dense("1", in, hidden);
    dense("2", hidden, hidden);
    dense("3", hidden, out);
}

}  // namespace

void validate(const DecoderSpec& spec) {
    if (spec.head != "quantile" && spec.head != "loggaussian") {
        throw ArgumentError("unknown decoder head: " + spec.head);
    }
    if (spec.horizons < 1) throw ArgumentError("decoder horizons must be >= 1");
    if (spec.head == "quantile" && spec.quantile_count < 1) {
        throw ArgumentError("quantile head needs at least one level");
    }
    if (spec.global_hidden < 1 || spec.local_hidden < 1) {
        throw ArgumentError("decoder hidden widths must be >= 1");
    }
    if (!spec.simplified && (spec.ctx_per_horizon < 1 || spec.ctx_agnostic < 1)) {
        throw ArgumentError("context widths must be >= 1");
    }
}

std::size_t head_width(const DecoderSpec& spec) {
    return spec.head == "loggaussian" ? 2 : spec.quantile_count;
}

void add_decoder_params(ParameterStore& params, const DecoderSpec& spec, std::size_t hidden_width,
                        std::size_t fut_width, std::uint64_t seed, const std::string& prefix) {
    validate(spec);
    const std::size_t k = spec.horizons;
    const std::size_t global_in = hidden_width + k * fut_width;
    const std::size_t global_out =
        spec.simplified ? k * head_width(spec) : k * spec.ctx_per_horizon + spec.ctx_agnostic;
    add_mlp3_params(params, prefix + ".global", global_in, spec.global_hidden, global_out, seed);
    if (!spec.simplified) {
        const std::size_t local_in = spec.ctx_per_horizon + spec.ctx_agnostic + fut_width;
        add_mlp3_params(params, prefix + ".local", local_in, spec.local_hidden, head_width(spec),
                        seed);
    }
}

ContextNodes global_contexts(Tape& tape, Binder& bind, const DecoderSpec& spec, int hidden,
                             int fut_flat, const std::string& prefix) {
    const std::size_t t_len = tape.value(hidden).rows();
    const std::size_t k = spec.horizons;
    int gout = mlp3(tape, bind, tape.concat_cols({hidden, fut_flat}), prefix + ".global");
    int ctx_h = tape.reshape(tape.slice_cols(gout, 0, k * spec.ctx_per_horizon),
                             {t_len * k, spec.ctx_per_horizon});
    int ctx_a = tape.repeat_rows(
        tape.slice_cols(gout, k * spec.ctx_per_horizon,
                        k * spec.ctx_per_horizon + spec.ctx_agnostic),
        k);
    return {ctx_h, ctx_a};
}

int decode_all(Tape& tape, Binder& bind, const DecoderSpec& spec, int hidden, int fut_flat,
               int fut_rows, const std::string& prefix) {
    validate(spec);
    const std::size_t t_len = tape.value(hidden).rows();
    const std::size_t k = spec.horizons;
    const Tensor& flat = tape.value(fut_flat);
    const Tensor& rows = tape.value(fut_rows);
    if (flat.rows() != t_len || rows.rows() != t_len * k ||
        flat.cols() != k * rows.cols()) {
        throw ShapeError("decode_all: future inputs " + shape_str(flat.shape()) + " / " +
                         shape_str(rows.shape()) + " do not cover " + std::to_string(k) +
                         " horizons of " + std::to_string(t_len) + " steps");
    }
    if (spec.simplified) {
        int gout = mlp3(tape, bind, tape.concat_cols({hidden, fut_flat}), prefix + ".global");
        return tape.reshape(gout, {t_len * k, head_width(spec)});
    }
    ContextNodes ctx = global_contexts(tape, bind, spec, hidden, fut_flat, prefix);
    int local_in = tape.concat_cols({ctx.per_horizon, ctx.agnostic, fut_rows});
    return mlp3(tape, bind, local_in, prefix + ".local");
}

LogGaussianNodes loggaussian_split(Tape& tape, int raw) {
    if (tape.value(raw).cols() != 2) {
        throw ShapeError("loggaussian head expects 2 outputs per horizon, got " +
                         shape_str(tape.value(raw).shape()));
    }
    return {tape.slice_cols(raw, 0, 1), tape.softplus(tape.slice_cols(raw, 1, 2))};
}

double loggaussian_quantile(double mu, double sigma, double q) {
    return std::exp(mu + sigma * normal_quantile(q)) - 1.0;
}

void repair_crossings(ForecastGrid& grid) {
    for (std::size_t i = 0; i < grid.values.rows(); ++i) {
        double* row = grid.values.data() + i * grid.values.cols();
        std::sort(row, row + grid.values.cols());
    }
}

}  // namespace mqf
