#include "mqf/encoders.hpp"

#include "mqf/errors.hpp"
#include "mqf/init.hpp"

namespace mqf {

namespace {

bool is_lstm_family(const std::string& kind) {
    return kind == "lstm" || kind == "lstm_narx" || kind == "lstm_lag";
}

void add_lstm_params(ParameterStore& params, std::size_t f, std::size_t h, std::uint64_t seed,
                     const std::string& prefix) {
    for (const char* gate : {"i", "f", "o", "g"}) {
        std::string w = prefix + ".lstm.W_" + gate;
        params.add(w, glorot_uniform(seed, w, {f + h, h}, f + h, h));
        // forget-gate bias starts at 1 so early training keeps cell memory
        params.add(prefix + ".lstm.b_" + gate,
                   gate[0] == 'f' ? Tensor::full({1, h}, 1.0) : Tensor({1, h}));
    }
}

int lstm_graph(Tape& t, Binder& bind, int inputs, std::size_t h, const std::string& prefix) {
    const std::size_t steps = t.value(inputs).rows();
    int w_i = bind(prefix + ".lstm.W_i"), b_i = bind(prefix + ".lstm.b_i");
    int w_f = bind(prefix + ".lstm.W_f"), b_f = bind(prefix + ".lstm.b_f");
    int w_o = bind(prefix + ".lstm.W_o"), b_o = bind(prefix + ".lstm.b_o");
    int w_g = bind(prefix + ".lstm.W_g"), b_g = bind(prefix + ".lstm.b_g");

    int h_prev = t.constant(Tensor({1, h}));
    int c_prev = t.constant(Tensor({1, h}));
    std::vector<int> states;
    states.reserve(steps);
    for (std::size_t step = 0; step < steps; ++step) {
        int z = t.concat_cols({t.select_row(inputs, step), h_prev});
        int gi = t.sigmoid(t.add(t.matmul(z, w_i), b_i));
        int gf = t.sigmoid(t.add(t.matmul(z, w_f), b_f));
        int go = t.sigmoid(t.add(t.matmul(z, w_o), b_o));
        int gg = t.tanh(t.add(t.matmul(z, w_g), b_g));
        c_prev = t.add(t.mul(gf, c_prev), t.mul(gi, gg));
        h_prev = t.mul(go, t.tanh(c_prev));
        states.push_back(h_prev);
    }
    return t.concat_rows(states);
}

}  // namespace

void validate(const EncoderSpec& spec) {
    if (!is_lstm_family(spec.kind) && spec.kind != "wavenet") {
        throw ArgumentError("unknown encoder kind: " + spec.kind);
    }
    if (spec.hidden < 1) throw ArgumentError("encoder hidden width must be >= 1");
    if ((spec.kind == "lstm_narx" || spec.kind == "lstm_lag") && spec.depth < 1) {
        throw ArgumentError("encoder depth must be >= 1 for " + spec.kind);
    }
    if (spec.kind == "wavenet" && spec.layers < 1) {
        throw ArgumentError("wavenet layer count must be >= 1");
    }
}

std::size_t encoder_output_width(const EncoderSpec& spec) { return spec.hidden; }

void add_encoder_params(ParameterStore& params, const EncoderSpec& spec, std::size_t input_width,
                        std::uint64_t seed, const std::string& prefix) {
    validate(spec);
    const std::size_t h = spec.hidden;
    if (is_lstm_family(spec.kind)) {
        add_lstm_params(params, input_width, h, seed, prefix);
        if (spec.kind == "lstm_narx") {
            const std::size_t window = (spec.depth + 1) * h;
            std::string w = prefix + ".narx.W";
            params.add(w, glorot_uniform(seed, w, {window, h}, window, h));
            params.add(prefix + ".narx.b", Tensor({1, h}));
        }
        return;
    }
    // wavenet: layer 0 maps input_width -> h, later layers h -> h
    for (std::size_t layer = 0; layer < spec.layers; ++layer) {
        const std::size_t cin = layer == 0 ? input_width : h;
        std::string k = prefix + ".wave.l" + std::to_string(layer) + ".K";
        params.add(k, glorot_uniform(seed, k, {2, cin, h}, 2 * cin, h));
        params.add(prefix + ".wave.l" + std::to_string(layer) + ".b", Tensor({1, h}));
    }
}

int encode(Tape& tape, Binder& bind, const EncoderSpec& spec, int inputs,
           const std::string& prefix) {
    validate(spec);
    if (is_lstm_family(spec.kind)) {
        int hidden = lstm_graph(tape, bind, inputs, spec.hidden, prefix);
        if (spec.kind != "lstm_narx") return hidden;
        int window = tape.lagged_rows(hidden, spec.depth);
        return tape.add_row(tape.matmul(window, bind(prefix + ".narx.W")),
                            bind(prefix + ".narx.b"));
    }
    int x = inputs;
    std::int64_t dilation = 1;
    for (std::size_t layer = 0; layer < spec.layers; ++layer) {
        const std::string base = prefix + ".wave.l" + std::to_string(layer);
        int conv = tape.dilated_conv(x, bind(base + ".K"), dilation);
        int act = tape.tanh(tape.add_row(conv, bind(base + ".b")));
        x = tape.value(x).cols() == tape.value(act).cols() ? tape.add(act, x) : act;
        dilation *= 2;
    }
    return x;
}

Tensor build_lag_features(const std::vector<double>& y, std::size_t depth) {
    const std::size_t t_len = y.size();
    Tensor out({t_len, depth + 1});
    for (std::size_t t = 0; t < t_len; ++t) {
        for (std::size_t d = 0; d <= depth && d <= t; ++d) out.at(t, d) = y[t - d];
    }
    return out;
}

}  // namespace mqf
