#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "mqf/decoder.hpp"
#include "mqf/encoders.hpp"
#include "mqf/errors.hpp"
#include "mqf/init.hpp"
#include "mqf/normal.hpp"
#include "mqf/rng.hpp"
#include "testutil.hpp"

using namespace mqf;
using mqf::test::fd_worst_rel_err;
using mqf::test::rand_tensor;

namespace {

struct DecodeInputs {
    Tensor hidden;    // T×H
    Tensor fut_flat;  // T×(K*F)
    Tensor fut_rows;  // (T*K)×F
};

DecodeInputs random_inputs(RngStream& rng, std::size_t t_len, std::size_t h, std::size_t k,
                           std::size_t f) {
    DecodeInputs in;
    in.hidden = rand_tensor(rng, {t_len, h});
    in.fut_rows = rand_tensor(rng, {t_len * k, f});
    in.fut_flat = Tensor({t_len, k * f});
    for (std::size_t t = 0; t < t_len; ++t) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            for (std::size_t j = 0; j < f; ++j) {
                in.fut_flat.at(t, kk * f + j) = in.fut_rows.at(t * k + kk, j);
            }
        }
    }
    return in;
}

Tensor run_decoder(const DecoderSpec& spec, ParameterStore& ps, const DecodeInputs& in) {
    Tape t;
    Binder bind(t, ps);
    return t.value(decode_all(t, bind, spec, t.constant(in.hidden), t.constant(in.fut_flat),
                              t.constant(in.fut_rows)));
}

void zero_weights(ParameterStore& ps) {
    for (std::size_t i = 0; i < ps.size(); ++i) {
        if (ps[i].name.find(".W") != std::string::npos) ps[i].value.fill(0.0);
    }
}

double pinball(double y, double pred, double q) {
    return pred > y ? (1 - q) * (pred - y) : q * (y - pred);
}

}  // namespace

TEST_CASE("decoder spec validation") {
    CHECK_THROWS_AS(validate(DecoderSpec{3, 4, 2, 8, 8, "poisson", false, 3}), ArgumentError);
    CHECK_THROWS_AS(validate(DecoderSpec{0, 4, 2, 8, 8, "quantile", false, 3}), ArgumentError);
    CHECK_THROWS_AS(validate(DecoderSpec{3, 0, 2, 8, 8, "quantile", false, 3}), ArgumentError);
    CHECK_THROWS_AS(validate(DecoderSpec{3, 4, 2, 8, 8, "quantile", false, 0}), ArgumentError);
    CHECK_NOTHROW(validate(DecoderSpec{3, 0, 0, 8, 8, "quantile", true, 3}));  // simplified
    CHECK(head_width(DecoderSpec{3, 4, 2, 8, 8, "loggaussian", false, 5}) == 2);
    CHECK(head_width(DecoderSpec{3, 4, 2, 8, 8, "quantile", false, 5}) == 5);
}

TEST_CASE("context split arithmetic: K=3, C_h=4, C_a=2 gives a 14-wide global output") {
    DecoderSpec spec{3, 4, 2, 6, 5, "quantile", false, 3};
    ParameterStore ps;
    add_decoder_params(ps, spec, 4, 2, 1);
    CHECK(ps.at("dec.global.W3").value.cols() == 14);

    RngStream rng(2, "ctx");
    DecodeInputs in = random_inputs(rng, 5, 4, 3, 2);
    Tape t;
    Binder bind(t, ps);
    ContextNodes ctx = global_contexts(t, bind, spec, t.constant(in.hidden),
                                       t.constant(in.fut_flat));
    CHECK(t.value(ctx.per_horizon).shape() == std::vector<std::size_t>{15, 4});
    CHECK(t.value(ctx.agnostic).shape() == std::vector<std::size_t>{15, 2});
}

TEST_CASE("zero weights: contexts equal global biases, outputs equal local biases") {
    DecoderSpec spec{3, 2, 2, 4, 4, "quantile", false, 3};
    ParameterStore ps;
    add_decoder_params(ps, spec, 3, 2, 5);
    zero_weights(ps);
    RngStream rng(6, "zero-dec");
    Tensor& gb3 = ps.at("dec.global.b3").value;  // width 3*2+2 = 8
    for (std::size_t j = 0; j < 8; ++j) gb3.at(0, j) = rng.uniform(-1, 1);
    Tensor& lb3 = ps.at("dec.local.b3").value;
    lb3 = Tensor({1, 3}, {1.0, 2.0, 3.0});

    DecodeInputs in = random_inputs(rng, 4, 3, 3, 2);
    Tape t;
    Binder bind(t, ps);
    ContextNodes ctx = global_contexts(t, bind, spec, t.constant(in.hidden),
                                       t.constant(in.fut_flat));
    // relu hidden layers collapse to relu(bias); with zero W3 the output is b3,
    // so context row (t,k) equals bias block k and c_a equals the bias tail
    for (std::size_t row = 0; row < 12; ++row) {
        std::size_t k = row % 3;
        CHECK(t.value(ctx.per_horizon).at(row, 0) == gb3.at(0, k * 2));
        CHECK(t.value(ctx.per_horizon).at(row, 1) == gb3.at(0, k * 2 + 1));
        CHECK(t.value(ctx.agnostic).at(row, 0) == gb3.at(0, 6));
        CHECK(t.value(ctx.agnostic).at(row, 1) == gb3.at(0, 7));
    }

    Tensor raw = run_decoder(spec, ps, in);
    for (std::size_t row = 0; row < 12; ++row) {
        CHECK(raw.at(row, 0) == 1.0);
        CHECK(raw.at(row, 1) == 2.0);
        CHECK(raw.at(row, 2) == 3.0);
    }
}

TEST_CASE("local weights are shared across horizons") {
    // with equal context blocks and equal future rows, every horizon of a
    // given t must produce bit-identical outputs
    DecoderSpec spec{4, 2, 1, 4, 6, "quantile", false, 2};
    ParameterStore ps;
    add_decoder_params(ps, spec, 3, 2, 9);
    zero_weights(ps);  // zero only the global trunk weights...
    for (const char* tag : {"1", "2", "3"}) {  // ...then restore the local ones
        std::string name = std::string("dec.local.W") + tag;
        ps.at(name).value = glorot_uniform(9, name, ps.at(name).value.shape(),
                                           ps.at(name).value.rows(), ps.at(name).value.cols());
    }
    RngStream rng(10, "share");
    Tensor& gb3 = ps.at("dec.global.b3").value;  // 4 blocks of width 2 + c_a width 1
    double block0 = rng.uniform(-1, 1), block1 = rng.uniform(-1, 1);
    for (std::size_t k = 0; k < 4; ++k) {
        gb3.at(0, k * 2) = block0;
        gb3.at(0, k * 2 + 1) = block1;
    }
    gb3.at(0, 8) = rng.uniform(-1, 1);

    DecodeInputs in = random_inputs(rng, 3, 3, 4, 2);
    for (std::size_t t = 0; t < 3; ++t) {
        for (std::size_t k = 0; k < 4; ++k) {
            for (std::size_t j = 0; j < 2; ++j) {
                in.fut_rows.at(t * 4 + k, j) = in.fut_rows.at(t * 4, j);
                in.fut_flat.at(t, k * 2 + j) = in.fut_rows.at(t * 4, j);
            }
        }
    }
    Tensor raw = run_decoder(spec, ps, in);
    for (std::size_t t = 0; t < 3; ++t) {
        for (std::size_t k = 1; k < 4; ++k) {
            CHECK(raw.at(t * 4 + k, 0) == raw.at(t * 4, 0));
            CHECK(raw.at(t * 4 + k, 1) == raw.at(t * 4, 1));
        }
    }
}

TEST_CASE("permuting horizon contexts permutes grid rows") {
    DecoderSpec spec{3, 2, 1, 4, 5, "quantile", false, 2};
    ParameterStore ps;
    add_decoder_params(ps, spec, 2, 1, 13);
    zero_weights(ps);
    for (const char* tag : {"1", "2", "3"}) {
        std::string name = std::string("dec.local.W") + tag;
        ps.at(name).value = glorot_uniform(13, name, ps.at(name).value.shape(),
                                           ps.at(name).value.rows(), ps.at(name).value.cols());
    }
    RngStream rng(14, "perm");
    Tensor& gb3 = ps.at("dec.global.b3").value;  // 3 blocks of 2 + 1
    for (std::size_t j = 0; j < 7; ++j) gb3.at(0, j) = rng.uniform(-1, 1);

    DecodeInputs in = random_inputs(rng, 2, 2, 3, 1);
    for (std::size_t r = 0; r < 6; ++r) in.fut_rows.at(r, 0) = 0.25;  // constant futures
    for (std::size_t t = 0; t < 2; ++t) {
        for (std::size_t k = 0; k < 3; ++k) in.fut_flat.at(t, k) = 0.25;
    }
    Tensor before = run_decoder(spec, ps, in);

    // rotate context blocks k=0,1,2 -> 1,2,0
    Tensor rotated = gb3;
    for (std::size_t k = 0; k < 3; ++k) {
        rotated.at(0, k * 2) = gb3.at(0, ((k + 1) % 3) * 2);
        rotated.at(0, k * 2 + 1) = gb3.at(0, ((k + 1) % 3) * 2 + 1);
    }
    gb3 = rotated;
    Tensor after = run_decoder(spec, ps, in);
    for (std::size_t t = 0; t < 2; ++t) {
        for (std::size_t k = 0; k < 3; ++k) {
            CHECK(after.at(t * 3 + k, 0) == before.at(t * 3 + (k + 1) % 3, 0));
            CHECK(after.at(t * 3 + k, 1) == before.at(t * 3 + (k + 1) % 3, 1));
        }
    }
}

TEST_CASE("full and simplified decoders are structurally different") {
    RngStream rng(18, "modes");
    DecodeInputs in = random_inputs(rng, 3, 4, 3, 2);
    DecoderSpec full{3, 4, 2, 6, 6, "quantile", false, 3};
    DecoderSpec simple = full;
    simple.simplified = true;
    ParameterStore ps_full, ps_simple;
    add_decoder_params(ps_full, full, 4, 2, 77);
    add_decoder_params(ps_simple, simple, 4, 2, 77);
    CHECK(ps_simple.find("dec.local.W1") == nullptr);
    Tensor a = run_decoder(full, ps_full, in);
    Tensor b = run_decoder(simple, ps_simple, in);
    REQUIRE(a.same_shape(b));
    bool differ = false;
    for (std::size_t i = 0; i < a.numel(); ++i) differ = differ || a.at(i) != b.at(i);
    CHECK(differ);
}

TEST_CASE("batched decode rows are bit-identical to standalone decodes") {
    RngStream rng(20, "batch");
    for (bool simplified : {false, true}) {
        DecoderSpec spec{4, 3, 2, 6, 5, "quantile", simplified, 3};
        ParameterStore ps;
        add_decoder_params(ps, spec, 5, 2, 101 + simplified);
        DecodeInputs in = random_inputs(rng, 6, 5, 4, 2);
        Tensor batched = run_decoder(spec, ps, in);
        for (std::size_t t = 0; t < 6; ++t) {
            DecodeInputs one;
            one.hidden = Tensor({1, 5});
            for (std::size_t j = 0; j < 5; ++j) one.hidden.at(0, j) = in.hidden.at(t, j);
            one.fut_flat = Tensor({1, 8});
            for (std::size_t j = 0; j < 8; ++j) one.fut_flat.at(0, j) = in.fut_flat.at(t, j);
            one.fut_rows = Tensor({4, 2});
            for (std::size_t r = 0; r < 4; ++r) {
                for (std::size_t j = 0; j < 2; ++j) {
                    one.fut_rows.at(r, j) = in.fut_rows.at(t * 4 + r, j);
                }
            }
            Tensor alone = run_decoder(spec, ps, one);
            for (std::size_t r = 0; r < 4; ++r) {
                for (std::size_t q = 0; q < 3; ++q) {
                    REQUIRE(alone.at(r, q) == batched.at(t * 4 + r, q));
                }
            }
        }
    }
}

TEST_CASE("loggaussian head: positive sigma, zero-network fixed point") {
    DecoderSpec spec{3, 2, 2, 4, 4, "loggaussian", false, 3};
    ParameterStore ps;
    add_decoder_params(ps, spec, 3, 2, 23);
    RngStream rng(24, "lg");
    DecodeInputs in = random_inputs(rng, 4, 3, 3, 2);
    {
        Tape t;
        Binder bind(t, ps);
        int raw = decode_all(t, bind, spec, t.constant(in.hidden), t.constant(in.fut_flat),
                             t.constant(in.fut_rows));
        LogGaussianNodes lg = loggaussian_split(t, raw);
        for (std::size_t i = 0; i < 12; ++i) CHECK(t.value(lg.sigma).at(i) > 0.0);
        CHECK_THROWS_AS(loggaussian_split(t, t.constant(Tensor({2, 3}))), ShapeError);
    }
    zero_weights(ps);
    Tensor& lb3 = ps.at("dec.local.b3").value;
    lb3 = Tensor({1, 2}, {0.4, -0.3});
    Tape t;
    Binder bind(t, ps);
    LogGaussianNodes lg = loggaussian_split(
        t, decode_all(t, bind, spec, t.constant(in.hidden), t.constant(in.fut_flat),
                      t.constant(in.fut_rows)));
    const double want_sigma = std::log1p(std::exp(-0.3));
    for (std::size_t i = 0; i < 12; ++i) {
        CHECK(t.value(lg.mu).at(i) == 0.4);
        CHECK(t.value(lg.sigma).at(i) == doctest::Approx(want_sigma).epsilon(1e-14));
    }
}

TEST_CASE("loggaussian quantiles: median, bisection oracle, monotonicity") {
    RngStream rng(26, "lgq");
    for (int i = 0; i < 20; ++i) {
        double mu = rng.uniform(-1, 2);
        CHECK(std::fabs(loggaussian_quantile(mu, rng.uniform(0.1, 2.0), 0.5) -
                        (std::exp(mu) - 1.0)) < 1e-12);
    }
    double lo = -10, hi = 10;
    for (int i = 0; i < 200; ++i) {
        double mid = 0.5 * (lo + hi);
        (normal_cdf(mid) < 0.9 ? lo : hi) = mid;
    }
    CHECK(std::fabs(loggaussian_quantile(0.0, 1.0, 0.9) - (std::exp(0.5 * (lo + hi)) - 1.0)) <
          1e-9);
    for (int i = 0; i < 20; ++i) {
        double mu = rng.uniform(-1, 1), sigma = rng.uniform(0.05, 1.5);
        double p10 = loggaussian_quantile(mu, sigma, 0.1);
        double p50 = loggaussian_quantile(mu, sigma, 0.5);
        double p90 = loggaussian_quantile(mu, sigma, 0.9);
        CHECK(p10 < p50);
        CHECK(p50 < p90);
    }
    CHECK_THROWS_AS(loggaussian_quantile(0.0, 1.0, 0.0), ArgumentError);
    CHECK_THROWS_AS(loggaussian_quantile(0.0, 1.0, 1.2), ArgumentError);
}

TEST_CASE("crossing repair sorts rows and never increases pinball loss") {
    ForecastGrid grid;
    grid.quantiles = {0.1, 0.5, 0.9};
    grid.values = Tensor({2, 3}, {1, 2, 3, 5, 3, 4});
    repair_crossings(grid);
    CHECK(grid.values == Tensor({2, 3}, {1, 2, 3, 3, 4, 5}));

    // exhaustive: preds over {0,1,2}^3, targets over a grid spanning the range
    const std::vector<double> levels = {0.1, 0.5, 0.9};
    for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
            for (int c = 0; c < 3; ++c) {
                for (double y : {-0.5, 0.0, 0.5, 1.0, 1.5, 2.0, 2.5}) {
                    ForecastGrid g;
                    g.quantiles = levels;
                    g.values = Tensor({1, 3}, {double(a), double(b), double(c)});
                    double before = 0, after = 0;
                    for (int q = 0; q < 3; ++q) before += pinball(y, g.values.at(0, q), levels[q]);
                    repair_crossings(g);
                    for (int q = 0; q < 3; ++q) after += pinball(y, g.values.at(0, q), levels[q]);
                    REQUIRE(after <= before + 1e-12);
                }
            }
        }
    }
}

TEST_CASE("encoder-decoder composition passes finite differences for both heads") {
    RngStream rng(30, "e2e-fd");
    const std::size_t t_len = 4, f_enc = 2, k = 2, f_fut = 2;
    EncoderSpec enc{"lstm", 3, 1, 1};
    DecodeInputs in = random_inputs(rng, t_len, 3, k, f_fut);  // only fut matrices used
    Tensor enc_in = rand_tensor(rng, {t_len, f_enc});

    SUBCASE("quantile head, full decoder") {
        DecoderSpec dec{k, 2, 2, 4, 4, "quantile", false, 2};
        ParameterStore ps;
        add_encoder_params(ps, enc, f_enc, 200);
        add_decoder_params(ps, dec, 3, f_fut, 200);
        mqf::test::jitter(ps, rng);
        std::vector<double> targets(t_len * k);
        for (auto& y : targets) y = rng.uniform(2.0, 5.0);  // far from the kink
        CHECK(fd_worst_rel_err(ps, [&](Tape& t) {
                  Binder bind(t, ps);
                  int hidden = encode(t, bind, enc, t.constant(enc_in));
                  int raw = decode_all(t, bind, dec, hidden, t.constant(in.fut_flat),
                                       t.constant(in.fut_rows));
                  return t.pinball_sum(raw, {0.25, 0.75}, targets,
                                       std::vector<double>(t_len * k * 2, 1.0));
              }) < 1e-4);
    }
    SUBCASE("loggaussian head, simplified decoder") {
        DecoderSpec dec{k, 2, 2, 4, 4, "loggaussian", true, 2};
        ParameterStore ps;
        add_encoder_params(ps, enc, f_enc, 300);
        add_decoder_params(ps, dec, 3, f_fut, 300);
        mqf::test::jitter(ps, rng);
        std::vector<double> targets(t_len * k);
        for (auto& y : targets) y = rng.uniform(-1.0, 1.0);
        CHECK(fd_worst_rel_err(ps, [&](Tape& t) {
                  Binder bind(t, ps);
                  int hidden = encode(t, bind, enc, t.constant(enc_in));
                  int raw = decode_all(t, bind, dec, hidden, t.constant(in.fut_flat),
                                       t.constant(in.fut_rows));
                  LogGaussianNodes lg = loggaussian_split(t, raw);
                  return t.gauss_nll_sum(lg.mu, lg.sigma, targets,
                                         std::vector<double>(t_len * k, 1.0));
              }) < 1e-4);
    }
}
