#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mqf/data.hpp"
#include "mqf/decoder.hpp"
#include "mqf/encoders.hpp"
#include "mqf/tape.hpp"

namespace mqf {

// Embedding table layout for one static categorical column. Levels are the
// sorted training vocabulary; unseen levels at prediction time map to the
// extra trailing row.
struct CategoricalMap {
    std::string column;
    std::vector<std::string> levels;
    std::size_t width = 0;

    std::size_t rows() const { return levels.size() + 1; }
    std::size_t row_of(const std::string& level) const;
};

struct ModelSpec {
    EncoderSpec encoder;
    DecoderSpec decoder;
    std::vector<double> quantiles = {0.1, 0.5, 0.9};
    std::vector<std::string> hist_cols, fut_cols, static_real_cols;
    std::vector<CategoricalMap> cats;
    bool repair = false;  // sort predicted grid rows

    std::size_t embed_total() const;
    // Numeric per-horizon future width (covariates + static reals); the
    // embedding block is appended on the tape.
    std::size_t fut_numeric_width() const;
    // Width of the assembled per-horizon block: a constant bias column stands
    // in when there are no future covariates or static reals, so the decoder
    // always has a nonempty input matrix.
    std::size_t fut_input_width() const;
    // Numeric per-step encoder width, including the target block (lag block
    // for lstm_lag, otherwise the single current target column).
    std::size_t enc_numeric_width() const;

    std::string to_json() const;
    static ModelSpec from_json(const std::string& text);
};

void validate(const ModelSpec& spec);

// Derives column layout and categorical vocabularies from a dataset.
ModelSpec make_spec(const Dataset& data, const EncoderSpec& enc, const DecoderSpec& dec,
                    std::vector<double> quantiles);

// Everything one forward pass consumes, already normalized to model space.
// For training, t_len covers the in-boundary prefix and targets/weight hold
// t_len*K entries (weight 0 = masked). For prediction the future blocks
// describe a single forecast creation time and targets/weight are empty.
struct ModelInputs {
    std::string series_id;
    std::int64_t t_start = 0;  // time of encoder row 0
    std::size_t t_len = 0;
    Tensor enc;       // t_len x enc_numeric_width
    Tensor fut_flat;  // (t_len | 1) x K*fut_numeric_width
    Tensor fut_rows;  // (t_len*K | K) x fut_numeric_width
    std::vector<std::size_t> cat_rows;
    std::vector<double> targets;
    std::vector<double> weight;

    std::size_t live_count() const;
};

ModelInputs assemble_training_inputs(const SeriesRecord& rec, const ModelSpec& spec,
                                     const FittedTransforms& tf);
ModelInputs assemble_prediction_inputs(const SeriesRecord& rec, const ModelSpec& spec,
                                       const FittedTransforms& tf, std::int64_t fct_time);

// Optional multiplicative loss weights; empty vectors mean uniform.
struct LossWeights {
    std::vector<double> per_level;    // size Q
    std::vector<double> per_horizon;  // size K
};

struct LoadedModel;

class MQModel {
public:
    MQModel(ModelSpec spec, std::uint64_t seed);

    const ModelSpec& spec() const { return spec_; }
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }

    struct LossNodes {
        int loss = -1;
        std::size_t live = 0;  // loss terms with nonzero weight
    };

    // Forking objective: every encoder step is a forecast creation time and
    // one backward pass covers them all. Non-const: binding parameters onto a
    // tape hands out mutable gradient slots.
    LossNodes build_loss(Tape& tape, const ModelInputs& in, const LossWeights* lw = nullptr);
    // Cutting objective: encode the prefix ending at fct_pos, decode there only.
    LossNodes build_cut_loss(Tape& tape, const ModelInputs& in, std::size_t fct_pos,
                             const LossWeights* lw = nullptr);

    // Raw-scale K x Q grid for prediction inputs.
    ForecastGrid predict(const ModelInputs& in, const FittedTransforms& tf);

    void save(const std::string& path, const FittedTransforms& tf) const;
    static LoadedModel load(const std::string& path);

private:
    struct Raw {
        int node = -1;
        std::size_t rows = 0;
    };
    Raw forward_raw(Tape& tape, Binder& bind, const ModelInputs& in, bool last_only);
    LossNodes loss_from_raw(Tape& tape, Raw raw, const std::vector<double>& targets,
                            const std::vector<double>& weight, const LossWeights* lw) const;

    ModelSpec spec_;
    ParameterStore params_;
};

struct LoadedModel {
    MQModel model;
    FittedTransforms transforms;
};

}  // namespace mqf
