#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mqf/tape.hpp"
#include "mqf/tensor.hpp"

namespace mqf {

// One of four interchangeable history encoders. All kinds emit one hidden
// state per input step (T×H), and every state depends only on inputs at or
// before its own step.
struct EncoderSpec {
    std::string kind = "lstm";  // lstm | lstm_narx | lstm_lag | wavenet
    std::size_t hidden = 16;    // H: LSTM state width / wavenet channel width
    std::size_t depth = 52;     // D: narx skip window / lag feature depth
    std::size_t layers = 3;     // L: wavenet layer count (dilations 1,2,...,2^(L-1))
};

void validate(const EncoderSpec& spec);

// Width of the hidden matrix the encoder emits (H for every current kind).
std::size_t encoder_output_width(const EncoderSpec& spec);

// Registers all weights for `spec` under `prefix` and draws their initial
// values from seed-derived streams. `input_width` is the per-step feature
// width the caller will feed (for lstm_lag it already includes the lag block).
void add_encoder_params(ParameterStore& params, const EncoderSpec& spec, std::size_t input_width,
                        std::uint64_t seed, const std::string& prefix = "enc");

// Builds the encoder graph on `tape`. `inputs` is a T×input_width node.
// Returns the T×H hidden-state node.
int encode(Tape& tape, Binder& bind, const EncoderSpec& spec, int inputs,
           const std::string& prefix = "enc");

// Lag block for the lstm_lag encoder: row t = (y_t, y_{t-1}, ..., y_{t-depth}),
// zero-padded before the series start.
Tensor build_lag_features(const std::vector<double>& y, std::size_t depth);

}  // namespace mqf
