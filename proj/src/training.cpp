#include "mqf/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <thread>

#include "mqf/errors.hpp"
#include "mqf/log.hpp"
#include "mqf/rng.hpp"

namespace mqf {

void validate(const TrainingConfig& cfg, const ModelSpec& spec) {
    if (cfg.scheme != "forking" && cfg.scheme != "cutting")
        throw ArgumentError("unknown training scheme " + cfg.scheme);
    if (cfg.epochs < 1) throw ArgumentError("epochs must be >= 1");
    if (cfg.batch_size < 1) throw ArgumentError("batch_size must be >= 1");
    if (cfg.threads < 1) throw ArgumentError("threads must be >= 1");
    if (!(cfg.adam.lr > 0.0)) throw ArgumentError("learning rate must be positive");
    if (!(cfg.lr_decay > 0.0) || cfg.lr_decay > 1.0)
        throw ArgumentError("lr_decay must be in (0, 1]");
    if (!cfg.loss_weights.per_level.empty() &&
        cfg.loss_weights.per_level.size() != spec.quantiles.size())
        throw ArgumentError("per-level loss weight count != quantile levels");
    if (!cfg.loss_weights.per_horizon.empty() &&
        cfg.loss_weights.per_horizon.size() != spec.decoder.horizons)
        throw ArgumentError("per-horizon loss weight count != horizons");
}

namespace {

struct SeriesResult {
    std::map<std::string, Tensor> grads;
    double loss = 0.0;
    std::size_t live = 0;
    bool finite = true;
};

}  // namespace

TrainResult train(MQModel& model, const std::vector<ModelInputs>& series,
                  const TrainingConfig& cfg) {
    validate(cfg, model.spec());
    const std::size_t K = model.spec().decoder.horizons;

    TrainResult result;
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < series.size(); ++i) {
        const ModelInputs& in = series[i];
        if (in.t_len == 0 || in.live_count() == 0) {
            warn("series " + in.series_id + " contributes no live loss terms; skipped");
            ++result.series_skipped;
            continue;
        }
        if (in.t_len <= K)
            warn("series " + in.series_id + " has " + std::to_string(in.t_len) +
                 " training steps for " + std::to_string(K) + " horizons; far horizons stay masked");
        usable.push_back(i);
    }
    if (usable.empty()) throw DataError("no live loss terms in any series");
    result.series_used = usable.size();

    // Length buckets: order by training length, shuffle only within runs of
    // equal length each epoch.
    std::stable_sort(usable.begin(), usable.end(), [&](std::size_t a, std::size_t b) {
        return series[a].t_len < series[b].t_len;
    });

    AdamState adam(cfg.adam);
    const LossWeights* lw = &cfg.loss_weights;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (cfg.lr_decay != 1.0)
            adam.set_lr(cfg.adam.lr * std::pow(cfg.lr_decay, static_cast<double>(epoch)));
        std::vector<std::size_t> order = usable;
        RngStream shuffle_rng(cfg.seed, "shuffle/epoch=" + std::to_string(epoch));
        std::size_t run = 0;
        while (run < order.size()) {
            std::size_t end = run;
            while (end < order.size() && series[order[end]].t_len == series[order[run]].t_len) ++end;
            std::vector<std::size_t> bucket(order.begin() + static_cast<std::ptrdiff_t>(run),
                                            order.begin() + static_cast<std::ptrdiff_t>(end));
            shuffle_rng.shuffle(bucket);
            std::copy(bucket.begin(), bucket.end(), order.begin() + static_cast<std::ptrdiff_t>(run));
            run = end;
        }

        double epoch_sum = 0.0;
        std::size_t epoch_live = 0;

        for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
            std::size_t bn = std::min(cfg.batch_size, order.size() - b0);
            std::size_t batch_index = b0 / cfg.batch_size;

            // Cut draws happen up front on named streams so worker scheduling
            // can never change them.
            std::vector<std::size_t> cuts(bn, 0);
            if (cfg.scheme == "cutting") {
                for (std::size_t s = 0; s < bn; ++s) {
                    const ModelInputs& in = series[order[b0 + s]];
                    RngStream cut_rng(cfg.seed, "cut/epoch=" + std::to_string(epoch) +
                                                    "/series=" + in.series_id);
                    cuts[s] = static_cast<std::size_t>(cut_rng.uniform_int(in.t_len));
                }
            }

            std::vector<SeriesResult> results(bn);
            auto run_series = [&](std::size_t s) {
                const ModelInputs& in = series[order[b0 + s]];
                Tape tape;
                MQModel::LossNodes ln = cfg.scheme == "cutting"
                                            ? model.build_cut_loss(tape, in, cuts[s], lw)
                                            : model.build_loss(tape, in, lw);
                SeriesResult& r = results[s];
                r.loss = tape.value(ln.loss).at(0);
                r.live = ln.live;
                r.finite = std::isfinite(r.loss);
                if (r.finite && r.live > 0) {
                    tape.backward(ln.loss, 1.0, false);
                    tape.add_param_grads_to(r.grads);
                }
            };

            std::size_t workers = std::min(cfg.threads, bn);
            if (workers <= 1) {
                for (std::size_t s = 0; s < bn; ++s) run_series(s);
            } else {
                std::vector<std::thread> pool;
                for (std::size_t w = 0; w < workers; ++w)
                    pool.emplace_back([&, w] {
                        for (std::size_t s = w; s < bn; s += workers) run_series(s);
                    });
                for (auto& th : pool) th.join();
            }

            std::size_t batch_live = 0;
            for (std::size_t s = 0; s < bn; ++s) {
                if (!results[s].finite)
                    throw NumericError(
                        "non-finite loss for series " + series[order[b0 + s]].series_id +
                        " in batch " + std::to_string(batch_index) + " of epoch " +
                        std::to_string(epoch) + "; |params|=" + std::to_string(model.params().value_norm()) +
                        " |grads|=" + std::to_string(model.params().grad_norm()));
                batch_live += results[s].live;
            }
            if (batch_live == 0) continue;  // every drawn cut was fully masked

            // Objective: total loss / live terms. Merge in series order, so
            // any worker count produces identical sums.
            ParameterStore& params = model.params();
            params.zero_grads();
            double inv = 1.0 / static_cast<double>(batch_live);
            for (std::size_t s = 0; s < bn; ++s) {
                for (std::size_t pi = 0; pi < params.size(); ++pi) {
                    auto it = results[s].grads.find(params[pi].name);
                    if (it == results[s].grads.end()) continue;
                    Tensor& pg = params[pi].grad;
                    const Tensor& sg = it->second;
                    for (std::size_t j = 0; j < pg.numel(); ++j) pg.at(j) += sg.at(j) * inv;
                }
                epoch_sum += results[s].loss;
            }
            epoch_live += batch_live;

            double gn = params.grad_norm();
            if (!std::isfinite(gn))
                throw NumericError("non-finite gradients in batch " + std::to_string(batch_index) +
                                   " of epoch " + std::to_string(epoch) +
                                   "; |params|=" + std::to_string(params.value_norm()));
            adam.step(params);
            ++result.adam_steps;
        }

        result.epoch_loss.push_back(epoch_live > 0 ? epoch_sum / static_cast<double>(epoch_live)
                                                   : 0.0);
    }
    return result;
}

}  // namespace mqf
