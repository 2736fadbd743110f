#include <cstdint>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mqf/csv.hpp"
#include "mqf/data.hpp"
#include "mqf/errors.hpp"
#include "mqf/evaluation.hpp"
#include "mqf/log.hpp"
#include "mqf/model.hpp"
#include "mqf/report.hpp"
#include "mqf/synthetic.hpp"
#include "mqf/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Exit codes: 0 ok, 1 internal, 2 configuration, 3 data, 4 numerical.
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct CommonFlags {
    std::string config_path, data_path, schema_path, checkpoint_path, out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::size_t threads = 1;
    std::string scheme, head, encoder;  // optional config overrides
};

struct RunConfig {
    std::string scheme = "forking";
    std::string head = "quantile";
    std::string normalization = "per_series";
    std::size_t epochs = 30;
    std::size_t batch_size = 16;
    std::uint64_t seed = 1;
    double lr = 1e-3;
    double lr_decay = 1.0;
    mqf::EncoderSpec encoder;
    mqf::DecoderSpec decoder;
    bool ctx_given = false;
    std::vector<double> quantiles = {0.1, 0.5, 0.9};
    std::optional<std::int64_t> boundary_time;
};

std::string iso_now() {
    std::time_t t = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

// Config parse failures carry the key (or the parser's line info) so the exit
// message points at the offending entry.
RunConfig parse_config(const std::string& path) {
    json j;
    try {
        j = json::parse(mqf::read_text_file(path));
    } catch (const json::parse_error& e) {
        throw mqf::ArgumentError(path + ": " + e.what());
    } catch (const mqf::DataError& e) {
        throw mqf::ArgumentError(e.what());
    }
    RunConfig cfg;
    std::string key;
    try {
        auto grab = [&](const char* k, auto& dst) {
            key = k;
            if (j.contains(k)) dst = j.at(k).get<std::decay_t<decltype(dst)>>();
        };
        grab("scheme", cfg.scheme);
        grab("head", cfg.head);
        grab("normalization", cfg.normalization);
        grab("epochs", cfg.epochs);
        grab("batch_size", cfg.batch_size);
        grab("seed", cfg.seed);
        grab("lr", cfg.lr);
        grab("lr_decay", cfg.lr_decay);
        grab("quantiles", cfg.quantiles);
        if (j.contains("boundary_time")) {
            key = "boundary_time";
            cfg.boundary_time = j.at("boundary_time").get<std::int64_t>();
        }
        if (j.contains("encoder")) {
            const auto& je = j.at("encoder");
            key = "encoder.kind";
            if (je.contains("kind")) cfg.encoder.kind = je.at("kind").get<std::string>();
            key = "encoder.hidden";
            if (je.contains("hidden")) cfg.encoder.hidden = je.at("hidden").get<std::size_t>();
            key = "encoder.depth";
            if (je.contains("depth")) cfg.encoder.depth = je.at("depth").get<std::size_t>();
            key = "encoder.layers";
            if (je.contains("layers")) cfg.encoder.layers = je.at("layers").get<std::size_t>();
        }
        key = "horizons";
        if (j.contains("horizons")) cfg.decoder.horizons = j.at("horizons").get<std::size_t>();
        if (j.contains("decoder")) {
            const auto& jd = j.at("decoder");
            auto grabd = [&](const char* k, auto& dst) {
                key = std::string("decoder.") + k;
                if (jd.contains(k)) {
                    dst = jd.at(k).get<std::decay_t<decltype(dst)>>();
                    if (std::string(k).rfind("ctx", 0) == 0) cfg.ctx_given = true;
                }
            };
            grabd("ctx_per_horizon", cfg.decoder.ctx_per_horizon);
            grabd("ctx_agnostic", cfg.decoder.ctx_agnostic);
            grabd("global_hidden", cfg.decoder.global_hidden);
            grabd("local_hidden", cfg.decoder.local_hidden);
            grabd("simplified", cfg.decoder.simplified);
        }
    } catch (const json::exception& e) {
        throw mqf::ArgumentError(path + ": key \"" + key + "\": " + e.what());
    }
    return cfg;
}

void apply_overrides(RunConfig& cfg, const CommonFlags& fl) {
    if (!fl.scheme.empty()) cfg.scheme = fl.scheme;
    if (!fl.head.empty()) cfg.head = fl.head;
    if (!fl.encoder.empty()) cfg.encoder.kind = fl.encoder;
    if (fl.seed_set) cfg.seed = fl.seed;
    cfg.decoder.head = cfg.head;
    if (!cfg.ctx_given) {
        // Context widths default to half the encoder state width.
        cfg.decoder.ctx_per_horizon = std::max<std::size_t>(1, cfg.encoder.hidden / 2);
        cfg.decoder.ctx_agnostic = std::max<std::size_t>(1, cfg.encoder.hidden / 2);
    }
    cfg.decoder.quantile_count = cfg.quantiles.size();
}

mqf::Dataset load_dataset(const CommonFlags& fl) {
    if (fl.data_path.empty() || fl.schema_path.empty())
        throw mqf::ArgumentError("--data and --schema are required");
    return mqf::ingest_csv(fl.data_path, mqf::load_schema(fl.schema_path));
}

void check_columns(const mqf::ModelSpec& spec, const mqf::Dataset& data) {
    auto diff = [](const std::vector<std::string>& a, const std::vector<std::string>& b,
                   const char* what) {
        if (a == b) return;
        std::string msg = std::string("checkpoint/dataset mismatch in ") + what + ": model has [";
        for (const auto& s : a) msg += s + " ";
        msg += "], data has [";
        for (const auto& s : b) msg += s + " ";
        msg += "]";
        throw mqf::DataError(msg);
    };
    diff(spec.hist_cols, data.hist_cols, "historical columns");
    diff(spec.fut_cols, data.fut_cols, "future columns");
    diff(spec.static_real_cols, data.static_real_cols, "static real columns");
    std::vector<std::string> cat_names;
    for (const auto& c : spec.cats) cat_names.push_back(c.column);
    diff(cat_names, data.static_cat_cols, "static categorical columns");
}

void write_manifest(const std::string& out_dir, const std::string& command, const CommonFlags& fl,
                    const json& extra) {
    json j;
    j["command"] = command;
    j["timestamp"] = iso_now();
    if (!fl.config_path.empty()) j["config"] = fl.config_path;
    if (!fl.data_path.empty()) j["data"] = fl.data_path;
    if (!fl.schema_path.empty()) j["schema"] = fl.schema_path;
    if (!fl.checkpoint_path.empty()) j["checkpoint"] = fl.checkpoint_path;
    j["out"] = out_dir;
    j["threads"] = fl.threads;
    for (auto& [k, v] : extra.items()) j[k] = v;
    mqf::write_text_file(out_dir + "/manifest.json", j.dump(2) + "\n");
}

std::string out_dir_or_throw(const CommonFlags& fl) {
    if (fl.out_dir.empty()) throw mqf::ArgumentError("--out is required");
    fs::create_directories(fl.out_dir);
    return fl.out_dir;
}

std::vector<std::int64_t> parse_int_list(const std::string& text, const char* what) {
    std::vector<std::int64_t> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t comma = text.find(',', start);
        std::string tok = text.substr(start, comma == std::string::npos ? comma : comma - start);
        if (!tok.empty()) {
            char* end = nullptr;
            long long v = std::strtoll(tok.c_str(), &end, 10);
            if (end != tok.c_str() + tok.size())
                throw mqf::ArgumentError(std::string(what) + ": bad integer '" + tok + "'");
            out.push_back(v);
        }
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (out.empty()) throw mqf::ArgumentError(std::string(what) + ": empty list");
    return out;
}

std::vector<double> parse_level_list(const std::string& text) {
    std::vector<double> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t comma = text.find(',', start);
        std::string tok = text.substr(start, comma == std::string::npos ? comma : comma - start);
        if (!tok.empty()) {
            char* end = nullptr;
            double v = std::strtod(tok.c_str(), &end);
            if (end != tok.c_str() + tok.size())
                throw mqf::ArgumentError("levels: bad number '" + tok + "'");
            out.push_back(v);
        }
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (out.empty()) throw mqf::ArgumentError("levels: empty list");
    return out;
}

int cmd_synthesize(const CommonFlags& fl, const mqf::SyntheticConfig& scfg,
                   const std::string& levels_text) {
    std::string out = out_dir_or_throw(fl);
    mqf::SyntheticConfig cfg = scfg;
    if (fl.seed_set) cfg.seed = fl.seed;
    mqf::Synthetic syn = mqf::synthesize(cfg);
    mqf::export_csv(syn.data, out + "/data.csv");
    mqf::write_text_file(out + "/schema.json", mqf::schema_to_json(mqf::synthetic_schema()));
    std::vector<double> levels = parse_level_list(levels_text);
    mqf::write_oracle_csv(syn.oracle, levels, out + "/oracle.csv");
    write_manifest(out, "synthesize", fl,
                   {{"seed", cfg.seed},
                    {"n_series", cfg.n_series},
                    {"t_len", cfg.t_len},
                    {"period", cfg.period},
                    {"noise", cfg.noise},
                    {"spike_rate", cfg.spike_rate},
                    {"levels", levels}});
    std::cout << "wrote " << out << "/data.csv, schema.json, oracle.csv\n";
    return 0;
}

int cmd_train(const CommonFlags& fl) {
    if (fl.config_path.empty()) throw mqf::ArgumentError("--config is required");
    std::string out = out_dir_or_throw(fl);
    RunConfig cfg = parse_config(fl.config_path);
    apply_overrides(cfg, fl);

    mqf::Dataset data = load_dataset(fl);
    std::int64_t boundary = cfg.boundary_time.value_or([&] {
        std::int64_t m = data.series.front().t0;
        for (const auto& rec : data.series) m = std::max(m, rec.time_at(rec.length() - 1));
        return m;
    }());
    if (cfg.normalization != "per_series" && cfg.normalization != "global")
        throw mqf::ArgumentError("normalization must be per_series or global, got " +
                                 cfg.normalization);
    mqf::FittedTransforms tf = mqf::fit_transforms(data, boundary, cfg.head == "loggaussian");
    if (cfg.normalization == "global")
        for (auto& [id, st] : tf.y_by_series) st = tf.y_global;
    mqf::ModelSpec spec = mqf::make_spec(data, cfg.encoder, cfg.decoder, cfg.quantiles);
    mqf::MQModel model(spec, cfg.seed);

    std::vector<mqf::ModelInputs> inputs;
    inputs.reserve(data.series.size());
    for (const auto& rec : data.series)
        inputs.push_back(mqf::assemble_training_inputs(rec, spec, tf));

    mqf::TrainingConfig tcfg;
    tcfg.scheme = cfg.scheme;
    tcfg.epochs = cfg.epochs;
    tcfg.batch_size = cfg.batch_size;
    tcfg.seed = cfg.seed;
    tcfg.threads = fl.threads;
    tcfg.adam.lr = cfg.lr;
    tcfg.lr_decay = cfg.lr_decay;
    mqf::TrainResult result = mqf::train(model, inputs, tcfg);

    model.save(out + "/checkpoint.mqrf", tf);
    std::string trace = "epoch,mean_loss\n";
    for (std::size_t e = 0; e < result.epoch_loss.size(); ++e)
        trace += std::to_string(e + 1) + "," + mqf::format_double(result.epoch_loss[e]) + "\n";
    mqf::write_text_file(out + "/loss_trace.csv", trace);
    write_manifest(out, "train", fl,
                   {{"seed", cfg.seed},
                    {"scheme", cfg.scheme},
                    {"head", cfg.head},
                    {"normalization", cfg.normalization},
                    {"encoder", cfg.encoder.kind},
                    {"epochs", cfg.epochs},
                    {"batch_size", cfg.batch_size},
                    {"lr", cfg.lr},
                    {"lr_decay", cfg.lr_decay},
                    {"boundary_time", boundary},
                    {"series_used", result.series_used},
                    {"series_skipped", result.series_skipped}});
    std::cout << "trained " << result.series_used << " series for " << cfg.epochs
              << " epochs; final loss/term " << mqf::format_double(result.epoch_loss.back())
              << "; wrote " << out << "/checkpoint.mqrf\n";
    return 0;
}

int cmd_predict(const CommonFlags& fl, const std::string& fct_text) {
    if (fl.checkpoint_path.empty()) throw mqf::ArgumentError("--checkpoint is required");
    std::string out = out_dir_or_throw(fl);
    auto loaded = mqf::MQModel::load(fl.checkpoint_path);
    mqf::Dataset data = load_dataset(fl);
    check_columns(loaded.model.spec(), data);
    std::vector<std::int64_t> fcts = parse_int_list(fct_text, "--fct");

    std::vector<mqf::ForecastGrid> grids;
    for (std::int64_t fct : fcts)
        for (const auto& rec : data.series)
            grids.push_back(loaded.model.predict(
                mqf::assemble_prediction_inputs(rec, loaded.model.spec(), loaded.transforms, fct),
                loaded.transforms));
    mqf::write_grids_csv(grids, out + "/grids.csv");
    write_manifest(out, "predict", fl, {{"fct", fcts}, {"grids", grids.size()}});
    std::cout << "wrote " << grids.size() << " grids to " << out << "/grids.csv\n";
    return 0;
}

int cmd_evaluate(const CommonFlags& fl, const std::string& grids_path,
                 const std::string& oracle_path, const std::string& levels_text) {
    if (grids_path.empty()) throw mqf::ArgumentError("--grids is required");
    std::string out = out_dir_or_throw(fl);
    std::vector<mqf::ForecastGrid> grids = mqf::read_grids_csv(grids_path);
    if (grids.empty()) throw mqf::ArgumentError("no grids to evaluate");
    mqf::Dataset data = load_dataset(fl);

    mqf::EvaluationPlan plan;
    for (const auto& g : grids)
        if (plan.fct_times.empty() || g.fct != plan.fct_times.back()) {
            if (!plan.fct_times.empty() && g.fct < plan.fct_times.back())
                throw mqf::DataError("grid file FCTs out of order");
            plan.fct_times.push_back(g.fct);
        }
    plan.levels = levels_text.empty() ? grids.front().quantiles : parse_level_list(levels_text);
    if (plan.levels.size() >= 2) {
        plan.band_low = plan.levels.front();
        plan.band_high = plan.levels.back();
    }
    mqf::MetricReport rep = mqf::score_grids(grids, data, plan);
    mqf::write_text_file(out + "/metrics.csv", rep.to_csv());

    std::string summary;
    summary += "scored " + std::to_string(rep.scored) + " (series, fct, horizon) triples, masked " +
               std::to_string(rep.masked) + "\n";
    summary += "pinball mean per term: " + mqf::format_double(rep.total.mean()) + "\n";
    summary += "per-FCT average (sum over levels): " + mqf::format_double(rep.fct_average) + " over " +
               std::to_string(rep.fct_count) + " FCTs\n";
    for (std::size_t j = 0; j < rep.levels.size(); ++j)
        summary += "coverage at q=" + mqf::format_double(rep.levels[j]) + ": " +
                   mqf::format_double(rep.coverage[j].mean()) + "\n";
    summary += "sharpness [" + mqf::format_double(plan.band_low) + ", " +
               mqf::format_double(plan.band_high) + "]: " + mqf::format_double(rep.sharpness.mean()) +
               "\n";

    if (!oracle_path.empty()) {
        mqf::Oracle oracle = mqf::read_oracle_csv(oracle_path);
        std::size_t K = grids.front().values.rows();
        auto ogrids = mqf::oracle_forecasts(oracle, data, plan, K);
        mqf::MetricReport orep = mqf::score_grids(ogrids, data, plan);
        mqf::write_text_file(out + "/oracle_metrics.csv", orep.to_csv());
        summary += "oracle pinball mean per term: " + mqf::format_double(orep.total.mean()) + "\n";
        if (orep.total.mean() > 0.0)
            summary += "loss ratio vs oracle: " +
                       mqf::format_double(rep.total.mean() / orep.total.mean()) + "\n";
    }
    mqf::write_text_file(out + "/summary.txt", summary);
    write_manifest(out, "evaluate", fl,
                   {{"grids", grids_path},
                    {"oracle", oracle_path},
                    {"levels", plan.levels},
                    {"scored", rep.scored}});
    std::cout << summary;
    return 0;
}

int cmd_report(const CommonFlags& fl, const std::string& grids_path, const std::string& series_text) {
    if (grids_path.empty()) throw mqf::ArgumentError("--grids is required");
    std::string out = out_dir_or_throw(fl);
    std::vector<mqf::ForecastGrid> grids = mqf::read_grids_csv(grids_path);
    mqf::Dataset data = load_dataset(fl);

    std::vector<std::string> wanted;
    if (series_text.empty()) {
        for (const auto& g : grids)
            if (std::find(wanted.begin(), wanted.end(), g.series_id) == wanted.end())
                wanted.push_back(g.series_id);
        std::sort(wanted.begin(), wanted.end());
    } else {
        std::size_t start = 0;
        while (start <= series_text.size()) {
            std::size_t comma = series_text.find(',', start);
            std::string tok =
                series_text.substr(start, comma == std::string::npos ? comma : comma - start);
            if (!tok.empty()) wanted.push_back(tok);
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
    }

    std::vector<std::string> unknown;
    std::vector<mqf::ForecastGrid> kept;
    std::size_t figures = 0;
    for (const std::string& id : wanted) {
        const mqf::SeriesRecord* rec = data.find(id);
        std::vector<mqf::ForecastGrid> mine;
        for (const auto& g : grids)
            if (g.series_id == id) mine.push_back(g);
        if (!rec || mine.empty()) {
            unknown.push_back(id);
            continue;
        }
        mqf::write_text_file(out + "/" + id + ".svg", mqf::render_series_svg(*rec, mine));
        for (auto& g : mine) kept.push_back(std::move(g));
        ++figures;
    }
    mqf::write_grids_csv(kept, out + "/report_grids.csv");
    write_manifest(out, "report", fl,
                   {{"grids", grids_path}, {"figures", figures}, {"unknown", unknown}});
    std::cout << "wrote " << figures << " figures to " << out << "\n";
    if (!unknown.empty()) {
        std::cerr << "unknown series:";
        for (const auto& id : unknown) std::cerr << " " << id;
        std::cerr << "\n";
        return kExitData;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-horizon quantile forecaster"};
    app.require_subcommand(1);

    CommonFlags fl;
    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", fl.config_path, "config JSON");
        cmd->add_option("--data", fl.data_path, "long-format data CSV");
        cmd->add_option("--schema", fl.schema_path, "schema JSON");
        cmd->add_option("--checkpoint", fl.checkpoint_path, "model checkpoint");
        cmd->add_option("--out", fl.out_dir, "output directory");
        cmd->add_option("--seed", fl.seed, "seed override")->each([&](const std::string&) {
            fl.seed_set = true;
        });
        cmd->add_option("--threads", fl.threads, "worker threads (default 1)");
        cmd->add_option("--scheme", fl.scheme, "forking|cutting")
            ->check(CLI::IsMember({"forking", "cutting"}));
        cmd->add_option("--head", fl.head, "quantile|loggaussian")
            ->check(CLI::IsMember({"quantile", "loggaussian"}));
        cmd->add_option("--encoder", fl.encoder, "lstm|lstm_narx|lstm_lag|wavenet")
            ->check(CLI::IsMember({"lstm", "lstm_narx", "lstm_lag", "wavenet"}));
    };

    auto* syn = app.add_subcommand("synthesize", "generate the synthetic benchmark + oracle");
    mqf::SyntheticConfig scfg;
    std::string syn_levels = "0.1,0.5,0.9";
    add_common(syn);
    syn->add_option("--series", scfg.n_series, "series count");
    syn->add_option("--t-len", scfg.t_len, "steps per series");
    syn->add_option("--period", scfg.period, "seasonal period");
    syn->add_option("--noise", scfg.noise, "gaussian|student_t2")
        ->check(CLI::IsMember({"gaussian", "student_t2"}));
    syn->add_option("--spike-rate", scfg.spike_rate, "per-step spike probability");
    syn->add_option("--levels", syn_levels, "oracle quantile levels (comma-separated)");

    auto* tr = app.add_subcommand("train", "fit a model and write a checkpoint");
    add_common(tr);

    auto* pr = app.add_subcommand("predict", "emit forecast grids at given FCTs");
    std::string fct_text;
    add_common(pr);
    pr->add_option("--fct", fct_text, "forecast creation times (comma-separated)")->required();

    auto* ev = app.add_subcommand("evaluate", "score grids against actuals");
    std::string grids_path, oracle_path, eval_levels;
    add_common(ev);
    ev->add_option("--grids", grids_path, "forecast grid CSV")->required();
    ev->add_option("--oracle", oracle_path, "oracle sidecar CSV for loss ratios");
    ev->add_option("--levels", eval_levels, "levels to score (default: grid levels)");

    auto* rp = app.add_subcommand("report", "render per-series SVG band figures");
    std::string series_text;
    add_common(rp);
    rp->add_option("--grids", grids_path, "forecast grid CSV")->required();
    rp->add_option("--series", series_text, "series ids (comma-separated; default: all in grids)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        if (*syn) return cmd_synthesize(fl, scfg, syn_levels);
        if (*tr) return cmd_train(fl);
        if (*pr) return cmd_predict(fl, fct_text);
        if (*ev) return cmd_evaluate(fl, grids_path, oracle_path, eval_levels);
        if (*rp) return cmd_report(fl, grids_path, series_text);
    } catch (const mqf::ArgumentError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const mqf::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const mqf::NumericError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
