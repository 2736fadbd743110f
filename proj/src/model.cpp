#include "mqf/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "json.hpp"
#include "mqf/errors.hpp"
#include "mqf/init.hpp"

namespace mqf {

namespace {

double norm_value(double v, const ColumnStats& st) { return (v - st.center) / st.scale; }

std::size_t embed_width(std::size_t cardinality) {
    std::size_t w = static_cast<std::size_t>(
        std::ceil(std::sqrt(static_cast<double>(std::max<std::size_t>(cardinality, 1)))));
    return std::min<std::size_t>(w, 16);
}

}  // namespace

std::size_t CategoricalMap::row_of(const std::string& level) const {
    auto it = std::lower_bound(levels.begin(), levels.end(), level);
    if (it == levels.end() || *it != level) return levels.size();
    return static_cast<std::size_t>(it - levels.begin());
}

std::size_t ModelSpec::embed_total() const {
    std::size_t e = 0;
    for (const auto& c : cats) e += c.width;
    return e;
}

std::size_t ModelSpec::fut_numeric_width() const {
    return fut_cols.size() + static_real_cols.size();
}

std::size_t ModelSpec::fut_input_width() const {
    return std::max<std::size_t>(1, fut_numeric_width());
}

std::size_t ModelSpec::enc_numeric_width() const {
    std::size_t y_block = encoder.kind == "lstm_lag" ? encoder.depth + 1 : 1;
    return y_block + hist_cols.size() + fut_cols.size() + static_real_cols.size();
}

void validate(const ModelSpec& spec) {
    validate(spec.encoder);
    validate(spec.decoder);
    if (spec.quantiles.empty()) throw ArgumentError("model: at least one quantile level required");
    for (std::size_t i = 0; i < spec.quantiles.size(); ++i) {
        double q = spec.quantiles[i];
        if (!(q > 0.0 && q < 1.0))
            throw ArgumentError("model: quantile level outside (0,1): " + std::to_string(q));
        if (i && !(q > spec.quantiles[i - 1]))
            throw ArgumentError("model: quantile levels must be strictly increasing");
    }
    if (spec.decoder.head == "quantile" && spec.decoder.quantile_count != spec.quantiles.size())
        throw ArgumentError("model: decoder quantile_count does not match quantile levels");
    for (const auto& c : spec.cats) {
        if (c.levels.empty() || c.width == 0)
            throw ArgumentError("model: categorical map for " + c.column + " is empty");
        if (!std::is_sorted(c.levels.begin(), c.levels.end()))
            throw ArgumentError("model: categorical levels for " + c.column + " must be sorted");
    }
}

ModelSpec make_spec(const Dataset& data, const EncoderSpec& enc, const DecoderSpec& dec,
                    std::vector<double> quantiles) {
    ModelSpec spec;
    spec.encoder = enc;
    spec.decoder = dec;
    spec.quantiles = std::move(quantiles);
    if (spec.decoder.head == "quantile") spec.decoder.quantile_count = spec.quantiles.size();
    spec.hist_cols = data.hist_cols;
    spec.fut_cols = data.fut_cols;
    spec.static_real_cols = data.static_real_cols;
    for (std::size_t c = 0; c < data.static_cat_cols.size(); ++c) {
        std::set<std::string> levels;
        for (const auto& rec : data.series) levels.insert(rec.static_cats[c]);
        CategoricalMap m;
        m.column = data.static_cat_cols[c];
        m.levels.assign(levels.begin(), levels.end());
        m.width = embed_width(m.levels.size());
        spec.cats.push_back(std::move(m));
    }
    validate(spec);
    return spec;
}

std::string ModelSpec::to_json() const {
    nlohmann::json j;
    j["encoder"] = {{"kind", encoder.kind},
                    {"hidden", encoder.hidden},
                    {"depth", encoder.depth},
                    {"layers", encoder.layers}};
    j["decoder"] = {{"horizons", decoder.horizons},
                    {"ctx_per_horizon", decoder.ctx_per_horizon},
                    {"ctx_agnostic", decoder.ctx_agnostic},
                    {"global_hidden", decoder.global_hidden},
                    {"local_hidden", decoder.local_hidden},
                    {"head", decoder.head},
                    {"simplified", decoder.simplified}};
    j["quantiles"] = quantiles;
    j["hist_cols"] = hist_cols;
    j["fut_cols"] = fut_cols;
    j["static_real_cols"] = static_real_cols;
    nlohmann::json jc = nlohmann::json::array();
    for (const auto& c : cats)
        jc.push_back({{"column", c.column}, {"levels", c.levels}, {"width", c.width}});
    j["cats"] = jc;
    j["repair"] = repair;
    return j.dump(2) + "\n";
}

ModelSpec ModelSpec::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const std::exception& e) {
        throw DataError(std::string("model spec is not valid JSON: ") + e.what());
    }
    ModelSpec spec;
    try {
        const auto& je = j.at("encoder");
        spec.encoder.kind = je.at("kind").get<std::string>();
        spec.encoder.hidden = je.at("hidden").get<std::size_t>();
        spec.encoder.depth = je.at("depth").get<std::size_t>();
        spec.encoder.layers = je.at("layers").get<std::size_t>();
        const auto& jd = j.at("decoder");
        spec.decoder.horizons = jd.at("horizons").get<std::size_t>();
        spec.decoder.ctx_per_horizon = jd.at("ctx_per_horizon").get<std::size_t>();
        spec.decoder.ctx_agnostic = jd.at("ctx_agnostic").get<std::size_t>();
        spec.decoder.global_hidden = jd.at("global_hidden").get<std::size_t>();
        spec.decoder.local_hidden = jd.at("local_hidden").get<std::size_t>();
        spec.decoder.head = jd.at("head").get<std::string>();
        spec.decoder.simplified = jd.at("simplified").get<bool>();
        spec.quantiles = j.at("quantiles").get<std::vector<double>>();
        spec.decoder.quantile_count = spec.quantiles.size();
        spec.hist_cols = j.at("hist_cols").get<std::vector<std::string>>();
        spec.fut_cols = j.at("fut_cols").get<std::vector<std::string>>();
        spec.static_real_cols = j.at("static_real_cols").get<std::vector<std::string>>();
        for (const auto& jc : j.at("cats")) {
            CategoricalMap m;
            m.column = jc.at("column").get<std::string>();
            m.levels = jc.at("levels").get<std::vector<std::string>>();
            m.width = jc.at("width").get<std::size_t>();
            spec.cats.push_back(std::move(m));
        }
        spec.repair = j.value("repair", false);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("model spec JSON missing fields: ") + e.what());
    }
    validate(spec);
    return spec;
}

std::size_t ModelInputs::live_count() const {
    std::size_t n = 0;
    for (double w : weight)
        if (w > 0.0) ++n;
    return n;
}

namespace {

// Shared normalization of one encoder row block; fills enc.at(i, *).
void fill_enc_row(Tensor& enc, std::size_t i, const SeriesRecord& rec, const ModelSpec& spec,
                  const FittedTransforms& tf, const Tensor& y_block) {
    std::size_t col = 0;
    for (std::size_t c = 0; c < y_block.cols(); ++c) enc.at(i, col++) = y_block.at(i, c);
    for (std::size_t c = 0; c < spec.hist_cols.size(); ++c)
        enc.at(i, col++) = norm_value(rec.x_hist.at(i, c), tf.hist_stats[c]);
    for (std::size_t c = 0; c < spec.fut_cols.size(); ++c)
        enc.at(i, col++) = norm_value(rec.x_future.at(i, c), tf.fut_stats[c]);
    for (std::size_t c = 0; c < spec.static_real_cols.size(); ++c)
        enc.at(i, col++) = norm_value(rec.static_reals[c], tf.static_stats[c]);
}

// Per-horizon future vector for horizon step `pos` (absolute row index), or
// zeros when the row is beyond the record.
void fill_fut_vector(double* dst, const SeriesRecord& rec, const ModelSpec& spec,
                     const FittedTransforms& tf, std::size_t pos) {
    if (spec.fut_numeric_width() == 0) {
        dst[0] = 1.0;  // bias column: no future-facing numeric features
        return;
    }
    std::size_t col = 0;
    bool in_range = pos < rec.length();
    for (std::size_t c = 0; c < spec.fut_cols.size(); ++c)
        dst[col++] = in_range ? norm_value(rec.x_future.at(pos, c), tf.fut_stats[c]) : 0.0;
    for (std::size_t c = 0; c < spec.static_real_cols.size(); ++c)
        dst[col++] = in_range ? norm_value(rec.static_reals[c], tf.static_stats[c]) : 0.0;
}

void check_record_layout(const SeriesRecord& rec, const ModelSpec& spec) {
    if (rec.x_hist.cols() != spec.hist_cols.size() || rec.future_width() != spec.fut_cols.size() ||
        rec.static_reals.size() != spec.static_real_cols.size() ||
        rec.static_cats.size() != spec.cats.size())
        throw DataError("series " + rec.id + " does not match the model's column layout");
}

Tensor target_block(const SeriesRecord& rec, const ModelSpec& spec, const FittedTransforms& tf,
                    std::size_t t_len) {
    std::vector<double> ym(t_len);
    for (std::size_t i = 0; i < t_len; ++i) ym[i] = tf.to_model_y(rec.y[i], rec.id);
    if (spec.encoder.kind == "lstm_lag") return build_lag_features(ym, spec.encoder.depth);
    Tensor out({t_len, 1});
    for (std::size_t i = 0; i < t_len; ++i) out.at(i, 0) = ym[i];
    return out;
}

std::vector<std::size_t> embedding_rows(const SeriesRecord& rec, const ModelSpec& spec) {
    std::vector<std::size_t> rows;
    for (std::size_t c = 0; c < spec.cats.size(); ++c)
        rows.push_back(spec.cats[c].row_of(rec.static_cats[c]));
    return rows;
}

}  // namespace

ModelInputs assemble_training_inputs(const SeriesRecord& rec, const ModelSpec& spec,
                                     const FittedTransforms& tf) {
    check_record_layout(rec, spec);
    ModelInputs in;
    in.series_id = rec.id;
    in.t_start = rec.t0;
    if (rec.t0 > tf.boundary_time) return in;  // nothing inside the boundary
    std::size_t t_len = std::min<std::size_t>(
        rec.length(), static_cast<std::size_t>(tf.boundary_time - rec.t0) + 1);
    in.t_len = t_len;

    const std::size_t K = spec.decoder.horizons;
    const std::size_t fw = spec.fut_input_width();
    Tensor y_block = target_block(rec, spec, tf, t_len);
    in.enc = Tensor({t_len, spec.enc_numeric_width()});
    in.fut_flat = Tensor({t_len, K * fw});
    in.fut_rows = Tensor({t_len * K, fw});
    in.targets.assign(t_len * K, 0.0);
    in.weight.assign(t_len * K, 0.0);

    for (std::size_t t = 0; t < t_len; ++t) {
        fill_enc_row(in.enc, t, rec, spec, tf, y_block);
        for (std::size_t k = 1; k <= K; ++k) {
            std::size_t row = t * K + (k - 1);
            std::size_t pos = t + k;
            fill_fut_vector(&in.fut_rows.at(row, 0), rec, spec, tf, pos);
            std::memcpy(&in.fut_flat.at(t, (k - 1) * fw), &in.fut_rows.at(row, 0),
                        fw * sizeof(double));
            bool live = pos < t_len && rec.observed[pos];
            if (live) {
                in.targets[row] = tf.to_model_y(rec.y[pos], rec.id);
                in.weight[row] = 1.0;
            }
        }
    }
    in.cat_rows = embedding_rows(rec, spec);
    return in;
}

ModelInputs assemble_prediction_inputs(const SeriesRecord& rec, const ModelSpec& spec,
                                       const FittedTransforms& tf, std::int64_t fct_time) {
    check_record_layout(rec, spec);
    std::size_t p = rec.position(fct_time);
    if (p == SeriesRecord::npos)
        throw DataError("forecast creation time " + std::to_string(fct_time) + " not in series " +
                        rec.id);
    const std::size_t K = spec.decoder.horizons;
    if (p + K >= rec.length())
        throw DataError("series " + rec.id + ": no future covariates for all " +
                        std::to_string(K) + " horizons after t=" + std::to_string(fct_time));

    ModelInputs in;
    in.series_id = rec.id;
    in.t_start = rec.t0;
    in.t_len = p + 1;
    const std::size_t fw = spec.fut_input_width();
    Tensor y_block = target_block(rec, spec, tf, in.t_len);
    in.enc = Tensor({in.t_len, spec.enc_numeric_width()});
    for (std::size_t t = 0; t < in.t_len; ++t) fill_enc_row(in.enc, t, rec, spec, tf, y_block);
    in.fut_flat = Tensor({1, K * fw});
    in.fut_rows = Tensor({K, fw});
    for (std::size_t k = 1; k <= K; ++k) {
        fill_fut_vector(&in.fut_rows.at(k - 1, 0), rec, spec, tf, p + k);
        std::memcpy(&in.fut_flat.at(0, (k - 1) * fw), &in.fut_rows.at(k - 1, 0),
                    fw * sizeof(double));
    }
    in.cat_rows = embedding_rows(rec, spec);
    return in;
}

MQModel::MQModel(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    validate(spec_);
    for (const auto& c : spec_.cats) {
        std::string name = "emb." + c.column;
        params_.add(name, glorot_uniform(seed, name, {c.rows(), c.width}, c.rows(), c.width));
    }
    std::size_t enc_width = spec_.enc_numeric_width() + spec_.embed_total();
    add_encoder_params(params_, spec_.encoder, enc_width, seed);
    add_decoder_params(params_, spec_.decoder, encoder_output_width(spec_.encoder),
                       spec_.fut_input_width() + spec_.embed_total(), seed);
}

MQModel::Raw MQModel::forward_raw(Tape& tape, Binder& bind, const ModelInputs& in, bool last_only) {
    if (in.t_len == 0) throw ContractError("forward on empty model inputs");
    const std::size_t K = spec_.decoder.horizons;
    std::size_t want_flat = last_only ? 1 : in.t_len;
    if (in.fut_flat.rows() != want_flat || in.fut_rows.rows() != want_flat * K)
        throw ContractError("model inputs future blocks have unexpected row counts");
    if (in.cat_rows.size() != spec_.cats.size())
        throw ContractError("model inputs carry wrong categorical count");

    int enc_in = tape.constant(in.enc);
    int ff = tape.constant(in.fut_flat);
    int fr = tape.constant(in.fut_rows);
    if (!spec_.cats.empty()) {
        std::vector<int> parts;
        for (std::size_t c = 0; c < spec_.cats.size(); ++c)
            parts.push_back(tape.select_row(bind("emb." + spec_.cats[c].column), in.cat_rows[c]));
        int e = parts.size() == 1 ? parts[0] : tape.concat_cols(parts);  // 1 x E
        enc_in = tape.concat_cols({enc_in, tape.broadcast_row(e, in.t_len)});
        fr = tape.concat_cols({fr, tape.broadcast_row(e, in.fut_rows.rows())});
        int ek = tape.concat_cols(std::vector<int>(K, e));  // 1 x K*E
        ff = tape.concat_cols({ff, tape.broadcast_row(ek, in.fut_flat.rows())});
    }

    int hidden = encode(tape, bind, spec_.encoder, enc_in);
    int h = last_only ? tape.select_row(hidden, in.t_len - 1) : hidden;
    Raw raw;
    raw.node = decode_all(tape, bind, spec_.decoder, h, ff, fr);
    raw.rows = want_flat * K;
    return raw;
}

MQModel::LossNodes MQModel::loss_from_raw(Tape& tape, Raw raw, const std::vector<double>& targets,
                                          const std::vector<double>& weight,
                                          const LossWeights* lw) const {
    const std::size_t n = raw.rows;
    const std::size_t K = spec_.decoder.horizons;
    if (targets.size() != n || weight.size() != n)
        throw ContractError("loss targets/weights do not match decode rows");
    std::vector<double> hw(K, 1.0), qw(spec_.quantiles.size(), 1.0);
    if (lw && !lw->per_horizon.empty()) {
        if (lw->per_horizon.size() != K) throw ArgumentError("per-horizon weight count != horizons");
        hw = lw->per_horizon;
    }
    if (lw && !lw->per_level.empty()) {
        if (lw->per_level.size() != spec_.quantiles.size())
            throw ArgumentError("per-level weight count != quantile levels");
        qw = lw->per_level;
    }
    for (double w : hw)
        if (w < 0.0) throw ArgumentError("negative per-horizon loss weight");
    for (double w : qw)
        if (w < 0.0) throw ArgumentError("negative per-level loss weight");

    LossNodes out;
    if (spec_.decoder.head == "quantile") {
        const std::size_t Q = spec_.quantiles.size();
        std::vector<double> w(n * Q, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double base = weight[i] * hw[i % K];
            if (base <= 0.0) continue;
            for (std::size_t j = 0; j < Q; ++j) {
                w[i * Q + j] = base * qw[j];
                if (w[i * Q + j] > 0.0) ++out.live;
            }
        }
        out.loss = tape.pinball_sum(raw.node, spec_.quantiles, targets, std::move(w));
    } else {
        std::vector<double> w(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            w[i] = weight[i] * hw[i % K];
            if (w[i] > 0.0) ++out.live;
        }
        LogGaussianNodes lg = loggaussian_split(tape, raw.node);
        out.loss = tape.gauss_nll_sum(lg.mu, lg.sigma, targets, std::move(w));
    }
    return out;
}

MQModel::LossNodes MQModel::build_loss(Tape& tape, const ModelInputs& in, const LossWeights* lw) {
    Binder bind(tape, params_);
    Raw raw = forward_raw(tape, bind, in, false);
    return loss_from_raw(tape, raw, in.targets, in.weight, lw);
}

namespace {

ModelInputs cut_view(const ModelInputs& in, std::size_t fct_pos, std::size_t K) {
    if (fct_pos >= in.t_len) throw ContractError("cut position beyond encoder steps");
    ModelInputs v;
    v.series_id = in.series_id;
    v.t_start = in.t_start;
    v.t_len = fct_pos + 1;
    v.enc = Tensor({v.t_len, in.enc.cols()});
    std::memcpy(v.enc.data(), in.enc.data(), v.t_len * in.enc.cols() * sizeof(double));
    v.fut_flat = Tensor({1, in.fut_flat.cols()});
    std::memcpy(v.fut_flat.data(), in.fut_flat.data() + fct_pos * in.fut_flat.cols(),
                in.fut_flat.cols() * sizeof(double));
    v.fut_rows = Tensor({K, in.fut_rows.cols()});
    std::memcpy(v.fut_rows.data(), in.fut_rows.data() + fct_pos * K * in.fut_rows.cols(),
                K * in.fut_rows.cols() * sizeof(double));
    v.cat_rows = in.cat_rows;
    v.targets.assign(in.targets.begin() + static_cast<std::ptrdiff_t>(fct_pos * K),
                     in.targets.begin() + static_cast<std::ptrdiff_t>((fct_pos + 1) * K));
    v.weight.assign(in.weight.begin() + static_cast<std::ptrdiff_t>(fct_pos * K),
                    in.weight.begin() + static_cast<std::ptrdiff_t>((fct_pos + 1) * K));
    return v;
}

}  // namespace

MQModel::LossNodes MQModel::build_cut_loss(Tape& tape, const ModelInputs& in, std::size_t fct_pos,
                                           const LossWeights* lw) {
    ModelInputs v = cut_view(in, fct_pos, spec_.decoder.horizons);
    Binder bind(tape, params_);
    Raw raw = forward_raw(tape, bind, v, true);
    return loss_from_raw(tape, raw, v.targets, v.weight, lw);
}

ForecastGrid MQModel::predict(const ModelInputs& in, const FittedTransforms& tf) {
    Tape tape;
    Binder bind(tape, params_);
    Raw raw = forward_raw(tape, bind, in, true);
    const Tensor& out = tape.value(raw.node);
    const std::size_t K = spec_.decoder.horizons;

    ForecastGrid grid;
    grid.series_id = in.series_id;
    grid.fct = in.t_start + static_cast<std::int64_t>(in.t_len) - 1;
    grid.quantiles = spec_.quantiles;
    grid.values = Tensor({K, spec_.quantiles.size()});
    if (spec_.decoder.head == "quantile") {
        for (std::size_t k = 0; k < K; ++k)
            for (std::size_t j = 0; j < spec_.quantiles.size(); ++j)
                grid.values.at(k, j) = tf.from_model_y(out.at(k, j), in.series_id);
    } else {
        LogGaussianNodes lg = loggaussian_split(tape, raw.node);
        const Tensor& mu = tape.value(lg.mu);
        const Tensor& sg = tape.value(lg.sigma);
        for (std::size_t k = 0; k < K; ++k)
            for (std::size_t j = 0; j < spec_.quantiles.size(); ++j)
                grid.values.at(k, j) =
                    loggaussian_quantile(mu.at(k, 0), sg.at(k, 0), spec_.quantiles[j]);
    }
    if (spec_.repair) repair_crossings(grid);
    return grid;
}

namespace {

nlohmann::json stats_json(const ColumnStats& st) {
    return {{"center", st.center}, {"scale", st.scale}};
}

ColumnStats stats_from_json(const nlohmann::json& j) {
    ColumnStats st;
    st.center = j.at("center").get<double>();
    st.scale = j.at("scale").get<double>();
    return st;
}

std::string transforms_to_json(const FittedTransforms& tf) {
    nlohmann::json j;
    j["boundary_time"] = tf.boundary_time;
    j["log_target"] = tf.log_target;
    j["y_global"] = stats_json(tf.y_global);
    nlohmann::json ys = nlohmann::json::object();
    for (const auto& [id, st] : tf.y_by_series) ys[id] = stats_json(st);
    j["y_by_series"] = ys;
    auto arr = [](const std::vector<ColumnStats>& v) {
        nlohmann::json a = nlohmann::json::array();
        for (const auto& st : v) a.push_back(stats_json(st));
        return a;
    };
    j["hist_stats"] = arr(tf.hist_stats);
    j["fut_stats"] = arr(tf.fut_stats);
    j["static_stats"] = arr(tf.static_stats);
    return j.dump();
}

FittedTransforms transforms_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const std::exception& e) {
        throw DataError(std::string("transforms blob is not valid JSON: ") + e.what());
    }
    FittedTransforms tf;
    tf.boundary_time = j.at("boundary_time").get<std::int64_t>();
    tf.log_target = j.at("log_target").get<bool>();
    tf.y_global = stats_from_json(j.at("y_global"));
    for (const auto& [id, st] : j.at("y_by_series").items()) tf.y_by_series[id] = stats_from_json(st);
    for (const auto& js : j.at("hist_stats")) tf.hist_stats.push_back(stats_from_json(js));
    for (const auto& js : j.at("fut_stats")) tf.fut_stats.push_back(stats_from_json(js));
    for (const auto& js : j.at("static_stats")) tf.static_stats.push_back(stats_from_json(js));
    return tf;
}

constexpr char kMagic[4] = {'M', 'Q', 'R', 'F'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& what) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw DataError("checkpoint truncated while reading " + what);
    return v;
}

void put_string(std::ostream& out, const std::string& s) {
    put<std::uint64_t>(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, const std::string& what) {
    auto n = get<std::uint64_t>(in, what);
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (!in) throw DataError("checkpoint truncated while reading " + what);
    return s;
}

}  // namespace

void MQModel::save(const std::string& path, const FittedTransforms& tf) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out.write(kMagic, 4);
    put<std::uint32_t>(out, kVersion);
    put_string(out, spec_.to_json());
    put_string(out, transforms_to_json(tf));
    put<std::uint64_t>(out, params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const Parameter& p = params_[i];
        put_string(out, p.name);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.ndim()));
        for (std::size_t d : p.value.shape()) put<std::uint64_t>(out, d);
        out.write(reinterpret_cast<const char*>(p.value.data()),
                  static_cast<std::streamsize>(p.value.numel() * sizeof(double)));
    }
    if (!out) throw DataError("short write to " + path);
}

LoadedModel MQModel::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError(path + " is not a model checkpoint");
    auto version = get<std::uint32_t>(in, "version");
    if (version != kVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    ModelSpec spec = ModelSpec::from_json(get_string(in, "model spec"));
    FittedTransforms tf = transforms_from_json(get_string(in, "transforms"));

    MQModel model(std::move(spec), 0);
    auto count = get<std::uint64_t>(in, "parameter count");
    if (count != model.params_.size())
        throw DataError("checkpoint parameter count " + std::to_string(count) + " != expected " +
                        std::to_string(model.params_.size()));
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string name = get_string(in, "parameter name");
        Parameter* found = model.params_.find(name);
        if (!found) throw DataError("checkpoint carries unknown parameter " + name);
        Parameter& p = *found;
        auto ndim = get<std::uint32_t>(in, name + " rank");
        std::vector<std::size_t> dims(ndim);
        for (auto& d : dims) d = get<std::uint64_t>(in, name + " dims");
        if (dims != p.value.shape())
            throw DataError("checkpoint shape mismatch for " + name + ": " + shape_str(dims) +
                            " vs " + shape_str(p.value.shape()));
        in.read(reinterpret_cast<char*>(p.value.data()),
                static_cast<std::streamsize>(p.value.numel() * sizeof(double)));
        if (!in) throw DataError("checkpoint truncated while reading " + name);
    }
    return LoadedModel{std::move(model), std::move(tf)};
}

}  // namespace mqf
