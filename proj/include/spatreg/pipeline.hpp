#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "spatreg/diagnostics.hpp"
#include "spatreg/error.hpp"
#include "spatreg/frame.hpp"
#include "spatreg/geojson.hpp"
#include "spatreg/gwr.hpp"
#include "spatreg/ols.hpp"
#include "spatreg/parallel.hpp"
#include "spatreg/sar.hpp"
#include "spatreg/synth.hpp"
#include "spatreg/toml.hpp"
#include "spatreg/varsel.hpp"
#include "spatreg/version.hpp"
#include "spatreg/weights.hpp"

namespace spatreg {

struct weights_stage_spec {
    enum class type_t { knn, contiguity, distance_band };
    type_t type = type_t::knn;
    std::size_t k = 0;
    double radius = 0.0;
    std::string adjacency_path; // for contiguity; falls back to input.adjacency
};

struct derive_spec {
    std::string out;
    std::string numerator;
    std::string denominator;
};

/// Declarative description of one full pipeline run.
struct run_config {
    // [input]
    std::string data_path;
    std::string adjacency_path;
    char delimiter = ',';
    std::string id_column = "id";
    std::string x_column = "x";
    std::string y_column = "y";

    // [model]
    std::string response;
    std::vector<std::string> predictors; // candidate set
    bool intercept = true;
    std::vector<std::string> exclude; // manual exclusions applied before selection

    // [derive.<out>]
    std::vector<derive_spec> derives;

    // [varsel]
    bool varsel_enabled = false;
    double importance_threshold = 10.0;
    double corr_threshold = 0.8;
    double vif_threshold = 5.0;
    std::size_t forest_trees = 500;
    std::size_t forest_mtry = 0;
    std::size_t forest_min_leaf = 5;

    // [weights.autocorr], [weights.sar]
    std::optional<weights_stage_spec> weights_autocorr;
    std::optional<weights_stage_spec> weights_sar;

    // [stages]
    bool stage_ols = true;
    bool stage_sar_lag = false;
    bool stage_sar_error = false;
    bool stage_gwr_basic = false;
    bool stage_gwr_lcr = false;
    bool stage_msgwr = false;
    bool stage_lisa = false;

    // [gwr]
    kernel_shape gwr_shape = kernel_shape::bisquare;
    bandwidth_spec::kind gwr_mode = bandwidth_spec::kind::adaptive;
    bandwidth_criterion gwr_criterion = bandwidth_criterion::aicc;
    std::optional<bandwidth_spec> gwr_bandwidth; // fixed in config, skips selection
    double lcr_threshold = 30.0;

    // [inference]
    int n_permutations = 999;
    double lisa_alpha = 0.05;

    // [run]
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string output_dir;
    std::string format = "both"; // csv | geojson | both
    int threads = 0;

    std::string raw_text; // full config echo for provenance
};

struct stage_status {
    std::string name;
    bool enabled = false;
    bool ok = false;
    std::string message; // failure cause, or a short success note
    double seconds = 0.0;
};

struct autocorr_row {
    std::string variable;
    std::string statistic;
    double value = 0.0;
    double null_expectation = 0.0;
    double pseudo_p = 0.0;
};

struct run_report {
    std::vector<stage_status> stages;
    std::vector<std::string> selected_predictors;
    std::vector<selection_drop> selection_drops;
    std::vector<std::string> removed_islands;
    std::vector<autocorr_row> autocorr_table;          // variables (Table 4 analogue, upper block)
    std::vector<autocorr_row> residual_autocorr_table; // model residuals (lower block)
    std::vector<ranking_entry> comparison;             // AIC/AICc ranking
    std::vector<std::string> manifest;                 // files written, relative names
    std::map<std::string, double> timings;             // stage -> seconds (metadata)
    std::string version = SPATREG_VERSION;
    std::string config_echo;
    bool all_ok = true;
    std::string failure_category; // "", "config", "data", "numeric"
};

namespace detail {

inline char parse_delimiter(const std::string& s) {
    if (s == "," || s.empty()) return ',';
    if (s == "tab" || s == "\\t" || s == "\t") return '\t';
    if (s.size() == 1) return s[0];
    throw config_error("config: unsupported delimiter '" + s + "'");
}

inline weights_stage_spec parse_weights_section(const toml_doc& doc, const std::string& prefix) {
    weights_stage_spec w;
    const std::string type = doc.get_string(prefix + ".type");
    if (type == "knn") {
        w.type = weights_stage_spec::type_t::knn;
        const double k = doc.get_number(prefix + ".k");
        if (k < 1.0 || k != std::floor(k)) throw config_error("config: " + prefix + ".k must be a positive integer");
        w.k = static_cast<std::size_t>(k);
    } else if (type == "contiguity") {
        w.type = weights_stage_spec::type_t::contiguity;
        w.adjacency_path = doc.get_string_or(prefix + ".adjacency", "");
    } else if (type == "distance_band") {
        w.type = weights_stage_spec::type_t::distance_band;
        w.radius = doc.get_number(prefix + ".radius");
        if (!(w.radius > 0.0)) throw config_error("config: " + prefix + ".radius must be positive");
    } else {
        throw config_error("config: " + prefix + ".type must be knn, contiguity or distance_band");
    }
    return w;
}

inline kernel_shape parse_shape(const std::string& s) {
    if (s == "gaussian") return kernel_shape::gaussian;
    if (s == "bisquare") return kernel_shape::bisquare;
    throw config_error("config: kernel shape must be gaussian or bisquare");
}

inline bandwidth_criterion parse_criterion(const std::string& s) {
    if (s == "cv") return bandwidth_criterion::cv;
    if (s == "aicc") return bandwidth_criterion::aicc;
    throw config_error("config: criterion must be cv or aicc");
}

} // namespace detail

/// Parses the TOML-style run configuration (no filesystem access beyond the text itself).
inline run_config parse_run_config(const std::string& text) {
    const toml_doc doc = toml_doc::parse(text);
    run_config cfg;
    cfg.raw_text = text;

    cfg.data_path = doc.get_string("input.data");
    cfg.adjacency_path = doc.get_string_or("input.adjacency", "");
    cfg.delimiter = detail::parse_delimiter(doc.get_string_or("input.delimiter", ","));
    cfg.id_column = doc.get_string_or("input.id_column", "id");
    cfg.x_column = doc.get_string_or("input.x_column", "x");
    cfg.y_column = doc.get_string_or("input.y_column", "y");

    cfg.response = doc.get_string("model.response");
    cfg.predictors = doc.get_string_array("model.predictors");
    cfg.intercept = doc.get_bool_or("model.intercept", true);
    if (doc.has("model.exclude")) cfg.exclude = doc.get_string_array("model.exclude");

    // [derive.<out>] sections, in sorted key order.
    std::set<std::string> derive_names;
    for (const auto& key : doc.keys_with_prefix("derive.")) {
        const std::string rest = key.substr(7);
        const std::size_t dot = rest.find('.');
        if (dot != std::string::npos) derive_names.insert(rest.substr(0, dot));
    }
    for (const auto& name : derive_names) {
        derive_spec d;
        d.out = name;
        d.numerator = doc.get_string("derive." + name + ".numerator");
        d.denominator = doc.get_string("derive." + name + ".denominator");
        cfg.derives.push_back(d);
    }

    cfg.varsel_enabled = doc.get_bool_or("varsel.enabled", false);
    cfg.importance_threshold = doc.get_number_or("varsel.importance_threshold", 10.0);
    cfg.corr_threshold = doc.get_number_or("varsel.correlation_threshold", 0.8);
    cfg.vif_threshold = doc.get_number_or("varsel.vif_threshold", 5.0);
    cfg.forest_trees = static_cast<std::size_t>(doc.get_number_or("varsel.trees", 500));
    cfg.forest_mtry = static_cast<std::size_t>(doc.get_number_or("varsel.mtry", 0));
    cfg.forest_min_leaf = static_cast<std::size_t>(doc.get_number_or("varsel.min_leaf", 5));

    if (doc.has("weights.autocorr.type"))
        cfg.weights_autocorr = detail::parse_weights_section(doc, "weights.autocorr");
    if (doc.has("weights.sar.type"))
        cfg.weights_sar = detail::parse_weights_section(doc, "weights.sar");

    cfg.stage_ols = doc.get_bool_or("stages.ols", true);
    cfg.stage_sar_lag = doc.get_bool_or("stages.sar_lag", false);
    cfg.stage_sar_error = doc.get_bool_or("stages.sar_error", false);
    cfg.stage_gwr_basic = doc.get_bool_or("stages.gwr_basic", false);
    cfg.stage_gwr_lcr = doc.get_bool_or("stages.gwr_lcr", false);
    cfg.stage_msgwr = doc.get_bool_or("stages.msgwr", false);
    cfg.stage_lisa = doc.get_bool_or("stages.lisa", false);

    cfg.gwr_shape = detail::parse_shape(doc.get_string_or("gwr.kernel", "bisquare"));
    const std::string mode = doc.get_string_or("gwr.bandwidth_mode", "adaptive");
    if (mode == "adaptive") cfg.gwr_mode = bandwidth_spec::kind::adaptive;
    else if (mode == "fixed") cfg.gwr_mode = bandwidth_spec::kind::fixed;
    else throw config_error("config: gwr.bandwidth_mode must be adaptive or fixed");
    cfg.gwr_criterion = detail::parse_criterion(doc.get_string_or("gwr.criterion", "aicc"));
    if (doc.has("gwr.bandwidth")) {
        const double b = doc.get_number("gwr.bandwidth");
        cfg.gwr_bandwidth = cfg.gwr_mode == bandwidth_spec::kind::adaptive
                                ? bandwidth_spec::adaptive(static_cast<std::size_t>(b))
                                : bandwidth_spec::fixed(b);
    }
    cfg.lcr_threshold = doc.get_number_or("gwr.lcr_threshold", 30.0);

    cfg.n_permutations = static_cast<int>(doc.get_number_or("inference.permutations", 999));
    cfg.lisa_alpha = doc.get_number_or("inference.lisa_alpha", 0.05);

    if (doc.has("run.seed")) {
        cfg.seed = static_cast<std::uint64_t>(doc.get_number("run.seed"));
        cfg.seed_set = true;
    }
    cfg.output_dir = doc.get_string_or("run.output_dir", "");
    cfg.format = doc.get_string_or("run.format", "both");
    cfg.threads = static_cast<int>(doc.get_number_or("run.threads", 0));
    return cfg;
}

/// Pre-flight validation: everything that can be rejected before any computation.
/// Reads only the data header (plus the adjacency header when referenced).
inline void validate_run_config(const run_config& cfg) {
    if (!cfg.seed_set) throw config_error("config: run.seed is mandatory");
    if (cfg.output_dir.empty()) throw config_error("config: run.output_dir is mandatory");
    if (cfg.format != "csv" && cfg.format != "geojson" && cfg.format != "both")
        throw config_error("config: run.format must be csv, geojson or both");
    if (cfg.predictors.empty()) throw config_error("config: model.predictors must be non-empty");
    if (cfg.n_permutations < 1) throw config_error("config: inference.permutations must be >= 1");
    if (!(cfg.lisa_alpha > 0.0 && cfg.lisa_alpha < 1.0))
        throw config_error("config: inference.lisa_alpha must be in (0,1)");
    if (!(cfg.lcr_threshold > 1.0)) throw config_error("config: gwr.lcr_threshold must exceed 1");

    const bool any_stage = cfg.stage_ols || cfg.stage_sar_lag || cfg.stage_sar_error ||
                           cfg.stage_gwr_basic || cfg.stage_gwr_lcr || cfg.stage_msgwr;
    if (!any_stage) throw config_error("config: at least one model stage must be enabled");
    if ((cfg.stage_sar_lag || cfg.stage_sar_error) && !cfg.weights_sar)
        throw config_error("config: SAR stages require a [weights.sar] section");
    if (cfg.stage_lisa && !cfg.weights_autocorr)
        throw config_error("config: the lisa stage requires a [weights.autocorr] section");

    std::ifstream in(cfg.data_path, std::ios::binary);
    if (!in) throw data_error("cannot open data file '" + cfg.data_path + "'");
    std::string header_line;
    std::getline(in, header_line);
    const text_table head = parse_table(header_line + "\n", cfg.delimiter);

    std::set<std::string> available(head.header.begin(), head.header.end());
    const auto require_column = [&](const std::string& name, const std::string& role) {
        if (!available.count(name))
            throw config_error("config: " + role + " column '" + name + "' not present in data");
    };
    require_column(cfg.id_column, "id");
    require_column(cfg.x_column, "x");
    require_column(cfg.y_column, "y");
    for (const auto& d : cfg.derives) {
        require_column(d.numerator, "derive numerator");
        require_column(d.denominator, "derive denominator");
        available.insert(d.out);
    }
    require_column(cfg.response, "response");
    for (const auto& p : cfg.predictors) require_column(p, "predictor");
    for (const auto& e : cfg.exclude)
        if (std::find(cfg.predictors.begin(), cfg.predictors.end(), e) == cfg.predictors.end())
            throw config_error("config: excluded predictor '" + e + "' is not a candidate");

    const bool needs_adjacency =
        (cfg.weights_autocorr && cfg.weights_autocorr->type == weights_stage_spec::type_t::contiguity &&
         cfg.weights_autocorr->adjacency_path.empty()) ||
        (cfg.weights_sar && cfg.weights_sar->type == weights_stage_spec::type_t::contiguity &&
         cfg.weights_sar->adjacency_path.empty());
    if (needs_adjacency && cfg.adjacency_path.empty())
        throw config_error("config: contiguity weights need input.adjacency or a per-stage adjacency path");
}

namespace detail {

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct pipeline_state {
    const run_config& cfg;
    std::filesystem::path outdir;
    run_report report;

    std::optional<spatial_frame> frame;
    std::vector<std::string> selected;
    std::optional<weights_matrix> w_autocorr;
    std::optional<weights_matrix> w_sar;
    std::optional<ols_fit> ols;
    std::optional<sar_fit> sar_lag;
    std::optional<sar_fit> sar_error;
    std::optional<gwr_fit> gwr_basic;
    std::optional<gwr_fit> gwr_lcr;
    std::optional<gwr_fit> msgwr;
    std::optional<bandwidth_search_result> gwr_search;

    explicit pipeline_state(const run_config& c) : cfg(c), outdir(c.output_dir) {}

    void write_file(const std::string& name, const std::string& content) {
        std::ofstream out(outdir / name, std::ios::binary);
        if (!out) throw data_error("cannot write output file '" + (outdir / name).string() + "'");
        out << content;
        report.manifest.push_back(name);
    }

    void write_json(const std::string& name, const nlohmann::json& j) {
        write_file(name, j.dump(2) + "\n");
    }

    bool want_csv() const { return cfg.format == "csv" || cfg.format == "both"; }
    bool want_geojson() const { return cfg.format == "geojson" || cfg.format == "both"; }

    model_spec spec() const { return {cfg.response, selected, cfg.intercept}; }
};

inline weights_matrix build_stage_weights(const pipeline_state& st, const weights_stage_spec& w) {
    switch (w.type) {
        case weights_stage_spec::type_t::knn:
            return build_knn(*st.frame, w.k);
        case weights_stage_spec::type_t::distance_band:
            return build_distance_band(*st.frame, w.radius);
        case weights_stage_spec::type_t::contiguity: {
            const std::string path = w.adjacency_path.empty() ? st.cfg.adjacency_path : w.adjacency_path;
            auto pairs = parse_adjacency_pairs(read_file(path), st.cfg.delimiter);
            // Pairs naming removed units are dropped silently after island removal.
            std::set<std::string> known(st.frame->ids().begin(), st.frame->ids().end());
            std::vector<std::pair<std::string, std::string>> kept;
            for (auto& pr : pairs)
                if (known.count(pr.first) && known.count(pr.second)) kept.push_back(std::move(pr));
            return build_contiguity(*st.frame, kept);
        }
    }
    throw config_error("unreachable weights type");
}

template <typename Fn>
void run_stage(pipeline_state& st, const std::string& name, bool enabled, Fn&& body) {
    stage_status status;
    status.name = name;
    status.enabled = enabled;
    if (!enabled) {
        status.ok = true;
        status.message = "disabled";
        st.report.stages.push_back(status);
        return;
    }
    if (!st.report.all_ok) {
        status.ok = false;
        status.message = "skipped: an earlier stage failed";
        st.report.stages.push_back(status);
        return;
    }
    const auto start = std::chrono::steady_clock::now();
    try {
        status.message = body();
        status.ok = true;
    } catch (const config_error& e) {
        status.ok = false;
        status.message = e.what();
        st.report.all_ok = false;
        st.report.failure_category = "config";
    } catch (const data_error& e) {
        status.ok = false;
        status.message = e.what();
        st.report.all_ok = false;
        st.report.failure_category = "data";
    } catch (const error& e) {
        status.ok = false;
        status.message = e.what();
        st.report.all_ok = false;
        st.report.failure_category = "numeric";
    }
    const auto end = std::chrono::steady_clock::now();
    status.seconds = std::chrono::duration<double>(end - start).count();
    st.report.timings[name] = status.seconds;
    st.report.stages.push_back(status);
}

inline std::string autocorr_csv(const std::vector<autocorr_row>& rows) {
    std::string out = "variable,statistic,value,null_expectation,pseudo_p\n";
    for (const auto& r : rows)
        out += quote_field(r.variable, ',') + "," + r.statistic + "," + format_number(r.value) +
               "," + format_number(r.null_expectation) + "," + format_number(r.pseudo_p) + "\n";
    return out;
}

inline nlohmann::json report_to_json(const run_report& rep, bool include_meta = true) {
    nlohmann::json j;
    j["stages"] = nlohmann::json::array();
    for (const auto& s : rep.stages)
        j["stages"].push_back({{"name", s.name},
                               {"enabled", s.enabled},
                               {"ok", s.ok},
                               {"message", s.message}});
    j["selected_predictors"] = rep.selected_predictors;
    j["selection_drops"] = nlohmann::json::array();
    for (const auto& d : rep.selection_drops)
        j["selection_drops"].push_back({{"predictor", d.predictor}, {"reason", d.reason}});
    j["removed_islands"] = rep.removed_islands;
    const auto rows_json = [](const std::vector<autocorr_row>& rows) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& r : rows)
            arr.push_back({{"variable", r.variable},
                           {"statistic", r.statistic},
                           {"value", r.value},
                           {"null_expectation", r.null_expectation},
                           {"pseudo_p", r.pseudo_p}});
        return arr;
    };
    j["autocorr"] = rows_json(rep.autocorr_table);
    j["residual_autocorr"] = rows_json(rep.residual_autocorr_table);
    j["comparison"] = nlohmann::json::array();
    for (const auto& c : rep.comparison)
        j["comparison"].push_back({{"model", c.name}, {"criterion", c.criterion}, {"rank", c.rank}});
    j["manifest"] = rep.manifest;
    j["all_ok"] = rep.all_ok;
    j["failure_category"] = rep.failure_category;
    j["config_echo"] = rep.config_echo;
    if (include_meta) {
        nlohmann::json meta;
        meta["version"] = rep.version;
        meta["timings"] = rep.timings;
        j["meta"] = meta;
    }
    return j;
}

inline std::string report_to_text(const run_report& rep) {
    std::string out = "spatial regression pipeline report\n";
    out += "==================================\n\nStages:\n";
    for (const auto& s : rep.stages)
        out += "  " + s.name + ": " + (!s.enabled ? "disabled" : (s.ok ? "ok" : "FAILED")) +
               (s.message.empty() || s.message == "disabled" ? "" : " - " + s.message) + "\n";
    if (!rep.removed_islands.empty()) {
        out += "\nIslands removed (" + std::to_string(rep.removed_islands.size()) + "):";
        for (const auto& id : rep.removed_islands) out += " " + id;
        out += "\n";
    }
    out += "\nSelected predictors:";
    for (const auto& p : rep.selected_predictors) out += " " + p;
    out += "\n";
    if (!rep.selection_drops.empty()) {
        out += "Dropped predictors:\n";
        for (const auto& d : rep.selection_drops)
            out += "  " + d.predictor + ": " + d.reason + "\n";
    }
    if (!rep.autocorr_table.empty()) {
        out += "\nSpatial autocorrelation (variables):\n";
        out += autocorr_csv(rep.autocorr_table);
    }
    if (!rep.residual_autocorr_table.empty()) {
        out += "\nSpatial autocorrelation (model residuals):\n";
        out += autocorr_csv(rep.residual_autocorr_table);
    }
    if (!rep.comparison.empty()) {
        out += "\nModel comparison (lower criterion is better):\nrank,model,criterion\n";
        for (const auto& c : rep.comparison)
            out += std::to_string(c.rank) + "," + c.name + "," + format_number(c.criterion) + "\n";
    }
    out += "\nFiles written:\n";
    for (const auto& f : rep.manifest) out += "  " + f + "\n";
    // Everything below this marker varies run-to-run and is excluded from comparisons.
    out += "\n--- metadata ---\n";
    out += "version: " + rep.version + "\n";
    for (const auto& [stage, secs] : rep.timings)
        out += "timing " + stage + ": " + format_number(secs) + " s\n";
    return out;
}

} // namespace detail

/// Executes the full pipeline described by the configuration. Stages run in a fixed
/// order; a failing stage preserves everything written before it and marks the report.
/// Outputs are byte-deterministic for a given (config, data, seed); wall-clock timings
/// live only in the report's metadata block.
inline run_report run_pipeline(const run_config& cfg) {
    validate_run_config(cfg);
    set_max_threads(cfg.threads);

    detail::pipeline_state st(cfg);
    st.report.config_echo = cfg.raw_text;
    std::filesystem::create_directories(st.outdir);

    const std::uint64_t seed = cfg.seed;

    detail::run_stage(st, "ingest", true, [&]() {
        auto loaded = load_frame(detail::read_file(cfg.data_path), cfg.id_column, cfg.x_column,
                                 cfg.y_column, cfg.delimiter);
        st.frame = std::move(loaded.frame);
        std::string note = std::to_string(st.frame->n()) + " units";
        if (!loaded.report.dropped.empty())
            note += ", " + std::to_string(loaded.report.dropped.size()) + " incomplete row(s) dropped";
        return note;
    });

    detail::run_stage(st, "derive", !cfg.derives.empty(), [&]() {
        for (const auto& d : cfg.derives)
            st.frame = derive_share(*st.frame, d.numerator, d.denominator, d.out);
        return std::to_string(cfg.derives.size()) + " column(s) derived";
    });

    detail::run_stage(st, "weights", cfg.weights_autocorr || cfg.weights_sar, [&]() {
        // Build all declared weights, remove the union of islands from the frame (the
        // analysis is complete-case over connected units), rebuild until stable.
        for (int pass = 0; pass < 64; ++pass) {
            std::set<std::size_t> islands;
            if (cfg.weights_autocorr) {
                st.w_autocorr = detail::build_stage_weights(st, *cfg.weights_autocorr);
                islands.insert(st.w_autocorr->islands().begin(), st.w_autocorr->islands().end());
            }
            if (cfg.weights_sar) {
                st.w_sar = row_standardize(detail::build_stage_weights(st, *cfg.weights_sar));
                islands.insert(st.w_sar->islands().begin(), st.w_sar->islands().end());
            }
            if (islands.empty()) break;
            if (islands.size() >= st.frame->n())
                throw data_error("weights: island removal would empty the dataset");
            std::vector<std::size_t> keep;
            for (std::size_t i = 0; i < st.frame->n(); ++i)
                if (!islands.count(i)) keep.push_back(i);
            for (const std::size_t i : islands) st.report.removed_islands.push_back(st.frame->ids()[i]);
            st.frame = st.frame->subset(keep);
        }
        std::sort(st.report.removed_islands.begin(), st.report.removed_islands.end());
        if (st.w_autocorr && st.want_csv())
            st.write_file("weights_autocorr.csv", export_weights(*st.w_autocorr, st.frame->ids()));
        if (st.w_sar && st.want_csv())
            st.write_file("weights_sar.csv", export_weights(*st.w_sar, st.frame->ids()));
        return std::string(st.w_autocorr ? "autocorr " : "") + std::string(st.w_sar ? "sar" : "");
    });

    detail::run_stage(st, "varsel", true, [&]() {
        std::vector<std::string> candidates;
        for (const auto& p : cfg.predictors)
            if (std::find(cfg.exclude.begin(), cfg.exclude.end(), p) == cfg.exclude.end())
                candidates.push_back(p);
        for (const auto& e : cfg.exclude)
            st.report.selection_drops.push_back({e, "manually excluded"});
        if (!cfg.varsel_enabled) {
            st.selected = candidates;
            st.report.selected_predictors = st.selected;
            return std::string("selection disabled; using candidate list");
        }
        const model_spec spec{cfg.response, candidates, true};
        forest_hyperparameters hyper;
        hyper.n_trees = cfg.forest_trees;
        hyper.mtry = cfg.forest_mtry;
        hyper.min_leaf_size = cfg.forest_min_leaf;
        const auto forest = fit_forest(*st.frame, spec, hyper, substream(seed, "varsel_forest"));
        const auto report = importance(forest, *st.frame, spec);

        const auto screened = screen_by_importance(report, cfg.importance_threshold);
        for (const auto& p : candidates)
            if (std::find(screened.kept.begin(), screened.kept.end(), p) == screened.kept.end())
                st.report.selection_drops.push_back(
                    {p, "%IncMSE " + format_number(report.value_of(p)) + " <= " +
                            format_number(cfg.importance_threshold)});
        std::vector<std::string> current = screened.kept;
        if (current.size() > 1) {
            auto pruned = prune_correlated(*st.frame, current, report, cfg.corr_threshold);
            for (const auto& d : pruned.dropped) st.report.selection_drops.push_back(d);
            current = pruned.kept;
        }
        if (current.size() > 1) {
            auto filtered = filter_by_vif(*st.frame, current, cfg.vif_threshold);
            for (const auto& d : filtered.dropped) st.report.selection_drops.push_back(d);
            current = filtered.kept;
        }
        if (current.empty())
            throw data_error("varsel: no predictor survived the selection funnel");
        st.selected = current;
        st.report.selected_predictors = current;

        std::string txt = "predictor,pct_inc_mse,retained,reason\n";
        for (const auto& p : candidates) {
            const bool kept = std::find(current.begin(), current.end(), p) != current.end();
            std::string reason;
            for (const auto& d : st.report.selection_drops)
                if (d.predictor == p) reason = d.reason;
            txt += quote_field(p, ',') + "," + format_number(report.value_of(p)) + "," +
                   (kept ? "yes" : "no") + "," + quote_field(reason, ',') + "\n";
        }
        st.write_file("varsel_importance.csv", txt);
        return std::to_string(current.size()) + " of " + std::to_string(candidates.size()) +
               " predictors retained";
    });

    // Export the analysis frame (post-derive, post-island-drop).
    detail::run_stage(st, "export_frame", true, [&]() {
        if (st.want_csv())
            st.write_file("data_used.csv", export_delimited(*st.frame, cfg.id_column,
                                                            cfg.x_column, cfg.y_column));
        if (st.want_geojson()) st.write_json("data_used.geojson", export_geojson(*st.frame));
        return std::string();
    });

    detail::run_stage(st, "ols", cfg.stage_ols, [&]() {
        st.ols = fit_ols(*st.frame, st.spec());
        st.write_file("ols_summary.txt", summarize(*st.ols));
        return "R2 " + format_number(st.ols->r2);
    });

    detail::run_stage(st, "autocorr", st.w_autocorr.has_value(), [&]() {
        std::vector<std::string> variables{cfg.response};
        variables.insert(variables.end(), st.selected.begin(), st.selected.end());
        for (const auto& v : variables) {
            const arma::vec& values = st.frame->column(v);
            const perm_options opts{substream(seed, "autocorr:" + v), cfg.n_permutations};
            const auto geary = gearys_c(values, *st.w_autocorr, opts);
            const auto moran = morans_i(values, *st.w_autocorr, opts);
            st.report.autocorr_table.push_back(
                {v, "gearys_c", geary.statistic, geary.null_expectation, geary.pseudo_p});
            st.report.autocorr_table.push_back(
                {v, "morans_i", moran.statistic, moran.null_expectation, moran.pseudo_p});
        }
        st.write_file("autocorr.csv", detail::autocorr_csv(st.report.autocorr_table));
        return std::to_string(variables.size()) + " variable(s) tested";
    });

    detail::run_stage(st, "lisa", cfg.stage_lisa, [&]() {
        const auto res = local_morans_i(st.frame->column(cfg.response), *st.w_autocorr,
                                        cfg.lisa_alpha, cfg.n_permutations,
                                        substream(seed, "lisa:" + cfg.response));
        std::string csv = "id,local_i,pseudo_p,cluster\n";
        std::vector<std::string> labels(st.frame->n());
        for (std::size_t i = 0; i < st.frame->n(); ++i) {
            labels[i] = to_string(res.cluster[i]);
            csv += quote_field(st.frame->ids()[i], ',') + "," + format_number(res.local_stat(i)) +
                   "," + format_number(res.pseudo_p(i)) + "," + labels[i] + "\n";
        }
        if (st.want_csv()) st.write_file("lisa_moran.csv", csv);
        if (st.want_geojson()) {
            std::vector<geojson_property> props;
            props.push_back({"local_i", res.local_stat, {}});
            props.push_back({"pseudo_p", res.pseudo_p, {}});
            props.push_back({"cluster", arma::vec(), labels});
            st.write_json("lisa_moran.geojson",
                          geojson_points(st.frame->ids(), st.frame->locations(), props));
        }
        return std::string();
    });

    detail::run_stage(st, "sar_lag", cfg.stage_sar_lag, [&]() {
        st.sar_lag = fit_spatial_lag(*st.frame, st.spec(), *st.w_sar);
        st.write_file("sar_lag_summary.txt", summarize(*st.sar_lag));
        return "rho " + format_number(st.sar_lag->spatial_parameter);
    });

    detail::run_stage(st, "sar_error", cfg.stage_sar_error, [&]() {
        st.sar_error = fit_spatial_error(*st.frame, st.spec(), *st.w_sar);
        st.write_file("sar_error_summary.txt", summarize(*st.sar_error));
        return "lambda " + format_number(st.sar_error->spatial_parameter);
    });

    const auto write_gwr_outputs = [&](const std::string& prefix, const gwr_fit& fit) {
        st.write_file(prefix + "_summary.txt", summarize(fit));
        if (st.want_csv()) st.write_file(prefix + "_surfaces.csv", export_surfaces_csv(fit, *st.frame));
        if (st.want_geojson()) {
            std::vector<geojson_property> props;
            for (std::size_t j = 0; j < fit.p; ++j)
                props.push_back({"beta_" + fit.term_names[j], fit.local_coefficients.col(j), {}});
            for (std::size_t j = 0; j < fit.p; ++j)
                props.push_back({"se_" + fit.term_names[j], fit.local_std_errors.col(j), {}});
            props.push_back({"local_r2", fit.local_r2, {}});
            props.push_back({"local_cn", fit.local_condition_numbers, {}});
            props.push_back({"local_ridge", fit.local_ridge, {}});
            st.write_json(prefix + "_surfaces.geojson",
                          geojson_points(st.frame->ids(), st.frame->locations(), props));
        }
    };

    const auto resolve_gwr_kernel = [&]() -> kernel_spec {
        if (cfg.gwr_bandwidth) return {cfg.gwr_shape, *cfg.gwr_bandwidth};
        if (!st.gwr_search)
            st.gwr_search = select_bandwidth(*st.frame, st.spec(), cfg.gwr_shape, cfg.gwr_mode,
                                             cfg.gwr_criterion);
        return {cfg.gwr_shape, st.gwr_search->bandwidth};
    };

    detail::run_stage(st, "gwr_basic", cfg.stage_gwr_basic, [&]() {
        const kernel_spec kernel = resolve_gwr_kernel();
        st.gwr_basic = fit_gwr(*st.frame, st.spec(), kernel);
        write_gwr_outputs("gwr_basic", *st.gwr_basic);
        std::string note = "bandwidth " + to_string(kernel.bandwidth);
        if (st.gwr_search && st.gwr_search->global_flag) note += " (global)";
        return note;
    });

    detail::run_stage(st, "gwr_lcr", cfg.stage_gwr_lcr, [&]() {
        const kernel_spec kernel = resolve_gwr_kernel();
        st.gwr_lcr = fit_lcr_gwr(*st.frame, st.spec(), kernel, cfg.lcr_threshold);
        write_gwr_outputs("gwr_lcr", *st.gwr_lcr);
        return "max ridge " + format_number(st.gwr_lcr->local_ridge.max());
    });

    detail::run_stage(st, "msgwr", cfg.stage_msgwr, [&]() {
        msgwr_options opts;
        opts.mode = cfg.gwr_mode;
        opts.criterion = cfg.gwr_criterion;
        st.msgwr = fit_msgwr(*st.frame, st.spec(), cfg.gwr_shape, opts);
        write_gwr_outputs("msgwr", *st.msgwr);
        return st.msgwr->converged ? "converged in " + std::to_string(st.msgwr->sweeps) + " sweep(s)"
                                   : "sweep budget exhausted";
    });

    detail::run_stage(st, "residual_autocorr", st.w_autocorr.has_value(), [&]() {
        const auto add = [&](const std::string& model, const arma::vec& resid) {
            const perm_options opts{substream(seed, "residual_autocorr:" + model),
                                    cfg.n_permutations};
            const auto res = residual_autocorrelation(resid, *st.w_autocorr, opts);
            st.report.residual_autocorr_table.push_back(
                {model, res.statistic_name, res.statistic, res.null_expectation, res.pseudo_p});
        };
        if (st.ols) add("ols", st.ols->residuals);
        if (st.sar_lag) add("sar_lag", st.sar_lag->residuals);
        if (st.sar_error) add("sar_error", st.sar_error->residuals);
        if (st.gwr_basic) add("gwr_basic", st.gwr_basic->residuals);
        if (st.gwr_lcr) add("gwr_lcr", st.gwr_lcr->residuals);
        if (st.msgwr) add("msgwr", st.msgwr->residuals);
        st.write_file("residual_autocorr.csv", detail::autocorr_csv(st.report.residual_autocorr_table));
        return std::to_string(st.report.residual_autocorr_table.size()) + " model(s)";
    });

    detail::run_stage(st, "comparison", true, [&]() {
        std::vector<model_criterion> entries;
        if (st.ols) entries.push_back({"ols", st.ols->aic, st.ols->response_sig});
        if (st.sar_lag) entries.push_back({"sar_lag", st.sar_lag->aic, st.sar_lag->response_sig});
        if (st.sar_error)
            entries.push_back({"sar_error", st.sar_error->aic, st.sar_error->response_sig});
        if (st.gwr_basic)
            entries.push_back({"gwr_basic", st.gwr_basic->aicc, st.gwr_basic->response_sig});
        if (st.gwr_lcr) entries.push_back({"gwr_lcr", st.gwr_lcr->aicc, st.gwr_lcr->response_sig});
        if (st.msgwr) entries.push_back({"msgwr", st.msgwr->aicc, st.msgwr->response_sig});
        if (entries.empty()) return std::string("no fitted models");
        st.report.comparison = compare_aic(std::move(entries));
        std::string csv = "rank,model,criterion\n";
        for (const auto& c : st.report.comparison)
            csv += std::to_string(c.rank) + "," + c.name + "," + format_number(c.criterion) + "\n";
        st.write_file("comparison.csv", csv);
        return "best: " + st.report.comparison.front().name;
    });

    // The report itself: plain text plus machine-readable JSON.
    st.write_file("report.txt", detail::report_to_text(st.report));
    {
        st.report.manifest.push_back("report.json");
        const auto j = detail::report_to_json(st.report);
        std::ofstream out(st.outdir / "report.json", std::ios::binary);
        out << j.dump(2) << "\n";
    }
    return st.report;
}

/// Parses the TOML-style generator configuration for the synth CLI verb.
inline synth_config parse_synth_config(const std::string& text) {
    const toml_doc doc = toml_doc::parse(text);
    synth_config cfg;
    cfg.nx = static_cast<std::size_t>(doc.get_number("grid.nx"));
    cfg.ny = static_cast<std::size_t>(doc.get_number("grid.ny"));
    cfg.spacing = doc.get_number_or("grid.spacing", 1.0);
    cfg.noise_sigma = doc.get_number_or("response.noise_sigma", 1.0);
    cfg.lambda = doc.get_number_or("response.lambda", 0.0);
    cfg.response_name = doc.get_string_or("response.name", "y");

    const auto parse_surface = [&](const std::string& prefix) {
        surface_spec s;
        const std::string kind = doc.get_string_or(prefix + ".surface", "constant");
        if (kind == "constant") {
            s = surface_spec::constant(doc.get_number_or(prefix + ".value", 0.0));
        } else if (kind == "linear") {
            s = surface_spec::linear(doc.get_string_or(prefix + ".axis", "x")[0],
                                     doc.get_number(prefix + ".low"),
                                     doc.get_number(prefix + ".high"));
        } else if (kind == "step") {
            s = surface_spec::step(doc.get_string_or(prefix + ".axis", "x")[0],
                                   doc.get_number(prefix + ".low"), doc.get_number(prefix + ".high"),
                                   doc.get_number_or(prefix + ".breakpoint", 0.5));
        } else if (kind == "stripes") {
            s = surface_spec::stripes(doc.get_string_or(prefix + ".axis", "x")[0],
                                      static_cast<std::size_t>(doc.get_number(prefix + ".count")),
                                      doc.get_number(prefix + ".low"),
                                      doc.get_number(prefix + ".high"));
        } else {
            throw config_error("config: unknown surface kind '" + kind + "'");
        }
        return s;
    };

    if (doc.has("intercept.surface") || doc.has("intercept.value"))
        cfg.intercept = parse_surface("intercept");
    std::set<std::string> names;
    for (const auto& key : doc.keys_with_prefix("predictor.")) {
        const std::string rest = key.substr(10);
        const std::size_t dot = rest.find('.');
        if (dot != std::string::npos) names.insert(rest.substr(0, dot));
    }
    for (const auto& name : names)
        cfg.predictors.push_back({name, parse_surface("predictor." + name)});
    return cfg;
}

} // namespace spatreg
