// Command-line driver for the spatial-regression toolkit.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "spatreg/spatreg.hpp"

namespace {

constexpr int exit_ok = 0;
constexpr int exit_config = 2;
constexpr int exit_data = 3;
constexpr int exit_numeric = 4;

std::string read_file_or_throw(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw spatreg::data_error("cannot open file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_output(const std::string& path, const std::string& content) {
    if (path.empty() || path == "-") {
        std::cout << content;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw spatreg::data_error("cannot write file '" + path + "'");
    out << content;
}

struct table_options {
    std::string data_path;
    std::string id_column = "id";
    std::string x_column = "x";
    std::string y_column = "y";
    std::string delimiter = ",";

    void attach(CLI::App* cmd) {
        cmd->add_option("--data", data_path, "delimited data table")->required();
        cmd->add_option("--id", id_column, "id column name");
        cmd->add_option("--x", x_column, "x coordinate column (planar meters)");
        cmd->add_option("--y", y_column, "y coordinate column (planar meters)");
        cmd->add_option("--delimiter", delimiter, "field delimiter (\",\" or \"tab\")");
    }

    spatreg::spatial_frame load() const {
        return spatreg::load_frame(read_file_or_throw(data_path), id_column, x_column, y_column,
                                   spatreg::detail::parse_delimiter(delimiter))
            .frame;
    }
};

struct weights_options {
    std::size_t knn_k = 0;
    double radius = 0.0;
    std::string adjacency_path;
    bool standardize = false;

    void attach(CLI::App* cmd) {
        auto* k = cmd->add_option("--knn", knn_k, "k nearest neighbours");
        auto* r = cmd->add_option("--radius", radius, "distance band radius in meters");
        auto* a = cmd->add_option("--adjacency", adjacency_path, "adjacency pair list (contiguity)");
        k->excludes(r)->excludes(a);
        r->excludes(a);
        cmd->add_flag("--row-standardize", standardize, "row-standardize the weights");
    }

    spatreg::weights_matrix build(const spatreg::spatial_frame& frame, char delim) const {
        std::optional<spatreg::weights_matrix> W;
        if (knn_k > 0)
            W = spatreg::build_knn(frame, knn_k);
        else if (radius > 0.0)
            W = spatreg::build_distance_band(frame, radius);
        else if (!adjacency_path.empty())
            W = spatreg::build_contiguity(
                frame, spatreg::parse_adjacency_pairs(read_file_or_throw(adjacency_path), delim));
        else
            throw spatreg::config_error("one of --knn, --radius or --adjacency is required");
        return standardize ? spatreg::row_standardize(*W) : *W;
    }
};

int run_exit_code(const spatreg::run_report& report) {
    if (report.all_ok) return exit_ok;
    if (report.failure_category == "config") return exit_config;
    if (report.failure_category == "data") return exit_data;
    return exit_numeric;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"spatial regression toolkit: weights, autocorrelation diagnostics, OLS/SAR/GWR"};
    app.set_version_flag("--version", std::string("spatreg ") + SPATREG_VERSION);
    app.require_subcommand(1);

    // run / validate
    std::string config_path;
    std::optional<std::uint64_t> seed_override;
    std::optional<int> threads_override;
    std::string output_dir_override, format_override;
    auto* run_cmd = app.add_subcommand("run", "execute the pipeline described by a config file");
    run_cmd->add_option("config", config_path, "run configuration (TOML-style)")->required();
    run_cmd->add_option("--seed", seed_override, "override run.seed");
    run_cmd->add_option("--threads", threads_override, "override run.threads");
    run_cmd->add_option("--output-dir", output_dir_override, "override run.output_dir");
    run_cmd->add_option("--format", format_override, "csv, geojson or both");

    auto* val_cmd = app.add_subcommand("validate", "pre-flight check of a run configuration");
    val_cmd->add_option("config", config_path, "run configuration")->required();
    val_cmd->add_option("--seed", seed_override, "override run.seed");
    val_cmd->add_option("--output-dir", output_dir_override, "override run.output_dir");

    // synth
    std::string synth_config_path, synth_output_dir = ".", synth_format = "csv";
    std::uint64_t synth_seed = 0;
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic grid dataset");
    synth_cmd->add_option("config", synth_config_path, "generator configuration")->required();
    auto* synth_seed_opt = synth_cmd->add_option("--seed", synth_seed, "master seed");
    synth_seed_opt->required();
    synth_cmd->add_option("--output-dir", synth_output_dir, "output directory");
    synth_cmd->add_option("--format", synth_format, "csv, geojson or both");

    // weights
    table_options w_table;
    weights_options w_weights;
    std::string w_out;
    auto* weights_cmd = app.add_subcommand("weights", "build and export a spatial weights matrix");
    w_table.attach(weights_cmd);
    w_weights.attach(weights_cmd);
    weights_cmd->add_option("--out", w_out, "output path (default stdout)");

    // diag with four statistic subcommands
    auto* diag_cmd = app.add_subcommand("diag", "spatial autocorrelation diagnostics");
    diag_cmd->require_subcommand(1);
    struct diag_state {
        table_options table;
        weights_options weights;
        std::string column, out_path, alternative = "default";
        int permutations = 999;
        std::uint64_t seed = 0;
        double alpha = 0.05;
    };
    std::map<std::string, diag_state> diag;
    for (const std::string which : {"moran", "geary", "lisa-moran", "lisa-geary"}) {
        auto* sub = diag_cmd->add_subcommand(which, which + " statistic");
        auto& ds = diag[which];
        ds.table.attach(sub);
        ds.weights.attach(sub);
        sub->add_option("--column", ds.column, "variable to test")->required();
        sub->add_option("--permutations", ds.permutations, "permutation count");
        sub->add_option("--seed", ds.seed, "inference seed")->required();
        if (which.rfind("lisa", 0) == 0)
            sub->add_option("--alpha", ds.alpha, "significance level for cluster labels");
        else
            sub->add_option("--alternative", ds.alternative, "greater, less or two_sided");
        sub->add_option("--out", ds.out_path, "output path (default stdout)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_config;
    }

    try {
        if (run_cmd->parsed() || val_cmd->parsed()) {
            spatreg::run_config cfg = spatreg::parse_run_config(read_file_or_throw(config_path));
            if (seed_override) {
                cfg.seed = *seed_override;
                cfg.seed_set = true;
            }
            if (threads_override) cfg.threads = *threads_override;
            if (!output_dir_override.empty()) cfg.output_dir = output_dir_override;
            if (!format_override.empty()) cfg.format = format_override;

            if (val_cmd->parsed()) {
                spatreg::validate_run_config(cfg);
                std::cout << "configuration ok\n";
                return exit_ok;
            }
            const spatreg::run_report report = spatreg::run_pipeline(cfg);
            for (const auto& s : report.stages) {
                if (!s.enabled) continue;
                std::cout << (s.ok ? "[ok]   " : "[FAIL] ") << s.name;
                if (!s.message.empty()) std::cout << ": " << s.message;
                std::cout << "\n";
            }
            std::cout << "report: "
                      << (std::filesystem::path(cfg.output_dir) / "report.txt").string() << "\n";
            return run_exit_code(report);
        }

        if (synth_cmd->parsed()) {
            const auto cfg = spatreg::parse_synth_config(read_file_or_throw(synth_config_path));
            const auto synth = spatreg::generate_synthetic(cfg, synth_seed);
            std::filesystem::create_directories(synth_output_dir);
            const std::filesystem::path dir(synth_output_dir);
            write_output((dir / "data.csv").string(),
                         spatreg::export_delimited(synth.frame, "id", "pos_x", "pos_y"));
            write_output((dir / "truth.csv").string(), spatreg::export_true_surfaces(synth));
            std::string adj = "from,to\n";
            for (const auto& [a, b] : synth.rook_pairs)
                adj += spatreg::quote_field(a, ',') + "," + spatreg::quote_field(b, ',') + "\n";
            write_output((dir / "adjacency.csv").string(), adj);
            if (synth_format == "geojson" || synth_format == "both")
                write_output((dir / "data.geojson").string(),
                             spatreg::export_geojson(synth.frame).dump(2) + "\n");
            std::cout << "wrote " << synth.frame.n() << " units to " << dir.string() << "\n";
            return exit_ok;
        }

        if (weights_cmd->parsed()) {
            const auto frame = w_table.load();
            const char delim = spatreg::detail::parse_delimiter(w_table.delimiter);
            const auto W = w_weights.build(frame, delim);
            write_output(w_out, spatreg::export_weights(W, frame.ids(), delim));
            if (!W.islands().empty())
                std::cerr << "note: " << W.islands().size() << " island(s) present\n";
            return exit_ok;
        }

        if (diag_cmd->parsed()) {
            const auto* sub = diag_cmd->get_subcommands().front();
            const std::string which = sub->get_name();
            const auto& ds = diag[which];
            const auto frame = ds.table.load();
            const char delim = spatreg::detail::parse_delimiter(ds.table.delimiter);
            const auto W = ds.weights.build(frame, delim);
            const arma::vec& values = frame.column(ds.column);

            if (which == "moran" || which == "geary") {
                spatreg::perm_options opts{ds.seed, ds.permutations};
                if (ds.alternative != "default") {
                    if (ds.alternative == "greater")
                        opts.alternative = spatreg::test_alternative::greater;
                    else if (ds.alternative == "less")
                        opts.alternative = spatreg::test_alternative::less;
                    else if (ds.alternative == "two_sided")
                        opts.alternative = spatreg::test_alternative::two_sided;
                    else
                        throw spatreg::config_error(
                            "--alternative must be greater, less or two_sided");
                }
                const auto res = which == "moran" ? spatreg::morans_i(values, W, opts)
                                                  : spatreg::gearys_c(values, W, opts);
                std::string out =
                    "statistic,value,null_expectation,pseudo_p,n_permutations,alternative,seed\n";
                out += res.statistic_name + "," + spatreg::format_number(res.statistic) + "," +
                       spatreg::format_number(res.null_expectation) + "," +
                       spatreg::format_number(res.pseudo_p) + "," +
                       std::to_string(res.n_permutations) + "," + to_string(res.alternative) +
                       "," + std::to_string(res.seed) + "\n";
                write_output(ds.out_path, out);
                return exit_ok;
            }

            const auto res = which == "lisa-moran"
                                 ? spatreg::local_morans_i(values, W, ds.alpha, ds.permutations,
                                                           ds.seed)
                                 : spatreg::local_geary(values, W, ds.alpha, ds.permutations,
                                                        ds.seed);
            std::string out = "id,local_stat,pseudo_p,cluster\n";
            for (std::size_t i = 0; i < frame.n(); ++i)
                out += spatreg::quote_field(frame.ids()[i], ',') + "," +
                       spatreg::format_number(res.local_stat(i)) + "," +
                       spatreg::format_number(res.pseudo_p(i)) + "," +
                       to_string(res.cluster[i]) + "\n";
            write_output(ds.out_path, out);
            return exit_ok;
        }
        throw spatreg::config_error("no subcommand given");
    } catch (const spatreg::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return exit_config;
    } catch (const spatreg::data_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return exit_data;
    } catch (const spatreg::error& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return exit_numeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_numeric;
    }
}
