#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "ecofuse/dataset.hpp"
#include "ecofuse/energy.hpp"
#include "ecofuse/errors.hpp"
#include "ecofuse/fusion.hpp"
#include "ecofuse/pipeline.hpp"
#include "ecofuse/rng.hpp"
#include "ecofuse/version.hpp"

namespace {

using namespace ecofuse;

struct Overrides {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<double> grid_intensity;
    bool optimize_on_test = false;
    std::optional<int> oof_folds;
};

void add_common(CLI::App* cmd, Overrides& ov, bool config_required) {
    auto* config = cmd->add_option("--config", ov.config_path, "pipeline config JSON");
    if (config_required) config->required();
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&ov](std::uint64_t v) { ov.seed = v; }, "root seed override");
    cmd->add_option("--out", ov.out, "output path override");
    cmd->add_option_function<double>(
        "--grid-intensity", [&ov](double v) { ov.grid_intensity = v; },
        "grid carbon intensity override (kgCO2eq/kWh)");
    cmd->add_flag("--optimize-on-test", ov.optimize_on_test,
                  "optimize ensemble weights on the test split, as published");
    cmd->add_option_function<int>(
        "--oof-folds", [&ov](int v) { ov.oof_folds = v; },
        "stacking cross-fit folds (0 = train on full training features)");
}

pipeline::PipelineConfig configure(const Overrides& ov) {
    pipeline::PipelineConfig config = pipeline::load_config(ov.config_path);
    if (ov.seed) config.seed = *ov.seed;
    if (!ov.out.empty()) config.output_dir = ov.out;
    if (ov.grid_intensity) config.energy.grid_intensity = *ov.grid_intensity;
    if (ov.optimize_on_test) config.optimize_on_test = true;
    if (ov.oof_folds) config.meta_hyper.oof_folds = *ov.oof_folds;
    return config;
}

void print_run_summary(const pipeline::RunArtifacts& artifacts) {
    for (const auto& r : artifacts.results)
        std::printf("%s / %s: accuracy %.4f, macro F1 %.4f\n", r.combination.c_str(),
                    r.strategy.c_str(), r.metrics.accuracy, r.metrics.macro_f1);
    for (const auto& note : artifacts.notes) std::printf("note: %s\n", note.c_str());
    std::printf("wrote %zu files to %s\n", artifacts.files.size(),
                artifacts.run_dir.string().c_str());
}

int dispatch(int argc, char** argv) {
    CLI::App app{"ensemble fusion, classification metrics, and energy accounting"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    Overrides ov;
    std::vector<std::string> formats;
    std::string format;
    std::vector<std::string> compare_dirs;

    auto* eval = app.add_subcommand("eval", "run the full pipeline from a config");
    add_common(eval, ov, true);
    eval->add_option("--format", formats,
                     "additional report formats: json, csv, text-table, svg-histogram");
    eval->callback([&] {
        const pipeline::PipelineConfig config = configure(ov);
        const pipeline::RunArtifacts artifacts = pipeline::run_pipeline(config);
        print_run_summary(artifacts);
        for (const std::string& f : formats)
            for (const auto& p : pipeline::emit_report(artifacts, f))
                std::printf("report: %s\n", p.string().c_str());
    });

    auto* optimize = app.add_subcommand(
        "optimize-weights", "fit simplex-constrained ensemble weights from a config");
    add_common(optimize, ov, true);
    optimize->callback([&] {
        pipeline::PipelineConfig config = configure(ov);
        const pipeline::LoadedData loaded = pipeline::load_and_split(config);
        const data::AlignedBundle train = data::take(loaded.bundle, loaded.split.train);
        const data::AlignedBundle test = data::take(loaded.bundle, loaded.split.test);

        fusion::OptimizerConfig ocfg = config.optimizer;
        std::vector<std::string> ids;
        for (const auto& m : loaded.bundle.models) ids.push_back(m.model_id);
        std::string combo;
        for (std::size_t i = 0; i < ids.size(); ++i) combo += (i ? "+" : "") + ids[i];
        ocfg.seed = rng::derive_seed(config.seed, "optimizer:" + combo);
        ocfg.objective_split = config.optimize_on_test
                                   ? fusion::ObjectiveSplit::test_paper_faithful
                                   : fusion::ObjectiveSplit::validation;
        const auto result =
            fusion::optimize_weights(config.optimize_on_test ? test : train, ocfg);
        const std::string doc = fusion::weights_to_json(
            result.weights, ids, result.achieved_accuracy, ocfg.objective_split);
        if (ov.out.empty()) {
            std::printf("%s\n", doc.c_str());
        } else {
            std::ofstream file(ov.out);
            if (!file) throw RuntimeFailure("cannot open " + ov.out + " for writing");
            file << doc << '\n';
            std::printf("wrote %s\n", ov.out.c_str());
        }
    });

    auto* stack = app.add_subcommand("stack", "run the stacking strategy only");
    add_common(stack, ov, true);
    stack->add_option("--format", formats,
                      "additional report formats: json, csv, text-table, svg-histogram");
    stack->callback([&] {
        pipeline::PipelineConfig config = configure(ov);
        config.strategies = {"stacking"};
        const pipeline::RunArtifacts artifacts = pipeline::run_pipeline(config);
        print_run_summary(artifacts);
        for (const std::string& f : formats)
            for (const auto& p : pipeline::emit_report(artifacts, f))
                std::printf("report: %s\n", p.string().c_str());
    });

    auto* energy_cmd =
        app.add_subcommand("energy-report", "integrate a power source into an emissions report");
    add_common(energy_cmd, ov, true);
    energy_cmd->add_option("--format", format, "report format: json (default) or text");
    energy_cmd->callback([&] {
        const pipeline::PipelineConfig config = configure(ov);
        const pipeline::EnergyConfig& ecfg = config.energy;
        energy::EnergySession::Result measured;
        switch (ecfg.source.kind) {
            case energy::SourceKind::trace_replay: {
                auto session =
                    energy::record_session(ecfg.source, ecfg.sampling_period_s);
                measured = session.stop();
                break;
            }
            case energy::SourceKind::constant_model: {
                if (!(ecfg.duration_s > 0.0))
                    throw ValidationError(
                        "constant_model energy reports need energy.duration_s > 0");
                // Synthetic interval; trapezoid is exact on constant power.
                measured.samples = {
                    {0.0, ecfg.source.cpu_w, ecfg.source.gpu_w, ecfg.source.ram_w},
                    {ecfg.duration_s, ecfg.source.cpu_w, ecfg.source.gpu_w,
                     ecfg.source.ram_w}};
                measured.duration_s = ecfg.duration_s;
                break;
            }
            case energy::SourceKind::os_counters: {
                if (!(ecfg.duration_s > 0.0))
                    throw ValidationError(
                        "os_counters energy reports need energy.duration_s > 0");
                auto session =
                    energy::record_session(ecfg.source, ecfg.sampling_period_s);
                std::this_thread::sleep_for(
                    std::chrono::duration<double>(ecfg.duration_s));
                measured = session.stop();
                break;
            }
        }
        const auto breakdown =
            energy::integrate_energy(measured.samples, measured.duration_s);
        const auto report = energy::compute_emissions(breakdown, ecfg.grid_intensity);
        const std::string text = (format == "text")
                                     ? energy::emissions_table({{"session", report}})
                                     : energy::emissions_to_json(report) + "\n";
        if (!format.empty() && format != "text" && format != "json")
            throw UnsupportedFormat("unsupported energy report format '" + format + "'");
        if (ov.out.empty()) {
            std::printf("%s", text.c_str());
        } else {
            std::ofstream file(ov.out);
            if (!file) throw RuntimeFailure("cannot open " + ov.out + " for writing");
            file << text;
            std::printf("wrote %s\n", ov.out.c_str());
        }
    });

    auto* compare = app.add_subcommand("compare", "compare finished run directories");
    compare->add_option("dirs", compare_dirs, "run directories (>= 2)")->required();
    compare->add_option("--out", ov.out, "comparison file path");
    compare->add_option("--format", format, "comparison format: text (default) or json");
    compare->callback([&] {
        const std::string fmt_value = format.empty() ? "text" : format;
        const std::string out_path =
            ov.out.empty() ? (fmt_value == "json" ? "comparison.json" : "comparison.txt")
                           : ov.out;
        std::vector<std::filesystem::path> dirs(compare_dirs.begin(), compare_dirs.end());
        const auto written = pipeline::compare_command(dirs, out_path, fmt_value);
        std::printf("wrote %s\n", written.string().c_str());
    });

    auto* split_cmd =
        app.add_subcommand("split", "emit a deterministic stratified split file");
    add_common(split_cmd, ov, true);
    split_cmd->callback([&] {
        const pipeline::PipelineConfig config = configure(ov);
        const pipeline::LoadedData loaded = pipeline::load_and_split(config);
        const std::string out_path = ov.out.empty() ? "split.json" : ov.out;
        data::save_split(out_path, loaded.split);
        std::printf("wrote %s (train %zu, test %zu)\n", out_path.c_str(),
                    loaded.split.train.size(), loaded.split.test.size());
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const RuntimeFailure& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}
