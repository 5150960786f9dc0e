#include "ecofuse/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ecofuse/errors.hpp"
#include "ecofuse/rng.hpp"
#include "ecofuse/version.hpp"

namespace ecofuse::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MalformedFile("cannot open " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeFailure("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw RuntimeFailure("failed writing " + path.string());
}

std::string sanitize(const std::string& name) {
    std::string out;
    for (const char ch : name) {
        const bool keep = std::isalnum(static_cast<unsigned char>(ch)) != 0 || ch == '-' ||
                          ch == '_' || ch == '+' || ch == '.';
        out += keep ? ch : '_';
    }
    return out;
}

fs::path resolve(const fs::path& base_dir, const fs::path& p) {
    if (p.empty() || p.is_absolute() || base_dir.empty()) return p;
    return base_dir / p;
}

std::string join_ids(const std::vector<std::string>& ids) {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i > 0) out += '+';
        out += ids[i];
    }
    return out;
}

std::string fmt(const char* format, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), format, v);
    return buf;
}

void require_keys(const json& j, const std::set<std::string>& allowed,
                  const std::string& where) {
    for (const auto& item : j.items()) {
        if (allowed.count(item.key()) == 0)
            throw ValidationError("unknown config key '" + item.key() + "' in " + where);
    }
}

json config_to_json(const PipelineConfig& c) {
    json models = json::array();
    for (const auto& p : c.model_prob_paths) models.push_back(p.string());
    json sizes = json::array();
    for (const auto s : c.combination_sizes) sizes.push_back(s);
    json kinds = json::array();
    for (const auto k : c.meta_kinds) kinds.push_back(stacking::to_string(k));
    const auto& h = c.meta_hyper;
    return json{
        {"models", models},
        {"labels", c.label_path.string()},
        {"class_list", c.class_list_path.string()},
        {"split_fraction", c.split_fraction},
        {"split_path", c.split_path.string()},
        {"seed", c.seed},
        {"strategies", c.strategies},
        {"meta_kinds", kinds},
        {"combination_sizes", sizes},
        {"optimizer",
         {{"grid_step", c.optimizer.grid_step},
          {"restarts", c.optimizer.restarts},
          {"max_iterations", c.optimizer.max_iterations}}},
        {"meta_hyper",
         {{"logit_l2", h.logit_l2},
          {"logit_max_iter", h.logit_max_iter},
          {"logit_tol", h.logit_tol},
          {"svm_c", h.svm_c},
          {"svm_max_iter", h.svm_max_iter},
          {"svm_lr0", h.svm_lr0},
          {"mlp_hidden", h.mlp_hidden},
          {"mlp_epochs", h.mlp_epochs},
          {"mlp_lr", h.mlp_lr},
          {"mlp_init_span", h.mlp_init_span},
          {"forest_trees", h.forest_trees},
          {"forest_max_depth", h.forest_max_depth},
          {"forest_mtry", h.forest_mtry},
          {"forest_bootstrap", h.forest_bootstrap},
          {"oof_folds", h.oof_folds}}},
        {"optimize_on_test", c.optimize_on_test},
        {"histogram_bins", c.histogram_bins},
        {"energy",
         {{"source", energy::to_string(c.energy.source.kind)},
          {"cpu_w", c.energy.source.cpu_w},
          {"gpu_w", c.energy.source.gpu_w},
          {"ram_w", c.energy.source.ram_w},
          {"trace", c.energy.source.trace_path.string()},
          {"period_s", c.energy.sampling_period_s},
          {"grid_intensity", c.energy.grid_intensity},
          {"duration_s", c.energy.duration_s}}}};
}

data::AlignedBundle subset_models(const data::AlignedBundle& bundle,
                                  const std::vector<std::size_t>& model_indices) {
    data::AlignedBundle out;
    for (const std::size_t m : model_indices) out.models.push_back(bundle.models[m]);
    out.labels = bundle.labels;
    return out;
}

std::vector<std::vector<std::size_t>> enumerate_combinations(std::size_t k,
                                                             std::size_t size) {
    std::vector<std::vector<std::size_t>> combos;
    std::vector<std::size_t> current(size);
    std::iota(current.begin(), current.end(), 0);
    while (true) {
        combos.push_back(current);
        std::size_t i = size;
        while (i > 0 && current[i - 1] == k - size + i - 1) --i;
        if (i == 0) break;
        ++current[i - 1];
        for (std::size_t j = i; j < size; ++j) current[j] = current[j - 1] + 1;
    }
    return combos;
}

json histogram_to_json(const metrics::ConfidenceHistogram& hist) {
    return json{{"bin_count", hist.bin_count},
                {"bin_edges", hist.bin_edges},
                {"counts", hist.counts}};
}

struct RunWriter {
    const PipelineConfig& config;
    RunArtifacts& art;

    void add(const std::string& rel_path, const std::string& text) {
        write_file(art.run_dir / rel_path, text);
        art.files.push_back(rel_path);
    }

    void write_result(const StrategyResult& result, const data::LabelVector& pred,
                      const std::vector<std::string>& class_names, json extras) {
        const std::string stem =
            sanitize(result.combination) + "_" + sanitize(result.strategy);
        json doc{{"format", "ecofuse-metrics"},
                 {"version", 1},
                 {"combination", result.combination},
                 {"strategy", result.strategy},
                 {"model_ids", result.model_ids},
                 {"class_names", class_names},
                 {"n_test", result.n_test},
                 {"metrics", json::parse(metrics::metrics_to_json(result.metrics))},
                 {"histogram", histogram_to_json(result.histogram)}};
        for (auto& item : extras.items()) doc[item.key()] = item.value();
        add("metrics_" + stem + ".json", doc.dump(2) + "\n");

        std::string csv = "sample_id,label\n";
        for (std::size_t i = 0; i < pred.n(); ++i) {
            csv += pred.sample_ids[i];
            csv += ',';
            csv += class_names[static_cast<std::size_t>(pred.labels[i])];
            csv += '\n';
        }
        add("predictions_" + stem + ".csv", csv);
    }
};

}  // namespace

std::string file_checksum(const fs::path& path) {
    const std::string bytes = read_file(path);
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(rng::fnv1a64(bytes)));
    return buf;
}

PipelineConfig config_from_json_text(const std::string& text, const fs::path& base_dir) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw MalformedFile(std::string("invalid config JSON: ") + e.what());
    }
    try {
        require_keys(j, {"models", "labels", "class_list", "split", "seed", "strategies",
                         "meta_kinds", "combination_sizes", "optimizer", "meta_hyper",
                         "optimize_on_test", "oof_folds", "histogram_bins", "energy",
                         "output_dir"},
                     "top level");
        PipelineConfig c;
        if (j.contains("models"))
            for (const auto& m : j.at("models"))
                c.model_prob_paths.push_back(resolve(base_dir, m.get<std::string>()));
        if (j.contains("labels"))
            c.label_path = resolve(base_dir, j.at("labels").get<std::string>());
        if (j.contains("class_list"))
            c.class_list_path = resolve(base_dir, j.at("class_list").get<std::string>());
        if (j.contains("split")) {
            const json& s = j.at("split");
            require_keys(s, {"fraction", "path"}, "split");
            c.split_fraction = s.value("fraction", c.split_fraction);
            if (s.contains("path"))
                c.split_path = resolve(base_dir, s.at("path").get<std::string>());
        }
        c.seed = j.value("seed", c.seed);
        if (j.contains("strategies"))
            c.strategies = j.at("strategies").get<std::vector<std::string>>();
        if (j.contains("meta_kinds")) {
            c.meta_kinds.clear();
            for (const auto& k : j.at("meta_kinds"))
                c.meta_kinds.push_back(stacking::meta_kind_from_string(k.get<std::string>()));
        }
        if (j.contains("combination_sizes"))
            c.combination_sizes =
                j.at("combination_sizes").get<std::vector<std::size_t>>();
        if (j.contains("optimizer")) {
            const json& o = j.at("optimizer");
            require_keys(o, {"grid_step", "restarts", "max_iterations"}, "optimizer");
            c.optimizer.grid_step = o.value("grid_step", c.optimizer.grid_step);
            c.optimizer.restarts = o.value("restarts", c.optimizer.restarts);
            c.optimizer.max_iterations =
                o.value("max_iterations", c.optimizer.max_iterations);
        }
        if (j.contains("meta_hyper")) {
            const json& h = j.at("meta_hyper");
            require_keys(h, {"logit_l2", "logit_max_iter", "logit_tol", "svm_c",
                             "svm_max_iter", "svm_lr0", "mlp_hidden", "mlp_epochs",
                             "mlp_lr", "mlp_init_span", "forest_trees", "forest_max_depth",
                             "forest_mtry", "forest_bootstrap", "oof_folds"},
                         "meta_hyper");
            auto& m = c.meta_hyper;
            m.logit_l2 = h.value("logit_l2", m.logit_l2);
            m.logit_max_iter = h.value("logit_max_iter", m.logit_max_iter);
            m.logit_tol = h.value("logit_tol", m.logit_tol);
            m.svm_c = h.value("svm_c", m.svm_c);
            m.svm_max_iter = h.value("svm_max_iter", m.svm_max_iter);
            m.svm_lr0 = h.value("svm_lr0", m.svm_lr0);
            m.mlp_hidden = h.value("mlp_hidden", m.mlp_hidden);
            m.mlp_epochs = h.value("mlp_epochs", m.mlp_epochs);
            m.mlp_lr = h.value("mlp_lr", m.mlp_lr);
            m.mlp_init_span = h.value("mlp_init_span", m.mlp_init_span);
            m.forest_trees = h.value("forest_trees", m.forest_trees);
            m.forest_max_depth = h.value("forest_max_depth", m.forest_max_depth);
            m.forest_mtry = h.value("forest_mtry", m.forest_mtry);
            m.forest_bootstrap = h.value("forest_bootstrap", m.forest_bootstrap);
            m.oof_folds = h.value("oof_folds", m.oof_folds);
        }
        c.meta_hyper.oof_folds = j.value("oof_folds", c.meta_hyper.oof_folds);
        if (c.meta_hyper.oof_folds == 1 || c.meta_hyper.oof_folds < 0)
            throw ValidationError("oof_folds must be 0 (no cross-fitting) or >= 2");
        c.optimize_on_test = j.value("optimize_on_test", c.optimize_on_test);
        c.histogram_bins = j.value("histogram_bins", c.histogram_bins);
        if (j.contains("energy")) {
            const json& e = j.at("energy");
            require_keys(e, {"source", "cpu_w", "gpu_w", "ram_w", "trace", "period_s",
                             "grid_intensity", "duration_s"},
                         "energy");
            if (e.contains("source"))
                c.energy.source.kind =
                    energy::source_kind_from_string(e.at("source").get<std::string>());
            c.energy.source.cpu_w = e.value("cpu_w", c.energy.source.cpu_w);
            c.energy.source.gpu_w = e.value("gpu_w", c.energy.source.gpu_w);
            c.energy.source.ram_w = e.value("ram_w", c.energy.source.ram_w);
            if (e.contains("trace"))
                c.energy.source.trace_path =
                    resolve(base_dir, e.at("trace").get<std::string>());
            c.energy.sampling_period_s = e.value("period_s", c.energy.sampling_period_s);
            c.energy.grid_intensity = e.value("grid_intensity", c.energy.grid_intensity);
            c.energy.duration_s = e.value("duration_s", c.energy.duration_s);
        }
        if (j.contains("output_dir"))
            c.output_dir = resolve(base_dir, j.at("output_dir").get<std::string>());
        return c;
    } catch (const json::exception& e) {
        throw MalformedFile(std::string("invalid config value: ") + e.what());
    }
}

PipelineConfig load_config(const fs::path& path) {
    return config_from_json_text(read_file(path), path.parent_path());
}

LoadedData load_and_split(const PipelineConfig& config) {
    if (config.model_prob_paths.empty())
        throw ValidationError("config requires at least one model probability file");
    std::vector<data::ProbabilityMatrix> models;
    for (const auto& path : config.model_prob_paths)
        models.push_back(data::load_probability_matrix(path));
    if (!config.class_list_path.empty()) {
        const auto listed = data::load_class_list(config.class_list_path);
        for (const auto& m : models)
            if (m.class_names != listed)
                throw ClassSetMismatch("model " + m.model_id +
                                       " disagrees with the class list file");
    }
    data::LabelVector labels =
        data::load_labels(config.label_path, models.front().class_names);

    LoadedData out;
    out.bundle = data::align(std::move(models), std::move(labels));
    if (!config.split_path.empty()) {
        out.split = data::load_split(config.split_path);
        for (const std::size_t i : out.split.train)
            if (i >= out.bundle.n()) throw ValidationError("split train index out of range");
        for (const std::size_t i : out.split.test)
            if (i >= out.bundle.n()) throw ValidationError("split test index out of range");
    } else {
        out.split = data::stratified_split(out.bundle.labels, config.split_fraction,
                                           rng::derive_seed(config.seed, "split"));
    }
    return out;
}

RunArtifacts run_pipeline(const PipelineConfig& config) {
    if (config.model_prob_paths.empty())
        throw ValidationError("config requires at least one model probability file");
    if (config.strategies.empty()) throw ValidationError("config requires >= 1 strategy");
    for (const std::string& s : config.strategies) {
        if (s != "simple" && s != "weighted" && s != "stacking")
            throw ValidationError("unknown strategy '" + s + "'");
        if (s == "stacking" && config.meta_kinds.empty())
            throw ValidationError("stacking strategy requires >= 1 meta-learner kind");
    }
    if (config.histogram_bins < 1)
        throw ValidationError("histogram_bins must be at least 1");
    if (config.output_dir.empty()) throw ValidationError("output directory not set");
    std::error_code ec;
    if (fs::exists(config.output_dir) &&
        (!fs::is_directory(config.output_dir) || !fs::is_empty(config.output_dir, ec)))
        throw ValidationError("output directory " + config.output_dir.string() +
                              " must be empty or absent");
    fs::create_directories(config.output_dir);

    RunArtifacts art;
    art.run_dir = config.output_dir;
    try {
        // The run measures itself end to end; when platform counters are
        // missing the contract is to fall back to a constant model.
        energy::PowerSource source = config.energy.source;
        std::optional<energy::EnergySession> session;
        try {
            session.emplace(energy::record_session(source, config.energy.sampling_period_s));
        } catch (const CountersUnavailable&) {
            art.notes.push_back(
                "platform energy counters unavailable; self-measurement fell back to "
                "constant_model 0 W");
            source = energy::PowerSource::constant(0.0, 0.0, 0.0);
            session.emplace(energy::record_session(source, config.energy.sampling_period_s));
        }

        LoadedData loaded = load_and_split(config);
        const data::AlignedBundle& bundle = loaded.bundle;
        const data::SplitIndices& split = loaded.split;

        RunWriter writer{config, art};
        data::save_split(art.run_dir / "split.json", split);
        art.files.push_back("split.json");

        const data::AlignedBundle train = data::take(bundle, split.train);
        const data::AlignedBundle test = data::take(bundle, split.test);
        const std::vector<std::string>& class_names = bundle.class_names();

        std::vector<std::vector<std::size_t>> combos;
        if (config.combination_sizes.empty()) {
            std::vector<std::size_t> all(bundle.k());
            std::iota(all.begin(), all.end(), 0);
            combos.push_back(std::move(all));
        } else {
            for (const std::size_t size : config.combination_sizes) {
                if (size < 1 || size > bundle.k())
                    throw ValidationError("combination size " + std::to_string(size) +
                                          " is outside 1.." + std::to_string(bundle.k()));
                for (auto& combo : enumerate_combinations(bundle.k(), size))
                    combos.push_back(std::move(combo));
            }
        }

        for (const auto& combo : combos) {
            const data::AlignedBundle train_sub = subset_models(train, combo);
            const data::AlignedBundle test_sub = subset_models(test, combo);
            std::vector<std::string> ids;
            for (const std::size_t m : combo) ids.push_back(bundle.models[m].model_id);
            const std::string combo_name = join_ids(ids);

            for (const std::string& strategy : config.strategies) {
                if (strategy == "simple") {
                    const auto avg = fusion::average_probabilities(test_sub);
                    const auto pred = fusion::predict_argmax(avg);
                    StrategyResult result{combo_name, "simple", ids,
                                          metrics::classification_metrics(
                                              metrics::confusion_matrix(pred, test_sub.labels,
                                                                        class_names)),
                                          metrics::confidence_histogram(
                                              avg, static_cast<std::size_t>(
                                                       config.histogram_bins)),
                                          test_sub.n()};
                    writer.write_result(result, pred, class_names, json::object());
                    art.results.push_back(std::move(result));
                } else if (strategy == "weighted") {
                    fusion::OptimizerConfig ocfg = config.optimizer;
                    ocfg.seed = rng::derive_seed(config.seed, "optimizer:" + combo_name);
                    ocfg.objective_split = config.optimize_on_test
                                               ? fusion::ObjectiveSplit::test_paper_faithful
                                               : fusion::ObjectiveSplit::validation;
                    const data::AlignedBundle& objective =
                        config.optimize_on_test ? test_sub : train_sub;
                    const auto optimum = fusion::optimize_weights(objective, ocfg);
                    const auto avg = fusion::average_probabilities(test_sub, optimum.weights);
                    const auto pred = fusion::predict_argmax(avg);
                    StrategyResult result{combo_name, "weighted", ids,
                                          metrics::classification_metrics(
                                              metrics::confusion_matrix(pred, test_sub.labels,
                                                                        class_names)),
                                          metrics::confidence_histogram(
                                              avg, static_cast<std::size_t>(
                                                       config.histogram_bins)),
                                          test_sub.n()};
                    writer.add("weights_" + sanitize(combo_name) + ".json",
                               fusion::weights_to_json(optimum.weights, ids,
                                                       optimum.achieved_accuracy,
                                                       ocfg.objective_split) +
                                   "\n");
                    writer.write_result(result, pred, class_names,
                                        json{{"weights", optimum.weights.weights},
                                             {"objective_accuracy",
                                              optimum.achieved_accuracy}});
                    art.weights.emplace_back(combo_name, optimum);
                    art.results.push_back(std::move(result));
                } else {
                    for (const stacking::MetaKind kind : config.meta_kinds) {
                        const std::string kind_name = stacking::to_string(kind);
                        const auto outcome = stacking::run_stack(
                            train_sub, test_sub, kind, config.meta_hyper,
                            rng::derive_seed(config.seed,
                                             "stack:" + combo_name + ":" + kind_name));
                        StrategyResult result{
                            combo_name, "stacking:" + kind_name, ids, outcome.metrics,
                            metrics::confidence_histogram(
                                outcome.test_prediction.probabilities,
                                static_cast<std::size_t>(config.histogram_bins)),
                            test_sub.n()};
                        const std::string model_stem =
                            "meta_model_" + sanitize(combo_name) + "_" + kind_name;
                        if (outcome.models.size() == 1) {
                            writer.add(model_stem + ".json",
                                       stacking::meta_model_to_json(outcome.models.front()) +
                                           "\n");
                        } else {
                            for (std::size_t f = 0; f < outcome.models.size(); ++f)
                                writer.add(model_stem + "_fold" + std::to_string(f) + ".json",
                                           stacking::meta_model_to_json(outcome.models[f]) +
                                               "\n");
                        }
                        writer.write_result(
                            result, outcome.test_prediction.labels, class_names,
                            json{{"meta_kind", kind_name},
                                 {"oof_folds", config.meta_hyper.oof_folds}});
                        for (const auto& m : outcome.models)
                            art.meta_models.emplace_back(combo_name + "|" + kind_name, m);
                        art.results.push_back(std::move(result));
                    }
                }
            }
        }
        if (art.results.empty())
            art.notes.push_back("no strategy results were produced for this config");

        const auto measured = session->stop();
        const auto breakdown =
            energy::integrate_energy(measured.samples, measured.duration_s);
        art.run_energy =
            energy::compute_emissions(breakdown, config.energy.grid_intensity);
        json energy_doc = json::parse(energy::emissions_to_json(art.run_energy));
        energy_doc["source"] = energy::to_string(source.kind);
        writer.add("energy_report.json", energy_doc.dump(2) + "\n");

        // The self-measured energy report is inherently non-reproducible, so
        // it is flagged volatile and carries no checksum; everything else is
        // checksummed and byte-stable for a fixed config.
        char hash_buf[24];
        std::snprintf(hash_buf, sizeof(hash_buf), "%016llx",
                      static_cast<unsigned long long>(
                          rng::fnv1a64(config_to_json(config).dump())));
        json file_entries = json::array();
        std::vector<fs::path> sorted_files(art.files.begin(), art.files.end());
        std::sort(sorted_files.begin(), sorted_files.end());
        for (const auto& rel : sorted_files) {
            const bool is_volatile = rel == "energy_report.json";
            json entry{{"path", rel.string()}, {"volatile", is_volatile}};
            entry["checksum"] =
                is_volatile ? json(nullptr) : json(file_checksum(art.run_dir / rel));
            file_entries.push_back(std::move(entry));
        }
        const json manifest{{"format", "ecofuse-run-manifest"},
                            {"version", 1},
                            {"tool_version", kVersion},
                            {"seed", config.seed},
                            {"config_hash", hash_buf},
                            {"strategies", config.strategies},
                            {"notes", art.notes},
                            {"files", file_entries}};
        writer.add("manifest.json", manifest.dump(2) + "\n");
        return art;
    } catch (...) {
        fs::remove_all(config.output_dir);
        throw;
    }
}

std::vector<fs::path> emit_report(const RunArtifacts& artifacts, const std::string& format) {
    std::vector<fs::path> written;
    const fs::path& dir = artifacts.run_dir;
    if (format == "json") {
        json results = json::array();
        for (const auto& r : artifacts.results) {
            results.push_back(json{{"combination", r.combination},
                                   {"strategy", r.strategy},
                                   {"accuracy", r.metrics.accuracy},
                                   {"macro_f1", r.metrics.macro_f1},
                                   {"weighted_f1", r.metrics.weighted_f1},
                                   {"n_test", r.n_test}});
        }
        const json doc{{"format", "ecofuse-report"},
                       {"version", 1},
                       {"results", results},
                       {"energy", json::parse(energy::emissions_to_json(
                                      artifacts.run_energy))},
                       {"notes", artifacts.notes}};
        write_file(dir / "report_summary.json", doc.dump(2) + "\n");
        written.push_back(dir / "report_summary.json");
    } else if (format == "csv") {
        std::string csv =
            "combination,strategy,accuracy,macro_precision,macro_recall,macro_f1,"
            "weighted_precision,weighted_recall,weighted_f1\n";
        for (const auto& r : artifacts.results) {
            csv += r.combination + "," + r.strategy;
            for (const double v :
                 {r.metrics.accuracy, r.metrics.macro_precision, r.metrics.macro_recall,
                  r.metrics.macro_f1, r.metrics.weighted_precision,
                  r.metrics.weighted_recall, r.metrics.weighted_f1})
                csv += "," + fmt("%.10g", v);
            csv += '\n';
        }
        write_file(dir / "metrics_summary.csv", csv);
        written.push_back(dir / "metrics_summary.csv");
        for (const auto& r : artifacts.results) {
            std::string hist = "bin_start,bin_end,count\n";
            for (std::size_t b = 0; b < r.histogram.bin_count; ++b)
                hist += fmt("%.10g", r.histogram.bin_edges[b]) + "," +
                        fmt("%.10g", r.histogram.bin_edges[b + 1]) + "," +
                        std::to_string(r.histogram.counts[b]) + "\n";
            const fs::path p = dir / ("histogram_" + sanitize(r.combination) + "_" +
                                      sanitize(r.strategy) + ".csv");
            write_file(p, hist);
            written.push_back(p);
        }
    } else if (format == "text-table") {
        std::vector<std::pair<std::string, metrics::MetricsReport>> rows;
        for (const auto& r : artifacts.results)
            rows.emplace_back(r.combination + " / " + r.strategy, r.metrics);
        std::string text = metrics::metrics_table(rows);
        text += "\n";
        text += energy::emissions_table({{"this run", artifacts.run_energy}});
        write_file(dir / "report_tables.txt", text);
        written.push_back(dir / "report_tables.txt");
    } else if (format == "svg-histogram") {
        for (const auto& r : artifacts.results) {
            const auto& h = r.histogram;
            std::int64_t peak = 1;
            for (const std::int64_t c : h.counts) peak = std::max(peak, c);
            const double plot_w = 560.0, plot_h = 300.0, x0 = 60.0, y0 = 340.0;
            std::ostringstream svg;
            svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" "
                   "height=\"400\" viewBox=\"0 0 640 400\">\n";
            svg << "  <text x=\"320\" y=\"20\" text-anchor=\"middle\" "
                   "font-size=\"14\">"
                << r.combination << " / " << r.strategy << "</text>\n";
            svg << "  <line x1=\"60\" y1=\"40\" x2=\"60\" y2=\"340\" "
                   "stroke=\"black\"/>\n";
            svg << "  <line x1=\"60\" y1=\"340\" x2=\"620\" y2=\"340\" "
                   "stroke=\"black\"/>\n";
            for (std::size_t b = 0; b < h.bin_count; ++b) {
                const double w = plot_w / static_cast<double>(h.bin_count);
                const double bh = plot_h * static_cast<double>(h.counts[b]) /
                                  static_cast<double>(peak);
                svg << "  <rect x=\"" << x0 + static_cast<double>(b) * w << "\" y=\""
                    << y0 - bh << "\" width=\"" << w * 0.9 << "\" height=\"" << bh
                    << "\" fill=\"steelblue\"/>\n";
            }
            svg << "  <text x=\"340\" y=\"380\" text-anchor=\"middle\" "
                   "font-size=\"12\">confidence</text>\n";
            svg << "  <text x=\"20\" y=\"190\" text-anchor=\"middle\" font-size=\"12\" "
                   "transform=\"rotate(-90 20 190)\">count</text>\n";
            svg << "  <text x=\"60\" y=\"355\" font-size=\"10\">0</text>\n";
            svg << "  <text x=\"620\" y=\"355\" text-anchor=\"end\" "
                   "font-size=\"10\">1</text>\n";
            svg << "  <text x=\"55\" y=\"45\" text-anchor=\"end\" font-size=\"10\">"
                << peak << "</text>\n";
            svg << "</svg>\n";
            const fs::path p = dir / ("histogram_" + sanitize(r.combination) + "_" +
                                      sanitize(r.strategy) + ".svg");
            write_file(p, svg.str());
            written.push_back(p);
        }
    } else {
        throw UnsupportedFormat("unsupported report format '" + format + "'");
    }
    return written;
}

Manifest load_manifest(const fs::path& run_dir) {
    const fs::path path = run_dir / "manifest.json";
    if (!fs::exists(path))
        throw ManifestMissing("no manifest.json in " + run_dir.string());
    try {
        const json doc = json::parse(read_file(path));
        Manifest m;
        m.tool_version = doc.value("tool_version", "");
        m.seed = doc.value("seed", std::uint64_t{0});
        m.config_hash = doc.value("config_hash", "");
        if (doc.contains("notes"))
            m.notes = doc.at("notes").get<std::vector<std::string>>();
        for (const json& f : doc.at("files")) {
            ManifestEntry entry;
            entry.path = f.at("path").get<std::string>();
            entry.is_volatile = f.value("volatile", false);
            if (f.contains("checksum") && !f.at("checksum").is_null())
                entry.checksum = f.at("checksum").get<std::string>();
            m.files.push_back(std::move(entry));
        }
        return m;
    } catch (const json::exception& e) {
        throw MalformedFile("invalid manifest in " + run_dir.string() + ": " + e.what());
    }
}

fs::path compare_command(const std::vector<fs::path>& run_dirs, const fs::path& out_file,
                         const std::string& format) {
    if (run_dirs.size() < 2)
        throw ValidationError("compare requires at least 2 run directories");
    if (format != "text" && format != "json")
        throw UnsupportedFormat("unsupported comparison format '" + format + "'");

    struct RunData {
        std::string label;
        // (combination, strategy) -> accuracy
        std::map<std::pair<std::string, std::string>, double> accuracy;
        energy::EmissionsReport energy;
        bool has_energy = false;
    };
    std::vector<RunData> runs;
    for (const fs::path& dir : run_dirs) {
        const Manifest manifest = load_manifest(dir);
        RunData run;
        run.label = dir.filename().empty() ? dir.string() : dir.filename().string();
        for (const ManifestEntry& entry : manifest.files) {
            const fs::path p = dir / entry.path;
            if (!fs::exists(p))
                throw ValidationError("manifest entry missing on disk: " + p.string());
            if (!entry.is_volatile && file_checksum(p) != entry.checksum)
                throw ValidationError("manifest checksum mismatch for " + p.string());
            if (entry.path.rfind("metrics_", 0) == 0 &&
                entry.path.size() > 5 &&
                entry.path.compare(entry.path.size() - 5, 5, ".json") == 0) {
                const json doc = json::parse(read_file(p));
                run.accuracy[{doc.at("combination").get<std::string>(),
                              doc.at("strategy").get<std::string>()}] =
                    doc.at("metrics").at("accuracy").get<double>();
            } else if (entry.path == "energy_report.json") {
                const json doc = json::parse(read_file(p));
                const json& b = doc.at("breakdown");
                run.energy.breakdown.duration_s = b.at("duration_s").get<double>();
                run.energy.breakdown.cpu_kwh = b.at("cpu_kwh").get<double>();
                run.energy.breakdown.gpu_kwh = b.at("gpu_kwh").get<double>();
                run.energy.breakdown.ram_kwh = b.at("ram_kwh").get<double>();
                run.energy.breakdown.total_kwh = b.at("total_kwh").get<double>();
                run.energy.grid_intensity = doc.at("grid_intensity").get<double>();
                run.energy.emissions_kg = doc.at("emissions_kg").get<double>();
                run.energy.rate_kg_per_s = doc.at("rate_kg_per_s").get<double>();
                run.has_energy = true;
            }
        }
        runs.push_back(std::move(run));
    }

    std::set<std::pair<std::string, std::string>> rows;
    std::set<std::string> strategies;
    for (const RunData& run : runs)
        for (const auto& [key, acc] : run.accuracy) {
            rows.insert(key);
            strategies.insert(key.second);
        }

    // Mean accuracy per strategy, per run and pooled across runs.
    std::map<std::string, std::vector<double>> pooled;
    std::vector<std::map<std::string, double>> per_run_mean(runs.size());
    for (std::size_t r = 0; r < runs.size(); ++r) {
        std::map<std::string, std::vector<double>> by_strategy;
        for (const auto& [key, acc] : runs[r].accuracy) {
            by_strategy[key.second].push_back(acc);
            pooled[key.second].push_back(acc);
        }
        for (const auto& [strategy, values] : by_strategy)
            per_run_mean[r][strategy] =
                std::accumulate(values.begin(), values.end(), 0.0) /
                static_cast<double>(values.size());
    }
    std::map<std::string, double> pooled_mean;
    for (const auto& [strategy, values] : pooled)
        pooled_mean[strategy] = std::accumulate(values.begin(), values.end(), 0.0) /
                                static_cast<double>(values.size());

    std::vector<energy::EmissionsReport> group_rest;
    std::optional<energy::RatioReport> ratio;
    if (runs.front().has_energy) {
        for (std::size_t r = 1; r < runs.size(); ++r)
            if (runs[r].has_energy) group_rest.push_back(runs[r].energy);
        if (!group_rest.empty())
            ratio = energy::compare_sessions({runs.front().energy}, group_rest);
    }

    if (format == "json") {
        json acc_rows = json::array();
        for (const auto& [combo, strategy] : rows) {
            json cells = json::object();
            for (const RunData& run : runs) {
                const auto it = run.accuracy.find({combo, strategy});
                cells[run.label] = it == run.accuracy.end() ? json(nullptr) : json(it->second);
            }
            acc_rows.push_back(json{{"combination", combo},
                                    {"strategy", strategy},
                                    {"accuracy", cells}});
        }
        json deltas = json::array();
        for (const std::string& strategy : strategies) {
            for (std::size_t r = 1; r < runs.size(); ++r) {
                const auto base = per_run_mean[0].find(strategy);
                const auto cur = per_run_mean[r].find(strategy);
                if (base == per_run_mean[0].end() || cur == per_run_mean[r].end()) continue;
                deltas.push_back(json{{"strategy", strategy},
                                      {"run", runs[r].label},
                                      {"delta_vs_first", cur->second - base->second}});
            }
        }
        json gaps = json::array();
        for (auto it_a = pooled_mean.begin(); it_a != pooled_mean.end(); ++it_a)
            for (auto it_b = std::next(it_a); it_b != pooled_mean.end(); ++it_b)
                gaps.push_back(json{{"minuend", it_b->first},
                                    {"subtrahend", it_a->first},
                                    {"gap", it_b->second - it_a->second}});
        json energy_rows = json::array();
        for (const RunData& run : runs)
            if (run.has_energy)
                energy_rows.push_back(
                    json{{"run", run.label},
                         {"duration_s", run.energy.breakdown.duration_s},
                         {"total_kwh", run.energy.breakdown.total_kwh},
                         {"emissions_kg", run.energy.emissions_kg}});
        json doc{{"format", "ecofuse-comparison"},
                 {"version", 1},
                 {"accuracy", acc_rows},
                 {"deltas_vs_first_run", deltas},
                 {"strategy_gaps", gaps},
                 {"energy", energy_rows}};
        if (ratio)
            doc["energy_ratio_first_vs_rest"] = json{{"energy", ratio->energy_ratio},
                                                     {"duration", ratio->duration_ratio},
                                                     {"emissions", ratio->emissions_ratio}};
        write_file(out_file, doc.dump(2) + "\n");
        return out_file;
    }

    std::ostringstream out;
    out << "Accuracy per strategy\n";
    for (const auto& [combo, strategy] : rows) {
        out << "  " << combo << " / " << strategy << ":";
        for (const RunData& run : runs) {
            const auto it = run.accuracy.find({combo, strategy});
            out << "  " << run.label << "="
                << (it == run.accuracy.end() ? std::string("-") : fmt("%.4f", it->second));
        }
        out << '\n';
    }
    out << "\nDeltas vs first run (mean accuracy per strategy)\n";
    bool any_delta = false;
    for (const std::string& strategy : strategies) {
        for (std::size_t r = 1; r < runs.size(); ++r) {
            const auto base = per_run_mean[0].find(strategy);
            const auto cur = per_run_mean[r].find(strategy);
            if (base == per_run_mean[0].end() || cur == per_run_mean[r].end()) continue;
            out << "  " << strategy << " [" << runs[r].label << "] = "
                << fmt("%+.4f", cur->second - base->second) << '\n';
            any_delta = true;
        }
    }
    if (!any_delta) out << "  (no strategy present in multiple runs)\n";
    out << "\nStrategy gaps (pooled mean accuracy)\n";
    for (auto it_a = pooled_mean.begin(); it_a != pooled_mean.end(); ++it_a)
        for (auto it_b = std::next(it_a); it_b != pooled_mean.end(); ++it_b)
            out << "  " << it_b->first << " - " << it_a->first << " = "
                << fmt("%+.2f", it_b->second - it_a->second) << '\n';
    out << "\nEnergy per run\n";
    std::vector<std::pair<std::string, energy::EmissionsReport>> energy_rows;
    for (const RunData& run : runs)
        if (run.has_energy) energy_rows.emplace_back(run.label, run.energy);
    out << energy::emissions_table(energy_rows);
    if (ratio) {
        out << "\nEnergy ratio (first run / remaining runs): "
            << fmt("%.3f", ratio->energy_ratio) << '\n';
    }
    write_file(out_file, out.str());
    return out_file;
}

}  // namespace ecofuse::pipeline
