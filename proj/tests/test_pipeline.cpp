#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ecofuse/energy.hpp"
#include "ecofuse/errors.hpp"
#include "ecofuse/pipeline.hpp"
#include "ecofuse/rng.hpp"
#include "synth.hpp"

using namespace ecofuse;
using namespace ecofuse::pipeline;
namespace fs = std::filesystem;

namespace {

// Three models of different quality over a fixed two-class label set; all
// values are printed with six decimals so reruns produce identical files.
void write_dataset(const synth::TempDir& dir) {
    std::mt19937_64 gen(2024);
    const std::size_t n = 48;
    std::vector<int> labels;
    for (std::size_t i = 0; i < n; ++i) labels.push_back(static_cast<int>(i % 2));

    std::string label_csv = "sample_id,label\n";
    for (std::size_t i = 0; i < n; ++i)
        label_csv += "s" + std::to_string(i) + "," +
                     (labels[i] == 0 ? "healthy\n" : "diseased\n");
    dir.file("labels.csv", label_csv);
    dir.file("classes.txt", "healthy\ndiseased\n");

    const double quality[3] = {0.9, 0.75, 0.6};
    const char* names[3] = {"alpha", "beta", "gamma"};
    for (int m = 0; m < 3; ++m) {
        std::string csv = "sample_id,healthy,diseased\n";
        for (std::size_t i = 0; i < n; ++i) {
            const bool correct = rng::uniform01(gen) < quality[m];
            const int predicted = correct ? labels[i] : 1 - labels[i];
            const double conf = 0.6 + 0.39 * rng::uniform01(gen);
            const double p_healthy = predicted == 0 ? conf : 1.0 - conf;
            char buf[64];
            std::snprintf(buf, sizeof(buf), "s%zu,%.6f,%.6f\n", i, p_healthy,
                          1.0 - p_healthy);
            csv += buf;
        }
        dir.file(std::string(names[m]) + ".csv", csv);
    }
}

std::string config_text(const std::string& out_dir,
                        const std::string& extra_fields = "") {
    std::string text = R"({
      "models": ["alpha.csv", "beta.csv", "gamma.csv"],
      "labels": "labels.csv",
      "class_list": "classes.txt",
      "seed": 7,
      "split": {"fraction": 0.25},
      "strategies": ["simple", "weighted", "stacking"],
      "meta_kinds": ["logistic"],
      "energy": {"source": "constant_model", "cpu_w": 5.0, "period_s": 0.01},
      "output_dir": ")" + out_dir + "\"";
    if (!extra_fields.empty()) text += ",\n" + extra_fields;
    text += "\n}";
    return text;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

// Minimal hand-built run directory: one metrics file plus a manifest.
void write_fake_run(const fs::path& dir, const std::string& strategy, double accuracy) {
    fs::create_directories(dir);
    nlohmann::json metrics{{"format", "ecofuse-metrics"},
                           {"version", 1},
                           {"combination", "m"},
                           {"strategy", strategy},
                           {"metrics", {{"accuracy", accuracy}}}};
    const std::string metrics_name = "metrics_m_" + strategy + ".json";
    {
        std::ofstream out(dir / metrics_name, std::ios::binary);
        out << metrics.dump(2) << "\n";
    }
    nlohmann::json manifest{
        {"format", "ecofuse-run-manifest"},
        {"version", 1},
        {"tool_version", "0.0.0"},
        {"seed", 0},
        {"config_hash", "0"},
        {"files", nlohmann::json::array(
                      {{{"path", metrics_name},
                        {"volatile", false},
                        {"checksum", file_checksum(dir / metrics_name)}}})}};
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    out << manifest.dump(2) << "\n";
}

}  // namespace

TEST_CASE("config parsing resolves paths and rejects unknown keys") {
    synth::TempDir dir("config");
    const auto cfg = config_from_json_text(config_text("run1"), dir.path);
    CHECK(cfg.model_prob_paths.size() == 3);
    CHECK(cfg.model_prob_paths[0] == dir.path / "alpha.csv");
    CHECK(cfg.label_path == dir.path / "labels.csv");
    CHECK(cfg.seed == 7);
    CHECK(cfg.split_fraction == 0.25);
    CHECK(cfg.output_dir == dir.path / "run1");
    CHECK(cfg.energy.source.kind == energy::SourceKind::constant_model);
    CHECK(cfg.energy.source.cpu_w == 5.0);
    CHECK(cfg.energy.sampling_period_s == 0.01);

    CHECK_THROWS_AS(config_from_json_text("{\"modles\": []}", dir.path), ValidationError);
    CHECK_THROWS_AS(config_from_json_text("{nope", dir.path), MalformedFile);
    CHECK_THROWS_AS(config_from_json_text(config_text("r", "\"oof_folds\": 1"), dir.path),
                    ValidationError);
}

TEST_CASE("full pipeline run writes the complete file inventory") {
    synth::TempDir dir("run_inventory");
    write_dataset(dir);
    const auto cfg = config_from_json_text(config_text("run1"), dir.path);
    const auto art = run_pipeline(cfg);

    CHECK(art.results.size() == 3);
    std::set<std::string> strategies;
    for (const auto& r : art.results) {
        strategies.insert(r.strategy);
        CHECK(r.combination == "alpha+beta+gamma");
        CHECK(r.n_test == 12);  // 48 * 0.25
    }
    CHECK(strategies == std::set<std::string>{"simple", "weighted", "stacking:logistic"});

    const fs::path run = dir.path / "run1";
    for (const char* name :
         {"split.json", "metrics_alpha+beta+gamma_simple.json",
          "metrics_alpha+beta+gamma_weighted.json",
          "metrics_alpha+beta+gamma_stacking_logistic.json",
          "predictions_alpha+beta+gamma_simple.csv",
          "predictions_alpha+beta+gamma_weighted.csv",
          "predictions_alpha+beta+gamma_stacking_logistic.csv",
          "weights_alpha+beta+gamma.json", "meta_model_alpha+beta+gamma_logistic.json",
          "energy_report.json", "manifest.json"}) {
        CHECK_MESSAGE(fs::exists(run / name), name);
    }
    CHECK(art.files.back() == fs::path("manifest.json"));

    // every accuracy beats chance on this easy dataset
    for (const auto& r : art.results) CHECK(r.metrics.accuracy >= 0.5);

    // manifest checksums match the bytes on disk
    const auto manifest = load_manifest(run);
    for (const auto& entry : manifest.files) {
        if (entry.is_volatile) {
            CHECK(entry.checksum.empty());
            CHECK(entry.path == "energy_report.json");
        } else {
            CHECK(file_checksum(run / entry.path) == entry.checksum);
        }
    }
}

TEST_CASE("identical configs reproduce every checksummed byte") {
    synth::TempDir dir("run_determinism");
    write_dataset(dir);
    const auto art1 =
        run_pipeline(config_from_json_text(config_text("run1"), dir.path));
    const auto art2 =
        run_pipeline(config_from_json_text(config_text("run2"), dir.path));

    const auto manifest1 = load_manifest(dir.path / "run1");
    const auto manifest2 = load_manifest(dir.path / "run2");
    CHECK(manifest1.config_hash == manifest2.config_hash);
    CHECK(slurp(dir.path / "run1" / "manifest.json") ==
          slurp(dir.path / "run2" / "manifest.json"));
    REQUIRE(manifest1.files.size() == manifest2.files.size());
    for (const auto& entry : manifest1.files) {
        if (entry.is_volatile) continue;
        CHECK(slurp(dir.path / "run1" / entry.path) ==
              slurp(dir.path / "run2" / entry.path));
    }
    CHECK(art1.results.size() == art2.results.size());
    for (std::size_t i = 0; i < art1.results.size(); ++i)
        CHECK(art1.results[i].metrics.accuracy == art2.results[i].metrics.accuracy);
}

TEST_CASE("combination sizes enumerate subsets and set the meta width") {
    synth::TempDir dir("run_combos");
    write_dataset(dir);
    const auto cfg = config_from_json_text(
        config_text("run1", "\"combination_sizes\": [2, 3],\n"
                            "\"strategies\": [\"stacking\"]"),
        dir.path);
    const auto art = run_pipeline(cfg);
    // C(3,2) + C(3,3) combinations, one stacking strategy each
    CHECK(art.results.size() == 4);
    std::set<std::string> combos;
    for (const auto& r : art.results) combos.insert(r.combination);
    CHECK(combos == std::set<std::string>{"alpha+beta", "alpha+gamma", "beta+gamma",
                                          "alpha+beta+gamma"});

    const auto pair_doc = nlohmann::json::parse(
        slurp(dir.path / "run1" / "meta_model_alpha+beta_logistic.json"));
    CHECK(pair_doc.at("input_width").get<std::size_t>() == 4);
    const auto triple_doc = nlohmann::json::parse(
        slurp(dir.path / "run1" / "meta_model_alpha+beta+gamma_logistic.json"));
    CHECK(triple_doc.at("input_width").get<std::size_t>() == 6);
}

TEST_CASE("pipeline validation failures") {
    synth::TempDir dir("run_invalid");
    write_dataset(dir);
    SUBCASE("occupied output directory") {
        fs::create_directories(dir.path / "busy");
        dir.file("busy/leftover.txt", "x");
        const auto cfg = config_from_json_text(config_text("busy"), dir.path);
        CHECK_THROWS_AS(run_pipeline(cfg), ValidationError);
        CHECK(fs::exists(dir.path / "busy" / "leftover.txt"));
    }
    SUBCASE("unknown strategy name") {
        const auto cfg = config_from_json_text(
            config_text("run1", "\"strategies\": [\"boosting\"]"), dir.path);
        // replace the valid strategies list entirely
        auto bad = cfg;
        bad.strategies = {"boosting"};
        CHECK_THROWS_AS(run_pipeline(bad), ValidationError);
        CHECK_FALSE(fs::exists(dir.path / "run1"));
    }
    SUBCASE("missing label file cleans up the run directory") {
        auto cfg = config_from_json_text(config_text("run1"), dir.path);
        cfg.label_path = dir.path / "absent.csv";
        CHECK_THROWS_AS(run_pipeline(cfg), ValidationError);
        CHECK_FALSE(fs::exists(dir.path / "run1"));
    }
    SUBCASE("split index out of range") {
        auto cfg = config_from_json_text(config_text("run1"), dir.path);
        data::SplitIndices split;
        split.train = {0, 1, 2};
        split.test = {3, 999};
        data::save_split(dir.path / "bad_split.json", split);
        cfg.split_path = dir.path / "bad_split.json";
        CHECK_THROWS_AS(load_and_split(cfg), ValidationError);
    }
}

TEST_CASE("load_and_split honors an explicit split file") {
    synth::TempDir dir("explicit_split");
    write_dataset(dir);
    auto cfg = config_from_json_text(config_text("run1"), dir.path);
    data::SplitIndices split;
    for (std::size_t i = 8; i < 48; ++i) split.train.push_back(i);
    for (std::size_t i = 0; i < 8; ++i) split.test.push_back(i);
    data::save_split(dir.path / "split.json", split);
    cfg.split_path = dir.path / "split.json";
    const auto loaded = load_and_split(cfg);
    CHECK(loaded.split.test == split.test);
    CHECK(loaded.bundle.n() == 48);
    CHECK(loaded.bundle.k() == 3);
}

TEST_CASE("report emission covers all four formats") {
    synth::TempDir dir("reports");
    write_dataset(dir);
    const auto art = run_pipeline(config_from_json_text(config_text("run1"), dir.path));

    const auto json_files = emit_report(art, "json");
    REQUIRE(json_files.size() == 1);
    const auto summary = nlohmann::json::parse(slurp(json_files[0]));
    CHECK(summary.at("results").size() == 3);
    CHECK(summary.at("energy").contains("emissions_kg"));

    const auto csv_files = emit_report(art, "csv");
    REQUIRE(csv_files.size() == 1 + art.results.size());
    CHECK(csv_files[0].filename() == "metrics_summary.csv");
    const auto csv_text = slurp(csv_files[0]);
    CHECK(csv_text.find("combination,strategy,accuracy") == 0);
    // histogram rows: counts sum to the test-set size
    const auto hist_text = slurp(csv_files[1]);
    std::istringstream in(hist_text);
    std::string line;
    std::getline(in, line);
    CHECK(line == "bin_start,bin_end,count");
    long long total = 0;
    while (std::getline(in, line)) {
        const auto last_comma = line.rfind(',');
        total += std::stoll(line.substr(last_comma + 1));
    }
    CHECK(total == 12);

    const auto text_files = emit_report(art, "text-table");
    REQUIRE(text_files.size() == 1);
    const auto text = slurp(text_files[0]);
    CHECK(text.find("Accuracy") != std::string::npos);
    CHECK(text.find("Energy Consumed (kWh)") != std::string::npos);

    const auto svg_files = emit_report(art, "svg-histogram");
    REQUIRE(svg_files.size() == art.results.size());
    const auto svg = slurp(svg_files[0]);
    CHECK(svg.find("<svg") == 0);
    CHECK(svg.find("confidence") != std::string::npos);
    CHECK(svg.find("count") != std::string::npos);

    CHECK_THROWS_AS(emit_report(art, "pdf"), UnsupportedFormat);
}

TEST_CASE("comparing a run against itself reports zero deltas") {
    synth::TempDir dir("compare_self");
    write_dataset(dir);
    run_pipeline(config_from_json_text(config_text("run1"), dir.path));
    run_pipeline(config_from_json_text(config_text("run2"), dir.path));
    const auto out = compare_command({dir.path / "run1", dir.path / "run2"},
                                     dir.path / "compare.txt");
    const auto text = slurp(out);
    CHECK(text.find("Accuracy per strategy") != std::string::npos);
    CHECK(text.find("= +0.0000") != std::string::npos);
    CHECK(text.find("Strategy gaps") != std::string::npos);
    CHECK(text.find("Energy ratio (first run / remaining runs):") != std::string::npos);
    CHECK(text.find("run1=") != std::string::npos);
    CHECK(text.find("run2=") != std::string::npos);

    const auto jout = compare_command({dir.path / "run1", dir.path / "run2"},
                                      dir.path / "compare.json", "json");
    const auto doc = nlohmann::json::parse(slurp(jout));
    for (const auto& d : doc.at("deltas_vs_first_run"))
        CHECK(d.at("delta_vs_first").get<double>() == 0.0);
}

TEST_CASE("strategy gap line matches the published framing") {
    synth::TempDir dir("compare_gap");
    write_fake_run(dir.path / "older", "simple", 0.70);
    write_fake_run(dir.path / "newer", "stacking", 0.94);
    const auto out = compare_command({dir.path / "older", dir.path / "newer"},
                                     dir.path / "cmp.txt");
    const auto text = slurp(out);
    CHECK(text.find("stacking - simple = +0.24") != std::string::npos);
}

TEST_CASE("comparison input validation") {
    synth::TempDir dir("compare_bad");
    write_fake_run(dir.path / "only", "simple", 0.5);
    CHECK_THROWS_AS(compare_command({dir.path / "only"}, dir.path / "o.txt"),
                    ValidationError);
    fs::create_directories(dir.path / "bare");
    CHECK_THROWS_AS(
        compare_command({dir.path / "only", dir.path / "bare"}, dir.path / "o.txt"),
        ManifestMissing);
    CHECK_THROWS_AS(compare_command({dir.path / "only", dir.path / "only"},
                                    dir.path / "o.txt", "yaml"),
                    UnsupportedFormat);

    // tampering with a listed file breaks the checksum gate
    write_fake_run(dir.path / "tampered", "simple", 0.5);
    {
        std::ofstream out(dir.path / "tampered" / "metrics_m_simple.json",
                          std::ios::binary | std::ios::app);
        out << " ";
    }
    CHECK_THROWS_AS(compare_command({dir.path / "only", dir.path / "tampered"},
                                    dir.path / "o.txt"),
                    ValidationError);
}

TEST_CASE("counter fallback is recorded when the platform lacks counters") {
    if (energy::os_counters_available()) return;  // covered only off-platform
    synth::TempDir dir("fallback");
    write_dataset(dir);
    const auto cfg = config_from_json_text(
        config_text("run1", "\"energy\": {\"source\": \"os_counters\"}"), dir.path);
    const auto art = run_pipeline(cfg);
    bool noted = false;
    for (const auto& note : art.notes)
        noted = noted || note.find("constant_model") != std::string::npos;
    CHECK(noted);
    const auto doc =
        nlohmann::json::parse(slurp(dir.path / "run1" / "energy_report.json"));
    CHECK(doc.at("source").get<std::string>() == "constant_model");
}

TEST_CASE("file checksums are order-sensitive and stable") {
    synth::TempDir dir("checksum");
    const auto a = dir.file("a.txt", "hello");
    const auto b = dir.file("b.txt", "olleh");
    CHECK(file_checksum(a) == file_checksum(a));
    CHECK(file_checksum(a) != file_checksum(b));
    CHECK(file_checksum(a).size() == 16);
}
