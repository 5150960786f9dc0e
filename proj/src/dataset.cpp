#include "ecofuse/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "ecofuse/errors.hpp"
#include "ecofuse/rng.hpp"

namespace ecofuse::data {

namespace {

std::string trim(std::string s) {
    auto notspace = [](unsigned char ch) { return !std::isspace(ch); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), notspace));
    s.erase(std::find_if(s.rbegin(), s.rend(), notspace).base(), s.end());
    return s;
}

// Plain comma-split; the file formats here carry no quoted fields.
std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(trim(field));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_prob(const std::string& tok, const std::string& context) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || p != tok.data() + tok.size())
        throw MalformedFile(context + ": cannot parse number '" + tok + "'");
    return v;
}

bool parse_int(const std::string& tok, long& out) {
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
    return ec == std::errc{} && p == tok.data() + tok.size();
}

std::ifstream open_or_throw(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MalformedFile("cannot open file: " + path.string());
    return in;
}

// Round-half-up, the per-class rounding rule of the split.
long round_half_up(double x) { return static_cast<long>(std::floor(x + 0.5)); }

}  // namespace

void ProbabilityMatrix::validate() const {
    if (rows.rows < 1) throw MalformedFile(model_id + ": probability matrix has no rows");
    if (rows.cols < 2)
        throw MalformedFile(model_id + ": probability matrix needs at least 2 classes");
    if (sample_ids.size() != rows.rows)
        throw ShapeMismatch(model_id + ": sample id count does not match row count");
    if (class_names.size() != rows.cols)
        throw ShapeMismatch(model_id + ": class name count does not match column count");
    for (std::size_t i = 0; i < rows.rows; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < rows.cols; ++j) {
            double v = rows(i, j);
            if (!(v >= 0.0 && v <= 1.0))
                throw ProbabilityOutOfRange(model_id + ": entry out of [0,1] at row " +
                                            std::to_string(i));
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-6)
            throw RowSumViolation(model_id + ": row " + std::to_string(i) +
                                  " sums to " + std::to_string(sum));
    }
}

ProbabilityMatrix make_probability_matrix(std::string model_id,
                                          std::vector<std::string> sample_ids,
                                          std::vector<std::string> class_names,
                                          Matrix rows, double renorm_tol) {
    if (rows.rows < 1) throw MalformedFile(model_id + ": no sample rows");
    if (rows.cols < 2) throw MalformedFile(model_id + ": fewer than 2 classes");
    for (std::size_t i = 0; i < rows.rows; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < rows.cols; ++j) {
            double v = rows(i, j);
            if (!(v >= 0.0 && v <= 1.0))
                throw ProbabilityOutOfRange(model_id + ": entry " + std::to_string(v) +
                                            " out of [0,1] at row " + std::to_string(i));
            sum += v;
        }
        if (std::abs(sum - 1.0) > renorm_tol)
            throw RowSumViolation(model_id + ": row " + std::to_string(i) + " sums to " +
                                  std::to_string(sum) + " (tolerance " +
                                  std::to_string(renorm_tol) + ")");
        for (std::size_t j = 0; j < rows.cols; ++j) rows(i, j) /= sum;
    }
    ProbabilityMatrix pm{std::move(model_id), std::move(sample_ids), std::move(class_names),
                         std::move(rows)};
    pm.validate();
    return pm;
}

namespace {

ProbabilityMatrix load_probability_csv(const std::filesystem::path& path) {
    auto in = open_or_throw(path);
    std::string line;
    if (!std::getline(in, line)) throw MalformedFile(path.string() + ": empty file");
    auto header = split_csv(line);
    if (header.size() < 3 || header[0] != "sample_id")
        throw MalformedFile(path.string() +
                            ": header must be 'sample_id,<class_0>,...' with >= 2 classes");
    std::vector<std::string> class_names(header.begin() + 1, header.end());
    const std::size_t c = class_names.size();

    std::vector<std::string> ids;
    std::vector<double> values;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        auto fields = split_csv(line);
        if (fields.size() != c + 1)
            throw MalformedFile(path.string() + ":" + std::to_string(lineno) +
                                ": expected " + std::to_string(c + 1) + " fields, got " +
                                std::to_string(fields.size()));
        ids.push_back(fields[0]);
        for (std::size_t j = 0; j < c; ++j)
            values.push_back(parse_prob(fields[j + 1],
                                        path.string() + ":" + std::to_string(lineno)));
    }
    if (ids.empty()) throw MalformedFile(path.string() + ": no sample rows");

    Matrix m(ids.size(), c);
    m.data = std::move(values);
    return make_probability_matrix(path.stem().string(), std::move(ids),
                                   std::move(class_names), std::move(m));
}

ProbabilityMatrix load_probability_json(const std::filesystem::path& path) {
    auto in = open_or_throw(path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw MalformedFile(path.string() + ": " + e.what());
    }
    try {
        std::string model_id =
            doc.contains("model_id") ? doc.at("model_id").get<std::string>()
                                     : path.stem().string();
        auto class_names = doc.at("class_names").get<std::vector<std::string>>();
        const auto& samples = doc.at("samples");
        if (!samples.is_array() || samples.empty())
            throw MalformedFile(path.string() + ": 'samples' must be a non-empty array");
        Matrix m(samples.size(), class_names.size());
        std::vector<std::string> ids;
        ids.reserve(samples.size());
        std::size_t i = 0;
        for (const auto& s : samples) {
            ids.push_back(s.at("id").get<std::string>());
            auto probs = s.at("probs").get<std::vector<double>>();
            if (probs.size() != class_names.size())
                throw MalformedFile(path.string() + ": sample '" + ids.back() +
                                    "' has wrong probability width");
            std::copy(probs.begin(), probs.end(), m.row(i).begin());
            ++i;
        }
        return make_probability_matrix(std::move(model_id), std::move(ids),
                                       std::move(class_names), std::move(m));
    } catch (const nlohmann::json::exception& e) {
        throw MalformedFile(path.string() + ": " + e.what());
    }
}

}  // namespace

ProbabilityMatrix load_probability_matrix(const std::filesystem::path& path,
                                          ProbFormat format) {
    return format == ProbFormat::csv ? load_probability_csv(path)
                                     : load_probability_json(path);
}

ProbabilityMatrix load_probability_matrix(const std::filesystem::path& path) {
    return load_probability_matrix(
        path, path.extension() == ".json" ? ProbFormat::json : ProbFormat::csv);
}

std::vector<std::string> load_class_list(const std::filesystem::path& path) {
    auto in = open_or_throw(path);
    std::vector<std::string> names;
    std::string line;
    while (std::getline(in, line)) {
        auto name = trim(line);
        if (!name.empty()) names.push_back(name);
    }
    if (names.empty()) throw MalformedFile(path.string() + ": empty class list");
    return names;
}

LabelVector load_labels(const std::filesystem::path& path,
                        const std::vector<std::string>& class_names) {
    auto in = open_or_throw(path);
    std::string line;
    if (!std::getline(in, line)) throw MalformedFile(path.string() + ": empty file");
    auto header = split_csv(line);
    if (header.size() != 2 || header[0] != "sample_id" || header[1] != "label")
        throw MalformedFile(path.string() + ": header must be 'sample_id,label'");

    std::unordered_map<std::string, int> name_to_index;
    for (std::size_t i = 0; i < class_names.size(); ++i)
        name_to_index.emplace(class_names[i], static_cast<int>(i));

    LabelVector lv;
    std::unordered_set<std::string> seen;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        auto fields = split_csv(line);
        if (fields.size() != 2)
            throw MalformedFile(path.string() + ":" + std::to_string(lineno) +
                                ": expected 2 fields");
        if (!seen.insert(fields[0]).second)
            throw DuplicateSampleId(path.string() + ": duplicate sample id '" + fields[0] +
                                    "'");
        int label = -1;
        if (auto it = name_to_index.find(fields[1]); it != name_to_index.end()) {
            label = it->second;
        } else {
            long v = 0;
            if (!parse_int(fields[1], v) || v < 0 ||
                (!class_names.empty() && v >= static_cast<long>(class_names.size())))
                throw UnknownClassName(path.string() + ": unknown class '" + fields[1] +
                                       "' for sample '" + fields[0] + "'");
            label = static_cast<int>(v);
        }
        lv.sample_ids.push_back(fields[0]);
        lv.labels.push_back(label);
    }
    if (lv.labels.empty()) throw MalformedFile(path.string() + ": no label rows");
    return lv;
}

AlignedBundle align(std::vector<ProbabilityMatrix> models, LabelVector labels) {
    if (models.empty()) throw ShapeMismatch("align: need at least one model");
    const auto& ref_names = models.front().class_names;
    for (const auto& m : models) {
        if (m.class_names != ref_names)
            throw ClassSetMismatch("align: model '" + m.model_id +
                                   "' has a different class list than '" +
                                   models.front().model_id + "'");
    }

    std::unordered_map<std::string, std::size_t> label_pos;
    label_pos.reserve(labels.n());
    for (std::size_t i = 0; i < labels.n(); ++i) {
        if (!label_pos.emplace(labels.sample_ids[i], i).second)
            throw DuplicateSampleId("align: duplicate sample id '" + labels.sample_ids[i] +
                                    "' in labels");
    }
    for (int lab : labels.labels) {
        if (lab < 0 || static_cast<std::size_t>(lab) >= ref_names.size())
            throw ShapeMismatch("align: label index " + std::to_string(lab) +
                                " out of range for " + std::to_string(ref_names.size()) +
                                " classes");
    }

    for (auto& m : models) {
        if (m.n() != labels.n())
            throw SampleSetMismatch("align: model '" + m.model_id + "' has " +
                                    std::to_string(m.n()) + " samples, labels have " +
                                    std::to_string(labels.n()));
        std::unordered_map<std::string, std::size_t> model_pos;
        model_pos.reserve(m.n());
        for (std::size_t i = 0; i < m.n(); ++i) {
            if (!model_pos.emplace(m.sample_ids[i], i).second)
                throw SampleSetMismatch("align: duplicate sample id '" + m.sample_ids[i] +
                                        "' in model '" + m.model_id + "'");
        }
        Matrix reordered(m.n(), m.c());
        std::vector<std::string> new_ids(m.n());
        for (std::size_t i = 0; i < labels.n(); ++i) {
            auto it = model_pos.find(labels.sample_ids[i]);
            if (it == model_pos.end())
                throw SampleSetMismatch("align: sample '" + labels.sample_ids[i] +
                                        "' missing from model '" + m.model_id + "'");
            auto src = m.rows.row(it->second);
            std::copy(src.begin(), src.end(), reordered.row(i).begin());
            new_ids[i] = labels.sample_ids[i];
        }
        m.rows = std::move(reordered);
        m.sample_ids = std::move(new_ids);
    }
    return AlignedBundle{std::move(models), std::move(labels)};
}

SplitIndices stratified_split(const LabelVector& labels, double test_fraction,
                              std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw ValidationError("stratified_split: test_fraction must be in (0,1)");
    const std::size_t n = labels.n();
    if (n == 0) throw ValidationError("stratified_split: empty labels");

    int max_label = *std::max_element(labels.labels.begin(), labels.labels.end());
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label) + 1);
    for (std::size_t i = 0; i < n; ++i)
        by_class[static_cast<std::size_t>(labels.labels[i])].push_back(i);

    struct ClassPlan {
        std::size_t cls;
        std::size_t count;
        long take;
        bool rounded_up;  // fractional part was >= 0.5
    };
    std::vector<ClassPlan> plans;
    long total_take = 0;
    for (std::size_t cls = 0; cls < by_class.size(); ++cls) {
        const auto& members = by_class[cls];
        if (members.empty()) continue;
        if (members.size() < 2)
            throw ClassTooSmall("stratified_split: class " + std::to_string(cls) +
                                " has fewer than 2 samples");
        double exact = static_cast<double>(members.size()) * test_fraction;
        long take = round_half_up(exact);
        plans.push_back({cls, members.size(), take, take > exact});
        total_take += take;
    }

    // Settle the global count: nudge classes whose rounding direction opposes
    // the correction, largest class first, one sample each.
    long target = round_half_up(static_cast<double>(n) * test_fraction);
    long diff = total_take - target;
    auto by_size_desc = [&](bool want_rounded_up, long delta) {
        std::vector<ClassPlan*> cands;
        for (auto& p : plans)
            if (p.rounded_up == want_rounded_up) cands.push_back(&p);
        std::sort(cands.begin(), cands.end(), [](const ClassPlan* a, const ClassPlan* b) {
            if (a->count != b->count) return a->count > b->count;
            return a->cls < b->cls;
        });
        for (auto* p : cands) {
            if (diff == 0) break;
            long next = p->take + delta;
            if (next < 0 || next > static_cast<long>(p->count)) continue;
            p->take = next;
            diff += delta;
        }
    };
    if (diff > 0) by_size_desc(true, -1);
    if (diff < 0) by_size_desc(false, +1);
    // Fallback for pathological rounding patterns: adjust any class in range.
    while (diff != 0) {
        long delta = diff > 0 ? -1 : +1;
        ClassPlan* pick = nullptr;
        for (auto& p : plans) {
            long next = p.take + delta;
            if (next < 0 || next > static_cast<long>(p.count)) continue;
            if (!pick || p.count > pick->count) pick = &p;
        }
        if (!pick) throw ValidationError("stratified_split: cannot satisfy split counts");
        pick->take += delta;
        diff += delta;
    }

    std::mt19937_64 gen(seed);
    SplitIndices split;
    split.seed = seed;
    for (const auto& p : plans) {
        auto members = by_class[p.cls];
        rng::shuffle(members, gen);
        for (std::size_t i = 0; i < members.size(); ++i) {
            if (i < static_cast<std::size_t>(p.take))
                split.test.push_back(members[i]);
            else
                split.train.push_back(members[i]);
        }
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

AlignedBundle take(const AlignedBundle& bundle, std::span<const std::size_t> indices) {
    AlignedBundle out;
    out.labels.sample_ids.reserve(indices.size());
    out.labels.labels.reserve(indices.size());
    for (auto i : indices) {
        out.labels.sample_ids.push_back(bundle.labels.sample_ids.at(i));
        out.labels.labels.push_back(bundle.labels.labels.at(i));
    }
    for (const auto& m : bundle.models) {
        ProbabilityMatrix sub;
        sub.model_id = m.model_id;
        sub.class_names = m.class_names;
        sub.rows = Matrix(indices.size(), m.c());
        sub.sample_ids.reserve(indices.size());
        std::size_t r = 0;
        for (auto i : indices) {
            sub.sample_ids.push_back(m.sample_ids[i]);
            auto src = m.rows.row(i);
            std::copy(src.begin(), src.end(), sub.rows.row(r).begin());
            ++r;
        }
        out.models.push_back(std::move(sub));
    }
    return out;
}

void save_split(const std::filesystem::path& path, const SplitIndices& split) {
    nlohmann::json doc{{"generator", "mt19937_64"},
                       {"seed", split.seed},
                       {"train", split.train},
                       {"test", split.test}};
    std::ofstream out(path);
    if (!out) throw RuntimeFailure("cannot write " + path.string());
    out << doc.dump(2) << '\n';
}

SplitIndices load_split(const std::filesystem::path& path) {
    auto in = open_or_throw(path);
    nlohmann::json doc;
    try {
        in >> doc;
        SplitIndices split;
        split.seed = doc.value("seed", 0ull);
        split.train = doc.at("train").get<std::vector<std::size_t>>();
        split.test = doc.at("test").get<std::vector<std::size_t>>();
        return split;
    } catch (const nlohmann::json::exception& e) {
        throw MalformedFile(path.string() + ": " + e.what());
    }
}

}  // namespace ecofuse::data
