#include "ecofuse/energy.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "ecofuse/errors.hpp"

namespace ecofuse::energy {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kJoulesPerKwh = 3.6e6;
constexpr const char* kPowercapRoot = "/sys/class/powercap";

double steady_seconds() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::string trimmed(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

struct RaplDomain {
    fs::path energy_file;
    bool is_dram = false;
};

// Top-level powercap packages count as CPU; dram subdomains as RAM.
// core/uncore subdomains are subsets of the package and are skipped.
std::vector<RaplDomain> discover_rapl() {
    std::vector<RaplDomain> domains;
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(kPowercapRoot, ec)) {
        const std::string dirname = entry.path().filename().string();
        if (dirname.rfind("intel-rapl", 0) != 0) continue;
        std::ifstream name_in(entry.path() / "name");
        std::string name;
        if (!name_in || !std::getline(name_in, name)) continue;
        name = trimmed(name);
        const fs::path energy = entry.path() / "energy_uj";
        std::ifstream probe(energy);
        unsigned long long value = 0;
        if (!probe || !(probe >> value)) continue;
        if (name.rfind("package", 0) == 0) {
            domains.push_back({energy, false});
        } else if (name == "dram") {
            domains.push_back({energy, true});
        }
    }
    std::sort(domains.begin(), domains.end(),
              [](const RaplDomain& a, const RaplDomain& b) {
                  return a.energy_file < b.energy_file;
              });
    return domains;
}

bool read_counter(const fs::path& file, unsigned long long& out) {
    std::ifstream in(file);
    return static_cast<bool>(in >> out);
}

}  // namespace

bool os_counters_available() { return !discover_rapl().empty(); }

std::string to_string(SourceKind kind) {
    switch (kind) {
        case SourceKind::os_counters: return "os_counters";
        case SourceKind::constant_model: return "constant_model";
        case SourceKind::trace_replay: return "trace_replay";
    }
    throw ValidationError("invalid power source kind");
}

SourceKind source_kind_from_string(const std::string& name) {
    if (name == "os_counters") return SourceKind::os_counters;
    if (name == "constant_model") return SourceKind::constant_model;
    if (name == "trace_replay") return SourceKind::trace_replay;
    throw ValidationError("unknown power source kind: " + name);
}

PowerSource PowerSource::constant(double cpu, double gpu, double ram) {
    PowerSource s;
    s.kind = SourceKind::constant_model;
    s.cpu_w = cpu;
    s.gpu_w = gpu;
    s.ram_w = ram;
    return s;
}

PowerSource PowerSource::trace(std::filesystem::path path) {
    PowerSource s;
    s.kind = SourceKind::trace_replay;
    s.trace_path = std::move(path);
    return s;
}

PowerSource PowerSource::counters() {
    PowerSource s;
    s.kind = SourceKind::os_counters;
    return s;
}

struct EnergySession::State {
    PowerSource source;
    double period = 1.0;
    Clock clock;
    double t0 = 0.0;
    bool stopped = false;

    std::vector<PowerSample> trace;

    // os_counters sampler
    std::vector<RaplDomain> domains;
    std::vector<unsigned long long> last_counts;
    double last_poll_t = 0.0;
    std::thread sampler;
    std::mutex mu;
    std::condition_variable cv;
    bool quit = false;
    std::vector<PowerSample> collected;

    void poll_counters(double now) {
        double cpu_j = 0.0;
        double ram_j = 0.0;
        for (std::size_t i = 0; i < domains.size(); ++i) {
            unsigned long long value = 0;
            if (!read_counter(domains[i].energy_file, value)) continue;
            // counter wrap shows up as a negative delta; drop that interval
            const double delta_j =
                value >= last_counts[i]
                    ? static_cast<double>(value - last_counts[i]) / 1e6
                    : 0.0;
            (domains[i].is_dram ? ram_j : cpu_j) += delta_j;
            last_counts[i] = value;
        }
        const double dt = now - last_poll_t;
        if (dt <= 0.0) return;
        collected.push_back({now, cpu_j / dt, 0.0, ram_j / dt});
        last_poll_t = now;
    }

    void sampler_loop() {
        std::unique_lock<std::mutex> lock(mu);
        while (!quit) {
            cv.wait_for(lock, std::chrono::duration<double>(period),
                        [this] { return quit; });
            if (quit) break;
            poll_counters(clock() - t0);
        }
    }
};

EnergySession::EnergySession(std::unique_ptr<State> state) : state_(std::move(state)) {}
EnergySession::EnergySession(EnergySession&&) noexcept = default;
EnergySession& EnergySession::operator=(EnergySession&&) noexcept = default;

EnergySession::~EnergySession() {
    if (state_ && state_->sampler.joinable()) {
        {
            std::lock_guard<std::mutex> lock(state_->mu);
            state_->quit = true;
        }
        state_->cv.notify_all();
        state_->sampler.join();
    }
}

EnergySession record_session(const PowerSource& source, double sampling_period_s,
                             EnergySession::Clock clock) {
    if (!(sampling_period_s > 0.0))
        throw ValidationError("sampling period must be positive");
    auto state = std::make_unique<EnergySession::State>();
    state->source = source;
    state->period = sampling_period_s;
    state->clock = clock ? std::move(clock) : EnergySession::Clock(steady_seconds);
    state->t0 = state->clock();

    switch (source.kind) {
        case SourceKind::constant_model:
            if (source.cpu_w < 0.0 || source.gpu_w < 0.0 || source.ram_w < 0.0)
                throw ValidationError("constant power model requires nonnegative watts");
            break;
        case SourceKind::trace_replay:
            state->trace = load_trace(source.trace_path);
            if (state->trace.size() < 2)
                throw TraceExhausted("trace " + source.trace_path.string() +
                                     " holds fewer than 2 samples");
            break;
        case SourceKind::os_counters: {
            state->domains = discover_rapl();
            if (state->domains.empty())
                throw CountersUnavailable(
                    "no readable platform energy counters; fall back to constant_model");
            state->last_counts.resize(state->domains.size(), 0);
            for (std::size_t i = 0; i < state->domains.size(); ++i)
                read_counter(state->domains[i].energy_file, state->last_counts[i]);
            state->collected.push_back({0.0, 0.0, 0.0, 0.0});
            state->last_poll_t = 0.0;
            EnergySession::State* raw = state.get();
            state->sampler = std::thread([raw] { raw->sampler_loop(); });
            break;
        }
    }
    return EnergySession(std::move(state));
}

EnergySession::Result EnergySession::stop() {
    if (!state_) throw RuntimeFailure("energy session is empty");
    if (state_->stopped) throw RuntimeFailure("energy session already stopped");
    state_->stopped = true;

    Result result;
    switch (state_->source.kind) {
        case SourceKind::constant_model: {
            const double duration = state_->clock() - state_->t0;
            if (!(duration > 0.0)) throw ZeroDuration("session duration must be positive");
            const PowerSource& src = state_->source;
            for (std::size_t i = 0; static_cast<double>(i) * state_->period < duration; ++i)
                result.samples.push_back({static_cast<double>(i) * state_->period,
                                          src.cpu_w, src.gpu_w, src.ram_w});
            result.samples.push_back({duration, src.cpu_w, src.gpu_w, src.ram_w});
            result.duration_s = duration;
            break;
        }
        case SourceKind::trace_replay:
            result.samples = state_->trace;
            result.duration_s = state_->trace.back().timestamp_s;
            break;
        case SourceKind::os_counters: {
            {
                std::lock_guard<std::mutex> lock(state_->mu);
                state_->quit = true;
            }
            state_->cv.notify_all();
            state_->sampler.join();
            const double duration = state_->clock() - state_->t0;
            if (duration > state_->last_poll_t) state_->poll_counters(duration);
            result.samples = std::move(state_->collected);
            result.duration_s = duration;
            break;
        }
    }
    return result;
}

std::vector<PowerSample> load_trace(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MalformedFile("cannot open trace " + path.string());
    std::string line;
    if (!std::getline(in, line) || trimmed(line) != "timestamp_s,cpu_w,gpu_w,ram_w")
        throw MalformedFile("trace " + path.string() +
                            " must start with header timestamp_s,cpu_w,gpu_w,ram_w");
    std::vector<PowerSample> samples;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string row = trimmed(line);
        if (row.empty()) continue;
        PowerSample sample;
        char extra = 0;
        const int got = std::sscanf(row.c_str(), "%lf,%lf,%lf,%lf%c", &sample.timestamp_s,
                                    &sample.cpu_w, &sample.gpu_w, &sample.ram_w, &extra);
        if (got != 4)
            throw MalformedFile("trace " + path.string() + " line " +
                                std::to_string(line_no) + ": expected 4 numeric fields");
        if (sample.cpu_w < 0.0 || sample.gpu_w < 0.0 || sample.ram_w < 0.0)
            throw MalformedFile("trace " + path.string() + " line " +
                                std::to_string(line_no) + ": negative wattage");
        if (!samples.empty() && sample.timestamp_s <= samples.back().timestamp_s)
            throw MalformedFile("trace " + path.string() + " line " +
                                std::to_string(line_no) +
                                ": timestamps must be strictly increasing");
        samples.push_back(sample);
    }
    return samples;
}

EnergyBreakdown integrate_energy(const std::vector<PowerSample>& samples, double duration_s) {
    if (samples.size() < 2)
        throw InsufficientSamples("energy integration needs at least 2 samples");
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const PowerSample& s = samples[i];
        if (s.cpu_w < 0.0 || s.gpu_w < 0.0 || s.ram_w < 0.0)
            throw ValidationError("power samples must be nonnegative");
        if (i > 0 && s.timestamp_s <= samples[i - 1].timestamp_s)
            throw ValidationError("power sample timestamps must be strictly increasing");
    }
    if (duration_s < samples.back().timestamp_s)
        throw ValidationError("duration precedes the last power sample");

    double cpu_j = 0.0;
    double gpu_j = 0.0;
    double ram_j = 0.0;
    for (std::size_t i = 1; i < samples.size(); ++i) {
        const double dt = samples[i].timestamp_s - samples[i - 1].timestamp_s;
        cpu_j += 0.5 * (samples[i].cpu_w + samples[i - 1].cpu_w) * dt;
        gpu_j += 0.5 * (samples[i].gpu_w + samples[i - 1].gpu_w) * dt;
        ram_j += 0.5 * (samples[i].ram_w + samples[i - 1].ram_w) * dt;
    }
    EnergyBreakdown b;
    b.duration_s = duration_s;
    b.cpu_kwh = cpu_j / kJoulesPerKwh;
    b.gpu_kwh = gpu_j / kJoulesPerKwh;
    b.ram_kwh = ram_j / kJoulesPerKwh;
    b.total_kwh = b.cpu_kwh + b.gpu_kwh + b.ram_kwh;
    return b;
}

EmissionsReport compute_emissions(const EnergyBreakdown& breakdown, double grid_intensity) {
    if (!(breakdown.duration_s > 0.0))
        throw ZeroDuration("emissions rate requires a positive duration");
    if (grid_intensity < 0.0)
        throw ValidationError("grid intensity must be nonnegative");
    EmissionsReport report;
    report.breakdown = breakdown;
    report.grid_intensity = grid_intensity;
    report.emissions_kg = breakdown.total_kwh * grid_intensity;
    report.rate_kg_per_s = report.emissions_kg / breakdown.duration_s;
    return report;
}

RatioReport compare_sessions(const std::vector<EmissionsReport>& group_a,
                             const std::vector<EmissionsReport>& group_b) {
    if (group_a.empty() || group_b.empty())
        throw EmptyGroup("session comparison requires two non-empty groups");
    auto means = [](const std::vector<EmissionsReport>& g, double& energy, double& duration,
                    double& emissions) {
        energy = duration = emissions = 0.0;
        for (const EmissionsReport& r : g) {
            energy += r.breakdown.total_kwh;
            duration += r.breakdown.duration_s;
            emissions += r.emissions_kg;
        }
        const double n = static_cast<double>(g.size());
        energy /= n;
        duration /= n;
        emissions /= n;
    };
    RatioReport out;
    means(group_a, out.a_mean_energy_kwh, out.a_mean_duration_s, out.a_mean_emissions_kg);
    means(group_b, out.b_mean_energy_kwh, out.b_mean_duration_s, out.b_mean_emissions_kg);
    out.energy_ratio = out.a_mean_energy_kwh / out.b_mean_energy_kwh;
    out.duration_ratio = out.a_mean_duration_s / out.b_mean_duration_s;
    out.emissions_ratio = out.a_mean_emissions_kg / out.b_mean_emissions_kg;
    return out;
}

std::string sci3(double value) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.2e", value);
    std::string s(buf);
    const auto e = s.find('e');
    if (e == std::string::npos) return s;  // nan/inf
    const int exponent = std::stoi(s.substr(e + 1));
    return s.substr(0, e) + "e" + std::to_string(exponent);
}

std::string emissions_table(const std::vector<std::pair<std::string, EmissionsReport>>& rows) {
    static const char* kHeaders[] = {"Duration (s)",       "Energy Consumed (kWh)",
                                     "CPU Energy (kWh)",   "GPU Energy (kWh)",
                                     "RAM Energy (kWh)",   "Emissions (kgCO2eq)",
                                     "Emissions Rate (kgCO2eq/s)"};
    std::size_t label_width = std::string("Run").size();
    for (const auto& [label, report] : rows) label_width = std::max(label_width, label.size());

    std::ostringstream out;
    out << std::left << std::setw(static_cast<int>(label_width + 2)) << "Run";
    for (const char* h : kHeaders) out << "  " << h;
    out << '\n';
    for (const auto& [label, report] : rows) {
        char duration[32];
        std::snprintf(duration, sizeof(duration), "%.2f", report.breakdown.duration_s);
        const std::string cells[] = {duration,
                                     sci3(report.breakdown.total_kwh),
                                     sci3(report.breakdown.cpu_kwh),
                                     sci3(report.breakdown.gpu_kwh),
                                     sci3(report.breakdown.ram_kwh),
                                     sci3(report.emissions_kg),
                                     sci3(report.rate_kg_per_s)};
        out << std::left << std::setw(static_cast<int>(label_width + 2)) << label;
        for (std::size_t i = 0; i < 7; ++i) {
            out << "  " << std::right
                << std::setw(static_cast<int>(std::string(kHeaders[i]).size())) << cells[i];
        }
        out << '\n';
    }
    return out.str();
}

std::string emissions_to_json(const EmissionsReport& report) {
    const json doc{{"breakdown",
                    {{"duration_s", report.breakdown.duration_s},
                     {"cpu_kwh", report.breakdown.cpu_kwh},
                     {"gpu_kwh", report.breakdown.gpu_kwh},
                     {"ram_kwh", report.breakdown.ram_kwh},
                     {"total_kwh", report.breakdown.total_kwh}}},
                   {"grid_intensity", report.grid_intensity},
                   {"emissions_kg", report.emissions_kg},
                   {"rate_kg_per_s", report.rate_kg_per_s}};
    return doc.dump(2);
}

std::string ratio_to_json(const RatioReport& report) {
    const json doc{{"group_a",
                    {{"mean_energy_kwh", report.a_mean_energy_kwh},
                     {"mean_duration_s", report.a_mean_duration_s},
                     {"mean_emissions_kg", report.a_mean_emissions_kg}}},
                   {"group_b",
                    {{"mean_energy_kwh", report.b_mean_energy_kwh},
                     {"mean_duration_s", report.b_mean_duration_s},
                     {"mean_emissions_kg", report.b_mean_emissions_kg}}},
                   {"ratios",
                    {{"energy", report.energy_ratio},
                     {"duration", report.duration_ratio},
                     {"emissions", report.emissions_ratio}}}};
    return doc.dump(2);
}

}  // namespace ecofuse::energy
