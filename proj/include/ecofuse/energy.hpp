#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace ecofuse::energy {

// Default grid carbon intensity in kgCO2eq per kWh; configurable everywhere
// and recorded in every report.
inline constexpr double kDefaultGridIntensity = 0.205;

struct PowerSample {
    double timestamp_s = 0.0;  // seconds since session start, strictly increasing
    double cpu_w = 0.0;
    double gpu_w = 0.0;
    double ram_w = 0.0;
};

struct EnergyBreakdown {
    double duration_s = 0.0;
    double cpu_kwh = 0.0;
    double gpu_kwh = 0.0;
    double ram_kwh = 0.0;
    double total_kwh = 0.0;  // literal sum cpu + gpu + ram
};

struct EmissionsReport {
    EnergyBreakdown breakdown;
    double grid_intensity = kDefaultGridIntensity;  // kgCO2eq / kWh
    double emissions_kg = 0.0;                      // total_kwh * grid_intensity
    double rate_kg_per_s = 0.0;                     // emissions_kg / duration_s
};

enum class SourceKind { os_counters, constant_model, trace_replay };

std::string to_string(SourceKind kind);
SourceKind source_kind_from_string(const std::string& name);

struct PowerSource {
    SourceKind kind = SourceKind::constant_model;
    // constant_model
    double cpu_w = 0.0;
    double gpu_w = 0.0;
    double ram_w = 0.0;
    // trace_replay
    std::filesystem::path trace_path;

    static PowerSource constant(double cpu, double gpu = 0.0, double ram = 0.0);
    static PowerSource trace(std::filesystem::path path);
    static PowerSource counters();
};

// True when platform energy counters (Linux powercap) are readable.
bool os_counters_available();

// One sampler per session; stop() synchronizes and returns an immutable
// sample list plus the wall-clock duration. Move-only.
class EnergySession {
  public:
    using Clock = std::function<double()>;  // seconds, monotonic

    struct Result {
        std::vector<PowerSample> samples;
        double duration_s = 0.0;
    };

    EnergySession(EnergySession&&) noexcept;
    EnergySession& operator=(EnergySession&&) noexcept;
    ~EnergySession();

    Result stop();

  private:
    friend EnergySession record_session(const PowerSource&, double, Clock);
    struct State;
    explicit EnergySession(std::unique_ptr<State> state);
    std::unique_ptr<State> state_;
};

// Starts sampling immediately. A custom clock makes constant_model sessions
// fully deterministic in tests; os_counters always uses the real clock.
EnergySession record_session(const PowerSource& source, double sampling_period_s,
                             EnergySession::Clock clock = {});

// Trapezoidal integral of each wattage column, converted to kWh (/ 3.6e6).
EnergyBreakdown integrate_energy(const std::vector<PowerSample>& samples, double duration_s);

EmissionsReport compute_emissions(const EnergyBreakdown& breakdown, double grid_intensity);

struct RatioReport {
    double a_mean_energy_kwh = 0.0;
    double a_mean_duration_s = 0.0;
    double a_mean_emissions_kg = 0.0;
    double b_mean_energy_kwh = 0.0;
    double b_mean_duration_s = 0.0;
    double b_mean_emissions_kg = 0.0;
    double energy_ratio = 0.0;  // a / b
    double duration_ratio = 0.0;
    double emissions_ratio = 0.0;
};

RatioReport compare_sessions(const std::vector<EmissionsReport>& group_a,
                             const std::vector<EmissionsReport>& group_b);

// Trace CSV: header `timestamp_s,cpu_w,gpu_w,ram_w`, one sample per row.
std::vector<PowerSample> load_trace(const std::filesystem::path& path);

// Three significant digits, unpadded exponent: 0.156 -> "1.56e-1".
std::string sci3(double value);

// Plain-text table with the seven reporting columns (duration, total energy,
// per-component energies, emissions, emissions rate), one row per label.
std::string emissions_table(const std::vector<std::pair<std::string, EmissionsReport>>& rows);

std::string emissions_to_json(const EmissionsReport& report);
std::string ratio_to_json(const RatioReport& report);

}  // namespace ecofuse::energy
