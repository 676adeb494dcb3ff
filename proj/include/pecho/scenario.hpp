#pragma once

// Scenario files, presets, sweep runs with on-disk artifacts, and the
// equal/unequal-phase comparison.
//
// Configuration is plain "key = value" text grouped in [sections]; '#' and
// ';' start comments. All times are SI seconds, all frequencies rad/s.

#include "pecho/echo_analysis.hpp"
#include "pecho/ensemble.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace pecho {

enum class PulseScheme {
    ratio_echo, // probe pi/2, coupling pi/2, ..., coupling pi, probe pi
    beat_echo,  // same, but the closing probe is a pi/2 pulse
    explicit_pulses,
};

const char* to_string(PulseScheme s);

struct SequenceSpec {
    PulseScheme scheme = PulseScheme::ratio_echo;
    double t12 = 0.0;             // s, spacing of the two probe pulse centres
    double pulse_length = 1e-13;  // s
    double lead = 1e-12;          // s, time before the first pulse
    double phase_probe = 0.0;     // rad
    double phase_coupling = 0.0;  // rad
    double detuning_probe = 0.0;  // rad/s
    double detuning_coupling = 0.0;
    std::optional<double> t_end;  // s; nullopt = predicted echo time + tail
    double tail = 1e-11;          // s, minimum horizon past the predicted echo
    // explicit_pulses only
    std::vector<Pulse> pulses;
    double t0 = 0.0;
};

enum class SweepAxis { none, t12, d_split };

const char* to_string(SweepAxis a);

struct SweepSpec {
    SweepAxis axis = SweepAxis::none;
    std::vector<double> values; // t12 in s; d_split in `d_unit` rad/s (inf allowed)
    double d_unit = 0.0;        // rad/s per unit of a d_split value; 0 = capital_gamma
};

struct Scenario {
    SystemParams system;
    SequenceSpec sequence;
    EnsembleSpec ensemble;
    SweepSpec sweep;
    double sample_dt = 2e-14;
    std::filesystem::path output_dir = "pecho_out";
    std::uint64_t seed = 0;
};

/// Parses scenario text; `origin` prefixes error messages. Throws ConfigError
/// with the offending line number, or naming every missing required key.
Scenario parse_scenario(const std::string& text, const std::string& origin = "config");

/// Reads and parses a file. Throws IoError when it cannot be read.
Scenario load_scenario(const std::filesystem::path& path);

/// Canonical text of a scenario that parses back to an identical scenario.
std::string format_scenario(const Scenario& s);

/// Preset scenario text. Known names: paper_sec3, paper_sec3_beats.
std::string preset_text(const std::string& name);
std::vector<std::string> preset_names();

/// Pulse sequence for one t12 value. Throws ConfigError when the pulses of
/// the two blocks would collide.
PulseSequence build_sequence(const SequenceSpec& spec, const SystemParams& params);

/// Splitting in rad/s for a d_split sweep value.
Splitting sweep_splitting(const Scenario& s, double value);

/// Scenario with the sweep axis pinned to one value.
Scenario at_sweep_value(const Scenario& s, double value);

/// Every check that run() would make before simulating.
void validate(const Scenario& s);

struct PointResult {
    double sweep_value = 0.0;
    PulseSequence sequence;
    EnsembleResult result;
    EchoReport report;
    cplx peak_polarization{}; // sample nearest the detected peak
};

struct SweepResult {
    std::vector<PointResult> points;
    std::optional<DecayFit> decay_fit;    // t12 sweeps with >= 3 points
    std::optional<double> theoretical_a;  // -(delta12/delta23) gamma12 under the ratio lock
    std::optional<double> beat_period;    // of the peak-intensity series, t12 sweeps
};

/// Simulates every sweep point (or the single configured point when there is
/// no sweep). Points run on `threads` workers; results are independent of it.
SweepResult simulate_sweep(const Scenario& s, std::size_t threads, bool use_sweep = true);

/// Writes traces, reports, the aggregate CSV, fit, plots and the manifest
/// into `s.output_dir`. Everything is written to a sibling temporary
/// directory first and renamed into place; on failure nothing is left.
void write_artifacts(const Scenario& s, const SweepResult& result);

struct CompareReport {
    double phase_difference = 0.0;                // Phi_p - Phi_c of the unequal run
    std::vector<double> sweep_values;
    std::vector<double> peak_time_offsets;        // unequal - equal, per point
    double mean_peak_time_offset = 0.0;
    std::optional<double> beat_period;            // of the equal-phase run
    std::optional<double> beat_offset;            // delay of the unequal beat pattern
    SweepResult equal;
    SweepResult unequal;
};

/// Runs the scenario with Phi_p = Phi_c (the coupling phase is kept) and with
/// its configured phases, and reports how far the unequal-phase echo peaks
/// and beat pattern are shifted.
CompareReport compare_modes(const Scenario& s, std::size_t threads);

std::string to_key_value(const CompareReport& report);

/// Trace CSV (t_seconds,re_P,im_P,abs_P,intensity) round trip.
std::string trace_csv(const SignalTrace& trace);
SignalTrace parse_trace_csv(const std::string& text);
SignalTrace load_trace_csv(const std::filesystem::path& path);

/// Minimal SVG line plot.
struct PlotSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};
std::string svg_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                     const std::vector<PlotSeries>& series);

inline constexpr const char* code_version = "0.1.0";

} // namespace pecho
