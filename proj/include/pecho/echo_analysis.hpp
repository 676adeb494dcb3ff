#pragma once

// Echo observables extracted from polarization traces, and the closed-form
// laws they are checked against: echo time, exponential decay of the echo
// peak, quantum-beat period, photon-number decay and memory-time estimates.

#include "pecho/core_model.hpp"
#include "pecho/ensemble.hpp"

#include <optional>
#include <string>
#include <vector>

namespace pecho {

/// t0 + (omega12 / omega23) t12. Throws ConfigError unless omega23 > 0.
double predict_echo_time(double t0, double t12, double omega12, double omega23);

struct EchoPeak {
    double time = 0.0;
    double intensity = 0.0;
    std::size_t index = 0; // grid sample holding the discrete maximum
};

/// Maximum of the intensity over samples with t_a <= t <= t_b, refined by a
/// parabola through the three samples around it. Throws NumericalError
/// "no interior peak" when the window holds fewer than three samples or the
/// maximum sits on its first or last sample.
EchoPeak detect_echo_peak(const SignalTrace& trace, double t_a, double t_b);

/// Search window for the rephased emission: from the end of the last pulse to
/// the horizon.
struct TimeWindow {
    double begin = 0.0;
    double end = 0.0;
};
TimeWindow echo_search_window(const PulseSequence& seq);

struct DecayPoint {
    double t12 = 0.0;
    double intensity = 0.0;
};

/// I = I0 exp(a t12). `a` is the signed slope, negative for decay.
struct DecayFit {
    double I0 = 0.0;
    double a = 0.0;
    double residual_rms = 0.0; // of ln I about the fitted line
    std::size_t points = 0;
};

/// Least-squares line through (t12, ln I). Throws ConfigError for fewer than
/// three points, a non-positive intensity or coincident abscissae.
DecayFit fit_exponential_decay(const std::vector<DecayPoint>& points);

/// (delta12 / delta23) gamma12. Throws ConfigError when delta23 = 0.
double theoretical_decay_coefficient(double delta12, double delta23, double gamma12);

/// Photon-number and spectral-density decay with B = rho = 1 and unit level
/// spacing in the exponent.
struct PhotonNumberDecay {
    double rate = 0.0;             // (omega2 / omega1) gamma12
    double number = 0.0;           // N0 - rate t
    double spectral_density = 0.0; // rho0 exp(-rate t)
};
PhotonNumberDecay photon_number_decay(double n0, double omega1, double omega2, double gamma12, double t,
                                      double rho0 = 1.0);

struct BeatOptions {
    double threshold = 5.0;         // line power over median spectral power
    double min_modulation = 0.1;    // line amplitude over mean intensity
    double min_cycles = 2.0;        // lines below this many cycles per window are ignored
    std::size_t zero_pad = 16;
    int detrend_degree = 2;         // 0 removes the mean only
};

/// Dominant period of the intensity over samples in [t_a, t_b]: the trend is
/// removed, a Hann window applied, and the zero-padded power spectrum searched
/// for its strongest interior local maximum. Returns nullopt when that line
/// is not above `threshold` times the median power or its amplitude is below
/// `min_modulation` of the mean intensity. Throws ConfigError when the window
/// holds fewer than two samples.
std::optional<double> beat_period(const SignalTrace& trace, double t_a, double t_b,
                                  const BeatOptions& options = {});

/// Trace whose abscissa is the sweep value (e.g. t12) and whose samples are
/// the echo-peak intensities: each polarization is rescaled so that
/// |P|^2 equals the interpolated peak intensity.
SignalTrace peak_series(const std::vector<double>& sweep_values, const std::vector<cplx>& peak_polarization,
                        const std::vector<double>& peak_intensity);

struct MemoryEstimate {
    double amplification = 0.0; // t12 / tau_pulse
    double pulse_ratio = 0.0;   // tau_pulse / t12
    // Reference figures, reported as-is; they are not mutually
    // consistent.
    double quoted_pulse_ratio = 1e-6;
    double quoted_amplification = 1e9;
    std::optional<double> impulse_area;  // g_p t12
    bool impulse_area_satisfied = false; // |g_p t12 - pi| <= 0.1 pi
};

/// Throws ConfigError unless both times are positive.
MemoryEstimate memory_time_estimate(double tau_pulse, double t12, std::optional<double> g_p = std::nullopt);

struct EchoReport {
    double sweep_value = 0.0;
    double t_echo_detected = 0.0;
    double t_echo_predicted = 0.0;
    double peak_intensity = 0.0;
    std::optional<DecayFit> decay_fit;
    std::optional<double> beat_period;
    EnsembleDiagnostics diagnostics;
};

/// Flat "key = value" lines; absent optionals are written as "none".
std::string to_key_value(const EchoReport& report);
std::string echo_csv_header();
std::string to_csv_row(const EchoReport& report);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double x);

} // namespace pecho
