#pragma once

// Doppler-broadened ensemble: detuning sampling with the locked ratio
// delta12 / delta23 = omega12 / omega23, parallel per-atom integration, a
// deterministic weighted reduction of the 2 <-> 3 coherence, and the
// analytic Gaussian-envelope oracle.

#include "pecho/bloch_integrator.hpp"
#include "pecho/core_model.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace pecho {

enum class SamplingScheme { uniform_grid, gauss_hermite, monte_carlo };

const char* to_string(SamplingScheme s);
SamplingScheme sampling_scheme_from_string(const std::string& s);

struct EnsembleSpec {
    std::size_t n_atoms = 1;
    double sigma_doppler = 0.0; // rad/s, std. deviation of delta12
    SamplingScheme scheme = SamplingScheme::uniform_grid;
    std::uint64_t seed = 0;     // monte_carlo draws and unlocked delta23 draws
    bool ratio_lock = true;
    double t_star = 0.0;        // s, half-width of the echo envelope; 0 = derive
    double grid_span = 6.0;     // uniform_grid covers +- grid_span * sigma
};

/// Validates the spec; throws ConfigError.
void validate(const EnsembleSpec& spec);

struct WeightedAtom {
    AtomContext ctx;
    double weight = 0.0;
};

/// Places or draws delta12 ~ N(0, sigma^2) per the scheme, sets
/// delta23 = delta12 * omega23 / omega12 under the ratio lock (independent
/// N(0, (sigma omega23 / omega12)^2) draws otherwise), and normalizes the
/// weights to sum to one.
std::vector<WeightedAtom> sample_detunings(const EnsembleSpec& spec, const SystemParams& params);

/// Nodes and weights of n-point Gauss-Hermite quadrature for the weight
/// exp(-x^2), nodes ascending.
void gauss_hermite_rule(std::size_t n, std::vector<double>& nodes, std::vector<double>& weights);

/// Pairwise (balanced binary tree) sum in index order; the tree shape depends
/// only on the length.
cplx pairwise_sum(const cplx* values, std::size_t n);

/// Per-atom rho_23 samples on a shared grid.
struct AtomSeries {
    std::vector<double> t_grid;
    std::vector<cplx> rho23;
};

/// Raw weighted sum P(t) = sum_i w_i rho23_i(t), reduced pairwise over atoms
/// at every sample. Throws ConfigError on mismatched grids.
SignalTrace sum_polarization(const std::vector<AtomSeries>& series, const std::vector<double>& weights);

/// Scale factor that maps the first free-induction peak to P0 = 1: the
/// largest |P| in the gap after the first group of touching pulses. Returns
/// 1 (no rescaling) when that peak is zero or the sequence has no gap.
double first_pulse_peak(const SignalTrace& raw, const PulseSequence& seq);

/// sum_polarization followed by division by first_pulse_peak.
SignalTrace accumulate_polarization(const std::vector<AtomSeries>& series,
                                    const std::vector<double>& weights, const PulseSequence& seq);

struct RunOptions {
    double sample_dt = 2e-14;
    std::size_t threads = 1;
    Stepping stepping = Stepping::propagator;
};

struct EnsembleDiagnostics {
    double max_hermiticity_defect = 0.0;
    double min_eigenvalue = 0.0;       // over all atoms and checked samples
    double weighted_final_trace = 0.0;
    double trace_loss = 0.0;           // 1 - weighted_final_trace
    bool positivity_violated = false;  // min_eigenvalue < -1e-9
    double normalization = 1.0;        // the P0 scale that was divided out
};

struct EnsembleResult {
    SignalTrace trace;
    EnsembleDiagnostics diagnostics;
};

/// Runs every member from the ground state (rho_22 = 1) on the grid covering
/// [0, seq.t_end] and accumulates the normalized polarization. The result is
/// bitwise independent of `options.threads`.
EnsembleResult simulate_ensemble(const SystemParams& params, const PulseSequence& seq,
                                 const EnsembleSpec& spec, const RunOptions& options);

/// Runs `task(i)` for i in [0, n) on `threads` workers. Exceptions are
/// rethrown (the one with the lowest index) after all workers finish.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& task);

/// Half-width T* of the echo envelope exp(-((t - t_c)/T*)^2) produced by a
/// Gaussian delta12 distribution of width sigma: sqrt(2) omega12 / (omega23 sigma).
double echo_half_width(double sigma_doppler, const SystemParams& params);

enum class EnvelopeForm {
    gaussian,        // P0 exp(-((t - t_c)/T*)^2)
    signed_exponent, // P0 exp(-(t - t_c)/T*), literal form; diverges for t < t_c
};

/// Closed-form echo envelope centred at t_c = t0 + (omega12/omega23) t12.
double analytic_envelope(double t, double t0, double t12, const SystemParams& params, double t_star,
                         EnvelopeForm form = EnvelopeForm::gaussian, double p0 = 1.0);

/// Inhomogeneous detuning distribution f(dw).
class DetuningDistribution {
public:
    static DetuningDistribution gaussian(double sigma);
    static DetuningDistribution delta();
    /// Arbitrary density, evaluated in double precision; `width` is its scale.
    static DetuningDistribution custom(std::function<double(double)> density, double width);

    enum class Kind { gaussian, delta, custom };
    Kind kind() const { return kind_; }
    double width() const { return width_; }
    double operator()(double dw) const;

private:
    Kind kind_ = Kind::delta;
    double width_ = 0.0;
    std::function<double(double)> density_;
};

/// -P0 * integral cos(dw (t - t_ref)) f(dw) d(dw), by trapezoidal quadrature
/// over a window of at least +-12 widths, refined until successive estimates
/// agree to 1e-10 relative. The Gaussian case runs in binary128 arithmetic so
/// the relative accuracy holds deep into the dephased tail. Throws
/// ConfigError if f does not integrate to one.
double gaussian_average_integral(double t, double t_ref, const DetuningDistribution& f, double p0 = 1.0);

} // namespace pecho
