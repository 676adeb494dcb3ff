#pragma once

// Equations of motion for one three-level atom under rectangular pulses and
// a fixed-step classical Runge-Kutta integrator over a pulse sequence.

#include "pecho/core_model.hpp"

#include <array>
#include <functional>
#include <vector>

namespace pecho {

/// Per-atom detunings (rad/s). Doppler shift k*v included.
struct AtomContext {
    double delta12 = 0.0;
    double delta23 = 0.0;
    double velocity = 0.0; // m/s, bookkeeping only
};

/// Field configuration that is constant over one integration piece.
struct ActiveFields {
    cplx g_p{};               // probe Rabi frequency, 1 <-> 2
    cplx G_c{};               // coupling Rabi frequency, 2 <-> 3
    double V = 0.0;           // medium-field constant (on while any pulse is on)
    double probe_frame = 0.0; // laboratory detuning of the probe field
    double coupling_frame = 0.0;

    friend bool operator==(const ActiveFields&, const ActiveFields&) = default;
};

/// Fields active at time t: pulse k is on over [start, start + duration).
ActiveFields fields_at(const PulseSequence& seq, const SystemParams& params, double t);

/// Rotating-frame detunings seen by one atom.
///
/// In the consistent form the level energies are E1 = delta1, E2 = 0 and
/// E3 = delta2 + d. The literal equations also use a third detuning that is
/// never defined; it is mapped to delta3 = delta1 + delta2.
struct Detunings {
    double delta1 = 0.0;
    double delta2 = 0.0;
    double delta3 = 0.0;
};
Detunings detunings_for(const ActiveFields& f, const AtomContext& ctx);

/// Time derivative of rho. Only the upper triangle is evaluated; the lower
/// triangle is its conjugate. Throws NumericalError when the splitting is in
/// the infinite mode and rho_13 is non-zero.
DensityMatrix rhs(const DensityMatrix& rho, const SystemParams& params, const ActiveFields& fields,
                  const AtomContext& ctx);

/// Largest admissible step: (1/50) / max(|detunings|, |g_p|, |G_c|, |V|,
/// finite d, all rates). With no frequency scale at all the bound is infinite.
double dt_max(const SystemParams& params, const ActiveFields& fields, const AtomContext& ctx);

/// One classical RK4 step followed by hermitize. Throws NumericalError
/// "step too large" if dt > dt_max.
DensityMatrix step_rk4(const DensityMatrix& rho, double dt, const SystemParams& params,
                       const ActiveFields& fields, const AtomContext& ctx);

struct Trajectory {
    std::vector<double> t_grid;
    std::vector<DensityMatrix> states;
};

/// Integrates from t = 0 to seq.t_end with a fixed step dt (shortened only to
/// land on pulse edges and the horizon) and stores every `sample_stride`-th
/// step. Sampling starts at t = 0. Throws on dt > dt_max anywhere.
Trajectory integrate_sequence(const DensityMatrix& rho0, const PulseSequence& seq,
                              const SystemParams& params, const AtomContext& ctx, double dt,
                              std::size_t sample_stride = 1);

/// Uniform output grid t_k = t_start + k * dt, k = 0 .. count-1.
struct SampleGrid {
    double t_start = 0.0;
    double dt = 0.0;
    std::size_t count = 0;

    double at(std::size_t k) const { return t_start + static_cast<double>(k) * dt; }
    std::vector<double> times() const;
    /// Grid covering [0, t_end] with spacing dt.
    static SampleGrid covering(double t_end, double dt);
};

enum class Stepping {
    literal,    // step_rk4 on every piece
    propagator, // the same RK4 polynomial applied as a cached real 9x9 matrix
};

/// Per-atom health figures gathered while integrating.
struct AtomDiagnostics {
    double max_hermiticity_defect = 0.0;
    double min_eigenvalue = 0.0; // smallest eigenvalue over the stored samples
    double final_trace = 1.0;
};

/// Integrates over `grid`, subdividing each sample interval (and each piece
/// between pulse edges) into the fewest equal steps that respect dt_max.
/// `observe(k, rho)` is called for every sample k.
AtomDiagnostics integrate_sampled(const DensityMatrix& rho0, const PulseSequence& seq,
                                  const SystemParams& params, const AtomContext& ctx,
                                  const SampleGrid& grid, Stepping stepping,
                                  const std::function<void(std::size_t, const DensityMatrix&)>& observe);

enum class PhaseLevel { level2 = 2, level3 = 3 };

/// Closed-form free-evolution phase shifts of a moving atom:
/// level 3: (T - t0) (omega12 - omega23) v / c;
/// level 2: (v omega12 / c) (T - t12).
double free_phase_shift(PhaseLevel level, const SystemParams& params, double velocity, double t0,
                        double t12, double T);

inline constexpr double speed_of_light = 299792458.0;

} // namespace pecho
