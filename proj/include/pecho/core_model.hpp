#pragma once

// Physical parameter types, the single-atom density matrix and validation.
//
// Level labels follow the {1, 2, 3} convention with level 2 the common
// ground state: the probe field drives 1 <-> 2 and the coupling field drives
// 2 <-> 3. Storage is row-major with index 0 <-> level 1.

#include <array>
#include <complex>
#include <cstddef>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace pecho {

using cplx = std::complex<double>;

/// Base class for everything this library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or violated type invariant.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Failure of a numerical routine (step too large, non-finite state, no peak).
class NumericalError : public Error {
public:
    using Error::Error;
};

/// File-system or stream failure.
class IoError : public Error {
public:
    using Error::Error;
};

/// Splitting between the two quasi-degenerate levels. Either a finite
/// angular frequency (rad/s) or the infinite limit, in which the 1 <-> 3
/// coherence is held at zero.
class Splitting {
public:
    constexpr Splitting() = default;
    static constexpr Splitting finite(double d) { return Splitting(d, false); }
    static constexpr Splitting infinite() { return Splitting(0.0, true); }

    constexpr bool is_infinite() const { return infinite_; }
    /// Finite value; 0 in the infinite mode.
    constexpr double value() const { return infinite_ ? 0.0 : value_; }

    friend constexpr bool operator==(const Splitting&, const Splitting&) = default;

private:
    constexpr Splitting(double d, bool inf) : value_(d), infinite_(inf) {}
    double value_ = 0.0;
    bool infinite_ = false;
};

/// How the coherent field terms of the equations of motion are written.
///
/// `consistent` derives every field term from one rotating-frame Hamiltonian
/// (commutator form), so the coherent part conserves trace and Hermiticity.
/// `verbatim` reproduces the literal six-equation system term by term,
/// including its cross-transition population couplings.
enum class CouplingForm { consistent, verbatim };

struct SystemParams {
    double omega12 = 0.0;         // rad/s, transition 2 <-> 1
    double omega23 = 0.0;         // rad/s, transition 2 <-> 3
    double gamma1 = 0.0;          // 1/s, population half-rates (emission 2*gamma)
    double gamma2 = 0.0;
    double gamma3 = 0.0;
    double gamma12 = 0.0;         // 1/s, coherence decay rate of the decay law
    double capital_gamma = 0.0;   // 1/s, homogeneous broadening
    double capital_gamma13 = 0.0; // 1/s, 1 <-> 3 coherence broadening
    double lambda_pump = 0.0;     // 1/s, incoherent pump
    Splitting d_split{};          // rad/s
    double V = 0.0;               // rad/s, medium-field constant, on during pulses
    CouplingForm coupling_form = CouplingForm::consistent;
};

enum class Transition { probe_12, coupling_23 };

const char* to_string(Transition t);
Transition transition_from_string(const std::string& s);

struct Pulse {
    double start = 0.0;          // s
    double duration = 0.0;       // s
    Transition transition = Transition::probe_12;
    double rabi_amplitude = 0.0; // g0, rad/s
    double phase = 0.0;          // rad
    double detuning = 0.0;       // rad/s, laboratory-frame detuning of the field

    double end() const { return start + duration; }
    /// Complex Rabi frequency g0 * exp(i phase).
    cplx rabi() const { return std::polar(rabi_amplitude, phase); }
};

struct PulseSequence {
    std::vector<Pulse> pulses;
    double t0 = 0.0;    // reference time of the rephasing emission (s)
    double t12 = 0.0;   // delay between the first and second probe pulse (s)
    double t_end = 0.0; // simulation horizon (s)
};

/// 3x3 complex density matrix of one atom.
class DensityMatrix {
public:
    DensityMatrix() { data_.fill(cplx{}); }
    explicit DensityMatrix(const std::array<cplx, 9>& data) : data_(data) {}

    /// Pure population in one level (1-based label).
    static DensityMatrix population(int level);

    /// Access by 1-based level labels, matching rho_ij.
    cplx& operator()(int i, int j) { return data_[index(i, j)]; }
    const cplx& operator()(int i, int j) const { return data_[index(i, j)]; }

    const std::array<cplx, 9>& data() const { return data_; }
    std::array<cplx, 9>& data() { return data_; }

    cplx trace() const { return data_[0] + data_[4] + data_[8]; }
    DensityMatrix adjoint() const;

    /// max_ij |rho_ij - conj(rho_ji)|
    double hermiticity_defect() const;
    bool all_finite() const;

    DensityMatrix& operator+=(const DensityMatrix& o);
    DensityMatrix& operator-=(const DensityMatrix& o);
    DensityMatrix& operator*=(cplx s);
    friend DensityMatrix operator+(DensityMatrix a, const DensityMatrix& b) { return a += b; }
    friend DensityMatrix operator-(DensityMatrix a, const DensityMatrix& b) { return a -= b; }
    friend DensityMatrix operator*(cplx s, DensityMatrix a) { return a *= s; }
    friend DensityMatrix operator*(double s, DensityMatrix a) { return a *= cplx(s); }
    friend bool operator==(const DensityMatrix&, const DensityMatrix&) = default;

    /// max_ij |a_ij - b_ij|
    friend double max_abs_diff(const DensityMatrix& a, const DensityMatrix& b);

private:
    static std::size_t index(int i, int j);
    std::array<cplx, 9> data_;
};

/// Smallest eigenvalue of the Hermitian part of rho.
double min_eigenvalue(const DensityMatrix& rho);

/// Returns (rho + rho^dagger) / 2 with exactly real diagonal.
/// Throws NumericalError on a non-finite entry.
DensityMatrix hermitize(const DensityMatrix& rho);

/// Checks every invariant of `params` and `seq`; throws ConfigError naming
/// the first violation (e.g. "gamma1 negative", "overlap on probe_12").
void validate(const SystemParams& params, const PulseSequence& seq);
void validate(const SystemParams& params);

/// Uniformly sampled complex macroscopic polarization.
struct SignalTrace {
    std::vector<double> t_grid;
    std::vector<cplx> polarization;
    std::vector<double> intensity;

    std::size_t size() const { return t_grid.size(); }
    double dt() const { return t_grid.size() > 1 ? t_grid[1] - t_grid[0] : 0.0; }

    /// Builds a trace with intensity = |P|^2.
    static SignalTrace from_polarization(std::vector<double> t, std::vector<cplx> p);
};

/// Throws ConfigError unless the grid is strictly increasing and uniform to a
/// relative tolerance and every intensity equals |P|^2.
void check_trace(const SignalTrace& trace);

} // namespace pecho
