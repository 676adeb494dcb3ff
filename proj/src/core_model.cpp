#include "pecho/core_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace pecho {

const char* to_string(Transition t)
{
    return t == Transition::probe_12 ? "probe_12" : "coupling_23";
}

Transition transition_from_string(const std::string& s)
{
    if (s == "probe_12") return Transition::probe_12;
    if (s == "coupling_23") return Transition::coupling_23;
    throw ConfigError("unknown transition '" + s + "' (expected probe_12 or coupling_23)");
}

std::size_t DensityMatrix::index(int i, int j)
{
    return static_cast<std::size_t>((i - 1) * 3 + (j - 1));
}

DensityMatrix DensityMatrix::population(int level)
{
    DensityMatrix rho;
    rho(level, level) = 1.0;
    return rho;
}

DensityMatrix DensityMatrix::adjoint() const
{
    DensityMatrix out;
    for (int i = 1; i <= 3; ++i)
        for (int j = 1; j <= 3; ++j) out(i, j) = std::conj((*this)(j, i));
    return out;
}

double DensityMatrix::hermiticity_defect() const
{
    double worst = 0.0;
    for (int i = 1; i <= 3; ++i)
        for (int j = i; j <= 3; ++j)
            worst = std::max(worst, std::abs((*this)(i, j) - std::conj((*this)(j, i))));
    return worst;
}

bool DensityMatrix::all_finite() const
{
    return std::all_of(data_.begin(), data_.end(), [](const cplx& z) {
        return std::isfinite(z.real()) && std::isfinite(z.imag());
    });
}

DensityMatrix& DensityMatrix::operator+=(const DensityMatrix& o)
{
    for (std::size_t k = 0; k < 9; ++k) data_[k] += o.data_[k];
    return *this;
}

DensityMatrix& DensityMatrix::operator-=(const DensityMatrix& o)
{
    for (std::size_t k = 0; k < 9; ++k) data_[k] -= o.data_[k];
    return *this;
}

DensityMatrix& DensityMatrix::operator*=(cplx s)
{
    for (auto& z : data_) z *= s;
    return *this;
}

double max_abs_diff(const DensityMatrix& a, const DensityMatrix& b)
{
    double worst = 0.0;
    for (std::size_t k = 0; k < 9; ++k) worst = std::max(worst, std::abs(a.data_[k] - b.data_[k]));
    return worst;
}

double min_eigenvalue(const DensityMatrix& rho)
{
    const DensityMatrix h = hermitize(rho);
    const double a = h(1, 1).real(), b = h(2, 2).real(), c = h(3, 3).real();
    const cplx x = h(1, 2), y = h(1, 3), z = h(2, 3);

    // Characteristic polynomial lambda^3 - p2 lambda^2 + p1 lambda - p0.
    const double p2 = a + b + c;
    const double p1 = a * b + a * c + b * c - std::norm(x) - std::norm(y) - std::norm(z);
    const double p0 = a * b * c + 2.0 * (x * z * std::conj(y)).real() - a * std::norm(z) -
                      b * std::norm(y) - c * std::norm(x);

    // Depressed cubic in mu = lambda - p2/3: mu^3 + p mu + q = 0, three real roots.
    const double shift = p2 / 3.0;
    const double p = p1 - p2 * p2 / 3.0;
    const double q = -2.0 * p2 * p2 * p2 / 27.0 + p2 * p1 / 3.0 - p0;
    if (p >= 0.0) return shift; // triple root
    const double m = 2.0 * std::sqrt(-p / 3.0);
    const double arg = std::clamp(3.0 * q / (p * m), -1.0, 1.0);
    const double theta = std::acos(arg) / 3.0;
    double lo = shift + m * std::cos(theta);
    for (int k = 1; k < 3; ++k)
        lo = std::min(lo, shift + m * std::cos(theta - 2.0 * std::numbers::pi * k / 3.0));
    return lo;
}

DensityMatrix hermitize(const DensityMatrix& rho)
{
    if (!rho.all_finite()) throw NumericalError("hermitize: non-finite density-matrix entry");
    DensityMatrix out;
    for (int i = 1; i <= 3; ++i) {
        out(i, i) = rho(i, i).real();
        for (int j = i + 1; j <= 3; ++j) {
            const cplx upper = 0.5 * (rho(i, j) + std::conj(rho(j, i)));
            out(i, j) = upper;
            out(j, i) = std::conj(upper);
        }
    }
    return out;
}

namespace {

void require_rate(double value, const char* name)
{
    if (!std::isfinite(value)) throw ConfigError(std::string(name) + " not finite");
    if (value < 0.0) throw ConfigError(std::string(name) + " negative");
}

} // namespace

void validate(const SystemParams& p)
{
    if (!(p.omega12 > 0.0) || !std::isfinite(p.omega12)) throw ConfigError("omega12 must be positive");
    if (!(p.omega23 > 0.0) || !std::isfinite(p.omega23)) throw ConfigError("omega23 must be positive");
    require_rate(p.gamma1, "gamma1");
    require_rate(p.gamma2, "gamma2");
    require_rate(p.gamma3, "gamma3");
    require_rate(p.gamma12, "gamma12");
    require_rate(p.capital_gamma, "capital_gamma");
    require_rate(p.capital_gamma13, "capital_gamma13");
    require_rate(p.lambda_pump, "lambda_pump");
    if (!p.d_split.is_infinite()) require_rate(p.d_split.value(), "d_split");
    if (!std::isfinite(p.V)) throw ConfigError("V not finite");
}

void validate(const SystemParams& params, const PulseSequence& seq)
{
    validate(params);

    const auto& pulses = seq.pulses;
    for (std::size_t k = 0; k < pulses.size(); ++k) {
        const Pulse& pk = pulses[k];
        const std::string tag = "pulse " + std::to_string(k);
        if (!std::isfinite(pk.start)) throw ConfigError(tag + ": start not finite");
        if (!(pk.duration > 0.0) || !std::isfinite(pk.duration))
            throw ConfigError(tag + ": duration must be positive");
        if (!(pk.rabi_amplitude >= 0.0) || !std::isfinite(pk.rabi_amplitude))
            throw ConfigError(tag + ": rabi_amplitude negative");
        if (!std::isfinite(pk.phase)) throw ConfigError(tag + ": phase not finite");
        if (!std::isfinite(pk.detuning)) throw ConfigError(tag + ": detuning not finite");
        if (k > 0 && pk.start < pulses[k - 1].start)
            throw ConfigError("pulses not sorted by start (" + tag + ")");
    }
    for (std::size_t a = 0; a < pulses.size(); ++a) {
        for (std::size_t b = a + 1; b < pulses.size(); ++b) {
            if (pulses[a].transition != pulses[b].transition) continue;
            if (pulses[b].start < pulses[a].end())
                throw ConfigError(std::string("overlap on ") + to_string(pulses[a].transition));
            // One rotating frame per transition.
            if (pulses[a].detuning != pulses[b].detuning)
                throw ConfigError(std::string("inconsistent detuning on ") +
                                  to_string(pulses[a].transition));
        }
    }

    if (!(seq.t12 > 0.0) || !std::isfinite(seq.t12)) throw ConfigError("t12 must be positive");
    if (!std::isfinite(seq.t0)) throw ConfigError("t0 not finite");
    if (!(seq.t_end > seq.t0 + seq.t12) || !std::isfinite(seq.t_end))
        throw ConfigError("t_end must exceed t0 + t12");
}

SignalTrace SignalTrace::from_polarization(std::vector<double> t, std::vector<cplx> p)
{
    if (t.size() != p.size()) throw ConfigError("trace: time and polarization lengths differ");
    SignalTrace trace;
    trace.intensity.reserve(p.size());
    for (const cplx& z : p) trace.intensity.push_back(std::norm(z));
    trace.t_grid = std::move(t);
    trace.polarization = std::move(p);
    return trace;
}

void check_trace(const SignalTrace& trace)
{
    const std::size_t n = trace.t_grid.size();
    if (trace.polarization.size() != n || trace.intensity.size() != n)
        throw ConfigError("trace: column lengths differ");
    if (n >= 2) {
        const double step = trace.t_grid[1] - trace.t_grid[0];
        if (!(step > 0.0)) throw ConfigError("trace: time grid not increasing");
        for (std::size_t k = 1; k < n; ++k) {
            const double s = trace.t_grid[k] - trace.t_grid[k - 1];
            if (!(s > 0.0)) throw ConfigError("trace: time grid not increasing");
            if (std::abs(s - step) > 1e-6 * step) throw ConfigError("trace: time grid not uniform");
        }
    }
    for (std::size_t k = 0; k < n; ++k)
        if (trace.intensity[k] != std::norm(trace.polarization[k]))
            throw ConfigError("trace: intensity differs from |P|^2 at row " + std::to_string(k));
}

} // namespace pecho
