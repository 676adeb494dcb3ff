#include "pecho/ensemble.hpp"

#include <quadmath.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numbers>
#include <random>
#include <thread>

namespace pecho {

const char* to_string(SamplingScheme s)
{
    switch (s) {
    case SamplingScheme::uniform_grid: return "uniform_grid";
    case SamplingScheme::gauss_hermite: return "gauss_hermite";
    case SamplingScheme::monte_carlo: return "monte_carlo";
    }
    return "?";
}

SamplingScheme sampling_scheme_from_string(const std::string& s)
{
    if (s == "uniform_grid") return SamplingScheme::uniform_grid;
    if (s == "gauss_hermite") return SamplingScheme::gauss_hermite;
    if (s == "monte_carlo") return SamplingScheme::monte_carlo;
    throw ConfigError("unknown sampling scheme '" + s + "'");
}

void validate(const EnsembleSpec& spec)
{
    if (spec.n_atoms == 0) throw ConfigError("n_atoms must be at least 1");
    if (!(spec.sigma_doppler >= 0.0) || !std::isfinite(spec.sigma_doppler))
        throw ConfigError("sigma_doppler negative");
    if (!(spec.t_star >= 0.0) || !std::isfinite(spec.t_star)) throw ConfigError("t_star negative");
    if (!(spec.grid_span > 0.0) || !std::isfinite(spec.grid_span))
        throw ConfigError("grid_span must be positive");
}

void gauss_hermite_rule(std::size_t n, std::vector<double>& nodes, std::vector<double>& weights)
{
    nodes.assign(n, 0.0);
    weights.assign(n, 0.0);
    if (n == 0) return;
    const double pim4 = 1.0 / std::pow(std::numbers::pi, 0.25);
    const std::size_t m = (n + 1) / 2;
    const auto nd = static_cast<double>(n);
    double z = 0.0;
    std::vector<double> x(n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        // Asymptotic starting guesses for the largest roots, then extrapolation.
        if (i == 0)
            z = std::sqrt(2.0 * nd + 1.0) - 1.85575 * std::pow(2.0 * nd + 1.0, -0.16667);
        else if (i == 1)
            z -= 1.14 * std::pow(nd, 0.426) / z;
        else if (i == 2)
            z = 1.86 * z - 0.86 * x[0];
        else if (i == 3)
            z = 1.91 * z - 0.91 * x[1];
        else
            z = 2.0 * z - x[i - 2];

        double pp = 1.0;
        for (int it = 0; it < 200; ++it) {
            // Orthonormal Hermite recurrence.
            double p1 = pim4, p2 = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double p3 = p2;
                p2 = p1;
                const auto jd = static_cast<double>(j);
                p1 = z * std::sqrt(2.0 / (jd + 1.0)) * p2 - std::sqrt(jd / (jd + 1.0)) * p3;
            }
            pp = std::sqrt(2.0 * nd) * p2;
            const double z1 = z;
            z = z1 - p1 / pp;
            if (std::abs(z - z1) <= 1e-15 * std::max(1.0, std::abs(z))) break;
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    if (n % 2 == 1) x[m - 1] = 0.0;
    // Ascending order.
    for (std::size_t i = 0; i < n; ++i) nodes[i] = x[n - 1 - i];
    std::reverse(weights.begin(), weights.end());
}

std::vector<WeightedAtom> sample_detunings(const EnsembleSpec& spec, const SystemParams& params)
{
    validate(spec);
    const std::size_t n = spec.n_atoms;
    const double sigma = spec.sigma_doppler;
    std::vector<double> d12(n, 0.0), w(n, 1.0);

    switch (spec.scheme) {
    case SamplingScheme::uniform_grid:
        if (n > 1 && sigma > 0.0) {
            const double half = spec.grid_span * sigma;
            for (std::size_t k = 0; k < n; ++k) {
                d12[k] = -half + 2.0 * half * static_cast<double>(k) / static_cast<double>(n - 1);
                const double u = d12[k] / sigma;
                w[k] = std::exp(-0.5 * u * u);
            }
        }
        break;
    case SamplingScheme::gauss_hermite: {
        std::vector<double> x, gw;
        gauss_hermite_rule(n, x, gw);
        for (std::size_t k = 0; k < n; ++k) {
            d12[k] = std::numbers::sqrt2 * sigma * x[k];
            w[k] = gw[k];
        }
        break;
    }
    case SamplingScheme::monte_carlo: {
        std::mt19937_64 rng(spec.seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (std::size_t k = 0; k < n; ++k) d12[k] = sigma * normal(rng);
        break;
    }
    }

    double total = 0.0;
    for (double x : w) total += x;

    const double ratio = params.omega23 / params.omega12;
    std::mt19937_64 rng23(spec.seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> normal(0.0, 1.0);

    std::vector<WeightedAtom> atoms(n);
    for (std::size_t k = 0; k < n; ++k) {
        WeightedAtom& a = atoms[k];
        a.ctx.delta12 = d12[k];
        a.ctx.delta23 = spec.ratio_lock ? d12[k] * ratio : sigma * ratio * normal(rng23);
        a.ctx.velocity = d12[k] * speed_of_light / params.omega12;
        a.weight = w[k] / total;
    }
    return atoms;
}

cplx pairwise_sum(const cplx* values, std::size_t n)
{
    if (n == 0) return {};
    if (n == 1) return values[0];
    const std::size_t half = n / 2;
    return pairwise_sum(values, half) + pairwise_sum(values + half, n - half);
}

SignalTrace sum_polarization(const std::vector<AtomSeries>& series, const std::vector<double>& weights)
{
    if (series.empty()) throw ConfigError("accumulate: no trajectories");
    if (series.size() != weights.size()) throw ConfigError("accumulate: weight count mismatch");
    const std::vector<double>& grid = series.front().t_grid;
    for (const AtomSeries& s : series) {
        if (s.t_grid != grid || s.rho23.size() != grid.size())
            throw ConfigError("accumulate: mismatched time grids");
    }
    std::vector<cplx> p(grid.size());
    std::vector<cplx> terms(series.size());
    for (std::size_t k = 0; k < grid.size(); ++k) {
        for (std::size_t i = 0; i < series.size(); ++i) terms[i] = weights[i] * series[i].rho23[k];
        p[k] = pairwise_sum(terms.data(), terms.size());
    }
    return SignalTrace::from_polarization(grid, std::move(p));
}

double first_pulse_peak(const SignalTrace& raw, const PulseSequence& seq)
{
    if (seq.pulses.empty() || raw.size() == 0) return 1.0;
    std::vector<Pulse> pulses = seq.pulses;
    std::sort(pulses.begin(), pulses.end(), [](const Pulse& a, const Pulse& b) { return a.start < b.start; });

    double group_end = pulses.front().end();
    std::size_t k = 1;
    while (k < pulses.size() && pulses[k].start <= group_end) group_end = std::max(group_end, pulses[k++].end());
    const double gap_end = k < pulses.size() ? pulses[k].start : raw.t_grid.back() + raw.dt();

    double peak = 0.0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const double t = raw.t_grid[i];
        if (t >= group_end && t < gap_end) peak = std::max(peak, std::abs(raw.polarization[i]));
    }
    return peak > 0.0 ? peak : 1.0;
}

SignalTrace accumulate_polarization(const std::vector<AtomSeries>& series,
                                    const std::vector<double>& weights, const PulseSequence& seq)
{
    SignalTrace raw = sum_polarization(series, weights);
    const double scale = first_pulse_peak(raw, seq);
    for (cplx& z : raw.polarization) z /= scale;
    return SignalTrace::from_polarization(std::move(raw.t_grid), std::move(raw.polarization));
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& task)
{
    threads = std::max<std::size_t>(1, std::min(threads, n));
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                task(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(threads);
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

EnsembleResult simulate_ensemble(const SystemParams& params, const PulseSequence& seq,
                                 const EnsembleSpec& spec, const RunOptions& options)
{
    validate(params, seq);
    const std::vector<WeightedAtom> atoms = sample_detunings(spec, params);
    const SampleGrid grid = SampleGrid::covering(seq.t_end, options.sample_dt);
    const std::vector<double> times = grid.times();

    std::vector<AtomSeries> series(atoms.size());
    std::vector<AtomDiagnostics> diags(atoms.size());
    const DensityMatrix ground = DensityMatrix::population(2);

    parallel_for(atoms.size(), options.threads, [&](std::size_t i) {
        AtomSeries& s = series[i];
        s.t_grid = times;
        s.rho23.resize(grid.count);
        diags[i] = integrate_sampled(ground, seq, params, atoms[i].ctx, grid, options.stepping,
                                     [&](std::size_t k, const DensityMatrix& rho) { s.rho23[k] = rho(2, 3); });
    });

    std::vector<double> weights(atoms.size());
    for (std::size_t i = 0; i < atoms.size(); ++i) weights[i] = atoms[i].weight;

    EnsembleResult result;
    SignalTrace raw = sum_polarization(series, weights);
    const double scale = first_pulse_peak(raw, seq);
    for (cplx& z : raw.polarization) z /= scale;
    result.trace = SignalTrace::from_polarization(std::move(raw.t_grid), std::move(raw.polarization));

    EnsembleDiagnostics& d = result.diagnostics;
    d.normalization = scale;
    d.min_eigenvalue = std::numeric_limits<double>::infinity();
    std::vector<cplx> traces(atoms.size());
    for (std::size_t i = 0; i < atoms.size(); ++i) {
        d.max_hermiticity_defect = std::max(d.max_hermiticity_defect, diags[i].max_hermiticity_defect);
        d.min_eigenvalue = std::min(d.min_eigenvalue, diags[i].min_eigenvalue);
        traces[i] = weights[i] * diags[i].final_trace;
    }
    d.weighted_final_trace = pairwise_sum(traces.data(), traces.size()).real();
    d.trace_loss = 1.0 - d.weighted_final_trace;
    d.positivity_violated = d.min_eigenvalue < -1e-9;
    return result;
}

double echo_half_width(double sigma_doppler, const SystemParams& params)
{
    if (!(sigma_doppler > 0.0)) throw ConfigError("echo_half_width: sigma must be positive");
    return std::numbers::sqrt2 * params.omega12 / (params.omega23 * sigma_doppler);
}

double analytic_envelope(double t, double t0, double t12, const SystemParams& params, double t_star,
                         EnvelopeForm form, double p0)
{
    if (!(t_star > 0.0)) throw ConfigError("analytic_envelope: t_star must be positive");
    const double centre = t0 + params.omega12 / params.omega23 * t12;
    const double u = (t - centre) / t_star;
    if (form == EnvelopeForm::signed_exponent) return p0 * std::exp(-u);
    return p0 * std::exp(-u * u);
}

DetuningDistribution DetuningDistribution::gaussian(double sigma)
{
    if (!(sigma > 0.0)) throw ConfigError("gaussian distribution: sigma must be positive");
    DetuningDistribution d;
    d.kind_ = Kind::gaussian;
    d.width_ = sigma;
    return d;
}

DetuningDistribution DetuningDistribution::delta()
{
    return DetuningDistribution{};
}

DetuningDistribution DetuningDistribution::custom(std::function<double(double)> density, double width)
{
    if (!density) throw ConfigError("custom distribution: empty density");
    if (!(width > 0.0)) throw ConfigError("custom distribution: width must be positive");
    DetuningDistribution d;
    d.kind_ = Kind::custom;
    d.width_ = width;
    d.density_ = std::move(density);
    return d;
}

double DetuningDistribution::operator()(double dw) const
{
    switch (kind_) {
    case Kind::gaussian: {
        const double u = dw / width_;
        return std::exp(-0.5 * u * u) / (width_ * std::sqrt(2.0 * std::numbers::pi));
    }
    case Kind::delta: return dw == 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    case Kind::custom: return density_(dw);
    }
    return 0.0;
}

namespace {

constexpr double window_widths = 13.0;
constexpr double relative_tol = 1e-10;

// Trapezoid sum of cos(u * phase) * phi(u) over u in [-L, L], phi the unit
// normal density, in binary128.
__float128 gaussian_trapezoid(__float128 phase, std::size_t intervals)
{
    const __float128 L = window_widths;
    const __float128 h = 2 * L / static_cast<__float128>(intervals);
    const __float128 norm = 1 / sqrtq(2 * acosq(-1));
    __float128 acc = 0;
    for (std::size_t k = 0; k <= intervals; ++k) {
        const __float128 u = -L + h * static_cast<__float128>(k);
        __float128 term = cosq(u * phase) * expq(-u * u / 2) * norm;
        if (k == 0 || k == intervals) term /= 2;
        acc += term;
    }
    return acc * h;
}

double gaussian_integral(double phase)
{
    std::size_t n = 64;
    __float128 prev = gaussian_trapezoid(phase, n);
    for (int iter = 0; iter < 14; ++iter) {
        n *= 2;
        const __float128 cur = gaussian_trapezoid(phase, n);
        const __float128 diff = fabsq(cur - prev);
        if (diff <= relative_tol * fabsq(cur) || diff <= 1e-32) return static_cast<double>(cur);
        prev = cur;
    }
    throw NumericalError("gaussian_average_integral: quadrature did not converge");
}

double custom_trapezoid(const DetuningDistribution& f, double s, std::size_t intervals, bool weighted)
{
    const double L = window_widths * f.width();
    const double h = 2.0 * L / static_cast<double>(intervals);
    double acc = 0.0;
    for (std::size_t k = 0; k <= intervals; ++k) {
        const double x = -L + h * static_cast<double>(k);
        double term = f(x) * (weighted ? std::cos(x * s) : 1.0);
        if (k == 0 || k == intervals) term *= 0.5;
        acc += term;
    }
    return acc * h;
}

double custom_integral(const DetuningDistribution& f, double s, bool weighted)
{
    std::size_t n = 256;
    double prev = custom_trapezoid(f, s, n, weighted);
    for (int iter = 0; iter < 16; ++iter) {
        n *= 2;
        const double cur = custom_trapezoid(f, s, n, weighted);
        if (std::abs(cur - prev) <= relative_tol * std::abs(cur) || std::abs(cur - prev) <= 1e-15)
            return cur;
        prev = cur;
    }
    throw NumericalError("gaussian_average_integral: quadrature did not converge");
}

} // namespace

double gaussian_average_integral(double t, double t_ref, const DetuningDistribution& f, double p0)
{
    const double s = t - t_ref;
    switch (f.kind()) {
    case DetuningDistribution::Kind::delta: return -p0;
    case DetuningDistribution::Kind::gaussian: return -p0 * gaussian_integral(s * f.width());
    case DetuningDistribution::Kind::custom: {
        const double mass = custom_integral(f, 0.0, false);
        if (std::abs(mass - 1.0) > 1e-6)
            throw ConfigError("gaussian_average_integral: distribution not normalized (integral " +
                              std::to_string(mass) + ")");
        return -p0 * custom_integral(f, s, true);
    }
    }
    return 0.0;
}

} // namespace pecho
