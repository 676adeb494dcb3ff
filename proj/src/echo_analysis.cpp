#include "pecho/echo_analysis.hpp"

#include <fftw3.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <mutex>
#include <numbers>
#include <sstream>

namespace pecho {

double predict_echo_time(double t0, double t12, double omega12, double omega23)
{
    if (!(omega23 > 0.0)) throw ConfigError("omega23 must be positive");
    return t0 + (omega12 / omega23) * t12;
}

namespace {

// Index range [lo, hi) of samples inside [t_a, t_b].
std::pair<std::size_t, std::size_t> window_indices(const std::vector<double>& t, double t_a, double t_b)
{
    const auto lo = std::lower_bound(t.begin(), t.end(), t_a);
    const auto hi = std::upper_bound(t.begin(), t.end(), t_b);
    const auto a = static_cast<std::size_t>(lo - t.begin());
    const auto b = static_cast<std::size_t>(hi - t.begin());
    return {a, std::max(a, b)};
}

} // namespace

EchoPeak detect_echo_peak(const SignalTrace& trace, double t_a, double t_b)
{
    const auto [lo, hi] = window_indices(trace.t_grid, t_a, t_b);
    if (hi - lo < 3) throw NumericalError("no interior peak: search window holds fewer than 3 samples");
    std::size_t k = lo;
    for (std::size_t i = lo + 1; i < hi; ++i)
        if (trace.intensity[i] > trace.intensity[k]) k = i;
    if (k == lo || k == hi - 1) throw NumericalError("no interior peak: maximum on the window boundary");

    const double y0 = trace.intensity[k - 1], y1 = trace.intensity[k], y2 = trace.intensity[k + 1];
    const double curv = y0 - 2.0 * y1 + y2;
    double shift = 0.0;
    if (curv < 0.0) shift = std::clamp(0.5 * (y0 - y2) / curv, -0.5, 0.5);
    const double h = trace.t_grid[k + 1] - trace.t_grid[k];

    EchoPeak peak;
    peak.index = k;
    peak.time = trace.t_grid[k] + shift * h;
    peak.intensity = y1 - 0.25 * (y0 - y2) * shift;
    return peak;
}

TimeWindow echo_search_window(const PulseSequence& seq)
{
    double last = 0.0;
    for (const Pulse& p : seq.pulses) last = std::max(last, p.end());
    return {last, seq.t_end};
}

DecayFit fit_exponential_decay(const std::vector<DecayPoint>& points)
{
    const std::size_t n = points.size();
    if (n < 3) throw ConfigError("decay fit needs at least 3 points, got " + std::to_string(n));
    for (const auto& p : points) {
        if (!std::isfinite(p.t12)) throw ConfigError("decay fit: non-finite abscissa");
        if (!(p.intensity > 0.0) || !std::isfinite(p.intensity))
            throw ConfigError("decay fit: non-positive intensity");
    }

    const auto nd = static_cast<double>(n);
    double mx = 0.0, my = 0.0;
    for (const auto& p : points) {
        mx += p.t12;
        my += std::log(p.intensity);
    }
    mx /= nd;
    my /= nd;
    double sxx = 0.0, sxy = 0.0, scale = 0.0;
    for (const auto& p : points) {
        const double dx = p.t12 - mx;
        sxx += dx * dx;
        sxy += dx * (std::log(p.intensity) - my);
        scale = std::max(scale, std::abs(p.t12));
    }
    if (!(sxx > 1e-24 * scale * scale * nd)) throw ConfigError("decay fit: degenerate abscissae");

    DecayFit fit;
    fit.points = n;
    fit.a = sxy / sxx;
    const double intercept = my - fit.a * mx;
    fit.I0 = std::exp(intercept);
    double ss = 0.0;
    for (const auto& p : points) {
        const double r = std::log(p.intensity) - (intercept + fit.a * p.t12);
        ss += r * r;
    }
    fit.residual_rms = std::sqrt(ss / nd);
    return fit;
}

double theoretical_decay_coefficient(double delta12, double delta23, double gamma12)
{
    if (delta23 == 0.0) throw ConfigError("delta23 must be non-zero");
    return delta12 / delta23 * gamma12;
}

PhotonNumberDecay photon_number_decay(double n0, double omega1, double omega2, double gamma12, double t,
                                      double rho0)
{
    if (!(omega1 > 0.0) || !(omega2 > 0.0)) throw ConfigError("frequencies must be positive");
    PhotonNumberDecay out;
    out.rate = omega2 / omega1 * gamma12;
    out.number = n0 - out.rate * t;
    out.spectral_density = rho0 * std::exp(-out.rate * t);
    return out;
}

namespace {

std::mutex& fftw_planner_mutex()
{
    static std::mutex m;
    return m;
}

// |DFT|^2 of x zero-padded to m points, bins 0 .. m/2.
std::vector<double> power_spectrum(const std::vector<double>& x, std::size_t m)
{
    std::vector<double> in(m, 0.0);
    std::copy(x.begin(), x.end(), in.begin());
    const std::size_t bins = m / 2 + 1;
    auto* out = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * bins));
    if (out == nullptr) throw NumericalError("fftw allocation failed");
    fftw_plan plan;
    {
        std::lock_guard lock(fftw_planner_mutex());
        plan = fftw_plan_dft_r2c_1d(static_cast<int>(m), in.data(), out, FFTW_ESTIMATE);
    }
    fftw_execute(plan);
    std::vector<double> power(bins);
    for (std::size_t k = 0; k < bins; ++k) power[k] = out[k][0] * out[k][0] + out[k][1] * out[k][1];
    {
        std::lock_guard lock(fftw_planner_mutex());
        fftw_destroy_plan(plan);
    }
    fftw_free(out);
    return power;
}

// Residual of a least-squares polynomial fit of the given degree.
std::vector<double> detrend(const std::vector<double>& y, int degree)
{
    const std::size_t n = y.size();
    const int terms = std::min<int>(degree + 1, static_cast<int>(n));
    // Orthogonal basis by Gram-Schmidt on 1, u, u^2, ... with u in [-1, 1].
    std::vector<std::vector<double>> basis;
    std::vector<double> residual = y;
    for (int d = 0; d < terms; ++d) {
        std::vector<double> b(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double u = n > 1 ? 2.0 * static_cast<double>(i) / static_cast<double>(n - 1) - 1.0 : 0.0;
            b[i] = std::pow(u, d);
        }
        for (const auto& q : basis) {
            double dot = 0.0;
            for (std::size_t i = 0; i < n; ++i) dot += b[i] * q[i];
            for (std::size_t i = 0; i < n; ++i) b[i] -= dot * q[i];
        }
        double norm = 0.0;
        for (double v : b) norm += v * v;
        norm = std::sqrt(norm);
        if (!(norm > 1e-12)) continue;
        for (double& v : b) v /= norm;
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += residual[i] * b[i];
        for (std::size_t i = 0; i < n; ++i) residual[i] -= dot * b[i];
        basis.push_back(std::move(b));
    }
    return residual;
}

} // namespace

std::optional<double> beat_period(const SignalTrace& trace, double t_a, double t_b, const BeatOptions& options)
{
    const auto [lo, hi] = window_indices(trace.t_grid, t_a, t_b);
    const std::size_t n = hi - lo;
    if (n < 2) throw ConfigError("beat window shorter than 2 samples");
    if (options.zero_pad == 0) throw ConfigError("zero_pad must be at least 1");

    std::vector<double> y(trace.intensity.begin() + static_cast<std::ptrdiff_t>(lo),
                          trace.intensity.begin() + static_cast<std::ptrdiff_t>(hi));
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(n);
    y = detrend(y, std::max(0, options.detrend_degree));

    double wsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                              static_cast<double>(n - 1));
        y[i] *= w;
        wsum += w;
    }

    const std::size_t m = n * options.zero_pad;
    const std::vector<double> power = power_spectrum(y, m);
    const double dt = trace.t_grid[lo + 1] - trace.t_grid[lo];
    const double span = dt * static_cast<double>(n);
    const auto first = static_cast<std::size_t>(std::ceil(options.min_cycles * static_cast<double>(m) *
                                                          dt / span));

    std::size_t best = 0;
    for (std::size_t k = std::max<std::size_t>(first, 1); k + 1 < power.size(); ++k) {
        if (power[k] > power[k - 1] && power[k] >= power[k + 1] && (best == 0 || power[k] > power[best]))
            best = k;
    }
    if (best == 0) return std::nullopt;

    std::vector<double> sorted = power;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2),
                     sorted.end());
    const double floor = sorted[sorted.size() / 2];
    if (!(power[best] > options.threshold * floor)) return std::nullopt;

    const double amplitude = 2.0 * std::sqrt(power[best]) / wsum;
    if (!(amplitude >= options.min_modulation * std::abs(mean))) return std::nullopt;

    // Parabolic refinement on log power.
    const double l0 = std::log(power[best - 1]), l1 = std::log(power[best]), l2 = std::log(power[best + 1]);
    const double curv = l0 - 2.0 * l1 + l2;
    const double shift = curv < 0.0 ? std::clamp(0.5 * (l0 - l2) / curv, -0.5, 0.5) : 0.0;
    const double freq = (static_cast<double>(best) + shift) / (static_cast<double>(m) * dt);
    return 1.0 / freq;
}

SignalTrace peak_series(const std::vector<double>& sweep_values, const std::vector<cplx>& peak_polarization,
                        const std::vector<double>& peak_intensity)
{
    if (sweep_values.size() != peak_polarization.size() || sweep_values.size() != peak_intensity.size())
        throw ConfigError("peak series: column lengths differ");
    std::vector<cplx> p(sweep_values.size());
    for (std::size_t k = 0; k < p.size(); ++k) {
        const double mag = std::abs(peak_polarization[k]);
        const double target = std::sqrt(std::max(0.0, peak_intensity[k]));
        p[k] = mag > 0.0 ? peak_polarization[k] * (target / mag) : cplx(target, 0.0);
    }
    return SignalTrace::from_polarization(sweep_values, std::move(p));
}

MemoryEstimate memory_time_estimate(double tau_pulse, double t12, std::optional<double> g_p)
{
    if (!(tau_pulse > 0.0) || !(t12 > 0.0)) throw ConfigError("pulse length and t12 must be positive");
    MemoryEstimate est;
    est.amplification = t12 / tau_pulse;
    est.pulse_ratio = tau_pulse / t12;
    if (g_p) {
        est.impulse_area = *g_p * t12;
        est.impulse_area_satisfied = std::abs(*est.impulse_area - std::numbers::pi) <= 0.1 * std::numbers::pi;
    }
    return est;
}

std::string format_double(double x)
{
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

std::string to_key_value(const EchoReport& r)
{
    std::ostringstream os;
    auto line = [&os](const char* key, const std::string& value) { os << key << " = " << value << '\n'; };
    line("sweep_value", format_double(r.sweep_value));
    line("t_echo_detected", format_double(r.t_echo_detected));
    line("t_echo_predicted", format_double(r.t_echo_predicted));
    line("peak_intensity", format_double(r.peak_intensity));
    if (r.decay_fit) {
        line("decay_I0", format_double(r.decay_fit->I0));
        line("decay_a", format_double(r.decay_fit->a));
        line("decay_residual_rms", format_double(r.decay_fit->residual_rms));
    } else {
        line("decay_fit", "none");
    }
    line("beat_period", r.beat_period ? format_double(*r.beat_period) : "none");
    line("trace_loss", format_double(r.diagnostics.trace_loss));
    line("positivity_violated", r.diagnostics.positivity_violated ? "true" : "false");
    line("min_eigenvalue", format_double(r.diagnostics.min_eigenvalue));
    line("max_hermiticity_defect", format_double(r.diagnostics.max_hermiticity_defect));
    line("normalization", format_double(r.diagnostics.normalization));
    return os.str();
}

std::string echo_csv_header()
{
    return "sweep_value,t_echo_detected,t_echo_predicted,peak_intensity";
}

std::string to_csv_row(const EchoReport& r)
{
    return format_double(r.sweep_value) + ',' + format_double(r.t_echo_detected) + ',' +
           format_double(r.t_echo_predicted) + ',' + format_double(r.peak_intensity);
}

} // namespace pecho
