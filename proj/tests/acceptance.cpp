// One PASS/FAIL line per acceptance criterion. Exit status is the number of
// failed criteria.

#include "pecho/scenario.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <string>

using namespace pecho;

namespace {

constexpr double pi = std::numbers::pi;
int failures = 0;

void verdict(int id, bool ok, const std::string& detail)
{
    std::printf("criterion %d: %s  %s\n", id, ok ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    failures += !ok;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Scenario preset(const char* name)
{
    return parse_scenario(preset_text(name), name);
}

void echo_timing()
{
    bool ok = true;
    std::string detail;
    for (double ratio : {1.0, 1.2, 1.5}) {
        Scenario s = preset("paper_sec3");
        s.system.omega23 = s.system.omega12 / ratio;
        s.sequence.t12 = 4e-11;
        const auto t0 = std::chrono::steady_clock::now();
        const SweepResult r = simulate_sweep(s, 1, false);
        const double secs = seconds_since(t0);
        const EchoReport& rep = r.points.front().report;
        const double rel = std::abs(rep.t_echo_detected - rep.t_echo_predicted) / s.sequence.t12;
        ok = ok && rel <= 0.02 && secs < 60.0;
        detail += fmt("[ratio %.1f: |dT|/t12 = %.2e, %.1f s] ", ratio, rel, secs);
    }
    verdict(1, ok, detail);
}

void decay_coefficient()
{
    const Scenario s = preset("paper_sec3");
    const SweepResult r = simulate_sweep(s, 1);
    const double expected = theoretical_decay_coefficient(s.ensemble.sigma_doppler,
                                                          s.ensemble.sigma_doppler * s.system.omega23 /
                                                              s.system.omega12,
                                                          s.system.gamma12);
    if (!r.decay_fit) {
        verdict(2, false, "no decay fit");
        return;
    }
    const double rel = std::abs(std::abs(r.decay_fit->a) / expected - 1.0);
    verdict(2, rel <= 0.15,
            fmt("fitted a = %.4e 1/s over %.0f points, expected |a| = %.4e, deviation %.2f%%", r.decay_fit->a,
                static_cast<double>(r.decay_fit->points), expected, 100 * rel));
}

void envelope_oracle()
{
    Scenario s = preset("paper_sec3");
    s.system.gamma1 = s.system.gamma2 = s.system.gamma3 = 0.0;
    s.system.gamma12 = s.system.capital_gamma = s.system.capital_gamma13 = s.system.lambda_pump = 0.0;
    s.sequence.t12 = 4e-11;
    const SweepResult r = simulate_sweep(s, 1, false);
    const PointResult& pt = r.points.front();
    const double tc = pt.sequence.t0 + s.system.omega12 / s.system.omega23 * pt.sequence.t12;
    const double t_star = echo_half_width(s.ensemble.sigma_doppler, s.system);
    const auto f = DetuningDistribution::gaussian(s.ensemble.sigma_doppler * s.system.omega23 / s.system.omega12);

    std::vector<double> num, ref;
    const SignalTrace& tr = pt.result.trace;
    for (std::size_t k = 0; k < tr.size(); ++k) {
        if (std::abs(tr.t_grid[k] - tc) > 2 * t_star) continue;
        num.push_back(std::abs(tr.polarization[k]));
        ref.push_back(std::abs(gaussian_average_integral(tr.t_grid[k], tc, f)));
    }
    // P0 is the one free amplitude: least squares over the window.
    double sxy = 0.0, syy = 0.0, peak = 0.0;
    for (std::size_t k = 0; k < num.size(); ++k) sxy += num[k] * ref[k], syy += ref[k] * ref[k];
    const double p0 = sxy / syy;
    double ss = 0.0;
    for (std::size_t k = 0; k < num.size(); ++k) {
        ss += std::pow(num[k] - p0 * ref[k], 2);
        peak = std::max(peak, p0 * ref[k]);
    }
    const double rms = std::sqrt(ss / static_cast<double>(num.size())) / peak;
    verdict(3, rms <= 0.03 && num.size() > 10,
            fmt("RMS deviation %.3f%% of the peak over %.0f samples (T* = %.3e s, P0 = %.4f)", 100 * rms,
                static_cast<double>(num.size()), t_star, p0));
}

// Beat-scheme t12 scan at one splitting (in units of Gamma; negative = infinite).
SweepResult beat_scan(double d_over_gamma)
{
    Scenario s = preset("paper_sec3_beats");
    s.system.d_split = d_over_gamma < 0 ? Splitting::infinite()
                                        : Splitting::finite(d_over_gamma * s.system.capital_gamma);
    s.ensemble.n_atoms = 701;
    s.ensemble.grid_span = 5.0;
    s.sample_dt = 1e-13;
    s.sweep.axis = SweepAxis::t12;
    s.sweep.values.clear();
    for (int k = 0; k < 51; ++k) s.sweep.values.push_back(5e-12 + 8e-12 * k);
    return simulate_sweep(s, 1);
}

void beat_scaling()
{
    const auto t0 = std::chrono::steady_clock::now();
    const SweepResult b05 = beat_scan(0.05);
    const SweepResult b10 = beat_scan(0.10);
    const SweepResult b0 = beat_scan(0.0);
    const SweepResult binf = beat_scan(-1.0);
    auto show = [](const std::optional<double>& p) { return p ? fmt("%.4e s", *p) : std::string("none"); };

    bool ok = b05.beat_period && b10.beat_period && !b0.beat_period && !binf.beat_period;
    double ratio = 0.0;
    if (b05.beat_period && b10.beat_period) {
        ratio = *b05.beat_period / *b10.beat_period;
        ok = ok && std::abs(ratio / 2.0 - 1.0) <= 0.05;
    }
    // d = 0: the peak series only decays.
    const double first = b0.points.front().report.peak_intensity;
    const double last = b0.points.back().report.peak_intensity;
    ok = ok && last < first;
    verdict(4, ok,
            "period(0.05) = " + show(b05.beat_period) + ", period(0.10) = " + show(b10.beat_period) +
                fmt(", ratio %.4f", ratio) + ", d=0: " + show(b0.beat_period) +
                fmt(" (peak %.3f -> %.3f)", first, last) + ", d=inf: " + show(binf.beat_period) +
                fmt(", %.0f s", seconds_since(t0)));
}

SystemParams bare()
{
    SystemParams p;
    p.omega12 = 2.4e15;
    p.omega23 = 2.4e15;
    return p;
}

void rabi_oracle()
{
    const double g0 = 1e13;
    const double t_total = 10 * pi / g0; // ten periods of rho22
    PulseSequence seq;
    seq.pulses = {{0.0, t_total, Transition::probe_12, g0, 0.0, 0.0}};
    seq.t0 = 0.0;
    seq.t12 = t_total;
    seq.t_end = t_total;
    const SystemParams p = bare();
    const double h = dt_max(p, fields_at(seq, p, 0.0), AtomContext{});
    const Trajectory tr = integrate_sequence(DensityMatrix::population(2), seq, p, AtomContext{}, h);
    double worst = 0.0;
    for (std::size_t k = 0; k < tr.states.size(); ++k) {
        const double c = std::cos(g0 * tr.t_grid[k]);
        worst = std::max(worst, std::abs(tr.states[k](2, 2).real() - c * c));
    }
    verdict(5, worst < 1e-6,
            fmt("max |rho22 - cos^2| = %.3e over %.0f steps of dt_max = %.3e s", worst,
                static_cast<double>(tr.states.size() - 1), h));
}

PulseSequence echo_sequence(double t12, double phase_p, double phase_c)
{
    const double tau = 1e-13, lead = 1e-12;
    const double s = lead + t12 - tau;
    PulseSequence seq;
    seq.pulses = {{lead, tau, Transition::probe_12, pi / (4 * tau), phase_p, 0.0},
                  {lead + tau, tau, Transition::coupling_23, pi / (4 * tau), phase_c, 0.0},
                  {s, tau, Transition::coupling_23, pi / (2 * tau), phase_c, 0.0},
                  {s + tau, tau, Transition::probe_12, pi / (2 * tau), phase_p, 0.0}};
    seq.t0 = s + 0.5 * tau;
    seq.t12 = t12;
    seq.t_end = seq.t0 + t12 + 5e-12;
    return seq;
}

void invariant_suite()
{
    std::string detail;
    bool ok = true;

    // Hermiticity and trace, all rates zero, medium field on.
    SystemParams p = bare();
    p.d_split = Splitting::finite(5e10);
    p.V = 1e12;
    const AtomContext ctx{2e11, 2e11, 0.0};
    const PulseSequence seq = echo_sequence(4e-12, 0.3, -0.4);
    double h = std::numeric_limits<double>::infinity();
    for (const Pulse& pl : seq.pulses) h = std::min(h, dt_max(p, fields_at(seq, p, pl.start), ctx));
    const Trajectory tr = integrate_sequence(DensityMatrix::population(2), seq, p, ctx, h);
    double herm = 0.0, drift = 0.0;
    for (const auto& st : tr.states) {
        herm = std::max(herm, st.hermiticity_defect());
        drift = std::max(drift, std::abs(st.trace() - 1.0));
    }
    ok = ok && herm < 1e-12 && drift < 1e-9;
    detail += fmt("hermiticity %.1e, trace drift %.1e; ", herm, drift);

    // Global order across a decade of step sizes.
    const double g0 = 1e13;
    ActiveFields f;
    f.g_p = g0;
    const double t_total = 10 * pi / g0;
    auto err = [&](std::size_t n) {
        DensityMatrix rho = DensityMatrix::population(2);
        for (std::size_t k = 0; k < n; ++k) rho = step_rk4(rho, t_total / n, bare(), f, AtomContext{});
        return std::abs(rho(2, 2).real() - std::pow(std::cos(g0 * t_total), 2)) +
               std::abs(rho(1, 2) - cplx(0.0, 0.5 * std::sin(2 * g0 * t_total)));
    };
    const auto n = static_cast<std::size_t>(std::ceil(t_total / dt_max(bare(), f, AtomContext{})));
    const double order_ratio = err(n) / err(10 * n);
    ok = ok && order_ratio >= 1e4 / 2 && order_ratio <= 1e4 * 2;
    detail += fmt("error ratio over a decade %.3e; ", order_ratio);

    // Global phase gauge.
    const PulseSequence a = echo_sequence(3e-12, 0.3, -0.8);
    const PulseSequence b = echo_sequence(3e-12, 0.3 + 1.234, -0.8 + 1.234);
    const SampleGrid grid = SampleGrid::covering(a.t_end, 2e-14);
    std::vector<DensityMatrix> sa(grid.count), sb(grid.count);
    integrate_sampled(DensityMatrix::population(2), a, p, ctx, grid, Stepping::propagator,
                      [&](std::size_t k, const DensityMatrix& r) { sa[k] = r; });
    integrate_sampled(DensityMatrix::population(2), b, p, ctx, grid, Stepping::propagator,
                      [&](std::size_t k, const DensityMatrix& r) { sb[k] = r; });
    double gauge = 0.0;
    for (std::size_t k = 0; k < grid.count; ++k)
        for (int i = 1; i <= 3; ++i) gauge = std::max(gauge, std::abs(sa[k](i, i) - sb[k](i, i)));
    ok = ok && gauge < 1e-10;
    detail += fmt("gauge %.1e; ", gauge);

    // Byte-identical reruns under different worker counts.
    Scenario s = preset("paper_sec3");
    s.ensemble.scheme = SamplingScheme::monte_carlo;
    s.ensemble.n_atoms = 64;
    s.seed = s.ensemble.seed = 5;
    s.sweep.values = {1e-11, 2e-11, 3e-11};
    auto dump = [](const SweepResult& r) {
        std::string out;
        for (const auto& pt : r.points) out += trace_csv(pt.result.trace) + to_csv_row(pt.report) + "\n";
        return out;
    };
    const std::string one = dump(simulate_sweep(s, 1));
    const std::string three = dump(simulate_sweep(s, 3));
    const std::string again = dump(simulate_sweep(s, 1));
    const bool same = one == three && one == again;
    ok = ok && same;
    detail += same ? "reruns identical" : "reruns differ";
    verdict(6, ok, detail);
}

void gaussian_average()
{
    const double s = 5e11;
    const auto f = DetuningDistribution::gaussian(s);
    double worst = 0.0;
    for (int i = 0; i <= 100; ++i) {
        const double st = 0.1 * i;
        const double exact = -std::exp(-0.5 * st * st);
        const double got = gaussian_average_integral(st / s, 0.0, f);
        worst = std::max(worst, std::abs(got / exact - 1.0));
    }
    verdict(7, worst < 1e-8, fmt("max relative error %.3e over s t in [0, 10]", worst));
}

template <class F>
void guarded(int id, F&& f)
{
    try {
        f();
    } catch (const std::exception& e) {
        verdict(id, false, std::string("threw: ") + e.what());
    }
}

} // namespace

int main()
{
    guarded(1, echo_timing);
    guarded(2, decay_coefficient);
    guarded(3, envelope_oracle);
    guarded(4, beat_scaling);
    guarded(5, rabi_oracle);
    guarded(6, invariant_suite);
    guarded(7, gaussian_average);
    return failures;
}
