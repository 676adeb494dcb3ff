#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pecho/bloch_integrator.hpp"

#include <cmath>
#include <numbers>
#include <random>

using namespace pecho;

namespace {

constexpr double pi = std::numbers::pi;

SystemParams bare()
{
    SystemParams p;
    p.omega12 = 2.4e15;
    p.omega23 = 2.4e15;
    return p;
}

// Resonant two-level drive on 1 <-> 2 from the ground state (level 2):
// rho11 = sin^2(g0 t), rho22 = cos^2(g0 t).
double rabi_excited(double g0, double t) { return std::sin(g0 * t) * std::sin(g0 * t); }
double rabi_ground(double g0, double t) { return std::cos(g0 * t) * std::cos(g0 * t); }

ActiveFields probe_only(double g0, double phase = 0.0)
{
    ActiveFields f;
    f.g_p = std::polar(g0, phase);
    return f;
}

DensityMatrix random_hermitian(std::mt19937_64& rng)
{
    std::normal_distribution<double> n(0.0, 1.0);
    DensityMatrix m;
    for (auto& z : m.data()) z = {n(rng), n(rng)};
    return hermitize(m);
}

// Propagates a constant field with fixed steps of size h for total time t.
DensityMatrix run(DensityMatrix rho, double h, std::size_t steps, const SystemParams& p, const ActiveFields& f)
{
    for (std::size_t k = 0; k < steps; ++k) rho = step_rk4(rho, h, p, f, AtomContext{});
    return rho;
}

// Echo-style sequence with 100 fs pulses.
PulseSequence sec3_sequence(double t12, double phase_p = 0.0, double phase_c = 0.0, double closing = pi / 2)
{
    const double tau = 1e-13, lead = 1e-12;
    const double half = pi / (4 * tau), full = pi / (2 * tau);
    const double s = lead + t12 - tau;
    PulseSequence seq;
    seq.pulses = {{lead, tau, Transition::probe_12, half, phase_p, 0.0},
                  {lead + tau, tau, Transition::coupling_23, half, phase_c, 0.0},
                  {s, tau, Transition::coupling_23, full, phase_c, 0.0},
                  {s + tau, tau, Transition::probe_12, closing / tau, phase_p, 0.0}};
    seq.t0 = s + 0.5 * tau;
    seq.t12 = t12;
    seq.t_end = seq.t0 + t12 + 5e-12;
    return seq;
}

} // namespace

TEST_CASE("free static atom has zero derivative")
{
    std::mt19937_64 rng(1);
    const DensityMatrix rho = random_hermitian(rng);
    const DensityMatrix d = rhs(rho, bare(), ActiveFields{}, AtomContext{});
    for (const auto& z : d.data()) CHECK(z == cplx{});
}

TEST_CASE("pure population decay term")
{
    SystemParams p = bare();
    p.gamma1 = 3e9;
    const DensityMatrix d = rhs(DensityMatrix::population(1), p, ActiveFields{}, AtomContext{});
    CHECK(d(1, 1).real() == doctest::Approx(-6e9));
    for (int i = 1; i <= 3; ++i)
        for (int j = 1; j <= 3; ++j)
            if (i != 1 || j != 1) CHECK(d(i, j) == cplx{});
}

TEST_CASE("one decay step matches the exponential to fifth order")
{
    SystemParams p = bare();
    p.gamma1 = 1e10;
    const double h = dt_max(p, ActiveFields{}, AtomContext{});
    const DensityMatrix next = step_rk4(DensityMatrix::population(1), h, p, ActiveFields{}, AtomContext{});
    const double x = 2.0 * p.gamma1 * h;
    CHECK(std::abs(next(1, 1).real() - std::exp(-x)) <= 1.01 * std::pow(x, 5) / 120.0);
}

TEST_CASE("zero derivative leaves the state unchanged")
{
    std::mt19937_64 rng(2);
    const DensityMatrix rho = random_hermitian(rng);
    CHECK(step_rk4(rho, 1e-12, bare(), ActiveFields{}, AtomContext{}) == rho);
}

TEST_CASE("dt_max bound and the step-size guard")
{
    SystemParams p = bare();
    p.gamma3 = 2e10;
    ActiveFields f = probe_only(5e12);
    AtomContext ctx{1e11, -3e11, 0.0};
    CHECK(dt_max(p, f, ctx) == doctest::Approx(0.02 / 5e12));
    p.d_split = Splitting::finite(1e13);
    CHECK(dt_max(p, f, ctx) == doctest::Approx(0.02 / 1e13));
    CHECK(std::isinf(dt_max(bare(), ActiveFields{}, AtomContext{})));

    const double h = dt_max(p, f, ctx);
    CHECK_NOTHROW(step_rk4(DensityMatrix::population(2), h, p, f, ctx));
    try {
        step_rk4(DensityMatrix::population(2), 1.01 * h, p, f, ctx);
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()) == "step too large");
    }
}

TEST_CASE("resonant Rabi flopping at a quarter period")
{
    const double g0 = 1e13;
    const ActiveFields f = probe_only(g0);
    const double t = pi / (2 * g0);
    const std::size_t n = 100;
    const DensityMatrix rho = run(DensityMatrix::population(2), t / n, n, bare(), f);
    CHECK(rho(1, 1).real() == doctest::Approx(rabi_excited(g0, t)).epsilon(1e-9));
    CHECK(rho(2, 2).real() == doctest::Approx(rabi_ground(g0, t)).scale(1.0).epsilon(1e-9));
    CHECK(std::abs(rho(3, 3)) < 1e-15);
}

TEST_CASE("one-step error ratio shows local order five")
{
    const double g0 = 1e13;
    const ActiveFields f = probe_only(g0);
    const double h = dt_max(bare(), f, AtomContext{});
    auto err = [&](double step) {
        const DensityMatrix rho = step_rk4(DensityMatrix::population(2), step, bare(), f, AtomContext{});
        return std::abs(rho(1, 1).real() - rabi_excited(g0, step)) +
               std::abs(rho(1, 2) - cplx(0.0, 0.5 * std::sin(2 * g0 * step)));
    };
    const double ratio = err(h) / err(h / 2);
    CHECK(ratio > 24.0);
    CHECK(ratio < 40.0);
}

TEST_CASE("global error scales as dt^4 across a decade")
{
    const double g0 = 1e13;
    const ActiveFields f = probe_only(g0);
    const double h = dt_max(bare(), f, AtomContext{});
    const double t_total = 10 * pi / g0;
    auto err = [&](std::size_t n) {
        const DensityMatrix rho = run(DensityMatrix::population(2), t_total / n, n, bare(), f);
        return std::abs(rho(2, 2).real() - rabi_ground(g0, t_total)) +
               std::abs(rho(1, 2) - cplx(0.0, 0.5 * std::sin(2 * g0 * t_total)));
    };
    const auto n_coarse = static_cast<std::size_t>(std::ceil(t_total / h));
    const double ratio = err(n_coarse) / err(10 * n_coarse);
    CHECK(ratio > 1e4 / 2);
    CHECK(ratio < 1e4 * 2);
}

TEST_CASE("probe pi pulse inverts the two-level reduction")
{
    const double tau = 1e-13;
    PulseSequence seq;
    seq.pulses = {{1e-13, tau, Transition::probe_12, pi / (2 * tau), 0.0, 0.0}};
    seq.t0 = 0.0;
    seq.t12 = 1e-13;
    seq.t_end = 3e-13;
    const double dt = 0.02 / (pi / (2 * tau));
    const Trajectory tr = integrate_sequence(DensityMatrix::population(2), seq, bare(), AtomContext{}, dt, 5);
    CHECK(tr.states.back()(1, 1).real() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(tr.t_grid.size() == tr.states.size());
}

TEST_CASE("empty sequence without relaxation is constant")
{
    std::mt19937_64 rng(3);
    DensityMatrix rho = random_hermitian(rng);
    rho(1, 3) = 0.0;
    rho(3, 1) = 0.0;
    PulseSequence seq;
    seq.t12 = 1e-12;
    seq.t_end = 4e-12;
    const Trajectory tr = integrate_sequence(rho, seq, bare(), AtomContext{}, 1e-13);
    for (const auto& s : tr.states) CHECK(max_abs_diff(s, rho) == 0.0);
}

TEST_CASE("sequence run keeps the invariants at every step")
{
    SystemParams p = bare();
    p.d_split = Splitting::finite(5e10);
    const PulseSequence seq = sec3_sequence(4e-12);
    const AtomContext ctx{2e11, 2e11, 0.0};
    double h = std::numeric_limits<double>::infinity();
    for (const Pulse& pl : seq.pulses) h = std::min(h, dt_max(p, fields_at(seq, p, pl.start), ctx));
    const Trajectory tr = integrate_sequence(DensityMatrix::population(2), seq, p, ctx, h);
    REQUIRE(tr.states.size() > 1000);
    double herm = 0.0, drift = 0.0;
    for (const auto& s : tr.states) {
        herm = std::max(herm, s.hermiticity_defect());
        drift = std::max(drift, std::abs(s.trace() - 1.0));
    }
    CHECK(herm < 1e-12);
    CHECK(drift < 1e-9);
}

TEST_CASE("relaxing run passes the invariants")
{
    SystemParams p = bare();
    p.gamma1 = 5e9;
    p.gamma3 = 5e9;
    p.gamma12 = 1e10;
    p.capital_gamma = 1e12;
    p.d_split = Splitting::infinite();
    const PulseSequence seq = sec3_sequence(1e-11);
    const AtomContext ctx{-4e11, -4e11, 0.0};
    const Trajectory tr = integrate_sequence(DensityMatrix::population(2), seq, p, ctx, 6e-16, 10);
    for (const auto& s : tr.states) {
        CHECK(s.hermiticity_defect() < 1e-12);
        CHECK(s(1, 3) == cplx{});
        CHECK(s.all_finite());
    }
    CHECK(tr.states.back().trace().real() < 1.0);
}

TEST_CASE("rhs is linear in rho")
{
    std::mt19937_64 rng(4);
    SystemParams p = bare();
    p.gamma1 = 1e10;
    p.gamma2 = 2e9;
    p.gamma3 = 3e10;
    p.lambda_pump = 1e9;
    p.capital_gamma13 = 4e10;
    p.V = 2e12;
    p.d_split = Splitting::finite(3e11);
    ActiveFields f;
    f.g_p = {3e12, -1e12};
    f.G_c = {-2e12, 5e11};
    f.V = p.V;
    const AtomContext ctx{1e11, 2e11, 0.0};
    for (auto form : {CouplingForm::consistent, CouplingForm::verbatim}) {
        p.coupling_form = form;
        for (int trial = 0; trial < 20; ++trial) {
            const DensityMatrix x = random_hermitian(rng), y = random_hermitian(rng);
            const double a = 0.7, b = -1.3;
            const DensityMatrix lhs = rhs(a * x + b * y, p, f, ctx);
            const DensityMatrix rhs_sum = a * rhs(x, p, f, ctx) + b * rhs(y, p, f, ctx);
            double scale = 0.0;
            for (const auto& z : lhs.data()) scale = std::max(scale, std::abs(z));
            CHECK(max_abs_diff(lhs, rhs_sum) <= 1e-12 * scale);
        }
    }
}

TEST_CASE("derivative of a Hermitian state is Hermitian")
{
    std::mt19937_64 rng(5);
    SystemParams p = bare();
    p.d_split = Splitting::finite(1e11);
    p.V = 1e12;
    ActiveFields f;
    f.g_p = {1e12, 2e12};
    f.G_c = {3e12, 0.0};
    f.V = p.V;
    for (auto form : {CouplingForm::consistent, CouplingForm::verbatim}) {
        p.coupling_form = form;
        const DensityMatrix d = rhs(random_hermitian(rng), p, f, AtomContext{});
        CHECK(d.hermiticity_defect() == 0.0);
    }
}

TEST_CASE("verbatim form keeps the literal cross-transition terms")
{
    SystemParams p = bare();
    p.coupling_form = CouplingForm::verbatim;
    p.d_split = Splitting::finite(0.0);
    ActiveFields f;
    f.G_c = {2.0, 0.0};
    DensityMatrix rho;
    rho(1, 2) = {0.0, 0.25};
    rho(2, 1) = {0.0, -0.25};
    // rho33' = i G rho12 - i G* rho21 = i 2 (0.25 i) - i 2 (-0.25 i) = -1.
    CHECK(rhs(rho, p, f, AtomContext{})(3, 3).real() == doctest::Approx(-1.0));
    p.coupling_form = CouplingForm::consistent;
    CHECK(rhs(rho, p, f, AtomContext{})(3, 3).real() == doctest::Approx(0.0));

    // The probe term is absent from the literal rho22 equation.
    p.coupling_form = CouplingForm::verbatim;
    ActiveFields probe = probe_only(1.0);
    rho = DensityMatrix::population(2);
    rho(1, 2) = {0.0, 0.5};
    rho(2, 1) = {0.0, -0.5};
    CHECK(rhs(rho, p, probe, AtomContext{})(2, 2) == cplx{});
    p.coupling_form = CouplingForm::consistent;
    CHECK(rhs(rho, p, probe, AtomContext{})(2, 2).real() != 0.0);
}

TEST_CASE("global phase shift leaves populations invariant")
{
    SystemParams p = bare();
    p.d_split = Splitting::finite(5e10);
    p.V = 1e12;
    p.gamma1 = 5e9;
    p.gamma3 = 5e9;
    const AtomContext ctx{3e11, 3e11, 0.0};
    const PulseSequence a = sec3_sequence(3e-12, 0.3, -0.8);
    const PulseSequence b = sec3_sequence(3e-12, 0.3 + 1.234, -0.8 + 1.234);
    const SampleGrid grid = SampleGrid::covering(a.t_end, 2e-14);
    std::vector<DensityMatrix> sa(grid.count), sb(grid.count);
    integrate_sampled(DensityMatrix::population(2), a, p, ctx, grid, Stepping::propagator,
                      [&](std::size_t k, const DensityMatrix& r) { sa[k] = r; });
    integrate_sampled(DensityMatrix::population(2), b, p, ctx, grid, Stepping::propagator,
                      [&](std::size_t k, const DensityMatrix& r) { sb[k] = r; });
    double worst = 0.0;
    for (std::size_t k = 0; k < grid.count; ++k)
        for (int i = 1; i <= 3; ++i) worst = std::max(worst, std::abs(sa[k](i, i) - sb[k](i, i)));
    CHECK(worst < 1e-10);
}

TEST_CASE("propagator stepping matches literal RK4 steps")
{
    SystemParams p = bare();
    p.d_split = Splitting::finite(5e10);
    p.gamma1 = 5e9;
    p.gamma3 = 5e9;
    p.V = 5e11;
    const AtomContext ctx{-2e11, -2e11, 0.0};
    const PulseSequence seq = sec3_sequence(2e-12);
    const SampleGrid grid = SampleGrid::covering(seq.t_end, 3e-14);
    std::vector<DensityMatrix> lit(grid.count), prop(grid.count);
    const auto d1 = integrate_sampled(DensityMatrix::population(2), seq, p, ctx, grid, Stepping::literal,
                                      [&](std::size_t k, const DensityMatrix& r) { lit[k] = r; });
    integrate_sampled(DensityMatrix::population(2), seq, p, ctx, grid, Stepping::propagator,
                      [&](std::size_t k, const DensityMatrix& r) { prop[k] = r; });
    double worst = 0.0;
    for (std::size_t k = 0; k < grid.count; ++k) worst = std::max(worst, max_abs_diff(lit[k], prop[k]));
    CHECK(worst < 1e-12);
    CHECK(d1.max_hermiticity_defect < 1e-12);
}

TEST_CASE("infinite splitting rejects a 1-3 coherence")
{
    SystemParams p = bare();
    p.d_split = Splitting::infinite();
    DensityMatrix rho = DensityMatrix::population(2);
    rho(1, 3) = 0.1;
    rho(3, 1) = 0.1;
    CHECK_THROWS_AS(rhs(rho, p, ActiveFields{}, AtomContext{}), NumericalError);
    PulseSequence seq;
    seq.t12 = 1e-12;
    seq.t_end = 2e-12;
    CHECK_THROWS_AS(integrate_sequence(rho, seq, p, AtomContext{}, 1e-13), NumericalError);
}

TEST_CASE("fields follow the half-open pulse intervals")
{
    PulseSequence seq;
    seq.pulses = {{1.0, 1.0, Transition::probe_12, 2.0, 0.5, 0.0}, {1.5, 1.0, Transition::coupling_23, 3.0, 0.0, 0.0}};
    SystemParams p = bare();
    p.V = 7.0;
    CHECK(fields_at(seq, p, 0.999).g_p == cplx{});
    CHECK(fields_at(seq, p, 0.999).V == 0.0);
    CHECK(fields_at(seq, p, 1.0).g_p == std::polar(2.0, 0.5));
    CHECK(fields_at(seq, p, 1.0).V == 7.0);
    CHECK(fields_at(seq, p, 2.0).g_p == cplx{});
    CHECK(fields_at(seq, p, 2.0).G_c == cplx(3.0, 0.0));
    CHECK(fields_at(seq, p, 2.5).V == 0.0);
}

TEST_CASE("free-evolution phase shifts")
{
    SystemParams p = bare();
    CHECK(free_phase_shift(PhaseLevel::level2, p, 0.0, 0.0, 1e-12, 3e-12) == 0.0);
    CHECK(free_phase_shift(PhaseLevel::level3, p, 0.0, 0.0, 1e-12, 3e-12) == 0.0);
    CHECK(free_phase_shift(PhaseLevel::level3, p, 450.0, 1e-13, 1e-12, 7e-12) == 0.0);

    // 300 m/s * 2.4e15 rad/s / c * 1 ps.
    const double expected = 300.0 / 299792458.0 * 2.4e15 * 1e-12;
    CHECK(free_phase_shift(PhaseLevel::level2, p, 300.0, 0.0, 2e-12, 3e-12) ==
          doctest::Approx(expected).epsilon(1e-14));
    p.omega23 = 2.0e15;
    CHECK(free_phase_shift(PhaseLevel::level3, p, 300.0, 1e-12, 2e-12, 5e-12) ==
          doctest::Approx(4e-12 * 0.4e15 * 300.0 / 299792458.0).epsilon(1e-14));
}
