#include "pecho/bloch_integrator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>

namespace pecho {

namespace {

constexpr cplx I{0.0, 1.0};

// Frame detuning of a transition: taken from any pulse on it (validate()
// guarantees they agree); zero if the transition is never driven.
double frame_detuning(const PulseSequence& seq, Transition tr)
{
    for (const Pulse& p : seq.pulses)
        if (p.transition == tr) return p.detuning;
    return 0.0;
}

// Upper triangle of -i [H, rho] + relaxation, consistent (Hamiltonian) form.
void rhs_consistent(const DensityMatrix& r, const SystemParams& p, const ActiveFields& f,
                    const AtomContext& ctx, DensityMatrix& out)
{
    const bool inf = p.d_split.is_infinite();
    const Detunings dt = detunings_for(f, ctx);
    const double e1 = dt.delta1;
    const double e3 = dt.delta2 + p.d_split.value();
    const double v = inf ? 0.0 : f.V;

    // Rotating-frame Hamiltonian, H(k,2) = -Omega_k for k in {1, 3}.
    std::array<std::array<cplx, 3>, 3> H{};
    H[0][0] = e1;
    H[2][2] = e3;
    H[0][1] = -f.g_p;
    H[1][0] = -std::conj(f.g_p);
    H[2][1] = -f.G_c;
    H[1][2] = -std::conj(f.G_c);
    H[0][2] = v;
    H[2][0] = v;

    auto comm = [&](int i, int j) {
        cplx acc{};
        for (int k = 0; k < 3; ++k) acc += H[i][k] * r(k + 1, j + 1) - r(i + 1, k + 1) * H[k][j];
        return -I * acc;
    };

    const double g1 = p.gamma1, g2 = p.gamma2, g3 = p.gamma3, lam = p.lambda_pump;
    const cplx r11 = r(1, 1), r22 = r(2, 2), r33 = r(3, 3);

    out(1, 1) = comm(0, 0) - 2.0 * g1 * r11 + 2.0 * lam * r22;
    out(2, 2) = comm(1, 1) - 2.0 * g2 * r22;
    out(3, 3) = comm(2, 2) - 2.0 * g3 * r33 + 2.0 * lam * r22;
    out(1, 2) = comm(0, 1) - (g1 + lam) * r(1, 2);
    out(2, 3) = comm(1, 2) - (g2 + lam) * r(2, 3);
    if (inf)
        out(1, 3) = 0.0;
    else
        out(1, 3) = comm(0, 2) - (g1 + g3 + p.capital_gamma13) * r(1, 3);
}

// Upper triangle of the literal six-equation system, term by term.
void rhs_verbatim(const DensityMatrix& r, const SystemParams& p, const ActiveFields& f,
                  const AtomContext& ctx, DensityMatrix& out)
{
    const bool inf = p.d_split.is_infinite();
    const Detunings dt = detunings_for(f, ctx);
    const double d = p.d_split.value();
    const double v = inf ? 0.0 : f.V;
    const cplx g = f.g_p, G = f.G_c;
    const double g1 = p.gamma1, g2 = p.gamma2, g3 = p.gamma3, lam = p.lambda_pump;

    const cplx r11 = r(1, 1), r22 = r(2, 2), r33 = r(3, 3);
    const cplx r12 = r(1, 2), r21 = r(2, 1), r13 = r(1, 3), r31 = r(3, 1);
    const cplx r23 = r(2, 3), r32 = r(3, 2);

    out(1, 1) = -2.0 * g1 * r11 + 2.0 * lam * r22 - v * (r31 + r13) + I * g * r21 -
                I * std::conj(g) * r12;
    out(2, 2) = -2.0 * g2 * r22 - v * (r31 + r13) + I * G * r23 - I * std::conj(G) * r32;
    out(3, 3) = -2.0 * g3 * r33 + 2.0 * lam * r22 - v * (r31 + r13) + I * G * r12 -
                I * std::conj(G) * r21;
    out(1, 2) = -(g1 + lam + I * dt.delta1) * r12 - v * r23 + I * g * (r22 - r11) - G * r13;
    if (inf)
        out(1, 3) = 0.0;
    else
        out(1, 3) = -(g1 + g3 + I * (dt.delta3 - dt.delta1 - d)) * r13 + I * g * r32 -
                    I * std::conj(G) * r23;
    out(2, 3) = -(g2 + lam - I * (dt.delta3 - dt.delta2 - d)) * r23 - v * r13 - I * g * r21 +
                I * G * (r33 - r22);
}

DensityMatrix rhs_unchecked(const DensityMatrix& rho, const SystemParams& params,
                            const ActiveFields& fields, const AtomContext& ctx)
{
    DensityMatrix out;
    if (params.coupling_form == CouplingForm::consistent)
        rhs_consistent(rho, params, fields, ctx, out);
    else
        rhs_verbatim(rho, params, fields, ctx, out);
    for (int i = 1; i <= 3; ++i) {
        out(i, i) = out(i, i).real();
        for (int j = i + 1; j <= 3; ++j) out(j, i) = std::conj(out(i, j));
    }
    return out;
}

// Real coordinates of a Hermitian matrix:
// [rho11, rho22, rho33, Re rho12, Im rho12, Re rho13, Im rho13, Re rho23, Im rho23].
using Vec9 = std::array<double, 9>;
using Mat9 = std::array<std::array<double, 9>, 9>;

Vec9 to_real(const DensityMatrix& r)
{
    return {r(1, 1).real(), r(2, 2).real(), r(3, 3).real(), r(1, 2).real(), r(1, 2).imag(),
            r(1, 3).real(), r(1, 3).imag(), r(2, 3).real(), r(2, 3).imag()};
}

DensityMatrix from_real(const Vec9& x)
{
    DensityMatrix r;
    r(1, 1) = x[0];
    r(2, 2) = x[1];
    r(3, 3) = x[2];
    r(1, 2) = {x[3], x[4]};
    r(1, 3) = {x[5], x[6]};
    r(2, 3) = {x[7], x[8]};
    r(2, 1) = std::conj(r(1, 2));
    r(3, 1) = std::conj(r(1, 3));
    r(3, 2) = std::conj(r(2, 3));
    return r;
}

Mat9 identity9()
{
    Mat9 m{};
    for (std::size_t i = 0; i < 9; ++i) m[i][i] = 1.0;
    return m;
}

Mat9 matmul(const Mat9& a, const Mat9& b)
{
    Mat9 c{};
    for (std::size_t i = 0; i < 9; ++i)
        for (std::size_t k = 0; k < 9; ++k) {
            const double aik = a[i][k];
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < 9; ++j) c[i][j] += aik * b[k][j];
        }
    return c;
}

Vec9 mat_vec(const Mat9& m, const Vec9& x)
{
    Vec9 y{};
    for (std::size_t i = 0; i < 9; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < 9; ++j) acc += m[i][j] * x[j];
        y[i] = acc;
    }
    return y;
}

// Generator of the real-linear flow on Hermitian matrices.
Mat9 generator(const SystemParams& params, const ActiveFields& fields, const AtomContext& ctx)
{
    Mat9 g{};
    for (std::size_t c = 0; c < 9; ++c) {
        Vec9 e{};
        e[c] = 1.0;
        if (params.d_split.is_infinite() && (c == 5 || c == 6)) continue;
        const Vec9 col = to_real(rhs_unchecked(from_real(e), params, fields, ctx));
        for (std::size_t r = 0; r < 9; ++r) g[r][c] = col[r];
    }
    return g;
}

// n steps of the classical RK4 polynomial I + hG + (hG)^2/2 + (hG)^3/6 + (hG)^4/24.
Mat9 rk4_propagator(const Mat9& gen, double h, std::size_t n)
{
    Mat9 hg = gen;
    for (auto& row : hg)
        for (double& x : row) x *= h;
    Mat9 r = identity9();
    for (int k = 4; k >= 1; --k) {
        Mat9 t = matmul(hg, r);
        for (std::size_t i = 0; i < 9; ++i)
            for (std::size_t j = 0; j < 9; ++j) r[i][j] = (i == j ? 1.0 : 0.0) + t[i][j] / k;
    }
    Mat9 result = identity9();
    Mat9 base = r;
    while (n > 0) {
        if (n & 1u) result = matmul(result, base);
        n >>= 1u;
        if (n > 0) base = matmul(base, base);
    }
    return result;
}

std::vector<double> pulse_edges(const PulseSequence& seq)
{
    std::vector<double> edges;
    for (const Pulse& p : seq.pulses) {
        edges.push_back(p.start);
        edges.push_back(p.end());
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    return edges;
}

std::size_t steps_needed(double length, double limit)
{
    if (!std::isfinite(limit)) return 1;
    const double n = std::ceil(length / limit * (1.0 - 1e-12));
    return std::max<std::size_t>(1, static_cast<std::size_t>(n));
}

} // namespace

ActiveFields fields_at(const PulseSequence& seq, const SystemParams& params, double t)
{
    ActiveFields f;
    f.probe_frame = frame_detuning(seq, Transition::probe_12);
    f.coupling_frame = frame_detuning(seq, Transition::coupling_23);
    bool any = false;
    for (const Pulse& p : seq.pulses) {
        if (t < p.start || t >= p.end()) continue;
        any = true;
        if (p.transition == Transition::probe_12)
            f.g_p += p.rabi();
        else
            f.G_c += p.rabi();
    }
    if (any) f.V = params.V;
    return f;
}

Detunings detunings_for(const ActiveFields& f, const AtomContext& ctx)
{
    Detunings d;
    d.delta1 = f.probe_frame + ctx.delta12;
    d.delta2 = f.coupling_frame + ctx.delta23;
    d.delta3 = d.delta1 + d.delta2;
    return d;
}

DensityMatrix rhs(const DensityMatrix& rho, const SystemParams& params, const ActiveFields& fields,
                  const AtomContext& ctx)
{
    if (params.d_split.is_infinite() && (rho(1, 3) != cplx{} || rho(3, 1) != cplx{}))
        throw NumericalError("rhs: rho13 must vanish in the infinite-splitting mode");
    return rhs_unchecked(rho, params, fields, ctx);
}

double dt_max(const SystemParams& params, const ActiveFields& fields, const AtomContext& ctx)
{
    const Detunings d = detunings_for(fields, ctx);
    const bool inf = params.d_split.is_infinite();
    const double scales[] = {
        std::abs(d.delta1),
        std::abs(d.delta2),
        params.coupling_form == CouplingForm::verbatim ? std::abs(d.delta3) : 0.0,
        std::abs(fields.g_p),
        std::abs(fields.G_c),
        inf ? 0.0 : std::abs(fields.V),
        params.d_split.value(),
        params.gamma1,
        params.gamma2,
        params.gamma3,
        params.lambda_pump,
        params.capital_gamma13,
    };
    const double top = *std::max_element(std::begin(scales), std::end(scales));
    if (!(top > 0.0)) return std::numeric_limits<double>::infinity();
    return (1.0 / 50.0) / top;
}

DensityMatrix step_rk4(const DensityMatrix& rho, double dt, const SystemParams& params,
                       const ActiveFields& fields, const AtomContext& ctx)
{
    if (!(dt > 0.0)) throw NumericalError("step_rk4: dt must be positive");
    const double limit = dt_max(params, fields, ctx);
    if (dt > limit * (1.0 + 1e-12)) throw NumericalError("step too large");

    const DensityMatrix k1 = rhs(rho, params, fields, ctx);
    const DensityMatrix k2 = rhs(rho + (0.5 * dt) * k1, params, fields, ctx);
    const DensityMatrix k3 = rhs(rho + (0.5 * dt) * k2, params, fields, ctx);
    const DensityMatrix k4 = rhs(rho + dt * k3, params, fields, ctx);
    DensityMatrix next = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (params.d_split.is_infinite()) {
        next(1, 3) = 0.0;
        next(3, 1) = 0.0;
    }
    return hermitize(next);
}

Trajectory integrate_sequence(const DensityMatrix& rho0, const PulseSequence& seq,
                              const SystemParams& params, const AtomContext& ctx, double dt,
                              std::size_t sample_stride)
{
    if (!(dt > 0.0)) throw NumericalError("integrate_sequence: dt must be positive");
    if (sample_stride == 0) throw NumericalError("integrate_sequence: sample_stride must be >= 1");
    if (params.d_split.is_infinite() && rho0(1, 3) != cplx{})
        throw NumericalError("integrate_sequence: rho13 must vanish in the infinite-splitting mode");

    const std::vector<double> edges = pulse_edges(seq);
    const auto n_steps = static_cast<std::size_t>(std::floor(seq.t_end / dt + 1e-9));

    Trajectory traj;
    DensityMatrix rho = hermitize(rho0);
    traj.t_grid.push_back(0.0);
    traj.states.push_back(rho);

    for (std::size_t n = 0; n < n_steps; ++n) {
        const double a = static_cast<double>(n) * dt;
        const double b = static_cast<double>(n + 1) * dt;
        double t = a;
        auto it = std::upper_bound(edges.begin(), edges.end(), a);
        while (t < b) {
            const double stop = (it != edges.end() && *it < b) ? *it++ : b;
            const ActiveFields f = fields_at(seq, params, 0.5 * (t + stop));
            rho = step_rk4(rho, stop - t, params, f, ctx);
            t = stop;
        }
        if ((n + 1) % sample_stride == 0) {
            traj.t_grid.push_back(b);
            traj.states.push_back(rho);
        }
    }
    return traj;
}

std::vector<double> SampleGrid::times() const
{
    std::vector<double> t(count);
    for (std::size_t k = 0; k < count; ++k) t[k] = at(k);
    return t;
}

SampleGrid SampleGrid::covering(double t_end, double dt)
{
    if (!(dt > 0.0)) throw ConfigError("sample dt must be positive");
    SampleGrid g;
    g.t_start = 0.0;
    g.dt = dt;
    g.count = static_cast<std::size_t>(std::floor(t_end / dt + 1e-9)) + 1;
    return g;
}

AtomDiagnostics integrate_sampled(const DensityMatrix& rho0, const PulseSequence& seq,
                                  const SystemParams& params, const AtomContext& ctx,
                                  const SampleGrid& grid, Stepping stepping,
                                  const std::function<void(std::size_t, const DensityMatrix&)>& observe)
{
    if (grid.count == 0) throw NumericalError("integrate_sampled: empty grid");
    if (!(grid.dt > 0.0)) throw NumericalError("integrate_sampled: dt must be positive");
    if (params.d_split.is_infinite() && rho0(1, 3) != cplx{})
        throw NumericalError("integrate_sampled: rho13 must vanish in the infinite-splitting mode");

    const std::vector<double> edges = pulse_edges(seq);

    // Cached propagators for whole sample intervals, one per field setting.
    std::vector<std::pair<ActiveFields, Mat9>> cache;
    auto full_interval = [&](const ActiveFields& f) -> const Mat9& {
        for (const auto& [key, m] : cache)
            if (key == f) return m;
        const std::size_t n = steps_needed(grid.dt, dt_max(params, f, ctx));
        cache.emplace_back(f, rk4_propagator(generator(params, f, ctx), grid.dt / n, n));
        return cache.back().second;
    };

    AtomDiagnostics diag;
    diag.min_eigenvalue = std::numeric_limits<double>::infinity();
    DensityMatrix rho = hermitize(rho0);
    Vec9 x = to_real(rho);

    auto record = [&](std::size_t k) {
        if (stepping == Stepping::propagator) rho = from_real(x);
        diag.max_hermiticity_defect = std::max(diag.max_hermiticity_defect, rho.hermiticity_defect());
        if (k % 8 == 0 || k + 1 == grid.count)
            diag.min_eigenvalue = std::min(diag.min_eigenvalue, min_eigenvalue(rho));
        if (!rho.all_finite()) throw NumericalError("integration produced a non-finite state");
        observe(k, rho);
    };

    record(0);
    for (std::size_t k = 0; k + 1 < grid.count; ++k) {
        const double a = grid.at(k);
        const double b = grid.at(k + 1);
        auto it = std::upper_bound(edges.begin(), edges.end(), a);
        const bool split = it != edges.end() && *it < b;

        if (!split) {
            const ActiveFields f = fields_at(seq, params, 0.5 * (a + b));
            if (stepping == Stepping::propagator) {
                x = mat_vec(full_interval(f), x);
            } else {
                const std::size_t n = steps_needed(grid.dt, dt_max(params, f, ctx));
                for (std::size_t s = 0; s < n; ++s) rho = step_rk4(rho, grid.dt / n, params, f, ctx);
            }
        } else {
            double t = a;
            while (t < b) {
                const double stop = (it != edges.end() && *it < b) ? *it++ : b;
                const double len = stop - t;
                const ActiveFields f = fields_at(seq, params, 0.5 * (t + stop));
                const std::size_t n = steps_needed(len, dt_max(params, f, ctx));
                if (stepping == Stepping::propagator) {
                    x = mat_vec(rk4_propagator(generator(params, f, ctx), len / n, n), x);
                } else {
                    for (std::size_t s = 0; s < n; ++s) rho = step_rk4(rho, len / n, params, f, ctx);
                }
                t = stop;
            }
        }
        record(k + 1);
    }
    diag.final_trace = rho.trace().real();
    return diag;
}

double free_phase_shift(PhaseLevel level, const SystemParams& params, double velocity, double t0,
                        double t12, double T)
{
    if (level == PhaseLevel::level3)
        return (T - t0) * (params.omega12 - params.omega23) * velocity / speed_of_light;
    return velocity * params.omega12 / speed_of_light * (T - t12);
}

} // namespace pecho
