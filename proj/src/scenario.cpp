#include "pecho/scenario.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace pecho {

const char* to_string(PulseScheme s)
{
    switch (s) {
    case PulseScheme::ratio_echo: return "ratio_echo";
    case PulseScheme::beat_echo: return "beat_echo";
    case PulseScheme::explicit_pulses: return "explicit";
    }
    return "?";
}

const char* to_string(SweepAxis a)
{
    switch (a) {
    case SweepAxis::none: return "none";
    case SweepAxis::t12: return "t12";
    case SweepAxis::d_split: return "d_split";
    }
    return "?";
}

namespace {

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_fields(const std::string& s)
{
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',' || c == ' ' || c == '\t') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

// Number parser accepting "inf" only when asked to.
double parse_number(const std::string& text, const std::string& where, bool allow_inf = false)
{
    const std::string t = trim(text);
    if (allow_inf && (t == "inf" || t == "infinity")) return std::numeric_limits<double>::infinity();
    double v = 0.0;
    const char* first = t.data();
    const char* last = t.data() + t.size();
    if (!t.empty() && *first == '+') ++first;
    const auto res = std::from_chars(first, last, v);
    if (t.empty() || res.ec != std::errc() || res.ptr != last || !std::isfinite(v))
        throw ConfigError(where + ": expected a finite number, got '" + t + "'");
    return v;
}

bool parse_bool(const std::string& text, const std::string& where)
{
    const std::string t = trim(text);
    if (t == "true" || t == "yes" || t == "1") return true;
    if (t == "false" || t == "no" || t == "0") return false;
    throw ConfigError(where + ": expected true or false, got '" + t + "'");
}

std::uint64_t parse_unsigned(const std::string& text, const std::string& where)
{
    const std::string t = trim(text);
    std::uint64_t v = 0;
    const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size())
        throw ConfigError(where + ": expected a non-negative integer, got '" + t + "'");
    return v;
}

Pulse parse_pulse(const std::string& text, const std::string& where)
{
    const auto f = split_fields(text);
    if (f.size() != 6)
        throw ConfigError(where + ": pulse needs 'start duration transition rabi phase detuning'");
    Pulse p;
    p.start = parse_number(f[0], where);
    p.duration = parse_number(f[1], where);
    try {
        p.transition = transition_from_string(f[2]);
    } catch (const ConfigError& e) {
        throw ConfigError(where + ": " + e.what());
    }
    p.rabi_amplitude = parse_number(f[3], where);
    p.phase = parse_number(f[4], where);
    p.detuning = parse_number(f[5], where);
    return p;
}

const std::map<std::string, std::set<std::string>>& known_keys()
{
    static const std::map<std::string, std::set<std::string>> keys = {
        {"system",
         {"omega12", "omega23", "gamma1", "gamma2", "gamma3", "gamma12", "capital_gamma", "capital_gamma13",
          "lambda_pump", "d_split", "d_split_over_gamma", "V", "coupling_form"}},
        {"sequence",
         {"scheme", "t12", "pulse_length", "lead", "phase_probe", "phase_coupling", "detuning_probe",
          "detuning_coupling", "t_end", "tail", "pulse", "t0"}},
        {"ensemble", {"n_atoms", "sigma_doppler", "scheme", "ratio_lock", "t_star", "grid_span"}},
        {"sweep", {"axis", "values", "d_unit"}},
        {"output", {"dir", "sample_dt"}},
        {"run", {"seed", "code_version"}},
    };
    return keys;
}

} // namespace

Scenario parse_scenario(const std::string& text, const std::string& origin)
{
    Scenario s;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    std::set<std::string> seen;
    int line_no = 0;
    std::optional<double> d_over_gamma;
    std::optional<double> d_abs;

    while (std::getline(in, raw)) {
        ++line_no;
        const std::string where = origin + ":" + std::to_string(line_no);
        std::string line = raw;
        const auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;

        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            if (!known_keys().count(section)) throw ConfigError(where + ": unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
        if (section.empty()) throw ConfigError(where + ": key outside any section");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (!known_keys().at(section).count(key))
            throw ConfigError(where + ": unknown key '" + key + "' in [" + section + "]");
        const std::string full = section + "." + key;
        if (key != "pulse" && !seen.insert(full).second)
            throw ConfigError(where + ": duplicate key '" + key + "' in [" + section + "]");
        seen.insert(full);

        try {
            SystemParams& p = s.system;
            SequenceSpec& q = s.sequence;
            EnsembleSpec& e = s.ensemble;
            if (section == "system") {
                if (key == "omega12") p.omega12 = parse_number(value, where);
                else if (key == "omega23") p.omega23 = parse_number(value, where);
                else if (key == "gamma1") p.gamma1 = parse_number(value, where);
                else if (key == "gamma2") p.gamma2 = parse_number(value, where);
                else if (key == "gamma3") p.gamma3 = parse_number(value, where);
                else if (key == "gamma12") p.gamma12 = parse_number(value, where);
                else if (key == "capital_gamma") p.capital_gamma = parse_number(value, where);
                else if (key == "capital_gamma13") p.capital_gamma13 = parse_number(value, where);
                else if (key == "lambda_pump") p.lambda_pump = parse_number(value, where);
                else if (key == "d_split") d_abs = parse_number(value, where, true);
                else if (key == "d_split_over_gamma") d_over_gamma = parse_number(value, where, true);
                else if (key == "V") p.V = parse_number(value, where);
                else if (key == "coupling_form") {
                    if (value == "consistent") p.coupling_form = CouplingForm::consistent;
                    else if (value == "verbatim") p.coupling_form = CouplingForm::verbatim;
                    else throw ConfigError(where + ": coupling_form must be consistent or verbatim");
                }
            } else if (section == "sequence") {
                if (key == "scheme") {
                    if (value == "ratio_echo") q.scheme = PulseScheme::ratio_echo;
                    else if (value == "beat_echo") q.scheme = PulseScheme::beat_echo;
                    else if (value == "explicit") q.scheme = PulseScheme::explicit_pulses;
                    else throw ConfigError(where + ": scheme must be ratio_echo, beat_echo or explicit");
                }
                else if (key == "t12") q.t12 = parse_number(value, where);
                else if (key == "pulse_length") q.pulse_length = parse_number(value, where);
                else if (key == "lead") q.lead = parse_number(value, where);
                else if (key == "phase_probe") q.phase_probe = parse_number(value, where);
                else if (key == "phase_coupling") q.phase_coupling = parse_number(value, where);
                else if (key == "detuning_probe") q.detuning_probe = parse_number(value, where);
                else if (key == "detuning_coupling") q.detuning_coupling = parse_number(value, where);
                else if (key == "t_end") {
                    if (value == "auto") q.t_end.reset();
                    else q.t_end = parse_number(value, where);
                }
                else if (key == "tail") q.tail = parse_number(value, where);
                else if (key == "pulse") q.pulses.push_back(parse_pulse(value, where));
                else if (key == "t0") q.t0 = parse_number(value, where);
            } else if (section == "ensemble") {
                if (key == "n_atoms") e.n_atoms = parse_unsigned(value, where);
                else if (key == "sigma_doppler") e.sigma_doppler = parse_number(value, where);
                else if (key == "scheme") e.scheme = sampling_scheme_from_string(value);
                else if (key == "ratio_lock") e.ratio_lock = parse_bool(value, where);
                else if (key == "t_star") e.t_star = parse_number(value, where);
                else if (key == "grid_span") e.grid_span = parse_number(value, where);
            } else if (section == "sweep") {
                if (key == "axis") {
                    if (value == "none") s.sweep.axis = SweepAxis::none;
                    else if (value == "t12") s.sweep.axis = SweepAxis::t12;
                    else if (value == "d_split") s.sweep.axis = SweepAxis::d_split;
                    else throw ConfigError(where + ": axis must be none, t12 or d_split");
                }
                else if (key == "values") {
                    for (const auto& f : split_fields(value)) s.sweep.values.push_back(parse_number(f, where, true));
                }
                else if (key == "d_unit") {
                    s.sweep.d_unit = value == "capital_gamma" ? 0.0 : parse_number(value, where);
                }
            } else if (section == "output") {
                if (key == "dir") s.output_dir = value;
                else if (key == "sample_dt") s.sample_dt = parse_number(value, where);
            } else if (section == "run") {
                if (key == "seed") s.seed = parse_unsigned(value, where);
                // code_version is informational
            }
        } catch (const ConfigError& e) {
            const std::string msg = e.what();
            if (msg.rfind(origin + ":", 0) == 0) throw;
            throw ConfigError(where + ": " + msg);
        }
    }

    std::vector<std::string> missing;
    for (const char* k : {"system.omega12", "system.omega23", "ensemble.n_atoms", "ensemble.sigma_doppler"})
        if (!seen.count(k)) missing.emplace_back(k);
    const bool sweeps_t12 = s.sweep.axis == SweepAxis::t12;
    if (!sweeps_t12 && !seen.count("sequence.t12")) missing.emplace_back("sequence.t12");
    if (!missing.empty()) {
        std::string msg = origin + ": missing required keys:";
        for (const auto& m : missing) msg += " " + m;
        throw ConfigError(msg);
    }

    if (d_abs && d_over_gamma) throw ConfigError(origin + ": give d_split or d_split_over_gamma, not both");
    if (d_over_gamma) {
        if (std::isinf(*d_over_gamma)) s.system.d_split = Splitting::infinite();
        else s.system.d_split = Splitting::finite(*d_over_gamma * s.system.capital_gamma);
    } else if (d_abs) {
        s.system.d_split = std::isinf(*d_abs) ? Splitting::infinite() : Splitting::finite(*d_abs);
    }
    if (sweeps_t12 && !seen.count("sequence.t12") && !s.sweep.values.empty())
        s.sequence.t12 = s.sweep.values.front();
    s.ensemble.seed = s.seed;
    return s;
}

Scenario load_scenario(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw IoError("error reading " + path.string());
    return parse_scenario(ss.str(), path.string());
}

std::string format_scenario(const Scenario& s)
{
    const auto f = format_double;
    std::ostringstream os;
    const SystemParams& p = s.system;
    os << "[system]\n"
       << "omega12 = " << f(p.omega12) << '\n'
       << "omega23 = " << f(p.omega23) << '\n'
       << "gamma1 = " << f(p.gamma1) << '\n'
       << "gamma2 = " << f(p.gamma2) << '\n'
       << "gamma3 = " << f(p.gamma3) << '\n'
       << "gamma12 = " << f(p.gamma12) << '\n'
       << "capital_gamma = " << f(p.capital_gamma) << '\n'
       << "capital_gamma13 = " << f(p.capital_gamma13) << '\n'
       << "lambda_pump = " << f(p.lambda_pump) << '\n'
       << "d_split = " << (p.d_split.is_infinite() ? std::string("inf") : f(p.d_split.value())) << '\n'
       << "V = " << f(p.V) << '\n'
       << "coupling_form = " << (p.coupling_form == CouplingForm::consistent ? "consistent" : "verbatim")
       << "\n\n";

    const SequenceSpec& q = s.sequence;
    os << "[sequence]\n"
       << "scheme = " << to_string(q.scheme) << '\n'
       << "t12 = " << f(q.t12) << '\n'
       << "pulse_length = " << f(q.pulse_length) << '\n'
       << "lead = " << f(q.lead) << '\n'
       << "phase_probe = " << f(q.phase_probe) << '\n'
       << "phase_coupling = " << f(q.phase_coupling) << '\n'
       << "detuning_probe = " << f(q.detuning_probe) << '\n'
       << "detuning_coupling = " << f(q.detuning_coupling) << '\n'
       << "t_end = " << (q.t_end ? f(*q.t_end) : std::string("auto")) << '\n'
       << "tail = " << f(q.tail) << '\n';
    if (q.scheme == PulseScheme::explicit_pulses) {
        os << "t0 = " << f(q.t0) << '\n';
        for (const Pulse& pl : q.pulses)
            os << "pulse = " << f(pl.start) << ' ' << f(pl.duration) << ' ' << to_string(pl.transition) << ' '
               << f(pl.rabi_amplitude) << ' ' << f(pl.phase) << ' ' << f(pl.detuning) << '\n';
    }
    os << '\n';

    const EnsembleSpec& e = s.ensemble;
    os << "[ensemble]\n"
       << "n_atoms = " << e.n_atoms << '\n'
       << "sigma_doppler = " << f(e.sigma_doppler) << '\n'
       << "scheme = " << to_string(e.scheme) << '\n'
       << "ratio_lock = " << (e.ratio_lock ? "true" : "false") << '\n'
       << "t_star = " << f(e.t_star) << '\n'
       << "grid_span = " << f(e.grid_span) << "\n\n";

    os << "[sweep]\n"
       << "axis = " << to_string(s.sweep.axis) << '\n';
    if (!s.sweep.values.empty()) {
        os << "values =";
        for (std::size_t k = 0; k < s.sweep.values.size(); ++k)
            os << (k ? ", " : " ") << (std::isinf(s.sweep.values[k]) ? std::string("inf") : f(s.sweep.values[k]));
        os << '\n';
    }
    os << "d_unit = " << (s.sweep.d_unit == 0.0 ? std::string("capital_gamma") : f(s.sweep.d_unit)) << "\n\n";

    os << "[output]\n"
       << "dir = " << s.output_dir.generic_string() << '\n'
       << "sample_dt = " << f(s.sample_dt) << "\n\n";

    os << "[run]\n"
       << "seed = " << s.seed << '\n'
       << "code_version = " << code_version << '\n';
    return os.str();
}

std::vector<std::string> preset_names()
{
    return {"paper_sec3", "paper_sec3_beats"};
}

std::string preset_text(const std::string& name)
{
    // Shared parameter block: gamma21 = 2 gamma1 and gamma23 = 2 gamma3 are
    // 1e10 1/s, Gamma = 1e12 1/s, gamma13 = Gamma13 = 0, Delta12 = 50 gamma
    // (the Doppler width, rad/s) with ratio one, 100 fs pulses.
    const std::string system =
        "[system]\n"
        "omega12 = 2.4e15\n"
        "omega23 = 2.4e15\n"
        "gamma1 = 5e9\n"
        "gamma2 = 0\n"
        "gamma3 = 5e9\n"
        "gamma12 = 1e10\n"
        "capital_gamma = 1e12\n"
        "capital_gamma13 = 0\n"
        "lambda_pump = 0\n"
        "V = 0\n";
    if (name == "paper_sec3") {
        return "# Three-level photon echo, ratio-echo scheme, t12 sweep for the decay law.\n" + system +
               "# degenerate upper levels; with d = inf rho13 is frozen and no echo forms\n"
               "d_split = 0\n"
               "\n[sequence]\n"
               "scheme = ratio_echo\n"
               "pulse_length = 1e-13\n"
               "lead = 1e-12\n"
               "t_end = auto\n"
               "\n[ensemble]\n"
               "n_atoms = 201\n"
               "sigma_doppler = 5e11\n"
               "scheme = uniform_grid\n"
               "ratio_lock = true\n"
               "\n[sweep]\n"
               "axis = t12\n"
               "values = 1e-11, 2e-11, 3e-11, 4e-11, 5e-11, 6e-11, 7e-11, 8e-11\n"
               "\n[output]\n"
               "dir = paper_sec3_out\n"
               "sample_dt = 2e-14\n"
               "\n[run]\n"
               "seed = 0\n";
    }
    if (name == "paper_sec3_beats") {
        // d values are in units of Gamma (d_unit = capital_gamma).
        return "# Beat scheme, sweep of the level splitting d in units of Gamma.\n" + system +
               "\n[sequence]\n"
               "scheme = beat_echo\n"
               "t12 = 4e-11\n"
               "pulse_length = 1e-13\n"
               "lead = 1e-12\n"
               "t_end = auto\n"
               "\n[ensemble]\n"
               "n_atoms = 201\n"
               "sigma_doppler = 5e11\n"
               "scheme = uniform_grid\n"
               "ratio_lock = true\n"
               "\n[sweep]\n"
               "axis = d_split\n"
               "values = 0.02, 0.05, 0.10\n"
               "d_unit = capital_gamma\n"
               "\n[output]\n"
               "dir = paper_sec3_beats_out\n"
               "sample_dt = 2e-14\n"
               "\n[run]\n"
               "seed = 0\n";
    }
    throw ConfigError("unknown preset '" + name + "'");
}

PulseSequence build_sequence(const SequenceSpec& spec, const SystemParams& params)
{
    PulseSequence seq;
    if (spec.scheme == PulseScheme::explicit_pulses) {
        if (spec.pulses.empty()) throw ConfigError("explicit scheme needs at least one pulse");
        if (!spec.t_end) throw ConfigError("explicit scheme needs t_end");
        seq.pulses = spec.pulses;
        seq.t0 = spec.t0;
        seq.t12 = spec.t12;
        seq.t_end = *spec.t_end;
        return seq;
    }

    const double tau = spec.pulse_length;
    const double lead = spec.lead;
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("pulse_length must be positive");
    if (!(lead >= 0.0) || !std::isfinite(lead)) throw ConfigError("lead must be non-negative");
    if (!(spec.t12 >= 3.0 * tau))
        throw ConfigError("t12 too short for the pulse scheme (needs at least 3 pulse lengths)");

    // Rectangular pulses: g0 tau = pi/4 transfers half, g0 tau = pi/2 all.
    const double half = std::numbers::pi / (4.0 * tau);
    const double full = std::numbers::pi / (2.0 * tau);
    const double closing = spec.scheme == PulseScheme::ratio_echo ? full : half;
    const double s = lead + spec.t12 - tau;
    const auto probe = Transition::probe_12;
    const auto coupling = Transition::coupling_23;
    seq.pulses = {
        {lead, tau, probe, half, spec.phase_probe, spec.detuning_probe},
        {lead + tau, tau, coupling, half, spec.phase_coupling, spec.detuning_coupling},
        {s, tau, coupling, full, spec.phase_coupling, spec.detuning_coupling},
        {s + tau, tau, probe, closing, spec.phase_probe, spec.detuning_probe},
    };
    std::stable_sort(seq.pulses.begin(), seq.pulses.end(),
                     [](const Pulse& a, const Pulse& b) { return a.start < b.start; });
    seq.t0 = s + 0.5 * tau;
    seq.t12 = spec.t12;
    if (spec.t_end) {
        seq.t_end = *spec.t_end;
    } else {
        const double tc = predict_echo_time(seq.t0, seq.t12, params.omega12, params.omega23);
        seq.t_end = tc + spec.tail;
    }
    return seq;
}

Splitting sweep_splitting(const Scenario& s, double value)
{
    if (std::isinf(value)) return Splitting::infinite();
    const double unit = s.sweep.d_unit == 0.0 ? s.system.capital_gamma : s.sweep.d_unit;
    return Splitting::finite(value * unit);
}

Scenario at_sweep_value(const Scenario& s, double value)
{
    Scenario out = s;
    if (s.sweep.axis == SweepAxis::t12) out.sequence.t12 = value;
    else if (s.sweep.axis == SweepAxis::d_split) out.system.d_split = sweep_splitting(s, value);
    return out;
}

namespace {

// Horizon long enough for the echo envelope to die out.
Scenario with_auto_tail(const Scenario& s)
{
    Scenario out = s;
    if (!out.sequence.t_end && out.ensemble.sigma_doppler > 0.0) {
        const double t_star = out.ensemble.t_star > 0.0 ? out.ensemble.t_star
                                                        : echo_half_width(out.ensemble.sigma_doppler, out.system);
        out.sequence.tail = std::max(out.sequence.tail, 8.0 * t_star);
    }
    return out;
}

std::vector<double> point_values(const Scenario& s, bool use_sweep)
{
    if (!use_sweep || s.sweep.axis == SweepAxis::none) {
        if (s.sweep.axis == SweepAxis::t12) return {s.sequence.t12};
        if (s.sweep.axis == SweepAxis::d_split) return {s.sweep.values.empty() ? 0.0 : s.sweep.values.front()};
        return {0.0};
    }
    return s.sweep.values;
}

} // namespace

void validate(const Scenario& s)
{
    validate(s.system);
    validate(s.ensemble);
    if (!(s.sample_dt > 0.0) || !std::isfinite(s.sample_dt)) throw ConfigError("sample_dt must be positive");
    if (s.sweep.axis != SweepAxis::none) {
        if (s.sweep.values.empty()) throw ConfigError("sweep has no values");
        for (std::size_t k = 1; k < s.sweep.values.size(); ++k)
            if (!(s.sweep.values[k] > s.sweep.values[k - 1]))
                throw ConfigError("sweep values must be strictly increasing");
        for (double v : s.sweep.values) {
            if (std::isnan(v)) throw ConfigError("sweep value not a number");
            if (std::isinf(v) && s.sweep.axis != SweepAxis::d_split)
                throw ConfigError("only d_split sweeps accept inf");
            if (s.sweep.axis == SweepAxis::d_split && v < 0.0) throw ConfigError("d_split sweep value negative");
        }
        if (s.sweep.axis == SweepAxis::t12 && s.sequence.scheme == PulseScheme::explicit_pulses)
            throw ConfigError("t12 sweeps need a generated pulse scheme");
        if (!(s.sweep.d_unit >= 0.0) || !std::isfinite(s.sweep.d_unit)) throw ConfigError("d_unit negative");
    } else if (!s.sweep.values.empty()) {
        throw ConfigError("sweep values given without an axis");
    }
    const std::vector<double> values = point_values(s, true);
    for (double v : values) {
        const Scenario pt = with_auto_tail(at_sweep_value(s, v));
        validate(pt.system, build_sequence(pt.sequence, pt.system));
    }
}

namespace {

PointResult simulate_point(const Scenario& base, double value, std::size_t threads)
{
    const Scenario s = with_auto_tail(at_sweep_value(base, value));
    PointResult out;
    out.sweep_value = value;
    out.sequence = build_sequence(s.sequence, s.system);
    validate(s.system, out.sequence);

    RunOptions opt;
    opt.sample_dt = s.sample_dt;
    opt.threads = threads;
    out.result = simulate_ensemble(s.system, out.sequence, s.ensemble, opt);

    const double tc = predict_echo_time(out.sequence.t0, out.sequence.t12, s.system.omega12, s.system.omega23);
    TimeWindow w = echo_search_window(out.sequence);
    if (s.ensemble.sigma_doppler > 0.0) {
        const double t_star = s.ensemble.t_star > 0.0 ? s.ensemble.t_star
                                                      : echo_half_width(s.ensemble.sigma_doppler, s.system);
        const double reach = std::max(5.0 * t_star, 20.0 * s.sample_dt);
        w.begin = std::max(w.begin, tc - reach);
        w.end = std::min(w.end, tc + reach);
    }
    const EchoPeak peak = detect_echo_peak(out.result.trace, w.begin, w.end);

    out.report.sweep_value = value;
    out.report.t_echo_detected = peak.time;
    out.report.t_echo_predicted = tc;
    out.report.peak_intensity = peak.intensity;
    out.report.diagnostics = out.result.diagnostics;
    out.peak_polarization = out.result.trace.polarization[peak.index];
    return out;
}

bool uniform_spacing(const std::vector<double>& v)
{
    if (v.size() < 2) return false;
    const double h = v[1] - v[0];
    for (std::size_t k = 2; k < v.size(); ++k)
        if (std::abs((v[k] - v[k - 1]) - h) > 1e-6 * std::abs(h)) return false;
    return true;
}

SignalTrace series_of(const std::vector<PointResult>& points)
{
    std::vector<double> x;
    std::vector<cplx> p;
    std::vector<double> i;
    for (const auto& pt : points) {
        x.push_back(pt.sweep_value);
        p.push_back(pt.peak_polarization);
        i.push_back(pt.report.peak_intensity);
    }
    return peak_series(x, p, i);
}

} // namespace

SweepResult simulate_sweep(const Scenario& s, std::size_t threads, bool use_sweep)
{
    validate(s);
    const std::vector<double> values = point_values(s, use_sweep);
    SweepResult out;
    out.points.resize(values.size());
    threads = std::max<std::size_t>(1, threads);
    if (values.size() >= threads) {
        parallel_for(values.size(), threads, [&](std::size_t k) { out.points[k] = simulate_point(s, values[k], 1); });
    } else {
        for (std::size_t k = 0; k < values.size(); ++k) out.points[k] = simulate_point(s, values[k], threads);
    }

    if (use_sweep && s.sweep.axis == SweepAxis::t12) {
        if (out.points.size() >= 3) {
            std::vector<DecayPoint> pts;
            for (const auto& pt : out.points) pts.push_back({pt.sweep_value, pt.report.peak_intensity});
            out.decay_fit = fit_exponential_decay(pts);
        }
        if (s.ensemble.ratio_lock)
            out.theoretical_a = -theoretical_decay_coefficient(s.system.omega12, s.system.omega23, s.system.gamma12);
        std::vector<double> xs;
        for (const auto& pt : out.points) xs.push_back(pt.sweep_value);
        if (out.points.size() >= 8 && uniform_spacing(xs)) {
            const SignalTrace series = series_of(out.points);
            out.beat_period = beat_period(series, xs.front(), xs.back());
        }
    }
    for (auto& pt : out.points) {
        pt.report.decay_fit = out.decay_fit;
        pt.report.beat_period = out.beat_period;
    }
    return out;
}

std::string trace_csv(const SignalTrace& trace)
{
    std::string out = "t_seconds,re_P,im_P,abs_P,intensity\n";
    for (std::size_t k = 0; k < trace.size(); ++k) {
        const cplx p = trace.polarization[k];
        out += format_double(trace.t_grid[k]);
        out += ',';
        out += format_double(p.real());
        out += ',';
        out += format_double(p.imag());
        out += ',';
        out += format_double(std::abs(p));
        out += ',';
        out += format_double(trace.intensity[k]);
        out += '\n';
    }
    return out;
}

SignalTrace parse_trace_csv(const std::string& text)
{
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || trim(line) != "t_seconds,re_P,im_P,abs_P,intensity")
        throw ConfigError("trace csv: expected header t_seconds,re_P,im_P,abs_P,intensity");
    std::vector<double> t;
    std::vector<cplx> p;
    std::vector<double> intensity;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        const std::string where = "trace csv line " + std::to_string(row);
        if (cells.size() != 5) throw ConfigError(where + ": expected 5 columns");
        t.push_back(parse_number(cells[0], where));
        p.emplace_back(parse_number(cells[1], where), parse_number(cells[2], where));
        intensity.push_back(parse_number(cells[4], where));
    }
    SignalTrace trace = SignalTrace::from_polarization(std::move(t), std::move(p));
    for (std::size_t k = 0; k < trace.size(); ++k)
        if (std::abs(trace.intensity[k] - intensity[k]) > 1e-9 * std::max(1.0, std::abs(intensity[k])))
            throw ConfigError("trace csv line " + std::to_string(k + 2) + ": intensity differs from |P|^2");
    check_trace(trace);
    return trace;
}

SignalTrace load_trace_csv(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_trace_csv(ss.str());
}

std::string svg_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                     const std::vector<PlotSeries>& series)
{
    constexpr double width = 800, height = 500, left = 80, right = 20, top = 40, bottom = 60;
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series) {
        for (std::size_t k = 0; k < s.x.size() && k < s.y.size(); ++k) {
            if (!std::isfinite(s.x[k]) || !std::isfinite(s.y[k])) continue;
            x0 = std::min(x0, s.x[k]);
            x1 = std::max(x1, s.x[k]);
            y0 = std::min(y0, s.y[k]);
            y1 = std::max(y1, s.y[k]);
        }
    }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    const double pw = width - left - right, ph = height - top - bottom;
    auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
    auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4g", v);
        return std::string(buf);
    };
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n"
       << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double fx = x0 + (x1 - x0) * k / 4.0, fy = y0 + (y1 - y0) * k / 4.0;
        os << "<text x=\"" << px(fx) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">" << num(fx)
           << "</text>\n"
           << "<text x=\"" << left - 6 << "\" y=\"" << py(fy) + 4 << "\" text-anchor=\"end\">" << num(fy)
           << "</text>\n";
    }
    os << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 15 << "\" text-anchor=\"middle\">" << x_label
       << "</text>\n"
       << "<text x=\"18\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
       << top + ph / 2 << ")\">" << y_label << "</text>\n";
    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* colour = palette[s % 6];
        os << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.2\" points=\"";
        for (std::size_t k = 0; k < series[s].x.size() && k < series[s].y.size(); ++k) {
            if (!std::isfinite(series[s].x[k]) || !std::isfinite(series[s].y[k])) continue;
            os << num(px(series[s].x[k])) << ',' << num(py(series[s].y[k])) << ' ';
        }
        os << "\"/>\n"
           << "<text x=\"" << left + pw - 8 << "\" y=\"" << top + 16 + 14 * static_cast<double>(s)
           << "\" text-anchor=\"end\" fill=\"" << colour << "\">" << series[s].label << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

namespace {

void write_file(const fs::path& path, const std::string& content)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << content;
    out.flush();
    if (!out) throw IoError("error writing " + path.string());
}

std::string sweep_label(const Scenario& s, double v)
{
    if (s.sweep.axis == SweepAxis::t12) return "t12 = " + format_double(v * 1e12) + " ps";
    if (s.sweep.axis == SweepAxis::d_split)
        return "d = " + (std::isinf(v) ? std::string("inf") : format_double(v));
    return "run";
}

} // namespace

void write_artifacts(const Scenario& s, const SweepResult& result)
{
    const fs::path target = s.output_dir;
    const fs::path parent = target.has_parent_path() ? target.parent_path() : fs::path(".");
    const fs::path tmp = parent / ("." + target.filename().string() + ".partial");
    std::error_code ec;
    fs::remove_all(tmp, ec);
    try {
        if (!fs::create_directories(tmp, ec) || ec)
            throw IoError("cannot create " + tmp.string() + (ec ? ": " + ec.message() : ""));

        std::string aggregate = echo_csv_header() + "\n";
        std::string reports;
        std::vector<PlotSeries> traces;
        PlotSeries peaks{"peak intensity", {}, {}};
        for (std::size_t k = 0; k < result.points.size(); ++k) {
            const PointResult& pt = result.points[k];
            char name[32];
            std::snprintf(name, sizeof name, "trace_%03zu.csv", k);
            write_file(tmp / name, trace_csv(pt.result.trace));
            aggregate += to_csv_row(pt.report) + "\n";
            reports += "[point " + std::to_string(k) + "]\n" + to_key_value(pt.report) + "\n";

            PlotSeries ts{sweep_label(s, pt.sweep_value), {}, pt.result.trace.intensity};
            for (double t : pt.result.trace.t_grid) ts.x.push_back(t * 1e12);
            traces.push_back(std::move(ts));
            peaks.x.push_back(s.sweep.axis == SweepAxis::t12 ? pt.sweep_value * 1e12 : pt.sweep_value);
            peaks.y.push_back(pt.report.peak_intensity);
        }
        write_file(tmp / "aggregate.csv", aggregate);
        write_file(tmp / "reports.txt", reports);

        std::ostringstream fit;
        if (result.decay_fit) {
            fit << "decay_I0 = " << format_double(result.decay_fit->I0) << '\n'
                << "decay_a = " << format_double(result.decay_fit->a) << '\n'
                << "decay_residual_rms = " << format_double(result.decay_fit->residual_rms) << '\n'
                << "decay_points = " << result.decay_fit->points << '\n';
        } else {
            fit << "decay_fit = insufficient points\n";
        }
        if (result.theoretical_a) fit << "decay_a_theory = " << format_double(*result.theoretical_a) << '\n';
        fit << "beat_period = " << (result.beat_period ? format_double(*result.beat_period) : "none") << '\n';
        write_file(tmp / "fit.txt", fit.str());

        write_file(tmp / "intensity.svg", svg_plot("Echo intensity", "t (ps)", "|P|^2", traces));
        const std::string x_label = s.sweep.axis == SweepAxis::t12     ? "t12 (ps)"
                                    : s.sweep.axis == SweepAxis::d_split ? "d (sweep units)"
                                                                       : "run";
        write_file(tmp / "peaks.svg", svg_plot("Echo peak intensity", x_label, "peak |P|^2", {peaks}));
        write_file(tmp / "manifest.txt", format_scenario(s));

        const fs::path old = parent / ("." + target.filename().string() + ".old");
        fs::remove_all(old, ec);
        if (fs::exists(target)) {
            fs::rename(target, old, ec);
            if (ec) throw IoError("cannot replace " + target.string() + ": " + ec.message());
        }
        fs::rename(tmp, target, ec);
        if (ec) throw IoError("cannot move results into " + target.string() + ": " + ec.message());
        fs::remove_all(old, ec);
    } catch (...) {
        fs::remove_all(tmp, ec);
        throw;
    }
}

namespace {

// Phase of the Hann-windowed, detrended series at frequency f.
double series_phase(const SweepResult& r, double f)
{
    std::vector<double> t, y;
    for (const auto& pt : r.points) {
        t.push_back(pt.sweep_value);
        y.push_back(pt.report.peak_intensity);
    }
    const std::size_t n = y.size();
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(n);
    cplx acc{};
    for (std::size_t i = 0; i < n; ++i) {
        const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                              static_cast<double>(n - 1));
        acc += w * (y[i] - mean) * std::polar(1.0, -2.0 * std::numbers::pi * f * (t[i] - t.front()));
    }
    return std::arg(acc);
}

} // namespace

CompareReport compare_modes(const Scenario& s, std::size_t threads)
{
    Scenario equal = s;
    equal.sequence.phase_probe = s.sequence.phase_coupling;
    for (Pulse& p : equal.sequence.pulses)
        if (p.transition == Transition::probe_12) p.phase = s.sequence.phase_coupling;

    CompareReport rep;
    rep.phase_difference = s.sequence.phase_probe - s.sequence.phase_coupling;
    rep.equal = simulate_sweep(equal, threads);
    rep.unequal = simulate_sweep(s, threads);

    double sum = 0.0;
    for (std::size_t k = 0; k < rep.equal.points.size(); ++k) {
        rep.sweep_values.push_back(rep.equal.points[k].sweep_value);
        const double off = rep.unequal.points[k].report.t_echo_detected - rep.equal.points[k].report.t_echo_detected;
        rep.peak_time_offsets.push_back(off);
        sum += off;
    }
    rep.mean_peak_time_offset = sum / static_cast<double>(std::max<std::size_t>(1, rep.peak_time_offsets.size()));

    rep.beat_period = rep.equal.beat_period;
    if (rep.beat_period) {
        const double f = 1.0 / *rep.beat_period;
        double dphi = series_phase(rep.unequal, f) - series_phase(rep.equal, f);
        dphi = std::remainder(dphi, 2.0 * std::numbers::pi);
        // A delay tau multiplies the transform by exp(-2 pi i f tau).
        rep.beat_offset = dphi == 0.0 ? 0.0 : -dphi / (2.0 * std::numbers::pi * f);
    }
    return rep;
}

std::string to_key_value(const CompareReport& r)
{
    std::ostringstream os;
    os << "phase_difference = " << format_double(r.phase_difference) << '\n'
       << "mean_peak_time_offset = " << format_double(r.mean_peak_time_offset) << '\n'
       << "beat_period = " << (r.beat_period ? format_double(*r.beat_period) : "none") << '\n'
       << "beat_offset = " << (r.beat_offset ? format_double(*r.beat_offset) : "none") << '\n';
    for (std::size_t k = 0; k < r.sweep_values.size(); ++k)
        os << "peak_time_offset[" << format_double(r.sweep_values[k]) << "] = "
           << format_double(r.peak_time_offsets[k]) << '\n';
    return os.str();
}

} // namespace pecho
