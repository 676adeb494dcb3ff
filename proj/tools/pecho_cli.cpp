#include "pecho/scenario.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

using namespace pecho;

namespace {

enum Exit { ok = 0, config_error = 1, numerical_error = 2, io_error = 3 };

void print_summary(const SweepResult& r)
{
    for (const auto& pt : r.points)
        std::printf("value %-12s detected %-14s predicted %-14s peak %s\n", format_double(pt.sweep_value).c_str(),
                    format_double(pt.report.t_echo_detected).c_str(),
                    format_double(pt.report.t_echo_predicted).c_str(),
                    format_double(pt.report.peak_intensity).c_str());
    if (r.decay_fit)
        std::printf("decay fit: I0 %s a %s (theory %s)\n", format_double(r.decay_fit->I0).c_str(),
                    format_double(r.decay_fit->a).c_str(),
                    r.theoretical_a ? format_double(*r.theoretical_a).c_str() : "n/a");
    else
        std::printf("decay fit: insufficient points\n");
    std::printf("beat period: %s\n", r.beat_period ? format_double(*r.beat_period).c_str() : "none");
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Three-level photon echo simulator"};
    app.require_subcommand(1);

    std::string config_path, trace_path, preset_name, out_dir;
    std::size_t threads = 1;

    auto* simulate = app.add_subcommand("simulate", "Run the configured point (sweep ignored)");
    simulate->add_option("config", config_path, "Scenario file")->required();
    simulate->add_option("--out", out_dir, "Output directory (overrides [output] dir)");
    simulate->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

    auto* sweep = app.add_subcommand("sweep", "Run every sweep value");
    sweep->add_option("config", config_path, "Scenario file")->required();
    sweep->add_option("--out", out_dir, "Output directory (overrides [output] dir)");
    sweep->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

    std::vector<double> window;
    double t0 = 0.0, t12 = 0.0, ratio = 1.0;
    auto* analyze = app.add_subcommand("analyze", "Echo peak and beat period of a trace CSV");
    analyze->add_option("trace", trace_path, "Trace CSV")->required();
    analyze->add_option("--window", window, "Search window t_a t_b (s)")->expected(2);
    auto* opt_t0 = analyze->add_option("--t0", t0, "Reference time t0 (s) for the predicted echo");
    auto* opt_t12 = analyze->add_option("--t12", t12, "Pulse delay t12 (s) for the predicted echo");
    analyze->add_option("--ratio", ratio, "omega12 / omega23");

    auto* compare = app.add_subcommand("compare-modes", "Equal versus unequal probe/coupling phase");
    compare->add_option("config", config_path, "Scenario file")->required();
    compare->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

    auto* preset = app.add_subcommand("preset", "Print a preset scenario");
    preset->add_option("name", preset_name, "paper_sec3 or paper_sec3_beats")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : config_error;
    }

    try {
        if (*simulate || *sweep) {
            Scenario s = load_scenario(config_path);
            if (!out_dir.empty()) s.output_dir = out_dir;
            if (*sweep && s.sweep.axis == SweepAxis::none) throw ConfigError("scenario has no [sweep] axis");
            const SweepResult r = simulate_sweep(s, threads, static_cast<bool>(*sweep));
            write_artifacts(s, r);
            print_summary(r);
            std::printf("wrote %s\n", s.output_dir.string().c_str());
        } else if (*analyze) {
            const SignalTrace trace = load_trace_csv(trace_path);
            if (trace.size() < 3) throw ConfigError("trace has fewer than 3 samples");
            const double a = window.empty() ? trace.t_grid.front() : window[0];
            const double b = window.empty() ? trace.t_grid.back() : window[1];
            const EchoPeak peak = detect_echo_peak(trace, a, b);
            EchoReport rep;
            rep.t_echo_detected = peak.time;
            rep.peak_intensity = peak.intensity;
            rep.t_echo_predicted = (*opt_t0 && *opt_t12) ? predict_echo_time(t0, t12, ratio, 1.0)
                                                         : std::numeric_limits<double>::quiet_NaN();
            rep.beat_period = beat_period(trace, a, b);
            std::cout << to_key_value(rep);
        } else if (*compare) {
            const Scenario s = load_scenario(config_path);
            std::cout << to_key_value(compare_modes(s, threads));
        } else if (*preset) {
            std::cout << preset_text(preset_name);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return config_error;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return numerical_error;
    } catch (const IoError& e) {
        std::cerr << "i/o failure: " << e.what() << '\n';
        return io_error;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "i/o failure: " << e.what() << '\n';
        return io_error;
    }
    return ok;
}
