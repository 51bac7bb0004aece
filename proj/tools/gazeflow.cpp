// gazeflow: command-line front end for cohort synthesis, the three training
// stages, evaluation, personalization, replay streaming and offline injection.
//
// Exit codes: 0 success, 2 usage, 3 data (parse, io, validation, domain),
// 4 training divergence.

#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "gazeflow/config.h"
#include "gazeflow/error.h"
#include "gazeflow/pipeline.h"
#include "gazeflow/sonification.h"
#include "gazeflow/ws_server.h"

namespace fs = std::filesystem;
using namespace gazeflow;
using namespace gazeflow::harness;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitTraining = 4;

struct Common {
    std::string config_path;
    std::string dir;  // overrides [paths] out_dir

    RunConfig load() const {
        RunConfig c = config_path.empty() ? RunConfig{} : load_config(config_path);
        if (!dir.empty()) c.out_dir = dir;
        return c;
    }
};

void add_common(CLI::App* cmd, Common& common) {
    cmd->add_option("-c,--config", common.config_path, "INI run configuration (defaults when omitted)");
    cmd->add_option("-d,--dir", common.dir, "run directory for checkpoints and reports (overrides [paths] out_dir)");
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

io::GazeSession read_session(const std::string& path, const std::string& format) {
    return io::import_session(path, io::parse_file_format(format));
}

// ---- verbs -------------------------------------------------------------------

int synth_cohort(const Common& common, const std::string& out, double rate) {
    const RunConfig config = common.load();
    const fs::path dir = out.empty() ? config.out_dir / "cohort" : fs::path(out);
    const auto paths = write_cohort(config, dir, rate > 0.0 ? rate : config.cohort.source_rate_hz);
    std::cout << "wrote " << paths.size() << " sessions to " << dir.string() << '\n'
              << "fixation noise CV " << fixation_noise_cv(make_cohort(config)) << '\n';
    return 0;
}

void print_curve(const StageArtifacts& a) {
    for (std::size_t e = 0; e < a.curve.size(); ++e) {
        std::cout << "epoch " << e + 1;
        for (std::size_t k = 0; k < a.curve_columns.size(); ++k) std::cout << ' ' << a.curve_columns[k] << ' ' << a.curve[e][k];
        std::cout << '\n';
    }
}

int train(const Common& common, const std::string& stage) {
    const RunConfig config = common.load();
    const Cohort cohort = make_cohort(config);
    const fs::path dir = config.out_dir;
    StageArtifacts result;
    if (stage == "btfd") {
        result = run_btfd_stage(config, pretrain_data(config, cohort));
    } else if (stage == "cbp") {
        const StageArtifacts init = load_stage(dir, "btfd", config);
        result = run_cbp_stage(config, pretrain_data(config, cohort), init.model);
    } else {
        const StageArtifacts init = load_stage(dir, config.cbp_enabled ? "cbp" : "btfd", config);
        result = run_maml_stage(config, task_pool(config, cohort, init.population), init.model, init.population);
    }
    save_stage(dir, stage, config, result);
    print_curve(result);
    std::cout << "saved " << (dir / (stage + ".ckpt")).string() << '\n';
    return 0;
}

int evaluate_cmd(const Common& common) {
    const RunConfig config = common.load();
    const StageArtifacts meta = load_stage(config.out_dir, "maml", config);
    const Cohort cohort = make_cohort(config);
    const PopulationAe pop = train_population_ae(config, pretrain_data(config, cohort));
    const ExperimentReport report = evaluate(config, cohort, meta.model, meta.population, pop);
    const std::string text = format_report(report);
    write_file(config.out_dir / "report.txt", text);
    write_file(config.out_dir / "report.csv", report_csv(report));
    write_file(config.out_dir / "summary.csv", summary_csv(report));
    std::cout << text;
    return 0;
}

int personalize_cmd(const Common& common, const std::string& session_path, const std::string& format,
                    const std::string& out) {
    const RunConfig config = common.load();
    const StageArtifacts meta = load_stage(config.out_dir, "maml", config);
    const io::GazeSession session = read_session(session_path, format);
    const UserModel user = personalize_user(meta.model, meta.population, session, config, config.maml.inner_lr);
    const fs::path dir = out.empty() ? config.out_dir / "user" : fs::path(out);
    save_user(dir, user, config);
    std::cout << "personalized " << user.identity_id << " from " << maml::kShots << " calibration windows\n"
              << "saved " << dir.string() << '\n';
    std::cerr << "wall-clock " << user.wall_ms << " ms\n";
    return 0;
}

struct StreamArgs {
    std::string session_path;
    std::string format = "gazeflow_csv";
    std::string user_dir;
    std::string out;
    bool serve = false;
    int port = 0;
    double speed = 1.0;
    double client_timeout_s = 0.0;
};

int stream_cmd(const Common& common, const StreamArgs& args) {
    const RunConfig config = common.load();
    const fs::path user_dir = args.user_dir.empty() ? config.out_dir / "user" : fs::path(args.user_dir);
    const UserModel user = load_user(user_dir, config);
    const io::GazeSession session = read_session(args.session_path, args.format);

    sonify::StreamContext ctx;
    ctx.model = &user.model;
    ctx.standardizer = user.standardizer;
    ctx.baseline = user.baseline;
    ctx.interocular = user.interocular;
    ctx.endpoints = config.audio;
    ctx.smooth_alpha = config.smooth_alpha;
    ctx.zones = config.zones;

    std::optional<std::ofstream> file;
    std::optional<sonify::OstreamSink> primary;
    if (args.out.empty() || args.out == "-") {
        primary.emplace(std::cout);
    } else {
        file.emplace(args.out, std::ios::binary);
        if (!*file) throw IoError("cannot write " + args.out);
        primary.emplace(*file);
    }

    sonify::StreamOptions options;
    options.speed = args.speed;
    options.tick_hz = config.update_hz;

    if (!args.serve) {
        const auto summary = sonify::emit_stream(session, ctx, *primary, options);
        std::cerr << "streamed " << summary.messages << " messages\n";
        return 0;
    }

    sonify::InjectionQueue queue;
    net::StreamServer server(queue, static_cast<std::uint16_t>(args.port));
    std::cerr << "listening on ws://127.0.0.1:" << server.port() << std::endl;
    const auto timeout = args.client_timeout_s > 0.0
                             ? std::chrono::milliseconds(static_cast<long>(args.client_timeout_s * 1000.0))
                             : std::chrono::milliseconds(std::chrono::hours(24 * 365));
    if (!server.wait_for_client(timeout)) throw IoError("no WebSocket client connected");
    std::cerr << "client connected" << std::endl;

    sonify::TeeSink tee({&*primary, &server});
    options.injections = &queue;
    const auto summary = sonify::emit_stream(session, ctx, tee, options);
    server.flush(std::chrono::seconds(5));
    server.stop();
    std::cerr << "streamed " << summary.messages << " messages, applied " << summary.applied.size()
              << " injections\n";
    for (const auto& spec : summary.applied) std::cerr << "  " << maml::format_spec(spec) << '\n';
    return 0;
}

struct InjectArgs {
    std::string in, out, format = "gazeflow_csv", kind;
    double magnitude = 0.0, onset_s = 0.0, duration_s = 0.0;
};

int inject_cmd(const InjectArgs& args) {
    const io::GazeSession session = read_session(args.in, args.format);
    maml::AnomalySpec spec;
    spec.kind = io::parse_anomaly_kind(args.kind);
    spec.magnitude = args.magnitude;
    spec.onset_s = (session.samples.empty() ? 0.0 : session.samples.front().t) + args.onset_s;
    spec.duration_s = args.duration_s;
    const auto result = maml::inject(session, spec);
    io::export_gazeflow_csv(result.session, args.out);
    if (!result.warning.empty()) std::cerr << "warning: " << result.warning << '\n';
    std::cout << "wrote " << args.out << " (" << maml::format_spec(spec) << ")\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"GazeFlow personalized gaze anomaly detection and sonification"};
    app.require_subcommand(1);

    Common common;

    std::string cohort_out;
    double cohort_rate = 0.0;
    auto* synth = app.add_subcommand("synth-cohort", "write the synthetic cohort as gazeflow_csv files");
    add_common(synth, common);
    synth->add_option("-o,--out", cohort_out, "output directory (default <dir>/cohort)");
    synth->add_option("--rate", cohort_rate, "sampling rate in Hz (default [cohort] source_rate_hz)")
        ->check(CLI::Range(30.0, 1000.0));

    std::string stage;
    auto* train_cmd = app.add_subcommand("train", "run one training stage: btfd, cbp or maml");
    add_common(train_cmd, common);
    train_cmd->add_option("stage", stage, "btfd | cbp | maml")->required()->check(CLI::IsMember({"btfd", "cbp", "maml"}));

    auto* eval = app.add_subcommand("evaluate", "compare Pop-AE, P-AE-5s and GazeFlow on held-out identities");
    add_common(eval, common);

    std::string calib_path, calib_format = "gazeflow_csv", user_out;
    auto* pers = app.add_subcommand("personalize", "adapt the meta-model to one user from 15 s of calibration");
    add_common(pers, common);
    pers->add_option("session", calib_path, "calibration recording")->required();
    pers->add_option("--format", calib_format, "gazeflow_csv | gazebase_csv");
    pers->add_option("-o,--out", user_out, "user directory (default <dir>/user)");

    StreamArgs stream_args;
    auto* stream = app.add_subcommand("stream", "replay a session as the 10 Hz audio-parameter stream");
    add_common(stream, common);
    stream->add_option("session", stream_args.session_path, "recording to replay")->required();
    stream->add_option("--format", stream_args.format, "gazeflow_csv | gazebase_csv");
    stream->add_option("-u,--user", stream_args.user_dir, "personalized user directory (default <dir>/user)");
    stream->add_option("-o,--out", stream_args.out, "file sink ('-' or omitted: standard output)");
    stream->add_flag("--serve", stream_args.serve, "also serve the stream and the control channel over WebSocket");
    stream->add_option("--port", stream_args.port, "WebSocket port on 127.0.0.1 (0 picks a free port)")
        ->check(CLI::Range(0, 65535));
    stream->add_option("--speed", stream_args.speed, "replay speed multiplier; 0 runs unthrottled")
        ->check(CLI::NonNegativeNumber);
    stream->add_option("--client-timeout", stream_args.client_timeout_s,
                       "seconds to wait for the first WebSocket client (0 waits forever)")
        ->check(CLI::NonNegativeNumber);

    InjectArgs inject_args;
    auto* inj = app.add_subcommand("inject", "inject one synthetic anomaly into a recording, file to file");
    inj->add_option("input", inject_args.in, "source recording")->required();
    inj->add_option("output", inject_args.out, "destination gazeflow_csv")->required();
    inj->add_option("--format", inject_args.format, "format of the source recording");
    inj->add_option("--kind", inject_args.kind, "vergence_drift | fixation_instability | saccadic_dysmetria")
        ->required();
    inj->add_option("--magnitude", inject_args.magnitude, "degrees, variance multiplier or signed gain")->required();
    inj->add_option("--onset", inject_args.onset_s, "seconds from the start of the recording")->required();
    inj->add_option("--duration", inject_args.duration_s, "span length in seconds")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (*synth) return synth_cohort(common, cohort_out, cohort_rate);
        if (*train_cmd) return train(common, stage);
        if (*eval) return evaluate_cmd(common);
        if (*pers) return personalize_cmd(common, calib_path, calib_format, user_out);
        if (*stream) return stream_cmd(common, stream_args);
        if (*inj) return inject_cmd(inject_args);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const TrainingError& e) {
        std::cerr << "training error: " << e.what() << '\n';
        return kExitTraining;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    }
    return kExitUsage;
}
