#pragma once

#include <array>
#include <atomic>
#include <deque>
#include <mutex>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "gazeflow/btfd.h"
#include "gazeflow/features.h"
#include "gazeflow/gaze_io.h"
#include "gazeflow/maml.h"
#include "gazeflow/scoring.h"

namespace gazeflow::sonify {

// Normal and anomalous ends of each audio parameter.
struct AudioEndpoints {
    double note_rate_min = 0.5;  // one note every two seconds
    double note_rate_max = 8.0;
    double cutoff_bright_hz = 2000.0;
    double cutoff_muffled_hz = 800.0;
    double reverb_min = 0.2;
    double reverb_max = 0.7;
};

inline constexpr std::array<int, 5> kPentatonic = {0, 2, 4, 7, 9};
inline constexpr std::array<int, 7> kPhrygian = {0, 1, 3, 5, 7, 8, 10};

using NoteWeights = std::array<double, 12>;

// Pitch-class distribution morphing from major pentatonic (0) to Phrygian (1).
NoteWeights note_weights(double mode_blend);

struct AudioParams {
    double t = 0.0;
    double mode_blend = 0.0;
    double note_rate_hz = 0.5;
    double cutoff_hz = 2000.0;
    double reverb_wet = 0.2;
    scoring::Zone zone = scoring::Zone::calm;
    NoteWeights note_weights{};
};

// Log interpolation for note rate and cutoff, linear for mode blend and reverb.
AudioParams map_params(const scoring::AnomalyScores& smoothed, const AudioEndpoints& endpoints = {});

// One wire-format line (no trailing newline).
std::string format_message(const scoring::AnomalyScores& smoothed, const AudioParams& params);

struct StreamMessage {
    double t = 0.0;
    double a_verg = 0.0, a_sacc = 0.0, a_fix = 0.0, a_overall = 0.0;
    std::string zone;
    double mode_blend = 0.0, note_rate_hz = 0.0, cutoff_hz = 0.0, reverb_wet = 0.0;
    NoteWeights note_weights{};
};

// Strict parse of a wire-format line; throws ParseError on a missing or extra field.
StreamMessage parse_message(std::string_view line);

// Destination of stream lines. write() throws IoError on failure.
class Sink {
public:
    virtual ~Sink() = default;
    virtual void write(const std::string& line) = 0;
};

class OstreamSink : public Sink {
public:
    explicit OstreamSink(std::ostream& out) : out_(out) {}
    void write(const std::string& line) override;

private:
    std::ostream& out_;
};

class VectorSink : public Sink {
public:
    void write(const std::string& line) override { lines.push_back(line); }
    std::vector<std::string> lines;
};

// Fans one line out to several sinks.
class TeeSink : public Sink {
public:
    explicit TeeSink(std::vector<Sink*> sinks) : sinks_(std::move(sinks)) {}
    void write(const std::string& line) override;

private:
    std::vector<Sink*> sinks_;
};

// Single-producer/single-consumer hand-off between the control channel and
// the replay loop. The replay loop publishes its clock so the control side can
// reject injections that would not fit into the remaining session.
class InjectionQueue {
public:
    void push(const maml::AnomalySpec& spec);
    std::vector<maml::AnomalySpec> drain();

    void set_clock(double replay_t, double end_t);
    double replay_time() const { return replay_t_.load(); }
    double end_time() const { return end_t_.load(); }

private:
    mutable std::mutex mutex_;
    std::deque<maml::AnomalySpec> pending_;
    std::atomic<double> replay_t_{0.0};
    std::atomic<double> end_t_{0.0};
};

// Validates one control-channel line and queues the injection. Returns the
// JSON reply line: {"ok":true} or {"ok":false,"err":...}.
std::string handle_control(std::string_view line, InjectionQueue& queue);

// Everything needed to score a replay for one user.
struct StreamContext {
    const btfd::BtfdModel* model = nullptr;
    features::Standardizer standardizer;
    scoring::PersonalBaseline baseline;
    features::InterocularBaseline interocular;
    AudioEndpoints endpoints;
    double smooth_alpha = scoring::kSmoothAlpha;
    scoring::ZoneBounds zones;
};

struct StreamOptions {
    double speed = 1.0;     // replay speed multiplier; <= 0 runs unthrottled
    double tick_hz = scoring::kUpdateRateHz;
    InjectionQueue* injections = nullptr;
};

struct StreamSummary {
    long messages = 0;
    std::vector<maml::AnomalySpec> applied;
};

// Replays `session` tick by tick: the trailing 3 s window is scored, smoothed,
// mapped and written as one line per tick. Ticks earlier than one full window
// emit zero raw scores. Queued injections are applied to the part of the
// session that has not been replayed yet.
StreamSummary emit_stream(const io::GazeSession& session, const StreamContext& context, Sink& sink,
                          const StreamOptions& options = {});

}  // namespace gazeflow::sonify
