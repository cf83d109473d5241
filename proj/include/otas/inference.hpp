#pragma once

#include <algorithm>
#include <chrono>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "otas/model.hpp"
#include "otas/stream.hpp"

namespace otas {

enum class InferenceMode { online, semi_online };

inline InferenceMode parse_mode(const std::string& s) {
  if (s == "online") return InferenceMode::online;
  if (s == "semi" || s == "semi-online" || s == "semi_online") return InferenceMode::semi_online;
  throw ConfigError("unknown mode '" + s + "' (expected online or semi)");
}

inline std::string mode_name(InferenceMode m) { return m == InferenceMode::online ? "online" : "semi"; }

struct SessionOptions {
  /// Online mode only: rerun the GRU from a zero hidden over every window
  /// instead of reusing the per-frame outputs of one continuous pass.
  bool rerun_gru_per_window = false;
};

struct Emission {
  std::size_t t = 0;  // 0-based frame index
  std::vector<double> probs;
};

/// Streaming per-video inference.
///
/// Semi-online: frames are buffered into non-overlapping clips of w; each
/// full clip is run once and all w predictions are emitted.
/// Online: every arriving frame is classified from the w-frame window ending
/// at it, and only that frame's prediction is emitted. Before w frames have
/// arrived the window is left-padded with copies of frame 1. In both modes
/// the memory bank and carried GRU state only advance at clip boundaries.
template <class T>
class StreamSession {
 public:
  StreamSession(const Segmenter<T>& model, InferenceMode mode, SessionOptions opt = {})
      : model_(model), mode_(mode), opt_(opt), state_(model.fresh_state()), hidden_(state_.clip.gru_hidden) {}

  InferenceMode mode() const { return mode_; }
  std::size_t frames_seen() const { return seen_; }
  const StreamState<T>& state() const { return state_; }

  std::vector<Emission> push_frame(std::span<const T> x) {
    const auto& cfg = model_.config();
    if (x.size() != cfg.input_dim)
      throw ShapeError("frame has " + std::to_string(x.size()) + " features, model expects " +
                       std::to_string(cfg.input_dim));
    if (finished_) throw std::logic_error("push_frame after finish");
    ++seen_;
    return mode_ == InferenceMode::online ? push_online(x) : push_semi(x);
  }

  std::vector<Emission> push_frame(const std::vector<T>& x) { return push_frame(std::span<const T>(x)); }

  /// Flushes a trailing partial clip (semi-online); no-op online.
  std::vector<Emission> finish() {
    finished_ = true;
    std::vector<Emission> out;
    if (mode_ != InferenceMode::semi_online || buffer_.empty()) return out;
    const std::size_t real = buffer_.size();
    auto clip = window_from(buffer_, model_.config().window, false);
    Tape<T> tape(false);
    auto res = model_.forward_clip(tape, clip, state_);
    emit_rows(res.logits->value, 0, real, seen_ - real, out);
    buffer_.clear();
    return out;
  }

 private:
  using Row = std::vector<T>;

  std::vector<Emission> push_semi(std::span<const T> x) {
    std::vector<Emission> out;
    buffer_.emplace_back(x.begin(), x.end());
    const std::size_t w = model_.config().window;
    if (buffer_.size() < w) return out;
    auto clip = window_from(buffer_, w, false);
    Tape<T> tape(false);
    auto res = model_.forward_clip(tape, clip, state_);
    emit_rows(res.logits->value, 0, w, seen_ - w, out);
    model_.commit(state_, res);
    buffer_.clear();
    return out;
  }

  std::vector<Emission> push_online(std::span<const T> x) {
    const auto& cfg = model_.config();
    const std::size_t w = cfg.window;
    recent_.emplace_back(x.begin(), x.end());
    if (recent_.size() > w) recent_.pop_front();

    // One continuous GRU pass, advanced by a single frame.
    Tape<T> tape(false);
    Tensor<T> xt({1, cfg.input_dim}, Row(x.begin(), x.end()));
    auto c_t = model_.accumulator()(tape, leaf(xt), hidden_)->value;
    if (cfg.use_gru) hidden_ = c_t.reshaped({cfg.hidden_dim});
    context_.push_back(Row(c_t.storage()));
    if (context_.size() > w) context_.pop_front();

    Tensor<T> window_ctx;
    MemoryBank<T> bank = state_.bank;
    if (seen_ < w || opt_.rerun_gru_per_window) {
      auto win = window_from(recent_, w, true);
      window_ctx = model_.accumulator()(tape, leaf(win), ClipState<T>::zeros(cfg.hidden_dim).gru_hidden)->value;
      if (seen_ < w) bank = MemoryBank<T>();
    } else {
      window_ctx = window_from(context_, w, false);
    }
    auto c_gru = leaf(window_ctx);
    auto [logits, enhanced] = model_.head(tape, c_gru, model_.memory_for(tape, bank, c_gru));
    require_finite(logits->value, "logits");
    std::vector<Emission> out;
    emit_rows(logits->value, w - 1, w, seen_ - 1, out);

    if (seen_ % w == 0) {
      ClipState<T> next{cfg.use_gru ? hidden_ : state_.clip.gru_hidden};
      model_.commit(state_, window_ctx, enhanced->value, next);
    }
    return out;
  }

  /// Stacks rows into [w x cols]; pads on the left with the first row or on
  /// the right with the last row.
  static Tensor<T> window_from(const std::deque<Row>& rows, std::size_t w, bool pad_left) {
    const std::size_t n = rows.size(), d = rows.front().size();
    Tensor<T> out({w, d});
    for (std::size_t i = 0; i < w; ++i) {
      std::size_t src;
      if (pad_left)
        src = i + n >= w ? i + n - w : 0;
      else
        src = std::min(i, n - 1);
      std::copy(rows[src].begin(), rows[src].end(), out.row(i).begin());
    }
    return out;
  }

  static void emit_rows(const Tensor<T>& logits, std::size_t r0, std::size_t r1, std::size_t t0,
                        std::vector<Emission>& out) {
    const auto p = softmax_rows(logits);
    for (std::size_t r = r0; r < r1; ++r) {
      Emission e;
      e.t = t0 + (r - r0);
      e.probs.assign(p.row(r).begin(), p.row(r).end());
      out.push_back(std::move(e));
    }
  }

  const Segmenter<T>& model_;
  InferenceMode mode_;
  SessionOptions opt_;
  StreamState<T> state_;
  Tensor<T> hidden_;
  std::deque<Row> buffer_, recent_, context_;
  std::size_t seen_ = 0;
  bool finished_ = false;
};

template <class T>
PredictionStream run_video(const Segmenter<T>& model, const Tensor<float>& features, InferenceMode mode,
                           SessionOptions opt = {}, bool keep_probs = true) {
  if (features.rank() != 2 || features.rows() == 0) throw DataError("run_video: video has no frames");
  StreamSession<T> session(model, mode, opt);
  PredictionStream s;
  auto take = [&](std::vector<Emission>&& es) {
    for (auto& e : es) {
      if (e.t != s.size()) throw std::logic_error("emissions out of order");
      s.push(std::move(e.probs), keep_probs);
    }
  };
  std::vector<T> row(features.cols());
  for (std::size_t t = 0; t < features.rows(); ++t) {
    for (std::size_t i = 0; i < row.size(); ++i) row[i] = static_cast<T>(features(t, i));
    take(session.push_frame(row));
  }
  take(session.finish());
  if (s.size() != features.rows()) throw std::logic_error("emission count differs from frame count");
  return s;
}

struct FrameTiming {
  std::size_t t = 0;
  std::size_t position = 0;  // 1-based position of the frame in its clip
  double latency_ms = 0;     // duration of the call that emitted the frame
  double amortized_ms = 0;   // that duration shared across its emissions
  double wait_ms = 0;        // buffering wait before the frame's clip is run
  double delay_ms = 0;       // latency + wait
};

struct LatencyStats {
  double mean = 0, median = 0, p95 = 0;

  static LatencyStats of(std::vector<double> v) {
    LatencyStats s;
    if (v.empty()) return s;
    std::sort(v.begin(), v.end());
    for (double x : v) s.mean += x;
    s.mean /= double(v.size());
    s.median = v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
    s.p95 = v[std::min(v.size() - 1, static_cast<std::size_t>(std::ceil(0.95 * double(v.size()))) - 1)];
    return s;
  }
};

struct LatencyReport {
  InferenceMode mode = InferenceMode::semi_online;
  double frame_interval_ms = 0;
  bool analytic_wait = true;
  std::vector<FrameTiming> frames;
  LatencyStats latency, delay, wait;
  double fps = 0;
};

struct ProfileOptions {
  double frame_interval_ms = 1000.0 / 15;
  std::size_t warmup_frames = 0;
  /// Analytic mode derives the buffering wait from the frame interval.
  /// Live mode paces arrivals in real time and measures arrival to emission.
  bool analytic_wait = true;
  std::function<double()> clock_ms;  // defaults to a monotonic clock
  SessionOptions session;
};

template <class T>
LatencyReport profile(const Segmenter<T>& model, const Tensor<float>& features, InferenceMode mode,
                      ProfileOptions opt = {}) {
  if (features.rows() == 0) throw DataError("profile: empty stream");
  if (!opt.clock_ms) {
    const auto origin = std::chrono::steady_clock::now();
    opt.clock_ms = [origin] {
      return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - origin).count();
    };
  }
  const std::size_t D = features.cols(), w = model.config().window;
  auto row_of = [&](std::size_t t) {
    std::vector<T> r(D);
    for (std::size_t i = 0; i < D; ++i) r[i] = static_cast<T>(features(t, i));
    return r;
  };
  if (opt.warmup_frames > 0) {
    StreamSession<T> warm(model, mode, opt.session);
    for (std::size_t t = 0; t < std::min(opt.warmup_frames, features.rows()); ++t) warm.push_frame(row_of(t));
  }

  LatencyReport rep;
  rep.mode = mode;
  rep.frame_interval_ms = opt.frame_interval_ms;
  rep.analytic_wait = opt.analytic_wait;
  StreamSession<T> session(model, mode, opt.session);
  std::vector<double> arrival(features.rows(), 0.0);
  const double start = opt.clock_ms();
  auto record = [&](const std::vector<Emission>& es, double t0, double t1, std::size_t burst) {
    for (const auto& e : es) {
      FrameTiming f;
      f.t = e.t;
      f.position = mode == InferenceMode::online ? w : e.t % w + 1;
      f.latency_ms = t1 - t0;
      f.amortized_ms = es.empty() ? 0 : (t1 - t0) / double(es.size());
      if (mode == InferenceMode::online)
        f.wait_ms = 0;
      else if (opt.analytic_wait)
        f.wait_ms = double(burst - f.position) * opt.frame_interval_ms;
      else
        f.wait_ms = t0 - arrival[e.t];
      f.delay_ms = f.latency_ms + f.wait_ms;
      rep.frames.push_back(f);
    }
  };
  for (std::size_t t = 0; t < features.rows(); ++t) {
    auto r = row_of(t);
    if (!opt.analytic_wait) {
      const double due = start + double(t) * opt.frame_interval_ms;
      while (opt.clock_ms() < due) std::this_thread::sleep_for(std::chrono::microseconds(100));
    }
    arrival[t] = opt.clock_ms();
    const double t0 = arrival[t];
    auto es = session.push_frame(r);
    const double t1 = opt.clock_ms();
    record(es, t0, t1, w);
  }
  {
    const double t0 = opt.clock_ms();
    auto es = session.finish();
    const double t1 = opt.clock_ms();
    record(es, t0, t1, es.size());
  }
  std::vector<double> lat, del, wt, amort;
  for (const auto& f : rep.frames) {
    lat.push_back(f.latency_ms);
    del.push_back(f.delay_ms);
    wt.push_back(f.wait_ms);
    amort.push_back(f.amortized_ms);
  }
  rep.latency = LatencyStats::of(lat);
  rep.delay = LatencyStats::of(del);
  rep.wait = LatencyStats::of(wt);
  const double mean_amortized = LatencyStats::of(amort).mean;
  rep.fps = mean_amortized > 0 ? 1000.0 / mean_amortized : 0.0;
  return rep;
}

}  // namespace otas
