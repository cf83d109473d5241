#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <string>
#include <vector>

#include "otas/errors.hpp"

namespace otas {

struct Segment {
  int label = 0;
  std::size_t start = 0;
  std::size_t length = 0;

  std::size_t end() const { return start + length; }
  bool operator==(const Segment&) const = default;
};

/// Maximal runs of equal labels.
class SegmentList {
 public:
  SegmentList() = default;

  static SegmentList from_labels(const std::vector<int>& labels) {
    SegmentList s;
    for (std::size_t t = 0; t < labels.size(); ++t) {
      if (s.segs_.empty() || s.segs_.back().label != labels[t])
        s.segs_.push_back({labels[t], t, 1});
      else
        ++s.segs_.back().length;
    }
    return s;
  }

  /// Builds from (label, length) pairs; adjacent equal labels are merged.
  static SegmentList from_runs(const std::vector<std::pair<int, std::size_t>>& runs) {
    SegmentList s;
    std::size_t t = 0;
    for (auto [label, len] : runs) {
      if (len == 0) throw DataError("segment length must be >= 1");
      if (!s.segs_.empty() && s.segs_.back().label == label)
        s.segs_.back().length += len;
      else
        s.segs_.push_back({label, t, len});
      t += len;
    }
    return s;
  }

  std::vector<int> expand() const {
    std::vector<int> out;
    out.reserve(frames());
    for (const auto& s : segs_) out.insert(out.end(), s.length, s.label);
    return out;
  }

  std::vector<int> label_sequence() const {
    std::vector<int> out;
    for (const auto& s : segs_) out.push_back(s.label);
    return out;
  }

  std::size_t frames() const { return segs_.empty() ? 0 : segs_.back().end(); }
  std::size_t size() const { return segs_.size(); }
  bool empty() const { return segs_.empty(); }
  const Segment& operator[](std::size_t i) const { return segs_[i]; }
  auto begin() const { return segs_.begin(); }
  auto end() const { return segs_.end(); }

  /// Same list without segments carrying `label`.
  SegmentList without(std::optional<int> label) const {
    if (!label) return *this;
    SegmentList s;
    for (const auto& seg : segs_)
      if (seg.label != *label) s.segs_.push_back(seg);
    return s;
  }

  bool operator==(const SegmentList&) const = default;

 private:
  std::vector<Segment> segs_;
};

inline const std::array<double, 3> kF1Thresholds{10, 25, 50};

inline double accuracy(const std::vector<int>& pred, const std::vector<int>& gt,
                       std::optional<int> ignore = std::nullopt) {
  if (pred.size() != gt.size())
    throw DataError("accuracy: " + std::to_string(pred.size()) + " predictions vs " + std::to_string(gt.size()) +
                    " ground-truth frames");
  std::size_t correct = 0, counted = 0;
  for (std::size_t t = 0; t < gt.size(); ++t) {
    if (ignore && gt[t] == *ignore) continue;
    ++counted;
    correct += pred[t] == gt[t];
  }
  if (counted == 0) throw DataError("accuracy: no frames to score");
  return 100.0 * double(correct) / double(counted);
}

inline std::size_t levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline double edit_score(const SegmentList& pred, const SegmentList& gt) {
  if (pred.empty() || gt.empty()) throw DataError("edit score needs nonempty segment lists");
  const double d = double(levenshtein(pred.label_sequence(), gt.label_sequence()));
  return std::max(0.0, 100.0 * (1.0 - d / double(std::max(pred.size(), gt.size()))));
}

struct MatchCounts {
  std::size_t tp = 0, fp = 0, fn = 0;

  MatchCounts& operator+=(const MatchCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }

  double f1() const {
    const double p = tp + fp ? double(tp) / double(tp + fp) : 0.0;
    const double r = tp + fn ? double(tp) / double(tp + fn) : 0.0;
    return p + r > 0 ? 100.0 * 2 * p * r / (p + r) : 0.0;
  }
};

inline double segment_iou(const Segment& a, const Segment& b) {
  const double inter = double(std::max<std::ptrdiff_t>(
      0, std::ptrdiff_t(std::min(a.end(), b.end())) - std::ptrdiff_t(std::max(a.start, b.start))));
  const double uni = double(std::max(a.end(), b.end()) - std::min(a.start, b.start));
  return inter / uni;
}

/// Greedy in-order matching: each predicted segment takes its best-IoU
/// same-class ground-truth segment (first on ties); it counts as a hit only
/// if the IoU clears the threshold and that segment is still unmatched.
inline MatchCounts match_segments(const std::vector<Segment>& pred, const std::vector<Segment>& gt,
                                  double threshold_pct) {
  MatchCounts c;
  std::vector<bool> hit(gt.size(), false);
  for (const auto& p : pred) {
    double best = -1;
    std::size_t idx = 0;
    for (std::size_t j = 0; j < gt.size(); ++j) {
      const double iou = gt[j].label == p.label ? segment_iou(p, gt[j]) : 0.0;
      if (iou > best) {
        best = iou;
        idx = j;
      }
    }
    if (best >= threshold_pct / 100.0 && !hit[idx]) {
      ++c.tp;
      hit[idx] = true;
    } else {
      ++c.fp;
    }
  }
  c.fn = gt.size() - static_cast<std::size_t>(std::count(hit.begin(), hit.end(), true));
  return c;
}

inline MatchCounts match_segments(const SegmentList& pred, const SegmentList& gt, double threshold_pct) {
  return match_segments(std::vector<Segment>(pred.begin(), pred.end()), std::vector<Segment>(gt.begin(), gt.end()),
                        threshold_pct);
}

inline double f1_at(const SegmentList& pred, const SegmentList& gt, double threshold_pct) {
  if (gt.empty()) throw DataError("F1 needs a nonempty ground truth");
  return match_segments(pred, gt, threshold_pct).f1();
}

struct MetricReport {
  double acc = 0;
  double edit = 0;
  std::array<double, 3> f1{};  // at kF1Thresholds
  double seg = 0;

  void finish() { seg = (edit + f1[0] + f1[1] + f1[2]) / 4.0; }
};

/// Accumulates videos: Acc over all frames, Edit averaged per video, F1 from
/// pooled segment counts.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(std::optional<int> ignore = std::nullopt) : ignore_(ignore) {}

  MetricReport add(const std::vector<int>& pred, const std::vector<int>& gt) {
    if (pred.size() != gt.size())
      throw DataError("prediction/ground-truth length mismatch: " + std::to_string(pred.size()) + " vs " +
                      std::to_string(gt.size()));
    if (gt.empty()) throw DataError("empty ground truth");
    MetricReport r;
    std::size_t correct = 0, counted = 0;
    for (std::size_t t = 0; t < gt.size(); ++t) {
      if (ignore_ && gt[t] == *ignore_) continue;
      ++counted;
      correct += pred[t] == gt[t];
    }
    r.acc = counted ? 100.0 * double(correct) / double(counted) : 0.0;
    correct_ += correct;
    frames_ += counted;

    auto ps = SegmentList::from_labels(pred).without(ignore_);
    auto gs = SegmentList::from_labels(gt).without(ignore_);
    r.edit = ps.empty() && gs.empty() ? 100.0 : (ps.empty() || gs.empty()) ? 0.0 : edit_score(ps, gs);
    edit_sum_ += r.edit;
    ++videos_;
    for (std::size_t i = 0; i < 3; ++i) {
      auto m = match_segments(ps, gs, kF1Thresholds[i]);
      counts_[i] += m;
      r.f1[i] = m.f1();
    }
    r.finish();
    return r;
  }

  MetricReport report() const {
    MetricReport r;
    if (videos_ == 0) return r;
    r.acc = frames_ ? 100.0 * double(correct_) / double(frames_) : 0.0;
    r.edit = edit_sum_ / double(videos_);
    for (std::size_t i = 0; i < 3; ++i) r.f1[i] = counts_[i].f1();
    r.finish();
    return r;
  }

  std::size_t videos() const { return videos_; }

 private:
  std::optional<int> ignore_;
  std::size_t correct_ = 0, frames_ = 0, videos_ = 0;
  double edit_sum_ = 0;
  std::array<MatchCounts, 3> counts_{};
};

}  // namespace otas
