#pragma once

#include <chrono>
#include <functional>
#include <numeric>
#include <vector>

#include "otas/dataset.hpp"
#include "otas/loss.hpp"
#include "otas/model.hpp"
#include "otas/optimizer.hpp"

namespace otas {

struct TrainOptions {
  std::size_t epochs = 50;
  double lr = 5e-4;
  std::uint64_t seed = 0;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double loss = 0;        // mean over clips
  double classification = 0;
  double smoothing = 0;
  std::size_t clips = 0;
  double seconds = 0;
};

/// Clip-based trainer: every clip of every video is one Adam step; the
/// memory bank and GRU hidden are carried (detached) from clip to clip.
template <class T>
class Trainer {
 public:
  Trainer(Segmenter<T>& model, LossConfig loss, TrainOptions opt)
      : model_(model), loss_(loss), opt_(opt), adam_(model.params(), {opt.lr}) {
    loss_.validate();
    if (!(opt_.lr > 0)) throw ConfigError("learning rate must be positive");
  }

  Adam<T>& optimizer() { return adam_; }
  std::size_t epochs_done() const { return epoch_; }
  void set_epochs_done(std::size_t e) { epoch_ = e; }

  /// Trains one video clip by clip. Returns summed loss terms and clip count.
  EpochStats train_video(const Video& v) {
    const std::size_t w = model_.config().window;
    check_video(v);
    EpochStats s;
    auto state = model_.fresh_state();
    const Tensor<T> features = toT(v.features);
    for (std::size_t start = 0; start < v.length(); start += w) {
      auto [clip, real] = extract_clip(features, start, w);
      std::vector<int> labels(w, 0);
      std::vector<bool> mask(w, false);
      for (std::size_t i = 0; i < real; ++i) {
        labels[i] = v.labels[start + i];
        mask[i] = true;
      }
      Tape<T> tape(true);
      auto out = model_.forward_clip(tape, clip, state);
      LossTerms terms;
      auto loss = clip_loss(tape, out.logits, labels, mask, loss_, &terms);
      tape.backward(loss);
      adam_.step();
      model_.commit(state, out);
      s.loss += terms.total;
      s.classification += terms.classification;
      s.smoothing += terms.smoothing;
      ++s.clips;
    }
    return s;
  }

  EpochStats run_epoch(const std::vector<Video>& videos) {
    if (videos.empty()) throw DataError("empty training set");
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(opt_.seed ^ (0x5151ull * (epoch_ + 1)));
    std::vector<std::size_t> order(videos.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    EpochStats e;
    for (std::size_t idx : order) {
      auto s = train_video(videos[idx]);
      e.loss += s.loss;
      e.classification += s.classification;
      e.smoothing += s.smoothing;
      e.clips += s.clips;
    }
    e.loss /= double(e.clips);
    e.classification /= double(e.clips);
    e.smoothing /= double(e.clips);
    e.epoch = ++epoch_;
    e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return e;
  }

  /// Runs epochs until `opt.epochs` have been done in total.
  std::vector<EpochStats> fit(const std::vector<Video>& videos,
                              const std::function<void(const EpochStats&)>& on_epoch = {}) {
    if (videos.empty()) throw DataError("empty training set");
    for (const auto& v : videos) check_video(v);
    std::vector<EpochStats> curve;
    while (epoch_ < opt_.epochs) {
      curve.push_back(run_epoch(videos));
      if (on_epoch) on_epoch(curve.back());
    }
    return curve;
  }

 private:
  void check_video(const Video& v) const {
    if (v.length() == 0) throw DataError("video " + v.name + " has no frames");
    if (v.features.rank() != 2 || v.features.rows() != v.length())
      throw DataError("video " + v.name + ": feature/label length mismatch");
    if (v.features.cols() != model_.config().input_dim)
      throw DataError("video " + v.name + ": feature dim " + std::to_string(v.features.cols()) + ", model expects " +
                      std::to_string(model_.config().input_dim));
  }

  static Tensor<T> toT(const Tensor<float>& x) {
    if constexpr (std::is_same_v<T, float>)
      return x;
    else
      return x.template cast<T>();
  }

  Segmenter<T>& model_;
  LossConfig loss_;
  TrainOptions opt_;
  Adam<T> adam_;
  std::size_t epoch_ = 0;
};

}  // namespace otas
