#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "otas/metrics.hpp"
#include "otas/tensor.hpp"

namespace otas {

struct Video {
  std::string name;
  Tensor<float> features;  // [T x D]
  std::vector<int> labels;

  std::size_t length() const { return labels.size(); }
};

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<Video> train;
  std::vector<Video> test;

  std::size_t input_dim() const {
    for (const auto* split : {&train, &test})
      if (!split->empty()) return split->front().features.cols();
    return 0;
  }

  std::size_t t_max() const {
    std::size_t m = 0;
    for (const auto& v : train) m = std::max(m, v.length());
    return m;
  }

  double mean_segments() const {
    std::size_t segs = 0, n = 0;
    for (const auto* split : {&train, &test})
      for (const auto& v : *split) {
        segs += SegmentList::from_labels(v.labels).size();
        ++n;
      }
    return n ? double(segs) / double(n) : 0.0;
  }
};

}  // namespace otas
