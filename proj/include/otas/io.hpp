#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "otas/config.hpp"
#include "otas/dataset.hpp"
#include "otas/errors.hpp"
#include "otas/model.hpp"
#include "otas/optimizer.hpp"
#include "otas/stream.hpp"

namespace otas::io {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

constexpr std::uint32_t kFeatureVersion = 1;
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::uint32_t kSessionVersion = 1;

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}
  template <class V>
  void pod(V v) {
    os_.write(reinterpret_cast<const char*>(&v), sizeof(V));
  }
  void bytes(const void* p, std::size_t n) { os_.write(static_cast<const char*>(p), std::streamsize(n)); }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    bytes(s.data(), s.size());
  }
  template <class T>
  void floats(const Tensor<T>& t) {
    for (T v : t.storage()) pod<float>(static_cast<float>(v));
  }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  Reader(std::istream& is, std::string what) : is_(is), what_(std::move(what)) {}
  template <class V>
  V pod() {
    V v{};
    bytes(&v, sizeof(V));
    return v;
  }
  void bytes(void* p, std::size_t n) {
    is_.read(static_cast<char*>(p), std::streamsize(n));
    if (std::size_t(is_.gcount()) != n) throw DataError(what_ + ": truncated file");
  }
  std::string str(std::size_t limit = 1u << 26) {
    const auto n = pod<std::uint64_t>();
    if (n > limit) throw DataError(what_ + ": implausible string length");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  template <class T>
  Tensor<T> floats(Shape shape) {
    Tensor<T> t(std::move(shape));
    std::vector<float> buf(t.size());
    if (!buf.empty()) bytes(buf.data(), buf.size() * 4);
    for (std::size_t i = 0; i < buf.size(); ++i) t[i] = static_cast<T>(buf[i]);
    return t;
  }
  void magic(const char* m) {
    char got[4];
    bytes(got, 4);
    if (std::memcmp(got, m, 4) != 0) throw DataError(what_ + ": bad magic (expected " + std::string(m, 4) + ")");
  }
  bool at_end() { return is_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& is_;
  std::string what_;
};

inline std::ifstream open_in(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw DataError("cannot open " + p.string());
  return f;
}

inline std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw DataError("cannot write " + p.string());
  return f;
}

inline std::string read_text(const fs::path& p) {
  auto f = open_in(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline std::vector<std::string> read_lines(const fs::path& p) {
  std::istringstream in(read_text(p));
  std::vector<std::string> lines;
  std::string l;
  while (std::getline(in, l)) {
    if (!l.empty() && l.back() == '\r') l.pop_back();
    lines.push_back(l);
  }
  return lines;
}

// ---- features ---------------------------------------------------------------

inline void write_features(const fs::path& p, const Tensor<float>& x) {
  if (x.rank() != 2) throw ShapeError("features must be [T x D]");
  auto f = open_out(p);
  Writer w(f);
  w.bytes("OTAS", 4);
  w.pod<std::uint32_t>(kFeatureVersion);
  w.pod<std::uint64_t>(x.rows());
  w.pod<std::uint64_t>(x.cols());
  w.floats(x);
}

inline Tensor<float> read_features(const fs::path& p) {
  auto f = open_in(p);
  Reader r(f, p.string());
  r.magic("OTAS");
  if (const auto v = r.pod<std::uint32_t>(); v != kFeatureVersion)
    throw DataError(p.string() + ": unsupported feature version " + std::to_string(v));
  const auto T = r.pod<std::uint64_t>(), D = r.pod<std::uint64_t>();
  if (D == 0 || T > (1ull << 32) || D > (1ull << 20)) throw DataError(p.string() + ": implausible shape");
  const auto expected = 24 + 4 * T * D;
  if (fs::file_size(p) != expected)
    throw DataError(p.string() + ": size " + std::to_string(fs::file_size(p)) + " != " + std::to_string(expected));
  auto x = r.floats<float>({T, D});
  require_finite(x, p.string().c_str());
  return x;
}

// ---- labels and mapping -----------------------------------------------------

inline void write_mapping(const fs::path& p, const std::vector<std::string>& names) {
  auto f = open_out(p);
  for (std::size_t i = 0; i < names.size(); ++i) f << i << ' ' << names[i] << '\n';
}

inline std::vector<std::string> read_mapping(const fs::path& p) {
  std::vector<std::string> names;
  for (const auto& line : read_lines(p)) {
    if (detail::trim(line).empty()) continue;
    std::istringstream in(line);
    std::size_t id;
    std::string name;
    if (!(in >> id >> name)) throw DataError(p.string() + ": bad mapping line '" + line + "'");
    if (id != names.size()) throw DataError(p.string() + ": class ids must be 0..C-1 in order");
    names.push_back(name);
  }
  if (names.size() < 2) throw DataError(p.string() + ": need at least two classes");
  return names;
}

inline void write_labels(const fs::path& p, const std::vector<int>& labels, const std::vector<std::string>& names) {
  auto f = open_out(p);
  for (int y : labels) f << names.at(std::size_t(y)) << '\n';
}

inline std::vector<int> read_labels(const fs::path& p, const std::vector<std::string>& names) {
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < names.size(); ++i) index[names[i]] = int(i);
  std::vector<int> labels;
  for (const auto& line : read_lines(p)) {
    const auto name = detail::trim(line);
    if (name.empty()) continue;
    auto it = index.find(name);
    if (it == index.end()) throw DataError(p.string() + ": label '" + name + "' is not in the mapping");
    labels.push_back(it->second);
  }
  return labels;
}

// ---- prediction streams -----------------------------------------------------

inline std::string format_stream(const PredictionStream& s, bool emit_probs = true) {
  std::string out;
  char buf[64];
  for (std::size_t t = 0; t < s.size(); ++t) {
    std::snprintf(buf, sizeof buf, "%zu\t%d\t%.6f", t, s.labels[t], s.confidence[t]);
    out += buf;
    if (emit_probs && s.has_probs()) {
      out += '\t';
      for (std::size_t c = 0; c < s.probs[t].size(); ++c) {
        std::snprintf(buf, sizeof buf, c ? ",%.6f" : "%.6f", s.probs[t][c]);
        out += buf;
      }
    }
    out += '\n';
  }
  return out;
}

inline PredictionStream parse_stream(const std::string& text, const std::string& what = "stream") {
  PredictionStream s;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    std::vector<std::string> cols;
    std::size_t pos = 0;
    while (true) {
      const auto tab = line.find('\t', pos);
      cols.push_back(line.substr(pos, tab - pos));
      if (tab == std::string::npos) break;
      pos = tab + 1;
    }
    auto fail = [&](const std::string& m) { throw DataError(what + " line " + std::to_string(lineno) + ": " + m); };
    if (cols.size() != 3 && cols.size() != 4) fail("expected 3 or 4 tab-separated columns");
    try {
      if (std::stoull(cols[0]) != s.size()) fail("frame index out of sequence");
      s.labels.push_back(std::stoi(cols[1]));
      s.confidence.push_back(std::stod(cols[2]));
      if (cols.size() == 4) {
        std::vector<double> p;
        std::istringstream ps(cols[3]);
        std::string tok;
        while (std::getline(ps, tok, ',')) p.push_back(std::stod(tok));
        if (!s.probs.empty() && p.size() != s.probs.front().size()) fail("probability row has wrong length");
        if (s.probs.size() + 1 != s.labels.size()) fail("probability column present on some lines only");
        s.probs.push_back(std::move(p));
      }
    } catch (const std::logic_error&) {
      fail("unparsable number");
    }
  }
  if (!s.probs.empty() && s.probs.size() != s.labels.size()) throw DataError(what + ": probability column incomplete");
  return s;
}

inline void write_stream(const fs::path& p, const PredictionStream& s, bool emit_probs = true) {
  auto f = open_out(p);
  f << format_stream(s, emit_probs);
}

inline PredictionStream read_stream(const fs::path& p) { return parse_stream(read_text(p), p.string()); }

// ---- checkpoints ------------------------------------------------------------

struct CheckpointMeta {
  std::size_t t_max = 0;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  std::size_t input_dim = 0;
  std::vector<std::string> class_names;
};

struct Checkpoint {
  RunConfig config;
  CheckpointMeta meta;
  std::vector<std::pair<std::string, Tensor<float>>> weights;
  bool has_optimizer = false;
  std::size_t adam_steps = 0;
  std::vector<Tensor<float>> adam_m, adam_v;

  ModelConfig model_config() const {
    ModelConfig m = config.model;
    m.input_dim = meta.input_dim;
    m.num_classes = meta.class_names.size();
    return m.sync();
  }

  void load_into(Segmenter<float>& model) const {
    const auto& items = model.params().items();
    if (items.size() != weights.size()) throw DataError("checkpoint has a different parameter count");
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (items[i].first != weights[i].first || items[i].second->value.shape() != weights[i].second.shape())
        throw DataError("checkpoint parameter " + weights[i].first + " does not match model parameter " +
                        items[i].first);
      items[i].second->value = weights[i].second;
    }
  }

  Segmenter<float> build_model() const {
    Segmenter<float> m(model_config());
    load_into(m);
    return m;
  }

  static Checkpoint capture(const RunConfig& cfg, const CheckpointMeta& meta, const Segmenter<float>& model,
                            const Adam<float>* adam) {
    Checkpoint c;
    c.config = cfg;
    c.meta = meta;
    for (const auto& [name, v] : model.params().items()) c.weights.emplace_back(name, v->value);
    if (adam) {
      c.has_optimizer = true;
      c.adam_steps = adam->steps();
      c.adam_m = adam->first_moments();
      c.adam_v = adam->second_moments();
    }
    return c;
  }
};

inline void write_tensor(Writer& w, const Tensor<float>& t) {
  w.pod<std::uint32_t>(std::uint32_t(t.rank()));
  for (auto d : t.shape()) w.pod<std::uint64_t>(d);
  w.floats(t);
}

inline Tensor<float> read_tensor(Reader& r) {
  const auto rank = r.pod<std::uint32_t>();
  if (rank > 3) throw DataError("tensor rank too large");
  Shape s;
  std::uint64_t n = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    s.push_back(r.pod<std::uint64_t>());
    n *= s.back();
    if (n > (1ull << 30)) throw DataError("implausible tensor size");
  }
  return r.floats<float>(s);
}

inline void write_checkpoint(const fs::path& p, const Checkpoint& c) {
  std::ostringstream os(std::ios::binary);
  Writer w(os);
  w.bytes("OTCK", 4);
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.str(format_run_config(c.config));
  w.pod<std::uint64_t>(c.meta.t_max);
  w.pod<std::uint64_t>(c.meta.seed);
  w.pod<std::uint64_t>(c.meta.epoch);
  w.pod<std::uint64_t>(c.meta.input_dim);
  w.pod<std::uint64_t>(c.meta.class_names.size());
  for (const auto& n : c.meta.class_names) w.str(n);
  w.pod<std::uint64_t>(c.weights.size());
  for (const auto& [name, t] : c.weights) {
    w.str(name);
    write_tensor(w, t);
  }
  w.pod<std::uint8_t>(c.has_optimizer ? 1 : 0);
  if (c.has_optimizer) {
    w.pod<std::uint64_t>(c.adam_steps);
    for (const auto* set : {&c.adam_m, &c.adam_v})
      for (const auto& t : *set) write_tensor(w, t);
  }
  auto f = open_out(p);
  f << os.str();
}

inline Checkpoint read_checkpoint(const fs::path& p) {
  auto f = open_in(p);
  Reader r(f, p.string());
  r.magic("OTCK");
  if (const auto v = r.pod<std::uint32_t>(); v != kCheckpointVersion)
    throw DataError(p.string() + ": unsupported checkpoint version " + std::to_string(v));
  Checkpoint c;
  c.config = parse_run_config(r.str());
  c.meta.t_max = r.pod<std::uint64_t>();
  c.meta.seed = r.pod<std::uint64_t>();
  c.meta.epoch = r.pod<std::uint64_t>();
  c.meta.input_dim = r.pod<std::uint64_t>();
  const auto nc = r.pod<std::uint64_t>();
  if (nc > 100000) throw DataError(p.string() + ": implausible class count");
  for (std::uint64_t i = 0; i < nc; ++i) c.meta.class_names.push_back(r.str());
  const auto nw = r.pod<std::uint64_t>();
  if (nw > 100000) throw DataError(p.string() + ": implausible tensor count");
  for (std::uint64_t i = 0; i < nw; ++i) {
    auto name = r.str();
    c.weights.emplace_back(std::move(name), read_tensor(r));
  }
  c.has_optimizer = r.pod<std::uint8_t>() != 0;
  if (c.has_optimizer) {
    c.adam_steps = r.pod<std::uint64_t>();
    for (auto* set : {&c.adam_m, &c.adam_v})
      for (std::uint64_t i = 0; i < nw; ++i) set->push_back(read_tensor(r));
  }
  if (!r.at_end()) throw DataError(p.string() + ": trailing bytes");
  return c;
}

// ---- streaming session state ------------------------------------------------

inline void write_session(const fs::path& p, const StreamState<float>& s) {
  std::ostringstream os(std::ios::binary);
  Writer w(os);
  w.bytes("OTSS", 4);
  w.pod<std::uint32_t>(kSessionVersion);
  write_tensor(w, s.clip.gru_hidden);
  const auto& b = s.bank;
  w.pod<std::uint8_t>(b.initialized() ? 1 : 0);
  if (b.initialized()) {
    w.pod<std::uint64_t>(b.budget());
    w.pod<std::uint64_t>(b.dim());
    w.pod<std::uint64_t>(b.clip_counter());
    w.pod<std::uint64_t>(b.long_tokens().size());
    for (const auto& tok : b.long_tokens()) {
      w.pod<std::uint64_t>(tok.source_clip);
      for (float v : tok.vector) w.pod<float>(v);
    }
    write_tensor(w, b.short_tokens());
    write_tensor(w, b.previous_enhanced());
  }
  auto f = open_out(p);
  f << os.str();
}

inline StreamState<float> read_session(const fs::path& p) {
  auto f = open_in(p);
  Reader r(f, p.string());
  r.magic("OTSS");
  if (const auto v = r.pod<std::uint32_t>(); v != kSessionVersion)
    throw DataError(p.string() + ": unsupported session version " + std::to_string(v));
  StreamState<float> s;
  s.clip.gru_hidden = read_tensor(r);
  if (r.pod<std::uint8_t>()) {
    const auto budget = r.pod<std::uint64_t>(), dim = r.pod<std::uint64_t>(), clip = r.pod<std::uint64_t>();
    const auto n = r.pod<std::uint64_t>();
    if (n > budget || dim > (1u << 20)) throw DataError(p.string() + ": implausible memory bank");
    std::deque<MemoryToken<float>> longs;
    for (std::uint64_t i = 0; i < n; ++i) {
      MemoryToken<float> tok;
      tok.source_clip = r.pod<std::uint64_t>();
      tok.vector.resize(dim);
      for (auto& v : tok.vector) v = r.pod<float>();
      longs.push_back(std::move(tok));
    }
    auto shorts = read_tensor(r);
    auto prev = read_tensor(r);
    s.bank = MemoryBank<float>::restore(budget, dim, clip, std::move(longs), std::move(shorts), std::move(prev));
  }
  return s;
}

// ---- dataset directories ----------------------------------------------------

inline std::uint64_t fnv1a_file(const fs::path& p) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : read_text(p)) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Layout: features/<name>.otas, labels/<name>.txt, mapping.txt,
/// splits/{train,test}.txt, manifest.txt.
inline void write_dataset(const fs::path& dir, const Dataset& ds) {
  fs::create_directories(dir / "features");
  fs::create_directories(dir / "labels");
  fs::create_directories(dir / "splits");
  write_mapping(dir / "mapping.txt", ds.class_names);
  std::ostringstream manifest;
  manifest << "videos=" << ds.train.size() + ds.test.size() << "\n";
  manifest << "train=" << ds.train.size() << "\ntest=" << ds.test.size() << "\n";
  manifest << "classes=" << ds.class_names.size() << "\ninput_dim=" << ds.input_dim() << "\n";
  manifest << "t_max=" << ds.t_max() << "\n";
  manifest << "mean_segments=" << detail::fmt(ds.mean_segments()) << "\n";
  for (const auto* split : {&ds.train, &ds.test}) {
    auto sf = open_out(dir / "splits" / (split == &ds.train ? "train.txt" : "test.txt"));
    for (const auto& v : *split) {
      sf << v.name << '\n';
      write_features(dir / "features" / (v.name + ".otas"), v.features);
      write_labels(dir / "labels" / (v.name + ".txt"), v.labels, ds.class_names);
      manifest << v.name << " " << v.length() << " " << hex64(fnv1a_file(dir / "features" / (v.name + ".otas")))
               << " " << hex64(fnv1a_file(dir / "labels" / (v.name + ".txt"))) << "\n";
    }
  }
  auto mf = open_out(dir / "manifest.txt");
  mf << manifest.str();
}

inline Video read_video(const fs::path& dir, const std::string& name, const std::vector<std::string>& classes) {
  Video v;
  v.name = name;
  v.features = read_features(dir / "features" / (name + ".otas"));
  v.labels = read_labels(dir / "labels" / (name + ".txt"), classes);
  if (v.labels.size() != v.features.rows())
    throw DataError("video " + name + ": " + std::to_string(v.labels.size()) + " labels for " +
                    std::to_string(v.features.rows()) + " frames");
  return v;
}

inline std::vector<std::string> read_split(const fs::path& dir, const std::string& split) {
  std::vector<std::string> names;
  for (const auto& l : read_lines(dir / "splits" / (split + ".txt")))
    if (!detail::trim(l).empty()) names.push_back(detail::trim(l));
  return names;
}

inline Dataset read_dataset(const fs::path& dir, bool train = true, bool test = true) {
  Dataset ds;
  ds.class_names = read_mapping(dir / "mapping.txt");
  if (train)
    for (const auto& n : read_split(dir, "train")) ds.train.push_back(read_video(dir, n, ds.class_names));
  if (test)
    for (const auto& n : read_split(dir, "test")) ds.test.push_back(read_video(dir, n, ds.class_names));
  return ds;
}

}  // namespace otas::io
