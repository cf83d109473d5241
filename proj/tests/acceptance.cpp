#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "otas/otas.hpp"
#include "support/bank_oracle.hpp"
#include "support/oracles.hpp"
#include "support/reference.hpp"

using namespace otas;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v, int prec = 2) {
  char b[64];
  std::snprintf(b, sizeof b, "%.*f", prec, v);
  return b;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<int> random_labels(Rng& rng, std::size_t max_segments, std::size_t classes, std::size_t max_len) {
  std::vector<int> out;
  const std::size_t n = 1 + rng.below(max_segments);
  for (std::size_t i = 0; i < n; ++i) out.insert(out.end(), 1 + rng.below(max_len), int(rng.below(classes)));
  return out;
}

std::vector<int> fit_length(std::vector<int> b, std::size_t n) {
  if (b.size() > n) b.resize(n);
  while (b.size() < n) b.push_back(b.back());
  return b;
}

// ---- 1 ----------------------------------------------------------------------

Outcome online_causality() {
  const auto t0 = std::chrono::steady_clock::now();
  ModelConfig cfg;
  cfg.input_dim = 32;
  cfg.num_classes = 8;
  cfg.window = 16;
  cfg.hidden_dim = 8;
  cfg.cfa.attn_heads = cfg.cfa.decoder_heads = 2;
  Segmenter<float> model(cfg.sync(), 101);
  Rng rng(102);
  const std::size_t T = 256, videos = 20, literal_videos = 4;
  std::size_t prefixes = 0, literal = 0, mismatches = 0;
  for (std::size_t v = 0; v < videos; ++v) {
    auto x = ref::random_tensor<float>({T, 32}, rng);
    const auto full = run_video(model, x, InferenceMode::online);
    if (!(run_video(model, x, InferenceMode::online) == full)) ++mismatches;

    // Session state after n frames, closed with finish(): what a stream that
    // ends at frame n receives.
    StreamSession<float> session(model, InferenceMode::online);
    PredictionStream seen;
    std::vector<float> row(32);
    for (std::size_t n = 1; n <= T; ++n) {
      std::copy(x.row(n - 1).begin(), x.row(n - 1).end(), row.begin());
      for (auto& e : session.push_frame(row)) seen.push(std::move(e.probs));
      StreamSession<float> ended = session;
      PredictionStream closed = seen;
      for (auto& e : ended.finish()) closed.push(std::move(e.probs));
      mismatches += !(closed == full.prefix(n));
      ++prefixes;
    }
    // Fresh sessions on every prefix.
    if (v < literal_videos)
      for (std::size_t n = 1; n <= T; ++n) {
        mismatches += !(run_video(model, x.slice_rows(0, n), InferenceMode::online) == full.prefix(n));
        ++literal;
      }
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 60,
          std::to_string(prefixes) + " prefixes over " + std::to_string(videos) + " videos (" +
              std::to_string(literal) + " rerun from a fresh session), " + std::to_string(mismatches) +
              " mismatches, " + num(secs, 1) + " s"};
}

// ---- 2 ----------------------------------------------------------------------

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(201);
  const std::size_t T = 8, H = 8;
  double worst = 0;
  std::string worst_name;
  std::size_t checked = 0;
  std::size_t rechecked = 0;
  using Wrt = std::vector<std::pair<std::string, Var<double>>>;
  // A central difference that straddles a ReLU boundary is not a derivative;
  // such tensors are checked again with a step that stays on one side.
  auto gradcheck = [&](const std::function<Var<double>(Tape<double>&)>& fn, const Wrt& wrt) {
    auto rs = otas::gradcheck(fn, wrt, 1e-4);
    for (std::size_t i = 0; i < rs.size(); ++i)
      if (rs[i].rel_error >= 1e-4) {
        ++rechecked;
        rs[i] = otas::gradcheck(fn, {wrt[i]}, 1e-6)[0];
      }
    return rs;
  };
  auto take = [&](const std::string& layer, const std::vector<GradCheckResult>& rs) {
    for (const auto& r : rs) {
      ++checked;
      if (r.rel_error >= worst) {
        worst = r.rel_error;
        worst_name = layer + "/" + r.name;
      }
    }
  };
  auto x = leaf(ref::random_tensor<double>({T, H}, rng), true);
  auto R = ref::random_tensor<double>({T, H}, rng);

  for (auto [name, geo] : {std::pair{"conv", ops::ConvGeometry{3, 1, false}},
                           std::pair{"causal conv", ops::ConvGeometry{3, 1, true}},
                           std::pair{"dilated conv", ops::ConvGeometry{3, 4, true}}}) {
    ParamStore<double> ps;
    Conv1d<double> conv(ps, "conv", H, H, geo, rng);
    auto wrt = ps.items();
    wrt.emplace_back("x", x);
    take(name, gradcheck([&](Tape<double>& t) { return ops::weighted_sum(t, conv(t, x), R); }, wrt));
  }
  {
    ParamStore<double> ps;
    Gru<double> gru(ps, "gru", H, H, rng);
    auto h0 = leaf(ref::random_tensor<double>({H}, rng), true);
    auto wrt = ps.items();
    wrt.emplace_back("x", x);
    wrt.emplace_back("h0", h0);
    take("gru", gradcheck([&](Tape<double>& t) { return ops::weighted_sum(t, gru(t, x, h0), R); }, wrt));
  }
  {
    ParamStore<double> ps;
    WindowedSelfAttention<double> wsa(ps, "wsa", H, 2, T, 2, rng);
    for (auto& v : wsa.attn.rel_bias->value.storage()) v = rng.uniform(-1, 1);
    auto wrt = ps.items();
    wrt.emplace_back("x", x);
    take("windowed self-attention", gradcheck([&](Tape<double>& t) { return ops::weighted_sum(t, wsa(t, x), R); }, wrt));
  }
  {
    ParamStore<double> ps;
    MultiHeadAttention<double> ca(ps, "ca", H, 2, T, rng);
    for (auto& v : ca.rel_bias->value.storage()) v = rng.uniform(-1, 1);
    auto mem = leaf(ref::random_tensor<double>({5, H}, rng), true);
    auto wrt = ps.items();
    wrt.emplace_back("query", x);
    wrt.emplace_back("memory", mem);
    take("cross-attention", gradcheck([&](Tape<double>& t) { return ops::weighted_sum(t, ca(t, x, mem), R); }, wrt));
  }
  {
    ParamStore<double> ps;
    TransformerDecoderLayer<double> td(ps, "td", H, 2, 2 * H, true, rng);
    auto q = leaf(ref::random_tensor<double>({T, H}, rng), true);
    auto wrt = ps.items();
    wrt.emplace_back("query", q);
    wrt.emplace_back("context", x);
    take("decoder layer", gradcheck([&](Tape<double>& t) { return ops::weighted_sum(t, td(t, q, x), R); }, wrt));
  }
  {
    ParamStore<double> ps;
    FeedForward<double> ffn(ps, "ffn", H, 2 * H, rng);
    auto wrt = ps.items();
    wrt.emplace_back("x", x);
    take("ffn", gradcheck([&](Tape<double>& t) { return ops::weighted_sum(t, ffn(t, x), R); }, wrt));
  }
  {
    ParamStore<double> ps;
    Linear<double> cls(ps, "classifier", H, 3, rng);
    auto R3 = ref::random_tensor<double>({T, 3}, rng);
    auto wrt = ps.items();
    wrt.emplace_back("x", x);
    take("classifier", gradcheck([&](Tape<double>& t) { return ops::weighted_sum(t, cls(t, x), R3); }, wrt));
  }
  {
    auto logits = leaf(ref::random_tensor<double>({T, 3}, rng), true);
    for (auto& v : logits->value.storage()) v *= 4;
    std::vector<int> labels{0, 0, 1, 1, 1, 2, 2, 0};
    std::vector<bool> mask(T, true);
    mask[6] = false;
    take("clip loss", gradcheck([&](Tape<double>& t) { return clip_loss(t, logits, labels, mask, LossConfig{}); },
                                {{"logits", logits}}));
  }
  {
    ModelConfig cfg;
    cfg.input_dim = 4;
    cfg.hidden_dim = H;
    cfg.num_classes = 3;
    cfg.window = T;
    cfg.cfa.attn_heads = cfg.cfa.decoder_heads = 2;
    Segmenter<double> m(cfg.sync(), 202);
    auto state = m.fresh_state();
    for (int k = 0; k < 2; ++k) {
      Tape<double> tape(false);
      m.commit(state, m.forward_clip(tape, ref::random_tensor<double>({T, 4}, rng), state));
    }
    auto clip = ref::random_tensor<double>({T, 4}, rng);
    std::vector<int> labels{0, 0, 1, 1, 1, 2, 2, 0};
    std::vector<bool> mask(T, true);
    take("full model + clip loss",
         gradcheck([&](Tape<double>& t) { return clip_loss(t, m.forward_clip(t, clip, state).logits, labels, mask, {}); },
                   m.params().items()));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 120, std::to_string(checked) + " tensors checked (" + std::to_string(rechecked) +
                                          " failed at h=1e-4 and were re-checked at h=1e-6), worst rel error " +
                                          num(worst * 1e6, 3) + "e-6 (" + worst_name + "), " + num(secs, 1) + " s"};
}

// ---- 3 ----------------------------------------------------------------------

Outcome memory_bank() {
  Rng rng(301);
  std::size_t steps = 0, failures = 0;
  for (int run = 0; run < 100; ++run) {
    const std::size_t ws[] = {4, 6, 16, 128};
    const std::size_t w = ws[run % 4], H = 3;
    const std::size_t clips = 1 + rng.below(2 * w);
    auto c1 = ref::random_tensor<float>({w, H}, rng);
    auto bank = MemoryBank<float>::init(c1);
    oracle::ReferenceBank ref(w, oracle::rows_of(c1));
    for (std::size_t k = 1; k <= clips; ++k) {
      auto enhanced = ref::random_tensor<float>({w, H}, rng);
      std::vector<float> m{float(rng.uniform()), float(rng.uniform()), float(k)};
      bank.update({m, k}, enhanced);
      ref.step(m, oracle::rows_of(enhanced));
      ++steps;
      failures += oracle::rows_of(bank.as_query_tokens()) != ref.query();
      failures += bank.long_tokens().size() != std::min<std::size_t>(k, 2 * w / 3 + 1);
    }
  }
  auto bank = MemoryBank<float>::init(Tensor<float>({128, 2}));
  for (std::size_t k = 1; k <= 300; ++k) bank.update({{0.f, float(k)}, k}, Tensor<float>({128, 2}));
  const bool split = bank.long_tokens().size() == 86 && bank.short_length() == 42;
  return {failures == 0 && split, "100 sequences, " + std::to_string(steps) + " updates, " + std::to_string(failures) +
                                      " mismatches; w=128 steady state " + std::to_string(bank.long_tokens().size()) +
                                      " long / " + std::to_string(bank.short_length()) + " short"};
}

// ---- 4 ----------------------------------------------------------------------

Outcome postprocess_properties() {
  Rng rng(401);
  std::size_t identity_bad = 0, spacing_bad = 0, prefix_bad = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 1 + rng.below(300), classes = 2 + rng.below(5);
    std::vector<int> labels;
    std::vector<double> conf;
    int y = int(rng.below(classes));
    for (std::size_t t = 0; t < n; ++t) {
      if (rng.bernoulli(0.2)) y = int(rng.below(classes));
      labels.push_back(y);
      conf.push_back(rng.uniform());
    }
    const std::size_t t_max = 1 + rng.below(500);
    const double sigma = rng.uniform(0.01, 0.5);
    identity_bad += refine(labels, conf, {0.0, sigma, t_max}).labels != labels;

    PostProcessConfig all{1.0, sigma, t_max};
    auto r = refine(labels, conf, all).labels;
    std::ptrdiff_t last = -1;
    for (std::size_t t = 1; t < r.size(); ++t)
      if (r[t] != r[t - 1]) {
        if (last >= 0 && t - std::size_t(last) < all.l_min() + 1) ++spacing_bad;
        last = std::ptrdiff_t(t);
      }

    PostProcessConfig cfg{rng.uniform(), sigma, t_max};
    auto full = refine(labels, conf, cfg).labels;
    for (std::size_t cut = 1; cut <= n; cut += 1 + rng.below(20)) {
      auto pre = refine(std::vector<int>(labels.begin(), labels.begin() + std::ptrdiff_t(cut)),
                        std::vector<double>(conf.begin(), conf.begin() + std::ptrdiff_t(cut)), cfg)
                     .labels;
      prefix_bad += pre != std::vector<int>(full.begin(), full.begin() + std::ptrdiff_t(cut));
    }
  }
  const int A = 0, B = 1;
  const bool worked =
      refine({A, A, B, A, A}, {.95, .95, .30, .95, .95}, {0.5, 0.5, 4}).labels == std::vector<int>{A, A, A, A, A};
  return {identity_bad == 0 && spacing_bad == 0 && prefix_bad == 0 && worked,
          "1000 streams: identity failures " + std::to_string(identity_bad) + ", spacing violations " +
              std::to_string(spacing_bad) + ", prefix failures " + std::to_string(prefix_bad) +
              "; worked example " + (worked ? "[A,A,A,A,A]" : "wrong")};
}

// ---- 5 ----------------------------------------------------------------------

Outcome metric_oracles() {
  Rng rng(501);
  std::size_t edit_bad = 0;
  for (int i = 0; i < 1000; ++i) {
    auto a = SegmentList::from_labels(random_labels(rng, 10, 4, 3));
    auto b = SegmentList::from_labels(random_labels(rng, 10, 4, 3));
    const double d = double(oracle::levenshtein_full(a.label_sequence(), b.label_sequence()));
    edit_bad += edit_score(a, b) != 100.0 * (1.0 - d / double(std::max(a.size(), b.size())));
  }
  std::size_t pairs = 0, greedy_bad = 0, optimal_bad = 0, order_bad = 0;
  while (pairs < 500) {
    auto gl = random_labels(rng, 6, 3, 8);
    auto pl = fit_length(random_labels(rng, 6, 3, 8), gl.size());
    auto g = SegmentList::from_labels(gl), p = SegmentList::from_labels(pl);
    if (g.size() > 6 || p.size() > 6) continue;
    ++pairs;
    std::array<double, 3> f{};
    for (std::size_t i = 0; i < 3; ++i) {
      const double k = kF1Thresholds[i];
      const auto lib = match_segments(p, g, k);
      const auto frames = oracle::greedy_counts_frames(pl, gl, k);
      greedy_bad += lib.tp != frames.tp || lib.fp != frames.fp || lib.fn != frames.fn;
      optimal_bad += lib.tp != oracle::optimal_matching({p.begin(), p.end()}, {g.begin(), g.end()}, k);
      f[i] = f1_at(p, g, k);
    }
    order_bad += !(f[2] <= f[1] && f[1] <= f[0]);
  }
  const double edit_fixture =
      edit_score(SegmentList::from_runs({{0, 3}, {2, 3}}), SegmentList::from_runs({{0, 10}, {1, 5}, {2, 7}}));
  const double f1_fixture = match_segments(std::vector<Segment>{{0, 0, 50}, {0, 50, 50}}, {{0, 0, 100}}, 50).f1();
  const bool fixtures = num(edit_fixture) == "66.67" && num(f1_fixture) == "66.67";
  return {edit_bad == 0 && greedy_bad == 0 && optimal_bad == 0 && order_bad == 0 && fixtures,
          "Edit vs Levenshtein DP: " + std::to_string(edit_bad) + "/1000 differ; F1 on " + std::to_string(pairs) +
              " pairs: " + std::to_string(greedy_bad) + " differ from the frame-count greedy oracle, " +
              std::to_string(optimal_bad) + " from exhaustive assignment, " + std::to_string(order_bad) +
              " ordering violations; fixtures Edit " + num(edit_fixture) + " F1@50 " + num(f1_fixture)};
}

// ---- 6 ----------------------------------------------------------------------

Outcome sweep_shape() {
  const auto t0 = std::chrono::steady_clock::now();
  auto ds = generate(SynthConfig{});
  std::vector<PredictionStream> streams;
  std::vector<std::vector<int>> gts;
  for (std::size_t v = 0; v < ds.test.size(); ++v) {
    gts.push_back(ds.test[v].labels);
    streams.push_back(corrupt(stream_from_labels(ds.test[v].labels), ds.class_names.size(), 0.1, {}, 600 + v));
  }
  const std::vector<double> thetas{0.0, 0.3, 0.5, 0.7, 0.9}, sigmas{1.0 / 16, 1.0 / 8, 1.0 / 4};
  auto rows = sweep(streams, gts, thetas, sigmas, ds.t_max());
  auto at = [&](double th, double sg) -> const MetricReport& {
    for (const auto& r : rows)
      if (r.theta == th && r.sigma == sg) return r.metrics;
    throw std::logic_error("missing sweep row");
  };
  const auto& hi = at(0.9, 1.0 / 16);
  const auto& lo = at(0.3, 1.0 / 16);
  const auto& p8 = at(0.9, 1.0 / 8);
  const auto& p4 = at(0.9, 1.0 / 4);
  const bool plateau = p8.seg == p4.seg && p8.edit == p4.edit && p8.acc == p4.acc;
  const double secs = seconds_since(t0);
  return {hi.seg - lo.seg >= 10 && plateau && secs < 120,
          "Seg(theta=0.9)=" + num(hi.seg) + " vs Seg(theta=0.3)=" + num(lo.seg) + "; Seg(sigma=1/8)=" + num(p8.seg) +
              " Seg(sigma=1/4)=" + num(p4.seg) + " (T_max=" + std::to_string(ds.t_max()) + "), " + num(secs, 1) +
              " s"};
}

// ---- 7, 8, 9 ----------------------------------------------------------------

struct SeedResult {
  MetricReport full_semi, full_online, base_semi, base_refined;
};

struct Ablation {
  std::vector<SeedResult> seeds;
  double seconds = 0;
  std::size_t epochs = 0;
};

MetricReport evaluate(const Segmenter<float>& model, const std::vector<Video>& videos, InferenceMode mode,
                      const PostProcessConfig* pp = nullptr) {
  MetricAccumulator acc;
  for (const auto& v : videos) {
    auto s = run_video(model, v.features, mode);
    acc.add(pp ? refine(s, *pp).labels : s.labels, v.labels);
  }
  return acc.report();
}

const Ablation& ablation() {
  static const Ablation result = [] {
    const auto t0 = std::chrono::steady_clock::now();
    Ablation a;
    auto ds = generate(SynthConfig{});
    RunConfig rc = parse_run_config("w=32\nhidden_dim=32\nheads=4\ntd_heads=4\nlr=0.001\nepochs=12\n");
    a.epochs = rc.train.epochs;
    PostProcessConfig pp{0.9, 1.0 / 16, ds.t_max()};
    for (std::uint64_t seed : {0, 1, 2}) {
      SeedResult r;
      for (bool full : {true, false}) {
        ModelConfig mc = rc.model;
        mc.input_dim = ds.input_dim();
        mc.num_classes = ds.class_names.size();
        mc.use_gru = mc.use_cfa = mc.use_memory = full;
        Segmenter<float> model(mc, seed);
        TrainOptions opt = rc.train;
        opt.seed = seed;
        Trainer<float>(model, rc.loss, opt).fit(ds.train);
        if (full) {
          r.full_semi = evaluate(model, ds.test, InferenceMode::semi_online);
          r.full_online = evaluate(model, ds.test, InferenceMode::online);
        } else {
          r.base_semi = evaluate(model, ds.test, InferenceMode::semi_online);
          r.base_refined = evaluate(model, ds.test, InferenceMode::semi_online, &pp);
        }
      }
      std::cout << "  seed " << seed << ": full semi Acc " << num(r.full_semi.acc) << " Edit " << num(r.full_semi.edit)
                << " Seg " << num(r.full_semi.seg) << " | full online Seg " << num(r.full_online.seg)
                << " | baseline Acc " << num(r.base_semi.acc) << " Edit " << num(r.base_semi.edit)
                << " | baseline refined Acc " << num(r.base_refined.acc) << " Edit " << num(r.base_refined.edit)
                << std::endl;
      a.seeds.push_back(r);
    }
    a.seconds = seconds_since(t0);
    return a;
  }();
  return result;
}

double mean_of(const std::function<double(const SeedResult&)>& f) {
  const auto& a = ablation();
  double s = 0;
  for (const auto& r : a.seeds) s += f(r);
  return s / double(a.seeds.size());
}

Outcome directional_ablation() {
  const auto& a = ablation();
  const double full_edit = mean_of([](auto& r) { return r.full_semi.edit; });
  const double base_edit = mean_of([](auto& r) { return r.base_semi.edit; });
  const double full_acc = mean_of([](auto& r) { return r.full_semi.acc; });
  return {full_edit - base_edit >= 5 && full_acc >= 90 && a.seconds < 1800,
          "3 seeds x " + std::to_string(a.epochs) + " epochs: full Edit " + num(full_edit) + " vs baseline " +
              num(base_edit) + " (+" + num(full_edit - base_edit) + "), full Acc " + num(full_acc) + ", " +
              num(a.seconds / 60, 1) + " min"};
}

Outcome postprocess_effect() {
  const double raw_edit = mean_of([](auto& r) { return r.base_semi.edit; });
  const double pp_edit = mean_of([](auto& r) { return r.base_refined.edit; });
  const double raw_acc = mean_of([](auto& r) { return r.base_semi.acc; });
  const double pp_acc = mean_of([](auto& r) { return r.base_refined.acc; });
  return {pp_edit - raw_edit >= 15 && raw_acc - pp_acc <= 5,
          "baseline Edit " + num(raw_edit) + " -> " + num(pp_edit) + " (+" + num(pp_edit - raw_edit) + "), Acc " +
              num(raw_acc) + " -> " + num(pp_acc)};
}

Outcome semi_vs_online() {
  const double semi = mean_of([](auto& r) { return r.full_semi.seg; });
  const double online = mean_of([](auto& r) { return r.full_online.seg; });
  std::size_t wins = 0;
  for (const auto& r : ablation().seeds) wins += r.full_semi.seg >= r.full_online.seg;
  return {semi >= online, "mean Seg semi " + num(semi) + " vs online " + num(online) + " (semi >= online on " +
                              std::to_string(wins) + "/3 seeds)"};
}

// ---- 10 ---------------------------------------------------------------------

Outcome latency_model() {
  const auto dir = fs::temp_directory_path() / "otas_acceptance_bench";
  fs::create_directories(dir);
  RunConfig rc = parse_run_config("w=16\nhidden_dim=16\nheads=2\ntd_heads=2\n");
  ModelConfig mc = rc.model;
  mc.input_dim = 8;
  mc.num_classes = 4;
  Segmenter<float> model(mc, 1001);
  io::write_checkpoint(dir / "m.ckpt",
                       io::Checkpoint::capture(rc, {100, 0, 0, 8, {"a", "b", "c", "d"}}, model, nullptr));

  const std::size_t T = 100, w = 16;
  const double dt = 40;
  const std::string cmd = std::string(OTAS_CLI_PATH) + " bench -m " + (dir / "m.ckpt").string() + " --frames " +
                          std::to_string(T) + " --mode semi --frame-interval-ms 40 --frames-csv " +
                          (dir / "frames.csv").string() + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  std::size_t rows = 0, bad = 0;
  if (status == 0) {
    auto lines = io::read_lines(dir / "frames.csv");
    for (std::size_t i = 1; i < lines.size(); ++i) {
      std::stringstream ss(lines[i]);
      std::vector<std::string> f;
      for (std::string c; std::getline(ss, c, ',');) f.push_back(c);
      const std::size_t t = std::stoul(f[1]), pos = std::stoul(f[2]);
      const double latency = std::stod(f[3]), wait = std::stod(f[5]), delay = std::stod(f[6]);
      const std::size_t burst = t < T / w * w ? w : T % w;
      bad += pos != t % w + 1 || wait != double(burst - pos) * dt || delay != latency + wait;
      ++rows;
    }
  }

  // Same identities under a scripted clock.
  double now = 0;
  ProfileOptions opt;
  opt.frame_interval_ms = dt;
  opt.clock_ms = [&] { return now += 0.5; };
  auto x = Tensor<float>({T, 8});
  auto rep = profile(model, x, InferenceMode::semi_online, opt);
  std::size_t scripted_bad = 0;
  for (const auto& f : rep.frames) {
    const std::size_t burst = f.t < T / w * w ? w : T % w;
    scripted_bad += f.latency_ms != 0.5 || f.wait_ms != double(burst - f.position) * dt ||
                    f.delay_ms != f.latency_ms + f.wait_ms;
  }
  fs::remove_all(dir);
  return {status == 0 && rows == T && bad == 0 && rep.frames.size() == T && scripted_bad == 0,
          "bench CSV: " + std::to_string(rows) + " frames, " + std::to_string(bad) +
              " violate delay = latency + (w - position) * interval; scripted clock: " +
              std::to_string(scripted_bad) + " violations"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"online causality", online_causality},
      {"gradient correctness", gradients},
      {"memory-bank oracle", memory_bank},
      {"post-processing properties", postprocess_properties},
      {"metric oracles", metric_oracles},
      {"theta/sigma sweep shape", sweep_shape},
      {"directional ablation", directional_ablation},
      {"post-processing effect on the baseline", postprocess_effect},
      {"semi-online >= online", semi_vs_online},
      {"latency model", latency_model},
  };
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoul(argv[i]));

  std::size_t failed = 0, ran = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.count(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    ++ran;
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " (" << criteria[i].first
              << "): " << o.detail << std::endl;
  }
  std::cout << ran - failed << "/" << ran << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
