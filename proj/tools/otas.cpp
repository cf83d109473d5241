#include <CLI11.hpp>

#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <thread>

#include "otas/otas.hpp"

using namespace otas;
namespace fs = std::filesystem;

namespace {

using detail::fmt;

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config_path, "key=value run config (falls back to $OTAS_CONFIG)");
  sub->add_option("--set", c.sets, "override a config key, e.g. --set w=64 (repeatable)");
}

RunConfig resolve_config(const Common& c, RunConfig base = {}) {
  std::string path = c.config_path;
  if (path.empty())
    if (const char* env = std::getenv("OTAS_CONFIG")) path = env;
  RunConfig cfg = path.empty() ? base : parse_run_config(io::read_text(path), base);
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first error.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t j = 0; j < jobs; ++j)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!err) err = std::current_exception();
          next = n;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

std::vector<fs::path> files_with_ext(const fs::path& dir, const std::string& ext) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

void save_checkpoint(const fs::path& p, const io::Checkpoint& ck) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  io::write_checkpoint(tmp, ck);
  fs::rename(tmp, p);
}

std::string report_line(const MetricReport& r) {
  return "acc=" + fmt(r.acc) + " edit=" + fmt(r.edit) + " f1@10=" + fmt(r.f1[0]) + " f1@25=" + fmt(r.f1[1]) +
         " f1@50=" + fmt(r.f1[2]) + " seg=" + fmt(r.seg);
}

/// Ground truth for evaluation: a dataset directory, or a directory of label
/// files plus an explicit mapping.
struct GroundTruth {
  fs::path labels_dir;
  std::vector<std::string> classes;

  static GroundTruth open(const fs::path& dir, const std::string& mapping) {
    GroundTruth g;
    if (!mapping.empty()) {
      g.labels_dir = dir;
      g.classes = io::read_mapping(mapping);
    } else if (fs::exists(dir / "labels") && fs::exists(dir / "mapping.txt")) {
      g.labels_dir = dir / "labels";
      g.classes = io::read_mapping(dir / "mapping.txt");
    } else {
      throw DataError("ground truth " + dir.string() + " has no labels/ and mapping.txt; pass --mapping");
    }
    return g;
  }

  std::vector<int> labels(const std::string& name) const {
    return io::read_labels(labels_dir / (name + ".txt"), classes);
  }

  std::optional<int> class_id(const std::string& name) const {
    if (name.empty()) return std::nullopt;
    auto it = std::find(classes.begin(), classes.end(), name);
    if (it == classes.end()) throw DataError("unknown class '" + name + "'");
    return int(it - classes.begin());
  }
};

// ---- generate ---------------------------------------------------------------

int cmd_generate(const Common& common, const std::string& out) {
  auto cfg = resolve_config(common);
  auto ds = generate(cfg.synth);
  io::write_dataset(out, ds);
  std::cout << "videos=" << ds.train.size() + ds.test.size() << " train=" << ds.train.size()
            << " test=" << ds.test.size() << " classes=" << ds.class_names.size() << " t_max=" << ds.t_max()
            << " manifest=" << io::hex64(io::fnv1a_file(fs::path(out) / "manifest.txt")) << "\n";
  return 0;
}

// ---- train ------------------------------------------------------------------

int cmd_train(const Common& common, const std::string& data, const std::string& out, const std::string& resume,
              bool quiet) {
  std::optional<io::Checkpoint> prior;
  if (!resume.empty()) prior = io::read_checkpoint(resume);
  auto cfg = resolve_config(common, prior ? prior->config : RunConfig{});
  auto ds = io::read_dataset(data, true, false);
  if (ds.train.empty()) throw DataError("no training videos in " + data);

  io::CheckpointMeta meta{ds.t_max(), cfg.train.seed, 0, ds.input_dim(), ds.class_names};
  ModelConfig mc = cfg.model;
  mc.input_dim = meta.input_dim;
  mc.num_classes = meta.class_names.size();
  Segmenter<float> model(mc, cfg.train.seed);
  Trainer<float> trainer(model, cfg.loss, cfg.train);
  if (prior) {
    if (prior->meta.class_names != ds.class_names || prior->meta.input_dim != ds.input_dim())
      throw DataError("checkpoint " + resume + " was trained on a different label set or feature size");
    prior->load_into(model);
    if (prior->has_optimizer) trainer.optimizer().restore(prior->adam_steps, prior->adam_m, prior->adam_v);
    trainer.set_epochs_done(prior->meta.epoch);
    meta.t_max = std::max(meta.t_max, prior->meta.t_max);
  }
  auto snapshot = [&] {
    meta.epoch = trainer.epochs_done();
    save_checkpoint(out, io::Checkpoint::capture(cfg, meta, model, &trainer.optimizer()));
  };
  trainer.fit(ds.train, [&](const EpochStats& e) {
    if (!quiet)
      std::cout << "epoch=" << e.epoch << " loss=" << fmt(e.loss) << " classification=" << fmt(e.classification)
                << " smoothing=" << fmt(e.smoothing) << " clips=" << e.clips << " seconds=" << fmt(e.seconds)
                << std::endl;
    snapshot();
  });
  snapshot();
  std::cout << "checkpoint=" << out << " epochs=" << trainer.epochs_done() << " t_max=" << meta.t_max << "\n";
  return 0;
}

// ---- infer ------------------------------------------------------------------

int cmd_infer(const Common& common, const std::string& ckpt_path, const std::string& input, std::string mode_str,
              const std::string& out, bool emit_probs, std::size_t jobs, const std::string& split) {
  auto ck = io::read_checkpoint(ckpt_path);
  auto cfg = resolve_config(common, ck.config);
  if (mode_str.empty()) mode_str = cfg.mode;
  const auto mode = parse_mode(mode_str);
  const auto model = ck.build_model();
  SessionOptions sopt{cfg.online_gru_rerun};

  struct Job {
    std::string name;
    fs::path features, out;
  };
  std::vector<Job> todo;
  const fs::path in(input);
  if (fs::is_regular_file(in)) {
    todo.push_back({in.stem().string(), in, out});
  } else if (fs::exists(in / "features")) {
    fs::create_directories(out);
    for (const auto& n : io::read_split(in, split))
      todo.push_back({n, in / "features" / (n + ".otas"), fs::path(out) / (n + ".txt")});
  } else {
    fs::create_directories(out);
    for (const auto& f : files_with_ext(in, ".otas"))
      todo.push_back({f.stem().string(), f, fs::path(out) / (f.stem().string() + ".txt")});
  }
  if (todo.empty()) throw DataError("no feature files found under " + input);

  parallel_for(todo.size(), jobs, [&](std::size_t i) {
    auto x = io::read_features(todo[i].features);
    if (x.cols() != model.config().input_dim)
      throw DataError(todo[i].name + ": feature dim " + std::to_string(x.cols()) + ", checkpoint expects " +
                      std::to_string(model.config().input_dim));
    auto stream = run_video(model, x, mode, sopt, emit_probs);
    io::write_stream(todo[i].out, stream, emit_probs);
  });
  std::cout << "mode=" << mode_name(mode) << " videos=" << todo.size() << " out=" << out << "\n";
  return 0;
}

// ---- postprocess ------------------------------------------------------------

std::vector<double> parse_list(const std::string& s, const char* what) {
  std::vector<double> v;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    item = detail::trim(item);
    if (item.empty()) continue;
    const auto slash = item.find('/');
    if (slash != std::string::npos)
      v.push_back(detail::parse_number<double>(what, item.substr(0, slash)) /
                  detail::parse_number<double>(what, item.substr(slash + 1)));
    else
      v.push_back(detail::parse_number<double>(what, item));
  }
  if (v.empty()) throw ConfigError(std::string(what) + " list is empty");
  return v;
}

struct PostArgs {
  std::string stream, out, checkpoint, gt, mapping, thetas = "0,0.1,0.3,0.5,0.7,0.9,1",
                                                    sigmas = "1/32,1/16,1/8,1/4";
  std::optional<double> theta, sigma;
  std::size_t t_max = 0;
  bool sweep = false, segment_length_rule = false;
};

int cmd_postprocess(const Common& common, const PostArgs& a) {
  auto cfg = resolve_config(common);
  std::size_t t_max = a.t_max;
  if (t_max == 0 && !a.checkpoint.empty()) t_max = io::read_checkpoint(a.checkpoint).meta.t_max;
  if (t_max == 0)
    throw ConfigError("post-processing needs T_max: pass --t-max N or --checkpoint with T_max metadata");
  const auto rule = a.segment_length_rule ? RefineRule::segment_length : RefineRule::copy_counter;

  const fs::path in(a.stream);
  std::vector<fs::path> inputs = fs::is_directory(in) ? files_with_ext(in, ".txt") : std::vector<fs::path>{in};
  if (inputs.empty()) throw DataError("no stream files under " + a.stream);

  if (a.sweep) {
    if (a.gt.empty()) throw ConfigError("--sweep needs --gt");
    const auto gt = GroundTruth::open(a.gt, a.mapping);
    std::vector<PredictionStream> streams;
    std::vector<std::vector<int>> gts;
    for (const auto& p : inputs) {
      streams.push_back(io::read_stream(p));
      gts.push_back(gt.labels(p.stem().string()));
    }
    for (const auto& row : sweep(streams, gts, parse_list(a.thetas, "thetas"), parse_list(a.sigmas, "sigmas"), t_max,
                                 rule))
      std::cout << "theta=" << fmt(row.theta) << " sigma=" << fmt(row.sigma) << " l_min=" << row.l_min << " "
                << report_line(row.metrics) << "\n";
    return 0;
  }

  if (a.out.empty()) throw ConfigError("postprocess needs --out (or --sweep)");
  PostProcessConfig pp{a.theta.value_or(cfg.theta), a.sigma.value_or(cfg.sigma), t_max, rule};
  pp.validate();
  if (fs::is_directory(in)) fs::create_directories(a.out);
  for (const auto& p : inputs) {
    auto s = io::read_stream(p);
    io::write_stream(fs::is_directory(in) ? fs::path(a.out) / p.filename() : fs::path(a.out), refine(s, pp),
                     s.has_probs());
  }
  std::cout << "streams=" << inputs.size() << " l_min=" << pp.l_min() << "\n";
  return 0;
}

// ---- eval -------------------------------------------------------------------

int cmd_eval(const std::string& streams, const std::string& gt_dir, const std::string& mapping, bool per_video,
             const std::string& f1_csv, const std::string& ignore_name, std::size_t jobs) {
  const auto gt = GroundTruth::open(gt_dir, mapping);
  const auto ignore = gt.class_id(ignore_name);
  auto files = files_with_ext(streams, ".txt");
  if (files.empty()) throw DataError("no stream files under " + streams);

  std::vector<std::vector<int>> preds(files.size()), gts(files.size());
  parallel_for(files.size(), jobs, [&](std::size_t i) {
    preds[i] = io::read_stream(files[i]).labels;
    gts[i] = gt.labels(files[i].stem().string());
  });
  MetricAccumulator acc(ignore);
  for (std::size_t i = 0; i < files.size(); ++i) {
    auto r = acc.add(preds[i], gts[i]);
    if (per_video) std::cout << "video=" << files[i].stem().string() << " " << report_line(r) << "\n";
  }
  const auto r = acc.report();
  std::cout << "videos=" << acc.videos() << "\n"
            << "acc=" << fmt(r.acc) << "\nedit=" << fmt(r.edit) << "\nf1@10=" << fmt(r.f1[0])
            << "\nf1@25=" << fmt(r.f1[1]) << "\nf1@50=" << fmt(r.f1[2]) << "\nseg=" << fmt(r.seg) << "\n";

  if (!f1_csv.empty()) {
    auto f = io::open_out(f1_csv);
    f << "threshold,tp,fp,fn,f1\n";
    for (int k = 5; k <= 95; k += 5) {
      MatchCounts c;
      for (std::size_t i = 0; i < files.size(); ++i)
        c += match_segments(SegmentList::from_labels(preds[i]).without(ignore),
                            SegmentList::from_labels(gts[i]).without(ignore), double(k));
      f << k << "," << c.tp << "," << c.fp << "," << c.fn << "," << fmt(c.f1()) << "\n";
    }
  }
  return 0;
}

// ---- bench ------------------------------------------------------------------

struct BenchArgs {
  std::string checkpoint, input, mode = "both", frames_csv;
  std::size_t frames = 512, warmup = 0;
  std::optional<double> interval_ms;
  bool live = false;
  std::uint64_t seed = 0;
};

int cmd_bench(const Common& common, const BenchArgs& a) {
  auto ck = io::read_checkpoint(a.checkpoint);
  auto cfg = resolve_config(common, ck.config);
  const auto model = ck.build_model();
  Tensor<float> x;
  if (!a.input.empty()) {
    x = io::read_features(a.input);
  } else {
    Rng rng(a.seed);
    x = Tensor<float>({a.frames, model.config().input_dim});
    for (auto& v : x.storage()) v = float(rng.normal());
  }
  if (x.cols() != model.config().input_dim) throw DataError("bench input has the wrong feature dimension");

  std::vector<InferenceMode> modes;
  if (a.mode == "both")
    modes = {InferenceMode::online, InferenceMode::semi_online};
  else
    modes = {parse_mode(a.mode)};

  ProfileOptions opt;
  opt.frame_interval_ms = a.interval_ms.value_or(cfg.frame_interval_ms);
  opt.warmup_frames = a.warmup;
  opt.analytic_wait = !a.live;
  opt.session.rerun_gru_per_window = cfg.online_gru_rerun;

  std::ofstream csv;
  if (!a.frames_csv.empty()) {
    csv = io::open_out(a.frames_csv);
    csv << "mode,t,position,latency_ms,amortized_ms,wait_ms,delay_ms\n";
  }
  std::printf("%-7s %7s %5s %12s %12s %12s %12s %12s %12s %10s\n", "mode", "frames", "w", "latency_ms", "latency_p50",
              "latency_p95", "wait_ms", "delay_ms", "delay_p95", "fps");
  for (auto mode : modes) {
    auto rep = profile(model, x, mode, opt);
    std::printf("%-7s %7zu %5zu %12.4f %12.4f %12.4f %12.4f %12.4f %12.4f %10.1f\n", mode_name(mode).c_str(),
                rep.frames.size(), model.config().window, rep.latency.mean, rep.latency.median, rep.latency.p95,
                rep.wait.mean, rep.delay.mean, rep.delay.p95, rep.fps);
    if (csv)
      for (const auto& f : rep.frames)
        csv << mode_name(mode) << "," << f.t << "," << f.position << "," << fmt(f.latency_ms) << ","
            << fmt(f.amortized_ms) << "," << fmt(f.wait_ms) << "," << fmt(f.delay_ms) << "\n";
  }
  std::printf("frame_interval_ms=%s wait=%s\n", fmt(opt.frame_interval_ms).c_str(), a.live ? "live" : "analytic");
  return 0;
}

int cmd_config(const Common& common) {
  std::cout << format_run_config(resolve_config(common));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"otas: streaming temporal action segmentation"};
  app.require_subcommand(1);
  Common common;

  auto* gen = app.add_subcommand("generate", "write a synthetic dataset");
  add_common(gen, common);
  std::string gen_out;
  gen->add_option("-o,--out", gen_out, "output directory")->required();

  auto* train = app.add_subcommand("train", "train a model on a dataset directory");
  add_common(train, common);
  std::string train_data, train_out, train_resume;
  bool quiet = false;
  train->add_option("-d,--data", train_data, "dataset directory")->required();
  train->add_option("-o,--out", train_out, "checkpoint path (rewritten after every epoch)")->required();
  train->add_option("--resume", train_resume, "continue from this checkpoint's weights, optimizer and epoch");
  train->add_flag("-q,--quiet", quiet, "no per-epoch lines");

  auto* infer = app.add_subcommand("infer", "run streaming inference");
  add_common(infer, common);
  std::string inf_ckpt, inf_in, inf_mode, inf_out, inf_split = "test";
  bool emit_probs = true;
  std::size_t jobs = 1;
  infer->add_option("-m,--checkpoint", inf_ckpt, "checkpoint")->required();
  infer->add_option("-i,--input", inf_in, "feature file, directory of .otas files, or dataset directory")->required();
  infer->add_option("--mode", inf_mode, "online or semi (default: config mode)");
  infer->add_option("-o,--out", inf_out, "stream file, or directory for several videos")->required();
  infer->add_flag("--emit-probs,!--no-emit-probs", emit_probs, "write the probability column (default on)");
  infer->add_option("-j,--jobs", jobs, "videos processed in parallel")->check(CLI::PositiveNumber);
  infer->add_option("--split", inf_split, "split used when --input is a dataset directory");

  auto* post = app.add_subcommand("postprocess", "confidence-based refinement of prediction streams");
  add_common(post, common);
  PostArgs pa;
  post->add_option("-s,--stream", pa.stream, "stream file or directory")->required();
  post->add_option("-o,--out", pa.out, "output file or directory");
  post->add_option("--theta", pa.theta, "confidence threshold (default: config theta)");
  post->add_option("--sigma", pa.sigma, "minimum segment fraction of T_max (default: config sigma)");
  post->add_option("--t-max", pa.t_max, "longest training video length");
  post->add_option("-m,--checkpoint", pa.checkpoint, "read T_max from this checkpoint");
  post->add_flag("--segment-length-rule", pa.segment_length_rule,
                 "count the refined segment's length instead of the copy counter");
  post->add_flag("--sweep", pa.sweep, "evaluate a theta x sigma grid against --gt");
  post->add_option("--gt", pa.gt, "ground truth for --sweep (dataset directory)");
  post->add_option("--mapping", pa.mapping, "mapping file when --gt is a bare label directory");
  post->add_option("--thetas", pa.thetas, "sweep thetas, comma separated");
  post->add_option("--sigmas", pa.sigmas, "sweep sigmas, comma separated (a/b allowed)");

  auto* eval = app.add_subcommand("eval", "score prediction streams against ground truth");
  std::string ev_streams, ev_gt, ev_mapping, ev_csv, ev_ignore;
  bool per_video = false;
  std::size_t ev_jobs = 1;
  eval->add_option("-s,--streams", ev_streams, "directory of <video>.txt streams")->required();
  eval->add_option("-g,--gt", ev_gt, "dataset directory or label directory")->required();
  eval->add_option("--mapping", ev_mapping, "mapping file when --gt is a bare label directory");
  eval->add_flag("--per-video", per_video, "print one line per video before the summary");
  eval->add_option("--f1-csv", ev_csv, "write pooled F1 over IoU thresholds 5..95 as CSV");
  eval->add_option("--ignore", ev_ignore, "class name excluded from scoring (e.g. background)");
  eval->add_option("-j,--jobs", ev_jobs, "files read in parallel")->check(CLI::PositiveNumber);

  auto* bench = app.add_subcommand("bench", "runtime profile: latency, buffering wait, delay, FPS");
  add_common(bench, common);
  BenchArgs ba;
  bench->add_option("-m,--checkpoint", ba.checkpoint, "checkpoint")->required();
  bench->add_option("-i,--input", ba.input, "feature file to stream (default: random frames)");
  bench->add_option("--frames", ba.frames, "random frames when no --input")->check(CLI::PositiveNumber);
  bench->add_option("--seed", ba.seed, "seed for the random frames");
  bench->add_option("--mode", ba.mode, "online, semi or both");
  bench->add_option("--frame-interval-ms", ba.interval_ms, "camera frame interval (default: config)");
  bench->add_option("--warmup", ba.warmup, "frames streamed once before timing");
  bench->add_flag("--live", ba.live, "pace arrivals in real time and measure the wait");
  bench->add_option("--frames-csv", ba.frames_csv, "per-frame timing CSV");

  auto* config = app.add_subcommand("config", "print the effective run config");
  add_common(config, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_generate(common, gen_out);
    if (*train) return cmd_train(common, train_data, train_out, train_resume, quiet);
    if (*infer) return cmd_infer(common, inf_ckpt, inf_in, inf_mode, inf_out, emit_probs, jobs, inf_split);
    if (*post) return cmd_postprocess(common, pa);
    if (*eval) return cmd_eval(ev_streams, ev_gt, ev_mapping, per_video, ev_csv, ev_ignore, ev_jobs);
    if (*bench) return cmd_bench(common, ba);
    if (*config) return cmd_config(common);
  } catch (const ConfigError& e) {
    std::cerr << "otas: config error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "otas: numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "otas: data error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "otas: data error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "otas: data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "otas: error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
