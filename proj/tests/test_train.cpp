#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "otas/io.hpp"
#include "otas/train.hpp"

using namespace otas;
namespace fs = std::filesystem;

namespace {

SynthConfig tiny_data() {
  SynthConfig c;
  c.activities = 2;
  c.actions = 4;
  c.input_dim = 8;
  c.train_videos = 6;
  c.test_videos = 2;
  c.min_length = 40;
  c.max_length = 70;
  c.template_length = 3;
  return c;
}

ModelConfig tiny_model(const Dataset& ds) {
  ModelConfig m;
  m.input_dim = ds.input_dim();
  m.num_classes = ds.class_names.size();
  m.hidden_dim = 8;
  m.window = 16;
  m.tcn_layers = 3;
  m.cfa.attn_heads = m.cfa.decoder_heads = 2;
  return m.sync();
}

bool same_params(const Segmenter<float>& a, const Segmenter<float>& b) {
  const auto &x = a.params().items(), &y = b.params().items();
  if (x.size() != y.size()) return false;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!(x[i].second->value == y[i].second->value)) return false;
  return true;
}

}  // namespace

TEST_CASE("T_max comes from the training split", "[train]") {
  auto cfg = tiny_data();
  cfg.train_videos = 1;
  auto ds = generate(cfg);
  CHECK(ds.t_max() == ds.train[0].length());
  Dataset empty;
  CHECK(empty.t_max() == 0);
}

TEST_CASE("cross-entropy decreases over five epochs", "[train]") {
  auto ds = generate(tiny_data());
  int decreasing = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    Segmenter<float> model(tiny_model(ds), seed);
    Trainer<float> trainer(model, {}, {5, 1e-3, seed});
    auto curve = trainer.fit(ds.train);
    REQUIRE(curve.size() == 5);
    for (const auto& e : curve) REQUIRE(std::isfinite(e.loss));
    decreasing += curve.back().classification < curve.front().classification;
  }
  CHECK(decreasing >= 2);
}

TEST_CASE("loss terms", "[train]") {
  auto ds = generate(tiny_data());
  Segmenter<float> model(tiny_model(ds), 4);
  LossConfig plain;
  plain.lambda = 0;
  Trainer<float> trainer(model, plain, {1, 1e-3, 4});
  auto e = trainer.run_epoch(ds.train);
  CHECK(e.loss == Catch::Approx(e.classification));
  CHECK(e.smoothing >= 0);
  std::size_t clips = 0;
  for (const auto& v : ds.train) clips += clip_count(v.length(), 16);
  CHECK(e.clips == clips);
  CHECK(e.epoch == 1);
}

TEST_CASE("training is deterministic", "[train]") {
  auto ds = generate(tiny_data());
  Segmenter<float> a(tiny_model(ds), 5), b(tiny_model(ds), 5);
  Trainer<float>(a, {}, {2, 1e-3, 9}).fit(ds.train);
  Trainer<float>(b, {}, {2, 1e-3, 9}).fit(ds.train);
  CHECK(same_params(a, b));
  Segmenter<float> c(tiny_model(ds), 5);
  Trainer<float>(c, {}, {2, 1e-3, 10}).fit(ds.train);
  CHECK_FALSE(same_params(a, c));
}

TEST_CASE("zero epochs leaves the model untouched", "[train]") {
  auto ds = generate(tiny_data());
  Segmenter<float> a(tiny_model(ds), 6), b(tiny_model(ds), 6);
  auto curve = Trainer<float>(a, {}, {0, 1e-3, 0}).fit(ds.train);
  CHECK(curve.empty());
  CHECK(same_params(a, b));
}

TEST_CASE("resuming from a checkpoint matches an uninterrupted run", "[train][io]") {
  auto ds = generate(tiny_data());
  const auto dir = fs::temp_directory_path() / "otas_train_resume";
  fs::create_directories(dir);
  RunConfig rc;
  rc.model = tiny_model(ds);

  Segmenter<float> straight(tiny_model(ds), 7);
  Trainer<float>(straight, {}, {3, 1e-3, 11}).fit(ds.train);

  Segmenter<float> first(tiny_model(ds), 7);
  Trainer<float> t1(first, {}, {2, 1e-3, 11});
  t1.fit(ds.train);
  io::CheckpointMeta meta{ds.t_max(), 11, t1.epochs_done(), ds.input_dim(), ds.class_names};
  io::write_checkpoint(dir / "c.ckpt", io::Checkpoint::capture(rc, meta, first, &t1.optimizer()));

  auto ck = io::read_checkpoint(dir / "c.ckpt");
  auto resumed = ck.build_model();
  Trainer<float> t2(resumed, {}, {3, 1e-3, 11});
  t2.optimizer().restore(ck.adam_steps, ck.adam_m, ck.adam_v);
  t2.set_epochs_done(ck.meta.epoch);
  CHECK(t2.fit(ds.train).size() == 1);
  CHECK(same_params(straight, resumed));
  fs::remove_all(dir);
}

TEST_CASE("bad training input", "[train]") {
  auto ds = generate(tiny_data());
  auto m = tiny_model(ds);
  m.input_dim += 1;
  Segmenter<float> model(m, 1);
  Trainer<float> trainer(model, {}, {1, 1e-3, 0});
  CHECK_THROWS_AS(trainer.fit(ds.train), DataError);
  CHECK_THROWS_AS(trainer.fit({}), DataError);
  Segmenter<float> ok(tiny_model(ds), 1);
  CHECK_THROWS_AS(Trainer<float>(ok, {}, {1, 0.0, 0}), ConfigError);
}
