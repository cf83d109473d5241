#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>

#include "otas/io.hpp"

using namespace otas;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + OTAS_CLI_PATH + " " + args + " 2>&1";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  char buf[4096];
  for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, p)) > 0;) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::map<std::string, std::string> key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  for (std::string tok; in >> tok;) {
    const auto eq = tok.find('=');
    if (eq != std::string::npos) kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return kv;
}

std::size_t line_count(const fs::path& p) { return io::read_lines(p).size(); }

struct Workspace {
  fs::path dir = fs::temp_directory_path() / "otas_cli_test";
  Workspace() {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string operator/(const std::string& s) const { return (dir / s).string(); }
};

const char* kSmall =
    "w=128\nhidden_dim=16\nheads=2\ntd_heads=2\ntcn_layers=4\nepochs=0\n"
    "train_videos=3\ntest_videos=2\nmin_length=150\nmax_length=300\n";

}  // namespace

TEST_CASE("help documents every subcommand and flag", "[cli]") {
  auto r = run("--help");
  CHECK(r.code == 0);
  for (const char* s : {"generate", "train", "infer", "postprocess", "eval", "bench"})
    CHECK(r.out.find(s) != std::string::npos);
  auto inf = run("infer --help");
  CHECK(inf.code == 0);
  for (const char* f : {"--checkpoint", "--mode", "--emit-probs", "--jobs", "--config"})
    CHECK(inf.out.find(f) != std::string::npos);
  CHECK(run("").code == 1);
  CHECK(run("frobnicate").code == 1);
}

TEST_CASE("generate", "[cli]") {
  Workspace ws;
  auto a = run("generate -o " + ws / "d1");
  REQUIRE(a.code == 0);
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(ws.dir / "d1" / "features")) n += e.path().extension() == ".otas";
  CHECK(n == 120);
  CHECK(line_count(ws.dir / "d1" / "splits" / "train.txt") == 100);
  CHECK(fs::exists(ws.dir / "d1" / "mapping.txt"));
  auto b = run("generate -o " + ws / "d2");
  CHECK(key_values(a.out)["manifest"] == key_values(b.out)["manifest"]);
  CHECK(io::read_text(ws.dir / "d1" / "manifest.txt") == io::read_text(ws.dir / "d2" / "manifest.txt"));

  {
    auto f = io::open_out(ws.dir / "bad.cfg");
    f << "train_videos=2\nclip_size=9\n";
  }
  auto bad = run("generate -c " + ws / "bad.cfg" + " -o " + ws / "d3");
  CHECK(bad.code == 1);
  CHECK(bad.out.find("clip_size") != std::string::npos);
  CHECK(run("generate --set train_videos=-3 -o " + ws / "d3").code == 1);

  SECTION("config path from the environment") {
    {
      auto f = io::open_out(ws.dir / "env.cfg");
      f << "train_videos=2\ntest_videos=1\nmin_length=20\nmax_length=30\n";
    }
    auto e = run("generate -o " + ws / "d4", "OTAS_CONFIG=" + ws / "env.cfg");
    REQUIRE(e.code == 0);
    CHECK(key_values(e.out)["videos"] == "3");
  }
}

TEST_CASE("train, infer, postprocess, eval, bench", "[cli]") {
  Workspace ws;
  {
    auto f = io::open_out(ws.dir / "small.cfg");
    f << kSmall;
  }
  const std::string cfg = " -c " + ws / "small.cfg";
  REQUIRE(run("generate" + cfg + " -o " + ws / "ds").code == 0);

  auto tr = run("train" + cfg + " -d " + ws / "ds" + " -o " + ws / "m.ckpt");
  REQUIRE(tr.code == 0);
  auto ck = io::read_checkpoint(ws.dir / "m.ckpt");
  CHECK(ck.meta.epoch == 0);
  CHECK(ck.meta.t_max == io::read_dataset(ws.dir / "ds", true, false).t_max());
  CHECK(key_values(tr.out)["t_max"] == std::to_string(ck.meta.t_max));

  SECTION("resume continues the epoch counter") {
    auto r = run("train" + cfg + " --set epochs=1 -q -d " + ws / "ds" + " -o " + ws / "m1.ckpt --resume " +
                 ws / "m.ckpt");
    REQUIRE(r.code == 0);
    CHECK(io::read_checkpoint(ws.dir / "m1.ckpt").meta.epoch == 1);
    auto again = run("train" + cfg + " --set epochs=1 -q -d " + ws / "ds" + " -o " + ws / "m2.ckpt --resume " +
                     ws / "m1.ckpt");
    REQUIRE(again.code == 0);
    CHECK(io::read_text(ws.dir / "m1.ckpt") == io::read_text(ws.dir / "m2.ckpt"));
  }

  SECTION("a 500-frame video gives 500 predictions in both modes") {
    Rng rng(3);
    Tensor<float> x({500, 32});
    for (auto& v : x.storage()) v = float(rng.normal());
    io::write_features(ws.dir / "long.otas", x);
    for (const char* mode : {"semi", "online"}) {
      auto r = run("infer -m " + ws / "m.ckpt" + " -i " + ws / "long.otas" + " --mode " + mode + " -o " +
                   ws / (std::string(mode) + ".txt"));
      REQUIRE(r.code == 0);
      auto s = io::read_stream(ws.dir / (std::string(mode) + ".txt"));
      CHECK(s.size() == 500);
      CHECK(s.has_probs());
    }
    REQUIRE(run("infer --no-emit-probs -m " + ws / "m.ckpt" + " -i " + ws / "long.otas" + " -o " + ws / "np.txt")
                .code == 0);
    const auto lines = io::read_lines(ws.dir / "np.txt");
    REQUIRE(lines.size() == 500);
    CHECK(std::count(lines[0].begin(), lines[0].end(), '\t') == 2);
  }

  SECTION("parallel inference matches serial inference") {
    REQUIRE(run("infer -m " + ws / "m.ckpt" + " -i " + ws / "ds" + " --mode online -o " + ws / "p1").code == 0);
    REQUIRE(run("infer -j 3 -m " + ws / "m.ckpt" + " -i " + ws / "ds" + " --mode online -o " + ws / "p3").code == 0);
    for (const auto& e : fs::directory_iterator(ws.dir / "p1"))
      CHECK(io::read_text(e.path()) == io::read_text(ws.dir / "p3" / e.path().filename()));
  }

  SECTION("postprocess and eval") {
    REQUIRE(run("infer -m " + ws / "m.ckpt" + " -i " + ws / "ds" + " -o " + ws / "pred").code == 0);
    auto pp0 = run("postprocess --theta 0 -m " + ws / "m.ckpt" + " -s " + ws / "pred" + " -o " + ws / "pp0");
    REQUIRE(pp0.code == 0);
    for (const auto& e : fs::directory_iterator(ws.dir / "pred"))
      CHECK(io::read_stream(e.path()).labels == io::read_stream(ws.dir / "pp0" / e.path().filename()).labels);

    auto missing = run("postprocess -s " + ws / "pred" + " -o " + ws / "pp1");
    CHECK(missing.code == 1);
    CHECK(missing.out.find("T_max") != std::string::npos);

    auto sw = run("postprocess --sweep --gt " + ws / "ds" + " --t-max 300 -s " + ws / "pred" +
                  " --thetas 0,0.5,0.9 --sigmas 1/16,1/8");
    REQUIRE(sw.code == 0);
    CHECK(std::count(sw.out.begin(), sw.out.end(), '\n') == 6);
    CHECK(sw.out.find("theta=0.9 sigma=0.125 l_min=37 ") != std::string::npos);

    auto ev = run("eval --per-video -s " + ws / "pred" + " -g " + ws / "ds" + " --f1-csv " + ws / "f1.csv");
    REQUIRE(ev.code == 0);
    auto kv = key_values(ev.out);
    MetricAccumulator acc;
    auto ds = io::read_dataset(ws.dir / "ds", false, true);
    for (const auto& v : ds.test) acc.add(io::read_stream(ws.dir / "pred" / (v.name + ".txt")).labels, v.labels);
    const auto want = acc.report();
    CHECK(std::stod(kv["acc"]) == want.acc);
    CHECK(std::stod(kv["edit"]) == want.edit);
    CHECK(std::stod(kv["f1@10"]) == want.f1[0]);
    CHECK(std::stod(kv["f1@50"]) == want.f1[2]);
    CHECK(std::stod(kv["seg"]) == want.seg);
    CHECK(line_count(ws.dir / "f1.csv") == 20);

    // Ground truth scored against itself.
    fs::create_directories(ws.dir / "gtstreams");
    for (const auto& v : ds.test) {
      PredictionStream s;
      for (int y : v.labels) s.push(y, 1.0);
      io::write_stream(ws.dir / "gtstreams" / (v.name + ".txt"), s, false);
    }
    auto perfect = key_values(run("eval -s " + ws / "gtstreams" + " -g " + ws / "ds").out);
    for (const char* k : {"acc", "edit", "f1@10", "f1@25", "f1@50", "seg"}) CHECK(perfect[k] == "100");
  }

  SECTION("bench reports latency, wait, delay and fps") {
    auto b = run("bench -m " + ws / "m.ckpt" + " --frames 256 --frame-interval-ms 10 --frames-csv " + ws / "b.csv");
    REQUIRE(b.code == 0);
    for (const char* col : {"latency_ms", "wait_ms", "delay_ms", "fps", "online", "semi"})
      CHECK(b.out.find(col) != std::string::npos);
    const auto rows = io::read_lines(ws.dir / "b.csv");
    REQUIRE(rows.size() == 1 + 2 * 256);
    // semi rows: wait = (128 - position) * 10
    for (std::size_t i = 257; i < rows.size(); ++i) {
      std::stringstream ss(rows[i]);
      std::vector<std::string> f;
      for (std::string c; std::getline(ss, c, ',');) f.push_back(c);
      REQUIRE(f[0] == "semi");
      REQUIRE(std::stod(f[5]) == double(128 - std::stoul(f[2])) * 10);
    }
  }

  SECTION("exit codes for data and numeric failures") {
    CHECK(run("infer -m " + ws / "nope.ckpt" + " -i " + ws / "ds" + " -o " + ws / "x").code == 2);
    Tensor<float> bad({20, 32});
    bad(5, 3) = std::nanf("");
    io::write_features(ws.dir / "nan.otas", bad);
    auto r = run("infer -m " + ws / "m.ckpt" + " -i " + ws / "nan.otas" + " -o " + ws / "nan.txt");
    CHECK(r.code == 3);
    Tensor<float> narrow({20, 7});
    io::write_features(ws.dir / "narrow.otas", narrow);
    CHECK(run("infer -m " + ws / "m.ckpt" + " -i " + ws / "narrow.otas" + " -o " + ws / "n.txt").code == 2);
  }
}
