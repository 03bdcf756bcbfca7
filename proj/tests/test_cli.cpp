#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "fusionboost/booster.hpp"
#include "fusionboost/image.hpp"

namespace fs = std::filesystem;
using namespace fb;

namespace {

struct RunResult {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;

  explicit TempDir(const std::string& tag) : path(fs::temp_directory_path() / ("fbcli_" + tag)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  fs::path operator/(const std::string& s) const { return path / s; }
  std::string str(const std::string& s) const { return (path / s).string(); }
};

RunResult run_cli(const TempDir& td, const std::string& args) {
  const fs::path out = td / "_stdout.txt", err = td / "_stderr.txt";
  const std::string cmd = std::string("\"") + FB_CLI_PATH + "\" " + args + " >\"" +
                          out.string() + "\" 2>\"" + err.string() + "\"";
  const int raw = std::system(cmd.c_str());
  RunResult r;
  if (raw >= 0 && WIFEXITED(raw)) r.code = WEXITSTATUS(raw);
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::vector<std::string> sorted_rel_files(const fs::path& root) {
  std::vector<std::string> v;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) v.push_back(fs::relative(e.path(), root).string());
  std::sort(v.begin(), v.end());
  return v;
}

bool dirs_identical(const fs::path& a, const fs::path& b) {
  const auto files_a = sorted_rel_files(a);
  const auto files_b = sorted_rel_files(b);
  if (files_a != files_b) return false;
  for (const auto& rel : files_a)
    if (slurp(a / rel) != slurp(b / rel)) return false;
  return true;
}

int line_count(const std::string& text) {
  int n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

}  // namespace

TEST_CASE("cli synth writes a reproducible dataset") {
  TempDir td("synth");
  const auto r = run_cli(td, "synth --scenario modality --pairs 4 --size 96x96 --seed 7 --out " +
                                 td.str("d1"));
  CHECK(r.code == 0);
  CHECK(contains(r.out, "wrote 4 pairs"));
  for (const char* name : {"p000_a.pgm", "p000_b.pgm", "p003_a.pgm", "p003_b.pgm",
                           "manifest.tsv", "config.txt"})
    CHECK(fs::exists(td / ("d1/" + std::string(name))));

  const PairManifest man = PairManifest::load(td / "d1/manifest.tsv");
  REQUIRE(man.entries.size() == 4);
  CHECK(man.entries[0].id == "p000");
  CHECK(man.entries[3].id == "p003");
  CHECK(!man.entries[0].fused.has_value());
  const GrayImage img = load_image(man.entries[0].a);
  CHECK(img.h == 96);
  CHECK(img.w == 96);

  const std::string snap = slurp(td / "d1/config.txt");
  CHECK(contains(snap, "# fusionboost "));
  CHECK(contains(snap, "scenario=modality"));
  CHECK(contains(snap, "seed=7"));

  CHECK(run_cli(td, "synth --scenario modality --pairs 4 --size 96x96 --seed 7 --out " +
                        td.str("d2"))
            .code == 0);
  CHECK(dirs_identical(td / "d1", td / "d2"));

  CHECK(run_cli(td, "synth --scenario modality --pairs 4 --size 96x96 --seed 8 --out " +
                        td.str("d3"))
            .code == 0);
  CHECK(!dirs_identical(td / "d1", td / "d3"));
}

TEST_CASE("cli synth refuses dirty outputs and bad scenarios") {
  TempDir td("synthguard");
  REQUIRE(run_cli(td, "synth --pairs 1 --size 64x64 --out " + td.str("d")).code == 0);

  const auto dirty = run_cli(td, "synth --pairs 1 --size 64x64 --out " + td.str("d"));
  CHECK(dirty.code != 0);
  CHECK(contains(dirty.err, "not empty"));
  CHECK(run_cli(td, "synth --pairs 1 --size 64x64 --force --out " + td.str("d")).code == 0);

  const auto bad = run_cli(td, "synth --scenario volumetric --out " + td.str("x"));
  CHECK(bad.code != 0);
  CHECK(contains(bad.err, "exposure"));
  CHECK(contains(bad.err, "focus"));
  CHECK(contains(bad.err, "modality"));
}

TEST_CASE("cli fuse backbones, degradation, and external mode") {
  TempDir td("fuse");
  REQUIRE(run_cli(td, "synth --scenario focus --pairs 3 --size 64x64 --seed 3 --out " +
                          td.str("data"))
              .code == 0);
  const std::string man = td.str("data/manifest.tsv");

  REQUIRE(run_cli(td, "fuse --manifest " + man + " --out " + td.str("fmean")).code == 0);
  const PairManifest fused_man = PairManifest::load(td / "fmean/manifest.tsv");
  REQUIRE(fused_man.entries.size() == 3);
  for (const auto& e : fused_man.entries) REQUIRE(e.fused.has_value());

  // One-level pyramid degenerates to the mean backbone, byte for byte.
  REQUIRE(run_cli(td, "fuse --backbone pyramid:1 --manifest " + man + " --out " + td.str("fp1"))
              .code == 0);
  CHECK(slurp(td / "fp1/p000_fused.pgm") == slurp(td / "fmean/p000_fused.pgm"));
  CHECK(slurp(td / "fp1/p002_fused.pgm") == slurp(td / "fmean/p002_fused.pgm"));

  // The identity degradation changes nothing.
  REQUIRE(run_cli(td, "fuse --degrade 0,0,1 --manifest " + man + " --out " + td.str("fid"))
              .code == 0);
  CHECK(slurp(td / "fid/p001_fused.pgm") == slurp(td / "fmean/p001_fused.pgm"));

  // A real degradation is seed-stable and seed-sensitive.
  const std::string deg = "fuse --degrade 0.1,1,0.9 --manifest " + man + " --out ";
  REQUIRE(run_cli(td, deg + td.str("fd1")).code == 0);
  REQUIRE(run_cli(td, deg + td.str("fd2")).code == 0);
  CHECK(slurp(td / "fd1/p000_fused.pgm") == slurp(td / "fd2/p000_fused.pgm"));
  CHECK(slurp(td / "fd1/p000_fused.pgm") != slurp(td / "fmean/p000_fused.pgm"));
  REQUIRE(run_cli(td, deg + td.str("fd3") + " --seed 2").code == 0);
  CHECK(slurp(td / "fd1/p000_fused.pgm") != slurp(td / "fd3/p000_fused.pgm"));

  // external re-emits the fused column; without one it refuses.
  REQUIRE(run_cli(td, "fuse --backbone external --manifest " + td.str("fmean/manifest.tsv") +
                          " --out " + td.str("fext"))
              .code == 0);
  CHECK(slurp(td / "fext/p000_fused.pgm") == slurp(td / "fmean/p000_fused.pgm"));
  const auto noext = run_cli(td, "fuse --backbone external --manifest " + man + " --out " +
                                     td.str("fnoext"));
  CHECK(noext.code != 0);
  CHECK(contains(noext.err, "fused"));

  // The mean of a pair with itself is the pair.
  {
    std::ofstream solo(td / "solo.tsv");
    const std::string img = td.str("data/p000_a.pgm");
    solo << "s0\t" << img << '\t' << img << '\n';
  }
  REQUIRE(run_cli(td, "fuse --manifest " + td.str("solo.tsv") + " --out " + td.str("fsolo"))
              .code == 0);
  CHECK(slurp(td / "fsolo/s0_fused.pgm") == slurp(td / "data/p000_a.pgm"));
}

TEST_CASE("cli config files merge under explicit flags and reject junk") {
  TempDir td("config");
  {
    std::ofstream cfg(td / "cfg.txt");
    cfg << "# defaults\npairs=2\nscenario=focus\nsize=64x64\n";
  }
  const auto r = run_cli(td, "synth --config " + td.str("cfg.txt") + " --pairs 3 --out " +
                                 td.str("d"));
  CHECK(r.code == 0);
  CHECK(PairManifest::load(td / "d/manifest.tsv").entries.size() == 3);  // flag beat config
  const std::string snap = slurp(td / "d/config.txt");
  CHECK(contains(snap, "scenario=focus"));  // config filled the gap
  CHECK(contains(snap, "pairs=3"));

  {
    std::ofstream cfg(td / "bad.txt");
    cfg << "pairs=2\nbogus=1\n";
  }
  const auto bad = run_cli(td, "synth --config " + td.str("bad.txt") + " --out " + td.str("x"));
  CHECK(bad.code != 0);
  CHECK(contains(bad.err, "bogus"));

  // A recorded snapshot reproduces the run it came from.
  REQUIRE(run_cli(td, "synth --config " + td.str("d/config.txt") + " --out " + td.str("redo"))
              .code == 0);
  CHECK(dirs_identical(td / "d", td / "redo"));
}

TEST_CASE("cli train writes checkpoint, loss trace, and is seed-stable") {
  TempDir td("train");
  REQUIRE(run_cli(td, "synth --scenario modality --pairs 3 --size 64x64 --seed 5 --out " +
                          td.str("data"))
              .code == 0);
  REQUIRE(run_cli(td, "fuse --manifest " + td.str("data/manifest.tsv") + " --out " +
                          td.str("fz"))
              .code == 0);

  const std::string flags =
      " --epochs 2 --patch 64 --patches-per-pair 2 --lr 1e-3 --seed 9 --manifest " +
      td.str("fz/manifest.tsv");
  const auto r = run_cli(td, "train --out " + td.str("run/booster.fbst") + flags);
  CHECK(r.code == 0);
  CHECK(contains(r.out, "loss_rec="));

  const std::string loss = slurp(td / "run/booster.loss.csv");
  CHECK(line_count(loss) == 5);  // header + two probe epochs + two ase epochs
  CHECK(contains(loss, "phase,epoch,loss_per_a,loss_per_b,loss_rec"));
  CHECK(contains(loss, "probe,1,"));
  CHECK(contains(loss, "ase,2,"));
  CHECK(contains(loss, ",nan"));
  CHECK(fs::exists(td / "run/booster.config.txt"));

  const TrainedBooster tb = load_checkpoint(td / "run/booster.fbst");
  CHECK(tb.cfg.k == 3);  // untouched defaults survive the round trip
  CHECK(tb.cfg.epochs == 2);
  CHECK(tb.cfg.patch == 64);
  CHECK(tb.cfg.seed == 9);

  REQUIRE(run_cli(td, "train --out " + td.str("run2/booster.fbst") + flags).code == 0);
  CHECK(slurp(td / "run/booster.fbst") == slurp(td / "run2/booster.fbst"));
}

TEST_CASE("cli boost writes images, timing, and aborts on a bad checkpoint") {
  TempDir td("boost");
  REQUIRE(run_cli(td, "synth --scenario exposure --pairs 3 --size 64x64 --seed 2 --out " +
                          td.str("data"))
              .code == 0);
  REQUIRE(run_cli(td, "fuse --manifest " + td.str("data/manifest.tsv") + " --out " +
                          td.str("fz"))
              .code == 0);
  REQUIRE(run_cli(td, "train --epochs 2 --patch 64 --patches-per-pair 2 --lr 1e-3 --manifest " +
                          td.str("fz/manifest.tsv") + " --out " + td.str("booster.fbst"))
              .code == 0);

  const auto r = run_cli(td, "boost --ckpt " + td.str("booster.fbst") + " --manifest " +
                                 td.str("fz/manifest.tsv") + " --out " + td.str("bst"));
  CHECK(r.code == 0);
  CHECK(contains(r.out, "added_seconds=+"));
  for (const char* name : {"p000_boosted.pgm", "p001_boosted.pgm", "p002_boosted.pgm",
                           "manifest.tsv", "timing.csv"})
    CHECK(fs::exists(td / ("bst/" + std::string(name))));

  const std::string timing = slurp(td / "bst/timing.csv");
  CHECK(line_count(timing) == 5);  // header + three pairs + total
  CHECK(contains(timing, "id,seconds"));
  CHECK(contains(timing, "total,"));
  std::istringstream rows(timing);
  std::string line;
  std::getline(rows, line);  // header
  while (std::getline(rows, line)) {
    const double secs = std::stod(line.substr(line.find(',') + 1));
    CHECK(secs > 0.0);
  }

  const auto bad = run_cli(td, "boost --ckpt " + td.str("nope.fbst") + " --manifest " +
                                   td.str("fz/manifest.tsv") + " --out " + td.str("bst2"));
  CHECK(bad.code != 0);
  CHECK(!fs::exists(td / "bst2"));  // failed before any output
}

TEST_CASE("cli eval reports deltas and survives missing images") {
  TempDir td("eval");
  REQUIRE(run_cli(td, "synth --scenario focus --pairs 3 --size 64x64 --seed 4 --out " +
                          td.str("data"))
              .code == 0);
  REQUIRE(run_cli(td, "fuse --manifest " + td.str("data/manifest.tsv") + " --out " +
                          td.str("fz"))
              .code == 0);
  const std::string man = td.str("fz/manifest.tsv");

  const auto single = run_cli(td, "eval --manifest " + man + " --fused " + td.str("fz") +
                                      " --out " + td.str("ev1"));
  CHECK(single.code == 0);
  CHECK(contains(single.out, "en="));
  CHECK(contains(single.out, "pairs=3"));
  CHECK(fs::exists(td / "ev1/fused.csv"));
  CHECK(!fs::exists(td / "ev1/boosted.csv"));

  // A variant evaluated against itself has exactly zero deltas.
  const auto self = run_cli(td, "eval --manifest " + man + " --fused " + td.str("fz") +
                                    " --boosted " + td.str("fz") + " --out " + td.str("ev2"));
  CHECK(self.code == 0);
  for (const char* key : {"delta_en=0\n", "delta_sd=0\n", "delta_ei=0\n", "delta_qabf=0\n",
                          "delta_vif=0\n", "improved_en=0\n"})
    CHECK(contains(self.out, key));
  const std::string delta = slurp(td / "ev2/delta.csv");
  CHECK(contains(delta, "id,en,sd,ei,qabf,vif"));
  CHECK(contains(delta, "mean,0,0,0,0,0"));
  CHECK(contains(delta, "fraction_improved,0,0,0,0,0"));
  CHECK(fs::exists(td / "ev2/boosted.csv"));

  fs::create_directories(td / "hole");
  fs::copy_file(td / "fz/p001_fused.pgm", td / "hole/p001_fused.pgm");
  const auto holed = run_cli(td, "eval --manifest " + man + " --fused " + td.str("hole") +
                                     " --out " + td.str("ev3"));
  CHECK(holed.code != 0);
  CHECK(contains(holed.out, "failed=2"));
  const std::string csv = slurp(td / "ev3/fused.csv");
  CHECK(contains(csv, "p000,nan,nan,nan,nan,nan,nan"));
  CHECK(!contains(csv, "p001,nan"));
}

TEST_CASE("cli ablate runs every mode shape and rejects junk") {
  TempDir td("ablate");
  REQUIRE(run_cli(td, "synth --scenario modality --pairs 2 --size 64x64 --seed 6 --out " +
                          td.str("data"))
              .code == 0);
  REQUIRE(run_cli(td, "fuse --manifest " + td.str("data/manifest.tsv") + " --out " +
                          td.str("fz"))
              .code == 0);
  const std::string man = " --manifest " + td.str("fz/manifest.tsv");

  const auto rb = run_cli(td, "ablate --mode b" + man + " --out " + td.str("abb"));
  CHECK(rb.code == 0);
  CHECK(contains(rb.out, "mode=b"));
  CHECK(contains(rb.out, "en="));
  CHECK(fs::exists(td / "abb/p000_b.pgm"));
  CHECK(fs::exists(td / "abb/p001_b.pgm"));
  CHECK(fs::exists(td / "abb/metrics.csv"));

  CHECK(run_cli(td, "ablate --mode a" + man + " --degrade 0.05,1,0.8 --out " + td.str("aba"))
            .code == 0);
  CHECK(fs::exists(td / "aba/p000_a.pgm"));

  CHECK(run_cli(td, "ablate --mode c" + man +
                        " --epochs 1 --patch 64 --patches-per-pair 2 --out " + td.str("abc"))
            .code == 0);
  CHECK(fs::exists(td / "abc/p000_c.pgm"));

  REQUIRE(run_cli(td, "train --epochs 2 --patch 64 --patches-per-pair 2 --lr 1e-3" + man +
                          " --out " + td.str("booster.fbst"))
              .code == 0);
  CHECK(run_cli(td, "ablate --mode full --ckpt " + td.str("booster.fbst") + man + " --out " +
                        td.str("abf"))
            .code == 0);
  CHECK(fs::exists(td / "abf/p000_full.pgm"));

  const auto nock = run_cli(td, "ablate --mode full" + man + " --out " + td.str("abx"));
  CHECK(nock.code != 0);
  CHECK(contains(nock.err, "ckpt"));

  const auto badmode = run_cli(td, "ablate --mode z" + man + " --out " + td.str("abz"));
  CHECK(badmode.code != 0);
}

TEST_CASE("cli degradation study emits a row per level and a summary") {
  TempDir td("study");
  REQUIRE(run_cli(td, "synth --scenario modality --pairs 2 --size 64x64 --out " +
                          td.str("data"))
              .code == 0);
  REQUIRE(run_cli(td, "fuse --manifest " + td.str("data/manifest.tsv") + " --out " +
                          td.str("fz"))
              .code == 0);
  REQUIRE(run_cli(td, "train --epochs 2 --patch 64 --patches-per-pair 2 --lr 1e-3 --manifest " +
                          td.str("fz/manifest.tsv") + " --out " + td.str("booster.fbst"))
              .code == 0);

  const auto r = run_cli(td, "degradation-study --ckpt " + td.str("booster.fbst") +
                                 " --manifest " + td.str("fz/manifest.tsv") +
                                 " --levels 0,0.05,0.1,0.2,0.3 --out " + td.str("ds"));
  CHECK(r.code == 0);
  CHECK(contains(r.out, "spearman="));
  const std::string csv = slurp(td / "ds/degradation.csv");
  CHECK(line_count(csv) == 6);  // header + five levels
  CHECK(contains(csv, "level,noise_sigma,blur_k,contrast,probe_err"));

  const auto one = run_cli(td, "degradation-study --ckpt " + td.str("booster.fbst") +
                                   " --manifest " + td.str("fz/manifest.tsv") +
                                   " --levels 0.1 --out " + td.str("ds2"));
  CHECK(one.code != 0);  // a study needs at least two levels
}

TEST_CASE("cli top level requires a subcommand and reports its version") {
  TempDir td("top");
  CHECK(run_cli(td, "").code != 0);
  const auto v = run_cli(td, "--version");
  CHECK(v.code == 0);
  CHECK(contains(v.out, "fusionboost"));
}
