#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "fusionboost/backbones.hpp"
#include "fusionboost/booster.hpp"
#include "fusionboost/image.hpp"
#include "fusionboost/metrics.hpp"

#ifndef FB_TOOL_VERSION
#define FB_TOOL_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using namespace fb;

namespace {

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

// --- flag-value parsing -----------------------------------------------------

double parse_double_str(const std::string& s, const std::string& what) {
  double v{};
  const char* b = s.data();
  const char* e = b + s.size();
  const auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e)
    throw ContractError(what + ": expected a number, got '" + s + "'");
  return v;
}

int parse_int_str(const std::string& s, const std::string& what) {
  int v{};
  const char* b = s.data();
  const char* e = b + s.size();
  const auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e)
    throw ContractError(what + ": expected an integer, got '" + s + "'");
  return v;
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!s.empty() && s.back() == ',') out.push_back("");
  return out;
}

std::pair<int, int> parse_size(const std::string& s) {
  const auto x = s.find_first_of("xX");
  require(x != std::string::npos, "--size expects HxW, got '" + s + "'");
  return {parse_int_str(s.substr(0, x), "--size height"),
          parse_int_str(s.substr(x + 1), "--size width")};
}

DegradeSpec parse_degrade(const std::string& s) {
  const auto f = split_commas(s);
  require(f.size() == 3, "--degrade expects \"sigma,blur,contrast\", got '" + s + "'");
  DegradeSpec d;
  d.noise_sigma = float(parse_double_str(f[0], "--degrade sigma"));
  d.blur_k = parse_int_str(f[1], "--degrade blur");
  d.contrast = float(parse_double_str(f[2], "--degrade contrast"));
  require(d.noise_sigma >= 0.0f, "--degrade sigma must be >= 0");
  require(d.blur_k >= 0, "--degrade blur must be >= 0");
  require(d.contrast > 0.0f, "--degrade contrast must be positive");
  return d;
}

struct BackboneChoice {
  bool external = false;
  Backbone kind = Backbone::Mean;
  int levels = 3;
};

BackboneChoice parse_backbone(const std::string& s, bool allow_external) {
  BackboneChoice c;
  if (s == "external") {
    require(allow_external, "backbone 'external' is not valid for this command");
    c.external = true;
    return c;
  }
  if (s == "mean" || s == "max" || s == "pyramid") {
    c.kind = backbone_from_string(s);
    return c;
  }
  if (s.rfind("pyramid:", 0) == 0) {
    c.kind = Backbone::Pyramid;
    c.levels = parse_int_str(s.substr(8), "--backbone pyramid levels");
    return c;
  }
  throw ContractError("unknown backbone '" + s + "'; valid: mean, max, pyramid[:levels]" +
                      std::string(allow_external ? ", external" : ""));
}

// --- flat config files ------------------------------------------------------

using KvList = std::vector<std::pair<std::string, std::string>>;

std::string trim_ws(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

// One key=value per line, '#' starts a comment line, double quotes optional
// around values (with \" and \\ escapes).
KvList parse_flat_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path.string());
  KvList kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string t = trim_ws(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    require(eq != std::string::npos && eq > 0, "config line " + std::to_string(lineno) +
                                                   ": expected key=value: " + path.string());
    std::string val = trim_ws(t.substr(eq + 1));
    if (val.size() >= 2 && val.front() == '"' && val.back() == '"') {
      std::string u;
      bool esc = false;
      for (char c : val.substr(1, val.size() - 2)) {
        if (!esc && c == '\\') {
          esc = true;
          continue;
        }
        u += c;
        esc = false;
      }
      val = std::move(u);
    }
    kv.emplace_back(trim_ws(t.substr(0, eq)), std::move(val));
  }
  return kv;
}

// Splices the contents of a --config file in as explicit options right after
// the subcommand token. User-given flags come later and win (all options use
// a last-value-wins policy); unknown keys are rejected against the
// subcommand's flag set.
std::vector<std::string> expand_config_args(const CLI::App& app,
                                            std::vector<std::string> args) {
  if (args.empty() || args[0].rfind("-", 0) == 0) return args;
  std::string file;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size())
      file = args[++i];
    else if (args[i].rfind("--config=", 0) == 0)
      file = args[i].substr(9);
  }
  if (file.empty()) return args;

  const CLI::App* sc = nullptr;
  try {
    sc = app.get_subcommand(args[0]);
  } catch (const CLI::Error&) {
    return args;  // let the parser report the unknown subcommand
  }
  std::vector<std::string> out{args[0]};
  for (const auto& [key, val] : parse_flat_config(file)) {
    require(key != "config" && key != "help",
            "config key '" + key + "' is not allowed in a config file: " + file);
    if (sc->get_option_no_throw("--" + key) == nullptr)
      throw ContractError("unknown config key '" + key + "' in " + file);
    out.push_back("--" + key + "=" + val);
  }
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

// --- run-directory plumbing -------------------------------------------------

std::string quote_config_value(const std::string& v) {
  if (!v.empty() && v.find_first_of(" \t#\"'=,[]") == std::string::npos) return v;
  std::string q = "\"";
  for (char c : v) {
    if (c == '"' || c == '\\') q += '\\';
    q += c;
  }
  return q + "\"";
}

// Resolved settings of the run, reloadable through --config. The output
// location itself is deliberately omitted so equal-seed runs into different
// directories stay byte-identical.
void write_snapshot(const fs::path& path, const KvList& kv) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config snapshot: " + path.string());
  out << "# fusionboost " << FB_TOOL_VERSION << "\n";
  for (const auto& [k, v] : kv) out << k << '=' << quote_config_value(v) << '\n';
  if (!out) throw IoError("config snapshot write failed: " + path.string());
}

void ensure_out_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    require(fs::is_directory(dir), "output path is not a directory: " + dir.string());
    if (!force && !fs::is_empty(dir))
      throw ContractError("output directory is not empty (use --force): " + dir.string());
  } else {
    fs::create_directories(dir);
  }
}

std::string abs_str(const std::string& p) { return fs::absolute(p).string(); }

std::string pair_id(int i, int total) {
  int width = 3;
  for (int v = std::max(total - 1, 0); v >= 1000 && width < 10; v /= 10) ++width;
  char buf[24];
  std::snprintf(buf, sizeof(buf), "p%0*d", width, i);
  return buf;
}

// The image for `id` inside a run directory: stem either the id itself or
// id plus a role suffix ("p003_fused", "p003_boosted", ...).
fs::path find_pair_image(const fs::path& dir, const std::string& id) {
  require(fs::is_directory(dir), "not a directory: " + dir.string());
  std::vector<fs::path> hits;
  for (const auto& ent : fs::directory_iterator(dir)) {
    if (!ent.is_regular_file()) continue;
    const fs::path& p = ent.path();
    const std::string ext = p.extension().string();
    if (ext != ".pgm" && ext != ".png") continue;
    const std::string stem = p.stem().string();
    if (stem == id || stem.rfind(id + "_", 0) == 0) hits.push_back(p);
  }
  std::sort(hits.begin(), hits.end());
  if (hits.empty()) throw IoError("no image for pair '" + id + "' in " + dir.string());
  if (hits.size() > 1)
    throw IoError("ambiguous images for pair '" + id + "': " + hits[0].string() + " vs " +
                  hits[1].string());
  return hits[0];
}

MetricReport score_dir(const PairManifest& man, const fs::path& dir) {
  MetricReport rep;
  for (const PairEntry& e : man.entries) {
    MetricRow row;
    row.id = e.id;
    try {
      const GrayImage a = load_image(e.a);
      const GrayImage b = load_image(e.b);
      const GrayImage f = load_image(find_pair_image(dir, e.id));
      row = compute_row(e.id, a, b, f);
    } catch (const std::exception& ex) {
      row.failed = true;
      row.error = ex.what();
    }
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

void write_csv_file(const fs::path& path, const MetricReport& rep) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report: " + path.string());
  write_report_csv(out, rep);
  if (!out) throw IoError("report write failed: " + path.string());
}

KvList config_kv(const BoosterConfig& cfg) {
  return {{"k", std::to_string(cfg.k)},
          {"epochs", std::to_string(cfg.epochs)},
          {"batch", std::to_string(cfg.batch)},
          {"lr", fmt_g(cfg.lr)},
          {"patch", std::to_string(cfg.patch)},
          {"patches-per-pair", std::to_string(cfg.patches_per_pair)},
          {"seed", std::to_string(cfg.seed)},
          {"beta1", fmt_g(cfg.beta1)},
          {"beta2", fmt_g(cfg.beta2)},
          {"eps", fmt_g(cfg.eps)}};
}

// --- synth ------------------------------------------------------------------

struct SynthArgs {
  std::string scenario = "modality";
  int pairs = 4;
  std::string size = "128x128";
  std::uint64_t seed = 1;
  std::string format = "pgm";
  bool force = false;
  std::string out;
};

int cmd_synth(const SynthArgs& a) {
  const Scenario sc = scenario_from_string(a.scenario);
  const auto [h, w] = parse_size(a.size);
  require(a.pairs > 0, "synth: --pairs must be positive");
  const fs::path dir(a.out);
  ensure_out_dir(dir, a.force);

  PairManifest man;
  for (int i = 0; i < a.pairs; ++i) {
    const std::string id = pair_id(i, a.pairs);
    const SynthPair p = synth_pair(sc, h, w, derive_seed(a.seed, id));
    PairEntry e;
    e.id = id;
    e.a = dir / (id + "_a." + a.format);
    e.b = dir / (id + "_b." + a.format);
    save_image(p.a, e.a);
    save_image(p.b, e.b);
    man.entries.push_back(std::move(e));
  }
  man.save(dir / "manifest.tsv");
  write_snapshot(dir / "config.txt", {{"scenario", a.scenario},
                                      {"pairs", std::to_string(a.pairs)},
                                      {"size", a.size},
                                      {"seed", std::to_string(a.seed)},
                                      {"format", a.format}});
  std::printf("wrote %d pairs to %s\n", a.pairs, dir.string().c_str());
  return 0;
}

// --- fuse -------------------------------------------------------------------

struct FuseArgs {
  std::string manifest;
  std::string backbone = "mean";
  std::string degrade_spec;
  std::uint64_t seed = 1;
  std::string format = "pgm";
  bool force = false;
  std::string out;
};

int cmd_fuse(const FuseArgs& a) {
  const BackboneChoice bc = parse_backbone(a.backbone, true);
  DegradeSpec base;
  if (!a.degrade_spec.empty()) base = parse_degrade(a.degrade_spec);

  const PairManifest man = PairManifest::load(a.manifest);
  require(!man.entries.empty(), "fuse: empty manifest: " + a.manifest);
  std::vector<FusedTriple> external;
  if (bc.external) external = load_external_fused(man);

  const fs::path dir(a.out);
  ensure_out_dir(dir, a.force);
  PairManifest out_man;
  for (std::size_t i = 0; i < man.entries.size(); ++i) {
    PairEntry e = man.entries[i];
    GrayImage f = bc.external
                      ? std::move(external[i].fused)
                      : fuse(bc.kind, load_image(e.a), load_image(e.b), bc.levels);
    DegradeSpec spec = base;
    spec.seed = derive_seed(a.seed, "degrade-" + e.id);
    f = degrade(f, spec);
    e.fused = dir / (e.id + "_fused." + a.format);
    save_image(f, *e.fused);
    out_man.entries.push_back(std::move(e));
  }
  out_man.save(dir / "manifest.tsv");
  write_snapshot(dir / "config.txt", {{"manifest", abs_str(a.manifest)},
                                      {"backbone", a.backbone},
                                      {"degrade", a.degrade_spec},
                                      {"seed", std::to_string(a.seed)},
                                      {"format", a.format}});
  std::printf("fused %zu pairs to %s\n", out_man.entries.size(), dir.string().c_str());
  return 0;
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
  std::string manifest;
  std::string out;
  BoosterConfig cfg;
};

int cmd_train(const TrainArgs& a) {
  a.cfg.validate();
  const std::vector<FusedTriple> data = load_external_fused(PairManifest::load(a.manifest));
  const TrainedBooster tb = train_booster(data, a.cfg);

  const fs::path ckpt(a.out);
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  save_checkpoint(ckpt, tb);
  const std::string base = (ckpt.parent_path() / ckpt.stem()).string();

  const fs::path loss_path(base + ".loss.csv");
  std::ofstream loss(loss_path);
  if (!loss) throw IoError("cannot write loss trace: " + loss_path.string());
  loss << "phase,epoch,loss_per_a,loss_per_b,loss_rec\n";
  for (std::size_t e = 0; e < tb.traces.per_a.size(); ++e)
    loss << "probe," << e + 1 << ',' << fmt_g(tb.traces.per_a[e]) << ','
         << fmt_g(tb.traces.per_b[e]) << ",nan\n";
  for (std::size_t e = 0; e < tb.traces.rec.size(); ++e)
    loss << "ase," << e + 1 << ",nan,nan," << fmt_g(tb.traces.rec[e]) << '\n';
  if (!loss) throw IoError("loss trace write failed: " + loss_path.string());

  KvList kv = config_kv(a.cfg);
  kv.emplace_back("manifest", abs_str(a.manifest));
  write_snapshot(fs::path(base + ".config.txt"), kv);

  std::printf("checkpoint=%s\n", ckpt.string().c_str());
  std::printf("loss_per_a=%s\n", fmt_g(tb.traces.per_a.back()).c_str());
  std::printf("loss_per_b=%s\n", fmt_g(tb.traces.per_b.back()).c_str());
  std::printf("loss_rec=%s\n", fmt_g(tb.traces.rec.back()).c_str());

  int rc = 0;
  const auto check_improved = [&rc](const char* name, const std::vector<float>& t) {
    if (t.back() >= t.front()) {
      std::fprintf(stderr, "fusionboost: train: %s did not improve (first %.9g, final %.9g)\n",
                   name, double(t.front()), double(t.back()));
      rc = 1;
    }
  };
  check_improved("loss_per_a", tb.traces.per_a);
  check_improved("loss_per_b", tb.traces.per_b);
  check_improved("loss_rec", tb.traces.rec);
  return rc;
}

// --- boost ------------------------------------------------------------------

struct BoostArgs {
  std::string ckpt;
  std::string manifest;
  int k = -1;  // -1: use the checkpoint's k
  std::string format = "pgm";
  bool force = false;
  std::string out;
};

int cmd_boost(const BoostArgs& a) {
  const TrainedBooster tb = load_checkpoint(a.ckpt);  // abort before any output
  const int k = a.k >= 0 ? a.k : tb.cfg.k;
  const PairManifest man = PairManifest::load(a.manifest);
  require(!man.entries.empty(), "boost: empty manifest: " + a.manifest);

  const fs::path dir(a.out);
  ensure_out_dir(dir, a.force);
  PairManifest out_man;
  std::vector<std::pair<std::string, double>> timing;
  double total = 0;
  for (const PairEntry& entry : man.entries) {
    require(entry.fused.has_value(), "boost: pair '" + entry.id + "' has no fused image");
    const GrayImage src_a = load_image(entry.a);
    const GrayImage src_b = load_image(entry.b);
    const GrayImage fused = load_image(*entry.fused);
    require(src_a.h == fused.h && src_a.w == fused.w && src_b.h == fused.h &&
                src_b.w == fused.w,
            "boost: pair '" + entry.id + "' has mismatched dimensions");

    const auto t0 = std::chrono::steady_clock::now();
    const GrayImage boosted =
        boost_image(tb.probe_a, tb.probe_b, tb.ase, fused, src_a, src_b, k);
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    PairEntry e = entry;
    e.fused = dir / (e.id + "_boosted." + a.format);
    save_image(boosted, *e.fused);
    out_man.entries.push_back(std::move(e));
    timing.emplace_back(entry.id, dt);
    total += dt;
  }
  out_man.save(dir / "manifest.tsv");

  const fs::path timing_path = dir / "timing.csv";
  std::ofstream tcsv(timing_path);
  if (!tcsv) throw IoError("cannot write timing report: " + timing_path.string());
  tcsv << "id,seconds\n";
  for (const auto& [id, secs] : timing) tcsv << id << ',' << fmt_g(secs) << '\n';
  tcsv << "total," << fmt_g(total) << '\n';
  if (!tcsv) throw IoError("timing report write failed: " + timing_path.string());

  write_snapshot(dir / "config.txt", {{"ckpt", abs_str(a.ckpt)},
                                      {"manifest", abs_str(a.manifest)},
                                      {"k", std::to_string(k)},
                                      {"format", a.format}});
  std::printf("boosted %zu pairs to %s\n", out_man.entries.size(), dir.string().c_str());
  std::printf("added_seconds=%+.2f\n", total);
  return 0;
}

// --- eval -------------------------------------------------------------------

struct EvalArgs {
  std::string manifest;
  std::string fused;
  std::string boosted;
  bool force = false;
  std::string out;
};

int cmd_eval(const EvalArgs& a) {
  const PairManifest man = PairManifest::load(a.manifest);
  require(!man.entries.empty(), "eval: empty manifest: " + a.manifest);
  const MetricReport fused_rep = score_dir(man, fs::path(a.fused));
  std::optional<MetricReport> boosted_rep;
  if (!a.boosted.empty()) boosted_rep = score_dir(man, fs::path(a.boosted));

  const fs::path dir(a.out);
  ensure_out_dir(dir, a.force);
  write_csv_file(dir / "fused.csv", fused_rep);

  int failed = 0;
  for (const MetricRow& r : fused_rep.rows) failed += r.failed;

  std::string summary;
  if (!boosted_rep) {
    summary = kv_summary(fused_rep);
  } else {
    for (const MetricRow& r : boosted_rep->rows) failed += r.failed;
    write_csv_file(dir / "boosted.csv", *boosted_rep);

    // Per-pair deltas over the pairs scored in both variants.
    struct Delta {
      std::string id;
      double m[5];
    };
    constexpr const char* kNames[5] = {"en", "sd", "ei", "qabf", "vif"};
    std::vector<Delta> deltas;
    for (std::size_t i = 0; i < man.entries.size(); ++i) {
      const MetricRow& f = fused_rep.rows[i];
      const MetricRow& b = boosted_rep->rows[i];
      if (f.failed || b.failed) continue;
      deltas.push_back({f.id,
                        {b.en - f.en, b.sd - f.sd, b.ei - f.ei, b.qabf - f.qabf,
                         b.vif - f.vif}});
    }
    double mean[5] = {}, improved[5] = {};
    for (const Delta& d : deltas)
      for (int j = 0; j < 5; ++j) {
        mean[j] += d.m[j];
        improved[j] += d.m[j] > 0 ? 1 : 0;
      }
    const double n = double(deltas.size());
    for (int j = 0; j < 5; ++j) {
      mean[j] = n > 0 ? mean[j] / n : std::nan("");
      improved[j] = n > 0 ? improved[j] / n : std::nan("");
    }

    const fs::path delta_path = dir / "delta.csv";
    std::ofstream dcsv(delta_path);
    if (!dcsv) throw IoError("cannot write delta table: " + delta_path.string());
    dcsv << "id,en,sd,ei,qabf,vif\n";
    for (const Delta& d : deltas) {
      dcsv << d.id;
      for (double v : d.m) dcsv << ',' << fmt_g(v);
      dcsv << '\n';
    }
    dcsv << "mean";
    for (double v : mean) dcsv << ',' << fmt_g(v);
    dcsv << "\nfraction_improved";
    for (double v : improved) dcsv << ',' << fmt_g(v);
    dcsv << '\n';
    if (!dcsv) throw IoError("delta table write failed: " + delta_path.string());

    const MetricRow fa = fused_rep.aggregate();
    const MetricRow ba = boosted_rep->aggregate();
    const double fcols[5] = {fa.en, fa.sd, fa.ei, fa.qabf, fa.vif};
    const double bcols[5] = {ba.en, ba.sd, ba.ei, ba.qabf, ba.vif};
    std::ostringstream kv;
    kv << "pairs=" << deltas.size() << '\n';
    for (int j = 0; j < 5; ++j) {
      kv << "fused_" << kNames[j] << '=' << fmt_g(fcols[j]) << '\n';
      kv << "boosted_" << kNames[j] << '=' << fmt_g(bcols[j]) << '\n';
      kv << "delta_" << kNames[j] << '=' << fmt_g(mean[j]) << '\n';
      kv << "improved_" << kNames[j] << '=' << fmt_g(improved[j]) << '\n';
    }
    summary = kv.str();
  }

  write_snapshot(dir / "config.txt",
                 {{"manifest", abs_str(a.manifest)},
                  {"fused", abs_str(a.fused)},
                  {"boosted", a.boosted.empty() ? std::string() : abs_str(a.boosted)}});
  std::fputs(summary.c_str(), stdout);
  if (failed) {
    std::printf("failed=%d\n", failed);
    return 1;
  }
  return 0;
}

// --- ablate -----------------------------------------------------------------

struct AblateArgs {
  std::string mode;
  std::string manifest;
  std::string ckpt;
  std::string backbone = "mean";
  std::string degrade_spec;
  BoosterConfig cfg;
  std::string format = "pgm";
  bool force = false;
  std::string out;
};

int cmd_ablate(const AblateArgs& a) {
  const AblationMode mode = ablation_mode_from_string(a.mode);
  a.cfg.validate();
  const BackboneChoice bc = parse_backbone(a.backbone, false);
  DegradeSpec base;
  if (!a.degrade_spec.empty()) base = parse_degrade(a.degrade_spec);

  const PairManifest man = PairManifest::load(a.manifest);
  const std::vector<FusedTriple> data = load_external_fused(man);

  AblationContext ctx;
  ctx.backbone = bc.kind;
  ctx.pyramid_levels = bc.levels;

  TrainedBooster tb;        // keeps the checkpoint alive for ctx.booster
  AseTrainResult ase_var;   // keeps the mode-c/d module alive
  std::vector<GrayImage> outs;
  switch (mode) {
    case AblationMode::A:
      // Per-pair degrade seeds follow the fuse command so the corrupted
      // re-fusion sees the same noise realization as the baseline.
      for (const FusedTriple& t : data) {
        ctx.degrade = base;
        ctx.degrade.seed = derive_seed(a.cfg.seed, "degrade-" + t.id);
        std::vector<GrayImage> one = ablation_run(mode, {t}, a.cfg, ctx);
        outs.push_back(std::move(one[0]));
      }
      break;
    case AblationMode::B:
      outs = ablation_run(mode, data, a.cfg, ctx);
      break;
    case AblationMode::C:
      ase_var = train_ase_on_sources(data, a.cfg, false);
      ctx.ase_sources = &ase_var.ase;
      outs = ablation_run(mode, data, a.cfg, ctx);
      break;
    case AblationMode::D:
      ase_var = train_ase_on_sources(data, a.cfg, true);
      ctx.ase_enhanced = &ase_var.ase;
      outs = ablation_run(mode, data, a.cfg, ctx);
      break;
    case AblationMode::Full:
      require(!a.ckpt.empty(), "ablate: mode full requires --ckpt");
      tb = load_checkpoint(a.ckpt);
      ctx.booster = &tb;
      outs = ablation_run(mode, data, a.cfg, ctx);
      break;
  }

  const fs::path dir(a.out);
  ensure_out_dir(dir, a.force);
  const std::string suffix = to_string(mode);
  MetricReport rep;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const fs::path path = dir / (data[i].id + "_" + suffix + "." + a.format);
    save_image(outs[i], path);
    MetricRow row;
    row.id = data[i].id;
    try {
      // Score the file round-trip so numbers match a later eval of this dir.
      row = compute_row(data[i].id, data[i].a, data[i].b, load_image(path));
    } catch (const std::exception& ex) {
      row.failed = true;
      row.error = ex.what();
    }
    rep.rows.push_back(std::move(row));
  }
  write_csv_file(dir / "metrics.csv", rep);

  KvList kv = {{"mode", a.mode},
               {"manifest", abs_str(a.manifest)},
               {"ckpt", a.ckpt.empty() ? std::string() : abs_str(a.ckpt)},
               {"backbone", a.backbone},
               {"degrade", a.degrade_spec}};
  for (auto& p : config_kv(a.cfg)) kv.push_back(std::move(p));
  kv.emplace_back("format", a.format);
  write_snapshot(dir / "config.txt", kv);

  std::printf("mode=%s\n", a.mode.c_str());
  std::fputs(kv_summary(rep).c_str(), stdout);
  return rep.any_failed() ? 1 : 0;
}

// --- degradation study ------------------------------------------------------

struct StudyArgs {
  std::string ckpt;
  std::string manifest;
  std::string levels = "0,0.02,0.05,0.1,0.2";
  std::uint64_t seed = 1;
  bool force = false;
  std::string out;
};

int cmd_degradation_study(const StudyArgs& a) {
  const TrainedBooster tb = load_checkpoint(a.ckpt);
  const std::vector<FusedTriple> data = load_external_fused(PairManifest::load(a.manifest));

  const auto fields = split_commas(a.levels);
  require(fields.size() >= 2, "--levels needs at least two comma-separated sigmas");
  std::vector<DegradeSpec> specs;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    DegradeSpec d;
    d.noise_sigma = float(parse_double_str(fields[i], "--levels entry " + std::to_string(i)));
    require(d.noise_sigma >= 0.0f, "--levels sigmas must be >= 0");
    d.seed = derive_seed(a.seed, "level-" + std::to_string(i));
    specs.push_back(d);
  }

  const DegradationReport rep = degradation_study(data, tb.probe_a, tb.probe_b, specs);

  const fs::path dir(a.out);
  ensure_out_dir(dir, a.force);
  const fs::path csv_path = dir / "degradation.csv";
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("cannot write study report: " + csv_path.string());
  csv << "level,noise_sigma,blur_k,contrast,probe_err\n";
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    const DegradationRow& r = rep.rows[i];
    csv << i << ',' << fmt_g(r.spec.noise_sigma) << ',' << r.spec.blur_k << ','
        << fmt_g(r.spec.contrast) << ',' << fmt_g(r.probe_err) << '\n';
  }
  if (!csv) throw IoError("study report write failed: " + csv_path.string());

  write_snapshot(dir / "config.txt", {{"ckpt", abs_str(a.ckpt)},
                                      {"manifest", abs_str(a.manifest)},
                                      {"levels", a.levels},
                                      {"seed", std::to_string(a.seed)}});
  std::printf("spearman=%s\n", fmt_g(rep.spearman).c_str());
  return 0;
}

void add_config_flags(CLI::App* sc, BoosterConfig& cfg) {
  sc->add_option("--k", cfg.k, "Booster-layer window half-size")->capture_default_str();
  sc->add_option("--epochs", cfg.epochs, "Epochs per training phase")->capture_default_str();
  sc->add_option("--batch", cfg.batch, "Patches per optimizer step")->capture_default_str();
  sc->add_option("--lr", cfg.lr, "Adam learning rate")->capture_default_str();
  sc->add_option("--patch", cfg.patch, "Square training crop edge")->capture_default_str();
  sc->add_option("--patches-per-pair", cfg.patches_per_pair, "Crops drawn per pair per epoch")
      ->capture_default_str();
  sc->add_option("--seed", cfg.seed, "Master seed")->capture_default_str();
  sc->add_option("--beta1", cfg.beta1, "Adam beta1")->capture_default_str();
  sc->add_option("--beta2", cfg.beta2, "Adam beta2")->capture_default_str();
  sc->add_option("--eps", cfg.eps, "Adam epsilon")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FusionBooster pipeline: synthesize, fuse, train, boost, evaluate"};
  app.name("fusionboost");
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("fusionboost ") + FB_TOOL_VERSION);

  std::string config_file;  // shared sink; only the chosen subcommand parses
  const auto configure = [&config_file](CLI::App* sc) {
    sc->add_option("--config", config_file, "Flat key=value config file; explicit flags win");
  };

  int rc = 0;

  SynthArgs sy;
  CLI::App* sc_synth = app.add_subcommand("synth", "Generate a synthetic pair dataset");
  configure(sc_synth);
  sc_synth->add_option("--scenario", sy.scenario, "Scene family")
      ->capture_default_str()
      ->check(CLI::IsMember({"exposure", "focus", "modality"}));
  sc_synth->add_option("--pairs", sy.pairs, "Number of pairs")->capture_default_str();
  sc_synth->add_option("--size", sy.size, "Image size HxW")->capture_default_str();
  sc_synth->add_option("--seed", sy.seed, "Master seed")->capture_default_str();
  sc_synth->add_option("--format", sy.format, "Image format")
      ->capture_default_str()
      ->check(CLI::IsMember({"pgm", "png"}));
  sc_synth->add_flag("--force", sy.force, "Write into a non-empty directory");
  sc_synth->add_option("--out", sy.out, "Output directory")->required();
  sc_synth->callback([&] { rc = cmd_synth(sy); });

  FuseArgs fu;
  CLI::App* sc_fuse = app.add_subcommand("fuse", "Run a fusion backbone over a dataset");
  configure(sc_fuse);
  sc_fuse->add_option("--manifest", fu.manifest, "Pair manifest")->required();
  sc_fuse->add_option("--backbone", fu.backbone, "mean | max | pyramid[:levels] | external")
      ->capture_default_str();
  sc_fuse->add_option("--degrade", fu.degrade_spec,
                      "Corrupt the fused output: \"sigma,blur,contrast\"");
  sc_fuse->add_option("--seed", fu.seed, "Master seed")->capture_default_str();
  sc_fuse->add_option("--format", fu.format, "Image format")
      ->capture_default_str()
      ->check(CLI::IsMember({"pgm", "png"}));
  sc_fuse->add_flag("--force", fu.force, "Write into a non-empty directory");
  sc_fuse->add_option("--out", fu.out, "Output directory")->required();
  sc_fuse->callback([&] { rc = cmd_fuse(fu); });

  TrainArgs tr;
  CLI::App* sc_train = app.add_subcommand("train", "Train the booster on fused pairs");
  configure(sc_train);
  sc_train->add_option("--manifest", tr.manifest, "Manifest with fused images")->required();
  add_config_flags(sc_train, tr.cfg);
  sc_train->add_option("--out", tr.out, "Checkpoint path")->required();
  sc_train->callback([&] { rc = cmd_train(tr); });

  BoostArgs bo;
  CLI::App* sc_boost = app.add_subcommand("boost", "Boost fused images with a checkpoint");
  configure(sc_boost);
  sc_boost->add_option("--ckpt", bo.ckpt, "Trained checkpoint")->required();
  sc_boost->add_option("--manifest", bo.manifest, "Manifest with fused images")->required();
  sc_boost->add_option("--k", bo.k, "Override the checkpoint's booster-layer k");
  sc_boost->add_option("--format", bo.format, "Image format")
      ->capture_default_str()
      ->check(CLI::IsMember({"pgm", "png"}));
  sc_boost->add_flag("--force", bo.force, "Write into a non-empty directory");
  sc_boost->add_option("--out", bo.out, "Output directory")->required();
  sc_boost->callback([&] { rc = cmd_boost(bo); });

  EvalArgs ev;
  CLI::App* sc_eval = app.add_subcommand("eval", "Score fused (and boosted) images");
  configure(sc_eval);
  sc_eval->add_option("--manifest", ev.manifest, "Pair manifest for the sources")->required();
  sc_eval->add_option("--fused", ev.fused, "Directory of fused images")->required();
  sc_eval->add_option("--boosted", ev.boosted, "Directory of boosted images");
  sc_eval->add_flag("--force", ev.force, "Write into a non-empty directory");
  sc_eval->add_option("--out", ev.out, "Output directory")->required();
  sc_eval->callback([&] { rc = cmd_eval(ev); });

  AblateArgs ab;
  CLI::App* sc_ablate = app.add_subcommand("ablate", "Run one ablation variant");
  configure(sc_ablate);
  sc_ablate->add_option("--mode", ab.mode, "a | b | c | d | full")->required();
  sc_ablate->add_option("--manifest", ab.manifest, "Manifest with fused images")->required();
  sc_ablate->add_option("--ckpt", ab.ckpt, "Trained checkpoint (mode full)");
  sc_ablate->add_option("--backbone", ab.backbone, "Backbone re-run in mode a")
      ->capture_default_str();
  sc_ablate->add_option("--degrade", ab.degrade_spec,
                        "Degradation matching the baseline (mode a)");
  add_config_flags(sc_ablate, ab.cfg);
  sc_ablate->add_option("--format", ab.format, "Image format")
      ->capture_default_str()
      ->check(CLI::IsMember({"pgm", "png"}));
  sc_ablate->add_flag("--force", ab.force, "Write into a non-empty directory");
  sc_ablate->add_option("--out", ab.out, "Output directory")->required();
  sc_ablate->callback([&] { rc = cmd_ablate(ab); });

  StudyArgs st;
  CLI::App* sc_study =
      app.add_subcommand("degradation-study", "Probe error across corruption levels");
  configure(sc_study);
  sc_study->add_option("--ckpt", st.ckpt, "Trained checkpoint")->required();
  sc_study->add_option("--manifest", st.manifest, "Manifest with fused images")->required();
  sc_study->add_option("--levels", st.levels, "Comma-separated noise sigmas")
      ->capture_default_str();
  sc_study->add_option("--seed", st.seed, "Master seed")->capture_default_str();
  sc_study->add_flag("--force", st.force, "Write into a non-empty directory");
  sc_study->add_option("--out", st.out, "Output directory")->required();
  sc_study->callback([&] { rc = cmd_degradation_study(st); });

  for (CLI::App* sc : {sc_synth, sc_fuse, sc_train, sc_boost, sc_eval, sc_ablate, sc_study})
    for (CLI::Option* op : sc->get_options())
      op->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config_args(app, std::move(args));
    std::reverse(args.begin(), args.end());
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "fusionboost: %s\n", e.what());
    return 1;
  }
  return rc;
}
