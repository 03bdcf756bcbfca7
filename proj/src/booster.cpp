#include "fusionboost/booster.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

namespace fb {
namespace {

constexpr int kBodyChannels[] = {16, 32, 16};

ConvNet make_net(int in_channels, Rng& rng) {
  ConvNet net;
  int c = in_channels;
  for (int out : kBodyChannels) {
    net.layers.push_back(make_conv(c, out, rng));
    net.acts.push_back(Act::LeakyRelu);
    c = out;
  }
  net.layers.push_back(make_conv(c, 1, rng));
  net.acts.push_back(Act::Sigmoid);
  return net;
}

void check_triples(const std::vector<FusedTriple>& data, int patch) {
  require(!data.empty(), "training dataset is empty");
  for (const FusedTriple& t : data) {
    require(t.a.h == t.fused.h && t.a.w == t.fused.w && t.b.h == t.fused.h &&
                t.b.w == t.fused.w,
            "training pair '" + t.id + "': image dimensions differ");
    require(std::min(t.fused.h, t.fused.w) >= patch,
            "training pair '" + t.id + "': smaller than the training patch");
  }
}

struct PatchRef {
  int pair, y, x;
};

// Every epoch draws fresh crop offsets for each pair, then shuffles the flat
// list; both steps come from one per-epoch stream of the run seed.
std::vector<PatchRef> epoch_patches(const std::vector<FusedTriple>& data,
                                    const BoosterConfig& cfg, Rng& rng) {
  std::vector<PatchRef> refs;
  refs.reserve(data.size() * cfg.patches_per_pair);
  for (int i = 0; i < int(data.size()); ++i) {
    const auto offs = sample_patch_offsets(data[i].fused.h, data[i].fused.w, cfg.patch,
                                           cfg.patches_per_pair, rng);
    for (auto [y, x] : offs) refs.push_back({i, y, x});
  }
  shuffle(refs, rng);
  return refs;
}

void fill_plane(Tensor4& dst, int n, int c, const GrayImage& img, int y0, int x0) {
  float* p = dst.plane(n, c);
  for (int y = 0; y < dst.h; ++y)
    std::memcpy(p + std::int64_t(y) * dst.w, img.row(y0 + y) + x0, sizeof(float) * dst.w);
}

// One Adam state per parameter block, weights then bias per layer.
std::vector<AdamState> make_opt_states(const ConvNet& net) {
  return std::vector<AdamState>(net.layers.size() * 2);
}

void apply_grads(ConvNet& net, const NetGradsT<float>& grads, std::vector<AdamState>& states,
                 const AdamConfig& opt) {
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    adam_step(net.layers[i].weight.data, grads.weight[i].data, states[2 * i], opt);
    adam_step(net.layers[i].bias, grads.bias[i], states[2 * i + 1], opt);
  }
}

void check_loss(float loss, const char* phase, int epoch, int batch) {
  if (!std::isfinite(loss))
    throw std::runtime_error(std::string("non-finite loss in ") + phase + " at epoch " +
                             std::to_string(epoch) + ", batch " + std::to_string(batch));
}

GrayImage run_net(const ConvNet& net, const Tensor4& x) {
  return tensor_to_image(net_forward(net, x));
}

}  // namespace

void BoosterConfig::validate() const {
  require(k >= 0, "BoosterConfig: k must be >= 0");
  require(epochs >= 1 && batch >= 1 && patch >= 1 && patches_per_pair >= 1,
          "BoosterConfig: epochs, batch, patch and patches_per_pair must be >= 1");
  require(std::isfinite(lr) && lr > 0, "BoosterConfig: lr must be positive");
  require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1,
          "BoosterConfig: betas must lie in [0, 1)");
  require(eps > 0, "BoosterConfig: eps must be positive");
}

ProbeUnit make_probe_unit(Rng& rng) { return ProbeUnit{make_net(1, rng)}; }
AseModule make_ase_module(Rng& rng) { return AseModule{make_net(2, rng)}; }

Tensor4 image_to_tensor(const GrayImage& img) {
  Tensor4 t(1, 1, img.h, img.w);
  std::memcpy(t.data.data(), img.data.data(), sizeof(float) * img.size());
  return t;
}

GrayImage tensor_to_image(const Tensor4& t, int n, int c) {
  require(n >= 0 && n < t.n && c >= 0 && c < t.c, "tensor_to_image: plane out of range");
  GrayImage img(t.h, t.w);
  std::memcpy(img.data.data(), t.plane(n, c), sizeof(float) * img.size());
  return img;
}

std::pair<GrayImage, GrayImage> probe_forward(const ProbeUnit& probe_a,
                                              const ProbeUnit& probe_b,
                                              const GrayImage& fused) {
  const Tensor4 x = image_to_tensor(fused);
  return {run_net(probe_a.net, x), run_net(probe_b.net, x)};
}

GrayImage ase_forward(const AseModule& ase, const GrayImage& part_a, const GrayImage& part_b) {
  require(part_a.h == part_b.h && part_a.w == part_b.w,
          "ase_forward: component dimensions differ");
  Tensor4 x(1, 2, part_a.h, part_a.w);
  fill_plane(x, 0, 0, part_a, 0, 0);
  fill_plane(x, 0, 1, part_b, 0, 0);
  return run_net(ase.net, x);
}

GrayImage booster_layer(const GrayImage& part, const GrayImage& source, int k) {
  require(part.h == source.h && part.w == source.w, "booster_layer: dimensions differ");
  require(k >= 0, "booster_layer: k must be >= 0");
  const GrayImage base = average_filter(part, k);
  GrayImage out(source.h, source.w);
  for (std::int64_t i = 0; i < out.size(); ++i)
    out.data[i] = std::clamp(source.data[i] + (part.data[i] - base.data[i]), 0.0f, 1.0f);
  return out;
}

float LossTraces::total() const {
  require(!per_a.empty() && !per_b.empty() && !rec.empty(),
          "LossTraces::total: both phases must have run");
  return per_a.back() + per_b.back() + rec.back();
}

ProbeTrainResult train_probe(const std::vector<FusedTriple>& data, const BoosterConfig& cfg) {
  cfg.validate();
  check_triples(data, cfg.patch);

  Rng init_a(derive_seed(cfg.seed, "probe-a"));
  Rng init_b(derive_seed(cfg.seed, "probe-b"));
  ProbeTrainResult res{make_probe_unit(init_a), make_probe_unit(init_b), {}, {}};
  auto states_a = make_opt_states(res.probe_a.net);
  auto states_b = make_opt_states(res.probe_b.net);
  const AdamConfig opt = cfg.adam();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, "probe-epoch-" + std::to_string(epoch)));
    const auto refs = epoch_patches(data, cfg, rng);
    double sum_a = 0, sum_b = 0;
    int batches = 0;
    for (std::size_t start = 0; start < refs.size(); start += cfg.batch) {
      const int n = int(std::min<std::size_t>(cfg.batch, refs.size() - start));
      Tensor4 fused(n, 1, cfg.patch, cfg.patch);
      Tensor4 src_a(n, 1, cfg.patch, cfg.patch);
      Tensor4 src_b(n, 1, cfg.patch, cfg.patch);
      for (int j = 0; j < n; ++j) {
        const PatchRef& r = refs[start + j];
        fill_plane(fused, j, 0, data[r.pair].fused, r.y, r.x);
        fill_plane(src_a, j, 0, data[r.pair].a, r.y, r.x);
        fill_plane(src_b, j, 0, data[r.pair].b, r.y, r.x);
      }

      const auto cache_a = net_forward_cached(res.probe_a.net, fused);
      const auto l1_a = l1_loss(cache_a.post.back(), src_a);
      check_loss(l1_a.loss, "probe phase", epoch, batches);
      apply_grads(res.probe_a.net, net_backward(res.probe_a.net, cache_a, l1_a.grad),
                  states_a, opt);

      const auto cache_b = net_forward_cached(res.probe_b.net, fused);
      const auto l1_b = l1_loss(cache_b.post.back(), src_b);
      check_loss(l1_b.loss, "probe phase", epoch, batches);
      apply_grads(res.probe_b.net, net_backward(res.probe_b.net, cache_b, l1_b.grad),
                  states_b, opt);

      sum_a += l1_a.loss;
      sum_b += l1_b.loss;
      ++batches;
    }
    res.loss_per_a.push_back(float(sum_a / batches));
    res.loss_per_b.push_back(float(sum_b / batches));
  }
  return res;
}

namespace {

// Shared phase-two trainer. The two input channels are either the probe
// outputs on the fused crop (probes != nullptr) or crops of per-pair channel
// images; the target is always the fused crop.
AseTrainResult train_ase_core(const std::vector<FusedTriple>& data, const BoosterConfig& cfg,
                              const ProbeUnit* probe_a, const ProbeUnit* probe_b,
                              const std::vector<GrayImage>* chan_a,
                              const std::vector<GrayImage>* chan_b) {
  cfg.validate();
  check_triples(data, cfg.patch);

  Rng init(derive_seed(cfg.seed, "ase"));
  AseTrainResult res{make_ase_module(init), {}};
  auto states = make_opt_states(res.ase.net);
  const AdamConfig opt = cfg.adam();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, "ase-epoch-" + std::to_string(epoch)));
    const auto refs = epoch_patches(data, cfg, rng);
    double sum = 0;
    int batches = 0;
    for (std::size_t start = 0; start < refs.size(); start += cfg.batch) {
      const int n = int(std::min<std::size_t>(cfg.batch, refs.size() - start));
      Tensor4 fused(n, 1, cfg.patch, cfg.patch);
      Tensor4 input(n, 2, cfg.patch, cfg.patch);
      for (int j = 0; j < n; ++j) {
        const PatchRef& r = refs[start + j];
        fill_plane(fused, j, 0, data[r.pair].fused, r.y, r.x);
        if (chan_a != nullptr) {
          fill_plane(input, j, 0, (*chan_a)[r.pair], r.y, r.x);
          fill_plane(input, j, 1, (*chan_b)[r.pair], r.y, r.x);
        }
      }
      if (probe_a != nullptr) {
        // Read-only passes; the fused batch already has probe input shape.
        const Tensor4 out_a = net_forward(probe_a->net, fused);
        const Tensor4 out_b = net_forward(probe_b->net, fused);
        for (int j = 0; j < n; ++j) {
          std::memcpy(input.plane(j, 0), out_a.plane(j, 0),
                      sizeof(float) * cfg.patch * cfg.patch);
          std::memcpy(input.plane(j, 1), out_b.plane(j, 0),
                      sizeof(float) * cfg.patch * cfg.patch);
        }
      }

      const auto cache = net_forward_cached(res.ase.net, input);
      const auto l1 = l1_loss(cache.post.back(), fused);
      check_loss(l1.loss, "assembling phase", epoch, batches);
      apply_grads(res.ase.net, net_backward(res.ase.net, cache, l1.grad), states, opt);

      sum += l1.loss;
      ++batches;
    }
    res.loss_rec.push_back(float(sum / batches));
  }
  return res;
}

}  // namespace

AseTrainResult train_ase(const std::vector<FusedTriple>& data, const ProbeUnit& probe_a,
                         const ProbeUnit& probe_b, const BoosterConfig& cfg) {
  return train_ase_core(data, cfg, &probe_a, &probe_b, nullptr, nullptr);
}

AseTrainResult train_ase_on_sources(const std::vector<FusedTriple>& data,
                                    const BoosterConfig& cfg, bool enhanced) {
  cfg.validate();
  std::vector<GrayImage> chan_a, chan_b;
  chan_a.reserve(data.size());
  chan_b.reserve(data.size());
  for (const FusedTriple& t : data) {
    chan_a.push_back(enhanced ? enhance_renorm(t.a, cfg.k) : t.a);
    chan_b.push_back(enhanced ? enhance_renorm(t.b, cfg.k) : t.b);
  }
  return train_ase_core(data, cfg, nullptr, nullptr, &chan_a, &chan_b);
}

TrainedBooster train_booster(const std::vector<FusedTriple>& data, const BoosterConfig& cfg) {
  ProbeTrainResult probes = train_probe(data, cfg);
  AseTrainResult ase = train_ase(data, probes.probe_a, probes.probe_b, cfg);
  TrainedBooster tb;
  tb.probe_a = std::move(probes.probe_a);
  tb.probe_b = std::move(probes.probe_b);
  tb.ase = std::move(ase.ase);
  tb.cfg = cfg;
  tb.traces = LossTraces{std::move(probes.loss_per_a), std::move(probes.loss_per_b),
                         std::move(ase.loss_rec)};
  return tb;
}

GrayImage boost_image(const ProbeUnit& probe_a, const ProbeUnit& probe_b, const AseModule& ase,
                      const GrayImage& fused, const GrayImage& a, const GrayImage& b, int k) {
  require(a.h == fused.h && a.w == fused.w && b.h == fused.h && b.w == fused.w,
          "boost_image: dimensions differ");
  const auto [part_a, part_b] = probe_forward(probe_a, probe_b, fused);
  return ase_forward(ase, booster_layer(part_a, a, k), booster_layer(part_b, b, k));
}

GrayImage boost_image(const TrainedBooster& tb, const GrayImage& fused, const GrayImage& a,
                      const GrayImage& b) {
  return boost_image(tb.probe_a, tb.probe_b, tb.ase, fused, a, b, tb.cfg.k);
}

std::uint64_t param_checksum(const ConvNet& net) {
  std::uint64_t h = 1469598103934665603ULL;
  const auto mix = [&h](const float* p, std::size_t count) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < count * sizeof(float); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const ConvLayer& layer : net.layers) {
    mix(layer.weight.data.data(), layer.weight.data.size());
    mix(layer.bias.data(), layer.bias.size());
  }
  return h;
}

double probe_reconstruction_error(const ProbeUnit& probe_a, const ProbeUnit& probe_b,
                                  const std::vector<FusedTriple>& data) {
  require(!data.empty(), "probe_reconstruction_error: empty dataset");
  double acc = 0;
  for (const FusedTriple& t : data) {
    const auto [pa, pb] = probe_forward(probe_a, probe_b, t.fused);
    acc += 0.5 * (mean_abs_diff(pa, t.a) + mean_abs_diff(pb, t.b));
  }
  return acc / double(data.size());
}

double ase_reconstruction_error(const ProbeUnit& probe_a, const ProbeUnit& probe_b,
                                const AseModule& ase, const std::vector<FusedTriple>& data) {
  require(!data.empty(), "ase_reconstruction_error: empty dataset");
  double acc = 0;
  for (const FusedTriple& t : data) {
    const auto [pa, pb] = probe_forward(probe_a, probe_b, t.fused);
    acc += mean_abs_diff(ase_forward(ase, pa, pb), t.fused);
  }
  return acc / double(data.size());
}

// --- Ablation variants ------------------------------------------------------

AblationMode ablation_mode_from_string(const std::string& name) {
  if (name == "a") return AblationMode::A;
  if (name == "b") return AblationMode::B;
  if (name == "c") return AblationMode::C;
  if (name == "d") return AblationMode::D;
  if (name == "full") return AblationMode::Full;
  throw ContractError("unknown ablation mode '" + name + "' (expected a, b, c, d or full)");
}

std::string to_string(AblationMode m) {
  switch (m) {
    case AblationMode::A: return "a";
    case AblationMode::B: return "b";
    case AblationMode::C: return "c";
    case AblationMode::D: return "d";
    case AblationMode::Full: return "full";
  }
  throw ContractError("invalid ablation mode value");
}

GrayImage enhance_renorm(const GrayImage& img, int k) {
  const GrayImage base = average_filter(img, k);
  float m = 0.0f;
  for (std::int64_t i = 0; i < img.size(); ++i)
    m = std::max(m, std::abs(img.data[i] - base.data[i]));
  if (m == 0.0f) return img;

  // x + detail == base + 2*detail with base in [0, 1] and |detail| <= m, so the
  // sharpened values always fit in [-2m, 1 + 2m]; map that interval onto [0, 1].
  GrayImage out(img.h, img.w);
  const float scale = 1.0f / (1.0f + 4.0f * m);
  for (std::int64_t i = 0; i < out.size(); ++i) {
    const float sharp = 2.0f * img.data[i] - base.data[i];
    out.data[i] = std::clamp((sharp + 2.0f * m) * scale, 0.0f, 1.0f);
  }
  return out;
}

std::vector<GrayImage> ablation_run(AblationMode mode, const std::vector<FusedTriple>& data,
                                    const BoosterConfig& cfg, const AblationContext& ctx) {
  cfg.validate();
  require(!data.empty(), "ablation_run: empty dataset");
  if (mode == AblationMode::Full)
    require(ctx.booster != nullptr, "ablation_run: mode full needs a trained booster");
  if (mode == AblationMode::C)
    require(ctx.ase_sources != nullptr,
            "ablation_run: mode c needs an ASE trained on the raw sources");
  if (mode == AblationMode::D)
    require(ctx.ase_enhanced != nullptr,
            "ablation_run: mode d needs an ASE trained on the sharpened sources");

  std::vector<GrayImage> out;
  out.reserve(data.size());
  for (const FusedTriple& t : data) {
    switch (mode) {
      case AblationMode::A:
        out.push_back(degrade(
            fuse(ctx.backbone, enhance_renorm(t.a, cfg.k), enhance_renorm(t.b, cfg.k),
                 ctx.pyramid_levels),
            ctx.degrade));
        break;
      case AblationMode::B:
        out.push_back(enhance_renorm(t.fused, cfg.k));
        break;
      case AblationMode::C:
        out.push_back(ase_forward(*ctx.ase_sources, t.a, t.b));
        break;
      case AblationMode::D:
        out.push_back(ase_forward(*ctx.ase_enhanced, enhance_renorm(t.a, cfg.k),
                                  enhance_renorm(t.b, cfg.k)));
        break;
      case AblationMode::Full:
        out.push_back(boost_image(*ctx.booster, t.fused, t.a, t.b));
        break;
    }
  }
  return out;
}

// --- Degradation study ------------------------------------------------------

double spearman_correlation(const std::vector<double>& xs, const std::vector<double>& ys) {
  require(xs.size() == ys.size(), "spearman_correlation: length mismatch");
  require(xs.size() >= 2, "spearman_correlation: need at least two points");
  const auto ranks = [](const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&v](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = 0.5 * (double(i) + double(j)) + 1.0;  // ties share the mean rank
      for (std::size_t t = i; t <= j; ++t) r[order[t]] = avg;
      i = j + 1;
    }
    return r;
  };
  const std::vector<double> rx = ranks(xs), ry = ranks(ys);
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= double(rx.size());
  my /= double(ry.size());
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0;  // a constant variable has no rank trend
  return sxy / std::sqrt(sxx * syy);
}

DegradationReport degradation_study(const std::vector<FusedTriple>& data,
                                    const ProbeUnit& probe_a, const ProbeUnit& probe_b,
                                    const std::vector<DegradeSpec>& levels) {
  require(!data.empty(), "degradation_study: empty dataset");
  require(!levels.empty(), "degradation_study: no severity levels");
  DegradationReport report;
  std::vector<double> sigmas, errs;
  for (const DegradeSpec& spec : levels) {
    std::vector<FusedTriple> corrupted = data;
    for (FusedTriple& t : corrupted) t.fused = degrade(t.fused, spec);
    const double err = probe_reconstruction_error(probe_a, probe_b, corrupted);
    report.rows.push_back({spec, err});
    sigmas.push_back(spec.noise_sigma);
    errs.push_back(err);
  }
  report.spearman =
      levels.size() >= 2 ? spearman_correlation(sigmas, errs) : 0.0;
  return report;
}

}  // namespace fb
