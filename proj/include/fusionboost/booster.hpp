#pragma once
#include <filesystem>
#include <utility>
#include <vector>

#include "fusionboost/backbones.hpp"
#include "fusionboost/image.hpp"
#include "fusionboost/tensor.hpp"

namespace fb {

// One half of the information probe: a small autoencoder that reconstructs an
// estimate of one source image from the fused image. The two units share the
// architecture (1->16->32->16->1, leaky-relu body, sigmoid head) but never
// their parameters.
struct ProbeUnit {
  ConvNet net;
};

// Assembling module: recombines the two probe components, presented as a
// two-channel input, into one fused image (2->16->32->16->1).
struct AseModule {
  ConvNet net;
};

ProbeUnit make_probe_unit(Rng& rng);
AseModule make_ase_module(Rng& rng);

struct BoosterConfig {
  int k = 3;                 // booster-layer window half-size
  int epochs = 10;
  int batch = 2;
  float lr = 1e-4f;
  int patch = 128;           // square training crop edge
  int patches_per_pair = 8;  // crops drawn from each pair per epoch
  std::uint64_t seed = 1;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;

  AdamConfig adam() const { return AdamConfig{lr, beta1, beta2, eps}; }
  void validate() const;
};

Tensor4 image_to_tensor(const GrayImage& img);
GrayImage tensor_to_image(const Tensor4& t, int n = 0, int c = 0);

// Evaluates both probe units independently on the fused image.
std::pair<GrayImage, GrayImage> probe_forward(const ProbeUnit& probe_a,
                                              const ProbeUnit& probe_b,
                                              const GrayImage& fused);

GrayImage ase_forward(const AseModule& ase, const GrayImage& part_a, const GrayImage& part_b);

// Swaps a component's base layer for the clean source while keeping its
// detail layer: clamp(source + (part - average_filter(part, k))). k = 0 (or a
// constant part) returns the source bit-for-bit.
GrayImage booster_layer(const GrayImage& part, const GrayImage& source, int k);

// Per-epoch mean batch losses recorded during the two training phases.
struct LossTraces {
  std::vector<float> per_a, per_b;  // probe phase, one entry per epoch
  std::vector<float> rec;           // assembling phase

  // Final-epoch perception + reconstruction loss.
  float total() const;
};

struct ProbeTrainResult {
  ProbeUnit probe_a, probe_b;
  std::vector<float> loss_per_a, loss_per_b;
};

struct AseTrainResult {
  AseModule ase;
  std::vector<float> loss_rec;
};

// Phase one: trains both probe units against their source images with L1 on
// seeded square crops of the fused image. Throws on an empty dataset,
// mismatched dimensions, images smaller than cfg.patch, or a non-finite loss.
ProbeTrainResult train_probe(const std::vector<FusedTriple>& data, const BoosterConfig& cfg);

// Phase two: trains the assembling module to reproduce the fused image from
// the probe components; the probes are read-only throughout.
AseTrainResult train_ase(const std::vector<FusedTriple>& data, const ProbeUnit& probe_a,
                         const ProbeUnit& probe_b, const BoosterConfig& cfg);

// Assembling-module variants for the ablation studies: the two input channels
// are the raw sources, or the sharpened sources (enhance_renorm with cfg.k),
// instead of the probe components. Same target, schedule and initialization.
AseTrainResult train_ase_on_sources(const std::vector<FusedTriple>& data,
                                    const BoosterConfig& cfg, bool enhanced);

struct TrainedBooster {
  ProbeUnit probe_a, probe_b;
  AseModule ase;
  BoosterConfig cfg;
  LossTraces traces;
};

// Both phases in sequence under one config.
TrainedBooster train_booster(const std::vector<FusedTriple>& data, const BoosterConfig& cfg);

// Full test-time pipeline: probe the fused image, pass each component through
// the booster layer against its clean source, and reassemble.
GrayImage boost_image(const ProbeUnit& probe_a, const ProbeUnit& probe_b, const AseModule& ase,
                      const GrayImage& fused, const GrayImage& a, const GrayImage& b, int k);
GrayImage boost_image(const TrainedBooster& tb, const GrayImage& fused, const GrayImage& a,
                      const GrayImage& b);

// FNV-1a over the raw parameter bytes, layer order, weights before bias.
std::uint64_t param_checksum(const ConvNet& net);

// Mean L1 of the probe reconstructions against the true sources, averaged
// over pairs and over the two units.
double probe_reconstruction_error(const ProbeUnit& probe_a, const ProbeUnit& probe_b,
                                  const std::vector<FusedTriple>& data);

// Mean L1 between ASE(probe components) and the fused image over the dataset.
double ase_reconstruction_error(const ProbeUnit& probe_a, const ProbeUnit& probe_b,
                                const AseModule& ase, const std::vector<FusedTriple>& data);

// --- Checkpoints ------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary container: "FBST" magic, version, named rank-4 parameter blocks for
// probe_a/probe_b/ase, a key=value trailer holding the config and the loss
// traces, and a trailing byte-sum checksum. Written atomically.
void save_checkpoint(const std::filesystem::path& path, const TrainedBooster& tb);
TrainedBooster load_checkpoint(const std::filesystem::path& path);

// --- Ablation variants ------------------------------------------------------

enum class AblationMode { A, B, C, D, Full };

AblationMode ablation_mode_from_string(const std::string& name);
std::string to_string(AblationMode m);

// Unsharp enhancement with worst-case renormalization: y = x + detail(x, k)
// followed by the affine map [-2m, 1 + 2m] -> [0, 1] with m = max |detail|,
// the tight output bound for y = base + 2*detail. The identity when the detail
// layer vanishes (so k = 0 and constant images pass through unchanged);
// otherwise compresses contrast by the sharpening amplitude.
GrayImage enhance_renorm(const GrayImage& img, int k);

struct AblationContext {
  Backbone backbone = Backbone::Mean;
  int pyramid_levels = 3;
  DegradeSpec degrade;  // applied to re-fused outputs in mode a
  const TrainedBooster* booster = nullptr;  // mode full
  const AseModule* ase_sources = nullptr;   // mode c: trained on raw sources
  const AseModule* ase_enhanced = nullptr;  // mode d: trained on sharpened sources
};

// Per-pair outputs of one ablation variant:
//   a:    backbone re-run on sharpened inputs (degraded like the baseline)
//   b:    sharpened baseline fusion
//   c:    ASE over the raw sources
//   d:    ASE over the sharpened sources
//   full: the boost pipeline
std::vector<GrayImage> ablation_run(AblationMode mode, const std::vector<FusedTriple>& data,
                                    const BoosterConfig& cfg, const AblationContext& ctx);

// --- Degradation study ------------------------------------------------------

struct DegradationRow {
  DegradeSpec spec;
  double probe_err;  // mean probe reconstruction error at this severity
};

struct DegradationReport {
  std::vector<DegradationRow> rows;               // one per severity level
  double spearman;                                // noise_sigma vs probe_err
};

// Spearman rank correlation with average ranks for ties.
double spearman_correlation(const std::vector<double>& xs, const std::vector<double>& ys);

// Degrades each pair's fused image at every severity level and measures how
// probe reconstruction error tracks the corruption.
DegradationReport degradation_study(const std::vector<FusedTriple>& data,
                                    const ProbeUnit& probe_a, const ProbeUnit& probe_b,
                                    const std::vector<DegradeSpec>& levels);

}  // namespace fb
