#pragma once
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fusionboost/errors.hpp"
#include "fusionboost/rng.hpp"

namespace fb {

// Single-channel raster, row-major, values in [0, 1] for images. Detail layers
// reuse the struct but are signed and exempt from the range invariant.
struct GrayImage {
  int h = 0, w = 0;
  std::vector<float> data;

  GrayImage() = default;
  GrayImage(int h_, int w_) : h(h_), w(w_) {
    require(h_ > 0 && w_ > 0, "GrayImage: dims must be positive");
    data.assign(std::size_t(h_) * w_, 0.0f);
  }

  std::int64_t size() const { return std::int64_t(h) * w; }
  float& at(int y, int x) { return data[std::size_t(y) * w + x]; }
  float at(int y, int x) const { return data[std::size_t(y) * w + x]; }
  const float* row(int y) const { return data.data() + std::size_t(y) * w; }
  float* row(int y) { return data.data() + std::size_t(y) * w; }

  bool in_unit_range() const {
    for (float v : data)
      if (!(v >= 0.0f && v <= 1.0f)) return false;
    return true;
  }
};

GrayImage clamp01(GrayImage img);

// Reads PGM (P5, maxval 255) or PNG (8-bit gray, 24-bit RGB via the
// 0.299/0.587/0.114 luma); the format is chosen by magic bytes.
GrayImage load_image(const std::filesystem::path& path);

// Writes by extension: .pgm (P5, maxval 255) or .png (8-bit gray).
// Quantization is round(v * 255) on clamped values.
void save_image(const GrayImage& img, const std::filesystem::path& path);

// Mean over a (2k+1)x(2k+1) window with replicate (clamp-to-edge) padding.
// k = 0 is the identity.
GrayImage average_filter(const GrayImage& img, int k);

struct BaseDetail {
  GrayImage base;    // average_filter(img, k)
  GrayImage detail;  // img - base; signed
};

BaseDetail base_detail_split(const GrayImage& img, int k);

GrayImage crop(const GrayImage& img, int y0, int x0, int size);

// Mean absolute pixel difference; dimensions must match.
double mean_abs_diff(const GrayImage& x, const GrayImage& y);

// `count` offsets uniform over the valid positions of a size x size patch,
// drawn y-then-x per patch from `rng`.
std::vector<std::pair<int, int>> sample_patch_offsets(int h, int w, int size, int count,
                                                      Rng& rng);

// Aligned patches from a tuple of same-shape images: result[i][j] is patch i
// of image j, all cut at the same offset.
std::vector<std::vector<GrayImage>> crop_patches(const std::vector<const GrayImage*>& images,
                                                 int size, int count, Rng& rng);

// --- Synthetic pairs --------------------------------------------------------

enum class Scenario { Exposure, Focus, Modality };

Scenario scenario_from_string(const std::string& name);
std::string to_string(Scenario s);

struct SynthPair {
  GrayImage a, b;
};

// Deterministic textured test scenes; requires h, w >= 64.
//   exposure: a is under-exposed, b over-exposed (gamma pair)
//   focus:    a blurred on the left half, b on the right
//   modality: a is smooth with bright targets, b carries the full texture
SynthPair synth_pair(Scenario scenario, int h, int w, std::uint64_t seed);

// --- Pair manifests ---------------------------------------------------------

struct PairEntry {
  std::string id;
  std::filesystem::path a, b;
  std::optional<std::filesystem::path> fused;
};

// Tab-separated "id<TAB>path_a<TAB>path_b[<TAB>path_fused]" lines; '#' starts
// a comment. Relative paths resolve against the manifest's directory.
struct PairManifest {
  std::vector<PairEntry> entries;

  static PairManifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

}  // namespace fb
