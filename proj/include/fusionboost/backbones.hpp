#pragma once
#include <string>
#include <vector>

#include "fusionboost/image.hpp"

namespace fb {

enum class Backbone { Mean, Max, Pyramid };

Backbone backbone_from_string(const std::string& name);
std::string to_string(Backbone b);

GrayImage fuse_mean(const GrayImage& a, const GrayImage& b);
GrayImage fuse_max(const GrayImage& a, const GrayImage& b);

// Laplacian-pyramid fusion: 5-tap binomial [1,4,6,4,1]/16 smoothing with
// replicate borders, factor-2 resampling, max-absolute selection in the
// high-pass bands, mean in the coarsest band; reconstruction clamped to [0,1].
// levels = 1 degenerates to fuse_mean. Requires min(h,w) / 2^(levels-1) >= 8.
GrayImage fuse_pyramid(const GrayImage& a, const GrayImage& b, int levels);

GrayImage fuse(Backbone kind, const GrayImage& a, const GrayImage& b,
               int pyramid_levels = 3);

// Emulates an artifact-laden fusion backbone. Stages apply in order
// blur -> contrast -> noise, then clamp; a default-constructed spec is a
// bit-exact identity.
struct DegradeSpec {
  float noise_sigma = 0.0f;  // std-dev of the additive gaussian, [0,1] scale
  int blur_k = 0;            // average_filter radius
  float contrast = 1.0f;     // v -> 0.5 + contrast * (v - 0.5)
  std::uint64_t seed = 0;

  bool identity() const { return noise_sigma == 0.0f && blur_k == 0 && contrast == 1.0f; }
};

GrayImage degrade(const GrayImage& img, const DegradeSpec& spec);

struct FusedTriple {
  std::string id;
  GrayImage a, b, fused;
};

// Loads every manifest entry together with its externally produced fused
// image. Entries without a fused path or with mismatched dimensions are
// aggregated into one error listing the offending ids.
std::vector<FusedTriple> load_external_fused(const PairManifest& manifest);

}  // namespace fb
