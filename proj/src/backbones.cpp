#include "fusionboost/backbones.hpp"

#include <algorithm>
#include <cmath>

namespace fb {
namespace {

void check_same_shape(const GrayImage& a, const GrayImage& b, const char* op) {
  require(a.h == b.h && a.w == b.w, std::string(op) + ": image shapes differ");
  require(a.size() > 0, std::string(op) + ": empty image");
}

// 5-tap binomial smoothing along one axis with clamped indices.
GrayImage binomial5(const GrayImage& img, bool vertical) {
  static constexpr float k[5] = {1.0f / 16, 4.0f / 16, 6.0f / 16, 4.0f / 16, 1.0f / 16};
  GrayImage out(img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      float acc = 0;
      for (int d = -2; d <= 2; ++d) {
        const int yy = vertical ? std::clamp(y + d, 0, img.h - 1) : y;
        const int xx = vertical ? x : std::clamp(x + d, 0, img.w - 1);
        acc += k[d + 2] * img.at(yy, xx);
      }
      out.at(y, x) = acc;
    }
  return out;
}

GrayImage smooth5(const GrayImage& img) { return binomial5(binomial5(img, true), false); }

// Smooth then keep the even samples; output is ceil(size/2) per axis.
GrayImage reduce(const GrayImage& img) {
  const GrayImage s = smooth5(img);
  GrayImage out((img.h + 1) / 2, (img.w + 1) / 2);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) out.at(y, x) = s.at(2 * y, 2 * x);
  return out;
}

// Factor-2 polyphase interpolation (the zero-stuffed binomial convolution with
// per-phase normalization): even rows/cols weigh (1,6,1)/8, odd (1,1)/2.
GrayImage expand_axis(const GrayImage& img, int target, bool vertical) {
  const int sh = vertical ? target : img.h;
  const int sw = vertical ? img.w : target;
  GrayImage out(sh, sw);
  for (int y = 0; y < sh; ++y)
    for (int x = 0; x < sw; ++x) {
      const int t = vertical ? y : x;
      const int limit = (vertical ? img.h : img.w) - 1;
      const int s = t / 2;
      float v;
      const auto src = [&](int i) {
        const int c = std::clamp(i, 0, limit);
        return vertical ? img.at(c, x) : img.at(y, c);
      };
      if (t % 2 == 0)
        v = (src(s - 1) + 6.0f * src(s) + src(s + 1)) / 8.0f;
      else
        v = 0.5f * (src(s) + src(s + 1));
      out.at(y, x) = v;
    }
  return out;
}

GrayImage expand(const GrayImage& img, int th, int tw) {
  return expand_axis(expand_axis(img, th, true), tw, false);
}

std::vector<GrayImage> gaussian_pyramid(const GrayImage& img, int levels) {
  std::vector<GrayImage> g{img};
  for (int i = 1; i < levels; ++i) g.push_back(reduce(g.back()));
  return g;
}

}  // namespace

Backbone backbone_from_string(const std::string& name) {
  if (name == "mean") return Backbone::Mean;
  if (name == "max") return Backbone::Max;
  if (name == "pyramid") return Backbone::Pyramid;
  throw ContractError("unknown backbone '" + name + "' (mean|max|pyramid)");
}

std::string to_string(Backbone b) {
  switch (b) {
    case Backbone::Mean: return "mean";
    case Backbone::Max: return "max";
    case Backbone::Pyramid: return "pyramid";
  }
  return "?";
}

GrayImage fuse_mean(const GrayImage& a, const GrayImage& b) {
  check_same_shape(a, b, "fuse_mean");
  GrayImage out(a.h, a.w);
  for (std::int64_t i = 0; i < a.size(); ++i) out.data[i] = (a.data[i] + b.data[i]) * 0.5f;
  return out;
}

GrayImage fuse_max(const GrayImage& a, const GrayImage& b) {
  check_same_shape(a, b, "fuse_max");
  GrayImage out(a.h, a.w);
  for (std::int64_t i = 0; i < a.size(); ++i) out.data[i] = std::max(a.data[i], b.data[i]);
  return out;
}

GrayImage fuse_pyramid(const GrayImage& a, const GrayImage& b, int levels) {
  check_same_shape(a, b, "fuse_pyramid");
  require(levels >= 1, "fuse_pyramid: levels must be >= 1");
  require(std::min(a.h, a.w) / (1 << (levels - 1)) >= 8,
          "fuse_pyramid: too many levels for this image size");

  const auto ga = gaussian_pyramid(a, levels);
  const auto gb = gaussian_pyramid(b, levels);

  // Coarsest band by mean, matching fuse_mean bit-for-bit when levels == 1.
  GrayImage acc = fuse_mean(ga.back(), gb.back());

  for (int i = levels - 2; i >= 0; --i) {
    const GrayImage ea = expand(ga[i + 1], ga[i].h, ga[i].w);
    const GrayImage eb = expand(gb[i + 1], gb[i].h, gb[i].w);
    GrayImage up = expand(acc, ga[i].h, ga[i].w);
    for (std::int64_t j = 0; j < up.size(); ++j) {
      const float la = ga[i].data[j] - ea.data[j];
      const float lb = gb[i].data[j] - eb.data[j];
      up.data[j] += std::abs(la) >= std::abs(lb) ? la : lb;
    }
    acc = std::move(up);
  }
  return clamp01(std::move(acc));
}

GrayImage fuse(Backbone kind, const GrayImage& a, const GrayImage& b, int pyramid_levels) {
  switch (kind) {
    case Backbone::Mean: return fuse_mean(a, b);
    case Backbone::Max: return fuse_max(a, b);
    case Backbone::Pyramid: return fuse_pyramid(a, b, pyramid_levels);
  }
  throw ContractError("fuse: bad backbone");
}

GrayImage degrade(const GrayImage& img, const DegradeSpec& spec) {
  require(img.size() > 0, "degrade: empty image");
  require(spec.noise_sigma >= 0.0f, "degrade: noise_sigma must be >= 0");
  require(spec.blur_k >= 0, "degrade: blur_k must be >= 0");
  require(spec.contrast > 0.0f, "degrade: contrast must be positive");
  if (spec.identity()) return img;

  GrayImage out = spec.blur_k > 0 ? average_filter(img, spec.blur_k) : img;
  if (spec.contrast != 1.0f)
    for (auto& v : out.data) v = 0.5f + spec.contrast * (v - 0.5f);
  if (spec.noise_sigma > 0.0f) {
    Rng rng(derive_seed(spec.seed, "degrade-noise"));
    for (auto& v : out.data) v += spec.noise_sigma * float(rng.gaussian());
  }
  return clamp01(std::move(out));
}

std::vector<FusedTriple> load_external_fused(const PairManifest& manifest) {
  std::vector<FusedTriple> triples;
  std::string problems;
  for (const auto& e : manifest.entries) {
    if (!e.fused) {
      problems += (problems.empty() ? "" : ", ") + e.id + " (no fused path)";
      continue;
    }
    FusedTriple t;
    t.id = e.id;
    t.a = load_image(e.a);
    t.b = load_image(e.b);
    t.fused = load_image(*e.fused);
    if (t.a.h != t.b.h || t.a.w != t.b.w || t.a.h != t.fused.h || t.a.w != t.fused.w) {
      problems += (problems.empty() ? "" : ", ") + e.id + " (dimension mismatch)";
      continue;
    }
    triples.push_back(std::move(t));
  }
  if (!problems.empty())
    throw FormatError("external fused set is unusable for: " + problems);
  return triples;
}

}  // namespace fb
