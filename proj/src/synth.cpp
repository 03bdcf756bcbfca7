#include <algorithm>
#include <cmath>

#include "fusionboost/image.hpp"

namespace fb {
namespace {

struct Rect {
  int y0, x0, y1, x1;
};

Rect random_rect(Rng& rng, int h, int w, int min_side, int max_side) {
  const int rh = min_side + int(rng.below(std::uint32_t(max_side - min_side + 1)));
  const int rw = min_side + int(rng.below(std::uint32_t(max_side - min_side + 1)));
  const int y0 = int(rng.below(std::uint32_t(h - rh + 1)));
  const int x0 = int(rng.below(std::uint32_t(w - rw + 1)));
  return {y0, x0, y0 + rh, x0 + rw};
}

void paint(GrayImage& img, const Rect& r, float value) {
  for (int y = r.y0; y < r.y1; ++y)
    for (int x = r.x0; x < r.x1; ++x) img.at(y, x) = value;
}

// Bilinearly interpolated random grid; cheap band-limited texture.
GrayImage value_noise(int h, int w, int cell, Rng& rng) {
  const int gh = h / cell + 2, gw = w / cell + 2;
  std::vector<float> grid(std::size_t(gh) * gw);
  for (auto& v : grid) v = float(rng.uniform(-1.0, 1.0));
  GrayImage out(h, w);
  for (int y = 0; y < h; ++y) {
    const float fy = float(y) / cell;
    const int cy = int(fy);
    const float ty = fy - cy;
    for (int x = 0; x < w; ++x) {
      const float fx = float(x) / cell;
      const int cx = int(fx);
      const float tx = fx - cx;
      const float g00 = grid[std::size_t(cy) * gw + cx];
      const float g01 = grid[std::size_t(cy) * gw + cx + 1];
      const float g10 = grid[std::size_t(cy + 1) * gw + cx];
      const float g11 = grid[std::size_t(cy + 1) * gw + cx + 1];
      out.at(y, x) = (g00 * (1 - tx) + g01 * tx) * (1 - ty) + (g10 * (1 - tx) + g11 * tx) * ty;
    }
  }
  return out;
}

// High-contrast textured scene: smooth backdrop, a dense layer of hard-edged
// rectangles spanning nearly the full intensity range, and texture at three
// scales, the finest of which any blur destroys. Tuned edge-heavy so that
// fusion quality differences show up clearly in the gradient-based metrics.
GrayImage make_scene(int h, int w, Rng& rng) {
  const int side = std::min(h, w);
  GrayImage scene = value_noise(h, w, std::max(8, side / 5), rng);
  for (auto& v : scene.data) v = 0.5f + 0.25f * v;

  const int rects = 28;
  for (int i = 0; i < rects; ++i) {
    const Rect r = random_rect(rng, h, w, side / 10, side / 3);
    paint(scene, r, float(rng.uniform(0.03, 0.97)));
  }

  const GrayImage mid = value_noise(h, w, 5, rng);
  const GrayImage fine = value_noise(h, w, 2, rng);
  for (std::int64_t i = 0; i < scene.size(); ++i)
    scene.data[i] += 0.12f * mid.data[i] + 0.18f * fine.data[i];
  for (auto& v : scene.data) v += float(rng.uniform(-0.05, 0.05));

  for (auto& v : scene.data) v = std::clamp(v, 0.02f, 0.98f);
  return scene;
}

}  // namespace

SynthPair synth_pair(Scenario scenario, int h, int w, std::uint64_t seed) {
  require(h >= 64 && w >= 64, "synth_pair: minimum size is 64x64");
  Rng rng(derive_seed(seed, "synth"));
  const GrayImage scene = make_scene(h, w, rng);

  SynthPair p;
  switch (scenario) {
    case Scenario::Exposure: {
      const float gamma = float(rng.uniform(1.7, 2.3));
      p.a = GrayImage(h, w);
      p.b = GrayImage(h, w);
      for (std::int64_t i = 0; i < scene.size(); ++i) {
        p.a.data[i] = std::pow(scene.data[i], gamma);
        p.b.data[i] = std::pow(scene.data[i], 1.0f / gamma);
      }
      break;
    }
    case Scenario::Focus: {
      const GrayImage blurred = average_filter(scene, 2);
      p.a = scene;
      p.b = scene;
      const int half = w / 2;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          if (x < half)
            p.a.at(y, x) = blurred.at(y, x);
          else
            p.b.at(y, x) = blurred.at(y, x);
        }
      break;
    }
    case Scenario::Modality: {
      // Thermal-like view: smooth, compressed background so the painted
      // targets are unambiguously the hottest content.
      p.a = average_filter(scene, 3);
      for (auto& v : p.a.data) v = 0.12f + 0.6f * v;
      p.b = scene;
      const int targets = 5;
      for (int i = 0; i < targets; ++i) {
        const Rect r = random_rect(rng, h, w, std::min(h, w) / 12, std::min(h, w) / 5);
        paint(p.a, r, float(rng.uniform(0.86, 0.97)));
      }
      break;
    }
  }
  p.a = clamp01(std::move(p.a));
  p.b = clamp01(std::move(p.b));
  return p;
}

}  // namespace fb
