#include "fusionboost/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <ostream>
#include <sstream>

namespace fb {
namespace {

double px(const GrayImage& im, int y, int x) {
  return 255.0 * im.at(std::clamp(y, 0, im.h - 1), std::clamp(x, 0, im.w - 1));
}

// Raw 3x3 Sobel responses with replicate padding; sy grows downward.
void sobel_at(const GrayImage& im, int y, int x, double& sx, double& sy) {
  const double tl = px(im, y - 1, x - 1), tc = px(im, y - 1, x), tr = px(im, y - 1, x + 1);
  const double ml = px(im, y, x - 1), mr = px(im, y, x + 1);
  const double bl = px(im, y + 1, x - 1), bc = px(im, y + 1, x), br = px(im, y + 1, x + 1);
  sx = (tr + 2 * mr + br) - (tl + 2 * ml + bl);
  sy = (bl + 2 * bc + br) - (tl + 2 * tc + tr);
}

void check_dims(const GrayImage& a, const GrayImage& b, const GrayImage& f,
                const char* who) {
  require(a.h == f.h && a.w == f.w && b.h == f.h && b.w == f.w,
          std::string(who) + ": image dimensions differ");
}

// --- VIF plumbing -----------------------------------------------------------

struct Plane {
  int h = 0, w = 0;
  std::vector<double> data;
  double& at(int y, int x) { return data[std::size_t(y) * w + x]; }
  double at(int y, int x) const { return data[std::size_t(y) * w + x]; }
};

Plane to_plane(const GrayImage& im) {
  Plane p{im.h, im.w, std::vector<double>(im.size())};
  for (std::int64_t i = 0; i < im.size(); ++i) p.data[i] = 255.0 * im.data[i];
  return p;
}

std::array<double, 11> gauss_kernel() {
  std::array<double, 11> k{};
  double sum = 0;
  for (int i = 0; i < 11; ++i) {
    k[i] = std::exp(-double((i - 5) * (i - 5)) / 8.0);  // sigma = 2
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable 11-tap Gaussian (replicate) followed by x2 decimation.
Plane reduce_plane(const Plane& in) {
  static const std::array<double, 11> k = gauss_kernel();
  Plane tmp{in.h, in.w, std::vector<double>(in.data.size())};
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      double acc = 0;
      for (int d = -5; d <= 5; ++d) acc += k[d + 5] * in.at(y, std::clamp(x + d, 0, in.w - 1));
      tmp.at(y, x) = acc;
    }
  Plane sm{in.h, in.w, std::vector<double>(in.data.size())};
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x) {
      double acc = 0;
      for (int d = -5; d <= 5; ++d) acc += k[d + 5] * tmp.at(std::clamp(y + d, 0, in.h - 1), x);
      sm.at(y, x) = acc;
    }
  Plane out{(in.h + 1) / 2, (in.w + 1) / 2, {}};
  out.data.resize(std::size_t(out.h) * out.w);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) out.at(y, x) = sm.at(2 * y, 2 * x);
  return out;
}

// Accumulates the information integrals over 8x8 windows of one scale.
void window_stats(const Plane& x, const Plane& f, double& vid, double& vind) {
  constexpr int kWin = 8;
  constexpr double kNoise = 2.0;  // sigma_n^2 on the 0-255 scale
  constexpr double kEps = 1e-10;
  for (int wy = 0; wy + kWin <= x.h; wy += kWin)
    for (int wx = 0; wx + kWin <= x.w; wx += kWin) {
      double mx = 0, mf = 0;
      for (int y = 0; y < kWin; ++y)
        for (int xx = 0; xx < kWin; ++xx) {
          mx += x.at(wy + y, wx + xx);
          mf += f.at(wy + y, wx + xx);
        }
      mx /= kWin * kWin;
      mf /= kWin * kWin;
      double vx = 0, vf = 0, cov = 0;
      for (int y = 0; y < kWin; ++y)
        for (int xx = 0; xx < kWin; ++xx) {
          const double dx = x.at(wy + y, wx + xx) - mx;
          const double df = f.at(wy + y, wx + xx) - mf;
          vx += dx * dx;
          vf += df * df;
          cov += dx * df;
        }
      vx /= kWin * kWin;
      vf /= kWin * kWin;
      cov /= kWin * kWin;
      const double g = cov / (vx + kEps);
      const double sv = vf - g * cov;
      vid += std::log2(1.0 + g * g * vx / (sv + kNoise));
      vind += std::log2(1.0 + vx / kNoise);
    }
}

double vif_one_source(const GrayImage& src, const GrayImage& fused, int& scales,
                      bool& zero_variance) {
  Plane x = to_plane(src), f = to_plane(fused);
  double vid = 0, vind = 0;
  scales = 0;
  for (int s = 0; s < 4; ++s) {
    if (s > 0) {
      x = reduce_plane(x);
      f = reduce_plane(f);
    }
    if (std::min(x.h, x.w) < 8) break;
    window_stats(x, f, vid, vind);
    ++scales;
  }
  if (vind == 0) {
    zero_variance = true;
    return 0.0;
  }
  return vid / vind;
}

}  // namespace

double entropy(const GrayImage& img) {
  require(img.size() > 0, "entropy: empty image");
  std::array<std::int64_t, 256> hist{};
  for (float v : img.data) {
    const long bin = std::lround(double(v) * 255.0);
    ++hist[std::clamp(bin, 0L, 255L)];
  }
  const double n = double(img.size());
  double en = 0;
  for (std::int64_t c : hist)
    if (c > 0) {
      const double p = c / n;
      en -= p * std::log2(p);
    }
  return en;
}

double std_dev(const GrayImage& img) {
  require(img.size() > 0, "std_dev: empty image");
  double mean = 0;
  for (float v : img.data) mean += 255.0 * v;
  mean /= double(img.size());
  double var = 0;
  for (float v : img.data) {
    const double d = 255.0 * v - mean;
    var += d * d;
  }
  return std::sqrt(var / double(img.size()));
}

double edge_intensity(const GrayImage& img) {
  require(img.size() > 0, "edge_intensity: empty image");
  double acc = 0;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      double sx, sy;
      sobel_at(img, y, x, sx, sy);
      acc += std::sqrt(sx * sx + sy * sy);
    }
  return acc / double(img.size());
}

double qabf(const GrayImage& a, const GrayImage& b, const GrayImage& f) {
  check_dims(a, b, f, "qabf");
  constexpr double kGammaG = 0.9994, kKappaG = -15.0, kSigmaG = 0.5;
  constexpr double kGammaA = 0.9879, kKappaA = -22.0, kSigmaA = 0.8;
  constexpr double kHalfPi = std::numbers::pi / 2.0;

  const auto edge = [](const GrayImage& im, int y, int x, double& g, double& alpha) {
    double sx, sy;
    sobel_at(im, y, x, sx, sy);
    g = std::sqrt(sx * sx + sy * sy);
    alpha = sx == 0.0 ? kHalfPi : std::atan(sy / sx);
  };

  double num = 0, den = 0;
  for (int y = 0; y < f.h; ++y)
    for (int x = 0; x < f.w; ++x) {
      double gf, af;
      edge(f, y, x, gf, af);
      const auto preservation = [&](double gx, double ax) {
        const double ratio = gx > gf ? gf / gx : (gf > 0 ? gx / gf : 0.0);
        const double align = 1.0 - std::abs(ax - af) / kHalfPi;
        const double qg = kGammaG / (1.0 + std::exp(kKappaG * (ratio - kSigmaG)));
        const double qa = kGammaA / (1.0 + std::exp(kKappaA * (align - kSigmaA)));
        return qg * qa;
      };
      double ga, aa, gb, ab;
      edge(a, y, x, ga, aa);
      edge(b, y, x, gb, ab);
      num += preservation(ga, aa) * ga + preservation(gb, ab) * gb;
      den += ga + gb;
    }
  return den == 0 ? 0.0 : num / den;
}

VifDetail vif_detail(const GrayImage& a, const GrayImage& b, const GrayImage& f) {
  check_dims(a, b, f, "vif");
  require(std::min(f.h, f.w) >= 32, "vif: images must be at least 32x32");
  VifDetail d;
  int scales_a = 0, scales_b = 0;
  d.source_a = vif_one_source(a, f, scales_a, d.zero_variance);
  d.source_b = vif_one_source(b, f, scales_b, d.zero_variance);
  d.scales = std::min(scales_a, scales_b);  // dims agree, so these match
  d.value = 0.5 * (d.source_a + d.source_b);
  return d;
}

double vif(const GrayImage& a, const GrayImage& b, const GrayImage& f) {
  return vif_detail(a, b, f).value;
}

// --- Report assembly --------------------------------------------------------

MetricRow MetricReport::aggregate() const {
  MetricRow agg;
  agg.id = "mean";
  std::int64_t n = 0;
  for (const MetricRow& row : rows) {
    if (row.failed) continue;
    agg.en += row.en;
    agg.sd += row.sd;
    agg.ei += row.ei;
    agg.qabf += row.qabf;
    agg.vif += row.vif;
    agg.boost_time += row.boost_time;
    ++n;
  }
  if (n > 0) {
    agg.en /= n;
    agg.sd /= n;
    agg.ei /= n;
    agg.qabf /= n;
    agg.vif /= n;
    agg.boost_time /= n;
  }
  return agg;
}

bool MetricReport::any_failed() const {
  for (const MetricRow& row : rows)
    if (row.failed) return true;
  return false;
}

MetricRow compute_row(const std::string& id, const GrayImage& a, const GrayImage& b,
                      const GrayImage& fused, double boost_time) {
  MetricRow row;
  row.id = id;
  row.en = entropy(fused);
  row.sd = std_dev(fused);
  row.ei = edge_intensity(fused);
  row.qabf = qabf(a, b, fused);
  const VifDetail vd = vif_detail(a, b, fused);
  row.vif = vd.value;
  row.vif_scales = vd.scales;
  row.vif_zero_variance = vd.zero_variance;
  row.boost_time = boost_time;
  return row;
}

MetricReport evaluate(const std::vector<EvalSource>& sources) {
  MetricReport report;
  for (const EvalSource& src : sources) {
    try {
      const GrayImage a = load_image(src.a);
      const GrayImage b = load_image(src.b);
      const GrayImage fused = load_image(src.fused);
      report.rows.push_back(compute_row(src.id, a, b, fused, src.boost_time));
    } catch (const std::exception& e) {
      MetricRow row;
      row.id = src.id;
      row.failed = true;
      row.error = e.what();
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

namespace {

void write_csv_row(std::ostream& out, const MetricRow& row) {
  out << row.id;
  const double cols[] = {row.en, row.sd, row.ei, row.qabf, row.vif, row.boost_time};
  char buf[40];
  for (double v : cols) {
    if (row.failed)
      out << ",nan";
    else {
      std::snprintf(buf, sizeof(buf), "%.9g", v);
      out << ',' << buf;
    }
  }
  out << '\n';
}

}  // namespace

void write_report_csv(std::ostream& out, const MetricReport& report) {
  out << "id,en,sd,ei,qabf,vif,boost_time\n";
  for (const MetricRow& row : report.rows) write_csv_row(out, row);
  if (!report.rows.empty()) write_csv_row(out, report.aggregate());
}

std::string kv_summary(const MetricReport& report) {
  const MetricRow agg = report.aggregate();
  std::ostringstream out;
  char buf[40];
  const auto put = [&](const char* key, double v) {
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    out << key << '=' << buf << '\n';
  };
  put("en", agg.en);
  put("sd", agg.sd);
  put("ei", agg.ei);
  put("qabf", agg.qabf);
  put("vif", agg.vif);
  put("boost_time", agg.boost_time);
  out << "pairs=" << report.rows.size() << '\n';
  return out.str();
}

}  // namespace fb
