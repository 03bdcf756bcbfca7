#pragma once
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "fusionboost/image.hpp"

namespace fb {

// All metrics work on the 0-255 intensity scale (v * 255) in double precision.
// Only the entropy histogram quantizes to integer levels.

// Shannon entropy in bits over the 256-bin histogram of round(v * 255).
double entropy(const GrayImage& img);

// Population standard deviation of v * 255.
double std_dev(const GrayImage& img);

// Mean Sobel gradient magnitude with replicate padding.
double edge_intensity(const GrayImage& img);

// Gradient-preservation measure (Xydeas-Petrovic): per-pixel edge strength and
// orientation from Sobel responses, sigmoid preservation factors, strengths as
// weights. All-flat inputs (zero total weight) score 0 by convention.
double qabf(const GrayImage& a, const GrayImage& b, const GrayImage& f);

struct VifDetail {
  double value = 0;         // mean of the two per-source fidelities
  double source_a = 0, source_b = 0;
  int scales = 0;           // pyramid levels actually evaluated (target 4)
  bool zero_variance = false;  // some source had no variance at any scale
};

// Pixel-domain visual information fidelity of the fused image against each
// source, averaged. Scales halve the resolution after a sigma=2 Gaussian;
// statistics come from 8x8 non-overlapping windows; scales whose image drops
// under 8 pixels are skipped and the count reported. Requires min(h, w) >= 32.
VifDetail vif_detail(const GrayImage& a, const GrayImage& b, const GrayImage& f);
double vif(const GrayImage& a, const GrayImage& b, const GrayImage& f);

// --- Report assembly --------------------------------------------------------

struct MetricRow {
  std::string id;
  double en = 0, sd = 0, ei = 0, qabf = 0, vif = 0;
  double boost_time = 0;  // seconds; 0 when not measured
  int vif_scales = 0;
  bool vif_zero_variance = false;
  bool failed = false;
  std::string error;
};

struct MetricReport {
  std::vector<MetricRow> rows;  // input order

  // Column means over the non-failed rows, id "mean".
  MetricRow aggregate() const;
  bool any_failed() const;
};

struct EvalSource {
  std::string id;
  std::filesystem::path a, b, fused;
  double boost_time = 0;
};

MetricRow compute_row(const std::string& id, const GrayImage& a, const GrayImage& b,
                      const GrayImage& fused, double boost_time = 0);

// Loads and scores every source; a row that fails to load or score is marked
// failed (with the reason) and the run continues.
MetricReport evaluate(const std::vector<EvalSource>& sources);

// CSV with the fixed header id,en,sd,ei,qabf,vif,boost_time, one row per pair
// in input order (failed rows emit nan columns) plus the aggregate "mean" row.
void write_report_csv(std::ostream& out, const MetricReport& report);

// Machine-readable "metric=mean" lines for standard output.
std::string kv_summary(const MetricReport& report);

}  // namespace fb
