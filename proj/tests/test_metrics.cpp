#include "doctest.h"
#include "fusionboost/backbones.hpp"
#include "fusionboost/metrics.hpp"
#include "metric_refs.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

using namespace fb;
using namespace refs;

TEST_CASE("entropy: hand histograms") {
  CHECK(entropy(constant_image(9, 7, 0.31f)) == 0.0);

  GrayImage half(16, 16);
  for (int i = 0; i < 256; ++i) half.data[i] = i < 128 ? 0.0f : 1.0f;
  CHECK(std::abs(entropy(half) - 1.0) < 1e-9);

  GrayImage ramp(16, 16);
  for (int i = 0; i < 256; ++i) ramp.data[i] = float(i) / 255.0f;
  CHECK(std::abs(entropy(ramp) - 8.0) < 1e-9);

  // Permutation invariance: the histogram ignores pixel positions.
  GrayImage shuffled = ramp;
  Rng rng(5);
  shuffle(shuffled.data, rng);
  CHECK(entropy(shuffled) == entropy(ramp));
  CHECK(entropy(ramp) <= 8.0);
}

TEST_CASE("std_dev: hand cases and affine behavior") {
  CHECK(std_dev(constant_image(8, 8, 0.77f)) == 0.0);

  GrayImage half(10, 10);
  for (int i = 0; i < 100; ++i) half.data[i] = i < 50 ? 0.0f : 1.0f;
  CHECK(std::abs(std_dev(half) - 127.5) < 1e-9);

  // Contracting values toward the mean scales SD down linearly.
  const GrayImage img = textured_image(32, 32, 8);
  double mean = 0;
  for (float v : img.data) mean += v;
  mean /= double(img.size());
  GrayImage squeezed(32, 32);
  for (std::int64_t i = 0; i < img.size(); ++i)
    squeezed.data[i] = float(mean + 0.5 * (img.data[i] - mean));
  CHECK(std_dev(squeezed) == doctest::Approx(0.5 * std_dev(img)).epsilon(1e-5));

  GrayImage shifted(32, 32);
  for (std::int64_t i = 0; i < img.size(); ++i) shifted.data[i] = img.data[i] * 0.5f + 0.2f;
  CHECK(std::abs(std_dev(shifted) - 0.5 * std_dev(img)) < 1e-3);
}

TEST_CASE("edge_intensity: hand Sobel cases") {
  CHECK(edge_intensity(constant_image(12, 5, 0.4f)) == 0.0);

  GrayImage step(4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) step.at(y, x) = x < 2 ? 0.0f : 1.0f;
  // Identical rows kill Sy; Sx = 4 * (right - left) = 1020 on the two middle
  // columns and 0 at the replicated borders; mean = 2 * 1020 / 4.
  CHECK(std::abs(edge_intensity(step) - 510.0) < 1e-9);

  CHECK(edge_intensity(textured_image(16, 16, 9)) > 0.0);

  // Averaging never sharpens synthetic scenes.
  for (std::uint64_t seed : {1, 2, 3}) {
    const SynthPair pair = synth_pair(Scenario::Modality, 64, 64, seed);
    CHECK(edge_intensity(average_filter(pair.b, 1)) <= edge_intensity(pair.b));
    CHECK(edge_intensity(average_filter(pair.b, 2)) <= edge_intensity(pair.b));
  }
}

TEST_CASE("qabf: conventions, bounds and symmetry") {
  const GrayImage flat_a = constant_image(8, 8, 0.2f);
  const GrayImage flat_b = constant_image(8, 8, 0.8f);
  CHECK(qabf(flat_a, flat_b, constant_image(8, 8, 0.5f)) == 0.0);

  const GrayImage a = random_image(16, 16, 11), b = random_image(16, 16, 12);
  const GrayImage f = fuse_mean(a, b);
  const double q = qabf(a, b, f);
  CHECK(q >= 0.0);
  CHECK(q <= 1.0);
  CHECK(qabf(a, b, f) == doctest::Approx(qabf(b, a, f)).epsilon(1e-12));

  CHECK_THROWS_AS(qabf(a, b, random_image(8, 8, 13)), ContractError);
}

TEST_CASE("qabf: matches the brute-force reference") {
  // The self-fusion case: F == A == B with nontrivial edges.
  const GrayImage self = textured_image(8, 8, 21);
  CHECK(std::abs(qabf(self, self, self) - qabf_reference(self, self, self)) < 1e-9);

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const GrayImage a = random_image(32, 32, 100 + seed);
    const GrayImage b = random_image(32, 32, 200 + seed);
    const GrayImage f = random_image(32, 32, 300 + seed);
    CHECK(std::abs(qabf(a, b, f) - qabf_reference(a, b, f)) < 1e-9);
  }
}

TEST_CASE("vif: identity, degradation and conventions") {
  const GrayImage a = textured_image(64, 64, 31);
  const GrayImage b = random_image(64, 64, 32);

  const VifDetail self = vif_detail(a, b, a);
  CHECK(std::abs(self.source_a - 1.0) < 1e-6);
  CHECK(self.scales == 4);
  CHECK_FALSE(self.zero_variance);

  // Blurring the "fused" image destroys information fidelity.
  const VifDetail blurred = vif_detail(a, b, average_filter(a, 3));
  CHECK(blurred.source_a < 1.0);

  const VifDetail flat = vif_detail(constant_image(64, 64, 0.5f), constant_image(64, 64, 0.2f),
                                    random_image(64, 64, 33));
  CHECK(flat.value == 0.0);
  CHECK(flat.zero_variance);

  CHECK(vif_detail(a, b, random_image(64, 64, 34)).scales == 4);
  CHECK(vif_detail(random_image(32, 32, 35), random_image(32, 32, 36), random_image(32, 32, 37))
            .scales == 3);

  CHECK_THROWS_AS(vif(random_image(31, 31, 38), random_image(31, 31, 39),
                      random_image(31, 31, 40)),
                  ContractError);
  CHECK_THROWS_AS(vif(a, b, random_image(32, 32, 41)), ContractError);
}

TEST_CASE("vif: matches the brute-force reference") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const GrayImage a = random_image(32, 32, 400 + seed);
    const GrayImage b = random_image(32, 32, 500 + seed);
    const GrayImage f = random_image(32, 32, 600 + seed);
    CHECK(std::abs(vif(a, b, f) - vif_reference(a, b, f)) < 1e-6);
  }
  // Ragged non-square size exercises partial windows and odd decimation.
  const GrayImage a = textured_image(40, 56, 51);
  const GrayImage b = random_image(40, 56, 52);
  const GrayImage f = fuse_mean(a, b);
  CHECK(std::abs(vif(a, b, f) - vif_reference(a, b, f)) < 1e-6);
}

TEST_CASE("evaluate: rows, aggregate and failure handling") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "fb_metrics_tests";
  fs::create_directories(dir);

  std::vector<EvalSource> sources;
  for (int i = 0; i < 3; ++i) {
    const GrayImage a = textured_image(32, 32, 700 + i);
    const GrayImage b = random_image(32, 32, 800 + i);
    EvalSource src;
    src.id = "p" + std::to_string(i);
    src.a = dir / (src.id + "_a.pgm");
    src.b = dir / (src.id + "_b.pgm");
    src.fused = dir / (src.id + "_f.pgm");
    src.boost_time = 0.25 * (i + 1);
    save_image(a, src.a);
    save_image(b, src.b);
    save_image(fuse_mean(a, b), src.fused);
    sources.push_back(src);
  }

  MetricReport report = evaluate(sources);
  REQUIRE(report.rows.size() == 3);
  CHECK_FALSE(report.any_failed());
  for (const MetricRow& row : report.rows) {
    CHECK(row.en > 0.0);
    CHECK(row.vif_scales == 3);
  }

  const MetricRow agg = report.aggregate();
  CHECK(agg.id == "mean");
  double mean_en = 0, mean_time = 0;
  for (const MetricRow& row : report.rows) {
    mean_en += row.en;
    mean_time += row.boost_time;
  }
  CHECK(std::abs(agg.en - mean_en / 3) < 1e-12);
  CHECK(std::abs(agg.boost_time - mean_time / 3) < 1e-12);

  std::ostringstream csv;
  write_report_csv(csv, report);
  const std::string text = csv.str();
  CHECK(text.rfind("id,en,sd,ei,qabf,vif,boost_time\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 5);  // header + 3 + mean
  CHECK(text.find("mean,") != std::string::npos);

  const std::string summary = kv_summary(report);
  CHECK(summary.find("en=") != std::string::npos);
  CHECK(summary.find("pairs=3") != std::string::npos);

  // A missing file fails its row only.
  sources[1].fused = dir / "nope.pgm";
  report = evaluate(sources);
  REQUIRE(report.rows.size() == 3);
  CHECK(report.any_failed());
  CHECK(report.rows[1].failed);
  CHECK_FALSE(report.rows[0].failed);
  CHECK(report.rows[1].error.find("nope.pgm") != std::string::npos);
  std::ostringstream csv2;
  write_report_csv(csv2, report);
  CHECK(csv2.str().find("p1,nan,nan,nan,nan,nan,nan") != std::string::npos);

  // Empty input: header only, no aggregate row.
  std::ostringstream csv3;
  write_report_csv(csv3, evaluate({}));
  CHECK(csv3.str() == "id,en,sd,ei,qabf,vif,boost_time\n");
}
