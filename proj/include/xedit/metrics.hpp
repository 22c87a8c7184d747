#pragma once
// Image-quality and dense-prediction metrics, report aggregation and judge
// bundle export.

#include <array>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "xedit/image.hpp"

namespace xedit::metrics {

struct MetricError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Mean squared difference over every pixel and channel.
double mse(const Image& pred, const Image& gt);

using FeatureExtractor = std::function<std::vector<double>(const Image&)>;

/// Cosine similarity of two feature vectors. Throws on a zero vector.
double cosine(const std::vector<double>& a, const std::vector<double>& b);

/// Cosine similarity of extracted features (CLIP-I surrogate).
double clip_i(const Image& pred, const Image& gt, const FeatureExtractor& encoder);

struct PRF {
  double precision = 0, recall = 0, f1 = 0;
};

/// Exact pixel matching after thresholding at 0.5. Conventions: with no
/// predicted positives, precision is 1 when the ground truth is also empty
/// and 0 otherwise; recall is 1 when the ground truth is empty; F1 is 0
/// when precision + recall is 0.
PRF edge_prf(const std::vector<double>& pred, const std::vector<double>& gt);

struct SegScores {
  double pixel_acc = 0, mean_acc = 0, mean_iou = 0;
};

/// Confusion-matrix scores. Mean accuracy averages over classes present in
/// gt; mean IoU over classes present in either map.
SegScores seg_scores(const std::vector<int>& pred, const std::vector<int>& gt,
                     std::size_t n_classes);

/// Fraction of pixels with max(p/g, g/p) < threshold.
double depth_delta1(const std::vector<double>& pred, const std::vector<double>& gt,
                    double threshold = 1.25);

struct AngularStats {
  double mean_deg = 0, median_deg = 0;
  double within_11_25 = 0, within_22_5 = 0, within_30 = 0;  // strict <
};

/// Vectors are xyz triples, renormalised internally. Angles are rounded to
/// 1e-9 degree before thresholding. Median of an even
/// count is the midpoint of the two central values.
AngularStats normal_angular(const std::vector<double>& pred, const std::vector<double>& gt);

struct MeanStd {
  double mean = 0, std = 0;  // sample standard deviation (n - 1); 0 for n < 2
  std::size_t n = 0;
};
MeanStd mean_std(const std::vector<double>& values);

/// Maps every pixel to the index of the nearest palette color (squared RGB
/// distance, first index wins ties).
std::vector<int> quantize_to_palette(const Image& img, const std::vector<std::array<float, 3>>& palette);

struct InstanceScore {
  std::size_t task_id = 0;
  std::string task;
  std::string category;
  bool seen = true;
  std::map<std::string, double> values;  // metric name -> value
};

struct MetricSpec {
  std::string name;
  bool lower_is_better;
};

/// Per-instance values plus per-task, per-category and overall mean +- std.
struct MetricReport {
  std::string method;
  std::string split;
  std::vector<MetricSpec> metrics;
  std::vector<InstanceScore> instances;
  std::map<std::string, std::map<std::string, MeanStd>> per_task;      // task -> metric -> stats
  std::map<std::string, std::map<std::string, MeanStd>> per_category;  // category -> metric -> stats
  std::map<std::string, MeanStd> overall;                              // metric -> stats
  std::vector<std::string> notes;

  /// Recomputes every aggregate from `instances`.
  void aggregate();
  std::string to_json() const;
  /// Method and group rows, one column per metric with a direction marker.
  std::string to_table() const;
};

std::string direction_marker(bool lower_is_better);

/// Several reports as one table (rows "<method> -<S|U>").
std::string comparison_table(const std::vector<MetricReport>& reports);

/// Judge protocol text; contains the JSON response schema line.
const std::string& judge_prompt_text();

/// Writes composite.ppm (columns: A, A1, B | B1, B2, blank; one tile per
/// row), prompt.txt and scores.json (empty score stub).
void export_judge_bundle(const Image& prompt, const Image& reference, const Image& source,
                         const Image& pred1, const Image& pred2,
                         const std::filesystem::path& out_dir);

}  // namespace xedit::metrics
