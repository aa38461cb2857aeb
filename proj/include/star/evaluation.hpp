#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "star/datasets.hpp"
#include "star/model.hpp"

namespace star {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) { return a += b; }
  bool operator==(const ConfusionCounts&) const = default;
};

ConfusionCounts accumulate(ConfusionCounts counts, const BinaryMask& pred, const BinaryMask& truth);

/// tp / (tp + fp + fn); 0 when the denominator is 0.
double iou(const ConfusionCounts& c);
/// 2tp / (2tp + fp + fn); 0 when the denominator is 0.
double f1(const ConfusionCounts& c);

enum class ErrorCategory : std::uint8_t { TN = 0, TP = 1, FP = 2, FN = 3 };

struct ErrorMap {
  int height = 0, width = 0;
  std::vector<ErrorCategory> categories;

  ErrorCategory at(int y, int x) const { return categories[static_cast<std::size_t>(y) * width + x]; }
};

ErrorMap render_error_map(const BinaryMask& pred, const BinaryMask& truth);
/// TP green, FP red, FN blue, TN black.
void write_error_map(const std::filesystem::path& path, const ErrorMap& map);

/// Change probabilities (N×1×H×W) for a batch of co-registered pairs.
using ChangeProbabilityFn = std::function<Tensor<float>(const Tensor<float>&, const Tensor<float>&)>;

/// Probability function for a trained model's change head (inference mode, first order).
ChangeProbabilityFn change_probabilities(ChangeStar<float>& model);

/// Window origins along one axis: 0, stride, 2*stride, ... with the last window flush
/// against the far edge. A window at least as large as the axis gives a single origin.
std::vector<int> window_origins(int length, int window, int stride);

/// Tiles both images identically, averages overlapping probabilities, thresholds the
/// average (p > threshold). Windows larger than the image shrink to the image.
BinaryMask sliding_window_predict(const ChangeProbabilityFn& model, const Raster& t1,
                                  const Raster& t2, int window, int stride,
                                  double threshold = 0.5);

enum class Method { ChangeStar, Pcc };
Method parse_method(std::string_view s);
std::string_view to_string(Method m);

struct TileResult {
  std::string id;
  ConfusionCounts counts;
};

struct MethodResult {
  Method method = Method::ChangeStar;
  ConfusionCounts counts;  // pooled over the whole set
  std::vector<TileResult> tiles;
  double iou() const { return star::iou(counts); }
  double f1() const { return star::f1(counts); }
};

struct EvalOptions {
  int batch = 8;
  double threshold = 0.5;
  /// Sliding-window inference when set; whole tiles otherwise.
  std::optional<int> window;
  int stride = 0;
};

/// Change predictions for every pair. Throws DataError on an empty set.
std::vector<BinaryMask> predict_changes(ChangeStar<float>& model,
                                        const std::vector<BitemporalSample>& pairs, Method method,
                                        const EvalOptions& opts = {});

MethodResult evaluate(ChangeStar<float>& model, const std::vector<BitemporalSample>& pairs,
                      Method method, const EvalOptions& opts = {});

/// Agreement between binarized fwd (t1,t2) and bwd (t2,t1) change maps, counted with fwd
/// as the reference.
ConfusionCounts order_agreement(ChangeStar<float>& model,
                                const std::vector<BitemporalSample>& pairs, int batch = 8);

/// Comparison report. JSON layout:
///   {"num_pairs": N,
///    "methods": {"<method>": {"iou","f1","tp","fp","fn","tn",
///                             "tiles": [{"id","tp","fp","fn","tn"}]}},
///    "delta": {"iou", "f1"}            // first minus second method, when two are given
///    "learning_curve": [...]}          // copied eval records, when a log is given
nlohmann::json compare_report(const std::vector<MethodResult>& results,
                              const std::vector<nlohmann::json>& learning_curve = {});

/// Line plot of changestar vs pcc IoU over training steps from eval log records.
void write_learning_curve_plot(const std::filesystem::path& path,
                               const std::vector<nlohmann::json>& eval_records);

/// Panels per pair: t1 | t2 | truth | one error map per prediction set.
void write_error_panels(const std::filesystem::path& dir,
                        const std::vector<BitemporalSample>& pairs,
                        const std::vector<std::vector<BinaryMask>>& predictions,
                        std::size_t max_panels);

}  // namespace star
