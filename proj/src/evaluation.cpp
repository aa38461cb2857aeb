#include "star/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "star/pairing.hpp"

namespace star {

namespace fs = std::filesystem;
using nlohmann::json;

ConfusionCounts accumulate(ConfusionCounts counts, const BinaryMask& pred, const BinaryMask& truth) {
  require(pred.same_shape(truth), "accumulate: prediction and truth shapes differ");
  const auto& p = pred.values();
  const auto& t = truth.values();
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    require(p[i] <= 1 && t[i] <= 1, "accumulate: masks must be binary");
    if (p[i]) {
      (t[i] ? tp : fp)++;
    } else {
      (t[i] ? fn : tn)++;
    }
  }
  counts += ConfusionCounts{tp, fp, fn, tn};
  return counts;
}

double iou(const ConfusionCounts& c) {
  const auto d = c.tp + c.fp + c.fn;
  return d == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(d);
}

double f1(const ConfusionCounts& c) {
  const auto d = 2 * c.tp + c.fp + c.fn;
  return d == 0 ? 0.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(d);
}

ErrorMap render_error_map(const BinaryMask& pred, const BinaryMask& truth) {
  require(pred.same_shape(truth), "render_error_map: prediction and truth shapes differ");
  ErrorMap m{pred.height(), pred.width(), std::vector<ErrorCategory>(pred.size())};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.values()[i], t = truth.values()[i];
    m.categories[i] = p ? (t ? ErrorCategory::TP : ErrorCategory::FP)
                        : (t ? ErrorCategory::FN : ErrorCategory::TN);
  }
  return m;
}

namespace {

cv::Vec3b category_color(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::TP: return {0, 200, 0};    // BGR green
    case ErrorCategory::FP: return {0, 0, 230};    // red
    case ErrorCategory::FN: return {230, 80, 0};   // blue
    case ErrorCategory::TN: break;
  }
  return {0, 0, 0};
}

cv::Mat3b error_map_image(const ErrorMap& map) {
  cv::Mat3b img(map.height, map.width);
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x) img(y, x) = category_color(map.at(y, x));
  return img;
}

cv::Mat3b raster_image(const Raster& r) {
  cv::Mat3b img(r.height(), r.width());
  for (int y = 0; y < r.height(); ++y)
    for (int x = 0; x < r.width(); ++x) {
      auto byte = [&](int c) {
        const int cc = std::min(c, r.channels() - 1);
        return static_cast<std::uint8_t>(std::lround(std::clamp(r.at(cc, y, x), 0.0f, 1.0f) * 255));
      };
      img(y, x) = {byte(2), byte(1), byte(0)};
    }
  return img;
}

cv::Mat3b mask_image(const BinaryMask& m) {
  cv::Mat3b img(m.height(), m.width());
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) {
      const std::uint8_t v = m.at(y, x) ? 255 : 0;
      img(y, x) = {v, v, v};
    }
  return img;
}

Tensor<float> crop_tensor(const Raster& r, int y0, int x0, int h, int w) {
  Tensor<float> t(1, r.channels(), h, w);
  for (int c = 0; c < r.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) t.at(0, c, y, x) = r.at(c, y0 + y, x0 + x);
  return t;
}

Tensor<float> sigmoid(Tensor<float> t) {
  for (auto& v : t.vec()) v = 1.0f / (1.0f + std::exp(-v));
  return t;
}

using WindowFn = std::function<Tensor<float>(int y0, int x0, int h, int w)>;

/// Mean of the per-window probability maps over every pixel.
Tensor<float> average_windows(int height, int width, int window, int stride, const WindowFn& fn) {
  const int wh = std::min(window, height), ww = std::min(window, width);
  std::vector<double> sum(static_cast<std::size_t>(height) * width, 0.0);
  std::vector<int> hits(sum.size(), 0);
  for (int y0 : window_origins(height, window, stride))
    for (int x0 : window_origins(width, window, stride)) {
      auto p = fn(y0, x0, wh, ww);
      require(p.n() == 1 && p.c() == 1 && p.h() == wh && p.w() == ww,
              "sliding window: model output has the wrong shape");
      for (int y = 0; y < wh; ++y)
        for (int x = 0; x < ww; ++x) {
          const std::size_t i = static_cast<std::size_t>(y0 + y) * width + (x0 + x);
          sum[i] += p.at(0, 0, y, x);
          hits[i] += 1;
        }
    }
  Tensor<float> out(1, 1, height, width);
  for (std::size_t i = 0; i < sum.size(); ++i) out[i] = static_cast<float>(sum[i] / hits[i]);
  return out;
}

}  // namespace

void write_error_map(const fs::path& path, const ErrorMap& map) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), error_map_image(map)))
    throw DataError("cannot write " + path.string());
}

ChangeProbabilityFn change_probabilities(ChangeStar<float>& model) {
  return [&model](const Tensor<float>& x1, const Tensor<float>& x2) {
    return sigmoid(model.forward(x1, x2, Phase::Infer).change_fwd);
  };
}

std::vector<int> window_origins(int length, int window, int stride) {
  require(length > 0 && window > 0 && stride > 0, "window_origins: sizes must be positive");
  require(window >= stride, "sliding window: window must be at least the stride");
  if (window >= length) return {0};
  std::vector<int> out;
  for (int p = 0; p + window < length; p += stride) out.push_back(p);
  if (out.empty() || out.back() != length - window) out.push_back(length - window);
  return out;
}

BinaryMask sliding_window_predict(const ChangeProbabilityFn& model, const Raster& t1,
                                  const Raster& t2, int window, int stride, double threshold) {
  require(t1.channels() == t2.channels() && t1.height() == t2.height() && t1.width() == t2.width(),
          "sliding_window_predict: images differ in shape");
  auto probs = average_windows(t1.height(), t1.width(), window, stride,
                               [&](int y0, int x0, int h, int w) {
                                 return model(crop_tensor(t1, y0, x0, h, w),
                                              crop_tensor(t2, y0, x0, h, w));
                               });
  return binarize_probabilities(probs, threshold).front();
}

Method parse_method(std::string_view s) {
  if (s == "changestar") return Method::ChangeStar;
  if (s == "pcc") return Method::Pcc;
  throw ContractError("unknown method '" + std::string(s) + "' (expected changestar or pcc)");
}

std::string_view to_string(Method m) { return m == Method::ChangeStar ? "changestar" : "pcc"; }

std::vector<BinaryMask> predict_changes(ChangeStar<float>& model,
                                        const std::vector<BitemporalSample>& pairs, Method method,
                                        const EvalOptions& opts) {
  if (pairs.empty()) throw DataError("evaluation set is empty");
  require(opts.batch >= 1, "evaluation batch must be positive");
  std::vector<BinaryMask> out;
  out.reserve(pairs.size());
  if (opts.window) {
    const int stride = opts.stride > 0 ? opts.stride : *opts.window;
    for (const auto& p : pairs) {
      if (method == Method::ChangeStar) {
        out.push_back(sliding_window_predict(change_probabilities(model), p.image_t1, p.image_t2,
                                             *opts.window, stride, opts.threshold));
        continue;
      }
      auto seg = [&](const Raster& r) {
        auto probs = average_windows(r.height(), r.width(), *opts.window, stride,
                                     [&](int y0, int x0, int h, int w) {
                                       return sigmoid(model.segment(crop_tensor(r, y0, x0, h, w),
                                                                    Phase::Infer));
                                     });
        return binarize_probabilities(probs, opts.threshold).front();
      };
      out.push_back(assign_change_labels(seg(p.image_t1), seg(p.image_t2), LabelMode::Xor));
    }
    return out;
  }
  std::size_t begin = 0;
  while (begin < pairs.size()) {
    std::size_t end = begin + 1;
    const auto& first = pairs[begin].image_t1;
    while (end < pairs.size() && end - begin < static_cast<std::size_t>(opts.batch) &&
           pairs[end].image_t1.height() == first.height() &&
           pairs[end].image_t1.width() == first.width())
      ++end;
    RasterBatch a, b;
    for (std::size_t i = begin; i < end; ++i) {
      a.push_back(pairs[i].image_t1);
      b.push_back(pairs[i].image_t2);
    }
    auto x1 = to_tensor<float>(std::span<const Raster>(a));
    auto x2 = to_tensor<float>(std::span<const Raster>(b));
    MaskBatch pred;
    if (method == Method::ChangeStar) {
      pred = binarize_logits(model.forward(x1, x2, Phase::Infer).change_fwd, opts.threshold);
    } else {
      pred = pcc_predict(model, x1, x2, opts.threshold);
    }
    for (auto& m : pred) out.push_back(std::move(m));
    begin = end;
  }
  return out;
}

MethodResult evaluate(ChangeStar<float>& model, const std::vector<BitemporalSample>& pairs,
                      Method method, const EvalOptions& opts) {
  auto preds = predict_changes(model, pairs, method, opts);
  MethodResult r;
  r.method = method;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto c = accumulate({}, preds[i], pairs[i].change);
    r.tiles.push_back({pairs[i].id, c});
    r.counts += c;
  }
  return r;
}

ConfusionCounts order_agreement(ChangeStar<float>& model,
                                const std::vector<BitemporalSample>& pairs, int batch) {
  if (pairs.empty()) throw DataError("evaluation set is empty");
  ConfusionCounts counts;
  for (std::size_t begin = 0; begin < pairs.size(); begin += batch) {
    const std::size_t end = std::min(pairs.size(), begin + batch);
    RasterBatch a, b;
    for (std::size_t i = begin; i < end; ++i) {
      a.push_back(pairs[i].image_t1);
      b.push_back(pairs[i].image_t2);
    }
    auto out = model.forward(to_tensor<float>(std::span<const Raster>(a)),
                             to_tensor<float>(std::span<const Raster>(b)), Phase::Infer, true);
    auto fwd = binarize_logits(out.change_fwd);
    auto bwd = binarize_logits(*out.change_bwd);
    for (std::size_t i = 0; i < fwd.size(); ++i) counts = accumulate(counts, bwd[i], fwd[i]);
  }
  return counts;
}

json compare_report(const std::vector<MethodResult>& results,
                    const std::vector<json>& learning_curve) {
  json j;
  j["num_pairs"] = results.empty() ? 0 : results.front().tiles.size();
  j["methods"] = json::object();
  for (const auto& r : results) {
    json m;
    m["iou"] = r.iou();
    m["f1"] = r.f1();
    m["tp"] = r.counts.tp;
    m["fp"] = r.counts.fp;
    m["fn"] = r.counts.fn;
    m["tn"] = r.counts.tn;
    m["tiles"] = json::array();
    for (const auto& t : r.tiles)
      m["tiles"].push_back({{"id", t.id}, {"tp", t.counts.tp}, {"fp", t.counts.fp},
                            {"fn", t.counts.fn}, {"tn", t.counts.tn}});
    j["methods"][std::string(to_string(r.method))] = std::move(m);
  }
  if (results.size() >= 2) {
    j["delta"] = {{"iou", results[0].iou() - results[1].iou()},
                  {"f1", results[0].f1() - results[1].f1()},
                  {"of", std::string(to_string(results[0].method)) + " - " +
                             std::string(to_string(results[1].method))}};
  }
  if (!learning_curve.empty()) j["learning_curve"] = learning_curve;
  return j;
}

void write_learning_curve_plot(const fs::path& path, const std::vector<json>& eval_records) {
  const int width = 640, height = 400, margin = 50;
  cv::Mat3b img(height, width, cv::Vec3b(255, 255, 255));
  cv::rectangle(img, {margin, margin}, {width - margin, height - margin}, {0, 0, 0});
  double max_step = 1;
  for (const auto& r : eval_records) max_step = std::max(max_step, r.value("step", 0.0));
  auto to_px = [&](double step, double value) {
    return cv::Point(margin + static_cast<int>((width - 2 * margin) * step / max_step),
                     height - margin - static_cast<int>((height - 2 * margin) * value));
  };
  auto draw = [&](const char* key, cv::Scalar color) {
    std::vector<cv::Point> pts;
    for (const auto& r : eval_records)
      if (r.contains(key)) pts.push_back(to_px(r.value("step", 0.0), r[key].get<double>()));
    if (pts.size() >= 2) cv::polylines(img, pts, false, color, 2);
    for (const auto& p : pts) cv::circle(img, p, 3, color, cv::FILLED);
  };
  draw("changestar_iou", {0, 160, 0});
  draw("pcc_iou", {0, 0, 220});
  cv::putText(img, "IoU vs step", {margin, margin - 15}, cv::FONT_HERSHEY_SIMPLEX, 0.6, {0, 0, 0});
  cv::putText(img, "change head", {width - 220, margin + 20}, cv::FONT_HERSHEY_SIMPLEX, 0.5,
              {0, 160, 0});
  cv::putText(img, "semantic comparison (PCC)", {width - 220, margin + 40},
              cv::FONT_HERSHEY_SIMPLEX, 0.5, {0, 0, 220});
  cv::putText(img, std::to_string(static_cast<long>(max_step)), {width - margin - 30, height - margin + 20},
              cv::FONT_HERSHEY_SIMPLEX, 0.45, {0, 0, 0});
  cv::putText(img, "1.0", {10, margin + 5}, cv::FONT_HERSHEY_SIMPLEX, 0.45, {0, 0, 0});
  cv::putText(img, "0.0", {10, height - margin}, cv::FONT_HERSHEY_SIMPLEX, 0.45, {0, 0, 0});
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), img)) throw DataError("cannot write " + path.string());
}

void write_error_panels(const fs::path& dir, const std::vector<BitemporalSample>& pairs,
                        const std::vector<std::vector<BinaryMask>>& predictions,
                        std::size_t max_panels) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < pairs.size() && i < max_panels; ++i) {
    const auto& p = pairs[i];
    std::vector<cv::Mat> tiles{raster_image(p.image_t1), raster_image(p.image_t2),
                               mask_image(p.change)};
    for (const auto& preds : predictions)
      tiles.push_back(error_map_image(render_error_map(preds.at(i), p.change)));
    cv::Mat panel;
    cv::hconcat(tiles, panel);
    const auto path = dir / ("panel_" + p.id + ".png");
    if (!cv::imwrite(path.string(), panel)) throw DataError("cannot write " + path.string());
  }
}

}  // namespace star
