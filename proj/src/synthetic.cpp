#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <opencv2/imgproc.hpp>

#include "star/datasets.hpp"
#include "star/errors.hpp"

namespace star {

namespace {

using Color = std::array<float, 3>;

enum : std::uint64_t { kTrainStream = 11, kEvalStream = 12 };

constexpr std::array<Color, 3> kTerrain{{{0.30f, 0.42f, 0.25f},
                                         {0.44f, 0.45f, 0.30f},
                                         {0.52f, 0.44f, 0.34f}}};
constexpr std::array<Color, 4> kRoofs{{{0.74f, 0.73f, 0.70f},
                                       {0.64f, 0.36f, 0.30f},
                                       {0.46f, 0.54f, 0.68f},
                                       {0.85f, 0.84f, 0.80f}}};
// Unlabeled look-alikes: bare concrete and soil patches.
constexpr std::array<Color, 2> kDistractors{{{0.68f, 0.66f, 0.62f}, {0.62f, 0.45f, 0.36f}}};

struct Object {
  std::vector<cv::Point> polygon;
  Color color;
};

struct Blob {
  cv::Point center;
  cv::Size axes;
  double angle;
  Color color;
};

/// Terrain that is fixed for a location: noise lattices and base palette entry.
struct Terrain {
  cv::Mat1f luminance;  // canvas x canvas, roughly [-1, 1]
  cv::Mat1f tint;
  Color base;
};

float uniform(Rng& rng, double lo, double hi) {
  return static_cast<float>(std::uniform_real_distribution<double>(lo, hi)(rng));
}

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

cv::Mat1f value_noise(int canvas, int cell, Rng& rng) {
  const int n = canvas / cell + 2;
  cv::Mat1f lattice(n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) lattice(y, x) = uniform(rng, -1.0, 1.0);
  cv::Mat1f out(canvas, canvas);
  for (int y = 0; y < canvas; ++y) {
    const float fy = static_cast<float>(y) / cell;
    const int y0 = static_cast<int>(fy);
    float ty = fy - y0;
    ty = ty * ty * (3 - 2 * ty);
    for (int x = 0; x < canvas; ++x) {
      const float fx = static_cast<float>(x) / cell;
      const int x0 = static_cast<int>(fx);
      float tx = fx - x0;
      tx = tx * tx * (3 - 2 * tx);
      const float a = lattice(y0, x0) * (1 - tx) + lattice(y0, x0 + 1) * tx;
      const float b = lattice(y0 + 1, x0) * (1 - tx) + lattice(y0 + 1, x0 + 1) * tx;
      out(y, x) = a * (1 - ty) + b * ty;
    }
  }
  return out;
}

Color jitter(const Color& c, double amount, Rng& rng) {
  Color out;
  const float common = uniform(rng, -amount, amount);
  for (int i = 0; i < 3; ++i) out[i] = c[i] + common + uniform(rng, -amount / 2, amount / 2);
  return out;
}

std::vector<cv::Point> shape_polygon(ShapeKind kind, cv::Point2f center, float w, float h,
                                     float angle_deg, Rng& rng) {
  std::vector<cv::Point2f> pts;
  switch (kind) {
    case ShapeKind::Rectangle:
      angle_deg = 0;
      [[fallthrough]];
    case ShapeKind::RotatedRectangle:
      pts = {{-w / 2, -h / 2}, {w / 2, -h / 2}, {w / 2, h / 2}, {-w / 2, h / 2}};
      break;
    case ShapeKind::LShape: {
      const float cw = w * uniform(rng, 0.35, 0.6), ch = h * uniform(rng, 0.35, 0.6);
      pts = {{-w / 2, -h / 2},      {w / 2 - cw, -h / 2}, {w / 2 - cw, -h / 2 + ch},
             {w / 2, -h / 2 + ch}, {w / 2, h / 2},       {-w / 2, h / 2}};
      break;
    }
  }
  const double a = angle_deg * std::numbers::pi / 180.0;
  const float ca = static_cast<float>(std::cos(a)), sa = static_cast<float>(std::sin(a));
  std::vector<cv::Point> out;
  for (const auto& p : pts)
    out.emplace_back(static_cast<int>(std::lround(center.x + ca * p.x - sa * p.y)),
                     static_cast<int>(std::lround(center.y + sa * p.x + ca * p.y)));
  return out;
}

Object random_object(const SyntheticSceneSpec& spec, Rng& rng) {
  const auto kind = spec.shapes[uniform_int(rng, 0, static_cast<int>(spec.shapes.size()) - 1)];
  const float w = static_cast<float>(uniform_int(rng, spec.min_object_size, spec.max_object_size));
  const float h = static_cast<float>(uniform_int(rng, spec.min_object_size, spec.max_object_size));
  const cv::Point2f c(uniform(rng, 0, spec.canvas), uniform(rng, 0, spec.canvas));
  const float angle = kind == ShapeKind::LShape ? 90.0f * uniform_int(rng, 0, 3) + uniform(rng, -30, 30)
                                                : uniform(rng, 0, 180);
  Object o;
  o.polygon = shape_polygon(kind, c, w, h, angle, rng);
  o.color = jitter(kRoofs[uniform_int(rng, 0, static_cast<int>(kRoofs.size()) - 1)],
                   spec.object_jitter, rng);
  return o;
}

Blob random_blob(const SyntheticSceneSpec& spec, Rng& rng) {
  Blob b;
  b.center = {uniform_int(rng, 0, spec.canvas - 1), uniform_int(rng, 0, spec.canvas - 1)};
  b.axes = {uniform_int(rng, spec.min_object_size / 2, spec.max_object_size / 2 + 2),
            uniform_int(rng, spec.min_object_size / 2, spec.max_object_size / 2 + 2)};
  b.angle = uniform(rng, 0, 180);
  b.color = jitter(kDistractors[uniform_int(rng, 0, static_cast<int>(kDistractors.size()) - 1)],
                   spec.object_jitter, rng);
  return b;
}

Terrain random_terrain(const SyntheticSceneSpec& spec, Rng& rng) {
  Terrain t;
  t.base = kTerrain[uniform_int(rng, 0, static_cast<int>(kTerrain.size()) - 1)];
  t.luminance = value_noise(spec.canvas, spec.noise_cell, rng);
  t.tint = value_noise(spec.canvas, spec.noise_cell * 2, rng);
  return t;
}

BinaryMask rasterize(const std::vector<Object>& objects, int canvas) {
  cv::Mat1b m = cv::Mat1b::zeros(canvas, canvas);
  for (const auto& o : objects) cv::fillPoly(m, std::vector<std::vector<cv::Point>>{o.polygon}, 1);
  BinaryMask out(canvas, canvas);
  for (int y = 0; y < canvas; ++y)
    for (int x = 0; x < canvas; ++x) out.at(y, x) = m(y, x);
  return out;
}

/// One acquisition of a location: per-time illumination and noise over the shared terrain.
Raster render(const SyntheticSceneSpec& spec, const Terrain& terrain,
              const std::vector<Object>& objects, const std::vector<Blob>& blobs, Rng& rng) {
  const int n = spec.canvas;
  const Color base = jitter(terrain.base, spec.base_color_jitter, rng);
  std::array<cv::Mat1f, 3> planes;
  for (int c = 0; c < 3; ++c) {
    planes[c] = cv::Mat1f(n, n);
    const float tint_gain = c == 1 ? 0.5f : -0.3f;
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x)
        planes[c](y, x) = base[c] + static_cast<float>(spec.noise_amplitude) *
                                        (terrain.luminance(y, x) + tint_gain * terrain.tint(y, x));
  }
  for (const auto& b : blobs)
    for (int c = 0; c < 3; ++c)
      cv::ellipse(planes[c], b.center, b.axes, b.angle, 0, 360, cv::Scalar(b.color[c]), cv::FILLED);
  for (const auto& o : objects) {
    for (int c = 0; c < 3; ++c)
      cv::fillPoly(planes[c], std::vector<std::vector<cv::Point>>{o.polygon}, cv::Scalar(o.color[c]));
  }
  // Illumination: per-channel gain and offset for this acquisition.
  std::array<float, 3> gain, offset;
  const float g = uniform(rng, 0.85, 1.15);
  for (int c = 0; c < 3; ++c) {
    gain[c] = g * uniform(rng, 0.95, 1.05);
    offset[c] = uniform(rng, -0.04, 0.04);
  }
  std::normal_distribution<float> noise(0.0f, static_cast<float>(spec.pixel_noise));
  Raster r(3, n, n);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const float v = std::clamp(planes[c](y, x) * gain[c] + offset[c] + noise(rng), 0.0f, 1.0f);
        r.at(c, y, x) = static_cast<float>(std::lround(v * 255.0f)) / 255.0f;
      }
  return r;
}

std::string tile_id(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%06d", prefix, i);
  return buf;
}

}  // namespace

void SyntheticSceneSpec::validate() const {
  require(canvas >= 8, "synthetic: canvas must be at least 8 pixels");
  require(min_objects >= 0 && max_objects >= min_objects, "synthetic: bad object count range");
  require(min_object_size >= 1 && max_object_size >= min_object_size,
          "synthetic: bad object size range");
  require(!shapes.empty(), "synthetic: no shape family enabled");
  require(noise_cell >= 1, "synthetic: noise cell must be positive");
  require(min_distractors >= 0 && max_distractors >= min_distractors,
          "synthetic: bad distractor count range");
  require(add_fraction >= 0 && add_fraction <= 1, "synthetic: add fraction must be in [0,1]");
  require(remove_fraction >= 0 && remove_fraction <= 1,
          "synthetic: remove fraction must be in [0,1]");
  require(noise_amplitude >= 0 && pixel_noise >= 0 && base_color_jitter >= 0 && object_jitter >= 0,
          "synthetic: noise and jitter must be nonnegative");
}

SyntheticData generate_synthetic(const SyntheticSceneSpec& spec, int n_train, int n_eval_pairs) {
  spec.validate();
  SyntheticData out;
  for (int i = 0; i < n_train; ++i) {
    Rng rng(derive_seed(spec.seed, {kTrainStream, static_cast<std::uint64_t>(i)}));
    const auto terrain = random_terrain(spec, rng);
    std::vector<Object> objects(uniform_int(rng, spec.min_objects, spec.max_objects));
    for (auto& o : objects) o = random_object(spec, rng);
    std::vector<Blob> blobs(uniform_int(rng, spec.min_distractors, spec.max_distractors));
    for (auto& b : blobs) b = random_blob(spec, rng);
    out.train.push_back({tile_id("train_", i), render(spec, terrain, objects, blobs, rng),
                         rasterize(objects, spec.canvas)});
  }
  for (int i = 0; i < n_eval_pairs; ++i) {
    Rng rng(derive_seed(spec.seed, {kEvalStream, static_cast<std::uint64_t>(i)}));
    const auto terrain = random_terrain(spec, rng);
    std::vector<Object> before(uniform_int(rng, spec.min_objects, spec.max_objects));
    for (auto& o : before) o = random_object(spec, rng);
    std::vector<Blob> blobs_before(uniform_int(rng, spec.min_distractors, spec.max_distractors));
    for (auto& b : blobs_before) b = random_blob(spec, rng);

    // t2: drop a fixed share of objects, add new ones, re-jitter the survivors.
    const int count = static_cast<int>(before.size());
    const int removed = static_cast<int>(std::lround(spec.remove_fraction * count));
    const int added = static_cast<int>(std::lround(spec.add_fraction * count));
    std::vector<int> order(count);
    for (int k = 0; k < count; ++k) order[k] = k;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Object> after;
    for (int k = removed; k < count; ++k) {
      Object o = before[order[k]];
      o.color = jitter(o.color, spec.object_jitter / 2, rng);
      after.push_back(std::move(o));
    }
    for (int k = 0; k < added; ++k) after.push_back(random_object(spec, rng));
    std::vector<Blob> blobs_after;
    for (const auto& b : blobs_before)
      if (std::bernoulli_distribution(0.5)(rng)) blobs_after.push_back(b);
    const int fresh = uniform_int(rng, 0, std::max(1, spec.max_distractors / 2));
    for (int k = 0; k < fresh && spec.max_distractors > 0; ++k) blobs_after.push_back(random_blob(spec, rng));

    BitemporalSample s;
    s.id = tile_id("pair_", i);
    s.image_t1 = render(spec, terrain, before, blobs_before, rng);
    s.image_t2 = render(spec, terrain, after, blobs_after, rng);
    s.semantic_t1 = rasterize(before, spec.canvas);
    s.semantic_t2 = rasterize(after, spec.canvas);
    s.change = BinaryMask(spec.canvas, spec.canvas);
    for (std::size_t p = 0; p < s.change.size(); ++p)
      s.change.values()[p] = s.semantic_t1->values()[p] ^ s.semantic_t2->values()[p];
    out.eval.push_back(std::move(s));
  }
  return out;
}

}  // namespace star
