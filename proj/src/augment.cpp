#include <opencv2/imgproc.hpp>

#include "star/datasets.hpp"
#include "star/errors.hpp"

namespace star {

namespace {

template <typename Fn>
Raster remap_raster(const Raster& r, int out_h, int out_w, Fn src_of) {
  Raster out(r.channels(), out_h, out_w);
  for (int c = 0; c < r.channels(); ++c)
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x) {
        const auto [sy, sx] = src_of(y, x);
        out.at(c, y, x) = r.at(c, sy, sx);
      }
  return out;
}

template <typename Fn>
BinaryMask remap_mask(const BinaryMask& m, int out_h, int out_w, Fn src_of) {
  BinaryMask out(out_h, out_w);
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      const auto [sy, sx] = src_of(y, x);
      out.at(y, x) = m.at(sy, sx);
    }
  return out;
}

// One counter-clockwise quarter turn of an h×w grid gives a w×h grid with
// out(w-1-x, y) = in(y, x); this maps an output pixel back to its source.
struct QuarterTurn {
  int w;
  std::pair<int, int> operator()(int y, int x) const { return {x, w - 1 - y}; }
};

Raster resize_raster(const Raster& r, int h, int w) {
  Raster out(r.channels(), h, w);
  for (int c = 0; c < r.channels(); ++c) {
    cv::Mat src(r.height(), r.width(), CV_32F,
                const_cast<float*>(r.values().data()) + static_cast<std::size_t>(c) * r.height() * r.width());
    cv::Mat dst(h, w, CV_32F, out.values().data() + static_cast<std::size_t>(c) * h * w);
    cv::resize(src, dst, dst.size(), 0, 0, cv::INTER_LINEAR);
  }
  for (auto& v : out.values()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

BinaryMask resize_mask(const BinaryMask& m, int h, int w) {
  BinaryMask out(h, w);
  cv::Mat src(m.height(), m.width(), CV_8U, const_cast<std::uint8_t*>(m.values().data()));
  cv::Mat dst(h, w, CV_8U, out.values().data());
  cv::resize(src, dst, dst.size(), 0, 0, cv::INTER_NEAREST);
  return out;
}

}  // namespace

void AugmentationConfig::validate() const {
  require(scale_lo > 0 && scale_lo <= 1.0 && 1.0 <= scale_hi,
          "augmentation: scale jitter range must satisfy 0 < lo <= 1 <= hi");
  require(crop > 0, "augmentation: crop size must be positive");
}

Raster flip_horizontal(const Raster& r) {
  const int w = r.width();
  return remap_raster(r, r.height(), w, [w](int y, int x) { return std::pair{y, w - 1 - x}; });
}
BinaryMask flip_horizontal(const BinaryMask& m) {
  const int w = m.width();
  return remap_mask(m, m.height(), w, [w](int y, int x) { return std::pair{y, w - 1 - x}; });
}
Raster flip_vertical(const Raster& r) {
  const int h = r.height();
  return remap_raster(r, h, r.width(), [h](int y, int x) { return std::pair{h - 1 - y, x}; });
}
BinaryMask flip_vertical(const BinaryMask& m) {
  const int h = m.height();
  return remap_mask(m, h, m.width(), [h](int y, int x) { return std::pair{h - 1 - y, x}; });
}

Raster rotate90(const Raster& r, int k) {
  Raster out = r;
  for (int i = 0; i < ((k % 4) + 4) % 4; ++i)
    out = remap_raster(out, out.width(), out.height(), QuarterTurn{out.width()});
  return out;
}

BinaryMask rotate90(const BinaryMask& m, int k) {
  BinaryMask out = m;
  for (int i = 0; i < ((k % 4) + 4) % 4; ++i)
    out = remap_mask(out, out.width(), out.height(), QuarterTurn{out.width()});
  return out;
}

namespace {

/// Applies one random transform to every raster and mask in the stack.
void augment_stack(std::vector<Raster*> images, std::vector<BinaryMask*> masks,
                   const AugmentationConfig& cfg, Rng& rng) {
  cfg.validate();
  const int h0 = images.front()->height(), w0 = images.front()->width();
  for (auto* r : images)
    require(r->height() == h0 && r->width() == w0, "augment: images differ in shape");
  for (auto* m : masks)
    require(m->height() == h0 && m->width() == w0, "augment: image and mask shapes differ");
  auto apply = [&](auto&& fn) {
    for (auto* r : images) *r = fn(*r);
    for (auto* m : masks) *m = fn(*m);
  };
  std::bernoulli_distribution coin(0.5);
  if (cfg.hflip && coin(rng)) apply([](const auto& v) { return flip_horizontal(v); });
  if (cfg.vflip && coin(rng)) apply([](const auto& v) { return flip_vertical(v); });
  if (cfg.rot90) {
    const int k = std::uniform_int_distribution<int>(0, 3)(rng);
    if (k) apply([k](const auto& v) { return rotate90(v, k); });
  }
  if (cfg.scale_lo != 1.0 || cfg.scale_hi != 1.0) {
    const double s = std::uniform_real_distribution<double>(cfg.scale_lo, cfg.scale_hi)(rng);
    const int h = std::max(1, static_cast<int>(std::lround(images.front()->height() * s)));
    const int w = std::max(1, static_cast<int>(std::lround(images.front()->width() * s)));
    if (h != images.front()->height() || w != images.front()->width()) {
      for (auto* r : images) *r = resize_raster(*r, h, w);
      for (auto* m : masks) *m = resize_mask(*m, h, w);
    }
  }
  const int h = images.front()->height(), w = images.front()->width();
  require(cfg.crop <= h && cfg.crop <= w,
          "augment: crop " + std::to_string(cfg.crop) + " exceeds jittered image " +
              std::to_string(h) + "x" + std::to_string(w));
  if (cfg.crop == h && cfg.crop == w) return;
  const int y0 = std::uniform_int_distribution<int>(0, h - cfg.crop)(rng);
  const int x0 = std::uniform_int_distribution<int>(0, w - cfg.crop)(rng);
  const int c = cfg.crop;
  auto shift = [y0, x0](int y, int x) { return std::pair{y + y0, x + x0}; };
  for (auto* r : images) *r = remap_raster(*r, c, c, shift);
  for (auto* m : masks) *m = remap_mask(*m, c, c, shift);
}

}  // namespace

Sample augment(const Sample& sample, const AugmentationConfig& cfg, Rng& rng) {
  Sample out = sample;
  std::vector<BinaryMask*> masks;
  if (out.mask) masks.push_back(&*out.mask);
  augment_stack({&out.image}, masks, cfg, rng);
  return out;
}

BitemporalSample augment(const BitemporalSample& sample, const AugmentationConfig& cfg, Rng& rng) {
  BitemporalSample out = sample;
  std::vector<BinaryMask*> masks{&out.change};
  if (out.semantic_t1) masks.push_back(&*out.semantic_t1);
  if (out.semantic_t2) masks.push_back(&*out.semantic_t2);
  augment_stack({&out.image_t1, &out.image_t2}, masks, cfg, rng);
  return out;
}

}  // namespace star
