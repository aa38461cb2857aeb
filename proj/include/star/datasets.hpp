#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "star/random.hpp"
#include "star/raster.hpp"

namespace star {

struct Sample {
  std::string id;
  Raster image;
  std::optional<BinaryMask> mask;
};

struct BitemporalSample {
  std::string id;
  Raster image_t1;
  Raster image_t2;
  BinaryMask change;
  std::optional<BinaryMask> semantic_t1;
  std::optional<BinaryMask> semantic_t2;
};

// --------------------------------------------------------------------------- PNG I/O

/// 8-bit gray/RGB/RGBA PNG to a [0,1] raster (alpha dropped). Throws DataError.
Raster read_image(const std::filesystem::path& path);
/// Writes 8-bit RGB (3 channels) or gray (1 channel); values are rounded to k/255.
void write_image(const std::filesystem::path& path, const Raster& image);
/// 8-bit single-channel PNG whose values are all in {0,255} or all in {0,1}.
BinaryMask read_mask(const std::filesystem::path& path);
/// Writes {0,255}.
void write_mask(const std::filesystem::path& path, const BinaryMask& mask);

// ---------------------------------------------------------------------------- Corpora

/// Directory of single-temporal tiles:
///   root/images/{id}.png, root/masks/{id}.png, optional root/manifest.json.
/// Opening checks that every image has a mask; pixels are read on demand.
class SingleTemporalDataset {
 public:
  static SingleTemporalDataset open(const std::filesystem::path& root);

  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  Sample load(std::size_t i) const;
  std::vector<Sample> load_all() const;

 private:
  std::filesystem::path root_;
  std::vector<std::string> ids_;
};

/// Directory of co-registered pairs:
///   root/t1/{id}.png, root/t2/{id}.png, root/change/{id}.png,
///   optional root/sem_t1/{id}.png and root/sem_t2/{id}.png, optional manifest.json.
class BitemporalDataset {
 public:
  static BitemporalDataset open(const std::filesystem::path& root);

  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  bool has_semantic() const { return has_semantic_; }
  BitemporalSample load(std::size_t i) const;
  std::vector<BitemporalSample> load_all() const;

 private:
  std::filesystem::path root_;
  std::vector<std::string> ids_;
  bool has_semantic_ = false;
};

inline std::vector<Sample> load_single_temporal(const std::filesystem::path& root) {
  return SingleTemporalDataset::open(root).load_all();
}
inline std::vector<BitemporalSample> load_bitemporal(const std::filesystem::path& root) {
  return BitemporalDataset::open(root).load_all();
}

/// Writes tiles, masks and manifest.json. Samples without masks are rejected.
void write_single_temporal(const std::filesystem::path& root, const std::vector<Sample>& samples,
                           const std::string& split = "train");
void write_bitemporal(const std::filesystem::path& root,
                      const std::vector<BitemporalSample>& samples,
                      const std::string& split = "eval");

// -------------------------------------------------------------------------- Synthetic

enum class ShapeKind { Rectangle, RotatedRectangle, LShape };

/// Procedural "building" scenes: value-noise terrain, polygonal objects, and unlabeled
/// look-alike distractor patches. Evaluation pairs share the terrain layout and differ in
/// illumination, per-object appearance, object set, and distractors.
struct SyntheticSceneSpec {
  int canvas = 128;
  int min_objects = 8;
  int max_objects = 16;
  int min_object_size = 8;
  int max_object_size = 22;
  std::vector<ShapeKind> shapes{ShapeKind::Rectangle, ShapeKind::RotatedRectangle,
                                ShapeKind::LShape};
  int noise_cell = 16;           // value-noise lattice spacing (pixels)
  double noise_amplitude = 0.12;
  double pixel_noise = 0.03;
  double base_color_jitter = 0.08;  // per tile / per time
  double object_jitter = 0.10;      // per object color jitter
  int min_distractors = 1;
  int max_distractors = 4;
  double add_fraction = 0.3;
  double remove_fraction = 0.3;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticData {
  std::vector<Sample> train;
  std::vector<BitemporalSample> eval;
};

/// Deterministic given spec.seed. Change masks are semantic_t1 XOR semantic_t2 from the
/// generator's own object lists; rasters are quantized to 8-bit levels so they survive a
/// PNG round trip unchanged.
SyntheticData generate_synthetic(const SyntheticSceneSpec& spec, int n_train, int n_eval_pairs);

// ------------------------------------------------------------------------ Augmentation

struct AugmentationConfig {
  bool hflip = true;
  bool vflip = true;
  bool rot90 = true;
  double scale_lo = 0.5;
  double scale_hi = 2.0;
  int crop = 64;

  void validate() const;
  static AugmentationConfig identity(int crop) {
    return {false, false, false, 1.0, 1.0, crop};
  }
};

Raster flip_horizontal(const Raster& r);
BinaryMask flip_horizontal(const BinaryMask& m);
Raster flip_vertical(const Raster& r);
BinaryMask flip_vertical(const BinaryMask& m);
/// Counter-clockwise by 90 degrees k times: pixel (y, x) of an H×W grid moves to
/// (W-1-x, y) for each quarter turn.
Raster rotate90(const Raster& r, int k);
BinaryMask rotate90(const BinaryMask& m, int k);

/// Flips, quarter turns, scale jitter (bilinear image, nearest mask), then a random crop.
/// Throws ContractError when the crop exceeds the jittered image.
Sample augment(const Sample& sample, const AugmentationConfig& cfg, Rng& rng);
/// Pair version: both images and every mask receive the same transform.
BitemporalSample augment(const BitemporalSample& sample, const AugmentationConfig& cfg, Rng& rng);

}  // namespace star
