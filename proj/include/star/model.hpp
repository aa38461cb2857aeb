#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "star/nn/layers.hpp"
#include "star/raster.hpp"
#include "star/tensor.hpp"

namespace star {

using nn::Phase;

/// Dense backbone feature at output stride `stride` (h = ceil(H / stride)).
template <typename T>
struct FeatureMap {
  Tensor<T> values;
  int stride = 1;
};

/// Anything that segments: a feature extractor (the ConvNet part) plus a classifier head
/// that maps those features to N×1×H×W logits. ChangeMixin taps `features`.
///
/// Backward follows the forward call order: after `features` and `segment_logits`,
/// call `backward_segment` (returns d feature) and then `backward_features` once with the
/// total feature gradient.
template <typename T>
class BackboneContract {
 public:
  virtual ~BackboneContract() = default;

  virtual std::string name() const = 0;
  virtual int in_channels() const = 0;
  virtual int feature_channels() const = 0;
  virtual int stride() const = 0;

  virtual FeatureMap<T> features(const Tensor<T>& x, Phase phase) = 0;
  virtual Tensor<T> segment_logits(const FeatureMap<T>& f, int out_h, int out_w) = 0;

  virtual Tensor<T> backward_segment(const Tensor<T>& dlogits) = 0;
  virtual void backward_features(const Tensor<T>& dfeature) = 0;

  virtual void collect(std::vector<nn::Param<T>*>& out) = 0;
  virtual void collect_buffers(std::vector<Tensor<T>*>& out) = 0;
  virtual std::size_t param_count() const = 0;

  /// Full forward pass: logits of the whole segmentation model.
  Tensor<T> forward(const Tensor<T>& x, Phase phase) {
    return segment_logits(features(x, phase), x.h(), x.w());
  }
};

/// Small encoder-decoder with output stride 4. The encoder downsamples three times
/// (stride 8) and the decoder fuses the upsampled deepest map with the stride-4 skip.
/// features() is the decoder's last dense layer (2 * base_width channels).
template <typename T>
std::unique_ptr<BackboneContract<T>> build_reference_backbone(int in_channels, int base_width,
                                                              std::uint64_t seed);

struct ChangeMixinConfig {
  int layers = 4;     // N
  int channels = 16;  // d_c
  void validate() const;
};

/// Emits both channel-concatenation orders: (cat(f1, f2), cat(f2, f1)).
template <typename T>
std::pair<FeatureMap<T>, FeatureMap<T>> temporal_swap(const FeatureMap<T>& f1,
                                                      const FeatureMap<T>& f2);

template <typename T>
struct ChangeLogits {
  Tensor<T> fwd;                 // order (t1, t2)
  std::optional<Tensor<T>> bwd;  // order (t2, t1)
};

/// Temporal swap followed by one weight-shared head: N conv3x3-BN-ReLU layers with d_c
/// filters, a 1x1 projection to one channel, and bilinear upsampling to the input size.
/// Both orders go through the head as a single stacked batch.
template <typename T>
class ChangeMixin {
 public:
  ChangeMixin(int feature_channels, ChangeMixinConfig cfg, std::uint64_t seed);

  ChangeLogits<T> forward(const FeatureMap<T>& f1, const FeatureMap<T>& f2, int out_h, int out_w,
                          Phase phase, bool both_orders);
  /// Returns (d f1, d f2). `dbwd` must be given iff the forward pass emitted bwd.
  std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& dfwd,
                                           const std::optional<Tensor<T>>& dbwd);

  void collect(std::vector<nn::Param<T>*>& out);
  void collect_buffers(std::vector<Tensor<T>*>& out);
  std::size_t param_count() const;
  const ChangeMixinConfig& config() const { return cfg_; }

 private:
  int feature_channels_;
  ChangeMixinConfig cfg_;
  std::vector<nn::ConvBnRelu<T>> blocks_;
  nn::Conv2d<T> proj_;
  nn::BilinearResize<T> up_;
  int batch_ = 0;
  bool both_ = false;
};

/// Architecture description, enough to rebuild a model from a checkpoint.
struct ModelSpec {
  std::string backbone = "reference";
  int in_channels = 3;
  int base_width = 8;
  ChangeMixinConfig mixin;
};

template <typename T>
struct ChangeStarOutput {
  Tensor<T> seg_t1;
  Tensor<T> seg_t2;
  Tensor<T> change_fwd;
  std::optional<Tensor<T>> change_bwd;
};

template <typename T>
struct ChangeStarGrads {
  Tensor<T> seg_t1;
  Tensor<T> seg_t2;
  Tensor<T> change_fwd;
  std::optional<Tensor<T>> change_bwd;
};

template <typename T>
class ChangeStar {
 public:
  ChangeStar(std::unique_ptr<BackboneContract<T>> backbone, ChangeMixinConfig cfg,
             std::uint64_t seed);

  /// Weight-shared backbone over x1 and x2 (one stacked batch), segmentation logits per
  /// time and change logits from ChangeMixin. By default bwd is emitted in Train only.
  ChangeStarOutput<T> forward(const Tensor<T>& x1, const Tensor<T>& x2, Phase phase);
  ChangeStarOutput<T> forward(const Tensor<T>& x1, const Tensor<T>& x2, Phase phase,
                              bool both_orders);
  void backward(const ChangeStarGrads<T>& g);

  /// Pseudo pair x2 = x[perm]: the backbone runs once on x and its features and logits
  /// are gathered for the second time. Same math as forward(x, gather(x, perm)), half the cost.
  /// Batch statistics match because the stacked batch holds every sample twice.
  ChangeStarOutput<T> forward_pseudo(const Tensor<T>& x, std::span<const int> perm, Phase phase);
  void backward_pseudo(const ChangeStarGrads<T>& g);

  /// Segmentation only (used by PCC and by segmentation-only training).
  Tensor<T> segment(const Tensor<T>& x, Phase phase);
  void backward_segment(const Tensor<T>& dlogits);

  std::vector<nn::Param<T>*> parameters();
  std::vector<Tensor<T>*> buffers();
  void zero_grad();
  std::size_t param_count() const;

  BackboneContract<T>& backbone() { return *backbone_; }
  ChangeMixin<T>& mixin() { return mixin_; }

 private:
  std::unique_ptr<BackboneContract<T>> backbone_;
  ChangeMixin<T> mixin_;
  int batch_ = 0;
  std::vector<int> perm_;
};

/// Builds backbone + ChangeMixin from a spec. Same seed, same initial weights.
template <typename T>
ChangeStar<T> make_changestar(const ModelSpec& spec, std::uint64_t seed);

/// Post-classification comparison: threshold each segmentation, then XOR.
template <typename T>
MaskBatch pcc_from_logits(const Tensor<T>& seg_t1, const Tensor<T>& seg_t2,
                          double threshold = 0.5);

template <typename T>
MaskBatch pcc_predict(ChangeStar<T>& model, const Tensor<T>& x1, const Tensor<T>& x2,
                      double threshold = 0.5);

}  // namespace star
