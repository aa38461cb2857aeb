#include "star/model.hpp"

#include <cmath>

#include "star/random.hpp"

namespace star {

namespace {

enum : std::uint64_t { kBackboneStream = 1, kMixinStream = 2 };

template <typename T>
class ReferenceBackbone final : public BackboneContract<T> {
 public:
  ReferenceBackbone(int in_channels, int width, std::uint64_t seed)
      : in_(in_channels), width_(width),
        enc1_("enc1", in_channels, width, 3, 2),
        enc2_("enc2", width, 2 * width, 3, 2),
        enc3_("enc3", 2 * width, 4 * width, 3, 2),
        enc4_("enc4", 4 * width, 4 * width, 3, 1),
        dec_("dec", 6 * width, 2 * width, 3, 1),
        cls_("cls", 2 * width, 1, 3, 1, 1, true) {
    require(in_channels > 0 && width > 0, "reference backbone: invalid widths");
    Rng rng(seed);
    enc1_.init(rng);
    enc2_.init(rng);
    enc3_.init(rng);
    enc4_.init(rng);
    dec_.init(rng);
    cls_.init(rng);
  }

  std::string name() const override { return "reference"; }
  int in_channels() const override { return in_; }
  int feature_channels() const override { return 2 * width_; }
  int stride() const override { return 4; }

  FeatureMap<T> features(const Tensor<T>& x, Phase phase) override {
    require(x.c() == in_, "reference backbone: expected " + std::to_string(in_) +
                              " input channels, got " + x.shape_str());
    auto s2 = enc1_.forward(x, phase);
    auto s4 = enc2_.forward(s2, phase);
    auto s8 = enc4_.forward(enc3_.forward(s4, phase), phase);
    skip_channels_ = s4.c();
    auto up = up_.forward(s8, s4.h(), s4.w());
    return {dec_.forward(concat_channels(up, s4), phase), 4};
  }

  Tensor<T> segment_logits(const FeatureMap<T>& f, int out_h, int out_w) override {
    return head_up_.forward(cls_.forward(f.values), out_h, out_w);
  }

  Tensor<T> backward_segment(const Tensor<T>& dlogits) override {
    return cls_.backward(head_up_.backward(dlogits));
  }

  void backward_features(const Tensor<T>& dfeature) override {
    auto dcat = dec_.backward(dfeature);
    const int up_channels = dcat.c() - skip_channels_;
    auto dup = slice_channels(dcat, 0, up_channels);
    auto ds4 = slice_channels(dcat, up_channels, dcat.c());
    auto ds8 = up_.backward(dup);
    add_inplace(ds4, enc3_.backward(enc4_.backward(ds8)));
    enc1_.backward(enc2_.backward(ds4));
  }

  void collect(std::vector<nn::Param<T>*>& out) override {
    enc1_.collect(out);
    enc2_.collect(out);
    enc3_.collect(out);
    enc4_.collect(out);
    dec_.collect(out);
    cls_.collect(out);
  }

  void collect_buffers(std::vector<Tensor<T>*>& out) override {
    enc1_.collect_buffers(out);
    enc2_.collect_buffers(out);
    enc3_.collect_buffers(out);
    enc4_.collect_buffers(out);
    dec_.collect_buffers(out);
  }

  std::size_t param_count() const override {
    return enc1_.param_count() + enc2_.param_count() + enc3_.param_count() +
           enc4_.param_count() + dec_.param_count() + cls_.param_count();
  }

 private:
  int in_, width_;
  nn::ConvBnRelu<T> enc1_, enc2_, enc3_, enc4_, dec_;
  nn::Conv2d<T> cls_;
  nn::BilinearResize<T> up_, head_up_;
  int skip_channels_ = 0;
};

}  // namespace

template <typename T>
std::unique_ptr<BackboneContract<T>> build_reference_backbone(int in_channels, int base_width,
                                                              std::uint64_t seed) {
  return std::make_unique<ReferenceBackbone<T>>(in_channels, base_width, seed);
}

void ChangeMixinConfig::validate() const {
  require(layers >= 1, "ChangeMixin: layer count N must be >= 1");
  require(channels >= 1, "ChangeMixin: filter count d_c must be >= 1");
}

template <typename T>
std::pair<FeatureMap<T>, FeatureMap<T>> temporal_swap(const FeatureMap<T>& f1,
                                                      const FeatureMap<T>& f2) {
  require(f1.values.same_shape(f2.values), "temporal_swap: feature shapes differ " +
                                               f1.values.shape_str() + " vs " +
                                               f2.values.shape_str());
  require(f1.stride == f2.stride, "temporal_swap: feature strides differ");
  return {FeatureMap<T>{concat_channels(f1.values, f2.values), f1.stride},
          FeatureMap<T>{concat_channels(f2.values, f1.values), f1.stride}};
}

// ----------------------------------------------------------------------- ChangeMixin

template <typename T>
ChangeMixin<T>::ChangeMixin(int feature_channels, ChangeMixinConfig cfg, std::uint64_t seed)
    : feature_channels_(feature_channels), cfg_(cfg) {
  cfg_.validate();
  require(feature_channels > 0, "ChangeMixin: feature channel count must be positive");
  Rng rng(seed);
  int in = 2 * feature_channels;
  for (int i = 0; i < cfg_.layers; ++i) {
    blocks_.emplace_back("mixin.block" + std::to_string(i), in, cfg_.channels, 3, 1);
    blocks_.back().init(rng);
    in = cfg_.channels;
  }
  proj_ = nn::Conv2d<T>("mixin.proj", cfg_.channels, 1, 1, 1, 0, true);
  proj_.init(rng);
}

template <typename T>
ChangeLogits<T> ChangeMixin<T>::forward(const FeatureMap<T>& f1, const FeatureMap<T>& f2,
                                        int out_h, int out_w, Phase phase, bool both_orders) {
  require(f1.values.c() == feature_channels_,
          "ChangeMixin: expected " + std::to_string(feature_channels_) + " feature channels");
  auto [a, b] = temporal_swap(f1, f2);
  batch_ = f1.values.n();
  both_ = both_orders;
  Tensor<T> z = both_orders ? concat_batch(a.values, b.values) : std::move(a.values);
  for (auto& blk : blocks_) z = blk.forward(z, phase);
  auto logits = up_.forward(proj_.forward(z), out_h, out_w);
  ChangeLogits<T> out;
  if (both_orders) {
    out.fwd = slice_batch(logits, 0, batch_);
    out.bwd = slice_batch(logits, batch_, 2 * batch_);
  } else {
    out.fwd = std::move(logits);
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> ChangeMixin<T>::backward(const Tensor<T>& dfwd,
                                                         const std::optional<Tensor<T>>& dbwd) {
  require(dbwd.has_value() == both_, "ChangeMixin backward: order count differs from forward");
  Tensor<T> g = both_ ? concat_batch(dfwd, *dbwd) : dfwd;
  g = proj_.backward(up_.backward(g));
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) g = it->backward(g);
  const int d = feature_channels_;
  auto first = slice_batch(g, 0, batch_);
  Tensor<T> d1 = slice_channels(first, 0, d);
  Tensor<T> d2 = slice_channels(first, d, 2 * d);
  if (both_) {
    auto second = slice_batch(g, batch_, 2 * batch_);
    add_inplace(d2, slice_channels(second, 0, d));
    add_inplace(d1, slice_channels(second, d, 2 * d));
  }
  return {std::move(d1), std::move(d2)};
}

template <typename T>
void ChangeMixin<T>::collect(std::vector<nn::Param<T>*>& out) {
  for (auto& blk : blocks_) blk.collect(out);
  proj_.collect(out);
}

template <typename T>
void ChangeMixin<T>::collect_buffers(std::vector<Tensor<T>*>& out) {
  for (auto& blk : blocks_) blk.collect_buffers(out);
}

template <typename T>
std::size_t ChangeMixin<T>::param_count() const {
  std::size_t n = proj_.param_count();
  for (const auto& blk : blocks_) n += blk.param_count();
  return n;
}

// ------------------------------------------------------------------------ ChangeStar

template <typename T>
ChangeStar<T>::ChangeStar(std::unique_ptr<BackboneContract<T>> backbone, ChangeMixinConfig cfg,
                          std::uint64_t seed)
    : backbone_(std::move(backbone)),
      mixin_(backbone_->feature_channels(), cfg, derive_seed(seed, {kMixinStream})) {}

template <typename T>
ChangeStarOutput<T> ChangeStar<T>::forward(const Tensor<T>& x1, const Tensor<T>& x2,
                                           Phase phase) {
  return forward(x1, x2, phase, phase == Phase::Train);
}

template <typename T>
ChangeStarOutput<T> ChangeStar<T>::forward(const Tensor<T>& x1, const Tensor<T>& x2, Phase phase,
                                           bool both_orders) {
  require(x1.same_shape(x2), "ChangeStar: bitemporal inputs differ in shape " + x1.shape_str() +
                                 " vs " + x2.shape_str());
  batch_ = x1.n();
  auto f = backbone_->features(concat_batch(x1, x2), phase);
  auto seg = backbone_->segment_logits(f, x1.h(), x1.w());
  FeatureMap<T> f1{slice_batch(f.values, 0, batch_), f.stride};
  FeatureMap<T> f2{slice_batch(f.values, batch_, 2 * batch_), f.stride};
  auto change = mixin_.forward(f1, f2, x1.h(), x1.w(), phase, both_orders);
  return {slice_batch(seg, 0, batch_), slice_batch(seg, batch_, 2 * batch_),
          std::move(change.fwd), std::move(change.bwd)};
}

template <typename T>
void ChangeStar<T>::backward(const ChangeStarGrads<T>& g) {
  auto [d1, d2] = mixin_.backward(g.change_fwd, g.change_bwd);
  auto dfeat = concat_batch(d1, d2);
  add_inplace(dfeat, backbone_->backward_segment(concat_batch(g.seg_t1, g.seg_t2)));
  backbone_->backward_features(dfeat);
}

namespace {

// Adjoint of gather_batch: dst[perm[i]] += src[i].
template <typename T>
void scatter_add(Tensor<T>& dst, const Tensor<T>& src, std::span<const int> perm) {
  for (std::size_t i = 0; i < perm.size(); ++i) {
    auto s = src.sample(static_cast<int>(i));
    T* d = dst.sample(perm[i]).data();
    for (std::size_t j = 0; j < s.size(); ++j) d[j] += s[j];
  }
}

}  // namespace

template <typename T>
ChangeStarOutput<T> ChangeStar<T>::forward_pseudo(const Tensor<T>& x, std::span<const int> perm,
                                                  Phase phase) {
  require(static_cast<int>(perm.size()) == x.n(), "forward_pseudo: permutation length mismatch");
  batch_ = x.n();
  perm_.assign(perm.begin(), perm.end());
  auto f = backbone_->features(x, phase);
  auto seg = backbone_->segment_logits(f, x.h(), x.w());
  FeatureMap<T> f2{gather_batch(f.values, perm), f.stride};
  auto change = mixin_.forward(f, f2, x.h(), x.w(), phase, phase == Phase::Train);
  auto seg2 = gather_batch(seg, perm);
  return {std::move(seg), std::move(seg2), std::move(change.fwd), std::move(change.bwd)};
}

template <typename T>
void ChangeStar<T>::backward_pseudo(const ChangeStarGrads<T>& g) {
  require(!perm_.empty(), "backward_pseudo without forward_pseudo");
  auto [dfeat, d2] = mixin_.backward(g.change_fwd, g.change_bwd);
  scatter_add(dfeat, d2, perm_);
  Tensor<T> dseg = g.seg_t1;
  scatter_add(dseg, g.seg_t2, perm_);
  add_inplace(dfeat, backbone_->backward_segment(dseg));
  backbone_->backward_features(dfeat);
}

template <typename T>
Tensor<T> ChangeStar<T>::segment(const Tensor<T>& x, Phase phase) {
  return backbone_->forward(x, phase);
}

template <typename T>
void ChangeStar<T>::backward_segment(const Tensor<T>& dlogits) {
  backbone_->backward_features(backbone_->backward_segment(dlogits));
}

template <typename T>
std::vector<nn::Param<T>*> ChangeStar<T>::parameters() {
  std::vector<nn::Param<T>*> out;
  backbone_->collect(out);
  mixin_.collect(out);
  return out;
}

template <typename T>
std::vector<Tensor<T>*> ChangeStar<T>::buffers() {
  std::vector<Tensor<T>*> out;
  backbone_->collect_buffers(out);
  mixin_.collect_buffers(out);
  return out;
}

template <typename T>
void ChangeStar<T>::zero_grad() {
  for (auto* p : parameters()) p->grad.fill(T(0));
}

template <typename T>
std::size_t ChangeStar<T>::param_count() const {
  return backbone_->param_count() + mixin_.param_count();
}

template <typename T>
ChangeStar<T> make_changestar(const ModelSpec& spec, std::uint64_t seed) {
  require(spec.backbone == "reference", "unknown backbone '" + spec.backbone + "'");
  return ChangeStar<T>(
      build_reference_backbone<T>(spec.in_channels, spec.base_width,
                                  derive_seed(seed, {kBackboneStream})),
      spec.mixin, seed);
}

template <typename T>
MaskBatch pcc_from_logits(const Tensor<T>& seg_t1, const Tensor<T>& seg_t2, double threshold) {
  require(seg_t1.same_shape(seg_t2), "pcc: segmentation shapes differ");
  auto a = binarize_logits(seg_t1, threshold);
  auto b = binarize_logits(seg_t2, threshold);
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto& va = a[i].values();
    const auto& vb = b[i].values();
    for (std::size_t p = 0; p < va.size(); ++p) va[p] ^= vb[p];
  }
  return a;
}

template <typename T>
MaskBatch pcc_predict(ChangeStar<T>& model, const Tensor<T>& x1, const Tensor<T>& x2,
                      double threshold) {
  require(x1.same_shape(x2), "pcc_predict: inputs differ in shape");
  auto s1 = model.segment(x1, Phase::Infer);
  auto s2 = model.segment(x2, Phase::Infer);
  return pcc_from_logits(s1, s2, threshold);
}

#define STAR_INSTANTIATE(T)                                                                  \
  template std::unique_ptr<BackboneContract<T>> build_reference_backbone<T>(int, int,        \
                                                                            std::uint64_t);  \
  template std::pair<FeatureMap<T>, FeatureMap<T>> temporal_swap<T>(const FeatureMap<T>&,    \
                                                                    const FeatureMap<T>&);   \
  template class ChangeMixin<T>;                                                             \
  template class ChangeStar<T>;                                                              \
  template ChangeStar<T> make_changestar<T>(const ModelSpec&, std::uint64_t);                \
  template MaskBatch pcc_from_logits<T>(const Tensor<T>&, const Tensor<T>&, double);         \
  template MaskBatch pcc_predict<T>(ChangeStar<T>&, const Tensor<T>&, const Tensor<T>&, double);

STAR_INSTANTIATE(float)
STAR_INSTANTIATE(double)

#undef STAR_INSTANTIATE

}  // namespace star
