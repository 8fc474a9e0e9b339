#pragma once

// Neural architecture of the translator.
//
// Content encoder   image -> conv(7x7,s1,p3)+IN+maxpool(2x2,s2) three times
//                   (channels base/2*base/4*base), then n_res residual blocks
//                   (conv3x3-IN-relu-conv3x3-IN plus skip). No relu in the
//                   stem. Maxpool argmax indices are recorded per stage.
// Style encoder     conv(7x7,s1)+relu, two conv(4x4,s2)+relu stages, global
//                   average pooling, then a linear map to the style vector.
//                   No normalization anywhere on this path.
// Affine nets       style -> 4*base -> relu -> 4*base -> relu shared trunk,
//                   then separate linear heads for mu and sigma (one
//                   (mu, sigma) pair feeds every AdaIN layer of the decoder).
// Decoder           n_res AdaIN residual blocks, then three upsampling stages
//                   (index-guided unpool, or nearest-neighbor 2x when index
//                   mode is off) + conv(7x7,s1,p3), instance norm between
//                   stages, tanh after the last conv. Channels
//                   4*base -> 2*base -> base -> out.
// Discriminators    one least-squares critic per scale (input, 2x and 4x
//                   average-pooled): d_layers conv(4x4,s2)+leaky-relu(0.2)
//                   stages with doubling channels, then conv(1x1) -> 1 map.
//
// Every component is templated on the scalar type; production uses float,
// gradient checks use double.

#include <array>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "udit/losses.hpp"
#include "udit/rng.hpp"
#include "udit/tape.hpp"

namespace udit::nets {

struct NetHyper {
  int image_size = 64;
  int in_channels = 3;
  int base_channels = 64;
  int style_dim = 8;
  int n_res = 6;
  int stem_kernel = 7;        // content stem + decoder upsampling convs
  int res_kernel = 3;         // residual block convs
  int style_down_kernel = 4;  // style encoder stride-2 convs
  int n_scales = 3;           // discriminator pyramid depth
  int d_base_channels = 64;
  int d_layers = 4;           // stride-2 stages per discriminator
  bool use_pooling_indices = true;

  int content_channels() const { return 4 * base_channels; }

  void validate() const {
    require<ConfigError>(image_size > 0 && image_size % 8 == 0,
                         "image_size must be a positive multiple of 8, got ",
                         image_size);
    require<ConfigError>(in_channels > 0 && base_channels > 0 &&
                             style_dim > 0 && n_res > 0 &&
                             d_base_channels > 0,
                         "network widths must be positive");
    require<ConfigError>(stem_kernel % 2 == 1 && res_kernel % 2 == 1,
                         "stem/res kernels must be odd for same-size padding");
    require<ConfigError>(n_scales >= 1 && d_layers >= 1,
                         "discriminator needs at least one scale and layer");
    // Deepest discriminator scale sees image_size / 2^(n_scales-1); it must
    // survive d_layers halvings.
    int deepest = image_size >> (n_scales - 1);
    require<ConfigError>(deepest >> d_layers >= 1,
                         "image_size ", image_size, " too small for ",
                         n_scales, " scales and ", d_layers,
                         " discriminator layers");
  }
};

// Content representation as tape nodes during a training/translation pass.
// indices run shallow-to-deep (stage 1, 2, 3) and are empty when pooling
// index mode is off.
struct ContentVar {
  int features = -1;
  std::vector<std::shared_ptr<const Array<int32_t>>> indices;
};

// Content representation as plain arrays (inference API, checkpoint-free).
template <typename T>
struct ContentCode {
  Array<T> features;  // [N, 4*base, h/8, w/8]
  std::vector<Array<int32_t>> indices;
};

template <typename T>
class ContentEncoder {
 public:
  ContentEncoder() = default;
  ContentEncoder(const std::string& prefix, const NetHyper& h) : h_(h) {
    int b = h.base_channels;
    int k = h.stem_kernel;
    stem_.emplace_back(prefix + ".conv1", h.in_channels, b, k, 1, k / 2);
    stem_.emplace_back(prefix + ".conv2", b, 2 * b, k, 1, k / 2);
    stem_.emplace_back(prefix + ".conv3", 2 * b, 4 * b, k, 1, k / 2);
    for (int i = 0; i < h.n_res; ++i) {
      res_.emplace_back(prefix + ".res" + std::to_string(i + 1) + "a", 4 * b,
                        4 * b, h.res_kernel, 1, h.res_kernel / 2);
      res_.emplace_back(prefix + ".res" + std::to_string(i + 1) + "b", 4 * b,
                        4 * b, h.res_kernel, 1, h.res_kernel / 2);
    }
  }

  ContentVar forward(ag::Tape<T>& t, int x, bool train = true) {
    ContentVar out;
    for (auto& conv : stem_) {
      x = t.instance_norm(t.conv2d(x, conv, train));
      auto [pooled, idx] = t.maxpool(x);
      x = pooled;
      if (h_.use_pooling_indices) out.indices.push_back(idx);
    }
    for (size_t i = 0; i < res_.size(); i += 2) {
      int hmid = t.relu(t.instance_norm(t.conv2d(x, res_[i], train)));
      int hout = t.instance_norm(t.conv2d(hmid, res_[i + 1], train));
      x = t.add(x, hout);
    }
    out.features = x;
    return out;
  }

  void init(Philox& rng) {
    for (auto& c : stem_) c.init(rng);
    for (auto& c : res_) c.init(rng);
  }
  void collect(std::vector<ag::Param<T>*>& out) {
    for (auto& c : stem_) c.collect(out);
    for (auto& c : res_) c.collect(out);
  }

 private:
  NetHyper h_;
  std::vector<ag::Conv2d<T>> stem_;
  std::vector<ag::Conv2d<T>> res_;
};

template <typename T>
class StyleEncoder {
 public:
  StyleEncoder() = default;
  StyleEncoder(const std::string& prefix, const NetHyper& h) : h_(h) {
    int b = h.base_channels;
    int dk = h.style_down_kernel;
    convs_.emplace_back(prefix + ".conv1", h.in_channels, b, h.stem_kernel, 1,
                        h.stem_kernel / 2);
    convs_.emplace_back(prefix + ".conv2", b, 2 * b, dk, 2, dk == 4 ? 1 : dk / 2);
    convs_.emplace_back(prefix + ".conv3", 2 * b, 4 * b, dk, 2,
                        dk == 4 ? 1 : dk / 2);
    fc_ = ag::Dense<T>(prefix + ".fc", 4 * b, h.style_dim);
  }

  // Returns a [N, style_dim] node.
  int forward(ag::Tape<T>& t, int x, bool train = true) {
    for (auto& conv : convs_) x = t.relu(t.conv2d(x, conv, train));
    return t.linear(t.gap(x), fc_, train);
  }

  void init(Philox& rng) {
    for (auto& c : convs_) c.init(rng);
    fc_.init(rng);
  }
  void collect(std::vector<ag::Param<T>*>& out) {
    for (auto& c : convs_) c.collect(out);
    fc_.collect(out);
  }

 private:
  NetHyper h_;
  std::vector<ag::Conv2d<T>> convs_;
  ag::Dense<T> fc_;
};

// Style -> (mu, sigma) for the decoder's AdaIN layers.
template <typename T>
class AdainNet {
 public:
  AdainNet() = default;
  AdainNet(const std::string& prefix, const NetHyper& h) {
    int c = h.content_channels();
    trunk1_ = ag::Dense<T>(prefix + ".fc1", h.style_dim, c);
    trunk2_ = ag::Dense<T>(prefix + ".fc2", c, c);
    head_mu_ = ag::Dense<T>(prefix + ".mu", c, c);
    head_sigma_ = ag::Dense<T>(prefix + ".sigma", c, c);
  }

  // style [N, style_dim] -> {mu, sigma} each [N, 4*base].
  std::pair<int, int> forward(ag::Tape<T>& t, int style, bool train = true) {
    int h = t.relu(t.linear(style, trunk1_, train));
    h = t.relu(t.linear(h, trunk2_, train));
    return {t.linear(h, head_mu_, train), t.linear(h, head_sigma_, train)};
  }

  void init(Philox& rng) {
    trunk1_.init(rng);
    trunk2_.init(rng);
    head_mu_.init(rng);
    head_sigma_.init(rng);
  }
  void collect(std::vector<ag::Param<T>*>& out) {
    trunk1_.collect(out);
    trunk2_.collect(out);
    head_mu_.collect(out);
    head_sigma_.collect(out);
  }

  ag::Dense<T>& trunk1() { return trunk1_; }
  ag::Dense<T>& head_mu() { return head_mu_; }
  ag::Dense<T>& head_sigma() { return head_sigma_; }

 private:
  ag::Dense<T> trunk1_, trunk2_, head_mu_, head_sigma_;
};

template <typename T>
class Decoder {
 public:
  Decoder() = default;
  Decoder(const std::string& prefix, const NetHyper& h)
      : h_(h), affine_(prefix + ".affine", h) {
    int b = h.base_channels;
    for (int i = 0; i < h.n_res; ++i) {
      res_.emplace_back(prefix + ".res" + std::to_string(i + 1) + "a", 4 * b,
                        4 * b, h.res_kernel, 1, h.res_kernel / 2);
      res_.emplace_back(prefix + ".res" + std::to_string(i + 1) + "b", 4 * b,
                        4 * b, h.res_kernel, 1, h.res_kernel / 2);
    }
    int k = h.stem_kernel;
    up_.emplace_back(prefix + ".up1", 4 * b, 2 * b, k, 1, k / 2);
    up_.emplace_back(prefix + ".up2", 2 * b, b, k, 1, k / 2);
    up_.emplace_back(prefix + ".up3", b, h.in_channels, k, 1, k / 2);
  }

  // content + style node [N, style_dim] -> image node [N, C, H, W].
  int forward(ag::Tape<T>& t, const ContentVar& c, int style,
              bool train = true) {
    auto [mu, sigma] = affine_.forward(t, style, train);
    int x = c.features;
    for (size_t i = 0; i < res_.size(); i += 2) {
      int h = t.relu(t.adain(t.conv2d(x, res_[i], train), mu, sigma));
      h = t.adain(t.conv2d(h, res_[i + 1], train), mu, sigma);
      x = t.add(x, h);
    }
    if (h_.use_pooling_indices) {
      require<StateError>(c.indices.size() == 3,
                          "decoder in pooling-index mode needs 3 recorded "
                          "index maps, got ",
                          c.indices.size());
    }
    for (int stage = 0; stage < 3; ++stage) {
      // Index maps were recorded shallow-to-deep; consume deepest first.
      x = h_.use_pooling_indices ? t.unpool(x, c.indices[size_t(2 - stage)])
                                 : t.upsample2(x);
      x = t.conv2d(x, up_[size_t(stage)], train);
      x = stage < 2 ? t.instance_norm(x) : t.tanh_(x);
    }
    return x;
  }

  void init(Philox& rng) {
    for (auto& c : res_) c.init(rng);
    for (auto& c : up_) c.init(rng);
    affine_.init(rng);
  }
  void collect(std::vector<ag::Param<T>*>& out) {
    for (auto& c : res_) c.collect(out);
    for (auto& c : up_) c.collect(out);
    affine_.collect(out);
  }

  AdainNet<T>& affine() { return affine_; }

 private:
  NetHyper h_;
  AdainNet<T> affine_;
  std::vector<ag::Conv2d<T>> res_;
  std::vector<ag::Conv2d<T>> up_;
};

template <typename T>
class MultiScaleDiscriminator {
 public:
  MultiScaleDiscriminator() = default;
  MultiScaleDiscriminator(const std::string& prefix, const NetHyper& h)
      : h_(h) {
    for (int s = 0; s < h.n_scales; ++s) {
      Scale sc;
      int ic = h.in_channels;
      int oc = h.d_base_channels;
      for (int l = 0; l < h.d_layers; ++l) {
        sc.convs.emplace_back(prefix + ".s" + std::to_string(s + 1) + ".conv" +
                                  std::to_string(l + 1),
                              ic, oc, 4, 2, 1);
        ic = oc;
        oc *= 2;
      }
      sc.head = ag::Conv2d<T>(
          prefix + ".s" + std::to_string(s + 1) + ".head", ic, 1, 1, 1, 0);
      scales_.push_back(std::move(sc));
    }
  }

  // Returns one score-map node per scale (full resolution first).
  std::vector<int> forward(ag::Tape<T>& t, int x, bool train = true) {
    std::vector<int> out;
    for (auto& sc : scales_) {
      int h = x;
      for (auto& conv : sc.convs)
        h = t.leaky_relu(t.conv2d(h, conv, train), T(0.2));
      out.push_back(t.conv2d(h, sc.head, train));
      if (&sc != &scales_.back()) x = t.avgpool2(x);
    }
    return out;
  }

  void init(Philox& rng) {
    for (auto& sc : scales_) {
      for (auto& c : sc.convs) c.init(rng);
      sc.head.init(rng);
    }
  }
  void collect(std::vector<ag::Param<T>*>& out) {
    for (auto& sc : scales_) {
      for (auto& c : sc.convs) c.collect(out);
      sc.head.collect(out);
    }
  }

 private:
  struct Scale {
    std::vector<ag::Conv2d<T>> convs;
    ag::Conv2d<T> head;
  };
  NetHyper h_;
  std::vector<Scale> scales_;
};

// 0 for domain A, 1 for domain B.
int domain_index(char domain);
char domain_letter(int index);

// The full two-domain translator: per-domain encoders, decoders and
// discriminators plus the training hyperparameters they were built with.
template <typename T>
struct TranslationModel {
  NetHyper hyper;
  losses::LossWeights weights;
  uint64_t seed = 0;
  int64_t iteration = 0;

  std::array<ContentEncoder<T>, 2> enc_c;
  std::array<StyleEncoder<T>, 2> enc_s;
  std::array<Decoder<T>, 2> dec;
  std::array<MultiScaleDiscriminator<T>, 2> dis;

  static TranslationModel create(const NetHyper& h,
                                 const losses::LossWeights& w, uint64_t seed) {
    h.validate();
    w.validate();
    TranslationModel m;
    m.hyper = h;
    m.weights = w;
    m.seed = seed;
    for (int d = 0; d < 2; ++d) {
      std::string p(1, domain_letter(d));
      m.enc_c[size_t(d)] = ContentEncoder<T>(p + ".enc_c", h);
      m.enc_s[size_t(d)] = StyleEncoder<T>(p + ".enc_s", h);
      m.dec[size_t(d)] = Decoder<T>(p + ".dec", h);
      m.dis[size_t(d)] = MultiScaleDiscriminator<T>(p + ".dis", h);
    }
    Philox rng(seed, 0);
    for (int d = 0; d < 2; ++d) {
      m.enc_c[size_t(d)].init(rng);
      m.enc_s[size_t(d)].init(rng);
      m.dec[size_t(d)].init(rng);
      m.dis[size_t(d)].init(rng);
    }
    return m;
  }

  std::vector<ag::Param<T>*> generator_params() {
    std::vector<ag::Param<T>*> out;
    for (int d = 0; d < 2; ++d) {
      enc_c[size_t(d)].collect(out);
      enc_s[size_t(d)].collect(out);
      dec[size_t(d)].collect(out);
    }
    return out;
  }
  std::vector<ag::Param<T>*> discriminator_params() {
    std::vector<ag::Param<T>*> out;
    for (int d = 0; d < 2; ++d) dis[size_t(d)].collect(out);
    return out;
  }
  std::vector<ag::Param<T>*> all_params() {
    auto out = generator_params();
    auto d = discriminator_params();
    out.insert(out.end(), d.begin(), d.end());
    return out;
  }

  void check_image(const Array<T>& images) const {
    check_4d(images, "translator input");
    require<ShapeError>(images.dim(1) == hyper.in_channels &&
                            images.dim(2) == hyper.image_size &&
                            images.dim(3) == hyper.image_size,
                        "translator expects [N,", hyper.in_channels, ",",
                        hyper.image_size, ",", hyper.image_size, "], got ",
                        shape_str(images.shape));
  }
};

// i.i.d. standard normal style codes, [n, style_dim], reproducible under the
// engine's (seed, stream).
template <typename T>
Array<T> sample_style(int n, int style_dim, Philox& rng) {
  require<ConfigError>(n >= 1 && style_dim >= 1,
                       "sample_style needs n >= 1, style_dim >= 1");
  Array<T> s({n, style_dim});
  for (auto& v : s.v) v = static_cast<T>(rng.normal());
  return s;
}

// --- inference helpers (plain arrays in, plain arrays out) -----------------

template <typename T>
ContentCode<T> content_encode(TranslationModel<T>& m, int domain,
                              const Array<T>& images) {
  m.check_image(images);
  ag::Tape<T> t;
  t.set_grad_enabled(false);
  ContentVar c = m.enc_c[size_t(domain)].forward(t, t.leaf(images), false);
  ContentCode<T> out;
  out.features = t.val(c.features);
  for (auto& idx : c.indices) out.indices.push_back(*idx);
  return out;
}

template <typename T>
Array<T> style_encode(TranslationModel<T>& m, int domain,
                      const Array<T>& images) {
  m.check_image(images);
  ag::Tape<T> t;
  t.set_grad_enabled(false);
  return t.val(m.enc_s[size_t(domain)].forward(t, t.leaf(images), false));
}

template <typename T>
Array<T> decode(TranslationModel<T>& m, int domain, const ContentCode<T>& c,
                const Array<T>& styles) {
  ag::Tape<T> t;
  t.set_grad_enabled(false);
  ContentVar cv;
  cv.features = t.leaf(c.features);
  for (const auto& idx : c.indices)
    cv.indices.push_back(std::make_shared<Array<int32_t>>(idx));
  int out = m.dec[size_t(domain)].forward(t, cv, t.leaf(styles), false);
  return t.val(out);
}

template <typename T>
std::vector<Array<T>> discriminate_multiscale(TranslationModel<T>& m,
                                              int domain,
                                              const Array<T>& images) {
  m.check_image(images);
  ag::Tape<T> t;
  t.set_grad_enabled(false);
  std::vector<int> ids = m.dis[size_t(domain)].forward(t, t.leaf(images),
                                                       false);
  std::vector<Array<T>> out;
  for (int id : ids) out.push_back(t.val(id));
  return out;
}

}  // namespace udit::nets
