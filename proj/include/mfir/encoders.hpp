// SPDX-License-Identifier: Apache-2.0
//
// Image augmentation, the residual convolutional image encoder (trained
// from scratch; one parameter set serves reference and candidate images)
// and the stacked self-attention text encoder with multi-granularity
// average pooling.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mfir/corpus.hpp"
#include "mfir/image.hpp"
#include "mfir/nn/layers.hpp"
#include "mfir/rng.hpp"

namespace mfir {

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentParams {
  double flip_prob = 0.5;
  double max_rotation_deg = 15.0;
  double max_translate_frac = 0.1;
  double scale_lo = 0.9;
  double scale_hi = 1.1;

  void validate() const {
    require(flip_prob >= 0.0 && flip_prob <= 1.0, "flip_prob outside [0,1]");
    require(max_rotation_deg >= 0.0 && max_translate_frac >= 0.0,
            "augmentation magnitudes must be nonnegative");
    require(scale_lo <= scale_hi, "scale range is inverted");
    require(scale_lo > 0.0, "scale must be positive");
  }

  static AugmentParams disabled() { return {0.0, 0.0, 0.0, 1.0, 1.0}; }
};

// Random flip / rotation / translation / scale about the image center.
// Output shape equals input shape; uncovered pixels are white. With all
// magnitudes zero this is the exact identity, and a fixed seed makes the
// output bit-reproducible.
inline Image transform_image(const Image& img, const AugmentParams& params,
                             Rng& rng) {
  params.validate();
  const bool flip = rng.bernoulli(params.flip_prob);
  const double theta =
      rng.uniform(-params.max_rotation_deg, params.max_rotation_deg) * M_PI /
      180.0;
  const double tx =
      rng.uniform(-params.max_translate_frac, params.max_translate_frac) *
      img.width;
  const double ty =
      rng.uniform(-params.max_translate_frac, params.max_translate_frac) *
      img.height;
  const double s = rng.uniform(params.scale_lo, params.scale_hi);

  const double cx = (img.width - 1) / 2.0;
  const double cy = (img.height - 1) / 2.0;
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);

  Image out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      // invert translate -> scale -> rotate about the center
      const double dx = (x - cx - tx) / s;
      const double dy = (y - cy - ty) / s;
      double sx = cos_t * dx + sin_t * dy + cx;
      const double sy = -sin_t * dx + cos_t * dy + cy;
      if (flip) sx = (img.width - 1) - sx;

      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double wx = sx - x0;
      const double wy = sy - y0;
      for (int c = 0; c < 3; ++c) {
        auto sample = [&](int yy, int xx) -> double {
          if (xx < 0 || xx >= img.width || yy < 0 || yy >= img.height)
            return 255.0;  // white background
          return img.at(yy, xx, c);
        };
        const double top = (1.0 - wx) * sample(y0, x0) + wx * sample(y0, x0 + 1);
        const double bot =
            (1.0 - wx) * sample(y0 + 1, x0) + wx * sample(y0 + 1, x0 + 1);
        const double v = (1.0 - wy) * top + wy * bot;
        out.at(y, x, c) = static_cast<std::uint8_t>(
            std::clamp(std::lround(v), 0l, 255l));
      }
    }
  }
  return out;
}

// Channels x pixels tensor in roughly unit range; images are resized to
// the encoder's square input size first.
inline nn::Mat image_to_tensor(const Image& img, int input_size) {
  Image resized = resize_image(img, input_size, input_size);
  nn::Mat m(3, static_cast<Eigen::Index>(input_size) * input_size);
  for (int y = 0; y < input_size; ++y)
    for (int x = 0; x < input_size; ++x)
      for (int c = 0; c < 3; ++c)
        m(c, static_cast<Eigen::Index>(y) * input_size + x) =
            (resized.at(y, x, c) / 255.0 - 0.5) / 0.25;
  return m;
}

// ---------------------------------------------------------------------------
// Image encoder

struct StageSpec {
  int channels = 0;
  int blocks = 0;
  int stride = 1;  // first block of the stage
};

struct ImageEncoderConfig {
  int out_dim = 512;
  int input_size = 64;
  std::string arch = "resnet18";  // tiny | resnet18 | resnet152

  int stem_channels() const {
    if (arch == "tiny") return 8;
    return 64;
  }
  bool bottleneck() const { return arch == "resnet152"; }
  std::vector<StageSpec> stages() const {
    if (arch == "tiny") return {{16, 1, 2}, {32, 1, 2}};
    if (arch == "resnet18")
      return {{64, 2, 1}, {128, 2, 2}, {256, 2, 2}, {512, 2, 2}};
    if (arch == "resnet152")
      return {{256, 3, 1}, {512, 8, 2}, {1024, 36, 2}, {2048, 3, 2}};
    fail("unknown image encoder arch '", arch,
         "' (expected tiny|resnet18|resnet152)");
  }
};

class ImageEncoder {
 public:
  ImageEncoder(nn::ParamStore& params, const ImageEncoderConfig& config,
               const std::string& prefix, Rng& rng)
      : config_(config) {
    const auto stages = config.stages();
    stem_.init(params, prefix + ".stem", 3, config.stem_channels(), 3, 2, 1,
               rng);
    stem_bn_.init(params, prefix + ".stem_bn", config.stem_channels());
    int in_ch = config.stem_channels();
    for (std::size_t si = 0; si < stages.size(); ++si) {
      for (int b = 0; b < stages[si].blocks; ++b) {
        Block blk;
        const int stride = b == 0 ? stages[si].stride : 1;
        const int out_ch = stages[si].channels;
        const std::string name =
            strf(prefix, ".s", si, ".b", b);
        if (config.bottleneck()) {
          const int mid = out_ch / 4;
          blk.conv1.init(params, name + ".c1", in_ch, mid, 1, 1, 0, rng);
          blk.bn1.init(params, name + ".bn1", mid);
          blk.conv2.init(params, name + ".c2", mid, mid, 3, stride, 1, rng);
          blk.bn2.init(params, name + ".bn2", mid);
          blk.conv3.init(params, name + ".c3", mid, out_ch, 1, 1, 0, rng);
          blk.bn3.init(params, name + ".bn3", out_ch);
          blk.has_conv3 = true;
        } else {
          blk.conv1.init(params, name + ".c1", in_ch, out_ch, 3, stride, 1,
                         rng);
          blk.bn1.init(params, name + ".bn1", out_ch);
          blk.conv2.init(params, name + ".c2", out_ch, out_ch, 3, 1, 1, rng);
          blk.bn2.init(params, name + ".bn2", out_ch);
        }
        if (stride != 1 || in_ch != out_ch) {
          blk.proj.init(params, name + ".proj", in_ch, out_ch, 1, stride, 0,
                        rng);
          blk.proj_bn.init(params, name + ".proj_bn", out_ch);
          blk.has_proj = true;
        }
        blk.stride = stride;
        blocks_.push_back(blk);
        in_ch = out_ch;
      }
    }
    head_.init(params, prefix + ".head", in_ch, config.out_dim, rng);
  }

  int input_size() const { return config_.input_size; }
  int out_dim() const { return config_.out_dim; }

  // tensors: one 3 x (S*S) matrix per image. Returns out_dim x B.
  nn::Var encode_batch(nn::Tape& t, const std::vector<nn::Mat>& tensors,
                       bool train) const {
    require(!tensors.empty(), "encode_batch: empty batch");
    const int S = config_.input_size;
    for (const auto& m : tensors) {
      require(m.rows() == 3, "image tensor must have 3 channels, got ",
              m.rows());
      require(m.cols() == static_cast<Eigen::Index>(S) * S,
              "image tensor has wrong pixel count");
    }
    const int B = static_cast<int>(tensors.size());
    nn::Mat batch(3, static_cast<Eigen::Index>(B) * S * S);
    for (int b = 0; b < B; ++b)
      batch.middleCols(static_cast<Eigen::Index>(b) * S * S, S * S) =
          tensors[b];

    nn::Var x = t.constant(std::move(batch));
    int h = S, w = S;
    x = stem_(t, x, B, h, w);
    h = nn::conv_out_size(h, 3, 2, 1);
    w = nn::conv_out_size(w, 3, 2, 1);
    x = nn::relu(stem_bn_(t, x, train));

    for (const auto& blk : blocks_) {
      nn::Var skip = x;
      const int h_in = h, w_in = w;
      nn::Var y;
      if (blk.has_conv3) {
        y = nn::relu(blk.bn1(t, blk.conv1(t, x, B, h, w), train));
        y = blk.conv2(t, y, B, h, w);
        h = nn::conv_out_size(h, 3, blk.stride, 1);
        w = nn::conv_out_size(w, 3, blk.stride, 1);
        y = nn::relu(blk.bn2(t, y, train));
        y = blk.bn3(t, blk.conv3(t, y, B, h, w), train);
      } else {
        y = blk.conv1(t, x, B, h, w);
        h = nn::conv_out_size(h, 3, blk.stride, 1);
        w = nn::conv_out_size(w, 3, blk.stride, 1);
        y = nn::relu(blk.bn1(t, y, train));
        y = blk.bn2(t, blk.conv2(t, y, B, h, w), train);
      }
      if (blk.has_proj)
        skip = blk.proj_bn(t, blk.proj(t, skip, B, h_in, w_in), train);
      x = nn::relu(nn::add(y, skip));
    }

    nn::Var pooled = nn::block_mean_cols(x, B);  // C x B
    return head_(t, pooled);                     // out_dim x B
  }

  // Deterministic single-image eval encoding (frozen statistics).
  Eigen::VectorXd encode_eval(const Image& img) const {
    nn::Tape t(false);
    nn::Var e = encode_batch(t, {image_to_tensor(img, config_.input_size)},
                             false);
    return e.val().col(0);
  }

 private:
  struct Block {
    nn::Conv2d conv1, conv2, conv3, proj;
    nn::BatchNorm bn1, bn2, bn3, proj_bn;
    bool has_proj = false;
    bool has_conv3 = false;
    int stride = 1;
  };

  ImageEncoderConfig config_;
  nn::Conv2d stem_;
  nn::BatchNorm stem_bn_;
  std::vector<Block> blocks_;
  nn::Linear head_;
};

// ---------------------------------------------------------------------------
// Text encoder

struct TextEncoderConfig {
  int dim = 300;      // token embedding width
  int blocks = 3;
  int heads = 1;
  int ffn_hidden = 0;  // 0 -> 2 * dim

  int hidden() const { return ffn_hidden > 0 ? ffn_hidden : 2 * dim; }
};

struct TextEncoding {
  nn::Var pooled;                    // dim x 1
  std::vector<nn::Var> block_outputs;  // tokens x dim each
  std::vector<nn::Var> attentions;     // row-stochastic tokens x tokens
};

// Stack of parameterless scaled dot-product self-attention blocks
// (Q = K = V = block input) with a learned output projection and a
// two-layer feed-forward, both residual. The encoding is the mean over
// blocks of each block's token mean.
class TextEncoder {
 public:
  TextEncoder(nn::ParamStore& params, const TextEncoderConfig& config,
              const std::string& prefix, Rng& rng)
      : config_(config) {
    require(config.blocks >= 1, "text encoder needs at least one block");
    require(config.heads >= 1 && config.dim % config.heads == 0,
            "text encoder: dim must be divisible by heads");
    for (int b = 0; b < config.blocks; ++b) {
      BlockParams p;
      const std::string name = strf(prefix, ".blk", b);
      p.out_proj = &params.add(name + ".attn_out", config.dim, config.dim);
      nn::xavier_init(*p.out_proj, rng);
      p.ffn1.init(params, name + ".ffn1", config.dim, config.hidden(), rng);
      p.ffn2.init(params, name + ".ffn2", config.hidden(), config.dim, rng);
      blocks_.push_back(p);
    }
  }

  int dim() const { return config_.dim; }

  TextEncoding encode(nn::Tape& t, nn::Var tokens) const {
    require(tokens.rows() >= 1, "encode_text: empty token sequence");
    require(tokens.cols() == config_.dim, "encode_text: expected width ",
            config_.dim, ", got ", tokens.cols());
    TextEncoding enc;
    const int heads = config_.heads;
    const Eigen::Index dh = config_.dim / heads;
    nn::Var x = tokens;
    std::vector<nn::Var> pooled_per_block;
    for (const auto& blk : blocks_) {
      std::vector<nn::Var> head_outs;
      head_outs.reserve(heads);
      for (int hd = 0; hd < heads; ++hd) {
        nn::Var xh = heads == 1 ? x : nn::middle_cols(x, hd * dh, dh);
        nn::Var logits = nn::scale(nn::matmul(xh, nn::transpose(xh)),
                                   1.0 / std::sqrt(static_cast<double>(dh)));
        nn::Var attn = nn::softmax_rows(logits);
        enc.attentions.push_back(attn);
        head_outs.push_back(nn::matmul(attn, xh));
      }
      nn::Var mixed = heads == 1 ? head_outs[0] : nn::concat_cols(head_outs);
      nn::Var y = nn::add(x, nn::matmul(mixed, t.leaf(*blk.out_proj)));
      nn::Var f = blk.ffn2(t, nn::relu(blk.ffn1(t, y)));
      x = nn::add(y, f);
      enc.block_outputs.push_back(x);
      pooled_per_block.push_back(nn::mean_cols(nn::transpose(x)));  // dim x 1
    }
    enc.pooled = nn::mean_of(t, pooled_per_block);
    return enc;
  }

 private:
  struct BlockParams {
    nn::Parameter* out_proj = nullptr;
    nn::RowLinear ffn1, ffn2;
  };

  TextEncoderConfig config_;
  std::vector<BlockParams> blocks_;
};

}  // namespace mfir
