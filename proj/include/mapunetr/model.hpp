#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mapunetr/optim.hpp"
#include "mapunetr/patchwork.hpp"
#include "mapunetr/preprocess.hpp"
#include "mapunetr/rng.hpp"
#include "mapunetr/tensor.hpp"

namespace mapunetr {

struct ModelConfig {
    size_t image_h = 64, image_w = 64;
    size_t in_channels = 3;
    size_t patch_size = 8;
    size_t embed_dim = 64;
    size_t num_heads = 4;
    size_t depth = 6;
    double mlp_ratio = 4.0;
    std::vector<size_t> skip_layers = {1, 3, 5};
    std::vector<size_t> decoder_channels = {64, 32, 16};
    size_t num_classes = 2;

    size_t grid_rows() const { return image_h / patch_size; }
    size_t grid_cols() const { return image_w / patch_size; }
    size_t n_patches() const { return grid_rows() * grid_cols(); }

    void validate() const {
        if (patch_size == 0 || image_h % patch_size != 0 || image_w % patch_size != 0)
            throw ConfigError("model: patch size must divide both image extents");
        if (num_heads == 0 || embed_dim % num_heads != 0)
            throw ConfigError("model: embed_dim must be divisible by num_heads");
        if (depth == 0) throw ConfigError("model: depth must be >= 1");
        if (num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
        for (size_t i = 0; i < skip_layers.size(); ++i) {
            if (skip_layers[i] >= depth)
                throw ConfigError("model: skip layer index out of range (depth " +
                                  std::to_string(depth) + ")");
            if (i > 0 && skip_layers[i] <= skip_layers[i - 1])
                throw ConfigError("model: skip_layers must be strictly increasing");
        }
        if (decoder_channels.empty()) throw ConfigError("model: decoder_channels must be non-empty");
        if (skip_layers.size() > decoder_channels.size())
            throw ConfigError("model: more skip taps than decoder stages");
        if ((size_t(1) << decoder_channels.size()) != patch_size)
            throw ConfigError("model: decoder must upsample by patch_size, need log2(P) stages");
    }
};

// Post-softmax attention of one encoder block: heads x N x N, row-major;
// entry (head, i, j) is the weight token i places on token j.
struct AttentionRecord {
    size_t layer = 0;
    size_t heads = 0;
    size_t n = 0;
    std::vector<double> weights;

    double at(size_t head, size_t i, size_t j) const { return weights[(head * n + i) * n + j]; }
};

template <typename T>
struct EncodeResult {
    Tensor<T> bottleneck;             // N x D
    std::vector<Tensor<T>> skips;     // N x D each, shallow -> deep
    std::vector<AttentionRecord> records;  // one per block
};

template <typename T>
struct ForwardResult {
    Tensor<T> probs;  // K x H x W, per-pixel class distribution
    std::vector<AttentionRecord> records;
};

namespace detail {

template <typename T>
struct BatchNormLayer {
    Tensor<T> gamma, beta, running_mean, running_var;

    explicit BatchNormLayer(size_t channels = 0)
        : gamma(Shape{channels}, T(1)),
          beta(Shape{channels}, T(0)),
          running_mean(Shape{channels}, T(0)),
          running_var(Shape{channels}, T(1)) {}

    Tensor<T> forward(const Tensor<T>& x, BnMode mode) {
        return batch_norm(x, gamma, beta, running_mean, running_var, mode);
    }
};

template <typename T>
struct ConvLayer {
    Tensor<T> kernel, bias;
    size_t stride = 1, pad = 0;

    Tensor<T> forward(const Tensor<T>& x) const {
        return add_channel_bias(conv2d(x, kernel, stride, pad), bias);
    }
};

template <typename T>
struct DeconvLayer {
    Tensor<T> kernel, bias;
    size_t stride = 2;

    Tensor<T> forward(const Tensor<T>& x) const {
        return add_channel_bias(conv_transpose2d(x, kernel, stride), bias);
    }
};

template <typename T>
struct TransformerBlock {
    Tensor<T> ln1_gamma, ln1_beta;
    Tensor<T> wq, wk, wv, wo;
    Tensor<T> ln2_gamma, ln2_beta;
    Tensor<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

// upsample-by-2, skip concat, then two 3x3 conv + BN + ReLU
template <typename T>
struct DecoderStage {
    DeconvLayer<T> up;
    std::vector<DeconvLayer<T>> skip_chain;          // projects the tapped tokens
    std::vector<BatchNormLayer<T>> skip_chain_bn;
    ConvLayer<T> conv1, conv2;
    BatchNormLayer<T> bn1, bn2;
    bool has_skip = false;
};

}  // namespace detail

// The full network: patch embedding, a cascade of pre-norm transformer
// blocks with attention capture, and a skip-tapped convolutional decoder
// ending in a 1x1 convolution and channel softmax.
template <typename T>
class Model {
public:
    explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        build();
    }

    const ModelConfig& config() const { return cfg_; }

    std::vector<Parameter<T>>& params() { return params_; }
    const std::vector<Parameter<T>>& params() const { return params_; }

    Parameter<T>& param(const std::string& name) {
        for (auto& p : params_)
            if (p.name == name) return p;
        throw ContractError("model: no parameter named '" + name + "'");
    }

    void init_weights(Rng& rng) {
        for (auto& p : params_) {
            if (!p.trainable) continue;
            const std::string& n = p.name;
            if (n.ends_with(".bias") || n.ends_with(".beta")) continue;  // zero
            if (n.ends_with(".gamma")) continue;                         // one
            double bound;
            if (n == "embed.pos") {
                bound = 0.02;
            } else {
                bound = 1.0 / std::sqrt(static_cast<double>(fan_in(p.tensor)));
            }
            for (auto& v : p.tensor.data()) v = static_cast<T>(rng.uniform(-bound, bound));
        }
    }

    // image: [H, W, C]
    EncodeResult<T> encode(const Tensor<T>& image) {
        if (image.ndim() != 3 || image.dim(0) != cfg_.image_h || image.dim(1) != cfg_.image_w ||
            image.dim(2) != cfg_.in_channels)
            throw ShapeError("encode: image " + shape_str(image.shape()) + " does not match config");
        PatchSequence<T> seq = patchify(image, cfg_.patch_size);
        Tensor<T> z = embed_tokens(seq.tokens, embed_w_, embed_pos_);

        EncodeResult<T> res;
        size_t tap = 0;
        for (size_t b = 0; b < cfg_.depth; ++b) {
            AttentionRecord rec;
            z = transformer_block(z, blocks_[b], b, rec);
            res.records.push_back(std::move(rec));
            if (tap < cfg_.skip_layers.size() && cfg_.skip_layers[tap] == b) {
                res.skips.push_back(z);
                ++tap;
            }
        }
        res.bottleneck = z;
        return res;
    }

    // bottleneck / skips are N x D token matrices; returns logits [1,K,H,W].
    Tensor<T> decode(const Tensor<T>& bottleneck, const std::vector<Tensor<T>>& skips, BnMode mode) {
        const size_t rows = cfg_.grid_rows(), cols = cfg_.grid_cols();
        Tensor<T> x = tokens_to_grid(bottleneck, rows, cols);
        const size_t n_stages = stages_.size();
        for (size_t s = 0; s < n_stages; ++s) {
            auto& st = stages_[s];
            x = st.up.forward(x);
            if (st.has_skip) {
                // stage 0 consumes the deepest tap
                size_t idx = skips.size() - 1 - s;
                if (idx >= skips.size())
                    throw ShapeError("decode: missing skip for stage " + std::to_string(s));
                Tensor<T> sk = tokens_to_grid(skips[idx], rows, cols);
                for (size_t c = 0; c < st.skip_chain.size(); ++c) {
                    sk = st.skip_chain[c].forward(sk);
                    sk = relu(st.skip_chain_bn[c].forward(sk, mode));
                }
                if (sk.dim(2) != x.dim(2) || sk.dim(3) != x.dim(3))
                    throw ShapeError("decode: skip resolution " + shape_str(sk.shape()) +
                                     " does not match stage output " + shape_str(x.shape()));
                x = concat_channels<T>({x, sk});
            }
            x = relu(st.bn1.forward(st.conv1.forward(x), mode));
            x = relu(st.bn2.forward(st.conv2.forward(x), mode));
        }
        return final_conv_.forward(x);
    }

    ForwardResult<T> forward(const Tensor<T>& image, BnMode mode) {
        EncodeResult<T> enc = encode(image);
        Tensor<T> logits = decode(enc.bottleneck, enc.skips, mode);
        Tensor<T> probs = softmax(logits, 1);
        ForwardResult<T> out;
        out.probs = reshape(probs, {cfg_.num_classes, cfg_.image_h, cfg_.image_w});
        out.records = std::move(enc.records);
        return out;
    }

private:
    static size_t fan_in(const Tensor<T>& t) {
        if (t.ndim() == 2) return t.dim(0);                       // [in, out] projection
        if (t.ndim() == 4) return t.dim(1) * t.dim(2) * t.dim(3);  // conv kernels
        return t.numel();
    }

    Tensor<T>& reg(const std::string& name, Tensor<T> t, bool trainable = true) {
        t.set_requires_grad(trainable);
        params_.push_back({name, std::move(t), trainable});
        return params_.back().tensor;
    }

    void reg_bn(const std::string& prefix, detail::BatchNormLayer<T>& bn) {
        bn.gamma = reg(prefix + ".gamma", std::move(bn.gamma), true);
        bn.beta = reg(prefix + ".beta", std::move(bn.beta), true);
        bn.running_mean = reg(prefix + ".running_mean", std::move(bn.running_mean), false);
        bn.running_var = reg(prefix + ".running_var", std::move(bn.running_var), false);
    }

    void build() {
        const size_t d = cfg_.embed_dim;
        const size_t token_len = cfg_.patch_size * cfg_.patch_size * cfg_.in_channels;
        const size_t n = cfg_.n_patches();
        const size_t m = static_cast<size_t>(cfg_.mlp_ratio * static_cast<double>(d));

        embed_w_ = reg("embed.w", Tensor<T>(Shape{token_len, d}));
        embed_pos_ = reg("embed.pos", Tensor<T>(Shape{n, d}));

        blocks_.resize(cfg_.depth);
        for (size_t b = 0; b < cfg_.depth; ++b) {
            auto& blk = blocks_[b];
            std::string pre = "encoder.block" + std::to_string(b);
            blk.ln1_gamma = reg(pre + ".ln1.gamma", Tensor<T>(Shape{d}, T(1)));
            blk.ln1_beta = reg(pre + ".ln1.beta", Tensor<T>(Shape{d}, T(0)));
            blk.wq = reg(pre + ".wq", Tensor<T>(Shape{d, d}));
            blk.wk = reg(pre + ".wk", Tensor<T>(Shape{d, d}));
            blk.wv = reg(pre + ".wv", Tensor<T>(Shape{d, d}));
            blk.wo = reg(pre + ".wo", Tensor<T>(Shape{d, d}));
            blk.ln2_gamma = reg(pre + ".ln2.gamma", Tensor<T>(Shape{d}, T(1)));
            blk.ln2_beta = reg(pre + ".ln2.beta", Tensor<T>(Shape{d}, T(0)));
            blk.mlp_w1 = reg(pre + ".mlp.w1", Tensor<T>(Shape{d, m}));
            blk.mlp_b1 = reg(pre + ".mlp.b1.bias", Tensor<T>(Shape{m}));
            blk.mlp_w2 = reg(pre + ".mlp.w2", Tensor<T>(Shape{m, d}));
            blk.mlp_b2 = reg(pre + ".mlp.b2.bias", Tensor<T>(Shape{d}));
        }

        const size_t n_stages = cfg_.decoder_channels.size();
        const size_t n_skips = cfg_.skip_layers.size();
        stages_.resize(n_stages);
        size_t in_ch = d;
        for (size_t s = 0; s < n_stages; ++s) {
            auto& st = stages_[s];
            const size_t ch = cfg_.decoder_channels[s];
            std::string pre = "decoder.stage" + std::to_string(s);
            st.up.kernel = reg(pre + ".up.kernel", Tensor<T>(Shape{in_ch, ch, 2, 2}));
            st.up.bias = reg(pre + ".up.bias", Tensor<T>(Shape{ch}));
            st.has_skip = s < n_skips;
            size_t cat_ch = ch;
            if (st.has_skip) {
                // s+1 deconvs bring the token grid to this stage's resolution
                size_t sc_in = d;
                for (size_t c = 0; c <= s; ++c) {
                    detail::DeconvLayer<T> dc;
                    std::string cpre = pre + ".skip" + std::to_string(c);
                    dc.kernel = reg(cpre + ".kernel", Tensor<T>(Shape{sc_in, ch, 2, 2}));
                    dc.bias = reg(cpre + ".bias", Tensor<T>(Shape{ch}));
                    st.skip_chain.push_back(std::move(dc));
                    detail::BatchNormLayer<T> bn(ch);
                    reg_bn(cpre + ".bn", bn);
                    st.skip_chain_bn.push_back(std::move(bn));
                    sc_in = ch;
                }
                cat_ch = ch * 2;
            }
            st.conv1.kernel = reg(pre + ".conv1.kernel", Tensor<T>(Shape{ch, cat_ch, 3, 3}));
            st.conv1.bias = reg(pre + ".conv1.bias", Tensor<T>(Shape{ch}));
            st.conv1.pad = 1;
            st.bn1 = detail::BatchNormLayer<T>(ch);
            reg_bn(pre + ".bn1", st.bn1);
            st.conv2.kernel = reg(pre + ".conv2.kernel", Tensor<T>(Shape{ch, ch, 3, 3}));
            st.conv2.bias = reg(pre + ".conv2.bias", Tensor<T>(Shape{ch}));
            st.conv2.pad = 1;
            st.bn2 = detail::BatchNormLayer<T>(ch);
            reg_bn(pre + ".bn2", st.bn2);
            in_ch = ch;
        }
        final_conv_.kernel = reg("decoder.head.kernel",
                                 Tensor<T>(Shape{cfg_.num_classes, in_ch, 1, 1}));
        final_conv_.bias = reg("decoder.head.bias", Tensor<T>(Shape{cfg_.num_classes}));
    }

    // pre-norm residual: Z1 = Z + MSA(LN(Z)); Z' = Z1 + MLP(LN(Z1))
    Tensor<T> transformer_block(const Tensor<T>& z, detail::TransformerBlock<T>& blk, size_t layer,
                                AttentionRecord& rec) {
        Tensor<T> att_out = msa(layer_norm(z, blk.ln1_gamma, blk.ln1_beta), blk, layer, rec);
        Tensor<T> z1 = add(z, att_out);
        Tensor<T> h = layer_norm(z1, blk.ln2_gamma, blk.ln2_beta);
        h = add_row_bias(matmul(h, blk.mlp_w1), blk.mlp_b1);
        h = gelu(h);
        h = add_row_bias(matmul(h, blk.mlp_w2), blk.mlp_b2);
        return add(z1, h);
    }

    Tensor<T> msa(const Tensor<T>& z, detail::TransformerBlock<T>& blk, size_t layer,
                  AttentionRecord& rec) {
        const size_t n = z.dim(0), d = z.dim(1), h = cfg_.num_heads, dk = d / h;
        Tensor<T> q = matmul(z, blk.wq);
        Tensor<T> k = matmul(z, blk.wk);
        Tensor<T> v = matmul(z, blk.wv);

        rec.layer = layer;
        rec.heads = h;
        rec.n = n;
        rec.weights.assign(h * n * n, 0.0);

        const T inv_sqrt_dk = T(1) / std::sqrt(static_cast<T>(dk));
        std::vector<Tensor<T>> heads;
        for (size_t i = 0; i < h; ++i) {
            Tensor<T> qi = slice_cols(q, i * dk, dk);
            Tensor<T> ki = slice_cols(k, i * dk, dk);
            Tensor<T> vi = slice_cols(v, i * dk, dk);
            Tensor<T> att = softmax(scale(matmul(qi, transpose2d(ki)), inv_sqrt_dk), 1);
            for (size_t e = 0; e < n * n; ++e)
                rec.weights[i * n * n + e] = static_cast<double>(att.data()[e]);
            heads.push_back(matmul(att, vi));
        }
        return matmul(concat_cols(heads), blk.wo);
    }

    ModelConfig cfg_;
    std::vector<Parameter<T>> params_;
    Tensor<T> embed_w_, embed_pos_;
    std::vector<detail::TransformerBlock<T>> blocks_;
    std::vector<detail::DecoderStage<T>> stages_;
    detail::ConvLayer<T> final_conv_;
};

// Per-pixel argmax; ties break toward the lowest class index.
template <typename T>
Mask predict_mask(const Tensor<T>& probs) {
    if (probs.ndim() != 3) throw ShapeError("predict_mask: need [KxHxW], got " + shape_str(probs.shape()));
    const size_t k = probs.dim(0), h = probs.dim(1), w = probs.dim(2);
    Mask m(h, w);
    for (size_t y = 0; y < h; ++y)
        for (size_t x = 0; x < w; ++x) {
            size_t best = 0;
            T bv = probs.data()[y * w + x];
            for (size_t c = 1; c < k; ++c) {
                T v = probs.data()[(c * h + y) * w + x];
                if (v > bv) {
                    bv = v;
                    best = c;
                }
            }
            m.at(y, x) = static_cast<uint8_t>(best);
        }
    return m;
}

// Image (HxWxC floats) -> input tensor [H,W,C].
template <typename T>
Tensor<T> image_to_tensor(const Image& img) {
    std::vector<T> data(img.data.size());
    for (size_t i = 0; i < data.size(); ++i) data[i] = static_cast<T>(img.data[i]);
    return Tensor<T>::from({img.h, img.w, img.c}, std::move(data));
}

}  // namespace mapunetr
