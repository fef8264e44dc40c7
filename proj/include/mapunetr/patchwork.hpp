#pragma once

#include <string>

#include "mapunetr/tensor.hpp"

namespace mapunetr {

// N x L token matrix. L is P*P*C for raw patches, or the embedding width
// once projected. Token t maps to grid cell (t / grid_cols, t % grid_cols).
template <typename T>
struct PatchSequence {
    Tensor<T> tokens;
    size_t n_patches = 0;
    size_t grid_rows = 0, grid_cols = 0;
    size_t patch_size = 0;
};

// Splits an H x W x C image tensor (shape [H,W,C], row-major) into
// non-overlapping P x P patches, enumerated row-major over the patch grid;
// each patch is flattened row-major (row, col, channel).
template <typename T>
PatchSequence<T> patchify(const Tensor<T>& image, size_t p) {
    if (image.ndim() != 3)
        throw ShapeError("patchify: need [HxWxC] image, got " + shape_str(image.shape()));
    const size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
    if (p == 0 || h % p != 0 || w % p != 0)
        throw ShapeError("patchify: patch size " + std::to_string(p) + " does not divide image " +
                         std::to_string(h) + "x" + std::to_string(w));
    const size_t rows = h / p, cols = w / p, n = rows * cols, len = p * p * c;

    std::vector<T> out(n * len);
    for (size_t gr = 0; gr < rows; ++gr)
        for (size_t gc = 0; gc < cols; ++gc) {
            T* tok = out.data() + (gr * cols + gc) * len;
            for (size_t py = 0; py < p; ++py) {
                const T* src = image.data().data() + ((gr * p + py) * w + gc * p) * c;
                std::copy(src, src + p * c, tok + py * p * c);
            }
        }

    auto in = image.node();
    PatchSequence<T> seq;
    seq.tokens = detail::op<T>({n, len}, std::move(out), {image},
                               [in, rows, cols, p, c, w, len](detail::Node<T>& self) {
                                   if (!in->requires_grad) return;
                                   in->ensure_grad();
                                   for (size_t gr = 0; gr < rows; ++gr)
                                       for (size_t gc = 0; gc < cols; ++gc) {
                                           const T* tok = self.grad.data() + (gr * cols + gc) * len;
                                           for (size_t py = 0; py < p; ++py) {
                                               T* dst = in->grad.data() + ((gr * p + py) * w + gc * p) * c;
                                               for (size_t i = 0; i < p * c; ++i)
                                                   dst[i] += tok[py * p * c + i];
                                           }
                                       }
                               });
    seq.n_patches = n;
    seq.grid_rows = rows;
    seq.grid_cols = cols;
    seq.patch_size = p;
    return seq;
}

// Exact inverse of patchify for raw (unprojected) sequences.
template <typename T>
Tensor<T> unpatchify(const PatchSequence<T>& seq, size_t h, size_t w) {
    const size_t p = seq.patch_size;
    const size_t n = seq.n_patches;
    if (p == 0 || h % p != 0 || w % p != 0 || (h / p) * (w / p) != n)
        throw ShapeError("unpatchify: extents " + std::to_string(h) + "x" + std::to_string(w) +
                         " inconsistent with " + std::to_string(n) + " patches of size " +
                         std::to_string(p));
    const size_t len = seq.tokens.dim(1);
    if (len % (p * p) != 0)
        throw ShapeError("unpatchify: token length " + std::to_string(len) +
                         " is not a multiple of P*P");
    const size_t c = len / (p * p);
    const size_t cols = w / p;

    std::vector<T> out(h * w * c);
    for (size_t t = 0; t < n; ++t) {
        size_t gr = t / cols, gc = t % cols;
        const T* tok = seq.tokens.data().data() + t * len;
        for (size_t py = 0; py < p; ++py)
            std::copy(tok + py * p * c, tok + (py + 1) * p * c,
                      out.begin() + ((gr * p + py) * w + gc * p) * c);
    }
    return Tensor<T>::from({h, w, c}, std::move(out));
}

// tokens . W_E + pos; all three differentiable.
template <typename T>
Tensor<T> embed_tokens(const Tensor<T>& raw, const Tensor<T>& w_embed, const Tensor<T>& pos) {
    if (raw.ndim() != 2 || w_embed.ndim() != 2 || raw.dim(1) != w_embed.dim(0))
        throw ShapeError("embed_tokens: tokens " + shape_str(raw.shape()) + " vs projection " +
                         shape_str(w_embed.shape()));
    if (pos.ndim() != 2 || pos.dim(0) != raw.dim(0) || pos.dim(1) != w_embed.dim(1))
        throw ShapeError("embed_tokens: positional table " + shape_str(pos.shape()) +
                         " does not match " + std::to_string(raw.dim(0)) + "x" +
                         std::to_string(w_embed.dim(1)));
    return add(matmul(raw, w_embed), pos);
}

}  // namespace mapunetr
