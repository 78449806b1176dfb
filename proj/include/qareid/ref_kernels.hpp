#pragma once

#include <cstdint>
#include <vector>

#include "qareid/tensor.hpp"

// Serial reference implementations, written as literal nested loops over the
// defining formulas. They are kept deliberately naive: the test suites use
// them as independent oracles for the parallel kernels, and the benchmark
// target compares the two. Nothing outside tests/ and bench/ should call
// these on a hot path.
namespace qareid::ref {

// Block-averaged mask occupancy followed by a softmax over all H*W entries.
// mask is H'xW' with values in {0,1}; k = floor(H'/H) = floor(W'/W).
// Rows/columns beyond H*k / W*k are ignored. Returns H*W weights, row-major.
std::vector<double> quality_weights(const std::vector<uint8_t>& mask, int mask_h, int mask_w,
                                    int out_h, int out_w);

// Quality-weighted cosine similarity between every pixel pair of two C x H x W
// feature maps; quadruple loop over (i1,j1,i2,j2) with a fresh cosine each
// time. q1/q2 are H*W quality weights, rescaled to mean 1 inside (factor H*W
// per side). Returns (H*W) x (H*W), row-major with image-1 position as the
// row. Zero-norm pixel vectors get cosine 0.
Tensor pixel_similarity(const Tensor& f1, const std::vector<double>& q1, const Tensor& f2,
                        const std::vector<double>& q2);

// Bidirectional matching map: the product of a softmax over image-1 positions
// (per column) and a softmax over image-2 positions (per row) of sim1.
Tensor bidirectional_similarity(const Tensor& sim1);

// Row maxima followed by column maxima of sim2, concatenated: first n entries
// are per-row maxima, last n entries per-column maxima.
std::vector<double> bi_gmp(const Tensor& sim2);

// Direct convolution: x (N,Ci,H,W), w (Co,Ci,kh,kw), b (Co). Same-padding
// semantics via explicit pad argument; out-of-range taps contribute zero.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);

// Per-channel spatial mean of a (N,C,H,W) tensor -> (N,C).
Tensor global_avg_pool(const Tensor& x);

}  // namespace qareid::ref
