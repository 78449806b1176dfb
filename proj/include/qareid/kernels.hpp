#pragma once

#include <cstdint>

#include "qareid/tensor.hpp"

// OpenMP-parallel numeric kernels. Parallel loops only ever write disjoint
// output elements and keep accumulation order fixed inside each element, so
// results are bitwise independent of the thread count.
namespace qareid::kernels {

// x (N,Ci,H,W), w (Co,Ci,kh,kw), b (Co) or empty -> (N,Co,Ho,Wo).
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);

// Gradient w.r.t. the conv input, gather formulation (no write races).
Tensor conv2d_backward_input(const Tensor& dy, const Tensor& w, int stride, int pad,
                             int64_t in_h, int64_t in_w);

// Accumulates into dw/db (callers zero them at batch start).
void conv2d_backward_params(const Tensor& x, const Tensor& dy, int stride, int pad, Tensor& dw,
                            Tensor& db);

// Block-mean mask occupancy + softmax over all out_h*out_w entries
// (max-shifted for stability). q_out must hold out_h*out_w doubles.
void quality_weights(const uint8_t* mask, int mask_h, int mask_w, int out_h, int out_w,
                     double* q_out);

// f is one feature map laid out (C, HW). Writes unit pixel vectors into
// npix (HW, C) and the original norms into norms (HW). Zero-norm pixels
// stay zero.
void normalize_pixels(const double* f, int64_t c, int64_t hw, double* npix, double* norms);

// Quality-weighted cosine similarities for one image pair, with the weights
// rescaled from sum 1 to mean 1 (factor HW per side).
// n1/n2: (HW, C) normalized pixels; q1/q2: HW quality weights; s1: (HW, HW).
void sim1_pair(const double* n1, const double* q1, const double* n2, const double* q2, int64_t hw,
               int64_t c, double* s1);

// Column softmax (over image-1 positions) into r_col, row softmax (over
// image-2 positions) into r_row, elementwise product into s2. All (HW, HW).
// r_col/r_row may be null when only s2 is needed.
void bidirectional_pair(const double* s1, int64_t hw, double* r_col, double* r_row, double* s2);

// Row maxima then column maxima of s2, concatenated into v (2*HW).
// arg_row/arg_col (HW each) receive the attaining indices when non-null.
void bigmp_pair(const double* s2, int64_t hw, double* v, int* arg_row, int* arg_col);

// Per-channel spatial mean: (N,C,H,W) -> (N,C).
Tensor global_avg_pool(const Tensor& x);

// Spreads dy/(H*W) back over spatial positions: (N,C) -> (N,C,H,W).
Tensor global_avg_pool_backward(const Tensor& dy, int64_t h, int64_t w);

}  // namespace qareid::kernels
