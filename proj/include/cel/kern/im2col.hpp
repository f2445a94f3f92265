#pragma once

#include <cstdint>

// Layout plumbing for GEMM-backed convolution. cols is [C * prod(kernel), P]
// row-major with P the number of output positions; tap order is
// (c, ky, kx) in 2D and (c, kz, ky, kx) in 3D, matching the weight layout.

namespace cel::kern {

template <class T>
void im2col_2d(const T* x, int64_t C, int64_t H, int64_t W, int k, int stride, int dil, int pad,
               int64_t OH, int64_t OW, T* cols) {
  const int64_t P = OH * OW;
  int64_t row = 0;
  for (int64_t c = 0; c < C; ++c) {
    const T* xc = x + c * H * W;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        T* out = cols + row * P;
        for (int64_t oy = 0; oy < OH; ++oy) {
          int64_t iy = oy * stride - pad + static_cast<int64_t>(ky) * dil;
          T* o = out + oy * OW;
          if (iy < 0 || iy >= H) {
            for (int64_t ox = 0; ox < OW; ++ox) o[ox] = T(0);
            continue;
          }
          const T* xr = xc + iy * W;
          for (int64_t ox = 0; ox < OW; ++ox) {
            int64_t ix = ox * stride - pad + static_cast<int64_t>(kx) * dil;
            o[ox] = (ix >= 0 && ix < W) ? xr[ix] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im_2d(const T* cols, int64_t C, int64_t H, int64_t W, int k, int stride, int dil, int pad,
               int64_t OH, int64_t OW, T* x_accum) {
  const int64_t P = OH * OW;
  int64_t row = 0;
  for (int64_t c = 0; c < C; ++c) {
    T* xc = x_accum + c * H * W;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++row) {
        const T* in = cols + row * P;
        for (int64_t oy = 0; oy < OH; ++oy) {
          int64_t iy = oy * stride - pad + static_cast<int64_t>(ky) * dil;
          if (iy < 0 || iy >= H) continue;
          T* xr = xc + iy * W;
          const T* i0 = in + oy * OW;
          for (int64_t ox = 0; ox < OW; ++ox) {
            int64_t ix = ox * stride - pad + static_cast<int64_t>(kx) * dil;
            if (ix >= 0 && ix < W) xr[ix] += i0[ox];
          }
        }
      }
    }
  }
}

template <class T>
void im2col_3d(const T* x, int64_t C, int64_t D, int64_t H, int64_t W, int k, int stride, int dil,
               int pad, int64_t OD, int64_t OH, int64_t OW, T* cols) {
  const int64_t P = OD * OH * OW;
  int64_t row = 0;
  for (int64_t c = 0; c < C; ++c) {
    const T* xc = x + c * D * H * W;
    for (int kz = 0; kz < k; ++kz) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx, ++row) {
          T* out = cols + row * P;
          for (int64_t oz = 0; oz < OD; ++oz) {
            int64_t iz = oz * stride - pad + static_cast<int64_t>(kz) * dil;
            for (int64_t oy = 0; oy < OH; ++oy) {
              int64_t iy = oy * stride - pad + static_cast<int64_t>(ky) * dil;
              T* o = out + (oz * OH + oy) * OW;
              if (iz < 0 || iz >= D || iy < 0 || iy >= H) {
                for (int64_t ox = 0; ox < OW; ++ox) o[ox] = T(0);
                continue;
              }
              const T* xr = xc + (iz * H + iy) * W;
              for (int64_t ox = 0; ox < OW; ++ox) {
                int64_t ix = ox * stride - pad + static_cast<int64_t>(kx) * dil;
                o[ox] = (ix >= 0 && ix < W) ? xr[ix] : T(0);
              }
            }
          }
        }
      }
    }
  }
}

template <class T>
void col2im_3d(const T* cols, int64_t C, int64_t D, int64_t H, int64_t W, int k, int stride,
               int dil, int pad, int64_t OD, int64_t OH, int64_t OW, T* x_accum) {
  const int64_t P = OD * OH * OW;
  int64_t row = 0;
  for (int64_t c = 0; c < C; ++c) {
    T* xc = x_accum + c * D * H * W;
    for (int kz = 0; kz < k; ++kz) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx, ++row) {
          const T* in = cols + row * P;
          for (int64_t oz = 0; oz < OD; ++oz) {
            int64_t iz = oz * stride - pad + static_cast<int64_t>(kz) * dil;
            if (iz < 0 || iz >= D) continue;
            for (int64_t oy = 0; oy < OH; ++oy) {
              int64_t iy = oy * stride - pad + static_cast<int64_t>(ky) * dil;
              if (iy < 0 || iy >= H) continue;
              T* xr = xc + (iz * H + iy) * W;
              const T* i0 = in + (oz * OH + oy) * OW;
              for (int64_t ox = 0; ox < OW; ++ox) {
                int64_t ix = ox * stride - pad + static_cast<int64_t>(kx) * dil;
                if (ix >= 0 && ix < W) xr[ix] += i0[ox];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace cel::kern
