#include "pertnet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace pertnet {

namespace {

/// f64 dot product of two float ranges with four independent accumulator
/// chains; the summation order is fixed by the code, not the hardware.
double dot64(const float* a, const float* b, int n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += static_cast<double>(a[i]) * static_cast<double>(b[i]);
        s1 += static_cast<double>(a[i + 1]) * static_cast<double>(b[i + 1]);
        s2 += static_cast<double>(a[i + 2]) * static_cast<double>(b[i + 2]);
        s3 += static_cast<double>(a[i + 3]) * static_cast<double>(b[i + 3]);
    }
    double s = (s0 + s1) + (s2 + s3);
    for (; i < n; ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return s;
}

/// Same as dot64 but b is read with a stride.
double dot64_strided(const float* a, const float* b, int n, int bstride) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += static_cast<double>(a[i]) * static_cast<double>(b[i * bstride]);
        s1 += static_cast<double>(a[i + 1]) * static_cast<double>(b[(i + 1) * bstride]);
        s2 += static_cast<double>(a[i + 2]) * static_cast<double>(b[(i + 2) * bstride]);
        s3 += static_cast<double>(a[i + 3]) * static_cast<double>(b[(i + 3) * bstride]);
    }
    double s = (s0 + s1) + (s2 + s3);
    for (; i < n; ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i * bstride]);
    return s;
}

double sum64(const float* a, int n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += static_cast<double>(a[i]);
        s1 += static_cast<double>(a[i + 1]);
        s2 += static_cast<double>(a[i + 2]);
        s3 += static_cast<double>(a[i + 3]);
    }
    double s = (s0 + s1) + (s2 + s3);
    for (; i < n; ++i) s += static_cast<double>(a[i]);
    return s;
}

int ceil_div(int a, int b) { return (a + b - 1) / b; }

constexpr float kProbClamp = 1e-12f;

// ---------------------------------------------------------------------------
// 2D convolution kernels. x [C,H,W], w [O,C,KY,KX], out [O,H,W].
// Tap offset oy = dy - KY/2; the y range keeps y + oy inside [0,H).

struct Geom2 {
    int C, H, W, O, KY, KX;
};

void conv2d_fwd(const Geom2& g, const float* x, const float* w, const float* b, float* out) {
    const int HW = g.H * g.W, PY = g.KY / 2, PX = g.KX / 2;
    for (int o = 0; o < g.O; ++o) std::fill(out + o * HW, out + (o + 1) * HW, b[o]);
    for (int o = 0; o < g.O; ++o) {
        for (int c = 0; c < g.C; ++c) {
            const float* wp = w + (o * g.C + c) * g.KY * g.KX;
            for (int dy = 0; dy < g.KY; ++dy) {
                const int oy = dy - PY;
                const int y0 = std::max(0, -oy), y1 = std::min(g.H, g.H - oy);
                for (int dx = 0; dx < g.KX; ++dx) {
                    const float wv = wp[dy * g.KX + dx];
                    const int ox = dx - PX;
                    const int x0 = std::max(0, -ox), x1 = std::min(g.W, g.W - ox);
                    for (int y = y0; y < y1; ++y) {
                        float* orow = out + o * HW + y * g.W;
                        const float* irow = x + c * HW + (y + oy) * g.W + ox;
                        for (int xx = x0; xx < x1; ++xx) orow[xx] += wv * irow[xx];
                    }
                }
            }
        }
    }
}

void conv2d_bwd_input(const Geom2& g, const float* gout, const float* w, float* gin) {
    const int HW = g.H * g.W, PY = g.KY / 2, PX = g.KX / 2;
    for (int o = 0; o < g.O; ++o) {
        for (int c = 0; c < g.C; ++c) {
            const float* wp = w + (o * g.C + c) * g.KY * g.KX;
            for (int dy = 0; dy < g.KY; ++dy) {
                const int oy = dy - PY;
                const int y0 = std::max(0, -oy), y1 = std::min(g.H, g.H - oy);
                for (int dx = 0; dx < g.KX; ++dx) {
                    const float wv = wp[dy * g.KX + dx];
                    const int ox = dx - PX;
                    const int x0 = std::max(0, -ox), x1 = std::min(g.W, g.W - ox);
                    for (int y = y0; y < y1; ++y) {
                        const float* grow = gout + o * HW + y * g.W;
                        float* girow = gin + c * HW + (y + oy) * g.W + ox;
                        for (int xx = x0; xx < x1; ++xx) girow[xx] += wv * grow[xx];
                    }
                }
            }
        }
    }
}

void conv2d_bwd_weight(const Geom2& g, const float* gout, const float* x, float* gw) {
    const int HW = g.H * g.W, PY = g.KY / 2, PX = g.KX / 2;
    for (int o = 0; o < g.O; ++o) {
        for (int c = 0; c < g.C; ++c) {
            float* gwp = gw + (o * g.C + c) * g.KY * g.KX;
            for (int dy = 0; dy < g.KY; ++dy) {
                const int oy = dy - PY;
                const int y0 = std::max(0, -oy), y1 = std::min(g.H, g.H - oy);
                for (int dx = 0; dx < g.KX; ++dx) {
                    const int ox = dx - PX;
                    const int x0 = std::max(0, -ox), x1 = std::min(g.W, g.W - ox);
                    double acc = 0.0;
                    for (int y = y0; y < y1; ++y) {
                        const float* grow = gout + o * HW + y * g.W;
                        const float* irow = x + c * HW + (y + oy) * g.W + ox;
                        acc += dot64(irow + x0, grow + x0, x1 - x0);
                    }
                    gwp[dy * g.KX + dx] += static_cast<float>(acc);
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// 3D convolution kernels. x [C,T,H,W], w [O,C,KT,KY,KX], out [O,T,H,W].

struct Geom3 {
    int C, T, H, W, O, KT, KY, KX;
};

void conv3d_fwd(const Geom3& g, const float* x, const float* w, const float* b, float* out) {
    const int HW = g.H * g.W, THW = g.T * HW;
    const int PT = g.KT / 2, PY = g.KY / 2, PX = g.KX / 2;
    for (int o = 0; o < g.O; ++o) std::fill(out + o * THW, out + (o + 1) * THW, b[o]);
    for (int o = 0; o < g.O; ++o) {
        for (int c = 0; c < g.C; ++c) {
            const float* wp = w + (o * g.C + c) * g.KT * g.KY * g.KX;
            for (int dt = 0; dt < g.KT; ++dt) {
                const int ot = dt - PT;
                const int t0 = std::max(0, -ot), t1 = std::min(g.T, g.T - ot);
                for (int dy = 0; dy < g.KY; ++dy) {
                    const int oy = dy - PY;
                    const int y0 = std::max(0, -oy), y1 = std::min(g.H, g.H - oy);
                    for (int dx = 0; dx < g.KX; ++dx) {
                        const float wv = wp[(dt * g.KY + dy) * g.KX + dx];
                        const int ox = dx - PX;
                        const int x0 = std::max(0, -ox), x1 = std::min(g.W, g.W - ox);
                        for (int tt = t0; tt < t1; ++tt) {
                            for (int y = y0; y < y1; ++y) {
                                float* orow = out + o * THW + tt * HW + y * g.W;
                                const float* irow = x + c * THW + (tt + ot) * HW + (y + oy) * g.W + ox;
                                for (int xx = x0; xx < x1; ++xx) orow[xx] += wv * irow[xx];
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv3d_bwd_input(const Geom3& g, const float* gout, const float* w, float* gin) {
    const int HW = g.H * g.W, THW = g.T * HW;
    const int PT = g.KT / 2, PY = g.KY / 2, PX = g.KX / 2;
    for (int o = 0; o < g.O; ++o) {
        for (int c = 0; c < g.C; ++c) {
            const float* wp = w + (o * g.C + c) * g.KT * g.KY * g.KX;
            for (int dt = 0; dt < g.KT; ++dt) {
                const int ot = dt - PT;
                const int t0 = std::max(0, -ot), t1 = std::min(g.T, g.T - ot);
                for (int dy = 0; dy < g.KY; ++dy) {
                    const int oy = dy - PY;
                    const int y0 = std::max(0, -oy), y1 = std::min(g.H, g.H - oy);
                    for (int dx = 0; dx < g.KX; ++dx) {
                        const float wv = wp[(dt * g.KY + dy) * g.KX + dx];
                        const int ox = dx - PX;
                        const int x0 = std::max(0, -ox), x1 = std::min(g.W, g.W - ox);
                        for (int tt = t0; tt < t1; ++tt) {
                            for (int y = y0; y < y1; ++y) {
                                const float* grow = gout + o * THW + tt * HW + y * g.W;
                                float* girow = gin + c * THW + (tt + ot) * HW + (y + oy) * g.W + ox;
                                for (int xx = x0; xx < x1; ++xx) girow[xx] += wv * grow[xx];
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv3d_bwd_weight(const Geom3& g, const float* gout, const float* x, float* gw) {
    const int HW = g.H * g.W, THW = g.T * HW;
    const int PT = g.KT / 2, PY = g.KY / 2, PX = g.KX / 2;
    for (int o = 0; o < g.O; ++o) {
        for (int c = 0; c < g.C; ++c) {
            float* gwp = gw + (o * g.C + c) * g.KT * g.KY * g.KX;
            for (int dt = 0; dt < g.KT; ++dt) {
                const int ot = dt - PT;
                const int t0 = std::max(0, -ot), t1 = std::min(g.T, g.T - ot);
                for (int dy = 0; dy < g.KY; ++dy) {
                    const int oy = dy - PY;
                    const int y0 = std::max(0, -oy), y1 = std::min(g.H, g.H - oy);
                    for (int dx = 0; dx < g.KX; ++dx) {
                        const int ox = dx - PX;
                        const int x0 = std::max(0, -ox), x1 = std::min(g.W, g.W - ox);
                        double acc = 0.0;
                        for (int tt = t0; tt < t1; ++tt) {
                            for (int y = y0; y < y1; ++y) {
                                const float* grow = gout + o * THW + tt * HW + y * g.W;
                                const float* irow = x + c * THW + (tt + ot) * HW + (y + oy) * g.W + ox;
                                acc += dot64(irow + x0, grow + x0, x1 - x0);
                            }
                        }
                        gwp[(dt * g.KY + dy) * g.KX + dx] += static_cast<float>(acc);
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Transposed convolution, 2D. x [C,h,w], wt [C,O,KY,KX], out [O,h*sy,w*sx].
// Output element (o, y*sy+dy-PY, x*sx+dx-PX) accumulates wt[c,o,dy,dx]*x[c,y,x].

struct TGeom2 {
    int C, h, w, O, KY, KX, sy, sx;
    int H() const { return h * sy; }
    int W() const { return w * sx; }
};

/// Source index range [i0,i1) such that i*stride + off lands in [0,extent).
void src_range(int off, int stride, int nsrc, int extent, int& i0, int& i1) {
    i0 = std::max(0, ceil_div(-off, stride));
    i1 = std::min(nsrc, off < extent ? (extent - 1 - off) / stride + 1 : 0);
}

void tconv2d_fwd(const TGeom2& g, const float* x, const float* wt, const float* b, float* out) {
    const int H = g.H(), W = g.W(), HW = H * W, hw = g.h * g.w;
    const int PY = g.KY / 2, PX = g.KX / 2;
    for (int o = 0; o < g.O; ++o) std::fill(out + o * HW, out + (o + 1) * HW, b[o]);
    for (int c = 0; c < g.C; ++c) {
        for (int o = 0; o < g.O; ++o) {
            const float* wp = wt + (c * g.O + o) * g.KY * g.KX;
            for (int dy = 0; dy < g.KY; ++dy) {
                int y0, y1;
                src_range(dy - PY, g.sy, g.h, H, y0, y1);
                for (int dx = 0; dx < g.KX; ++dx) {
                    const float wv = wp[dy * g.KX + dx];
                    int x0, x1;
                    src_range(dx - PX, g.sx, g.w, W, x0, x1);
                    for (int y = y0; y < y1; ++y) {
                        const float* irow = x + c * hw + y * g.w;
                        float* trow = out + o * HW + (y * g.sy + dy - PY) * W + (dx - PX);
                        for (int xx = x0; xx < x1; ++xx) trow[xx * g.sx] += wv * irow[xx];
                    }
                }
            }
        }
    }
}

void tconv2d_bwd_input(const TGeom2& g, const float* gout, const float* wt, float* gin) {
    const int H = g.H(), W = g.W(), HW = H * W, hw = g.h * g.w;
    const int PY = g.KY / 2, PX = g.KX / 2;
    for (int c = 0; c < g.C; ++c) {
        for (int o = 0; o < g.O; ++o) {
            const float* wp = wt + (c * g.O + o) * g.KY * g.KX;
            for (int dy = 0; dy < g.KY; ++dy) {
                int y0, y1;
                src_range(dy - PY, g.sy, g.h, H, y0, y1);
                for (int dx = 0; dx < g.KX; ++dx) {
                    const float wv = wp[dy * g.KX + dx];
                    int x0, x1;
                    src_range(dx - PX, g.sx, g.w, W, x0, x1);
                    for (int y = y0; y < y1; ++y) {
                        float* girow = gin + c * hw + y * g.w;
                        const float* grow = gout + o * HW + (y * g.sy + dy - PY) * W + (dx - PX);
                        for (int xx = x0; xx < x1; ++xx) girow[xx] += wv * grow[xx * g.sx];
                    }
                }
            }
        }
    }
}

void tconv2d_bwd_weight(const TGeom2& g, const float* gout, const float* x, float* gwt) {
    const int H = g.H(), W = g.W(), HW = H * W, hw = g.h * g.w;
    const int PY = g.KY / 2, PX = g.KX / 2;
    for (int c = 0; c < g.C; ++c) {
        for (int o = 0; o < g.O; ++o) {
            float* gwp = gwt + (c * g.O + o) * g.KY * g.KX;
            for (int dy = 0; dy < g.KY; ++dy) {
                int y0, y1;
                src_range(dy - PY, g.sy, g.h, H, y0, y1);
                for (int dx = 0; dx < g.KX; ++dx) {
                    int x0, x1;
                    src_range(dx - PX, g.sx, g.w, W, x0, x1);
                    double acc = 0.0;
                    for (int y = y0; y < y1; ++y) {
                        const float* irow = x + c * hw + y * g.w;
                        const float* grow = gout + o * HW + (y * g.sy + dy - PY) * W + (dx - PX);
                        acc += dot64_strided(irow + x0, grow + x0 * g.sx, x1 - x0, g.sx);
                    }
                    gwp[dy * g.KX + dx] += static_cast<float>(acc);
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Transposed convolution, 3D. x [C,t,h,w], wt [C,O,KT,KY,KX].

struct TGeom3 {
    int C, t, h, w, O, KT, KY, KX, st, sy, sx;
    int T() const { return t * st; }
    int H() const { return h * sy; }
    int W() const { return w * sx; }
};

void tconv3d_fwd(const TGeom3& g, const float* x, const float* wt, const float* b, float* out) {
    const int T = g.T(), H = g.H(), W = g.W(), HW = H * W, THW = T * HW;
    const int hw = g.h * g.w, thw = g.t * hw;
    const int PT = g.KT / 2, PY = g.KY / 2, PX = g.KX / 2;
    for (int o = 0; o < g.O; ++o) std::fill(out + o * THW, out + (o + 1) * THW, b[o]);
    for (int c = 0; c < g.C; ++c) {
        for (int o = 0; o < g.O; ++o) {
            const float* wp = wt + (c * g.O + o) * g.KT * g.KY * g.KX;
            for (int dt = 0; dt < g.KT; ++dt) {
                int t0, t1;
                src_range(dt - PT, g.st, g.t, T, t0, t1);
                for (int dy = 0; dy < g.KY; ++dy) {
                    int y0, y1;
                    src_range(dy - PY, g.sy, g.h, H, y0, y1);
                    for (int dx = 0; dx < g.KX; ++dx) {
                        const float wv = wp[(dt * g.KY + dy) * g.KX + dx];
                        int x0, x1;
                        src_range(dx - PX, g.sx, g.w, W, x0, x1);
                        for (int tt = t0; tt < t1; ++tt) {
                            for (int y = y0; y < y1; ++y) {
                                const float* irow = x + c * thw + tt * hw + y * g.w;
                                float* trow = out + o * THW + (tt * g.st + dt - PT) * HW +
                                              (y * g.sy + dy - PY) * W + (dx - PX);
                                for (int xx = x0; xx < x1; ++xx) trow[xx * g.sx] += wv * irow[xx];
                            }
                        }
                    }
                }
            }
        }
    }
}

void tconv3d_bwd_input(const TGeom3& g, const float* gout, const float* wt, float* gin) {
    const int T = g.T(), H = g.H(), W = g.W(), HW = H * W, THW = T * HW;
    const int hw = g.h * g.w, thw = g.t * hw;
    const int PT = g.KT / 2, PY = g.KY / 2, PX = g.KX / 2;
    for (int c = 0; c < g.C; ++c) {
        for (int o = 0; o < g.O; ++o) {
            const float* wp = wt + (c * g.O + o) * g.KT * g.KY * g.KX;
            for (int dt = 0; dt < g.KT; ++dt) {
                int t0, t1;
                src_range(dt - PT, g.st, g.t, T, t0, t1);
                for (int dy = 0; dy < g.KY; ++dy) {
                    int y0, y1;
                    src_range(dy - PY, g.sy, g.h, H, y0, y1);
                    for (int dx = 0; dx < g.KX; ++dx) {
                        const float wv = wp[(dt * g.KY + dy) * g.KX + dx];
                        int x0, x1;
                        src_range(dx - PX, g.sx, g.w, W, x0, x1);
                        for (int tt = t0; tt < t1; ++tt) {
                            for (int y = y0; y < y1; ++y) {
                                float* girow = gin + c * thw + tt * hw + y * g.w;
                                const float* grow = gout + o * THW + (tt * g.st + dt - PT) * HW +
                                                    (y * g.sy + dy - PY) * W + (dx - PX);
                                for (int xx = x0; xx < x1; ++xx) girow[xx] += wv * grow[xx * g.sx];
                            }
                        }
                    }
                }
            }
        }
    }
}

void tconv3d_bwd_weight(const TGeom3& g, const float* gout, const float* x, float* gwt) {
    const int T = g.T(), H = g.H(), W = g.W(), HW = H * W, THW = T * HW;
    const int hw = g.h * g.w, thw = g.t * hw;
    const int PT = g.KT / 2, PY = g.KY / 2, PX = g.KX / 2;
    for (int c = 0; c < g.C; ++c) {
        for (int o = 0; o < g.O; ++o) {
            float* gwp = gwt + (c * g.O + o) * g.KT * g.KY * g.KX;
            for (int dt = 0; dt < g.KT; ++dt) {
                int t0, t1;
                src_range(dt - PT, g.st, g.t, T, t0, t1);
                for (int dy = 0; dy < g.KY; ++dy) {
                    int y0, y1;
                    src_range(dy - PY, g.sy, g.h, H, y0, y1);
                    for (int dx = 0; dx < g.KX; ++dx) {
                        int x0, x1;
                        src_range(dx - PX, g.sx, g.w, W, x0, x1);
                        double acc = 0.0;
                        for (int tt = t0; tt < t1; ++tt) {
                            for (int y = y0; y < y1; ++y) {
                                const float* irow = x + c * thw + tt * hw + y * g.w;
                                const float* grow = gout + o * THW + (tt * g.st + dt - PT) * HW +
                                                    (y * g.sy + dy - PY) * W + (dx - PX);
                                acc += dot64_strided(irow + x0, grow + x0 * g.sx, x1 - x0, g.sx);
                            }
                        }
                        gwp[(dt * g.KY + dy) * g.KX + dx] += static_cast<float>(acc);
                    }
                }
            }
        }
    }
}

void require_odd_kernel(const Tensor& w, int spatial_rank, const char* op) {
    for (int d = static_cast<int>(w.rank()) - spatial_rank; d < static_cast<int>(w.rank()); ++d) {
        if (w.dim(d) % 2 == 0)
            throw std::invalid_argument(std::string(op) + ": kernel extents must be odd, got weight shape " +
                                        shape_str(w.shape()));
    }
}

}  // namespace

ConvSpec make_conv_spec(int spatial_rank, int in_channels, int out_channels) {
    if (spatial_rank != 2 && spatial_rank != 3)
        throw std::invalid_argument("make_conv_spec: spatial rank must be 2 or 3, got " +
                                    std::to_string(spatial_rank));
    if (in_channels <= 0 || out_channels <= 0)
        throw std::invalid_argument("make_conv_spec: channel counts must be positive, got " +
                                    std::to_string(in_channels) + " -> " + std::to_string(out_channels));
    Shape wshape{out_channels, in_channels};
    for (int d = 0; d < spatial_rank; ++d) wshape.push_back(3);
    ConvSpec spec;
    spec.spatial_rank = spatial_rank;
    spec.in_channels = in_channels;
    spec.out_channels = out_channels;
    spec.weight = Tensor(wshape);
    spec.bias = Tensor(Shape{out_channels});
    return spec;
}

ConvSpec random_conv_spec(int spatial_rank, int in_channels, int out_channels, Rng& rng) {
    ConvSpec spec = make_conv_spec(spatial_rank, in_channels, out_channels);
    const int taps = spatial_rank == 2 ? 9 : 27;
    const float lim = std::sqrt(6.0f / (static_cast<float>(in_channels) * static_cast<float>(taps)));
    spec.weight = random_uniform(spec.weight.shape(), rng, -lim, lim);
    return spec;
}

ConvSpec identity_init(const ConvSpec& spec) {
    if (spec.in_channels != spec.out_channels)
        throw std::invalid_argument("identity_init: needs in_channels == out_channels, got " +
                                    std::to_string(spec.in_channels) + " -> " +
                                    std::to_string(spec.out_channels));
    ConvSpec out = make_conv_spec(spec.spatial_rank, spec.in_channels, spec.out_channels);
    const int taps = spec.spatial_rank == 2 ? 9 : 27;
    const int center = spec.spatial_rank == 2 ? 4 : 13;
    for (int c = 0; c < out.out_channels; ++c)
        out.weight[static_cast<int64_t>(c) * out.in_channels * taps + static_cast<int64_t>(c) * taps + center] =
            1.0f;
    return out;
}

Var conv(Tape& t, Var x, Var weight, Var bias) {
    t.check_on_tape(x, "conv");
    t.check_on_tape(weight, "conv");
    t.check_on_tape(bias, "conv");
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(weight);
    const Tensor& bv = t.value(bias);
    if (wv.rank() != 4 && wv.rank() != 5)
        throw std::invalid_argument("conv: weight must be rank 4 or 5, got " + shape_str(wv.shape()));
    const int spatial = static_cast<int>(wv.rank()) - 2;
    if (static_cast<int>(xv.rank()) != spatial + 1)
        throw std::invalid_argument("conv: input " + shape_str(xv.shape()) + " does not match weight " +
                                    shape_str(wv.shape()));
    if (xv.dim(0) != wv.dim(1))
        throw std::invalid_argument("conv: input has " + std::to_string(xv.dim(0)) + " channels, weight expects " +
                                    std::to_string(wv.dim(1)));
    if (bv.rank() != 1 || bv.dim(0) != wv.dim(0))
        throw std::invalid_argument("conv: bias " + shape_str(bv.shape()) + " does not match weight " +
                                    shape_str(wv.shape()));
    require_odd_kernel(wv, spatial, "conv");

    const int ix = x.id, iw = weight.id, ib = bias.id;
    Var inputs[] = {x, weight, bias};
    if (spatial == 2) {
        Geom2 geo{xv.dim(0), xv.dim(1), xv.dim(2), wv.dim(0), wv.dim(2), wv.dim(3)};
        Tensor out(Shape{geo.O, geo.H, geo.W});
        conv2d_fwd(geo, xv.data(), wv.data(), bv.data(), out.data());
        return t.record(OpKind::conv, std::move(out), inputs, [ix, iw, ib, geo](Tape& tp, int id) {
            const float* g = tp.grad_flat(id).data();
            if (tp.needs_grad(ix)) conv2d_bwd_input(geo, g, tp.value(Var{iw}).data(), tp.grad_buffer(ix).data());
            if (tp.needs_grad(iw)) conv2d_bwd_weight(geo, g, tp.value(Var{ix}).data(), tp.grad_buffer(iw).data());
            if (tp.needs_grad(ib)) {
                auto& gb = tp.grad_buffer(ib);
                const int plane = geo.H * geo.W;
                for (int o = 0; o < geo.O; ++o) gb[o] += static_cast<float>(sum64(g + o * plane, plane));
            }
        });
    }
    Geom3 geo{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), wv.dim(2), wv.dim(3), wv.dim(4)};
    Tensor out(Shape{geo.O, geo.T, geo.H, geo.W});
    conv3d_fwd(geo, xv.data(), wv.data(), bv.data(), out.data());
    return t.record(OpKind::conv, std::move(out), inputs, [ix, iw, ib, geo](Tape& tp, int id) {
        const float* g = tp.grad_flat(id).data();
        if (tp.needs_grad(ix)) conv3d_bwd_input(geo, g, tp.value(Var{iw}).data(), tp.grad_buffer(ix).data());
        if (tp.needs_grad(iw)) conv3d_bwd_weight(geo, g, tp.value(Var{ix}).data(), tp.grad_buffer(iw).data());
        if (tp.needs_grad(ib)) {
            auto& gb = tp.grad_buffer(ib);
            const int vol = geo.T * geo.H * geo.W;
            for (int o = 0; o < geo.O; ++o) gb[o] += static_cast<float>(sum64(g + o * vol, vol));
        }
    });
}

Var conv_forward(Tape& t, const ConvSpec& spec, Var x) {
    Var w = t.leaf(spec.weight, false);
    Var b = t.leaf(spec.bias, false);
    return conv(t, x, w, b);
}

Var conv_transpose(Tape& t, Var x, Var weight, Var bias, const Shape& stride) {
    t.check_on_tape(x, "conv_transpose");
    t.check_on_tape(weight, "conv_transpose");
    t.check_on_tape(bias, "conv_transpose");
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(weight);
    const Tensor& bv = t.value(bias);
    if (wv.rank() != 4 && wv.rank() != 5)
        throw std::invalid_argument("conv_transpose: weight must be rank 4 or 5, got " + shape_str(wv.shape()));
    const int spatial = static_cast<int>(wv.rank()) - 2;
    if (static_cast<int>(xv.rank()) != spatial + 1)
        throw std::invalid_argument("conv_transpose: input " + shape_str(xv.shape()) +
                                    " does not match weight " + shape_str(wv.shape()));
    if (xv.dim(0) != wv.dim(0))
        throw std::invalid_argument("conv_transpose: input has " + std::to_string(xv.dim(0)) +
                                    " channels, weight expects " + std::to_string(wv.dim(0)));
    if (bv.rank() != 1 || bv.dim(0) != wv.dim(1))
        throw std::invalid_argument("conv_transpose: bias " + shape_str(bv.shape()) + " does not match weight " +
                                    shape_str(wv.shape()));
    if (static_cast<int>(stride.size()) != spatial)
        throw std::invalid_argument("conv_transpose: stride " + shape_str(stride) + " must have " +
                                    std::to_string(spatial) + " entries");
    for (int s : stride)
        if (s < 1) throw std::invalid_argument("conv_transpose: stride entries must be >= 1, got " + shape_str(stride));
    require_odd_kernel(wv, spatial, "conv_transpose");

    const int ix = x.id, iw = weight.id, ib = bias.id;
    Var inputs[] = {x, weight, bias};
    if (spatial == 2) {
        TGeom2 geo{xv.dim(0), xv.dim(1), xv.dim(2), wv.dim(1), wv.dim(2), wv.dim(3), stride[0], stride[1]};
        Tensor out(Shape{geo.O, geo.H(), geo.W()});
        tconv2d_fwd(geo, xv.data(), wv.data(), bv.data(), out.data());
        return t.record(OpKind::conv_transpose, std::move(out), inputs, [ix, iw, ib, geo](Tape& tp, int id) {
            const float* g = tp.grad_flat(id).data();
            if (tp.needs_grad(ix)) tconv2d_bwd_input(geo, g, tp.value(Var{iw}).data(), tp.grad_buffer(ix).data());
            if (tp.needs_grad(iw)) tconv2d_bwd_weight(geo, g, tp.value(Var{ix}).data(), tp.grad_buffer(iw).data());
            if (tp.needs_grad(ib)) {
                auto& gb = tp.grad_buffer(ib);
                const int plane = geo.H() * geo.W();
                for (int o = 0; o < geo.O; ++o) gb[o] += static_cast<float>(sum64(g + o * plane, plane));
            }
        });
    }
    TGeom3 geo{xv.dim(0), xv.dim(1),  xv.dim(2), xv.dim(3), wv.dim(1), wv.dim(2),
               wv.dim(3), wv.dim(4), stride[0], stride[1], stride[2]};
    Tensor out(Shape{geo.O, geo.T(), geo.H(), geo.W()});
    tconv3d_fwd(geo, xv.data(), wv.data(), bv.data(), out.data());
    return t.record(OpKind::conv_transpose, std::move(out), inputs, [ix, iw, ib, geo](Tape& tp, int id) {
        const float* g = tp.grad_flat(id).data();
        if (tp.needs_grad(ix)) tconv3d_bwd_input(geo, g, tp.value(Var{iw}).data(), tp.grad_buffer(ix).data());
        if (tp.needs_grad(iw)) tconv3d_bwd_weight(geo, g, tp.value(Var{ix}).data(), tp.grad_buffer(iw).data());
        if (tp.needs_grad(ib)) {
            auto& gb = tp.grad_buffer(ib);
            const int vol = geo.T() * geo.H() * geo.W();
            for (int o = 0; o < geo.O; ++o) gb[o] += static_cast<float>(sum64(g + o * vol, vol));
        }
    });
}

Var relu(Tape& t, Var x) {
    t.check_on_tape(x, "relu");
    Tensor out(t.value(x).shape(), t.value(x).flat().cwiseMax(0.0f));
    const int ix = x.id;
    Var inputs[] = {x};
    return t.record(OpKind::relu, std::move(out), inputs, [ix](Tape& tp, int id) {
        const auto& xv = tp.value(Var{ix}).flat();
        tp.accum_grad(ix, (tp.grad_flat(id) * (xv > 0.0f).cast<float>()).eval());
    });
}

Var maxpool(Tape& t, Var x, const Shape& window) {
    t.check_on_tape(x, "maxpool");
    const Tensor& xv = t.value(x);
    const int spatial = static_cast<int>(xv.rank()) - 1;
    if (spatial != 2 && spatial != 3)
        throw std::invalid_argument("maxpool: input must be [C,H,W] or [C,T,H,W], got " + shape_str(xv.shape()));
    if (static_cast<int>(window.size()) != spatial)
        throw std::invalid_argument("maxpool: window " + shape_str(window) + " must have " +
                                    std::to_string(spatial) + " entries for input " + shape_str(xv.shape()));
    Shape oshape{xv.dim(0)};
    for (int d = 0; d < spatial; ++d) {
        if (window[d] < 1 || window[d] > xv.dim(d + 1))
            throw std::invalid_argument("maxpool: window " + shape_str(window) + " exceeds input " +
                                        shape_str(xv.shape()));
        oshape.push_back(xv.dim(d + 1) / window[d]);
    }

    // Normalize to [C, T, H, W] with T = 1 for the 2D case.
    const int C = xv.dim(0);
    const int T = spatial == 3 ? xv.dim(1) : 1;
    const int H = xv.dim(spatial == 3 ? 2 : 1), W = xv.dim(spatial == 3 ? 3 : 2);
    const int wt = spatial == 3 ? window[0] : 1;
    const int wy = window[spatial == 3 ? 1 : 0], wx = window[spatial == 3 ? 2 : 1];
    const int oT = T / wt, oH = H / wy, oW = W / wx;

    Tensor out(oshape);
    std::vector<int> arg(static_cast<std::size_t>(out.size()));
    const float* in = xv.data();
    float* op = out.data();
    std::size_t k = 0;
    for (int c = 0; c < C; ++c) {
        for (int ot = 0; ot < oT; ++ot) {
            for (int oy = 0; oy < oH; ++oy) {
                for (int ox = 0; ox < oW; ++ox, ++k) {
                    float best = -std::numeric_limits<float>::infinity();
                    int bi = -1;
                    for (int tt = ot * wt; tt < ot * wt + wt; ++tt) {
                        for (int yy = oy * wy; yy < oy * wy + wy; ++yy) {
                            const int base = ((c * T + tt) * H + yy) * W;
                            for (int xx = ox * wx; xx < ox * wx + wx; ++xx) {
                                const float v = in[base + xx];
                                if (v > best) {
                                    best = v;
                                    bi = base + xx;
                                }
                            }
                        }
                    }
                    op[k] = best;
                    arg[k] = bi;
                }
            }
        }
    }

    const int ix = x.id;
    Var inputs[] = {x};
    return t.record(OpKind::maxpool, std::move(out), inputs, [ix, arg = std::move(arg)](Tape& tp, int id) {
        if (!tp.needs_grad(ix)) return;
        const auto& g = tp.grad_flat(id);
        auto& gin = tp.grad_buffer(ix);
        for (std::size_t i = 0; i < arg.size(); ++i) gin[arg[i]] += g[static_cast<Eigen::Index>(i)];
    });
}

Var dense(Tape& t, Var weight, Var bias, Var x) {
    t.check_on_tape(weight, "dense");
    t.check_on_tape(bias, "dense");
    t.check_on_tape(x, "dense");
    const Tensor& wv = t.value(weight);
    const Tensor& bv = t.value(bias);
    const Tensor& xv = t.value(x);
    if (wv.rank() != 2)
        throw std::invalid_argument("dense: weight must be rank 2, got " + shape_str(wv.shape()));
    if (xv.rank() != 1 || xv.dim(0) != wv.dim(1))
        throw std::invalid_argument("dense: input " + shape_str(xv.shape()) + " does not match weight " +
                                    shape_str(wv.shape()));
    if (bv.rank() != 1 || bv.dim(0) != wv.dim(0))
        throw std::invalid_argument("dense: bias " + shape_str(bv.shape()) + " does not match weight " +
                                    shape_str(wv.shape()));
    const int O = wv.dim(0), I = wv.dim(1);
    Tensor out(Shape{O});
    for (int o = 0; o < O; ++o)
        out[o] = static_cast<float>(static_cast<double>(bv[o]) + dot64(wv.data() + o * I, xv.data(), I));

    const int ix = x.id, iw = weight.id, ib = bias.id;
    Var inputs[] = {weight, bias, x};
    return t.record(OpKind::dense, std::move(out), inputs, [ix, iw, ib, O, I](Tape& tp, int id) {
        const auto& g = tp.grad_flat(id);
        const float* wp = tp.value(Var{iw}).data();
        const float* xp = tp.value(Var{ix}).data();
        if (tp.needs_grad(ix)) {
            auto& gx = tp.grad_buffer(ix);
            for (int o = 0; o < O; ++o) {
                const float go = g[o];
                const float* wrow = wp + o * I;
                for (int i = 0; i < I; ++i) gx[i] += go * wrow[i];
            }
        }
        if (tp.needs_grad(iw)) {
            auto& gw = tp.grad_buffer(iw);
            for (int o = 0; o < O; ++o) {
                const float go = g[o];
                float* grow = gw.data() + o * I;
                for (int i = 0; i < I; ++i) grow[i] += go * xp[i];
            }
        }
        if (tp.needs_grad(ib)) tp.accum_grad(ib, g);
    });
}

Var softmax(Tape& t, Var logits) {
    t.check_on_tape(logits, "softmax");
    const Tensor& zv = t.value(logits);
    if (zv.rank() != 1)
        throw std::invalid_argument("softmax: logits must be 1-D, got " + shape_str(zv.shape()));
    const int n = zv.dim(0);
    double zmax = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) zmax = std::max(zmax, static_cast<double>(zv[i]));
    std::vector<double> e(static_cast<std::size_t>(n));
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        e[static_cast<std::size_t>(i)] = std::exp(static_cast<double>(zv[i]) - zmax);
        total += e[static_cast<std::size_t>(i)];
    }
    Tensor out(Shape{n});
    for (int i = 0; i < n; ++i) out[i] = static_cast<float>(e[static_cast<std::size_t>(i)] / total);

    const int iz = logits.id;
    Var inputs[] = {logits};
    return t.record(OpKind::softmax, std::move(out), inputs, [iz, n](Tape& tp, int id) {
        if (!tp.needs_grad(iz)) return;
        const auto& g = tp.grad_flat(id);
        const float* p = tp.value(Var{id}).data();
        double dot = 0.0;
        for (int i = 0; i < n; ++i) dot += static_cast<double>(g[i]) * static_cast<double>(p[i]);
        auto& gz = tp.grad_buffer(iz);
        for (int i = 0; i < n; ++i)
            gz[i] += static_cast<float>(static_cast<double>(p[i]) * (static_cast<double>(g[i]) - dot));
    });
}

Var cross_entropy(Tape& t, Var probs, int label) {
    t.check_on_tape(probs, "cross_entropy");
    const Tensor& pv = t.value(probs);
    if (pv.rank() != 1)
        throw std::invalid_argument("cross_entropy: probs must be 1-D, got " + shape_str(pv.shape()));
    if (label < 0 || label >= pv.dim(0))
        throw std::invalid_argument("cross_entropy: label " + std::to_string(label) + " out of range for " +
                                    std::to_string(pv.dim(0)) + " classes");
    const float p = pv[label];
    Tensor out = Tensor::scalar(static_cast<float>(-std::log(static_cast<double>(std::max(p, kProbClamp)))));

    const int ip = probs.id;
    Var inputs[] = {probs};
    return t.record(OpKind::cross_entropy, std::move(out), inputs, [ip, label](Tape& tp, int id) {
        if (!tp.needs_grad(ip)) return;
        const float p = tp.value(Var{ip})[label];
        if (p < kProbClamp) return;  // clamped region: flat
        auto& gp = tp.grad_buffer(ip);
        gp[label] += -tp.grad_flat(id)[0] / p;
    });
}

namespace {

/// Shared mean-reduction backward for l1/mse style losses.
template <typename PerElem>
void pairwise_mean_bwd(Tape& tp, int id, int ia, int ib, PerElem per_elem) {
    const auto& av = tp.value(Var{ia}).flat();
    const auto& bv = tp.value(Var{ib}).flat();
    const double gn = static_cast<double>(tp.grad_flat(id)[0]) / static_cast<double>(av.size());
    const bool na = tp.needs_grad(ia), nb = tp.needs_grad(ib);
    if (!na && !nb) return;
    float* ga = na ? tp.grad_buffer(ia).data() : nullptr;
    float* gb = nb ? tp.grad_buffer(ib).data() : nullptr;
    for (Eigen::Index i = 0; i < av.size(); ++i) {
        const float d = per_elem(av[i], bv[i], gn);
        if (ga) ga[i] += d;
        if (gb) gb[i] -= d;
    }
}

}  // namespace

Var l1_distance(Tape& t, Var a, Var b) {
    t.check_on_tape(a, "l1_distance");
    t.check_on_tape(b, "l1_distance");
    if (!t.value(a).same_shape(t.value(b)))
        throw std::invalid_argument("l1_distance: shape mismatch " + shape_str(t.value(a).shape()) + " vs " +
                                    shape_str(t.value(b).shape()));
    const auto& av = t.value(a).flat();
    const auto& bv = t.value(b).flat();
    double s = 0.0;
    for (Eigen::Index i = 0; i < av.size(); ++i) s += std::abs(static_cast<double>(av[i]) - static_cast<double>(bv[i]));
    Tensor out = Tensor::scalar(static_cast<float>(s / static_cast<double>(av.size())));

    const int ia = a.id, ib = b.id;
    Var inputs[] = {a, b};
    return t.record(OpKind::l1_distance, std::move(out), inputs, [ia, ib](Tape& tp, int id) {
        pairwise_mean_bwd(tp, id, ia, ib, [](float x, float y, double gn) {
            const float sgn = x > y ? 1.0f : (x < y ? -1.0f : 0.0f);
            return static_cast<float>(gn) * sgn;
        });
    });
}

Var mse(Tape& t, Var a, Var b) {
    t.check_on_tape(a, "mse");
    t.check_on_tape(b, "mse");
    if (!t.value(a).same_shape(t.value(b)))
        throw std::invalid_argument("mse: shape mismatch " + shape_str(t.value(a).shape()) + " vs " +
                                    shape_str(t.value(b).shape()));
    const auto& av = t.value(a).flat();
    const auto& bv = t.value(b).flat();
    double s = 0.0;
    for (Eigen::Index i = 0; i < av.size(); ++i) {
        const double d = static_cast<double>(av[i]) - static_cast<double>(bv[i]);
        s += d * d;
    }
    Tensor out = Tensor::scalar(static_cast<float>(s / static_cast<double>(av.size())));

    const int ia = a.id, ib = b.id;
    Var inputs[] = {a, b};
    return t.record(OpKind::mse, std::move(out), inputs, [ia, ib](Tape& tp, int id) {
        pairwise_mean_bwd(tp, id, ia, ib, [](float x, float y, double gn) {
            return static_cast<float>(2.0 * gn * (static_cast<double>(x) - static_cast<double>(y)));
        });
    });
}

Var frame_continuity(Tape& t, Var video) {
    t.check_on_tape(video, "frame_continuity");
    const Tensor& xv = t.value(video);
    if (xv.rank() != 4)
        throw std::invalid_argument("frame_continuity: input must be [C,T,H,W], got " + shape_str(xv.shape()));
    const int C = xv.dim(0), T = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
    if (T < 2)
        throw std::invalid_argument("frame_continuity: needs at least 2 frames, got " + shape_str(xv.shape()));
    const double norm = static_cast<double>(C) * (T - 1) * HW;
    const float* p = xv.data();
    double s = 0.0;
    for (int c = 0; c < C; ++c) {
        for (int tt = 0; tt + 1 < T; ++tt) {
            const float* f0 = p + (static_cast<int64_t>(c) * T + tt) * HW;
            const float* f1 = f0 + HW;
            for (int i = 0; i < HW; ++i) s += std::abs(static_cast<double>(f1[i]) - static_cast<double>(f0[i]));
        }
    }
    Tensor out = Tensor::scalar(static_cast<float>(s / norm));

    const int ix = video.id;
    Var inputs[] = {video};
    return t.record(OpKind::frame_continuity, std::move(out), inputs, [ix, C, T, HW, norm](Tape& tp, int id) {
        if (!tp.needs_grad(ix)) return;
        const float gn = static_cast<float>(static_cast<double>(tp.grad_flat(id)[0]) / norm);
        const float* p = tp.value(Var{ix}).data();
        float* gx = tp.grad_buffer(ix).data();
        for (int c = 0; c < C; ++c) {
            for (int tt = 0; tt + 1 < T; ++tt) {
                const int64_t base = (static_cast<int64_t>(c) * T + tt) * HW;
                for (int i = 0; i < HW; ++i) {
                    const float d = p[base + HW + i] - p[base + i];
                    const float sg = d > 0.0f ? gn : (d < 0.0f ? -gn : 0.0f);
                    gx[base + HW + i] += sg;
                    gx[base + i] -= sg;
                }
            }
        }
    });
}

}  // namespace pertnet
