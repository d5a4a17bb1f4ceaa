/* Elementwise LSTM gate kernels used by _core.pyx.
 *
 * sc_exp is a branch-free double-precision exp that compilers can auto-vectorize.
 * Range reduction x = k*ln2 + r, |r| <= ln2/2, then a degree-13 Taylor
 * polynomial for e^r and an exponent-field rebuild for 2^k.
 * Max relative error about 2e-16 on [-708, 709]; inputs are clamped to it. */
#ifndef STEPCAST_LSTM_OPS_H
#define STEPCAST_LSTM_OPS_H

#include <stdint.h>
#include <string.h>

static inline double sc_exp(double x)
{
    const double shifter = 6755399441055744.0; /* 1.5 * 2^52 */
    double kd, r, p, scale;
    uint64_t bits;
    x = x > 709.0 ? 709.0 : x;
    x = x < -708.0 ? -708.0 : x;
    kd = x * 1.4426950408889634 + shifter;
    memcpy(&bits, &kd, sizeof bits);
    kd -= shifter;
    r = x - kd * 6.93147180369123816490e-01;
    r = r - kd * 1.90821492927058770002e-10;
    p = 1.0 / 6227020800.0;
    p = p * r + 1.0 / 479001600.0;
    p = p * r + 1.0 / 39916800.0;
    p = p * r + 1.0 / 3628800.0;
    p = p * r + 1.0 / 362880.0;
    p = p * r + 1.0 / 40320.0;
    p = p * r + 1.0 / 5040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    bits = (bits + 1023u) << 52;
    memcpy(&scale, &bits, sizeof scale);
    return p * scale;
}

/* logistic and hyperbolic tangent on top of sc_exp; both saturate cleanly */
static inline double sc_sigmoid(double a)
{
    return 1.0 / (1.0 + sc_exp(-a));
}

static inline double sc_tanh(double a)
{
    return 2.0 / (1.0 + sc_exp(-2.0 * a)) - 1.0;
}

/* One forward step for B rows. a is (B, 4H) pre-activations in i, f, o, g
 * order. c and h are (B, H) and updated in place. Activated gates, hidden and
 * cell states are written with row strides gstride and sstride. */
static void lstm_step_fwd(int B, int H, const double *restrict a,
                          double *restrict c, double *restrict h,
                          double *restrict gates, long gstride,
                          double *restrict hs, double *restrict cs, long sstride)
{
    int n, k;
    for (n = 0; n < B; n++) {
        const double *an = a + (long)n * 4 * H;
        double *gn = gates + n * gstride;
        double *cn = c + (long)n * H;
        double *hn = h + (long)n * H;
        for (k = 0; k < 3 * H; k++)
            gn[k] = sc_sigmoid(an[k]);
        for (k = 3 * H; k < 4 * H; k++)
            gn[k] = sc_tanh(an[k]);
        for (k = 0; k < H; k++) {
            double cc = gn[H + k] * cn[k] + gn[k] * gn[3 * H + k];
            double hh = gn[2 * H + k] * sc_tanh(cc);
            cn[k] = cc;
            hn[k] = hh;
            hs[n * sstride + k] = hh;
            cs[n * sstride + k] = cc;
        }
    }
}

/* One backward step. dh_next and dc_next (B, H) carry the recurrent
 * gradients in and out; dhs and dcs are the upstream gradients on this step's
 * hidden and cell states; da receives pre-activation gradients (row stride
 * gstride). cprev has row stride pstride (c0 or the previous cell states). */
static void lstm_step_bwd(int B, int H, const double *restrict gates, long gstride,
                          const double *restrict cs, const double *restrict dhs,
                          const double *restrict dcs, long sstride,
                          const double *restrict cprev, long pstride,
                          double *restrict dh_next, double *restrict dc_next,
                          double *restrict da)
{
    int n, k;
    for (n = 0; n < B; n++) {
        const double *gn = gates + n * gstride;
        const double *csn = cs + n * sstride;
        const double *dhn = dhs + n * sstride;
        const double *dcn = dcs + n * sstride;
        const double *cp = cprev + n * pstride;
        double *dhx = dh_next + (long)n * H;
        double *dcx = dc_next + (long)n * H;
        double *dan = da + n * gstride;
        for (k = 0; k < H; k++) {
            double ig = gn[k], fg = gn[H + k], og = gn[2 * H + k], gg = gn[3 * H + k];
            double tc = sc_tanh(csn[k]);
            double dh = dhn[k] + dhx[k];
            double dc = dcx[k] + dcn[k] + dh * og * (1.0 - tc * tc);
            dan[k] = dc * gg * ig * (1.0 - ig);
            dan[H + k] = dc * cp[k] * fg * (1.0 - fg);
            dan[2 * H + k] = dh * tc * og * (1.0 - og);
            dan[3 * H + k] = dc * ig * (1.0 - gg * gg);
            dcx[k] = dc * fg;
        }
    }
}

#endif
