/* Vectorizable tanh / exp used by the compiled coupling kernels.
 *
 * exp: Cody-Waite reduction by ln 2 followed by a degree-13 Taylor series on
 * |r| <= ln(2)/2 and a table scale; valid for |x| <= 40, which covers every
 * call site (arguments are tanh outputs or clamped). tanh goes through an
 * expm1 that switches to the series near zero so small arguments keep full
 * relative precision. NaN propagates through both.
 */
#ifndef FLOWVI_VMATH_H
#define FLOWVI_VMATH_H

#include <math.h>

static const double vm_pow2[129] = {
    0x1p-64, 0x1p-63, 0x1p-62, 0x1p-61, 0x1p-60, 0x1p-59, 0x1p-58, 0x1p-57,
    0x1p-56, 0x1p-55, 0x1p-54, 0x1p-53, 0x1p-52, 0x1p-51, 0x1p-50, 0x1p-49,
    0x1p-48, 0x1p-47, 0x1p-46, 0x1p-45, 0x1p-44, 0x1p-43, 0x1p-42, 0x1p-41,
    0x1p-40, 0x1p-39, 0x1p-38, 0x1p-37, 0x1p-36, 0x1p-35, 0x1p-34, 0x1p-33,
    0x1p-32, 0x1p-31, 0x1p-30, 0x1p-29, 0x1p-28, 0x1p-27, 0x1p-26, 0x1p-25,
    0x1p-24, 0x1p-23, 0x1p-22, 0x1p-21, 0x1p-20, 0x1p-19, 0x1p-18, 0x1p-17,
    0x1p-16, 0x1p-15, 0x1p-14, 0x1p-13, 0x1p-12, 0x1p-11, 0x1p-10, 0x1p-9,
    0x1p-8, 0x1p-7, 0x1p-6, 0x1p-5, 0x1p-4, 0x1p-3, 0x1p-2, 0x1p-1,
    0x1p0, 0x1p1, 0x1p2, 0x1p3, 0x1p4, 0x1p5, 0x1p6, 0x1p7,
    0x1p8, 0x1p9, 0x1p10, 0x1p11, 0x1p12, 0x1p13, 0x1p14, 0x1p15,
    0x1p16, 0x1p17, 0x1p18, 0x1p19, 0x1p20, 0x1p21, 0x1p22, 0x1p23,
    0x1p24, 0x1p25, 0x1p26, 0x1p27, 0x1p28, 0x1p29, 0x1p30, 0x1p31,
    0x1p32, 0x1p33, 0x1p34, 0x1p35, 0x1p36, 0x1p37, 0x1p38, 0x1p39,
    0x1p40, 0x1p41, 0x1p42, 0x1p43, 0x1p44, 0x1p45, 0x1p46, 0x1p47,
    0x1p48, 0x1p49, 0x1p50, 0x1p51, 0x1p52, 0x1p53, 0x1p54, 0x1p55,
    0x1p56, 0x1p57, 0x1p58, 0x1p59, 0x1p60, 0x1p61, 0x1p62, 0x1p63,
    0x1p64,
};

static inline double vm_expm1_series(double r)
{
    /* sum_{k=1}^{13} r^k / k! */
    double p = 1.0 / 6227020800.0;
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
    return p * r;
}

static inline double vm_exp(double x)
{
    double n = rint(x * 1.4426950408889634);
    if (!(n > -64.0)) n = -64.0;
    if (n > 64.0) n = 64.0;
    double r = (x - n * 6.93147180369123816490e-01) - n * 1.90821492927058770002e-10;
    return (1.0 + vm_expm1_series(r)) * vm_pow2[(int)n + 64];
}

static inline double vm_tanh(double x)
{
    double a = fabs(x);
    if (a > 20.0) a = 20.0;
    double y = 2.0 * a;
    double small = vm_expm1_series(y);
    double em = vm_exp(y) - 1.0;
    if (y < 0.34) em = small;
    return copysign(em / (em + 2.0), x);
}

/* s = tanh(o); es = exp(sign * s) */
static __attribute__((noinline)) void vm_tanh_exp(const double *restrict o, double *restrict s,
                               double *restrict es, long n, double sign)
{
    for (long q = 0; q < n; q++) {
        double v = vm_tanh(o[q]);
        s[q] = v;
        es[q] = vm_exp(sign * v);
    }
}

static __attribute__((noinline)) void vm_tanh_array(const double *restrict x, double *restrict out, long n)
{
    for (long q = 0; q < n; q++) out[q] = vm_tanh(x[q]);
}

static __attribute__((noinline)) void vm_exp_array(const double *restrict x, double *restrict out, long n)
{
    for (long q = 0; q < n; q++) out[q] = vm_exp(x[q]);
}

/* Leaky-ReLU helpers of the conditioner MLP; restrict lets them vectorize. */
static __attribute__((noinline)) void vm_bias_leaky(double *restrict h, const double *restrict b,
                                                  long R, long H, double slope)
{
    for (long r = 0; r < R; r++)
        for (long m = 0; m < H; m++) {
            double v = h[r * H + m] + b[m];
            h[r * H + m] = v * (v > 0.0 ? 1.0 : slope);
        }
}

static __attribute__((noinline)) void vm_leaky_grad(double *restrict dp, const double *restrict h,
                                                  long n, double slope)
{
    /* x * 1.0 is exact, so this equals the branchy form bit for bit */
    for (long q = 0; q < n; q++) dp[q] *= (h[q] > 0.0 ? 1.0 : slope);
}

static __attribute__((noinline)) void vm_colsum(double *restrict g, const double *restrict v,
                                              long R, long N)
{
    for (long r = 0; r < R; r++)
        for (long m = 0; m < N; m++) g[m] += v[r * N + m];
}

#endif
