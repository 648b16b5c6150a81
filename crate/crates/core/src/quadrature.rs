//! Expectations over `X ~ Gamma(L, 1)`, the law of `||s||^2` for `L`
//! i.i.d. `CN(0, 1)` symbols.
//!
//! Globally adaptive Gauss-Kronrod (7, 15) on the density-weighted
//! integrand, vector valued so several moments share evaluations.

use statrs::function::gamma::ln_gamma;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
// Gauss weights for the odd Kronrod nodes (indices 1, 3, 5, 7).
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_INTERVALS: usize = 4000;

struct Piece<const D: usize> {
    a: f64,
    b: f64,
    value: [f64; D],
    error: f64,
}

fn gk15<const D: usize>(f: &impl Fn(f64) -> [f64; D], a: f64, b: f64) -> Piece<D> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = [0.0; D];
    let mut gauss = [0.0; D];
    for d in 0..D {
        kron[d] = WGK[7] * fc[d];
        gauss[d] = WG[3] * fc[d];
    }
    for (j, &x) in XGK.iter().take(7).enumerate() {
        let f1 = f(c - h * x);
        let f2 = f(c + h * x);
        for d in 0..D {
            let s = f1[d] + f2[d];
            kron[d] += WGK[j] * s;
            if j % 2 == 1 {
                gauss[d] += WG[j / 2] * s;
            }
        }
    }
    let mut error: f64 = 0.0;
    let mut value = [0.0; D];
    for d in 0..D {
        value[d] = kron[d] * h;
        error = error.max(((kron[d] - gauss[d]) * h).abs() / value[d].abs().max(f64::MIN_POSITIVE));
    }
    Piece { a, b, value, error }
}

/// Density of `Gamma(shape, 1)` at `x > 0`.
pub fn gamma_pdf(shape: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return if shape == 1.0 { 1.0 } else { 0.0 };
    }
    ((shape - 1.0) * x.ln() - x - ln_gamma(shape)).exp()
}

/// `E[f(X)]` for `X ~ Gamma(l, 1)`, each component to relative tolerance `rtol`.
///
/// Components of `f` must be of one sign on `(0, inf)` for the relative
/// error control to be meaningful; every integrand used in the crate is
/// nonnegative.
pub fn gamma_expectation<const D: usize>(l: usize, rtol: f64, f: impl Fn(f64) -> [f64; D]) -> [f64; D] {
    let shape = l as f64;
    let sd = shape.sqrt();
    let hi = shape + 40.0 * sd + 60.0;
    let weighted = |x: f64| {
        let w = gamma_pdf(shape, x);
        let mut y = f(x);
        for v in y.iter_mut() {
            *v *= w;
        }
        y
    };

    // seed the partition around the bulk of the density
    let mut cuts = vec![0.0];
    for z in [-8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0, 16.0] {
        let x = shape + z * sd;
        if x > *cuts.last().unwrap() && x < hi {
            cuts.push(x);
        }
    }
    cuts.push(hi);
    let mut pieces: Vec<Piece<D>> = cuts.windows(2).map(|w| gk15(&weighted, w[0], w[1])).collect();

    loop {
        let mut total = [0.0; D];
        let mut abs_err = [0.0; D];
        for p in &pieces {
            for d in 0..D {
                total[d] += p.value[d];
                abs_err[d] += p.error * p.value[d].abs();
            }
        }
        let done = (0..D).all(|d| abs_err[d] <= rtol * total[d].abs() || total[d] == 0.0);
        if done || pieces.len() >= MAX_INTERVALS {
            return total;
        }
        // split the piece contributing the largest absolute error
        let (worst, _) = pieces
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let e = (0..D)
                    .map(|d| p.error * p.value[d].abs() / total[d].abs().max(f64::MIN_POSITIVE))
                    .fold(0.0, f64::max);
                (i, e)
            })
            .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        let p = pieces.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        pieces.push(gk15(&weighted, p.a, mid));
        pieces.push(gk15(&weighted, mid, p.b));
    }
}

/// Moments used by the backscatter SINR and its gradient:
/// `(E[X/(cX+d)], E[X^2/(cX+d)^2], E[X/(cX+d)^2])`.
///
/// `c >= 0`, `d > 0`. When `c == 0` the closed forms `L/d`,
/// `L(L+1)/d^2`, `L/d^2` are returned.
pub fn ratio_moments(l: usize, c: f64, d: f64, rtol: f64) -> [f64; 3] {
    let lf = l as f64;
    if c == 0.0 {
        return [lf / d, lf * (lf + 1.0) / (d * d), lf / (d * d)];
    }
    gamma_expectation(l, rtol, |x| {
        let q = 1.0 / (c * x + d);
        [x * q, x * x * q * q, x * q * q]
    })
}
