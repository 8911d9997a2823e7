//! Scalar numerical kernels: bracketed root finding, adaptive Gauss-Kronrod
//! quadrature, golden-section maximization, and Poisson sums used by the
//! large-market formulas.

use crate::error::{Error, Result};

/// Relative tolerance used for slope and concavity comparisons.
pub const SLOPE_RTOL: f64 = 1e-9;

/// `a <= b` up to a relative tolerance scaled by the magnitudes involved.
pub(crate) fn approx_le(a: f64, b: f64, rtol: f64) -> bool {
    a <= b + rtol * a.abs().max(b.abs()).max(1.0)
}

/// Brent's method on a sign-changing bracket `[a, b]`.
///
/// Converges when the bracket shrinks below `tol + 2 eps |x|`.
pub fn brent<F>(mut f: F, a: f64, b: f64, tol: f64, max_iter: usize) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let (mut a, mut b) = (a, b);
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::Precondition(format!(
            "root not bracketed: f({a}) = {fa}, f({b}) = {fb}"
        )));
    }
    let (mut c, mut fc) = (b, fb);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if (fb > 0.0 && fc > 0.0) || (fb < 0.0 && fc < 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
    }
    Err(Error::NoConvergence {
        what: "brent root finder",
        achieved: (c - b).abs(),
    })
}

/// Expand `hi` geometrically until `f(hi)` changes sign relative to `f(lo)`.
pub fn expand_bracket<F>(mut f: F, lo: f64, mut hi: f64, limit: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let s = f(lo).signum();
    while f(hi).signum() == s {
        hi *= 2.0;
        if hi > limit {
            return Err(Error::NoConvergence {
                what: "bracket expansion",
                achieved: hi,
            });
        }
    }
    Ok(hi)
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_KRONROD_W: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728,
];
// Gauss weights for the odd-indexed Kronrod nodes (7-point rule).
const GK_GAUSS_W: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * GK_KRONROD_W[7];
    let mut gauss = fc * GK_GAUSS_W[3];
    for i in 0..7 {
        let dx = h * GK_NODES[i];
        let s = f(c - dx) + f(c + dx);
        kron += GK_KRONROD_W[i] * s;
        if i % 2 == 1 {
            gauss += GK_GAUSS_W[i / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Result of an adaptive quadrature: value and estimated absolute error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
}

/// Globally adaptive 15-point Gauss-Kronrod quadrature on a finite interval.
///
/// Bisects the interval with the largest error estimate until the summed
/// estimate is below `abs_tol`, or fails after `max_intervals` pieces.
pub fn integrate<F>(mut f: F, a: f64, b: f64, abs_tol: f64, max_intervals: usize) -> Result<Quadrature>
where
    F: FnMut(f64) -> f64,
{
    if a == b {
        return Ok(Quadrature { value: 0.0, error: 0.0 });
    }
    let (v, e) = gk15(&mut f, a, b);
    let mut pieces = vec![(a, b, v, e)];
    loop {
        let total_err: f64 = pieces.iter().map(|p| p.3).sum();
        if total_err <= abs_tol {
            break;
        }
        if pieces.len() >= max_intervals {
            return Err(Error::NoConvergence {
                what: "adaptive quadrature",
                achieved: total_err,
            });
        }
        let worst = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let (lo, hi, _, _) = pieces.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        pieces.push((lo, mid, v1, e1));
        pieces.push((mid, hi, v2, e2));
    }
    // Sum smallest-first for a stable total.
    pieces.sort_by(|x, y| x.2.abs().total_cmp(&y.2.abs()));
    Ok(Quadrature {
        value: pieces.iter().map(|p| p.2).sum(),
        error: pieces.iter().map(|p| p.3).sum(),
    })
}

/// Golden-section search for a maximum of `f` on `[a, b]`.
///
/// Returns `(argmax, max)`. Assumes unimodality inside the bracket.
pub fn golden_max<F>(mut f: F, a: f64, b: f64, rel_tol: f64) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (a, b);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while (b - a) > rel_tol * (a.abs() + b.abs()).max(f64::MIN_POSITIVE) {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// `Pr[Poisson(lambda) <= j - 1]` for `j >= 1`, accumulated term by term.
///
/// Works in log space once `exp(-lambda)` would underflow.
pub fn poisson_cdf_below(lambda: f64, j: usize) -> f64 {
    debug_assert!(j >= 1);
    if lambda == 0.0 {
        return 1.0;
    }
    if !lambda.is_finite() {
        return 0.0;
    }
    if lambda < 700.0 {
        let mut term = (-lambda).exp();
        let mut sum = term;
        for t in 1..j {
            term *= lambda / t as f64;
            sum += term;
        }
        sum.min(1.0)
    } else {
        let ln_l = lambda.ln();
        let mut log_term = -lambda;
        let mut sum = log_term.exp();
        for t in 1..j {
            log_term += ln_l - (t as f64).ln();
            sum += log_term.exp();
        }
        sum.min(1.0)
    }
}

/// `E[min(k, Poisson(lambda))]`, evaluated without cancellation on both
/// sides of `lambda = k`.
pub fn expected_min_poisson(k: usize, lambda: f64) -> f64 {
    let kf = k as f64;
    if lambda <= 0.0 {
        return 0.0;
    }
    if !lambda.is_finite() {
        return kf;
    }
    let ln_l = lambda.ln();
    if lambda < kf {
        // lambda - E[(N - k)^+]
        let mut log_pmf = -lambda + (k + 1) as f64 * ln_l - statrs::function::gamma::ln_gamma(k as f64 + 2.0);
        let mut tail = 0.0;
        let mut t = k + 1;
        loop {
            let term = (t - k) as f64 * log_pmf.exp();
            tail += term;
            if t as f64 > lambda && term <= 1e-18 * tail.max(f64::MIN_POSITIVE) {
                break;
            }
            if term == 0.0 && t as f64 > lambda {
                break;
            }
            t += 1;
            log_pmf += ln_l - (t as f64).ln();
        }
        lambda - tail
    } else {
        // k - sum_{t<k} (k - t) pmf(t)
        let mut log_pmf = -lambda;
        let mut head = 0.0;
        for t in 0..k {
            head += (k - t) as f64 * log_pmf.exp();
            log_pmf += ln_l - ((t + 1) as f64).ln();
        }
        kf - head
    }
}

/// Significant-digit formatting shared by CSV writers: '.' decimal, no
/// locale, trailing zeros trimmed.
pub fn format_sig(v: f64, digits: usize) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let exp = v.abs().log10().floor() as i32;
    if (-4..12).contains(&exp) {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        let s = if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        };
        if s == "-0" {
            "0".into()
        } else {
            s
        }
    } else {
        let s = format!("{:.*e}", digits - 1, v);
        let (mant, e) = s.split_once('e').unwrap_or((&s, "0"));
        let mant = if mant.contains('.') {
            mant.trim_end_matches('0').trim_end_matches('.')
        } else {
            mant
        };
        format!("{mant}e{e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_finds_cubic_root() {
        let r = brent(|x| x * x * x - 2.0, 0.0, 2.0, 1e-15, 200).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-14);
    }

    #[test]
    fn brent_rejects_unbracketed() {
        assert!(brent(|x| x * x + 1.0, -1.0, 1.0, 1e-12, 100).is_err());
    }

    #[test]
    fn gauss_kronrod_polynomial_and_peak() {
        let q = integrate(|x| x.powi(5), 0.0, 2.0, 1e-12, 100).unwrap();
        assert!((q.value - 64.0 / 6.0).abs() < 1e-12);
        let q = integrate(|x| 1.0 / (1e-4 + x * x), -1.0, 1.0, 1e-10, 500).unwrap();
        let exact = 2.0 * (1.0 / 1e-2) * (1.0f64 / 1e-2).atan();
        assert!((q.value - exact).abs() < 1e-8, "{} vs {}", q.value, exact);
    }

    #[test]
    fn quadrature_reports_failure() {
        let err = integrate(|x| 1.0 / x.abs().sqrt().max(1e-300), -1.0, 1.0, 1e-14, 8).unwrap_err();
        assert!(err.is_numerical());
    }

    #[test]
    fn golden_section_parabola() {
        let (x, fx) = golden_max(|x| -(x - 0.3) * (x - 0.3) + 1.0, 0.0, 1.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-7);
        assert!((fx - 1.0).abs() < 1e-12);
    }

    #[test]
    fn poisson_sums_match_direct() {
        // direct E[min(k, N)] by summing the pmf far into the tail
        for &k in &[1usize, 2, 5, 13] {
            for &l in &[1e-6f64, 0.3, 2.0, 4.9, 5.0, 12.0, 40.0] {
                let mut pmf = (-l).exp();
                let mut direct = 0.0;
                for t in 0..400usize {
                    direct += (t.min(k)) as f64 * pmf;
                    pmf *= l / (t + 1) as f64;
                }
                let got = expected_min_poisson(k, l);
                assert!((got - direct).abs() < 1e-12 * direct.max(1e-6), "k={k} l={l}: {got} vs {direct}");
            }
        }
        assert!((poisson_cdf_below(2.0, 2) - 3.0 * (-2.0f64).exp()).abs() < 1e-15);
        assert!(poisson_cdf_below(800.0, 3) < 1e-300);
    }

    #[test]
    fn sig_formatting() {
        assert_eq!(format_sig(2.476197101701743, 12), "2.4761971017");
        assert_eq!(format_sig(0.5, 12), "0.5");
        assert_eq!(format_sig(1234.0, 12), "1234");
        assert_eq!(format_sig(1.5e-7, 12), "1.5e-7");
        assert_eq!(format_sig(0.0, 12), "0");
    }
}
