//! The worst-case large-market instance: its first-order statistic, the
//! cumulative revenue and quantile functions, and the bound constants.
//!
//! Everything is parameterized by `L = -ln D1(x)`. The implicit equation for
//! `D1` reads `G(L) = 1/x` with `G(L) = E[min(k, Poisson(L))]`, so `R = L/G(L)`
//! and `Q(L) = int_0^L (1 - s G'(s)/G(s)) ds` with `G'(s) = Pr[Poisson(s) < k]`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::dists::{Market, TriangularAgent};
use crate::error::{Error, Result};
use crate::numeric::{brent, expected_min_poisson, integrate, poisson_cdf_below};

/// Default absolute tolerance for quadratures of `Q`.
pub const DEFAULT_QUAD_TOL: f64 = 1e-8;
/// Default per-piece monopoly revenue in [`worst_case_market`].
pub const DEFAULT_EPS_TARGET: f64 = 1e-3;

const MAX_INTERVALS: usize = 4000;
const OPT_K1_CUTOFF: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseRow {
    pub x: f64,
    pub d1: f64,
    pub r: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseSolution {
    pub k: usize,
    pub table: Vec<WorstCaseRow>,
    pub alpha: f64,
    pub d1_alpha: f64,
    pub beta: f64,
    pub ear_value: f64,
    pub opt_k1: Option<f64>,
    pub asymptotic_exact: f64,
    pub asymptotic_stirling: f64,
    /// Summed error estimate of the quadratures behind the table.
    pub quadrature_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundSource {
    OptK1,
    Ear,
    Asymptotic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub k: usize,
    pub ear: Option<f64>,
    pub asymptotic_exact: f64,
    pub asymptotic_stirling: f64,
    pub bound: f64,
    pub source: BoundSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundTable {
    pub rows: Vec<BoundRow>,
    pub max_bound: f64,
    pub argmax_k: usize,
}

/// Solver for a fixed supply `k` and quadrature tolerance.
#[derive(Debug, Clone, Copy)]
pub struct WorstCase {
    k: usize,
    quad_tol: f64,
}

impl WorstCase {
    pub fn new(k: usize) -> Result<Self> {
        Self::with_tolerance(k, DEFAULT_QUAD_TOL)
    }

    pub fn with_tolerance(k: usize, quad_tol: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::Domain {
                what: "worst case",
                value: 0.0,
                domain: "k >= 1".into(),
            });
        }
        if !(quad_tol > 0.0 && quad_tol.is_finite()) {
            return Err(Error::Domain {
                what: "quadrature tolerance",
                value: quad_tol,
                domain: "(0, inf)".into(),
            });
        }
        Ok(WorstCase { k, quad_tol })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn tolerance(&self) -> f64 {
        self.quad_tol
    }

    /// Left end of the support, `1/k`.
    pub fn support_min(&self) -> f64 {
        1.0 / self.k as f64
    }

    /// `E[min(k, Poisson(l))]`.
    pub fn g(&self, l: f64) -> f64 {
        expected_min_poisson(self.k, l)
    }

    fn check_x(&self, x: f64, what: &'static str, strict: bool) -> Result<()> {
        let lo = self.support_min();
        let ok = if strict { x > lo } else { x >= lo };
        if ok && !x.is_nan() {
            Ok(())
        } else {
            Err(Error::Domain {
                what,
                value: x,
                domain: format!("x {} 1/k = {lo}", if strict { ">" } else { ">=" }),
            })
        }
    }

    /// `-ln D1(x)`; infinite at `x = 1/k`.
    pub fn lambda(&self, x: f64) -> Result<f64> {
        self.check_x(x, "first-order statistic", false)?;
        if x == f64::INFINITY {
            return Ok(0.0);
        }
        let target = 1.0 / x;
        if self.k == 1 {
            return Ok(-(-target).ln_1p());
        }
        let kf = self.k as f64;
        if target >= kf * (1.0 - 1e-15) {
            return Ok(f64::INFINITY);
        }
        let f = |l: f64| self.g(l) - target;
        let mut hi = kf.max(1.0);
        while f(hi) < 0.0 {
            hi *= 2.0;
            if hi > 1e7 {
                return Err(Error::NoConvergence {
                    what: "first-order statistic bracket",
                    achieved: hi,
                });
            }
        }
        brent(f, 0.0, hi, 4.0 * f64::EPSILON * target.min(1.0), 200)
    }

    /// Root `D1(x)` of the implicit equation.
    pub fn first_order_cdf(&self, x: f64) -> Result<f64> {
        Ok((-self.lambda(x)?).exp())
    }

    /// `R(x) = x (-ln D1(x))`.
    pub fn cumulative_revenue(&self, x: f64) -> Result<f64> {
        self.check_x(x, "cumulative revenue", true)?;
        if x == f64::INFINITY {
            return Ok(1.0);
        }
        Ok(x * self.lambda(x)?)
    }

    fn q_integrand(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        let g = self.g(s);
        let dg = poisson_cdf_below(s, self.k);
        (1.0 - s * dg / g).max(0.0)
    }

    /// `Q` as a function of `L`, with the quadrature error estimate.
    pub fn quantile_of_lambda(&self, l: f64) -> Result<(f64, f64)> {
        self.q_between(0.0, l, self.quad_tol)
    }

    fn q_between(&self, a: f64, b: f64, tol: f64) -> Result<(f64, f64)> {
        if !b.is_finite() {
            return Ok((f64::INFINITY, 0.0));
        }
        let quad = integrate(|s| self.q_integrand(s), a, b, tol, MAX_INTERVALS)?;
        Ok((quad.value, quad.error))
    }

    /// `Q(x) = int_x^inf -R'(z)/z dz`.
    pub fn cumulative_quantile(&self, x: f64) -> Result<f64> {
        self.check_x(x, "cumulative quantile", true)?;
        Ok(self.quantile_of_lambda(self.lambda(x)?)?.0)
    }

    /// `L` at which `Q = k`.
    pub fn lambda_alpha(&self) -> Result<f64> {
        let kf = self.k as f64;
        let f = |l: f64| match self.quantile_of_lambda(l) {
            Ok((q, _)) => q - kf,
            Err(_) => f64::NAN,
        };
        let mut hi = kf + 4.0;
        loop {
            let v = f(hi);
            if v.is_nan() {
                return Err(Error::NoConvergence {
                    what: "alpha quadrature",
                    achieved: self.quad_tol,
                });
            }
            if v > 0.0 {
                break;
            }
            hi *= 2.0;
        }
        brent(f, 0.0, hi, 1e-12 * hi, 200)
    }

    /// `alpha = Q^{-1}(k)`.
    pub fn alpha(&self) -> Result<f64> {
        Ok(1.0 / self.g(self.lambda_alpha()?))
    }

    /// `beta = D1^{-1}(e^{-k})` in closed form.
    pub fn beta(&self) -> f64 {
        beta(self.k)
    }

    /// `EAR(F*) = R(alpha)`.
    pub fn ear(&self) -> Result<f64> {
        let l = self.lambda_alpha()?;
        Ok(l / self.g(l))
    }

    /// Tabulates `D1`, `R`, `Q` on `grid + 1` log-spaced points of
    /// `[(1 + 1e-3)/k, x_max]` and computes the scalar constants.
    pub fn solve(&self, grid: usize, x_max: f64) -> Result<WorstCaseSolution> {
        let xs = log_grid(self.support_min() * (1.0 + 1e-3), x_max, grid)?;
        let (rows, err) = self.table(&xs)?;
        let l_alpha = self.lambda_alpha()?;
        let (exact, stirling) = asymptotic_upper_bound(self.k);
        Ok(WorstCaseSolution {
            k: self.k,
            table: rows,
            alpha: 1.0 / self.g(l_alpha),
            d1_alpha: (-l_alpha).exp(),
            beta: self.beta(),
            ear_value: l_alpha / self.g(l_alpha),
            opt_k1: if self.k == 1 {
                Some(opt_k1_with_tolerance(self.quad_tol.min(1e-5))?)
            } else {
                None
            },
            asymptotic_exact: exact,
            asymptotic_stirling: stirling,
            quadrature_error: err,
        })
    }

    /// Rows for the given increasing `xs`; `Q` is accumulated from the
    /// right end so each piece is a short, smooth integral.
    pub fn table(&self, xs: &[f64]) -> Result<(Vec<WorstCaseRow>, f64)> {
        let lambdas = xs.iter().map(|&x| self.lambda(x)).collect::<Result<Vec<_>>>()?;
        let piece_tol = self.quad_tol / (xs.len().max(1) as f64);
        let mut qs = vec![0.0; xs.len()];
        let mut acc = 0.0;
        let mut err = 0.0;
        let mut prev = 0.0;
        for i in (0..xs.len()).rev() {
            let (dq, de) = self.q_between(prev, lambdas[i], piece_tol)?;
            acc += dq;
            err += de;
            qs[i] = acc;
            prev = lambdas[i];
        }
        let rows = xs
            .iter()
            .zip(&lambdas)
            .zip(&qs)
            .map(|((&x, &l), &q)| WorstCaseRow {
                x,
                d1: (-l).exp(),
                r: x * l,
                q,
            })
            .collect();
        Ok((rows, err))
    }

    /// Discretizes the instance into triangular agents.
    ///
    /// Each shard `(x_a, x_b)` of a log grid becomes agents with total
    /// revenue `R(x_a) - R(x_b)` and total quantile `Q(x_a) - Q(x_b)`, split
    /// so every piece has revenue at most `eps_target`. Agents above `x_max`
    /// are lumped into one more shard.
    pub fn market(&self, n_shards: usize, x_max: f64, eps_target: f64) -> Result<Market> {
        if n_shards < 10 {
            return Err(Error::Precondition(format!("n_shards = {n_shards} < 10")));
        }
        if !(eps_target > 0.0) {
            return Err(Error::Domain {
                what: "worst-case market",
                value: eps_target,
                domain: "eps_target > 0".into(),
            });
        }
        let xs = log_grid(self.support_min() * (1.0 + 1e-3), x_max, n_shards)?;
        let (rows, _) = self.table(&xs)?;
        let mut agents = Vec::with_capacity(rows.len());
        let mut push = |r: f64, q: f64| -> Result<()> {
            if !(r > 0.0 && q > 0.0) {
                return Ok(());
            }
            let count = (r / eps_target).ceil().max(q.ceil()).max(1.0);
            agents.push(TriangularAgent::with_count(r / count, q / count, count as u64)?);
            Ok(())
        };
        for w in rows.windows(2) {
            push(w[0].r - w[1].r, w[0].q - w[1].q)?;
        }
        let top = rows.last().expect("grid is nonempty");
        push(top.r, top.q)?;
        Market::new(self.k, agents)
    }
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(hi > lo) || !hi.is_finite() {
        return Err(Error::Domain {
            what: "grid upper end",
            value: hi,
            domain: format!("({lo}, inf)"),
        });
    }
    if n == 0 {
        return Err(Error::Precondition("grid needs at least one interval".into()));
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..=n)
        .map(|i| {
            if i == n {
                hi
            } else {
                (a + (b - a) * i as f64 / n as f64).exp()
            }
        })
        .collect())
}

/// `D1(x)` for supply `k`.
pub fn solve_first_order_cdf(k: usize, x: f64) -> Result<f64> {
    WorstCase::new(k)?.first_order_cdf(x)
}

pub fn cumulative_revenue(k: usize, x: f64) -> Result<f64> {
    WorstCase::new(k)?.cumulative_revenue(x)
}

pub fn cumulative_quantile(k: usize, x: f64) -> Result<f64> {
    WorstCase::new(k)?.cumulative_quantile(x)
}

pub fn alpha(k: usize) -> Result<f64> {
    WorstCase::new(k)?.alpha()
}

/// `(1/k) / (1 - k^k / (k! e^k))`, via log-gamma.
pub fn beta(k: usize) -> f64 {
    let kf = k as f64;
    (1.0 / kf) / (1.0 - stirling_ratio(k))
}

/// `k^k / (k! e^k)`
fn stirling_ratio(k: usize) -> f64 {
    let kf = k as f64;
    (kf * kf.ln() - ln_gamma(kf + 1.0) - kf).exp()
}

pub fn ear_worst_case(k: usize) -> Result<f64> {
    WorstCase::new(k)?.ear()
}

/// Optimal revenue of the `k = 1` worst-case instance.
pub fn opt_k1() -> Result<f64> {
    opt_k1_with_tolerance(1e-7)
}

/// `2 + int_1^inf (1 - e^{-Q(x)}) dx`, integrated in `L` with weight
/// `|dx/dL| = 1 / (4 sinh^2(L/2))` and cut off at `L = 40`.
pub fn opt_k1_with_tolerance(tol: f64) -> Result<f64> {
    let wc = WorstCase::with_tolerance(1, tol)?;
    let mut failed = None;
    let quad = integrate(
        |l| {
            let inner_tol = 1e-12 * l.min(1.0).powi(2);
            match wc.q_between(0.0, l, inner_tol.max(1e-300)) {
                Ok((q, _)) => {
                    let s = (0.5 * l).sinh();
                    -(-q).exp_m1() / (4.0 * s * s)
                }
                Err(e) => {
                    failed = Some(e);
                    0.0
                }
            }
        },
        0.0,
        OPT_K1_CUTOFF,
        tol,
        MAX_INTERVALS,
    )?;
    if let Some(e) = failed {
        return Err(e);
    }
    Ok(2.0 + quad.value)
}

/// `(2/(1 - k^k/(k! e^k)), 2/(1 - 1/sqrt(2 pi k)))`.
pub fn asymptotic_upper_bound(k: usize) -> (f64, f64) {
    let kf = k as f64;
    (
        2.0 / (1.0 - stirling_ratio(k)),
        2.0 / (1.0 - 1.0 / (2.0 * std::f64::consts::PI * kf).sqrt()),
    )
}

/// Tightest computable bound on the worst-case ratio for each `k <= k_max`.
pub fn universal_bound_table(k_max: usize) -> Result<BoundTable> {
    universal_bound_table_with_tolerance(k_max, DEFAULT_QUAD_TOL)
}

pub fn universal_bound_table_with_tolerance(k_max: usize, tol: f64) -> Result<BoundTable> {
    if k_max == 0 {
        return Err(Error::Domain {
            what: "bound table",
            value: 0.0,
            domain: "k_max >= 1".into(),
        });
    }
    let mut rows = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let (exact, stirling) = asymptotic_upper_bound(k);
        let ear = match WorstCase::with_tolerance(k, tol)?.ear() {
            Ok(v) => Some(v),
            Err(e) if e.is_numerical() && k > 4 => None,
            Err(e) => return Err(e),
        };
        let (bound, source) = if k == 1 {
            (opt_k1_with_tolerance(tol.min(1e-5))?, BoundSource::OptK1)
        } else {
            match ear {
                Some(v) if v <= exact => (v, BoundSource::Ear),
                _ => (exact, BoundSource::Asymptotic),
            }
        };
        rows.push(BoundRow {
            k,
            ear,
            asymptotic_exact: exact,
            asymptotic_stirling: stirling,
            bound,
            source,
        });
    }
    let best = rows
        .iter()
        .max_by(|a, b| a.bound.total_cmp(&b.bound))
        .expect("k_max >= 1");
    Ok(BoundTable {
        max_bound: best.bound,
        argmax_k: best.k,
        rows,
    })
}

/// Discretized worst-case market with per-piece revenue
/// [`DEFAULT_EPS_TARGET`].
pub fn worst_case_market(k: usize, n_shards: usize, x_max: f64) -> Result<Market> {
    WorstCase::new(k)?.market(n_shards, x_max, DEFAULT_EPS_TARGET)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k1_closed_forms() {
        for x in [1.1, 2.0, 5.0, 10.0, 100.0] {
            let d = solve_first_order_cdf(1, x).unwrap();
            assert!((d - (1.0 - 1.0 / x)).abs() < 1e-10);
            let r = cumulative_revenue(1, x).unwrap();
            assert!((r + x * (-1.0 / x).ln_1p()).abs() < 1e-9);
        }
        assert_eq!(solve_first_order_cdf(1, 1.0).unwrap(), 0.0);
        assert!(solve_first_order_cdf(1, 0.9).is_err());
        assert!(cumulative_revenue(2, 0.5).is_err());
    }

    #[test]
    fn k1_quantile_series() {
        let series: f64 = (1..200).map(|t| (t as f64 - 1.0) / (t * t) as f64 * 0.5f64.powi(t)).sum();
        let q = cumulative_quantile(1, 2.0).unwrap();
        assert!((q - series).abs() < 1e-8, "{q} vs {series}");
    }

    #[test]
    fn general_k_matches_series_form() {
        // the implicit equation written with powers of ln D1
        for k in 2..6usize {
            for x in [1.0 / k as f64 + 0.01, 0.7, 3.0] {
                let d = solve_first_order_cdf(k, x).unwrap();
                let l = -d.ln();
                let mut fact = 1.0;
                let mut s = 0.0;
                for t in 0..k {
                    if t > 0 {
                        fact *= t as f64;
                    }
                    s += (k - t) as f64 / fact * d * l.powi(t as i32);
                }
                assert!((x * (k as f64 - s) - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn limits() {
        for k in [1, 2, 5] {
            assert!((cumulative_revenue(k, 1e6).unwrap() - 1.0).abs() < 1e-4);
            assert!(cumulative_quantile(k, 1e6).unwrap() < 1e-4);
        }
    }

    #[test]
    fn beta_examples() {
        assert!((beta(1) - 1.0 / (1.0 - (-1.0f64).exp())).abs() < 1e-14);
        assert!((beta(2) - 0.5 / (1.0 - 2.0 * (-2.0f64).exp())).abs() < 1e-14);
        assert!(beta(1_000_000).is_finite());
        let (e, s) = asymptotic_upper_bound(1);
        assert!((e - 2.0 * beta(1)).abs() < 1e-14);
        assert!(e <= s);
    }

    #[test]
    fn k2_constants() {
        let wc = WorstCase::new(2).unwrap();
        let a = wc.alpha().unwrap();
        assert!((a - 0.5206).abs() < 1e-3);
        assert!((wc.first_order_cdf(a).unwrap() - 0.012390).abs() < 5e-5);
        assert!((wc.ear().unwrap() - 2.2860).abs() < 2e-3);
        assert!((wc.cumulative_quantile(a).unwrap() - 2.0).abs() < 1e-7);
    }

    #[test]
    fn table_is_monotone() {
        let sol = WorstCase::new(2).unwrap().solve(50, 1e3).unwrap();
        for w in sol.table.windows(2) {
            assert!(w[1].d1 > w[0].d1);
            assert!(w[1].r < w[0].r);
            assert!(w[1].q < w[0].q);
        }
        assert!(sol.ear_value <= 2.0 * 2.0 * sol.beta);
        assert!(sol.opt_k1.is_none());
    }

    #[test]
    fn market_shape() {
        let m = worst_case_market(1, 20, 100.0).unwrap();
        assert_eq!(m.supply(), 1);
        assert!(m.agents().iter().all(|a| a.monopoly_revenue() <= DEFAULT_EPS_TARGET * (1.0 + 1e-12)));
        assert!(worst_case_market(1, 5, 100.0).is_err());
    }
}
