//! CDFs of order statistics at a posted price.
//!
//! At price `p` agent `i` accepts independently with probability
//! `1 - F_i(p)`. The `j`-th order statistic CDF `D_j(p)` is the probability
//! that at most `j - 1` agents accept, a Poisson-binomial lower tail. In a
//! large market every acceptance probability is small and the count is close
//! to Poisson with mean `Lambda = -ln D_1(p)`, which gives the approximation
//! `D_j ~ D_1 * sum_{t < j} Lambda^t / t!`.

use serde::{Deserialize, Serialize};

use crate::dists::{tri_accept_prob, Market};
use crate::error::{Error, Result};
use crate::numeric::poisson_cdf_below;

/// Multiplicities at or below this are folded in one Bernoulli trial at a
/// time; larger ones go through a closed-form binomial pmf.
const BERNOULLI_FOLD_LIMIT: u64 = 16;

fn check_prob(p: f64, context: &'static str) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidProbability { value: p, context })
    }
}

/// `Pr[Binomial(n, a) = t]` for `t < len`.
pub fn binomial_pmf_prefix(n: u64, a: f64, len: usize) -> Vec<f64> {
    let mut pmf = vec![0.0; len];
    if len == 0 {
        return pmf;
    }
    if a <= 0.0 || n == 0 {
        pmf[0] = 1.0;
        return pmf;
    }
    if a >= 1.0 {
        if (n as u128) < len as u128 {
            pmf[n as usize] = 1.0;
        }
        return pmf;
    }
    let (ln_a, ln_b) = (a.ln(), (-a).ln_1p());
    let nf = n as f64;
    let mut ln_choose = 0.0;
    for (t, slot) in pmf.iter_mut().enumerate() {
        if t as u64 > n {
            break;
        }
        if t > 0 {
            ln_choose += (nf - (t - 1) as f64).ln() - (t as f64).ln();
        }
        *slot = (ln_choose + t as f64 * ln_a + (nf - t as f64) * ln_b).exp();
    }
    pmf
}

/// Fold `count` independent trials with success probability `a` into a
/// truncated count distribution `pmf` (entries `0..pmf.len()`).
fn fold_type(pmf: &mut [f64], a: f64, count: u64) {
    let len = pmf.len();
    if a <= 0.0 || len == 0 {
        return;
    }
    if count <= BERNOULLI_FOLD_LIMIT {
        for _ in 0..count {
            for c in (1..len).rev() {
                pmf[c] = pmf[c] * (1.0 - a) + pmf[c - 1] * a;
            }
            pmf[0] *= 1.0 - a;
        }
        return;
    }
    let b = binomial_pmf_prefix(count, a, len);
    for c in (0..len).rev() {
        let mut s = 0.0;
        for t in 0..=c {
            s += pmf[c - t] * b[t];
        }
        pmf[c] = s;
    }
}

/// Distribution of the number of accepting agents, truncated to counts
/// `0..len`. Each item is `(acceptance probability, multiplicity)`.
pub fn count_pmf<I>(types: I, len: usize) -> Vec<f64>
where
    I: IntoIterator<Item = (f64, u64)>,
{
    let mut pmf = vec![0.0; len];
    if len == 0 {
        return pmf;
    }
    pmf[0] = 1.0;
    for (a, count) in types {
        fold_type(&mut pmf, a, count);
    }
    pmf
}

/// Exact `D_j`: probability that at most `j - 1` of the independent
/// acceptance events occur. `O(n j)` counting recurrence.
pub fn exact_order_stat_cdf(accept_probs: &[f64], j: usize) -> Result<f64> {
    if j == 0 {
        return Err(Error::Precondition("order statistic index j must be >= 1".into()));
    }
    for &p in accept_probs {
        check_prob(p, "acceptance probability")?;
    }
    let pmf = count_pmf(accept_probs.iter().map(|&p| (p, 1)), j);
    Ok(pmf.iter().sum::<f64>().min(1.0))
}

/// Exact `[D_1, ..., D_k]` for weighted agent types.
pub fn exact_order_stat_cdfs<I>(types: I, k: usize) -> Vec<f64>
where
    I: IntoIterator<Item = (f64, u64)>,
{
    let pmf = count_pmf(types, k);
    let mut acc = 0.0;
    pmf.iter()
        .map(|&m| {
            acc += m;
            acc.min(1.0)
        })
        .collect()
}

/// `Lambda = sum_i -ln(1 - a_i)`, i.e. `-ln D_1`. Infinite if some agent
/// accepts surely.
pub fn first_order_lambda<I>(types: I) -> f64
where
    I: IntoIterator<Item = (f64, u64)>,
{
    types
        .into_iter()
        .map(|(a, c)| if a >= 1.0 { f64::INFINITY } else { -(-a).ln_1p() * c as f64 })
        .sum()
}

/// Large-market approximation `D_1 * sum_{t < j} (-ln D_1)^t / t!`, with
/// `D_1 = 0` mapping to 0.
pub fn approx_order_stat_cdf(first_order: f64, j: usize) -> Result<f64> {
    check_prob(first_order, "first order statistic")?;
    if j == 0 {
        return Err(Error::Precondition("order statistic index j must be >= 1".into()));
    }
    if first_order == 0.0 {
        return Ok(0.0);
    }
    Ok(approx_from_lambda(-first_order.ln(), j))
}

/// Approximate `D_j` from `Lambda` directly; stays accurate when `D_1`
/// itself underflows.
pub fn approx_from_lambda(lambda: f64, j: usize) -> f64 {
    poisson_cdf_below(lambda, j)
}

/// Exact and approximate `D_j` with the large-market sandwich bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sandwich {
    pub j: usize,
    pub delta: f64,
    pub exact: f64,
    pub approx: f64,
    /// `(1 - delta j) * approx`
    pub lower: f64,
    /// `(1 + 2 delta j) * approx`
    pub upper: f64,
}

impl Sandwich {
    pub fn holds(&self) -> bool {
        self.lower <= self.exact && self.exact <= self.upper
    }
}

/// Bounds `(1 - delta j) D̂_j` and `(1 + 2 delta j) D̂_j` around the exact
/// `D_j`, without checking the preconditions.
pub fn sandwich_bounds(accept_probs: &[f64], j: usize, delta: f64) -> Result<Sandwich> {
    let exact = exact_order_stat_cdf(accept_probs, j)?;
    let lambda = first_order_lambda(accept_probs.iter().map(|&p| (p, 1)));
    let approx = approx_from_lambda(lambda, j);
    let jf = j as f64;
    Ok(Sandwich {
        j,
        delta,
        exact,
        approx,
        lower: (1.0 - delta * jf) * approx,
        upper: (1.0 + 2.0 * delta * jf) * approx,
    })
}

/// Check `(1 - delta j) D̂_j <= D_j <= (1 + 2 delta j) D̂_j`.
///
/// Requires `delta <= 1 / (4 j)` and every acceptance probability at most
/// `delta`; violating either is an error rather than `false`.
pub fn verify_sandwich(accept_probs: &[f64], j: usize, delta: f64) -> Result<bool> {
    if j == 0 {
        return Err(Error::Precondition("order statistic index j must be >= 1".into()));
    }
    if !(delta > 0.0 && delta <= 1.0 / (4.0 * j as f64)) {
        return Err(Error::Precondition(format!(
            "delta = {delta} must lie in (0, 1/(4j)] for j = {j}"
        )));
    }
    if let Some(&p) = accept_probs.iter().find(|&&p| p > delta) {
        return Err(Error::Precondition(format!(
            "acceptance probability {p} exceeds delta = {delta}"
        )));
    }
    Ok(sandwich_bounds(accept_probs, j, delta)?.holds())
}

/// Order-statistic CDFs of a market at one price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderStatProfile {
    pub price: f64,
    /// Exact `D_1..D_k`; omitted when only the approximation was requested.
    pub exact: Option<Vec<f64>>,
    /// Approximate `D̂_1..D̂_k`.
    pub approx: Vec<f64>,
    pub first_order: f64,
    /// `-ln D_1`.
    pub lambda: f64,
}

/// `(acceptance probability, multiplicity)` of every agent type at price `p`.
pub fn market_accept_types(market: &Market, p: f64) -> impl Iterator<Item = (f64, u64)> + '_ {
    market
        .agents()
        .iter()
        .map(move |a| (tri_accept_prob(a, p), a.count()))
}

pub fn order_profile(market: &Market, p: f64, exact: bool) -> Result<OrderStatProfile> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::Domain {
            what: "order_profile",
            value: p,
            domain: "p > 0".into(),
        });
    }
    let k = market.supply();
    let lambda = first_order_lambda(market_accept_types(market, p));
    let approx: Vec<f64> = (1..=k).map(|j| approx_from_lambda(lambda, j)).collect();
    let exact = exact.then(|| exact_order_stat_cdfs(market_accept_types(market, p), k));
    Ok(OrderStatProfile {
        price: p,
        exact,
        first_order: approx[0],
        approx,
        lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dists::TriangularAgent;

    #[test]
    fn two_coin_examples() {
        assert!((exact_order_stat_cdf(&[0.5, 0.5], 1).unwrap() - 0.25).abs() < 1e-15);
        assert!((exact_order_stat_cdf(&[0.5, 0.5], 2).unwrap() - 0.75).abs() < 1e-15);
        assert!(exact_order_stat_cdf(&[1.5], 1).is_err());
        assert!(exact_order_stat_cdf(&[0.5], 0).is_err());
        assert_eq!(exact_order_stat_cdf(&[1.0, 1.0], 2).unwrap(), 0.0);
    }

    #[test]
    fn approx_examples() {
        let e1 = (-1.0f64).exp();
        assert!((approx_order_stat_cdf(e1, 1).unwrap() - e1).abs() < 1e-16);
        let e2 = (-2.0f64).exp();
        let got = approx_order_stat_cdf(e2, 2).unwrap();
        assert!((got - 3.0 * e2).abs() < 1e-15);
        assert!((got - 0.40601).abs() < 1e-5);
        assert_eq!(approx_order_stat_cdf(0.0, 5).unwrap(), 0.0);
    }

    #[test]
    fn binomial_prefix_matches_bernoulli_fold() {
        let direct = binomial_pmf_prefix(40, 0.07, 6);
        let folded = count_pmf(std::iter::repeat_n((0.07, 1), 40), 6);
        for (a, b) in direct.iter().zip(&folded) {
            assert!((a - b).abs() < 1e-14);
        }
        let mixed = count_pmf([(0.07, 40u64)], 6);
        for (a, b) in mixed.iter().zip(&folded) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn sandwich_examples() {
        let probs = vec![1e-4; 1000];
        assert!(verify_sandwich(&probs, 3, 1e-3).unwrap());
        let s = sandwich_bounds(&[0.01, 0.02, 0.005], 1, 0.02).unwrap();
        assert!((s.exact - s.approx).abs() < 1e-15);
        assert!(verify_sandwich(&[0.01, 0.02, 0.005], 1, 0.02).unwrap());
        let s = sandwich_bounds(&[0.0; 5], 4, 0.01).unwrap();
        assert_eq!((s.exact, s.approx), (1.0, 1.0));
        assert!(s.holds());
    }

    #[test]
    fn sandwich_precondition_errors() {
        assert!(matches!(verify_sandwich(&[0.01], 3, 0.1), Err(Error::Precondition(_))));
        assert!(matches!(verify_sandwich(&[0.05], 1, 0.01), Err(Error::Precondition(_))));
    }

    #[test]
    fn profile_examples() {
        // accept w.p. 1/2 at p = 1: Tri(r, q) with r / (r + (1 - q)) = 1/2, v* >= 1
        let a = TriangularAgent::with_count(0.5, 0.5, 2).unwrap();
        let m = Market::new(2, vec![a]).unwrap();
        let prof = order_profile(&m, 1.0, true).unwrap();
        let exact = prof.exact.unwrap();
        assert!((exact[0] - 0.25).abs() < 1e-15 && (exact[1] - 0.75).abs() < 1e-15);
        assert_eq!(prof.approx[0], prof.first_order);

        let far = Market::new(3, vec![TriangularAgent::new(1.0, 0.5).unwrap()]).unwrap();
        let prof = order_profile(&far, 10.0, true).unwrap();
        assert_eq!(prof.exact.unwrap(), vec![1.0; 3]);
        assert_eq!(prof.approx, vec![1.0; 3]);

        let one = order_profile(&far.with_supply(1).unwrap(), 1.0, false).unwrap();
        assert_eq!(one.approx.len(), 1);
        assert!(one.exact.is_none());
        assert!(order_profile(&far, 0.0, true).is_err());
    }
}
