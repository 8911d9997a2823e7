//! Revenue of anonymous pricing, sequential posted pricing, the optimal
//! mechanism on triangular markets, and the ex-ante relaxation.
//!
//! All evaluators work on `(agent type, count)` pairs and never materialize
//! individual buyers, so markets with astronomically many identical agents
//! cost no more than their number of types.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::dists::{epsilon_of_market, tri_accept_prob, Market, TriangularAgent};
use crate::error::{Error, Result};
use crate::numeric::golden_max;
use crate::orderstats::{count_pmf, exact_order_stat_cdfs, market_accept_types};

/// Default seed for reproducible Monte Carlo runs.
pub const DEFAULT_SEED: u64 = 0xA9C0;

/// Group-2 multiplicity cap in [`lower_bound_instance`].
pub const MAX_GROUP_COUNT: u64 = 1_000_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mechanism {
    #[serde(rename = "AP")]
    AnonymousPricing,
    #[serde(rename = "SPP")]
    SequentialPostedPricing,
    #[serde(rename = "OPT")]
    Optimal,
    #[serde(rename = "EAR")]
    ExAnteRelaxation,
}

impl Mechanism {
    pub fn label(&self) -> &'static str {
        match self {
            Mechanism::AnonymousPricing => "AP",
            Mechanism::SequentialPostedPricing => "SPP",
            Mechanism::Optimal => "OPT",
            Mechanism::ExAnteRelaxation => "EAR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Pricing {
    Anonymous(f64),
    PerAgent(Vec<f64>),
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevenueReport {
    pub mechanism: Mechanism,
    pub revenue: f64,
    pub pricing: Pricing,
    /// Standard error; zero for analytic values.
    pub stderr: f64,
    /// Monte Carlo trials; zero for analytic values.
    pub trials: u64,
    pub seed: u64,
}

impl RevenueReport {
    fn analytic(mechanism: Mechanism, revenue: f64, pricing: Pricing) -> Self {
        RevenueReport {
            mechanism,
            revenue,
            pricing,
            stderr: 0.0,
            trials: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub market_id: String,
    pub k: usize,
    pub opt: f64,
    pub ap: f64,
    pub ap_price: f64,
    pub ear: f64,
    /// `opt / ap`
    pub ratio: f64,
    pub epsilon: f64,
}

fn check_price(p: f64, what: &'static str) -> Result<()> {
    if p > 0.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            what,
            value: p,
            domain: "p > 0".into(),
        })
    }
}

/// `p * sum_{j <= k} (1 - D_j(p))` with exact order statistics.
pub fn ap_revenue_analytic(market: &Market, p: f64) -> Result<f64> {
    check_price(p, "ap_revenue_analytic")?;
    let cdfs = exact_order_stat_cdfs(market_accept_types(market, p), market.supply());
    Ok(p * cdfs.iter().map(|d| 1.0 - d).sum::<f64>())
}

#[derive(Debug, Clone, Copy)]
struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn merge(self, o: Moments) -> Moments {
        if self.n == 0 {
            return o;
        }
        if o.n == 0 {
            return self;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        Moments {
            n,
            mean: self.mean + d * o.n as f64 / n as f64,
            m2: self.m2 + o.m2 + d * d * (self.n as f64 * o.n as f64) / n as f64,
        }
    }
}

fn sample_shard(market: &Market, p: f64, trials: u64, seed: u64, shard: u64) -> Moments {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shard);
    let k = market.supply() as u64;
    let types: Vec<(f64, u64, Option<Binomial>)> = market_accept_types(market, p)
        .filter(|&(a, _)| a > 0.0)
        .map(|(a, c)| {
            let big = (c > 32).then(|| Binomial::new(c, a.min(1.0)).expect("valid binomial"));
            (a, c, big)
        })
        .collect();
    let mut mom = Moments { n: 0, mean: 0.0, m2: 0.0 };
    for _ in 0..trials {
        let mut sold = 0u64;
        'agents: for (a, c, big) in &types {
            match big {
                Some(b) => {
                    sold += b.sample(&mut rng);
                    if sold >= k {
                        break 'agents;
                    }
                }
                None => {
                    for _ in 0..*c {
                        if rng.random::<f64>() < *a {
                            sold += 1;
                            if sold >= k {
                                break 'agents;
                            }
                        }
                    }
                }
            }
        }
        mom.push(p * sold.min(k) as f64);
    }
    mom
}

/// Monte Carlo estimate of `AP(p)`, bit-reproducible for a fixed seed.
pub fn ap_revenue_mc(market: &Market, p: f64, trials: u64, seed: u64) -> Result<RevenueReport> {
    ap_revenue_mc_sharded(market, p, trials, seed, 1)
}

/// As [`ap_revenue_mc`], with the trial budget split over `shards` threads.
/// Shard `s` draws from stream `s` of the seeded generator; results depend
/// only on `(seed, shards)`.
pub fn ap_revenue_mc_sharded(
    market: &Market,
    p: f64,
    trials: u64,
    seed: u64,
    shards: u64,
) -> Result<RevenueReport> {
    check_price(p, "ap_revenue_mc")?;
    if trials == 0 {
        return Err(Error::Precondition("trials must be at least 1".into()));
    }
    let shards = shards.clamp(1, trials);
    let per = trials / shards;
    let extra = trials % shards;
    let parts: Vec<Moments> = if shards == 1 {
        vec![sample_shard(market, p, trials, seed, 0)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..shards)
                .map(|s| {
                    let n = per + u64::from(s < extra);
                    scope.spawn(move || sample_shard(market, p, n, seed, s))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sampling thread panicked"))
                .collect()
        })
    };
    let total = parts
        .into_iter()
        .fold(Moments { n: 0, mean: 0.0, m2: 0.0 }, Moments::merge);
    let var = if total.n > 1 { total.m2 / (total.n - 1) as f64 } else { 0.0 };
    Ok(RevenueReport {
        mechanism: Mechanism::AnonymousPricing,
        revenue: total.mean,
        pricing: Pricing::Anonymous(p),
        stderr: (var / total.n as f64).sqrt(),
        trials,
        seed,
    })
}

/// Best anonymous price.
///
/// Evaluates every finite monopoly value and runs a golden-section search
/// inside each bracket between consecutive ones. Ties go to the lowest price.
pub fn ap_optimal(market: &Market) -> Result<RevenueReport> {
    let mut cands: Vec<f64> = market
        .agents()
        .iter()
        .map(TriangularAgent::monopoly_value)
        .filter(|v| v.is_finite())
        .collect();
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    let unbounded = market.agents().iter().any(|a| a.monopoly_quantile() == 0.0);
    if unbounded {
        let scale = cands.last().copied().unwrap_or(0.0).max(
            market.agents().iter().map(|a| a.monopoly_revenue()).sum::<f64>(),
        );
        cands.push(scale * 1e6);
    }

    let ap = |p: f64| ap_revenue_analytic(market, p).unwrap_or(0.0);
    let mut best = (0.0f64, f64::NEG_INFINITY);
    let mut consider = |p: f64, r: f64| {
        if r > best.1 * (1.0 + 1e-12) || best.1 == f64::NEG_INFINITY {
            best = (p, r);
        }
    };
    let mut lo = 0.0;
    for &hi in &cands {
        // With only sure buyers above the bracket, revenue is linear in p.
        let linear = market
            .agents()
            .iter()
            .filter(|a| a.monopoly_value() >= hi)
            .all(|a| a.monopoly_quantile() == 1.0);
        if !linear {
            let (pg, rg) = golden_max(ap, lo + (hi - lo) * 1e-12, hi, 1e-10);
            if pg < hi {
                consider(pg, rg);
            }
        }
        consider(hi, ap(hi));
        lo = hi;
    }
    Ok(RevenueReport::analytic(
        Mechanism::AnonymousPricing,
        best.1.max(0.0),
        Pricing::Anonymous(best.0),
    ))
}

/// Expected revenue of offering `prices[i]` to every copy of agent type `i`,
/// in decreasing price order, until the supply runs out.
pub fn spp_revenue(market: &Market, prices: &[f64]) -> Result<f64> {
    if prices.len() != market.agents().len() {
        return Err(Error::Precondition(format!(
            "{} prices for {} agent types",
            prices.len(),
            market.agents().len()
        )));
    }
    for &p in prices {
        check_price(p, "spp_revenue")?;
    }
    let k = market.supply();
    let mut order: Vec<usize> = (0..prices.len()).collect();
    order.sort_by(|&a, &b| prices[b].total_cmp(&prices[a]));

    // sold[s] = Pr[s units gone], s = k absorbing
    let mut sold = vec![0.0; k + 1];
    sold[0] = 1.0;
    let mut next = vec![0.0; k + 1];
    let mut revenue = 0.0;
    for i in order {
        let agent = &market.agents()[i];
        let p = prices[i];
        let a = tri_accept_prob(agent, p);
        if a == 0.0 {
            continue;
        }
        let width = (agent.count().min(k as u64) as usize + 1).min(k);
        let b = count_pmf([(a, agent.count())], width);
        next.iter_mut().for_each(|x| *x = 0.0);
        next[k] = sold[k];
        let mut expected_sales = 0.0;
        for s in 0..k {
            let w = sold[s];
            if w == 0.0 {
                continue;
            }
            let room = k - s;
            let mut head = 0.0;
            let mut mean_head = 0.0;
            for (t, &bt) in b.iter().enumerate().take(room) {
                next[s + t] += w * bt;
                head += bt;
                mean_head += t as f64 * bt;
            }
            let tail = (1.0 - head).max(0.0);
            next[k] += w * tail;
            expected_sales += w * (mean_head + room as f64 * tail);
        }
        revenue += p * expected_sales;
        std::mem::swap(&mut sold, &mut next);
    }
    Ok(revenue)
}

fn require_bounded(market: &Market) -> Result<()> {
    if let Some(a) = market.agents().iter().find(|a| a.monopoly_quantile() == 0.0) {
        return Err(Error::InvalidAgent(format!(
            "agent with r* = {} has q* = 0: no finite monopoly price",
            a.monopoly_revenue()
        )));
    }
    Ok(())
}

/// Optimal revenue of a triangular market: sequential posted pricing at the
/// monopoly values.
pub fn opt_revenue_triangular(market: &Market) -> Result<RevenueReport> {
    require_bounded(market)?;
    let prices: Vec<f64> = market.agents().iter().map(|a| a.monopoly_value()).collect();
    let revenue = spp_revenue(market, &prices)?;
    Ok(RevenueReport::analytic(
        Mechanism::Optimal,
        revenue,
        Pricing::PerAgent(prices),
    ))
}

/// Ex-ante relaxation of a triangular market: fractional greedy by monopoly
/// value under total quantile `k`.
pub fn ear(market: &Market) -> f64 {
    let mut agents: Vec<&TriangularAgent> = market.agents().iter().collect();
    agents.sort_by(|a, b| b.monopoly_value().total_cmp(&a.monopoly_value()));
    let k = market.supply() as f64;
    let mut used = 0.0;
    let mut revenue = 0.0;
    for a in agents {
        let q = a.monopoly_quantile() * a.count() as f64;
        let r = a.monopoly_revenue() * a.count() as f64;
        if used + q <= k {
            used += q;
            revenue += r;
        } else {
            revenue += (k - used) * a.monopoly_value();
            break;
        }
    }
    revenue
}

/// `k` agents, agent `i` with deterministic value `1/i`.
pub fn example1_market(k: usize) -> Result<Market> {
    let agents = (1..=k)
        .map(|i| TriangularAgent::new(1.0 / i as f64, 1.0))
        .collect::<Result<Vec<_>>>()?;
    Market::new(k, agents)
}

/// Two-group instance whose OPT/AP gap tends to 2 as `delta -> 0`.
///
/// Group 1: `round(1/delta)` agents `Tri(delta, delta^2)`, monopoly value
/// `1/delta`. Group 2: `round(delta^-10)` agents `Tri(delta/k, delta)`,
/// monopoly value `1/k`, capped at [`MAX_GROUP_COUNT`].
pub fn lower_bound_instance(k: usize, delta: f64) -> Result<Market> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain {
            what: "lower_bound_instance",
            value: delta,
            domain: "(0, 1)".into(),
        });
    }
    if k == 0 {
        return Err(Error::InvalidMarket("supply k must be at least 1".into()));
    }
    let g1 = (1.0 / delta).round();
    if g1 < 1.0 {
        return Err(Error::Precondition(format!("delta = {delta} gives an empty first group")));
    }
    let raw = delta.powi(-10).round();
    let g2 = if raw > MAX_GROUP_COUNT as f64 {
        log::warn!(
            "lower-bound group 2 count {raw:.3e} capped at {MAX_GROUP_COUNT:.0e}"
        );
        MAX_GROUP_COUNT
    } else {
        raw as u64
    };
    Market::new(
        k,
        vec![
            TriangularAgent::with_count(delta, delta * delta, g1 as u64)?,
            TriangularAgent::with_count(delta / k as f64, delta, g2)?,
        ],
    )
}

/// OPT, AP, EAR and the market's epsilon in one record.
pub fn gap_report(market: &Market, market_id: &str) -> Result<GapReport> {
    let opt = opt_revenue_triangular(market)?.revenue;
    let ap = ap_optimal(market)?;
    if !(ap.revenue > 0.0) {
        return Err(Error::ZeroAnonymousRevenue);
    }
    let ap_price = match ap.pricing {
        Pricing::Anonymous(p) => p,
        _ => unreachable!("anonymous pricing reports a single price"),
    };
    Ok(GapReport {
        market_id: market_id.to_string(),
        k: market.supply(),
        opt,
        ap: ap.revenue,
        ap_price,
        ear: ear(market),
        ratio: opt / ap.revenue,
        epsilon: epsilon_of_market(market, opt)?,
    })
}
