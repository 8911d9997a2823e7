//! Value distributions in quantile space.
//!
//! A buyer's distribution is described through its revenue curve
//! `R(q) = q * v(q)`, where the quantile `q(v) = Pr[value >= v]`. Triangular
//! (truncated-Pareto) agents have a revenue curve shaped like a triangle with
//! apex at the monopoly point `(q*, r*)`. General piecewise distributions are
//! reduced to collections of triangular agents by ironing, flattening the
//! negative-virtual-value tail, and cutting the curve into linear pieces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{approx_le, SLOPE_RTOL};

/// One buyer type with a triangular value distribution, repeated `count`
/// times.
///
/// The value CDF is `1 - 1 / (1 + (v / r*) (1 - q*))` below the monopoly
/// value `v* = r* / q*`, with a point mass of size `q*` at `v*`. When
/// `q* = 0` the monopoly value is infinite and the mass is never reached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AgentRepr", into = "AgentRepr")]
pub struct TriangularAgent {
    monopoly_revenue: f64,
    monopoly_quantile: f64,
    count: u64,
}

#[derive(Serialize, Deserialize)]
struct AgentRepr {
    r_star: f64,
    q_star: f64,
    #[serde(default = "one")]
    count: u64,
}

fn one() -> u64 {
    1
}

impl TryFrom<AgentRepr> for TriangularAgent {
    type Error = Error;
    fn try_from(a: AgentRepr) -> Result<Self> {
        TriangularAgent::with_count(a.r_star, a.q_star, a.count)
    }
}

impl From<TriangularAgent> for AgentRepr {
    fn from(a: TriangularAgent) -> Self {
        AgentRepr {
            r_star: a.monopoly_revenue,
            q_star: a.monopoly_quantile,
            count: a.count,
        }
    }
}

impl TriangularAgent {
    pub fn new(monopoly_revenue: f64, monopoly_quantile: f64) -> Result<Self> {
        Self::with_count(monopoly_revenue, monopoly_quantile, 1)
    }

    pub fn with_count(monopoly_revenue: f64, monopoly_quantile: f64, count: u64) -> Result<Self> {
        if !(monopoly_revenue > 0.0 && monopoly_revenue.is_finite()) {
            return Err(Error::InvalidAgent(format!(
                "monopoly revenue must be positive and finite, got {monopoly_revenue}"
            )));
        }
        if !(0.0..=1.0).contains(&monopoly_quantile) {
            return Err(Error::InvalidAgent(format!(
                "monopoly quantile must lie in [0, 1], got {monopoly_quantile}"
            )));
        }
        if count == 0 {
            return Err(Error::InvalidAgent("count must be at least 1".into()));
        }
        Ok(TriangularAgent {
            monopoly_revenue,
            monopoly_quantile,
            count,
        })
    }

    pub fn monopoly_revenue(&self) -> f64 {
        self.monopoly_revenue
    }

    pub fn monopoly_quantile(&self) -> f64 {
        self.monopoly_quantile
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// `r* / q*`, or `+inf` when `q* = 0`.
    pub fn monopoly_value(&self) -> f64 {
        if self.monopoly_quantile == 0.0 {
            f64::INFINITY
        } else {
            self.monopoly_revenue / self.monopoly_quantile
        }
    }

    /// Same distribution with a different multiplicity.
    pub fn repeated(&self, count: u64) -> Result<Self> {
        Self::with_count(self.monopoly_revenue, self.monopoly_quantile, count)
    }

    /// Replace each copy by `m` copies of `Tri(r*/m, q*/m)`. The monopoly
    /// value is unchanged; each copy's monopoly revenue shrinks by `m`.
    pub fn split(&self, m: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::Precondition("split factor must be at least 1".into()));
        }
        let count = self
            .count
            .checked_mul(m)
            .ok_or_else(|| Error::InvalidAgent("count overflow while splitting".into()))?;
        Self::with_count(
            self.monopoly_revenue / m as f64,
            self.monopoly_quantile / m as f64,
            count,
        )
    }

    /// `Pr[value <= v]`.
    pub fn cdf(&self, v: f64) -> f64 {
        tri_cdf(self, v)
    }

    /// `Pr[value >= p]`.
    pub fn accept_prob(&self, p: f64) -> f64 {
        tri_accept_prob(self, p)
    }

    /// Revenue curve `(0,0) -> (q*, r*) -> (1, 0)`; just the rising edge when
    /// `q* = 1`.
    pub fn revenue_curve(&self) -> Result<RevenueCurve> {
        let (q, r) = (self.monopoly_quantile, self.monopoly_revenue);
        if q == 0.0 {
            return Err(Error::InvalidAgent(
                "q* = 0 has no finite revenue curve apex".into(),
            ));
        }
        if q == 1.0 {
            RevenueCurve::new(vec![(0.0, 0.0), (1.0, r)])
        } else {
            RevenueCurve::new(vec![(0.0, 0.0), (q, r), (1.0, 0.0)])
        }
    }
}

/// CDF of a triangular agent at `v >= 0`.
pub fn tri_cdf(agent: &TriangularAgent, v: f64) -> f64 {
    if v >= agent.monopoly_value() {
        return 1.0;
    }
    let v = v.max(0.0);
    let denom = 1.0 + (v / agent.monopoly_revenue) * (1.0 - agent.monopoly_quantile);
    1.0 - 1.0 / denom
}

/// Probability that a triangular agent's value is at least `p`, i.e. that a
/// take-it-or-leave-it offer at `p` is accepted. At `p = v*` this is exactly
/// the point mass `q*`.
pub fn tri_accept_prob(agent: &TriangularAgent, p: f64) -> f64 {
    let (r, q) = (agent.monopoly_revenue, agent.monopoly_quantile);
    if p > agent.monopoly_value() {
        return 0.0;
    }
    if p <= 0.0 {
        return 1.0;
    }
    if p == agent.monopoly_value() {
        return q;
    }
    r / (r + (1.0 - q) * p)
}

/// Population of triangular buyers competing for `supply` identical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MarketRepr", into = "MarketRepr")]
pub struct Market {
    supply: usize,
    agents: Vec<TriangularAgent>,
}

#[derive(Serialize, Deserialize)]
struct MarketRepr {
    k: usize,
    agents: Vec<TriangularAgent>,
}

impl TryFrom<MarketRepr> for Market {
    type Error = Error;
    fn try_from(m: MarketRepr) -> Result<Self> {
        Market::new(m.k, m.agents)
    }
}

impl From<Market> for MarketRepr {
    fn from(m: Market) -> Self {
        MarketRepr {
            k: m.supply,
            agents: m.agents,
        }
    }
}

impl Market {
    pub fn new(supply: usize, agents: Vec<TriangularAgent>) -> Result<Self> {
        if supply == 0 {
            return Err(Error::InvalidMarket("supply k must be at least 1".into()));
        }
        if agents.is_empty() {
            return Err(Error::InvalidMarket("market has no agents".into()));
        }
        Ok(Market { supply, agents })
    }

    /// Number of units `k`.
    pub fn supply(&self) -> usize {
        self.supply
    }

    /// Agent types; each carries its own multiplicity.
    pub fn agents(&self) -> &[TriangularAgent] {
        &self.agents
    }

    /// Total number of individual buyers, `n = sum of counts`.
    pub fn total_agents(&self) -> u128 {
        self.agents.iter().map(|a| a.count as u128).sum()
    }

    /// Split every agent into `m` equal shards.
    pub fn split(&self, m: u64) -> Result<Market> {
        let agents = self
            .agents
            .iter()
            .map(|a| a.split(m))
            .collect::<Result<Vec<_>>>()?;
        Market::new(self.supply, agents)
    }

    pub fn with_supply(&self, supply: usize) -> Result<Market> {
        Market::new(supply, self.agents.clone())
    }
}

/// Piecewise-linear revenue curve in quantile space.
///
/// Knots start at `(0, 0)` and have strictly increasing quantiles in
/// `[0, 1]`; the curve is the linear interpolation between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CurveRepr", into = "CurveRepr")]
pub struct RevenueCurve {
    knots: Vec<(f64, f64)>,
}

#[derive(Serialize, Deserialize)]
struct CurveRepr {
    knots: Vec<(f64, f64)>,
}

impl TryFrom<CurveRepr> for RevenueCurve {
    type Error = Error;
    fn try_from(c: CurveRepr) -> Result<Self> {
        RevenueCurve::new(c.knots)
    }
}

impl From<RevenueCurve> for CurveRepr {
    fn from(c: RevenueCurve) -> Self {
        CurveRepr { knots: c.knots }
    }
}

impl RevenueCurve {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::InvalidCurve("need at least two knots".into()));
        }
        if knots[0] != (0.0, 0.0) {
            return Err(Error::InvalidCurve(format!(
                "first knot must be (0, 0), got {:?}",
                knots[0]
            )));
        }
        for (i, &(q, r)) in knots.iter().enumerate() {
            if !(q.is_finite() && r.is_finite()) {
                return Err(Error::InvalidCurve(format!("knot {i} is not finite")));
            }
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::InvalidCurve(format!("knot {i} quantile {q} outside [0, 1]")));
            }
            if r < 0.0 {
                return Err(Error::InvalidCurve(format!("knot {i} has negative revenue {r}")));
            }
            if i > 0 && q <= knots[i - 1].0 {
                return Err(Error::InvalidCurve(format!(
                    "quantiles must strictly increase (knot {i})"
                )));
            }
        }
        Ok(RevenueCurve { knots })
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    /// Largest quantile covered by the curve.
    pub fn max_quantile(&self) -> f64 {
        self.knots[self.knots.len() - 1].0
    }

    /// Linear interpolation; `None` outside `[0, max_quantile]`.
    pub fn eval(&self, q: f64) -> Option<f64> {
        if !(0.0..=self.max_quantile()).contains(&q) {
            return None;
        }
        let i = self.knots.partition_point(|&(kq, _)| kq < q);
        if i == 0 {
            return Some(self.knots[0].1);
        }
        let (q1, r1) = self.knots[i];
        if q1 == q {
            return Some(r1);
        }
        let (q0, r0) = self.knots[i - 1];
        Some(r0 + (r1 - r0) * (q - q0) / (q1 - q0))
    }

    /// Slope of each segment (the marginal revenue, i.e. the virtual value).
    pub fn slopes(&self) -> Vec<f64> {
        self.knots
            .windows(2)
            .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
            .collect()
    }

    /// Index of the monopoly knot: the revenue maximizer, taking the smallest
    /// quantile among ties.
    pub fn monopoly_index(&self) -> usize {
        let max = self.knots.iter().map(|k| k.1).fold(f64::NEG_INFINITY, f64::max);
        let tol = 1e-12 * max.abs();
        self.knots
            .iter()
            .position(|k| k.1 >= max - tol)
            .unwrap_or(0)
    }

    /// `(q*, r*)`.
    pub fn monopoly(&self) -> (f64, f64) {
        self.knots[self.monopoly_index()]
    }

    /// First knot at which the slope increases beyond `rtol`, if any.
    pub fn concavity_violation(&self, rtol: f64) -> Option<(usize, f64)> {
        let s = self.slopes();
        s.windows(2).enumerate().find_map(|(i, w)| {
            if approx_le(w[1], w[0], rtol) {
                None
            } else {
                Some((i + 1, w[1] - w[0]))
            }
        })
    }

    pub fn is_concave(&self, rtol: f64) -> bool {
        self.concavity_violation(rtol).is_none()
    }

    fn require_concave(&self) -> Result<()> {
        match self.concavity_violation(SLOPE_RTOL) {
            Some((knot, excess)) => Err(Error::NotConcave { knot, excess }),
            None => Ok(()),
        }
    }
}

/// How probability mass sits between two consecutive support points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fill {
    /// No mass strictly between the points; the lower point carries an atom.
    Atom,
    /// Continuous mass with constant virtual value, so the revenue curve is
    /// linear across the gap.
    RevenueLinear,
}

/// Support point: a value together with `Pr[value >= v]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportPoint {
    pub value: f64,
    pub quantile: f64,
}

/// A distribution whose revenue curve is piecewise linear.
///
/// Support points are listed from the highest value down. The highest value
/// always carries a point mass equal to its quantile, and the last point has
/// quantile 1. `fills[m]` describes the mass between points `m` and `m + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseDistribution {
    points: Vec<SupportPoint>,
    fills: Vec<Fill>,
}

impl PiecewiseDistribution {
    pub fn new(points: Vec<SupportPoint>, fills: Vec<Fill>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidDistribution("no support points".into()));
        }
        if fills.len() + 1 != points.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} support points need {} fills, got {}",
                points.len(),
                points.len() - 1,
                fills.len()
            )));
        }
        for (i, p) in points.iter().enumerate() {
            if !(p.value.is_finite() && p.value >= 0.0) {
                return Err(Error::InvalidDistribution(format!(
                    "support point {i} has invalid value {}",
                    p.value
                )));
            }
            if !(p.quantile > 0.0 && p.quantile <= 1.0) {
                return Err(Error::InvalidDistribution(format!(
                    "support point {i} has quantile {} outside (0, 1]",
                    p.quantile
                )));
            }
            if i > 0 {
                let prev = points[i - 1];
                if p.value >= prev.value {
                    return Err(Error::InvalidDistribution(format!(
                        "values must strictly decrease (point {i})"
                    )));
                }
                if p.quantile <= prev.quantile {
                    return Err(Error::InvalidDistribution(format!(
                        "quantiles must strictly increase (point {i})"
                    )));
                }
            }
        }
        let last = points[points.len() - 1].quantile;
        if (last - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDistribution(format!(
                "last support point must have quantile 1, got {last}"
            )));
        }
        let mut points = points;
        let n = points.len();
        points[n - 1].quantile = 1.0;
        Ok(PiecewiseDistribution { points, fills })
    }

    pub fn point_mass(value: f64) -> Result<Self> {
        Self::new(vec![SupportPoint { value, quantile: 1.0 }], vec![])
    }

    /// Finite discrete distribution from `(value, probability)` atoms.
    pub fn discrete(atoms: &[(f64, f64)]) -> Result<Self> {
        let mut atoms: Vec<(f64, f64)> = atoms.iter().copied().filter(|a| a.1 > 0.0).collect();
        if atoms.iter().any(|a| !(a.1 <= 1.0)) {
            return Err(Error::InvalidDistribution("atom probability above 1".into()));
        }
        atoms.sort_by(|a, b| b.0.total_cmp(&a.0));
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidDistribution(format!(
                "atom probabilities sum to {total}, not 1"
            )));
        }
        let mut cum = 0.0;
        let points = atoms
            .iter()
            .map(|&(value, p)| {
                cum += p;
                SupportPoint {
                    value,
                    quantile: cum.min(1.0),
                }
            })
            .collect::<Vec<_>>();
        let fills = vec![Fill::Atom; points.len().saturating_sub(1)];
        Self::new(points, fills)
    }

    pub fn from_triangular(agent: &TriangularAgent) -> Result<Self> {
        let q = agent.monopoly_quantile();
        if q == 0.0 {
            return Err(Error::InvalidDistribution(
                "triangular agent with q* = 0 has unbounded support".into(),
            ));
        }
        if q == 1.0 {
            return Self::point_mass(agent.monopoly_value());
        }
        Self::new(
            vec![
                SupportPoint {
                    value: agent.monopoly_value(),
                    quantile: q,
                },
                SupportPoint { value: 0.0, quantile: 1.0 },
            ],
            vec![Fill::RevenueLinear],
        )
    }

    /// Distribution whose revenue curve is exactly `curve`, which must reach
    /// quantile 1 with nonincreasing `r / q` ratios.
    pub fn from_revenue_curve(curve: &RevenueCurve) -> Result<Self> {
        let knots = curve.knots();
        if curve.max_quantile() != 1.0 {
            return Err(Error::InvalidDistribution(
                "revenue curve must extend to quantile 1".into(),
            ));
        }
        let mut points = Vec::with_capacity(knots.len() - 1);
        let mut fills = Vec::with_capacity(knots.len().saturating_sub(2));
        for &(q, r) in &knots[1..] {
            let value = r / q;
            if let Some(prev) = points.last() {
                let prev: &SupportPoint = prev;
                if value >= prev.value {
                    return Err(Error::InvalidDistribution(format!(
                        "r/q must strictly decrease along the curve (quantile {q})"
                    )));
                }
                fills.push(Fill::RevenueLinear);
            }
            points.push(SupportPoint { value, quantile: q });
        }
        Self::new(points, fills)
    }

    pub fn points(&self) -> &[SupportPoint] {
        &self.points
    }

    pub fn fills(&self) -> &[Fill] {
        &self.fills
    }

    pub fn max_value(&self) -> f64 {
        self.points[0].value
    }

    pub fn min_value(&self) -> f64 {
        self.points[self.points.len() - 1].value
    }

    /// Line `R(q) = a + b q` through segment `m`'s revenue-curve endpoints.
    fn segment_line(&self, m: usize) -> (f64, f64) {
        let (p0, p1) = (self.points[m], self.points[m + 1]);
        let (r0, r1) = (p0.quantile * p0.value, p1.quantile * p1.value);
        let b = (r1 - r0) / (p1.quantile - p0.quantile);
        (r0 - b * p0.quantile, b)
    }

    /// `Pr[value >= v]`.
    pub fn quantile_at(&self, v: f64) -> f64 {
        if v > self.max_value() {
            return 0.0;
        }
        if v <= self.min_value() {
            return 1.0;
        }
        // points[m + 1].value < v <= points[m].value
        let m = self.points.partition_point(|p| p.value >= v) - 1;
        if self.points[m].value == v {
            return self.points[m].quantile;
        }
        match self.fills[m] {
            Fill::Atom => self.points[m].quantile,
            Fill::RevenueLinear => {
                let (a, b) = self.segment_line(m);
                (a / (v - b)).clamp(self.points[m].quantile, self.points[m + 1].quantile)
            }
        }
    }

    /// `Pr[value > v]`.
    pub fn quantile_above(&self, v: f64) -> f64 {
        if v >= self.max_value() {
            return 0.0;
        }
        if v < self.min_value() {
            return 1.0;
        }
        let m = self.points.partition_point(|p| p.value > v);
        // points[m].value <= v < points[m - 1].value
        if self.points[m].value == v {
            return match self.fills[m - 1] {
                Fill::Atom => self.points[m - 1].quantile,
                Fill::RevenueLinear => self.points[m].quantile,
            };
        }
        self.quantile_at(v)
    }

    /// `Pr[value <= v]`.
    pub fn cdf(&self, v: f64) -> f64 {
        1.0 - self.quantile_above(v)
    }

    /// Revenue curve with a knot at every support point.
    pub fn revenue_curve(&self) -> RevenueCurve {
        let mut knots = Vec::with_capacity(self.points.len() + 1);
        knots.push((0.0, 0.0));
        knots.extend(self.points.iter().map(|p| (p.quantile, p.quantile * p.value)));
        RevenueCurve::new(knots).expect("validated distribution yields a valid curve")
    }

    /// Conditional expected virtual value `E[phi(V) | V <= v]`, with
    /// `phi = R'(q)` taken from the (un-ironed) revenue curve.
    ///
    /// Equals the chord slope of `R` from `Pr[V > v]` to quantile 1.
    pub fn conditional_virtual_value(&self, v: f64) -> Result<f64> {
        let q_above = self.quantile_above(v);
        let curve = self.revenue_curve();
        let r_end = self.min_value();
        if q_above >= 1.0 {
            return Err(Error::UndefinedVirtualValue { value: v });
        }
        let r_above = curve.eval(q_above).expect("quantile within [0, 1]");
        Ok((r_end - r_above) / (1.0 - q_above))
    }
}

/// Revenue curve of a piecewise distribution.
pub fn revenue_curve_of(dist: &PiecewiseDistribution) -> RevenueCurve {
    dist.revenue_curve()
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Least concave majorant of the curve (its upper convex hull).
pub fn iron(curve: &RevenueCurve) -> RevenueCurve {
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(curve.knots.len());
    for &p in &curve.knots {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) >= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    RevenueCurve { knots: hull }
}

/// Replace the part of a concave curve beyond the monopoly quantile by the
/// straight line down to `(1, 0)`, i.e. a constant negative virtual value.
pub fn flatten_negative_virtual(curve: &RevenueCurve) -> Result<RevenueCurve> {
    curve.require_concave()?;
    let m = curve.monopoly_index();
    let (q_star, _) = curve.knots[m];
    let mut knots = curve.knots[..=m].to_vec();
    if q_star < 1.0 {
        knots.push((1.0, 0.0));
    }
    RevenueCurve::new(knots)
}

/// The rising part of a curve, `[0, q*]`.
pub fn truncate_at_monopoly(curve: &RevenueCurve) -> Result<RevenueCurve> {
    let m = curve.monopoly_index();
    if m == 0 {
        return Err(Error::InvalidCurve("curve has zero monopoly revenue".into()));
    }
    RevenueCurve::new(curve.knots[..=m].to_vec())
}

/// Cut a concave, increasing curve into one triangular agent per segment:
/// segment `z` becomes `Tri(r_z - r_{z-1}, q_z - q_{z-1})`.
pub fn decompose_to_triangles(curve: &RevenueCurve) -> Result<Vec<TriangularAgent>> {
    curve.require_concave()?;
    curve
        .knots
        .windows(2)
        .enumerate()
        .map(|(z, w)| {
            let dr = w[1].1 - w[0].1;
            if !(dr > 0.0) {
                return Err(Error::NonPositiveIncrement {
                    segment: z,
                    increment: dr,
                });
            }
            TriangularAgent::new(dr, w[1].0 - w[0].0)
        })
        .collect()
}

/// Iron, flatten, truncate at the monopoly quantile, and decompose.
pub fn reduce_to_triangles(curve: &RevenueCurve) -> Result<Vec<TriangularAgent>> {
    let ironed = iron(curve);
    let flat = flatten_negative_virtual(&ironed)?;
    decompose_to_triangles(&truncate_at_monopoly(&flat)?)
}

/// Stack triangular pieces in decreasing monopoly value: the cumulative
/// `(sum q*, sum r*)` path. Inverse of [`decompose_to_triangles`].
pub fn stack_triangles(agents: &[TriangularAgent]) -> Result<RevenueCurve> {
    let mut sorted: Vec<&TriangularAgent> = agents.iter().collect();
    sorted.sort_by(|a, b| b.monopoly_value().total_cmp(&a.monopoly_value()));
    let mut knots = vec![(0.0, 0.0)];
    let (mut q, mut r) = (0.0, 0.0);
    for a in sorted {
        q += a.monopoly_quantile() * a.count() as f64;
        r += a.monopoly_revenue() * a.count() as f64;
        knots.push((q, r));
    }
    RevenueCurve::new(knots)
}

/// True iff the revenue curve is concave (slopes nonincreasing).
pub fn check_regular(dist: &PiecewiseDistribution) -> bool {
    dist.revenue_curve().is_concave(SLOPE_RTOL)
}

/// True iff `E[phi(V) | V <= v]` is weakly increasing in `v`.
///
/// The conditional expectation is a chord slope of the revenue curve, which
/// is monotone along every linear piece, so checking at support points
/// suffices. Points where the conditioning event is null are skipped; if no
/// point is defined the check errors.
pub fn check_quasi_regular(dist: &PiecewiseDistribution) -> Result<bool> {
    let mut prev: Option<f64> = None;
    let mut evaluated = 0usize;
    for p in dist.points() {
        let phi = match dist.conditional_virtual_value(p.value) {
            Ok(phi) => phi,
            Err(Error::UndefinedVirtualValue { .. }) => continue,
            Err(e) => return Err(e),
        };
        evaluated += 1;
        // Walking down in value, phi_CE must not increase.
        if let Some(hi) = prev {
            if !approx_le(phi, hi, SLOPE_RTOL) {
                return Ok(false);
            }
        }
        prev = Some(phi);
    }
    if evaluated == 0 {
        return Err(Error::UndefinedVirtualValue {
            value: dist.max_value(),
        });
    }
    // Continuous bottom piece: the limit at the lowest value is the last slope.
    if let (Some(hi), Some(Fill::RevenueLinear)) = (prev, dist.fills().last()) {
        let last = *dist.revenue_curve().slopes().last().expect("at least one segment");
        if !approx_le(last, hi, SLOPE_RTOL) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Largest single-agent monopoly revenue as a fraction of `opt_revenue`.
/// The market is `eps`-large for every `eps` at least this value.
pub fn epsilon_of_market(market: &Market, opt_revenue: f64) -> Result<f64> {
    if !(opt_revenue > 0.0) {
        return Err(Error::Precondition(format!(
            "optimal revenue must be positive, got {opt_revenue}"
        )));
    }
    let max_r = market
        .agents()
        .iter()
        .map(|a| a.monopoly_revenue())
        .fold(0.0, f64::max);
    Ok(max_r / opt_revenue)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri(r: f64, q: f64) -> TriangularAgent {
        TriangularAgent::new(r, q).unwrap()
    }

    fn curve(k: &[(f64, f64)]) -> RevenueCurve {
        RevenueCurve::new(k.to_vec()).unwrap()
    }

    #[test]
    fn cdf_examples() {
        let a = tri(1.0, 0.5);
        assert_eq!(tri_cdf(&a, 2.0), 1.0);
        assert!((tri_cdf(&a, 1.0) - 1.0 / 3.0).abs() < 1e-15);
        let b = tri(1.0, 0.0);
        assert!((tri_cdf(&b, 1e9) - (1.0 - 1.0 / (1.0 + 1e9))).abs() < 1e-15);
        assert!(tri_cdf(&b, 1e9) < 1.0);
    }

    #[test]
    fn accept_examples() {
        let a = tri(1.0, 0.5);
        assert_eq!(tri_accept_prob(&a, 2.0), 0.5);
        assert!((tri_accept_prob(&a, 1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(tri_accept_prob(&a, 4.0), 0.0);
    }

    #[test]
    fn agent_validation() {
        assert!(TriangularAgent::new(0.0, 0.5).is_err());
        assert!(TriangularAgent::new(1.0, 1.5).is_err());
        assert!(TriangularAgent::with_count(1.0, 0.5, 0).is_err());
        assert_eq!(tri(1.0, 0.0).monopoly_value(), f64::INFINITY);
    }

    #[test]
    fn revenue_curve_examples() {
        let pm = PiecewiseDistribution::point_mass(2.0).unwrap();
        assert_eq!(revenue_curve_of(&pm).knots(), &[(0.0, 0.0), (1.0, 2.0)]);

        let t = PiecewiseDistribution::from_triangular(&tri(1.0, 0.5)).unwrap();
        assert_eq!(revenue_curve_of(&t).knots(), &[(0.0, 0.0), (0.5, 1.0), (1.0, 0.0)]);

        let u = PiecewiseDistribution::discrete(&[(1.0, 0.5), (2.0, 0.5)]).unwrap();
        assert_eq!(revenue_curve_of(&u).knots(), &[(0.0, 0.0), (0.5, 1.0), (1.0, 1.0)]);
    }

    #[test]
    fn triangular_distribution_agrees_with_agent_cdf() {
        let a = tri(1.0, 0.25);
        let d = PiecewiseDistribution::from_triangular(&a).unwrap();
        for &v in &[0.0, 0.3, 1.0, 2.5, 3.999, 4.0, 5.0] {
            assert!((d.cdf(v) - tri_cdf(&a, v)).abs() < 1e-12, "v={v}");
            if v > 0.0 {
                assert!((d.quantile_at(v) - tri_accept_prob(&a, v)).abs() < 1e-12, "v={v}");
            }
        }
    }

    #[test]
    fn iron_examples() {
        let c = curve(&[(0.0, 0.0), (0.5, 1.0), (1.0, 0.0)]);
        assert_eq!(iron(&c), c);
        let c = curve(&[(0.0, 0.0), (0.5, 0.2), (1.0, 1.0)]);
        assert_eq!(iron(&c).knots(), &[(0.0, 0.0), (1.0, 1.0)]);
        let c = curve(&[(0.0, 0.0), (0.25, 1.0), (0.5, 0.5), (1.0, 0.0)]);
        assert_eq!(iron(&c).knots(), &[(0.0, 0.0), (0.25, 1.0), (1.0, 0.0)]);
    }

    #[test]
    fn flatten_examples() {
        let c = curve(&[(0.0, 0.0), (0.5, 1.0), (1.0, 0.0)]);
        assert_eq!(flatten_negative_virtual(&c).unwrap(), c);
        let c = curve(&[(0.0, 0.0), (0.5, 1.0), (0.75, 0.9), (1.0, 0.0)]);
        assert_eq!(
            flatten_negative_virtual(&c).unwrap().knots(),
            &[(0.0, 0.0), (0.5, 1.0), (1.0, 0.0)]
        );
        let c = curve(&[(0.0, 0.0), (0.5, 1.5), (1.0, 2.0)]);
        assert_eq!(flatten_negative_virtual(&c).unwrap(), c);
        let bumpy = curve(&[(0.0, 0.0), (0.5, 0.2), (1.0, 1.0)]);
        assert!(matches!(
            flatten_negative_virtual(&bumpy),
            Err(Error::NotConcave { .. })
        ));
    }

    #[test]
    fn decompose_examples() {
        let c = curve(&[(0.0, 0.0), (0.5, 1.0)]);
        assert_eq!(decompose_to_triangles(&c).unwrap(), vec![tri(1.0, 0.5)]);

        // two-segment concave curve: apex pieces of the stacked triangles
        let (q1, r1, q2, r2) = (0.25, 0.7, 0.5, 0.9);
        let c = curve(&[(0.0, 0.0), (q1, r1), (q2, r2)]);
        let parts = decompose_to_triangles(&c).unwrap();
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0], tri(r1, q1));
        assert!((parts[1].monopoly_revenue() - (r2 - r1)).abs() < 1e-15);
        assert!((parts[1].monopoly_quantile() - (q2 - q1)).abs() < 1e-15);

        let c = curve(&[(0.0, 0.0), (0.2, 0.4), (0.4, 0.8)]);
        let parts = decompose_to_triangles(&c).unwrap();
        assert!((parts[0].monopoly_value() - parts[1].monopoly_value()).abs() < 1e-12);

        let falling = curve(&[(0.0, 0.0), (0.5, 1.0), (1.0, 0.0)]);
        assert!(matches!(
            decompose_to_triangles(&falling),
            Err(Error::NonPositiveIncrement { segment: 1, .. })
        ));
    }

    #[test]
    fn regularity_examples() {
        let t = PiecewiseDistribution::from_triangular(&tri(1.0, 0.3)).unwrap();
        assert!(check_regular(&t));
        assert!(check_regular(&PiecewiseDistribution::point_mass(3.0).unwrap()));
        let dip = PiecewiseDistribution::discrete(&[(10.0, 0.1), (2.0, 0.4), (1.9, 0.5)]).unwrap();
        assert!(!check_regular(&dip));
    }

    #[test]
    fn quasi_regularity_examples() {
        let t = PiecewiseDistribution::from_triangular(&tri(1.0, 0.3)).unwrap();
        assert!(check_quasi_regular(&t).unwrap());
        assert!(check_quasi_regular(&PiecewiseDistribution::point_mass(3.0).unwrap()).unwrap());
        let bad = PiecewiseDistribution::discrete(&[(10.0, 0.5), (1.1, 0.1), (1.0, 0.4)]).unwrap();
        assert!(!check_quasi_regular(&bad).unwrap());
    }

    #[test]
    fn epsilon_examples() {
        let m = Market::new(1, vec![tri(0.7, 0.5)]).unwrap();
        assert_eq!(epsilon_of_market(&m, 0.7).unwrap(), 1.0);
        assert!(epsilon_of_market(&m, 0.0).is_err());
        let split = m.split(1000).unwrap();
        assert!((epsilon_of_market(&split, 0.7).unwrap() - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn json_formats() {
        let m: Market = serde_json::from_str(
            r#"{"k": 2, "agents": [{"r_star": 1.0, "q_star": 0.5}, {"r_star": 0.5, "q_star": 1.0, "count": 3}]}"#,
        )
        .unwrap();
        assert_eq!(m.supply(), 2);
        assert_eq!(m.agents()[0].count(), 1);
        assert_eq!(m.total_agents(), 4);
        let back: Market = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<Market>(r#"{"k": 1, "agents": []}"#).is_err());
        assert!(serde_json::from_str::<Market>(r#"{"k": 1, "agents": [{"r_star": -1, "q_star": 0.5}]}"#).is_err());

        let c: RevenueCurve = serde_json::from_str(r#"{"knots": [[0,0],[0.5,1],[1,0]]}"#).unwrap();
        assert_eq!(c.monopoly(), (0.5, 1.0));
        assert!(serde_json::from_str::<RevenueCurve>(r#"{"knots": [[0.1,0],[0.5,1]]}"#).is_err());
    }

    #[test]
    fn monopoly_tie_break_prefers_smallest_quantile() {
        let c = curve(&[(0.0, 0.0), (0.25, 1.0), (0.75, 1.0), (1.0, 0.5)]);
        assert_eq!(c.monopoly(), (0.25, 1.0));
    }
}
