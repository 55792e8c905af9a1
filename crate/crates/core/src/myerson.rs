//! Allocation curves, the Myerson payment integral, and the diagnostics built on it.

use serde::Serialize;

use crate::coins::Randomness;
use crate::error::{Result, TfmError};
use crate::mechanism::{honest_bids, run_bids, Mechanism};
use crate::numeric::{self, EPS_NUM, EPS_PAY};
use crate::outcome::{Bid, Identity, ValueProfile};

/// Jumps are located by bisection down to this width.
const JUMP_WIDTH: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    #[serde(with = "numeric::sig12")]
    pub bid: f64,
    #[serde(with = "numeric::sig12")]
    pub x: f64,
    /// Expected payment the mechanism actually charges at this bid.
    #[serde(with = "numeric::sig12")]
    pub payment: f64,
}

/// Confirmation probability of one user's bid as a right-continuous step function of the bid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationCurve {
    pub user: Identity,
    pub others: Vec<Bid>,
    pub points: Vec<CurvePoint>,
}

impl AllocationCurve {
    /// Builds a curve directly from `(bid, x)` pairs; payments are left at 0.
    pub fn from_points(points: &[(f64, f64)]) -> Result<Self> {
        let curve = AllocationCurve {
            user: Identity::user(0),
            others: vec![],
            points: points
                .iter()
                .map(|&(bid, x)| CurvePoint { bid, x, payment: 0.0 })
                .collect(),
        };
        curve.validate()?;
        Ok(curve)
    }

    fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(TfmError::InvalidCurve("empty grid".into()));
        }
        for w in self.points.windows(2) {
            if w[1].bid <= w[0].bid {
                return Err(TfmError::InvalidCurve(format!(
                    "grid not strictly increasing at {}",
                    w[1].bid
                )));
            }
        }
        if let Some(p) = self
            .points
            .iter()
            .find(|p| !(-EPS_NUM..=1.0 + EPS_NUM).contains(&p.x))
        {
            return Err(TfmError::InvalidCurve(format!("x = {} at {}", p.x, p.bid)));
        }
        Ok(())
    }

    /// `x` at `b`: value of the last node at or below `b`.
    pub fn x_at(&self, b: f64) -> f64 {
        match self.points.iter().rposition(|p| p.bid <= b + EPS_NUM * 1e-3) {
            Some(i) => self.points[i].x,
            None => 0.0,
        }
    }

    /// `∫_lo^b x(t) dt` treating the curve as a right-continuous step function.
    pub fn integral_to(&self, b: f64) -> f64 {
        let mut acc = 0.0;
        for (i, p) in self.points.iter().enumerate() {
            if p.bid >= b {
                break;
            }
            let next = self.points.get(i + 1).map_or(b, |q| q.bid.min(b));
            acc += p.x * (next - p.bid);
        }
        acc
    }

    /// CSV with header `bid,probability`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bid,probability\n");
        for p in &self.points {
            s.push_str(&format!(
                "{},{}\n",
                numeric::format_sig12(p.bid),
                numeric::format_sig12(p.x)
            ));
        }
        s
    }
}

/// Confirmation probability and expected payment of `user` bidding `b` against `others`.
fn probe(m: &dyn Mechanism, others: &[Bid], user: Identity, b: f64) -> Result<(f64, f64)> {
    let mut bids = others.to_vec();
    bids.push(Bid::primary(user, b));
    let i = bids.len() - 1;
    let d = run_bids(m, &bids, Randomness::default())?;
    Ok((d.confirmation_probability(i), d.expected_payment(i)))
}

/// Evaluates the curve on `grid` and inserts the exact location of every jump.
pub fn allocation_curve(
    m: &dyn Mechanism,
    others: &[Bid],
    user: Identity,
    grid: &[f64],
) -> Result<AllocationCurve> {
    let mut grid: Vec<f64> = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() <= EPS_NUM * 1e-3);
    if grid.is_empty() {
        return Err(TfmError::InvalidCurve("empty grid".into()));
    }
    let f = |b: f64| probe(m, others, user, b);
    refined_curve(&f, &grid).map(|points| AllocationCurve {
        user,
        others: others.to_vec(),
        points,
    })
}

fn refined_curve(f: &dyn Fn(f64) -> Result<(f64, f64)>, grid: &[f64]) -> Result<Vec<CurvePoint>> {
    let mut points = Vec::with_capacity(grid.len());
    let mut prev: Option<CurvePoint> = None;
    for &b in grid {
        let (x, payment) = f(b)?;
        let here = CurvePoint { bid: b, x, payment };
        if let Some(p) = prev {
            locate_jumps(f, p, here, &mut points)?;
        }
        points.push(here);
        prev = Some(here);
    }
    Ok(points)
}

/// Appends nodes strictly inside `(lo, hi)` marking where `x` changes.
fn locate_jumps(
    f: &dyn Fn(f64) -> Result<(f64, f64)>,
    lo: CurvePoint,
    hi: CurvePoint,
    out: &mut Vec<CurvePoint>,
) -> Result<()> {
    if (lo.x - hi.x).abs() <= EPS_NUM {
        return Ok(());
    }
    if hi.bid - lo.bid <= JUMP_WIDTH {
        return Ok(());
    }
    let mid = 0.5 * (lo.bid + hi.bid);
    let (x, payment) = f(mid)?;
    let m = CurvePoint { bid: mid, x, payment };
    if (x - lo.x).abs() <= EPS_NUM {
        locate_jumps(f, m, hi, out)
    } else if (x - hi.x).abs() <= EPS_NUM {
        locate_jumps(f, lo, m, out)?;
        out.push(m);
        Ok(())
    } else {
        locate_jumps(f, lo, m, out)?;
        out.push(m);
        locate_jumps(f, m, hi, out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityVerdict {
    pub monotone: bool,
    /// Adjacent bids `(lo, hi)` where `x` decreases.
    pub witness: Option<(f64, f64)>,
}

pub fn monotonicity_check(curve: &AllocationCurve) -> MonotonicityVerdict {
    let witness = curve
        .points
        .windows(2)
        .find(|w| w[1].x < w[0].x - EPS_NUM)
        .map(|w| (w[0].bid, w[1].bid));
    MonotonicityVerdict {
        monotone: witness.is_none(),
        witness,
    }
}

/// `b·x(b) − ∫_0^b x(t) dt` with the normalization `p(0) = 0`.
pub fn myerson_payment(curve: &AllocationCurve, b: f64) -> Result<f64> {
    if let Some((lo, hi)) = monotonicity_check(curve).witness {
        return Err(TfmError::NonMonotoneCurve { lo, hi });
    }
    let first = curve.points[0].bid;
    let last = curve.points[curve.points.len() - 1].bid;
    if b < first - EPS_NUM || b > last + EPS_NUM {
        return Err(TfmError::InvalidCurve(format!(
            "bid {b} outside grid [{first}, {last}]"
        )));
    }
    // Below the first node the curve is extended by its first value.
    let below = first.max(0.0) * curve.points[0].x;
    Ok(b * curve.x_at(b) - curve.integral_to(b) - below)
}

/// Deterministic simplification: the smallest confirming bid when `x(b) = 1`, else 0.
pub fn threshold_payment(curve: &AllocationCurve, b: f64) -> f64 {
    if (curve.x_at(b) - 1.0).abs() > EPS_NUM {
        return 0.0;
    }
    curve
        .points
        .iter()
        .find(|p| (p.x - 1.0).abs() <= EPS_NUM)
        .map_or(0.0, |p| p.bid)
}

/// Bid grid for a user facing `others`: `values`, 0, and every competitor amount ± `tie`.
pub fn bracketed_grid(values: &[f64], others: &[Bid], tie: f64) -> Vec<f64> {
    let mut g: Vec<f64> = values.to_vec();
    g.push(0.0);
    for b in others {
        g.push(b.amount);
        if b.amount - tie >= 0.0 {
            g.push(b.amount - tie);
        }
        g.push(b.amount + tie);
    }
    g.sort_by(f64::total_cmp);
    g.dedup_by(|a, b| (*a - *b).abs() <= EPS_NUM * 1e-3);
    g
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PaymentGap {
    pub user: Identity,
    #[serde(with = "numeric::sig12")]
    pub bid: f64,
    #[serde(with = "numeric::sig12")]
    pub actual: f64,
    #[serde(with = "numeric::sig12")]
    pub oracle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyVerdict {
    pub consistent: bool,
    pub monotone: bool,
    /// Largest `|actual − oracle|` found, with where it occurred.
    pub worst: Option<PaymentGap>,
    /// Actual and oracle payment at the user's own honest bid.
    pub at_honest_bid: Option<PaymentGap>,
    pub points_checked: usize,
}

/// Compares the mechanism's expected payments with the Myerson oracle for one user.
///
/// The user bids every point of `values` plus the bracketing points around the other
/// users' honest bids; a gap above `EPS_PAY` or a non-monotone curve is a failure.
pub fn payment_consistency_check(
    m: &dyn Mechanism,
    profile: &ValueProfile,
    user: Identity,
    values: &[f64],
    tie: f64,
) -> Result<ConsistencyVerdict> {
    let (mine, others): (Vec<Bid>, Vec<Bid>) =
        honest_bids(m, profile).into_iter().partition(|b| b.owner == user);
    let own = mine.iter().find(|b| b.primary).map(|b| b.amount);
    let mut values = values.to_vec();
    values.extend(own);
    let grid = bracketed_grid(&values, &others, tie);
    let curve = allocation_curve(m, &others, user, &grid)?;
    let mono = monotonicity_check(&curve);
    if !mono.monotone {
        return Ok(ConsistencyVerdict {
            consistent: false,
            monotone: false,
            worst: None,
            at_honest_bid: None,
            points_checked: curve.points.len(),
        });
    }
    let at_honest_bid = match own.and_then(|b| curve.points.iter().find(|p| (p.bid - b).abs() <= EPS_NUM)) {
        Some(p) => Some(PaymentGap {
            user,
            bid: p.bid,
            actual: p.payment,
            oracle: myerson_payment(&curve, p.bid)?,
        }),
        None => None,
    };
    let mut worst: Option<PaymentGap> = None;
    for p in &curve.points {
        let oracle = myerson_payment(&curve, p.bid)?;
        let gap = (p.payment - oracle).abs();
        if worst.as_ref().is_none_or(|w| gap > (w.actual - w.oracle).abs()) {
            worst = Some(PaymentGap {
                user,
                bid: p.bid,
                actual: p.payment,
                oracle,
            });
        }
    }
    let consistent = worst
        .as_ref()
        .is_none_or(|w| (w.actual - w.oracle).abs() <= EPS_PAY);
    Ok(ConsistencyVerdict {
        consistent,
        monotone: true,
        worst,
        at_honest_bid,
        points_checked: curve.points.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichRow {
    #[serde(with = "numeric::sig12")]
    pub v: f64,
    /// Expected number of confirmed bids.
    #[serde(with = "numeric::sig12")]
    pub confirmed: f64,
    #[serde(with = "numeric::sig12")]
    pub burn: f64,
    #[serde(with = "numeric::sig12")]
    pub formula: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichVerdict {
    pub matches: bool,
    pub monotone: bool,
    pub rows: Vec<SandwichRow>,
}

/// With `n` users all holding value `v`, compares the expected burn with
/// `v·X_n(v) − ∫_0^v X_n(t) dt` where `X_n` is the expected confirmed count.
pub fn burn_sandwich_check(m: &dyn Mechanism, n: usize, values: &[f64]) -> Result<SandwichVerdict> {
    let eval = |v: f64| -> Result<(f64, f64)> {
        let profile = ValueProfile::from_values(&vec![v; n]);
        let bids = honest_bids(m, &profile);
        let d = run_bids(m, &bids, Randomness::default())?;
        let x = d.expect(|o| o.entries.iter().filter(|e| e.bid.primary && e.confirmed).count() as f64);
        Ok((x, d.expect(|o| o.burn())))
    };
    let mut grid: Vec<f64> = values.to_vec();
    grid.push(0.0);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let points = refined_curve(&eval, &grid)?;
    let monotone = points.windows(2).all(|w| w[1].x >= w[0].x - EPS_NUM);
    let curve = AllocationCurve {
        user: Identity::user(0),
        others: vec![],
        points,
    };
    let mut rows = Vec::new();
    let mut matches = monotone;
    for &v in values {
        let p = curve
            .points
            .iter()
            .find(|p| (p.bid - v).abs() <= EPS_NUM * 1e-3)
            .copied()
            .unwrap_or(CurvePoint {
                bid: v,
                x: curve.x_at(v),
                payment: eval(v)?.1,
            });
        let formula = v * p.x - curve.integral_to(v);
        matches &= (formula - p.payment).abs() <= EPS_PAY;
        rows.push(SandwichRow {
            v,
            confirmed: p.x,
            burn: p.payment,
            formula,
        });
    }
    Ok(SandwichVerdict {
        matches,
        monotone,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::build;

    #[test]
    fn monotone_and_non_monotone() {
        let c = AllocationCurve::from_points(&[(0.0, 0.0), (1.0, 0.5), (2.0, 1.0)]).unwrap();
        assert!(monotonicity_check(&c).monotone);
        let c = AllocationCurve::from_points(&[(0.0, 0.0), (1.0, 0.5), (2.0, 0.3)]).unwrap();
        assert_eq!(monotonicity_check(&c).witness, Some((1.0, 2.0)));
        assert!(matches!(
            myerson_payment(&c, 2.0),
            Err(TfmError::NonMonotoneCurve { .. })
        ));
        let c = AllocationCurve::from_points(&[(0.0, 0.7), (3.0, 0.7)]).unwrap();
        assert!(monotonicity_check(&c).monotone);
    }

    #[test]
    fn payment_of_constant_curve_is_zero() {
        let c = AllocationCurve::from_points(&[(0.0, 1.0), (1.0, 1.0), (5.0, 1.0)]).unwrap();
        for b in [0.0, 0.5, 1.0, 4.0] {
            assert!(myerson_payment(&c, b).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn posted_price_curve() {
        let m = build("posted_price_all_burn", Some(1), Some(1.0)).unwrap();
        let c = allocation_curve(m.as_ref(), &[], Identity::user(0), &[0.0, 0.5, 1.0, 1.5, 2.0]).unwrap();
        assert_eq!(c.x_at(0.5), 0.0);
        assert_eq!(c.x_at(1.0), 1.0);
        assert!((myerson_payment(&c, 2.0).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn second_price_threshold_is_competing_bid() {
        let m = build("second_price_reserve_burn", Some(1), Some(0.0)).unwrap();
        let others = [Bid::primary(Identity::user(1), 1.0)];
        let grid = bracketed_grid(&[0.0, 1.0, 2.0, 3.0], &others, 0.125);
        let c = allocation_curve(m.as_ref(), &others, Identity::user(0), &grid).unwrap();
        assert!((myerson_payment(&c, 3.0).unwrap() - 1.0).abs() < 1e-6);
        assert!((threshold_payment(&c, 3.0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn jump_between_nodes_is_located() {
        let m = build("posted_price_all_burn", Some(1), Some(0.7)).unwrap();
        let c = allocation_curve(m.as_ref(), &[], Identity::user(0), &[0.0, 1.0, 2.0]).unwrap();
        assert!((myerson_payment(&c, 2.0).unwrap() - 0.7).abs() < 1e-6);
    }

    #[test]
    fn first_price_inconsistent_under_contention() {
        let m = build("first_price", Some(1), None).unwrap();
        let p = ValueProfile::from_values(&[3.0, 1.0]);
        let v = payment_consistency_check(m.as_ref(), &p, Identity::user(0), &[0.0, 1.0, 2.0, 3.0], 0.125)
            .unwrap();
        assert!(!v.consistent);
        let w = v.worst.unwrap();
        assert_eq!(w.bid, 3.0);
        assert!((w.actual - w.oracle - 2.0).abs() < 1e-6);
    }

    #[test]
    fn sandwich_for_posted_price_random_burn() {
        let m = build("posted_price_random_burn", Some(2), Some(1.0)).unwrap();
        let v = burn_sandwich_check(m.as_ref(), 3, &[0.0, 0.5, 1.0, 1.5, 2.0]).unwrap();
        assert!(v.matches, "{:?}", v.rows);
        assert_eq!(v.rows[4].burn, 2.0);
    }
}
