//! Every concrete mechanism in the catalog.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::coins::{choose_subset, Coins};
use crate::error::{Result, TfmError};
use crate::mechanism::{BidRule, Mechanism, MechanismParams, Selected};
use crate::numeric::EPS_NUM;
use crate::outcome::{bid_order, Bid, Block, Capacity, Identity};

pub const NAMES: [&str; 10] = [
    "first_price",
    "posted_price_all_burn",
    "second_price_no_burn",
    "second_price_reserve_burn",
    "posted_price_random_burn",
    "pay_nothing",
    "even_auction",
    "discount_auction",
    "signal_oca",
    "multi_bid_signal",
];

/// One catalog line: name, accepted parameters, and a one-line description.
pub struct CatalogEntry {
    pub name: &'static str,
    pub params: &'static str,
    pub summary: &'static str,
}

pub fn entries() -> Vec<CatalogEntry> {
    vec![
        CatalogEntry {
            name: "first_price",
            params: "k: int",
            summary: "top-k included and confirmed, each pays its bid, miner keeps all",
        },
        CatalogEntry {
            name: "posted_price_all_burn",
            params: "k: int, r: real = 1",
            summary: "top-k bids >= r confirmed, pay r, all burnt",
        },
        CatalogEntry {
            name: "second_price_no_burn",
            params: "k: int",
            summary: "top k included; if full, top k-1 confirmed paying the k-th bid to the miner",
        },
        CatalogEntry {
            name: "second_price_reserve_burn",
            params: "k: int, r: real = 0.5",
            summary: "top-k bids >= r confirmed, pay max(r, b_{k+1}); reserve burnt, miner gets the rest",
        },
        CatalogEntry {
            name: "posted_price_random_burn",
            params: "k: int, r: real = 1",
            summary: "uniformly random k among bids >= r confirmed, pay r, all burnt",
        },
        CatalogEntry {
            name: "pay_nothing",
            params: "k: int",
            summary: "top-k confirmed, zero payment, zero revenue",
        },
        CatalogEntry {
            name: "even_auction",
            params: "k = inf",
            summary: "bid (v, 0); include all; confirm all iff the count is even",
        },
        CatalogEntry {
            name: "discount_auction",
            params: "k = inf, r: real > 0 = 2",
            summary: "f(t) = r if t <= 10 else r/2; confirm bids > f(t*), pay f(t*), all burnt",
        },
        CatalogEntry {
            name: "signal_oca",
            params: "k: int",
            summary: "bid 1/(v+2), sigma(v) = v+1; signals through [0,1); nothing paid",
        },
        CatalogEntry {
            name: "multi_bid_signal",
            params: "k: int, r: real > 1 = 2",
            summary: "sigma(v) = (r, r/v); four-case inclusion grouped by owner; bids >= r pay r, all burnt",
        },
    ]
}

/// Builds a catalog mechanism from its name and a parameter map (`k`, `r`).
pub fn catalog(name: &str, params: &BTreeMap<String, f64>) -> Result<Arc<dyn Mechanism>> {
    let invalid = |reason: &str| TfmError::InvalidParams {
        mechanism: name.to_string(),
        reason: reason.to_string(),
    };
    for key in params.keys() {
        if key != "k" && key != "r" {
            return Err(invalid(&format!("unknown parameter {key:?}")));
        }
    }
    let k = || -> Result<usize> {
        let k = *params.get("k").ok_or_else(|| invalid("k is required"))?;
        if k < 1.0 || k.fract() != 0.0 {
            return Err(invalid("k must be a positive integer"));
        }
        Ok(k as usize)
    };
    let r = |default: f64| -> Result<f64> {
        let r = params.get("r").copied().unwrap_or(default);
        if !(r.is_finite() && r >= 0.0) {
            return Err(invalid("r must be a nonnegative real"));
        }
        Ok(r)
    };
    let unbounded = || -> Result<()> {
        match params.get("k") {
            Some(k) if k.is_finite() => Err(invalid("block size is infinite")),
            _ => Ok(()),
        }
    };
    let no_reserve = || -> Result<()> {
        if params.contains_key("r") {
            Err(invalid("takes no reserve"))
        } else {
            Ok(())
        }
    };

    let m: Arc<dyn Mechanism> = match name {
        "first_price" => {
            no_reserve()?;
            Arc::new(FirstPrice { k: k()? })
        }
        "posted_price_all_burn" => Arc::new(PostedPriceAllBurn { k: k()?, r: r(1.0)? }),
        "second_price_no_burn" => {
            no_reserve()?;
            Arc::new(SecondPriceNoBurn { k: k()? })
        }
        "second_price_reserve_burn" => Arc::new(SecondPriceReserveBurn { k: k()?, r: r(0.5)? }),
        "posted_price_random_burn" => Arc::new(PostedPriceRandomBurn { k: k()?, r: r(1.0)? }),
        "pay_nothing" => {
            no_reserve()?;
            Arc::new(PayNothing { k: k()? })
        }
        "even_auction" => {
            unbounded()?;
            no_reserve()?;
            Arc::new(EvenAuction)
        }
        "discount_auction" => {
            unbounded()?;
            let r = r(2.0)?;
            if r <= 0.0 {
                return Err(invalid("r must be positive"));
            }
            Arc::new(DiscountAuction { r })
        }
        "signal_oca" => {
            no_reserve()?;
            Arc::new(SignalOca { k: k()? })
        }
        "multi_bid_signal" => {
            let r = r(2.0)?;
            if r <= 1.0 {
                return Err(invalid("r must exceed 1"));
            }
            Arc::new(MultiBidSignal { k: k()?, r })
        }
        _ => return Err(TfmError::UnknownMechanism(name.to_string())),
    };
    Ok(m)
}

/// Convenience wrapper taking `k` and an optional reserve.
pub fn build(name: &str, k: Option<usize>, r: Option<f64>) -> Result<Arc<dyn Mechanism>> {
    let mut p = BTreeMap::new();
    if let Some(k) = k {
        p.insert("k".to_string(), k as f64);
    }
    if let Some(r) = r {
        p.insert("r".to_string(), r);
    }
    catalog(name, &p)
}

/// Indices of `bids` passing `keep`, in tie order, truncated to `k`.
fn top(bids: &[Bid], k: usize, keep: impl Fn(&Bid) -> bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..bids.len()).filter(|&i| keep(&bids[i])).collect();
    idx.sort_by(|&i, &j| bid_order(&bids[i], &bids[j]));
    idx.truncate(k);
    idx
}

fn plain(idx: Vec<usize>) -> Vec<Selected> {
    idx.into_iter().map(Selected::plain).collect()
}

/// Positions of block entries in tie order.
fn block_order(block: &Block) -> Vec<usize> {
    let bids = block.bids();
    top(&bids, bids.len(), |_| true)
}

fn at_least(a: f64, r: f64) -> bool {
    a >= r - EPS_NUM
}

#[derive(Debug)]
pub struct FirstPrice {
    pub k: usize,
}

impl Mechanism for FirstPrice {
    fn name(&self) -> String {
        "first_price".into()
    }
    fn params(&self) -> MechanismParams {
        MechanismParams {
            k: Capacity::Finite(self.k),
            reserve: None,
        }
    }
    fn bidding_rule(&self) -> BidRule {
        BidRule::Truthful
    }
    fn include(&self, bids: &[Bid], _: &mut dyn Coins) -> Vec<Selected> {
        plain(top(bids, self.k, |_| true))
    }
    fn confirm(&self, block: &Block, _: &mut dyn Coins) -> Vec<bool> {
        vec![true; block.len()]
    }
    fn pay(&self, block: &Block, confirmed: &[bool]) -> Vec<f64> {
        block
            .entries
            .iter()
            .zip(confirmed)
            .map(|(e, &c)| if c { e.bid.amount } else { 0.0 })
            .collect()
    }
    fn miner_revenue(&self, _: &Block, _: &[bool], payments: &[f64]) -> f64 {
        payments.iter().sum()
    }
}

#[derive(Debug)]
pub struct PostedPriceAllBurn {
    pub k: usize,
    pub r: f64,
}

impl Mechanism for PostedPriceAllBurn {
    fn name(&self) -> String {
        "posted_price_all_burn".into()
    }
    fn params(&self) -> MechanismParams {
        MechanismParams {
            k: Capacity::Finite(self.k),
            reserve: Some(self.r),
        }
    }
    fn bidding_rule(&self) -> BidRule {
        BidRule::Truthful
    }
    fn include(&self, bids: &[Bid], _: &mut dyn Coins) -> Vec<Selected> {
        plain(top(bids, self.k, |b| at_least(b.amount, self.r)))
    }
    fn confirm(&self, block: &Block, _: &mut dyn Coins) -> Vec<bool> {
        block
            .entries
            .iter()
            .map(|e| at_least(e.bid.amount, self.r))
            .collect()
    }
    fn pay(&self, _: &Block, confirmed: &[bool]) -> Vec<f64> {
        confirmed.iter().map(|&c| if c { self.r } else { 0.0 }).collect()
    }
    fn miner_revenue(&self, _: &Block, _: &[bool], _: &[f64]) -> f64 {
        0.0
    }
}

#[derive(Debug)]
pub struct SecondPriceNoBurn {
    pub k: usize,
}

impl Mechanism for SecondPriceNoBurn {
    fn name(&self) -> String {
        "second_price_no_burn".into()
    }
    fn params(&self) -> MechanismParams {
        MechanismParams {
            k: Capacity::Finite(self.k),
            reserve: None,
        }
    }
    fn bidding_rule(&self) -> BidRule {
        BidRule::Truthful
    }
    fn include(&self, bids: &[Bid], _: &mut dyn Coins) -> Vec<Selected> {
        plain(top(bids, self.k, |_| true))
    }
    fn confirm(&self, block: &Block, _: &mut dyn Coins) -> Vec<bool> {
        let mut confirmed = vec![true; block.len()];
        if block.len() >= self.k {
            if let Some(&last) = block_order(block).last() {
                confirmed[last] = false;
            }
        }
        confirmed
    }
    fn pay(&self, block: &Block, confirmed: &[bool]) -> Vec<f64> {
        let price = if block.len() >= self.k {
            block_order(block)
                .last()
                .map_or(0.0, |&i| block.entries[i].bid.amount)
        } else {
            0.0
        };
        confirmed.iter().map(|&c| if c { price } else { 0.0 }).collect()
    }
    fn miner_revenue(&self, _: &Block, _: &[bool], payments: &[f64]) -> f64 {
        payments.iter().sum()
    }
    fn is_trivial(&self) -> bool {
        self.k == 1
    }
}

/// Block holds up to `k + 1` bids: the extra slot carries the price-setting bid.
#[derive(Debug)]
pub struct SecondPriceReserveBurn {
    pub k: usize,
    pub r: f64,
}

impl SecondPriceReserveBurn {
    fn price(&self, block: &Block) -> f64 {
        let order = block_order(block);
        let next = order.get(self.k).map_or(0.0, |&i| block.entries[i].bid.amount);
        self.r.max(next)
    }
}

impl Mechanism for SecondPriceReserveBurn {
    fn name(&self) -> String {
        "second_price_reserve_burn".into()
    }
    fn params(&self) -> MechanismParams {
        MechanismParams {
            k: Capacity::Finite(self.k),
            reserve: Some(self.r),
        }
    }
    fn capacity(&self) -> Capacity {
        Capacity::Finite(self.k + 1)
    }
    fn bidding_rule(&self) -> BidRule {
        BidRule::Truthful
    }
    fn include(&self, bids: &[Bid], _: &mut dyn Coins) -> Vec<Selected> {
        plain(top(bids, self.k + 1, |_| true))
    }
    fn confirm(&self, block: &Block, _: &mut dyn Coins) -> Vec<bool> {
        let mut confirmed = vec![false; block.len()];
        for &i in block_order(block).iter().take(self.k) {
            confirmed[i] = at_least(block.entries[i].bid.amount, self.r);
        }
        confirmed
    }
    fn pay(&self, block: &Block, confirmed: &[bool]) -> Vec<f64> {
        let price = self.price(block);
        confirmed.iter().map(|&c| if c { price } else { 0.0 }).collect()
    }
    fn miner_revenue(&self, _: &Block, confirmed: &[bool], payments: &[f64]) -> f64 {
        confirmed
            .iter()
            .zip(payments)
            .filter(|(c, _)| **c)
            .map(|(_, p)| p - self.r)
            .sum()
    }
}

#[derive(Debug)]
pub struct PostedPriceRandomBurn {
    pub k: usize,
    pub r: f64,
}

impl Mechanism for PostedPriceRandomBurn {
    fn name(&self) -> String {
        "posted_price_random_burn".into()
    }
    fn params(&self) -> MechanismParams {
        MechanismParams {
            k: Capacity::Finite(self.k),
            reserve: Some(self.r),
        }
    }
    fn bidding_rule(&self) -> BidRule {
        BidRule::Truthful
    }
    fn include(&self, bids: &[Bid], coins: &mut dyn Coins) -> Vec<Selected> {
        let eligible = top(bids, bids.len(), |b| at_least(b.amount, self.r));
        let pick = choose_subset(coins, eligible.len(), self.k);
        plain(pick.into_iter().map(|i| eligible[i]).collect())
    }
    fn confirm(&self, block: &Block, _: &mut dyn Coins) -> Vec<bool> {
        block
            .entries
            .iter()
            .map(|e| at_least(e.bid.amount, self.r))
            .collect()
    }
    fn pay(&self, _: &Block, confirmed: &[bool]) -> Vec<f64> {
        confirmed.iter().map(|&c| if c { self.r } else { 0.0 }).collect()
    }
    fn miner_revenue(&self, _: &Block, _: &[bool], _: &[f64]) -> f64 {
        0.0
    }
}

#[derive(Debug)]
pub struct PayNothing {
    pub k: usize,
}

impl Mechanism for PayNothing {
    fn name(&self) -> String {
        "pay_nothing".into()
    }
    fn params(&self) -> MechanismParams {
        MechanismParams {
            k: Capacity::Finite(self.k),
            reserve: None,
        }
    }
    fn bidding_rule(&self) -> BidRule {
        BidRule::Truthful
    }
    fn include(&self, bids: &[Bid], _: &mut dyn Coins) -> Vec<Selected> {
        plain(top(bids, self.k, |_| true))
    }
    fn confirm(&self, block: &Block, _: &mut dyn Coins) -> Vec<bool> {
        vec![true; block.len()]
    }
    fn pay(&self, block: &Block, _: &[bool]) -> Vec<f64> {
        vec![0.0; block.len()]
    }
    fn miner_revenue(&self, _: &Block, _: &[bool], _: &[f64]) -> f64 {
        0.0
    }
}

#[derive(Debug)]
pub struct EvenAuction;

impl Mechanism for EvenAuction {
    fn name(&self) -> String {
        "even_auction".into()
    }
    fn params(&self) -> MechanismParams {
        MechanismParams {
            k: Capacity::Unbounded,
            reserve: None,
        }
    }
    fn bidding_rule(&self) -> BidRule {
        BidRule::WithZero
    }
    fn include(&self, bids: &[Bid], _: &mut dyn Coins) -> Vec<Selected> {
        plain((0..bids.len()).collect())
    }
    fn confirm(&self, block: &Block, _: &mut dyn Coins) -> Vec<bool> {
        vec![block.len().is_multiple_of(2); block.len()]
    }
    fn pay(&self, block: &Block, _: &[bool]) -> Vec<f64> {
        vec![0.0; block.len()]
    }
    fn miner_revenue(&self, _: &Block, _: &[bool], _: &[f64]) -> f64 {
        0.0
    }
}

#[derive(Debug)]
pub struct DiscountAuction {
    pub r: f64,
}

impl DiscountAuction {
    fn price_at(&self, t: usize) -> f64 {
        if t <= 10 {
            self.r
        } else {
            self.r / 2.0
        }
    }

    /// `f(t*)` where `t*` is the largest `t` with `t` bids strictly above `f(t)`.
    pub fn threshold(&self, block: &Block) -> f64 {
        for t in (0..=block.len()).rev() {
            let f = self.price_at(t);
            let above = block
                .entries
                .iter()
                .filter(|e| e.bid.amount > f + EPS_NUM)
                .count();
            if above >= t {
                return f;
            }
        }
        self.r
    }
}

impl Mechanism for DiscountAuction {
    fn name(&self) -> String {
        "discount_auction".into()
    }
    fn params(&self) -> MechanismParams {
        MechanismParams {
            k: Capacity::Unbounded,
            reserve: Some(self.r),
        }
    }
    fn bidding_rule(&self) -> BidRule {
        BidRule::Truthful
    }
    fn include(&self, bids: &[Bid], _: &mut dyn Coins) -> Vec<Selected> {
        plain((0..bids.len()).collect())
    }
    fn confirm(&self, block: &Block, _: &mut dyn Coins) -> Vec<bool> {
        let f = self.threshold(block);
        block.entries.iter().map(|e| e.bid.amount > f + EPS_NUM).collect()
    }
    fn pay(&self, block: &Block, confirmed: &[bool]) -> Vec<f64> {
        let f = self.threshold(block);
        confirmed.iter().map(|&c| if c { f } else { 0.0 }).collect()
    }
    fn miner_revenue(&self, _: &Block, _: &[bool], _: &[f64]) -> f64 {
        0.0
    }
}

#[derive(Debug)]
pub struct SignalOca {
    pub k: usize,
}

impl Mechanism for SignalOca {
    fn name(&self) -> String {
        "signal_oca".into()
    }
    fn params(&self) -> MechanismParams {
        MechanismParams {
            k: Capacity::Finite(self.k),
            reserve: None,
        }
    }
    fn bidding_rule(&self) -> BidRule {
        BidRule::Reciprocal { shift: 2.0 }
    }
    fn sigma(&self) -> Option<BidRule> {
        Some(BidRule::Affine {
            scale: 1.0,
            offset: 1.0,
        })
    }
    fn include(&self, bids: &[Bid], coins: &mut dyn Coins) -> Vec<Selected> {
        let signal = top(bids, bids.len(), |b| b.amount >= 0.0 && b.amount < 1.0);
        if signal.is_empty() {
            return plain(top(bids, self.k, |_| true));
        }
        if signal.len() <= self.k {
            return plain(signal);
        }
        let pick = choose_subset(coins, signal.len(), self.k);
        plain(pick.into_iter().map(|i| signal[i]).collect())
    }
    fn confirm(&self, block: &Block, _: &mut dyn Coins) -> Vec<bool> {
        vec![true; block.len()]
    }
    fn pay(&self, block: &Block, _: &[bool]) -> Vec<f64> {
        vec![0.0; block.len()]
    }
    fn miner_revenue(&self, _: &Block, _: &[bool], _: &[f64]) -> f64 {
        0.0
    }
}

/// Owners are told apart by identity; a user signals its value through a second bid `r / v`.
#[derive(Debug)]
pub struct MultiBidSignal {
    pub k: usize,
    pub r: f64,
}

impl MultiBidSignal {
    fn is_reserve(&self, a: f64) -> bool {
        (a - self.r).abs() <= EPS_NUM
    }

    fn is_code(a: f64) -> bool {
        a > 0.0 && a <= 1.0 + EPS_NUM
    }

    /// Every owner posted exactly one reserve bid and one code bid: returns
    /// `(reserve bid index, decoded value)` per owner.
    fn grouped(&self, bids: &[Bid]) -> Option<Vec<(usize, f64, Identity)>> {
        let mut by_owner: BTreeMap<Identity, Vec<usize>> = BTreeMap::new();
        for (i, b) in bids.iter().enumerate() {
            by_owner.entry(b.owner).or_default().push(i);
        }
        let mut out = Vec::new();
        for (owner, idx) in by_owner {
            let [a, b] = idx[..] else { return None };
            let (ri, ci) = if self.is_reserve(bids[a].amount) && Self::is_code(bids[b].amount) {
                (a, b)
            } else if self.is_reserve(bids[b].amount) && Self::is_code(bids[a].amount) {
                (b, a)
            } else {
                return None;
            };
            out.push((ri, self.r / bids[ci].amount, owner));
        }
        Some(out)
    }

    fn reserve_bids(&self, bids: &[Bid]) -> Vec<usize> {
        top(bids, bids.len(), |b| self.is_reserve(b.amount))
    }
}

impl Mechanism for MultiBidSignal {
    fn name(&self) -> String {
        "multi_bid_signal".into()
    }
    fn params(&self) -> MechanismParams {
        MechanismParams {
            k: Capacity::Finite(self.k),
            reserve: Some(self.r),
        }
    }
    fn bidding_rule(&self) -> BidRule {
        BidRule::Truthful
    }
    fn sigma(&self) -> Option<BidRule> {
        Some(BidRule::ReserveSignal { reserve: self.r })
    }
    fn include(&self, bids: &[Bid], coins: &mut dyn Coins) -> Vec<Selected> {
        // Case 1: pairs grouped by owner; keep the highest decoded values.
        if let Some(mut groups) = self.grouped(bids) {
            groups.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.cmp(&b.2)));
            return plain(groups.iter().take(self.k).map(|g| g.0).collect());
        }
        let reserve = self.reserve_bids(bids);
        let codes = bids.iter().filter(|b| Self::is_code(b.amount)).count();
        let total = bids.len();
        // Case 2: read as pairs without identities.
        if total.is_multiple_of(2) && reserve.len() == total / 2 && codes == total / 2 {
            return plain(reserve.into_iter().take(self.k).collect());
        }
        // Case 3: pairs plus one leftover bid.
        if total % 2 == 1 {
            let n = total / 2;
            let leftover = if reserve.len() == n && codes == n {
                bids.iter()
                    .position(|b| !self.is_reserve(b.amount) && !Self::is_code(b.amount))
            } else if (reserve.len() == n + 1 && codes == n) || (reserve.len() == n && codes == n + 1) {
                None
            } else {
                return self.case_four(bids, coins);
            };
            return match leftover {
                Some(j) if bids[j].amount > self.r + EPS_NUM => {
                    let pick = choose_subset(coins, reserve.len(), self.k - 1);
                    let mut out = vec![j];
                    out.extend(pick.into_iter().map(|i| reserve[i]));
                    plain(out)
                }
                _ => {
                    let pick = choose_subset(coins, reserve.len(), self.k);
                    plain(pick.into_iter().map(|i| reserve[i]).collect())
                }
            };
        }
        self.case_four(bids, coins)
    }
    fn confirm(&self, block: &Block, _: &mut dyn Coins) -> Vec<bool> {
        block
            .entries
            .iter()
            .map(|e| at_least(e.bid.amount, self.r))
            .collect()
    }
    fn pay(&self, _: &Block, confirmed: &[bool]) -> Vec<f64> {
        confirmed.iter().map(|&c| if c { self.r } else { 0.0 }).collect()
    }
    fn miner_revenue(&self, _: &Block, _: &[bool], _: &[f64]) -> f64 {
        0.0
    }
}

impl MultiBidSignal {
    // Case 4: uniformly random min(k, m) among the m bids strictly above r.
    fn case_four(&self, bids: &[Bid], coins: &mut dyn Coins) -> Vec<Selected> {
        // Strictly above r; a bid of exactly r is not eligible.
        let above = top(bids, bids.len(), |b| b.amount > self.r + EPS_NUM);
        let pick = choose_subset(coins, above.len(), self.k);
        plain(pick.into_iter().map(|i| above[i]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coins::Randomness;
    use crate::mechanism::{run_bids, run_honest, run_with_actions};
    use crate::outcome::{expected_utilities, ValueProfile};

    fn bids(amounts: &[f64]) -> Vec<Bid> {
        amounts
            .iter()
            .enumerate()
            .map(|(i, &a)| Bid::primary(Identity::user(i as u32), a))
            .collect()
    }

    #[test]
    fn second_price_no_burn_full_block() {
        let m = build("second_price_no_burn", Some(2), None).unwrap();
        let d = run_bids(m.as_ref(), &bids(&[10.0, 8.0]), Randomness::default()).unwrap();
        let o = &d.atoms[0].0;
        assert!(o.entries[0].confirmed && !o.entries[1].confirmed);
        assert_eq!(o.entries[0].payment, 8.0);
        assert_eq!(o.miner_revenue, 8.0);
    }

    #[test]
    fn pay_nothing_top_one() {
        let m = build("pay_nothing", Some(1), None).unwrap();
        let d = run_bids(m.as_ref(), &bids(&[5.0, 3.0]), Randomness::default()).unwrap();
        let o = &d.atoms[0].0;
        assert!(o.entries[0].confirmed && !o.entries[1].included);
        assert_eq!(o.total_payment(), 0.0);
        assert_eq!(o.miner_revenue, 0.0);
    }

    #[test]
    fn discount_eleven_bids() {
        let m = build("discount_auction", None, Some(2.0)).unwrap();
        let d = run_bids(m.as_ref(), &bids(&[1.5; 11]), Randomness::default()).unwrap();
        let o = &d.atoms[0].0;
        assert_eq!(o.confirmed_count(), 11);
        assert!(o.entries.iter().all(|e| e.payment == 1.0));
        assert_eq!(o.burn(), 11.0);
    }

    #[test]
    fn discount_ten_bids_at_reserve_confirm_nobody() {
        let m = build("discount_auction", None, Some(2.0)).unwrap();
        let d = run_bids(m.as_ref(), &bids(&[2.0; 10]), Randomness::default()).unwrap();
        assert_eq!(d.atoms[0].0.confirmed_count(), 0);
    }

    #[test]
    fn posted_price_all_burn_one_eligible() {
        let m = build("posted_price_all_burn", Some(2), Some(1.0)).unwrap();
        let d = run_honest(
            m.as_ref(),
            &ValueProfile::from_values(&[2.0, 0.5]),
            Randomness::default(),
        )
        .unwrap();
        let o = &d.atoms[0].0;
        assert!(o.entries[0].confirmed && !o.entries[1].confirmed);
        assert_eq!(o.entries[0].payment, 1.0);
        assert_eq!(o.burn(), 1.0);
        assert_eq!(o.miner_revenue, 0.0);
    }

    #[test]
    fn even_auction_confirms_all_pairs() {
        let m = build("even_auction", None, None).unwrap();
        let p = ValueProfile::from_values(&[4.0, 7.0]);
        let d = run_honest(m.as_ref(), &p, Randomness::default()).unwrap();
        assert_eq!(d.atoms[0].0.entries.len(), 4);
        assert_eq!(d.atoms[0].0.confirmed_count(), 4);
        assert_eq!(expected_utilities(&d, &p).unwrap().social_welfare, 11.0);
    }

    #[test]
    fn posted_price_random_burn_splits_evenly() {
        let m = build("posted_price_random_burn", Some(1), Some(1.0)).unwrap();
        let d = run_honest(
            m.as_ref(),
            &ValueProfile::from_values(&[2.0, 3.0]),
            Randomness::default(),
        )
        .unwrap();
        assert_eq!(d.atoms.len(), 2);
        assert!((d.confirmation_probability(0) - 0.5).abs() < 1e-12);
        assert!((d.confirmation_probability(1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn miner_injection_raises_second_price() {
        let m = build("second_price_no_burn", Some(2), None).unwrap();
        let submitted = bids(&[10.0, 8.0]);
        let block = Block::from_bids([submitted[0], Bid::fake(Identity::MINER, 9.0)]);
        let d = run_with_actions(m.as_ref(), &submitted, &block, Randomness::default()).unwrap();
        let o = &d.atoms[0].0;
        assert!(o.entries[0].confirmed);
        assert_eq!(o.entries[0].payment, 9.0);
        assert_eq!(o.miner_revenue, 9.0);
    }

    #[test]
    fn miner_may_include_a_lower_bid() {
        let m = build("pay_nothing", Some(1), None).unwrap();
        let submitted = bids(&[5.0, 3.0]);
        let block = Block::from_bids([submitted[1]]);
        let d = run_with_actions(m.as_ref(), &submitted, &block, Randomness::default()).unwrap();
        assert!(d.atoms[0].0.entries[0].confirmed);
        assert_eq!(d.atoms[0].0.entries[0].bid.amount, 3.0);
    }

    #[test]
    fn empty_block_is_empty_outcome() {
        let m = build("first_price", Some(2), None).unwrap();
        let d = run_with_actions(
            m.as_ref(),
            &bids(&[1.0]),
            &Block::default(),
            Randomness::default(),
        )
        .unwrap();
        assert_eq!(d.atoms[0].0.confirmed_count(), 0);
        assert_eq!(d.atoms[0].0.miner_revenue, 0.0);
    }

    #[test]
    fn oversize_block_rejected() {
        let m = build("first_price", Some(1), None).unwrap();
        let submitted = bids(&[1.0, 2.0]);
        let block = Block::from_bids(submitted.clone());
        assert!(matches!(
            run_with_actions(m.as_ref(), &submitted, &block, Randomness::default()),
            Err(TfmError::OversizeBlock { len: 2, capacity: 1 })
        ));
    }

    #[test]
    fn signal_oca_prefers_signal_range() {
        let m = build("signal_oca", Some(1), None).unwrap();
        let d = run_bids(m.as_ref(), &bids(&[5.0, 0.3]), Randomness::default()).unwrap();
        let o = &d.atoms[0].0;
        assert!(!o.entries[0].included && o.entries[1].confirmed);
    }

    #[test]
    fn reserve_auction_prices_at_next_bid() {
        let m = build("second_price_reserve_burn", Some(1), Some(0.5)).unwrap();
        let d = run_bids(m.as_ref(), &bids(&[3.0, 1.0]), Randomness::default()).unwrap();
        let o = &d.atoms[0].0;
        assert!(o.entries[0].confirmed && !o.entries[1].confirmed);
        assert_eq!(o.entries[0].payment, 1.0);
        assert_eq!(o.miner_revenue, 0.5);
    }

    #[test]
    fn multi_bid_signal_case_one_picks_highest_values() {
        let m = build("multi_bid_signal", Some(1), Some(2.0)).unwrap();
        let sigma = m.sigma().unwrap();
        let p = ValueProfile::from_values(&[3.0, 5.0]);
        let b = crate::mechanism::bids_under(sigma, &p);
        let d = run_bids(m.as_ref(), &b, Randomness::default()).unwrap();
        assert_eq!(d.atoms.len(), 1);
        let o = &d.atoms[0].0;
        let winner: Vec<_> = o.entries.iter().filter(|e| e.confirmed).collect();
        assert_eq!(winner.len(), 1);
        assert_eq!(winner[0].bid.owner, Identity::user(1));
        assert_eq!(winner[0].payment, 2.0);
    }

    #[test]
    fn multi_bid_signal_case_four_is_random() {
        let m = build("multi_bid_signal", Some(1), Some(2.0)).unwrap();
        let d = run_bids(m.as_ref(), &bids(&[3.0, 5.0]), Randomness::default()).unwrap();
        assert_eq!(d.atoms.len(), 2);
    }

    #[test]
    fn multi_bid_signal_case_three_prefers_leftover() {
        let m = build("multi_bid_signal", Some(1), Some(2.0)).unwrap();
        let mut b = vec![
            Bid::primary(Identity::user(0), 2.0),
            Bid::fake(Identity::user(0), 0.5),
        ];
        b.push(Bid::primary(Identity::user(1), 3.0));
        let d = run_bids(m.as_ref(), &b, Randomness::default()).unwrap();
        assert_eq!(d.atoms.len(), 1);
        assert!(d.atoms[0].0.entries[2].confirmed);
    }

    #[test]
    fn params_validated() {
        assert!(matches!(
            build("discount_auction", None, Some(0.0)),
            Err(TfmError::InvalidParams { .. })
        ));
        assert!(matches!(
            build("multi_bid_signal", Some(1), Some(1.0)),
            Err(TfmError::InvalidParams { .. })
        ));
        assert!(matches!(
            build("nope", Some(1), None),
            Err(TfmError::UnknownMechanism(_))
        ));
        assert!(build("first_price", None, None).is_err());
    }
}
