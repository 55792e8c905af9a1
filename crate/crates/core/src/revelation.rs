//! Static revelation-principle transforms: a mechanism with bidding rule β becomes a
//! truthful mechanism whose rules apply β themselves.

use std::cell::RefCell;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coins::{Coins, Randomness};
use crate::error::{Result, TfmError};
use crate::grid::GridSpec;
use crate::mechanism::{bids_under, run_bids, BidRule, Mechanism, MechanismParams, Selected};
use crate::numeric::{self, EPS_NUM};
use crate::outcome::{canonical_user_outcome, Annotation, Bid, Block, BlockEntry, Capacity, ValueProfile};
use crate::properties::Verdict;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformMode {
    Single,
    Multi,
}

impl fmt::Display for TransformMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransformMode::Single => "single",
            TransformMode::Multi => "multi",
        })
    }
}

impl std::str::FromStr for TransformMode {
    type Err = TfmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(TransformMode::Single),
            "multi" => Ok(TransformMode::Multi),
            _ => Err(TfmError::Spec(format!("unknown transform mode {s:?}"))),
        }
    }
}

/// A truthful mechanism derived from `source`.
pub struct TransformedMechanism {
    source: Arc<dyn Mechanism>,
    beta: BidRule,
    mode: TransformMode,
}

/// Inspectable description of a transformed mechanism.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransformDescription {
    pub name: String,
    pub source: String,
    pub params: MechanismParams,
    pub mode: TransformMode,
    pub beta: BidRule,
    pub bidding_rule: BidRule,
    pub capacity: Capacity,
    pub annotations: &'static str,
}

impl TransformedMechanism {
    pub fn source(&self) -> &Arc<dyn Mechanism> {
        &self.source
    }

    pub fn beta(&self) -> BidRule {
        self.beta
    }

    pub fn mode(&self) -> TransformMode {
        self.mode
    }

    pub fn describe(&self) -> TransformDescription {
        TransformDescription {
            name: self.name(),
            source: self.source.name(),
            params: self.source.params(),
            mode: self.mode,
            beta: self.beta,
            bidding_rule: BidRule::Truthful,
            capacity: self.capacity(),
            annotations: match self.mode {
                TransformMode::Single => "none",
                TransformMode::Multi => "out-of-band: each entry lists the simulated bids it stands for",
            },
        }
    }

    fn simulate(&self, b: &Bid) -> Vec<Bid> {
        self.beta
            .bids_for(b.owner, b.amount)
            .into_iter()
            .map(|s| Bid {
                primary: s.primary && b.primary,
                ..s
            })
            .collect()
    }

    fn single_block(&self, block: &Block) -> Block {
        Block::from_bids(block.entries.iter().map(|e| Bid {
            amount: self.beta.apply_single(e.bid.amount).unwrap_or(f64::NAN),
            ..e.bid
        }))
    }

    /// Simulated block and, per simulated bid, the entry it came from; `None` when some
    /// annotation is not a sub-multiset of β applied to its bid.
    fn multi_block(&self, block: &Block) -> Option<(Block, Vec<usize>, Vec<Option<usize>>)> {
        let mut bids = Vec::new();
        let mut origin = Vec::new();
        let mut primary_at = Vec::new();
        for (i, e) in block.entries.iter().enumerate() {
            let ann = e.annotation.as_ref()?;
            if ann.simulated.is_empty() {
                return None;
            }
            let mut pool = self.beta.apply(e.bid.amount);
            let mut primary = None;
            for &a in &ann.simulated {
                let j = pool.iter().position(|&p| (p - a).abs() <= EPS_NUM)?;
                let is_primary = j == 0 && primary.is_none() && e.bid.primary && !pool[0].is_nan();
                pool[j] = f64::NAN;
                if is_primary {
                    primary = Some(bids.len());
                }
                bids.push(Bid {
                    owner: e.bid.owner,
                    amount: a,
                    primary: is_primary,
                });
                origin.push(i);
            }
            primary_at.push(primary);
        }
        Some((Block::from_bids(bids), origin, primary_at))
    }

    /// Simulated confirmations from the last `confirm` on this thread, recomputed
    /// when `pay` is called on its own.
    fn sim_confirmed(&self, sim: &Block) -> Vec<bool> {
        LAST.with(|l| {
            l.borrow()
                .as_ref()
                .filter(|(b, _)| b == sim)
                .map(|(_, c)| c.clone())
        })
        .unwrap_or_else(|| self.source.confirm(sim, &mut FirstChoice))
    }
}

thread_local! {
    static LAST: RefCell<Option<(Block, Vec<bool>)>> = const { RefCell::new(None) };
}

struct FirstChoice;

impl Coins for FirstChoice {
    fn pick(&mut self, _arity: u64) -> u64 {
        0
    }
}

impl Mechanism for TransformedMechanism {
    fn name(&self) -> String {
        format!("revealed_{}:{}", self.mode, self.source.name())
    }

    fn params(&self) -> MechanismParams {
        self.source.params()
    }

    fn capacity(&self) -> Capacity {
        self.source.capacity()
    }

    fn bidding_rule(&self) -> BidRule {
        BidRule::Truthful
    }

    fn include(&self, bids: &[Bid], coins: &mut dyn Coins) -> Vec<Selected> {
        match self.mode {
            TransformMode::Single => {
                let mapped: Vec<Bid> = bids
                    .iter()
                    .map(|b| Bid {
                        amount: self.beta.apply_single(b.amount).unwrap_or(f64::NAN),
                        ..*b
                    })
                    .collect();
                self.source
                    .include(&mapped, coins)
                    .into_iter()
                    .map(|s| Selected::plain(s.index))
                    .collect()
            }
            TransformMode::Multi => {
                let mut sim = Vec::new();
                let mut origin = Vec::new();
                for (i, b) in bids.iter().enumerate() {
                    for s in self.simulate(b) {
                        sim.push(s);
                        origin.push(i);
                    }
                }
                let mut out: Vec<Selected> = Vec::new();
                for s in self.source.include(&sim, coins) {
                    let i = origin[s.index];
                    let a = sim[s.index].amount;
                    match out.iter_mut().find(|o| o.index == i) {
                        Some(o) => o
                            .annotation
                            .get_or_insert_with(|| Annotation { simulated: vec![] })
                            .simulated
                            .push(a),
                        None => out.push(Selected {
                            index: i,
                            annotation: Some(Annotation { simulated: vec![a] }),
                        }),
                    }
                }
                out
            }
        }
    }

    fn confirm(&self, block: &Block, coins: &mut dyn Coins) -> Vec<bool> {
        match self.mode {
            TransformMode::Single => self.source.confirm(&self.single_block(block), coins),
            TransformMode::Multi => {
                // An invalid block confirms nothing and earns nothing.
                let Some((sim, _, primary_at)) = self.multi_block(block) else {
                    return vec![false; block.len()];
                };
                let confirmed = self.source.confirm(&sim, coins);
                let out = primary_at
                    .iter()
                    .map(|p| p.is_some_and(|j| confirmed[j]))
                    .collect();
                LAST.with(|l| *l.borrow_mut() = Some((sim, confirmed)));
                out
            }
        }
    }

    fn pay(&self, block: &Block, confirmed: &[bool]) -> Vec<f64> {
        match self.mode {
            TransformMode::Single => self.source.pay(&self.single_block(block), confirmed),
            TransformMode::Multi => {
                let Some((sim, origin, _)) = self.multi_block(block) else {
                    return vec![0.0; block.len()];
                };
                let sim_confirmed = self.sim_confirmed(&sim);
                let mut out = vec![0.0; block.len()];
                for (p, &i) in self.source.pay(&sim, &sim_confirmed).iter().zip(&origin) {
                    out[i] += p;
                }
                out
            }
        }
    }

    fn miner_revenue(&self, block: &Block, confirmed: &[bool], payments: &[f64]) -> f64 {
        match self.mode {
            TransformMode::Single => {
                self.source
                    .miner_revenue(&self.single_block(block), confirmed, payments)
            }
            TransformMode::Multi => {
                let Some((sim, _, _)) = self.multi_block(block) else {
                    return 0.0;
                };
                let sim_confirmed = self.sim_confirmed(&sim);
                let sim_payments = self.source.pay(&sim, &sim_confirmed);
                self.source.miner_revenue(&sim, &sim_confirmed, &sim_payments)
            }
        }
    }

    fn annotated(&self) -> bool {
        self.mode == TransformMode::Multi
    }

    /// Every non-empty sub-multiset of β(b), kept in β order.
    fn annotation_choices(&self, bid: &Bid) -> Vec<Option<Annotation>> {
        if self.mode == TransformMode::Single {
            return vec![None];
        }
        let beta = self.beta.apply(bid.amount);
        let mut out: Vec<Option<Annotation>> = Vec::new();
        for mask in 1u32..(1 << beta.len()) {
            let simulated: Vec<f64> = (0..beta.len())
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| beta[i])
                .collect();
            let a = Some(Annotation { simulated });
            if !out.contains(&a) {
                out.push(a);
            }
        }
        out
    }

    fn is_trivial(&self) -> bool {
        self.source.is_trivial()
    }
}

/// Truthful Π′ composing Π's rules with β applied to every bid.
pub fn transform_single(source: Arc<dyn Mechanism>) -> Result<TransformedMechanism> {
    let beta = source.bidding_rule();
    if !beta.is_single() {
        return Err(TfmError::MultiBidRule);
    }
    Ok(TransformedMechanism {
        source,
        beta,
        mode: TransformMode::Single,
    })
}

/// Truthful Π′ whose inclusion rule annotates each entry with the β-bids it simulates.
///
/// Annotations travel out-of-band and do not count against the block size.
pub fn transform_multi(source: Arc<dyn Mechanism>) -> Result<TransformedMechanism> {
    Ok(TransformedMechanism {
        beta: source.bidding_rule(),
        source,
        mode: TransformMode::Multi,
    })
}

pub fn transform(source: Arc<dyn Mechanism>, mode: TransformMode) -> Result<TransformedMechanism> {
    match mode {
        TransformMode::Single => transform_single(source),
        TransformMode::Multi => transform_multi(source),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub verdict: Verdict,
    pub profiles_checked: usize,
    /// First profile where the user-level outcome distributions differ.
    #[serde(with = "numeric::sig12_vec", skip_serializing_if = "Vec::is_empty")]
    pub mismatch: Vec<f64>,
}

/// Honest play in `original` and truthful play in `derived` give the same user-level
/// outcome distribution on every grid profile.
pub fn outcome_equivalence_check(
    original: &dyn Mechanism,
    derived: &dyn Mechanism,
    grid: &GridSpec,
) -> Result<EquivalenceReport> {
    let rand = Randomness {
        seed: grid.seed,
        ..Randomness::default()
    };
    let mut report = EquivalenceReport {
        verdict: Verdict::HoldsOnGrid,
        profiles_checked: 0,
        mismatch: vec![],
    };
    for values in grid.expand(original.capacity()).profiles {
        report.profiles_checked += 1;
        let p = ValueProfile::from_values(&values);
        let a = run_bids(original, &bids_under(original.bidding_rule(), &p), rand)?;
        let b = run_bids(derived, &bids_under(derived.bidding_rule(), &p), rand)?;
        if !canonical_user_outcome(&a, &p).approx_eq(&canonical_user_outcome(&b, &p)) {
            report.verdict = Verdict::Violated;
            report.mismatch = values;
            break;
        }
    }
    Ok(report)
}

/// Block of `bids` annotated with the full β vector of each bid.
pub fn fully_annotated(m: &TransformedMechanism, bids: &[Bid]) -> Block {
    Block {
        entries: bids
            .iter()
            .map(|&bid| BlockEntry {
                bid,
                annotation: Some(Annotation {
                    simulated: m.beta.apply(bid.amount),
                }),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::build;
    use crate::mechanism::settle_block;
    use crate::outcome::Identity;

    #[test]
    fn single_rejects_multi_bid_rules() {
        let m = build("even_auction", None, None).unwrap();
        assert!(matches!(transform_single(m), Err(TfmError::MultiBidRule)));
    }

    #[test]
    fn multi_annotates_both_bids() {
        let m = transform_multi(build("even_auction", None, None).unwrap()).unwrap();
        let bids = [
            Bid::primary(Identity::user(0), 4.0),
            Bid::primary(Identity::user(1), 7.0),
        ];
        let d = run_bids(&m, &bids, Randomness::default()).unwrap();
        let o = &d.atoms[0].0;
        assert!(o.entries.iter().all(|e| e.confirmed));
    }

    #[test]
    fn invalid_annotation_confirms_nothing() {
        let m = transform_multi(build("even_auction", None, None).unwrap()).unwrap();
        let mut block = fully_annotated(&m, &[Bid::primary(Identity::user(0), 4.0)]);
        block.entries[0].annotation = Some(Annotation {
            simulated: vec![5.0, 0.0],
        });
        let d = settle_block(&m, &block, Randomness::default()).unwrap();
        assert!(d.atoms[0].0.entries.iter().all(|e| !e.confirmed));
        assert_eq!(d.atoms[0].0.miner_revenue, 0.0);
    }
}
