//! The five-rule mechanism interface and the execution engine.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::coins::{resolve, Coins, Randomness, Resolved, Rule};
use crate::error::{Result, TfmError};
use crate::numeric::EPS_NUM;
use crate::outcome::{
    Annotation, Bid, Block, BlockEntry, Capacity, Identity, Outcome, OutcomeDistribution, OutcomeEntry,
    ValueProfile,
};

/// Maps a value to the list of bids a user posts. The first bid is the primary one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BidRule {
    Truthful,
    /// `scale * v + offset`.
    Affine {
        scale: f64,
        offset: f64,
    },
    /// `1 / (v + shift)`.
    Reciprocal {
        shift: f64,
    },
    /// `(v, 0)`.
    WithZero,
    /// `(r, r / v)` when `v >= r`, nothing otherwise.
    ReserveSignal {
        reserve: f64,
    },
}

impl BidRule {
    pub fn apply(&self, v: f64) -> Vec<f64> {
        match *self {
            BidRule::Truthful => vec![v],
            BidRule::Affine { scale, offset } => vec![scale * v + offset],
            BidRule::Reciprocal { shift } => vec![1.0 / (v + shift)],
            BidRule::WithZero => vec![v, 0.0],
            BidRule::ReserveSignal { reserve } => {
                if v >= reserve && v > 0.0 {
                    vec![reserve, reserve / v]
                } else {
                    vec![]
                }
            }
        }
    }

    /// The single bid this rule outputs, if it always outputs exactly one.
    pub fn apply_single(&self, v: f64) -> Option<f64> {
        match self {
            BidRule::Truthful | BidRule::Affine { .. } | BidRule::Reciprocal { .. } => Some(self.apply(v)[0]),
            BidRule::WithZero | BidRule::ReserveSignal { .. } => None,
        }
    }

    pub fn is_single(&self) -> bool {
        self.apply_single(1.0).is_some()
    }

    pub fn is_truthful(&self) -> bool {
        match *self {
            BidRule::Truthful => true,
            BidRule::Affine { scale, offset } => scale == 1.0 && offset == 0.0,
            _ => false,
        }
    }

    /// Bids of `owner` holding value `v`.
    pub fn bids_for(&self, owner: Identity, v: f64) -> Vec<Bid> {
        self.apply(v)
            .into_iter()
            .enumerate()
            .map(|(i, amount)| Bid {
                owner,
                amount,
                primary: i == 0,
            })
            .collect()
    }
}

impl fmt::Display for BidRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BidRule::Truthful => write!(f, "v"),
            BidRule::Affine { scale, offset } => write!(f, "{scale}*v+{offset}"),
            BidRule::Reciprocal { shift } => write!(f, "1/(v+{shift})"),
            BidRule::WithZero => write!(f, "(v,0)"),
            BidRule::ReserveSignal { reserve } => write!(f, "({reserve},{reserve}/v)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismParams {
    pub k: Capacity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reserve: Option<f64>,
}

/// A bid chosen by the inclusion rule, referenced by its index in the pending bid vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Selected {
    pub index: usize,
    pub annotation: Option<Annotation>,
}

impl Selected {
    pub fn plain(index: usize) -> Self {
        Selected {
            index,
            annotation: None,
        }
    }
}

/// A transaction fee mechanism given by its five rules.
///
/// `include` is executed by the miner; `confirm`, `pay`, and `miner_revenue` are
/// executed by the chain on whatever block the miner produced.
pub trait Mechanism: Send + Sync {
    fn name(&self) -> String;
    fn params(&self) -> MechanismParams;

    fn capacity(&self) -> Capacity {
        self.params().k
    }

    fn bidding_rule(&self) -> BidRule;

    /// Declared globally optimal single-bid strategy, if any.
    fn sigma(&self) -> Option<BidRule> {
        None
    }

    fn include(&self, bids: &[Bid], coins: &mut dyn Coins) -> Vec<Selected>;
    fn confirm(&self, block: &Block, coins: &mut dyn Coins) -> Vec<bool>;
    fn pay(&self, block: &Block, confirmed: &[bool]) -> Vec<f64>;
    fn miner_revenue(&self, block: &Block, confirmed: &[bool], payments: &[f64]) -> f64;

    /// Whether block entries carry annotations.
    fn annotated(&self) -> bool {
        false
    }

    /// Annotations a miner may attach to `bid` when building a block by hand.
    fn annotation_choices(&self, _bid: &Bid) -> Vec<Option<Annotation>> {
        vec![None]
    }

    /// True when no bid can ever be confirmed with positive utility.
    fn is_trivial(&self) -> bool {
        false
    }
}

impl fmt::Debug for dyn Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({:?})", self.name(), self.params())
    }
}

fn bug(m: &dyn Mechanism, invariant: &'static str, detail: String) -> TfmError {
    TfmError::MechanismBug {
        mechanism: m.name(),
        invariant,
        detail,
    }
}

/// Applies the chain-side rules to a block. Entries of the result follow block order.
pub fn settle(m: &dyn Mechanism, block: &Block, coins: &mut dyn Coins) -> Outcome {
    coins.enter(Rule::Confirmation);
    let confirmed = m.confirm(block, coins);
    let payments = m.pay(block, &confirmed);
    let miner_revenue = m.miner_revenue(block, &confirmed, &payments);
    Outcome {
        entries: block
            .entries
            .iter()
            .zip(confirmed.iter().zip(&payments))
            .map(|(e, (&c, &p))| OutcomeEntry {
                bid: e.bid,
                included: true,
                confirmed: c,
                payment: p,
            })
            .collect(),
        miner_revenue,
    }
}

/// Bids produced by each user of `profile` under the mechanism's bidding rule.
pub fn honest_bids(m: &dyn Mechanism, profile: &ValueProfile) -> Vec<Bid> {
    bids_under(m.bidding_rule(), profile)
}

pub fn bids_under(rule: BidRule, profile: &ValueProfile) -> Vec<Bid> {
    profile.users().flat_map(|(id, v)| rule.bids_for(id, v)).collect()
}

fn check_capacity(m: &dyn Mechanism, len: usize) -> Result<()> {
    if m.capacity().admits(len) {
        Ok(())
    } else {
        Err(bug(
            m,
            "capacity",
            format!("block of {len} exceeds {}", m.capacity()),
        ))
    }
}

fn check_budget(m: &dyn Mechanism, o: &Outcome) -> Result<()> {
    o.check_feasible().map_err(|d| bug(m, "budget feasibility", d))
}

fn collect(rand: Randomness, r: Resolved<Result<Outcome>>) -> Result<OutcomeDistribution> {
    match r {
        Resolved::Exact(atoms) => {
            let atoms = atoms
                .into_iter()
                .map(|(o, p)| o.map(|o| (o, p)))
                .collect::<Result<Vec<_>>>()?;
            Ok(OutcomeDistribution {
                mode: crate::outcome::DistributionMode::Exact,
                atoms,
            })
        }
        Resolved::Sampled(samples) => Ok(OutcomeDistribution::empirical(
            rand.seed,
            samples.into_iter().collect::<Result<Vec<_>>>()?,
        )),
    }
}

/// One execution with honest inclusion: entries follow `bids` order, unincluded bids marked.
pub fn execute(m: &dyn Mechanism, bids: &[Bid], coins: &mut dyn Coins) -> Result<Outcome> {
    coins.enter(Rule::Inclusion);
    let selected = m.include(bids, coins);
    check_capacity(m, selected.len())?;
    let mut seen = vec![false; bids.len()];
    let mut entries = Vec::with_capacity(selected.len());
    for s in &selected {
        if s.index >= bids.len() || seen[s.index] {
            return Err(bug(m, "inclusion", format!("bad index {}", s.index)));
        }
        seen[s.index] = true;
        entries.push(BlockEntry {
            bid: bids[s.index],
            annotation: s.annotation.clone(),
        });
    }
    let block = Block { entries };
    let settled = settle(m, &block, coins);

    let mut out: Vec<OutcomeEntry> = bids
        .iter()
        .map(|&bid| OutcomeEntry {
            bid,
            included: false,
            confirmed: false,
            payment: 0.0,
        })
        .collect();
    for (s, e) in selected.iter().zip(settled.entries) {
        out[s.index] = e;
    }
    let o = Outcome {
        entries: out,
        miner_revenue: settled.miner_revenue,
    };
    check_budget(m, &o)?;
    Ok(o)
}

/// Runs honest inclusion on an arbitrary pending bid vector.
pub fn run_bids(m: &dyn Mechanism, bids: &[Bid], rand: Randomness) -> Result<OutcomeDistribution> {
    collect(rand, resolve(rand, |c| execute(m, bids, c)))
}

/// Runs the mechanism with every user following the bidding rule and an honest miner.
pub fn run_honest(
    m: &dyn Mechanism,
    profile: &ValueProfile,
    rand: Randomness,
) -> Result<OutcomeDistribution> {
    let bids = honest_bids(m, profile);
    let dist = run_bids(m, &bids, rand)?;
    for (o, _) in &dist.atoms {
        check_individual_rationality(m, o, profile)?;
    }
    Ok(dist)
}

/// Confirmed honest users pay at most their value; unconfirmed ones pay nothing.
pub fn check_individual_rationality(m: &dyn Mechanism, o: &Outcome, profile: &ValueProfile) -> Result<()> {
    for (id, v) in profile.users() {
        let mut paid = 0.0;
        let mut confirmed = false;
        for e in o.entries.iter().filter(|e| e.bid.owner == id) {
            paid += e.payment;
            confirmed |= e.bid.primary && e.confirmed;
        }
        let limit = if confirmed { v } else { 0.0 };
        if paid > limit + EPS_NUM {
            return Err(bug(
                m,
                "individual rationality",
                format!("{id} with value {v} pays {paid} (confirmed: {confirmed})"),
            ));
        }
    }
    Ok(())
}

/// Applies only the chain-side rules to a block the miner chose.
///
/// Block entries must be pending bids or miner-owned fakes. Entries of the
/// result are the block entries followed by the pending bids left out.
pub fn run_with_actions(
    m: &dyn Mechanism,
    submitted: &[Bid],
    block: &Block,
    rand: Randomness,
) -> Result<OutcomeDistribution> {
    if let Capacity::Finite(k) = m.capacity() {
        if block.len() > k {
            return Err(TfmError::OversizeBlock {
                len: block.len(),
                capacity: k,
            });
        }
    }
    let mut used = vec![false; submitted.len()];
    for e in &block.entries {
        match submitted
            .iter()
            .enumerate()
            .position(|(i, b)| !used[i] && b == &e.bid)
        {
            Some(i) => used[i] = true,
            None if e.bid.owner.is_miner() => {}
            None => {
                return Err(TfmError::InvalidBlock(format!(
                    "{} bid {} was never submitted",
                    e.bid.owner, e.bid.amount
                )))
            }
        }
    }
    let left_out: Vec<OutcomeEntry> = submitted
        .iter()
        .zip(&used)
        .filter(|(_, u)| !**u)
        .map(|(&bid, _)| OutcomeEntry {
            bid,
            included: false,
            confirmed: false,
            payment: 0.0,
        })
        .collect();
    collect(
        rand,
        resolve(rand, |c| {
            let mut o = settle(m, block, c);
            o.entries.extend(left_out.iter().cloned());
            check_budget(m, &o)?;
            Ok(o)
        }),
    )
}

/// Exact (or sampled) distribution of the chain-side rules on `block`, entries in block order.
pub fn settle_block(m: &dyn Mechanism, block: &Block, rand: Randomness) -> Result<OutcomeDistribution> {
    collect(
        rand,
        resolve(rand, |c| {
            let o = settle(m, block, c);
            check_budget(m, &o)?;
            Ok(o)
        }),
    )
}
