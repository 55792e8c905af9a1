//! Strategy spaces for users, miners, and coalitions, and the exhaustive best-response search.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::coins::Randomness;
use crate::error::{Result, TfmError};
use crate::grid::{AmountMode, Budget};
use crate::mechanism::{bids_under, run_bids, settle_block, BidRule, Mechanism};
use crate::numeric::{self, quantize, EPS_GAP, EPS_NUM};
use crate::outcome::{
    Bid, Block, BlockEntry, Capacity, Identity, OutcomeDistribution, OwnerClass, ValueProfile,
};

/// Everything a deviation search needs to know about one profile.
pub struct Scenario<'a> {
    pub mechanism: &'a dyn Mechanism,
    pub profile: ValueProfile,
    /// Rule non-deviating users follow: the bidding rule, or a σ under test.
    pub rule: BidRule,
    pub rand: Randomness,
}

impl<'a> Scenario<'a> {
    pub fn honest(mechanism: &'a dyn Mechanism, values: &[f64]) -> Self {
        Scenario {
            mechanism,
            profile: ValueProfile::from_values(values),
            rule: mechanism.bidding_rule(),
            rand: Randomness::default(),
        }
    }

    pub fn with_rule(mut self, rule: BidRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn honest_bids(&self) -> Vec<Bid> {
        bids_under(self.rule, &self.profile)
    }

    pub fn values(&self) -> Vec<f64> {
        self.profile.users().map(|(_, v)| v).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrimaryAction {
    Honest,
    Replace {
        #[serde(with = "numeric::sig12")]
        amount: f64,
    },
    Drop,
}

/// A single user's posted bid vector relative to honest play.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserStrategy {
    pub primary: PrimaryAction,
    #[serde(with = "numeric::sig12_vec")]
    pub fakes: Vec<f64>,
}

impl UserStrategy {
    pub fn honest() -> Self {
        UserStrategy {
            primary: PrimaryAction::Honest,
            fakes: vec![],
        }
    }

    pub fn is_honest(&self) -> bool {
        self.primary == PrimaryAction::Honest && self.fakes.is_empty()
    }

    pub fn bids(&self, owner: Identity, value: f64, rule: BidRule) -> Vec<Bid> {
        let mut out = match self.primary {
            PrimaryAction::Honest => rule.bids_for(owner, value),
            PrimaryAction::Replace { amount } => vec![Bid::primary(owner, amount)],
            PrimaryAction::Drop => vec![],
        };
        out.extend(self.fakes.iter().map(|&a| Bid::fake(owner, a)));
        out
    }
}

/// A miner action: an explicit block in the plain model, or censor-and-inject under
/// trusted hardware, where the choice is fixed before honest bids are seen.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum MinerStrategy {
    Plain {
        block: Block,
    },
    TrustedHardware {
        censored: Vec<Identity>,
        #[serde(with = "numeric::sig12_vec")]
        injected: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    Honest,
    /// One user deviates alone; the miner runs the inclusion rule honestly.
    User {
        user: Identity,
        strategy: UserStrategy,
    },
    /// The coalition's miner publishes this block.
    Miner {
        miner: MinerStrategy,
    },
    /// Trusted-hardware coalition: miner censors/injects, members post their own bids.
    Joint {
        miner: MinerStrategy,
        members: BTreeMap<Identity, UserStrategy>,
    },
}

/// The deviating coalition and what it does.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoalitionStrategy {
    pub miner: bool,
    pub members: Vec<Identity>,
    pub action: Action,
}

/// Who deviates together.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Coalition {
    pub miner: bool,
    pub members: Vec<Identity>,
}

impl Coalition {
    pub fn user(id: Identity) -> Self {
        Coalition {
            miner: false,
            members: vec![id],
        }
    }

    pub fn miner() -> Self {
        Coalition {
            miner: true,
            members: vec![],
        }
    }

    pub fn with_miner(members: Vec<Identity>) -> Self {
        Coalition { miner: true, members }
    }

    /// Joint expected utility of the coalition under `dist`.
    pub fn utility(&self, dist: &OutcomeDistribution, profile: &ValueProfile) -> f64 {
        dist.atoms
            .iter()
            .map(|(o, p)| {
                let mut u = if self.miner { o.miner_revenue } else { 0.0 };
                for e in &o.entries {
                    let owner = e.bid.owner;
                    if owner.is_miner() {
                        if self.miner {
                            u -= e.payment;
                        }
                    } else if self.members.contains(&owner) {
                        u -= e.payment;
                        if e.bid.primary && e.confirmed {
                            u += profile.value(&owner).unwrap_or(0.0);
                        }
                    }
                }
                p * u
            })
            .sum()
    }
}

/// Candidate deviation amounts for a scenario.
///
/// Grid values and 0; with `grid+ties` also every honest bid, every honest bid
/// ± `tie`, and the reserve ± `tie`; plus `budget.random` log-uniform draws on
/// `(0, 2 · max grid]`.
pub fn candidate_amounts(scenario: &Scenario, grid_values: &[f64], tie: f64, budget: &Budget) -> Vec<f64> {
    let mut c: Vec<f64> = grid_values.to_vec();
    c.push(0.0);
    if budget.amounts == AmountMode::GridTies {
        let mut anchors: Vec<f64> = scenario.honest_bids().iter().map(|b| b.amount).collect();
        if let Some(r) = scenario.mechanism.params().reserve {
            anchors.push(r);
        }
        for a in anchors {
            c.push(a);
            c.push(a + tie);
            if a - tie >= 0.0 {
                c.push(a - tie);
            }
        }
    }
    if budget.random > 0 {
        let hi = 2.0 * grid_values.iter().copied().fold(1.0, f64::max);
        let lo: f64 = 1e-3;
        let mut rng = ChaCha8Rng::seed_from_u64(budget.random_seed);
        for _ in 0..budget.random {
            let u: f64 = rng.random();
            c.push(lo * (hi / lo).powf(u));
        }
    }
    normalize_amounts(c)
}

fn normalize_amounts(mut c: Vec<f64>) -> Vec<f64> {
    c.retain(|a| a.is_finite() && *a >= 0.0);
    c.sort_by(f64::total_cmp);
    c.dedup_by(|a, b| (*a - *b).abs() <= EPS_NUM);
    c
}

/// Multisets of `amounts` with exactly `size` elements, in lexicographic index order.
fn multisets(amounts: &[f64], size: usize) -> Vec<Vec<f64>> {
    fn go(amounts: &[f64], size: usize, start: usize, cur: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for i in start..amounts.len() {
            cur.push(amounts[i]);
            go(amounts, size, i, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(amounts, size, 0, &mut Vec::new(), &mut out);
    out
}

/// Honest first, then every replacement, then drop; each base is then combined
/// with every fake multiset of size `1..=user_fakes`.
pub fn enumerate_user_deviations(amounts: &[f64], user_fakes: usize) -> Vec<UserStrategy> {
    let mut bases = vec![PrimaryAction::Honest];
    bases.extend(amounts.iter().map(|&amount| PrimaryAction::Replace { amount }));
    bases.push(PrimaryAction::Drop);
    let mut out: Vec<UserStrategy> = bases
        .iter()
        .map(|&primary| UserStrategy {
            primary,
            fakes: vec![],
        })
        .collect();
    for size in 1..=user_fakes {
        for fakes in multisets(amounts, size) {
            for &primary in &bases {
                out.push(UserStrategy {
                    primary,
                    fakes: fakes.clone(),
                });
            }
        }
    }
    out
}

fn miner_fake(j: usize, amount: f64) -> Bid {
    Bid::fake(
        Identity {
            class: OwnerClass::Miner,
            id: j as u32,
        },
        amount,
    )
}

/// Every block built from a subset of `known` plus up to `fakes` injected bids, within capacity.
pub fn enumerate_miner_deviations(
    known: &[Bid],
    capacity: Capacity,
    fakes: usize,
    amounts: &[f64],
) -> Vec<MinerStrategy> {
    let cap = capacity.finite().unwrap_or(usize::MAX);
    let mut out = Vec::new();
    for size in 0..=fakes {
        for fs in multisets(amounts, size) {
            for mask in 0u64..(1u64 << known.len()) {
                let n = mask.count_ones() as usize + fs.len();
                if n > cap {
                    continue;
                }
                let mut bids: Vec<Bid> = (0..known.len())
                    .filter(|i| mask >> i & 1 == 1)
                    .map(|i| known[i])
                    .collect();
                bids.extend(fs.iter().enumerate().map(|(j, &a)| miner_fake(j, a)));
                out.push(MinerStrategy::Plain {
                    block: Block::from_bids(bids),
                });
            }
        }
    }
    out
}

/// Trusted-hardware miner strategies: every censored subset of `honest` times every
/// injected multiset of up to `fakes` amounts.
pub fn enumerate_trusted_miner(honest: &[Identity], fakes: usize, amounts: &[f64]) -> Vec<MinerStrategy> {
    let mut out = Vec::new();
    for size in 0..=fakes {
        for injected in multisets(amounts, size) {
            for mask in 0u64..(1u64 << honest.len()) {
                out.push(MinerStrategy::TrustedHardware {
                    censored: (0..honest.len())
                        .filter(|i| mask >> i & 1 == 1)
                        .map(|i| honest[i])
                        .collect(),
                    injected: injected.clone(),
                });
            }
        }
    }
    out
}

/// Result of a best-response search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationResult {
    pub best: CoalitionStrategy,
    #[serde(with = "numeric::sig12")]
    pub honest_utility: f64,
    #[serde(with = "numeric::sig12")]
    pub best_utility: f64,
    /// `best_utility − honest_utility`, never negative.
    #[serde(with = "numeric::sig12")]
    pub gap: f64,
    pub evaluated: usize,
    pub truncated: bool,
}

impl DeviationResult {
    pub fn is_violation(&self) -> bool {
        self.gap > EPS_GAP
    }
}

struct Tracker<'c> {
    coalition: &'c Coalition,
    honest: f64,
    best: f64,
    best_action: Action,
    evaluated: usize,
    limit: usize,
    truncated: bool,
}

impl Tracker<'_> {
    fn offer(&mut self, utility: f64, action: impl FnOnce() -> Action) {
        self.evaluated += 1;
        if utility > self.best + EPS_NUM * 1e-3 {
            self.best = utility;
            self.best_action = action();
        }
    }

    fn full(&mut self) -> bool {
        if self.evaluated >= self.limit {
            self.truncated = true;
        }
        self.truncated
    }

    fn finish(self) -> DeviationResult {
        DeviationResult {
            best: CoalitionStrategy {
                miner: self.coalition.miner,
                members: self.coalition.members.clone(),
                action: self.best_action,
            },
            honest_utility: self.honest,
            best_utility: self.best,
            gap: (self.best - self.honest).max(0.0),
            evaluated: self.evaluated,
            truncated: self.truncated,
        }
    }
}

/// Honest-play utility of the coalition.
pub fn honest_utility(scenario: &Scenario, coalition: &Coalition) -> Result<f64> {
    let d = run_bids(scenario.mechanism, &scenario.honest_bids(), scenario.rand)?;
    Ok(coalition.utility(&d, &scenario.profile))
}

/// Exhaustive search for the coalition's best deviation within `budget`.
///
/// Honest play is evaluated first, so the gap is never negative.
pub fn best_deviation(
    scenario: &Scenario,
    coalition: &Coalition,
    amounts: &[f64],
    budget: &Budget,
) -> Result<DeviationResult> {
    for m in &coalition.members {
        if scenario.profile.value(m).is_none() || m.is_miner() {
            return Err(TfmError::Spec(format!("coalition member {m} not in profile")));
        }
    }
    let honest = honest_utility(scenario, coalition)?;
    let mut t = Tracker {
        coalition,
        honest,
        best: honest,
        best_action: Action::Honest,
        evaluated: 1,
        limit: budget.max_strategies,
        truncated: false,
    };
    match (coalition.miner, coalition.members.as_slice()) {
        (false, [user]) => search_user(scenario, *user, amounts, budget, &mut t)?,
        (false, _) => {
            return Err(TfmError::Spec(
                "a coalition without the miner must have exactly one user".into(),
            ))
        }
        (true, _) => search_blocks(scenario, coalition, amounts, budget, &mut t)?,
    }
    Ok(t.finish())
}

fn search_user(
    scenario: &Scenario,
    user: Identity,
    amounts: &[f64],
    budget: &Budget,
    t: &mut Tracker,
) -> Result<()> {
    let value = scenario.profile.value(&user).unwrap_or(0.0);
    let others: Vec<Bid> = scenario
        .honest_bids()
        .into_iter()
        .filter(|b| b.owner != user)
        .collect();
    for s in enumerate_user_deviations(amounts, budget.user_fakes) {
        if s.is_honest() {
            continue;
        }
        if t.full() {
            break;
        }
        let mut bids = others.clone();
        bids.extend(s.bids(user, value, scenario.rule));
        let d = run_bids(scenario.mechanism, &bids, scenario.rand)?;
        let u = t.coalition.utility(&d, &scenario.profile);
        t.offer(u, || Action::User {
            user,
            strategy: s.clone(),
        });
    }
    Ok(())
}

/// Members sharing a value (and hence honest bids) are interchangeable.
struct MemberGroup {
    ids: Vec<Identity>,
    value: f64,
}

/// Per-group choice: the first `honest` members bid honestly, the next `moved`
/// post a single primary bid at `amount`, the rest stay out of the block.
#[derive(Clone, Copy)]
struct GroupChoice {
    honest: usize,
    moved: usize,
    amount: f64,
}

fn group_choices(size: usize, amounts: &[f64]) -> Vec<GroupChoice> {
    let mut out = Vec::new();
    for honest in (0..=size).rev() {
        for absent in 0..=size - honest {
            let moved = size - honest - absent;
            if moved == 0 {
                out.push(GroupChoice {
                    honest,
                    moved,
                    amount: 0.0,
                });
            } else {
                out.extend(amounts.iter().map(|&amount| GroupChoice {
                    honest,
                    moved,
                    amount,
                }));
            }
        }
    }
    out
}

/// Block-centric search for coalitions containing the miner.
///
/// A block is a subset of non-member honest bids (identical bids grouped, lowest
/// ids first), member bids per [`GroupChoice`], and up to `F` miner fakes.
fn search_blocks(
    scenario: &Scenario,
    coalition: &Coalition,
    amounts: &[f64],
    budget: &Budget,
    t: &mut Tracker,
) -> Result<()> {
    let m = scenario.mechanism;
    let cap = m.capacity().finite().unwrap_or(usize::MAX);
    let fakes = budget.miner_fakes(m.capacity());

    let mut outsider_groups: BTreeMap<(i64, bool, i64), Vec<Bid>> = BTreeMap::new();
    for b in scenario.honest_bids() {
        if !coalition.members.contains(&b.owner) {
            outsider_groups
                .entry((-quantize(b.amount), !b.primary, 0))
                .or_default()
                .push(b);
        }
    }
    let outsiders: Vec<Vec<Bid>> = outsider_groups.into_values().collect();

    let mut by_value: BTreeMap<i64, MemberGroup> = BTreeMap::new();
    for &id in &coalition.members {
        let v = scenario.profile.value(&id).unwrap_or(0.0);
        by_value
            .entry(-quantize(v))
            .or_insert_with(|| MemberGroup {
                ids: vec![],
                value: v,
            })
            .ids
            .push(id);
    }
    let groups: Vec<MemberGroup> = by_value.into_values().collect();
    let choices: Vec<Vec<GroupChoice>> = groups
        .iter()
        .map(|g| group_choices(g.ids.len(), amounts))
        .collect();

    let ctx = BlockSearch {
        scenario,
        outsiders: &outsiders,
        groups: &groups,
        choices: &choices,
        cap,
    };
    for size in 0..=fakes {
        for fs in multisets(amounts, size) {
            if fs.len() > cap {
                continue;
            }
            let fake_bids: Vec<Bid> = fs.iter().enumerate().map(|(j, &a)| miner_fake(j, a)).collect();
            let mut bids = Vec::new();
            ctx.members(0, &fake_bids, &mut bids, t)?;
            if t.truncated {
                return Ok(());
            }
        }
    }
    Ok(())
}

struct BlockSearch<'s, 'a> {
    scenario: &'s Scenario<'a>,
    outsiders: &'s [Vec<Bid>],
    groups: &'s [MemberGroup],
    choices: &'s [Vec<GroupChoice>],
    cap: usize,
}

impl BlockSearch<'_, '_> {
    fn members(&self, g: usize, fakes: &[Bid], bids: &mut Vec<Bid>, t: &mut Tracker) -> Result<()> {
        if bids.len() + fakes.len() > self.cap {
            return Ok(());
        }
        if g == self.groups.len() {
            return self.outsiders(0, fakes, bids, t);
        }
        let group = &self.groups[g];
        for c in &self.choices[g] {
            let mark = bids.len();
            for &id in &group.ids[..c.honest] {
                bids.extend(self.scenario.rule.bids_for(id, group.value));
            }
            for &id in &group.ids[c.honest..c.honest + c.moved] {
                bids.push(Bid::primary(id, c.amount));
            }
            self.members(g + 1, fakes, bids, t)?;
            bids.truncate(mark);
            if t.truncated {
                break;
            }
        }
        Ok(())
    }

    fn outsiders(&self, g: usize, fakes: &[Bid], bids: &mut Vec<Bid>, t: &mut Tracker) -> Result<()> {
        if bids.len() + fakes.len() > self.cap {
            return Ok(());
        }
        if g == self.outsiders.len() {
            return self.evaluate(fakes, bids, t);
        }
        let group = &self.outsiders[g];
        for take in (0..=group.len()).rev() {
            let mark = bids.len();
            bids.extend_from_slice(&group[..take]);
            self.outsiders(g + 1, fakes, bids, t)?;
            bids.truncate(mark);
            if t.truncated {
                break;
            }
        }
        Ok(())
    }

    fn evaluate(&self, fakes: &[Bid], bids: &[Bid], t: &mut Tracker) -> Result<()> {
        let m = self.scenario.mechanism;
        let mut all = bids.to_vec();
        all.extend_from_slice(fakes);
        let mut blocks = vec![Block::from_bids(all)];
        if m.annotated() {
            blocks = annotate_all(m, blocks.pop().unwrap_or_default());
        }
        for block in blocks {
            if t.full() {
                return Ok(());
            }
            let d = settle_block(m, &block, self.scenario.rand)?;
            let u = t.coalition.utility(&d, &self.scenario.profile);
            t.offer(u, || Action::Miner {
                miner: MinerStrategy::Plain { block: block.clone() },
            });
        }
        Ok(())
    }
}

/// Every combination of per-entry annotation choices.
fn annotate_all(m: &dyn Mechanism, block: Block) -> Vec<Block> {
    let mut out = vec![Block { entries: vec![] }];
    for e in &block.entries {
        let choices = m.annotation_choices(&e.bid);
        let mut next = Vec::with_capacity(out.len() * choices.len());
        for partial in &out {
            for a in &choices {
                let mut b = partial.clone();
                b.entries.push(BlockEntry {
                    bid: e.bid,
                    annotation: a.clone(),
                });
                next.push(b);
            }
        }
        out = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::build;

    #[test]
    fn user_enumeration_counts() {
        let s = enumerate_user_deviations(&[0.0, 1.0, 2.0], 0);
        assert_eq!(s.len(), 5);
        assert!(s[0].is_honest());
        assert_eq!(s[4].primary, PrimaryAction::Drop);
        assert_eq!(enumerate_user_deviations(&[0.0, 1.0, 2.0], 1).len(), 5 + 3 * 5);
        assert_eq!(enumerate_user_deviations(&[], 2).len(), 2);
    }

    #[test]
    fn miner_enumeration_counts() {
        let known = [
            Bid::primary(Identity::user(0), 1.0),
            Bid::primary(Identity::user(1), 2.0),
        ];
        assert_eq!(
            enumerate_miner_deviations(&known, Capacity::Finite(2), 0, &[]).len(),
            4
        );
        assert_eq!(
            enumerate_miner_deviations(&known, Capacity::Finite(1), 0, &[]).len(),
            3
        );
        let th = enumerate_trusted_miner(&[Identity::user(0), Identity::user(1)], 1, &[0.5]);
        assert_eq!(th.len(), 8);
    }

    #[test]
    fn miner_injects_fake_into_second_price() {
        let m = build("second_price_no_burn", Some(2), None).unwrap();
        let sc = Scenario::honest(m.as_ref(), &[10.0, 8.0]);
        let budget = Budget {
            fakes: Some(1),
            ..Budget::default()
        };
        let r = best_deviation(&sc, &Coalition::miner(), &[8.5, 9.0, 9.5], &budget).unwrap();
        assert!((r.honest_utility - 8.0).abs() < 1e-12);
        assert!((r.gap - 1.5).abs() < 1e-12);
        let amounts = [9.0];
        let r = best_deviation(&sc, &Coalition::miner(), &amounts, &budget).unwrap();
        assert!((r.gap - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pay_nothing_colludes_with_loser() {
        let m = build("pay_nothing", Some(1), None).unwrap();
        let sc = Scenario::honest(m.as_ref(), &[5.0, 3.0]);
        let r = best_deviation(
            &sc,
            &Coalition::with_miner(vec![Identity::user(1)]),
            &[0.0, 3.0, 5.0],
            &Budget::default(),
        )
        .unwrap();
        assert!((r.gap - 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_budget_gives_zero_gap() {
        let m = build("first_price", Some(1), None).unwrap();
        let sc = Scenario::honest(m.as_ref(), &[3.0, 1.0]);
        let budget = Budget {
            max_strategies: 1,
            ..Budget::default()
        };
        let r = best_deviation(&sc, &Coalition::user(Identity::user(1)), &[2.0], &budget).unwrap();
        assert_eq!(r.gap, 0.0);
        assert_eq!(r.best.action, Action::Honest);
    }

    #[test]
    fn first_price_underbid() {
        let m = build("first_price", Some(1), None).unwrap();
        let sc = Scenario::honest(m.as_ref(), &[3.0, 1.0]);
        let amounts = candidate_amounts(&sc, &[0.0, 1.0, 2.0, 3.0], 0.25, &Budget::default());
        let r = best_deviation(
            &sc,
            &Coalition::user(Identity::user(0)),
            &amounts,
            &Budget::default(),
        )
        .unwrap();
        // Bidding exactly 1 wins the tie against user 1 (lower id).
        assert!((r.gap - 2.0).abs() < 1e-12, "{r:?}");
    }
}
