//! Property checkers: UIC, MIC, c-SCP, global SCP, OCA-proofness, weak symmetry, and
//! their Bayesian variants under trusted hardware.
//!
//! Every check walks a grid of value profiles and reports the first profile on which some
//! deviation beats honest play by more than [`EPS_GAP`]. A `holds_on_grid` verdict only
//! covers the grid and budget recorded in the report.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bayesian::Distribution;
use crate::coins::{derive_seed, Randomness};
use crate::deviation::{
    best_deviation, candidate_amounts, enumerate_trusted_miner, enumerate_user_deviations, Action, Coalition,
    CoalitionStrategy, DeviationResult, MinerStrategy, PrimaryAction, Scenario, UserStrategy,
};
use crate::error::{Result, TfmError};
use crate::grid::{Budget, GridSpec};
use crate::mechanism::{bids_under, run_bids, settle_block, BidRule, Mechanism, MechanismParams};
use crate::numeric::{self, format_sig12, EPS_GAP, EPS_NUM};
use crate::outcome::{canonical_outcome, Bid, Capacity, Identity, OwnerClass, ValueProfile};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Statement of the Bayesian decision rule, embedded in Bayesian reports.
pub const MARGIN_RULE: &str = "violated iff mean gain > 3 * stderr + 1e-7 (common random numbers)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    HoldsOnGrid,
    Violated,
    Inconclusive,
}

impl Verdict {
    /// Process exit code for the verdict.
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::HoldsOnGrid => 0,
            Verdict::Violated => 2,
            Verdict::Inconclusive => 3,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::HoldsOnGrid => "holds_on_grid",
            Verdict::Violated => "violated",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

/// Which baseline an OCA check compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcaVariant {
    /// Every user bids `σ(v)`, a single bid.
    Strict,
    /// `σ` may output several bids per user.
    MultiBid,
    /// Users coordinate on any single-bid vector; the miner includes honestly.
    Coordinated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BayesTarget {
    Uic,
    Mic,
    Scp(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    Uic,
    Mic,
    Scp(usize),
    GlobalScp,
    Oca(OcaVariant),
    /// Search a σ family for one that certifies OCA-proofness.
    OcaSearch,
    Symmetry,
    Bayes(BayesTarget),
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Property::Uic => write!(f, "uic"),
            Property::Mic => write!(f, "mic"),
            Property::Scp(c) => write!(f, "scp:{c}"),
            Property::GlobalScp => write!(f, "global-scp"),
            Property::Oca(OcaVariant::Strict) => write!(f, "oca"),
            Property::Oca(OcaVariant::MultiBid) => write!(f, "oca:multi"),
            Property::Oca(OcaVariant::Coordinated) => write!(f, "oca:coordinated"),
            Property::OcaSearch => write!(f, "oca:search"),
            Property::Symmetry => write!(f, "symmetry"),
            Property::Bayes(BayesTarget::Uic) => write!(f, "bayes:uic"),
            Property::Bayes(BayesTarget::Mic) => write!(f, "bayes:mic"),
            Property::Bayes(BayesTarget::Scp(c)) => write!(f, "bayes:scp:{c}"),
        }
    }
}

impl FromStr for Property {
    type Err = TfmError;

    fn from_str(s: &str) -> Result<Self> {
        let c = |x: &str| {
            x.parse::<usize>()
                .map_err(|_| TfmError::Spec(format!("bad coalition size in {s:?}")))
        };
        Ok(match s.trim() {
            "uic" => Property::Uic,
            "mic" => Property::Mic,
            "global-scp" => Property::GlobalScp,
            "oca" => Property::Oca(OcaVariant::Strict),
            "oca:multi" => Property::Oca(OcaVariant::MultiBid),
            "oca:coordinated" => Property::Oca(OcaVariant::Coordinated),
            "oca:search" => Property::OcaSearch,
            "symmetry" => Property::Symmetry,
            "bayes:uic" => Property::Bayes(BayesTarget::Uic),
            "bayes:mic" => Property::Bayes(BayesTarget::Mic),
            other => {
                if let Some(x) = other.strip_prefix("bayes:scp:") {
                    Property::Bayes(BayesTarget::Scp(c(x)?))
                } else if let Some(x) = other.strip_prefix("scp:") {
                    Property::Scp(c(x)?)
                } else {
                    return Err(TfmError::Spec(format!("unknown property {other:?}")));
                }
            }
        })
    }
}

/// A single-bid (or, for the multi-bid variant, multi-bid) strategy used as the OCA baseline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaStrategy {
    pub rule: BidRule,
    pub label: String,
    /// `σ(v) ≤ v` at every grid value (primary bid for multi-bid rules).
    pub individually_rational: bool,
}

impl SigmaStrategy {
    pub fn new(rule: BidRule, label: impl Into<String>, values: &[f64]) -> Self {
        let individually_rational = values
            .iter()
            .all(|&v| rule.apply(v).first().is_none_or(|&b| b <= v + EPS_NUM));
        SigmaStrategy {
            rule,
            label: label.into(),
            individually_rational,
        }
    }
}

impl fmt::Display for SigmaStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.label, self.rule)
    }
}

/// Parses `v`, `declared`, or `affine:γ,c`.
pub fn parse_sigma(s: &str, m: &dyn Mechanism) -> Result<(String, BidRule)> {
    match s.trim() {
        "v" | "identity" => Ok(("identity".into(), BidRule::Truthful)),
        "declared" => m
            .sigma()
            .map(|r| ("declared".into(), r))
            .ok_or_else(|| TfmError::Spec(format!("{} declares no σ", m.name()))),
        other => {
            let args = other
                .strip_prefix("affine:")
                .ok_or_else(|| TfmError::Spec(format!("unknown σ {other:?}")))?;
            let parts: Vec<f64> = args
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| TfmError::Spec(format!("bad affine σ {other:?}")))?;
            match parts[..] {
                [scale, offset]
                    if scale.is_finite() && offset.is_finite() && offset >= 0.0 && scale > 0.0 =>
                {
                    Ok((
                        format!("affine:{},{}", format_sig12(scale), format_sig12(offset)),
                        BidRule::Affine { scale, offset },
                    ))
                }
                _ => Err(TfmError::Spec(format!("bad affine σ {other:?}"))),
            }
        }
    }
}

/// Affine family `σ(v) = γ·v + c`, optionally with the mechanism's declared σ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaFamily {
    pub scales: Vec<f64>,
    pub offsets: Vec<f64>,
    pub include_declared: bool,
}

impl Default for SigmaFamily {
    fn default() -> Self {
        SigmaFamily {
            scales: vec![0.25, 0.5, 0.75, 1.0],
            offsets: vec![0.0, 0.5, 1.0, 2.0],
            include_declared: true,
        }
    }
}

impl SigmaFamily {
    pub fn affine_only() -> Self {
        SigmaFamily {
            include_declared: false,
            ..SigmaFamily::default()
        }
    }

    /// Members in a fixed order: declared σ first, then scales × offsets.
    pub fn members(&self, m: &dyn Mechanism) -> Vec<(String, BidRule)> {
        let mut out = Vec::new();
        if self.include_declared {
            if let Some(r) = m.sigma().filter(|r| r.is_single()) {
                out.push(("declared".to_string(), r));
            }
        }
        for &scale in &self.scales {
            for &offset in &self.offsets {
                out.push((
                    format!("affine:{},{}", format_sig12(scale), format_sig12(offset)),
                    BidRule::Affine { scale, offset },
                ));
            }
        }
        out
    }
}

/// Evidence behind a `violated` verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    #[serde(with = "numeric::sig12_vec")]
    pub profile: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strategy: Option<CoalitionStrategy>,
    /// Weak symmetry: value `i` was reassigned to user `permutation[i]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub permutation: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<String>,
    #[serde(with = "numeric::sig12")]
    pub honest_utility: f64,
    #[serde(with = "numeric::sig12")]
    pub deviant_utility: f64,
    #[serde(with = "numeric::sig12")]
    pub gap: f64,
    #[serde(with = "numeric::sig12_opt", skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
}

impl Witness {
    fn from_deviation(profile: Vec<f64>, r: &DeviationResult) -> Self {
        Witness {
            profile,
            strategy: Some(r.best.clone()),
            permutation: None,
            sigma: None,
            honest_utility: r.honest_utility,
            deviant_utility: r.best_utility,
            gap: r.gap,
            stderr: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SearchStats {
    /// Profiles on the grid before sampling.
    pub profiles_total: usize,
    pub profiles_evaluated: usize,
    pub coalitions_evaluated: usize,
    pub strategies_evaluated: usize,
    /// Searches that stopped at the strategy cap.
    pub truncated_searches: usize,
}

impl SearchStats {
    fn absorb(&mut self, r: &DeviationResult) {
        self.coalitions_evaluated += 1;
        self.strategies_evaluated += r.evaluated;
        self.truncated_searches += r.truncated as usize;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub property: String,
    pub mechanism: String,
    pub params: MechanismParams,
    pub grid: String,
    pub budget: String,
    pub verdict: Verdict,
    pub witness: Option<Witness>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<SigmaStrategy>,
    pub stats: SearchStats,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<String>,
    pub notes: Vec<String>,
    /// Set by the command-line front end.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_fingerprint: Option<String>,
}

impl PropertyReport {
    fn new(property: Property, m: &dyn Mechanism, grid: String, budget: &Budget, seed: u64) -> Self {
        PropertyReport {
            schema_version: SCHEMA_VERSION,
            tool_version: TOOL_VERSION.to_string(),
            property: property.to_string(),
            mechanism: m.name(),
            params: m.params(),
            grid,
            budget: budget.to_string(),
            verdict: Verdict::HoldsOnGrid,
            witness: None,
            sigma: None,
            stats: SearchStats::default(),
            seed,
            margin: None,
            notes: vec![],
            config_fingerprint: None,
        }
    }

    pub fn gap(&self) -> f64 {
        self.witness.as_ref().map_or(0.0, |w| w.gap)
    }

    fn note_truncation(&mut self) {
        if self.stats.truncated_searches > 0 {
            self.notes.push(format!(
                "{} searches stopped at the strategy cap",
                self.stats.truncated_searches
            ));
        }
    }
}

fn randomness(grid: &GridSpec) -> Randomness {
    Randomness {
        seed: grid.seed,
        ..Randomness::default()
    }
}

fn users(profile: &ValueProfile) -> Vec<Identity> {
    profile.users().map(|(id, _)| id).collect()
}

/// All subsets of `ids` of size `lo..=hi`, smaller subsets first.
fn subsets(ids: &[Identity], lo: usize, hi: usize) -> Vec<Vec<Identity>> {
    let mut out = Vec::new();
    for size in lo..=hi.min(ids.len()) {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            out.push(idx.iter().map(|&i| ids[i]).collect());
            let Some(p) = (0..size).rev().find(|&p| idx[p] < ids.len() - size + p) else {
                break;
            };
            idx[p] += 1;
            for q in p + 1..size {
                idx[q] = idx[q - 1] + 1;
            }
        }
    }
    out
}

/// Runs the deviation search for every coalition of every grid profile and stops at the
/// first violating profile, reporting its largest gap.
fn sweep_profiles(
    report: &mut PropertyReport,
    m: &dyn Mechanism,
    grid: &GridSpec,
    budget: &Budget,
    rule: BidRule,
    coalitions: &dyn Fn(&ValueProfile) -> Vec<Coalition>,
) -> Result<()> {
    let expansion = grid.expand(m.capacity());
    report.stats.profiles_total = expansion.total;
    for values in expansion.profiles {
        report.stats.profiles_evaluated += 1;
        let scenario = Scenario {
            mechanism: m,
            profile: ValueProfile::from_values(&values),
            rule,
            rand: randomness(grid),
        };
        let amounts = candidate_amounts(&scenario, &grid.values, grid.tie_offset(), budget);
        let mut worst: Option<DeviationResult> = None;
        for c in coalitions(&scenario.profile) {
            let r = best_deviation(&scenario, &c, &amounts, budget)?;
            report.stats.absorb(&r);
            if r.is_violation() && worst.as_ref().is_none_or(|w| r.gap > w.gap + EPS_NUM) {
                worst = Some(r);
            }
        }
        if let Some(w) = worst {
            report.verdict = Verdict::Violated;
            report.witness = Some(Witness::from_deviation(values, &w));
            break;
        }
    }
    report.note_truncation();
    Ok(())
}

/// No user gains by deviating alone while others bid honestly and the miner is honest.
pub fn check_uic(m: &dyn Mechanism, grid: &GridSpec, budget: &Budget) -> Result<PropertyReport> {
    let mut rep = PropertyReport::new(Property::Uic, m, grid.to_string(), budget, grid.seed);
    sweep_profiles(&mut rep, m, grid, budget, m.bidding_rule(), &|p| {
        users(p).into_iter().map(Coalition::user).collect()
    })?;
    Ok(rep)
}

/// The miner cannot raise its revenue by deviating from the honest block or injecting fakes.
pub fn check_mic(m: &dyn Mechanism, grid: &GridSpec, budget: &Budget) -> Result<PropertyReport> {
    let mut rep = PropertyReport::new(Property::Mic, m, grid.to_string(), budget, grid.seed);
    sweep_profiles(&mut rep, m, grid, budget, m.bidding_rule(), &|_| {
        vec![Coalition::miner()]
    })?;
    Ok(rep)
}

/// The miner together with any 1 to `c` users cannot gain jointly; `c = 0` is MIC.
pub fn check_cscp(m: &dyn Mechanism, c: usize, grid: &GridSpec, budget: &Budget) -> Result<PropertyReport> {
    let mut rep = PropertyReport::new(Property::Scp(c), m, grid.to_string(), budget, grid.seed);
    sweep_profiles(&mut rep, m, grid, budget, m.bidding_rule(), &|p| {
        if c == 0 {
            return vec![Coalition::miner()];
        }
        subsets(&users(p), 1, c)
            .into_iter()
            .map(Coalition::with_miner)
            .collect()
    })?;
    Ok(rep)
}

/// Honest bidding maximizes social welfare against every grand-coalition deviation.
pub fn check_global_scp(m: &dyn Mechanism, grid: &GridSpec, budget: &Budget) -> Result<PropertyReport> {
    let mut rep = PropertyReport::new(Property::GlobalScp, m, grid.to_string(), budget, grid.seed);
    sweep_profiles(&mut rep, m, grid, budget, m.bidding_rule(), &|p| {
        vec![Coalition::with_miner(users(p))]
    })?;
    Ok(rep)
}

/// Best welfare of coordinated single-bid vectors with honest inclusion.
fn best_coordinated(scenario: &Scenario, amounts: &[f64], cap: usize) -> Result<(f64, usize, bool)> {
    let ids = users(&scenario.profile);
    let grand = Coalition::with_miner(ids.clone());
    // Choice index: 0 = σ bid, 1..=amounts.len() = that amount, last = drop.
    let arity = amounts.len() + 2;
    let mut choice = vec![0usize; ids.len()];
    let (mut best, mut evaluated) = (f64::NEG_INFINITY, 0usize);
    loop {
        if evaluated >= cap {
            return Ok((best, evaluated, true));
        }
        let mut bids = Vec::new();
        for (i, &id) in ids.iter().enumerate() {
            let v = scenario.profile.value(&id).unwrap_or(0.0);
            match choice[i] {
                0 => bids.extend(scenario.rule.bids_for(id, v)),
                j if j <= amounts.len() => bids.push(Bid::primary(id, amounts[j - 1])),
                _ => {}
            }
        }
        let d = run_bids(scenario.mechanism, &bids, scenario.rand)?;
        best = best.max(grand.utility(&d, &scenario.profile));
        evaluated += 1;
        let Some(p) = (0..ids.len()).rev().find(|&p| choice[p] + 1 < arity) else {
            return Ok((best, evaluated, false));
        };
        choice[p] += 1;
        for c in choice.iter_mut().skip(p + 1) {
            *c = 0;
        }
    }
}

/// Social welfare when every user follows `σ` (with honest inclusion) is at least that
/// of any grand-coalition deviation.
pub fn check_oca_with_sigma(
    m: &dyn Mechanism,
    sigma: &SigmaStrategy,
    variant: OcaVariant,
    grid: &GridSpec,
    budget: &Budget,
) -> Result<PropertyReport> {
    if variant == OcaVariant::Strict && !sigma.rule.is_single() {
        return Err(TfmError::MultiBidRule);
    }
    let mut rep = PropertyReport::new(Property::Oca(variant), m, grid.to_string(), budget, grid.seed);
    rep.sigma = Some(sigma.clone());
    if variant != OcaVariant::Coordinated {
        sweep_profiles(&mut rep, m, grid, budget, sigma.rule, &|p| {
            vec![Coalition::with_miner(users(p))]
        })?;
    } else {
        let expansion = grid.expand(m.capacity());
        rep.stats.profiles_total = expansion.total;
        for values in expansion.profiles {
            rep.stats.profiles_evaluated += 1;
            let scenario = Scenario {
                mechanism: m,
                profile: ValueProfile::from_values(&values),
                rule: sigma.rule,
                rand: randomness(grid),
            };
            let amounts = candidate_amounts(&scenario, &grid.values, grid.tie_offset(), budget);
            let grand = Coalition::with_miner(users(&scenario.profile));
            let r = best_deviation(&scenario, &grand, &amounts, budget)?;
            rep.stats.absorb(&r);
            let (base, evaluated, truncated) = best_coordinated(&scenario, &amounts, budget.max_strategies)?;
            rep.stats.strategies_evaluated += evaluated;
            rep.stats.truncated_searches += truncated as usize;
            let base = base.max(r.honest_utility);
            let gap = r.best_utility - base;
            if gap > EPS_GAP {
                rep.verdict = Verdict::Violated;
                let mut w = Witness::from_deviation(values, &r);
                w.honest_utility = base;
                w.gap = gap;
                rep.witness = Some(w);
                break;
            }
        }
        rep.note_truncation();
    }
    if let Some(w) = rep.witness.as_mut() {
        w.sigma = Some(sigma.label.clone());
    }
    if !sigma.individually_rational {
        rep.notes.push(format!(
            "σ = {} is not individually rational on the grid",
            sigma.rule
        ));
    }
    Ok(rep)
}

/// Tries each σ in `family`; certifies with the first that holds on the grid.
///
/// A finite family can certify OCA-proofness but never refute it, so failure is reported
/// as `inconclusive` with the σ whose worst gap was smallest.
pub fn search_oca_sigma(
    m: &dyn Mechanism,
    family: &SigmaFamily,
    grid: &GridSpec,
    budget: &Budget,
) -> Result<PropertyReport> {
    let mut rep = PropertyReport::new(Property::OcaSearch, m, grid.to_string(), budget, grid.seed);
    let mut best: Option<PropertyReport> = None;
    let members = family.members(m);
    for (label, rule) in &members {
        let sigma = SigmaStrategy::new(*rule, label.clone(), &grid.values);
        let r = check_oca_with_sigma(m, &sigma, OcaVariant::Strict, grid, budget)?;
        rep.stats.profiles_total = rep.stats.profiles_total.max(r.stats.profiles_total);
        rep.stats.profiles_evaluated += r.stats.profiles_evaluated;
        rep.stats.coalitions_evaluated += r.stats.coalitions_evaluated;
        rep.stats.strategies_evaluated += r.stats.strategies_evaluated;
        rep.stats.truncated_searches += r.stats.truncated_searches;
        if r.verdict == Verdict::HoldsOnGrid {
            rep.verdict = Verdict::HoldsOnGrid;
            rep.sigma = r.sigma;
            rep.notes.push(format!("σ = {label} certifies on the grid"));
            return Ok(rep);
        }
        if best.as_ref().is_none_or(|b| r.gap() < b.gap() - EPS_NUM) {
            best = Some(r);
        }
    }
    rep.verdict = Verdict::Inconclusive;
    rep.notes.push(format!(
        "no σ found in family ({} candidates); this does not show the mechanism is not OCA-proof",
        members.len()
    ));
    if let Some(b) = best {
        rep.sigma = b.sigma;
        rep.witness = b.witness;
    }
    Ok(rep)
}

/// Steps `p` to the next permutation in lexicographic order.
fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
        return false;
    };
    let j = (i..p.len()).rev().find(|&j| p[j] > p[i - 1]).unwrap_or(i);
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Outcome distributions agree, up to canonical form, when values are reassigned among users.
///
/// `rule` overrides the bidding rule (for example to permute σ-bid pairs).
pub fn check_weak_symmetry(
    m: &dyn Mechanism,
    grid: &GridSpec,
    max_permutations: usize,
    rule: Option<BidRule>,
) -> Result<PropertyReport> {
    let budget = Budget::default();
    let mut rep = PropertyReport::new(Property::Symmetry, m, grid.to_string(), &budget, grid.seed);
    rep.budget = format!("max_permutations={max_permutations}");
    let rule = rule.unwrap_or_else(|| m.bidding_rule());
    let rand = randomness(grid);
    let expansion = grid.expand(m.capacity());
    rep.stats.profiles_total = expansion.total;
    'profiles: for values in expansion.profiles {
        rep.stats.profiles_evaluated += 1;
        let base = canonical_outcome(&run_bids(
            m,
            &bids_under(rule, &ValueProfile::from_values(&values)),
            rand,
        )?);
        let mut perm: Vec<usize> = (0..values.len()).collect();
        let mut tried = 0;
        while next_permutation(&mut perm) && tried < max_permutations {
            tried += 1;
            rep.stats.strategies_evaluated += 1;
            let bids: Vec<Bid> = values
                .iter()
                .zip(&perm)
                .flat_map(|(&v, &j)| rule.bids_for(Identity::user(j as u32), v))
                .collect();
            let other = canonical_outcome(&run_bids(m, &bids, rand)?);
            if !base.approx_eq(&other) {
                rep.verdict = Verdict::Violated;
                rep.witness = Some(Witness {
                    profile: values.clone(),
                    strategy: None,
                    permutation: Some(perm.clone()),
                    sigma: None,
                    honest_utility: 0.0,
                    deviant_utility: 0.0,
                    gap: 1.0,
                    stderr: None,
                });
                break 'profiles;
            }
        }
    }
    Ok(rep)
}

/// Joint distribution of values in a Bayesian check.
#[derive(Debug, Clone, PartialEq)]
pub enum Prior {
    /// Each of `n` users draws independently.
    Iid(Distribution),
    /// A point mass on one profile.
    Point(Vec<f64>),
}

impl Prior {
    fn is_random(&self) -> bool {
        matches!(self, Prior::Iid(_))
    }

    fn draw(&self, n: usize, seed: u64, sample: usize) -> Vec<f64> {
        match self {
            Prior::Point(v) => v.clone(),
            Prior::Iid(d) => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, sample as u64));
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
        }
    }

    /// Values a deviating user is conditioned on.
    fn value_grid(&self) -> Vec<f64> {
        match self {
            Prior::Point(v) => {
                let mut v = v.clone();
                v.sort_by(f64::total_cmp);
                v.dedup();
                v
            }
            Prior::Iid(d) => {
                let top = if d.is_bounded() { 1.0 } else { 0.99 };
                let mut v: Vec<f64> = (0..10).map(|j| d.quantile(j as f64 / 10.0)).collect();
                v.push(d.quantile(top));
                v
            }
        }
    }
}

impl fmt::Display for Prior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prior::Iid(d) => write!(f, "iid {d}"),
            Prior::Point(v) => {
                let s: Vec<String> = v.iter().map(|x| format_sig12(*x)).collect();
                write!(f, "point {}", s.join(","))
            }
        }
    }
}

/// Settings for [`check_bayesian`].
#[derive(Debug, Clone, PartialEq)]
pub struct BayesConfig {
    /// Inclusive range of user counts; ignored for a point prior.
    pub n_range: (usize, usize),
    pub samples: usize,
    pub seed: u64,
}

struct Arm {
    n: usize,
    profile_hint: Vec<f64>,
    strategy: CoalitionStrategy,
    honest: f64,
    deviant: f64,
    mean: f64,
    stderr: f64,
}

impl Arm {
    fn excess(&self) -> f64 {
        self.mean - 3.0 * self.stderr - EPS_GAP
    }
}

/// Welford accumulator for paired differences.
#[derive(Default)]
struct Paired {
    n: usize,
    honest: f64,
    deviant: f64,
    mean: f64,
    m2: f64,
}

impl Paired {
    fn push(&mut self, honest: f64, deviant: f64) {
        self.n += 1;
        self.honest += honest;
        self.deviant += deviant;
        let d = deviant - honest;
        let delta = d - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (d - self.mean);
    }

    fn stderr(&self, random: bool) -> f64 {
        if !random || self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64 / self.n as f64).sqrt()
        }
    }
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

/// Bids posted under a trusted-hardware joint strategy on `profile`.
fn joint_bids(
    rule: BidRule,
    profile: &ValueProfile,
    miner: &MinerStrategy,
    members: &BTreeMap<Identity, UserStrategy>,
) -> Vec<Bid> {
    let (censored, injected): (&[Identity], &[f64]) = match miner {
        MinerStrategy::TrustedHardware { censored, injected } => (censored, injected),
        MinerStrategy::Plain { .. } => (&[], &[]),
    };
    let mut bids = Vec::new();
    for (id, v) in profile.users() {
        if let Some(s) = members.get(&id) {
            bids.extend(s.bids(id, v, rule));
        } else if !censored.contains(&id) {
            bids.extend(rule.bids_for(id, v));
        }
    }
    bids.extend(injected.iter().enumerate().map(|(j, &a)| miner_fake(j, a)));
    bids
}

/// Every member strategy vector with members acting independently: honest, a fixed
/// replacement amount, or drop.
fn member_strategies(members: &[Identity], amounts: &[f64]) -> Vec<BTreeMap<Identity, UserStrategy>> {
    let single: Vec<UserStrategy> = enumerate_user_deviations(amounts, 0);
    let mut out = vec![BTreeMap::new()];
    for &id in members {
        let mut next = Vec::with_capacity(out.len() * single.len());
        for partial in &out {
            for s in &single {
                let mut m = partial.clone();
                m.insert(id, s.clone());
                next.push(m);
            }
        }
        out = next;
    }
    out
}

/// Bayesian UIC, MIC, or c-SCP by Monte Carlo over `prior`.
///
/// Miner strategies follow the trusted-hardware model: a censored set and an injected
/// bid vector, both fixed before values are drawn. With an i.i.d. prior users are
/// exchangeable, so censored sets and coalitions are taken as prefixes of the user list.
/// Coalition members play fixed strategies (honest, a replacement amount, or drop).
/// Every arm is estimated on the same draws as honest play.
pub fn check_bayesian(
    m: &dyn Mechanism,
    target: BayesTarget,
    prior: &Prior,
    config: &BayesConfig,
    budget: &Budget,
) -> Result<PropertyReport> {
    let grid_desc = format!(
        "prior={prior};n={}..{};samples={}",
        config.n_range.0, config.n_range.1, config.samples
    );
    let mut rep = PropertyReport::new(Property::Bayes(target), m, grid_desc, budget, config.seed);
    rep.margin = Some(MARGIN_RULE.to_string());
    if prior.is_random() && config.samples < 2 {
        rep.verdict = Verdict::Inconclusive;
        rep.notes.push("fewer than 2 samples; no standard error".into());
        return Ok(rep);
    }
    let samples = if prior.is_random() { config.samples } else { 1 };
    let ns: Vec<usize> = match prior {
        Prior::Point(v) => vec![v.len()],
        Prior::Iid(_) => (config.n_range.0..=config.n_range.1).collect(),
    };
    let rule = m.bidding_rule();
    let rand = Randomness {
        seed: config.seed,
        ..Randomness::default()
    };
    let value_grid = prior.value_grid();
    let mut amounts = value_grid.clone();
    amounts.push(0.0);
    let step = value_grid
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|s| *s > EPS_NUM)
        .fold(f64::INFINITY, f64::min);
    let tie = if step.is_finite() { step / 4.0 } else { 0.25 };
    if let Some(r) = m.params().reserve {
        amounts.extend([r, r + tie, (r - tie).max(0.0)]);
    }
    amounts.sort_by(f64::total_cmp);
    amounts.dedup_by(|a, b| (*a - *b).abs() <= EPS_NUM);

    let mut worst: Option<Arm> = None;
    let consider = |arm: Arm, worst: &mut Option<Arm>| {
        if worst
            .as_ref()
            .is_none_or(|w| arm.excess() > w.excess() + EPS_NUM * 1e-3)
        {
            *worst = Some(arm);
        }
    };
    for &n in &ns {
        rep.stats.profiles_evaluated += 1;
        let draws: Vec<Vec<f64>> = (0..samples)
            .map(|s| prior.draw(n, derive_seed(config.seed, n as u64), s))
            .collect();
        let ids: Vec<Identity> = (0..n as u32).map(Identity::user).collect();
        match target {
            BayesTarget::Uic => {
                let deviators: Vec<usize> = if prior.is_random() {
                    vec![0]
                } else {
                    (0..n).collect()
                };
                for &i in &deviators {
                    let own: Vec<f64> = match prior {
                        Prior::Point(v) => vec![v[i]],
                        Prior::Iid(_) => value_grid.clone(),
                    };
                    let user = ids[i];
                    let coalition = Coalition::user(user);
                    for &v in &own {
                        rep.stats.coalitions_evaluated += 1;
                        let profiles: Vec<ValueProfile> = draws
                            .iter()
                            .map(|d| {
                                let mut d = d.clone();
                                d[i] = v;
                                ValueProfile::from_values(&d)
                            })
                            .collect();
                        let honest: Vec<f64> = profiles
                            .iter()
                            .map(|p| Ok(coalition.utility(&run_bids(m, &bids_under(rule, p), rand)?, p)))
                            .collect::<Result<_>>()?;
                        let strategies = enumerate_user_deviations(&amounts, budget.user_fakes);
                        for (count, s) in strategies.into_iter().filter(|s| !s.is_honest()).enumerate() {
                            if count >= budget.max_strategies {
                                rep.stats.truncated_searches += 1;
                                break;
                            }
                            let mut acc = Paired::default();
                            for (p, &h) in profiles.iter().zip(&honest) {
                                let mut bids: Vec<Bid> = bids_under(rule, p)
                                    .into_iter()
                                    .filter(|b| b.owner != user)
                                    .collect();
                                bids.extend(s.bids(user, v, rule));
                                acc.push(h, coalition.utility(&run_bids(m, &bids, rand)?, p));
                            }
                            rep.stats.strategies_evaluated += 1;
                            let arm = Arm {
                                n,
                                profile_hint: vec![v],
                                strategy: CoalitionStrategy {
                                    miner: false,
                                    members: vec![user],
                                    action: Action::User { user, strategy: s },
                                },
                                honest: acc.honest / acc.n as f64,
                                deviant: acc.deviant / acc.n as f64,
                                mean: acc.mean,
                                stderr: acc.stderr(prior.is_random()),
                            };
                            consider(arm, &mut worst);
                        }
                    }
                }
            }
            BayesTarget::Mic | BayesTarget::Scp(_) => {
                let c = match target {
                    BayesTarget::Scp(c) => c.min(n),
                    _ => 0,
                };
                let memberships: Vec<Vec<Identity>> = if c == 0 {
                    vec![vec![]]
                } else if prior.is_random() {
                    (1..=c).map(|j| ids[..j].to_vec()).collect()
                } else {
                    subsets(&ids, 1, c)
                };
                let fakes = budget.miner_fakes(m.capacity());
                for members in memberships {
                    rep.stats.coalitions_evaluated += 1;
                    let coalition = Coalition::with_miner(members.clone());
                    let outsiders: Vec<Identity> =
                        ids.iter().copied().filter(|id| !members.contains(id)).collect();
                    let miner_moves: Vec<MinerStrategy> = if prior.is_random() {
                        let mut v = Vec::new();
                        for j in 0..=outsiders.len() {
                            for s in enumerate_trusted_miner(&[], fakes, &amounts) {
                                if let MinerStrategy::TrustedHardware { injected, .. } = s {
                                    v.push(MinerStrategy::TrustedHardware {
                                        censored: outsiders[..j].to_vec(),
                                        injected,
                                    });
                                }
                            }
                        }
                        v
                    } else {
                        enumerate_trusted_miner(&outsiders, fakes, &amounts)
                    };
                    let member_moves = member_strategies(&members, &amounts);
                    let profiles: Vec<ValueProfile> =
                        draws.iter().map(|d| ValueProfile::from_values(d)).collect();
                    let honest: Vec<f64> = profiles
                        .iter()
                        .map(|p| Ok(coalition.utility(&run_bids(m, &bids_under(rule, p), rand)?, p)))
                        .collect::<Result<_>>()?;
                    let mut count = 0;
                    'moves: for mm in &member_moves {
                        for miner in &miner_moves {
                            let trivial = mm.values().all(|s| s.is_honest())
                                && matches!(miner, MinerStrategy::TrustedHardware { censored, injected }
                                    if censored.is_empty() && injected.is_empty());
                            if trivial {
                                continue;
                            }
                            if count >= budget.max_strategies {
                                rep.stats.truncated_searches += 1;
                                break 'moves;
                            }
                            count += 1;
                            let mut acc = Paired::default();
                            for (p, &h) in profiles.iter().zip(&honest) {
                                let bids = joint_bids(rule, p, miner, mm);
                                acc.push(h, coalition.utility(&run_bids(m, &bids, rand)?, p));
                            }
                            rep.stats.strategies_evaluated += 1;
                            let arm = Arm {
                                n,
                                profile_hint: vec![],
                                strategy: CoalitionStrategy {
                                    miner: true,
                                    members: members.clone(),
                                    action: Action::Joint {
                                        miner: miner.clone(),
                                        members: mm.clone(),
                                    },
                                },
                                honest: acc.honest / acc.n as f64,
                                deviant: acc.deviant / acc.n as f64,
                                mean: acc.mean,
                                stderr: acc.stderr(prior.is_random()),
                            };
                            consider(arm, &mut worst);
                        }
                    }
                }
            }
        }
    }
    rep.stats.profiles_total = ns.len();
    if let Some(w) = worst.filter(|w| w.excess() > 0.0) {
        rep.verdict = Verdict::Violated;
        let profile = match prior {
            Prior::Point(v) => v.clone(),
            Prior::Iid(_) => w.profile_hint.clone(),
        };
        rep.notes.push(format!("witness drawn with n = {}", w.n));
        rep.witness = Some(Witness {
            profile,
            strategy: Some(w.strategy),
            permutation: None,
            sigma: None,
            honest_utility: w.honest,
            deviant_utility: w.deviant,
            gap: w.mean,
            stderr: Some(w.stderr),
        });
    }
    rep.note_truncation();
    Ok(rep)
}

/// Re-evaluates a deviation witness and returns its gain over honest play.
pub fn replay(
    m: &dyn Mechanism,
    profile: &[f64],
    strategy: &CoalitionStrategy,
    rule: BidRule,
    rand: Randomness,
) -> Result<f64> {
    let p = ValueProfile::from_values(profile);
    let coalition = Coalition {
        miner: strategy.miner,
        members: strategy.members.clone(),
    };
    let honest = coalition.utility(&run_bids(m, &bids_under(rule, &p), rand)?, &p);
    let dist = match &strategy.action {
        Action::Honest => return Ok(0.0),
        Action::User { user, strategy } => {
            let v = p.value(user).unwrap_or(0.0);
            let mut bids: Vec<Bid> = bids_under(rule, &p)
                .into_iter()
                .filter(|b| b.owner != *user)
                .collect();
            bids.extend(strategy.bids(*user, v, rule));
            run_bids(m, &bids, rand)?
        }
        Action::Miner {
            miner: MinerStrategy::Plain { block },
        } => settle_block(m, block, rand)?,
        Action::Miner { miner } => run_bids(m, &joint_bids(rule, &p, miner, &BTreeMap::new()), rand)?,
        Action::Joint { miner, members } => run_bids(m, &joint_bids(rule, &p, miner, members), rand)?,
    };
    Ok(coalition.utility(&dist, &p) - honest)
}

/// Outcome of probing one mechanism for the UIC/MIC/global-SCP impossibility.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImpossibilityProbe {
    pub mechanism: String,
    pub params: MechanismParams,
    /// Why the mechanism is outside the claim (unbounded blocks or trivial), if it is.
    pub exempt: Option<String>,
    /// First violated property among UIC, MIC, global SCP, with its report.
    pub violated: Option<PropertyReport>,
}

/// Checks UIC, MIC, then global SCP, stopping at the first violation.
pub fn impossibility_probe(
    m: &dyn Mechanism,
    grid: &GridSpec,
    budget: &Budget,
) -> Result<ImpossibilityProbe> {
    let mut probe = ImpossibilityProbe {
        mechanism: m.name(),
        params: m.params(),
        exempt: None,
        violated: None,
    };
    if m.capacity() == Capacity::Unbounded {
        probe.exempt = Some("unbounded block size".into());
        return Ok(probe);
    }
    if m.is_trivial() {
        probe.exempt = Some("trivial: no bid is ever confirmed".into());
        return Ok(probe);
    }
    type Check = fn(&dyn Mechanism, &GridSpec, &Budget) -> Result<PropertyReport>;
    let checks: [Check; 3] = [check_uic, check_mic, check_global_scp];
    for check in checks {
        let r = check(m, grid, budget)?;
        if r.verdict == Verdict::Violated {
            probe.violated = Some(r);
            break;
        }
    }
    Ok(probe)
}

/// Replacement amounts the witness strategy relies on, for diagnostics.
pub fn witness_amounts(s: &CoalitionStrategy) -> Vec<f64> {
    match &s.action {
        Action::User { strategy, .. } => {
            let mut v = strategy.fakes.clone();
            if let PrimaryAction::Replace { amount } = strategy.primary {
                v.push(amount);
            }
            v
        }
        Action::Miner {
            miner: MinerStrategy::Plain { block },
        } => block.bids().iter().map(|b| b.amount).collect(),
        Action::Miner {
            miner: MinerStrategy::TrustedHardware { injected, .. },
        }
        | Action::Joint {
            miner: MinerStrategy::TrustedHardware { injected, .. },
            ..
        } => injected.clone(),
        _ => vec![],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::build;

    fn profiles(p: &[&[f64]]) -> GridSpec {
        GridSpec::profiles(p.iter().map(|x| x.to_vec()).collect())
    }

    #[test]
    fn property_names_round_trip() {
        for s in [
            "uic",
            "mic",
            "scp:2",
            "global-scp",
            "oca",
            "oca:multi",
            "oca:coordinated",
            "oca:search",
            "symmetry",
            "bayes:uic",
            "bayes:mic",
            "bayes:scp:1",
        ] {
            assert_eq!(s.parse::<Property>().unwrap().to_string(), s);
        }
        assert!("scp:x".parse::<Property>().is_err());
    }

    #[test]
    fn subsets_in_size_order() {
        let ids: Vec<Identity> = (0..3).map(Identity::user).collect();
        let s = subsets(&ids, 1, 2);
        assert_eq!(s.len(), 6);
        assert_eq!(s[0], vec![Identity::user(0)]);
        assert_eq!(s[5], vec![Identity::user(1), Identity::user(2)]);
    }

    #[test]
    fn first_price_fails_uic() {
        let m = build("first_price", Some(1), None).unwrap();
        let r = check_uic(m.as_ref(), &profiles(&[&[3.0, 1.0]]), &Budget::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Violated);
        assert!((r.gap() - 2.0).abs() < 0.3);
    }

    #[test]
    fn pay_nothing_mic_holds() {
        let m = build("pay_nothing", Some(1), None).unwrap();
        let r = check_mic(m.as_ref(), &GridSpec::default(), &Budget::default()).unwrap();
        assert_eq!(r.verdict, Verdict::HoldsOnGrid);
    }

    #[test]
    fn permutations_are_lexicographic() {
        let mut p = vec![0, 1, 2];
        let mut n = 1;
        while next_permutation(&mut p) {
            n += 1;
        }
        assert_eq!(n, 6);
        assert_eq!(p, vec![2, 1, 0]);
    }

    #[test]
    fn sigma_ir_flag_is_computed() {
        let s = SigmaStrategy::new(
            BidRule::Affine {
                scale: 1.0,
                offset: 1.0,
            },
            "declared",
            &[0.0, 1.0],
        );
        assert!(!s.individually_rational);
        let s = SigmaStrategy::new(
            BidRule::Affine {
                scale: 0.5,
                offset: 0.0,
            },
            "affine",
            &[0.0, 1.0],
        );
        assert!(s.individually_rational);
    }
}
