//! Classification and impossibility sweeps over the catalog.

use std::sync::Arc;

use serde::Serialize;
use tfmlab_core::catalog::{build, NAMES};
use tfmlab_core::grid::{Budget, GridSpec};
use tfmlab_core::mechanism::{BidRule, Mechanism};
use tfmlab_core::numeric::{self, EPS_NUM};
use tfmlab_core::properties::{
    check_cscp, check_global_scp, check_mic, check_oca_with_sigma, check_uic, impossibility_probe, replay,
    search_oca_sigma, OcaVariant, PropertyReport, SigmaFamily, SigmaStrategy, Verdict,
};
use tfmlab_core::{Randomness, Result};

/// Expected cell of the classification matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Expectation {
    pub verdict: Verdict,
    /// Exact witness gap, when the claim pins one down.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
    /// Lower bound on the witness gap.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_gap: Option<f64>,
}

impl Expectation {
    fn holds() -> Self {
        Expectation {
            verdict: Verdict::HoldsOnGrid,
            gap: None,
            min_gap: None,
        }
    }

    fn violated(gap: Option<f64>, min_gap: Option<f64>) -> Self {
        Expectation {
            verdict: Verdict::Violated,
            gap,
            min_gap,
        }
    }

    fn no_sigma() -> Self {
        Expectation {
            verdict: Verdict::Inconclusive,
            gap: None,
            min_gap: None,
        }
    }

    pub fn matches(&self, r: &PropertyReport) -> bool {
        r.verdict == self.verdict
            && self.gap.is_none_or(|g| (r.gap() - g).abs() <= 1e-6)
            && self.min_gap.is_none_or(|g| r.gap() >= g - EPS_NUM)
    }
}

#[derive(Clone)]
enum Probe {
    Uic,
    Mic,
    Scp(usize),
    GlobalScp,
    Oca(BidRule, &'static str),
    OcaSearch(SigmaFamily),
}

/// One cell: a mechanism, a property, the grid it is checked on, and the expected verdict.
#[derive(Clone)]
pub struct Cell {
    pub mechanism: Arc<dyn Mechanism>,
    probe: Probe,
    pub grid: GridSpec,
    pub expected: Expectation,
}

impl Cell {
    pub fn label(&self) -> String {
        match &self.probe {
            Probe::Uic => "uic".into(),
            Probe::Mic => "mic".into(),
            Probe::Scp(c) => format!("scp:{c}"),
            Probe::GlobalScp => "global-scp".into(),
            Probe::Oca(_, s) => format!("oca[{s}]"),
            Probe::OcaSearch(_) => "oca:search".into(),
        }
    }

    pub fn run(&self, budget: &Budget) -> Result<PropertyReport> {
        let m = self.mechanism.as_ref();
        match &self.probe {
            Probe::Uic => check_uic(m, &self.grid, budget),
            Probe::Mic => check_mic(m, &self.grid, budget),
            Probe::Scp(c) => check_cscp(m, *c, &self.grid, budget),
            Probe::GlobalScp => check_global_scp(m, &self.grid, budget),
            Probe::Oca(rule, label) => {
                let sigma = SigmaStrategy::new(*rule, *label, &self.grid.values);
                check_oca_with_sigma(m, &sigma, OcaVariant::Strict, &self.grid, budget)
            }
            Probe::OcaSearch(family) => search_oca_sigma(m, family, &self.grid, budget),
        }
    }
}

fn only(profiles: Vec<Vec<f64>>, seed: u64) -> GridSpec {
    GridSpec {
        seed,
        ..GridSpec::profiles(profiles)
    }
}

/// The classification claims checked by `sweep`.
pub fn classification_cells(grid: &GridSpec) -> Result<Vec<Cell>> {
    let seed = grid.seed;
    let cell = |m: &Arc<dyn Mechanism>, probe: Probe, grid: GridSpec, expected: Expectation| Cell {
        mechanism: m.clone(),
        probe,
        grid,
        expected,
    };
    let identity = Probe::Oca(BidRule::Truthful, "identity");
    let spnb = build("second_price_no_burn", Some(2), None)?;
    let pn = build("pay_nothing", Some(1), None)?;
    let even = build("even_auction", None, None)?;
    let disc = build("discount_auction", None, Some(2.0))?;
    let sig = build("signal_oca", Some(1), None)?;
    let declared = sig.sigma().expect("signal_oca declares σ");
    Ok(vec![
        cell(&spnb, Probe::Uic, grid.clone(), Expectation::holds()),
        cell(&spnb, identity.clone(), grid.clone(), Expectation::holds()),
        cell(
            &spnb,
            Probe::Mic,
            only(vec![vec![10.0, 8.0]], seed),
            Expectation::violated(None, Some(1.0)),
        ),
        cell(&pn, Probe::GlobalScp, grid.clone(), Expectation::holds()),
        cell(&pn, identity.clone(), grid.clone(), Expectation::holds()),
        cell(
            &pn,
            Probe::Scp(1),
            only(vec![vec![5.0, 3.0]], seed),
            Expectation::violated(Some(3.0), None),
        ),
        cell(&even, Probe::GlobalScp, grid.clone(), Expectation::holds()),
        cell(
            &even,
            Probe::OcaSearch(SigmaFamily::affine_only()),
            grid.clone().with_users(3, 3),
            Expectation::no_sigma(),
        ),
        cell(&disc, Probe::Scp(1), grid.clone(), Expectation::holds()),
        cell(
            &disc,
            identity,
            only(vec![vec![2.0; 10]], seed),
            Expectation::violated(Some(9.0), None),
        ),
        cell(
            &disc,
            Probe::OcaSearch(SigmaFamily::affine_only()),
            only(vec![vec![2.0; 10]], seed),
            Expectation::no_sigma(),
        ),
        cell(&sig, Probe::Uic, grid.clone(), Expectation::holds()),
        cell(&sig, Probe::Mic, grid.clone(), Expectation::holds()),
        cell(
            &sig,
            Probe::Oca(declared, "declared"),
            grid.clone(),
            Expectation::holds(),
        ),
    ])
}

#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub mechanism: String,
    pub params: tfmlab_core::MechanismParams,
    pub property: String,
    pub grid: String,
    pub expected: Expectation,
    pub verdict: Verdict,
    #[serde(with = "numeric::sig12")]
    pub gap: f64,
    pub matches: bool,
    pub report: PropertyReport,
}

/// Runs `jobs` on up to `workers` threads; results come back in job order.
pub fn pool<T: Send, R: Send>(jobs: Vec<T>, workers: usize, f: impl Fn(T) -> R + Sync) -> Vec<R> {
    let workers = workers.max(1).min(jobs.len().max(1));
    let mut slots: Vec<Option<R>> = (0..jobs.len()).map(|_| None).collect();
    let queue = std::sync::Mutex::new(jobs.into_iter().enumerate());
    let done = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let next = queue.lock().expect("queue").next();
                let Some((i, job)) = next else { break };
                let r = f(job);
                done.lock().expect("slots")[i] = Some(r);
            });
        }
    });
    slots.into_iter().map(|r| r.expect("every job ran")).collect()
}

pub fn run_classification(grid: &GridSpec, budget: &Budget, workers: usize) -> Result<Vec<CellResult>> {
    let cells = classification_cells(grid)?;
    pool(cells, workers, |c| {
        let report = c.run(budget)?;
        Ok(CellResult {
            mechanism: c.mechanism.name(),
            params: c.mechanism.params(),
            property: c.label(),
            grid: c.grid.to_string(),
            expected: c.expected,
            verdict: report.verdict,
            gap: report.gap(),
            matches: c.expected.matches(&report),
            report,
        })
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ImpossibilityRow {
    pub mechanism: String,
    pub params: tfmlab_core::MechanismParams,
    pub exempt: Option<String>,
    /// Property of the first violation found.
    pub violated: Option<String>,
    #[serde(with = "numeric::sig12_vec")]
    pub witness_profile: Vec<f64>,
    #[serde(with = "numeric::sig12")]
    pub gap: f64,
    /// Gap recomputed by replaying the witness.
    #[serde(with = "numeric::sig12")]
    pub replayed_gap: f64,
    pub report: Option<PropertyReport>,
}

impl ImpossibilityRow {
    /// Exempt, or violated with a witness that replays to the same gap.
    pub fn passes(&self) -> bool {
        self.exempt.is_some() || (self.violated.is_some() && (self.gap - self.replayed_gap).abs() <= 1e-9)
    }
}

/// Grid with exactly `k + 2` users and values up to 5.
pub fn contended_grid(k: usize, seed: u64) -> GridSpec {
    GridSpec {
        values: (0..=10).map(|i| i as f64 * 0.5).collect(),
        seed,
        ..GridSpec::default()
    }
    .with_users(k + 2, k + 2)
}

/// Every catalog mechanism with `k` in `ks` must violate UIC, MIC, or global SCP.
pub fn run_impossibility(
    ks: &[usize],
    seed: u64,
    budget: &Budget,
    workers: usize,
) -> Result<Vec<ImpossibilityRow>> {
    let mut jobs = Vec::new();
    for name in NAMES {
        for &k in ks {
            match build(name, Some(k), None) {
                Ok(m) => jobs.push((m, k)),
                // Unbounded mechanisms take no k; list them once.
                Err(_) if k == ks[0] => jobs.push((build(name, None, None)?, k)),
                Err(_) => {}
            }
        }
    }
    pool(jobs, workers, |(m, k)| {
        let grid = contended_grid(k, seed);
        let probe = impossibility_probe(m.as_ref(), &grid, budget)?;
        let mut row = ImpossibilityRow {
            mechanism: probe.mechanism,
            params: probe.params,
            exempt: probe.exempt,
            violated: None,
            witness_profile: vec![],
            gap: 0.0,
            replayed_gap: 0.0,
            report: None,
        };
        if let Some(rep) = probe.violated {
            if let Some(w) = &rep.witness {
                row.witness_profile = w.profile.clone();
                row.gap = w.gap;
                if let Some(s) = &w.strategy {
                    let rand = Randomness {
                        seed: grid.seed,
                        ..Randomness::default()
                    };
                    row.replayed_gap = replay(m.as_ref(), &w.profile, s, m.bidding_rule(), rand)?;
                }
            }
            row.violated = Some(rep.property.clone());
            row.report = Some(rep);
        }
        Ok(row)
    })
    .into_iter()
    .collect()
}
