//! Command implementations. Each returns the bytes to emit and the process exit code.

use std::fmt::Write as _;
use std::sync::Arc;

use anyhow::Result;
use serde::Serialize;
use tfmlab_core::bayesian::{min_reserve_mic, Distribution, McConfig, ReserveSearch, MC_SAMPLES};
use tfmlab_core::catalog::{self, entries};
use tfmlab_core::grid::{Budget, GridSpec};
use tfmlab_core::mechanism::{honest_bids, Mechanism};
use tfmlab_core::myerson::{allocation_curve, bracketed_grid, myerson_payment};
use tfmlab_core::numeric::format_sig12;
use tfmlab_core::properties::{
    check_bayesian, check_cscp, check_global_scp, check_mic, check_oca_with_sigma, check_uic,
    check_weak_symmetry, parse_sigma, search_oca_sigma, BayesConfig, Prior, Property, PropertyReport,
    SigmaFamily, SigmaStrategy, SCHEMA_VERSION, TOOL_VERSION,
};
use tfmlab_core::revelation::{outcome_equivalence_check, transform, TransformMode};
use tfmlab_core::{Identity, TfmError, ValueProfile};

use crate::config::{parse_range, usage, Format, Model, RunConfig};
use crate::sweep::{run_classification, run_impossibility};

/// Rendered command output.
pub struct Output {
    pub body: String,
    pub exit: i32,
}

impl Output {
    fn ok(body: String) -> Self {
        Output { body, exit: 0 }
    }
}

/// Maps specification errors from the core library to usage errors.
fn spec<T>(r: tfmlab_core::Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        TfmError::Spec(_)
        | TfmError::UnknownMechanism(_)
        | TfmError::InvalidParams { .. }
        | TfmError::MultiBidRule
        | TfmError::UnboundedSupport(_)
        | TfmError::NotRegular(_) => usage(e.to_string()),
        other => anyhow::Error::new(other),
    })
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

pub fn run(config: &RunConfig) -> Result<Output> {
    if config.workers == 0 {
        return Err(usage("workers must be at least 1"));
    }
    match config.command.as_str() {
        "catalog" => catalog_cmd(config),
        "check" => check(config),
        "sweep" => sweep(config),
        "table" => table(config),
        "transform" => transform_cmd(config),
        "curve" => curve(config),
        other => Err(usage(format!("unknown command {other:?}"))),
    }
}

/// Builds a catalog mechanism, or a transform of one written `revealed_single:NAME`
/// or `revealed_multi:NAME`.
pub fn mechanism(config: &RunConfig) -> Result<Arc<dyn Mechanism>> {
    let name = config
        .mechanism
        .as_deref()
        .ok_or_else(|| usage("--mechanism is required"))?;
    let (mode, base) = match name.split_once(':') {
        Some(("revealed_single", b)) => (Some(TransformMode::Single), b),
        Some(("revealed_multi", b)) => (Some(TransformMode::Multi), b),
        Some(_) => return Err(usage(format!("unknown mechanism {name:?}"))),
        None => (None, name),
    };
    let m = spec(catalog::catalog(base, &config.params))?;
    Ok(match mode {
        Some(mode) => Arc::new(spec(transform(m, mode))?),
        None => m,
    })
}

pub fn grid(config: &RunConfig) -> Result<GridSpec> {
    let mut g = match &config.grid {
        Some(s) => spec(s.parse::<GridSpec>())?,
        None => GridSpec::default(),
    };
    g.seed = config.seed;
    Ok(g)
}

pub fn budget(config: &RunConfig) -> Result<Budget> {
    let mut b = match &config.budget {
        Some(s) => spec(s.parse::<Budget>())?,
        None => Budget::default(),
    };
    b.random_seed = config.seed;
    Ok(b)
}

fn distribution(config: &RunConfig) -> Result<Distribution> {
    spec(
        config
            .distribution
            .as_deref()
            .unwrap_or("uniform:0,1")
            .parse::<Distribution>(),
    )
}

fn check(config: &RunConfig) -> Result<Output> {
    let property: Property = spec(
        config
            .property
            .as_deref()
            .ok_or_else(|| usage("--property is required"))?
            .parse(),
    )?;
    let m = mechanism(config)?;
    let m = m.as_ref();
    let g = grid(config)?;
    let b = budget(config)?;
    let bayesian = matches!(property, Property::Bayes(_));
    match (bayesian, config.model) {
        (true, Some(Model::Plain)) => {
            return Err(usage(
                "Bayesian properties are defined in the trusted-hardware model",
            ))
        }
        (false, Some(Model::TrustedHardware)) => {
            return Err(usage(
                "ex-post properties use the plain model; use a bayes:* property",
            ))
        }
        _ => {}
    }
    let sigma = |default: &str| -> Result<SigmaStrategy> {
        let (label, rule) = spec(parse_sigma(config.sigma.as_deref().unwrap_or(default), m))?;
        Ok(SigmaStrategy::new(rule, label, &g.values))
    };
    let default_sigma = if m.sigma().is_some() { "declared" } else { "v" };
    let mut report = match property {
        Property::Uic => spec(check_uic(m, &g, &b))?,
        Property::Mic => spec(check_mic(m, &g, &b))?,
        Property::Scp(c) => spec(check_cscp(m, c, &g, &b))?,
        Property::GlobalScp => spec(check_global_scp(m, &g, &b))?,
        Property::Oca(variant) => spec(check_oca_with_sigma(m, &sigma(default_sigma)?, variant, &g, &b))?,
        Property::OcaSearch => spec(search_oca_sigma(m, &SigmaFamily::default(), &g, &b))?,
        Property::Symmetry => {
            let rule = match &config.sigma {
                Some(s) => Some(spec(parse_sigma(s, m))?.1),
                None => None,
            };
            spec(check_weak_symmetry(m, &g, 720, rule))?
        }
        Property::Bayes(target) => {
            let d = distribution(config)?;
            let k = m.capacity().finite().unwrap_or(1);
            let n_range = match &config.users {
                Some(s) => parse_range(s)?,
                None => (1, k + 1),
            };
            let cfg = BayesConfig {
                n_range,
                samples: config.samples.unwrap_or(2000),
                seed: config.seed,
            };
            spec(check_bayesian(m, target, &Prior::Iid(d), &cfg, &b))?
        }
    };
    report.config_fingerprint = Some(config.fingerprint());
    let exit = report.verdict.exit_code();
    let body = match config.format.unwrap_or(Format::Json) {
        Format::Json => json(&report),
        Format::Text => report_text(&report),
        Format::Csv => return Err(usage("check writes json or text")),
    };
    Ok(Output { body, exit })
}

pub fn report_text(r: &PropertyReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} on {} ({}): {}",
        r.property, r.mechanism, r.params.k, r.verdict
    );
    if let Some(sig) = &r.sigma {
        let _ = writeln!(s, "  sigma: {sig}");
    }
    if let Some(w) = &r.witness {
        let p: Vec<String> = w.profile.iter().map(|v| format_sig12(*v)).collect();
        let _ = writeln!(
            s,
            "  witness: values [{}], honest {}, deviant {}, gap {}",
            p.join(", "),
            format_sig12(w.honest_utility),
            format_sig12(w.deviant_utility),
            format_sig12(w.gap)
        );
        if let Some(st) = &w.strategy {
            let _ = writeln!(
                s,
                "  strategy: {}",
                serde_json::to_string(st).expect("strategy serializes")
            );
        }
        if let Some(p) = &w.permutation {
            let _ = writeln!(s, "  permutation: {p:?}");
        }
    }
    let st = &r.stats;
    let _ = writeln!(
        s,
        "  profiles {}/{}, coalitions {}, strategies {}, capped searches {}",
        st.profiles_evaluated,
        st.profiles_total,
        st.coalitions_evaluated,
        st.strategies_evaluated,
        st.truncated_searches
    );
    for n in &r.notes {
        let _ = writeln!(s, "  note: {n}");
    }
    s
}

fn catalog_cmd(config: &RunConfig) -> Result<Output> {
    #[derive(Serialize)]
    struct Row {
        name: &'static str,
        params: &'static str,
        summary: &'static str,
    }
    let rows: Vec<Row> = entries()
        .into_iter()
        .map(|e| Row {
            name: e.name,
            params: e.params,
            summary: e.summary,
        })
        .collect();
    Ok(Output::ok(match config.format.unwrap_or(Format::Text) {
        Format::Json => json(&rows),
        _ => rows
            .iter()
            .map(|r| format!("{:<28} {:<24} {}\n", r.name, r.params, r.summary))
            .collect(),
    }))
}

#[derive(Serialize)]
struct SweepReport<T> {
    schema_version: u32,
    tool_version: &'static str,
    config_fingerprint: String,
    kind: &'static str,
    rows: Vec<T>,
}

fn sweep(config: &RunConfig) -> Result<Output> {
    let b = budget(config)?;
    match config.mode.as_deref().unwrap_or("classification") {
        "classification" => {
            let g = grid(config)?;
            let rows = spec(run_classification(&g, &b, config.workers))?;
            let exit = if rows.iter().all(|r| r.matches) { 0 } else { 2 };
            let body = match config.format.unwrap_or(Format::Text) {
                Format::Json => json(&SweepReport {
                    schema_version: SCHEMA_VERSION,
                    tool_version: TOOL_VERSION,
                    config_fingerprint: config.fingerprint(),
                    kind: "classification",
                    rows,
                }),
                Format::Csv => {
                    let mut s = String::from("mechanism,property,verdict,gap,expected,matches\n");
                    for r in &rows {
                        let _ = writeln!(
                            s,
                            "{},{},{},{},{},{}",
                            r.mechanism,
                            r.property,
                            r.verdict,
                            format_sig12(r.gap),
                            r.expected.verdict,
                            r.matches
                        );
                    }
                    s
                }
                Format::Text => {
                    let mut s = String::new();
                    for r in &rows {
                        let _ = writeln!(
                            s,
                            "{:<22} {:<16} {:<14} gap {:<6} {}",
                            r.mechanism,
                            r.property,
                            r.verdict.to_string(),
                            format_sig12(r.gap),
                            if r.matches { "as expected" } else { "MISMATCH" }
                        );
                    }
                    s
                }
            };
            Ok(Output { body, exit })
        }
        "impossibility" => {
            let ks: Vec<usize> = match config.param("k") {
                Some(k) if k >= 1.0 && k.fract() == 0.0 => vec![k as usize],
                Some(_) => return Err(usage("k must be a positive integer")),
                None => vec![1, 2],
            };
            let rows = spec(run_impossibility(&ks, config.seed, &b, config.workers))?;
            let exit = if rows.iter().all(|r| r.passes()) { 0 } else { 2 };
            let body = match config.format.unwrap_or(Format::Text) {
                Format::Json => json(&SweepReport {
                    schema_version: SCHEMA_VERSION,
                    tool_version: TOOL_VERSION,
                    config_fingerprint: config.fingerprint(),
                    kind: "impossibility",
                    rows,
                }),
                _ => {
                    let mut s = String::new();
                    for r in &rows {
                        let status = match (&r.exempt, &r.violated) {
                            (Some(e), _) => format!("exempt: {e}"),
                            (None, Some(p)) => {
                                let w: Vec<String> =
                                    r.witness_profile.iter().map(|v| format_sig12(*v)).collect();
                                format!("violates {p} at [{}], gap {}", w.join(", "), format_sig12(r.gap))
                            }
                            (None, None) => "no violation found".into(),
                        };
                        let _ = writeln!(s, "{:<26} k={:<9} {status}", r.mechanism, r.params.k.to_string());
                    }
                    s
                }
            };
            Ok(Output { body, exit })
        }
        other => Err(usage(format!(
            "unknown sweep mode {other:?} (classification | impossibility)"
        ))),
    }
}

#[derive(Serialize)]
struct TableReport {
    schema_version: u32,
    tool_version: &'static str,
    config_fingerprint: String,
    rows: Vec<tfmlab_core::bayesian::ReserveResult>,
}

fn table(config: &RunConfig) -> Result<Output> {
    match config.mode.as_deref().unwrap_or("reserve") {
        "reserve" => {}
        other => {
            return Err(usage(format!(
                "unknown table {other:?}; only reserve is available"
            )))
        }
    }
    let d = distribution(config)?;
    let k = match config.param("k") {
        None | Some(1.0) => 1,
        Some(_) => return Err(usage("the reserve table is computed for one slot (k = 1)")),
    };
    let ns = config
        .ns
        .clone()
        .unwrap_or_else(|| vec![1, 2, 3, 4, 5, 10, 100, 1000]);
    let search = ReserveSearch {
        mc: McConfig {
            samples: config.samples.unwrap_or(MC_SAMPLES),
            seed: config.seed,
        },
        ..ReserveSearch::default()
    };
    let rows = ns
        .iter()
        .map(|&n| spec(min_reserve_mic(&d, n, k, &search)))
        .collect::<Result<Vec<_>>>()?;
    let body = match config.format.unwrap_or(Format::Csv) {
        Format::Json => json(&TableReport {
            schema_version: SCHEMA_VERSION,
            tool_version: TOOL_VERSION,
            config_fingerprint: config.fingerprint(),
            rows,
        }),
        _ => {
            let mut s = String::from("n,r_min,slack,method,k,samples\n");
            for r in &rows {
                let _ = writeln!(
                    s,
                    "{},{:.3},{},{},{},{}",
                    r.n,
                    r.r_min,
                    format_sig12(r.slack),
                    r.method,
                    r.k,
                    r.samples.map_or(String::new(), |x| x.to_string())
                );
            }
            s
        }
    };
    Ok(Output::ok(body))
}

fn transform_cmd(config: &RunConfig) -> Result<Output> {
    let mode: TransformMode = spec(config.mode.as_deref().unwrap_or("single").parse())?;
    let source = {
        let mut c = config.clone();
        if c.mechanism.as_deref().is_some_and(|n| n.contains(':')) {
            return Err(usage("transform takes a catalog mechanism"));
        }
        c.mode = None;
        mechanism(&c)?
    };
    let derived = spec(transform(source.clone(), mode))?;
    let check = spec(outcome_equivalence_check(
        source.as_ref(),
        &derived,
        &grid(config)?,
    ))?;
    #[derive(Serialize)]
    struct TransformReport {
        schema_version: u32,
        tool_version: &'static str,
        config_fingerprint: String,
        mechanism: tfmlab_core::revelation::TransformDescription,
        equivalence: tfmlab_core::revelation::EquivalenceReport,
    }
    let exit = check.verdict.exit_code();
    let body = match config.format.unwrap_or(Format::Json) {
        Format::Text => format!(
            "{} (beta {}): outcome equivalence {} on {} profiles\n",
            derived.describe().name,
            derived.beta(),
            check.verdict,
            check.profiles_checked
        ),
        _ => json(&TransformReport {
            schema_version: SCHEMA_VERSION,
            tool_version: TOOL_VERSION,
            config_fingerprint: config.fingerprint(),
            mechanism: derived.describe(),
            equivalence: check,
        }),
    };
    Ok(Output { body, exit })
}

fn curve(config: &RunConfig) -> Result<Output> {
    let m = mechanism(config)?;
    let given: Vec<f64> = config
        .profile
        .as_deref()
        .ok_or_else(|| usage("--profile is required"))?
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage("bad profile; expected comma-separated values"))?;
    let user = Identity::user(config.user.unwrap_or(0));
    let profile = ValueProfile::from_values(&given);
    let others: Vec<_> = honest_bids(m.as_ref(), &profile)
        .into_iter()
        .filter(|b| b.owner != user)
        .collect();
    let g = grid(config)?;
    let bids = bracketed_grid(&g.values, &others, g.tie_offset());
    let c = spec(allocation_curve(m.as_ref(), &others, user, &bids))?;
    let mut s = String::from("bid,probability,payment,myerson_payment\n");
    for p in &c.points {
        let oracle = myerson_payment(&c, p.bid).ok();
        let _ = writeln!(
            s,
            "{},{},{},{}",
            format_sig12(p.bid),
            format_sig12(p.x),
            format_sig12(p.payment),
            oracle.map_or("".into(), format_sig12)
        );
    }
    Ok(Output::ok(s))
}
