//! Valuation distributions, virtual values, and the minimal reserve that keeps the
//! second-price auction with burnt reserve miner-incentive-compatible in expectation.
//!
//! The reserve computations assume block size 1: the honest users' expected payment `P`
//! and expected burn `B` then depend on the injected fakes only through their maximum.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coins::derive_seed;
use crate::error::{Result, TfmError};
use crate::numeric::{self, format_sig12, mean_stderr, simpson, EPS_NUM};

/// Simpson subintervals used by every quadrature in this module.
pub const QUADRATURE_NODES: usize = 10_000;
/// Largest honest population handled by quadrature under [`Method::Auto`].
pub const QUADRATURE_MAX_N: usize = 10;
/// Minimum Monte Carlo sample count.
pub const MC_SAMPLES: usize = 1_000_000;

/// A valuation distribution with a closed-form CDF, density, and quantile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distribution {
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// Exponential with the given rate, optionally truncated to `[0, cap]`.
    Exponential {
        rate: f64,
        cap: Option<f64>,
    },
    Triangular {
        lo: f64,
        mode: f64,
        hi: f64,
    },
}

impl Distribution {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        Distribution::Uniform { lo, hi }.validated()
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        Distribution::Exponential { rate, cap: None }.validated()
    }

    pub fn truncated_exponential(rate: f64, cap: f64) -> Result<Self> {
        Distribution::Exponential { rate, cap: Some(cap) }.validated()
    }

    pub fn triangular(lo: f64, mode: f64, hi: f64) -> Result<Self> {
        Distribution::Triangular { lo, mode, hi }.validated()
    }

    fn validated(self) -> Result<Self> {
        let ok = match self {
            Distribution::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo < hi,
            Distribution::Exponential { rate, cap } => {
                rate.is_finite() && rate > 0.0 && cap.is_none_or(|c| c.is_finite() && c > 0.0)
            }
            Distribution::Triangular { lo, mode, hi } => {
                lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= mode && mode <= hi && lo < hi
            }
        };
        if ok {
            Ok(self)
        } else {
            Err(TfmError::Spec(format!("invalid distribution {self}")))
        }
    }

    /// `(lo, hi)`; `hi` is infinite for an untruncated exponential.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            Distribution::Uniform { lo, hi } => (lo, hi),
            Distribution::Exponential { cap, .. } => (0.0, cap.unwrap_or(f64::INFINITY)),
            Distribution::Triangular { lo, hi, .. } => (lo, hi),
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.support().1.is_finite()
    }

    pub fn cdf(&self, v: f64) -> f64 {
        let (lo, hi) = self.support();
        if v <= lo {
            return 0.0;
        }
        if v >= hi {
            return 1.0;
        }
        match *self {
            Distribution::Uniform { lo, hi } => (v - lo) / (hi - lo),
            Distribution::Exponential { rate, cap } => {
                let raw = -(-rate * v).exp_m1();
                match cap {
                    Some(c) => raw / -(-rate * c).exp_m1(),
                    None => raw,
                }
            }
            Distribution::Triangular { lo, mode, hi } => {
                if v <= mode {
                    (v - lo).powi(2) / ((hi - lo) * (mode - lo))
                } else {
                    1.0 - (hi - v).powi(2) / ((hi - lo) * (hi - mode))
                }
            }
        }
    }

    pub fn pdf(&self, v: f64) -> f64 {
        let (lo, hi) = self.support();
        if v < lo || v > hi {
            return 0.0;
        }
        match *self {
            Distribution::Uniform { lo, hi } => 1.0 / (hi - lo),
            Distribution::Exponential { rate, cap } => {
                let raw = rate * (-rate * v).exp();
                match cap {
                    Some(c) => raw / -(-rate * c).exp_m1(),
                    None => raw,
                }
            }
            Distribution::Triangular { lo, mode, hi } => {
                if v < mode || (v == mode && mode == hi) {
                    2.0 * (v - lo) / ((hi - lo) * (mode - lo))
                } else {
                    2.0 * (hi - v) / ((hi - lo) * (hi - mode))
                }
            }
        }
    }

    /// Inverse CDF on `[0, 1]`.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match *self {
            Distribution::Uniform { lo, hi } => lo + u * (hi - lo),
            Distribution::Exponential { rate, cap } => {
                let mass = cap.map_or(1.0, |c| -(-rate * c).exp_m1());
                let v = -(-u * mass).ln_1p() / rate;
                cap.map_or(v, |c| v.min(c))
            }
            Distribution::Triangular { lo, mode, hi } => {
                let split = (mode - lo) / (hi - lo);
                if u <= split {
                    lo + (u * (hi - lo) * (mode - lo)).sqrt()
                } else {
                    hi - ((1.0 - u) * (hi - lo) * (hi - mode)).sqrt()
                }
            }
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        self.quantile(rng.random::<f64>())
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let g = format_sig12;
        match *self {
            Distribution::Uniform { lo, hi } => write!(f, "uniform:{},{}", g(lo), g(hi)),
            Distribution::Exponential { rate, cap: None } => write!(f, "exponential:{}", g(rate)),
            Distribution::Exponential { rate, cap: Some(c) } => {
                write!(f, "exponential:{},{}", g(rate), g(c))
            }
            Distribution::Triangular { lo, mode, hi } => {
                write!(f, "triangular:{},{},{}", g(lo), g(mode), g(hi))
            }
        }
    }
}

impl FromStr for Distribution {
    type Err = TfmError;

    /// `uniform:a,b`, `exponential:rate[,cap]`, or `triangular:lo,mode,hi`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || TfmError::Spec(format!("bad distribution {s:?}"));
        let (kind, args) = s.trim().split_once(':').ok_or_else(bad)?;
        let args: Vec<f64> = args
            .split(',')
            .map(|a| a.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        match (kind.trim(), args.as_slice()) {
            ("uniform", &[lo, hi]) => Distribution::uniform(lo, hi),
            ("exponential", &[rate]) => Distribution::exponential(rate),
            ("exponential", &[rate, cap]) => Distribution::truncated_exponential(rate, cap),
            ("triangular", &[lo, mode, hi]) => Distribution::triangular(lo, mode, hi),
            _ => Err(bad()),
        }
    }
}

/// `φ(v) = v − (1 − F(v)) / f(v)`.
pub fn virtual_value(d: &Distribution, v: f64) -> Result<f64> {
    let (lo, hi) = d.support();
    if v < lo - EPS_NUM || v > hi + EPS_NUM {
        return Err(TfmError::Spec(format!("{v} outside the support of {d}")));
    }
    let tail = 1.0 - d.cdf(v);
    if tail <= 0.0 {
        return Ok(v);
    }
    let f = d.pdf(v);
    if f.is_nan() || f <= 0.0 {
        return Err(TfmError::VirtualValueSingularity(v));
    }
    Ok(v - tail / f)
}

/// Upper end used when scanning a support numerically.
fn scan_hi(d: &Distribution) -> f64 {
    let (_, hi) = d.support();
    if hi.is_finite() {
        hi
    } else {
        d.quantile(1.0 - 1e-12)
    }
}

/// True when `φ` is strictly increasing on a 10⁴-point grid of the support.
pub fn is_regular(d: &Distribution) -> bool {
    let (lo, _) = d.support();
    let hi = scan_hi(d);
    let n = 10_000;
    let mut prev = f64::NEG_INFINITY;
    for i in 0..=n {
        let v = lo + (hi - lo) * i as f64 / n as f64;
        match virtual_value(d, v) {
            Ok(phi) => {
                if phi <= prev {
                    return false;
                }
                prev = phi;
            }
            Err(TfmError::VirtualValueSingularity(_)) => continue,
            Err(_) => return false,
        }
    }
    true
}

/// The monopoly reserve `φ⁻¹(0)`, by bisection.
pub fn inverse_virtual_zero(d: &Distribution) -> Result<f64> {
    if !is_regular(d) {
        return Err(TfmError::NotRegular(d.to_string()));
    }
    // Errors only at endpoints where the density vanishes; the tail term dominates there.
    let phi = |v: f64| virtual_value(d, v).unwrap_or(f64::NEG_INFINITY);
    let (mut lo, _) = d.support();
    let mut hi = scan_hi(d);
    if phi(lo) >= 0.0 {
        return Ok(lo);
    }
    for _ in 0..200 {
        if hi - lo <= 1e-13 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if phi(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Quadrature for bounded supports and `n` ≤ [`QUADRATURE_MAX_N`], Monte Carlo otherwise.
    Auto,
    Quadrature,
    MonteCarlo,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Auto => "auto",
            Method::Quadrature => "quadrature",
            Method::MonteCarlo => "mc",
        })
    }
}

impl Method {
    fn resolve(self, d: &Distribution, n: usize) -> Method {
        match self {
            Method::Auto if d.is_bounded() && n <= QUADRATURE_MAX_N => Method::Quadrature,
            Method::Auto => Method::MonteCarlo,
            m => m,
        }
    }
}

/// Expected honest payment and burn with the method that produced them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PaymentBurn {
    #[serde(with = "numeric::sig12")]
    pub p: f64,
    #[serde(with = "numeric::sig12")]
    pub b: f64,
    pub method: Method,
    /// Standard error of `p − b` for Monte Carlo estimates.
    #[serde(with = "numeric::sig12_opt")]
    pub stderr: Option<f64>,
    pub warning: Option<String>,
}

/// Monte Carlo settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McConfig {
    pub samples: usize,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            samples: MC_SAMPLES,
            seed: 0,
        }
    }
}

/// Largest fake at or above the reserve, if any; lower fakes never matter with one slot.
fn effective_fake(r: f64, fakes: &[f64]) -> Option<f64> {
    fakes
        .iter()
        .copied()
        .filter(|&t| t >= r)
        .fold(None, |m, t| Some(m.map_or(t, |m: f64| m.max(t))))
}

/// `∫_c^hi s · g(s) ds` where `g` is the density of the second highest of `n` values.
fn second_price_tail(d: &Distribution, n: usize, c: f64) -> f64 {
    let (_, hi) = d.support();
    if n < 2 || c >= hi {
        return 0.0;
    }
    let nf = n as f64;
    let g = |s: f64| {
        let f = d.cdf(s);
        s * nf * (nf - 1.0) * f.powi(n as i32 - 2) * (1.0 - f) * d.pdf(s)
    };
    simpson(g, c, hi, QUADRATURE_NODES)
}

/// Expected honest payment `P` and expected burn `B` of the second-price auction with
/// burnt reserve `r` and one slot, with `n` i.i.d. users and the given miner fakes.
pub fn expected_p_and_b(
    d: &Distribution,
    r: f64,
    n: usize,
    fakes: &[f64],
    method: Method,
    mc: McConfig,
) -> Result<PaymentBurn> {
    let t = effective_fake(r, fakes);
    let mut warning = None;
    let method = match method.resolve(d, n) {
        Method::Quadrature if !d.is_bounded() => {
            warning = Some(format!(
                "{d} is unbounded; used Monte Carlo instead of quadrature"
            ));
            Method::MonteCarlo
        }
        m => m,
    };
    if n == 0 {
        return Ok(PaymentBurn {
            p: 0.0,
            b: if t.is_some() { r } else { 0.0 },
            method,
            stderr: None,
            warning,
        });
    }
    let c = t.map_or(r, |t| t.max(r));
    let out = match method {
        Method::Quadrature => {
            let fc = d.cdf(c);
            let nf = n as f64;
            let p = c * nf * (1.0 - fc) * fc.powi(n as i32 - 1) + second_price_tail(d, n, c);
            let b = if t.is_some() {
                r
            } else {
                r * (1.0 - d.cdf(r).powi(n as i32))
            };
            PaymentBurn {
                p,
                b,
                method,
                stderr: None,
                warning,
            }
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(mc.seed);
            let (inv_n, inv_n1) = (1.0 / n as f64, 1.0 / (n as f64 - 1.0).max(1.0));
            let mut net = Vec::with_capacity(mc.samples);
            let (mut sp, mut sb) = (0.0, 0.0);
            for _ in 0..mc.samples {
                let um = rng.random::<f64>().powf(inv_n);
                let us = um * rng.random::<f64>().powf(inv_n1);
                let m = d.quantile(um);
                let s = if n >= 2 { d.quantile(us) } else { f64::NEG_INFINITY };
                let pay = if m >= c { c.max(s) } else { 0.0 };
                let burn = if t.is_some() || m >= r { r } else { 0.0 };
                sp += pay;
                sb += burn;
                net.push(pay - burn);
            }
            let k = mc.samples as f64;
            PaymentBurn {
                p: sp / k,
                b: sb / k,
                method: Method::MonteCarlo,
                stderr: Some(mean_stderr(&net).1),
                warning,
            }
        }
    };
    Ok(out)
}

/// Common random numbers for the conditional Monte Carlo gap estimator.
///
/// Reported standard errors use the i.i.d. formula and overstate the stratified error.
struct Draws {
    /// `U₁^{1/n}`: highest of `n` values given all lie below the fake, as a fraction of `F(t)`.
    top_all: Vec<f64>,
    /// `U₁^{1/(n−1)}`: highest of the other `n − 1` given exactly one value beats the fake.
    top_rest: Vec<f64>,
    /// `U₂^{1/(n−1)}`: second highest as a fraction of the highest.
    second: Vec<f64>,
}

impl Draws {
    fn new(n: usize, mc: McConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(mc.seed, n as u64));
        let inv_n = 1.0 / n as f64;
        let inv_n1 = 1.0 / (n as f64 - 1.0).max(1.0);
        let mut d = Draws {
            top_all: Vec::with_capacity(mc.samples),
            top_rest: Vec::with_capacity(mc.samples),
            second: Vec::with_capacity(mc.samples),
        };
        // Latin hypercube: one draw per stratum of each coordinate.
        let count = mc.samples.max(1);
        let mut perm: Vec<usize> = (0..count).collect();
        perm.shuffle(&mut rng);
        for (i, &j) in perm.iter().enumerate() {
            let u1 = (i as f64 + rng.random::<f64>()) / count as f64;
            let u2 = (j as f64 + rng.random::<f64>()) / count as f64;
            d.top_all.push(u1.powf(inv_n));
            d.top_rest.push(u1.powf(inv_n1));
            d.second.push(u2.powf(inv_n1));
        }
        d
    }
}

/// The miner's gain from a fake at `t` divided by `F(t)^{n−1}`, with the sign of the raw gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledGap {
    pub scaled: f64,
    /// `ln F(t)^{n−1}`: the raw gain is `scaled · exp(log_scale)`.
    pub log_scale: f64,
    pub stderr: Option<f64>,
}

impl ScaledGap {
    pub fn raw(&self) -> f64 {
        self.scaled * self.log_scale.exp()
    }
}

/// Evaluates `[P(f) − B(f)] − [P(∅) − B(∅)]` for a single fake at `t ≥ r`.
///
/// Only profiles with at most one honest value above `t` contribute. Their probabilities
/// are `n(1 − F)F^{n−1}` and `F^n`, so the gain is `F^{n−1}` times
/// `n(1 − F)·E[t − max(r, S) | J = 1] + F·E[−r − (max(r, S) − r)·1{M ≥ r} | J = 0]`,
/// where `J` counts honest values above `t`, `M` is the highest and `S` the second highest.
struct GapOracle<'a> {
    d: &'a Distribution,
    n: usize,
    method: Method,
    draws: Option<Draws>,
}

impl<'a> GapOracle<'a> {
    fn new(d: &'a Distribution, n: usize, method: Method, mc: McConfig) -> Self {
        let method = method.resolve(d, n);
        let draws = (method == Method::MonteCarlo && n >= 1).then(|| Draws::new(n, mc));
        GapOracle { d, n, method, draws }
    }

    fn gap(&self, r: f64, t: f64) -> ScaledGap {
        let n = self.n;
        if n == 0 {
            return ScaledGap {
                scaled: -r,
                log_scale: 0.0,
                stderr: None,
            };
        }
        let ft = self.d.cdf(t);
        let log_scale = if n == 1 { 0.0 } else { (n as f64 - 1.0) * ft.ln() };
        match (&self.draws, self.method) {
            (Some(dr), _) => self.sampled(dr, r, t, ft, log_scale),
            _ => {
                let mc = McConfig::default();
                let dev = expected_p_and_b(self.d, r, n, &[t], Method::Quadrature, mc);
                let hon = expected_p_and_b(self.d, r, n, &[], Method::Quadrature, mc);
                let raw = match (dev, hon) {
                    (Ok(a), Ok(b)) => (a.p - a.b) - (b.p - b.b),
                    _ => f64::NAN,
                };
                ScaledGap {
                    scaled: if log_scale.is_finite() {
                        raw / log_scale.exp()
                    } else {
                        raw
                    },
                    log_scale: if log_scale.is_finite() { log_scale } else { 0.0 },
                    stderr: None,
                }
            }
        }
    }

    fn sampled(&self, dr: &Draws, r: f64, t: f64, ft: f64, log_scale: f64) -> ScaledGap {
        let n = self.n;
        let (w1, w0) = (n as f64 * (1.0 - ft), ft);
        let q = |u: f64| self.d.quantile(u);
        let mut acc = Vec::with_capacity(dr.top_all.len());
        for i in 0..dr.top_all.len() {
            // A lone user who wins at the reserve pays exactly the burnt reserve.
            let (e1, e0) = if n == 1 {
                (t - r, -r)
            } else {
                let s1 = q(ft * dr.top_rest[i]);
                let um = ft * dr.top_all[i];
                let m0 = q(um);
                let s0 = q(um * dr.second[i]);
                let honest = if m0 >= r { r.max(s0) - r } else { 0.0 };
                (t - r.max(s1), -r - honest)
            };
            acc.push(w1 * e1 + w0 * e0);
        }
        let (mean, se) = mean_stderr(&acc);
        ScaledGap {
            scaled: mean,
            log_scale,
            stderr: Some(se),
        }
    }
}

/// Search settings for [`min_reserve_mic`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReserveSearch {
    /// Resolution of the reserve grid.
    pub step: f64,
    /// Spacing of the fake-bid grid before local refinement.
    pub fake_step: f64,
    pub method: Method,
    pub mc: McConfig,
}

impl Default for ReserveSearch {
    fn default() -> Self {
        ReserveSearch {
            step: 1e-3,
            fake_step: 0.01,
            method: Method::Auto,
            mc: McConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReserveResult {
    pub n: usize,
    pub k: usize,
    pub distribution: Distribution,
    #[serde(with = "numeric::sig12")]
    pub r_min: f64,
    /// Most profitable fake vector at `r_min`.
    #[serde(with = "numeric::sig12_vec")]
    pub worst_fakes: Vec<f64>,
    /// `[P(∅) − B(∅)] − max_f [P(f) − B(f)]` at `r_min`; nonnegative when the condition holds.
    #[serde(with = "numeric::sig12")]
    pub slack: f64,
    pub method: Method,
    pub samples: Option<usize>,
}

/// Best fake at reserve `r`: a `fake_step` grid on `[r, hi]` refined by golden-section search.
fn worst_fake(oracle: &GapOracle, r: f64, fake_step: f64) -> (f64, ScaledGap) {
    let hi = scan_hi(oracle.d);
    let mut best = (r, oracle.gap(r, r));
    let mut t = r;
    while t < hi {
        t = (t + fake_step).min(hi);
        let g = oracle.gap(r, t);
        if g.scaled > best.1.scaled {
            best = (t, g);
        }
    }
    let (mut a, mut b) = ((best.0 - fake_step).max(r), (best.0 + fake_step).min(hi));
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let (mut g1, mut g2) = (oracle.gap(r, x1), oracle.gap(r, x2));
    for _ in 0..60 {
        if b - a <= 1e-9 {
            break;
        }
        if g1.scaled >= g2.scaled {
            b = x2;
            x2 = x1;
            g2 = g1;
            x1 = b - phi * (b - a);
            g1 = oracle.gap(r, x1);
        } else {
            a = x1;
            x1 = x2;
            g1 = g2;
            x2 = a + phi * (b - a);
            g2 = oracle.gap(r, x2);
        }
    }
    for (x, g) in [(x1, g1), (x2, g2)] {
        if g.scaled > best.1.scaled {
            best = (x, g);
        }
    }
    best
}

/// Miner's largest gain from a single fake at reserve `r` (one slot, `n` users).
pub fn best_fake_gain(d: &Distribution, n: usize, r: f64, search: &ReserveSearch) -> (f64, f64) {
    let oracle = GapOracle::new(d, n, search.method, search.mc);
    let (t, g) = worst_fake(&oracle, r, search.fake_step);
    (t, g.raw())
}

/// Smallest reserve on the `step` grid for which no fake vector raises the miner's
/// expected utility, with one slot and `n` i.i.d. users.
///
/// With one slot only the highest fake matters, so fake vectors reduce to a single amount.
/// The search bisects on `[0, φ⁻¹(0)]` and confirms the condition fails one step below.
pub fn min_reserve_mic(
    d: &Distribution,
    n: usize,
    k: usize,
    search: &ReserveSearch,
) -> Result<ReserveResult> {
    if k != 1 {
        return Err(TfmError::Spec(format!(
            "reserve search supports block size 1 only, got {k}"
        )));
    }
    if !d.is_bounded() {
        return Err(TfmError::UnboundedSupport("reserve search".into()));
    }
    if !(search.step > 0.0 && search.fake_step > 0.0) {
        return Err(TfmError::Spec("reserve search steps must be positive".into()));
    }
    let oracle = GapOracle::new(d, n, search.method, search.mc);
    let r_star = inverse_virtual_zero(d)?;
    let at = |i: u64| i as f64 * search.step;
    let holds = |i: u64| worst_fake(&oracle, at(i), search.fake_step).1.scaled <= EPS_NUM;

    let mut hi = (r_star / search.step - 1e-9).ceil() as u64;
    while !holds(hi) {
        // Past the monopoly reserve only for numeric noise; keep stepping up.
        hi += 1;
        if at(hi) > scan_hi(d) {
            return Err(TfmError::Spec(format!(
                "no reserve satisfies the condition for n = {n}"
            )));
        }
    }
    let mut lo: Option<u64> = None;
    if holds(0) {
        hi = 0;
    } else {
        lo = Some(0);
    }
    while let Some(l) = lo {
        if hi - l <= 1 {
            break;
        }
        let mid = l + (hi - l) / 2;
        if holds(mid) {
            hi = mid;
        } else {
            lo = Some(mid);
        }
    }
    let r_min = at(hi);
    if hi > 0 && holds(hi - 1) {
        return Err(TfmError::Spec(format!(
            "condition is not monotone in the reserve near {r_min}"
        )));
    }
    let (t, g) = worst_fake(&oracle, r_min, search.fake_step);
    Ok(ReserveResult {
        n,
        k,
        distribution: *d,
        r_min,
        worst_fakes: vec![t],
        slack: -g.raw(),
        method: oracle.method,
        samples: (oracle.method == Method::MonteCarlo).then_some(search.mc.samples),
    })
}
