//! Scenario grids and strategy budgets, with their one-line text syntax.
//!
//! Grid: `0:5:0.5`, `0,1,2.5`, or `values=0:5:0.5;n=1..4;max_profiles=200;profiles=10,8/5,3`.
//! Budget: `fakes=3,user_fakes=1,amounts=grid+ties,random=0,max_strategies=20000`.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TfmError};
use crate::numeric::{format_sig12, EPS_NUM};
use crate::outcome::Capacity;

fn spec_err(msg: impl Into<String>) -> TfmError {
    TfmError::Spec(msg.into())
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| spec_err(format!("bad number {s:?}")))
}

/// Parses `lo:hi:step` or a comma list into sorted distinct values.
pub fn parse_values(s: &str) -> Result<Vec<f64>> {
    let s = s.trim();
    let mut out = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        let [lo, hi, step] = parts[..] else {
            return Err(spec_err(format!("range {s:?} must be lo:hi:step")));
        };
        let (lo, hi, step) = (parse_f64(lo)?, parse_f64(hi)?, parse_f64(step)?);
        if step.is_nan() || step <= 0.0 || hi < lo {
            return Err(spec_err(format!("empty or invalid range {s:?}")));
        }
        let count = ((hi - lo) / step + 1e-9).floor() as usize;
        (0..=count).map(|i| lo + step * i as f64).collect::<Vec<_>>()
    } else {
        s.split(',').map(parse_f64).collect::<Result<Vec<_>>>()?
    };
    if out.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(spec_err("values must be finite and nonnegative"));
    }
    out.sort_by(f64::total_cmp);
    out.dedup_by(|a, b| (*a - *b).abs() <= EPS_NUM);
    if out.is_empty() {
        return Err(spec_err("empty value set"));
    }
    Ok(out)
}

/// Value profiles to check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub values: Vec<f64>,
    /// Inclusive range of user counts; `None` means `1..=k+2` (or `1..=4` for unbounded blocks).
    pub users: Option<(usize, usize)>,
    /// Explicit profiles checked in addition to (or instead of) the generated ones.
    pub profiles: Vec<Vec<f64>>,
    /// Only the explicit profiles are used when true.
    pub explicit_only: bool,
    pub max_profiles: usize,
    pub seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            values: (0..=10).map(|i| i as f64 * 0.5).collect(),
            users: None,
            profiles: vec![],
            explicit_only: false,
            max_profiles: 200,
            seed: 0,
        }
    }
}

impl GridSpec {
    /// Only the given profiles.
    pub fn profiles(profiles: Vec<Vec<f64>>) -> Self {
        let mut values: Vec<f64> = profiles.iter().flatten().copied().collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        GridSpec {
            values,
            profiles,
            explicit_only: true,
            ..GridSpec::default()
        }
    }

    pub fn with_users(mut self, lo: usize, hi: usize) -> Self {
        self.users = Some((lo, hi));
        self
    }

    /// Smallest gap between distinct values (the grid step).
    pub fn step(&self) -> f64 {
        let s = self
            .values
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min);
        if s.is_finite() {
            s
        } else {
            self.values.first().copied().filter(|v| *v > 0.0).unwrap_or(1.0)
        }
    }

    /// Offset used for near-tie deviations: a quarter of the grid step.
    pub fn tie_offset(&self) -> f64 {
        self.step() / 4.0
    }

    pub fn user_range(&self, k: Capacity) -> (usize, usize) {
        self.users.unwrap_or(match k {
            Capacity::Finite(k) => (1, k + 2),
            Capacity::Unbounded => (1, 4),
        })
    }

    /// Profiles as descending value lists (user `u0` holds the largest value).
    ///
    /// Generated profiles are all multisets of `values` of each size in range; when
    /// there are more than `max_profiles`, a seeded subset is kept in enumeration order.
    pub fn expand(&self, k: Capacity) -> Expansion {
        let mut out: Vec<Vec<f64>> = self.profiles.clone();
        let mut generated = Vec::new();
        if !self.explicit_only {
            let (lo, hi) = self.user_range(k);
            let mut desc = self.values.clone();
            desc.reverse();
            for n in lo.max(1)..=hi {
                multisets(&desc, n, &mut Vec::new(), 0, &mut generated);
            }
        }
        let total = generated.len() + out.len();
        if generated.len() > self.max_profiles {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            let mut keep = sample(&mut rng, generated.len(), self.max_profiles).into_vec();
            keep.sort_unstable();
            generated = keep.into_iter().map(|i| generated[i].clone()).collect();
        }
        out.extend(generated);
        Expansion { total, profiles: out }
    }
}

pub struct Expansion {
    /// Profiles before sampling.
    pub total: usize,
    pub profiles: Vec<Vec<f64>>,
}

fn multisets(desc: &[f64], n: usize, cur: &mut Vec<f64>, start: usize, out: &mut Vec<Vec<f64>>) {
    if cur.len() == n {
        out.push(cur.clone());
        return;
    }
    for i in start..desc.len() {
        cur.push(desc[i]);
        multisets(desc, n, cur, i, out);
        cur.pop();
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let vals: Vec<String> = self.values.iter().map(|v| format_sig12(*v)).collect();
        write!(f, "values={}", vals.join(","))?;
        if let Some((lo, hi)) = self.users {
            write!(f, ";n={lo}..{hi}")?;
        }
        if !self.profiles.is_empty() {
            let ps: Vec<String> = self
                .profiles
                .iter()
                .map(|p| p.iter().map(|v| format_sig12(*v)).collect::<Vec<_>>().join(","))
                .collect();
            write!(f, ";profiles={}", ps.join("/"))?;
        }
        if self.explicit_only {
            write!(f, ";only=profiles")?;
        }
        write!(f, ";max_profiles={};seed={}", self.max_profiles, self.seed)
    }
}

impl FromStr for GridSpec {
    type Err = TfmError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(spec_err("empty grid spec"));
        }
        if !s.contains('=') {
            return Ok(GridSpec {
                values: parse_values(s)?,
                ..GridSpec::default()
            });
        }
        let mut g = GridSpec::default();
        let mut saw_values = false;
        for part in s.split(';').filter(|p| !p.trim().is_empty()) {
            let (key, val) = part
                .split_once('=')
                .ok_or_else(|| spec_err(format!("expected key=value in {part:?}")))?;
            match key.trim() {
                "values" => {
                    g.values = parse_values(val)?;
                    saw_values = true;
                }
                "n" => {
                    let (lo, hi) = match val.split_once("..") {
                        Some((a, b)) => (a, b),
                        None => (val, val),
                    };
                    let lo: usize = lo.trim().parse().map_err(|_| spec_err("bad n range"))?;
                    let hi: usize = hi.trim().parse().map_err(|_| spec_err("bad n range"))?;
                    if lo == 0 || hi < lo {
                        return Err(spec_err("n range must be 1 <= lo <= hi"));
                    }
                    g.users = Some((lo, hi));
                }
                "profiles" => {
                    g.profiles = val
                        .split('/')
                        .map(|p| p.split(',').map(parse_f64).collect::<Result<Vec<_>>>())
                        .collect::<Result<Vec<_>>>()?;
                    if g.profiles.iter().flatten().any(|v| *v < 0.0 || !v.is_finite()) {
                        return Err(spec_err("profile values must be nonnegative"));
                    }
                }
                "only" if val.trim() == "profiles" => g.explicit_only = true,
                "max_profiles" => {
                    g.max_profiles = val.trim().parse().map_err(|_| spec_err("bad max_profiles"))?
                }
                "seed" => g.seed = val.trim().parse().map_err(|_| spec_err("bad seed"))?,
                other => return Err(spec_err(format!("unknown grid key {other:?}"))),
            }
        }
        if !saw_values && !g.profiles.is_empty() {
            let mut values: Vec<f64> = g.profiles.iter().flatten().copied().collect();
            values.sort_by(f64::total_cmp);
            values.dedup();
            g.values = values;
            g.explicit_only = true;
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmountMode {
    /// Grid values only.
    Grid,
    /// Grid values plus every observed bid and the bid ± tie offset.
    GridTies,
}

/// Limits on the deviation search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    /// Fake bids a miner-side coalition may inject; `None` means `k + 1` (2 for unbounded blocks).
    pub fakes: Option<usize>,
    /// Fake bids a lone user may post.
    pub user_fakes: usize,
    pub amounts: AmountMode,
    /// Extra log-uniform random amounts added to the candidate set.
    pub random: usize,
    pub random_seed: u64,
    /// Cap on strategies evaluated per (profile, coalition).
    pub max_strategies: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            fakes: None,
            user_fakes: 1,
            amounts: AmountMode::GridTies,
            random: 0,
            random_seed: 0,
            max_strategies: 20_000,
        }
    }
}

impl Budget {
    pub fn miner_fakes(&self, k: Capacity) -> usize {
        self.fakes.unwrap_or(match k {
            Capacity::Finite(k) => k + 1,
            Capacity::Unbounded => 2,
        })
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fakes = self.fakes.map_or("auto".to_string(), |x| x.to_string());
        let amounts = match self.amounts {
            AmountMode::Grid => "grid",
            AmountMode::GridTies => "grid+ties",
        };
        write!(
            f,
            "fakes={fakes},user_fakes={},amounts={amounts},random={},random_seed={},max_strategies={}",
            self.user_fakes, self.random, self.random_seed, self.max_strategies
        )
    }
}

impl FromStr for Budget {
    type Err = TfmError;

    fn from_str(s: &str) -> Result<Self> {
        let mut b = Budget::default();
        for part in s.split(',').filter(|p| !p.trim().is_empty()) {
            let (key, val) = part
                .split_once('=')
                .ok_or_else(|| spec_err(format!("expected key=value in {part:?}")))?;
            let int = |v: &str| -> Result<usize> {
                v.trim()
                    .parse()
                    .map_err(|_| spec_err(format!("bad integer {v:?}")))
            };
            match key.trim() {
                "fakes" if val.trim() == "auto" => b.fakes = None,
                "fakes" => b.fakes = Some(int(val)?),
                "user_fakes" => b.user_fakes = int(val)?,
                "amounts" => {
                    b.amounts = match val.trim() {
                        "grid" => AmountMode::Grid,
                        "grid+ties" => AmountMode::GridTies,
                        other => return Err(spec_err(format!("unknown amounts {other:?}"))),
                    }
                }
                "random" => b.random = int(val)?,
                "random_seed" => b.random_seed = int(val)? as u64,
                "max_strategies" => {
                    b.max_strategies = int(val)?;
                    if b.max_strategies == 0 {
                        return Err(spec_err("max_strategies must be positive"));
                    }
                }
                other => return Err(spec_err(format!("unknown budget key {other:?}"))),
            }
        }
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_and_list() {
        assert_eq!(parse_values("0:1:0.5").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_values("2,1,2").unwrap(), vec![1.0, 2.0]);
        assert!(parse_values("1:0:1").is_err());
        assert!(parse_values("a,b").is_err());
        assert!(parse_values("0:5").is_err());
    }

    #[test]
    fn keyed_grid() {
        let g: GridSpec = "values=0:5:0.5;n=2..3;max_profiles=7".parse().unwrap();
        assert_eq!(g.values.len(), 11);
        assert_eq!(g.users, Some((2, 3)));
        assert_eq!(g.expand(Capacity::Finite(1)).profiles.len(), 7);
        assert!((g.tie_offset() - 0.125).abs() < 1e-12);
    }

    #[test]
    fn explicit_profiles_only() {
        let g: GridSpec = "profiles=10,8/5,3".parse().unwrap();
        let e = g.expand(Capacity::Finite(2));
        assert_eq!(e.profiles, vec![vec![10.0, 8.0], vec![5.0, 3.0]]);
    }

    #[test]
    fn grid_text_round_trips() {
        let g: GridSpec = "values=0,1.5,3;n=1..2;profiles=3,1;max_profiles=9;seed=4"
            .parse()
            .unwrap();
        let back: GridSpec = g.to_string().parse().unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn multiset_counts() {
        let g = GridSpec {
            values: vec![0.0, 1.0, 2.0],
            users: Some((2, 2)),
            ..GridSpec::default()
        };
        let e = g.expand(Capacity::Finite(1));
        assert_eq!(e.total, 6);
        assert!(e.profiles.iter().all(|p| p[0] >= p[1]));
    }

    #[test]
    fn budget_parse() {
        let b: Budget = "fakes=1,amounts=grid,random=5".parse().unwrap();
        assert_eq!(b.fakes, Some(1));
        assert_eq!(b.amounts, AmountMode::Grid);
        assert_eq!(b.random, 5);
        assert!("fakes=x".parse::<Budget>().is_err());
        assert!("bogus=1".parse::<Budget>().is_err());
        let back: Budget = b.to_string().parse().unwrap();
        assert_eq!(back, b);
        assert_eq!(Budget::default().miner_fakes(Capacity::Finite(2)), 3);
    }
}
