//! Internal randomness of mechanisms: exact enumeration over a choice tape, or seeded sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Support size above which exact enumeration gives way to seeded sampling.
pub const ENUMERATION_LIMIT: usize = 1_000_000;

/// Source of uniform choices for randomized rules.
pub trait Coins {
    /// Uniform draw from `0..arity`. `arity` must be at least 1.
    fn pick(&mut self, arity: u64) -> u64;

    /// Marks the start of a rule so samplers can switch to that rule's stream.
    fn enter(&mut self, _rule: Rule) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    Inclusion = 1,
    Confirmation = 2,
}

/// Replays a recorded prefix of choices and extends it with zeros.
#[derive(Debug, Default)]
pub struct Tape {
    choices: Vec<(u64, u64)>,
    pos: usize,
}

impl Tape {
    fn rewind(&mut self) {
        self.pos = 0;
    }

    fn widest(&self) -> u64 {
        self.choices.iter().map(|&(_, a)| a).max().unwrap_or(1)
    }

    fn probability(&self) -> f64 {
        self.choices.iter().map(|&(_, a)| 1.0 / a as f64).product()
    }

    /// Moves to the next branch in depth-first order; false once every branch is done.
    fn advance(&mut self) -> bool {
        self.choices.truncate(self.pos);
        while let Some((v, a)) = self.choices.pop() {
            if v + 1 < a {
                self.choices.push((v + 1, a));
                return true;
            }
        }
        false
    }
}

impl Coins for Tape {
    fn pick(&mut self, arity: u64) -> u64 {
        debug_assert!(arity >= 1);
        if arity <= 1 {
            return 0;
        }
        if let Some(&(v, a)) = self.choices.get(self.pos) {
            debug_assert_eq!(a, arity, "rule is not deterministic given its choices");
            self.pos += 1;
            return v;
        }
        self.choices.push((0, arity));
        self.pos += 1;
        0
    }
}

/// Seeded sampler with one derived stream per rule.
#[derive(Debug)]
pub struct Sampler {
    base: u64,
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Sampler {
            base: seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Coins for Sampler {
    fn pick(&mut self, arity: u64) -> u64 {
        if arity <= 1 {
            0
        } else {
            self.rng.random_range(0..arity)
        }
    }

    fn enter(&mut self, rule: Rule) {
        self.rng = ChaCha8Rng::seed_from_u64(derive_seed(self.base, rule as u64));
    }
}

/// Mixes a root seed with a label (SplitMix64 finalizer).
pub fn derive_seed(root: u64, label: u64) -> u64 {
    let mut z = root ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// How to resolve a randomized execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Randomness {
    pub seed: u64,
    /// Sample count used when the exact support exceeds [`ENUMERATION_LIMIT`].
    pub samples: usize,
}

impl Default for Randomness {
    fn default() -> Self {
        Randomness {
            seed: 0,
            samples: 10_000,
        }
    }
}

pub enum Resolved<T> {
    Exact(Vec<(T, f64)>),
    Sampled(Vec<T>),
}

/// Runs `f` over every branch of its choices, or samples it when the support is too large.
pub fn resolve<T, F>(rand: Randomness, mut f: F) -> Resolved<T>
where
    F: FnMut(&mut dyn Coins) -> T,
{
    let mut tape = Tape::default();
    let mut atoms = Vec::new();
    loop {
        tape.rewind();
        let value = f(&mut tape);
        atoms.push((value, tape.probability()));
        if atoms.len() > ENUMERATION_LIMIT || tape.widest() > ENUMERATION_LIMIT as u64 {
            break;
        }
        if !tape.advance() {
            return Resolved::Exact(atoms);
        }
    }
    drop(atoms);
    let samples = (0..rand.samples)
        .map(|i| {
            let mut s = Sampler::new(derive_seed(rand.seed, i as u64));
            f(&mut s)
        })
        .collect();
    Resolved::Sampled(samples)
}

/// The `rank`-th `m`-subset of `0..n` in lexicographic order.
pub fn unrank_combination(n: usize, m: usize, mut rank: u64) -> Vec<usize> {
    let mut out = Vec::with_capacity(m);
    let mut next = 0;
    for slot in 0..m {
        let left = m - slot - 1;
        loop {
            let count = crate::numeric::choose((n - next - 1) as u64, left as u64).unwrap_or(u64::MAX);
            if rank < count {
                break;
            }
            rank -= count;
            next += 1;
        }
        out.push(next);
        next += 1;
    }
    out
}

/// Uniformly random `m`-subset of `0..n`, drawn with one pick.
pub fn choose_subset(coins: &mut dyn Coins, n: usize, m: usize) -> Vec<usize> {
    let m = m.min(n);
    if m == n {
        return (0..n).collect();
    }
    let total = crate::numeric::choose(n as u64, m as u64).expect("subset count overflows u64");
    unrank_combination(n, m, coins.pick(total))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tape_enumerates_nested_choices() {
        let r = resolve(Randomness::default(), |c| {
            let a = c.pick(2);
            if a == 0 {
                (a, c.pick(3))
            } else {
                (a, 9)
            }
        });
        let Resolved::Exact(atoms) = r else {
            panic!("expected exact")
        };
        let got: Vec<_> = atoms
            .iter()
            .map(|(v, p)| (*v, (p * 6.0).round() as u32))
            .collect();
        assert_eq!(got, vec![((0, 0), 1), ((0, 1), 1), ((0, 2), 1), ((1, 9), 3)]);
    }

    #[test]
    fn deterministic_rule_has_one_atom() {
        let Resolved::Exact(atoms) = resolve(Randomness::default(), |_| 7) else {
            panic!()
        };
        assert_eq!(atoms, vec![(7, 1.0)]);
    }

    #[test]
    fn large_support_falls_back_to_sampling() {
        let rand = Randomness { seed: 3, samples: 50 };
        let r = resolve(rand, |c| c.pick(1 << 40));
        let Resolved::Sampled(a) = r else { panic!() };
        let Resolved::Sampled(b) = resolve(rand, |c| c.pick(1 << 40)) else {
            panic!()
        };
        assert_eq!(a.len(), 50);
        assert_eq!(a, b);
    }

    #[test]
    fn unranking_covers_all_subsets() {
        let all: Vec<Vec<usize>> = (0..10).map(|r| unrank_combination(5, 2, r)).collect();
        assert_eq!(all[0], vec![0, 1]);
        assert_eq!(all[9], vec![3, 4]);
        let mut dedup = all.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), 10);
    }
}
