//! Tolerances and the stable decimal encoding used in every JSON artifact.

use serde::{Deserialize, Deserializer, Serializer};

/// Absolute tolerance for comparing currency amounts.
pub const EPS_NUM: f64 = 1e-9;

/// Absolute tolerance for comparing expected payments against the Myerson oracle.
pub const EPS_PAY: f64 = 1e-6;

/// A deviation must beat honest play by more than this to count as a witness.
pub const EPS_GAP: f64 = 1e-7;

pub fn approx_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= EPS_NUM
}

/// Quantizes an amount onto the `EPS_NUM` lattice so it can be used as an exact key.
pub fn quantize(x: f64) -> i64 {
    (x / EPS_NUM).round() as i64
}

/// Formats `x` with 12 significant digits as a plain decimal string.
///
/// Trailing zeros are trimmed and negative zero prints as `0`, so the
/// same value always produces the same bytes.
pub fn format_sig12(x: f64) -> String {
    if x.is_nan() {
        return "NaN".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let mag = x.abs();
    if !(1e-6..1e15).contains(&mag) {
        let s = format!("{:.11e}", x);
        return trim_exponent_form(&s);
    }
    let exponent = mag.log10().floor() as i32;
    let decimals = (11 - exponent).max(0) as usize;
    let s = format!("{:.*}", decimals, x);
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".to_string()
    } else {
        s
    }
}

fn trim_exponent_form(s: &str) -> String {
    match s.split_once('e') {
        Some((mantissa, exp)) => {
            let mantissa = if mantissa.contains('.') {
                mantissa.trim_end_matches('0').trim_end_matches('.')
            } else {
                mantissa
            };
            format!("{mantissa}e{exp}")
        }
        None => s.to_string(),
    }
}

pub fn parse_decimal(s: &str) -> Result<f64, String> {
    match s {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s.parse::<f64>().map_err(|e| format!("bad decimal {s:?}: {e}")),
    }
}

/// `serde(with = "crate::numeric::sig12")` for `f64` fields.
pub mod sig12 {
    use super::*;

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_sig12(*x))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let s = String::deserialize(d)?;
        parse_decimal(&s).map_err(serde::de::Error::custom)
    }
}

/// `serde(with = "crate::numeric::sig12_opt")` for `Option<f64>` fields.
pub mod sig12_opt {
    use super::*;

    pub fn serialize<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match x {
            Some(v) => s.serialize_some(&format_sig12(*v)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        let s = Option::<String>::deserialize(d)?;
        s.map(|s| parse_decimal(&s).map_err(serde::de::Error::custom))
            .transpose()
    }
}

/// `serde(with = "crate::numeric::sig12_vec")` for `Vec<f64>` fields.
pub mod sig12_vec {
    use super::*;
    use serde::ser::SerializeSeq;

    pub fn serialize<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(xs.len()))?;
        for x in xs {
            seq.serialize_element(&format_sig12(*x))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let v = Vec::<String>::deserialize(d)?;
        v.iter()
            .map(|s| parse_decimal(s).map_err(serde::de::Error::custom))
            .collect()
    }
}

/// Composite Simpson rule with `intervals` (rounded up to even) subintervals.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, intervals: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let m = if intervals.is_multiple_of(2) {
        intervals.max(2)
    } else {
        intervals + 1
    };
    let h = (b - a) / m as f64;
    let mut acc = f(a) + f(b);
    for i in 1..m {
        let x = a + h * i as f64;
        acc += if i % 2 == 1 { 4.0 * f(x) } else { 2.0 * f(x) };
    }
    acc * h / 3.0
}

/// Natural log of the binomial coefficient C(n, k).
pub fn ln_choose(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let k = k.min(n - k);
    (0..k)
        .map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln())
        .sum()
}

/// Exact C(n, k) when it fits in a `u64`.
pub fn choose(n: u64, k: u64) -> Option<u64> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

/// Mean and standard error of a sample.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig12_is_stable_and_trimmed() {
        assert_eq!(format_sig12(0.0), "0");
        assert_eq!(format_sig12(-0.0), "0");
        assert_eq!(format_sig12(2.0), "2");
        assert_eq!(format_sig12(0.1 + 0.2), "0.3");
        assert_eq!(format_sig12(1.0 / 3.0), "0.333333333333");
        assert_eq!(format_sig12(-12.5), "-12.5");
        assert_eq!(format_sig12(1234567.891), "1234567.891");
        assert_eq!(format_sig12(1e-30), "1e-30");
    }

    #[test]
    fn sig12_parses_back() {
        for x in [0.25, 3.0, 1.0 / 7.0, 1e-12, 98765.4321] {
            let s = format_sig12(x);
            let y = parse_decimal(&s).unwrap();
            assert!((x - y).abs() <= 1e-11 * x.abs().max(1e-300));
        }
    }

    #[test]
    fn simpson_integrates_cubic_exactly() {
        let v = simpson(|x| x * x * x - x, 0.0, 2.0, 10);
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn binomials() {
        assert_eq!(choose(5, 2), Some(10));
        assert_eq!(choose(20, 6), Some(38760));
        assert_eq!(choose(3, 5), Some(0));
        assert!((ln_choose(10, 3) - 120f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn sample_statistics() {
        let (m, se) = mean_stderr(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }
}
