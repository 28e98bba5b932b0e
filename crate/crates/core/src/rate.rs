//! Exact data rates (features per clock cycle) and their propagation
//! through the layer pipeline.
//!
//! Every rate is a reduced fraction of unsigned integers. Nothing in this
//! module touches floating point except [`Rate::to_f64`], which exists for
//! display only.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Div, Mul};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dse::LayerImpl;
use crate::error::{Error, Result};
use crate::model::ModelGraph;

pub(crate) fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

fn gcd128(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Nonnegative rational rate, always in lowest terms.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rate {
    num: u64,
    den: u64,
}

impl Rate {
    pub const ZERO: Rate = Rate { num: 0, den: 1 };
    pub const ONE: Rate = Rate { num: 1, den: 1 };

    pub fn new(num: u64, den: u64) -> Result<Rate> {
        if den == 0 {
            return Err(Error::Rate(format!("{num}/0 has a zero denominator")));
        }
        Ok(Self::reduced(num as u128, den as u128).expect("reduced u64 fraction fits in u64"))
    }

    /// Signed constructor used by front ends that accept user input.
    pub fn from_signed(num: i64, den: i64) -> Result<Rate> {
        if den <= 0 {
            return Err(Error::Rate(format!(
                "{num}/{den}: denominator must be positive"
            )));
        }
        if num < 0 {
            return Err(Error::Rate(format!(
                "{num}/{den}: rate must be nonnegative"
            )));
        }
        Rate::new(num as u64, den as u64)
    }

    pub const fn integer(n: u64) -> Rate {
        Rate { num: n, den: 1 }
    }

    fn reduced(num: u128, den: u128) -> Option<Rate> {
        let g = gcd128(num, den).max(1);
        let (num, den) = (num / g, den / g);
        let (num, den) = if num == 0 { (0, 1) } else { (num, den) };
        Some(Rate {
            num: u64::try_from(num).ok()?,
            den: u64::try_from(den).ok()?,
        })
    }

    pub fn num(self) -> u64 {
        self.num
    }

    pub fn den(self) -> u64 {
        self.den
    }

    pub fn is_zero(self) -> bool {
        self.num == 0
    }

    pub fn is_integer(self) -> bool {
        self.den == 1
    }

    pub fn checked_mul(self, rhs: Rate) -> Option<Rate> {
        Self::reduced(
            self.num as u128 * rhs.num as u128,
            self.den as u128 * rhs.den as u128,
        )
    }

    pub fn checked_div(self, rhs: Rate) -> Option<Rate> {
        if rhs.num == 0 {
            return None;
        }
        Self::reduced(
            self.num as u128 * rhs.den as u128,
            self.den as u128 * rhs.num as u128,
        )
    }

    pub fn checked_sub(self, rhs: Rate) -> Option<Rate> {
        let a = self.num as u128 * rhs.den as u128;
        let b = rhs.num as u128 * self.den as u128;
        Self::reduced(a.checked_sub(b)?, self.den as u128 * rhs.den as u128)
    }

    /// Multiply by the ratio `num/den` of two counts.
    pub fn scale(self, num: u64, den: u64) -> Rate {
        assert!(den != 0, "scale by n/0");
        self * Rate::new(num, den).unwrap()
    }

    pub fn ceil(self) -> u64 {
        self.num.div_ceil(self.den)
    }

    pub fn floor(self) -> u64 {
        self.num / self.den
    }

    pub fn recip(self) -> Option<Rate> {
        Rate::ONE.checked_div(self)
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl Mul for Rate {
    type Output = Rate;

    fn mul(self, rhs: Rate) -> Rate {
        self.checked_mul(rhs).expect("rate overflow")
    }
}

impl Div for Rate {
    type Output = Rate;

    fn div(self, rhs: Rate) -> Rate {
        self.checked_div(rhs)
            .expect("rate division by zero or overflow")
    }
}

impl Ord for Rate {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num as u128 * other.den as u128).cmp(&(other.num as u128 * self.den as u128))
    }
}

impl PartialOrd for Rate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl fmt::Debug for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Rate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Rate> {
        let s = s.trim();
        let parse = |t: &str| {
            t.trim()
                .parse::<i64>()
                .map_err(|_| Error::Rate(format!("cannot parse {s:?} as num/den")))
        };
        match s.split_once('/') {
            Some((n, d)) => Rate::from_signed(parse(n)?, parse(d)?),
            None => Rate::from_signed(parse(s)?, 1),
        }
    }
}

impl Serialize for Rate {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Rate {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Rate, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Steady-state rates at one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRates {
    /// Features per cycle actually flowing into the layer.
    pub input: Rate,
    /// Features per cycle flowing out of the layer.
    pub output: Rate,
    /// Capacity of the chosen implementation (`P * j / h` when divisible).
    pub achieved: Rate,
    pub pixels: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateProfile {
    pub layers: Vec<LayerRates>,
}

impl RateProfile {
    pub fn input_rate(&self) -> Option<Rate> {
        self.layers.first().map(|l| l.input)
    }

    pub fn output_rate(&self) -> Option<Rate> {
        self.layers.last().map(|l| l.output)
    }

    /// Layers whose implementation capacity exceeds the flow they receive.
    pub fn overprovisioned(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.achieved > l.input)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Output flow of one layer given its input flow.
///
/// Conserves features: the layer emits `out_pixels * d_out` features for
/// every `in_pixels * d_in` it consumes, so the ratio of the two is the
/// ratio of the rates.
pub fn layer_output_rate(graph: &ModelGraph, layer: usize, input: Rate) -> Result<Rate> {
    let spec = &graph.layers[layer];
    let (ih, iw, ic) = graph.input_shape(layer);
    let (oh, ow, oc) = graph.shapes[layer];
    let num = (oh * ow * oc) as u128;
    let den = (ih * iw * ic) as u128;
    debug_assert_eq!(ic as u64, spec.in_channels);
    let ratio =
        Rate::reduced(num, den).ok_or_else(|| Error::Rate("feature ratio overflow".into()))?;
    let out = input
        .checked_mul(ratio)
        .ok_or_else(|| Error::Rate(format!("rate overflow at layer {layer}")))?;
    if out.is_zero() {
        return Err(Error::Rate(format!(
            "layer {layer}: output rate would be zero"
        )));
    }
    Ok(out)
}

/// Chain rates through every layer starting from `input_rate`.
pub fn propagate(graph: &ModelGraph, input_rate: Rate, impls: &[LayerImpl]) -> Result<RateProfile> {
    if impls.len() != graph.layers.len() {
        return Err(Error::Validation(format!(
            "{} layer implementations for {} layers",
            impls.len(),
            graph.layers.len()
        )));
    }
    if input_rate.is_zero() {
        return Err(Error::Rate("input rate must be positive".into()));
    }
    let mut rate = input_rate;
    let mut layers = Vec::with_capacity(impls.len());
    for (i, imp) in impls.iter().enumerate() {
        let output = layer_output_rate(graph, i, rate)?;
        layers.push(LayerRates {
            input: rate,
            output,
            achieved: imp.achieved_in_rate,
            pixels: imp.pixels,
        });
        rate = output;
    }
    Ok(RateProfile { layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalizes_on_construction() {
        assert_eq!(Rate::new(6, 4).unwrap(), Rate::new(3, 2).unwrap());
        assert_eq!(Rate::new(6, 4).unwrap().num(), 3);
        let r = Rate::new(3, 32).unwrap();
        assert_eq!((r.num(), r.den()), (3, 32));
        let z = Rate::new(0, 5).unwrap();
        assert_eq!((z.num(), z.den()), (0, 1));
    }

    #[test]
    fn rejects_bad_denominators() {
        assert!(Rate::new(1, 0).is_err());
        assert!(Rate::from_signed(1, -2).is_err());
        assert!(Rate::from_signed(-1, 2).is_err());
    }

    #[test]
    fn parses_and_prints() {
        let r: Rate = "3/32".parse().unwrap();
        assert_eq!(r.to_string(), "3/32");
        let r: Rate = "6".parse().unwrap();
        assert_eq!(r.to_string(), "6/1");
        assert!("3/x".parse::<Rate>().is_err());
        assert!("3/0".parse::<Rate>().is_err());
        let json = serde_json::to_string(&Rate::new(12, 8).unwrap()).unwrap();
        assert_eq!(json, "\"3/2\"");
    }

    #[test]
    fn ceil_and_floor() {
        let r = Rate::new(40, 3).unwrap();
        assert_eq!(r.ceil(), 14);
        assert_eq!(r.floor(), 13);
        assert_eq!(Rate::integer(5).ceil(), 5);
    }

    proptest! {
        #[test]
        fn always_lowest_terms(n in 0u64..10_000, d in 1u64..10_000) {
            let r = Rate::new(n, d).unwrap();
            prop_assert_eq!(gcd(r.num(), r.den()), 1);
            prop_assert_eq!(r.num() as u128 * d as u128, n as u128 * r.den() as u128);
        }

        #[test]
        fn ordering_matches_cross_multiplication(
            a in 0u64..500, b in 1u64..500, c in 0u64..500, d in 1u64..500
        ) {
            let x = Rate::new(a, b).unwrap();
            let y = Rate::new(c, d).unwrap();
            prop_assert_eq!(x.cmp(&y), (a * d).cmp(&(c * b)));
        }

        #[test]
        fn mul_div_roundtrip(a in 1u64..500, b in 1u64..500, c in 1u64..500, d in 1u64..500) {
            let x = Rate::new(a, b).unwrap();
            let y = Rate::new(c, d).unwrap();
            prop_assert_eq!((x * y) / y, x);
        }
    }
}
