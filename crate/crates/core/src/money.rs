//! Fixed-point quantities.
//!
//! Every monetary and energy amount in the system is an integer count of its
//! smallest unit: micro-dollars, micro-tokens (stablecoin), micro-coins
//! (RC-coin) and watt-hours. Serialized form is a decimal string so exports
//! stay exact and readable.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Neg, Sub, SubAssign};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Number of atoms in one whole unit of any six-decimal quantity.
pub const MICRO: i64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot parse {input:?} as a decimal with at most {scale} fractional digits")]
pub struct ParseAmountError {
    pub input: String,
    pub scale: u32,
}

/// Integer division rounding to nearest, ties to even.
pub fn div_round_half_even(num: i128, den: i128) -> i128 {
    assert!(den != 0, "division by zero");
    let (num, den) = if den < 0 { (-num, -den) } else { (num, den) };
    let q = num.div_euclid(den);
    let r = num.rem_euclid(den);
    match (2 * r).cmp(&den) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => {
            if q % 2 == 0 {
                q
            } else {
                q + 1
            }
        }
    }
}

/// Integer division rounding toward positive infinity.
pub fn div_ceil(num: i128, den: i128) -> i128 {
    assert!(den > 0, "ceil division needs a positive divisor");
    let q = num.div_euclid(den);
    if num.rem_euclid(den) == 0 {
        q
    } else {
        q + 1
    }
}

/// Integer division rounding toward negative infinity.
pub fn div_floor(num: i128, den: i128) -> i128 {
    assert!(den > 0, "floor division needs a positive divisor");
    num.div_euclid(den)
}

fn format_scaled(atoms: i64, scale: u32) -> String {
    let unit = 10i128.pow(scale);
    let v = atoms as i128;
    let sign = if v < 0 { "-" } else { "" };
    let v = v.abs();
    if scale == 0 {
        return format!("{sign}{v}");
    }
    format!(
        "{sign}{}.{:0width$}",
        v / unit,
        v % unit,
        width = scale as usize
    )
}

fn parse_scaled(s: &str, scale: u32) -> Result<i64, ParseAmountError> {
    let err = || ParseAmountError {
        input: s.to_string(),
        scale,
    };
    let t = s.trim();
    let (neg, t) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t),
    };
    let (whole, frac) = match t.split_once('.') {
        Some((w, f)) => (w, f),
        None => (t, ""),
    };
    if whole.is_empty() && frac.is_empty() {
        return Err(err());
    }
    if !whole.chars().all(|c| c.is_ascii_digit()) || !frac.chars().all(|c| c.is_ascii_digit()) {
        return Err(err());
    }
    if frac.len() > scale as usize {
        return Err(err());
    }
    let whole: i128 = if whole.is_empty() {
        0
    } else {
        whole.parse().map_err(|_| err())?
    };
    let mut frac_v: i128 = if frac.is_empty() {
        0
    } else {
        frac.parse().map_err(|_| err())?
    };
    frac_v *= 10i128.pow(scale - frac.len() as u32);
    let v = whole * 10i128.pow(scale) + frac_v;
    let v = if neg { -v } else { v };
    i64::try_from(v).map_err(|_| err())
}

macro_rules! fixed_quantity {
    ($(#[$meta:meta])* $name:ident, scale = $scale:expr) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(i64);

        impl $name {
            pub const ZERO: Self = Self(0);
            pub const SCALE: u32 = $scale;
            pub const ONE: Self = Self(10i64.pow($scale));

            pub const fn from_atoms(atoms: i64) -> Self {
                Self(atoms)
            }

            pub const fn atoms(self) -> i64 {
                self.0
            }

            pub const fn from_whole(units: i64) -> Self {
                Self(units * 10i64.pow($scale))
            }

            pub fn is_zero(self) -> bool {
                self.0 == 0
            }

            pub fn is_negative(self) -> bool {
                self.0 < 0
            }

            pub fn checked_add(self, other: Self) -> Option<Self> {
                self.0.checked_add(other.0).map(Self)
            }

            pub fn checked_sub(self, other: Self) -> Option<Self> {
                self.0.checked_sub(other.0).map(Self)
            }

            pub fn max(self, other: Self) -> Self {
                if self >= other { self } else { other }
            }

            pub fn min(self, other: Self) -> Self {
                if self <= other { self } else { other }
            }

            /// Parse a decimal string such as `"4.166667"`.
            pub fn parse(s: &str) -> Result<Self, ParseAmountError> {
                parse_scaled(s, $scale).map(Self)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&format_scaled(self.0, $scale))
            }
        }

        impl FromStr for $name {
            type Err = ParseAmountError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Self::parse(s)
            }
        }

        impl Add for $name {
            type Output = Self;
            fn add(self, rhs: Self) -> Self {
                Self(self.0.checked_add(rhs.0).expect(concat!(stringify!($name), " overflow")))
            }
        }

        impl Sub for $name {
            type Output = Self;
            fn sub(self, rhs: Self) -> Self {
                Self(self.0.checked_sub(rhs.0).expect(concat!(stringify!($name), " overflow")))
            }
        }

        impl Neg for $name {
            type Output = Self;
            fn neg(self) -> Self {
                Self(-self.0)
            }
        }

        impl AddAssign for $name {
            fn add_assign(&mut self, rhs: Self) {
                *self = *self + rhs;
            }
        }

        impl SubAssign for $name {
            fn sub_assign(&mut self, rhs: Self) {
                *self = *self - rhs;
            }
        }

        impl Sum for $name {
            fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
                iter.fold(Self::ZERO, |a, b| a + b)
            }
        }

        impl<'a> Sum<&'a $name> for $name {
            fn sum<I: Iterator<Item = &'a Self>>(iter: I) -> Self {
                iter.fold(Self::ZERO, |a, b| a + *b)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_string())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                #[derive(Deserialize)]
                #[serde(untagged)]
                enum Repr {
                    Text(String),
                    Int(i64),
                }
                match Repr::deserialize(d)? {
                    Repr::Text(s) => Self::parse(&s).map_err(serde::de::Error::custom),
                    Repr::Int(v) => v
                        .checked_mul(10i64.pow($scale))
                        .map(Self)
                        .ok_or_else(|| serde::de::Error::custom("amount out of range")),
                }
            }
        }
    };
}

fixed_quantity!(
    /// US dollars in micro-dollar atoms.
    Usd,
    scale = 6
);
fixed_quantity!(
    /// Fiat-pegged stablecoin in micro-token atoms; one token is one dollar.
    Tokens,
    scale = 6
);
fixed_quantity!(
    /// RC-coin in micro-coin atoms.
    Coins,
    scale = 6
);
fixed_quantity!(
    /// Energy in watt-hours (0.001 kWh granularity), displayed as kWh.
    Energy,
    scale = 3
);
fixed_quantity!(
    /// A dimensionless factor in parts per million (1.000000 = `Ppm::ONE`).
    Ppm,
    scale = 6
);
fixed_quantity!(
    /// Recycling cost rate in micro-dollars per watt.
    CostRate,
    scale = 6
);

impl Tokens {
    /// Fiat-to-token conversion at the fixed 1:1 peg.
    pub const fn from_fiat(usd: Usd) -> Self {
        Tokens(usd.atoms())
    }

    pub const fn to_fiat(self) -> Usd {
        Usd::from_atoms(self.0)
    }
}

impl Energy {
    pub const fn from_kwh(kwh: i64) -> Self {
        Self::from_whole(kwh)
    }

    pub const fn wh(self) -> i64 {
        self.0
    }
}

impl Usd {
    /// `self * numerator / denominator`, half-even at the micro-dollar.
    pub fn mul_div_half_even(self, numerator: i64, denominator: i64) -> Usd {
        Usd(div_round_half_even(self.0 as i128 * numerator as i128, denominator as i128) as i64)
    }

    /// Rounded to whole cents, half-even; used for display only.
    pub fn to_cents(self) -> i64 {
        div_round_half_even(self.0 as i128, 10_000) as i64
    }
}

impl Ppm {
    /// Scale an atom count by this factor, half-even.
    pub fn scale_half_even(self, atoms: i64) -> i64 {
        div_round_half_even(atoms as i128 * self.0 as i128, MICRO as i128) as i64
    }

    /// Divide an atom count by this factor, half-even.
    pub fn divide_half_even(self, atoms: i64) -> i64 {
        div_round_half_even(atoms as i128 * MICRO as i128, self.0 as i128) as i64
    }
}

impl CostRate {
    /// Rate implied by a module price and its nameplate wattage, half-even at
    /// the micro-dollar per watt.
    pub fn from_module_price(price: Usd, module_watts: u64) -> Self {
        CostRate(div_round_half_even(price.atoms() as i128, module_watts as i128) as i64)
    }

    /// Total cost for a capacity; exact because capacity is whole watts.
    pub fn total_for(self, capacity_w: u64) -> Usd {
        Usd::from_atoms(
            self.0
                .checked_mul(capacity_w as i64)
                .expect("recycling cost overflow"),
        )
    }
}
