//! Singlet-state measurement statistics on the protocol's angle grid.
//!
//! Every measurement angle reachable in the protocol is a multiple of π/8 in
//! `[0, π]`, so angles are stored as exact grid indices and only converted to
//! radians when a trigonometric value is needed. The singlet is modelled by its
//! joint outcome statistics alone: `p(x, y) = (1 - x·y·cos 2(a - b)) / 4`.

use std::f64::consts::{FRAC_PI_4, FRAC_PI_8};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::QuantumError;

/// Highest grid index; the grid is `{kπ/8 : k = 0..=8}`.
pub const GRID_MAX: u8 = 8;
/// Number of grid angles.
pub const GRID_LEN: usize = GRID_MAX as usize + 1;
/// Grid offset of a quarter turn (π/2).
pub const QUARTER_TURN: u8 = 4;

const GRID_TOLERANCE: f64 = 1e-12;

/// A measurement angle `kπ/8`, stored as the grid index `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Angle(u8);

impl Angle {
    pub const ZERO: Angle = Angle(0);
    pub const QUARTER: Angle = Angle(QUARTER_TURN);

    pub fn from_index(k: u8) -> Result<Self, QuantumError> {
        if k <= GRID_MAX {
            Ok(Angle(k))
        } else {
            Err(QuantumError::OffGrid(f64::from(k) * FRAC_PI_8))
        }
    }

    /// Snap a radian value onto the grid; fails unless `x·8/π` is an integer in `0..=8`.
    pub fn from_radians(x: f64) -> Result<Self, QuantumError> {
        let k = x / FRAC_PI_8;
        let rounded = k.round();
        if (k - rounded).abs() > GRID_TOLERANCE || !(0.0..=f64::from(GRID_MAX)).contains(&rounded) {
            return Err(QuantumError::OffGrid(x));
        }
        Ok(Angle(rounded as u8))
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn radians(self) -> f64 {
        f64::from(self.0) * FRAC_PI_8
    }

    /// `self + other` if it stays on the grid.
    pub fn checked_add(self, other: Angle) -> Option<Angle> {
        let k = self.0 + other.0;
        (k <= GRID_MAX).then_some(Angle(k))
    }

    /// `self - other` if it stays on the grid.
    pub fn checked_sub(self, other: Angle) -> Option<Angle> {
        self.0.checked_sub(other.0).map(Angle)
    }

    /// Signed difference in grid steps.
    pub fn steps_from(self, other: Angle) -> i8 {
        self.0 as i8 - other.0 as i8
    }

    pub fn all() -> impl Iterator<Item = Angle> + Clone {
        (0..=GRID_MAX).map(Angle)
    }
}

impl TryFrom<u8> for Angle {
    type Error = QuantumError;

    fn try_from(k: u8) -> Result<Self, Self::Error> {
        Angle::from_index(k)
    }
}

impl From<Angle> for u8 {
    fn from(a: Angle) -> u8 {
        a.0
    }
}

impl fmt::Display for Angle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            0 => write!(f, "0"),
            k => write!(f, "{k}π/8"),
        }
    }
}

/// A basis choice `(φ, c)` with `φ ∈ {0, π/8, π/4, 3π/8, π/2}` and `c ∈ {0, π/2}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawBasis", into = "RawBasis")]
pub struct MeasurementBasis {
    phi: Angle,
    c: Angle,
}

#[derive(Serialize, Deserialize)]
struct RawBasis {
    phi: u8,
    c: u8,
}

impl MeasurementBasis {
    /// Number of distinct `(φ, c)` choices.
    pub const COUNT: usize = 10;

    pub fn new(phi: Angle, c: Angle) -> Result<Self, QuantumError> {
        if phi.index() > QUARTER_TURN {
            return Err(QuantumError::InvalidPhi(phi.index()));
        }
        if c != Angle::ZERO && c != Angle::QUARTER {
            return Err(QuantumError::InvalidOffset(c.index()));
        }
        Ok(MeasurementBasis { phi, c })
    }

    /// Uniform over the ten `(φ, c)` pairs.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let phi = Angle(rng.random_range(0..=QUARTER_TURN));
        let c = if rng.random_bool(0.5) { Angle::QUARTER } else { Angle::ZERO };
        MeasurementBasis { phi, c }
    }

    pub fn all() -> impl Iterator<Item = MeasurementBasis> + Clone {
        (0..=QUARTER_TURN).flat_map(|p| {
            [Angle::ZERO, Angle::QUARTER].into_iter().map(move |c| MeasurementBasis { phi: Angle(p), c })
        })
    }

    pub fn phi(self) -> Angle {
        self.phi
    }

    pub fn c(self) -> Angle {
        self.c
    }

    /// The measured angle `φ + c`, always on the grid.
    pub fn total(self) -> Angle {
        Angle(self.phi.0 + self.c.0)
    }
}

impl TryFrom<RawBasis> for MeasurementBasis {
    type Error = QuantumError;

    fn try_from(raw: RawBasis) -> Result<Self, Self::Error> {
        MeasurementBasis::new(Angle::from_index(raw.phi)?, Angle::from_index(raw.c)?)
    }
}

impl From<MeasurementBasis> for RawBasis {
    fn from(b: MeasurementBasis) -> Self {
        RawBasis { phi: b.phi.0, c: b.c.0 }
    }
}

/// A ±1 value. Used both for measurement outcomes and for sign tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Sign {
    Plus,
    Minus,
}

/// Measurement outcome, `+1` or `-1`.
pub type Outcome = Sign;

impl Sign {
    pub fn value(self) -> i8 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }

    pub fn from_bit(bit: u8) -> Self {
        if bit & 1 == 0 {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }

    /// Fixed bit convention: `+1 → 0`, `-1 → 1`.
    pub fn to_bit(self) -> u8 {
        match self {
            Sign::Plus => 0,
            Sign::Minus => 1,
        }
    }

    pub fn index(self) -> usize {
        self.to_bit() as usize
    }

    pub fn both() -> [Sign; 2] {
        [Sign::Plus, Sign::Minus]
    }
}

impl std::ops::Neg for Sign {
    type Output = Sign;

    fn neg(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

impl std::ops::Mul for Sign {
    type Output = Sign;

    fn mul(self, rhs: Sign) -> Sign {
        if self == rhs {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }
}

impl TryFrom<i8> for Sign {
    type Error = QuantumError;

    fn try_from(v: i8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Sign::Plus),
            -1 => Ok(Sign::Minus),
            other => Err(QuantumError::InvalidSign(other)),
        }
    }
}

impl From<Sign> for i8 {
    fn from(s: Sign) -> i8 {
        s.value()
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Plus => "+1",
            Sign::Minus => "-1",
        })
    }
}

/// Bit assigned to an outcome (`+1 → 0`, `-1 → 1`).
pub fn to_bit(o: Outcome) -> u8 {
    o.to_bit()
}

/// Joint outcome probabilities, indexed `[alice][bob]` with index 0 for `+1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointDistribution {
    p: [[f64; 2]; 2],
}

impl JointDistribution {
    pub fn new(p: [[f64; 2]; 2]) -> Result<Self, QuantumError> {
        let mut total = 0.0;
        for &q in p.iter().flatten() {
            if q.is_nan() || q < 0.0 {
                return Err(QuantumError::InvalidDistribution(format!("negative or NaN mass {q}")));
            }
            total += q;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(QuantumError::InvalidDistribution(format!("mass sums to {total}")));
        }
        Ok(JointDistribution { p })
    }

    pub fn prob(&self, alice: Outcome, bob: Outcome) -> f64 {
        self.p[alice.index()][bob.index()]
    }

    pub fn alice_marginal(&self, alice: Outcome) -> f64 {
        let row = self.p[alice.index()];
        row[0] + row[1]
    }

    pub fn bob_marginal(&self, bob: Outcome) -> f64 {
        self.p[0][bob.index()] + self.p[1][bob.index()]
    }

    /// `Σ x·y·p(x, y)`.
    pub fn correlation(&self) -> f64 {
        let mut e = 0.0;
        for x in Sign::both() {
            for y in Sign::both() {
                e += f64::from((x * y).value()) * self.prob(x, y);
            }
        }
        e
    }

    /// Both single-party marginals are 1/2 within `tol`.
    pub fn is_unbiased(&self, tol: f64) -> bool {
        Sign::both().into_iter().all(|o| {
            (self.alice_marginal(o) - 0.5).abs() <= tol && (self.bob_marginal(o) - 0.5).abs() <= tol
        })
    }
}

/// Singlet correlation `E(a, b) = -cos 2(a - b)`.
pub fn correlation(a: Angle, b: Angle) -> f64 {
    // 2·(k_a - k_b)·π/8 computed from the integer difference keeps multiples of π exact.
    -(f64::from(a.steps_from(b)) * FRAC_PI_4).cos()
}

pub fn singlet_distribution(a: Angle, b: Angle) -> JointDistribution {
    let e = correlation(a, b);
    let same = (1.0 + e) / 4.0;
    let opposite = (1.0 - e) / 4.0;
    JointDistribution { p: [[same, opposite], [opposite, same]] }
}

/// Draw one `(alice, bob)` outcome pair from `dist`.
pub fn sample_joint<R: Rng + ?Sized>(dist: &JointDistribution, rng: &mut R) -> (Outcome, Outcome) {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    let mut last = None;
    for x in Sign::both() {
        for y in Sign::both() {
            let q = dist.prob(x, y);
            if q <= 0.0 {
                continue;
            }
            cumulative += q;
            last = Some((x, y));
            if u < cumulative {
                return (x, y);
            }
        }
    }
    // Rounding can leave the total a hair under 1.
    last.expect("distribution has positive mass")
}
