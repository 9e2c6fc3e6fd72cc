//! Deterministic hidden-variable strategies.
//!
//! A strategy fixes, for one value of the hidden variable λ, the outcome of
//! each party for every pair of grid angles `(a, b)`. Both outcome functions
//! are stored as dense 9×9 sign tables (rows: Alice's angle, columns: Bob's
//! angle), so every structural property can be checked by exhaustive scan.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::AdversaryError;
use crate::quantum::{correlation, Angle, Sign, GRID_LEN, GRID_MAX, QUARTER_TURN};

pub type SignTable = [[Sign; GRID_LEN]; GRID_LEN];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LambdaId(pub u32);

impl fmt::Display for LambdaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "λ{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LocalityClass {
    Local,
    NonLocal,
}

/// Which party's outcome function carries the dependence on the other party's angle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NonlocalSide {
    A,
    B,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HvStrategy {
    id: LambdaId,
    wa: SignTable,
    wb: SignTable,
}

impl HvStrategy {
    pub fn from_tables(id: LambdaId, wa: SignTable, wb: SignTable) -> Self {
        HvStrategy { id, wa, wb }
    }

    pub fn id(&self) -> LambdaId {
        self.id
    }

    pub fn with_id(mut self, id: LambdaId) -> Self {
        self.id = id;
        self
    }

    /// Alice's outcome when she measures at `a` and Bob at `b`.
    pub fn wa(&self, a: Angle, b: Angle) -> Sign {
        self.wa[a.index() as usize][b.index() as usize]
    }

    /// Bob's outcome when Alice measures at `a` and he measures at `b`.
    pub fn wb(&self, a: Angle, b: Angle) -> Sign {
        self.wb[a.index() as usize][b.index() as usize]
    }

    pub fn wa_table(&self) -> &SignTable {
        &self.wa
    }

    pub fn wb_table(&self) -> &SignTable {
        &self.wb
    }

    pub fn wa_table_mut(&mut self) -> &mut SignTable {
        &mut self.wa
    }

    pub fn wb_table_mut(&mut self) -> &mut SignTable {
        &mut self.wb
    }

    fn product(&self, a: Angle, b: Angle) -> Sign {
        self.wa(a, b) * self.wb(a, b)
    }
}

/// The consistency identities a strategy must satisfy to survive the
/// perfect-(anti)correlation checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Identity {
    /// `W_A(a,a)·W_B(a,a) = -1`.
    SameBasis,
    /// `W_A·W_B = +1` at angle pairs a quarter turn apart.
    QuarterTurn,
    /// `W_A(a,b)W_B(a,b) = -W_A(a,b+π/2)W_B(a,b+π/2)`.
    CorrelationShiftB,
    /// `W_A(a,b)W_B(a,b) = -W_A(a+π/2,b)W_B(a+π/2,b)`.
    CorrelationShiftA,
    /// `W_A(a,b)W_A(a,b+π/2) = -W_B(a,b)W_B(a,b+π/2)`.
    OutcomeShiftB,
    /// `W_A(a,b)W_A(a+π/2,b) = -W_B(a,b)W_B(a+π/2,b)`.
    OutcomeShiftA,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintViolation {
    pub identity: Identity,
    pub a: Angle,
    pub b: Angle,
}

impl fmt::Display for ConstraintViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at (a={}, b={})", self.identity, self.a, self.b)
    }
}

/// Check every consistency identity at every grid point where it is defined.
pub fn check_constraints(s: &HvStrategy) -> Result<(), Vec<ConstraintViolation>> {
    let mut violations = Vec::new();
    let mut require = |ok: bool, identity, a, b| {
        if !ok {
            violations.push(ConstraintViolation { identity, a, b });
        }
    };

    for a in Angle::all() {
        require(s.product(a, a) == Sign::Minus, Identity::SameBasis, a, a);
        if let Some(b) = a.checked_add(Angle::QUARTER) {
            require(s.product(a, b) == Sign::Plus, Identity::QuarterTurn, a, b);
            require(s.product(b, a) == Sign::Plus, Identity::QuarterTurn, b, a);
        }
    }

    for a in Angle::all() {
        for b in Angle::all() {
            if let Some(b2) = b.checked_add(Angle::QUARTER) {
                require(s.product(a, b) == -s.product(a, b2), Identity::CorrelationShiftB, a, b);
                require(
                    s.wa(a, b) * s.wa(a, b2) == -(s.wb(a, b) * s.wb(a, b2)),
                    Identity::OutcomeShiftB,
                    a,
                    b,
                );
            }
            if let Some(a2) = a.checked_add(Angle::QUARTER) {
                require(s.product(a, b) == -s.product(a2, b), Identity::CorrelationShiftA, a, b);
                require(
                    s.wa(a, b) * s.wa(a2, b) == -(s.wb(a, b) * s.wb(a2, b)),
                    Identity::OutcomeShiftA,
                    a,
                    b,
                );
            }
        }
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

fn alice_ignores_b(s: &HvStrategy) -> bool {
    s.wa.iter().all(|row| row.iter().all(|&x| x == row[0]))
}

fn bob_ignores_a(s: &HvStrategy) -> bool {
    (0..GRID_LEN).all(|b| (0..GRID_LEN).all(|a| s.wb[a][b] == s.wb[0][b]))
}

/// Local iff Alice's outcome never depends on Bob's angle and vice versa.
pub fn classify(s: &HvStrategy) -> LocalityClass {
    if alice_ignores_b(s) && bob_ignores_a(s) {
        LocalityClass::Local
    } else {
        LocalityClass::NonLocal
    }
}

/// The non-local side of a one-sided non-local strategy; `None` if the
/// strategy is local or both outcome functions depend on the remote angle.
pub fn nonlocal_side(s: &HvStrategy) -> Option<NonlocalSide> {
    match (alice_ignores_b(s), bob_ignores_a(s)) {
        (false, true) => Some(NonlocalSide::A),
        (true, false) => Some(NonlocalSide::B),
        _ => None,
    }
}

/// Extend a sign function on `{0, π/8, π/4, 3π/8}` to the grid with `t(x + π/2) = -t(x)`.
pub fn extend_antiperiodic(t: [Sign; 4]) -> [Sign; GRID_LEN] {
    std::array::from_fn(|k| {
        let base = t[k % 4];
        if (k / 4) % 2 == 1 {
            -base
        } else {
            base
        }
    })
}

fn sign_mask(signs: &[Sign]) -> u32 {
    signs.iter().enumerate().fold(0, |m, (i, s)| m | (u32::from(s.to_bit()) << i))
}

/// The local strategy `W_A(a,b) = t(a)`, `W_B(a,b) = -t(b)`. Its id is the
/// bit mask of `t` (bit i set when `t(iπ/8) = -1`), so the 16 local
/// strategies carry ids 0..16.
pub fn build_local(t: [Sign; 4]) -> HvStrategy {
    let full = extend_antiperiodic(t);
    let wa = std::array::from_fn(|a| [full[a]; GRID_LEN]);
    let wb = std::array::from_fn(|_| std::array::from_fn(|b| -full[b]));
    HvStrategy { id: LambdaId(sign_mask(&t)), wa, wb }
}

/// All 16 local strategies.
pub fn local_strategies() -> Vec<HvStrategy> {
    (0..16u32)
        .map(|mask| build_local(std::array::from_fn(|i| Sign::from_bit((mask >> i) as u8 & 1))))
        .collect()
}

/// Sign of the singlet correlation at an angle difference of `d·π/8`, with
/// the zeros at `π/4 (mod π)` broken to `eps` and at `3π/4 (mod π)` to `-eps`.
///
/// The alternation makes `σ(x + π/2) = -σ(x)` hold everywhere, including at
/// the zeros.
pub fn pr_sign(d: i8, eps: Sign) -> Sign {
    match d.rem_euclid(8) {
        0 | 1 | 7 => Sign::Minus,
        3..=5 => Sign::Plus,
        2 => eps,
        _ => -eps,
    }
}

/// A maximally non-local strategy whose outcome product is `σ(a - b)`.
///
/// For `side = A`: `W_B(a,b) = s(b)` and `W_A(a,b) = s(b)·σ(a-b)`; side B is
/// the mirror image. `s` must be given on all nine grid angles and satisfy
/// `s(x + π/2) = s(x)`; otherwise the non-local outcome would not flip when
/// the other party's `c` flips.
pub fn build_pr_nonlocal(eps: Sign, s: &[Sign], side: NonlocalSide) -> Result<HvStrategy, AdversaryError> {
    if s.len() != GRID_LEN {
        return Err(AdversaryError::SignFunctionNotTotal(s.len()));
    }
    for k in 0..=(GRID_MAX - QUARTER_TURN) {
        if s[k as usize] != s[(k + QUARTER_TURN) as usize] {
            return Err(AdversaryError::SignFunctionNotPeriodic(Angle::from_index(k).expect("on grid")));
        }
    }
    let mut wa: SignTable = [[Sign::Plus; GRID_LEN]; GRID_LEN];
    let mut wb = wa;
    for a in Angle::all() {
        for b in Angle::all() {
            let sigma = pr_sign(a.steps_from(b), eps);
            let (i, j) = (a.index() as usize, b.index() as usize);
            match side {
                NonlocalSide::A => {
                    wb[i][j] = s[j];
                    wa[i][j] = s[j] * sigma;
                }
                NonlocalSide::B => {
                    wa[i][j] = s[i];
                    wb[i][j] = s[i] * sigma;
                }
            }
        }
    }
    let side_bit = match side {
        NonlocalSide::A => 0,
        NonlocalSide::B => 1,
    };
    let id = 0x100 | side_bit << 5 | u32::from(eps.to_bit()) << 4 | sign_mask(&s[..4]);
    Ok(HvStrategy { id: LambdaId(id), wa, wb })
}

/// All 32 admissible PR strategies for one side (2 tie-breaks × 16 periodic sign functions).
pub fn pr_strategies(side: NonlocalSide) -> Vec<HvStrategy> {
    let mut out = Vec::with_capacity(32);
    for eps in Sign::both() {
        for mask in 0..16u32 {
            let base: [Sign; 4] = std::array::from_fn(|i| Sign::from_bit((mask >> i) as u8 & 1));
            let s: Vec<Sign> = (0..GRID_LEN).map(|k| base[k % 4]).collect();
            out.push(build_pr_nonlocal(eps, &s, side).expect("periodic by construction"));
        }
    }
    out
}

/// A CHSH functional `Σ sᵢ·E(aᵢ, bⱼ)` over four angle pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChshSetting {
    pub a1: Angle,
    pub a2: Angle,
    pub b1: Angle,
    pub b2: Angle,
    /// Coefficients of `E(a1,b1)`, `E(a1,b2)`, `E(a2,b1)`, `E(a2,b2)`.
    pub signs: [Sign; 4],
}

impl ChshSetting {
    /// `a ∈ {0, π/4}`, `b ∈ {π/8, 3π/8}`, signs `(+, -, +, +)`; the singlet gives `-2√2`.
    pub fn canonical() -> Self {
        let at = |k| Angle::from_index(k).expect("on grid");
        ChshSetting {
            a1: at(0),
            a2: at(2),
            b1: at(1),
            b2: at(3),
            signs: [Sign::Plus, Sign::Minus, Sign::Plus, Sign::Plus],
        }
    }

    pub fn cells(&self) -> [(Angle, Angle, Sign); 4] {
        [
            (self.a1, self.b1, self.signs[0]),
            (self.a1, self.b2, self.signs[1]),
            (self.a2, self.b1, self.signs[2]),
            (self.a2, self.b2, self.signs[3]),
        ]
    }

    /// Value of the functional for singlet statistics.
    pub fn singlet_value(&self) -> f64 {
        self.cells().iter().map(|&(a, b, s)| f64::from(s.value()) * correlation(a, b)).sum()
    }
}

impl Default for ChshSetting {
    fn default() -> Self {
        ChshSetting::canonical()
    }
}

/// Deterministic per-λ CHSH value.
pub fn chsh_value(s: &HvStrategy, setting: &ChshSetting) -> f64 {
    setting
        .cells()
        .iter()
        .map(|&(a, b, sign)| f64::from((sign * s.product(a, b)).value()))
        .sum()
}

/// Smallest weight of non-local λs that lets a mixture of local (|S| ≤ 2)
/// and non-local (|S| ≤ 4) strategies reach `target_chsh_abs`.
pub fn min_nonlocal_fraction(target_chsh_abs: f64) -> Result<f64, AdversaryError> {
    if !(2.0..=4.0).contains(&target_chsh_abs) {
        return Err(AdversaryError::TargetOutOfRange(target_chsh_abs));
    }
    Ok((target_chsh_abs - 2.0) / 2.0)
}
