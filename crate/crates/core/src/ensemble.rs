//! Weighted mixtures of hidden-variable strategies and their JSON document form.

use std::collections::BTreeMap;
use std::f64::consts::SQRT_2;

use rand::distr::weighted::WeightedIndex;
use serde::{Deserialize, Serialize};

use crate::adversary::{
    check_constraints, chsh_value, classify, local_strategies, nonlocal_side, pr_strategies, ChshSetting,
    ConstraintViolation, HvStrategy, LambdaId, LocalityClass, NonlocalSide, SignTable,
};
use crate::error::AdversaryError;

const WEIGHT_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleMember {
    pub strategy: HvStrategy,
    pub weight: f64,
}

/// A probability distribution over constraint-passing strategies.
#[derive(Clone, Debug)]
pub struct HvEnsemble {
    members: Vec<EnsembleMember>,
    by_id: BTreeMap<LambdaId, usize>,
    classes: Vec<LocalityClass>,
}

impl HvEnsemble {
    pub fn new(members: Vec<EnsembleMember>) -> Result<Self, AdversaryError> {
        if members.is_empty() {
            return Err(AdversaryError::EmptyEnsemble);
        }
        let mut by_id = BTreeMap::new();
        let mut total = 0.0;
        for (i, m) in members.iter().enumerate() {
            let id = m.strategy.id();
            if !(m.weight.is_finite() && m.weight >= 0.0) {
                return Err(AdversaryError::InvalidWeight(m.weight, id.0));
            }
            total += m.weight;
            if by_id.insert(id, i).is_some() {
                return Err(AdversaryError::DuplicateLambda(id.0));
            }
            if let Err(v) = check_constraints(&m.strategy) {
                return Err(AdversaryError::ConstraintViolation { id: id.0, count: v.len(), first: v[0].to_string() });
            }
        }
        if (total - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(AdversaryError::WeightSum(total));
        }
        let classes = members.iter().map(|m| classify(&m.strategy)).collect();
        Ok(HvEnsemble { members, by_id, classes })
    }

    /// Equal weights over `strategies`.
    pub fn uniform(strategies: Vec<HvStrategy>) -> Result<Self, AdversaryError> {
        let w = 1.0 / strategies.len() as f64;
        HvEnsemble::new(strategies.into_iter().map(|strategy| EnsembleMember { strategy, weight: w }).collect())
    }

    pub fn members(&self) -> &[EnsembleMember] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn get(&self, id: LambdaId) -> Option<&HvStrategy> {
        self.by_id.get(&id).map(|&i| &self.members[i].strategy)
    }

    pub fn class_of(&self, id: LambdaId) -> Option<LocalityClass> {
        self.by_id.get(&id).map(|&i| self.classes[i])
    }

    pub fn class_at(&self, index: usize) -> LocalityClass {
        self.classes[index]
    }

    /// Total weight of the non-local members.
    pub fn nonlocal_weight(&self) -> f64 {
        self.members
            .iter()
            .zip(&self.classes)
            .filter(|(_, c)| **c == LocalityClass::NonLocal)
            .map(|(m, _)| m.weight)
            .sum()
    }

    /// Weighted average of the per-λ CHSH values.
    pub fn chsh(&self, setting: &ChshSetting) -> f64 {
        self.members.iter().map(|m| m.weight * chsh_value(&m.strategy, setting)).sum()
    }

    /// Sampler over member indices.
    pub fn sampler(&self) -> WeightedIndex<f64> {
        WeightedIndex::new(self.members.iter().map(|m| m.weight)).expect("validated weights")
    }
}

pub fn ensemble_chsh(ensemble: &HvEnsemble, setting: &ChshSetting) -> f64 {
    ensemble.chsh(setting)
}

/// Local strategies whose canonical CHSH value is −2, aligned with the
/// orientation of the PR strategies (−4).
pub fn aligned_local_strategies() -> Vec<HvStrategy> {
    let setting = ChshSetting::canonical();
    local_strategies().into_iter().filter(|s| chsh_value(s, &setting) == -2.0).collect()
}

/// The pieces a critical ensemble is assembled from.
#[derive(Clone, Debug)]
pub struct CriticalParts {
    pub locals: Vec<HvStrategy>,
    pub nonlocal_a: Vec<HvStrategy>,
    pub nonlocal_b: Vec<HvStrategy>,
}

impl CriticalParts {
    /// Every aligned local strategy and every admissible PR strategy on each side.
    pub fn full() -> Self {
        CriticalParts {
            locals: aligned_local_strategies(),
            nonlocal_a: pr_strategies(NonlocalSide::A),
            nonlocal_b: pr_strategies(NonlocalSide::B),
        }
    }
}

/// Mixture reproducing the singlet CHSH value with the least non-local weight:
/// `√2 − 1` split evenly over the two non-local sides, the rest spread evenly
/// over the local part.
pub fn critical_ensemble(parts: CriticalParts) -> Result<HvEnsemble, AdversaryError> {
    let setting = ChshSetting::canonical();
    let reject = |s: &HvStrategy, why: &str| Err(AdversaryError::CriticalPart(s.id().0, why.to_string()));
    if parts.locals.is_empty() || parts.nonlocal_a.is_empty() || parts.nonlocal_b.is_empty() {
        return Err(AdversaryError::EmptyEnsemble);
    }
    for s in &parts.locals {
        if classify(s) != LocalityClass::Local || chsh_value(s, &setting) != -2.0 {
            return reject(s, "local part needs local strategies with canonical CHSH -2");
        }
    }
    for (side, list) in [(NonlocalSide::A, &parts.nonlocal_a), (NonlocalSide::B, &parts.nonlocal_b)] {
        for s in list {
            if nonlocal_side(s) != Some(side) || chsh_value(s, &setting) != -4.0 {
                return reject(s, "non-local part needs one-sided strategies of the slot's side with canonical CHSH -4");
            }
        }
    }

    let nonlocal = SQRT_2 - 1.0;
    let local = 1.0 - nonlocal;
    let weighted = |list: Vec<HvStrategy>, total: f64| {
        let w = total / list.len() as f64;
        list.into_iter().map(move |strategy| EnsembleMember { strategy, weight: w })
    };
    let members = weighted(parts.locals, local)
        .chain(weighted(parts.nonlocal_a, nonlocal / 2.0))
        .chain(weighted(parts.nonlocal_b, nonlocal / 2.0))
        .collect();
    HvEnsemble::new(members)
}

pub fn critical_ensemble_full() -> HvEnsemble {
    critical_ensemble(CriticalParts::full()).expect("built-in parts are valid")
}

/// The hardest-to-detect purely local mixture (canonical CHSH exactly −2).
pub fn local_only_ensemble() -> HvEnsemble {
    HvEnsemble::uniform(aligned_local_strategies()).expect("built-in parts are valid")
}

/// Uniform over all 16 local strategies (canonical CHSH 0).
pub fn all_local_ensemble() -> HvEnsemble {
    HvEnsemble::uniform(local_strategies()).expect("built-in parts are valid")
}

/// Uniform over all admissible PR strategies, both sides equally represented.
pub fn pure_nonlocal_ensemble() -> HvEnsemble {
    let mut all = pr_strategies(NonlocalSide::A);
    all.extend(pr_strategies(NonlocalSide::B));
    HvEnsemble::uniform(all).expect("built-in parts are valid")
}

/// One ensemble member as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberDocument {
    pub lambda_id: LambdaId,
    /// Alice's outcomes; rows are her grid index, columns Bob's.
    pub wa: SignTable,
    /// Bob's outcomes, same layout.
    pub wb: SignTable,
    pub weight: f64,
}

/// On-disk ensemble. Weights are written in shortest round-trip decimal form,
/// so reading back reproduces every `f64` bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDocument {
    pub format: String,
    pub members: Vec<MemberDocument>,
}

pub const ENSEMBLE_FORMAT: &str = "monoqkd-ensemble/1";

impl EnsembleDocument {
    pub fn from_ensemble(ensemble: &HvEnsemble) -> Self {
        EnsembleDocument {
            format: ENSEMBLE_FORMAT.to_string(),
            members: ensemble
                .members()
                .iter()
                .map(|m| MemberDocument {
                    lambda_id: m.strategy.id(),
                    wa: *m.strategy.wa_table(),
                    wb: *m.strategy.wb_table(),
                    weight: m.weight,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn strategies(&self) -> impl Iterator<Item = (HvStrategy, f64)> + '_ {
        self.members.iter().map(|m| (HvStrategy::from_tables(m.lambda_id, m.wa, m.wb), m.weight))
    }

    pub fn into_ensemble(self) -> Result<HvEnsemble, AdversaryError> {
        HvEnsemble::new(self.strategies().map(|(strategy, weight)| EnsembleMember { strategy, weight }).collect())
    }

    /// Full diagnostic listing; unlike [`EnsembleDocument::into_ensemble`] it
    /// never stops at the first problem.
    pub fn validate(&self) -> EnsembleValidation {
        let setting = ChshSetting::canonical();
        let mut members = Vec::with_capacity(self.members.len());
        let mut weight_sum = 0.0;
        let mut nonlocal_weight = 0.0;
        let mut seen = BTreeMap::new();
        let mut problems = Vec::new();
        for (strategy, weight) in self.strategies() {
            let id = strategy.id();
            let class = classify(&strategy);
            weight_sum += weight;
            if class == LocalityClass::NonLocal {
                nonlocal_weight += weight;
            }
            if !(weight.is_finite() && weight >= 0.0) {
                problems.push(format!("member {}: invalid weight {weight}", id.0));
            }
            if seen.insert(id, ()).is_some() {
                problems.push(format!("member {}: duplicate lambda id", id.0));
            }
            let violations = check_constraints(&strategy).err().unwrap_or_default();
            members.push(MemberValidation { lambda_id: id, class, canonical_chsh: chsh_value(&strategy, &setting), weight, violations });
        }
        if self.members.is_empty() {
            problems.push("ensemble has no members".to_string());
        }
        if (weight_sum - 1.0).abs() > WEIGHT_TOLERANCE {
            problems.push(format!("weights sum to {weight_sum}, expected 1"));
        }
        let chsh = members.iter().map(|m| m.weight * m.canonical_chsh).sum();
        let pass = problems.is_empty() && members.iter().all(|m| m.violations.is_empty());
        EnsembleValidation { pass, weight_sum, nonlocal_weight, ensemble_chsh: chsh, problems, members }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberValidation {
    pub lambda_id: LambdaId,
    pub class: LocalityClass,
    pub canonical_chsh: f64,
    pub weight: f64,
    pub violations: Vec<ConstraintViolation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleValidation {
    pub pass: bool,
    pub weight_sum: f64,
    pub nonlocal_weight: f64,
    pub ensemble_chsh: f64,
    /// Ensemble-level problems (weights, ids); per-member violations are listed under `members`.
    pub problems: Vec<String>,
    pub members: Vec<MemberValidation>,
}
