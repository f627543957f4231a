//! Environment variables, their `A`/`B` value spaces, and interventions.
//!
//! Every exposed variable is declared once in a versioned JSON catalog as a
//! template (`block.mass`, `gravity_z`, ...). Per-object instances are named
//! by suffixing the scope with an index (`block_0.mass`, `link_7.color`).
//!
//! All intervals are half-open `[lo, hi)`, so adjacent `A`/`B` ranges that
//! share an endpoint stay disjoint. The `A` and `B` boxes of a variable are
//! disjoint as sets: at least one dimension separates them (the cylindrical
//! pose shares its azimuth and yaw ranges and is separated by radius).
//! Membership of `A|B` is tested componentwise, which keeps it convex.
//!
//! The lower height bound of a cylindrical pose is the symbol `"h/2"`, half
//! the current height of the owning block or goal part.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math::{rng_for, uniform};
use crate::tasks::Family;
use crate::{Error, Result};

const SHIPPED_CATALOG: &str = include_str!("../data/catalog.json");

/// Which pre-defined value set a value is drawn from or tested against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Space {
    A,
    B,
    #[serde(rename = "A|B")]
    Union,
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Space::A => "A",
            Space::B => "B",
            Space::Union => "A|B",
        })
    }
}

impl std::str::FromStr for Space {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Space::A),
            "B" | "b" => Ok(Space::B),
            "A|B" | "AB" | "union" => Ok(Space::Union),
            other => Err(Error::Config(format!("unknown space `{other}`"))),
        }
    }
}

/// An interval endpoint: a number or the symbol `"h/2"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bound {
    Value(f64),
    Symbol(String),
}

pub const HALF_HEIGHT: &str = "h/2";

impl Bound {
    fn resolve(&self, half_height: f64) -> f64 {
        match self {
            Bound::Value(v) => *v,
            Bound::Symbol(_) => half_height,
        }
    }
}

/// Per-dimension `[lo, hi)` box, serialized as `[[lo...], [hi...]]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalBox(pub Vec<Bound>, pub Vec<Bound>);

impl IntervalBox {
    pub fn resolve(&self, half_height: f64) -> (Vec<f64>, Vec<f64>) {
        (
            self.0.iter().map(|b| b.resolve(half_height)).collect(),
            self.1.iter().map(|b| b.resolve(half_height)).collect(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarKind {
    Continuous,
    Integer,
    Color,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Global,
    Block,
    Goal,
    Link,
}

/// What a variable influences; appearance variables never reach the dynamics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Affects {
    Dynamics,
    Appearance,
    Goal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub dims: usize,
    pub space_a: IntervalBox,
    pub space_b: IntervalBox,
    pub units: String,
    pub kind: VarKind,
    pub scope: Scope,
    pub affects: Affects,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Vec<f64>>,
    /// Closed physically admissible range accepted outside `A|B`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub physical: Option<IntervalBox>,
    /// Restricts a generator-specific variable to these families.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub families: Option<Vec<Family>>,
    /// Changes the number of objects; only applied at reset.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub structural: bool,
}

impl VariableSpec {
    pub fn space(&self, space: Space) -> Option<&IntervalBox> {
        match space {
            Space::A => Some(&self.space_a),
            Space::B => Some(&self.space_b),
            Space::Union => None,
        }
    }

    pub fn exposed_for(&self, family: Family) -> bool {
        self.families.as_ref().is_none_or(|f| f.contains(&family))
    }

    fn has_symbolic_bound(&self) -> bool {
        [&self.space_a, &self.space_b]
            .iter()
            .chain(self.physical.iter().collect::<Vec<_>>().iter())
            .any(|b| b.0.iter().chain(&b.1).any(|x| matches!(x, Bound::Symbol(_))))
    }
}

/// Splits `block_3.mass` into (`block.mass`, `Some(3)`).
pub fn split_id(id: &str) -> (String, Option<usize>) {
    if let Some((head, tail)) = id.split_once('.') {
        if let Some((scope, idx)) = head.rsplit_once('_') {
            if let Ok(i) = idx.parse::<usize>() {
                return (format!("{scope}.{tail}"), Some(i));
            }
        }
    }
    (id.to_string(), None)
}

/// Instance id for a scoped template: `instance_id("block.mass", 2)`.
pub fn instance_id(template: &str, index: usize) -> String {
    match template.split_once('.') {
        Some((scope, tail)) => format!("{scope}_{index}.{tail}"),
        None => template.to_string(),
    }
}

/// Number of objects per scope in one environment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopeCounts {
    pub blocks: usize,
    pub goals: usize,
    pub links: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub version: u32,
    pub variables: BTreeMap<String, VariableSpec>,
}

impl Catalog {
    /// The catalog shipped with the crate.
    pub fn shipped() -> Catalog {
        Catalog::from_json(SHIPPED_CATALOG).expect("shipped catalog is valid")
    }

    pub fn from_json(text: &str) -> Result<Catalog> {
        let catalog: Catalog = serde_json::from_str(text)?;
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn load(path: &Path) -> Result<Catalog> {
        Catalog::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serializes")
    }

    /// Registers a new variable template.
    pub fn register(&mut self, id: &str, spec: VariableSpec) -> Result<()> {
        if self.variables.contains_key(id) {
            return Err(Error::Catalog(format!("variable `{id}` already registered")));
        }
        self.variables.insert(id.to_string(), spec);
        if let Err(e) = self.validate() {
            self.variables.remove(id);
            return Err(e);
        }
        Ok(())
    }

    /// Checks interval well-formedness and `A`/`B` disjointness.
    pub fn validate(&self) -> Result<()> {
        for (id, spec) in &self.variables {
            let h = self.default_half_height(id);
            for (name, b) in [("space_a", &spec.space_a), ("space_b", &spec.space_b)] {
                if b.0.len() != spec.dims || b.1.len() != spec.dims {
                    return Err(Error::Catalog(format!("{id}.{name}: wrong dimensionality")));
                }
                for bound in b.0.iter().chain(&b.1) {
                    if let Bound::Symbol(s) = bound {
                        if s != HALF_HEIGHT {
                            return Err(Error::Catalog(format!("{id}: unknown bound symbol `{s}`")));
                        }
                    }
                }
                let (lo, hi) = b.resolve(h);
                if lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
                    return Err(Error::Catalog(format!("{id}.{name}: empty interval")));
                }
            }
            let (alo, ahi) = spec.space_a.resolve(h);
            let (blo, bhi) = spec.space_b.resolve(h);
            let separated = (0..spec.dims).any(|d| ahi[d] <= blo[d] || bhi[d] <= alo[d]);
            if !separated {
                return Err(Error::Catalog(format!("{id}: spaces A and B intersect")));
            }
            if let Some(default) = &spec.default {
                if default.len() != spec.dims {
                    return Err(Error::Catalog(format!("{id}: default has wrong dimensionality")));
                }
            }
            let positive = id.ends_with(".size") || id.ends_with(".mass");
            if positive && alo.iter().chain(&blo).any(|&v| v <= 0.0) {
                return Err(Error::Catalog(format!("{id}: sizes and masses must be positive")));
            }
            if spec.has_symbolic_bound() && !matches!(spec.scope, Scope::Block | Scope::Goal) {
                return Err(Error::Catalog(format!("{id}: `h/2` needs a block or goal scope")));
            }
        }
        Ok(())
    }

    /// Looks up the template behind a template or instance id.
    pub fn spec(&self, id: &str) -> Result<&VariableSpec> {
        let (template, index) = split_id(id);
        match self.variables.get(&template) {
            Some(spec) if (spec.scope == Scope::Global) == index.is_none() || index.is_none() => {
                Ok(spec)
            }
            _ => Err(Error::UnknownVariable(id.to_string())),
        }
    }

    fn default_half_height(&self, id: &str) -> f64 {
        let (template, _) = split_id(id);
        let size_template = match template.split_once('.') {
            Some((scope, _)) => format!("{scope}.size"),
            None => return 0.0,
        };
        self.variables
            .get(&size_template)
            .and_then(|s| s.default.as_ref())
            .map(|d| 0.5 * d[2])
            .unwrap_or(0.0)
    }

    /// Half height of the object owning `id`, read from `config` when present.
    pub fn half_height(&self, config: Option<&EnvConfig>, id: &str) -> f64 {
        if let (Some(config), Some((head, _))) = (config, id.split_once('.')) {
            if let Some(size) = config.get(&format!("{head}.size")) {
                return 0.5 * size[2];
            }
        }
        self.default_half_height(id)
    }

    fn check_shape(&self, id: &str, value: &[f64]) -> Result<&VariableSpec> {
        let spec = self.spec(id)?;
        if value.len() != spec.dims {
            return Err(Error::Dimension {
                var: id.to_string(),
                expected: spec.dims,
                got: value.len(),
            });
        }
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(id.to_string()));
        }
        Ok(spec)
    }

    /// Componentwise membership with template defaults for `h`.
    pub fn space_membership(&self, id: &str, value: &[f64], space: Space) -> Result<bool> {
        self.membership_in(None, id, value, space)
    }

    /// Componentwise membership, resolving `h` from `config` when given.
    pub fn membership_in(
        &self,
        config: Option<&EnvConfig>,
        id: &str,
        value: &[f64],
        space: Space,
    ) -> Result<bool> {
        let spec = self.check_shape(id, value)?;
        if spec.kind == VarKind::Integer && value.iter().any(|v| v.fract() != 0.0) {
            return Ok(false);
        }
        let h = self.half_height(config, id);
        let inside = |b: &IntervalBox, d: usize, v: f64| {
            let lo = b.0[d].resolve(h);
            let hi = b.1[d].resolve(h);
            lo <= v && v < hi
        };
        Ok(value.iter().enumerate().all(|(d, &v)| match space {
            Space::A => inside(&spec.space_a, d, v),
            Space::B => inside(&spec.space_b, d, v),
            Space::Union => inside(&spec.space_a, d, v) || inside(&spec.space_b, d, v),
        }))
    }

    /// Closed physical range check; variables without one use `A|B`.
    pub fn in_physical_range(&self, config: Option<&EnvConfig>, id: &str, value: &[f64]) -> Result<bool> {
        let spec = self.check_shape(id, value)?;
        match &spec.physical {
            None => self.membership_in(config, id, value, Space::Union),
            Some(b) => {
                let (lo, hi) = b.resolve(self.half_height(config, id));
                Ok(value.iter().enumerate().all(|(d, &v)| lo[d] <= v && v <= hi[d]))
            }
        }
    }

    /// Uniform sample of one variable from `space`; `Union` picks `A` or `B`
    /// with equal probability.
    pub fn sample_value<R: Rng + ?Sized>(
        &self,
        config: Option<&EnvConfig>,
        id: &str,
        space: Space,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let spec = self.spec(id)?;
        let space = match space {
            Space::Union if rng.random::<bool>() => Space::A,
            Space::Union => Space::B,
            s => s,
        };
        let (lo, hi) = spec.space(space).expect("A or B").resolve(self.half_height(config, id));
        Ok(sample_box(spec.kind, &lo, &hi, rng))
    }

    /// Samples every variable in `vars` (in sorted order) from `space`.
    pub fn sample_intervention(&self, vars: &BTreeSet<String>, space: Space, seed: u64) -> Result<Intervention> {
        let mut rng = rng_for(seed, 0);
        let mut iv = Intervention::default();
        for id in vars {
            let v = self.sample_value(None, id, space, &mut rng)?;
            iv.assignments.insert(id.clone(), v);
        }
        Ok(iv)
    }

    /// Applies `iv` to a copy of `config`.
    ///
    /// Unknown ids, wrong dimensionality and non-finite values are errors.
    /// Values outside both `A|B` and the physical range are rejected.
    pub fn apply_intervention(&self, config: &EnvConfig, iv: &Intervention) -> Result<Outcome<EnvConfig>> {
        let mut next = config.clone();
        for (id, value) in &iv.assignments {
            self.check_shape(id, value)?;
            if !config.values.contains_key(id) {
                return Err(Error::UnknownVariable(id.clone()));
            }
            next.values.insert(id.clone(), value.clone());
        }
        for (id, value) in &iv.assignments {
            let ok = self.membership_in(Some(&next), id, value, Space::Union)?
                || self.in_physical_range(Some(&next), id, value)?;
            if !ok {
                return Ok(Outcome::Rejected(Rejection::new(
                    RejectReason::OutOfRange,
                    Some(id.clone()),
                    format!("{value:?} lies outside A|B and the physical range"),
                )));
            }
        }
        Ok(Outcome::Accepted(next))
    }

    /// All variable ids an environment with `counts` objects exposes.
    pub fn instance_ids(&self, family: Family, counts: ScopeCounts) -> Vec<String> {
        let mut ids = Vec::new();
        for (template, spec) in &self.variables {
            if !spec.exposed_for(family) {
                continue;
            }
            let n = match spec.scope {
                Scope::Global => {
                    ids.push(template.clone());
                    continue;
                }
                Scope::Block => counts.blocks,
                Scope::Goal => counts.goals,
                Scope::Link => counts.links,
            };
            ids.extend((0..n).map(|i| instance_id(template, i)));
        }
        ids.sort();
        ids
    }

    /// Linear interpolation between two configurations.
    ///
    /// Continuous variables interpolate componentwise; integer variables and
    /// the object set follow `cfg_a` below `alpha = 0.5` and `cfg_b` above.
    pub fn interpolate(&self, cfg_a: &EnvConfig, cfg_b: &EnvConfig, alpha: f64) -> Result<EnvConfig> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!("alpha {alpha} outside [0, 1]")));
        }
        let base = if alpha < 0.5 { cfg_a } else { cfg_b };
        let mut out = EnvConfig::default();
        for (id, value) in &base.values {
            let spec = self.spec(id)?;
            let v = match (cfg_a.get(id), cfg_b.get(id)) {
                (Some(a), Some(b)) if spec.kind != VarKind::Integer && a.len() == b.len() => a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| (1.0 - alpha) * x + alpha * y)
                    .collect(),
                _ => value.clone(),
            };
            out.values.insert(id.clone(), v);
        }
        Ok(out)
    }
}

fn sample_box<R: Rng + ?Sized>(kind: VarKind, lo: &[f64], hi: &[f64], rng: &mut R) -> Vec<f64> {
    lo.iter()
        .zip(hi)
        .map(|(&l, &h)| match kind {
            VarKind::Integer => {
                let (l, h) = (l.ceil() as i64, h.ceil() as i64);
                if h <= l {
                    l as f64
                } else {
                    rng.random_range(l..h) as f64
                }
            }
            _ => uniform(rng, l, h),
        })
        .collect()
}

/// Complete assignment of every exposed variable.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EnvConfig {
    pub values: BTreeMap<String, Vec<f64>>,
}

impl EnvConfig {
    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.values.get(id).map(Vec::as_slice)
    }

    pub fn scalar(&self, id: &str) -> Option<f64> {
        self.get(id).and_then(|v| v.first().copied())
    }

    pub fn set(&mut self, id: impl Into<String>, value: Vec<f64>) {
        self.values.insert(id.into(), value);
    }

    pub fn ids(&self) -> impl Iterator<Item = &String> {
        self.values.keys()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Ids whose values differ, or that exist on one side only.
    pub fn diff(&self, other: &EnvConfig) -> BTreeSet<String> {
        let keys: BTreeSet<&String> = self.values.keys().chain(other.values.keys()).collect();
        keys.into_iter()
            .filter(|k| self.values.get(*k) != other.values.get(*k))
            .cloned()
            .collect()
    }

    /// Errors on a missing id or non-finite value.
    pub fn check_complete(&self, expected: &[String]) -> Result<()> {
        for id in expected {
            match self.values.get(id) {
                None => return Err(Error::Config(format!("missing variable `{id}`"))),
                Some(v) if v.iter().any(|x| !x.is_finite()) => return Err(Error::NonFinite(id.clone())),
                _ => {}
            }
        }
        Ok(())
    }
}

/// When an intervention takes effect.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Timing {
    #[default]
    OnReset,
    AtStep(u64),
}

/// A partial assignment of variables.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub assignments: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub timing: Timing,
}

impl Intervention {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, id: impl Into<String>, value: Vec<f64>) -> Self {
        self.assignments.insert(id.into(), value);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    /// Merges `other` into `self`; `other` wins on conflicting ids.
    pub fn merge(&mut self, other: &Intervention) {
        for (k, v) in &other.assignments {
            self.assignments.insert(k.clone(), v.clone());
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    OutOfRange,
    FamilyConstraint,
    Infeasible,
    StructuralMidEpisode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub reason: RejectReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variable: Option<String>,
    pub detail: String,
}

impl Rejection {
    pub fn new(reason: RejectReason, variable: Option<String>, detail: impl Into<String>) -> Self {
        Self {
            reason,
            variable,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Outcome<T> {
    Accepted(T),
    Rejected(Rejection),
}

impl<T> Outcome<T> {
    pub fn accepted(self) -> Option<T> {
        match self {
            Outcome::Accepted(t) => Some(t),
            Outcome::Rejected(_) => None,
        }
    }

    pub fn is_accepted(&self) -> bool {
        matches!(self, Outcome::Accepted(_))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_config() -> EnvConfig {
        let cat = Catalog::shipped();
        let mut cfg = EnvConfig::default();
        for id in cat.instance_ids(Family::Pushing, ScopeCounts { blocks: 1, goals: 1, links: 9 }) {
            let d = cat.spec(&id).unwrap().default.clone().unwrap();
            cfg.set(id, d);
        }
        cfg
    }

    #[test]
    fn block_mass_membership() {
        let cat = Catalog::shipped();
        assert!(cat.space_membership("block.mass", &[0.03], Space::A).unwrap());
        assert!(!cat.space_membership("block.mass", &[0.05], Space::A).unwrap());
        assert!(cat.space_membership("block.mass", &[0.05], Space::B).unwrap());
    }

    #[test]
    fn shared_endpoint_belongs_to_b() {
        let cat = Catalog::shipped();
        assert!(!cat.space_membership("gravity_z", &[-7.0], Space::A).unwrap());
        assert!(cat.space_membership("gravity_z", &[-7.0], Space::B).unwrap());
    }

    #[test]
    fn unknown_variable_is_an_error() {
        let cat = Catalog::shipped();
        assert!(matches!(
            cat.space_membership("block.weight", &[0.1], Space::A),
            Err(Error::UnknownVariable(_))
        ));
        assert!(matches!(cat.spec("gravity_3.z"), Err(Error::UnknownVariable(_))));
    }

    #[test]
    fn samples_land_in_requested_space() {
        let cat = Catalog::shipped();
        let vars: BTreeSet<String> = ["floor_friction".to_string()].into();
        let iv = cat.sample_intervention(&vars, Space::A, 7).unwrap();
        let v = iv.assignments["floor_friction"][0];
        assert!((0.3..0.6).contains(&v));

        let vars: BTreeSet<String> = ["goal_height".to_string()].into();
        let v = cat.sample_intervention(&vars, Space::B, 7).unwrap().assignments["goal_height"][0];
        assert!((0.20..0.25).contains(&v));
        assert_eq!(
            cat.sample_intervention(&vars, Space::B, 7).unwrap(),
            cat.sample_intervention(&vars, Space::B, 7).unwrap()
        );
    }

    #[test]
    fn empty_variable_set_gives_empty_intervention() {
        let cat = Catalog::shipped();
        assert!(cat.sample_intervention(&BTreeSet::new(), Space::A, 1).unwrap().is_empty());
    }

    #[test]
    fn apply_is_local() {
        let cat = Catalog::shipped();
        let cfg = default_config();
        let iv = Intervention::new().with("block_0.mass", vec![0.03 + 1e-3]);
        let next = cat.apply_intervention(&cfg, &iv).unwrap().accepted().unwrap();
        assert_eq!(cfg.diff(&next), ["block_0.mass".to_string()].into());
        let same = cat.apply_intervention(&cfg, &Intervention::new()).unwrap().accepted().unwrap();
        assert_eq!(same, cfg);
    }

    #[test]
    fn oversized_block_is_rejected() {
        let cat = Catalog::shipped();
        let iv = Intervention::new().with("block_0.size", vec![0.5, 0.5, 0.5]);
        match cat.apply_intervention(&default_config(), &iv).unwrap() {
            Outcome::Rejected(r) => assert_eq!(r.reason, RejectReason::OutOfRange),
            Outcome::Accepted(_) => panic!("0.5 m block accepted"),
        }
    }

    #[test]
    fn malformed_assignments_are_errors() {
        let cat = Catalog::shipped();
        let cfg = default_config();
        let wrong_dims = Intervention::new().with("block_0.mass", vec![0.03, 0.03]);
        assert!(matches!(cat.apply_intervention(&cfg, &wrong_dims), Err(Error::Dimension { .. })));
        let nan = Intervention::new().with("gravity_z", vec![f64::NAN]);
        assert!(matches!(cat.apply_intervention(&cfg, &nan), Err(Error::NonFinite(_))));
        let missing = Intervention::new().with("block_4.mass", vec![0.03]);
        assert!(matches!(cat.apply_intervention(&cfg, &missing), Err(Error::UnknownVariable(_))));
    }

    #[test]
    fn pose_height_bound_follows_block_size() {
        let cat = Catalog::shipped();
        let mut cfg = default_config();
        let pose = [0.05, 0.0, 0.03, 0.0];
        assert!(!cat.membership_in(Some(&cfg), "block_0.pose_cyl", &pose, Space::A).unwrap());
        cfg.set("block_0.size", vec![0.06, 0.06, 0.06]);
        assert!(cat.membership_in(Some(&cfg), "block_0.pose_cyl", &pose, Space::A).unwrap());
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let cat = Catalog::shipped();
        let a = default_config();
        let mut b = a.clone();
        let mut a2 = a.clone();
        a2.set("block_0.mass", vec![0.02]);
        b.set("block_0.mass", vec![0.04]);
        b.set("gravity_z", vec![-5.0]);
        assert_eq!(cat.interpolate(&a2, &b, 0.0).unwrap(), a2);
        assert_eq!(cat.interpolate(&a2, &b, 1.0).unwrap(), b);
        let mid = cat.interpolate(&a2, &b, 0.5).unwrap();
        assert!((mid.scalar("block_0.mass").unwrap() - 0.03).abs() < 1e-15);
        assert!(cat.interpolate(&a2, &b, 1.5).is_err());
    }

    #[test]
    fn register_rejects_intersecting_spaces() {
        let mut cat = Catalog::shipped();
        let overlapping = VariableSpec {
            dims: 1,
            space_a: IntervalBox(vec![Bound::Value(0.0)], vec![Bound::Value(1.0)]),
            space_b: IntervalBox(vec![Bound::Value(0.5)], vec![Bound::Value(2.0)]),
            units: "1".into(),
            kind: VarKind::Continuous,
            scope: Scope::Global,
            affects: Affects::Dynamics,
            default: Some(vec![0.2]),
            physical: None,
            families: None,
            structural: false,
        };
        assert!(cat.register("wind", overlapping.clone()).is_err());
        let mut ok = overlapping;
        ok.space_b = IntervalBox(vec![Bound::Value(1.0)], vec![Bound::Value(2.0)]);
        cat.register("wind", ok).unwrap();
        assert!(cat.space_membership("wind", &[1.0], Space::B).unwrap());
    }

    #[test]
    fn id_splitting() {
        assert_eq!(split_id("block_12.pose_cyl"), ("block.pose_cyl".into(), Some(12)));
        assert_eq!(split_id("goal_height"), ("goal_height".into(), None));
        assert_eq!(instance_id("link.mass", 4), "link_4.mass");
    }
}
