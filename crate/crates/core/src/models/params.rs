//! Regressor specifications and their typed, validated hyperparameters.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Ha,
    Lr,
    Rf,
    Gbdt,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 4] = [ModelFamily::Ha, ModelFamily::Lr, ModelFamily::Rf, ModelFamily::Gbdt];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::Ha => "ha",
            ModelFamily::Lr => "lr",
            ModelFamily::Rf => "rf",
            ModelFamily::Gbdt => "gbdt",
        }
    }

    pub fn is_tree_based(self) -> bool {
        matches!(self, ModelFamily::Rf | ModelFamily::Gbdt)
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelFamily {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ha" => Ok(ModelFamily::Ha),
            "lr" => Ok(ModelFamily::Lr),
            "rf" => Ok(ModelFamily::Rf),
            "gbdt" => Ok(ModelFamily::Gbdt),
            other => Err(format!("unknown model family `{other}` (expected ha, lr, rf, gbdt)")),
        }
    }
}

/// A single hyperparameter value as it appears in grid files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HyperValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl fmt::Display for HyperValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HyperValue::Bool(b) => write!(f, "{b}"),
            HyperValue::Int(i) => write!(f, "{i}"),
            HyperValue::Float(x) => write!(f, "{x}"),
            HyperValue::Str(s) => write!(f, "{s}"),
        }
    }
}

impl From<f64> for HyperValue {
    fn from(v: f64) -> Self {
        HyperValue::Float(v)
    }
}

impl From<i64> for HyperValue {
    fn from(v: i64) -> Self {
        HyperValue::Int(v)
    }
}

impl From<bool> for HyperValue {
    fn from(v: bool) -> Self {
        HyperValue::Bool(v)
    }
}

impl From<&str> for HyperValue {
    fn from(v: &str) -> Self {
        HyperValue::Str(v.to_string())
    }
}

/// Family, hyperparameters, and seed of a regressor to fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorSpec {
    pub family: ModelFamily,
    #[serde(default)]
    pub hyperparameters: BTreeMap<String, HyperValue>,
    #[serde(default)]
    pub seed: u64,
}

impl RegressorSpec {
    pub fn new(family: ModelFamily) -> Self {
        RegressorSpec {
            family,
            hyperparameters: BTreeMap::new(),
            seed: 0,
        }
    }

    pub fn with(mut self, name: &str, value: impl Into<HyperValue>) -> Self {
        self.hyperparameters.insert(name.to_string(), value.into());
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Checks every hyperparameter against the family's domain.
    pub fn validate(&self) -> Result<()> {
        match self.family {
            ModelFamily::Ha => {
                if let Some(name) = self.hyperparameters.keys().next() {
                    return Err(ModelError::UnknownHyperparameter {
                        family: self.family,
                        name: name.clone(),
                    });
                }
            }
            ModelFamily::Lr => {
                LrParams::from_spec(self)?;
            }
            ModelFamily::Rf => {
                RfParams::from_spec(self)?;
            }
            ModelFamily::Gbdt => {
                GbdtParams::from_spec(self)?;
            }
        }
        Ok(())
    }

    /// Short stable label, e.g. `rf[min_samples_leaf=1,n_estimators=100]`.
    pub fn label(&self) -> String {
        let hp: Vec<String> = self.hyperparameters.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("{}[{}]", self.family, hp.join(","))
    }
}

struct Reader<'a> {
    spec: &'a RegressorSpec,
    known: &'static [&'static str],
}

impl<'a> Reader<'a> {
    fn new(spec: &'a RegressorSpec, known: &'static [&'static str]) -> Result<Self> {
        for name in spec.hyperparameters.keys() {
            if !known.contains(&name.as_str()) {
                return Err(ModelError::UnknownHyperparameter {
                    family: spec.family,
                    name: name.clone(),
                });
            }
        }
        Ok(Reader { spec, known })
    }

    fn invalid(&self, name: &str, reason: impl Into<String>) -> ModelError {
        debug_assert!(self.known.contains(&name));
        ModelError::InvalidHyperparameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }

    fn float(&self, name: &str, default: f64) -> Result<f64> {
        match self.spec.hyperparameters.get(name) {
            None => Ok(default),
            Some(HyperValue::Float(v)) => Ok(*v),
            Some(HyperValue::Int(v)) => Ok(*v as f64),
            Some(other) => Err(self.invalid(name, format!("expected a number, got `{other}`"))),
        }
    }

    fn uint(&self, name: &str, default: usize) -> Result<usize> {
        match self.spec.hyperparameters.get(name) {
            None => Ok(default),
            Some(HyperValue::Int(v)) if *v >= 0 => Ok(*v as usize),
            Some(other) => Err(self.invalid(name, format!("expected a non-negative integer, got `{other}`"))),
        }
    }

    fn opt_uint(&self, name: &str) -> Result<Option<usize>> {
        match self.spec.hyperparameters.get(name) {
            None => Ok(None),
            Some(HyperValue::Str(s)) if s == "none" => Ok(None),
            Some(_) => self.uint(name, 0).map(Some),
        }
    }

    fn boolean(&self, name: &str, default: bool) -> Result<bool> {
        match self.spec.hyperparameters.get(name) {
            None => Ok(default),
            Some(HyperValue::Bool(b)) => Ok(*b),
            Some(other) => Err(self.invalid(name, format!("expected true/false, got `{other}`"))),
        }
    }

    fn max_features(&self) -> Result<MaxFeatures> {
        match self.spec.hyperparameters.get("max_features") {
            None => Ok(MaxFeatures::Auto),
            Some(HyperValue::Str(s)) => match s.as_str() {
                "auto" => Ok(MaxFeatures::Auto),
                "sqrt" => Ok(MaxFeatures::Sqrt),
                "log2" => Ok(MaxFeatures::Log2),
                other => Err(self.invalid("max_features", format!("unknown value `{other}`"))),
            },
            Some(HyperValue::Int(n)) if *n >= 1 => Ok(MaxFeatures::Count(*n as usize)),
            Some(HyperValue::Float(f)) if *f > 0.0 && *f <= 1.0 => Ok(MaxFeatures::Fraction(*f)),
            Some(other) => Err(self.invalid("max_features", format!("out of domain: `{other}`"))),
        }
    }
}

/// Number of candidate features drawn at every split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MaxFeatures {
    /// All features.
    Auto,
    Sqrt,
    Log2,
    Count(usize),
    Fraction(f64),
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        let k = match self {
            MaxFeatures::Auto => n_features,
            MaxFeatures::Sqrt => (n_features as f64).sqrt().floor() as usize,
            MaxFeatures::Log2 => (n_features as f64).log2().floor() as usize,
            MaxFeatures::Count(c) => c,
            MaxFeatures::Fraction(f) => (f * n_features as f64).floor() as usize,
        };
        k.clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrParams {
    pub alpha: f64,
    pub l1_ratio: f64,
    pub normalise: bool,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LrParams {
    fn default() -> Self {
        LrParams {
            alpha: 1.0,
            l1_ratio: 0.5,
            normalise: false,
            tol: 1e-4,
            max_iter: 1000,
        }
    }
}

impl LrParams {
    const NAMES: &'static [&'static str] = &["alpha", "l1_ratio", "normalise", "tol", "max_iter"];

    pub fn from_spec(spec: &RegressorSpec) -> Result<Self> {
        let r = Reader::new(spec, Self::NAMES)?;
        let d = LrParams::default();
        let p = LrParams {
            alpha: r.float("alpha", d.alpha)?,
            l1_ratio: r.float("l1_ratio", d.l1_ratio)?,
            normalise: r.boolean("normalise", d.normalise)?,
            tol: r.float("tol", d.tol)?,
            max_iter: r.uint("max_iter", d.max_iter)?,
        };
        if !(p.alpha >= 0.0 && p.alpha.is_finite()) {
            return Err(r.invalid("alpha", "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&p.l1_ratio) {
            return Err(r.invalid("l1_ratio", "must lie in [0, 1]"));
        }
        if !(p.tol > 0.0) {
            return Err(r.invalid("tol", "must be > 0"));
        }
        if p.max_iter == 0 {
            return Err(r.invalid("max_iter", "must be >= 1"));
        }
        Ok(p)
    }
}

/// Growth constraints shared by single trees, forests and boosting stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub max_depth: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: MaxFeatures::Auto,
            max_depth: None,
        }
    }
}

impl TreeParams {
    fn read(r: &Reader<'_>) -> Result<Self> {
        let d = TreeParams::default();
        let p = TreeParams {
            min_samples_split: r.uint("min_samples_split", d.min_samples_split)?,
            min_samples_leaf: r.uint("min_samples_leaf", d.min_samples_leaf)?,
            max_features: r.max_features()?,
            max_depth: r.opt_uint("max_depth")?,
        };
        if p.min_samples_split < 2 {
            return Err(r.invalid("min_samples_split", "must be >= 2"));
        }
        if p.min_samples_leaf < 1 {
            return Err(r.invalid("min_samples_leaf", "must be >= 1"));
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfParams {
    pub n_estimators: usize,
    pub bootstrap: bool,
    pub tree: TreeParams,
}

impl Default for RfParams {
    fn default() -> Self {
        RfParams {
            n_estimators: 100,
            bootstrap: true,
            tree: TreeParams::default(),
        }
    }
}

impl RfParams {
    const NAMES: &'static [&'static str] = &[
        "n_estimators",
        "min_samples_split",
        "min_samples_leaf",
        "max_features",
        "max_depth",
        "bootstrap",
    ];

    pub fn from_spec(spec: &RegressorSpec) -> Result<Self> {
        let r = Reader::new(spec, Self::NAMES)?;
        let d = RfParams::default();
        let p = RfParams {
            n_estimators: r.uint("n_estimators", d.n_estimators)?,
            bootstrap: r.boolean("bootstrap", d.bootstrap)?,
            tree: TreeParams::read(&r)?,
        };
        if p.n_estimators == 0 {
            return Err(r.invalid("n_estimators", "a forest needs at least one tree"));
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub tree: TreeParams,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            n_estimators: 100,
            learning_rate: 0.1,
            tree: TreeParams::default(),
        }
    }
}

impl GbdtParams {
    const NAMES: &'static [&'static str] = &[
        "n_estimators",
        "min_samples_split",
        "min_samples_leaf",
        "max_features",
        "max_depth",
        "learning_rate",
    ];

    pub fn from_spec(spec: &RegressorSpec) -> Result<Self> {
        let r = Reader::new(spec, Self::NAMES)?;
        let d = GbdtParams::default();
        let p = GbdtParams {
            n_estimators: r.uint("n_estimators", d.n_estimators)?,
            learning_rate: r.float("learning_rate", d.learning_rate)?,
            tree: TreeParams::read(&r)?,
        };
        if !(p.learning_rate > 0.0 && p.learning_rate.is_finite()) {
            return Err(r.invalid("learning_rate", "must be finite and > 0"));
        }
        Ok(p)
    }
}

/// Mixes a master seed with a stream index (splitmix64 finalizer).
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
