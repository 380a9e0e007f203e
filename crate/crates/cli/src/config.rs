//! Experiment configuration: JSON file plus flag overrides.

use std::fmt;

use advreg::adaptive::{strict_floor, AdaptiveConfig};
use advreg::attacks::{AttackSpec, SupMode, SupQuery};
use advreg::basis_kernel::KernelKind;
use advreg::testbed::{DesignSpec, NoiseSpec, Truth};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Real number that also accepts `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Real(pub f64);

impl Serialize for Real {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Real {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Real(v)),
            Raw::Text(t) if matches!(t.to_ascii_lowercase().as_str(), "inf" | "infinity") => Ok(Real(f64::INFINITY)),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got \"{t}\""))),
        }
    }
}

impl fmt::Display for Real {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == f64::INFINITY {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub powers: Vec<u32>,
    pub coef: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthConfig {
    Polynomial { dim: usize, terms: Vec<Term> },
    HolderPower { dim: usize, beta: f64, c_beta: f64 },
    Staircase { dim: usize, beta: f64, c_beta: f64, r: f64 },
    Bump { dim: usize, beta: f64, c_beta: f64, amplitude: Option<f64>, r: f64 },
}

impl Default for TruthConfig {
    fn default() -> Self {
        TruthConfig::HolderPower { dim: 1, beta: 1.0, c_beta: 1.0 }
    }
}

impl TruthConfig {
    pub fn dim(&self) -> usize {
        match self {
            TruthConfig::Polynomial { dim, .. }
            | TruthConfig::HolderPower { dim, .. }
            | TruthConfig::Staircase { dim, .. }
            | TruthConfig::Bump { dim, .. } => *dim,
        }
    }

    pub fn beta(&self) -> Option<f64> {
        match self {
            TruthConfig::Polynomial { .. } => None,
            TruthConfig::HolderPower { beta, .. } | TruthConfig::Staircase { beta, .. } | TruthConfig::Bump { beta, .. } => {
                Some(*beta)
            }
        }
    }

    /// Builds the truth with `beta` and the hard-instance `r` overridden when given.
    pub fn build(&self, beta: Option<f64>, r: Option<f64>) -> advreg::Result<Truth> {
        match self.clone() {
            TruthConfig::Polynomial { dim, terms } => {
                Truth::polynomial(dim, terms.into_iter().map(|t| (t.powers, t.coef)).collect())
            }
            TruthConfig::HolderPower { dim, beta: b, c_beta } => Truth::holder_power(dim, beta.unwrap_or(b), c_beta),
            TruthConfig::Staircase { dim, beta: b, c_beta, r: rr } => {
                Truth::staircase(dim, beta.unwrap_or(b), c_beta, r.filter(|v| *v > 0.0).unwrap_or(rr))
            }
            TruthConfig::Bump { dim, beta: b, c_beta, amplitude, r: rr } => {
                Truth::bump(dim, beta.unwrap_or(b), c_beta, amplitude, r.filter(|v| *v > 0.0).unwrap_or(rr))
            }
        }
    }

    pub fn is_hard_instance(&self) -> bool {
        matches!(self, TruthConfig::Staircase { .. } | TruthConfig::Bump { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DesignConfig {
    #[default]
    Uniform,
    PiecewiseConstant { bins: usize, weights: Vec<f64> },
}

impl DesignConfig {
    pub fn build(&self) -> DesignSpec {
        match self {
            DesignConfig::Uniform => DesignSpec::Uniform,
            DesignConfig::PiecewiseConstant { bins, weights } => {
                DesignSpec::PiecewiseConstant { bins: *bins, weights: weights.clone() }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseConfig {
    Gaussian { sigma: f64 },
    Bounded { scale: f64 },
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig::Gaussian { sigma: 0.5 }
    }
}

impl NoiseConfig {
    pub fn build(&self) -> NoiseSpec {
        match *self {
            NoiseConfig::Gaussian { sigma } => NoiseSpec::Gaussian { sigma },
            NoiseConfig::Bounded { scale } => NoiseSpec::Bounded { scale },
        }
    }
}

fn default_degree() -> usize {
    1
}

fn default_c_h() -> f64 {
    1.0
}

fn default_beta_max() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorConfig {
    /// Piecewise local polynomial. Without `h` the bandwidth follows the tuning rule with `c_h`.
    Pp {
        #[serde(default = "default_degree")]
        degree: usize,
        #[serde(default)]
        kernel: KernelKind,
        #[serde(default = "default_c_h")]
        c_h: f64,
        #[serde(default)]
        h: Option<f64>,
        #[serde(default)]
        m: Option<usize>,
        #[serde(default)]
        tau: Option<f64>,
    },
    Adaptive {
        #[serde(default = "default_beta_max")]
        beta_max: f64,
        #[serde(default = "default_degree")]
        degree: usize,
        #[serde(default)]
        kernel: KernelKind,
        #[serde(default)]
        c_lep: Option<f64>,
        #[serde(default)]
        m: Option<usize>,
    },
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig::Pp { degree: 1, kernel: KernelKind::Rectangular, c_h: 1.0, h: None, m: None, tau: None }
    }
}

impl EstimatorConfig {
    pub fn label(&self) -> &'static str {
        match self {
            EstimatorConfig::Pp { .. } => "pp",
            EstimatorConfig::Adaptive { .. } => "adaptive",
        }
    }

    pub fn adaptive(&self) -> Option<AdaptiveConfig> {
        match *self {
            EstimatorConfig::Adaptive { beta_max, degree, kernel, c_lep, m } => {
                Some(AdaptiveConfig { beta_max, c_lep, degree, kernel, m })
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackConfig {
    Identity,
    LpBall { p: Real },
    Soda { direction: Vec<f64>, c_lo: f64, c_hi: f64 },
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig::LpBall { p: Real(2.0) }
    }
}

impl AttackConfig {
    /// Attack with radius `r`; a zero radius always means the identity attack.
    pub fn build(&self, dim: usize, r: f64) -> advreg::Result<AttackSpec> {
        if let AttackConfig::Soda { direction, .. } = self {
            if direction.len() != dim {
                return Err(advreg::Error::InvalidInput(format!(
                    "attack.direction has {} entries but the truth has dimension {dim}",
                    direction.len()
                )));
            }
        }
        match self {
            _ if r == 0.0 => AttackSpec::identity(dim),
            AttackConfig::Identity => AttackSpec::identity(dim),
            AttackConfig::LpBall { p } => AttackSpec::lp_ball(dim, p.0, r),
            AttackConfig::Soda { direction, c_lo, c_hi } => AttackSpec::soda(direction.clone(), *c_lo, *c_hi, r),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, AttackConfig::Identity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SupModeConfig {
    GridLine,
    #[default]
    GridBox,
    RandomSample,
}

fn default_draws() -> usize {
    1000
}

fn default_reps() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskConfig {
    #[serde(default = "default_draws")]
    pub test_draws: usize,
    #[serde(default = "default_reps")]
    pub replications: usize,
    /// Probe points per axis for `q = inf`.
    #[serde(default)]
    pub probe_per_axis: Option<usize>,
    /// Candidate lattice size per axis for the inner supremum.
    #[serde(default)]
    pub sup_points: Option<usize>,
    #[serde(default)]
    pub sup_mode: SupModeConfig,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self { test_draws: 1000, replications: 20, probe_per_axis: None, sup_points: None, sup_mode: SupModeConfig::GridBox }
    }
}

impl RiskConfig {
    pub fn query(&self, dim: usize) -> advreg::Result<SupQuery> {
        let mode = match self.sup_mode {
            SupModeConfig::GridLine => SupMode::GridLine,
            SupModeConfig::GridBox => SupMode::GridBox,
            SupModeConfig::RandomSample => SupMode::RandomSample,
        };
        SupQuery::new(self.sup_points.unwrap_or(SupQuery::default_for(dim).m()), mode)
    }
}

fn default_n() -> Vec<usize> {
    vec![100]
}

fn default_r() -> Vec<f64> {
    vec![0.0]
}

fn default_q() -> Vec<Real> {
    vec![Real(2.0)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_n")]
    pub n: Vec<usize>,
    #[serde(default = "default_r")]
    pub r: Vec<f64>,
    /// Smoothness levels; empty means the truth's own `beta`.
    #[serde(default)]
    pub beta: Vec<f64>,
    #[serde(default = "default_q")]
    pub q: Vec<Real>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { n: default_n(), r: default_r(), beta: Vec::new(), q: default_q() }
    }
}

fn default_band() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    /// Rows whose risk ratio to the neighbouring `n` lies in `[1 - band, 1 + band]` are attack-dominated.
    #[serde(default = "default_band")]
    pub band: f64,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self { band: default_band() }
    }
}

fn default_l_n() -> usize {
    8
}

fn default_count() -> usize {
    8
}

fn default_quad() -> usize {
    4096
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoConfig {
    #[serde(default = "default_l_n")]
    pub l_n: usize,
    #[serde(default = "default_count")]
    pub packing_count: usize,
    /// Quadrature points per axis for the deviation functional.
    #[serde(default = "default_quad")]
    pub quad: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self { l_n: default_l_n(), packing_count: default_count(), quad: default_quad() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

fn default_estimators() -> Vec<EstimatorConfig> {
    vec![EstimatorConfig::default()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub truth: TruthConfig,
    #[serde(default)]
    pub design: DesignConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorConfig>,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub risk: RiskConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub phase: PhaseConfig,
    #[serde(default)]
    pub demo: DemoConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub format: Format,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults parse")
    }
}

/// Validation failure naming the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn field(name: &str, e: impl fmt::Display) -> ConfigError {
    ConfigError(format!("{name}: {e}"))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError(format!("config parse error: {e}")))
    }

    /// Smoothness levels of the sweep, falling back to the truth's `beta` (or 1).
    pub fn betas(&self) -> Vec<f64> {
        if self.sweep.beta.is_empty() {
            vec![self.truth.beta().unwrap_or(1.0)]
        } else {
            self.sweep.beta.clone()
        }
    }

    /// Checks every field and every sweep cell before anything is computed.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let dim = self.truth.dim();
        if dim == 0 {
            return Err(field("truth.dim", "must be at least 1"));
        }
        if let Some(b) = self.truth.beta() {
            if !(b > 0.0) {
                return Err(field("truth.beta", format!("must be positive, got {b}")));
            }
        }
        self.design.build().validate(dim).map_err(|e| field("design", e))?;
        self.noise.build().validate().map_err(|e| field("noise", e))?;
        if self.sweep.n.is_empty() || self.sweep.r.is_empty() || self.sweep.q.is_empty() {
            return Err(field("sweep", "axes n, r and q must be nonempty"));
        }
        for &n in &self.sweep.n {
            if n < 3 {
                return Err(field("sweep.n", format!("sample sizes must be at least 3, got {n}")));
            }
        }
        for &r in &self.sweep.r {
            if !(r >= 0.0) || !r.is_finite() {
                return Err(field("sweep.r", format!("radii must be finite and nonnegative, got {r}")));
            }
        }
        for q in &self.sweep.q {
            if !(q.0 >= 1.0) {
                return Err(field("sweep.q", format!("q must be at least 1, got {q}")));
            }
        }
        for &b in &self.betas() {
            if !(b > 0.0) || !b.is_finite() {
                return Err(field("sweep.beta", format!("beta must be positive, got {b}")));
            }
        }
        if self.risk.test_draws == 0 || self.risk.replications == 0 {
            return Err(field("risk", "test_draws and replications must be positive"));
        }
        if self.risk.probe_per_axis.is_some_and(|p| p < 2) {
            return Err(field("risk.probe_per_axis", "must be at least 2"));
        }
        self.risk.query(dim).map_err(|e| field("risk.sup_points", e))?;
        if !(self.phase.band > 0.0 && self.phase.band < 1.0) {
            return Err(field("phase.band", format!("must lie in (0, 1), got {}", self.phase.band)));
        }
        if self.demo.l_n == 0 || self.demo.packing_count == 0 || self.demo.quad == 0 {
            return Err(field("demo", "l_n, packing_count and quad must be positive"));
        }
        if self.estimators.is_empty() {
            return Err(field("estimators", "at least one estimator is required"));
        }
        for (i, est) in self.estimators.iter().enumerate() {
            let name = format!("estimators[{i}]");
            match *est {
                EstimatorConfig::Pp { c_h, h, m, tau, .. } => {
                    if !(c_h > 0.0) || !c_h.is_finite() {
                        return Err(field(&format!("{name}.c_h"), format!("must be positive, got {c_h}")));
                    }
                    if let Some(h) = h {
                        if !(h > 0.0 && h <= 1.0) {
                            return Err(field(&format!("{name}.h"), format!("must lie in (0, 1], got {h}")));
                        }
                    }
                    if m == Some(0) {
                        return Err(field(&format!("{name}.m"), "must be at least 1"));
                    }
                    if let Some(t) = tau {
                        if !(t > 0.0) {
                            return Err(field(&format!("{name}.tau"), format!("must be positive, got {t}")));
                        }
                    }
                }
                EstimatorConfig::Adaptive { beta_max, degree, c_lep, m, .. } => {
                    if !(beta_max > 0.0) || !beta_max.is_finite() {
                        return Err(field(&format!("{name}.beta_max"), format!("must be positive, got {beta_max}")));
                    }
                    if (degree as i64) < strict_floor(beta_max) {
                        return Err(field(
                            &format!("{name}.degree"),
                            format!(
                                "the adaptive upper bound requires degree >= floor(beta_max) = {}, got {degree}",
                                strict_floor(beta_max)
                            ),
                        ));
                    }
                    if c_lep.is_some_and(|c| !(c > 0.0)) {
                        return Err(field(&format!("{name}.c_lep"), "must be positive"));
                    }
                    if m == Some(0) {
                        return Err(field(&format!("{name}.m"), "must be at least 1"));
                    }
                }
            }
        }
        for &b in &self.betas() {
            for &r in &self.sweep.r {
                let beta = self.truth.beta().map(|_| b);
                self.truth.build(beta, Some(r)).map_err(|e| field("truth", e))?;
                self.attack.build(dim, r).map_err(|e| field("attack", e))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_accepts_numbers_and_inf() {
        let v: Vec<Real> = serde_json::from_str(r#"[1, 2.5, "inf", "Infinity"]"#).unwrap();
        assert_eq!(v, vec![Real(1.0), Real(2.5), Real(f64::INFINITY), Real(f64::INFINITY)]);
        assert!(serde_json::from_str::<Real>(r#""big""#).is_err());
        assert_eq!(serde_json::to_string(&Real(f64::INFINITY)).unwrap(), r#""inf""#);
        assert_eq!(Real(f64::INFINITY).to_string(), "inf");
    }

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);
        assert_eq!(cfg.betas(), vec![1.0]);
    }

    #[test]
    fn validation_names_fields() {
        let bad = |text: &str, name: &str| {
            let err = ExperimentConfig::parse(text).and_then(|c| c.validate()).unwrap_err();
            assert!(err.0.contains(name), "{} does not mention {name}", err.0);
        };
        bad(r#"{"sweep": {"n": []}}"#, "sweep");
        bad(r#"{"sweep": {"r": [-0.1]}}"#, "sweep.r");
        bad(r#"{"estimators": [{"kind": "pp", "h": 2.0}]}"#, "estimators[0].h");
        bad(r#"{"estimators": [{"kind": "adaptive", "beta_max": 3.0, "degree": 1}]}"#, "estimators[0].degree");
        bad(r#"{"noise": {"kind": "gaussian", "sigma": -1}}"#, "noise");
        bad(r#"{"attack": {"kind": "soda", "direction": [1, 0], "c_lo": 0.5, "c_hi": 1}}"#, "attack");
        bad(r#"{"truth": {"kind": "staircase", "dim": 1, "beta": 0.5, "c_beta": 1, "r": 0.5}}"#, "truth");
        bad(r#"{"phase": {"band": 1.5}}"#, "phase.band");
        bad(r#"{"estimators": [{"kind": "knn"}]}"#, "parse");
    }

    #[test]
    fn zero_radius_is_identity() {
        let a = AttackConfig::LpBall { p: Real(2.0) }.build(2, 0.0).unwrap();
        assert_eq!(a, AttackSpec::identity(2).unwrap());
    }

    #[test]
    fn sweep_beta_overrides_truth() {
        let cfg = ExperimentConfig::parse(r#"{"sweep": {"beta": [0.5, 0.8]}}"#).unwrap();
        assert_eq!(cfg.betas(), vec![0.5, 0.8]);
        let t = cfg.truth.build(Some(0.5), None).unwrap();
        assert_eq!(t.holder_params().unwrap().0, 0.5);
    }
}
