//! Versioned JSON scenario schema.

use std::path::{Path, PathBuf};

use curvlab_core::{FieldExpr, MetricModel, Regularity, Vec2};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RunError};

pub const SCHEMA_VERSION: u32 = 1;

fn default_true() -> bool {
    true
}

/// Metric description shared by all experiment kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum MetricSpec {
    Flat,
    /// `g = e^{2u} δ`.
    Conformal {
        u: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        regularity: Option<Regularity>,
    },
    Components {
        g11: String,
        g12: String,
        g22: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        regularity: Option<Regularity>,
    },
}

fn parse_expr(what: &str, text: &str) -> Result<FieldExpr> {
    FieldExpr::parse(text).map_err(|e| RunError::schema(format!("{what}: {e}")))
}

impl MetricSpec {
    pub fn build(&self) -> Result<MetricModel> {
        let (model, regularity) = match self {
            MetricSpec::Flat => (MetricModel::flat(), None),
            MetricSpec::Conformal { u, regularity } => {
                (MetricModel::conformal(parse_expr("metric.u", u)?)?, *regularity)
            }
            MetricSpec::Components {
                g11,
                g12,
                g22,
                regularity,
            } => (
                MetricModel::components(
                    parse_expr("metric.g11", g11)?,
                    parse_expr("metric.g12", g12)?,
                    parse_expr("metric.g22", g22)?,
                )?,
                *regularity,
            ),
        };
        Ok(match regularity {
            Some(r) => model.with_regularity(r),
            None => model,
        })
    }

    /// The conformal factor, when the analytic curvature oracle applies.
    pub fn conformal_factor(&self) -> Result<Option<FieldExpr>> {
        match self {
            MetricSpec::Conformal { u, .. } => Ok(Some(parse_expr("metric.u", u)?)),
            _ => Ok(None),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    BoundCheck,
    Friedrichs,
    Commutators,
    Geodesic,
    DistanceMatrix,
    Ot,
    Displacement,
    Convexity,
    Witness,
    Riccati,
    C2Identity,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::BoundCheck => "bound-check",
            ExperimentKind::Friedrichs => "friedrichs",
            ExperimentKind::Commutators => "commutators",
            ExperimentKind::Geodesic => "geodesic",
            ExperimentKind::DistanceMatrix => "distance-matrix",
            ExperimentKind::Ot => "ot",
            ExperimentKind::Displacement => "displacement",
            ExperimentKind::Convexity => "convexity",
            ExperimentKind::Witness => "witness",
            ExperimentKind::Riccati => "riccati",
            ExperimentKind::C2Identity => "c2-identity",
        }
    }
}

/// Curvature bound: a number or the analytic minimum of `K_g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KSpec {
    Value(f64),
    Named(NamedK),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NamedK {
    /// Minimum of the analytic Gauss curvature of a conformal metric.
    OracleMin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    pub kind: ExperimentKind,
    pub metric: MetricSpec,
    /// Grid resolution.
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eps_list: Vec<f64>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<KSpec>,
    /// Added to `K` after resolution.
    #[serde(rename = "K_offset", default, skip_serializing_if = "is_zero")]
    pub k_offset: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub delta_list: Vec<f64>,
    /// Selects random test points only; numerics never depend on it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Verdict the scenario is designed to produce.
    #[serde(default = "default_true")]
    pub expect_verdict: bool,
    /// Directory for cached cost matrices, relative to the output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_cache: Option<PathBuf>,
    #[serde(default)]
    pub params: serde_json::Value,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| RunError::schema(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            RunError::Schema(m) => RunError::Schema(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(RunError::schema(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(RunError::schema("name must be non-empty and free of path separators"));
        }
        if self.n < 8 {
            return Err(RunError::schema(format!("N = {} is below the minimum of 8", self.n)));
        }
        if self.eps_list.iter().any(|e| !(*e > 0.0 && *e < 0.5)) {
            return Err(RunError::schema("eps_list entries must lie in (0, 1/2)"));
        }
        if self.delta_list.iter().any(|d| !(*d > 0.0)) {
            return Err(RunError::schema("delta_list entries must be positive"));
        }
        if !self.k_offset.is_finite() {
            return Err(RunError::schema("K_offset must be finite"));
        }
        if let Some(KSpec::Value(k)) = self.k {
            if !k.is_finite() {
                return Err(RunError::schema("K must be finite"));
            }
        }
        let needs_eps = matches!(
            self.kind,
            ExperimentKind::BoundCheck | ExperimentKind::Friedrichs | ExperimentKind::Commutators
        );
        if needs_eps && self.eps_list.is_empty() {
            return Err(RunError::schema(format!(
                "{} needs a non-empty eps_list",
                self.kind.as_str()
            )));
        }
        let needs_k = matches!(
            self.kind,
            ExperimentKind::BoundCheck | ExperimentKind::Convexity | ExperimentKind::Witness
        );
        if needs_k && self.k.is_none() {
            return Err(RunError::schema(format!("{} needs K", self.kind.as_str())));
        }
        if matches!(self.kind, ExperimentKind::BoundCheck) && self.delta_list.is_empty() {
            return Err(RunError::schema("bound-check needs a non-empty delta_list"));
        }
        if matches!(self.k, Some(KSpec::Named(NamedK::OracleMin)))
            && !matches!(self.metric, MetricSpec::Conformal { .. })
        {
            return Err(RunError::schema("K = \"oracle-min\" needs a conformal metric"));
        }
        // Parse expressions and kind parameters now so that schema problems
        // surface before any numerics run.
        self.metric.build().map_err(|e| match e {
            RunError::Numerics(err) => RunError::schema(format!("metric: {err}")),
            other => other,
        })?;
        crate::run::validate_params(self)?;
        Ok(())
    }

    pub fn params<T: DeserializeOwned>(&self) -> Result<T> {
        let v = if self.params.is_null() {
            serde_json::Value::Object(Default::default())
        } else {
            self.params.clone()
        };
        serde_json::from_value(v).map_err(|e| RunError::schema(format!("params for {}: {e}", self.kind.as_str())))
    }
}

/// Bump density `exp(−1/(1 − s²))` of the given radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpSpec {
    pub center: Vec2,
    pub radius: f64,
}

/// Witness base point and velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WitnessSpec {
    pub x_star: Vec2,
    pub v: Vec2,
}
