//! Versioned JSON problem files.
//!
//! Every file carries `"schema": "deltavar/1"` and a `"kind"` of `basic`,
//! `control` or `higher_order`. Scales are either an explicit point array or
//! `{"uniform": {"a": …, "b": …, "n": …}}` with `n` points.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::control::ControlProblem;
use crate::error::{Error, Result};
use crate::expr::{Arity, LagrangianExpr};
use crate::higher_order::HigherOrderProblem;
use crate::oracle::GridSearchSpec;
use crate::refine::{Reference, RefineSpec};
use crate::timescale::{GridFunction, TimeScale};
use crate::variational::{BasicProblem, Form};

pub const SCHEMA: &str = "deltavar/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub schema: String,
    #[serde(flatten)]
    pub problem: ProblemSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    Basic(BasicSpec),
    Control(ControlSpec),
    HigherOrder(HigherOrderSpec),
}

impl ProblemSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ProblemSpec::Basic(_) => "basic",
            ProblemSpec::Control(_) => "control",
            ProblemSpec::HigherOrder(_) => "higher_order",
        }
    }
}

impl ProblemFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ProblemFile = serde_json::from_str(text).map_err(|e| Error::Config(format!("problem file: {e}")))?;
        if file.schema != SCHEMA {
            return Err(Error::Config(format!(
                "unsupported schema `{}`, expected `{SCHEMA}`",
                file.schema
            )));
        }
        Ok(file)
    }
}

/// Envelope written by every command; `body` is flattened into it so key
/// order is fixed by the body's field order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportFile<T> {
    pub schema: &'static str,
    pub kind: String,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pass: Option<bool>,
    #[serde(flatten)]
    pub body: T,
}

impl<T: Serialize> ReportFile<T> {
    pub fn new(kind: &str, command: &str, pass: Option<bool>, body: T) -> Self {
        Self {
            schema: SCHEMA,
            kind: kind.into(),
            command: command.into(),
            pass,
            body,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(format!("report: {e}")))
    }
}

fn one() -> usize {
    1
}

fn plain() -> Form {
    Form::Plain
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasicSpec {
    pub scale: TimeScale,
    #[serde(default = "plain")]
    pub form: Form,
    #[serde(rename = "L")]
    pub lagrangian: String,
    #[serde(default = "one")]
    pub n: usize,
    #[serde(default)]
    pub bc_a: Option<Vec<f64>>,
    #[serde(default)]
    pub bc_b: Option<Vec<f64>>,
    /// Candidate `y`, one row per point, for checking.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<GridSearchSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refine: Option<RefineBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineBlock {
    /// Subinterval counts.
    #[serde(default)]
    pub ladder: Option<Vec<usize>>,
    /// Continuum solution, one expression in `t` per component.
    #[serde(default)]
    pub reference: Option<Vec<String>>,
    /// Subintervals of the fine reference grid when no expression is given.
    #[serde(default)]
    pub fine_grid: Option<usize>,
}

impl BasicSpec {
    pub fn build(&self) -> Result<BasicProblem> {
        BasicProblem::parse(
            Arc::new(self.scale.clone()),
            &self.lagrangian,
            self.n,
            self.form,
            self.bc_a.clone(),
            self.bc_b.clone(),
        )
    }

    pub fn trajectory(&self, p: &BasicProblem) -> Result<Option<GridFunction>> {
        self.trajectory
            .as_ref()
            .map(|rows| GridFunction::from_rows(p.scale().clone(), rows))
            .transpose()
    }

    /// Refinement study over `[first, last]` of the problem scale; `ladder`
    /// overrides the file's ladder.
    pub fn refine_spec(&self, ladder: Option<Vec<usize>>) -> Result<RefineSpec> {
        let block = self.refine.clone().unwrap_or(RefineBlock {
            ladder: None,
            reference: None,
            fine_grid: None,
        });
        let ladder = ladder
            .or(block.ladder)
            .ok_or_else(|| Error::Config("no refinement ladder given".into()))?;
        let reference = match (&block.reference, block.fine_grid) {
            (Some(exprs), _) => Reference::analytic(&exprs.iter().map(String::as_str).collect::<Vec<_>>())?,
            (None, Some(n)) => Reference::FineGrid(n),
            (None, None) => Reference::FineGrid(4 * ladder.last().copied().unwrap_or(0)),
        };
        Ok(RefineSpec {
            lagrangian: LagrangianExpr::parse(&self.lagrangian, Arity::new(self.n, 1, 0))?,
            form: self.form,
            a: self.scale.first(),
            b: self.scale.last(),
            bc_a: self.bc_a.clone(),
            bc_b: self.bc_b.clone(),
            ladder,
            reference,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    pub scale: TimeScale,
    #[serde(rename = "L")]
    pub lagrangian: String,
    pub phi: Vec<String>,
    #[serde(default = "one")]
    pub n: usize,
    #[serde(default = "one")]
    pub m: usize,
    /// Whole-vector or per-component data; `null` entries are free.
    #[serde(default)]
    pub bc_a: Option<Vec<Option<f64>>>,
    #[serde(default)]
    pub bc_b: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub isoperimetric: Option<Isoperimetric>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<ControlTrajectory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<GridSearchSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Isoperimetric {
    pub g: String,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlTrajectory {
    pub y: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    #[serde(default)]
    pub psi0: Option<f64>,
    #[serde(default)]
    pub psi: Option<Vec<Vec<f64>>>,
}

impl ControlSpec {
    /// The Lagrange problem, with the isoperimetric constraint (if any)
    /// folded into an extra state.
    pub fn build(&self) -> Result<ControlProblem> {
        let arity = Arity::new(self.n, 0, self.m);
        let l = LagrangianExpr::parse(&self.lagrangian, arity)?;
        let phi = self
            .phi
            .iter()
            .map(|s| LagrangianExpr::parse(s, arity))
            .collect::<Result<Vec<_>>>()?;
        let expand = |bc: &Option<Vec<Option<f64>>>| bc.clone().unwrap_or_else(|| vec![None; self.n]);
        let p = ControlProblem::with_boundary(Arc::new(self.scale.clone()), l, phi, expand(&self.bc_a), expand(&self.bc_b))?;
        match &self.isoperimetric {
            Some(iso) => {
                let g = LagrangianExpr::parse(&iso.g, arity)?;
                crate::control::isoperimetric_reduce(&p, &g, iso.beta)
            }
            None => Ok(p),
        }
    }

    pub fn trajectory(&self, p: &ControlProblem) -> Result<Option<(GridFunction, GridFunction)>> {
        self.trajectory
            .as_ref()
            .map(|t| {
                Ok((
                    GridFunction::from_rows(p.scale().clone(), &t.y)?,
                    GridFunction::from_rows(p.scale().clone(), &t.u)?,
                ))
            })
            .transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HigherOrderSpec {
    pub scale: TimeScale,
    #[serde(rename = "L")]
    pub lagrangian: String,
    #[serde(default = "one")]
    pub n: usize,
    pub r: usize,
    pub bc: BlockBoundaries,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<GridSearchSpec>,
}

/// `a[i]` / `b[i]` hold `y^{Δ^i}` at `a` / `ρ^{r−1}(b)`, or `null` if free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockBoundaries {
    pub a: Vec<Option<Vec<f64>>>,
    pub b: Vec<Option<Vec<f64>>>,
}

impl HigherOrderSpec {
    pub fn build(&self) -> Result<HigherOrderProblem> {
        HigherOrderProblem::parse(
            Arc::new(self.scale.clone()),
            &self.lagrangian,
            self.n,
            self.r,
            self.bc.a.clone(),
            self.bc.b.clone(),
        )
    }

    pub fn trajectory(&self, p: &HigherOrderProblem) -> Result<Option<GridFunction>> {
        self.trajectory
            .as_ref()
            .map(|rows| GridFunction::from_rows(p.scale().clone(), rows))
            .transpose()
    }
}
