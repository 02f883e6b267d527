//! Declarative scenario files and their report bundles.
//!
//! A scenario names a domain, a resolution, a set of model expressions and
//! one task. Running it yields JSON reports, CSV projections and a manifest;
//! the bundle is a pure function of the scenario.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::capacity::{capacity, relative_extremal, CapacityOrder};
use crate::dirichlet::{
    solve_c1, solve_radial, theorem4_construct, theorem4_shell_example, Theorem4Input, Theorem4Options,
};
use crate::error::{Error, ErrorClass, Result};
use crate::field::{sample, sample_profile, ScalarField};
use crate::grid::{make_domain, make_grid, DomainKind, Grid, RadialSet, RegionMask};
use crate::lab::{
    boundary_counterexample, randomized_battery, theorem1_experiment, theorem2_experiment, theorem3_experiment,
    verify_comparison_with, verify_lemma1_with, verify_lemma2_with, ConvergenceOptions, ConvergenceReport,
    InequalityReport,
};
use crate::measure::{ma_auto, tv_distance, Bump};
use crate::model::{parse_model, Model};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Ma,
    Capacity,
    Extremal,
    VerifyLemma1,
    VerifyLemma2,
    VerifyComparison,
    Theorem1,
    Theorem2,
    Theorem3,
    Counterexample,
    Solve,
    Theorem4,
    Battery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    #[serde(default = "ball")]
    pub kind: DomainKind,
    pub dim: usize,
    #[serde(default = "one")]
    pub radius: f64,
    #[serde(default)]
    pub center: Vec<[f64; 2]>,
}

fn ball() -> DomainKind {
    DomainKind::Ball
}

fn one() -> f64 {
    1.0
}

/// A region given by its radii about the domain center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SetSpec {
    Ball { radius: f64 },
    Annulus { inner: f64, outer: f64 },
    Full,
}

/// `limit + amplitude · ψ(|z - c| / radius)`, divided by `j` when `decay`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub radius: f64,
    pub amplitude: f64,
    #[serde(default = "yes")]
    pub decay: bool,
}

fn yes() -> bool {
    true
}

/// Expected headline value of a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expect {
    pub value: f64,
    #[serde(default)]
    pub rel_tol: f64,
    #[serde(default)]
    pub abs_tol: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub u: Option<String>,
    pub v: Option<String>,
    pub w: Vec<String>,
    pub r: Option<f64>,
    pub delta: Option<f64>,
    pub k: Option<f64>,
    pub j_list: Vec<usize>,
    /// Function with a free parameter `j`.
    pub sequence: Option<String>,
    pub perturbation: Option<Perturbation>,
    pub limit: Option<String>,
    pub set: Option<SetSpec>,
    pub order: Option<CapacityOrder>,
    pub f: Option<String>,
    pub boundary: Option<String>,
    pub compare: Option<String>,
    pub target: Option<String>,
    pub subsolution: Option<String>,
    /// Use the closed-form shell example for Theorem 4.
    pub shell_example: bool,
    pub len: Option<usize>,
    pub draws: Option<usize>,
    pub resolutions: Vec<usize>,
    pub slack: Option<f64>,
    pub tolerance_floor: Option<f64>,
    pub expect: Option<Expect>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub domain: DomainSpec,
    pub resolution: usize,
    #[serde(default)]
    pub functions: BTreeMap<String, String>,
    pub task: Task,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub seed: u64,
}

fn invalid(path: &str, message: impl Into<String>) -> Error {
    Error::Validation { path: path.to_string(), message: message.into() }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario> {
        let s: Scenario = serde_json::from_str(text)
            .map_err(|e| invalid(&format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        Scenario::from_json(&std::fs::read_to_string(path)?)
    }

    /// Static checks: every referenced function is defined and parses, and
    /// the resolution ladder increases.
    pub fn validate(&self) -> Result<()> {
        for (name, text) in &self.functions {
            parse_model(text).map_err(|e| invalid(&format!("functions.{name}"), e.to_string()))?;
        }
        let p = &self.params;
        let mut refs: Vec<(String, &String)> = Vec::new();
        for (field, value) in [
            ("u", &p.u),
            ("v", &p.v),
            ("sequence", &p.sequence),
            ("limit", &p.limit),
            ("f", &p.f),
            ("boundary", &p.boundary),
            ("compare", &p.compare),
            ("target", &p.target),
            ("subsolution", &p.subsolution),
        ] {
            if let Some(name) = value {
                refs.push((format!("params.{field}"), name));
            }
        }
        for (i, name) in p.w.iter().enumerate() {
            refs.push((format!("params.w[{i}]"), name));
        }
        for (path, name) in refs {
            if !self.functions.contains_key(name) {
                return Err(invalid(&path, format!("undefined function `{name}`")));
            }
        }
        if p.resolutions.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("params.resolutions", "resolution ladder must increase"));
        }
        if p.j_list.windows(2).any(|w| w[1] <= w[0]) || p.j_list.contains(&0) {
            return Err(invalid("params.j_list", "indices must be positive and increasing"));
        }
        if self.name.is_empty() {
            return Err(invalid("name", "scenario name is empty"));
        }
        Ok(())
    }
}

/// One output file of a bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub file: String,
    pub contents: String,
}

/// Reports, projections and the manifest of one scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub manifest: Value,
    pub artifacts: Vec<Artifact>,
    pub pass: bool,
}

impl Bundle {
    pub fn manifest_json(&self) -> String {
        to_pretty(&self.manifest)
    }

    /// Write every artifact and `manifest.json` into `dir`.
    pub fn write_to(&self, dir: &Path, with_csv: bool) -> Result<Vec<String>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for a in &self.artifacts {
            if !with_csv && a.file.ends_with(".csv") && !a.file.starts_with("field_") {
                continue;
            }
            std::fs::write(dir.join(&a.file), &a.contents)?;
            written.push(a.file.clone());
        }
        std::fs::write(dir.join("manifest.json"), self.manifest_json())?;
        written.push("manifest.json".into());
        Ok(written)
    }
}

fn to_pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).unwrap_or_default();
    s.push('\n');
    s
}

/// Process exit status for a scenario outcome.
pub fn exit_code(outcome: &Result<Bundle>) -> i32 {
    match outcome {
        Ok(b) if b.pass => 0,
        Ok(_) => 5,
        Err(e) => match e.class() {
            ErrorClass::Validation => 2,
            ErrorClass::Hypothesis => 3,
            ErrorClass::NonConvergence => 4,
            ErrorClass::Io => 1,
        },
    }
}

struct Ctx<'a> {
    sc: &'a Scenario,
    grid: Arc<Grid>,
    models: BTreeMap<String, Model>,
}

impl Ctx<'_> {
    fn model(&self, path: &str, name: &Option<String>) -> Result<&Model> {
        let name = name.as_ref().ok_or_else(|| invalid(path, "required"))?;
        self.models.get(name).ok_or_else(|| invalid(path, format!("undefined function `{name}`")))
    }

    fn field(&self, path: &str, name: &Option<String>) -> Result<ScalarField> {
        sample(self.model(path, name)?, &self.grid)
    }

    fn number(&self, path: &str, v: Option<f64>) -> Result<f64> {
        v.ok_or_else(|| invalid(path, "required"))
    }

    fn set(&self) -> Result<RegionMask> {
        let r0 = self.grid.domain().radius;
        Ok(match self.sc.params.set.as_ref().unwrap_or(&SetSpec::Full) {
            SetSpec::Full => RegionMask::full(&self.grid),
            SetSpec::Ball { radius } => {
                if !(*radius > 0.0 && *radius < r0) {
                    return Err(invalid("params.set.radius", "must lie in (0, domain radius)"));
                }
                RegionMask::radial(&self.grid, RadialSet::ball(*radius))
            }
            SetSpec::Annulus { inner, outer } => {
                if !(0.0 <= *inner && inner < outer && *outer < r0) {
                    return Err(invalid("params.set", "need 0 <= inner < outer < domain radius"));
                }
                RegionMask::radial(&self.grid, RadialSet::from_intervals(vec![[*inner, *outer]]))
            }
        })
    }

    fn order(&self) -> CapacityOrder {
        self.sc.params.order.unwrap_or(CapacityOrder::FullN)
    }

    fn sequence(&self) -> Result<(Vec<ScalarField>, Vec<usize>)> {
        let p = &self.sc.params;
        let idx = if p.j_list.is_empty() { vec![1, 2, 4, 8, 16, 32] } else { p.j_list.clone() };
        if let Some(pert) = &p.perturbation {
            let base = self.field("params.limit", &p.limit)?;
            let c = self.grid.domain().center_real();
            let bump = Bump { name: "perturbation".into(), center: c, radius: pert.radius }.sample(&self.grid);
            let seq = idx
                .iter()
                .map(|&j| {
                    let a = if pert.decay { pert.amplitude / j as f64 } else { pert.amplitude };
                    let vals = base.values().iter().zip(bump.values()).map(|(u, b)| u + a * b).collect();
                    ScalarField::from_values(&self.grid, vals)
                })
                .collect();
            return Ok((seq, idx));
        }
        let m = self.model("params.sequence", &p.sequence)?;
        if m.free_params() != ["j"] {
            return Err(invalid("params.sequence", "sequence must have exactly one free parameter `j`"));
        }
        let seq = idx.iter().map(|&j| sample(&m.with_param("j", j as f64), &self.grid)).collect::<Result<_>>()?;
        Ok((seq, idx))
    }

    fn convergence_options(&self) -> ConvergenceOptions {
        let mut o = ConvergenceOptions::default();
        if let Some(t) = self.sc.params.tolerance_floor {
            o.tolerance_floor = t;
        }
        o
    }
}

/// Result of a task before bundling.
struct Outcome {
    name: &'static str,
    report: Value,
    csv: Option<String>,
    fields: Vec<(String, ScalarField)>,
    checks: BTreeMap<String, bool>,
    headline: Option<f64>,
}

fn json_of<T: Serialize>(t: &T) -> Result<Value> {
    Ok(serde_json::to_value(t)?)
}

/// A number exactly as it appears in the JSON reports.
fn num(v: f64) -> String {
    Value::from(v).to_string()
}

fn csv_inequality(r: &InequalityReport) -> String {
    let mut s = String::from("key,value\n");
    let _ = writeln!(s, "lhs,{}", num(r.lhs));
    let _ = writeln!(s, "rhs,{}", num(r.rhs));
    let _ = writeln!(s, "margin,{}", num(r.margin));
    let _ = writeln!(s, "slack_tolerance,{}", num(r.slack_tolerance));
    let _ = writeln!(s, "pass,{}", r.pass);
    for (k, v) in &r.term_breakdown {
        let _ = writeln!(s, "{k},{}", num(*v));
    }
    s
}

fn csv_convergence(r: &ConvergenceReport) -> String {
    let mut s = String::from("lane,kind,series,index,value\n");
    let mut rows = |lane: &str, kind: &str, list: &[crate::lab::Series]| {
        for series in list {
            for (j, v) in r.indices.iter().zip(&series.values) {
                let _ = writeln!(s, "{lane},{kind},{},{j},{}", series.name, num(*v));
            }
        }
    };
    for lane in &r.lanes {
        rows(&lane.name, "capacity", &lane.capacity);
        rows(&lane.name, "current", &lane.currents);
    }
    rows("-", "diagnostic", &r.diagnostics);
    s
}

fn inequality(rep: InequalityReport) -> Result<Outcome> {
    let mut checks = BTreeMap::new();
    checks.insert("pass".to_string(), rep.pass);
    Ok(Outcome { name: "inequality", csv: Some(csv_inequality(&rep)), report: json_of(&rep)?, fields: vec![], checks, headline: Some(rep.lhs) })
}

fn convergence(rep: ConvergenceReport) -> Result<Outcome> {
    // hypotheses are observations; only implications and consistency are asserted
    const ASSERTED: [&str; 4] = ["implication_holds", "conclusion_holds", "all_lanes_agree", "equal_off_e"];
    let mut checks: BTreeMap<String, bool> =
        rep.checks.iter().filter(|(k, _)| ASSERTED.contains(&k.as_str())).map(|(k, v)| (k.clone(), *v)).collect();
    checks.insert("verdicts_consistent".into(), rep.verdicts_consistent());
    Ok(Outcome { name: "convergence", csv: Some(csv_convergence(&rep)), report: json_of(&rep)?, fields: vec![], checks, headline: None })
}

fn run_task(cx: &Ctx) -> Result<Outcome> {
    let p = &cx.sc.params;
    let g = &cx.grid;
    let slack = p.slack.unwrap_or(0.0);
    match cx.sc.task {
        Task::Ma => {
            let u = cx.field("params.u", &p.u)?;
            let mu = ma_auto(&u)?;
            let mut csv = Vec::new();
            mu.write_density_csv(&mut csv)?;
            let summary = mu.summary();
            Ok(Outcome {
                name: "measure",
                headline: Some(summary.total_mass),
                report: json_of(&summary)?,
                csv: Some(String::from_utf8_lossy(&csv).into_owned()),
                fields: vec![],
                checks: BTreeMap::new(),
            })
        }
        Task::Capacity => {
            let est = capacity(&cx.set()?, g, cx.order())?;
            let summary = est.summary();
            Ok(Outcome {
                name: "capacity",
                headline: Some(summary.value),
                report: json_of(&summary)?,
                csv: None,
                fields: vec![("extremal".into(), est.extremal_field.clone())],
                checks: BTreeMap::new(),
            })
        }
        Task::Extremal => {
            let ext = relative_extremal(&cx.set()?, g)?;
            let mut report = json!({ "min": ext.lower_bound(), "max": ext.upper_bound() });
            let mut headline = None;
            if p.compare.is_some() {
                let d = ext.sup_distance(&cx.field("params.compare", &p.compare)?)?;
                report["sup_distance"] = json!(d);
                headline = Some(d);
            }
            Ok(Outcome { name: "extremal", report, csv: None, fields: vec![("extremal".into(), ext)], checks: BTreeMap::new(), headline })
        }
        Task::VerifyLemma1 => {
            let u = cx.field("params.u", &p.u)?;
            let v = cx.field("params.v", &p.v)?;
            let n = g.dim_complex();
            let names: Vec<Option<String>> = match p.w.len() {
                1 => vec![Some(p.w[0].clone()); n],
                m if m == n => p.w.iter().cloned().map(Some).collect(),
                _ => return Err(invalid("params.w", format!("give 1 or {n} functions"))),
            };
            let ws = names.iter().map(|w| cx.field("params.w", w)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&ScalarField> = ws.iter().collect();
            inequality(verify_lemma1_with(&u, &v, &refs, p.r.unwrap_or(1.0), slack)?)
        }
        Task::VerifyLemma2 => {
            let u = cx.field("params.u", &p.u)?;
            let v = cx.field("params.v", &p.v)?;
            let delta = cx.number("params.delta", p.delta)?;
            let k = cx.number("params.k", p.k)?;
            inequality(verify_lemma2_with(&u, &v, delta, k, slack)?)
        }
        Task::VerifyComparison => {
            let u = cx.field("params.u", &p.u)?;
            let v = cx.field("params.v", &p.v)?;
            inequality(verify_comparison_with(&u, &v, slack)?)
        }
        Task::Theorem1 => {
            let (seq, idx) = cx.sequence()?;
            let u = cx.field("params.limit", &p.limit)?;
            let order = p.order.unwrap_or(CapacityOrder::InnerNMinus1);
            convergence(theorem1_experiment(&seq, &idx, &u, &cx.set()?, order, &cx.convergence_options())?)
        }
        Task::Theorem2 => {
            let (seq, idx) = cx.sequence()?;
            let u = cx.field("params.limit", &p.limit)?;
            convergence(theorem2_experiment(&seq, &idx, &u, &cx.set()?, &cx.convergence_options())?)
        }
        Task::Theorem3 => {
            let (seq, idx) = cx.sequence()?;
            let u = cx.field("params.limit", &p.limit)?;
            convergence(theorem3_experiment(&seq, &idx, &u, cx.order(), &cx.convergence_options())?)
        }
        Task::Counterexample => {
            let j = if p.j_list.is_empty() { vec![1, 2, 4, 8] } else { p.j_list.clone() };
            let rep = boundary_counterexample(g, &j, p.delta.unwrap_or(0.5))?;
            let mut csv = String::from("j,deviation_capacity,closed_form,max_pairing_gap,boundary_trace_max\n");
            for r in &rep.rows {
                let _ = writeln!(csv, "{},{},{},{},{}", r.j, num(r.deviation_capacity), num(r.closed_form), num(r.max_pairing_gap), num(r.boundary_trace_max));
            }
            let mut checks = BTreeMap::new();
            checks.insert("capacities_growing".into(), rep.capacities_growing);
            Ok(Outcome { name: "counterexample", report: json_of(&rep)?, csv: Some(csv), fields: vec![], checks, headline: None })
        }
        Task::Solve => {
            let fm = cx.model("params.f", &p.f)?;
            let boundary = cx.field("params.boundary", &p.boundary)?;
            let (field, mut report) = match g.dim_complex() {
                1 => {
                    let sol = solve_c1(&sample(fm, g)?, &boundary)?;
                    let summary = json_of(&sol.summary())?;
                    (sol.field, summary)
                }
                _ => {
                    let dom = g.domain();
                    let c = dom.center_real();
                    if fm.radial_or(2, c).is_none() {
                        return Err(invalid("params.f", "the n = 2 solver needs a density radial about the domain center"));
                    }
                    let bv = boundary.eval_at(&dom.project_to_boundary(&c));
                    let f = |rho: f64| fm.eval(&[c[0] + rho, c[1], c[2], c[3]]);
                    let prof = solve_radial(&f, 2, bv, dom.radius, c)?;
                    (sample_profile(Arc::new(prof), g), json!({ "solver": "radial" }))
                }
            };
            let mut headline = None;
            if p.compare.is_some() {
                let d = field.sup_distance(&cx.field("params.compare", &p.compare)?)?;
                report["sup_distance"] = json!(d);
                headline = Some(d);
            }
            Ok(Outcome { name: "solution", report, csv: None, fields: vec![("solution".into(), field)], checks: BTreeMap::new(), headline })
        }
        Task::Theorem4 => {
            let input = if p.shell_example {
                theorem4_shell_example(g, p.len.unwrap_or(60_000))?
            } else {
                if !p.j_list.is_empty() {
                    return Err(invalid("params.j_list", "Theorem 4 runs over j = 1..len; give `len` instead"));
                }
                let m = cx.model("params.sequence", &p.sequence)?.clone();
                let target = ma_auto(&cx.field("params.target", &p.target)?)?;
                let sub = cx.field("params.subsolution", &p.subsolution)?;
                let (g1, g2) = (g.clone(), g.clone());
                let (m1, t1) = (m.clone(), target.clone());
                Theorem4Input {
                    fields: Box::new(move |j| sample(&m.with_param("j", j as f64), &g1)),
                    tv: Box::new(move |j| tv_distance(&ma_auto(&sample(&m1.with_param("j", j as f64), &g2)?)?, &t1, None)),
                    len: p.len.unwrap_or(64),
                    target,
                    subsolution: sub,
                }
            };
            let (gfield, rep) = theorem4_construct(&input, &Theorem4Options::default())?;
            let mut report = json_of(&rep)?;
            if p.compare.is_some() {
                report["sup_distance"] = json!(gfield.sup_distance(&cx.field("params.compare", &p.compare)?)?);
            }
            let mut csv = String::from("k,index,tv,tv_recomputed,delta,capacity_deviation,bound,within_bound\n");
            for s in &rep.steps {
                let _ = writeln!(csv, "{},{},{},{},{},{},{},{}", s.k, s.index, num(s.tv), num(s.tv_recomputed), num(s.delta), num(s.capacity_deviation), num(s.bound), s.within_bound);
            }
            let mut checks = BTreeMap::new();
            checks.insert("pass".into(), rep.pass);
            Ok(Outcome { name: "theorem4", report, csv: Some(csv), fields: vec![("envelope".into(), gfield)], checks, headline: Some(rep.residual_relative) })
        }
        Task::Battery => {
            let res = if p.resolutions.is_empty() { vec![cx.sc.resolution] } else { p.resolutions.clone() };
            let rep = randomized_battery(g.domain(), cx.sc.seed, p.draws.unwrap_or(200), &res)?;
            let mut csv = String::from("resolution,case,check,lhs,rhs,slack_tolerance,pass\n");
            for (i, c) in rep.cases.iter().enumerate() {
                let mut row = |name: String, r: &InequalityReport| {
                    let _ = writeln!(csv, "{},{i},{name},{},{},{},{}", c.resolution, num(r.lhs), num(r.rhs), num(r.slack_tolerance), r.pass);
                };
                row("lemma1".into(), &c.lemma1);
                row("comparison".into(), &c.comparison);
                for (d, k, r) in &c.lemma2 {
                    row(format!("lemma2_d{d}_k{k}"), r);
                }
            }
            let mut checks = BTreeMap::new();
            checks.insert("lemma1".into(), rep.lemma1_failures == 0);
            checks.insert("comparison".into(), rep.comparison_failures == 0);
            checks.insert("lemma2".into(), rep.lemma2_failures == 0);
            Ok(Outcome { name: "battery", report: json_of(&rep)?, csv: Some(csv), fields: vec![], checks, headline: None })
        }
    }
}

/// Run a validated scenario, optionally overriding its resolution.
pub fn run_scenario(sc: &Scenario, resolution: Option<usize>) -> Result<Bundle> {
    sc.validate()?;
    let dom = make_domain(sc.domain.kind, sc.domain.dim, sc.domain.radius, &sc.domain.center)
        .map_err(|e| invalid("domain", e.to_string()))?;
    let res = resolution.unwrap_or(sc.resolution);
    let grid = make_grid(&dom, res)?;
    let models = sc
        .functions
        .iter()
        .map(|(k, t)| Ok((k.clone(), parse_model(t)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let cx = Ctx { sc, grid, models };
    let out = run_task(&cx)?;
    let mut checks = out.checks;
    if let (Some(e), Some(h)) = (&sc.params.expect, out.headline) {
        let tol = e.abs_tol + e.rel_tol * e.value.abs();
        checks.insert("expected_value".into(), (h - e.value).abs() <= tol);
    }
    let pass = checks.values().all(|c| *c);
    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "scenario": sc.name,
        "task": sc.task,
        "report": out.report,
    });
    let mut artifacts = vec![Artifact { file: format!("{}.json", out.name), contents: to_pretty(&report) }];
    if let Some(csv) = out.csv {
        artifacts.push(Artifact { file: format!("{}.csv", out.name), contents: csv });
    }
    for (name, f) in &out.fields {
        let mut buf = Vec::new();
        f.write_csv(&mut buf)?;
        artifacts.push(Artifact { file: format!("field_{name}.csv"), contents: String::from_utf8_lossy(&buf).into_owned() });
    }
    let manifest = json!({
        "schema_version": SCHEMA_VERSION,
        "scenario": sc.name,
        "task": sc.task,
        "seed": sc.seed,
        "resolution": res,
        "files": artifacts.iter().map(|a| a.file.clone()).collect::<Vec<_>>(),
        "headline": out.headline,
        "checks": checks,
        "pass": pass,
    });
    Ok(Bundle { manifest, artifacts, pass })
}

/// Manifest for a run with no reports.
pub fn empty_bundle() -> Bundle {
    Bundle { manifest: json!({ "schema_version": SCHEMA_VERSION, "files": [], "checks": {}, "pass": true }), artifacts: vec![], pass: true }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn scenario(task: &str, params: &str, functions: &str, res: usize) -> String {
        format!(
            r#"{{"name": "t", "domain": {{"dim": 1}}, "resolution": {res}, "functions": {functions}, "task": "{task}", "params": {params}}}"#
        )
    }

    #[test]
    fn undefined_function_is_named() {
        let text = scenario("verify-lemma1", r#"{"u": "u", "v": "u", "w": ["w9"]}"#, r#"{"u": "abs2(z) - 1"}"#, 32);
        let err = Scenario::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("w9"), "{err}");
        assert_eq!(exit_code(&Err(err)), 2);
    }

    #[test]
    fn lemma2_scenario_passes() {
        let text = scenario(
            "verify-lemma2",
            r#"{"u": "zero", "v": "kink", "delta": 0.5, "k": 0.5}"#,
            r#"{"zero": "0", "kink": "max(log(abs(z)), -1)"}"#,
            64,
        );
        let b = run_scenario(&Scenario::from_json(&text).unwrap(), None).unwrap();
        assert!(b.pass);
        let rep: Value = serde_json::from_str(&b.artifacts[0].contents).unwrap();
        assert!((rep["report"]["lhs"].as_f64().unwrap() - 4.0 * PI).abs() < 0.02 * 4.0 * PI);
        assert!((rep["report"]["rhs"].as_f64().unwrap() - 8.0 * PI).abs() < 0.02 * 8.0 * PI);
        assert_eq!(exit_code(&Ok(b)), 0);
    }

    #[test]
    fn counterexample_scenario_rows() {
        let text = scenario("counterexample", r#"{"j_list": [1, 2, 4, 8], "delta": 0.5}"#, "{}", 64);
        let b = run_scenario(&Scenario::from_json(&text).unwrap(), None).unwrap();
        let rep: Value = serde_json::from_str(&b.artifacts[0].contents).unwrap();
        let rows = rep["report"]["rows"].as_array().unwrap();
        assert_eq!(rows.len(), 4);
        for (row, want) in rows.iter().zip([4.0, 8.0, 16.0, 32.0]) {
            let c = row["deviation_capacity"].as_f64().unwrap();
            assert!((c - want * PI).abs() < 0.02 * want * PI);
        }
        assert_eq!(b.artifacts[1].contents.lines().count(), 5);
    }

    #[test]
    fn hypothesis_and_expectation_exit_codes() {
        let text = scenario("verify-comparison", r#"{"u": "a", "v": "b"}"#, r#"{"a": "abs2(z) - 2", "b": "abs2(z) - 1"}"#, 32);
        assert_eq!(exit_code(&run_scenario(&Scenario::from_json(&text).unwrap(), None)), 3);
        let text = scenario("ma", r#"{"u": "a", "expect": {"value": 1.0, "rel_tol": 0.01}}"#, r#"{"a": "abs2(z)"}"#, 32);
        let b = run_scenario(&Scenario::from_json(&text).unwrap(), None);
        assert_eq!(exit_code(&b), 5);
    }

    #[test]
    fn sequence_scenario_and_csv_projection() {
        let text = scenario(
            "theorem1",
            r#"{"sequence": "s", "limit": "u", "j_list": [1, 2, 4, 8, 16, 32], "set": {"kind": "ball", "radius": 0.9}}"#,
            r#"{"s": "(1 + 1/j)*(abs2(z) - 1)", "u": "abs2(z) - 1"}"#,
            32,
        );
        let b = run_scenario(&Scenario::from_json(&text).unwrap(), None).unwrap();
        assert!(b.pass, "{}", b.manifest_json());
        let json = &b.artifacts[0].contents;
        for line in b.artifacts[1].contents.lines().skip(1) {
            let value = line.rsplit(',').next().unwrap();
            assert!(json.contains(value), "{value} missing from the JSON report");
        }
    }

    #[test]
    fn bundle_is_written() {
        let dir = tempfile::tempdir().unwrap();
        let files = empty_bundle().write_to(dir.path(), true).unwrap();
        assert_eq!(files, vec!["manifest.json".to_string()]);
        let text = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        assert!(text.contains("\"pass\": true"));
    }
}
