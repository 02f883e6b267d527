//! Numerical checks of the inequalities and convergence theorems.
//!
//! Inequalities produce an [`InequalityReport`]; sequence experiments produce
//! a [`ConvergenceReport`] whose verdicts are recomputable from its series.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::capacity::{deviation_capacity, CapacityOrder};
use crate::dirichlet::boundary_trace;
use crate::error::{Error, Result};
use crate::exec;
use crate::field::{sample, ScalarField};
use crate::grid::{make_grid, DomainKind, Domain, Grid, RadialSet, RegionMask};
use crate::measure::{ma_auto, mixed_auto, pair_on, tv_distance, Bump, MAMeasure, Product, TestFunctionBank, Weight};
use crate::model::parse_model;
use crate::psh::radial_range;
use crate::radial::radial_superlevel;

/// The δ ladder on which capacity convergence is decided.
pub const DELTA_LADDER: [f64; 3] = [0.5, 0.25, 0.125];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub slack_tolerance: f64,
    pub pass: bool,
    pub term_breakdown: BTreeMap<String, f64>,
}

impl InequalityReport {
    pub fn new(lhs: f64, rhs: f64, slack: f64, terms: BTreeMap<String, f64>) -> Self {
        InequalityReport { lhs, rhs, margin: rhs - lhs, slack_tolerance: slack, pass: lhs <= rhs + slack, term_breakdown: terms }
    }

    pub fn with_slack(mut self, slack: f64) -> Self {
        self.slack_tolerance = slack;
        self.pass = self.lhs <= self.rhs + slack;
        self
    }
}

/// A boundary limit estimated on interior bands of width `h, 2h, 4h`,
/// extrapolated linearly to width 0, and evaluated exactly on the boundary
/// when both functions have closed forms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCheck {
    pub widths: [f64; 3],
    pub band_values: [f64; 3],
    pub extrapolated: f64,
    pub exact: Option<f64>,
    pub tolerance: f64,
    pub holds: bool,
}

fn band_extreme<F>(grid: &Grid, w: f64, f: F, want_max: bool) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let dom = grid.domain();
    let sign = if want_max { 1.0 } else { -1.0 };
    let m = exec::max(grid.len(), |i| {
        if grid.is_interior(i) && dom.distance_to_boundary(&grid.center_of(i)) < w {
            sign * f(i)
        } else {
            f64::NEG_INFINITY
        }
    });
    sign * m
}

/// `liminf_{∂Ω} (u - v) ≥ 0`.
pub fn boundary_liminf(u: &ScalarField, v: &ScalarField) -> BoundaryCheck {
    let grid = u.grid();
    let h = grid.spacing();
    let widths = [h, 2.0 * h, 4.0 * h];
    let vals = widths.map(|w| band_extreme(grid, w, |i| u.value(i) - v.value(i), false));
    let extrapolated = 2.0 * vals[0] - vals[1];
    let exact = (u.source().is_some() && v.source().is_some()).then(|| {
        boundary_trace(u).iter().zip(boundary_trace(v)).map(|(a, b)| a - b).fold(f64::INFINITY, f64::min)
    });
    let tolerance = 1e-9 + if exact.is_some() { 0.0 } else { 2.0 * (vals[1] - vals[0]).abs() };
    let holds = exact.unwrap_or(extrapolated) >= -tolerance;
    BoundaryCheck { widths, band_values: vals, extrapolated, exact, tolerance, holds }
}

/// `limsup_{∂Ω} |u_j - u| = 0`, uniformly over the given sequence.
pub fn boundary_limsup(seq: &[&ScalarField], u: &ScalarField) -> BoundaryCheck {
    let grid = u.grid();
    let h = grid.spacing();
    let widths = [h, 2.0 * h, 4.0 * h];
    let vals = widths.map(|w| {
        seq.iter()
            .map(|f| band_extreme(grid, w, |i| (f.value(i) - u.value(i)).abs(), true))
            .fold(0.0, f64::max)
    });
    let extrapolated = (2.0 * vals[0] - vals[1]).max(0.0);
    let exact = (u.source().is_some() && seq.iter().all(|f| f.source().is_some())).then(|| {
        let tu = boundary_trace(u);
        seq.iter()
            .map(|f| boundary_trace(f).iter().zip(&tu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max)
    });
    let tolerance = 1e-9 + 2.0 * (vals[1] - vals[0]).abs().min(1e-3);
    // uniformity: the band values themselves must shrink with the band
    let shrinking = vals[0] <= vals[2] + 1e-12 && vals[0] <= 10.0 * h.max(tolerance) + extrapolated;
    let holds = exact.unwrap_or(extrapolated) <= tolerance && extrapolated <= tolerance.max(4.0 * h) && shrinking;
    BoundaryCheck { widths, band_values: vals, extrapolated, exact, tolerance, holds }
}

fn same_grid(a: &ScalarField, b: &ScalarField) -> Result<()> {
    if Arc::ptr_eq(a.grid(), b.grid()) { Ok(()) } else { Err(Error::GridMismatch) }
}

/// The set `{z : margin(u(z), v(z)) > 0}`, exact for radial pairs about the
/// domain center and cellwise otherwise. A relative offset of `1e-9` keeps
/// sphere shells lying exactly on the boundary of the set outside it.
pub fn region_where<F>(u: &ScalarField, v: &ScalarField, margin: F) -> RegionMask
where
    F: Fn(f64, f64) -> f64 + Sync,
{
    let grid = u.grid().clone();
    let dom = grid.domain();
    let scale = 1.0 + [u.lower_bound(), u.upper_bound(), v.lower_bound(), v.upper_bound()]
        .iter()
        .filter(|x| x.is_finite())
        .fold(0.0f64, |a, b| a.max(b.abs()));
    let eta = 1e-9 * scale;
    if let (Some(pu), Some(pv), DomainKind::Ball) = (u.centered_radial(), v.centered_radial(), dom.kind) {
        let (lo, hi) = radial_range(&grid);
        let mut breaks = pu.kinks(lo, hi);
        breaks.extend(pv.kinks(lo, hi));
        let set = radial_superlevel(|s| margin(pu.jet(s, true).v, pv.jet(s, true).v) - eta, 0.0, dom.radius, &breaks);
        return RegionMask::radial(&grid, set.intersect(&RadialSet::ball(dom.radius)));
    }
    let members = grid.map(|i, _, _| !u.is_pole(i) && !v.is_pole(i) && margin(u.value(i), v.value(i)) > eta);
    RegionMask::from_members(&grid, members, None)
}

/// `(v - u)^n`, floored at 0.
struct GapPower<'a> {
    u: &'a ScalarField,
    v: &'a ScalarField,
    n: i32,
}

impl Weight for GapPower<'_> {
    fn at_cell(&self, _: &Grid, i: usize, _: &[f64; 4]) -> f64 {
        (self.v.value(i) - self.u.value(i)).max(0.0).powi(self.n)
    }
    fn at_point(&self, x: &[f64; 4]) -> f64 {
        (self.v.eval_at(x) - self.u.eval_at(x)).max(0.0).powi(self.n)
    }
}

/// `r - w`.
struct Shifted<'a> {
    r: f64,
    w: &'a ScalarField,
}

impl Weight for Shifted<'_> {
    fn at_cell(&self, _: &Grid, i: usize, _: &[f64; 4]) -> f64 {
        self.r - self.w.value(i)
    }
    fn at_point(&self, x: &[f64; 4]) -> f64 {
        self.r - self.w.eval_at(x)
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Lemma 1:
/// `(1/(n!)^2) ∫_{u<v} (v-u)^n dd^c w_1 ∧ ... ∧ dd^c w_n + ∫_{u<v} (r - w_1)(dd^c v)^n
///   ≤ ∫_{u<v} (r - w_1)(dd^c u)^n`.
pub fn verify_lemma1(u: &ScalarField, v: &ScalarField, w: &[&ScalarField], r: f64) -> Result<InequalityReport> {
    verify_lemma1_with(u, v, w, r, 0.0)
}

pub fn verify_lemma1_with(u: &ScalarField, v: &ScalarField, w: &[&ScalarField], r: f64, slack: f64) -> Result<InequalityReport> {
    same_grid(u, v)?;
    lemma1_inner(&Measured::new(u, v)?, w, r, slack)
}

/// A pair `(u, v)` with its Monge-Ampère measures, shared between checks.
struct Measured<'a> {
    u: &'a ScalarField,
    v: &'a ScalarField,
    mu_u: MAMeasure,
    mu_v: MAMeasure,
}

impl<'a> Measured<'a> {
    fn new(u: &'a ScalarField, v: &'a ScalarField) -> Result<Self> {
        same_grid(u, v)?;
        Ok(Measured { u, v, mu_u: ma_auto(u)?, mu_v: ma_auto(v)? })
    }
}

fn lemma1_inner(m: &Measured, w: &[&ScalarField], r: f64, slack: f64) -> Result<InequalityReport> {
    let (u, v) = (m.u, m.v);
    let n = u.grid().dim_complex();
    if !(r >= 1.0) {
        return Err(Error::InvalidParameter(format!("r must be at least 1, got {r}")));
    }
    if w.len() != n {
        return Err(Error::InvalidParameter(format!("need {n} functions w, got {}", w.len())));
    }
    for wi in w {
        same_grid(u, wi)?;
        if wi.lower_bound() < -1e-12 || wi.upper_bound() > 1.0 + 1e-12 {
            return Err(Error::InvalidParameter("w must take values in [0, 1]".into()));
        }
    }
    let bc = boundary_liminf(u, v);
    if !bc.holds {
        return Err(Error::Hypothesis(format!(
            "liminf of u - v at the boundary is {:.3e} < 0",
            bc.exact.unwrap_or(bc.extrapolated)
        )));
    }
    let set = region_where(u, v, |a, b| b - a);
    let (mu_u, mu_v) = (&m.mu_u, &m.mu_v);
    let mu_w = mixed_auto(w)?;
    let gap = GapPower { u, v, n: n as i32 };
    let shifted = Shifted { r, w: w[0] };
    let t1 = pair_on(&gap, &mu_w, Some(&set))? / factorial(n).powi(2);
    let t2 = pair_on(&shifted, mu_v, Some(&set))?;
    let rhs = pair_on(&shifted, mu_u, Some(&set))?;
    let mut terms = BTreeMap::new();
    terms.insert("gap_term".to_string(), t1);
    terms.insert("v_term".to_string(), t2);
    terms.insert("u_term".to_string(), rhs);
    Ok(InequalityReport::new(t1 + t2, rhs, slack, terms))
}

/// Comparison theorem: `∫_{u<v} (dd^c v)^n ≤ ∫_{u<v} (dd^c u)^n`.
pub fn verify_comparison(u: &ScalarField, v: &ScalarField) -> Result<InequalityReport> {
    verify_comparison_with(u, v, 0.0)
}

pub fn verify_comparison_with(u: &ScalarField, v: &ScalarField, slack: f64) -> Result<InequalityReport> {
    comparison_inner(&Measured::new(u, v)?, slack)
}

fn comparison_inner(m: &Measured, slack: f64) -> Result<InequalityReport> {
    let (u, v) = (m.u, m.v);
    let bc = boundary_liminf(u, v);
    if !bc.holds {
        return Err(Error::Hypothesis("liminf of u - v at the boundary is negative".into()));
    }
    let set = region_where(u, v, |a, b| b - a);
    let lhs = pair_on(&1.0, &m.mu_v, Some(&set))?;
    let rhs = pair_on(&1.0, &m.mu_u, Some(&set))?;
    let mut terms = BTreeMap::new();
    terms.insert("mass_v".to_string(), lhs);
    terms.insert("mass_u".to_string(), rhs);
    Ok(InequalityReport::new(lhs, rhs, slack, terms))
}

/// Lemma 2:
/// `C_n{|u - v| ≥ δ} ≤ (n!)^2 / ((1-k)^n δ^n) · ||μ_u - μ_v||_{|u-v| > kδ}`.
pub fn verify_lemma2(u: &ScalarField, v: &ScalarField, delta: f64, k: f64) -> Result<InequalityReport> {
    verify_lemma2_with(u, v, delta, k, 0.0)
}

pub fn verify_lemma2_with(u: &ScalarField, v: &ScalarField, delta: f64, k: f64, slack: f64) -> Result<InequalityReport> {
    lemma2_inner(&Measured::new(u, v)?, delta, k, slack)
}

fn lemma2_inner(m: &Measured, delta: f64, k: f64, slack: f64) -> Result<InequalityReport> {
    let (u, v) = (m.u, m.v);
    if !(k > 0.0 && k < 1.0) {
        return Err(Error::InvalidParameter(format!("k must lie in (0, 1), got {k}")));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
    }
    let bc = boundary_limsup(&[u], v);
    if !bc.holds {
        return Err(Error::Hypothesis("limsup of |u - v| at the boundary is not 0".into()));
    }
    let grid = u.grid();
    let n = grid.dim_complex();
    let full = RegionMask::full(grid);
    // `≥ δ`: the deviation set is taken just below δ
    let lhs = deviation_capacity(u, v, delta * (1.0 - 1e-8), &full, CapacityOrder::FullN)?;
    let set = region_where(u, v, |a, b| (a - b).abs() - k * delta);
    let tv = tv_distance(&m.mu_u, &m.mu_v, Some(&set))?;
    let factor = factorial(n).powi(2) / ((1.0 - k).powi(n as i32) * delta.powi(n as i32));
    let mut terms = BTreeMap::new();
    terms.insert("capacity".to_string(), lhs);
    terms.insert("tv".to_string(), tv);
    terms.insert("factor".to_string(), factor);
    Ok(InequalityReport::new(lhs, factor * tv, slack, terms))
}

/// `|lhs(r)/r - comparison lhs|` for each `r`: Lemma 1 divided by `r`
/// approaches the comparison theorem as `r → ∞`.
pub fn lemma1_degeneration(u: &ScalarField, v: &ScalarField, w: &[&ScalarField], rs: &[f64]) -> Result<Vec<f64>> {
    let cmp = verify_comparison(u, v)?;
    rs.iter().map(|&r| Ok((verify_lemma1(u, v, w, r)?.lhs / r - cmp.lhs).abs())).collect()
}

/// A named diagnostic along the sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
}

/// Verdict of a ladder: the diagnostic tends to 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub converges: bool,
    /// The δ (capacity) or tolerance (currents) at which it was decided.
    pub decided_at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub name: String,
    pub capacity_order: CapacityOrder,
    pub capacity: Vec<Series>,
    pub currents: Vec<Series>,
    pub converges_in_capacity: Verdict,
    pub converges_as_currents: Verdict,
    pub agree: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub experiment: String,
    pub indices: Vec<usize>,
    pub deltas: Vec<f64>,
    pub tolerance: f64,
    pub lanes: Vec<Lane>,
    /// Series reported for context; no verdict depends on them.
    pub diagnostics: Vec<Series>,
    /// Hypothesis and consistency checks by name.
    pub checks: BTreeMap<String, bool>,
    pub notes: Vec<String>,
}

impl ConvergenceReport {
    /// Recompute every verdict from the stored series.
    pub fn recomputed(&self) -> Vec<(Verdict, Verdict)> {
        self.lanes
            .iter()
            .map(|l| {
                (
                    ladder_verdict(&self.indices, &l.capacity, &self.deltas, self.tolerance),
                    currents_verdict(&self.indices, &l.currents, self.tolerance),
                )
            })
            .collect()
    }

    pub fn verdicts_consistent(&self) -> bool {
        self.lanes
            .iter()
            .zip(self.recomputed())
            .all(|(l, (c, w))| l.converges_in_capacity == c && l.converges_as_currents == w)
    }
}

fn loglog_slope(indices: &[usize], values: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = indices
        .iter()
        .zip(values)
        .filter(|(_, v)| **v > 0.0)
        .map(|(&j, &v)| ((j as f64).ln(), v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

/// Least-squares slope of `ln value` against `ln index` over positive values.
pub fn decay_rate(indices: &[usize], values: &[f64]) -> Option<f64> {
    loglog_slope(indices, values)
}

/// Whether a diagnostic tends to 0 on the ladder: its tail (last third, at
/// least two points) is non-increasing within `tol`, and either the last
/// value is below `tol` or the tail decays at least like `j^{-1/2}`.
pub fn tends_to_zero(indices: &[usize], values: &[f64], tol: f64) -> bool {
    let Some(&last) = values.last() else { return true };
    if !last.is_finite() {
        return false;
    }
    let m = values.len();
    let start = m - (m / 3).max(2).min(m);
    let tail = &values[start..];
    let non_increasing = tail.windows(2).all(|w| w[1] <= w[0] + tol);
    if !non_increasing {
        return false;
    }
    if last < tol {
        return true;
    }
    matches!(loglog_slope(&indices[start..], tail), Some(s) if s <= -0.5)
}

fn ladder_verdict(indices: &[usize], series: &[Series], deltas: &[f64], tol: f64) -> Verdict {
    for (s, d) in series.iter().zip(deltas) {
        if !tends_to_zero(indices, &s.values, tol) {
            return Verdict { converges: false, decided_at: *d };
        }
    }
    Verdict { converges: true, decided_at: deltas.last().copied().unwrap_or(0.0) }
}

fn currents_verdict(indices: &[usize], series: &[Series], tol: f64) -> Verdict {
    Verdict { converges: series.iter().all(|s| tends_to_zero(indices, &s.values, tol)), decided_at: tol }
}

fn make_lane(name: &str, order: CapacityOrder, capacity: Vec<Series>, currents: Vec<Series>, indices: &[usize], deltas: &[f64], tol: f64) -> Lane {
    let c = ladder_verdict(indices, &capacity, deltas, tol);
    let w = currents_verdict(indices, &currents, tol);
    Lane {
        name: name.to_string(),
        capacity_order: order,
        capacity,
        currents,
        converges_in_capacity: c,
        converges_as_currents: w,
        agree: c.converges == w.converges,
    }
}

#[derive(Debug, Clone)]
pub struct ConvergenceOptions {
    pub deltas: Vec<f64>,
    pub tolerance_floor: f64,
    /// Compute the refinement gap of the limit's pairings on the grid of half
    /// the resolution; otherwise the tolerance is the floor.
    pub use_refinement_gap: bool,
}

impl Default for ConvergenceOptions {
    fn default() -> Self {
        ConvergenceOptions { deltas: DELTA_LADDER.to_vec(), tolerance_floor: 1e-6, use_refinement_gap: true }
    }
}

/// `max_φ |∫φ (dd^c u)^n|_h - ∫φ (dd^c u)^n|_{2h}|` over the bank, for a
/// limit with a closed-form source.
pub fn refinement_gap_of(u: &ScalarField, bank: &TestFunctionBank) -> Result<f64> {
    let Some(model) = u.model() else { return Ok(0.0) };
    let grid = u.grid();
    let coarse_res = grid.resolution() / 2;
    if coarse_res < crate::grid::MIN_RESOLUTION {
        return Ok(0.0);
    }
    let coarse = make_grid(grid.domain(), coarse_res)?;
    let uc = sample(model, &coarse)?;
    let (m, mc) = (ma_auto(u)?, ma_auto(&uc)?);
    let mut gap: f64 = 0.0;
    for b in &bank.bumps {
        gap = gap.max((pair_on(b, &m, None)? - pair_on(b, &mc, None)?).abs());
    }
    Ok(gap)
}

fn tolerance_for(u: &ScalarField, bank: &TestFunctionBank, opts: &ConvergenceOptions) -> Result<f64> {
    let gap = if opts.use_refinement_gap { refinement_gap_of(u, bank)? } else { 0.0 };
    Ok((10.0 * gap).max(opts.tolerance_floor))
}

fn capacity_series(seq: &[ScalarField], u: &ScalarField, e: &RegionMask, order: CapacityOrder, deltas: &[f64]) -> Result<Vec<Series>> {
    deltas
        .iter()
        .map(|&d| {
            let values = seq.iter().map(|f| deviation_capacity(f, u, d, e, order)).collect::<Result<Vec<_>>>()?;
            Ok(Series { name: format!("delta={d}"), values })
        })
        .collect()
}

/// `|∫φ a dμ_j - ∫φ b dμ|` per bump, as series over the sequence.
fn pairing_series<W>(bank: &TestFunctionBank, prefix: &str, count: usize, lhs: W, rhs: TargetFn<'_>) -> Result<Vec<Series>>
where
    W: Fn(usize, &Bump) -> Result<f64>,
{
    bank.bumps
        .iter()
        .map(|b| {
            let target = rhs(b)?;
            let values = (0..count).map(|j| Ok((lhs(j, b)? - target).abs())).collect::<Result<Vec<_>>>()?;
            Ok(Series { name: format!("{prefix}:{}", b.name), values })
        })
        .collect()
}

type TargetFn<'a> = &'a dyn Fn(&Bump) -> Result<f64>;

fn measures(seq: &[ScalarField]) -> Result<Vec<MAMeasure>> {
    seq.iter().map(ma_auto).collect()
}

/// Theorem 1: convergence in `C_{n-1}` (resp. `C_n`) capacity implies
/// `(dd^c u_j)^n → (dd^c u)^n` (resp. `u_j (dd^c u_j)^n → u (dd^c u)^n`).
pub fn theorem1_experiment(
    seq: &[ScalarField],
    indices: &[usize],
    u: &ScalarField,
    e: &RegionMask,
    order: CapacityOrder,
    opts: &ConvergenceOptions,
) -> Result<ConvergenceReport> {
    if seq.len() != indices.len() {
        return Err(Error::InvalidParameter("indices and sequence differ in length".into()));
    }
    let grid = u.grid();
    let bank = TestFunctionBank::standard(grid)?;
    let tol = tolerance_for(u, &bank, opts)?;
    let mus = measures(seq)?;
    let mu = ma_auto(u)?;
    let capacity = capacity_series(seq, u, e, order, &opts.deltas)?;
    let currents = match order {
        CapacityOrder::InnerNMinus1 => pairing_series(&bank, "weak", seq.len(), |j, b| pair_on(b, &mus[j], None), &|b| pair_on(b, &mu, None))?,
        CapacityOrder::FullN => pairing_series(
            &bank,
            "weighted",
            seq.len(),
            |j, b| pair_on(&Product(b, &seq[j]), &mus[j], None),
            &|b| pair_on(&Product(b, u), &mu, None),
        )?,
    };
    let lane = make_lane("theorem1", order, capacity, currents, indices, &opts.deltas, tol);
    let mut checks = BTreeMap::new();
    let implication = !lane.converges_in_capacity.converges || lane.converges_as_currents.converges;
    checks.insert("implication_holds".to_string(), implication);
    let mut notes = Vec::new();
    if !lane.converges_in_capacity.converges {
        notes.push("hypothesis fails, conclusion not implied".to_string());
    }
    Ok(ConvergenceReport {
        experiment: "theorem1".into(),
        indices: indices.to_vec(),
        deltas: opts.deltas.clone(),
        tolerance: tol,
        lanes: vec![lane],
        diagnostics: Vec::new(),
        checks,
        notes,
    })
}

/// Theorem 2 for `u_j = u` off `E`: the four equivalences, each lane
/// reporting the capacity verdict next to the current verdict.
pub fn theorem2_experiment(
    seq: &[ScalarField],
    indices: &[usize],
    u: &ScalarField,
    e: &RegionMask,
    opts: &ConvergenceOptions,
) -> Result<ConvergenceReport> {
    if seq.len() != indices.len() {
        return Err(Error::InvalidParameter("indices and sequence differ in length".into()));
    }
    let grid = u.grid().clone();
    let n = grid.dim_complex();
    for f in seq {
        same_grid(f, u)?;
        let off_e = (0..grid.len()).any(|i| !e.contains(i) && (f.value(i) - u.value(i)).abs() > 1e-12);
        if off_e {
            return Err(Error::Hypothesis("u_j differs from u outside E".into()));
        }
    }
    let bank = TestFunctionBank::standard(&grid)?;
    let tol = tolerance_for(u, &bank, opts)?;
    let full = RegionMask::full(&grid);
    let mus = measures(seq)?;
    let mu = ma_auto(u)?;
    let count = seq.len();
    let cap_n = capacity_series(seq, u, &full, CapacityOrder::FullN, &opts.deltas)?;
    let cap_n1 = capacity_series(seq, u, &full, CapacityOrder::InnerNMinus1, &opts.deltas)?;
    let mut lanes = Vec::new();

    // (i) u_j (dd^c u_j)^n, u (dd^c u_j)^n, u_j (dd^c u)^n
    let target_i = |b: &Bump| pair_on(&Product(b, u), &mu, None);
    let mut cur = pairing_series(&bank, "u_j*mu_j", count, |j, b| pair_on(&Product(b, &seq[j]), &mus[j], None), &target_i)?;
    cur.extend(pairing_series(&bank, "u*mu_j", count, |j, b| pair_on(&Product(b, u), &mus[j], None), &target_i)?);
    cur.extend(pairing_series(&bank, "u_j*mu", count, |j, b| pair_on(&Product(b, &seq[j]), &mu, None), &target_i)?);
    lanes.push(make_lane("i", CapacityOrder::FullN, cap_n, cur, indices, &opts.deltas, tol));

    // (ii) (dd^c u_j)^n, (dd^c u_j)^{n-1} ∧ dd^c u, (dd^c u)^{n-1} ∧ dd^c u_j
    let target = |b: &Bump| pair_on(b, &mu, None);
    let mixed_a: Vec<MAMeasure> = seq
        .iter()
        .map(|f| {
            let mut fs: Vec<&ScalarField> = vec![f; n - 1];
            fs.push(u);
            mixed_auto(&fs)
        })
        .collect::<Result<_>>()?;
    let mixed_b: Vec<MAMeasure> = seq
        .iter()
        .map(|f| {
            let mut fs: Vec<&ScalarField> = vec![u; n - 1];
            fs.push(f);
            mixed_auto(&fs)
        })
        .collect::<Result<_>>()?;
    let mut cur = pairing_series(&bank, "mu_j", count, |j, b| pair_on(b, &mus[j], None), &target)?;
    cur.extend(pairing_series(&bank, "mixed_j_u", count, |j, b| pair_on(b, &mixed_a[j], None), &target)?);
    cur.extend(pairing_series(&bank, "mixed_u_j", count, |j, b| pair_on(b, &mixed_b[j], None), &target)?);
    lanes.push(make_lane("ii", CapacityOrder::InnerNMinus1, cap_n1.clone(), cur, indices, &opts.deltas, tol));

    // (iii) n = 2: (dd^c u_j)^2 and L^1 convergence
    if n == 2 {
        let mut cur = pairing_series(&bank, "mu_j", count, |j, b| pair_on(b, &mus[j], None), &target)?;
        let vol = grid.cell_volume();
        let l1: Vec<f64> = seq
            .iter()
            .map(|f| grid.sum(|i, _, _| if grid.is_interior(i) { (f.value(i) - u.value(i)).abs() } else { 0.0 }) * vol)
            .collect();
        cur.push(Series { name: "l1".into(), values: l1 });
        lanes.push(make_lane("iii", CapacityOrder::InnerNMinus1, cap_n1.clone(), cur, indices, &opts.deltas, tol));
    }

    // (iv) one-sided sequences: (dd^c u_j)^n alone
    let one_sided = seq.iter().all(|f| {
        let above = (0..grid.len()).all(|i| f.value(i) >= u.value(i) - 1e-12);
        let below = (0..grid.len()).all(|i| f.value(i) <= u.value(i) + 1e-12);
        above || below
    });
    if one_sided {
        let cur = pairing_series(&bank, "mu_j", count, |j, b| pair_on(b, &mus[j], None), &target)?;
        lanes.push(make_lane("iv", CapacityOrder::InnerNMinus1, cap_n1, cur, indices, &opts.deltas, tol));
    }
    let mut checks = BTreeMap::new();
    checks.insert("equal_off_e".to_string(), true);
    checks.insert("one_sided".to_string(), one_sided);
    checks.insert("all_lanes_agree".to_string(), lanes.iter().all(|l| l.agree));
    Ok(ConvergenceReport {
        experiment: "theorem2".into(),
        indices: indices.to_vec(),
        deltas: opts.deltas.clone(),
        tolerance: tol,
        lanes,
        diagnostics: Vec::new(),
        checks,
        notes: Vec::new(),
    })
}

/// Theorem 3: uniform boundary vanishing and `tv → 0` on every compact set
/// give convergence in capacity.
pub fn theorem3_experiment(
    seq: &[ScalarField],
    indices: &[usize],
    u: &ScalarField,
    mode: CapacityOrder,
    opts: &ConvergenceOptions,
) -> Result<ConvergenceReport> {
    if seq.len() != indices.len() {
        return Err(Error::InvalidParameter("indices and sequence differ in length".into()));
    }
    let grid = u.grid().clone();
    let bank = TestFunctionBank::standard(&grid)?;
    let tol = tolerance_for(u, &bank, opts)?;
    let refs: Vec<&ScalarField> = seq.iter().collect();
    let boundary = boundary_limsup(&refs, u);
    let mus = measures(seq)?;
    let mu = ma_auto(u)?;
    let dom = grid.domain();
    let exhaustion: Vec<(String, RegionMask)> = if dom.kind == DomainKind::Ball {
        [0.5, 0.75, 0.9]
            .iter()
            .map(|f| (format!("tv:ball_{f}"), RegionMask::radial(&grid, RadialSet::ball(f * dom.radius))))
            .collect()
    } else {
        [1, 2, 4]
            .iter()
            .map(|w| (format!("tv:eroded_{w}"), RegionMask::full(&grid).compact_part().erode(*w)))
            .collect()
    };
    let mut tv_series = Vec::new();
    for (name, region) in &exhaustion {
        let values = mus.iter().map(|m| tv_distance(m, &mu, Some(region))).collect::<Result<Vec<_>>>()?;
        tv_series.push(Series { name: name.clone(), values });
    }
    let whole = Series {
        name: "tv:omega".into(),
        values: mus.iter().map(|m| tv_distance(m, &mu, None)).collect::<Result<Vec<_>>>()?,
    };
    let tv_holds = tv_series.iter().all(|s| tends_to_zero(indices, &s.values, tol));
    let full = RegionMask::full(&grid);
    let capacity = capacity_series(seq, u, &full, mode, &opts.deltas)?;
    let mut lane = make_lane("theorem3", mode, capacity, tv_series, indices, &opts.deltas, tol);
    lane.agree = lane.converges_in_capacity.converges == (tv_holds && boundary.holds);
    let mut checks = BTreeMap::new();
    checks.insert("boundary_uniform_vanishing".to_string(), boundary.holds);
    checks.insert("tv_on_compacts".to_string(), tv_holds);
    let hypotheses = boundary.holds && tv_holds;
    checks.insert("conclusion_holds".to_string(), !hypotheses || lane.converges_in_capacity.converges);
    let mut notes = Vec::new();
    if mode == CapacityOrder::InnerNMinus1 {
        notes.push("inner capacity mode mirrors the full formulation".into());
    }
    notes.push(format!(
        "boundary bands {:?}: {:?}, extrapolated {:.3e}",
        boundary.widths, boundary.band_values, boundary.extrapolated
    ));
    Ok(ConvergenceReport {
        experiment: "theorem3".into(),
        indices: indices.to_vec(),
        deltas: opts.deltas.clone(),
        tolerance: tol,
        lanes: vec![lane],
        diagnostics: vec![whole],
        checks,
        notes,
    })
}

/// Per-index rows of the boundary counterexample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleRow {
    pub j: usize,
    pub deviation_capacity: f64,
    pub closed_form: f64,
    pub max_pairing_gap: f64,
    pub pairing_gaps: BTreeMap<String, f64>,
    pub boundary_trace_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleReport {
    pub delta: f64,
    pub rows: Vec<CounterexampleRow>,
    pub capacities_growing: bool,
    pub weak_gaps_vanish: bool,
}

/// `u_j = max(j ln|z|, -1)` against `u = 0`: zero boundary values, shells
/// escaping every compact set, and deviation capacities `(2πj/δ)^n`.
pub fn boundary_counterexample(grid: &Arc<Grid>, j_list: &[usize], delta: f64) -> Result<CounterexampleReport> {
    if j_list.is_empty() {
        return Err(Error::InvalidParameter("j_list must be nonempty".into()));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
    }
    let n = grid.dim_complex();
    let zero = sample(&parse_model("0")?, grid)?;
    let bank = TestFunctionBank::standard(grid)?;
    let full = RegionMask::full(grid);
    let rows = exec::map_items(j_list, |&j| -> Result<CounterexampleRow> {
        let uj = sample(&parse_model(&format!("max({j}*log(abs(z)), -1)"))?, grid)?;
        let cap = deviation_capacity(&uj, &zero, delta, &full, CapacityOrder::FullN)?;
        let closed = if delta < 1.0 { (2.0 * std::f64::consts::PI * j as f64 / delta).powi(n as i32) } else { 0.0 };
        let mu = ma_auto(&uj)?;
        let mut gaps = BTreeMap::new();
        for b in &bank.bumps {
            gaps.insert(b.name.clone(), pair_on(b, &mu, None)?.abs());
        }
        let max_gap = gaps.values().fold(0.0f64, |a, b| a.max(*b));
        let trace = boundary_trace(&uj).iter().fold(0.0f64, |a, b| a.max(b.abs()));
        Ok(CounterexampleRow { j, deviation_capacity: cap, closed_form: closed, max_pairing_gap: max_gap, pairing_gaps: gaps, boundary_trace_max: trace })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let capacities_growing = rows.windows(2).all(|w| w[1].deviation_capacity >= w[0].deviation_capacity);
    let weak_gaps_vanish = rows.last().map(|r| r.max_pairing_gap == 0.0).unwrap_or(true);
    Ok(CounterexampleReport { delta, rows, capacities_growing, weak_gaps_vanish })
}

/// One randomized admissible case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryCase {
    pub resolution: usize,
    pub u: String,
    pub v: String,
    pub w: String,
    pub r: f64,
    pub lemma1: InequalityReport,
    pub comparison: InequalityReport,
    /// `(δ, k, report)`.
    pub lemma2: Vec<(f64, f64, InequalityReport)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryReport {
    pub seed: u64,
    pub draws: usize,
    pub resolutions: Vec<usize>,
    pub lemma1_failures: usize,
    pub comparison_failures: usize,
    pub lemma2_failures: usize,
    pub cases: Vec<BatteryCase>,
}

fn coef(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo..hi) * 1000.0).round() / 1000.0
}

/// A psh radial function about the origin vanishing on the unit sphere.
pub fn draw_model(rng: &mut ChaCha8Rng) -> String {
    let c = coef(rng, 0.2, 2.0);
    let a = coef(rng, 0.5, 3.0);
    let b = coef(rng, 0.3, 1.5);
    match rng.gen_range(0..4) {
        0 => format!("{c}*(abs2(z) - 1)"),
        1 => format!("max({a}*log(abs(z)), -{b})"),
        2 => format!("max({c}*(abs2(z) - 1), {a}*log(abs(z)))"),
        _ => format!("{c}*(abs2(z) - 1) + max({a}*log(abs(z)), -{b})"),
    }
}

struct Draw {
    u: String,
    v: String,
    w: String,
    r: f64,
}

fn draw(rng: &mut ChaCha8Rng) -> Draw {
    let u = draw_model(rng);
    let v = draw_model(rng);
    let alpha = coef(rng, 0.0, 0.5);
    let beta = coef(rng, 0.0, 0.5);
    let r = [1.0, 2.0, 5.0][rng.gen_range(0..3)];
    Draw { u, v, w: format!("{alpha}*abs2(z) + {beta}"), r }
}

struct Sides {
    lemma1: InequalityReport,
    comparison: InequalityReport,
    lemma2: Vec<(f64, f64, InequalityReport)>,
}

const LEMMA2_GRID: [(f64, f64); 6] = [(0.25, 0.25), (0.25, 0.5), (0.25, 0.75), (0.5, 0.25), (0.5, 0.5), (0.5, 0.75)];

fn evaluate(d: &Draw, grid: &Arc<Grid>) -> Result<Sides> {
    let n = grid.dim_complex();
    let u = sample(&parse_model(&d.u)?, grid)?.memoized();
    let v = sample(&parse_model(&d.v)?, grid)?.memoized();
    let w = sample(&parse_model(&d.w)?, grid)?;
    let ws: Vec<&ScalarField> = vec![&w; n];
    let m = Measured::new(&u, &v)?;
    let lemma1 = lemma1_inner(&m, &ws, d.r, 0.0)?;
    let comparison = comparison_inner(&m, 0.0)?;
    let lemma2 = LEMMA2_GRID
        .iter()
        .map(|&(delta, k)| Ok((delta, k, lemma2_inner(&m, delta, k, 0.0)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Sides { lemma1, comparison, lemma2 })
}

fn gap_slack(fine: &InequalityReport, coarse: &InequalityReport) -> f64 {
    let gap = (fine.lhs - coarse.lhs).abs().max((fine.rhs - coarse.rhs).abs());
    3.0 * gap + 1e-9 * (1.0 + fine.lhs.abs() + fine.rhs.abs())
}

/// Randomized admissible battery for Lemma 1, Lemma 2 and the comparison
/// theorem at each resolution, with slack `3 · refinement gap` taken against
/// the grid of half the resolution.
pub fn randomized_battery(domain: &Domain, seed: u64, draws: usize, resolutions: &[usize]) -> Result<BatteryReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let list: Vec<Draw> = (0..draws).map(|_| draw(&mut rng)).collect();
    let mut cases = Vec::new();
    for &res in resolutions {
        let fine = make_grid(domain, res)?;
        let coarse = make_grid(domain, res / 2)?;
        let results = exec::map_items(&list, |d| -> Result<BatteryCase> {
            let f = evaluate(d, &fine)?;
            let c = evaluate(d, &coarse)?;
            let lemma1 = f.lemma1.clone().with_slack(gap_slack(&f.lemma1, &c.lemma1));
            let comparison = f.comparison.clone().with_slack(gap_slack(&f.comparison, &c.comparison));
            let lemma2 = f
                .lemma2
                .iter()
                .zip(&c.lemma2)
                .map(|(a, b)| (a.0, a.1, a.2.clone().with_slack(gap_slack(&a.2, &b.2))))
                .collect();
            Ok(BatteryCase { resolution: res, u: d.u.clone(), v: d.v.clone(), w: d.w.clone(), r: d.r, lemma1, comparison, lemma2 })
        });
        for r in results {
            cases.push(r?);
        }
    }
    Ok(BatteryReport {
        seed,
        draws,
        resolutions: resolutions.to_vec(),
        lemma1_failures: cases.iter().filter(|c| !c.lemma1.pass).count(),
        comparison_failures: cases.iter().filter(|c| !c.comparison.pass).count(),
        lemma2_failures: cases.iter().map(|c| c.lemma2.iter().filter(|x| !x.2.pass).count()).sum(),
        cases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(n: usize, res: usize) -> Arc<Grid> {
        make_grid(&Domain::unit_ball(n).unwrap(), res).unwrap()
    }

    fn field(g: &Arc<Grid>, text: &str) -> ScalarField {
        sample(&parse_model(text).unwrap(), g).unwrap()
    }

    #[test]
    fn lemma1_example() {
        let g = grid(1, 256);
        let u = field(&g, "abs2(z) - 1");
        let v = field(&g, "(abs2(z) - 1)/2");
        let w = field(&g, "abs2(z)/2 + 0.25");
        let rep = verify_lemma1(&u, &v, &[&w], 1.0).unwrap();
        assert!((rep.lhs - 1.5 * PI).abs() < 0.02 * 1.5 * PI, "{rep:?}");
        assert!((rep.rhs - 2.0 * PI).abs() < 0.02 * 2.0 * PI);
        assert!(rep.pass);
        let same = verify_lemma1(&u, &u, &[&w], 1.0).unwrap();
        assert_eq!((same.lhs, same.rhs), (0.0, 0.0));
        assert!(matches!(verify_lemma1(&u, &v, &[&w], 0.5), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn comparison_examples() {
        let g = grid(1, 128);
        let u = field(&g, "abs2(z) - 1");
        let v = field(&g, "(abs2(z) - 1)/2");
        let rep = verify_comparison(&u, &v).unwrap();
        assert!((rep.lhs - 2.0 * PI).abs() < 0.03 * 2.0 * PI);
        assert!((rep.rhs - 4.0 * PI).abs() < 0.03 * 4.0 * PI);
        let u = field(&g, "max(log(abs(z)), -1)");
        let v = field(&g, "max(log(abs(z)), -0.5)");
        let rep = verify_comparison(&u, &v).unwrap();
        assert_eq!(rep.lhs, 0.0);
        assert!((rep.rhs - 2.0 * PI).abs() < 1e-9);
        // boundary hypothesis violated
        let w = field(&g, "abs2(z) - 2");
        assert!(matches!(verify_comparison(&w, &u), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn lemma2_example() {
        let g = grid(1, 128);
        let u = field(&g, "0");
        let v = field(&g, "max(log(abs(z)), -1)");
        let rep = verify_lemma2(&u, &v, 0.5, 0.5).unwrap();
        assert!((rep.lhs - 4.0 * PI).abs() < 1e-6, "{rep:?}");
        assert!((rep.rhs - 8.0 * PI).abs() < 1e-9);
        assert!(rep.pass);
        assert!(verify_lemma2(&u, &v, 0.5, 1.0).is_err());
        let same = verify_lemma2(&v, &v, 0.5, 0.5).unwrap();
        assert_eq!((same.lhs, same.rhs), (0.0, 0.0));
    }

    #[test]
    fn degeneration_to_comparison() {
        let g = grid(1, 64);
        let u = field(&g, "abs2(z) - 1");
        let v = field(&g, "max(log(abs(z)), -0.5)");
        let w = field(&g, "0.3*abs2(z) + 0.1");
        let d = lemma1_degeneration(&u, &v, &[&w], &[1.0, 10.0, 100.0]).unwrap();
        assert!(d[1] < d[0] && d[2] < d[1], "{d:?}");
    }

    #[test]
    fn tends_to_zero_rules() {
        let idx = [1, 2, 4, 8, 16];
        assert!(tends_to_zero(&idx, &[1.0, 0.5, 0.25, 0.125, 0.0625], 1e-6));
        assert!(tends_to_zero(&idx, &[1.0, 1.0, 0.0, 0.0, 0.0], 1e-6));
        assert!(!tends_to_zero(&idx, &[1.0, 2.0, 4.0, 8.0, 16.0], 1e-6));
        assert!(!tends_to_zero(&idx, &[1.0, 1.0, 1.0, 1.0, 1.0], 1e-6));
        let slope = decay_rate(&idx, &[1.0, 0.5, 0.25, 0.125, 0.0625]).unwrap();
        assert!((slope + 1.0).abs() < 1e-12);
    }

    #[test]
    fn counterexample_rows() {
        let g = grid(1, 64);
        let rep = boundary_counterexample(&g, &[1, 2, 4, 8, 16], 0.5).unwrap();
        for row in &rep.rows {
            assert!((row.deviation_capacity - row.closed_form).abs() < 0.02 * row.closed_form);
            assert!(row.boundary_trace_max < 1e-12);
        }
        assert!(rep.capacities_growing && rep.weak_gaps_vanish);
        let empty = boundary_counterexample(&g, &[1, 2], 2.0).unwrap();
        assert!(empty.rows.iter().all(|r| r.deviation_capacity == 0.0));
    }

    #[test]
    fn theorem1_monotone_and_counterexample() {
        let g = grid(1, 64);
        let u = field(&g, "abs2(z) - 1");
        let idx = vec![1, 2, 4, 8, 16, 32];
        let seq: Vec<ScalarField> = idx.iter().map(|j| field(&g, &format!("{}*(abs2(z) - 1)", 1.0 + 1.0 / *j as f64))).collect();
        let e = RegionMask::ball(&g, 0.9);
        let rep = theorem1_experiment(&seq, &idx, &u, &e, CapacityOrder::InnerNMinus1, &ConvergenceOptions::default()).unwrap();
        let lane = &rep.lanes[0];
        assert!(lane.converges_in_capacity.converges && lane.converges_as_currents.converges);
        assert!(rep.verdicts_consistent());
        let gaps: Vec<f64> = (0..idx.len()).map(|j| lane.currents.iter().map(|s| s.values[j]).fold(0.0, f64::max)).collect();
        assert!((decay_rate(&idx, &gaps).unwrap() + 1.0).abs() < 0.15);

        let zero = field(&g, "0");
        let idx = vec![1, 2, 4, 8, 16];
        let seq: Vec<ScalarField> = idx.iter().map(|j| field(&g, &format!("max({j}*log(abs(z)), -1)"))).collect();
        let rep = theorem1_experiment(&seq, &idx, &zero, &RegionMask::full(&g), CapacityOrder::InnerNMinus1, &ConvergenceOptions::default()).unwrap();
        let lane = &rep.lanes[0];
        assert!(!lane.converges_in_capacity.converges);
        assert!(lane.converges_as_currents.converges);
        assert!(rep.checks["implication_holds"]);
    }

    #[test]
    fn theorem3_examples() {
        let g = grid(1, 64);
        let u = field(&g, "abs2(z) - 1");
        let idx = vec![1, 2, 4, 8, 16, 32];
        let seq: Vec<ScalarField> = idx.iter().map(|j| field(&g, &format!("{}*(abs2(z) - 1)", 1.0 + 1.0 / *j as f64))).collect();
        let rep = theorem3_experiment(&seq, &idx, &u, CapacityOrder::FullN, &ConvergenceOptions::default()).unwrap();
        assert!(rep.checks["boundary_uniform_vanishing"] && rep.checks["tv_on_compacts"]);
        assert!(rep.lanes[0].converges_in_capacity.converges);
        assert!(rep.checks["conclusion_holds"]);

        let zero = field(&g, "0");
        let idx = vec![1, 2, 4, 8, 16];
        let seq: Vec<ScalarField> = idx.iter().map(|j| field(&g, &format!("max({j}*log(abs(z)), -1)"))).collect();
        let rep = theorem3_experiment(&seq, &idx, &zero, CapacityOrder::FullN, &ConvergenceOptions::default()).unwrap();
        assert!(!rep.checks["boundary_uniform_vanishing"]);
        assert!(!rep.lanes[0].converges_in_capacity.converges);
        assert!(rep.checks["conclusion_holds"]);
    }

    fn bump_laplacian_extremes(radius: f64) -> (f64, f64) {
        let p = crate::measure::bump_profile;
        let (mut lo, mut hi) = (0.0f64, 0.0f64);
        let e = 1e-5;
        for k in 1..4000 {
            let t = k as f64 / 4000.0;
            let d2 = (p(t + e) - 2.0 * p(t) + p(t - e)) / (e * e);
            let d1 = (p(t + e) - p(t - e)) / (2.0 * e);
            let lap = (d2 + d1 / t) / (radius * radius);
            lo = lo.min(lap);
            hi = hi.max(lap);
        }
        (lo, hi)
    }

    #[test]
    fn theorem2_bump_sequences() {
        let g = grid(1, 64);
        let u = field(&g, "abs2(z) - 1");
        let (lo, hi) = bump_laplacian_extremes(0.8);
        // u + aψ is psh for a·max(-Δψ) ≤ 4; u - aψ only for a ≤ 4/max Δψ < 1/8
        assert!(4.0 / hi < 0.13);
        let amp = 0.3;
        assert!(amp * -lo <= 4.0);
        let bump = |x: &[f64; 4]| crate::measure::bump_profile((x[0] * x[0] + x[1] * x[1]).sqrt() / 0.8);
        let make = |a: f64| ScalarField::from_fn(&g, |x| x[0] * x[0] + x[1] * x[1] - 1.0 + a * bump(x));
        let e = RegionMask::ball(&g, 0.9);
        let idx = vec![1, 2, 4, 8, 16, 32];
        let seq: Vec<ScalarField> = idx.iter().map(|j| make(amp / *j as f64)).collect();
        let rep = theorem2_experiment(&seq, &idx, &u, &e, &ConvergenceOptions::default()).unwrap();
        for lane in &rep.lanes {
            assert!(lane.converges_in_capacity.converges && lane.converges_as_currents.converges, "{}", lane.name);
        }
        assert!(rep.checks["one_sided"] && rep.checks["all_lanes_agree"]);

        let fixed: Vec<ScalarField> = idx.iter().map(|_| make(amp)).collect();
        let rep = theorem2_experiment(&fixed, &idx, &u, &e, &ConvergenceOptions::default()).unwrap();
        for lane in &rep.lanes {
            assert!(!lane.converges_in_capacity.converges && !lane.converges_as_currents.converges, "{}", lane.name);
        }
        let off = vec![field(&g, "2*(abs2(z) - 1)")];
        assert!(matches!(theorem2_experiment(&off, &[1], &u, &e, &ConvergenceOptions::default()), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn small_battery_passes() {
        let dom = Domain::unit_ball(1).unwrap();
        let rep = randomized_battery(&dom, 7, 12, &[32]).unwrap();
        assert_eq!(rep.cases.len(), 12);
        assert_eq!(rep.lemma1_failures + rep.comparison_failures + rep.lemma2_failures, 0, "{:#?}", rep.cases.iter().filter(|c| !c.lemma1.pass || !c.comparison.pass || c.lemma2.iter().any(|x| !x.2.pass)).collect::<Vec<_>>());
    }
}
