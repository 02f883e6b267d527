//! Complex Monge-Ampère measures.
//!
//! With `d^c = i(dbar - d)` one has `dd^c = 2i d dbar`, so for smooth `u` the
//! measure `(dd^c u)^n` has density `4^n n! det(u_{j kbar})` with respect to
//! Lebesgue measure. A [`MAMeasure`] stores that density per cell plus a list
//! of singular parts (sphere shells and atoms) that a cell density cannot
//! represent.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::field::ScalarField;
use crate::grid::{DomainKind, Grid, Lattice, RegionMask};
use crate::model::{Model, Node};
use crate::psh::check_psh;
use crate::radial::{self, RadialProfile};

/// Fraction of clamped cells above which a singularity warning is raised.
pub const CLAMP_WARNING_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SingularPart {
    SphereShell { center: [f64; 4], radius: f64, total_mass: f64 },
    Atom { point: [f64; 4], mass: f64 },
}

impl SingularPart {
    pub fn mass(&self) -> f64 {
        match self {
            SingularPart::SphereShell { total_mass, .. } => *total_mass,
            SingularPart::Atom { mass, .. } => *mass,
        }
    }

    fn center(&self) -> [f64; 4] {
        match self {
            SingularPart::SphereShell { center, .. } => *center,
            SingularPart::Atom { point, .. } => *point,
        }
    }

    fn radius(&self) -> f64 {
        match self {
            SingularPart::SphereShell { radius, .. } => *radius,
            SingularPart::Atom { .. } => 0.0,
        }
    }

    fn same_kind(&self, other: &SingularPart) -> bool {
        matches!(
            (self, other),
            (SingularPart::SphereShell { .. }, SingularPart::SphereShell { .. })
                | (SingularPart::Atom { .. }, SingularPart::Atom { .. })
        )
    }
}

/// Quadrature points on the sphere `|z - c| = r` in C^n, equally weighted.
pub fn shell_points(center: &[f64; 4], radius: f64, n: usize) -> Vec<[f64; 4]> {
    let mut out = Vec::new();
    if n == 1 {
        let m = 256;
        for k in 0..m {
            let t = 2.0 * PI * (k as f64 + 0.5) / m as f64;
            out.push([center[0] + radius * t.cos(), center[1] + radius * t.sin(), 0.0, 0.0]);
        }
    } else {
        // |z1|^2 = r^2 t with t uniform under the normalized sphere measure
        let m = 16;
        for a in 0..m {
            let t = (a as f64 + 0.5) / m as f64;
            let (r1, r2) = (radius * t.sqrt(), radius * (1.0 - t).sqrt());
            for b in 0..m {
                let al = 2.0 * PI * (b as f64 + 0.5) / m as f64;
                for c in 0..m {
                    let be = 2.0 * PI * (c as f64 + 0.25) / m as f64;
                    out.push([
                        center[0] + r1 * al.cos(),
                        center[1] + r1 * al.sin(),
                        center[2] + r2 * be.cos(),
                        center[3] + r2 * be.sin(),
                    ]);
                }
            }
        }
    }
    out
}

/// Positive measure: cell density plus singular parts.
#[derive(Debug, Clone)]
pub struct MAMeasure {
    grid: Arc<Grid>,
    density: Vec<f64>,
    singular: Vec<SingularPart>,
    total_mass: f64,
    clamped_cells: usize,
    warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasureSummary {
    pub total_mass: f64,
    pub ac_mass: f64,
    pub singular_parts: Vec<SingularPart>,
    pub clamped_cells: usize,
    pub warnings: Vec<String>,
}

impl MAMeasure {
    pub fn zero(grid: &Arc<Grid>) -> MAMeasure {
        MAMeasure::from_parts(grid, vec![0.0; grid.len()], Vec::new())
    }

    /// Measure from a cell density (band entries are ignored).
    pub fn from_parts(grid: &Arc<Grid>, mut density: Vec<f64>, singular: Vec<SingularPart>) -> MAMeasure {
        assert_eq!(density.len(), grid.len());
        for (i, d) in density.iter_mut().enumerate() {
            if !grid.is_interior(i) {
                *d = 0.0;
            }
        }
        let mut m = MAMeasure {
            grid: grid.clone(),
            density,
            singular,
            total_mass: 0.0,
            clamped_cells: 0,
            warnings: Vec::new(),
        };
        m.recompute_total();
        m
    }

    /// `c dλ` on the domain.
    pub fn constant_density(grid: &Arc<Grid>, c: f64) -> MAMeasure {
        MAMeasure::from_parts(grid, vec![c; grid.len()], Vec::new())
    }

    /// Density given by a function of the cell center.
    pub fn from_density_fn<F>(grid: &Arc<Grid>, f: F) -> MAMeasure
    where
        F: Fn(&[f64; 4]) -> f64 + Sync + Send,
    {
        MAMeasure::from_parts(grid, grid.map(|_, _, x| f(x)), Vec::new())
    }

    /// A single sphere shell centered at the domain center.
    pub fn shell(grid: &Arc<Grid>, radius: f64, mass: f64) -> MAMeasure {
        let center = grid.domain().center_real();
        MAMeasure::from_parts(
            grid,
            vec![0.0; grid.len()],
            vec![SingularPart::SphereShell { center, radius, total_mass: mass }],
        )
    }

    fn recompute_total(&mut self) {
        let vol = self.grid.cell_volume();
        let ac = self.grid.sum(|i, _, _| self.density[i]) * vol;
        self.total_mass = ac + self.singular.iter().map(|s| s.mass()).sum::<f64>();
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn density(&self) -> &[f64] {
        &self.density
    }
    pub fn singular_parts(&self) -> &[SingularPart] {
        &self.singular
    }
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }
    pub fn clamped_cells(&self) -> usize {
        self.clamped_cells
    }
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }
    pub fn ac_mass(&self) -> f64 {
        self.total_mass - self.singular.iter().map(|s| s.mass()).sum::<f64>()
    }

    pub fn add(&self, other: &MAMeasure) -> Result<MAMeasure> {
        if !Arc::ptr_eq(&self.grid, &other.grid) {
            return Err(Error::GridMismatch);
        }
        let density = self.grid.map(|i, _, _| self.density[i] + other.density[i]);
        let mut singular = self.singular.clone();
        singular.extend(other.singular.iter().cloned());
        Ok(MAMeasure::from_parts(&self.grid, density, singular))
    }

    pub fn scale(&self, c: f64) -> MAMeasure {
        let density = self.density.iter().map(|d| c * d).collect();
        let singular = self
            .singular
            .iter()
            .map(|s| match s {
                SingularPart::SphereShell { center, radius, total_mass } => {
                    SingularPart::SphereShell { center: *center, radius: *radius, total_mass: c * total_mass }
                }
                SingularPart::Atom { point, mass } => SingularPart::Atom { point: *point, mass: c * mass },
            })
            .collect();
        MAMeasure::from_parts(&self.grid, density, singular)
    }

    pub fn summary(&self) -> MeasureSummary {
        MeasureSummary {
            total_mass: self.total_mass,
            ac_mass: self.ac_mass(),
            singular_parts: self.singular.clone(),
            clamped_cells: self.clamped_cells,
            warnings: self.warnings.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary())?)
    }

    pub fn write_density_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        self.grid.write_csv(w, &self.density)
    }

    /// Fraction of a singular part lying in `region` (all of it when `None`).
    fn fraction_in(&self, part: &SingularPart, region: Option<&RegionMask>) -> f64 {
        let Some(region) = region else { return 1.0 };
        let dom_c = self.grid.domain().center_real();
        if let (Some(set), true) = (region.radial_shape(), part.center() == dom_c) {
            return if set.contains(part.radius()) { 1.0 } else { 0.0 };
        }
        match part {
            SingularPart::Atom { point, .. } => {
                if region.contains_point(point) { 1.0 } else { 0.0 }
            }
            SingularPart::SphereShell { center, radius, .. } => {
                let pts = self.points_in_domain(center, *radius);
                if pts.is_empty() {
                    return 0.0;
                }
                pts.iter().filter(|p| region.contains_point(&p[..])).count() as f64 / pts.len() as f64
            }
        }
    }

    fn points_in_domain(&self, center: &[f64; 4], radius: f64) -> Vec<[f64; 4]> {
        let dom = self.grid.domain();
        shell_points(center, radius, self.grid.dim_complex())
            .into_iter()
            .filter(|p| dom.contains(p) || dom.distance_outside(p) == 0.0)
            .collect()
    }
}

/// Anything that can be integrated against a measure.
pub trait Weight: Sync {
    fn at_cell(&self, grid: &Grid, idx: usize, x: &[f64; 4]) -> f64;
    fn at_point(&self, x: &[f64; 4]) -> f64;
}

impl Weight for ScalarField {
    fn at_cell(&self, _grid: &Grid, idx: usize, _x: &[f64; 4]) -> f64 {
        self.value(idx)
    }
    fn at_point(&self, x: &[f64; 4]) -> f64 {
        self.eval_at(x)
    }
}

impl Weight for f64 {
    fn at_cell(&self, _: &Grid, _: usize, _: &[f64; 4]) -> f64 {
        *self
    }
    fn at_point(&self, _: &[f64; 4]) -> f64 {
        *self
    }
}

impl Weight for Model {
    fn at_cell(&self, _: &Grid, _: usize, x: &[f64; 4]) -> f64 {
        self.eval(x)
    }
    fn at_point(&self, x: &[f64; 4]) -> f64 {
        self.eval(x)
    }
}

/// Pointwise product of two weights.
pub struct Product<'a>(pub &'a dyn Weight, pub &'a dyn Weight);

impl Weight for Product<'_> {
    fn at_cell(&self, g: &Grid, i: usize, x: &[f64; 4]) -> f64 {
        self.0.at_cell(g, i, x) * self.1.at_cell(g, i, x)
    }
    fn at_point(&self, x: &[f64; 4]) -> f64 {
        self.0.at_point(x) * self.1.at_point(x)
    }
}

/// Weight given by a closure of the point.
pub struct FnWeight<F>(pub F);

impl<F: Fn(&[f64; 4]) -> f64 + Sync> Weight for FnWeight<F> {
    fn at_cell(&self, _: &Grid, _: usize, x: &[f64; 4]) -> f64 {
        (self.0)(x)
    }
    fn at_point(&self, x: &[f64; 4]) -> f64 {
        (self.0)(x)
    }
}

/// `∫ weight dμ`.
pub fn pair(weight: &dyn Weight, mu: &MAMeasure) -> Result<f64> {
    pair_on(weight, mu, None)
}

/// `∫_region weight dμ`.
pub fn pair_on(weight: &dyn Weight, mu: &MAMeasure, region: Option<&RegionMask>) -> Result<f64> {
    let grid = &mu.grid;
    if let Some(r) = region {
        if !Arc::ptr_eq(r.grid(), grid) {
            return Err(Error::GridMismatch);
        }
    }
    let vol = grid.cell_volume();
    let ac = grid.sum(|i, _, x| {
        let d = mu.density[i];
        if d == 0.0 || region.map(|r| !r.contains(i)).unwrap_or(false) {
            0.0
        } else {
            weight.at_cell(grid, i, x) * d
        }
    }) * vol;
    let mut sing = 0.0;
    for part in &mu.singular {
        let frac = mu.fraction_in(part, region);
        if frac == 0.0 || part.mass() == 0.0 {
            continue;
        }
        let avg = match part {
            SingularPart::Atom { point, .. } => weight.at_point(point),
            SingularPart::SphereShell { center, radius, .. } => {
                let pts = mu.points_in_domain(center, *radius);
                let inside: Vec<&[f64; 4]> = match region {
                    Some(r) if frac < 1.0 => pts.iter().filter(|p| r.contains_point(&p[..])).collect(),
                    _ => pts.iter().collect(),
                };
                inside.iter().map(|p| weight.at_point(p)).sum::<f64>() / inside.len().max(1) as f64
            }
        };
        if !avg.is_finite() {
            return Err(Error::InvalidParameter("weight is undefined on a singular support".into()));
        }
        sing += avg * frac * part.mass();
    }
    Ok(ac + sing)
}

/// Shells of two measures are matched when their radii differ by at most
/// this many grid spacings.
pub const DEFAULT_MATCH_SPACINGS: f64 = 1.0;

/// Total variation of `μ - ν` on `region` (whole domain when `None`).
///
/// Absolutely continuous parts are compared cellwise. Singular parts of equal
/// kind and center whose radii differ by at most one grid spacing are treated
/// as the same support and contribute their mass difference; unmatched parts
/// contribute their full mass.
pub fn tv_distance(mu: &MAMeasure, nu: &MAMeasure, region: Option<&RegionMask>) -> Result<f64> {
    tv_distance_with(mu, nu, region, DEFAULT_MATCH_SPACINGS * mu.grid.spacing())
}

pub fn tv_distance_with(mu: &MAMeasure, nu: &MAMeasure, region: Option<&RegionMask>, match_tol: f64) -> Result<f64> {
    if !Arc::ptr_eq(&mu.grid, &nu.grid) {
        return Err(Error::GridMismatch);
    }
    if let Some(r) = region {
        if !Arc::ptr_eq(r.grid(), &mu.grid) {
            return Err(Error::GridMismatch);
        }
    }
    let grid = &mu.grid;
    let ac = grid.sum(|i, _, _| {
        if region.map(|r| !r.contains(i)).unwrap_or(false) {
            0.0
        } else {
            (mu.density[i] - nu.density[i]).abs()
        }
    }) * grid.cell_volume();
    // greedy matching by increasing radius gap
    let mut pairs = Vec::new();
    for (a, p) in mu.singular.iter().enumerate() {
        for (b, q) in nu.singular.iter().enumerate() {
            let dc = (0..4).map(|i| (p.center()[i] - q.center()[i]).powi(2)).sum::<f64>().sqrt();
            let dr = (p.radius() - q.radius()).abs();
            if p.same_kind(q) && dc <= 1e-12 && dr <= match_tol {
                pairs.push((dr, a, b));
            }
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_a = vec![false; mu.singular.len()];
    let mut used_b = vec![false; nu.singular.len()];
    let mut sing = 0.0;
    for (_, a, b) in pairs {
        if used_a[a] || used_b[b] {
            continue;
        }
        used_a[a] = true;
        used_b[b] = true;
        let fa = mu.fraction_in(&mu.singular[a], region);
        let fb = nu.fraction_in(&nu.singular[b], region);
        sing += (fa * mu.singular[a].mass() - fb * nu.singular[b].mass()).abs();
    }
    for (a, p) in mu.singular.iter().enumerate() {
        if !used_a[a] {
            sing += mu.fraction_in(p, region) * p.mass();
        }
    }
    for (b, q) in nu.singular.iter().enumerate() {
        if !used_b[b] {
            sing += nu.fraction_in(q, region) * q.mass();
        }
    }
    Ok(ac + sing)
}

#[derive(Debug, Clone, Copy)]
pub struct MaOptions {
    /// Tolerance of the psh precondition in units of `h²` times the field's
    /// magnitude; `None` skips the check.
    pub psh_tol: Option<f64>,
    /// Detect sphere shells on centered balls.
    pub detect_singular: bool,
}

impl Default for MaOptions {
    fn default() -> Self {
        MaOptions { psh_tol: Some(0.05), detect_singular: true }
    }
}

/// Complex Hessian `(a, c, b)` = `(u_{11}, u_{22}, u_{12})` at a cell, with
/// `b` complex as `[re, im]`. For n = 1 only `a` is meaningful.
fn complex_hessian(grid: &Grid, v: &[f64], idx: usize, k: &Lattice) -> Option<(f64, f64, [f64; 2])> {
    let h2 = grid.spacing() * grid.spacing();
    let at = |d: Lattice| grid.index_of(&[k[0] + d[0], k[1] + d[1], k[2] + d[2], k[3] + d[3]]).map(|j| v[j]);
    let u0 = v[idx];
    let plane = |p: usize| -> Option<f64> {
        let mut e1 = [0; 4];
        let mut e2 = [0; 4];
        e1[2 * p] = 1;
        e2[2 * p + 1] = 1;
        let m = |e: [i32; 4]| [-e[0], -e[1], -e[2], -e[3]];
        let s = at(e1)? + at(m(e1))? + at(e2)? + at(m(e2))?;
        Some((s - 4.0 * u0) / (4.0 * h2))
    };
    let a = plane(0)?;
    if grid.dim_complex() == 1 {
        return Some((a, 0.0, [0.0, 0.0]));
    }
    let c = plane(1)?;
    // mixed second derivative u_{pq} for real coordinates p in {0,1}, q in {2,3}
    let mixed = |p: usize, q: usize| -> Option<f64> {
        let mut d = [0; 4];
        let mut val = 0.0;
        for (sp, sq, w) in [(1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)] {
            d[p] = sp;
            d[q] = sq;
            val += w * at(d)?;
            d = [0; 4];
        }
        Some(val / (4.0 * h2))
    };
    let x1x2 = mixed(0, 2)?;
    let y1y2 = mixed(1, 3)?;
    let x1y2 = mixed(0, 3)?;
    let y1x2 = mixed(1, 2)?;
    Some((a, c, [0.25 * (x1x2 + y1y2), 0.25 * (x1y2 - y1x2)]))
}

fn require_psh(field: &ScalarField, tol: Option<f64>) -> Result<()> {
    if let Some(tol) = tol {
        let h = field.grid().spacing();
        let scale = field.upper_bound().abs().max(field.lower_bound().abs()).max(1.0);
        let tol = tol * h * h * scale;
        let rep = check_psh(field, tol);
        if !rep.is_psh_within {
            return Err(Error::NotPsh { max_violation: rep.max_violation, tolerance: tol });
        }
    }
    Ok(())
}

/// `(dd^c u)^n` of a sampled field by finite differences.
pub fn ma_smooth(field: &ScalarField) -> Result<MAMeasure> {
    ma_smooth_with(field, &MaOptions::default())
}

pub fn ma_smooth_with(field: &ScalarField, opts: &MaOptions) -> Result<MAMeasure> {
    mixed_ma_with(&vec![field; field.grid().dim_complex()], opts)
}

/// `dd^c u_1 ∧ ... ∧ dd^c u_n` of sampled fields.
pub fn mixed_ma(fields: &[&ScalarField]) -> Result<MAMeasure> {
    mixed_ma_with(fields, &MaOptions::default())
}

pub fn mixed_ma_with(fields: &[&ScalarField], opts: &MaOptions) -> Result<MAMeasure> {
    let Some(first) = fields.first() else {
        return Err(Error::InvalidParameter("mixed_ma needs at least one field".into()));
    };
    let grid = first.grid().clone();
    let n = grid.dim_complex();
    if fields.len() != n {
        return Err(Error::InvalidParameter(format!("mixed_ma needs {n} fields, got {}", fields.len())));
    }
    if fields.iter().any(|f| !Arc::ptr_eq(f.grid(), &grid)) {
        return Err(Error::GridMismatch);
    }
    if grid.interior_count() < 4 {
        return Err(Error::TooCoarse("fewer than 4 interior cells".into()));
    }
    for (k, f) in fields.iter().enumerate() {
        if k == 0 || !std::ptr::eq(*f, fields[0]) {
            require_psh(f, opts.psh_tol)?;
        }
    }
    let factor = 4f64.powi(n as i32) * if n == 2 { 2.0 } else { 1.0 };
    let raw: Vec<f64> = grid.map(|idx, k, _| {
        if !grid.is_interior(idx) {
            return 0.0;
        }
        let h1 = complex_hessian(&grid, fields[0].values(), idx, k);
        let Some((a1, c1, b1)) = h1 else { return 0.0 };
        let det = if n == 1 {
            a1
        } else if std::ptr::eq(fields[0], fields[1]) {
            a1 * c1 - (b1[0] * b1[0] + b1[1] * b1[1])
        } else {
            let Some((a2, c2, b2)) = complex_hessian(&grid, fields[1].values(), idx, k) else { return 0.0 };
            0.5 * (a1 * c2 + a2 * c1) - (b1[0] * b2[0] + b1[1] * b2[1])
        };
        factor * det
    });
    let clamped = exec::count(raw.len(), |i| raw[i] < 0.0);
    let density: Vec<f64> = raw.iter().map(|d| d.max(0.0)).collect();
    let mut m = MAMeasure::from_parts(&grid, density, Vec::new());
    m.clamped_cells = clamped;
    if clamped as f64 > CLAMP_WARNING_FRACTION * grid.interior_count() as f64 {
        m.warnings.push(format!(
            "{clamped} of {} cells had negative determinants; consider ma_model or refinement",
            grid.interior_count()
        ));
    }
    if opts.detect_singular && grid.domain().kind == DomainKind::Ball {
        let parts = detect_shells(&grid, &mut m.density, m.total_mass);
        if !parts.is_empty() {
            m.singular = parts;
            m.recompute_total();
        }
    }
    Ok(m)
}

/// Radial binning around the domain center: bins whose mass stands more than
/// ten standard deviations above their neighbors are moved from the density
/// into sphere shells (or an atom at the center).
fn detect_shells(grid: &Grid, density: &mut [f64], total: f64) -> Vec<SingularPart> {
    let h = grid.spacing();
    let dom = grid.domain();
    let center = dom.center_real();
    let nb = (dom.radius / h).ceil() as usize + 2;
    let vol = grid.cell_volume();
    let mut mass = vec![0.0; nb];
    let mut rho_w = vec![0.0; nb];
    let radius_of = |i: usize| dom.radial_distance(&grid.center_of(i));
    let mut bin_of = vec![u32::MAX; grid.len()];
    for (i, d) in density.iter().enumerate() {
        if !grid.is_interior(i) {
            continue;
        }
        let r = radius_of(i);
        let b = ((r / h) as usize).min(nb - 1);
        bin_of[i] = b as u32;
        mass[b] += d * vol;
        rho_w[b] += d * vol * r;
    }
    const W: usize = 8;
    let baseline = |b: usize, skip_lo: usize, skip_hi: usize| -> (f64, f64) {
        let lo = b.saturating_sub(W);
        let hi = (b + W).min(nb - 1);
        let vals: Vec<f64> = (lo..=hi).filter(|&k| k + 1 < skip_lo || k > skip_hi + 1).map(|k| mass[k]).collect();
        if vals.len() < 4 {
            return (f64::NAN, f64::NAN);
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        (mean, var.sqrt())
    };
    let floor = 1e-3 * total.abs();
    let spike: Vec<bool> = (0..nb)
        .map(|b| {
            let (mean, sd) = baseline(b, b, b);
            mean.is_finite() && mass[b] - mean > 10.0 * sd && mass[b] - mean > floor
        })
        .collect();
    let mut parts = Vec::new();
    let mut b = 0;
    while b < nb {
        if !spike[b] {
            b += 1;
            continue;
        }
        let mut e = b;
        while e + 1 < nb && spike[e + 1] {
            e += 1;
        }
        let lo = b.saturating_sub(1);
        let hi = (e + 1).min(nb - 1);
        let (mean, _) = baseline((lo + hi) / 2, lo, hi);
        let mut excess_total = 0.0;
        let mut rho_acc = 0.0;
        let mut scale = vec![1.0; hi - lo + 1];
        for k in lo..=hi {
            let ex = (mass[k] - mean).max(0.0);
            if ex > 0.0 && mass[k] > 0.0 {
                excess_total += ex;
                rho_acc += ex * rho_w[k] / mass[k];
                scale[k - lo] = mean.max(0.0) / mass[k];
            }
        }
        if excess_total > 0.0 {
            for (i, d) in density.iter_mut().enumerate() {
                let bi = bin_of[i] as usize;
                if bi >= lo && bi <= hi {
                    *d *= scale[bi - lo];
                }
            }
            let radius = rho_acc / excess_total;
            if radius < h {
                parts.push(SingularPart::Atom { point: center, mass: excess_total });
            } else {
                parts.push(SingularPart::SphereShell { center, radius, total_mass: excess_total });
            }
        }
        b = hi + 1;
    }
    parts
}

/// Mixed measure `dd^c G_1 ∧ ... ∧ dd^c G_n` of radial profiles sharing a
/// center, restricted to the grid's domain.
pub fn ma_radial(profiles: &[&dyn RadialProfile], grid: &Arc<Grid>) -> Result<MAMeasure> {
    let n = grid.dim_complex();
    if profiles.len() != n {
        return Err(Error::InvalidParameter(format!("need {n} profiles, got {}", profiles.len())));
    }
    let center = profiles[0].center();
    if profiles.iter().any(|p| p.center() != center) {
        return Err(Error::OutsideFamily("profiles have different centers".into()));
    }
    let dom = grid.domain();
    let dc = dom.center_real();
    let dist = (0..4).map(|i| (dc[i] - center[i]).powi(2)).sum::<f64>().sqrt();
    let reach = match dom.kind {
        DomainKind::Ball => dom.radius,
        DomainKind::Polydisc => dom.radius * (n as f64).sqrt(),
    };
    let center_inside = dom.contains(&center);
    let rho_lo = if center_inside { dom.radius * 1e-6 } else { (dist - reach).max(dom.radius * 1e-6) };
    let rho_hi = dist + reach;
    let (lo, hi) = (rho_lo.ln(), rho_hi.ln());

    // psh: each profile convex, and nondecreasing where the center is reachable
    let nodes = radial::s_nodes(lo, hi, 2048, &[]);
    for p in profiles {
        for &t in &nodes {
            let j = p.jet(t, true);
            let scale = 1.0 + j.v.abs() + j.d.abs();
            let bad_d = (center_inside || n == 2) && j.d < -1e-9 * scale;
            if bad_d || j.dd < -1e-7 * scale || !j.v.is_finite() && j.v != f64::NEG_INFINITY {
                return Err(Error::NotPsh { max_violation: (-j.d).max(-j.dd), tolerance: 1e-9 });
            }
        }
    }
    let mut kinks: Vec<f64> = profiles.iter().flat_map(|p| p.kinks(lo, hi)).collect();
    kinks.sort_by(|a, b| a.total_cmp(b));
    kinks.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let mut singular = Vec::new();
    if center_inside {
        let a: f64 = profiles.iter().map(|p| p.jet(lo, true).d).product();
        let atom = (2.0 * PI).powi(n as i32) * a;
        if atom > 1e-9 {
            singular.push(SingularPart::Atom { point: center, mass: atom });
        }
    }
    for &k in &kinks {
        // a located kink is only accurate to rounding, so step off it, but
        // only in the factors that actually jump there
        let eps = 1e-9 * (1.0 + k.abs());
        let (mut right, mut left) = (1.0, 1.0);
        for p in profiles {
            let (dr, dl) = (p.jet(k + eps, true).d, p.jet(k - eps, false).d);
            if (dr - dl).abs() <= 1e-6 * (1.0 + dr.abs().max(dl.abs())) {
                let d = p.jet(k, true).d;
                right *= d;
                left *= d;
            } else {
                right *= dr;
                left *= dl;
            }
        }
        let jump = (2.0 * PI).powi(n as i32) * (right - left);
        if jump < -1e-9 {
            return Err(Error::NotPsh { max_violation: -jump, tolerance: 1e-9 });
        }
        if jump <= 1e-12 {
            continue;
        }
        let radius = k.exp();
        // mass inside the domain, by quadrature over the sphere
        let pts = shell_points(&center, radius, n);
        let inside = pts.iter().filter(|p| dom.contains(&p[..])).count() as f64 / pts.len() as f64;
        if inside > 0.0 {
            singular.push(SingularPart::SphereShell { center, radius, total_mass: jump * inside });
        }
    }
    let density = grid.map(|i, _, x| {
        if !grid.is_interior(i) {
            return 0.0;
        }
        let rho = (0..4).map(|d| (x[d] - center[d]).powi(2)).sum::<f64>().sqrt();
        radial::mixed_density(profiles, rho.max(dom.radius * 1e-9))
    });
    Ok(MAMeasure::from_parts(grid, density, singular))
}

fn in_family(node: &Node) -> bool {
    match node {
        Node::Const(_) | Node::Abs { .. } | Node::Abs2 { .. } => true,
        Node::Log(a) | Node::Neg(a) => in_family(a),
        Node::Max(v) => v.iter().all(in_family),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => in_family(a) && in_family(b),
        Node::Param(_) | Node::Re(_) | Node::Im(_) | Node::Min(_) => false,
    }
}

/// Closed-form `(dd^c u)^n` of a rotation-invariant model.
pub fn ma_model(model: &Model, grid: &Arc<Grid>) -> Result<MAMeasure> {
    model.require_bound()?;
    let n = grid.dim_complex();
    if !in_family(model.root()) {
        return Err(Error::OutsideFamily(format!("`{model}` is not built from radial pieces")));
    }
    let Some(r) = model.radial(n) else {
        return Err(Error::OutsideFamily(format!("`{model}` is not rotation invariant about one point")));
    };
    let profiles: Vec<&dyn RadialProfile> = vec![&r; n];
    ma_radial(&profiles, grid)
}

/// Measure of a field, exact when its source is rotation invariant.
pub fn ma_auto(field: &ScalarField) -> Result<MAMeasure> {
    let n = field.grid().dim_complex();
    if let Some(r) = field.radial() {
        let profiles: Vec<&dyn RadialProfile> = vec![r.as_ref(); n];
        match ma_radial(&profiles, field.grid()) {
            Ok(m) => return Ok(m),
            Err(Error::NotPsh { .. }) | Err(Error::OutsideFamily(_)) => {}
            Err(e) => return Err(e),
        }
    }
    ma_smooth(field)
}

/// Mixed measure of fields, exact when all sources are radial about one point.
pub fn mixed_auto(fields: &[&ScalarField]) -> Result<MAMeasure> {
    let radial: Option<Vec<&dyn RadialProfile>> = fields.iter().map(|f| f.radial().map(|r| r.as_ref())).collect();
    if let Some(profiles) = radial {
        if let Some(first) = profiles.first() {
            if profiles.iter().all(|p| p.center() == first.center()) && fields.len() == fields[0].grid().dim_complex() {
                if let Ok(m) = ma_radial(&profiles, fields[0].grid()) {
                    return Ok(m);
                }
            }
        }
    }
    mixed_ma(fields)
}

/// `ψ(t) = exp(1 - 1/(1 - t²))` for `|t| < 1`, else 0; peak value 1.
pub fn bump_profile(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - t * t)).exp()
    }
}

/// Smooth bump `ψ(|z - c| / r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub name: String,
    pub center: [f64; 4],
    pub radius: f64,
}

impl Bump {
    pub fn value(&self, x: &[f64; 4]) -> f64 {
        let d = (0..4).map(|i| (x[i] - self.center[i]).powi(2)).sum::<f64>().sqrt();
        bump_profile(d / self.radius)
    }

    pub fn sample(&self, grid: &Arc<Grid>) -> ScalarField {
        ScalarField::from_fn(grid, |x| self.value(x))
    }
}

impl Weight for Bump {
    fn at_cell(&self, _: &Grid, _: usize, x: &[f64; 4]) -> f64 {
        self.value(x)
    }
    fn at_point(&self, x: &[f64; 4]) -> f64 {
        self.value(x)
    }
}

/// Named smooth compactly supported test functions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestFunctionBank {
    pub bumps: Vec<Bump>,
}

impl TestFunctionBank {
    /// Eight centered bumps with support radii `0.3, ..., 0.9` and four bumps
    /// of radius 0.3 centered at `±0.4` and `±0.4i` in the first coordinate.
    pub fn standard(grid: &Grid) -> Result<TestFunctionBank> {
        let dom = grid.domain();
        let c = dom.center_real();
        let r = dom.radius;
        let mut bumps = Vec::new();
        for k in 0..8 {
            let rad = r * (0.3 + 0.6 * k as f64 / 7.0);
            bumps.push(Bump { name: format!("radial_{:.3}", rad), center: c, radius: rad });
        }
        for (name, dx, dy) in [("off_+re", 0.4, 0.0), ("off_-re", -0.4, 0.0), ("off_+im", 0.0, 0.4), ("off_-im", 0.0, -0.4)] {
            let mut cc = c;
            cc[0] += dx * r;
            cc[1] += dy * r;
            bumps.push(Bump { name: name.to_string(), center: cc, radius: 0.3 * r });
        }
        let bank = TestFunctionBank { bumps };
        bank.validate(grid)?;
        Ok(bank)
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        let h = grid.spacing();
        let dom = grid.domain();
        for b in &self.bumps {
            if b.radius < 4.0 * h {
                return Err(Error::TooCoarse(format!("bump `{}` is narrower than 4 spacings", b.name)));
            }
            let reach = dom.radial_distance(&b.center) + b.radius;
            if dom.kind == DomainKind::Ball && reach > dom.radius {
                return Err(Error::InvalidParameter(format!("bump `{}` reaches the boundary", b.name)));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Bump> {
        self.bumps.iter().find(|b| b.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::sample;
    use crate::grid::{make_grid, Domain};
    use crate::model::parse_model;

    fn grid(n: usize, res: usize) -> Arc<Grid> {
        make_grid(&Domain::unit_ball(n).unwrap(), res).unwrap()
    }

    fn field(g: &Arc<Grid>, text: &str) -> ScalarField {
        sample(&parse_model(text).unwrap(), g).unwrap()
    }

    #[test]
    fn quadratic_density_c1() {
        let g = grid(1, 64);
        let m = ma_smooth(&field(&g, "abs2(z)")).unwrap();
        assert!(m.singular_parts().is_empty());
        for i in 0..g.len() {
            if g.is_interior(i) {
                assert!((m.density()[i] - 4.0).abs() < 1e-9);
            }
        }
        let expected = 4.0 * g.interior_count() as f64 * g.cell_volume();
        assert!((m.total_mass() - expected).abs() < 1e-9);
    }

    #[test]
    fn quadratic_density_c2_and_mixed() {
        let g = grid(2, 10);
        let u = field(&g, "abs2(z)");
        let m = ma_smooth(&u).unwrap();
        assert!(m.singular_parts().is_empty());
        let u2 = field(&g, "2*abs2(z)");
        let mx = mixed_ma(&[&u, &u2]).unwrap();
        let re = field(&g, "re(z1)");
        let zero = mixed_ma(&[&u, &re]).unwrap();
        for i in 0..g.len() {
            if g.is_interior(i) {
                assert!((m.density()[i] - 32.0).abs() < 1e-8);
                assert!((mx.density()[i] - 64.0).abs() < 1e-8);
                assert!(zero.density()[i].abs() < 1e-8);
            }
        }
    }

    #[test]
    fn polarization_identity() {
        let g = grid(2, 10);
        let u = field(&g, "abs2(z) + 0.3*abs2(z1 - 0.2)");
        let v = field(&g, "0.5*abs2(z2 - 0.1) + abs2(z)");
        let uv = u.add(&v).unwrap();
        let opts = MaOptions { psh_tol: Some(0.05), detect_singular: false };
        let a = ma_smooth_with(&uv, &opts).unwrap();
        let b = ma_smooth_with(&u, &opts).unwrap();
        let c = ma_smooth_with(&v, &opts).unwrap();
        let m = mixed_ma_with(&[&u, &v], &opts).unwrap();
        let m2 = mixed_ma_with(&[&v, &u], &opts).unwrap();
        for i in 0..g.len() {
            let lhs = 2.0 * m.density()[i];
            let rhs = a.density()[i] - b.density()[i] - c.density()[i];
            assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()), "{lhs} {rhs}");
            assert_eq!(m.density()[i], m2.density()[i]);
        }
    }

    #[test]
    fn pluriharmonic_density_zero_and_rejects_nonpsh() {
        let g = grid(1, 32);
        let m = ma_smooth(&field(&g, "re(z1)")).unwrap();
        assert!(m.total_mass().abs() < 1e-9);
        assert!(matches!(ma_smooth(&field(&g, "-abs2(z)")), Err(Error::NotPsh { .. })));
    }

    #[test]
    fn model_shells() {
        let g = grid(1, 64);
        let m = ma_model(&parse_model("max(log(abs(z)), -1)").unwrap(), &g).unwrap();
        assert_eq!(m.singular_parts().len(), 1);
        match &m.singular_parts()[0] {
            SingularPart::SphereShell { radius, total_mass, .. } => {
                assert!((radius - (-1.0f64).exp()).abs() < 1e-12);
                assert!((total_mass - 2.0 * PI).abs() < 1e-9);
            }
            other => panic!("{other:?}"),
        }
        let g2 = grid(2, 8);
        let m = ma_model(&parse_model("max(2*log(abs(z)), -1)").unwrap(), &g2).unwrap();
        assert!((m.singular_parts()[0].mass() - (4.0 * PI).powi(2)).abs() < 1e-8);
        let m = ma_model(&parse_model("abs2(z) - 1").unwrap(), &g).unwrap();
        assert!(m.singular_parts().is_empty());
        assert!(m.density().iter().enumerate().all(|(i, d)| !g.is_interior(i) || (d - 4.0).abs() < 1e-9));
        let m = ma_model(&parse_model("2*log(abs(z))").unwrap(), &g).unwrap();
        assert!(matches!(m.singular_parts()[0], SingularPart::Atom { mass, .. } if (mass - 4.0 * PI).abs() < 1e-9));
        assert!(matches!(ma_model(&parse_model("re(z1)").unwrap(), &g), Err(Error::OutsideFamily(_))));
        assert!(matches!(ma_model(&parse_model("-abs2(z)").unwrap(), &g), Err(Error::NotPsh { .. })));
    }

    #[test]
    fn radial_density_matches_closed_form() {
        // a ln|z| + q|z|^2 in C^2: density 16 a q / rho^2 + 32 q^2
        let g = grid(2, 8);
        let m = ma_model(&parse_model("0.5*log(abs(z)) + 2*abs2(z)").unwrap(), &g).unwrap();
        for i in (0..g.len()).step_by(13) {
            if !g.is_interior(i) {
                continue;
            }
            let x = g.center_of(i);
            let rho2 = x.iter().map(|v| v * v).sum::<f64>();
            if rho2 == 0.0 {
                continue;
            }
            let want = 16.0 * 0.5 * 2.0 / rho2 + 32.0 * 4.0;
            assert!((m.density()[i] - want).abs() < 1e-9 * want);
        }
        assert!(matches!(m.singular_parts()[0], SingularPart::Atom { mass, .. } if (mass - PI * PI).abs() < 1e-9));
    }

    #[test]
    fn pairing_examples() {
        let g = grid(1, 64);
        let shell = MAMeasure::shell(&g, (-1.0f64).exp(), 2.0 * PI);
        let w = parse_model("abs2(z)").unwrap();
        let p = pair(&w, &shell).unwrap();
        assert!((p - 2.0 * PI * (-2.0f64).exp()).abs() < 1e-12);
        assert!((pair(&1.0, &shell).unwrap() - shell.total_mass()).abs() < 1e-12);
        let far = MAMeasure::shell(&g, 0.95, 2.0 * PI);
        let bump = Bump { name: "b".into(), center: [0.0; 4], radius: 0.9 };
        assert_eq!(pair(&bump, &far).unwrap(), 0.0);
    }

    #[test]
    fn tv_examples() {
        let g = grid(1, 64);
        let m = ma_smooth(&field(&g, "abs2(z)")).unwrap();
        assert_eq!(tv_distance(&m, &m, None).unwrap(), 0.0);
        let z = MAMeasure::zero(&g);
        assert!((tv_distance(&m, &z, None).unwrap() - m.total_mass()).abs() < 1e-9);
        let a = MAMeasure::shell(&g, (-1.0f64).exp(), 2.0 * PI);
        let b = MAMeasure::shell(&g, (-0.5f64).exp(), 2.0 * PI);
        assert!((tv_distance(&a, &b, None).unwrap() - 4.0 * PI).abs() < 1e-12);
        let c = MAMeasure::shell(&g, (-1.0f64).exp() + 0.5 * g.spacing(), 3.0 * PI);
        assert!((tv_distance(&a, &c, None).unwrap() - PI).abs() < 1e-12);
    }

    #[test]
    fn detects_shell_of_kinked_field() {
        let g = grid(1, 256);
        let m = ma_smooth(&field(&g, "max(log(abs(z)), -1)")).unwrap();
        assert_eq!(m.singular_parts().len(), 1, "{:?}", m.singular_parts());
        let p = &m.singular_parts()[0];
        assert!((p.mass() - 2.0 * PI).abs() < 0.02 * 2.0 * PI, "{}", p.mass());
        assert!((p.radius() - (-1.0f64).exp()).abs() < 2.0 * g.spacing());
        let smooth = ma_smooth(&field(&g, "abs2(z) + 0.3*abs2(z1 - 0.2)")).unwrap();
        assert!(smooth.singular_parts().is_empty());
    }

    #[test]
    fn bank_is_valid() {
        let g = grid(1, 64);
        let bank = TestFunctionBank::standard(&g).unwrap();
        assert_eq!(bank.bumps.len(), 12);
        for b in &bank.bumps {
            for i in 0..g.len() {
                if !g.is_interior(i) {
                    assert_eq!(b.value(&g.center_of(i)), 0.0);
                }
            }
        }
        assert!(TestFunctionBank::standard(&grid(1, 8)).is_err());
    }
}
