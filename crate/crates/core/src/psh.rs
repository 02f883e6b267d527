//! Discrete plurisubharmonicity and the psh envelope of an obstacle.
//!
//! A grid function is discretely psh when at every interior cell its value
//! does not exceed the mean over the four points `x ± h d`, `x ± i h d` for each
//! direction `d` of a fixed set: the coordinate axes and, in C^2, the two
//! diagonals `z1 = ± z2`.
//!
//! The envelope (largest discretely psh minorant) is computed by a projected
//! multicolor successive over-relaxation of `v <- min(obstacle, min_d mean_d v)`
//! with the boundary band held at the obstacle. The cell coloring guarantees no
//! stencil couples two cells of one color, so each color is updated in parallel
//! and the result does not depend on the number of workers. Obstacles that are
//! rotation invariant about the center of a ball are handled exactly by the
//! radial lane: the envelope is the largest convex nondecreasing minorant of the
//! profile in `ln |z|`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::field::{sample_radial, FieldSource, ScalarField};
use crate::grid::{make_grid, DomainKind, Grid, Lattice};
use crate::radial::{self, convex_nondecreasing_minorant, PlCurve, RadialProfile};

/// Lattice steps `(a, b)` of each direction: the line through `x` in direction
/// `d` is sampled at `x ± a` and `x ± b` with `b = i a`.
pub fn directions(n: usize) -> &'static [[Lattice; 2]] {
    const C1: [[Lattice; 2]; 1] = [[[1, 0, 0, 0], [0, 1, 0, 0]]];
    const C2: [[Lattice; 2]; 4] = [
        [[1, 0, 0, 0], [0, 1, 0, 0]],
        [[0, 0, 1, 0], [0, 0, 0, 1]],
        [[1, 0, 1, 0], [0, 1, 0, 1]],
        [[1, 0, -1, 0], [0, 1, 0, -1]],
    ];
    if n == 1 { &C1 } else { &C2 }
}

fn shift(k: &Lattice, s: &Lattice, sign: i32) -> Lattice {
    [k[0] + sign * s[0], k[1] + sign * s[1], k[2] + sign * s[2], k[3] + sign * s[3]]
}

/// Neighbor indices of a cell, four per direction (`+a, -a, +b, -b`).
fn stencil(grid: &Grid, k: &Lattice, out: &mut [u32]) -> bool {
    let dirs = directions(grid.dim_complex());
    let mut m = 0;
    for d in dirs {
        for s in d {
            for sign in [1, -1] {
                match grid.index_of(&shift(k, s, sign)) {
                    Some(j) => out[m] = j as u32,
                    None => return false,
                }
                m += 1;
            }
        }
    }
    true
}

fn stencil_len(n: usize) -> usize {
    4 * directions(n).len()
}

/// Result of the discrete psh test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PshReport {
    /// Largest `v - mean_d v` over cells and directions, floored at 0.
    pub max_violation: f64,
    /// Cells whose violation exceeds the tolerance (first 1000).
    pub violating_cells: Vec<u32>,
    pub violating_count: usize,
    pub tolerance: f64,
    pub checked_cells: usize,
    pub excluded_pole_cells: usize,
    pub is_psh_within: bool,
}

fn min_mean(values: &[f64], nb: &[u32]) -> f64 {
    let mut best = f64::INFINITY;
    for q in nb.chunks_exact(4) {
        let mean = 0.25 * (values[q[0] as usize] + values[q[1] as usize] + values[q[2] as usize] + values[q[3] as usize]);
        best = best.min(mean);
    }
    best
}

/// Discrete psh test of a field at tolerance `tol`. Pole cells and cells
/// whose stencil touches a pole are excluded.
pub fn check_psh(field: &ScalarField, tol: f64) -> PshReport {
    let grid = field.grid();
    let n = grid.dim_complex();
    let len = stencil_len(n);
    let values = field.values();
    let mut pole = vec![false; grid.len()];
    for &p in field.poles() {
        pole[p as usize] = true;
    }
    // NaN marks skipped cells
    let viol: Vec<f64> = grid.map(|idx, k, _| {
        if !grid.is_interior(idx) || pole[idx] {
            return f64::NAN;
        }
        let mut nb = [0u32; 16];
        if !stencil(grid, k, &mut nb[..len]) {
            return f64::NAN;
        }
        if nb[..len].iter().any(|&j| pole[j as usize]) {
            return f64::NAN;
        }
        values[idx] - min_mean(values, &nb[..len])
    });
    let checked = viol.iter().filter(|v| !v.is_nan()).count();
    let excluded = grid.interior_count() - checked;
    let max_violation = viol.iter().filter(|v| !v.is_nan()).fold(0.0f64, |a, &b| a.max(b));
    let bad: Vec<u32> = viol
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > tol)
        .map(|(i, _)| i as u32)
        .collect();
    PshReport {
        max_violation,
        violating_count: bad.len(),
        violating_cells: bad.into_iter().take(1000).collect(),
        tolerance: tol,
        checked_cells: checked,
        excluded_pole_cells: excluded,
        is_psh_within: max_violation <= tol,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Projected multicolor SOR with coarse-to-fine initialization.
    ColoredSor,
    /// Snapshot (Jacobi) updates of all cells at once.
    Jacobi,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnvelopeOptions {
    pub tol_stop: f64,
    pub max_sweeps: usize,
    pub scheme: Scheme,
    /// Over-relaxation factor; `None` picks one from the grid size.
    pub omega: Option<f64>,
    /// Use the exact radial lane when the obstacle allows it.
    pub radial_lane: bool,
}

impl Default for EnvelopeOptions {
    fn default() -> Self {
        EnvelopeOptions {
            tol_stop: 1e-8,
            max_sweeps: 1_000_000,
            scheme: Scheme::ColoredSor,
            omega: None,
            radial_lane: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lane {
    Grid,
    Radial,
}

#[derive(Debug, Clone)]
pub struct Envelope {
    pub field: ScalarField,
    pub sweeps: usize,
    pub residual: f64,
    pub lane: Lane,
}

/// Largest discretely psh minorant of `obstacle` with default options.
pub fn psh_envelope(obstacle: &ScalarField, tol_stop: f64) -> Result<ScalarField> {
    let opts = EnvelopeOptions { tol_stop, ..Default::default() };
    Ok(psh_envelope_with(obstacle, &opts)?.field)
}

pub fn psh_envelope_with(obstacle: &ScalarField, opts: &EnvelopeOptions) -> Result<Envelope> {
    if !obstacle.poles().is_empty() {
        return Err(Error::InvalidParameter("obstacle has -inf cells".into()));
    }
    let grid = obstacle.grid();
    if grid.interior_count() == 0 {
        return Ok(Envelope { field: obstacle.clone(), sweeps: 0, residual: 0.0, lane: Lane::Grid });
    }
    if opts.radial_lane && grid.domain().kind == DomainKind::Ball {
        if let Some(r) = obstacle.centered_radial() {
            let r = r.clone();
            let (lo, hi) = radial_range(grid);
            let breaks = r.kinks(lo, hi);
            let profile = |s: f64| r.jet(s, true).v;
            return Ok(radial_envelope(obstacle, profile, &breaks));
        }
    }
    grid_envelope(obstacle, opts)
}

/// Range of `s = ln rho` covered by the radial lane.
pub fn radial_range(grid: &Grid) -> (f64, f64) {
    let r = grid.domain().radius;
    ((r * 1e-6).ln(), r.ln())
}

/// Radial-lane envelope of an obstacle whose interior values are given by a
/// profile in `s`; the boundary band keeps the obstacle's values.
pub fn radial_envelope<F: Fn(f64) -> f64>(obstacle: &ScalarField, profile: F, breaks: &[f64]) -> Envelope {
    let grid = obstacle.grid();
    let (lo, hi) = radial_range(grid);
    let s = radial::s_nodes(lo, hi, radial::SCAN_NODES, breaks);
    let f: Vec<f64> = s.iter().map(|&t| profile(t)).collect();
    let center = grid.domain().center_real();
    let curve = convex_nondecreasing_minorant(center, &s, &f);
    let residual = s
        .iter()
        .zip(&f)
        .map(|(&t, &v)| (v - curve.jet(t, true).v).abs())
        .fold(0.0, f64::max);
    if residual <= 1e-12 * (1.0 + f.iter().fold(0.0f64, |a, b| a.max(b.abs()))) {
        // already psh: the obstacle is its own envelope
        return Envelope { field: obstacle.clone(), sweeps: 0, residual: 0.0, lane: Lane::Radial };
    }
    let field = radial_field(grid, curve, obstacle.values());
    Envelope { field, sweeps: 0, residual: 0.0, lane: Lane::Radial }
}

/// Field sampled from a radial curve on interior cells, with the given band.
pub fn radial_field(grid: &Arc<Grid>, curve: PlCurve, band: &[f64]) -> ScalarField {
    let sampled = sample_radial(curve, grid);
    let src = sampled.source().cloned();
    let values = grid.map(|i, _, _| if grid.is_interior(i) { sampled.value(i) } else { band[i] });
    let mut out = ScalarField::from_values(grid, values);
    out.set_source(src);
    out
}

struct Stencils {
    colors: Vec<Vec<u32>>,
    /// Neighbor lists, `len` entries per interior cell in color order.
    nbr: Vec<Vec<u32>>,
    len: usize,
}

fn build_stencils(grid: &Grid, scheme: Scheme) -> Stencils {
    let len = stencil_len(grid.dim_complex());
    let colors = match scheme {
        Scheme::ColoredSor => grid.interior_colors(),
        Scheme::Jacobi => vec![grid.interior_indices()],
    };
    let nbr = colors
        .iter()
        .map(|list| {
            let per: Vec<Vec<u32>> = exec::map_items(list, |&i| {
                let mut nb = vec![0u32; len];
                let ok = stencil(grid, &grid.lattice_of(i as usize), &mut nb);
                debug_assert!(ok);
                nb
            });
            per.concat()
        })
        .collect();
    Stencils { colors, nbr, len }
}

fn default_omega(grid: &Grid) -> f64 {
    let h = grid.spacing() / grid.domain().radius;
    (2.0 / (1.0 + 1.7 * h)).min(1.95)
}

/// One sweep over all colors; returns the largest change.
fn sweep(v: &mut [f64], obstacle: &[f64], st: &Stencils, omega: f64) -> f64 {
    let mut change = 0.0f64;
    for (list, nb) in st.colors.iter().zip(&st.nbr) {
        let len = st.len;
        let new: Vec<f64> = {
            let vr: &[f64] = v;
            let pos: Vec<usize> = (0..list.len()).collect();
            exec::map_items(&pos, |&p| {
                let i = list[p] as usize;
                let m = min_mean(vr, &nb[p * len..(p + 1) * len]);
                let cur = vr[i];
                (cur + omega * (m - cur)).min(obstacle[i])
            })
        };
        for (&i, x) in list.iter().zip(new) {
            let d = (x - v[i as usize]).abs();
            change = change.max(d);
            v[i as usize] = x;
        }
    }
    change
}

fn grid_envelope(obstacle: &ScalarField, opts: &EnvelopeOptions) -> Result<Envelope> {
    let grid = obstacle.grid();
    let obst = obstacle.values();
    let mut v: Vec<f64> = match opts.scheme {
        Scheme::ColoredSor => coarse_start(obstacle, opts)?,
        Scheme::Jacobi => obst.to_vec(),
    };
    let st = build_stencils(grid, opts.scheme);
    let mut sweeps = 0;
    let mut omega = match opts.scheme {
        Scheme::ColoredSor => opts.omega.unwrap_or_else(|| default_omega(grid)),
        Scheme::Jacobi => 1.0,
    };
    let mut best = f64::INFINITY;
    let mut stalled = 0;
    let mut change = f64::INFINITY;
    // over-relaxed phase, then plain sweeps certify the fixed point
    while sweeps < opts.max_sweeps {
        change = sweep(&mut v, obst, &st, omega);
        sweeps += 1;
        if omega == 1.0 && change < opts.tol_stop {
            break;
        }
        if omega > 1.0 {
            if change < 0.1 * opts.tol_stop {
                omega = 1.0;
                continue;
            }
            if change < best {
                best = change;
                stalled = 0;
            } else {
                stalled += 1;
                if stalled > 200 {
                    omega = 1.0 + 0.5 * (omega - 1.0);
                    if omega < 1.05 {
                        omega = 1.0;
                    }
                    stalled = 0;
                    best = change;
                }
            }
        }
    }
    if change >= opts.tol_stop {
        return Err(Error::NonConvergence { sweeps, residual: change });
    }
    Ok(Envelope { field: ScalarField::from_values(grid, v), sweeps, residual: change, lane: Lane::Grid })
}

/// Initial iterate: the envelope on the half-resolution grid, interpolated and
/// capped by the obstacle.
fn coarse_start(obstacle: &ScalarField, opts: &EnvelopeOptions) -> Result<Vec<f64>> {
    let grid = obstacle.grid();
    let res = grid.resolution();
    if res < 32 || res % 2 != 0 || grid.len() < 20_000 {
        return Ok(obstacle.values().to_vec());
    }
    let coarse = make_grid(grid.domain(), res / 2)?;
    let dom = grid.domain().clone();
    let restricted = ScalarField::from_values(
        &coarse,
        coarse.map(|_, k, x| {
            let fine = [2 * k[0], 2 * k[1], 2 * k[2], 2 * k[3]];
            match grid.index_of(&fine) {
                Some(j) => obstacle.value(j),
                None => match obstacle.source() {
                    Some(FieldSource::Model(_)) | Some(FieldSource::Radial(_)) => obstacle.eval_at(x),
                    None => {
                        let p = dom.project_to_boundary(x);
                        grid.nearest_cell(&p).map(|j| obstacle.value(j)).unwrap_or(0.0)
                    }
                },
            }
        }),
    );
    let sub_opts = EnvelopeOptions { tol_stop: opts.tol_stop * 10.0, radial_lane: false, ..*opts };
    let env = grid_envelope(&restricted, &sub_opts)?.field;
    let cv = env.values();
    Ok(grid.map(|i, k, _| {
        let obst = obstacle.value(i);
        if !grid.is_interior(i) {
            return obst;
        }
        // average of the coarse cells around the fine point
        let mut sum = 0.0;
        let mut cnt = 0.0;
        let dr = grid.dim_real();
        for corner in 0..(1 << dr) {
            let mut c = [0i32; 4];
            for d in 0..dr {
                let lo = k[d].div_euclid(2);
                c[d] = if k[d] % 2 == 0 { lo } else { lo + ((corner >> d) & 1) };
            }
            if let Some(j) = coarse.index_of(&c) {
                sum += cv[j];
                cnt += 1.0;
            }
        }
        if cnt > 0.0 { (sum / cnt).min(obst) } else { obst }
    }))
}
