//! Domains in C^n (n = 1, 2) and their uniform real lattices.
//!
//! A domain of complex dimension `n` is sampled on the lattice
//! `center + h * Z^{2n}` with `h = 1 / resolution`. Real coordinates are
//! ordered `(x1, y1, x2, y2)`. Cells whose centers lie in the open domain are
//! *interior*; cells outside but within [`BAND_WIDTH`] spacings of the closed
//! domain form the *boundary band* and carry boundary values. The band is wide
//! enough that every stencil used in this crate (axis and diagonal steps of one
//! spacing) stays on the grid.

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;

/// Minimum accepted resolution.
pub const MIN_RESOLUTION: usize = 8;
/// Width of the boundary band, in lattice spacings.
pub const BAND_WIDTH: f64 = 2.0;
/// Default cap on the number of stored cells.
pub const DEFAULT_MAX_CELLS: usize = 40_000_000;
/// Environment variable overriding [`DEFAULT_MAX_CELLS`].
pub const MAX_CELLS_ENV: &str = "PLURIPOT_MAX_CELLS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    Ball,
    Polydisc,
}

/// A ball or polydisc in C^n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub kind: DomainKind,
    pub dim_complex: usize,
    pub radius: f64,
    /// One `[re, im]` pair per complex coordinate.
    pub center: Vec<[f64; 2]>,
}

/// Construct a validated [`Domain`].
pub fn make_domain(
    kind: DomainKind,
    dim_complex: usize,
    radius: f64,
    center: &[[f64; 2]],
) -> Result<Domain> {
    if !(1..=2).contains(&dim_complex) {
        return Err(Error::UnsupportedDimension(dim_complex));
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidRadius(radius));
    }
    let center = if center.is_empty() {
        vec![[0.0, 0.0]; dim_complex]
    } else if center.len() == dim_complex {
        center.to_vec()
    } else {
        return Err(Error::InvalidParameter(format!(
            "center has {} coordinates, expected {dim_complex}",
            center.len()
        )));
    };
    Ok(Domain { kind, dim_complex, radius, center })
}

impl Domain {
    /// Unit ball in C^n centered at the origin.
    pub fn unit_ball(n: usize) -> Result<Domain> {
        make_domain(DomainKind::Ball, n, 1.0, &[])
    }

    pub fn dim_real(&self) -> usize {
        2 * self.dim_complex
    }

    /// Center as real coordinates.
    pub fn center_real(&self) -> [f64; 4] {
        let mut c = [0.0; 4];
        for (k, p) in self.center.iter().enumerate() {
            c[2 * k] = p[0];
            c[2 * k + 1] = p[1];
        }
        c
    }

    /// Distance of `x` to the domain center (Euclidean in R^{2n}).
    pub fn radial_distance(&self, x: &[f64]) -> f64 {
        let c = self.center_real();
        (0..self.dim_real()).map(|i| (x[i] - c[i]).powi(2)).sum::<f64>().sqrt()
    }

    fn moduli(&self, x: &[f64]) -> [f64; 2] {
        let c = self.center_real();
        let mut m = [0.0; 2];
        for k in 0..self.dim_complex {
            m[k] = ((x[2 * k] - c[2 * k]).powi(2) + (x[2 * k + 1] - c[2 * k + 1]).powi(2)).sqrt();
        }
        m
    }

    /// Membership in the open domain.
    pub fn contains(&self, x: &[f64]) -> bool {
        match self.kind {
            DomainKind::Ball => self.radial_distance(x) < self.radius,
            DomainKind::Polydisc => {
                let m = self.moduli(x);
                m[..self.dim_complex].iter().all(|&r| r < self.radius)
            }
        }
    }

    /// Euclidean distance from `x` to the closed domain (0 inside).
    pub fn distance_outside(&self, x: &[f64]) -> f64 {
        match self.kind {
            DomainKind::Ball => (self.radial_distance(x) - self.radius).max(0.0),
            DomainKind::Polydisc => {
                let m = self.moduli(x);
                m[..self.dim_complex]
                    .iter()
                    .map(|&r| (r - self.radius).max(0.0).powi(2))
                    .sum::<f64>()
                    .sqrt()
            }
        }
    }

    /// Distance from an interior point to the boundary (0 outside).
    pub fn distance_to_boundary(&self, x: &[f64]) -> f64 {
        match self.kind {
            DomainKind::Ball => (self.radius - self.radial_distance(x)).max(0.0),
            DomainKind::Polydisc => {
                let m = self.moduli(x);
                m[..self.dim_complex]
                    .iter()
                    .map(|&r| (self.radius - r).max(0.0))
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }

    /// Lebesgue measure of the domain in R^{2n}.
    pub fn volume(&self) -> f64 {
        let r = self.radius;
        let pi = std::f64::consts::PI;
        match (self.kind, self.dim_complex) {
            (_, 1) => pi * r * r,
            (DomainKind::Ball, _) => pi * pi / 2.0 * r.powi(4),
            (DomainKind::Polydisc, _) => (pi * r * r).powi(2),
        }
    }

    /// Project `x` radially onto the boundary sphere (balls only; for polydiscs
    /// each coordinate beyond the radius is scaled back onto its circle).
    pub fn project_to_boundary(&self, x: &[f64]) -> [f64; 4] {
        let c = self.center_real();
        let mut p = [0.0; 4];
        p[..self.dim_real()].copy_from_slice(&x[..self.dim_real()]);
        match self.kind {
            DomainKind::Ball => {
                let d = self.radial_distance(x);
                if d > 0.0 {
                    for i in 0..self.dim_real() {
                        p[i] = c[i] + (x[i] - c[i]) * self.radius / d;
                    }
                } else {
                    p[0] = c[0] + self.radius;
                }
            }
            DomainKind::Polydisc => {
                let m = self.moduli(x);
                let kmax = (0..self.dim_complex)
                    .max_by(|&a, &b| m[a].total_cmp(&m[b]))
                    .unwrap_or(0);
                for k in 0..self.dim_complex {
                    let s = if k == kmax || m[k] > self.radius { self.radius / m[k].max(1e-300) } else { 1.0 };
                    p[2 * k] = c[2 * k] + (x[2 * k] - c[2 * k]) * s;
                    p[2 * k + 1] = c[2 * k + 1] + (x[2 * k + 1] - c[2 * k + 1]) * s;
                }
            }
        }
        p
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Domain> {
        let d: Domain = serde_json::from_str(text)?;
        make_domain(d.kind, d.dim_complex, d.radius, &d.center)
    }
}

/// Lattice offset of a cell; unused trailing entries are zero.
pub type Lattice = [i32; 4];

#[derive(Debug, Clone)]
struct Row {
    /// Lattice coordinates except the first one.
    key: [i32; 3],
    lo: i32,
    len: u32,
    offset: usize,
}

/// A run of whole rows processed as one unit of parallel work.
#[derive(Debug, Clone)]
pub struct Block {
    pub rows: Range<usize>,
    pub cells: Range<usize>,
}

/// Uniform lattice over a domain with interior/boundary classification.
#[derive(Debug)]
pub struct Grid {
    domain: Domain,
    resolution: usize,
    h: f64,
    half_extent: i32,
    rows: Vec<Row>,
    row_table: Vec<u32>,
    blocks: Vec<Block>,
    interior: Vec<bool>,
    n_cells: usize,
    n_interior: usize,
}

fn max_cells_cap() -> usize {
    std::env::var(MAX_CELLS_ENV)
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(DEFAULT_MAX_CELLS)
}

/// Build the lattice of `domain` at `resolution` cells per unit length.
pub fn make_grid(domain: &Domain, resolution: usize) -> Result<Arc<Grid>> {
    make_grid_with_cap(domain, resolution, max_cells_cap())
}

/// [`make_grid`] with an explicit cell cap.
pub fn make_grid_with_cap(domain: &Domain, resolution: usize, cap: usize) -> Result<Arc<Grid>> {
    if resolution < MIN_RESOLUTION {
        return Err(Error::ResolutionTooSmall { got: resolution, min: MIN_RESOLUTION });
    }
    let h = 1.0 / resolution as f64;
    let dr = domain.dim_real();
    let reach = domain.radius + BAND_WIDTH * h;
    let fattened = match (domain.kind, domain.dim_complex) {
        (_, 1) => std::f64::consts::PI * reach * reach,
        (DomainKind::Ball, _) => std::f64::consts::PI.powi(2) / 2.0 * reach.powi(4),
        (DomainKind::Polydisc, _) => (std::f64::consts::PI * reach * reach).powi(2),
    };
    let estimated = (fattened / h.powi(dr as i32) * 1.02) as usize + 16;
    if estimated > cap {
        return Err(Error::MemoryBudget { estimated, cap });
    }

    let m = (reach / h).ceil() as i32 + 1;
    let side = (2 * m + 1) as usize;
    let n_keys = side.pow(dr as u32 - 1);
    let c = domain.center_real();
    let band = BAND_WIDTH * h * (1.0 + 1e-12);

    let mut rows = Vec::new();
    let mut row_table = vec![u32::MAX; n_keys];
    let mut interior = Vec::with_capacity(estimated);
    let mut offset = 0usize;
    for key_id in 0..n_keys {
        let mut key = [0i32; 3];
        let mut rem = key_id;
        for slot in key.iter_mut().take(dr - 1) {
            *slot = (rem % side) as i32 - m;
            rem /= side;
        }
        let mut lo = None;
        let mut len = 0u32;
        for k1 in -m..=m {
            let k = [k1, key[0], key[1], key[2]];
            let x = lattice_point(&c, h, &k);
            let inside = domain.contains(&x);
            if inside || domain.distance_outside(&x) <= band {
                if lo.is_none() {
                    lo = Some(k1);
                }
                len += 1;
                interior.push(inside);
            } else if lo.is_some() {
                break;
            }
        }
        if let Some(lo) = lo {
            row_table[key_id] = rows.len() as u32;
            rows.push(Row { key, lo, len, offset });
            offset += len as usize;
        }
    }
    let n_cells = offset;
    let n_interior = interior.iter().filter(|&&b| b).count();

    let mut blocks = Vec::new();
    let mut start_row = 0;
    let mut start_cell = 0;
    for (r, row) in rows.iter().enumerate() {
        let end = row.offset + row.len as usize;
        if end - start_cell >= exec::CHUNK || r + 1 == rows.len() {
            blocks.push(Block { rows: start_row..r + 1, cells: start_cell..end });
            start_row = r + 1;
            start_cell = end;
        }
    }

    Ok(Arc::new(Grid {
        domain: domain.clone(),
        resolution,
        h,
        half_extent: m,
        rows,
        row_table,
        blocks,
        interior,
        n_cells,
        n_interior,
    }))
}

fn lattice_point(c: &[f64; 4], h: f64, k: &Lattice) -> [f64; 4] {
    [c[0] + h * k[0] as f64, c[1] + h * k[1] as f64, c[2] + h * k[2] as f64, c[3] + h * k[3] as f64]
}

impl Grid {
    pub fn domain(&self) -> &Domain {
        &self.domain
    }
    pub fn resolution(&self) -> usize {
        self.resolution
    }
    pub fn spacing(&self) -> f64 {
        self.h
    }
    pub fn dim_complex(&self) -> usize {
        self.domain.dim_complex
    }
    pub fn dim_real(&self) -> usize {
        self.domain.dim_real()
    }
    /// Lebesgue measure of one cell, `h^{2n}`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim_real() as i32)
    }
    /// Total number of stored cells (interior plus band).
    pub fn len(&self) -> usize {
        self.n_cells
    }
    pub fn is_empty(&self) -> bool {
        self.n_cells == 0
    }
    pub fn interior_count(&self) -> usize {
        self.n_interior
    }
    pub fn band_count(&self) -> usize {
        self.n_cells - self.n_interior
    }
    pub fn is_interior(&self, idx: usize) -> bool {
        self.interior[idx]
    }
    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Cell index of a lattice offset, if stored.
    pub fn index_of(&self, k: &Lattice) -> Option<usize> {
        let m = self.half_extent;
        let side = 2 * m + 1;
        let dr = self.dim_real();
        let mut key_id = 0i64;
        for d in (1..dr).rev() {
            let v = k[d] + m;
            if v < 0 || v >= side {
                return None;
            }
            key_id = key_id * side as i64 + v as i64;
        }
        let r = *self.row_table.get(key_id as usize)?;
        if r == u32::MAX {
            return None;
        }
        let row = &self.rows[r as usize];
        let off = k[0] - row.lo;
        if off < 0 || off >= row.len as i32 {
            return None;
        }
        Some(row.offset + off as usize)
    }

    /// Lattice offset of a cell index.
    pub fn lattice_of(&self, idx: usize) -> Lattice {
        let r = self.rows.partition_point(|row| row.offset + row.len as usize <= idx);
        let row = &self.rows[r];
        [row.lo + (idx - row.offset) as i32, row.key[0], row.key[1], row.key[2]]
    }

    pub fn point(&self, k: &Lattice) -> [f64; 4] {
        lattice_point(&self.domain.center_real(), self.h, k)
    }

    /// Center of a cell.
    pub fn center_of(&self, idx: usize) -> [f64; 4] {
        self.point(&self.lattice_of(idx))
    }

    /// Nearest stored cell to a point, if any.
    pub fn nearest_cell(&self, x: &[f64]) -> Option<usize> {
        let c = self.domain.center_real();
        let mut k = [0i32; 4];
        for d in 0..self.dim_real() {
            k[d] = ((x[d] - c[d]) / self.h).round() as i32;
        }
        self.index_of(&k)
    }

    /// Visit every cell in parallel blocks. `f(idx, lattice, center)`.
    pub fn fill<T, F>(&self, out: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize, &Lattice, &[f64; 4]) -> T + Sync + Send,
    {
        assert_eq!(out.len(), self.n_cells);
        let c = self.domain.center_real();
        let h = self.h;
        let run = |block: &Block, slice: &mut [T]| {
            for row in &self.rows[block.rows.clone()] {
                for j in 0..row.len as usize {
                    let idx = row.offset + j;
                    let k = [row.lo + j as i32, row.key[0], row.key[1], row.key[2]];
                    let x = lattice_point(&c, h, &k);
                    slice[idx - block.cells.start] = f(idx, &k, &x);
                }
            }
        };
        let mut slices: Vec<(&Block, &mut [T])> = Vec::with_capacity(self.blocks.len());
        let mut rest = out;
        for block in &self.blocks {
            let (head, tail) = rest.split_at_mut(block.cells.len());
            slices.push((block, head));
            rest = tail;
        }
        #[cfg(feature = "parallel")]
        if exec::parallel_enabled() {
            use rayon::prelude::*;
            slices.into_par_iter().for_each(|(b, s)| run(b, s));
            return;
        }
        for (b, s) in slices {
            run(b, s);
        }
    }

    /// Build a per-cell vector.
    pub fn map<T, F>(&self, f: F) -> Vec<T>
    where
        T: Send + Clone + Default,
        F: Fn(usize, &Lattice, &[f64; 4]) -> T + Sync + Send,
    {
        let mut out = vec![T::default(); self.n_cells];
        self.fill(&mut out, f);
        out
    }

    /// Deterministic sum over cells (block partials combined in order).
    pub fn sum<F>(&self, f: F) -> f64
    where
        F: Fn(usize, &Lattice, &[f64; 4]) -> f64 + Sync + Send,
    {
        let c = self.domain.center_real();
        let h = self.h;
        let part = |block: &Block| {
            let mut s = 0.0;
            for row in &self.rows[block.rows.clone()] {
                for j in 0..row.len as usize {
                    let k = [row.lo + j as i32, row.key[0], row.key[1], row.key[2]];
                    s += f(row.offset + j, &k, &lattice_point(&c, h, &k));
                }
            }
            s
        };
        let parts = exec::map_items(&self.blocks, part);
        parts.iter().sum()
    }

    /// Interior cell indices in storage order.
    pub fn interior_indices(&self) -> Vec<u32> {
        (0..self.n_cells).filter(|&i| self.interior[i]).map(|i| i as u32).collect()
    }

    /// Interior cells grouped by the color `(k1 + k2 + 2 k3 + 2 k4) mod colors`.
    ///
    /// No stencil displacement used in this crate maps a cell to another cell
    /// of the same color, which makes in-place colored sweeps deterministic.
    pub fn interior_colors(&self) -> Vec<Vec<u32>> {
        let colors = self.color_count();
        let mut out = vec![Vec::new(); colors];
        for row in &self.rows {
            for j in 0..row.len as usize {
                let idx = row.offset + j;
                if !self.interior[idx] {
                    continue;
                }
                let k = [row.lo + j as i32, row.key[0], row.key[1], row.key[2]];
                let c = (k[0] + k[1] + 2 * k[2] + 2 * k[3]).rem_euclid(colors as i32) as usize;
                out[c].push(idx as u32);
            }
        }
        out
    }

    pub fn color_count(&self) -> usize {
        if self.dim_complex() == 1 { 2 } else { 4 }
    }

    /// Write the domain descriptor and one CSV row per cell with `value`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W, values: &[f64]) -> Result<()> {
        let header = if self.dim_complex() == 1 { "x1,y1,value" } else { "x1,y1,x2,y2,value" };
        writeln!(w, "{header}")?;
        for idx in 0..self.n_cells {
            let x = self.center_of(idx);
            for d in 0..self.dim_real() {
                write!(w, "{},", x[d])?;
            }
            writeln!(w, "{}", values[idx])?;
        }
        Ok(())
    }

    /// Read values written by [`Grid::write_csv`]; cells missing from the
    /// file keep `default`.
    pub fn read_csv<R: std::io::BufRead>(&self, r: R, default: f64) -> Result<Vec<f64>> {
        let mut values = vec![default; self.n_cells];
        let dr = self.dim_real();
        for (line_no, line) in r.lines().enumerate() {
            let line = line?;
            if line_no == 0 || line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != dr + 1 {
                return Err(Error::Validation {
                    path: format!("line {}", line_no + 1),
                    message: format!("expected {} columns", dr + 1),
                });
            }
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|e| Error::Validation {
                    path: format!("line {}", line_no + 1),
                    message: e.to_string(),
                })
            };
            let mut x = [0.0; 4];
            for d in 0..dr {
                x[d] = parse(parts[d])?;
            }
            let v = parse(parts[dr])?;
            if let Some(idx) = self.nearest_cell(&x) {
                values[idx] = v;
            }
        }
        Ok(values)
    }
}

/// A sorted union of disjoint radius intervals around the domain center.
///
/// Used to carry the exact shape of rotation-invariant sets next to their
/// cell masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialSet {
    /// Closed intervals `[a, b]` with `a <= b`, sorted and disjoint.
    pub intervals: Vec<[f64; 2]>,
}

impl RadialSet {
    pub fn empty() -> Self {
        RadialSet { intervals: Vec::new() }
    }

    /// Closed ball `{rho <= r}`.
    pub fn ball(r: f64) -> Self {
        RadialSet { intervals: vec![[0.0, r]] }
    }

    pub fn from_intervals(mut intervals: Vec<[f64; 2]>) -> Self {
        intervals.retain(|iv| iv[1] >= iv[0]);
        intervals.sort_by(|a, b| a[0].total_cmp(&b[0]));
        let mut merged: Vec<[f64; 2]> = Vec::new();
        for iv in intervals {
            match merged.last_mut() {
                Some(last) if iv[0] <= last[1] => last[1] = last[1].max(iv[1]),
                _ => merged.push(iv),
            }
        }
        RadialSet { intervals: merged }
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn contains(&self, rho: f64) -> bool {
        const REL: f64 = 1e-12;
        self.intervals.iter().any(|iv| rho >= iv[0] * (1.0 - REL) && rho <= iv[1] * (1.0 + REL))
    }

    /// Outermost radius, if nonempty.
    pub fn sup(&self) -> Option<f64> {
        self.intervals.last().map(|iv| iv[1])
    }

    pub fn intersect(&self, other: &RadialSet) -> RadialSet {
        let mut out = Vec::new();
        for a in &self.intervals {
            for b in &other.intervals {
                let lo = a[0].max(b[0]);
                let hi = a[1].min(b[1]);
                if lo <= hi {
                    out.push([lo, hi]);
                }
            }
        }
        RadialSet::from_intervals(out)
    }

    /// Lebesgue measure of the rotation-invariant set in C^n.
    pub fn volume(&self, n: usize) -> f64 {
        let pi = std::f64::consts::PI;
        let ball = |r: f64| if n == 1 { pi * r * r } else { pi * pi / 2.0 * r.powi(4) };
        self.intervals.iter().map(|iv| ball(iv[1]) - ball(iv[0])).sum()
    }
}

/// A set of interior cells, standing in for subsets E, K of the domain.
#[derive(Debug, Clone)]
pub struct RegionMask {
    grid: Arc<Grid>,
    members: Vec<bool>,
    compactly_contained: bool,
    radial: Option<RadialSet>,
}

/// Mask of the interior cells whose centers satisfy `predicate`.
pub fn region_from_predicate<P>(grid: &Arc<Grid>, predicate: P) -> RegionMask
where
    P: Fn(&[f64; 4]) -> bool + Sync + Send,
{
    let members = grid.map(|idx, _, x| grid.is_interior(idx) && predicate(x));
    RegionMask::from_members(grid, members, None)
}

impl RegionMask {
    /// Mask from per-cell flags; band cells are dropped.
    pub fn from_members(grid: &Arc<Grid>, mut members: Vec<bool>, radial: Option<RadialSet>) -> RegionMask {
        assert_eq!(members.len(), grid.len());
        for (i, m) in members.iter_mut().enumerate() {
            *m = *m && grid.is_interior(i);
        }
        let h = grid.spacing();
        let dom = grid.domain();
        let compactly_contained = (0..grid.len())
            .filter(|&i| members[i])
            .all(|i| dom.distance_to_boundary(&grid.center_of(i)) >= h * (1.0 - 1e-9));
        RegionMask { grid: grid.clone(), members, compactly_contained, radial }
    }

    /// Mask from a per-cell predicate on indices.
    pub fn from_cells<P>(grid: &Arc<Grid>, pred: P) -> RegionMask
    where
        P: Fn(usize) -> bool + Sync + Send,
    {
        let members = grid.map(|idx, _, _| pred(idx));
        RegionMask::from_members(grid, members, None)
    }

    /// Rotation-invariant region with an exact radial description. Requires a
    /// ball domain; radii are measured from the domain center.
    pub fn radial(grid: &Arc<Grid>, set: RadialSet) -> RegionMask {
        let dom = grid.domain().clone();
        let members = grid.map(|idx, _, x| grid.is_interior(idx) && set.contains(dom.radial_distance(x)));
        let radial = (dom.kind == DomainKind::Ball).then_some(set);
        RegionMask::from_members(grid, members, radial)
    }

    /// Closed centered ball `{|z - center| <= r}`.
    pub fn ball(grid: &Arc<Grid>, r: f64) -> RegionMask {
        RegionMask::radial(grid, RadialSet::ball(r))
    }

    pub fn full(grid: &Arc<Grid>) -> RegionMask {
        let members = (0..grid.len()).map(|i| grid.is_interior(i)).collect();
        let radial = (grid.domain().kind == DomainKind::Ball)
            .then(|| RadialSet { intervals: vec![[0.0, grid.domain().radius * (1.0 - 1e-15)]] });
        RegionMask::from_members(grid, members, radial)
    }

    pub fn empty(grid: &Arc<Grid>) -> RegionMask {
        RegionMask::from_members(grid, vec![false; grid.len()], Some(RadialSet::empty()))
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn contains(&self, idx: usize) -> bool {
        self.members[idx]
    }
    pub fn members(&self) -> &[bool] {
        &self.members
    }
    pub fn compactly_contained(&self) -> bool {
        self.compactly_contained
    }
    pub fn radial_shape(&self) -> Option<&RadialSet> {
        self.radial.as_ref()
    }
    pub fn count(&self) -> usize {
        self.members.iter().filter(|&&b| b).count()
    }
    pub fn is_empty(&self) -> bool {
        !self.members.iter().any(|&b| b)
    }

    /// Lebesgue measure of the union of member cells.
    pub fn volume(&self) -> f64 {
        self.count() as f64 * self.grid.cell_volume()
    }

    /// Whether a point belongs to the region: exact for radial regions,
    /// nearest-cell lookup otherwise.
    pub fn contains_point(&self, x: &[f64]) -> bool {
        if let Some(set) = &self.radial {
            return set.contains(self.grid.domain().radial_distance(x));
        }
        self.grid.nearest_cell(x).map(|i| self.members[i]).unwrap_or(false)
    }

    pub fn intersect(&self, other: &RegionMask) -> Result<RegionMask> {
        if !Arc::ptr_eq(&self.grid, &other.grid) {
            return Err(Error::GridMismatch);
        }
        let members = self.members.iter().zip(&other.members).map(|(a, b)| *a && *b).collect();
        let radial = match (&self.radial, &other.radial) {
            (Some(a), Some(b)) => Some(a.intersect(b)),
            _ => None,
        };
        Ok(RegionMask::from_members(&self.grid, members, radial))
    }

    pub fn union(&self, other: &RegionMask) -> Result<RegionMask> {
        if !Arc::ptr_eq(&self.grid, &other.grid) {
            return Err(Error::GridMismatch);
        }
        let members = self.members.iter().zip(&other.members).map(|(a, b)| *a || *b).collect();
        let radial = match (&self.radial, &other.radial) {
            (Some(a), Some(b)) => {
                let mut iv = a.intervals.clone();
                iv.extend_from_slice(&b.intervals);
                Some(RadialSet::from_intervals(iv))
            }
            _ => None,
        };
        Ok(RegionMask::from_members(&self.grid, members, radial))
    }

    /// Add every interior cell within `cells` lattice steps (sup-norm).
    pub fn dilate(&self, cells: i32) -> RegionMask {
        let grid = &self.grid;
        let dr = grid.dim_real();
        let members = grid.map(|idx, k, _| {
            if !grid.is_interior(idx) {
                return false;
            }
            if self.members[idx] {
                return true;
            }
            let mut off = [0i32; 4];
            let span = (2 * cells + 1).pow(dr as u32);
            for code in 0..span {
                let mut c = code;
                for o in off.iter_mut().take(dr) {
                    *o = (c % (2 * cells + 1)) - cells;
                    c /= 2 * cells + 1;
                }
                let kk = [k[0] + off[0], k[1] + off[1], k[2] + off[2], k[3] + off[3]];
                if let Some(j) = grid.index_of(&kk) {
                    if self.members[j] {
                        return true;
                    }
                }
            }
            false
        });
        RegionMask::from_members(grid, members, None)
    }

    /// Cells whose whole lattice cube of half-width `cells` lies in the region.
    pub fn erode(&self, cells: i32) -> RegionMask {
        let grid = &self.grid;
        let dr = grid.dim_real();
        let side = 2 * cells + 1;
        let members = grid.map(|idx, k, _| {
            if !self.members[idx] {
                return false;
            }
            let mut off = [0i32; 4];
            for code in 0..side.pow(dr as u32) {
                let mut c = code;
                for o in off.iter_mut().take(dr) {
                    *o = (c % side) - cells;
                    c /= side;
                }
                let kk = [k[0] + off[0], k[1] + off[1], k[2] + off[2], k[3] + off[3]];
                match grid.index_of(&kk) {
                    Some(j) if self.members[j] => {}
                    _ => return false,
                }
            }
            true
        });
        RegionMask::from_members(grid, members, None)
    }

    /// Members at distance at least `h` from the boundary of the domain.
    pub fn compact_part(&self) -> RegionMask {
        if self.compactly_contained {
            return self.clone();
        }
        let grid = &self.grid;
        let h = grid.spacing();
        let dom = grid.domain();
        let members = grid.map(|i, _, x| self.members[i] && dom.distance_to_boundary(x) >= h * (1.0 - 1e-9));
        RegionMask::from_members(grid, members, None)
    }

    /// Member cell indices, one per CSV line, with an `index` header.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index")?;
        for (i, &m) in self.members.iter().enumerate() {
            if m {
                writeln!(w, "{i}")?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: std::io::BufRead>(grid: &Arc<Grid>, r: R) -> Result<RegionMask> {
        let mut members = vec![false; grid.len()];
        for (line_no, line) in r.lines().enumerate() {
            let line = line?;
            if line_no == 0 || line.trim().is_empty() {
                continue;
            }
            let idx: usize = line.trim().parse().map_err(|_| Error::Validation {
                path: format!("line {}", line_no + 1),
                message: "expected a cell index".into(),
            })?;
            if idx >= grid.len() {
                return Err(Error::Validation {
                    path: format!("line {}", line_no + 1),
                    message: format!("cell index {idx} out of range"),
                });
            }
            members[idx] = true;
        }
        Ok(RegionMask::from_members(grid, members, None))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn domain_contract() {
        assert!(make_domain(DomainKind::Ball, 1, 1.0, &[]).is_ok());
        assert!(make_domain(DomainKind::Ball, 2, 1.0, &[]).is_ok());
        assert!(matches!(
            make_domain(DomainKind::Ball, 3, 1.0, &[]),
            Err(Error::UnsupportedDimension(3))
        ));
        assert!(matches!(make_domain(DomainKind::Ball, 1, 0.0, &[]), Err(Error::InvalidRadius(_))));
        assert!(matches!(make_domain(DomainKind::Ball, 1, -2.0, &[]), Err(Error::InvalidRadius(_))));
    }

    #[test]
    fn disc_cell_count_matches_area() {
        let d = Domain::unit_ball(1).unwrap();
        let g = make_grid(&d, 256).unwrap();
        let expected = PI * 256.0 * 256.0;
        let rel = (g.interior_count() as f64 - expected).abs() / expected;
        assert!(rel < 0.02, "relative count error {rel}");
    }

    #[test]
    fn too_small_resolution() {
        let d = Domain::unit_ball(1).unwrap();
        assert!(matches!(make_grid(&d, 4), Err(Error::ResolutionTooSmall { got: 4, .. })));
    }

    #[test]
    fn memory_cap_enforced() {
        let d = Domain::unit_ball(2).unwrap();
        assert!(matches!(make_grid_with_cap(&d, 64, 1000), Err(Error::MemoryBudget { .. })));
    }

    #[test]
    fn index_roundtrip_and_stencil_coverage() {
        let d = Domain::unit_ball(2).unwrap();
        let g = make_grid(&d, 8).unwrap();
        for idx in (0..g.len()).step_by(7) {
            let k = g.lattice_of(idx);
            assert_eq!(g.index_of(&k), Some(idx));
        }
        // every interior cell has all axis and diagonal neighbors
        for idx in 0..g.len() {
            if !g.is_interior(idx) {
                continue;
            }
            let k = g.lattice_of(idx);
            for a in 0..4 {
                for b in 0..4 {
                    for sa in [-1, 1] {
                        for sb in [-1, 1] {
                            let mut kk = k;
                            kk[a] += sa;
                            if a != b {
                                kk[b] += sb;
                            }
                            assert!(g.index_of(&kk).is_some());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn colors_separate_stencil_neighbors() {
        let d = Domain::unit_ball(2).unwrap();
        let g = make_grid(&d, 8).unwrap();
        let colors = g.interior_colors();
        let mut color_of = vec![usize::MAX; g.len()];
        for (c, list) in colors.iter().enumerate() {
            for &i in list {
                color_of[i as usize] = c;
            }
        }
        let steps: [[i32; 4]; 8] = [
            [1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1],
            [1, 0, 1, 0], [1, 0, -1, 0], [1, 0, 0, 1], [0, 1, 1, 0],
        ];
        for i in g.interior_indices() {
            let k = g.lattice_of(i as usize);
            for s in steps {
                for sign in [-1, 1] {
                    let kk = [k[0] + sign * s[0], k[1] + sign * s[1], k[2] + sign * s[2], k[3] + sign * s[3]];
                    if let Some(j) = g.index_of(&kk) {
                        if g.is_interior(j) {
                            assert_ne!(color_of[i as usize], color_of[j]);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn region_examples() {
        let d = Domain::unit_ball(1).unwrap();
        let g = make_grid(&d, 128).unwrap();
        let r = (-1.0f64).exp();
        let small = region_from_predicate(&g, |x| (x[0] * x[0] + x[1] * x[1]).sqrt() <= r);
        let expected = (-2.0f64).exp() * PI * 128.0 * 128.0;
        assert!((small.count() as f64 - expected).abs() / expected < 0.02);
        assert!(small.compactly_contained());

        let empty = region_from_predicate(&g, |_| false);
        assert!(empty.is_empty());

        let full = region_from_predicate(&g, |x| (x[0] * x[0] + x[1] * x[1]).sqrt() < 1.0);
        assert!(!full.compactly_contained());
        assert_eq!(full.count(), g.interior_count());
    }

    #[test]
    fn predicate_monotone() {
        let d = Domain::unit_ball(1).unwrap();
        let g = make_grid(&d, 32).unwrap();
        let a = region_from_predicate(&g, |x| x[0] > 0.2);
        let b = region_from_predicate(&g, |x| x[0] > 0.1);
        for i in 0..g.len() {
            assert!(!a.contains(i) || b.contains(i));
        }
    }

    #[test]
    fn csv_roundtrip() {
        let d = Domain::unit_ball(1).unwrap();
        let g = make_grid(&d, 16).unwrap();
        let vals: Vec<f64> = (0..g.len()).map(|i| i as f64 * 0.5).collect();
        let mut buf = Vec::new();
        g.write_csv(&mut buf, &vals).unwrap();
        let back = g.read_csv(std::io::Cursor::new(buf), f64::NAN).unwrap();
        assert_eq!(vals, back);

        let m = RegionMask::ball(&g, 0.5);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = RegionMask::read_csv(&g, std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.members(), m.members());

        let json = d.to_json().unwrap();
        assert_eq!(Domain::from_json(&json).unwrap(), d);
    }
}
