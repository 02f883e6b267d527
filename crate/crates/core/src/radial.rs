//! Rotation-invariant functions as profiles of `s = ln |z - c|`.
//!
//! A U(n)-invariant function `u(z) = G(ln |z - c|)` is psh exactly when `G` is
//! convex and nondecreasing. Its Monge-Ampère mass inside the ball of radius
//! `rho` is `(2 pi G'(ln rho))^n`, so measures, envelopes and capacities of
//! such functions reduce to one-dimensional computations.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::grid::RadialSet;

/// Second-order jet `(G, dG/ds, d^2G/ds^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub d: f64,
    pub dd: f64,
}

impl Jet {
    pub fn constant(v: f64) -> Jet {
        Jet { v, d: 0.0, dd: 0.0 }
    }
    pub fn add(self, o: Jet) -> Jet {
        Jet { v: self.v + o.v, d: self.d + o.d, dd: self.dd + o.dd }
    }
    pub fn sub(self, o: Jet) -> Jet {
        Jet { v: self.v - o.v, d: self.d - o.d, dd: self.dd - o.dd }
    }
    pub fn mul(self, o: Jet) -> Jet {
        Jet {
            v: self.v * o.v,
            d: self.d * o.v + self.v * o.d,
            dd: self.dd * o.v + 2.0 * self.d * o.d + self.v * o.dd,
        }
    }
    pub fn div(self, o: Jet) -> Jet {
        let q = self.v / o.v;
        let d = (self.d - q * o.d) / o.v;
        let dd = (self.dd - 2.0 * d * o.d - q * o.dd) / o.v;
        Jet { v: q, d, dd }
    }
    pub fn neg(self) -> Jet {
        Jet { v: -self.v, d: -self.d, dd: -self.dd }
    }
    pub fn ln(self) -> Jet {
        if self.v == 0.0 {
            return Jet { v: f64::NEG_INFINITY, d: f64::NAN, dd: f64::NAN };
        }
        let r = self.d / self.v;
        Jet { v: self.v.ln(), d: r, dd: self.dd / self.v - r * r }
    }
}

/// Number of samples used to scan profiles for kinks and sign changes.
pub const SCAN_NODES: usize = 1 << 14;

/// A radial function about a center, evaluated through its `s`-profile.
pub trait RadialProfile: Send + Sync {
    /// Real coordinates of the center.
    fn center(&self) -> [f64; 4];
    /// Jet at `s`; at a kink `right` selects the one-sided derivatives.
    fn jet(&self, s: f64, right: bool) -> Jet;
    /// Kink locations (in `s`) inside `[lo, hi]`, sorted.
    fn kinks(&self, lo: f64, hi: f64) -> Vec<f64>;

    fn value_at_radius(&self, rho: f64) -> f64 {
        if rho <= 0.0 {
            return self.jet(f64::NEG_INFINITY.max(-745.0), true).v;
        }
        self.jet(rho.ln(), true).v
    }
}

/// A profile that remembers every jet and kink scan it has computed.
/// Repeated scans over the same nodes then cost a lookup each.
pub struct Memo {
    inner: Arc<dyn RadialProfile>,
    jets: Mutex<HashMap<(u64, bool), Jet>>,
    kinks: Mutex<HashMap<(u64, u64), Vec<f64>>>,
}

impl Memo {
    pub fn new(inner: Arc<dyn RadialProfile>) -> Memo {
        Memo { inner, jets: Mutex::default(), kinks: Mutex::default() }
    }
}

impl RadialProfile for Memo {
    fn center(&self) -> [f64; 4] {
        self.inner.center()
    }

    fn jet(&self, s: f64, right: bool) -> Jet {
        let key = (s.to_bits(), right);
        if let Some(j) = self.jets.lock().unwrap().get(&key) {
            return *j;
        }
        let j = self.inner.jet(s, right);
        self.jets.lock().unwrap().insert(key, j);
        j
    }

    fn kinks(&self, lo: f64, hi: f64) -> Vec<f64> {
        let key = (lo.to_bits(), hi.to_bits());
        if let Some(k) = self.kinks.lock().unwrap().get(&key) {
            return k.clone();
        }
        let k = self.inner.kinks(lo, hi);
        self.kinks.lock().unwrap().insert(key, k.clone());
        k
    }
}

/// Piecewise-linear profile in `s`, constant to the left of the first node
/// and linearly extrapolated to the right of the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlCurve {
    pub center: [f64; 4],
    pub s: Vec<f64>,
    pub g: Vec<f64>,
}

impl PlCurve {
    fn segment(&self, s: f64, right: bool) -> Option<usize> {
        let n = self.s.len();
        if n < 2 {
            return None;
        }
        if s < self.s[0] || (!right && s <= self.s[0]) {
            return None;
        }
        let k = if right {
            self.s.partition_point(|&t| t <= s)
        } else {
            self.s.partition_point(|&t| t < s)
        };
        Some(k.clamp(1, n - 1) - 1)
    }

    /// Slope of the last segment.
    pub fn outer_slope(&self) -> f64 {
        let n = self.s.len();
        if n < 2 {
            return 0.0;
        }
        (self.g[n - 1] - self.g[n - 2]) / (self.s[n - 1] - self.s[n - 2])
    }
}

impl RadialProfile for PlCurve {
    fn center(&self) -> [f64; 4] {
        self.center
    }

    fn jet(&self, s: f64, right: bool) -> Jet {
        match self.segment(s, right) {
            None => Jet::constant(self.g.first().copied().unwrap_or(0.0)),
            Some(k) => {
                let slope = (self.g[k + 1] - self.g[k]) / (self.s[k + 1] - self.s[k]);
                Jet { v: self.g[k] + slope * (s - self.s[k]), d: slope, dd: 0.0 }
            }
        }
    }

    fn kinks(&self, lo: f64, hi: f64) -> Vec<f64> {
        let n = self.s.len();
        let mut out = Vec::new();
        for k in 0..n.saturating_sub(1) {
            let t = self.s[k];
            if t < lo || t > hi {
                continue;
            }
            let left = if k == 0 { 0.0 } else { (self.g[k] - self.g[k - 1]) / (self.s[k] - self.s[k - 1]) };
            let right = (self.g[k + 1] - self.g[k]) / (self.s[k + 1] - self.s[k]);
            if (right - left).abs() > 1e-12 * (1.0 + left.abs()) {
                out.push(t);
            }
        }
        out
    }
}

/// Smooth profile from nodal values and derivatives: cubic Hermite values,
/// linearly interpolated first and second derivatives. Constant to the left
/// of the first node, linear to the right of the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledProfile {
    pub center: [f64; 4],
    pub s: Vec<f64>,
    pub g: Vec<f64>,
    pub gs: Vec<f64>,
    pub gss: Vec<f64>,
}

impl RadialProfile for SampledProfile {
    fn center(&self) -> [f64; 4] {
        self.center
    }

    fn jet(&self, s: f64, _right: bool) -> Jet {
        let n = self.s.len();
        if n == 0 {
            return Jet::constant(0.0);
        }
        if s <= self.s[0] {
            return Jet::constant(self.g[0]);
        }
        if s >= self.s[n - 1] {
            return Jet { v: self.g[n - 1] + self.gs[n - 1] * (s - self.s[n - 1]), d: self.gs[n - 1], dd: 0.0 };
        }
        let k = (self.s.partition_point(|&t| t <= s) - 1).min(n - 2);
        let (s0, s1) = (self.s[k], self.s[k + 1]);
        let dt = s1 - s0;
        let t = (s - s0) / dt;
        let (g0, g1, m0, m1) = (self.g[k], self.g[k + 1], self.gs[k] * dt, self.gs[k + 1] * dt);
        let t2 = t * t;
        let t3 = t2 * t;
        let v = (2.0 * t3 - 3.0 * t2 + 1.0) * g0 + (t3 - 2.0 * t2 + t) * m0 + (-2.0 * t3 + 3.0 * t2) * g1 + (t3 - t2) * m1;
        let d = self.gs[k] + (self.gs[k + 1] - self.gs[k]) * t;
        Jet { v, d, dd: self.gss[k] + (self.gss[k + 1] - self.gss[k]) * t }
    }

    fn kinks(&self, _lo: f64, _hi: f64) -> Vec<f64> {
        Vec::new()
    }
}

/// Largest nondecreasing convex minorant of samples `(s_i, f_i)`.
///
/// First replaces `f` by its suffix minimum `inf_{t >= s} f(t)`, then takes
/// the lower convex hull of the resulting graph.
pub fn convex_nondecreasing_minorant(center: [f64; 4], s: &[f64], f: &[f64]) -> PlCurve {
    assert_eq!(s.len(), f.len());
    let n = s.len();
    let mut m = f.to_vec();
    for k in (0..n.saturating_sub(1)).rev() {
        m[k] = m[k].min(m[k + 1]);
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(n);
    for k in 0..n {
        let p = (s[k], m[k]);
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    PlCurve {
        center,
        s: hull.iter().map(|p| p.0).collect(),
        g: hull.iter().map(|p| p.1).collect(),
    }
}

/// Uniform `s`-nodes on `[lo, hi]` merged with extra breakpoints.
pub fn s_nodes(lo: f64, hi: f64, count: usize, extra: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = (0..=count).map(|k| lo + (hi - lo) * k as f64 / count as f64).collect();
    v.extend(extra.iter().copied().filter(|t| *t > lo && *t < hi));
    v.sort_by(|a, b| a.total_cmp(b));
    v.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    v
}

/// Locate a root of `g` in `[a, b]` given a sign change, by bisection.
pub fn bisect<F: Fn(f64) -> f64>(g: F, mut a: f64, mut b: f64) -> f64 {
    let ga = g(a) > 0.0;
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if (g(m) > 0.0) == ga {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// The set `{rho in [rho_lo, rho_hi] : g(ln rho) > 0}` as closed intervals.
/// Sign changes are located by scanning and bisection.
pub fn radial_superlevel<F: Fn(f64) -> f64>(g: F, rho_lo: f64, rho_hi: f64, extra: &[f64]) -> RadialSet {
    let lo = rho_lo.max(1e-12).ln();
    let hi = rho_hi.ln();
    let nodes = s_nodes(lo, hi, SCAN_NODES, extra);
    let mut intervals = Vec::new();
    let mut start: Option<f64> = None;
    let mut prev_s = nodes[0];
    let mut prev_in = g(prev_s) > 0.0;
    if prev_in {
        start = Some(if rho_lo <= 1e-12 { 0.0 } else { rho_lo });
    }
    for &t in &nodes[1..] {
        let now_in = g(t) > 0.0;
        if now_in != prev_in {
            let root = bisect(&g, prev_s, t).exp();
            if now_in {
                start = Some(root);
            } else if let Some(a) = start.take() {
                intervals.push([a, root]);
            }
        }
        prev_in = now_in;
        prev_s = t;
    }
    if let Some(a) = start {
        intervals.push([a, rho_hi]);
    }
    RadialSet::from_intervals(intervals)
}

/// Surface measure of the sphere of radius `rho` in C^n.
pub fn sphere_area(n: usize, rho: f64) -> f64 {
    if n == 1 { 2.0 * PI * rho } else { 2.0 * PI * PI * rho.powi(3) }
}

/// Absolutely continuous MA density of a product of radial profiles at a
/// point of radius `rho`: the derivative of `(2 pi)^n prod G_k'` divided by
/// the sphere area.
pub fn mixed_density(profiles: &[&dyn RadialProfile], rho: f64) -> f64 {
    if rho <= 0.0 {
        return 0.0;
    }
    let n = profiles.len();
    let s = rho.ln();
    let jets: Vec<Jet> = profiles.iter().map(|p| p.jet(s, true)).collect();
    // d/ds of prod G_k'
    let mut deriv = 0.0;
    for k in 0..n {
        let mut term = jets[k].dd;
        for (m, j) in jets.iter().enumerate() {
            if m != k {
                term *= j.d;
            }
        }
        deriv += term;
    }
    let dm_drho = (2.0 * PI).powi(n as i32) * deriv / rho;
    (dm_drho / sphere_area(n, rho)).max(0.0)
}

/// Mass `(2 pi)^n prod G_k'(s)` of the mixed measure inside radius `e^s`.
pub fn mixed_mass_inside(profiles: &[&dyn RadialProfile], s: f64, right: bool) -> f64 {
    let n = profiles.len() as i32;
    let prod: f64 = profiles.iter().map(|p| p.jet(s, right).d).product();
    (2.0 * PI).powi(n) * prod
}
