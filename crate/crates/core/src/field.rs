//! Grid-sampled real functions.
//!
//! A [`ScalarField`] stores one value per stored cell: interior cells carry the
//! function, boundary-band cells its boundary trace. When the field was built
//! from a closed-form source (a model expression or a radial profile) the
//! source is kept so that point values, level sets and measures can be
//! evaluated exactly instead of through the lattice.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::Model;
use crate::radial::{PlCurve, RadialProfile};

/// Default floor substituted for `-inf` at log poles.
pub const DEFAULT_POLE_FLOOR: f64 = -1e6;
/// Default limit on the number of pole cells accepted by [`sample`].
pub const DEFAULT_MAX_POLES: usize = 16;

/// Closed-form description of a field.
#[derive(Clone)]
pub enum FieldSource {
    Model(Arc<Model>),
    Radial(Arc<dyn RadialProfile>),
}

impl std::fmt::Debug for FieldSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FieldSource::Model(m) => write!(f, "Model({m})"),
            FieldSource::Radial(c) => write!(f, "Radial({:?})", c.center()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SampleOptions {
    pub max_poles: usize,
    pub pole_floor: f64,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions { max_poles: DEFAULT_MAX_POLES, pole_floor: DEFAULT_POLE_FLOOR }
    }
}

#[derive(Clone)]
pub struct ScalarField {
    grid: Arc<Grid>,
    values: Vec<f64>,
    poles: Vec<u32>,
    lower: f64,
    upper: f64,
    source: Option<FieldSource>,
    radial: Option<Arc<dyn RadialProfile>>,
}

impl std::fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScalarField")
            .field("cells", &self.values.len())
            .field("poles", &self.poles.len())
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .field("source", &self.source)
            .finish()
    }
}

/// Sample a model at every cell center.
pub fn sample(model: &Model, grid: &Arc<Grid>) -> Result<ScalarField> {
    sample_with(model, grid, SampleOptions::default())
}

pub fn sample_with(model: &Model, grid: &Arc<Grid>, opts: SampleOptions) -> Result<ScalarField> {
    model.require_bound()?;
    if model.dim_used() > grid.dim_complex() {
        return Err(Error::Validation {
            path: "model".into(),
            message: format!("`{model}` uses z2 on a domain in C^{}", grid.dim_complex()),
        });
    }
    let raw = grid.map(|_, _, x| model.eval(x));
    if let Some(bad) = raw.iter().position(|v| v.is_nan()) {
        let x = grid.center_of(bad);
        return Err(Error::EvalDomain(format!(
            "`{model}` is undefined at ({:.4}, {:.4}, {:.4}, {:.4})",
            x[0], x[1], x[2], x[3]
        )));
    }
    let mut f = ScalarField::from_raw(grid, raw, opts)?;
    f.set_source(Some(FieldSource::Model(Arc::new(model.clone()))));
    Ok(f)
}

/// Sample a radial profile about its center.
pub fn sample_radial(curve: PlCurve, grid: &Arc<Grid>) -> ScalarField {
    sample_profile(Arc::new(curve), grid)
}

/// Sample any radial profile about its center.
pub fn sample_profile(profile: Arc<dyn RadialProfile>, grid: &Arc<Grid>) -> ScalarField {
    let c = profile.center();
    let raw = grid.map(|_, _, x| {
        let rho = (0..4).map(|i| (x[i] - c[i]).powi(2)).sum::<f64>().sqrt();
        profile.value_at_radius(rho)
    });
    let mut f = ScalarField::from_values(grid, raw);
    f.set_source(Some(FieldSource::Radial(profile)));
    f
}

impl ScalarField {
    /// Field from raw values; infinite values become tagged poles.
    pub fn from_raw(grid: &Arc<Grid>, mut values: Vec<f64>, opts: SampleOptions) -> Result<ScalarField> {
        assert_eq!(values.len(), grid.len());
        let mut poles = Vec::new();
        for (i, v) in values.iter_mut().enumerate() {
            if *v == f64::NEG_INFINITY || *v < opts.pole_floor {
                poles.push(i as u32);
                *v = opts.pole_floor;
            } else if !v.is_finite() {
                return Err(Error::EvalDomain(format!("non-finite value {v} at cell {i}")));
            }
        }
        if poles.len() > opts.max_poles {
            return Err(Error::TooManyPoles { count: poles.len(), limit: opts.max_poles });
        }
        let mut f = ScalarField {
            grid: grid.clone(),
            values,
            poles,
            lower: 0.0,
            upper: 0.0,
            source: None,
            radial: None,
        };
        f.update_bounds();
        Ok(f)
    }

    /// Field from finite values.
    pub fn from_values(grid: &Arc<Grid>, values: Vec<f64>) -> ScalarField {
        assert_eq!(values.len(), grid.len());
        let mut f = ScalarField {
            grid: grid.clone(),
            values,
            poles: Vec::new(),
            lower: 0.0,
            upper: 0.0,
            source: None,
            radial: None,
        };
        f.update_bounds();
        f
    }

    pub fn constant(grid: &Arc<Grid>, c: f64) -> ScalarField {
        let mut f = ScalarField::from_values(grid, vec![c; grid.len()]);
        f.set_source(Some(FieldSource::Model(Arc::new(Model::constant(c)))));
        f
    }

    /// Field from a function of the cell center.
    pub fn from_fn<F>(grid: &Arc<Grid>, f: F) -> ScalarField
    where
        F: Fn(&[f64; 4]) -> f64 + Sync + Send,
    {
        ScalarField::from_values(grid, grid.map(|_, _, x| f(x)))
    }

    fn update_bounds(&mut self) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut pole = vec![false; 0];
        if !self.poles.is_empty() {
            pole = vec![false; self.values.len()];
            for &p in &self.poles {
                pole[p as usize] = true;
            }
        }
        for (i, &v) in self.values.iter().enumerate() {
            if self.grid.is_interior(i) && !pole.get(i).copied().unwrap_or(false) {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        self.lower = lo;
        self.upper = hi;
    }

    pub fn set_source(&mut self, source: Option<FieldSource>) {
        let n = self.grid.dim_complex();
        self.radial = match &source {
            Some(FieldSource::Model(m)) => m.radial_or(n, self.grid.domain().center_real()).map(|r| Arc::new(r) as Arc<dyn RadialProfile>),
            Some(FieldSource::Radial(c)) => Some(c.clone()),
            None => None,
        };
        self.source = source;
    }

    /// The same field with its radial profile memoized, for repeated
    /// radial computations on one function.
    pub fn memoized(mut self) -> ScalarField {
        self.radial = self.radial.take().map(|r| Arc::new(crate::radial::Memo::new(r)) as Arc<dyn RadialProfile>);
        self
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        self.source = None;
        self.radial = None;
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    pub fn value(&self, idx: usize) -> f64 {
        self.values[idx]
    }
    pub fn poles(&self) -> &[u32] {
        &self.poles
    }
    pub fn is_pole(&self, idx: usize) -> bool {
        self.poles.binary_search(&(idx as u32)).is_ok()
    }
    pub fn lower_bound(&self) -> f64 {
        self.lower
    }
    pub fn upper_bound(&self) -> f64 {
        self.upper
    }
    pub fn source(&self) -> Option<&FieldSource> {
        self.source.as_ref()
    }
    pub fn model(&self) -> Option<&Model> {
        match &self.source {
            Some(FieldSource::Model(m)) => Some(m),
            _ => None,
        }
    }

    /// Radial profile of the field, if its source is rotation invariant.
    pub fn radial(&self) -> Option<&Arc<dyn RadialProfile>> {
        self.radial.as_ref()
    }

    /// Radial profile centered at the domain center.
    pub fn centered_radial(&self) -> Option<&Arc<dyn RadialProfile>> {
        let c = self.grid.domain().center_real();
        self.radial.as_ref().filter(|r| r.center() == c)
    }

    /// Boundary trace: `(cell index, value)` over the boundary band.
    pub fn boundary_values(&self) -> Vec<(usize, f64)> {
        (0..self.values.len())
            .filter(|&i| !self.grid.is_interior(i))
            .map(|i| (i, self.values[i]))
            .collect()
    }

    /// Value at an arbitrary point: exact for closed-form sources, nearest
    /// cell otherwise (NaN off the grid).
    pub fn eval_at(&self, x: &[f64; 4]) -> f64 {
        match &self.source {
            Some(FieldSource::Model(m)) => m.eval(x),
            Some(FieldSource::Radial(c)) => {
                let center = c.center();
                let rho = (0..4).map(|i| (x[i] - center[i]).powi(2)).sum::<f64>().sqrt();
                c.value_at_radius(rho)
            }
            None => self.grid.nearest_cell(x).map(|i| self.values[i]).unwrap_or(f64::NAN),
        }
    }

    fn combine<F>(&self, other: &ScalarField, f: F, source: Option<FieldSource>) -> Result<ScalarField>
    where
        F: Fn(f64, f64) -> f64 + Sync + Send,
    {
        if !Arc::ptr_eq(&self.grid, &other.grid) {
            return Err(Error::GridMismatch);
        }
        let values = self.grid.map(|i, _, _| f(self.values[i], other.values[i]));
        let mut out = ScalarField::from_values(&self.grid, values);
        let mut poles: Vec<u32> = self.poles.iter().chain(&other.poles).copied().collect();
        poles.sort_unstable();
        poles.dedup();
        out.poles = poles;
        out.update_bounds();
        out.set_source(source);
        Ok(out)
    }

    pub fn add(&self, other: &ScalarField) -> Result<ScalarField> {
        let src = match (self.model(), other.model()) {
            (Some(a), Some(b)) => Some(FieldSource::Model(Arc::new(a.add(b)))),
            _ => None,
        };
        self.combine(other, |a, b| a + b, src)
    }

    pub fn sub(&self, other: &ScalarField) -> Result<ScalarField> {
        let src = match (self.model(), other.model()) {
            (Some(a), Some(b)) => Some(FieldSource::Model(Arc::new(a.sub(b)))),
            _ => None,
        };
        self.combine(other, |a, b| a - b, src)
    }

    pub fn max(&self, other: &ScalarField) -> Result<ScalarField> {
        let src = match (self.model(), other.model()) {
            (Some(a), Some(b)) => Some(FieldSource::Model(Arc::new(Model::max_of(&[a.clone(), b.clone()])))),
            _ => None,
        };
        self.combine(other, f64::max, src)
    }

    pub fn scale(&self, c: f64) -> ScalarField {
        let values = self.values.iter().map(|v| c * v).collect();
        let mut out = ScalarField::from_values(&self.grid, values);
        out.poles = self.poles.clone();
        out.update_bounds();
        out.set_source(self.model().map(|m| FieldSource::Model(Arc::new(m.scale(c)))));
        out
    }

    /// Pointwise map of values; drops the closed-form source.
    pub fn map<F>(&self, f: F) -> ScalarField
    where
        F: Fn(f64) -> f64 + Sync + Send,
    {
        ScalarField::from_values(&self.grid, self.grid.map(|i, _, _| f(self.values[i])))
    }

    /// Max of `|self - other|` over interior cells, skipping poles of either.
    pub fn sup_distance(&self, other: &ScalarField) -> Result<f64> {
        if !Arc::ptr_eq(&self.grid, &other.grid) {
            return Err(Error::GridMismatch);
        }
        let mut skip = vec![false; self.values.len()];
        for &p in self.poles.iter().chain(&other.poles) {
            skip[p as usize] = true;
        }
        let g = &self.grid;
        Ok(crate::exec::max(self.values.len(), |i| {
            if g.is_interior(i) && !skip[i] { (self.values[i] - other.values[i]).abs() } else { 0.0 }
        }))
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        self.grid.write_csv(w, &self.values)
    }

    pub fn read_csv<R: std::io::BufRead>(grid: &Arc<Grid>, r: R) -> Result<ScalarField> {
        let values = grid.read_csv(r, f64::NAN)?;
        if let Some(i) = values.iter().position(|v| v.is_nan()) {
            return Err(Error::Validation {
                path: "csv".into(),
                message: format!("no value for cell {i}"),
            });
        }
        Ok(ScalarField::from_values(grid, values))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, Domain};
    use crate::model::parse_model;

    fn disc(res: usize) -> Arc<Grid> {
        make_grid(&Domain::unit_ball(1).unwrap(), res).unwrap()
    }

    #[test]
    fn quadratic_range() {
        let g = disc(64);
        let f = sample(&parse_model("abs2(z)").unwrap(), &g).unwrap();
        assert!(f.lower_bound().abs() < 1e-12);
        assert!(f.upper_bound() < 1.0 && f.upper_bound() > 0.95);
    }

    #[test]
    fn log_pole_tagged() {
        let g = disc(64);
        let f = sample(&parse_model("log(abs(z))").unwrap(), &g).unwrap();
        assert_eq!(f.poles().len(), 1);
        let c = g.nearest_cell(&[0.0; 4]).unwrap();
        assert!(f.is_pole(c));
        assert_eq!(f.value(c), DEFAULT_POLE_FLOOR);
    }

    #[test]
    fn truncated_log_matches_pointwise_max() {
        let g = disc(64);
        let f = sample(&parse_model("max(log(abs(z)), -1)").unwrap(), &g).unwrap();
        assert!(f.poles().is_empty());
        for i in 0..g.len() {
            let x = g.center_of(i);
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
            let want = if r <= (-1.0f64).exp() { -1.0 } else { r.ln() };
            assert!((f.value(i) - want).abs() < 1e-14);
        }
    }

    #[test]
    fn sample_errors() {
        let g = disc(32);
        assert!(matches!(sample(&parse_model("log(re(z1))").unwrap(), &g), Err(Error::EvalDomain(_))));
        assert!(matches!(sample(&parse_model("j*abs(z)").unwrap(), &g), Err(Error::UnboundParameter(_))));
        let opts = SampleOptions { max_poles: 0, ..Default::default() };
        assert!(matches!(
            sample_with(&parse_model("log(abs(z))").unwrap(), &g, opts),
            Err(Error::TooManyPoles { .. })
        ));
    }

    #[test]
    fn csv_roundtrip() {
        let g = disc(16);
        let f = sample(&parse_model("abs2(z) + re(z1)").unwrap(), &g).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let back = ScalarField::read_csv(&g, std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.values(), f.values());
    }
}
