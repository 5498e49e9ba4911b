//! Cell-centered uniform grids on the torus `[0,1)^q` and the density and
//! field containers that live on them.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Normalization tolerance for [`GridDensity`].
pub const MASS_TOLERANCE: f64 = 1e-10;

/// Uniform cell-centered grid on `[0,1)^q`, `q` in `{1, 2}`.
///
/// Nodes sit at `(i + 1/2) / n` along each axis. Linear index layout for
/// `q = 2` is `i0 + n * i1` (axis 0 fastest).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusGrid {
    q: usize,
    n: usize,
}

impl TorusGrid {
    pub fn new(q: usize, n: usize) -> Result<Self> {
        if !(1..=2).contains(&q) {
            return Err(Error::InvalidArgument(format!(
                "grid dimension must be 1 or 2, got {q}"
            )));
        }
        if n < 8 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 8 points per axis, got {n}"
            )));
        }
        Ok(Self { q, n })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Number of nodes, `n^q`.
    pub fn len(&self) -> usize {
        self.n.pow(self.q as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Cell volume `dx^q`.
    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.q as i32)
    }

    /// Coordinates of node `idx`, written into `out[..q]`.
    pub fn node_into(&self, idx: usize, out: &mut [f64]) {
        let dx = self.dx();
        let mut rest = idx;
        for c in out.iter_mut().take(self.q) {
            let i = rest % self.n;
            rest /= self.n;
            *c = (i as f64 + 0.5) * dx;
        }
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.q];
        self.node_into(idx, &mut out);
        out
    }

    /// All node coordinates, flattened `len() * q`.
    pub fn nodes(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len() * self.q];
        for (idx, chunk) in out.chunks_mut(self.q).enumerate() {
            self.node_into(idx, chunk);
        }
        out
    }

    /// Index of the cell containing the torus point `x` (coordinates in `[0,1)`).
    pub fn cell_of(&self, x: &[f64]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for &c in x.iter().take(self.q) {
            let i = ((c * self.n as f64).floor() as usize).min(self.n - 1);
            idx += i * stride;
            stride *= self.n;
        }
        idx
    }

    /// Multi-index of node `idx`.
    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        [idx % self.n, idx / self.n]
    }

    /// Index of the node displaced by `shift` cells along `axis` (periodic).
    pub fn shifted(&self, idx: usize, axis: usize, shift: isize) -> usize {
        let [i0, i1] = self.multi_index(idx);
        let n = self.n as isize;
        let wrap = |i: usize| ((i as isize + shift).rem_euclid(n)) as usize;
        match axis {
            0 => wrap(i0) + self.n * i1,
            _ => i0 + self.n * wrap(i1),
        }
    }
}

/// Componentwise `x mod 1`, mapped into `[0,1)^q`.
pub fn project_to_torus(x: &[f64]) -> Result<Vec<f64>> {
    x.iter()
        .map(|&c| {
            if !c.is_finite() {
                return Err(Error::NonFinite(format!("torus projection of {c}")));
            }
            Ok(wrap_unit(c))
        })
        .collect()
}

/// `c mod 1` in `[0,1)`; guards the rounding case where `rem_euclid` returns 1.0.
#[inline]
pub fn wrap_unit(c: f64) -> f64 {
    let r = c.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Nonnegative probability density on a [`TorusGrid`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl GridDensity {
    /// Wraps `values` after checking nonnegativity and unit mass.
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        check_len(&grid, values.len())?;
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "density values must be finite and nonnegative, found {v}"
            )));
        }
        let mass = values.iter().sum::<f64>() * grid.cell_volume();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "density mass {mass} differs from 1"
            )));
        }
        Ok(Self { grid, values })
    }

    /// Normalizes a nonnegative, not identically zero vector to unit mass.
    pub fn from_unnormalized(grid: TorusGrid, mut values: Vec<f64>) -> Result<Self> {
        check_len(&grid, values.len())?;
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(
                "density values must be finite and nonnegative".into(),
            ));
        }
        let mass = values.iter().sum::<f64>() * grid.cell_volume();
        if mass <= 0.0 {
            return Err(Error::InvalidArgument("density has zero mass".into()));
        }
        values.iter_mut().for_each(|v| *v /= mass);
        Ok(Self { grid, values })
    }

    pub fn uniform(grid: TorusGrid) -> Self {
        Self {
            grid,
            values: vec![1.0; grid.len()],
        }
    }

    /// All mass in the cell containing `x` (any point of `R^q`).
    pub fn point_mass(grid: TorusGrid, x: &[f64]) -> Result<Self> {
        if x.len() != grid.q() {
            return Err(Error::DimensionMismatch {
                expected: grid.q(),
                got: x.len(),
            });
        }
        let y = project_to_torus(x)?;
        let mut values = vec![0.0; grid.len()];
        values[grid.cell_of(&y)] = 1.0 / grid.cell_volume();
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// Grid quadrature of `field` (node values, `len() * dim`) against the density.
    pub fn expectation(&self, field: &[f64], dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for (p, f) in self.values.iter().zip(field.chunks(dim)) {
            for (o, fk) in out.iter_mut().zip(f) {
                *o += p * fk;
            }
        }
        let vol = self.grid.cell_volume();
        out.iter_mut().for_each(|o| *o *= vol);
        out
    }
}

/// Real (scalar or vector) values per grid node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    grid: TorusGrid,
    dim: usize,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(grid: TorusGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() * dim {
            return Err(Error::GridMismatch(format!(
                "field has {} values, grid needs {}",
                values.len(),
                grid.len() * dim
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("grid field entry".into()));
        }
        Ok(Self { grid, dim, values })
    }

    pub fn constant(grid: TorusGrid, value: f64) -> Self {
        Self {
            grid,
            dim: 1,
            values: vec![value; grid.len()],
        }
    }

    /// Samples `f` at every node.
    pub fn from_fn(grid: TorusGrid, dim: usize, f: impl Fn(&[f64], &mut [f64])) -> Result<Self> {
        let mut values = vec![0.0; grid.len() * dim];
        let mut x = vec![0.0; grid.q()];
        for (idx, out) in values.chunks_mut(dim).enumerate() {
            grid.node_into(idx, &mut x);
            f(&x, out);
        }
        Self::new(grid, dim, values)
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, idx: usize) -> &[f64] {
        &self.values[idx * self.dim..(idx + 1) * self.dim]
    }
}

/// Empirical torus projection of a sample: each point is reduced mod 1,
/// binned and the histogram normalized to a density. `samples` is flat with
/// `grid.q()` coordinates per point.
pub fn density_from_samples(grid: &TorusGrid, samples: &[f64]) -> Result<GridDensity> {
    let q = grid.q();
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty sample list".into()));
    }
    if samples.len() % q != 0 {
        return Err(Error::DimensionMismatch {
            expected: q,
            got: samples.len() % q,
        });
    }
    let mut counts = vec![0.0; grid.len()];
    let mut y = vec![0.0; q];
    for x in samples.chunks(q) {
        for (yc, &xc) in y.iter_mut().zip(x) {
            if !xc.is_finite() {
                return Err(Error::NonFinite("sample coordinate".into()));
            }
            *yc = wrap_unit(xc);
        }
        counts[grid.cell_of(&y)] += 1.0;
    }
    GridDensity::from_unnormalized(*grid, counts)
}

fn check_len(grid: &TorusGrid, len: usize) -> Result<()> {
    if len != grid.len() {
        return Err(Error::GridMismatch(format!(
            "{len} values for a grid of {} nodes",
            grid.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_examples() {
        assert_eq!(project_to_torus(&[0.3]).unwrap(), vec![0.3]);
        assert_eq!(project_to_torus(&[-0.25]).unwrap(), vec![0.75]);
        let p = project_to_torus(&[2.5, -1.1]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15);
        assert!((p[1] - 0.9).abs() < 1e-12);
        assert!(project_to_torus(&[f64::NAN]).is_err());
        // rounding edge: tiny negative numbers must not map to 1.0
        let p = project_to_torus(&[-1e-20]).unwrap();
        assert!(p[0] >= 0.0 && p[0] < 1.0);
    }

    #[test]
    fn grid_rejects_bad_shapes() {
        assert!(TorusGrid::new(3, 16).is_err());
        assert!(TorusGrid::new(1, 4).is_err());
        let g = TorusGrid::new(2, 8).unwrap();
        assert_eq!(g.len(), 64);
        assert_eq!(g.node(9), vec![1.5 / 8.0, 1.5 / 8.0]);
    }

    #[test]
    fn samples_at_half_give_point_mass() {
        let g = TorusGrid::new(1, 8).unwrap();
        let d = density_from_samples(&g, &[0.5; 10]).unwrap();
        for (i, v) in d.values().iter().enumerate() {
            if i == g.cell_of(&[0.5]) {
                assert!((v - 8.0).abs() < 1e-12);
            } else {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn translates_are_identified() {
        let g = TorusGrid::new(1, 16).unwrap();
        let a = density_from_samples(&g, &[0.1, 1.1, 2.1]).unwrap();
        let b = density_from_samples(&g, &[0.1, 0.1, 0.1]).unwrap();
        assert_eq!(a, b);
        assert!(density_from_samples(&g, &[]).is_err());
    }

    #[test]
    fn uniform_samples_approach_uniform_density() {
        use rand::{Rng, SeedableRng};
        let g = TorusGrid::new(1, 64).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let samples: Vec<f64> = (0..1_000_000).map(|_| rng.random::<f64>()).collect();
        let d = density_from_samples(&g, &samples).unwrap();
        // Each cell count is Binomial(N, 1/n); the density value has standard
        // deviation sqrt(n (1 - 1/n) / N) = 0.0079 here, so 0.05 is > 6 sigma.
        let sup = d.values().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
        assert!(sup <= 0.05, "sup distance {sup}");
    }

    #[test]
    fn density_invariants_enforced() {
        let g = TorusGrid::new(1, 8).unwrap();
        assert!(GridDensity::new(g, vec![1.0; 8]).is_ok());
        assert!(GridDensity::new(g, vec![2.0; 8]).is_err());
        let mut bad = vec![1.0; 8];
        bad[0] = -0.5;
        bad[1] = 1.5;
        assert!(GridDensity::new(g, bad).is_err());
        let d = GridDensity::point_mass(g, &[1.2]).unwrap();
        assert_eq!(d, GridDensity::point_mass(g, &[0.2]).unwrap());
        assert!((d.mass() - 1.0).abs() < 1e-15);
    }
}
