//! Parameter spaces, model families and sampled checks of the standing
//! assumptions (periodicity, uniform ellipticity, smoothness).

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::numerics::grid::TorusGrid;
use crate::{Error, Result};

/// Coordinates of one hypothesis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterPoint(Vec<f64>);

impl ParameterPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite(format!("parameter point {coords:?}")));
        }
        Ok(Self(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl fmt::Display for ParameterPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Named metric on parameter coordinates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    Manhattan,
    Chebyshev,
}

impl Metric {
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "euclidean" => Ok(Self::Euclidean),
            "manhattan" => Ok(Self::Manhattan),
            "chebyshev" => Ok(Self::Chebyshev),
            other => Err(Error::Config(format!("unknown metric '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Euclidean => "euclidean",
            Self::Manhattan => "manhattan",
            Self::Chebyshev => "chebyshev",
        }
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
        match self {
            Self::Euclidean => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            Self::Manhattan => diffs.sum(),
            Self::Chebyshev => diffs.fold(0.0, f64::max),
        }
    }
}

/// Finite hypothesis set with a metric. Duplicate points are allowed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpace {
    points: Vec<ParameterPoint>,
    metric: Metric,
}

impl ParameterSpace {
    pub fn new(points: Vec<ParameterPoint>, metric: Metric) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::InvalidArgument("parameter space is empty".into()));
        };
        let dim = first.dim();
        if let Some(p) = points.iter().find(|p| p.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: p.dim(),
            });
        }
        let space = Self { points, metric };
        space.check_metric_axioms()?;
        Ok(space)
    }

    fn check_metric_axioms(&self) -> Result<()> {
        let n = self.points.len();
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (self.points[i].coords(), self.points[j].coords());
                let d = self.metric.distance(a, b);
                let back = self.metric.distance(b, a);
                if !(d >= 0.0) || d != back || ((d == 0.0) != (a == b)) {
                    return Err(Error::InvalidArgument(format!(
                        "metric axioms fail between points {i} and {j}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn points(&self) -> &[ParameterPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    /// First index holding exactly these coordinates.
    pub fn index_of(&self, theta: &ParameterPoint) -> Option<usize> {
        self.points.iter().position(|p| p == theta)
    }

    pub fn distance_by_index(&self, i: usize, j: usize) -> f64 {
        self.metric
            .distance(self.points[i].coords(), self.points[j].coords())
    }

    pub fn diameter(&self) -> f64 {
        let n = self.len();
        let mut d: f64 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                d = d.max(self.distance_by_index(i, j));
            }
        }
        d
    }
}

/// Metric distance between two members of `space`.
pub fn param_metric(
    space: &ParameterSpace,
    theta: &ParameterPoint,
    theta2: &ParameterPoint,
) -> Result<f64> {
    for p in [theta, theta2] {
        if space.index_of(p).is_none() {
            return Err(Error::PointNotInSpace(p.coords().to_vec()));
        }
    }
    Ok(space.metric.distance(theta.coords(), theta2.coords()))
}

/// Vector field `x -> out`; `out` is fully overwritten.
pub type Field = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Declared sup bounds; `f64::INFINITY` means "not declared".
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeclaredBounds {
    pub ellipticity: f64,
    pub sup_a: f64,
    pub sup_b: f64,
    pub sup_h: f64,
    pub sup_grad_a: f64,
    pub sup_grad_b: f64,
    pub sup_grad_h: f64,
    pub sup_hess_h: f64,
}

impl DeclaredBounds {
    pub fn undeclared(ellipticity: f64) -> Self {
        Self {
            ellipticity,
            sup_a: f64::INFINITY,
            sup_b: f64::INFINITY,
            sup_h: f64::INFINITY,
            sup_grad_a: f64::INFINITY,
            sup_grad_b: f64::INFINITY,
            sup_grad_h: f64::INFINITY,
            sup_hess_h: f64::INFINITY,
        }
    }
}

/// Step for the finite-difference derivative stencils.
pub const FD_STEP: f64 = 1e-3;

/// Periodic coefficients `(b, sigma, h)` of one hypothesis.
///
/// `sigma` is stored row-major `q x d`; `a = sigma sigma^T`.
#[derive(Clone)]
pub struct DiffusionModel {
    q: usize,
    d: usize,
    m: usize,
    drift: Field,
    sigma: Field,
    observation: Field,
    bounds: DeclaredBounds,
    label: String,
}

impl fmt::Debug for DiffusionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionModel")
            .field("label", &self.label)
            .field("q", &self.q)
            .field("d", &self.d)
            .field("m", &self.m)
            .field("bounds", &self.bounds)
            .finish()
    }
}

impl DiffusionModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        q: usize,
        d: usize,
        m: usize,
        drift: Field,
        sigma: Field,
        observation: Field,
        bounds: DeclaredBounds,
        label: impl Into<String>,
    ) -> Result<Self> {
        if q == 0 || d == 0 || m == 0 {
            return Err(Error::InvalidArgument(
                "model dimensions must be positive".into(),
            ));
        }
        if !(bounds.ellipticity > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "declared ellipticity must be positive, got {}",
                bounds.ellipticity
            )));
        }
        Ok(Self {
            q,
            d,
            m,
            drift,
            sigma,
            observation,
            bounds,
            label: label.into(),
        })
    }

    pub fn q(&self) -> usize {
        self.q
    }
    pub fn d(&self) -> usize {
        self.d
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn bounds(&self) -> &DeclaredBounds {
        &self.bounds
    }
    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_drift(mut self, drift: Field) -> Self {
        self.drift = drift;
        self
    }
    pub fn with_sigma(mut self, sigma: Field) -> Self {
        self.sigma = sigma;
        self
    }
    pub fn with_observation(mut self, observation: Field) -> Self {
        self.observation = observation;
        self
    }

    pub fn drift(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out)
    }

    pub fn sigma(&self, x: &[f64], out: &mut [f64]) {
        (self.sigma)(x, out)
    }

    pub fn observation(&self, x: &[f64], out: &mut [f64]) {
        (self.observation)(x, out)
    }

    /// `a(x) = sigma sigma^T`, row-major `q x q`.
    pub fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        let (q, d) = (self.q, self.d);
        let mut s = vec![0.0; q * d];
        self.sigma(x, &mut s);
        for i in 0..q {
            for j in 0..q {
                out[i * q + j] = (0..d).map(|k| s[i * d + k] * s[j * d + k]).sum();
            }
        }
    }

    pub fn observation_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        self.observation(x, &mut out);
        out
    }

    /// Gradient (`m x q`, row-major) and Hessian (`m x q x q`) of `h` by
    /// fourth-order central differences.
    pub fn observation_derivatives(&self, x: &[f64], grad: &mut [f64], hess: &mut [f64]) {
        let (q, m) = (self.q, self.m);
        let eta = FD_STEP;
        let mut y = x.to_vec();
        let mut buf = vec![0.0; m];
        let eval = |y: &[f64], buf: &mut Vec<f64>| {
            self.observation(y, buf);
            buf.clone()
        };
        let h0 = eval(x, &mut buf);
        for i in 0..q {
            let mut vals = [vec![], vec![], vec![], vec![]];
            for (slot, s) in [2.0, 1.0, -1.0, -2.0].iter().enumerate() {
                y.copy_from_slice(x);
                y[i] += s * eta;
                vals[slot] = eval(&y, &mut buf);
            }
            for k in 0..m {
                let (p2, p1, m1, m2) = (vals[0][k], vals[1][k], vals[2][k], vals[3][k]);
                grad[k * q + i] = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * eta);
                hess[k * q * q + i * q + i] =
                    (-p2 + 16.0 * p1 - 30.0 * h0[k] + 16.0 * m1 - m2) / (12.0 * eta * eta);
            }
        }
        for i in 0..q {
            for j in i + 1..q {
                // Mixed partials: tensor product of the first-derivative stencil.
                let w = [(2.0, -1.0), (1.0, 8.0), (-1.0, -8.0), (-2.0, 1.0)];
                let mut acc = vec![0.0; m];
                for &(si, wi) in &w {
                    for &(sj, wj) in &w {
                        y.copy_from_slice(x);
                        y[i] += si * eta;
                        y[j] += sj * eta;
                        let v = eval(&y, &mut buf);
                        for k in 0..m {
                            acc[k] += wi * wj * v[k];
                        }
                    }
                }
                for k in 0..m {
                    let v = acc[k] / (144.0 * eta * eta);
                    hess[k * q * q + i * q + j] = v;
                    hess[k * q * q + j * q + i] = v;
                }
            }
        }
    }
}

/// Builder signature for custom families.
pub type Builder = Arc<dyn Fn(&ParameterPoint) -> Result<DiffusionModel> + Send + Sync>;

/// A parameterized family of models.
#[derive(Clone)]
pub enum ModelFamily {
    /// `q = m = 1`; coords `[theta_b, theta_h, theta_c, sigma0]`:
    /// `b = theta_b sin(2 pi x)`, `sigma = sigma0`,
    /// `h = theta_h cos(2 pi x) + theta_c`.
    GradientSine,
    /// `q = m = 1`; coords `[theta_c]`: `b = 0`, `sigma = 1`, `h = theta_c`.
    ConstantH,
    Custom {
        name: String,
        dim: usize,
        builder: Builder,
    },
}

impl fmt::Debug for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ModelFamily({})", self.name())
    }
}

impl ModelFamily {
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "gradient-sine" => Ok(Self::GradientSine),
            "constant-h" => Ok(Self::ConstantH),
            other => Err(Error::UnknownFamily(other.to_string())),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Self::GradientSine => "gradient-sine",
            Self::ConstantH => "constant-h",
            Self::Custom { name, .. } => name,
        }
    }

    pub fn param_dim(&self) -> usize {
        match self {
            Self::GradientSine => 4,
            Self::ConstantH => 1,
            Self::Custom { dim, .. } => *dim,
        }
    }
}

/// Instantiates `family` at `theta`.
pub fn make_model(family: &ModelFamily, theta: &ParameterPoint) -> Result<DiffusionModel> {
    if theta.dim() != family.param_dim() {
        return Err(Error::DimensionMismatch {
            expected: family.param_dim(),
            got: theta.dim(),
        });
    }
    let c = theta.coords();
    match family {
        ModelFamily::GradientSine => {
            let (tb, th, tc, s0) = (c[0], c[1], c[2], c[3]);
            if !(s0 > 0.0) {
                return Err(Error::SingularDiffusion(c.to_vec()));
            }
            let two_pi = 2.0 * PI;
            let bounds = DeclaredBounds {
                ellipticity: s0 * s0,
                sup_a: s0 * s0,
                sup_b: tb.abs(),
                sup_h: th.abs() + tc.abs(),
                sup_grad_a: 0.0,
                sup_grad_b: two_pi * tb.abs(),
                sup_grad_h: two_pi * th.abs(),
                sup_hess_h: two_pi * two_pi * th.abs(),
            };
            DiffusionModel::new(
                1,
                1,
                1,
                Arc::new(move |x, out| out[0] = tb * (two_pi * x[0]).sin()),
                Arc::new(move |_, out| out[0] = s0),
                Arc::new(move |x, out| out[0] = th * (two_pi * x[0]).cos() + tc),
                bounds,
                format!("gradient-sine{theta}"),
            )
        }
        ModelFamily::ConstantH => {
            let tc = c[0];
            let bounds = DeclaredBounds {
                ellipticity: 1.0,
                sup_a: 1.0,
                sup_b: 0.0,
                sup_h: tc.abs(),
                sup_grad_a: 0.0,
                sup_grad_b: 0.0,
                sup_grad_h: 0.0,
                sup_hess_h: 0.0,
            };
            DiffusionModel::new(
                1,
                1,
                1,
                Arc::new(|_, out| out[0] = 0.0),
                Arc::new(|_, out| out[0] = 1.0),
                Arc::new(move |_, out| out[0] = tc),
                bounds,
                format!("constant-h{theta}"),
            )
        }
        ModelFamily::Custom { builder, .. } => builder(theta),
    }
}

/// Outcome of one sampled assumption check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// Worst measured quantity (violation size, or the sup for bound checks).
    pub worst: f64,
    /// Threshold it was compared against.
    pub limit: f64,
    pub witness_x: Vec<f64>,
    pub witness_direction: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub n_samples: usize,
    pub checks: Vec<CheckOutcome>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Kronecker low-discrepancy points in `[0,1)^q`.
fn sample_points(q: usize, n: usize) -> Vec<Vec<f64>> {
    let alphas = [0.618_033_988_749_894_9, 0.754_877_666_246_692_7];
    (0..n)
        .map(|k| {
            (0..q)
                .map(|i| ((k as f64 + 0.5) * alphas[i % 2] + 0.1 * i as f64).fract())
                .collect()
        })
        .collect()
}

fn ellipticity_directions(q: usize) -> Vec<Vec<f64>> {
    let mut dirs: Vec<Vec<f64>> = (0..q)
        .map(|i| (0..q).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    if q == 2 {
        for k in 1..16 {
            let phi = PI * k as f64 / 16.0;
            if k != 8 {
                dirs.push(vec![phi.cos(), phi.sin()]);
            }
        }
    } else if q > 2 {
        let s = 1.0 / (q as f64).sqrt();
        dirs.push(vec![s; q]);
    }
    dirs
}

fn within(measured: f64, declared: f64) -> bool {
    measured <= declared * (1.0 + 1e-6) + 1e-9
}

/// Samples `n_samples` torus points and checks periodicity, ellipticity and
/// the declared sup bounds. Violations are report entries, never errors.
pub fn verify_assumptions(model: &DiffusionModel, n_samples: usize) -> AssumptionReport {
    let (q, d, m) = (model.q, model.d, model.m);
    let pts = sample_points(q, n_samples.max(1));
    let b = &model.bounds;

    let eval_all = |x: &[f64]| -> Vec<f64> {
        let mut bo = vec![0.0; q];
        let mut so = vec![0.0; q * d];
        let mut ho = vec![0.0; m];
        model.drift(x, &mut bo);
        model.sigma(x, &mut so);
        model.observation(x, &mut ho);
        bo.into_iter().chain(so).chain(ho).collect()
    };

    // Periodicity.
    let mut per = CheckOutcome {
        name: "periodicity".into(),
        passed: true,
        worst: 0.0,
        limit: 1e-12,
        witness_x: pts[0].clone(),
        witness_direction: None,
    };
    for x in &pts {
        let f0 = eval_all(x);
        for i in 0..q {
            let mut y = x.clone();
            y[i] += 1.0;
            let f1 = eval_all(&y);
            for (a, c) in f0.iter().zip(&f1) {
                let viol = (a - c).abs() / (1.0 + a.abs());
                let viol = if viol.is_nan() { f64::INFINITY } else { viol };
                if viol > per.worst {
                    per.worst = viol;
                    per.witness_x = x.clone();
                    let mut e = vec![0.0; q];
                    e[i] = 1.0;
                    per.witness_direction = Some(e);
                }
            }
        }
    }
    per.passed = per.worst <= per.limit;

    // Ellipticity: worst of xi^T a xi - lambda |xi|^2 over sampled x and a
    // direction set (axes first).
    let dirs = ellipticity_directions(q);
    let mut ell = CheckOutcome {
        name: "ellipticity".into(),
        passed: true,
        worst: f64::INFINITY,
        limit: b.ellipticity,
        witness_x: pts[0].clone(),
        witness_direction: Some(dirs[0].clone()),
    };
    let mut a = vec![0.0; q * q];
    let tol = 1e-12 * (1.0 + b.ellipticity);
    for x in &pts {
        model.diffusion(x, &mut a);
        for xi in &dirs {
            let quad: f64 = (0..q)
                .flat_map(|i| (0..q).map(move |j| (i, j)))
                .map(|(i, j)| xi[i] * a[i * q + j] * xi[j])
                .sum();
            if quad < ell.worst {
                ell.worst = quad;
                ell.witness_x = x.clone();
                ell.witness_direction = Some(xi.clone());
            }
        }
    }
    ell.passed = ell.worst >= b.ellipticity - tol;

    // Sup bounds, with derivatives by the fourth-order stencil.
    let mut sup = [0.0f64; 7];
    let mut sup_at: [Vec<f64>; 7] = Default::default();
    let mut grad_h = vec![0.0; m * q];
    let mut hess_h = vec![0.0; m * q * q];
    let norm = |v: &[f64]| v.iter().map(|c| c * c).sum::<f64>().sqrt();
    let jac = |f: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64]| -> Vec<f64> {
        let eta = FD_STEP;
        let mut out = Vec::new();
        for i in 0..q {
            let mut ys = [x.to_vec(), x.to_vec(), x.to_vec(), x.to_vec()];
            for (y, s) in ys.iter_mut().zip([2.0, 1.0, -1.0, -2.0]) {
                y[i] += s * eta;
            }
            let v: Vec<Vec<f64>> = ys.iter().map(|y| f(y)).collect();
            for k in 0..v[0].len() {
                out.push((-v[0][k] + 8.0 * v[1][k] - 8.0 * v[2][k] + v[3][k]) / (12.0 * eta));
            }
        }
        out
    };
    let b_fn = |x: &[f64]| {
        let mut o = vec![0.0; q];
        model.drift(x, &mut o);
        o
    };
    let a_fn = |x: &[f64]| {
        let mut o = vec![0.0; q * q];
        model.diffusion(x, &mut o);
        o
    };
    let h_fn = |x: &[f64]| model.observation_vec(x);
    for x in &pts {
        model.observation_derivatives(x, &mut grad_h, &mut hess_h);
        let vals = [
            norm(&a_fn(x)),
            norm(&b_fn(x)),
            norm(&h_fn(x)),
            norm(&jac(&a_fn, x)),
            norm(&jac(&b_fn, x)),
            norm(&grad_h),
            norm(&hess_h),
        ];
        for (k, v) in vals.iter().enumerate() {
            let v = if v.is_nan() { f64::INFINITY } else { *v };
            if v > sup[k] || sup_at[k].is_empty() {
                sup[k] = sup[k].max(v);
                sup_at[k] = x.clone();
            }
        }
    }
    let names = [
        ("sup_a", b.sup_a),
        ("sup_b", b.sup_b),
        ("sup_h", b.sup_h),
        ("sup_grad_a", b.sup_grad_a),
        ("sup_grad_b", b.sup_grad_b),
        ("sup_grad_h", b.sup_grad_h),
        ("sup_hess_h", b.sup_hess_h),
    ];
    let mut checks = vec![per, ell];
    for (k, (name, declared)) in names.iter().enumerate() {
        checks.push(CheckOutcome {
            name: (*name).into(),
            passed: within(sup[k], *declared),
            worst: sup[k],
            limit: *declared,
            witness_x: sup_at[k].clone(),
            witness_direction: None,
        });
    }
    AssumptionReport {
        n_samples: pts.len(),
        checks,
    }
}

/// Grid size used for equivalence fingerprints.
pub const FINGERPRINT_N: usize = 64;
/// Histogram bins for the law of `h(X)` in fingerprints.
pub const FINGERPRINT_BINS: usize = 32;

fn fingerprint_stationary(model: &DiffusionModel) -> Result<Vec<f64>> {
    let n = if model.q() == 1 { FINGERPRINT_N } else { 32 };
    let grid = TorusGrid::new(model.q(), n)?;
    Ok(crate::sde::stationary_density(model, &grid, 1e-12)?.into_values())
}

/// Histograms of each component of `h(X)` for `X ~ psi`, on shared bins.
fn h_histograms(
    model: &DiffusionModel,
    psi: &[f64],
    lo: &[f64],
    hi: &[f64],
) -> Result<Vec<f64>> {
    let n = if model.q() == 1 { FINGERPRINT_N } else { 32 };
    let grid = TorusGrid::new(model.q(), n)?;
    let vol = grid.cell_volume();
    let m = model.m();
    let mut hist = vec![0.0; m * FINGERPRINT_BINS];
    let mut x = vec![0.0; model.q()];
    for (idx, p) in psi.iter().enumerate() {
        grid.node_into(idx, &mut x);
        let h = model.observation_vec(&x);
        for k in 0..m {
            let width = hi[k] - lo[k];
            let bin = if width > 0.0 {
                (((h[k] - lo[k]) / width * FINGERPRINT_BINS as f64) as usize)
                    .min(FINGERPRINT_BINS - 1)
            } else {
                0
            };
            hist[k * FINGERPRINT_BINS + bin] += p * vol;
        }
    }
    Ok(hist)
}

fn h_range(model: &DiffusionModel) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = if model.q() == 1 { FINGERPRINT_N } else { 32 };
    let grid = TorusGrid::new(model.q(), n)?;
    let m = model.m();
    let mut lo = vec![f64::INFINITY; m];
    let mut hi = vec![f64::NEG_INFINITY; m];
    let mut x = vec![0.0; model.q()];
    for idx in 0..grid.len() {
        grid.node_into(idx, &mut x);
        for (k, v) in model.observation_vec(&x).into_iter().enumerate() {
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    Ok((lo, hi))
}

/// Fingerprint distance between two models: the larger of the total
/// variation between stationary densities and between the histograms of
/// `h(X)` under them (bins span the pair's joint range of `h`).
pub fn fingerprint_distance(a: &DiffusionModel, b: &DiffusionModel) -> Result<f64> {
    if a.q() != b.q() || a.m() != b.m() {
        return Ok(1.0);
    }
    let pa = fingerprint_stationary(a)?;
    let pb = fingerprint_stationary(b)?;
    let n = if a.q() == 1 { FINGERPRINT_N } else { 32 };
    let vol = TorusGrid::new(a.q(), n)?.cell_volume();
    let tv_psi = 0.5 * pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).sum::<f64>() * vol;
    let (la, ha) = h_range(a)?;
    let (lb, hb) = h_range(b)?;
    let lo: Vec<f64> = la.iter().zip(&lb).map(|(x, y)| x.min(*y)).collect();
    let hi: Vec<f64> = ha.iter().zip(&hb).map(|(x, y)| x.max(*y)).collect();
    let ha = h_histograms(a, &pa, &lo, &hi)?;
    let hb = h_histograms(b, &pb, &lo, &hi)?;
    let tv_h = 0.5 * ha.iter().zip(&hb).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.m() as f64;
    Ok(tv_psi.max(tv_h))
}

/// All members of `space` whose fingerprint lies within `tol` of `theta`'s.
/// `theta` itself is always included.
pub fn equivalence_class(
    space: &ParameterSpace,
    theta: &ParameterPoint,
    family: &ModelFamily,
    tol: f64,
) -> Result<Vec<ParameterPoint>> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "equivalence tolerance must be positive, got {tol}"
        )));
    }
    let base = make_model(family, theta)?;
    let mut out = Vec::new();
    for p in space.points() {
        if p == theta {
            out.push(p.clone());
            continue;
        }
        let other = make_model(family, p)?;
        if fingerprint_distance(&base, &other)? <= tol {
            out.push(p.clone());
        }
    }
    if !out.iter().any(|p| p == theta) {
        out.insert(0, theta.clone());
    }
    Ok(out)
}
