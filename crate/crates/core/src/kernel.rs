//! Radial kernel profiles and the directed edge weight
//! `w(x, y) = Phi(|B(x)(y - x - eps b(x))| / h)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fields::{ConstantField, TrigVectorField, VectorField, ZeroField};
use crate::geometry::displacement_into;
use crate::quad::{adaptive_simpson, unit_ball_volume, unit_sphere_area};

/// Absolute tolerance for the radial moment integrals.
const MOMENT_TOL: f64 = 1e-10;

/// Shape of `Phi` before normalization.
#[derive(Clone)]
pub enum Profile {
    /// Constant on `[0, radius]`, zero beyond.
    Indicator { radius: f64 },
    /// `exp(-1 / (1 - (t/2)^2))` on `[0, 2)`.
    SmoothBump,
    /// Arbitrary nonincreasing profile vanishing beyond `support <= 2`.
    Custom {
        name: String,
        support: f64,
        f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Profile::Indicator { radius } => write!(f, "Indicator {{ radius: {radius} }}"),
            Profile::SmoothBump => write!(f, "SmoothBump"),
            Profile::Custom { name, support, .. } => {
                write!(f, "Custom {{ name: {name:?}, support: {support} }}")
            }
        }
    }
}

impl Profile {
    fn raw(&self, t: f64) -> f64 {
        match self {
            Profile::Indicator { radius } => {
                if t <= *radius {
                    1.0
                } else {
                    0.0
                }
            }
            Profile::SmoothBump => {
                let s = 0.5 * t;
                if s >= 1.0 {
                    0.0
                } else {
                    (-1.0 / (1.0 - s * s)).exp()
                }
            }
            Profile::Custom { f, support, .. } => {
                if t > *support {
                    0.0
                } else {
                    f(t)
                }
            }
        }
    }

    fn support(&self) -> f64 {
        match self {
            Profile::Indicator { radius } => *radius,
            Profile::SmoothBump => 2.0,
            Profile::Custom { support, .. } => *support,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Profile::Indicator { .. } => "indicator",
            Profile::SmoothBump => "smooth-bump",
            Profile::Custom { name, .. } => name,
        }
    }
}

/// A normalized kernel: `int_{B(0,2)} Phi(|z|) dz = 1` in dimension `dim`.
#[derive(Clone, Debug)]
pub struct KernelSpec {
    profile: Profile,
    dim: usize,
    scale: f64,
    sigma_phi: f64,
    mass: f64,
    support: f64,
}

impl KernelSpec {
    /// Normalizes `profile` in dimension `dim` and caches its moments.
    pub fn new(profile: Profile, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("kernel dimension must be positive"));
        }
        let support = profile.support();
        if !(support > 0.0 && support <= 2.0) {
            return Err(Error::invalid(format!(
                "kernel support {support} must lie in (0, 2]"
            )));
        }
        if !(profile.raw(0.0) > 0.0) {
            return Err(Error::invalid("kernel profile must be positive at 0"));
        }
        // nonincreasing and nonnegative, checked on a fine grid
        let mut prev = profile.raw(0.0);
        for i in 1..=2000 {
            let t = support * i as f64 / 2000.0;
            let v = profile.raw(t);
            if v < 0.0 || v > prev * (1.0 + 1e-12) {
                return Err(Error::invalid(format!(
                    "kernel profile must be nonnegative and nonincreasing (t = {t})"
                )));
            }
            prev = v;
        }
        let (raw_mass, raw_second) = match &profile {
            Profile::Indicator { radius } => {
                let vol = unit_ball_volume(dim) * radius.powi(dim as i32);
                // int_{|z|<=R} z_1^2 dz = vol R^2 / (d + 2)
                (vol, vol * radius * radius / (dim + 2) as f64)
            }
            _ => {
                let area = unit_sphere_area(dim);
                let d = dim as i32;
                let m0 = adaptive_simpson(
                    &|r: f64| profile.raw(r) * area * r.powi(d - 1),
                    0.0,
                    support,
                    MOMENT_TOL,
                );
                let m2 = adaptive_simpson(
                    &|r: f64| profile.raw(r) * area * r.powi(d + 1),
                    0.0,
                    support,
                    MOMENT_TOL,
                ) / dim as f64;
                (m0, m2)
            }
        };
        if !(raw_mass > 0.0) {
            return Err(Error::invalid("kernel profile has zero mass"));
        }
        let scale = 1.0 / raw_mass;
        Ok(Self {
            profile,
            dim,
            scale,
            sigma_phi: raw_second * scale,
            mass: raw_mass * scale,
            support,
        })
    }

    /// `Phi = 1/|B(0,1)|` on `[0, 1]`; in `d = 2` this is `1/pi`.
    pub fn indicator(dim: usize) -> Self {
        Self::new(Profile::Indicator { radius: 1.0 }, dim).expect("indicator kernel is valid")
    }

    pub fn smooth_bump(dim: usize) -> Self {
        Self::new(Profile::SmoothBump, dim).expect("bump kernel is valid")
    }

    pub fn by_name(name: &str, dim: usize) -> Result<Self> {
        match name {
            "indicator" => Ok(Self::indicator(dim)),
            "smooth-bump" | "bump" => Ok(Self::smooth_bump(dim)),
            other => Err(Error::invalid(format!("unknown kernel '{other}'"))),
        }
    }

    /// Normalized `Phi(t)`.
    pub fn eval(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::invalid(format!("kernel argument {t} must be >= 0")));
        }
        Ok(self.eval_unchecked(t))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, t: f64) -> f64 {
        self.scale * self.profile.raw(t)
    }

    /// `sigma_Phi = int Phi(|z|) z_1^2 dz`.
    pub fn sigma_phi(&self) -> f64 {
        self.sigma_phi
    }

    /// Mass after normalization (1 up to quadrature error).
    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Radius beyond which `Phi` vanishes (`<= 2`).
    pub fn support(&self) -> f64 {
        self.support
    }

    pub fn name(&self) -> &str {
        self.profile.name()
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }
}

/// Point-dependent anisotropy `B(x)`.
#[derive(Clone)]
pub enum Anisotropy {
    Identity,
    Constant(DMatrix<f64>),
    Custom(Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>),
}

impl fmt::Debug for Anisotropy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Anisotropy::Identity => write!(f, "Identity"),
            Anisotropy::Constant(m) => write!(f, "Constant({m:?})"),
            Anisotropy::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Drift `b` and anisotropy `B` of a directed geometric graph, with the
/// bounds needed to size neighbour searches.
#[derive(Clone)]
pub struct DriftSpec {
    b: Arc<dyn VectorField>,
    matrix: Anisotropy,
    b_sup: f64,
    binv_sup: f64,
    name: String,
}

impl fmt::Debug for DriftSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriftSpec")
            .field("name", &self.name)
            .field("matrix", &self.matrix)
            .field("b_sup", &self.b_sup)
            .field("binv_sup", &self.binv_sup)
            .finish()
    }
}

fn spot_points(d: usize) -> impl Iterator<Item = Vec<f64>> {
    let mut m = 16usize;
    while m > 2 && m.pow(d as u32) > 4096 {
        m /= 2;
    }
    (0..m.pow(d as u32)).map(move |mut idx| {
        (0..d)
            .map(|_| {
                let c = (idx % m) as f64 / m as f64 + 0.5 / m as f64;
                idx /= m;
                c
            })
            .collect()
    })
}

impl DriftSpec {
    /// Drift with `B = I`. `b_sup` must bound `|b|`; it is spot-checked.
    pub fn new(name: impl Into<String>, b: Arc<dyn VectorField>, b_sup: f64) -> Result<Self> {
        Self::with_anisotropy(name, b, b_sup, Anisotropy::Identity, 1.0)
    }

    /// Drift with a general `B(x)`; `binv_sup` must bound `||B(x)^{-1}||`.
    pub fn with_anisotropy(
        name: impl Into<String>,
        b: Arc<dyn VectorField>,
        b_sup: f64,
        matrix: Anisotropy,
        binv_sup: f64,
    ) -> Result<Self> {
        let d = b.dim();
        if !(b_sup >= 0.0 && b_sup.is_finite()) || !(binv_sup > 0.0 && binv_sup.is_finite()) {
            return Err(Error::invalid("drift bounds must be finite and nonnegative"));
        }
        let matrix = match matrix {
            Anisotropy::Constant(m) if m.nrows() != d || m.ncols() != d => {
                return Err(Error::invalid(format!("B must be {d} x {d}")));
            }
            other => other,
        };
        let spec = Self {
            b,
            matrix,
            b_sup,
            binv_sup,
            name: name.into(),
        };
        for x in spot_points(d) {
            let bx = spec.b.value(&x);
            let norm = bx.iter().map(|c| c * c).sum::<f64>().sqrt();
            if norm > b_sup * (1.0 + 1e-9) + 1e-15 {
                return Err(Error::ContractViolation(format!(
                    "|b({x:?})| = {norm} exceeds b_sup = {b_sup}"
                )));
            }
            if let Some(m) = spec.matrix_at(&x) {
                if m.nrows() != d || m.ncols() != d {
                    return Err(Error::invalid(format!("B must be {d} x {d}")));
                }
                let det = m.determinant();
                if det.abs() < 1e-12 {
                    return Err(Error::invalid(format!("B({x:?}) is singular (det = {det})")));
                }
                let sv = m.singular_values();
                let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
                if 1.0 / smin > binv_sup * (1.0 + 1e-9) {
                    return Err(Error::ContractViolation(format!(
                        "||B({x:?})^-1|| = {} exceeds binv_sup = {binv_sup}",
                        1.0 / smin
                    )));
                }
            }
        }
        Ok(spec)
    }

    pub fn zero(dim: usize) -> Self {
        Self::new("zero", Arc::new(ZeroField { dim }), 0.0).expect("zero drift is valid")
    }

    pub fn constant(b: Vec<f64>) -> Self {
        let norm = b.iter().map(|c| c * c).sum::<f64>().sqrt();
        Self::new("constant", Arc::new(ConstantField(b)), norm).expect("constant drift is valid")
    }

    pub fn trig(field: TrigVectorField) -> Self {
        let sup = field.sup_bound();
        Self::new("trig", Arc::new(field), sup).expect("trig bound holds")
    }

    pub fn dim(&self) -> usize {
        self.b.dim()
    }
    pub fn b_sup(&self) -> f64 {
        self.b_sup
    }
    pub fn binv_sup(&self) -> f64 {
        self.binv_sup
    }
    pub fn field(&self) -> &Arc<dyn VectorField> {
        &self.b
    }
    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn is_identity(&self) -> bool {
        matches!(self.matrix, Anisotropy::Identity)
    }

    pub(crate) fn matrix_at(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        match &self.matrix {
            Anisotropy::Identity => None,
            Anisotropy::Constant(m) => Some(m.clone()),
            Anisotropy::Custom(f) => Some(f(x)),
        }
    }

    /// Bound on `|y - x|` over the support of `y -> w(x, y)` when `Phi`
    /// vanishes beyond `support`.
    pub fn reach(&self, support: f64, h: f64, eps: f64) -> f64 {
        support * h * self.binv_sup + eps * self.b_sup
    }

    /// Enforces `2 h binv_sup + eps b_sup < 1/2`.
    pub fn check_radius(&self, h: f64, eps: f64) -> Result<()> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::config(format!("bandwidth h = {h} must be positive")));
        }
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::config(format!("eps = {eps} must be nonnegative")));
        }
        let r = self.reach(2.0, h, eps);
        if r >= 0.5 {
            return Err(Error::config(format!(
                "interaction radius 2h*binv_sup + eps*b_sup = {r:.4} must be < 1/2 \
                 (h = {h}, binv_sup = {}, eps = {eps}, b_sup = {})",
                self.binv_sup, self.b_sup
            )));
        }
        Ok(())
    }
}

/// Per-source data for evaluating `w(x, .)`: `x + eps b(x)` and `B(x)`.
#[derive(Clone, Debug)]
pub(crate) struct SourceFrame {
    pub shift: Vec<f64>,
    pub matrix: Option<DMatrix<f64>>,
}

impl SourceFrame {
    pub fn new(drift: &DriftSpec, x: &[f64], eps: f64) -> Self {
        let shift = if eps == 0.0 {
            vec![0.0; x.len()]
        } else {
            drift.b.value(x).into_iter().map(|c| eps * c).collect()
        };
        Self {
            shift,
            matrix: drift.matrix_at(x),
        }
    }

    /// `w(x, y)` given the scratch buffer `buf` of length `d`.
    #[inline]
    pub fn weight(&self, kernel: &KernelSpec, x: &[f64], y: &[f64], h: f64, buf: &mut [f64]) -> f64 {
        displacement_into(x, y, buf);
        for (b, s) in buf.iter_mut().zip(&self.shift) {
            *b -= s;
        }
        self.weight_shifted(kernel, h, buf)
    }

    /// Weight for the torus displacement `sign * disp` from this source.
    #[inline]
    pub fn weight_of(&self, kernel: &KernelSpec, disp: &[f64], sign: f64, h: f64, buf: &mut [f64]) -> f64 {
        for ((b, &z), s) in buf.iter_mut().zip(disp).zip(&self.shift) {
            *b = sign * z - s;
        }
        self.weight_shifted(kernel, h, buf)
    }

    #[inline]
    fn weight_shifted(&self, kernel: &KernelSpec, h: f64, buf: &[f64]) -> f64 {
        let norm2 = match &self.matrix {
            None => buf.iter().map(|c| c * c).sum::<f64>(),
            Some(m) => {
                let d = buf.len();
                (0..d)
                    .map(|i| {
                        let row: f64 = (0..d).map(|j| m[(i, j)] * buf[j]).sum();
                        row * row
                    })
                    .sum::<f64>()
            }
        };
        let reach = kernel.support() * h;
        if norm2 >= reach * reach {
            return 0.0;
        }
        kernel.eval_unchecked(norm2.sqrt() / h)
    }
}

/// Directed weight `Phi(|B(x)(disp(x, y) - eps b(x))| / h)` from `x` to `y`.
pub fn directed_weight(
    kernel: &KernelSpec,
    drift: &DriftSpec,
    x: &[f64],
    y: &[f64],
    h: f64,
    eps: f64,
) -> Result<f64> {
    drift.check_radius(h, eps)?;
    let d = kernel.dim();
    if x.len() != d || y.len() != d || drift.dim() != d {
        return Err(Error::invalid("dimension mismatch between kernel, drift and points"));
    }
    let frame = SourceFrame::new(drift, x, eps);
    let mut buf = vec![0.0; d];
    Ok(frame.weight(kernel, x, y, h, &mut buf))
}
