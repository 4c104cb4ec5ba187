//! Smooth scalar and vector fields on the torus.
//!
//! Densities, drifts, teleportation profiles and test functions all go
//! through these traits. Built-in fields supply exact derivatives; anything
//! else falls back to centered differences with step [`ScalarField::fd_step`].

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;

use crate::geometry::wrap_in_place;

const TWO_PI: f64 = 2.0 * PI;

/// A real-valued, 1-periodic field on `T^d`.
pub trait ScalarField: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    /// Step used by the default finite-difference derivatives.
    fn fd_step(&self) -> f64 {
        1e-5
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let h = self.fd_step();
        let mut probe = x.to_vec();
        (0..x.len())
            .map(|i| {
                probe[i] = x[i] + h;
                let fp = self.value(&probe);
                probe[i] = x[i] - h;
                let fm = self.value(&probe);
                probe[i] = x[i];
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    /// Row-major `d x d` Hessian.
    fn hessian(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        let h = 10.0 * self.fd_step();
        let mut probe = x.to_vec();
        let mut out = vec![0.0; d * d];
        for j in 0..d {
            probe[j] = x[j] + h;
            let gp = self.gradient(&probe);
            probe[j] = x[j] - h;
            let gm = self.gradient(&probe);
            probe[j] = x[j];
            for i in 0..d {
                out[i * d + j] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        symmetrize(&mut out, d);
        out
    }

    fn laplacian(&self, x: &[f64]) -> f64 {
        let d = x.len();
        let hess = self.hessian(x);
        (0..d).map(|i| hess[i * d + i]).sum()
    }
}

/// A vector field `b: T^d -> R^d`.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> Vec<f64>;

    fn fd_step(&self) -> f64 {
        1e-5
    }

    /// Row-major Jacobian, `J[i * d + j] = d b_i / d x_j`.
    fn jacobian(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        let h = self.fd_step();
        let mut probe = x.to_vec();
        let mut out = vec![0.0; d * d];
        for j in 0..d {
            probe[j] = x[j] + h;
            let bp = self.value(&probe);
            probe[j] = x[j] - h;
            let bm = self.value(&probe);
            probe[j] = x[j];
            for i in 0..d {
                out[i * d + j] = (bp[i] - bm[i]) / (2.0 * h);
            }
        }
        out
    }

    fn divergence(&self, x: &[f64]) -> f64 {
        let d = x.len();
        let jac = self.jacobian(x);
        (0..d).map(|i| jac[i * d + i]).sum()
    }

    fn grad_divergence(&self, x: &[f64]) -> Vec<f64> {
        let h = 10.0 * self.fd_step();
        let mut probe = x.to_vec();
        (0..x.len())
            .map(|i| {
                probe[i] = x[i] + h;
                let dp = self.divergence(&probe);
                probe[i] = x[i] - h;
                let dm = self.divergence(&probe);
                probe[i] = x[i];
                (dp - dm) / (2.0 * h)
            })
            .collect()
    }
}

fn symmetrize(m: &mut [f64], d: usize) {
    for i in 0..d {
        for j in (i + 1)..d {
            let avg = 0.5 * (m[i * d + j] + m[j * d + i]);
            m[i * d + j] = avg;
            m[j * d + i] = avg;
        }
    }
}

/// One Fourier mode `c cos(2 pi k.x) + s sin(2 pi k.x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrigTerm {
    pub wave: Vec<i32>,
    pub cos: f64,
    pub sin: f64,
}

/// Trigonometric polynomial with integer wave vectors; all derivatives exact.
#[derive(Clone, Debug, PartialEq)]
pub struct TrigPoly {
    dim: usize,
    terms: Vec<TrigTerm>,
}

impl TrigPoly {
    pub fn new(dim: usize, terms: Vec<TrigTerm>) -> Self {
        assert!(terms.iter().all(|t| t.wave.len() == dim), "wave vector length must equal dim");
        Self { dim, terms }
    }

    pub fn constant(dim: usize, value: f64) -> Self {
        Self::new(
            dim,
            vec![TrigTerm {
                wave: vec![0; dim],
                cos: value,
                sin: 0.0,
            }],
        )
    }

    /// `offset + amplitude * cos(2 pi frequency x_axis)`.
    pub fn cosine(dim: usize, axis: usize, frequency: i32, amplitude: f64, offset: f64) -> Self {
        let mut wave = vec![0; dim];
        wave[axis] = frequency;
        let mut p = Self::constant(dim, offset);
        p.terms.push(TrigTerm {
            wave,
            cos: amplitude,
            sin: 0.0,
        });
        p
    }

    /// `offset + amplitude * sin(2 pi frequency x_axis)`.
    pub fn sine(dim: usize, axis: usize, frequency: i32, amplitude: f64, offset: f64) -> Self {
        let mut wave = vec![0; dim];
        wave[axis] = frequency;
        let mut p = Self::constant(dim, offset);
        p.terms.push(TrigTerm {
            wave,
            cos: 0.0,
            sin: amplitude,
        });
        p
    }

    /// Random polynomial with `n_terms` modes of frequency at most
    /// `max_freq` per axis, coefficients uniform in `[-amplitude, amplitude]`.
    pub fn random<R: Rng + ?Sized>(
        dim: usize,
        n_terms: usize,
        max_freq: i32,
        amplitude: f64,
        offset: f64,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::constant(dim, offset);
        for _ in 0..n_terms {
            let wave = (0..dim).map(|_| rng.gen_range(-max_freq..=max_freq)).collect();
            p.terms.push(TrigTerm {
                wave,
                cos: rng.gen_range(-amplitude..=amplitude),
                sin: rng.gen_range(-amplitude..=amplitude),
            });
        }
        p
    }

    pub fn terms(&self) -> &[TrigTerm] {
        &self.terms
    }

    /// Upper bound on `|p|`: the sum of coefficient magnitudes.
    pub fn sup_bound(&self) -> f64 {
        self.terms.iter().map(|t| t.cos.abs() + t.sin.abs()).sum()
    }

    /// Lower bound on `p`: constant part minus all oscillating magnitudes.
    pub fn inf_bound(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                if t.wave.iter().all(|&k| k == 0) {
                    t.cos
                } else {
                    -(t.cos.abs() + t.sin.abs())
                }
            })
            .sum()
    }

    fn phase(&self, t: &TrigTerm, x: &[f64]) -> f64 {
        TWO_PI * t.wave.iter().zip(x).map(|(&k, &xi)| k as f64 * xi).sum::<f64>()
    }

    /// Partial derivative along `axis`, as another polynomial.
    pub fn derivative(&self, axis: usize) -> TrigPoly {
        let terms = self
            .terms
            .iter()
            .filter(|t| t.wave[axis] != 0)
            .map(|t| {
                let f = TWO_PI * t.wave[axis] as f64;
                TrigTerm {
                    wave: t.wave.clone(),
                    cos: f * t.sin,
                    sin: -f * t.cos,
                }
            })
            .collect();
        TrigPoly {
            dim: self.dim,
            terms,
        }
    }

    pub fn laplacian_poly(&self) -> TrigPoly {
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let k2: f64 = t.wave.iter().map(|&k| (k * k) as f64).sum();
                let f = -TWO_PI * TWO_PI * k2;
                TrigTerm {
                    wave: t.wave.clone(),
                    cos: f * t.cos,
                    sin: f * t.sin,
                }
            })
            .collect();
        TrigPoly {
            dim: self.dim,
            terms,
        }
    }
}

impl ScalarField for TrigPoly {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let (s, c) = self.phase(t, x).sin_cos();
                t.cos * c + t.sin * s
            })
            .sum()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        for t in &self.terms {
            let (s, c) = self.phase(t, x).sin_cos();
            let dphase = -t.cos * s + t.sin * c;
            for (gi, &k) in g.iter_mut().zip(&t.wave) {
                *gi += TWO_PI * k as f64 * dphase;
            }
        }
        g
    }

    fn hessian(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut h = vec![0.0; d * d];
        for t in &self.terms {
            let (s, c) = self.phase(t, x).sin_cos();
            let val = t.cos * c + t.sin * s;
            for i in 0..d {
                for j in 0..d {
                    h[i * d + j] -= TWO_PI * TWO_PI * (t.wave[i] * t.wave[j]) as f64 * val;
                }
            }
        }
        h
    }
}

/// Closure-backed scalar field; derivatives by finite differences.
pub struct FnScalar<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> FnScalar<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> ScalarField for FnScalar<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

/// `b = 0`.
#[derive(Clone, Debug)]
pub struct ZeroField {
    pub dim: usize,
}

impl VectorField for ZeroField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.dim]
    }
    fn jacobian(&self, _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.dim * self.dim]
    }
    fn divergence(&self, _x: &[f64]) -> f64 {
        0.0
    }
    fn grad_divergence(&self, _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.dim]
    }
}

/// Spatially constant drift.
#[derive(Clone, Debug)]
pub struct ConstantField(pub Vec<f64>);

impl VectorField for ConstantField {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn value(&self, _x: &[f64]) -> Vec<f64> {
        self.0.clone()
    }
    fn jacobian(&self, _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.0.len() * self.0.len()]
    }
    fn divergence(&self, _x: &[f64]) -> f64 {
        0.0
    }
    fn grad_divergence(&self, _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.0.len()]
    }
}

/// Componentwise trigonometric drift.
#[derive(Clone, Debug)]
pub struct TrigVectorField {
    components: Vec<TrigPoly>,
    jac: Vec<TrigPoly>,
    div: TrigPoly,
}

impl TrigVectorField {
    pub fn new(components: Vec<TrigPoly>) -> Self {
        let d = components.len();
        assert!(components.iter().all(|c| c.dim == d));
        let jac: Vec<TrigPoly> = (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| components[i].derivative(j))
            .collect();
        let div_terms = (0..d).flat_map(|i| jac[i * d + i].terms.clone()).collect();
        Self {
            components,
            jac,
            div: TrigPoly::new(d, div_terms),
        }
    }

    /// The gradient field of a trigonometric potential.
    pub fn gradient_of(potential: &TrigPoly) -> Self {
        Self::new((0..potential.dim).map(|i| potential.derivative(i)).collect())
    }

    pub fn components(&self) -> &[TrigPoly] {
        &self.components
    }

    /// Upper bound on `|b|`.
    pub fn sup_bound(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.sup_bound().powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

impl VectorField for TrigVectorField {
    fn dim(&self) -> usize {
        self.components.len()
    }
    fn value(&self, x: &[f64]) -> Vec<f64> {
        self.components.iter().map(|c| c.value(x)).collect()
    }
    fn jacobian(&self, x: &[f64]) -> Vec<f64> {
        self.jac.iter().map(|c| c.value(x)).collect()
    }
    fn divergence(&self, x: &[f64]) -> f64 {
        self.div.value(x)
    }
    fn grad_divergence(&self, x: &[f64]) -> Vec<f64> {
        self.div.gradient(x)
    }
}

/// Planar rotation about `center` with unit angular speed, smoothly cut off
/// between `inner` and `outer` radius so the field is periodic.
#[derive(Clone, Debug)]
pub struct RotationalField {
    pub center: [f64; 2],
    pub inner: f64,
    pub outer: f64,
    pub strength: f64,
}

impl RotationalField {
    pub fn new(center: [f64; 2], inner: f64, outer: f64, strength: f64) -> Self {
        assert!(0.0 < inner && inner < outer && outer < 0.5);
        Self {
            center,
            inner,
            outer,
            strength,
        }
    }

    fn cutoff(&self, r: f64) -> f64 {
        fn f(t: f64) -> f64 {
            if t <= 0.0 {
                0.0
            } else {
                (-1.0 / t).exp()
            }
        }
        let t = (self.outer - r) / (self.outer - self.inner);
        f(t) / (f(t) + f(1.0 - t))
    }

    fn offset(&self, x: &[f64]) -> [f64; 2] {
        let mut p = [x[0] - self.center[0], x[1] - self.center[1]];
        for c in &mut p {
            *c -= (*c + 0.5).floor();
        }
        p
    }
}

impl VectorField for RotationalField {
    fn dim(&self) -> usize {
        2
    }
    fn value(&self, x: &[f64]) -> Vec<f64> {
        let [dx, dy] = self.offset(x);
        let chi = self.strength * self.cutoff((dx * dx + dy * dy).sqrt());
        vec![-dy * chi, dx * chi]
    }
}

/// Periodic reduction applied to a field argument, for callers holding
/// unwrapped coordinates.
pub fn eval_wrapped(field: &dyn ScalarField, x: &[f64]) -> f64 {
    let mut y = x.to_vec();
    wrap_in_place(&mut y);
    field.value(&y)
}

/// Shared handles used across modules.
pub type SharedScalar = Arc<dyn ScalarField>;
pub type SharedVector = Arc<dyn VectorField>;
