//! Free energy densities and the discrete energy of a density row.
//!
//! The discrete energy of a row `u` on a grid with spacing `Δx` is
//!
//! ```text
//! Δx Σ_j E(u_j) + Δx Σ_j V_j u_j + Δx Σ_{j<N} G((u_{j+1} − u_j) / Δx)
//! ```
//!
//! where `V_j = V((j−1)Δx)` is the potential sampled at the left end of cell `j`.

use std::fmt;
use std::sync::Arc;

use crate::error::{shape_err, Error, Result};
use crate::grid::GridSpec;

type ScalarFn = Arc<dyn Fn(f64) -> Option<(f64, f64, f64)> + Send + Sync>;

/// A scalar density with its first two derivatives. `None` from the
/// evaluator means "undefined here", which the energy treats as `+∞`.
#[derive(Clone)]
pub struct CustomDensity {
    eval: ScalarFn,
    convex: bool,
}

impl CustomDensity {
    pub fn new<F>(eval: F, convex: bool) -> Self
    where
        F: Fn(f64) -> Option<(f64, f64, f64)> + Send + Sync + 'static,
    {
        Self {
            eval: Arc::new(eval),
            convex,
        }
    }
}

impl fmt::Debug for CustomDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomDensity")
            .field("convex", &self.convex)
            .finish_non_exhaustive()
    }
}

/// Internal energy density `E`.
#[derive(Debug, Clone)]
pub enum Internal {
    None,
    /// `z log z − z + 1`.
    Entropy,
    /// `z^q / (q − 1)` with `q > 1`.
    PowerLaw {
        q: f64,
    },
    /// `z² (1 − z)²`; not convex.
    DoubleWell,
    Custom(CustomDensity),
}

/// External potential `V` on `[0, 1]`.
#[derive(Debug, Clone)]
pub enum Potential {
    Zero,
    /// `a (x − c)²`.
    Quadratic {
        a: f64,
        center: f64,
    },
    /// Values on the uniform nodes `k / (n − 1)`, linearly interpolated.
    Table(Vec<f64>),
}

/// Gradient energy density `G`.
#[derive(Debug, Clone)]
pub enum Gradient {
    None,
    /// `θ p² / 2`.
    QuadraticDirichlet {
        theta: f64,
    },
    /// Custom density with its uniform convexity modulus.
    Custom {
        density: CustomDensity,
        modulus: f64,
    },
}

#[derive(Debug, Clone)]
pub struct EnergyForm {
    pub internal: Internal,
    pub potential: Potential,
    pub gradient: Gradient,
}

/// `V^Δ_j = V((j−1)Δx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSamples(pub Vec<f64>);

/// Symmetric tridiagonal matrix: `diag` has length `n`, `off` length `n − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl Tridiagonal {
    pub fn zeros(n: usize) -> Self {
        Self {
            diag: vec![0.0; n],
            off: vec![0.0; n.saturating_sub(1)],
        }
    }

    pub fn quad_form(&self, d: &[f64]) -> f64 {
        let mut s: f64 = self.diag.iter().zip(d).map(|(a, x)| a * x * x).sum();
        for (k, o) in self.off.iter().enumerate() {
            s += 2.0 * o * d[k] * d[k + 1];
        }
        s
    }
}

impl Internal {
    /// `(E, E′, E″)`, or `None` outside the domain of `E`.
    pub fn eval(&self, z: f64) -> Option<(f64, f64, f64)> {
        match self {
            Internal::None => Some((0.0, 0.0, 0.0)),
            Internal::Entropy => {
                if z > 0.0 {
                    Some((z * z.ln() - z + 1.0, z.ln(), 1.0 / z))
                } else if z == 0.0 {
                    Some((1.0, f64::NEG_INFINITY, f64::INFINITY))
                } else {
                    None
                }
            }
            Internal::PowerLaw { q } => {
                if z >= 0.0 {
                    let zq2 = if z == 0.0 { 0.0 } else { z.powf(q - 2.0) };
                    Some((zq2 * z * z / (q - 1.0), q * zq2 * z / (q - 1.0), q * zq2))
                } else {
                    None
                }
            }
            Internal::DoubleWell => {
                let y = 1.0 - z;
                Some((
                    z * z * y * y,
                    2.0 * z * y * (1.0 - 2.0 * z),
                    2.0 * (1.0 - 6.0 * z + 6.0 * z * z),
                ))
            }
            Internal::Custom(c) => (c.eval)(z),
        }
    }

    pub fn is_convex(&self) -> bool {
        match self {
            Internal::DoubleWell => false,
            Internal::Custom(c) => c.convex,
            _ => true,
        }
    }
}

impl Potential {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Potential::Zero => 0.0,
            Potential::Quadratic { a, center } => a * (x - center) * (x - center),
            Potential::Table(v) => {
                let n = v.len();
                if n == 1 {
                    return v[0];
                }
                let s = (x.clamp(0.0, 1.0) * (n - 1) as f64).min((n - 1) as f64);
                let k = (s.floor() as usize).min(n - 2);
                let t = s - k as f64;
                v[k] * (1.0 - t) + v[k + 1] * t
            }
        }
    }
}

impl Gradient {
    /// `(G, G′, G″)` at slope `p`.
    pub fn eval(&self, p: f64) -> Option<(f64, f64, f64)> {
        match self {
            Gradient::None => Some((0.0, 0.0, 0.0)),
            Gradient::QuadraticDirichlet { theta } => {
                Some((0.5 * theta * p * p, theta * p, *theta))
            }
            Gradient::Custom { density, .. } => (density.eval)(p),
        }
    }

    fn is_present(&self) -> bool {
        !matches!(self, Gradient::None)
    }
}

impl EnergyForm {
    pub fn new(internal: Internal, potential: Potential, gradient: Gradient) -> Result<Self> {
        let form = Self {
            internal,
            potential,
            gradient,
        };
        form.validate()?;
        Ok(form)
    }

    pub fn validate(&self) -> Result<()> {
        if let Internal::PowerLaw { q } = self.internal {
            if !(q > 1.0) || !q.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "power-law exponent must exceed 1, got {q}"
                )));
            }
        }
        match &self.potential {
            Potential::Quadratic { a, center } => {
                if !a.is_finite() || !(0.0..=1.0).contains(center) {
                    return Err(Error::InvalidParameter(format!(
                        "quadratic potential needs finite a and center in [0,1], got a={a}, c={center}"
                    )));
                }
            }
            Potential::Table(v) => {
                if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidParameter(
                        "potential table must be non-empty and finite".into(),
                    ));
                }
            }
            Potential::Zero => {}
        }
        match &self.gradient {
            Gradient::QuadraticDirichlet { theta } if !(*theta > 0.0) => Err(
                Error::InvalidParameter(format!("theta must be positive, got {theta}")),
            ),
            Gradient::Custom { modulus, .. } if !(*modulus > 0.0) => Err(Error::InvalidParameter(
                format!("gradient density needs a positive convexity modulus, got {modulus}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn is_convex(&self) -> bool {
        self.internal.is_convex()
    }

    /// Left-endpoint samples `V((j−1)Δx)`.
    pub fn sample_potential(&self, grid: &GridSpec) -> PotentialSamples {
        let dx = grid.dx();
        PotentialSamples(
            (0..grid.n_x())
                .map(|j| self.potential.eval(j as f64 * dx))
                .collect(),
        )
    }

    fn check_row(&self, grid: &GridSpec, samples: &PotentialSamples, u: &[f64]) -> Result<()> {
        if u.len() != grid.n_x() {
            return Err(shape_err(grid.n_x(), u.len()));
        }
        if samples.0.len() != grid.n_x() {
            return Err(shape_err(grid.n_x(), samples.0.len()));
        }
        Ok(())
    }

    /// Discrete energy of a density row; `+∞` where `E` or `G` is undefined.
    pub fn discrete_energy(
        &self,
        grid: &GridSpec,
        samples: &PotentialSamples,
        u: &[f64],
    ) -> Result<f64> {
        self.check_row(grid, samples, u)?;
        Ok(self.energy_unchecked(grid.dx(), &samples.0, u))
    }

    pub(crate) fn energy_unchecked(&self, dx: f64, v: &[f64], u: &[f64]) -> f64 {
        let mut total = 0.0;
        for (&z, &vj) in u.iter().zip(v) {
            match self.internal.eval(z) {
                Some((e, _, _)) => total += e + vj * z,
                None => return f64::INFINITY,
            }
        }
        if self.gradient.is_present() {
            for w in u.windows(2) {
                match self.gradient.eval((w[1] - w[0]) / dx) {
                    Some((g, _, _)) => total += g,
                    None => return f64::INFINITY,
                }
            }
        }
        dx * total
    }

    /// Gradient and tridiagonal Hessian of the discrete energy.
    pub fn discrete_energy_grad_hess(
        &self,
        grid: &GridSpec,
        samples: &PotentialSamples,
        u: &[f64],
    ) -> Result<(Vec<f64>, Tridiagonal)> {
        self.check_row(grid, samples, u)?;
        let n = u.len();
        let mut grad = vec![0.0; n];
        let mut hess = Tridiagonal::zeros(n);
        self.accumulate_grad_hess(grid.dx(), &samples.0, u, &mut grad, Some(&mut hess))?;
        Ok((grad, hess))
    }

    /// Adds the energy gradient into `grad` and (optionally) the Hessian into
    /// `hess`.
    pub(crate) fn accumulate_grad_hess(
        &self,
        dx: f64,
        v: &[f64],
        u: &[f64],
        grad: &mut [f64],
        mut hess: Option<&mut Tridiagonal>,
    ) -> Result<()> {
        for (j, (&z, &vj)) in u.iter().zip(v).enumerate() {
            let (_, de, d2e) = self.internal.eval(z).ok_or(Error::Domain {
                what: "internal energy undefined",
                value: z,
            })?;
            if !de.is_finite() || !d2e.is_finite() {
                return Err(Error::Domain {
                    what: "internal energy not differentiable",
                    value: z,
                });
            }
            grad[j] += dx * (de + vj);
            if let Some(h) = hess.as_deref_mut() {
                h.diag[j] += dx * d2e;
            }
        }
        if self.gradient.is_present() {
            for j in 0..u.len().saturating_sub(1) {
                let p = (u[j + 1] - u[j]) / dx;
                let (_, dg, d2g) = self.gradient.eval(p).ok_or(Error::Domain {
                    what: "gradient energy undefined",
                    value: p,
                })?;
                grad[j] -= dg;
                grad[j + 1] += dg;
                if let Some(h) = hess.as_deref_mut() {
                    let c = d2g / dx;
                    h.diag[j] += c;
                    h.diag[j + 1] += c;
                    h.off[j] -= c;
                }
            }
        }
        Ok(())
    }
}
