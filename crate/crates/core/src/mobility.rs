//! Mobility functions and the kinetic action density.
//!
//! A mobility `m` lives on `[0, M]` (with `M = ∞` allowed), vanishes at the
//! endpoints, is positive and concave in between. The action density
//! `φ(z, v) = v² / m(z)` measures the cost of pushing a flux `v` through a
//! density `z`; its regularized variant `φ_ε(z, v) = (v² + ε) / m(z)` blows up
//! at the boundary of `(0, M)` and therefore keeps densities away from it.
//!
//! Extended-real results use `f64::INFINITY` as the "+∞" value.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// `m`, `m′` and `m″` at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilityValue {
    pub m: f64,
    pub dm: f64,
    pub d2m: f64,
}

/// Growth class of a mobility; it decides the recession function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrowthClass {
    /// `m(z) = m̄ z`.
    Linear,
    /// Infinite support with `m(z)/z → 0`.
    Sublinear,
    /// Finite support `[0, M]`.
    Bounded,
}

type MobilityFn = Arc<dyn Fn(f64) -> MobilityValue + Send + Sync>;

/// User supplied mobility. The evaluator must return exact `m`, `m′`, `m″`.
#[derive(Clone)]
pub struct CustomMobility {
    eval: MobilityFn,
    support: f64,
    class: GrowthClass,
}

impl CustomMobility {
    /// `support` may be `f64::INFINITY`. For infinite support, `class` must be
    /// `Linear` or `Sublinear`; for finite support it is forced to `Bounded`.
    pub fn new<F>(eval: F, support: f64, class: GrowthClass) -> Result<Self>
    where
        F: Fn(f64) -> MobilityValue + Send + Sync + 'static,
    {
        if !(support > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "mobility support must be positive, got {support}"
            )));
        }
        let class = if support.is_finite() {
            GrowthClass::Bounded
        } else if class == GrowthClass::Bounded {
            return Err(Error::InvalidParameter(
                "bounded growth class requires a finite support".into(),
            ));
        } else {
            class
        };
        Ok(Self {
            eval: Arc::new(eval),
            support,
            class,
        })
    }
}

impl fmt::Debug for CustomMobility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomMobility")
            .field("support", &self.support)
            .field("class", &self.class)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum MobilityKind {
    Linear {
        m_bar: f64,
    },
    Power {
        c: f64,
        alpha: f64,
    },
    BoundedSupport {
        c: f64,
        alpha1: f64,
        alpha2: f64,
        m_max: f64,
    },
    Custom(CustomMobility),
}

/// A validated mobility function.
#[derive(Debug, Clone)]
pub struct MobilitySpec {
    kind: MobilityKind,
}

/// Regularization strength of the action density. `ε = 0` selects the
/// unregularized density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionParams {
    pub epsilon: f64,
}

impl ActionParams {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be finite and nonnegative, got {epsilon}"
            )));
        }
        Ok(Self { epsilon })
    }

    pub fn unregularized() -> Self {
        Self { epsilon: 0.0 }
    }
}

impl MobilitySpec {
    /// `m(z) = m̄ z`.
    pub fn linear(m_bar: f64) -> Result<Self> {
        positive("m_bar", m_bar)?;
        Self::checked(MobilityKind::Linear { m_bar })
    }

    /// `m(z) = C z^α` with `α ∈ (0, 1)`.
    pub fn power(c: f64, alpha: f64) -> Result<Self> {
        positive("C", c)?;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "power mobility exponent must lie in (0,1), got {alpha}"
            )));
        }
        Self::checked(MobilityKind::Power { c, alpha })
    }

    /// `m(z) = C z^α₁ (M − z)^α₂` with `α₁, α₂ ∈ (0, 1]`.
    pub fn bounded(c: f64, alpha1: f64, alpha2: f64, m_max: f64) -> Result<Self> {
        positive("C", c)?;
        positive("M", m_max)?;
        if !m_max.is_finite() {
            return Err(Error::InvalidParameter("M must be finite".into()));
        }
        for (name, a) in [("alpha1", alpha1), ("alpha2", alpha2)] {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in (0,1], got {a}"
                )));
            }
        }
        Self::checked(MobilityKind::BoundedSupport {
            c,
            alpha1,
            alpha2,
            m_max,
        })
    }

    pub fn custom(custom: CustomMobility) -> Result<Self> {
        Self::checked(MobilityKind::Custom(custom))
    }

    fn checked(kind: MobilityKind) -> Result<Self> {
        let spec = Self { kind };
        spec.validate()?;
        Ok(spec)
    }

    pub fn kind(&self) -> &MobilityKind {
        &self.kind
    }

    /// Upper end `M` of the support; `∞` for unbounded mobilities.
    pub fn support(&self) -> f64 {
        match &self.kind {
            MobilityKind::Linear { .. } | MobilityKind::Power { .. } => f64::INFINITY,
            MobilityKind::BoundedSupport { m_max, .. } => *m_max,
            MobilityKind::Custom(c) => c.support,
        }
    }

    pub fn class(&self) -> GrowthClass {
        match &self.kind {
            MobilityKind::Linear { .. } => GrowthClass::Linear,
            MobilityKind::Power { .. } => GrowthClass::Sublinear,
            MobilityKind::BoundedSupport { .. } => GrowthClass::Bounded,
            MobilityKind::Custom(c) => c.class,
        }
    }

    /// Whether `z` lies in the open interval `(0, M)`. No tolerance.
    #[inline]
    pub fn contains(&self, z: f64) -> bool {
        z > 0.0 && z < self.support()
    }

    /// `(m, m′, m″)` at `z ∈ (0, M)`.
    pub fn eval(&self, z: f64) -> Result<MobilityValue> {
        if !self.contains(z) {
            return Err(Error::Domain {
                what: "mobility argument outside (0, M)",
                value: z,
            });
        }
        Ok(self.eval_unchecked(z))
    }

    /// Evaluation without the domain check; the caller guarantees `z ∈ (0, M)`.
    #[inline]
    pub(crate) fn eval_unchecked(&self, z: f64) -> MobilityValue {
        match &self.kind {
            MobilityKind::Linear { m_bar } => MobilityValue {
                m: m_bar * z,
                dm: *m_bar,
                d2m: 0.0,
            },
            MobilityKind::Power { c, alpha } => {
                let p = z.powf(alpha - 2.0);
                MobilityValue {
                    m: c * p * z * z,
                    dm: c * alpha * p * z,
                    d2m: c * alpha * (alpha - 1.0) * p,
                }
            }
            MobilityKind::BoundedSupport {
                c,
                alpha1: a,
                alpha2: b,
                m_max,
            } => {
                let y = m_max - z;
                let za = z.powf(*a);
                let yb = y.powf(*b);
                MobilityValue {
                    m: c * za * yb,
                    dm: c * za * yb * (a / z - b / y),
                    d2m: c
                        * za
                        * yb
                        * (a * (a - 1.0) / (z * z) - 2.0 * a * b / (z * y)
                            + b * (b - 1.0) / (y * y)),
                }
            }
            MobilityKind::Custom(cm) => (cm.eval)(z),
        }
    }

    /// Sampled check of positivity, vanishing endpoint limits and concavity.
    pub fn validate(&self) -> Result<()> {
        let support = self.support();
        let hi = if support.is_finite() { support } else { 1.0e3 };
        let samples = 257;
        for k in 1..samples {
            let z = hi * k as f64 / samples as f64;
            let v = self.eval_unchecked(z);
            if !(v.m > 0.0) || !v.m.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "mobility must be positive on (0,M); m({z}) = {}",
                    v.m
                )));
            }
            // Relative slack so round-off in exactly linear pieces passes.
            if v.d2m > 1e-12 * (1.0 + v.m.abs() + v.dm.abs()) {
                return Err(Error::InvalidParameter(format!(
                    "mobility must be concave; m''({z}) = {}",
                    v.d2m
                )));
            }
        }
        // m(0+) = 0 and m(M-) = 0 can only be probed: demand that the value
        // close to an endpoint is small against the interior scale.
        let interior = self.eval_unchecked(0.5 * hi).m;
        let near_zero = self.eval_unchecked(hi * 1e-30).m;
        if near_zero > 0.05 * interior {
            return Err(Error::InvalidParameter(format!(
                "mobility must vanish at 0; m(0+) ≈ {near_zero}"
            )));
        }
        if support.is_finite() {
            let near_top = self.eval_unchecked(support * (1.0 - 1e-15)).m;
            if near_top > 0.05 * interior {
                return Err(Error::InvalidParameter(format!(
                    "mobility must vanish at M; m(M-) ≈ {near_top}"
                )));
            }
        }
        Ok(())
    }

    /// `φ_ε(z, v)`; see the module docs. With `ε = 0` the boundary value
    /// `φ(0, 0) = φ(M, 0) = 0` is returned.
    pub fn action_density(&self, params: ActionParams, z: f64, v: f64) -> f64 {
        if self.contains(z) {
            return (v * v + params.epsilon) / self.eval_unchecked(z).m;
        }
        let on_boundary = z == 0.0 || z == self.support();
        if params.epsilon == 0.0 && on_boundary && v == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    /// Gradient and Hessian of `φ_ε` in `(z, v)` at an interior point.
    pub fn action_grad_hess(&self, params: ActionParams, z: f64, v: f64) -> Result<ActionDerivs> {
        let mv = self.eval(z)?;
        Ok(action_derivs(mv, params.epsilon, v))
    }

    /// Recession function of `φ` (equivalently of `φ_ε` for every ε).
    pub fn recession(&self, z: f64, v: f64) -> f64 {
        match self.class() {
            GrowthClass::Linear => self.action_density(ActionParams::unregularized(), z, v),
            GrowthClass::Sublinear => {
                if v == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            GrowthClass::Bounded => {
                if z == 0.0 && v == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }
}

/// First and second derivatives of `φ_ε` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionDerivs {
    /// `(∂_z φ_ε, ∂_v φ_ε)`.
    pub grad: [f64; 2],
    /// `[[φ_zz, φ_zv], [φ_zv, φ_vv]]`.
    pub hess: [[f64; 2]; 2],
}

#[inline]
pub(crate) fn action_derivs(mv: MobilityValue, epsilon: f64, v: f64) -> ActionDerivs {
    let MobilityValue { m, dm, d2m } = mv;
    let num = v * v + epsilon;
    let inv_m = 1.0 / m;
    let inv_m2 = inv_m * inv_m;
    let zz = num * (2.0 * dm * dm * inv_m2 * inv_m - d2m * inv_m2);
    let zv = -2.0 * v * dm * inv_m2;
    ActionDerivs {
        grad: [-num * dm * inv_m2, 2.0 * v * inv_m],
        hess: [[zz, zv], [zv, 2.0 * inv_m]],
    }
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} must be positive, got {x}"
        )))
    }
}
