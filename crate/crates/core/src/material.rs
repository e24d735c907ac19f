//! Isotropic magnetostrictive material law and the applied Zeeman field.
//!
//! The magnetostrain is `ε_m(m) = 3/2 λ₁₀₀ (m⊗m − I/3)`, Hooke's law is
//! `C:ε = 2μ ε + λ tr(ε) I` and the stress is `σ = C:(ε(u) − ε_m(m))`.
//! All quantities are dimensionless.

use serde::{Deserialize, Serialize};

use crate::{Error, Mat3, Result, Vec3};

/// Spatially constant applied field `f(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ZeemanField {
    Constant { field: Vec3 },
    /// `f(t) = base + H(t)·pulse` with the trapezoidal profile of
    /// [`pulse_profile`].
    Pulse { base: Vec3, pulse: Vec3 },
}

impl ZeemanField {
    pub fn constant(field: Vec3) -> Self {
        ZeemanField::Constant { field }
    }

    pub fn zero() -> Self {
        Self::constant(Vec3::zeros())
    }

    pub fn at(&self, t: f64) -> Vec3 {
        match *self {
            ZeemanField::Constant { field } => field,
            ZeemanField::Pulse { base, pulse } => base + pulse * pulse_profile(t),
        }
    }

    /// The field with the pulse switched off.
    pub fn baseline(&self) -> Vec3 {
        match *self {
            ZeemanField::Constant { field } => field,
            ZeemanField::Pulse { base, .. } => base,
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            ZeemanField::Constant { field } => field.iter().all(|x| x.is_finite()),
            ZeemanField::Pulse { base, pulse } => {
                base.iter().chain(pulse.iter()).all(|x| x.is_finite())
            }
        }
    }
}

/// Trapezoidal pulse: ramps up as `10t` on `[0, 0.1]`, holds at one until
/// `0.2`, ramps down as `3 − 10t` until `0.3`, zero otherwise.
pub fn pulse_profile(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t <= 0.1 {
        10.0 * t
    } else if t <= 0.2 {
        1.0
    } else if t <= 0.3 {
        3.0 - 10.0 * t
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    /// Gilbert damping.
    pub alpha: f64,
    /// Saturation magnetostrain.
    pub lambda100: f64,
    /// Lamé shear modulus.
    pub mu: f64,
    /// Lamé first parameter.
    pub lambda: f64,
    pub zeeman: ZeemanField,
}

impl Default for MaterialParams {
    /// `α = 0.1`, `λ₁₀₀ = 3·10⁻³`, `f = (1, 0, 0)` and the Lamé pair of
    /// [`MaterialParams::DEFAULT_MU`], [`MaterialParams::DEFAULT_LAMBDA`].
    fn default() -> Self {
        MaterialParams {
            alpha: 0.1,
            lambda100: 3e-3,
            mu: Self::DEFAULT_MU,
            lambda: Self::DEFAULT_LAMBDA,
            zeeman: ZeemanField::constant(Vec3::new(1.0, 0.0, 0.0)),
        }
    }
}

impl MaterialParams {
    /// Default dimensionless shear modulus. The ratio to
    /// [`Self::DEFAULT_LAMBDA`] is that of FeCoSiB, a Poisson ratio of
    /// about 0.12.
    pub const DEFAULT_MU: f64 = 24.0;
    pub const DEFAULT_LAMBDA: f64 = 7.5;

    pub fn validate(&self) -> Result<()> {
        let finite = [self.alpha, self.lambda100, self.mu, self.lambda]
            .iter()
            .all(|x| x.is_finite());
        if !finite || !self.zeeman.is_finite() {
            return Err(Error::invalid("material", "all parameters must be finite"));
        }
        if self.alpha <= 0.0 {
            return Err(Error::invalid("alpha", format!("must be positive, got {}", self.alpha)));
        }
        if self.mu <= 0.0 {
            return Err(Error::invalid("mu", format!("must be positive, got {}", self.mu)));
        }
        if 2.0 * self.mu + 3.0 * self.lambda <= 0.0 {
            return Err(Error::invalid(
                "lambda",
                format!("2mu + 3lambda must be positive, got {}", 2.0 * self.mu + 3.0 * self.lambda),
            ));
        }
        Ok(())
    }

    pub fn hooke(&self, eps: &Mat3) -> Mat3 {
        hooke(eps, self.mu, self.lambda)
    }

    pub fn magnetostrain(&self, m: &Vec3) -> Mat3 {
        magnetostrain(m, self.lambda100)
    }

    pub fn stress(&self, eps_u: &Mat3, m: &Vec3) -> Mat3 {
        self.hooke(&(eps_u - self.magnetostrain(m)))
    }

    /// Stress-free-strain stress `C:ε_m(m)`.
    pub fn magnetostress(&self, m: &Vec3) -> Mat3 {
        self.hooke(&self.magnetostrain(m))
    }
}

pub fn magnetostrain(m: &Vec3, lambda100: f64) -> Mat3 {
    (m * m.transpose() - Mat3::identity() / 3.0) * (1.5 * lambda100)
}

pub fn hooke(eps: &Mat3, mu: f64, lambda: f64) -> Mat3 {
    eps * (2.0 * mu) + Mat3::identity() * (lambda * eps.trace())
}

pub fn deviator(s: &Mat3) -> Mat3 {
    s - Mat3::identity() * (s.trace() / 3.0)
}

/// Magnetoelastic part of the effective field, `3λ₁₀₀ dev(σ) m`.
///
/// For unit `m` this agrees with the negative gradient of the elastic
/// energy density in every direction tangent to `m`.
pub fn elastic_effective_field(sigma: &Mat3, m: &Vec3, lambda100: f64) -> Vec3 {
    deviator(sigma) * m * (3.0 * lambda100)
}

/// `½|∇m|² − f·m + ½(ε−ε_m):C:(ε−ε_m)`; `grad_m` has rows `∇m_c`.
pub fn energy_density(eps_u: &Mat3, m: &Vec3, grad_m: &Mat3, f: &Vec3, params: &MaterialParams) -> f64 {
    let e = eps_u - params.magnetostrain(m);
    0.5 * grad_m.norm_squared() - f.dot(m) + 0.5 * params.hooke(&e).dot(&e)
}
