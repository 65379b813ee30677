//! Polyconvex stored-energy density and the growth-modified Piola stress.
//!
//! The density is `W(F) = a|F|^p + b (det F)^{-s}` on `det F > 0` and `+∞`
//! otherwise. It is the restriction of the convex map
//! `(A, C, d) ↦ a|A|^p + b d^{-s}` (no dependence on the cofactor slot) to
//! `(F, cof F, det F)`, hence polyconvex. With `c₁ = min(a, 1)` and
//! `c₂ = max(p, √3 s)` it satisfies
//!
//! ```text
//! W(F) ≥ c₁|F|^p − 1/c₁,      |Fᵀ DW(F)| ≤ c₂ (W(F) + 1).
//! ```

use crate::error::{Error, Result};
use crate::tensor::Mat3;

/// Energy value on the extended real line. `PosInfinity` marks an
/// inadmissible (orientation-reversing or degenerate) elastic strain.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub enum ExtReal {
    Finite(f64),
    PosInfinity,
}

impl ExtReal {
    pub fn is_finite(self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(v) => Some(v),
            ExtReal::PosInfinity => None,
        }
    }

    /// Value as `f64`, with `+∞` mapped to `f64::INFINITY`.
    pub fn to_f64(self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyDensity {
    /// Growth exponent, `p > 3`.
    pub p: f64,
    /// Bulk stiffness coefficient.
    pub a: f64,
    /// Compression-barrier coefficient.
    pub b: f64,
    /// Barrier exponent, `s > 0`.
    pub s: f64,
}

impl Default for EnergyDensity {
    /// `p = 4`, `a = 1`, `s = 1`, and `b = 12`, which makes the identity
    /// stress free (`p a 3^{p/2} = 3 s b`).
    fn default() -> Self {
        EnergyDensity {
            p: 4.0,
            a: 1.0,
            b: 12.0,
            s: 1.0,
        }
    }
}

impl EnergyDensity {
    pub fn new(p: f64, a: f64, b: f64, s: f64) -> Self {
        EnergyDensity { p, a, b, s }
    }

    /// Coercivity constant.
    pub fn c1(&self) -> f64 {
        self.a.min(1.0)
    }

    /// Mandel-control constant.
    pub fn c2(&self) -> f64 {
        self.p.max(3f64.sqrt() * self.s)
    }

    /// The convex representative `Ŵ(A, cof A, det A)`. The cofactor
    /// argument is currently unused.
    pub fn hat_w(&self, a: &Mat3, _cof: &Mat3, det: f64) -> ExtReal {
        if det <= 0.0 || !det.is_finite() {
            return ExtReal::PosInfinity;
        }
        let v = self.a * a.norm().powf(self.p) + self.b * det.powf(-self.s);
        if v.is_finite() {
            ExtReal::Finite(v)
        } else {
            ExtReal::PosInfinity
        }
    }

    pub fn w(&self, f: &Mat3) -> ExtReal {
        self.hat_w(f, &f.cof(), f.det())
    }

    /// `DW(F) = p a |F|^{p-2} F − s b (det F)^{-s} F^{-T}`.
    pub fn dw(&self, f: &Mat3) -> Result<Mat3> {
        let det = f.det();
        if det <= 0.0 || !det.is_finite() {
            return Err(Error::Degenerate(format!("det F = {det} in DW")));
        }
        // F^{-T} = cof F / det F
        let finv_t = f.cof() * (1.0 / det);
        let n2 = f.norm_sq();
        Ok(*f * (self.p * self.a * n2.powf(0.5 * self.p - 1.0))
            - finv_t * (self.s * self.b * det.powf(-self.s)))
    }

    /// Mandel tensor `Fᵀ DW(F)`.
    pub fn mandel(&self, f: &Mat3) -> Result<Mat3> {
        Ok(f.transpose() * self.dw(f)?)
    }

    /// First Piola–Kirchhoff stress of the grown body,
    /// `det G · DW(F G⁻¹) · G^{-T}`.
    pub fn piola_with_growth(&self, f: &Mat3, g: &GrowthTensorPoint) -> Result<Mat3> {
        let fe = *f * g.ginv;
        let d = fe.det();
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::Degenerate(format!("elastic strain has det {d}")));
        }
        Ok(self.dw(&fe)? * g.ginv.transpose() * g.det)
    }
}

/// Growth tensor at one quadrature point with cached inverse and determinant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrowthTensorPoint {
    pub g: Mat3,
    pub ginv: Mat3,
    pub det: f64,
}

impl GrowthTensorPoint {
    pub fn new(g: Mat3) -> Result<Self> {
        let det = g.det();
        if det <= 0.0 || !det.is_finite() {
            return Err(Error::Degenerate(format!("growth tensor with det {det}")));
        }
        let ginv = g.inverse().expect("nonzero determinant");
        Ok(GrowthTensorPoint { g, ginv, det })
    }

    pub fn identity() -> Self {
        GrowthTensorPoint {
            g: Mat3::IDENTITY,
            ginv: Mat3::IDENTITY,
            det: 1.0,
        }
    }
}
