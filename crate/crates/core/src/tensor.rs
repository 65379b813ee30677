//! Small dense 3×3 tensor algebra.
//!
//! `Mat3` carries every second-order quantity in the model (deformation
//! gradients, growth tensors, growth rates). All operations are pure value
//! functions, so they can be used freely from worker threads.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, MulAssign, Neg, Sub, SubAssign};

pub type Vec3 = [f64; 3];

#[inline]
pub fn vsub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn vadd(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn vscale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn vdot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn vnorm(a: Vec3) -> f64 {
    vdot(a, a).sqrt()
}

#[inline]
pub fn vcross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Row-major 3×3 real matrix with the Frobenius norm.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const ZERO: Mat3 = Mat3([[0.0; 3]; 3]);
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn identity() -> Self {
        Self::IDENTITY
    }

    pub fn from_diag(d: Vec3) -> Self {
        Mat3([[d[0], 0.0, 0.0], [0.0, d[1], 0.0], [0.0, 0.0, d[2]]])
    }

    pub fn from_cols(c0: Vec3, c1: Vec3, c2: Vec3) -> Self {
        Mat3([
            [c0[0], c1[0], c2[0]],
            [c0[1], c1[1], c2[1]],
            [c0[2], c1[2], c2[2]],
        ])
    }

    /// Outer product `a ⊗ b`.
    pub fn outer(a: Vec3, b: Vec3) -> Self {
        let mut m = Mat3::ZERO;
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = a[i] * b[j];
            }
        }
        m
    }

    pub fn col(&self, j: usize) -> Vec3 {
        [self.0[0][j], self.0[1][j], self.0[2][j]]
    }

    pub fn transpose(&self) -> Self {
        let a = &self.0;
        Mat3([
            [a[0][0], a[1][0], a[2][0]],
            [a[0][1], a[1][1], a[2][1]],
            [a[0][2], a[1][2], a[2][2]],
        ])
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    /// Cofactor expansion along the first row.
    pub fn det(&self) -> f64 {
        let a = &self.0;
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    }

    /// Cofactor matrix; equals `det(A) A^{-T}` when A is invertible.
    pub fn cof(&self) -> Self {
        let a = &self.0;
        Mat3([
            [
                a[1][1] * a[2][2] - a[1][2] * a[2][1],
                a[1][2] * a[2][0] - a[1][0] * a[2][2],
                a[1][0] * a[2][1] - a[1][1] * a[2][0],
            ],
            [
                a[0][2] * a[2][1] - a[0][1] * a[2][2],
                a[0][0] * a[2][2] - a[0][2] * a[2][0],
                a[0][1] * a[2][0] - a[0][0] * a[2][1],
            ],
            [
                a[0][1] * a[1][2] - a[0][2] * a[1][1],
                a[0][2] * a[1][0] - a[0][0] * a[1][2],
                a[0][0] * a[1][1] - a[0][1] * a[1][0],
            ],
        ])
    }

    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        Some(self.cof().transpose() * (1.0 / d))
    }

    /// Solves `self · X = rhs` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, rhs: &Mat3) -> Option<Mat3> {
        let mut a = self.0;
        let mut b = rhs.0;
        for k in 0..3 {
            let mut piv = k;
            for r in k + 1..3 {
                if a[r][k].abs() > a[piv][k].abs() {
                    piv = r;
                }
            }
            if a[piv][k] == 0.0 {
                return None;
            }
            a.swap(k, piv);
            b.swap(k, piv);
            for r in k + 1..3 {
                let f = a[r][k] / a[k][k];
                for c in k..3 {
                    a[r][c] -= f * a[k][c];
                }
                for c in 0..3 {
                    b[r][c] -= f * b[k][c];
                }
            }
        }
        let mut x = [[0.0; 3]; 3];
        for c in 0..3 {
            for r in (0..3).rev() {
                let mut s = b[r][c];
                for k in r + 1..3 {
                    s -= a[r][k] * x[k][c];
                }
                x[r][c] = s / a[r][r];
            }
        }
        Some(Mat3(x))
    }

    /// Frobenius inner product `A : B`.
    pub fn ddot(&self, other: &Mat3) -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += self.0[i][j] * other.0[i][j];
            }
        }
        s
    }

    pub fn norm_sq(&self) -> f64 {
        self.ddot(self)
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        (0..3)
            .map(|j| (0..3).map(|i| self.0[i][j].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn sym(&self) -> Self {
        (*self + self.transpose()) * 0.5
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let a = &self.0;
        [
            a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
            a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
            a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
        ]
    }

    pub fn as_slice(&self) -> [f64; 9] {
        let a = &self.0;
        [
            a[0][0], a[0][1], a[0][2], a[1][0], a[1][1], a[1][2], a[2][0], a[2][1], a[2][2],
        ]
    }
}

impl Index<(usize, usize)> for Mat3 {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.0[i][j]
    }
}

impl IndexMut<(usize, usize)> for Mat3 {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.0[i][j]
    }
}

impl Add for Mat3 {
    type Output = Mat3;
    fn add(mut self, rhs: Mat3) -> Mat3 {
        self += rhs;
        self
    }
}

impl AddAssign for Mat3 {
    fn add_assign(&mut self, rhs: Mat3) {
        for i in 0..3 {
            for j in 0..3 {
                self.0[i][j] += rhs.0[i][j];
            }
        }
    }
}

impl Sub for Mat3 {
    type Output = Mat3;
    fn sub(mut self, rhs: Mat3) -> Mat3 {
        self -= rhs;
        self
    }
}

impl SubAssign for Mat3 {
    fn sub_assign(&mut self, rhs: Mat3) {
        for i in 0..3 {
            for j in 0..3 {
                self.0[i][j] -= rhs.0[i][j];
            }
        }
    }
}

impl Neg for Mat3 {
    type Output = Mat3;
    fn neg(self) -> Mat3 {
        self * -1.0
    }
}

impl Mul<f64> for Mat3 {
    type Output = Mat3;
    fn mul(mut self, s: f64) -> Mat3 {
        self *= s;
        self
    }
}

impl MulAssign<f64> for Mat3 {
    fn mul_assign(&mut self, s: f64) {
        for v in self.0.iter_mut().flatten() {
            *v *= s;
        }
    }
}

impl Mul<Mat3> for f64 {
    type Output = Mat3;
    fn mul(self, m: Mat3) -> Mat3 {
        m * self
    }
}

impl Mul for Mat3 {
    type Output = Mat3;
    fn mul(self, rhs: Mat3) -> Mat3 {
        let a = &self.0;
        let b = &rhs.0;
        let mut c = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        Mat3(c)
    }
}

/// Third-order tensor, e.g. the spatial gradient of a matrix field with
/// `(∇A)_{ijk} = ∂_k A_{ij}`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Tensor3(pub [[[f64; 3]; 3]; 3]);

impl Tensor3 {
    pub const ZERO: Tensor3 = Tensor3([[[0.0; 3]; 3]; 3]);

    /// Swaps the first two indices: `(Cᵗ)_{ijk} = C_{jik}`.
    pub fn partial_transpose(&self) -> Self {
        let mut out = Tensor3::ZERO;
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    out.0[i][j][k] = self.0[j][i][k];
                }
            }
        }
        out
    }

    /// `(CB)_{ijk} = C_{ijl} B_{lk}`.
    pub fn mul_mat(&self, b: &Mat3) -> Self {
        let mut out = Tensor3::ZERO;
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    out.0[i][j][k] = (0..3).map(|l| self.0[i][j][l] * b.0[l][k]).sum();
                }
            }
        }
        out
    }

    /// `(BC)_{ijk} = B_{il} C_{ljk}`.
    pub fn premul_mat(&self, b: &Mat3) -> Self {
        let mut out = Tensor3::ZERO;
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    out.0[i][j][k] = (0..3).map(|l| b.0[i][l] * self.0[l][j][k]).sum();
                }
            }
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().flatten().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }
}

// Padé [13/13] coefficients for exp.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

const THETA13: f64 = 5.371920351148152;

/// Matrix exponential by scaling and squaring with a fixed [13/13] Padé
/// kernel.
pub fn mat_exp(a: &Mat3) -> Mat3 {
    if !a.is_finite() {
        return Mat3([[f64::NAN; 3]; 3]);
    }
    let n1 = a.norm1();
    let s = if n1 > THETA13 {
        (n1 / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = *a * 0.5_f64.powi(s);
    let b = &PADE13;
    let id = Mat3::IDENTITY;
    let a2 = a * a;
    let a4 = a2 * a2;
    let a6 = a4 * a2;
    let u_inner = a6 * (a6 * b[13] + a4 * b[11] + a2 * b[9]) + a6 * b[7] + a4 * b[5] + a2 * b[3] + id * b[1];
    let u = a * u_inner;
    let v = a6 * (a6 * b[12] + a4 * b[10] + a2 * b[8]) + a6 * b[6] + a4 * b[4] + a2 * b[2] + id * b[0];
    let mut x = (v - u)
        .solve(&(v + u))
        .expect("Padé denominator is nonsingular for scaled arguments");
    for _ in 0..s {
        x = x * x;
    }
    x
}

// 8-point Gauss–Legendre rule on [-1, 1].
const GL8_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329_0,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362_0,
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Directional derivative of `X ↦ exp(τX)` at `A` in direction `E`:
/// `∫₀¹ exp((1−s)τA) τE exp(sτA) ds`, evaluated with 8-point Gauss–Legendre.
pub fn mat_exp_dderiv(a: &Mat3, e: &Mat3, tau: f64) -> Mat3 {
    let ta = *a * tau;
    let te = *e * tau;
    let mut acc = Mat3::ZERO;
    for (x, w) in GL8_NODES.iter().zip(GL8_WEIGHTS.iter()) {
        let s = 0.5 * (x + 1.0);
        let left = mat_exp(&(ta * (1.0 - s)));
        let right = mat_exp(&(ta * s));
        acc += (left * te * right) * (0.5 * w);
    }
    acc
}
