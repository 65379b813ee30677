//! Discrete elastic energy of the grown body and its gradient.
//!
//! The energy of a deformation `y` under growth `G` and load `ℓ` is
//!
//! ```text
//! E(y) = Σ_T |T| W(∇y G⁻¹) det G − Σ_T |T| f·ȳ_T − Σ_{F ⊂ Γ_N} |F| g·ȳ_F
//! ```
//!
//! with one-point quadrature on tets and Neumann facets. Per-tet work runs
//! on the rayon pool; results are reduced sequentially in tet order so the
//! totals do not depend on the thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hyperelastic::{EnergyDensity, ExtReal, GrowthTensorPoint};
use crate::mesh::{BoundaryTag, Mesh};
use crate::tensor::{vadd, vdot, vscale, Mat3, Vec3};

/// Nodal deformation values.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationField(pub Vec<Vec3>);

impl DeformationField {
    pub fn identity(mesh: &Mesh) -> Self {
        DeformationField(mesh.vertices.clone())
    }

    /// Largest nodal distance between two fields.
    pub fn max_dist(&self, other: &DeformationField) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| {
                let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
                vdot(d, d).sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// True when every Γ_D node sits at its reference position.
    pub fn satisfies_dirichlet(&self, mesh: &Mesh) -> bool {
        (0..mesh.num_nodes()).all(|v| !mesh.dirichlet_node[v] || self.0[v] == mesh.vertices[v])
    }
}

/// Growth tensor per quadrature point.
#[derive(Clone, Debug, PartialEq)]
pub struct GrowthField(pub Vec<GrowthTensorPoint>);

impl GrowthField {
    pub fn uniform(mesh: &Mesh, g: Mat3) -> Result<Self> {
        let p = GrowthTensorPoint::new(g)?;
        Ok(GrowthField(vec![p; mesh.num_tets()]))
    }

    pub fn identity(mesh: &Mesh) -> Self {
        GrowthField(vec![GrowthTensorPoint::identity(); mesh.num_tets()])
    }

    pub fn from_tensors(gs: Vec<Mat3>) -> Result<Self> {
        gs.into_iter().map(GrowthTensorPoint::new).collect::<Result<Vec<_>>>().map(GrowthField)
    }

    pub fn tensors(&self) -> Vec<Mat3> {
        self.0.iter().map(|p| p.g).collect()
    }

    pub fn min_det(&self) -> f64 {
        self.0.iter().map(|p| p.det).fold(f64::INFINITY, f64::min)
    }
}

/// Load sample `ℓ_i`: body force per tet and traction per boundary facet
/// (only Neumann facets contribute).
#[derive(Clone, Debug, PartialEq)]
pub struct Load {
    pub body: Vec<Vec3>,
    pub traction: Vec<Vec3>,
}

impl Load {
    pub fn zero(mesh: &Mesh) -> Self {
        Self::uniform(mesh, [0.0; 3], [0.0; 3])
    }

    pub fn uniform(mesh: &Mesh, f: Vec3, g: Vec3) -> Self {
        Load {
            body: vec![f; mesh.num_tets()],
            traction: vec![g; mesh.boundary_facets.len()],
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Load {
            body: self.body.iter().map(|v| vscale(*v, s)).collect(),
            traction: self.traction.iter().map(|v| vscale(*v, s)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.body.iter().chain(&self.traction).flatten().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.body.iter().chain(&self.traction).flatten().all(|&v| v == 0.0)
    }
}

/// Affine-element gradient `∇y` on every tet.
pub fn grad_at_qp(y: &DeformationField, mesh: &Mesh) -> Vec<Mat3> {
    (0..mesh.num_tets()).map(|t| tet_gradient(y, mesh, t)).collect()
}

#[inline]
fn tet_gradient(y: &DeformationField, mesh: &Mesh, t: usize) -> Mat3 {
    let tet = &mesh.tets[t];
    let g = &mesh.shape_grads[t];
    let mut f = Mat3::ZERO;
    for k in 0..4 {
        f += Mat3::outer(y.0[tet[k]], g[k]);
    }
    f
}

/// The energy functional for a fixed growth field and load.
pub struct ElasticProblem<'a> {
    pub mesh: &'a Mesh,
    pub density: &'a EnergyDensity,
    pub growth: &'a GrowthField,
    pub load: &'a Load,
}

impl<'a> ElasticProblem<'a> {
    pub fn new(mesh: &'a Mesh, density: &'a EnergyDensity, growth: &'a GrowthField, load: &'a Load) -> Self {
        ElasticProblem {
            mesh,
            density,
            growth,
            load,
        }
    }

    fn tet_elastic(&self, y: &DeformationField, t: usize) -> ExtReal {
        let gp = &self.growth.0[t];
        let fe = tet_gradient(y, self.mesh, t) * gp.ginv;
        match self.density.w(&fe) {
            ExtReal::Finite(w) => ExtReal::Finite(self.mesh.volumes[t] * w * gp.det),
            inf => inf,
        }
    }

    /// `⟨ℓ, y⟩` by one-point quadrature on tets and Neumann facets.
    pub fn load_work(&self, y: &DeformationField) -> f64 {
        let mesh = self.mesh;
        let mut work = 0.0;
        for (t, tet) in mesh.tets.iter().enumerate() {
            let f = self.load.body[t];
            if f == [0.0; 3] {
                continue;
            }
            let mut yc = [0.0; 3];
            for &v in tet {
                yc = vadd(yc, y.0[v]);
            }
            work += mesh.volumes[t] * vdot(f, vscale(yc, 0.25));
        }
        for (k, facet) in mesh.boundary_facets.iter().enumerate() {
            let g = self.load.traction[k];
            if facet.tag != BoundaryTag::Neumann || g == [0.0; 3] {
                continue;
            }
            let mut yc = [0.0; 3];
            for &v in &facet.nodes {
                yc = vadd(yc, y.0[v]);
            }
            work += facet.area * vdot(g, vscale(yc, 1.0 / 3.0));
        }
        work
    }

    /// Stored elastic energy `Σ |T| W(∇y G⁻¹) det G` alone.
    pub fn elastic_energy(&self, y: &DeformationField) -> ExtReal {
        let parts: Vec<ExtReal> = (0..self.mesh.num_tets())
            .into_par_iter()
            .map(|t| self.tet_elastic(y, t))
            .collect();
        let mut sum = 0.0;
        for p in parts {
            match p {
                ExtReal::Finite(v) => sum += v,
                ExtReal::PosInfinity => return ExtReal::PosInfinity,
            }
        }
        ExtReal::Finite(sum)
    }

    /// Total energy; `+∞` when some tet has a non-positive elastic Jacobian.
    pub fn total_energy(&self, y: &DeformationField) -> ExtReal {
        match self.elastic_energy(y) {
            ExtReal::Finite(e) => ExtReal::Finite(e - self.load_work(y)),
            inf => inf,
        }
    }

    /// Energy and nodal gradient; rows of Γ_D nodes are zero.
    pub fn energy_and_gradient(&self, y: &DeformationField) -> Result<(f64, Vec<Vec3>)> {
        let mesh = self.mesh;
        let parts: Vec<Result<(f64, [Vec3; 4])>> = (0..mesh.num_tets())
            .into_par_iter()
            .map(|t| {
                let gp = &self.growth.0[t];
                let f = tet_gradient(y, mesh, t);
                let fe = f * gp.ginv;
                let w = self.density.w(&fe).finite().ok_or_else(|| {
                    Error::Degenerate(format!("tet {t}: elastic strain has det {}", fe.det()))
                })?;
                let vol = mesh.volumes[t];
                let p = self.density.piola_with_growth(&f, gp)?;
                let sg = &mesh.shape_grads[t];
                let forces = [0, 1, 2, 3].map(|k| vscale(p.mul_vec(sg[k]), vol));
                Ok((vol * w * gp.det, forces))
            })
            .collect();

        let mut grad = vec![[0.0; 3]; mesh.num_nodes()];
        let mut energy = 0.0;
        for (t, part) in parts.into_iter().enumerate() {
            let (e, forces) = part?;
            energy += e;
            for (k, &v) in mesh.tets[t].iter().enumerate() {
                grad[v] = vadd(grad[v], forces[k]);
            }
        }
        for (t, tet) in mesh.tets.iter().enumerate() {
            let f = self.load.body[t];
            if f == [0.0; 3] {
                continue;
            }
            let share = vscale(f, -0.25 * mesh.volumes[t]);
            for &v in tet {
                grad[v] = vadd(grad[v], share);
            }
        }
        for (k, facet) in mesh.boundary_facets.iter().enumerate() {
            let g = self.load.traction[k];
            if facet.tag != BoundaryTag::Neumann || g == [0.0; 3] {
                continue;
            }
            let share = vscale(g, -facet.area / 3.0);
            for &v in &facet.nodes {
                grad[v] = vadd(grad[v], share);
            }
        }
        for (v, row) in grad.iter_mut().enumerate() {
            if mesh.dirichlet_node[v] {
                *row = [0.0; 3];
            }
        }
        Ok((energy - self.load_work(y), grad))
    }

    pub fn energy_gradient(&self, y: &DeformationField) -> Result<Vec<Vec3>> {
        self.energy_and_gradient(y).map(|(_, g)| g)
    }
}

/// Smallest `det(∇y G⁻¹)` over all tets.
pub fn min_elastic_det(y: &DeformationField, growth: &GrowthField, mesh: &Mesh) -> f64 {
    (0..mesh.num_tets())
        .map(|t| (tet_gradient(y, mesh, t) * growth.0[t].ginv).det())
        .fold(f64::INFINITY, f64::min)
}
