//! P1 tetrahedral meshes of the reference configuration.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{vadd, vcross, vdot, vnorm, vscale, vsub, Mat3, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    /// Clamped part Γ_D, where `y = id`.
    Dirichlet,
    /// Loaded part Γ_N, carrying surface traction.
    Neumann,
    /// Traction-free boundary.
    Free,
}

#[derive(Clone, Debug)]
pub struct Facet {
    pub nodes: [usize; 3],
    pub tag: BoundaryTag,
    pub area: f64,
    pub centroid: Vec3,
    pub outward_normal: Vec3,
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub tets: Vec<[usize; 4]>,
    pub boundary_facets: Vec<Facet>,
    /// Signed (positive) volume per tet.
    pub volumes: Vec<f64>,
    /// One-point quadrature: the tet centroid.
    pub quad_points: Vec<Vec3>,
    /// Gradients of the four barycentric shape functions per tet.
    pub shape_grads: Vec<[Vec3; 4]>,
    /// Nodes lying on a Dirichlet facet.
    pub dirichlet_node: Vec<bool>,
    /// Nodes lying on any boundary facet.
    pub boundary_node: Vec<bool>,
}

fn signed_volume(x: &[Vec3; 4]) -> f64 {
    let d1 = vsub(x[1], x[0]);
    let d2 = vsub(x[2], x[0]);
    let d3 = vsub(x[3], x[0]);
    vdot(d1, vcross(d2, d3)) / 6.0
}

impl Mesh {
    /// Builds a mesh from raw vertices and tets; boundary facets are found
    /// topologically and tagged by `tag_of` from their corner coordinates.
    /// Negatively oriented tets are reoriented.
    pub fn from_parts<F>(vertices: Vec<Vec3>, mut tets: Vec<[usize; 4]>, tag_of: F) -> Result<Mesh>
    where
        F: Fn(&[Vec3; 3]) -> BoundaryTag,
    {
        let mut volumes = Vec::with_capacity(tets.len());
        let mut quad_points = Vec::with_capacity(tets.len());
        let mut shape_grads = Vec::with_capacity(tets.len());
        for (t, tet) in tets.iter_mut().enumerate() {
            let mut x = tet.map(|v| vertices[v]);
            let mut vol = signed_volume(&x);
            if vol < 0.0 {
                tet.swap(2, 3);
                x.swap(2, 3);
                vol = -vol;
            }
            if vol <= 0.0 {
                return Err(Error::Degenerate(format!("tet {t} has zero volume")));
            }
            let dm = Mat3::from_cols(vsub(x[1], x[0]), vsub(x[2], x[0]), vsub(x[3], x[0]));
            let dm_inv = dm.inverse().expect("positive volume");
            let r = |i: usize| [dm_inv.0[i][0], dm_inv.0[i][1], dm_inv.0[i][2]];
            let (g1, g2, g3) = (r(0), r(1), r(2));
            let g0 = vscale(vadd(vadd(g1, g2), g3), -1.0);
            shape_grads.push([g0, g1, g2, g3]);
            volumes.push(vol);
            quad_points.push(vscale(vadd(vadd(x[0], x[1]), vadd(x[2], x[3])), 0.25));
        }

        // Faces seen once are on the boundary; remember the opposite vertex
        // to orient the normal outward.
        let mut faces: HashMap<[usize; 3], (usize, [usize; 3], usize)> = HashMap::new();
        for tet in &tets {
            for skip in 0..4 {
                let face: Vec<usize> = (0..4).filter(|&k| k != skip).map(|k| tet[k]).collect();
                let face = [face[0], face[1], face[2]];
                let mut key = face;
                key.sort_unstable();
                faces
                    .entry(key)
                    .and_modify(|e| e.0 += 1)
                    .or_insert((1, face, tet[skip]));
            }
        }
        let mut keys: Vec<_> = faces.iter().filter(|(_, v)| v.0 == 1).map(|(k, _)| *k).collect();
        keys.sort_unstable();

        let mut boundary_facets = Vec::with_capacity(keys.len());
        let mut dirichlet_node = vec![false; vertices.len()];
        let mut boundary_node = vec![false; vertices.len()];
        for key in keys {
            let (_, face, opposite) = faces[&key];
            let x = face.map(|v| vertices[v]);
            let c = vcross(vsub(x[1], x[0]), vsub(x[2], x[0]));
            let area = 0.5 * vnorm(c);
            let mut n = vscale(c, 1.0 / vnorm(c));
            if vdot(n, vsub(vertices[opposite], x[0])) > 0.0 {
                n = vscale(n, -1.0);
            }
            let centroid = vscale(vadd(vadd(x[0], x[1]), x[2]), 1.0 / 3.0);
            let tag = tag_of(&x);
            for &v in &face {
                boundary_node[v] = true;
                if tag == BoundaryTag::Dirichlet {
                    dirichlet_node[v] = true;
                }
            }
            boundary_facets.push(Facet {
                nodes: face,
                tag,
                area,
                centroid,
                outward_normal: n,
            });
        }
        if !dirichlet_node.iter().any(|&d| d) {
            return Err(Error::Degenerate("mesh has an empty Dirichlet boundary".into()));
        }
        Ok(Mesh {
            vertices,
            tets,
            boundary_facets,
            volumes,
            quad_points,
            shape_grads,
            dirichlet_node,
            boundary_node,
        })
    }

    /// Unit cube `[0,1]³` on an `n×n×n` grid, each cell split into six
    /// Kuhn tetrahedra along its main diagonal. Γ_D is the face `x₁ = 0`,
    /// Γ_N the face `x₁ = 1`.
    pub fn unit_cube(n: usize) -> Result<Mesh> {
        Self::unit_cube_with(n, default_cube_tag)
    }

    pub fn unit_cube_with<F>(n: usize, tag_of: F) -> Result<Mesh>
    where
        F: Fn(&[Vec3; 3]) -> BoundaryTag,
    {
        if n == 0 {
            return Err(Error::Degenerate("cube resolution must be positive".into()));
        }
        let h = 1.0 / n as f64;
        let idx = |i: usize, j: usize, k: usize| (k * (n + 1) + j) * (n + 1) + i;
        let mut vertices = Vec::with_capacity((n + 1).pow(3));
        for k in 0..=n {
            for j in 0..=n {
                for i in 0..=n {
                    vertices.push([i as f64 * h, j as f64 * h, k as f64 * h]);
                }
            }
        }
        const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut tets = Vec::with_capacity(6 * n * n * n);
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    for perm in PERMS {
                        let mut c = [i, j, k];
                        let mut tet = [idx(c[0], c[1], c[2]); 4];
                        for (s, &axis) in perm.iter().enumerate() {
                            c[axis] += 1;
                            tet[s + 1] = idx(c[0], c[1], c[2]);
                        }
                        tets.push(tet);
                    }
                }
            }
        }
        Self::from_parts(vertices, tets, tag_of)
    }

    /// Reference tetrahedron with the face `x₁ = 0` clamped and the slanted
    /// face loaded.
    pub fn single_tet() -> Result<Mesh> {
        let vertices = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        Self::from_parts(vertices, vec![[0, 1, 2, 3]], |x| {
            if x.iter().all(|p| p[0].abs() < 1e-12) {
                BoundaryTag::Dirichlet
            } else if x.iter().all(|p| (p[0] + p[1] + p[2] - 1.0).abs() < 1e-12) {
                BoundaryTag::Neumann
            } else {
                BoundaryTag::Free
            }
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn total_volume(&self) -> f64 {
        self.volumes.iter().sum()
    }

    /// Indices of nodes not on Γ_D, in increasing order.
    pub fn free_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes()).filter(|&v| !self.dirichlet_node[v]).collect()
    }
}

/// Γ_D on `x₁ = 0`, Γ_N on `x₁ = 1`, remaining faces traction free.
pub fn default_cube_tag(x: &[Vec3; 3]) -> BoundaryTag {
    const EPS: f64 = 1e-12;
    if x.iter().all(|p| p[0].abs() < EPS) {
        BoundaryTag::Dirichlet
    } else if x.iter().all(|p| (p[0] - 1.0).abs() < EPS) {
        BoundaryTag::Neumann
    } else {
        BoundaryTag::Free
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kuhn_cube_counts_and_volume() {
        for n in 1..=4 {
            let m = Mesh::unit_cube(n).unwrap();
            assert_eq!(m.num_tets(), 6 * n * n * n);
            assert_eq!(m.num_nodes(), (n + 1).pow(3));
            assert_eq!(m.boundary_facets.len(), 12 * n * n);
            assert!((m.total_volume() - 1.0).abs() < 1e-14);
            assert!(m.volumes.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn boundary_tags() {
        let m = Mesh::unit_cube(3).unwrap();
        let count = |t| m.boundary_facets.iter().filter(|f| f.tag == t).count();
        assert_eq!(count(BoundaryTag::Dirichlet), 18);
        assert_eq!(count(BoundaryTag::Neumann), 18);
        assert_eq!(count(BoundaryTag::Free), 72);
        for (v, x) in m.vertices.iter().enumerate() {
            assert_eq!(m.dirichlet_node[v], x[0] == 0.0);
        }
        let area: f64 = m
            .boundary_facets
            .iter()
            .filter(|f| f.tag == BoundaryTag::Neumann)
            .map(|f| f.area)
            .sum();
        assert!((area - 1.0).abs() < 1e-14);
    }

    #[test]
    fn normals_point_outward() {
        let m = Mesh::unit_cube(2).unwrap();
        for f in &m.boundary_facets {
            let c = vsub(f.centroid, [0.5, 0.5, 0.5]);
            assert!(vdot(c, f.outward_normal) > 0.0);
        }
    }

    #[test]
    fn shape_gradients_sum_to_zero_and_reproduce_linears() {
        let m = Mesh::unit_cube(2).unwrap();
        for (t, tet) in m.tets.iter().enumerate() {
            let g = &m.shape_grads[t];
            // Σ_k x_k ⊗ ∇λ_k = Id
            let mut id = Mat3::ZERO;
            for k in 0..4 {
                id += Mat3::outer(m.vertices[tet[k]], g[k]);
            }
            assert!((id - Mat3::IDENTITY).max_abs() < 1e-13);
        }
    }

    #[test]
    fn single_tet_has_clamped_face() {
        let m = Mesh::single_tet().unwrap();
        assert_eq!(m.boundary_facets.len(), 4);
        assert_eq!(m.free_nodes(), vec![1]);
        assert!((m.total_volume() - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_missing_dirichlet() {
        assert!(Mesh::unit_cube_with(2, |_| BoundaryTag::Free).is_err());
    }
}
