//! P1 Lagrange elements on triangles: global assembly of mass, weighted
//! stiffness and load vectors, nodal interpolation and evaluation.

use std::sync::Arc;

use thiserror::Error;

use crate::field::{ScalarField, SigmaModel};
use crate::linalg::SparseMatrix;
use crate::mesh::Mesh;
use crate::quadrature::EDGE_MIDPOINT;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error("finite element function lives on a different mesh than the one being assembled")]
    MeshMismatch,
    #[error("coefficient vector has length {found}, mesh has {expected} nodes")]
    LengthMismatch { expected: usize, found: usize },
    #[error("non-finite value {value} at node {node}")]
    NonFinite { node: usize, value: f64 },
    #[error("point ({x}, {y}) lies outside the mesh")]
    OutsideMesh { x: f64, y: f64 },
}

/// Piecewise-linear function given by its nodal values on a mesh.
#[derive(Debug, Clone)]
pub struct FeFunction {
    mesh: Arc<Mesh>,
    coeffs: Vec<f64>,
}

impl FeFunction {
    pub fn new(mesh: Arc<Mesh>, coeffs: Vec<f64>) -> Result<Self, FemError> {
        if coeffs.len() != mesh.num_nodes() {
            return Err(FemError::LengthMismatch {
                expected: mesh.num_nodes(),
                found: coeffs.len(),
            });
        }
        Ok(Self { mesh, coeffs })
    }

    pub fn zeros(mesh: Arc<Mesh>) -> Self {
        let n = mesh.num_nodes();
        Self {
            mesh,
            coeffs: vec![0.0; n],
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn is_on(&self, mesh: &Mesh) -> bool {
        same_mesh(&self.mesh, mesh)
    }

    /// Value at the centroid of an element (mean of its vertex values).
    pub fn centroid_value(&self, element: usize) -> f64 {
        let [a, b, c] = self.mesh.triangles()[element];
        (self.coeffs[a] + self.coeffs[b] + self.coeffs[c]) / 3.0
    }

    /// Value at barycentric coordinates `l` inside an element.
    pub fn value_in(&self, element: usize, l: [f64; 3]) -> f64 {
        let [a, b, c] = self.mesh.triangles()[element];
        l[0] * self.coeffs[a] + l[1] * self.coeffs[b] + l[2] * self.coeffs[c]
    }

    /// Constant gradient on an element.
    pub fn element_gradient(&self, element: usize) -> [f64; 2] {
        let g = basis_gradients(&self.mesh.vertices(element));
        let [a, b, c] = self.mesh.triangles()[element];
        let u = [self.coeffs[a], self.coeffs[b], self.coeffs[c]];
        [
            g[0][0] * u[0] + g[1][0] * u[1] + g[2][0] * u[2],
            g[0][1] * u[0] + g[1][1] * u[1] + g[2][1] * u[2],
        ]
    }

    /// Point evaluation by a linear scan for the containing element.
    pub fn evaluate(&self, point: [f64; 2]) -> Result<f64, FemError> {
        let (e, l) = locate(&self.mesh, point).ok_or(FemError::OutsideMesh {
            x: point[0],
            y: point[1],
        })?;
        Ok(self.value_in(e, l))
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub(crate) fn same_mesh(a: &Arc<Mesh>, b: &Mesh) -> bool {
    std::ptr::eq(Arc::as_ptr(a), b) || **a == *b
}

/// Element containing `point` and its barycentric coordinates, accepting
/// points up to `1e-12` outside an element.
pub fn locate(mesh: &Mesh, point: [f64; 2]) -> Option<(usize, [f64; 3])> {
    (0..mesh.num_triangles()).find_map(|e| {
        let l = barycentric(&mesh.vertices(e), point);
        l.iter().all(|&li| li >= -1e-12).then_some((e, l))
    })
}

pub fn barycentric(v: &[[f64; 2]; 3], p: [f64; 2]) -> [f64; 3] {
    let det = (v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]);
    let l1 =
        ((p[0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (p[1] - v[0][1])) / det;
    let l2 =
        ((v[1][0] - v[0][0]) * (p[1] - v[0][1]) - (p[0] - v[0][0]) * (v[1][1] - v[0][1])) / det;
    [1.0 - l1 - l2, l1, l2]
}

/// Gradients of the three barycentric basis functions.
pub fn basis_gradients(v: &[[f64; 2]; 3]) -> [[f64; 2]; 3] {
    let det = (v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]);
    [
        [(v[1][1] - v[2][1]) / det, (v[2][0] - v[1][0]) / det],
        [(v[2][1] - v[0][1]) / det, (v[0][0] - v[2][0]) / det],
        [(v[0][1] - v[1][1]) / det, (v[1][0] - v[0][0]) / det],
    ]
}

fn area(v: &[[f64; 2]; 3]) -> f64 {
    0.5 * ((v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]))
}

/// Consistent mass matrix of one element.
pub fn local_mass(v: &[[f64; 2]; 3]) -> [[f64; 3]; 3] {
    let a = area(v) / 12.0;
    let mut m = [[a; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 2.0 * a;
    }
    m
}

/// Unit-coefficient stiffness matrix of one element.
pub fn local_stiffness(v: &[[f64; 2]; 3]) -> [[f64; 3]; 3] {
    let g = basis_gradients(v);
    let a = area(v);
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = a * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
        }
    }
    k
}

/// Sparsity pattern of P1 operators on a mesh together with the value slot
/// of every local (i, j) pair, so repeated assemblies only touch values.
#[derive(Debug, Clone)]
pub struct Assembler {
    mesh: Arc<Mesh>,
    pattern: SparseMatrix,
    slots: Vec<[usize; 9]>,
}

impl Assembler {
    pub fn new(mesh: Arc<Mesh>) -> Self {
        let n = mesh.num_nodes();
        let triplets: Vec<_> = mesh
            .triangles()
            .iter()
            .flat_map(|t| {
                t.iter()
                    .flat_map(move |&i| t.iter().map(move |&j| (i, j, 0.0)))
            })
            .collect();
        let pattern = SparseMatrix::from_triplets(n, n, &triplets);
        let slots = mesh
            .triangles()
            .iter()
            .map(|t| {
                let mut s = [0; 9];
                for a in 0..3 {
                    for b in 0..3 {
                        s[3 * a + b] = pattern.slot(t[a], t[b]).expect("pattern covers element");
                    }
                }
                s
            })
            .collect();
        Self {
            mesh,
            pattern,
            slots,
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    fn assemble_with(&self, local: impl Fn(usize) -> [[f64; 3]; 3]) -> SparseMatrix {
        let mut m = self.pattern.clone();
        let values = m.values_mut();
        for (e, s) in self.slots.iter().enumerate() {
            let k = local(e);
            for a in 0..3 {
                for b in 0..3 {
                    values[s[3 * a + b]] += k[a][b];
                }
            }
        }
        m
    }

    pub fn mass(&self) -> SparseMatrix {
        self.assemble_with(|e| local_mass(&self.mesh.vertices(e)))
    }

    /// Stiffness matrix with a per-element constant coefficient.
    pub fn stiffness_weighted(&self, coefficient: &[f64]) -> SparseMatrix {
        assert_eq!(coefficient.len(), self.mesh.num_triangles());
        self.assemble_with(|e| {
            let mut k = local_stiffness(&self.mesh.vertices(e));
            k.iter_mut().flatten().for_each(|v| *v *= coefficient[e]);
            k
        })
    }

    pub fn stiffness(&self) -> SparseMatrix {
        self.assemble_with(|e| local_stiffness(&self.mesh.vertices(e)))
    }

    /// `sigma(w)` sampled at each element centroid.
    pub fn sigma_at_centroids(
        &self,
        w: &FeFunction,
        sigma: &SigmaModel,
    ) -> Result<Vec<f64>, FemError> {
        if !w.is_on(&self.mesh) {
            return Err(FemError::MeshMismatch);
        }
        Ok((0..self.mesh.num_triangles())
            .map(|e| sigma.eval(w.centroid_value(e)))
            .collect())
    }
}

pub fn assemble_mass(mesh: &Arc<Mesh>) -> SparseMatrix {
    Assembler::new(Arc::clone(mesh)).mass()
}

/// Stiffness matrix, optionally weighted by `sigma(w)` evaluated at element
/// centroids.
pub fn assemble_stiffness(
    mesh: &Arc<Mesh>,
    weight: Option<(&FeFunction, &SigmaModel)>,
) -> Result<SparseMatrix, FemError> {
    let asm = Assembler::new(Arc::clone(mesh));
    match weight {
        None => Ok(asm.stiffness()),
        Some((w, sigma)) => Ok(asm.stiffness_weighted(&asm.sigma_at_centroids(w, sigma)?)),
    }
}

/// `b_i = ∫ f(., t) phi_i`, by the edge-midpoint rule on each element.
pub fn assemble_load(mesh: &Mesh, f: &ScalarField, t: f64) -> Vec<f64> {
    let mut b = vec![0.0; mesh.num_nodes()];
    for (e, tri) in mesh.triangles().iter().enumerate() {
        let v = mesh.vertices(e);
        let a = area(&v);
        for (p, l, w) in EDGE_MIDPOINT.map(&v) {
            let fw = a * w * f.eval(p[0], p[1], t);
            for k in 0..3 {
                b[tri[k]] += fw * l[k];
            }
        }
    }
    b
}

/// Joule heating load `(sigma(U) |grad Phi|^2, phi_i)` with `sigma(U)` at
/// the element centroid and the exact constant gradient of `Phi`.
pub fn assemble_joule_load(
    mesh: &Mesh,
    u: &FeFunction,
    phi: &FeFunction,
    sigma: &SigmaModel,
) -> Result<Vec<f64>, FemError> {
    if !u.is_on(mesh) || !phi.is_on(mesh) {
        return Err(FemError::MeshMismatch);
    }
    let mut b = vec![0.0; mesh.num_nodes()];
    for (e, tri) in mesh.triangles().iter().enumerate() {
        let g = phi.element_gradient(e);
        let c = sigma.eval(u.centroid_value(e)) * (g[0] * g[0] + g[1] * g[1]);
        let share = c * mesh.signed_area(e) / 3.0;
        for &i in tri {
            b[i] += share;
        }
    }
    Ok(b)
}

/// Lagrange interpolant: nodal values of `f(., t)`.
pub fn interpolate(mesh: &Arc<Mesh>, f: &ScalarField, t: f64) -> Result<FeFunction, FemError> {
    let coeffs = mesh
        .nodes()
        .iter()
        .enumerate()
        .map(|(node, p)| {
            let value = f.eval(p[0], p[1], t);
            if value.is_finite() {
                Ok(value)
            } else {
                Err(FemError::NonFinite { node, value })
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FeFunction {
        mesh: Arc::clone(mesh),
        coeffs,
    })
}

/// Re-expresses a function on a nested descendant mesh. Exact, since
/// refinement preserves parent node indices and every child node lies in a
/// parent element.
pub fn prolongate(f: &FeFunction, fine: &Arc<Mesh>) -> Option<FeFunction> {
    let map = fine.ancestor_elements(f.mesh())?;
    let mut coeffs = vec![f64::NAN; fine.num_nodes()];
    for (child, tri) in fine.triangles().iter().enumerate() {
        let parent = map[child];
        let v = f.mesh().vertices(parent);
        for &i in tri {
            if coeffs[i].is_nan() {
                coeffs[i] = f.value_in(parent, barycentric(&v, fine.nodes()[i]));
            }
        }
    }
    Some(FeFunction {
        mesh: Arc::clone(fine),
        coeffs,
    })
}

/// Restriction of a fine function to the nodes of an ancestor mesh (which
/// keep their indices under refinement).
pub fn restrict_nodal(f: &FeFunction, coarse: &Arc<Mesh>) -> Option<FeFunction> {
    f.mesh().ancestor_elements(coarse)?;
    Some(FeFunction {
        mesh: Arc::clone(coarse),
        coeffs: f.coeffs[..coarse.num_nodes()].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{refine_uniform, unit_square_mesh};

    const REF: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

    fn square(n: usize) -> Arc<Mesh> {
        Arc::new(unit_square_mesh(n).unwrap())
    }

    #[test]
    fn local_mass_reference() {
        let m = local_mass(&REF);
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 2.0 / 24.0 } else { 1.0 / 24.0 };
                assert!((m[i][j] - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn local_stiffness_reference() {
        let k = local_stiffness(&REF);
        let expected = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((k[i][j] - expected[i][j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn mass_partition_of_unity() {
        for n in [1, 3, 8] {
            let m = assemble_mass(&square(n));
            assert!((m.values().iter().sum::<f64>() - 1.0).abs() < 1e-13);
            let row_sums = m.spmv(&vec![1.0; m.nrows()]).unwrap();
            assert!(row_sums.iter().all(|&s| s > 0.0));
            assert!((row_sums.iter().sum::<f64>() - 1.0).abs() < 1e-13);
            assert!(m.is_symmetric(1e-13));
        }
    }

    #[test]
    fn stiffness_kernel_and_linearity() {
        let mesh = square(5);
        let a = assemble_stiffness(&mesh, None).unwrap();
        let ones = a.spmv(&vec![1.0; mesh.num_nodes()]).unwrap();
        assert!(ones.iter().all(|v| v.abs() < 1e-13));
        assert!(a.is_symmetric(1e-13));

        let w = FeFunction::zeros(Arc::clone(&mesh));
        let two = SigmaModel::constant(2.0).unwrap();
        let a2 = assemble_stiffness(&mesh, Some((&w, &two))).unwrap();
        for (x, y) in a.values().iter().zip(a2.values()) {
            assert!((2.0 * x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn stiffness_offdiagonals_nonpositive() {
        let mesh = square(6);
        let w = interpolate(&mesh, &ScalarField::new(|x, y, _| 10.0 * x * y), 0.0).unwrap();
        let sigma = SigmaModel::new(|s| 2.0 + s.sin(), 1.0, 3.0, 1.0).unwrap();
        let a = assemble_stiffness(&mesh, Some((&w, &sigma))).unwrap();
        for i in 0..a.nrows() {
            for (j, v) in a.row(i) {
                if i != j {
                    assert!(v <= 1e-15, "A({i},{j}) = {v}");
                }
            }
        }
    }

    #[test]
    fn stiffness_mesh_mismatch() {
        let w = FeFunction::zeros(square(2));
        let sigma = SigmaModel::constant(1.0).unwrap();
        assert_eq!(
            assemble_stiffness(&square(3), Some((&w, &sigma))).unwrap_err(),
            FemError::MeshMismatch
        );
    }

    #[test]
    fn load_constant_on_two_triangles() {
        let b = assemble_load(&square(1), &ScalarField::constant(1.0), 0.0);
        // Nodes (0,0), (1,0), (0,1), (1,1) in grid order 0, 1, 2, 3.
        let expected = [1.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 3.0];
        for (x, y) in b.iter().zip(expected) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(assemble_load(&square(3), &ScalarField::zero(), 0.0)
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn load_exact_for_quadratics() {
        let f = ScalarField::new(|x, y, t| 3.0 * x * x - x * y + 2.0 * y + t);
        // ∫ over the unit square: 1 - 1/4 + 1 + t.
        let b = assemble_load(&square(4), &f, 0.5);
        assert!((b.iter().sum::<f64>() - 2.25).abs() < 1e-14);
    }

    #[test]
    fn joule_load_examples() {
        let mesh = square(4);
        let sigma = SigmaModel::constant(1.0).unwrap();
        let u = FeFunction::zeros(Arc::clone(&mesh));
        let c = interpolate(&mesh, &ScalarField::constant(3.0), 0.0).unwrap();
        assert!(assemble_joule_load(&mesh, &u, &c, &sigma)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));

        let ones = assemble_load(&mesh, &ScalarField::constant(1.0), 0.0);
        let x = interpolate(&mesh, &ScalarField::new(|x, _, _| x), 0.0).unwrap();
        let bx = assemble_joule_load(&mesh, &u, &x, &sigma).unwrap();
        let xy = interpolate(&mesh, &ScalarField::new(|x, y, _| x + 2.0 * y), 0.0).unwrap();
        let bxy = assemble_joule_load(&mesh, &u, &xy, &sigma).unwrap();
        for i in 0..mesh.num_nodes() {
            assert!((bx[i] - ones[i]).abs() < 1e-14);
            assert!((bxy[i] - 5.0 * ones[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn interpolation_reproduces_linears() {
        let mesh = square(3);
        let c = interpolate(&mesh, &ScalarField::constant(2.5), 0.0).unwrap();
        assert!(c.coeffs().iter().all(|&v| v == 2.5));
        let x = interpolate(&mesh, &ScalarField::new(|x, _, _| x), 0.0).unwrap();
        for (v, p) in x.coeffs().iter().zip(mesh.nodes()) {
            assert_eq!(*v, p[0]);
        }
        for p in [[0.123, 0.77], [0.5, 0.5], [0.999, 0.001], [1.0, 1.0]] {
            assert!((x.evaluate(p).unwrap() - p[0]).abs() < 1e-14);
        }
        let g = interpolate(&mesh, &ScalarField::new(|x, y, _| 3.0 * x - y), 0.0).unwrap();
        for e in 0..mesh.num_triangles() {
            let d = g.element_gradient(e);
            assert!((d[0] - 3.0).abs() < 1e-12 && (d[1] + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_rejects_non_finite() {
        let err = interpolate(&square(2), &ScalarField::new(|x, _, _| 1.0 / x), 0.0).unwrap_err();
        assert!(matches!(err, FemError::NonFinite { node: 0, .. }));
    }

    #[test]
    fn evaluate_at_nodes_and_outside() {
        let mesh = square(4);
        let f = interpolate(
            &mesh,
            &ScalarField::new(|x, y, _| (3.0 * x).sin() + y * y),
            0.0,
        )
        .unwrap();
        for (i, p) in mesh.nodes().iter().enumerate() {
            assert!((f.evaluate(*p).unwrap() - f.coeffs()[i]).abs() < 1e-15);
        }
        assert!(matches!(
            f.evaluate([1.5, 0.5]),
            Err(FemError::OutsideMesh { .. })
        ));
    }

    #[test]
    fn interpolation_of_product_at_cell_centres() {
        for n in [4, 8, 16] {
            let mesh = square(n);
            let f = interpolate(&mesh, &ScalarField::new(|x, y, _| x * y), 0.0).unwrap();
            let h = mesh.h();
            for j in 0..n {
                for i in 0..n {
                    let p = [(i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64];
                    assert!((f.evaluate(p).unwrap() - p[0] * p[1]).abs() <= h * h);
                }
            }
        }
    }

    #[test]
    fn prolongation_is_exact() {
        let coarse = square(3);
        let mid = Arc::new(refine_uniform(&coarse));
        let fine = Arc::new(refine_uniform(&mid));
        let f = interpolate(
            &coarse,
            &ScalarField::new(|x, y, _| (x * 7.0).cos() * y),
            0.0,
        )
        .unwrap();
        let lifted = prolongate(&f, &fine).unwrap();
        for (e, _) in fine.triangles().iter().enumerate() {
            let p = fine.centroid(e);
            assert!((lifted.evaluate(p).unwrap() - f.evaluate(p).unwrap()).abs() < 1e-14);
        }
        let back = restrict_nodal(&lifted, &coarse).unwrap();
        assert_eq!(back.coeffs(), f.coeffs());
        assert!(prolongate(&f, &square(6)).is_none());
    }
}
