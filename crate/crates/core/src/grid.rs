//! Structured box grid with tagged boundary faces, node-indexed fields,
//! second-order finite-difference gradient/divergence, trapezoidal
//! volume/surface quadrature, and plain-text field I/O.
//!
//! Node ordering is x fastest, then y, then z: `idx = i + nx·(j + ny·k)`.
//! Each of the six box faces carries exactly one boundary tag; nodes shared
//! between differently tagged faces count as displacement-pinned ("Dirichlet
//! wins"), which keeps admissible displacement fields exactly zero there.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boundary condition attached to a whole face of the box: `Gamma0` pins the
/// displacement to zero, `Gamma1` carries a surface traction load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryTag {
    Gamma0,
    Gamma1,
}

/// One of the six axis-aligned faces of the box, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Face {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
}

impl Face {
    pub const ALL: [Face; 6] = [
        Face::XMin,
        Face::XMax,
        Face::YMin,
        Face::YMax,
        Face::ZMin,
        Face::ZMax,
    ];

    /// Axis normal to the face (0 = x, 1 = y, 2 = z).
    pub fn axis(self) -> usize {
        match self {
            Face::XMin | Face::XMax => 0,
            Face::YMin | Face::YMax => 1,
            Face::ZMin | Face::ZMax => 2,
        }
    }

    /// Whether the face sits at the maximal coordinate of its axis.
    pub fn is_max_side(self) -> bool {
        matches!(self, Face::XMax | Face::YMax | Face::ZMax)
    }

    /// Outward unit normal.
    pub fn normal(self) -> Vector3<f64> {
        let mut n = Vector3::zeros();
        n[self.axis()] = if self.is_max_side() { 1.0 } else { -1.0 };
        n
    }

    /// The two in-face axes in increasing axis order.
    pub fn tangent_axes(self) -> (usize, usize) {
        match self.axis() {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        }
    }

    /// Stable lower-case name used in config files and reports.
    pub fn name(self) -> &'static str {
        match self {
            Face::XMin => "x_min",
            Face::XMax => "x_max",
            Face::YMin => "y_min",
            Face::YMax => "y_max",
            Face::ZMin => "z_min",
            Face::ZMax => "z_max",
        }
    }

    pub fn from_name(name: &str) -> Option<Face> {
        Face::ALL.iter().copied().find(|f| f.name() == name)
    }

    pub fn index(self) -> usize {
        Face::ALL.iter().position(|&f| f == self).unwrap()
    }
}

/// Node of a boundary face together with its face-local indices and
/// quadrature weight. Local index `a` runs over the lower tangent axis,
/// `b` over the higher one; enumeration order is `a` slow, `b` fast.
#[derive(Debug, Clone, Copy)]
pub struct FaceNode {
    pub a: usize,
    pub b: usize,
    /// Global node index.
    pub node: usize,
    /// Trapezoidal surface weight.
    pub weight: f64,
}

/// Uniform structured grid over the closed box `[0,Lx]×[0,Ly]×[0,Lz]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Grid {
    extents: [f64; 3],
    dims: [usize; 3],
    spacing: [f64; 3],
    tags: [BoundaryTag; 6],
    dirichlet_mask: Vec<bool>,
}

impl Grid {
    /// Builds a grid from box extents, node counts (≥ 3 per axis) and one
    /// boundary tag per face (at least one face must be `Gamma0`).
    pub fn new(extents: [f64; 3], dims: [usize; 3], tags: [BoundaryTag; 6]) -> Result<Self> {
        for (axis, &l) in extents.iter().enumerate() {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidParameter {
                    name: format!("extents[{axis}]"),
                    reason: format!("must be finite and > 0, got {l}"),
                });
            }
        }
        for (axis, &n) in dims.iter().enumerate() {
            if n < 3 {
                return Err(Error::InvalidParameter {
                    name: format!("dims[{axis}]"),
                    reason: format!("need at least 3 nodes per axis for the stencils, got {n}"),
                });
            }
        }
        if !tags.contains(&BoundaryTag::Gamma0) {
            return Err(Error::InvalidParameter {
                name: "face tags".into(),
                reason: "at least one face must pin the displacement (all six are traction faces)"
                    .into(),
            });
        }
        let spacing = [
            extents[0] / (dims[0] - 1) as f64,
            extents[1] / (dims[1] - 1) as f64,
            extents[2] / (dims[2] - 1) as f64,
        ];
        let mut grid = Self {
            extents,
            dims,
            spacing,
            tags,
            dirichlet_mask: Vec::new(),
        };
        let mut mask = vec![false; grid.node_count()];
        for face in Face::ALL {
            if grid.tag(face) == BoundaryTag::Gamma0 {
                for fnode in grid.face_nodes(face) {
                    mask[fnode.node] = true;
                }
            }
        }
        grid.dirichlet_mask = mask;
        Ok(grid)
    }

    pub fn extents(&self) -> [f64; 3] {
        self.extents
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn tag(&self, face: Face) -> BoundaryTag {
        self.tags[face.index()]
    }

    pub fn tags(&self) -> [BoundaryTag; 6] {
        self.tags
    }

    pub fn node_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Memory stride between neighbors along an axis.
    pub fn stride(&self, axis: usize) -> usize {
        match axis {
            0 => 1,
            1 => self.dims[0],
            _ => self.dims[0] * self.dims[1],
        }
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    pub fn position(&self, idx: usize) -> Vector3<f64> {
        let c = self.coords(idx);
        Vector3::new(
            c[0] as f64 * self.spacing[0],
            c[1] as f64 * self.spacing[1],
            c[2] as f64 * self.spacing[2],
        )
    }

    /// Trapezoidal weight along one axis: `h/2` at the two ends, `h` inside.
    pub fn axis_weight(&self, axis: usize, pos: usize) -> f64 {
        let h = self.spacing[axis];
        if pos == 0 || pos == self.dims[axis] - 1 {
            0.5 * h
        } else {
            h
        }
    }

    /// Tensor-product volume quadrature weight of a node.
    pub fn volume_weight(&self, idx: usize) -> f64 {
        let c = self.coords(idx);
        self.axis_weight(0, c[0]) * self.axis_weight(1, c[1]) * self.axis_weight(2, c[2])
    }

    /// Node counts of a face along its two tangent axes.
    pub fn face_dims(&self, face: Face) -> (usize, usize) {
        let (t1, t2) = face.tangent_axes();
        (self.dims[t1], self.dims[t2])
    }

    /// Global index of the face node with local coordinates (a, b).
    pub fn face_node_index(&self, face: Face, a: usize, b: usize) -> usize {
        let (t1, t2) = face.tangent_axes();
        let axis = face.axis();
        let mut c = [0usize; 3];
        c[axis] = if face.is_max_side() {
            self.dims[axis] - 1
        } else {
            0
        };
        c[t1] = a;
        c[t2] = b;
        self.index(c[0], c[1], c[2])
    }

    /// Trapezoidal surface weight of a face node.
    pub fn face_weight(&self, face: Face, a: usize, b: usize) -> f64 {
        let (t1, t2) = face.tangent_axes();
        self.axis_weight(t1, a) * self.axis_weight(t2, b)
    }

    /// All nodes of a face in local order (`a` slow, `b` fast).
    pub fn face_nodes(&self, face: Face) -> Vec<FaceNode> {
        let (n1, n2) = self.face_dims(face);
        let mut out = Vec::with_capacity(n1 * n2);
        for a in 0..n1 {
            for b in 0..n2 {
                out.push(FaceNode {
                    a,
                    b,
                    node: self.face_node_index(face, a, b),
                    weight: self.face_weight(face, a, b),
                });
            }
        }
        out
    }

    pub fn gamma0_faces(&self) -> Vec<Face> {
        Face::ALL
            .iter()
            .copied()
            .filter(|&f| self.tag(f) == BoundaryTag::Gamma0)
            .collect()
    }

    pub fn gamma1_faces(&self) -> Vec<Face> {
        Face::ALL
            .iter()
            .copied()
            .filter(|&f| self.tag(f) == BoundaryTag::Gamma1)
            .collect()
    }

    /// Whether the node lies on a displacement-pinned face (shared
    /// edge/corner nodes count as pinned).
    pub fn is_dirichlet(&self, idx: usize) -> bool {
        self.dirichlet_mask[idx]
    }

    /// Whether the node is strictly inside the box (on no face at all).
    pub fn is_interior(&self, idx: usize) -> bool {
        let c = self.coords(idx);
        (0..3).all(|axis| c[axis] > 0 && c[axis] < self.dims[axis] - 1)
    }
}

// ---------------------------------------------------------------------------
// Fields
// ---------------------------------------------------------------------------

/// Scalar samples at every grid node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    data: Vec<f64>,
}

/// Vector (ℝ³) samples at every grid node; also used for any vector-valued
/// node field such as body loads or residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementField {
    data: Vec<Vector3<f64>>,
}

/// 3×3-matrix samples at every grid node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixField {
    data: Vec<Matrix3<f64>>,
}

macro_rules! field_common {
    ($ty:ident, $item:ty, $zero:expr) => {
        impl $ty {
            pub fn zeros(grid: &Grid) -> Self {
                Self {
                    data: vec![$zero; grid.node_count()],
                }
            }

            pub fn from_vec(data: Vec<$item>) -> Self {
                Self { data }
            }

            pub fn len(&self) -> usize {
                self.data.len()
            }

            pub fn is_empty(&self) -> bool {
                self.data.is_empty()
            }

            pub fn iter(&self) -> std::slice::Iter<'_, $item> {
                self.data.iter()
            }

            pub fn as_slice(&self) -> &[$item] {
                &self.data
            }

            pub fn as_mut_slice(&mut self) -> &mut [$item] {
                &mut self.data
            }
        }

        impl std::ops::Index<usize> for $ty {
            type Output = $item;

            fn index(&self, idx: usize) -> &$item {
                &self.data[idx]
            }
        }

        impl std::ops::IndexMut<usize> for $ty {
            fn index_mut(&mut self, idx: usize) -> &mut $item {
                &mut self.data[idx]
            }
        }
    };
}

field_common!(ScalarField, f64, 0.0);
field_common!(DisplacementField, Vector3<f64>, Vector3::zeros());
field_common!(MatrixField, Matrix3<f64>, Matrix3::zeros());

impl ScalarField {
    pub fn from_fn(grid: &Grid, mut f: impl FnMut(Vector3<f64>) -> f64) -> Self {
        Self {
            data: (0..grid.node_count()).map(|i| f(grid.position(i))).collect(),
        }
    }
}

impl DisplacementField {
    pub fn from_fn(grid: &Grid, mut f: impl FnMut(Vector3<f64>) -> Vector3<f64>) -> Self {
        Self {
            data: (0..grid.node_count()).map(|i| f(grid.position(i))).collect(),
        }
    }

    /// Largest absolute component over all nodes.
    pub fn linf(&self) -> f64 {
        self.data
            .iter()
            .map(|v| v.amax())
            .fold(0.0, f64::max)
    }

    /// Reads whitespace-separated floats, three per node, node index order
    /// (x fastest, then y, then z), components innermost.
    pub fn read_text(path: &Path, grid: &Grid) -> Result<Self> {
        let values = read_floats(path, 3 * grid.node_count())?;
        let data = values
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect();
        Ok(Self { data })
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for v in &self.data {
            out.push_str(&format!("{:.17e} {:.17e} {:.17e}\n", v[0], v[1], v[2]));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

impl MatrixField {
    pub fn from_fn(grid: &Grid, mut f: impl FnMut(Vector3<f64>) -> Matrix3<f64>) -> Self {
        Self {
            data: (0..grid.node_count()).map(|i| f(grid.position(i))).collect(),
        }
    }

    /// Largest absolute entry over all nodes.
    pub fn linf(&self) -> f64 {
        self.data.iter().map(|m| m.amax()).fold(0.0, f64::max)
    }
}

macro_rules! field_arith {
    ($ty:ident) => {
        impl std::ops::Add for &$ty {
            type Output = $ty;

            fn add(self, rhs: &$ty) -> $ty {
                assert_eq!(self.data.len(), rhs.data.len());
                $ty {
                    data: self
                        .data
                        .iter()
                        .zip(&rhs.data)
                        .map(|(a, b)| a + b)
                        .collect(),
                }
            }
        }

        impl std::ops::Sub for &$ty {
            type Output = $ty;

            fn sub(self, rhs: &$ty) -> $ty {
                assert_eq!(self.data.len(), rhs.data.len());
                $ty {
                    data: self
                        .data
                        .iter()
                        .zip(&rhs.data)
                        .map(|(a, b)| a - b)
                        .collect(),
                }
            }
        }

        impl std::ops::Mul<f64> for &$ty {
            type Output = $ty;

            fn mul(self, rhs: f64) -> $ty {
                $ty {
                    data: self.data.iter().map(|a| a * rhs).collect(),
                }
            }
        }
    };
}

field_arith!(DisplacementField);
field_arith!(MatrixField);

/// Maximum |u| over displacement-pinned nodes; zero means u is admissible.
pub fn dirichlet_violation(u: &DisplacementField, grid: &Grid) -> f64 {
    let mut worst: f64 = 0.0;
    for idx in 0..grid.node_count() {
        if grid.is_dirichlet(idx) {
            worst = worst.max(u[idx].amax());
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Loads
// ---------------------------------------------------------------------------

/// Body force density at every node plus a surface traction array per
/// traction-tagged face (face-local node order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Loads {
    pub body: DisplacementField,
    tractions: [Option<Vec<Vector3<f64>>>; 6],
}

impl Loads {
    pub fn zero(grid: &Grid) -> Self {
        let mut tractions: [Option<Vec<Vector3<f64>>>; 6] = Default::default();
        for face in grid.gamma1_faces() {
            let (n1, n2) = grid.face_dims(face);
            tractions[face.index()] = Some(vec![Vector3::zeros(); n1 * n2]);
        }
        Self {
            body: DisplacementField::zeros(grid),
            tractions,
        }
    }

    pub fn from_fn(
        grid: &Grid,
        body: impl Fn(Vector3<f64>) -> Vector3<f64>,
        traction: impl Fn(Face, Vector3<f64>) -> Vector3<f64>,
    ) -> Self {
        let mut loads = Self::zero(grid);
        loads.body = DisplacementField::from_fn(grid, body);
        for face in grid.gamma1_faces() {
            let values = loads.tractions[face.index()].as_mut().unwrap();
            for fnode in grid.face_nodes(face) {
                values[face_local_flat(grid, face, fnode.a, fnode.b)] =
                    traction(face, grid.position(fnode.node));
            }
        }
        loads
    }

    /// Traction samples of a face in local order, or None for pinned faces.
    pub fn traction(&self, face: Face) -> Option<&[Vector3<f64>]> {
        self.tractions[face.index()].as_deref()
    }

    pub fn set_traction(&mut self, face: Face, values: Vec<Vector3<f64>>) {
        self.tractions[face.index()] = Some(values);
    }

    /// Checks the shape contract against a grid: body sized to the node
    /// count, traction arrays present exactly on traction faces and sized to
    /// the face node count.
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if self.body.len() != grid.node_count() {
            return Err(Error::InvalidParameter {
                name: "loads.body".into(),
                reason: format!(
                    "has {} nodes, grid has {}",
                    self.body.len(),
                    grid.node_count()
                ),
            });
        }
        for face in Face::ALL {
            let (n1, n2) = grid.face_dims(face);
            match (grid.tag(face), &self.tractions[face.index()]) {
                (BoundaryTag::Gamma1, Some(values)) if values.len() == n1 * n2 => {}
                (BoundaryTag::Gamma1, Some(values)) => {
                    return Err(Error::InvalidParameter {
                        name: format!("loads.traction[{}]", face.name()),
                        reason: format!("has {} samples, face has {}", values.len(), n1 * n2),
                    });
                }
                (BoundaryTag::Gamma1, None) => {
                    return Err(Error::InvalidParameter {
                        name: format!("loads.traction[{}]", face.name()),
                        reason: "missing traction samples on a traction face".into(),
                    });
                }
                (BoundaryTag::Gamma0, None) => {}
                (BoundaryTag::Gamma0, Some(_)) => {
                    return Err(Error::InvalidParameter {
                        name: format!("loads.traction[{}]", face.name()),
                        reason: "traction samples given on a displacement-pinned face".into(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Flat face-local index of local coordinates (a, b) (`b` fastest).
pub fn face_local_flat(grid: &Grid, face: Face, a: usize, b: usize) -> usize {
    let (_, n2) = grid.face_dims(face);
    a * n2 + b
}

/// Reads traction samples for one face: whitespace-separated floats, three
/// per face node, local order `a` slow / `b` fast, components innermost.
pub fn read_face_vectors(path: &Path, grid: &Grid, face: Face) -> Result<Vec<Vector3<f64>>> {
    let (n1, n2) = grid.face_dims(face);
    let values = read_floats(path, 3 * n1 * n2)?;
    Ok(values
        .chunks_exact(3)
        .map(|c| Vector3::new(c[0], c[1], c[2]))
        .collect())
}

fn read_floats(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut values = Vec::with_capacity(expected);
    for token in text.split_whitespace() {
        let v: f64 = token.parse().map_err(|_| Error::InvalidParameter {
            name: format!("field file {}", path.display()),
            reason: format!("token `{token}` is not a float"),
        })?;
        values.push(v);
    }
    if values.len() != expected {
        return Err(Error::InvalidParameter {
            name: format!("field file {}", path.display()),
            reason: format!("expected {expected} floats, found {}", values.len()),
        });
    }
    Ok(values)
}

// ---------------------------------------------------------------------------
// Difference operators
// ---------------------------------------------------------------------------

/// First derivative of node samples along one axis: central differences at
/// interior nodes, second-order 3-point one-sided stencils at the two ends.
/// Exact for quadratic polynomials.
pub fn apply_derivative(grid: &Grid, axis: usize, data: &[f64]) -> Vec<f64> {
    let n = grid.dims()[axis];
    let stride = grid.stride(axis);
    let inv = 1.0 / (2.0 * grid.spacing()[axis]);
    let mut out = vec![0.0; data.len()];
    for (idx, slot) in out.iter_mut().enumerate() {
        let p = grid.coords(idx)[axis];
        *slot = if p == 0 {
            (-3.0 * data[idx] + 4.0 * data[idx + stride] - data[idx + 2 * stride]) * inv
        } else if p == n - 1 {
            (3.0 * data[idx] - 4.0 * data[idx - stride] + data[idx - 2 * stride]) * inv
        } else {
            (data[idx + stride] - data[idx - stride]) * inv
        };
    }
    out
}

/// Transpose (adjoint in the unweighted Euclidean inner product) of
/// [`apply_derivative`]: scatters each node's stencil row back to its
/// source nodes. Used by functional gradients and least-squares systems.
pub fn apply_derivative_transpose(grid: &Grid, axis: usize, data: &[f64]) -> Vec<f64> {
    let n = grid.dims()[axis];
    let stride = grid.stride(axis);
    let inv = 1.0 / (2.0 * grid.spacing()[axis]);
    let mut out = vec![0.0; data.len()];
    for (idx, &v) in data.iter().enumerate() {
        let p = grid.coords(idx)[axis];
        if p == 0 {
            out[idx] += -3.0 * inv * v;
            out[idx + stride] += 4.0 * inv * v;
            out[idx + 2 * stride] += -inv * v;
        } else if p == n - 1 {
            out[idx] += 3.0 * inv * v;
            out[idx - stride] += -4.0 * inv * v;
            out[idx - 2 * stride] += inv * v;
        } else {
            out[idx + stride] += inv * v;
            out[idx - stride] += -inv * v;
        }
    }
    out
}

fn component_slice(u: &DisplacementField, m: usize) -> Vec<f64> {
    u.iter().map(|v| v[m]).collect()
}

/// Displacement gradient `g_mi = ∂u_m/∂x_i` at every node.
pub fn gradient(u: &DisplacementField, grid: &Grid) -> MatrixField {
    let count = grid.node_count();
    let mut data = vec![Matrix3::zeros(); count];
    for m in 0..3 {
        let comp = component_slice(u, m);
        for axis in 0..3 {
            let d = apply_derivative(grid, axis, &comp);
            for (idx, value) in d.into_iter().enumerate() {
                data[idx][(m, axis)] = value;
            }
        }
    }
    MatrixField::from_vec(data)
}

/// Gradient of scalar node samples.
pub fn scalar_gradient(phi: &ScalarField, grid: &Grid) -> DisplacementField {
    let count = grid.node_count();
    let mut data = vec![Vector3::zeros(); count];
    for axis in 0..3 {
        let d = apply_derivative(grid, axis, phi.as_slice());
        for (entry, value) in data.iter_mut().zip(d) {
            entry[axis] = value;
        }
    }
    DisplacementField::from_vec(data)
}

/// Row-wise divergence `(div T)_m = Σ_i ∂T_mi/∂x_i` at every node.
pub fn divergence(t: &MatrixField, grid: &Grid) -> DisplacementField {
    let count = grid.node_count();
    let mut data = vec![Vector3::zeros(); count];
    for m in 0..3 {
        for axis in 0..3 {
            let comp: Vec<f64> = t.iter().map(|mat| mat[(m, axis)]).collect();
            let d = apply_derivative(grid, axis, &comp);
            for (idx, value) in d.into_iter().enumerate() {
                data[idx][m] += value;
            }
        }
    }
    DisplacementField::from_vec(data)
}

// ---------------------------------------------------------------------------
// Quadrature
// ---------------------------------------------------------------------------

/// Trapezoidal tensor-product volume integral of node samples, accumulated
/// sequentially in node index order for bit-for-bit reproducibility.
pub fn integrate_volume(grid: &Grid, f: impl Fn(usize) -> f64) -> f64 {
    let mut acc = 0.0;
    for idx in 0..grid.node_count() {
        acc += grid.volume_weight(idx) * f(idx);
    }
    acc
}

/// Trapezoidal integral over one face; `f` receives the global node index.
pub fn integrate_face(grid: &Grid, face: Face, f: impl Fn(usize) -> f64) -> f64 {
    let mut acc = 0.0;
    for fnode in grid.face_nodes(face) {
        acc += fnode.weight * f(fnode.node);
    }
    acc
}

/// Sum of face integrals over all traction-tagged faces, in canonical face
/// order; `f` receives the face and the global node index.
pub fn integrate_boundary(grid: &Grid, f: impl Fn(Face, usize) -> f64) -> f64 {
    let mut acc = 0.0;
    for face in grid.gamma1_faces() {
        acc += integrate_face(grid, face, |node| f(face, node));
    }
    acc
}
