//! Operators and states on tensor-product Hilbert spaces.
//!
//! Subsystem order is always (atom, cavity). Basis index of |level, n⟩ is
//! `level * (cutoff + 1) + n` with zero-based `level`.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::C64;

/// Slot of the atom in the (atom, cavity) product.
pub const ATOM: usize = 0;
/// Slot of the cavity mode in the (atom, cavity) product.
pub const CAVITY: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HilbertSpace {
    subsystem_dims: Vec<usize>,
    total_dim: usize,
}

impl HilbertSpace {
    pub fn new(subsystem_dims: Vec<usize>) -> Result<Self> {
        if subsystem_dims.is_empty() || subsystem_dims.contains(&0) {
            return Err(Error::Dimension(format!(
                "subsystem dimensions must be positive, got {subsystem_dims:?}"
            )));
        }
        let total_dim = subsystem_dims.iter().product();
        Ok(Self { subsystem_dims, total_dim })
    }

    /// Atom with `n_levels` levels times a cavity truncated at `fock_cutoff` photons.
    pub fn atom_cavity(n_levels: usize, fock_cutoff: usize) -> Result<Self> {
        if fock_cutoff == 0 {
            return Err(Error::Dimension("fock_cutoff must be >= 1".into()));
        }
        Self::new(vec![n_levels, fock_cutoff + 1])
    }

    pub fn single(dim: usize) -> Result<Self> {
        Self::new(vec![dim])
    }

    pub fn subsystem_dims(&self) -> &[usize] {
        &self.subsystem_dims
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    /// Flat index of a product basis state given one index per subsystem.
    pub fn index_of(&self, indices: &[usize]) -> Result<usize> {
        if indices.len() != self.subsystem_dims.len() {
            return Err(Error::Dimension(format!(
                "expected {} subsystem indices, got {}",
                self.subsystem_dims.len(),
                indices.len()
            )));
        }
        let mut flat = 0;
        for (&i, &d) in indices.iter().zip(&self.subsystem_dims) {
            if i >= d {
                return Err(Error::Dimension(format!("index {i} outside subsystem of dim {d}")));
            }
            flat = flat * d + i;
        }
        Ok(flat)
    }
}

/// Dense complex operator with dimension metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    space: HilbertSpace,
    matrix: DMatrix<C64>,
}

impl Operator {
    pub fn new(space: HilbertSpace, matrix: DMatrix<C64>) -> Result<Self> {
        let d = space.total_dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::Dimension(format!(
                "matrix is {}x{}, space has dimension {d}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { space, matrix })
    }

    pub fn identity(space: &HilbertSpace) -> Self {
        let d = space.total_dim();
        Self { space: space.clone(), matrix: DMatrix::identity(d, d) }
    }

    pub fn zeros(space: &HilbertSpace) -> Self {
        let d = space.total_dim();
        Self { space: space.clone(), matrix: DMatrix::zeros(d, d) }
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.total_dim()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.matrix
    }

    pub fn dag(&self) -> Self {
        Self { space: self.space.clone(), matrix: self.matrix.adjoint() }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { space: self.space.clone(), matrix: &self.matrix * s }
    }

    pub fn scale_re(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let d = self.dim();
        (0..d).all(|i| (i..d).all(|j| (self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm() <= tol))
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.matrix.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    pub fn commutator(&self, other: &Operator) -> Operator {
        &(self * other) - &(other * self)
    }

    pub fn apply(&self, psi: &StateVector) -> StateVector {
        StateVector { space: self.space.clone(), amplitudes: &self.matrix * &psi.amplitudes }
    }

    /// Restriction to the index set `keep` (rows and columns), as a plain matrix.
    pub fn submatrix(&self, keep: &[usize]) -> DMatrix<C64> {
        DMatrix::from_fn(keep.len(), keep.len(), |i, j| self.matrix[(keep[i], keep[j])])
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        assert_eq!(self.space, rhs.space, "operator spaces differ");
        Operator { space: self.space.clone(), matrix: &self.matrix * &rhs.matrix }
    }
}

impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        assert_eq!(self.space, rhs.space, "operator spaces differ");
        Operator { space: self.space.clone(), matrix: &self.matrix + &rhs.matrix }
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        assert_eq!(self.space, rhs.space, "operator spaces differ");
        Operator { space: self.space.clone(), matrix: &self.matrix - &rhs.matrix }
    }
}

impl Neg for &Operator {
    type Output = Operator;
    fn neg(self) -> Operator {
        Operator { space: self.space.clone(), matrix: -&self.matrix }
    }
}

/// Pure state on a product space.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    space: HilbertSpace,
    amplitudes: DVector<C64>,
}

impl StateVector {
    pub fn new(space: HilbertSpace, amplitudes: DVector<C64>) -> Result<Self> {
        if amplitudes.len() != space.total_dim() {
            return Err(Error::Dimension(format!(
                "{} amplitudes for space of dimension {}",
                amplitudes.len(),
                space.total_dim()
            )));
        }
        Ok(Self { space, amplitudes })
    }

    /// Product basis state; `indices` are zero-based per subsystem.
    pub fn basis(space: &HilbertSpace, indices: &[usize]) -> Result<Self> {
        let k = space.index_of(indices)?;
        let mut amplitudes = DVector::zeros(space.total_dim());
        amplitudes[k] = C64::new(1.0, 0.0);
        Ok(Self { space: space.clone(), amplitudes })
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            self.amplitudes /= C64::new(n, 0.0);
        }
        self
    }

    /// ⟨self|other⟩.
    pub fn inner(&self, other: &StateVector) -> C64 {
        self.amplitudes.dotc(&other.amplitudes)
    }

    /// |self⟩⟨self|.
    pub fn projector(&self) -> Operator {
        Operator {
            space: self.space.clone(),
            matrix: &self.amplitudes * self.amplitudes.adjoint(),
        }
    }
}

/// Cavity annihilation operator on Fock states |0⟩..|fock_cutoff⟩.
pub fn annihilation_op(fock_cutoff: usize) -> Result<Operator> {
    if fock_cutoff == 0 {
        return Err(Error::Dimension("fock_cutoff must be >= 1".into()));
    }
    let d = fock_cutoff + 1;
    let mut m = DMatrix::zeros(d, d);
    for n in 1..d {
        m[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    Operator::new(HilbertSpace::single(d)?, m)
}

/// Matrix unit σᵢⱼ = |i⟩⟨j| with one-based level labels.
pub fn atomic_projector(i: usize, j: usize, n_levels: usize) -> Result<Operator> {
    for idx in [i, j] {
        if idx == 0 || idx > n_levels {
            return Err(Error::IndexOutOfRange { index: idx, n_levels });
        }
    }
    let mut m = DMatrix::zeros(n_levels, n_levels);
    m[(i - 1, j - 1)] = C64::new(1.0, 0.0);
    Operator::new(HilbertSpace::single(n_levels)?, m)
}

/// Kronecker product a ⊗ b.
pub fn tensor(a: &Operator, b: &Operator) -> Operator {
    let dims = a.space.subsystem_dims().iter().chain(b.space.subsystem_dims()).copied().collect();
    let space = HilbertSpace::new(dims).expect("dimensions of valid operands are positive");
    Operator { space, matrix: a.matrix.kronecker(&b.matrix) }
}

/// Lift a single-subsystem operator to the full space.
pub fn embed(op: &Operator, subsystem_index: usize, space: &HilbertSpace) -> Result<Operator> {
    let dims = space.subsystem_dims();
    if subsystem_index >= dims.len() {
        return Err(Error::Dimension(format!(
            "subsystem {subsystem_index} does not exist in {dims:?}"
        )));
    }
    if op.dim() != dims[subsystem_index] {
        return Err(Error::Dimension(format!(
            "operator of dimension {} cannot act on subsystem of dimension {}",
            op.dim(),
            dims[subsystem_index]
        )));
    }
    let left: usize = dims[..subsystem_index].iter().product();
    let right: usize = dims[subsystem_index + 1..].iter().product();
    let m = DMatrix::<C64>::identity(left, left)
        .kronecker(&op.matrix)
        .kronecker(&DMatrix::<C64>::identity(right, right));
    Operator::new(space.clone(), m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn random_op(dim: usize, vals: &[(f64, f64)]) -> Operator {
        let m = DMatrix::from_fn(dim, dim, |i, j| {
            let (re, im) = vals[(i * dim + j) % vals.len()];
            C64::new(re + 0.1 * i as f64, im - 0.07 * j as f64)
        });
        Operator::new(HilbertSpace::single(dim).unwrap(), m).unwrap()
    }

    #[test]
    fn ladder_elements() {
        let a = annihilation_op(2).unwrap();
        assert_eq!(a.dim(), 3);
        assert_eq!(a.matrix()[(0, 1)], c(1.0));
        assert_eq!(a.matrix()[(1, 2)], c(2f64.sqrt()));
        let nonzero = a.matrix().iter().filter(|z| z.norm() > 0.0).count();
        assert_eq!(nonzero, 2);
        let n = &a.dag() * &a;
        for k in 0..3 {
            assert!((n.matrix()[(k, k)] - c(k as f64)).norm() < 1e-15);
        }
    }

    #[test]
    fn commutator_is_one_below_edge() {
        let a = annihilation_op(4).unwrap();
        let comm = a.commutator(&a.dag());
        for n in 0..4 {
            assert!((comm.matrix()[(n, n)] - c(1.0)).norm() < 1e-14);
        }
        // the truncation edge is the only place the identity breaks
        assert!((comm.matrix()[(4, 4)] - c(-4.0)).norm() < 1e-14);
    }

    #[test]
    fn zero_cutoff_rejected() {
        assert!(matches!(annihilation_op(0), Err(Error::Dimension(_))));
    }

    #[test]
    fn projector_algebra() {
        let s22 = atomic_projector(2, 2, 3).unwrap();
        assert_eq!(s22.matrix()[(1, 1)], c(1.0));
        assert_eq!(s22.trace(), c(1.0));
        let s13 = atomic_projector(1, 3, 3).unwrap();
        let s31 = atomic_projector(3, 1, 3).unwrap();
        assert_eq!(&s13 * &s31, atomic_projector(1, 1, 3).unwrap());
        assert_eq!(s13.dag(), s31);
        assert!(matches!(atomic_projector(0, 1, 3), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(atomic_projector(1, 4, 3), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn all_matrix_units_multiply_exactly() {
        let n = 3;
        for i in 1..=n {
            for j in 1..=n {
                for k in 1..=n {
                    for l in 1..=n {
                        let lhs = &atomic_projector(i, j, n).unwrap() * &atomic_projector(k, l, n).unwrap();
                        let rhs = if j == k {
                            atomic_projector(i, l, n).unwrap()
                        } else {
                            Operator::zeros(lhs.space())
                        };
                        assert_eq!(lhs, rhs);
                    }
                }
            }
        }
    }

    #[test]
    fn tensor_identity_and_mixed_product() {
        let i2 = Operator::identity(&HilbertSpace::single(2).unwrap());
        let i3 = Operator::identity(&HilbertSpace::single(3).unwrap());
        let i6 = tensor(&i2, &i3);
        assert_eq!(i6.space().subsystem_dims(), &[2, 3]);
        assert_eq!(i6.matrix(), &DMatrix::<C64>::identity(6, 6));

        let s13 = atomic_projector(1, 3, 3).unwrap();
        let a = annihilation_op(3).unwrap();
        let ia = Operator::identity(a.space());
        let is = Operator::identity(s13.space());
        assert_eq!(&tensor(&s13, &ia) * &tensor(&is, &a), tensor(&s13, &a));
    }

    #[test]
    fn embed_dimensions_and_commutation() {
        let space = HilbertSpace::new(vec![3, 4]).unwrap();
        let a = embed(&annihilation_op(3).unwrap(), CAVITY, &space).unwrap();
        assert_eq!(a.dim(), 12);
        let s22 = embed(&atomic_projector(2, 2, 3).unwrap(), ATOM, &space).unwrap();
        assert!(s22.commutator(&a).max_abs() == 0.0);
        let id = embed(&Operator::identity(&HilbertSpace::single(3).unwrap()), ATOM, &space).unwrap();
        assert_eq!(id, Operator::identity(&space));
        assert!(embed(&annihilation_op(2).unwrap(), CAVITY, &space).is_err());
        assert!(embed(&annihilation_op(3).unwrap(), 2, &space).is_err());
    }

    #[test]
    fn basis_index_layout() {
        let space = HilbertSpace::atom_cavity(3, 2).unwrap();
        assert_eq!(space.index_of(&[1, 2]).unwrap(), 5);
        let psi = StateVector::basis(&space, &[2, 1]).unwrap();
        assert_eq!(psi.amplitudes()[7], c(1.0));
        assert!((psi.norm() - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn kronecker_mixed_product(v in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 16)) {
            let a = random_op(2, &v[0..4]);
            let b = random_op(3, &v[4..8]);
            let c = random_op(2, &v[8..12]);
            let d = random_op(3, &v[12..16]);
            let lhs = &tensor(&a, &b) * &tensor(&c, &d);
            let rhs = tensor(&(&a * &c), &(&b * &d));
            prop_assert!((lhs.matrix() - rhs.matrix()).camax() < 1e-12);
        }

        #[test]
        fn trace_factorizes(v in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 8)) {
            let a = random_op(2, &v[0..4]);
            let b = random_op(3, &v[4..8]);
            let lhs = tensor(&a, &b).trace();
            let rhs = a.trace() * b.trace();
            prop_assert!((lhs - rhs).norm() < 1e-12);
        }

        #[test]
        fn number_operator_spectrum(cutoff in 1usize..9) {
            let a = annihilation_op(cutoff).unwrap();
            let n = (&a.dag() * &a).into_matrix();
            let eig = n.symmetric_eigenvalues();
            let mut vals: Vec<f64> = eig.iter().copied().collect();
            vals.sort_by(f64::total_cmp);
            for (k, v) in vals.iter().enumerate() {
                prop_assert!((v - k as f64).abs() < 1e-12);
            }
        }
    }
}
