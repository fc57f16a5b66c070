//! Vectorized master equation, steady states and time propagation.
//!
//! dρ/dt = −i[H,ρ] + Σᵢ(2CᵢρCᵢ† − ρCᵢ†Cᵢ − Cᵢ†Cᵢρ)
//!
//! Note the factor 2 on the jump term: with C = √κ a the field decays at κ
//! and the intensity at 2κ. Vectorization stacks columns, so
//! vec(AXB) = (Bᵀ⊗A)·vec(X) and the element ρᵢⱼ sits at i + j·D.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hilbert::{HilbertSpace, Operator, StateVector};
use crate::model::ModelRealization;
use crate::C64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Density matrix satisfying Hermiticity, unit trace and positivity.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    space: HilbertSpace,
    matrix: DMatrix<C64>,
}

impl DensityMatrix {
    pub const HERMITIAN_TOL: f64 = 1e-10;
    pub const TRACE_TOL: f64 = 1e-10;
    pub const POSITIVITY_TOL: f64 = 1e-8;

    /// Validating constructor.
    pub fn new(space: HilbertSpace, matrix: DMatrix<C64>) -> Result<Self> {
        let rho = Self::from_raw(space, matrix)?;
        let herm = (&rho.matrix - rho.matrix.adjoint()).camax();
        if herm > Self::HERMITIAN_TOL {
            return Err(Error::Dimension(format!("density matrix not Hermitian ({herm:e})")));
        }
        let tr = rho.matrix.trace();
        if (tr - ONE).norm() > Self::TRACE_TOL {
            return Err(Error::Dimension(format!("density matrix trace {tr} != 1")));
        }
        let min = rho.min_eigenvalue();
        if min < -Self::POSITIVITY_TOL {
            return Err(Error::Dimension(format!("density matrix has eigenvalue {min:e}")));
        }
        Ok(rho)
    }

    /// Shape check only; used for propagated states whose invariants hold up
    /// to integrator error.
    pub fn from_raw(space: HilbertSpace, matrix: DMatrix<C64>) -> Result<Self> {
        let d = space.total_dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::Dimension(format!(
                "matrix {}x{} on space of dimension {d}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { space, matrix })
    }

    pub fn pure(psi: &StateVector) -> Self {
        let psi = psi.clone().normalized();
        let m = psi.amplitudes() * psi.amplitudes().adjoint();
        Self { space: psi.space().clone(), matrix: m }
    }

    /// Product basis state |indices⟩⟨indices|.
    pub fn basis(space: &HilbertSpace, indices: &[usize]) -> Result<Self> {
        Ok(Self::pure(&StateVector::basis(space, indices)?))
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn hermiticity_error(&self) -> f64 {
        (&self.matrix - self.matrix.adjoint()).camax()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let h = (&self.matrix + self.matrix.adjoint()) * C64::new(0.5, 0.0);
        let mut v: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// ½‖ρ − σ‖₁.
    pub fn trace_distance(&self, other: &DensityMatrix) -> f64 {
        let diff = &self.matrix - &other.matrix;
        let h = (&diff + diff.adjoint()) * C64::new(0.5, 0.0);
        0.5 * h.symmetric_eigenvalues().iter().map(|x| x.abs()).sum::<f64>()
    }

    /// Diagonal element ⟨k|ρ|k⟩ for flat index k.
    pub fn population(&self, k: usize) -> f64 {
        self.matrix[(k, k)].re
    }

    pub fn to_vec(&self) -> DVector<C64> {
        vectorize(&self.matrix)
    }
}

/// Column-stacking vectorization.
pub fn vectorize(m: &DMatrix<C64>) -> DVector<C64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn unvectorize(v: &DVector<C64>, d: usize) -> DMatrix<C64> {
    DMatrix::from_column_slice(d, d, v.as_slice())
}

/// Compressed sparse row storage, just enough for matvecs.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl CsrMatrix {
    fn from_entries(n: usize, entries: &BTreeMap<(usize, usize), C64>) -> Self {
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::with_capacity(entries.len());
        let mut vals = Vec::with_capacity(entries.len());
        for (&(r, c), &v) in entries {
            if v == ZERO {
                continue;
            }
            row_ptr[r + 1] += 1;
            cols.push(c);
            vals.push(v);
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn matvec_into(&self, x: &[C64], y: &mut [C64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = ZERO;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *yr = acc;
        }
    }

    pub fn matvec(&self, x: &DVector<C64>) -> DVector<C64> {
        let mut y = DVector::zeros(self.n);
        self.matvec_into(x.as_slice(), y.as_mut_slice());
        y
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[(r, self.cols[k])] = self.vals[k];
            }
        }
        m
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.vals.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Lindblad superoperator acting on column-stacked density matrices.
#[derive(Debug, Clone)]
pub struct Liouvillian {
    space: HilbertSpace,
    matrix: CsrMatrix,
}

fn nonzeros(m: &DMatrix<C64>) -> Vec<(usize, usize, C64)> {
    let mut out = Vec::new();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if v != ZERO {
                out.push((i, j, v));
            }
        }
    }
    out
}

/// Accumulates `scale · (P ⊗ Q)` into the entry map.
fn add_kron(
    acc: &mut BTreeMap<(usize, usize), C64>,
    p: &[(usize, usize, C64)],
    q: &[(usize, usize, C64)],
    d: usize,
    scale: C64,
) {
    for &(a, c, pv) in p {
        for &(b, e, qv) in q {
            *acc.entry((a * d + b, c * d + e)).or_insert(ZERO) += scale * pv * qv;
        }
    }
}

impl Liouvillian {
    /// Assemble from a Hamiltonian and collapse operators (factor-2 jump convention).
    pub fn from_parts(hamiltonian: &Operator, collapse_ops: &[Operator]) -> Result<Self> {
        let space = hamiltonian.space().clone();
        let d = space.total_dim();
        for c in collapse_ops {
            if c.space() != &space {
                return Err(Error::Dimension("collapse operator on a different space".into()));
            }
        }
        let id: Vec<(usize, usize, C64)> = (0..d).map(|i| (i, i, ONE)).collect();
        let mi = C64::new(0.0, -1.0);
        let h = hamiltonian.matrix();
        let mut acc = BTreeMap::new();
        // −i(I⊗H − Hᵀ⊗I)
        add_kron(&mut acc, &id, &nonzeros(h), d, mi);
        add_kron(&mut acc, &nonzeros(&h.transpose()), &id, d, -mi);
        for c in collapse_ops {
            let cm = c.matrix();
            let cdc = cm.adjoint() * cm;
            add_kron(&mut acc, &nonzeros(&cm.map(|z| z.conj())), &nonzeros(cm), d, C64::new(2.0, 0.0));
            add_kron(&mut acc, &nonzeros(&cdc.transpose()), &id, d, -ONE);
            add_kron(&mut acc, &id, &nonzeros(&cdc), d, -ONE);
        }
        Ok(Self { space, matrix: CsrMatrix::from_entries(d * d, &acc) })
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.total_dim()
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        self.matrix.to_dense()
    }

    pub fn norm(&self) -> f64 {
        self.matrix.frobenius_norm()
    }

    /// L applied to an (arbitrary, possibly unnormalized) matrix.
    pub fn apply(&self, x: &DMatrix<C64>) -> DMatrix<C64> {
        unvectorize(&self.matrix.matvec(&vectorize(x)), self.dim())
    }

    /// Eigenvalues of the dense superoperator.
    pub fn eigenvalues(&self) -> Result<Vec<C64>> {
        let schur = nalgebra::Schur::try_new(self.to_dense(), f64::EPSILON, 0)
            .ok_or_else(|| Error::NonConvergence("Schur decomposition of L".into()))?;
        let ev = schur
            .eigenvalues()
            .ok_or_else(|| Error::NonConvergence("Schur form not triangular".into()))?;
        Ok(ev.iter().copied().collect())
    }

    /// 1/(smallest nonzero relaxation rate) of the dynamics.
    pub fn relaxation_time(&self) -> Result<f64> {
        let ev = self.eigenvalues()?;
        let scale = ev.iter().fold(0.0f64, |m, z| m.max(z.norm())).max(1e-300);
        let gap = ev
            .iter()
            .filter(|z| z.norm() > 1e-9 * scale)
            .map(|z| -z.re)
            .fold(f64::INFINITY, f64::min);
        if !(gap > 0.0) || !gap.is_finite() {
            return Err(Error::NonConvergence("no positive spectral gap".into()));
        }
        Ok(1.0 / gap)
    }

    /// exp(L·t) as a dense matrix.
    pub fn propagator(&self, t: f64) -> DMatrix<C64> {
        (self.to_dense() * C64::new(t, 0.0)).exp()
    }
}

pub fn build_liouvillian(model: &ModelRealization) -> Result<Liouvillian> {
    Liouvillian::from_parts(&model.hamiltonian, &model.collapse_ops)
}

/// Below this ratio of smallest to largest LU pivot the solve switches to SVD.
pub const PIVOT_RATIO_FLOOR: f64 = 1e-13;
/// Singular values below this fraction of the largest count as null.
pub const NULL_SPACE_TOL: f64 = 1e-11;

/// Unique stationary state of L.
pub fn steady_state(l: &Liouvillian) -> Result<DensityMatrix> {
    let d = l.dim();
    let n = d * d;
    let dense = l.to_dense();
    let mut m = dense.clone();
    // replace the first equation by the trace constraint
    for k in 0..n {
        m[(0, k)] = ZERO;
    }
    for i in 0..d {
        m[(0, i * (d + 1))] = ONE;
    }
    let mut rhs = DVector::zeros(n);
    rhs[0] = ONE;

    let lu = m.lu();
    let u = lu.u();
    let (mut pmin, mut pmax) = (f64::INFINITY, 0.0f64);
    for i in 0..n {
        let p = u[(i, i)].norm();
        pmin = pmin.min(p);
        pmax = pmax.max(p);
    }
    let x = if pmax > 0.0 && pmin / pmax >= PIVOT_RATIO_FLOOR {
        lu.solve(&rhs).ok_or_else(|| Error::NonConvergence("LU solve failed".into()))?
    } else {
        null_vector_svd(&dense)?
    };
    finish_steady_state(l, x)
}

/// Null vector of L by SVD; errors when the null space is not one-dimensional.
pub fn null_vector_svd(dense: &DMatrix<C64>) -> Result<DVector<C64>> {
    let svd = dense.clone().svd(false, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    let null: Vec<usize> = (0..sv.len()).filter(|&k| sv[k] <= NULL_SPACE_TOL * smax).collect();
    match null.len() {
        0 => Err(Error::NonConvergence("Liouvillian has no null vector".into())),
        1 => {
            let v_t = svd.v_t.as_ref().expect("requested V^H");
            Ok(v_t.row(null[0]).adjoint())
        }
        k => Err(Error::DegenerateNullSpace(k)),
    }
}

fn finish_steady_state(l: &Liouvillian, x: DVector<C64>) -> Result<DensityMatrix> {
    let d = l.dim();
    let mut rho = unvectorize(&x, d);
    let tr = rho.trace();
    if tr.norm() < 1e-300 {
        return Err(Error::NonConvergence("steady state has zero trace".into()));
    }
    rho /= tr;
    rho = (&rho + rho.adjoint()) * C64::new(0.5, 0.0);
    let residual = l.matrix.matvec(&vectorize(&rho)).norm();
    if residual > 1e-10 * l.norm() {
        return Err(Error::NonConvergence(format!("steady-state residual {residual:e}")));
    }
    let svd_check = DensityMatrix::from_raw(l.space.clone(), rho)?;
    if svd_check.min_eigenvalue() < -DensityMatrix::POSITIVITY_TOL {
        // a unique stationary state is positive; a negative eigenvalue means the
        // solve landed on a mixture of several
        let null = null_vector_svd(&l.to_dense())?;
        let mut rho = unvectorize(&null, d);
        let tr = rho.trace();
        rho /= tr;
        rho = (&rho + rho.adjoint()) * C64::new(0.5, 0.0);
        return DensityMatrix::new(l.space.clone(), rho)
            .map_err(|e| Error::NonConvergence(format!("steady state invalid: {e}")));
    }
    Ok(svd_check)
}

/// Time-propagation backend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Propagation {
    /// Adaptive Dormand–Prince 5(4); `atol` is relative to the largest entry of
    /// the initial vector.
    RungeKutta { rtol: f64, atol: f64 },
    /// Dense matrix exponential (Padé with scaling and squaring).
    Expm,
}

impl Default for Propagation {
    fn default() -> Self {
        Propagation::RungeKutta { rtol: 1e-10, atol: 1e-12 }
    }
}

/// Dormand–Prince 5(4) tableau.
mod dopri {
    pub const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    pub const B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    pub const E: [f64; 7] = [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ];
}

/// Adaptive integrator state carried across consecutive intervals.
struct Dopri<'a> {
    l: &'a CsrMatrix,
    rtol: f64,
    atol: f64,
    h: f64,
    k: Vec<Vec<C64>>,
    tmp: Vec<C64>,
    ynew: Vec<C64>,
}

const MAX_STEPS: usize = 5_000_000;

impl<'a> Dopri<'a> {
    fn new(l: &'a CsrMatrix, rtol: f64, atol: f64, y0: &[C64]) -> Self {
        let n = y0.len();
        let scale = y0.iter().fold(0.0f64, |m, z| m.max(z.norm())).max(f64::MIN_POSITIVE);
        Self {
            l,
            rtol,
            atol: atol * scale,
            h: 0.0,
            k: vec![vec![ZERO; n]; 7],
            tmp: vec![ZERO; n],
            ynew: vec![ZERO; n],
        }
    }

    fn initial_step(&mut self, y: &[C64], span: f64) -> f64 {
        // rough |λ|max from one matvec; the error controller does the rest
        self.l.matvec_into(y, &mut self.tmp);
        let fy = self.tmp.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let ny = y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let h = if fy > 0.0 && ny > 0.0 { 0.01 * ny / fy } else { span };
        h.min(span)
    }

    /// Advance `y` by exactly `span`.
    fn advance(&mut self, y: &mut [C64], t0: f64, span: f64) -> Result<()> {
        if span <= 0.0 {
            return Ok(());
        }
        if self.h <= 0.0 {
            self.h = self.initial_step(y, span);
        }
        let n = y.len();
        let t_end = t0 + span;
        let mut t = t0;
        let mut steps = 0usize;
        let mut fsal_valid = false;
        // a step this small relative to the interval means the tolerance
        // cannot be met; treat it as stiffness rather than crawl
        let h_min = 1e-10 * span;
        while t < t_end {
            steps += 1;
            if steps > MAX_STEPS {
                return Err(Error::StiffnessFailure { t, h: self.h });
            }
            let last = t + self.h >= t_end;
            let h = if last { t_end - t } else { self.h };
            if h < h_min && !last {
                return Err(Error::StiffnessFailure { t, h });
            }
            if !fsal_valid {
                self.l.matvec_into(y, &mut self.k[0]);
            }
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = y[i];
                    for (j, a) in dopri::A[s][..s].iter().enumerate() {
                        if *a != 0.0 {
                            acc += self.k[j][i] * (h * a);
                        }
                    }
                    self.tmp[i] = acc;
                }
                self.l.matvec_into(&self.tmp, &mut self.k[s]);
            }
            // stage 7 was evaluated at the 5th-order solution
            let mut err = 0.0f64;
            for i in 0..n {
                let mut yn = y[i];
                let mut e = ZERO;
                for s in 0..7 {
                    if dopri::B[s] != 0.0 {
                        yn += self.k[s][i] * (h * dopri::B[s]);
                    }
                    if dopri::E[s] != 0.0 {
                        e += self.k[s][i] * (h * dopri::E[s]);
                    }
                }
                self.ynew[i] = yn;
                let sc = self.atol + self.rtol * y[i].norm().max(yn.norm());
                err += (e.norm() / sc).powi(2);
            }
            let err = (err / n as f64).sqrt();
            if err <= 1.0 {
                t = if last { t_end } else { t + h };
                y.copy_from_slice(&self.ynew);
                self.k.swap(0, 6);
                fsal_valid = true;
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                if !last {
                    self.h = h * fac;
                }
            } else {
                let fac = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
                self.h = h * fac;
                if self.h < h_min {
                    return Err(Error::StiffnessFailure { t, h: self.h });
                }
            }
        }
        Ok(())
    }
}

/// Propagate a raw vectorized matrix through consecutive times.
///
/// `times` must be nondecreasing and start at or after 0; the returned vectors
/// correspond one-to-one with `times`, with v(0) = `v0`.
pub fn propagate_vec(
    l: &Liouvillian,
    v0: &DVector<C64>,
    times: &[f64],
    method: Propagation,
) -> Result<Vec<DVector<C64>>> {
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter {
            name: "times".into(),
            reason: "must be finite, nonnegative and nondecreasing".into(),
        });
    }
    let mut out = Vec::with_capacity(times.len());
    match method {
        Propagation::RungeKutta { rtol, atol } => {
            let mut y: Vec<C64> = v0.iter().copied().collect();
            let mut dp = Dopri::new(&l.matrix, rtol, atol, &y);
            let mut t = 0.0;
            for &tk in times {
                dp.advance(&mut y, t, tk - t)?;
                t = tk;
                out.push(DVector::from_column_slice(&y));
            }
        }
        Propagation::Expm => {
            let dense = l.to_dense();
            let mut y = v0.clone();
            let mut t = 0.0;
            // steps equal to within roundoff share one propagator
            let mut cached: Option<(f64, DMatrix<C64>)> = None;
            for &tk in times {
                let dt = tk - t;
                if dt > 0.0 {
                    let reuse = matches!(&cached, Some((h, _)) if (h - dt).abs() <= 1e-12 * dt);
                    if !reuse {
                        cached = Some((dt, (&dense * C64::new(dt, 0.0)).exp()));
                    }
                    y = &cached.as_ref().expect("set above").1 * &y;
                }
                t = tk;
                out.push(y.clone());
            }
        }
    }
    Ok(out)
}

/// Common spacing of a grid (after its first point), if uniform to 1e-12.
pub fn uniform_step(times: &[f64]) -> Option<f64> {
    if times.len() < 3 {
        return None;
    }
    let h = times[2] - times[1];
    let ok = times[1..].windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-12 * h.abs().max(1e-300));
    ok.then_some(h)
}

/// ρ(t) = exp(Lt)ρ₀ with the default adaptive integrator.
pub fn evolve(l: &Liouvillian, rho0: &DensityMatrix, t: f64) -> Result<DensityMatrix> {
    evolve_with(l, rho0, t, Propagation::default())
}

pub fn evolve_with(l: &Liouvillian, rho0: &DensityMatrix, t: f64, method: Propagation) -> Result<DensityMatrix> {
    if rho0.space() != l.space() {
        return Err(Error::Dimension("density matrix and Liouvillian spaces differ".into()));
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter { name: "t".into(), reason: format!("must be >= 0, got {t}") });
    }
    if t == 0.0 {
        return Ok(rho0.clone());
    }
    let v = propagate_vec(l, &rho0.to_vec(), &[t], method)?.pop().expect("one time requested");
    DensityMatrix::from_raw(l.space().clone(), unvectorize(&v, l.dim()))
}

/// Tr(op·ρ).
pub fn expectation(rho: &DensityMatrix, op: &Operator) -> Result<C64> {
    if rho.space() != op.space() {
        return Err(Error::Dimension("operator and density matrix spaces differ".into()));
    }
    Ok(trace_product(op.matrix(), rho.matrix()))
}

/// Tr(A·B) without forming the product.
pub fn trace_product(a: &DMatrix<C64>, b: &DMatrix<C64>) -> C64 {
    let d = a.nrows();
    let mut acc = ZERO;
    for i in 0..d {
        for j in 0..d {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::annihilation_op;
    use crate::model::{build_model, OperatorSet, SystemParams};
    use crate::units::mhz;
    use proptest::prelude::*;

    fn driven_cavity(cutoff: usize, delta: f64, eps: C64, kappa: f64) -> (Liouvillian, Operator) {
        let a = annihilation_op(cutoff).unwrap();
        let ad = a.dag();
        let h = &(&(&ad * &a).scale_re(delta) + &ad.scale(eps)) + &a.scale(eps.conj());
        let l = Liouvillian::from_parts(&h, &[a.scale_re(kappa.sqrt())]).unwrap();
        (l, a)
    }

    fn random_density(space: &HilbertSpace, seed: &[f64]) -> DensityMatrix {
        let d = space.total_dim();
        let b = DMatrix::from_fn(d, d, |i, j| {
            let k = (i * d + j) % seed.len();
            C64::new(seed[k] + 0.01 * i as f64, seed[(k + 1) % seed.len()] - 0.02 * j as f64)
        });
        let m = &b * b.adjoint();
        let tr = m.trace();
        DensityMatrix::new(space.clone(), m / tr).unwrap()
    }

    fn fom_params() -> SystemParams {
        SystemParams { fock_cutoff: 3, ..SystemParams::fom_preset() }
    }

    #[test]
    fn photon_number_decays_at_twice_kappa() {
        let kappa: f64 = 1.7;
        let a = annihilation_op(2).unwrap();
        let h = Operator::zeros(a.space());
        let l = Liouvillian::from_parts(&h, &[a.scale_re(kappa.sqrt())]).unwrap();
        let rho = DensityMatrix::basis(a.space(), &[1]).unwrap();
        let drho = l.apply(rho.matrix());
        let n = &a.dag() * &a;
        let dn = trace_product(n.matrix(), &drho);
        assert!((dn.re + 2.0 * kappa).abs() < 1e-12 && dn.im.abs() < 1e-12);

        // lifetime 1/(2κ) from propagation
        let t = 0.37;
        let rt = evolve(&l, &rho, t).unwrap();
        let nt = expectation(&rt, &n).unwrap().re;
        assert!((nt - (-2.0 * kappa * t).exp()).abs() < 1e-9);
    }

    #[test]
    fn coherent_steady_state_matches_closed_form() {
        let (kappa, delta, eps) = (1.3, 0.4, C64::new(0.35, -0.1));
        let (l, a) = driven_cavity(14, delta, eps, kappa);
        let rho = steady_state(&l).unwrap();
        let alpha = expectation(&rho, &a).unwrap();
        let expected = C64::new(0.0, -1.0) * eps / C64::new(kappa, delta);
        assert!((alpha - expected).norm() < 1e-8, "{alpha} vs {expected}");
        let n = expectation(&rho, &(&a.dag() * &a)).unwrap().re;
        assert!((n - expected.norm_sqr()).abs() < 1e-8);
    }

    #[test]
    fn dark_ground_state_without_raman_drive() {
        let p = SystemParams { omega12: 0.0, fock_cutoff: 2, ..SystemParams::baseline() };
        let l = build_liouvillian(&build_model(&p).unwrap()).unwrap();
        let rho = steady_state(&l).unwrap();
        let ground = DensityMatrix::basis(l.space(), &[0, 0]).unwrap();
        assert!((rho.matrix() - ground.matrix()).camax() < 1e-10);
    }

    #[test]
    fn undriven_atom_is_degenerate() {
        let p = SystemParams { omega12: 0.0, omega23: 0.0, fock_cutoff: 1, ..SystemParams::baseline() };
        let l = build_liouvillian(&build_model(&p).unwrap()).unwrap();
        assert_eq!(steady_state(&l), Err(Error::DegenerateNullSpace(2)));
    }

    #[test]
    fn fom_parameters_have_photons_and_excitation() {
        let p = fom_params();
        let model = build_model(&p).unwrap();
        let l = build_liouvillian(&model).unwrap();
        let rho = steady_state(&l).unwrap();
        let ops = model.operators();
        let n = expectation(&rho, &ops.number()).unwrap().re;
        let s33 = expectation(&rho, &ops.sigma(3, 3).unwrap()).unwrap().re;
        assert!(n > 1e-4 && s33 > 1e-5);
        let residual = l.matrix().matvec(&rho.to_vec()).norm();
        assert!(residual <= 1e-10 * l.norm());
    }

    #[test]
    fn svd_route_matches_lu_route() {
        let p = fom_params();
        let l = build_liouvillian(&build_model(&p).unwrap()).unwrap();
        let lu = steady_state(&l).unwrap();
        let x = null_vector_svd(&l.to_dense()).unwrap();
        let mut m = unvectorize(&x, l.dim());
        let tr = m.trace();
        m /= tr;
        assert!((lu.matrix() - m).camax() < 1e-10);
    }

    #[test]
    fn zero_time_is_identity() {
        let p = fom_params();
        let l = build_liouvillian(&build_model(&p).unwrap()).unwrap();
        let rho = random_density(l.space(), &[0.3, -0.2, 0.5, 0.1, 0.7]);
        assert_eq!(evolve(&l, &rho, 0.0).unwrap(), rho);
    }

    #[test]
    fn semigroup_and_backend_agreement() {
        let p = SystemParams { fock_cutoff: 2, ..fom_params() };
        let l = build_liouvillian(&build_model(&p).unwrap()).unwrap();
        let rho = random_density(l.space(), &[0.3, -0.2, 0.5, 0.1, 0.7, -0.4]);
        let (t1, t2) = (0.31, 0.77);
        let once = evolve(&l, &rho, t1 + t2).unwrap();
        let twice = evolve(&l, &evolve(&l, &rho, t1).unwrap(), t2).unwrap();
        assert!((once.matrix() - twice.matrix()).camax() < 1e-8);
        let ex = evolve_with(&l, &rho, t1 + t2, Propagation::Expm).unwrap();
        assert!((once.matrix() - ex.matrix()).camax() < 1e-8);
    }

    #[test]
    fn long_time_limit_is_steady_state() {
        let p = fom_params();
        let l = build_liouvillian(&build_model(&p).unwrap()).unwrap();
        let rss = steady_state(&l).unwrap();
        let tr = l.relaxation_time().unwrap();
        let rho0 = DensityMatrix::basis(l.space(), &[0, 0]).unwrap();
        let late = evolve(&l, &rho0, 40.0 * tr).unwrap();
        assert!(late.trace_distance(&rss) < 1e-6);
        let ops = OperatorSet::new(3, p.fock_cutoff).unwrap();
        let n_ss = expectation(&rss, &ops.number()).unwrap().re;
        let n_t = expectation(&late, &ops.number()).unwrap().re;
        assert!((n_ss - n_t).abs() < 1e-6);
    }

    #[test]
    fn expectation_basics() {
        let space = HilbertSpace::atom_cavity(3, 2).unwrap();
        let rho = DensityMatrix::basis(&space, &[0, 0]).unwrap();
        let ops = OperatorSet::new(3, 2).unwrap();
        assert_eq!(expectation(&rho, &ops.sigma(1, 1).unwrap()).unwrap(), ONE);
        let r = random_density(&space, &[0.1, 0.9, -0.3]);
        assert!((expectation(&r, &Operator::identity(&space)).unwrap() - ONE).norm() < 1e-12);
        let other = Operator::identity(&HilbertSpace::single(4).unwrap());
        assert!(expectation(&r, &other).is_err());
    }

    #[test]
    fn density_matrix_validation() {
        let space = HilbertSpace::single(2).unwrap();
        let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![C64::new(1.5, 0.0), C64::new(-0.5, 0.0)]));
        assert!(DensityMatrix::new(space.clone(), bad).is_err());
        let nonherm = DMatrix::from_row_slice(2, 2, &[ONE * 0.5, ONE * 0.1, ZERO, ONE * 0.5]);
        assert!(DensityMatrix::new(space, nonherm).is_err());
    }

    #[test]
    fn rk_failure_is_reported_as_stiffness() {
        let p = fom_params();
        let l = build_liouvillian(&build_model(&p).unwrap()).unwrap();
        let rho = DensityMatrix::basis(l.space(), &[0, 0]).unwrap();
        let r = evolve_with(&l, &rho, 1.0, Propagation::RungeKutta { rtol: 1e-30, atol: 1e-30 });
        assert!(matches!(r, Err(Error::StiffnessFailure { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn liouvillian_is_traceless(seed in proptest::collection::vec(-1.0f64..1.0, 7), d12 in -20.0f64..20.0) {
            let p = SystemParams { delta12: d12, fock_cutoff: 2, ..fom_params() };
            let l = build_liouvillian(&build_model(&p).unwrap()).unwrap();
            let rho = random_density(l.space(), &seed);
            let out = l.apply(rho.matrix());
            prop_assert!(out.trace().norm() < 1e-10);
        }

        #[test]
        fn evolution_preserves_state_properties(seed in proptest::collection::vec(-1.0f64..1.0, 5), frac in 0.0f64..1.0) {
            let p = SystemParams { fock_cutoff: 2, ..fom_params() };
            let l = build_liouvillian(&build_model(&p).unwrap()).unwrap();
            let rho = random_density(l.space(), &seed);
            let t = frac * 10.0 / p.kappa;
            let r = evolve(&l, &rho, t).unwrap();
            prop_assert!((r.trace() - ONE).norm() < 1e-9);
            prop_assert!(r.hermiticity_error() < 1e-9);
            prop_assert!(r.min_eigenvalue() > -1e-8);
        }
    }

    #[test]
    fn coherent_drive_cavity_values_in_mhz() {
        // sanity of unit handling: resonant drive, ⟨a⟩ = −iε/κ
        let (l, a) = driven_cavity(10, 0.0, C64::new(mhz(0.2), 0.0), mhz(1.5));
        let rho = steady_state(&l).unwrap();
        let alpha = expectation(&rho, &a).unwrap();
        assert!((alpha - C64::new(0.0, -0.2 / 1.5)).norm() < 1e-8);
    }
}
