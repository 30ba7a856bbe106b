//! Walk models, block densities and block superoperators.
//!
//! Blocks are keyed `(to, from)`: `B_ij` moves mass from site `j` to site
//! `i`, so the superoperator acts on column-stacked site densities.

use std::collections::BTreeMap;
use std::ops::Range;

use num_complex::Complex64 as C64;

use crate::error::{OqwError, Result};
use crate::linalg::{self, ComplexMatrix, VecState, ONE};

/// Tolerance for trace preservation and unitality.
pub const VALIDATION_TOL: f64 = 1e-10;

/// Placement of one site's vectorized internal state inside a global vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    /// Internal dimension `d`; the slot spans `d²` entries.
    pub dim: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.dim * self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.dim == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// How sites sit inside the vector space a superoperator acts on.
///
/// For a walk every site owns a contiguous `n²` block. For a generator on
/// `M_n` whose vertices are the diagonal projections, site `i` is the single
/// entry `E_ii` and the off-diagonal coherences belong to no site.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteLayout {
    total: usize,
    slots: Vec<Slot>,
}

impl SiteLayout {
    pub fn uniform(sites: usize, dim: usize) -> Self {
        let slots = (0..sites)
            .map(|i| Slot {
                offset: i * dim * dim,
                dim,
            })
            .collect();
        SiteLayout {
            total: sites * dim * dim,
            slots,
        }
    }

    /// Vertices of `M_n` as the diagonal matrix units.
    pub fn diagonal(n: usize) -> Self {
        let slots = (0..n).map(|i| Slot { offset: i * n + i, dim: 1 }).collect();
        SiteLayout {
            total: n * n,
            slots,
        }
    }

    pub fn sites(&self) -> usize {
        self.slots.len()
    }

    pub fn total_dim(&self) -> usize {
        self.total
    }

    pub fn slot(&self, site: usize) -> Slot {
        self.slots[site]
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    /// True when the slots tile the whole space.
    pub fn is_block_layout(&self) -> bool {
        let mut next = 0;
        for slot in &self.slots {
            if slot.offset != next {
                return false;
            }
            next += slot.len();
        }
        next == self.total
    }

    /// Uniform internal dimension, if all sites share one.
    pub fn internal_dim(&self) -> Option<usize> {
        let d = self.slots.first()?.dim;
        self.slots.iter().all(|s| s.dim == d).then_some(d)
    }

    pub fn check_site(&self, site: usize) -> Result<()> {
        if site >= self.sites() {
            return Err(OqwError::DimensionMismatch(format!(
                "site {} out of range for {} sites",
                site,
                self.sites()
            )));
        }
        Ok(())
    }

    pub fn projector(&self, site: usize) -> ComplexMatrix {
        let mut p = ComplexMatrix::zeros(self.total, self.total);
        for k in self.slots[site].range() {
            p[(k, k)] = ONE;
        }
        p
    }

    /// Sum of the projectors of every other site.
    pub fn complement(&self, site: usize) -> ComplexMatrix {
        let mut q = ComplexMatrix::zeros(self.total, self.total);
        for (j, slot) in self.slots.iter().enumerate() {
            if j != site {
                for k in slot.range() {
                    q[(k, k)] = ONE;
                }
            }
        }
        q
    }

    /// Trace functional of one slot, embedded in the global space.
    pub fn site_trace_row(&self, site: usize) -> VecState {
        let mut t = VecState::zeros(self.total);
        let slot = self.slots[site];
        for a in 0..slot.dim {
            t[slot.offset + a * slot.dim + a] = ONE;
        }
        t
    }

    /// Total trace functional.
    pub fn trace_row(&self) -> VecState {
        let mut t = VecState::zeros(self.total);
        for i in 0..self.sites() {
            t += self.site_trace_row(i);
        }
        t
    }

    pub fn site_trace(&self, site: usize, x: &VecState) -> C64 {
        let slot = self.slots[site];
        (0..slot.dim)
            .map(|a| x[slot.offset + a * slot.dim + a])
            .sum()
    }

    pub fn total_trace(&self, x: &VecState) -> C64 {
        (0..self.sites()).map(|i| self.site_trace(i, x)).sum()
    }

    /// Global vector carrying `rho` at `site` and zero elsewhere.
    pub fn embed(&self, site: usize, rho: &ComplexMatrix) -> Result<VecState> {
        self.check_site(site)?;
        let slot = self.slots[site];
        if rho.nrows() != slot.dim || rho.ncols() != slot.dim {
            return Err(OqwError::DimensionMismatch(format!(
                "state of order {}x{} at a site of dimension {}",
                rho.nrows(),
                rho.ncols(),
                slot.dim
            )));
        }
        let mut x = VecState::zeros(self.total);
        x.rows_mut(slot.offset, slot.len())
            .copy_from(&linalg::vec(rho)?);
        Ok(x)
    }

    /// Site component of a global vector as a matrix.
    pub fn extract(&self, site: usize, x: &VecState) -> ComplexMatrix {
        let slot = self.slots[site];
        ComplexMatrix::from_fn(slot.dim, slot.dim, |r, c| x[slot.offset + r * slot.dim + c])
    }

    /// Restriction of a global vector to one slot.
    pub fn slot_vector(&self, site: usize, x: &VecState) -> VecState {
        let slot = self.slots[site];
        x.rows(slot.offset, slot.len()).into_owned()
    }
}

/// `ℙ_i` and `ℚ_i` for one site.
#[derive(Debug, Clone)]
pub struct SiteProjector {
    pub site: usize,
    pub p: ComplexMatrix,
    pub q: ComplexMatrix,
}

impl SiteProjector {
    pub fn new(layout: &SiteLayout, site: usize) -> Result<Self> {
        layout.check_site(site)?;
        Ok(SiteProjector {
            site,
            p: layout.projector(site),
            q: layout.complement(site),
        })
    }
}

/// A square operator on stacked vectorized site states.
#[derive(Debug, Clone)]
pub struct SuperOperator {
    pub matrix: ComplexMatrix,
    pub layout: SiteLayout,
}

impl SuperOperator {
    pub fn new(matrix: ComplexMatrix, layout: SiteLayout) -> Result<Self> {
        if matrix.nrows() != layout.total_dim() || matrix.ncols() != layout.total_dim() {
            return Err(OqwError::DimensionMismatch(format!(
                "operator of shape {}x{} for a layout of dimension {}",
                matrix.nrows(),
                matrix.ncols(),
                layout.total_dim()
            )));
        }
        Ok(SuperOperator { matrix, layout })
    }

    pub fn identity(layout: SiteLayout) -> Self {
        let n = layout.total_dim();
        SuperOperator {
            matrix: linalg::identity(n),
            layout,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn sites(&self) -> usize {
        self.layout.sites()
    }

    /// Block `(i, j)`: rows of slot `i`, columns of slot `j`.
    pub fn block(&self, i: usize, j: usize) -> ComplexMatrix {
        extract_block(&self.matrix, &self.layout, i, j)
    }

    pub fn apply(&self, x: &VecState) -> VecState {
        &self.matrix * x
    }

    pub fn projector(&self, site: usize) -> Result<SiteProjector> {
        SiteProjector::new(&self.layout, site)
    }

    pub fn with_matrix(&self, matrix: ComplexMatrix) -> Self {
        SuperOperator {
            matrix,
            layout: self.layout.clone(),
        }
    }

    /// `max_j ‖t·Φ̂ − t‖` restricted to slot columns: zero for trace preserving maps.
    pub fn trace_defect(&self) -> f64 {
        let t = self.layout.trace_row();
        let tp = self.matrix.transpose() * &t;
        let mut defect: f64 = 0.0;
        for slot in self.layout.slots() {
            for k in slot.range() {
                defect = defect.max((tp[k] - t[k]).norm());
            }
        }
        defect
    }
}

pub fn extract_block(m: &ComplexMatrix, layout: &SiteLayout, i: usize, j: usize) -> ComplexMatrix {
    let a = layout.slot(i);
    let b = layout.slot(j);
    m.view((a.offset, b.offset), (a.len(), b.len())).into_owned()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub trace_preserving: bool,
    pub unital: bool,
    /// `max_j ‖Σ_i B_ij* B_ij − I‖`.
    pub max_defect: f64,
    /// `max_i ‖Σ_j B_ij B_ij* − I‖`.
    pub unital_defect: f64,
}

/// Per-site densities `ρ = Σ ρ_i ⊗ |i⟩⟨i|`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDensity {
    components: Vec<ComplexMatrix>,
}

impl BlockDensity {
    /// Validated constructor: every component PSD, total trace 1 within 1e−12.
    pub fn new(components: Vec<ComplexMatrix>) -> Result<Self> {
        let density = BlockDensity { components };
        density.check()?;
        Ok(density)
    }

    fn check(&self) -> Result<()> {
        let dim = self
            .components
            .first()
            .ok_or_else(|| OqwError::InvalidDensity("no sites".into()))?
            .nrows();
        for (i, rho) in self.components.iter().enumerate() {
            if rho.nrows() != dim || rho.ncols() != dim {
                return Err(OqwError::DimensionMismatch(format!(
                    "site {} component is {}x{}, expected {}x{}",
                    i,
                    rho.nrows(),
                    rho.ncols(),
                    dim,
                    dim
                )));
            }
            if !linalg::is_psd(rho) {
                return Err(OqwError::InvalidDensity(format!(
                    "site {} component is not positive semidefinite",
                    i
                )));
            }
        }
        let total = self.total_trace();
        if (total - 1.0).abs() > 1e-12 {
            return Err(OqwError::InvalidDensity(format!(
                "total trace {} differs from 1",
                total
            )));
        }
        Ok(())
    }

    /// A single-site density `rho ⊗ |site⟩⟨site|`.
    pub fn at_site(sites: usize, site: usize, rho: &ComplexMatrix) -> Result<Self> {
        if site >= sites {
            return Err(OqwError::DimensionMismatch(format!(
                "site {} out of range for {} sites",
                site, sites
            )));
        }
        let n = rho.nrows();
        let components = (0..sites)
            .map(|i| {
                if i == site {
                    rho.clone()
                } else {
                    ComplexMatrix::zeros(n, n)
                }
            })
            .collect();
        BlockDensity::new(components)
    }

    /// Reads site components back from a global vector, Hermitizing each
    /// and rescaling to unit total trace.
    pub fn from_vec(layout: &SiteLayout, x: &VecState) -> Result<Self> {
        let mut components: Vec<ComplexMatrix> = (0..layout.sites())
            .map(|i| linalg::hermitian_part(&layout.extract(i, x)))
            .collect();
        let total: f64 = components.iter().map(|c| c.trace().re).sum();
        if total.abs() < 1e-300 {
            return Err(OqwError::InvalidDensity("zero total trace".into()));
        }
        for c in &mut components {
            *c = c.unscale(total);
        }
        BlockDensity::new(components)
    }

    pub(crate) fn from_components_unchecked(components: Vec<ComplexMatrix>) -> Self {
        BlockDensity { components }
    }

    pub fn sites(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].nrows()
    }

    pub fn component(&self, site: usize) -> &ComplexMatrix {
        &self.components[site]
    }

    pub fn components(&self) -> &[ComplexMatrix] {
        &self.components
    }

    pub fn site_trace(&self, site: usize) -> f64 {
        self.components[site].trace().re
    }

    pub fn total_trace(&self) -> f64 {
        self.components.iter().map(|c| c.trace().re).sum()
    }

    pub fn to_vec(&self, layout: &SiteLayout) -> Result<VecState> {
        if layout.sites() != self.sites() {
            return Err(OqwError::DimensionMismatch(format!(
                "density on {} sites for a layout of {} sites",
                self.sites(),
                layout.sites()
            )));
        }
        let mut x = VecState::zeros(layout.total_dim());
        for (i, rho) in self.components.iter().enumerate() {
            x += layout.embed(i, rho)?;
        }
        Ok(x)
    }
}

/// A discrete-time open quantum walk on `sites` vertices with internal dimension `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct OqwModel {
    sites: usize,
    dim: usize,
    blocks: BTreeMap<(usize, usize), ComplexMatrix>,
}

impl OqwModel {
    /// Checks shapes only; see [`OqwModel::validate`] for trace preservation.
    pub fn new(
        sites: usize,
        dim: usize,
        blocks: impl IntoIterator<Item = ((usize, usize), ComplexMatrix)>,
    ) -> Result<Self> {
        if sites == 0 || dim == 0 {
            return Err(OqwError::InvalidModel(
                "site count and internal dimension must be positive".into(),
            ));
        }
        let mut map = BTreeMap::new();
        for ((to, from), b) in blocks {
            if to >= sites || from >= sites {
                return Err(OqwError::DimensionMismatch(format!(
                    "block ({}, {}) outside {} sites",
                    to, from, sites
                )));
            }
            if b.nrows() != dim || b.ncols() != dim {
                return Err(OqwError::DimensionMismatch(format!(
                    "block ({}, {}) is {}x{}, expected {}x{}",
                    to,
                    from,
                    b.nrows(),
                    b.ncols(),
                    dim,
                    dim
                )));
            }
            map.insert((to, from), b);
        }
        Ok(OqwModel {
            sites,
            dim,
            blocks: map,
        })
    }

    /// Like [`OqwModel::new`] but rejects models that are not trace preserving.
    pub fn validated(
        sites: usize,
        dim: usize,
        blocks: impl IntoIterator<Item = ((usize, usize), ComplexMatrix)>,
    ) -> Result<Self> {
        let model = Self::new(sites, dim, blocks)?;
        let report = model.validate();
        if !report.trace_preserving {
            return Err(OqwError::InvalidModel(format!(
                "not trace preserving (defect {:.3e})",
                report.max_defect
            )));
        }
        Ok(model)
    }

    /// Every site stays put.
    pub fn identity_walk(sites: usize, dim: usize) -> Self {
        let blocks = (0..sites).map(|j| ((j, j), linalg::identity(dim)));
        Self::new(sites, dim, blocks).expect("identity walk is well formed")
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn block(&self, to: usize, from: usize) -> Option<&ComplexMatrix> {
        self.blocks.get(&(to, from))
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&(usize, usize), &ComplexMatrix)> {
        self.blocks.iter()
    }

    /// Nonzero blocks leaving `from`.
    pub fn column(&self, from: usize) -> impl Iterator<Item = (usize, &ComplexMatrix)> {
        self.blocks
            .iter()
            .filter(move |((_, j), _)| *j == from)
            .map(|((i, _), b)| (*i, b))
    }

    pub fn layout(&self) -> SiteLayout {
        SiteLayout::uniform(self.sites, self.dim)
    }

    pub fn validate(&self) -> ValidationReport {
        let n = self.dim;
        let mut max_defect: f64 = 0.0;
        let mut unital_defect: f64 = 0.0;
        for j in 0..self.sites {
            let mut column = ComplexMatrix::zeros(n, n);
            let mut row = ComplexMatrix::zeros(n, n);
            for i in 0..self.sites {
                if let Some(b) = self.block(i, j) {
                    column += b.adjoint() * b;
                }
                if let Some(b) = self.block(j, i) {
                    row += b * b.adjoint();
                }
            }
            max_defect = max_defect.max(linalg::operator_norm(&(column - linalg::identity(n))));
            unital_defect = unital_defect.max(linalg::operator_norm(&(row - linalg::identity(n))));
        }
        ValidationReport {
            trace_preserving: max_defect <= VALIDATION_TOL,
            unital: unital_defect <= VALIDATION_TOL,
            max_defect,
            unital_defect,
        }
    }

    /// `Φ̂` with block `(i, j) = B_ij ⊗ conj(B_ij)`.
    pub fn superoperator(&self) -> SuperOperator {
        let layout = self.layout();
        let n2 = self.dim * self.dim;
        let mut m = ComplexMatrix::zeros(layout.total_dim(), layout.total_dim());
        for (&(i, j), b) in &self.blocks {
            let rep = b.kronecker(&b.conjugate());
            m.view_mut((i * n2, j * n2), (n2, n2)).copy_from(&rep);
        }
        SuperOperator { matrix: m, layout }
    }

    /// One step in Kraus form: `ρ_i ↦ Σ_j B_ij ρ_j B_ij*`.
    pub fn apply(&self, rho: &BlockDensity) -> Result<BlockDensity> {
        if rho.sites() != self.sites || rho.dim() != self.dim {
            return Err(OqwError::DimensionMismatch(format!(
                "density on {} sites of dimension {} for a walk on {} sites of dimension {}",
                rho.sites(),
                rho.dim(),
                self.sites,
                self.dim
            )));
        }
        let mut out = vec![ComplexMatrix::zeros(self.dim, self.dim); self.sites];
        for (&(i, j), b) in &self.blocks {
            out[i] += b * rho.component(j) * b.adjoint();
        }
        Ok(BlockDensity::from_components_unchecked(out))
    }
}

/// Checks a single-site density: order `dim`, PSD, unit trace within 1e−10.
pub fn check_site_density(rho: &ComplexMatrix, dim: usize) -> Result<()> {
    if rho.nrows() != dim || rho.ncols() != dim {
        return Err(OqwError::DimensionMismatch(format!(
            "density of order {}x{} at a site of dimension {}",
            rho.nrows(),
            rho.ncols(),
            dim
        )));
    }
    if !linalg::is_psd(rho) {
        return Err(OqwError::InvalidDensity("not positive semidefinite".into()));
    }
    let tr = rho.trace();
    if (tr - ONE).norm() > 1e-10 {
        return Err(OqwError::InvalidDensity(format!("trace {} differs from 1", tr)));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StochasticConvention {
    /// `p_ij` is the probability of moving from `j` to `i`; columns sum to 1.
    Column,
    /// `p_ij` is the probability of moving from `i` to `j`; rows sum to 1.
    Row,
}

/// Classical chain as a walk with one-dimensional sites, `B_ij = [√p_ij]`.
pub fn embed_classical(p: &ComplexMatrix, convention: StochasticConvention) -> Result<OqwModel> {
    if p.nrows() != p.ncols() {
        return Err(OqwError::NotSquare {
            rows: p.nrows(),
            cols: p.ncols(),
        });
    }
    let p = match convention {
        StochasticConvention::Column => p.clone(),
        StochasticConvention::Row => p.transpose(),
    };
    let k = p.nrows();
    let mut blocks = Vec::new();
    for j in 0..k {
        let mut sum = 0.0;
        for i in 0..k {
            let v = p[(i, j)];
            if !v.re.is_finite() || v.im.abs() > 1e-12 || v.re < -1e-12 {
                return Err(OqwError::InvalidModel(format!(
                    "entry ({}, {}) = {} is not a probability",
                    i, j, v
                )));
            }
            sum += v.re;
            if v.re > 0.0 {
                blocks.push(((i, j), ComplexMatrix::from_element(1, 1, C64::new(v.re.sqrt(), 0.0))));
            }
        }
        if (sum - 1.0).abs() > 1e-12 {
            return Err(OqwError::InvalidModel(format!(
                "column {} sums to {}, not 1",
                j, sum
            )));
        }
    }
    OqwModel::new(k, 1, blocks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QViolationKind {
    NonFinite,
    NonReal,
    PositiveDiagonal,
    NegativeOffDiagonal,
    ColumnSum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QViolation {
    pub kind: QViolationKind,
    pub row: usize,
    pub col: usize,
    /// Offending entry, or the column sum for [`QViolationKind::ColumnSum`].
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QMatrixReport {
    pub valid: bool,
    pub violations: Vec<QViolation>,
    pub worst: Option<QViolation>,
}

/// Checks the column-convention Q-matrix conditions.
pub fn validate_qmatrix(q: &ComplexMatrix) -> Result<QMatrixReport> {
    if q.nrows() != q.ncols() {
        return Err(OqwError::NotSquare {
            rows: q.nrows(),
            cols: q.ncols(),
        });
    }
    let k = q.nrows();
    let scale = linalg::max_abs(q).max(1.0);
    let tol = VALIDATION_TOL * scale;
    let mut violations = Vec::new();
    for j in 0..k {
        let mut sum = 0.0;
        for i in 0..k {
            let v = q[(i, j)];
            let kind = if !v.re.is_finite() || !v.im.is_finite() {
                Some(QViolationKind::NonFinite)
            } else if v.im.abs() > tol {
                Some(QViolationKind::NonReal)
            } else if i == j && v.re > tol {
                Some(QViolationKind::PositiveDiagonal)
            } else if i != j && v.re < -tol {
                Some(QViolationKind::NegativeOffDiagonal)
            } else {
                None
            };
            if let Some(kind) = kind {
                let value = if kind == QViolationKind::NonReal { v.im } else { v.re };
                violations.push(QViolation { kind, row: i, col: j, value });
            }
            sum += v.re;
        }
        if sum.is_finite() && sum.abs() > tol {
            violations.push(QViolation {
                kind: QViolationKind::ColumnSum,
                row: k,
                col: j,
                value: sum,
            });
        }
    }
    let worst = violations
        .iter()
        .max_by(|a, b| {
            let ma = if a.value.is_finite() { a.value.abs() } else { f64::INFINITY };
            let mb = if b.value.is_finite() { b.value.abs() } else { f64::INFINITY };
            ma.total_cmp(&mb)
        })
        .cloned();
    Ok(QMatrixReport {
        valid: violations.is_empty(),
        violations,
        worst,
    })
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::linalg::{max_abs, max_abs_vec, real_matrix};

    #[test]
    fn nonunital_two_site_example_validates() {
        let r = catalog::two_site_nonunital().validate();
        assert!(r.trace_preserving);
        assert!(!r.unital);
        assert!(catalog::three_site_unital().validate().unital);
        let id = OqwModel::identity_walk(3, 2).validate();
        assert!(id.trace_preserving && id.unital);
    }

    #[test]
    fn rejects_bad_shapes() {
        let err = OqwModel::new(2, 2, [((0, 0), linalg::identity(3))]);
        assert!(matches!(err, Err(OqwError::DimensionMismatch(_))));
        let err = OqwModel::new(2, 2, [((2, 0), linalg::identity(2))]);
        assert!(err.is_err());
        let leaky = OqwModel::validated(1, 2, [((0, 0), linalg::identity(2).scale(0.5))]);
        assert!(matches!(leaky, Err(OqwError::InvalidModel(_))));
    }

    #[test]
    fn superoperator_blocks_are_conjugation_reps() {
        let model = catalog::two_site_nonunital();
        let phi = model.superoperator();
        assert_eq!(phi.dim(), 8);
        for i in 0..2 {
            for j in 0..2 {
                let expected = linalg::conj_rep(model.block(i, j).unwrap()).unwrap();
                assert!(max_abs(&(phi.block(i, j) - expected)) < 1e-15);
            }
        }
        let id = OqwModel::identity_walk(2, 2).superoperator();
        assert_eq!(id.matrix, linalg::identity(8));
    }

    #[test]
    fn one_step_from_site_one() {
        let model = catalog::two_site_nonunital();
        let rho = BlockDensity::at_site(2, 0, &linalg::matrix_unit(2, 0, 0)).unwrap();
        let out = model.apply(&rho).unwrap();
        let expected = linalg::matrix_unit(2, 1, 1).scale(0.5);
        assert!(max_abs(&(out.component(1) - expected)) < 1e-15);
        assert!((out.total_trace() - 1.0).abs() < 1e-15);
        let via_vec = phi_apply(&model, &rho);
        for i in 0..2 {
            assert!(max_abs(&(via_vec.component(i) - out.component(i))) < 1e-15);
        }
    }

    fn phi_apply(model: &OqwModel, rho: &BlockDensity) -> BlockDensity {
        let layout = model.layout();
        let x = model.superoperator().apply(&rho.to_vec(&layout).unwrap());
        BlockDensity::from_vec(&layout, &x).unwrap()
    }

    #[test]
    fn identity_walk_fixes_every_density() {
        let model = OqwModel::identity_walk(2, 2);
        let rho = BlockDensity::new(vec![
            real_matrix(&[&[0.25, 0.1], &[0.1, 0.25]]),
            real_matrix(&[&[0.3, 0.0], &[0.0, 0.2]]),
        ])
        .unwrap();
        assert_eq!(model.apply(&rho).unwrap(), rho);
    }

    #[test]
    fn density_validation() {
        assert!(BlockDensity::new(vec![real_matrix(&[&[1.0, 0.0], &[0.0, 0.5]])]).is_err());
        assert!(BlockDensity::new(vec![real_matrix(&[&[1.5, 0.0], &[0.0, -0.5]])]).is_err());
        assert!(BlockDensity::at_site(2, 1, &linalg::matrix_unit(2, 0, 0)).is_ok());
    }

    #[test]
    fn classical_embedding() {
        let flip = real_matrix(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let model = embed_classical(&flip, StochasticConvention::Column).unwrap();
        let phi = model.superoperator();
        assert_eq!(phi.matrix, flip);
        let rho = BlockDensity::at_site(2, 0, &linalg::identity(1)).unwrap();
        assert!((model.apply(&rho).unwrap().site_trace(1) - 1.0).abs() < 1e-15);
        let id = embed_classical(&linalg::identity(3), StochasticConvention::Column).unwrap();
        assert_eq!(id, OqwModel::identity_walk(3, 1));
        let bad = real_matrix(&[&[0.5, 1.0], &[0.6, 0.0]]);
        assert!(embed_classical(&bad, StochasticConvention::Column).is_err());
        let rows = real_matrix(&[&[0.25, 0.75], &[1.0, 0.0]]);
        let m = embed_classical(&rows, StochasticConvention::Row).unwrap();
        assert!(max_abs(&(m.superoperator().matrix - rows.transpose())) < 1e-15);
    }

    #[test]
    fn qmatrix_validation() {
        assert!(validate_qmatrix(&catalog::four_vertex_qmatrix()).unwrap().valid);
        assert!(validate_qmatrix(&ComplexMatrix::zeros(3, 3)).unwrap().valid);
        let bad = real_matrix(&[&[0.5, 1.0], &[-0.5, -1.0]]);
        let report = validate_qmatrix(&bad).unwrap();
        assert!(!report.valid);
        assert!(report
            .violations
            .iter()
            .any(|v| v.kind == QViolationKind::PositiveDiagonal && v.row == 0 && v.col == 0));
        assert!(validate_qmatrix(&ComplexMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn projector_algebra() {
        let layout = SiteLayout::uniform(3, 2);
        for i in 0..3 {
            let sp = SiteProjector::new(&layout, i).unwrap();
            assert_eq!(&sp.p * &sp.p, sp.p);
            assert_eq!(&sp.p * &sp.q, ComplexMatrix::zeros(12, 12));
            assert_eq!(&sp.p + &sp.q, linalg::identity(12));
        }
        let diag = SiteLayout::diagonal(3);
        assert!(!diag.is_block_layout());
        let x = diag.embed(1, &linalg::identity(1)).unwrap();
        assert_eq!(x[4], ONE);
        assert!(max_abs_vec(&(diag.trace_row() - linalg::vec(&linalg::identity(3)).unwrap())) == 0.0);
    }
}
