//! Array-level assembly: the reduced exterior system
//! (D - G^(Ehat,Jhat) T A^-1 B) Ehat = Vhat exposed as an abstract operator,
//! and the direct (unreduced) EFIE system used as the validation baseline.

use crate::basis::{build_rwg, RwgSpace};
use crate::excitation::{delta_gap_rhs, project_rhs, Excitation, ExcitationError, ExcitationKind};
use crate::kernels::{assemble_l, BasisSpace, MediumParams};
use crate::linalg::{Csr, CsrBuilder};
use crate::macromodel::{Macromodel, MacromodelCache, MacromodelError};
use crate::mesh::{ElementGeometry, MeshError, ShapeId};
use crate::quadrature::QuadratureRule;
use crate::{CMat, CVec, Vec3};
use std::collections::HashMap;
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum SystemError {
    #[error("equivalent surfaces of elements {a} and {b} overlap or touch; array elements must be disjoint")]
    OverlappingElements { a: usize, b: usize },
    #[error("element list is empty")]
    NoElements,
    #[error("delta-gap feed names element {element}, but the array has {count} elements")]
    FeedElementOutOfRange { element: usize, count: usize },
    #[error("vector has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Macromodel(#[from] MacromodelError),
    #[error(transparent)]
    Excitation(#[from] ExcitationError),
}

/// Full description of one solve: geometry, medium, source.
pub struct ArrayProblem {
    pub elements: Vec<ElementGeometry>,
    pub medium: MediumParams,
    pub excitation: Excitation,
    pub quad: QuadratureRule,
}

impl ArrayProblem {
    /// Disjointness of the equivalent surfaces, by axis-aligned bounding
    /// boxes. The equivalent surfaces are boxes in every supported
    /// configuration, so the AABB test is exact; touching counts as a
    /// violation ("none of the array elements touch one another").
    pub fn check_disjoint(&self) -> Result<(), SystemError> {
        if self.elements.is_empty() {
            return Err(SystemError::NoElements);
        }
        let boxes: Vec<(Vec3, Vec3)> =
            self.elements.iter().map(|e| e.equivalent_mesh.bounding_box()).collect();
        for a in 0..boxes.len() {
            for b in a + 1..boxes.len() {
                let (amin, amax) = boxes[a];
                let (bmin, bmax) = boxes[b];
                let overlap =
                    (0..3).all(|k| amin[k] <= bmax[k] && bmin[k] <= amax[k]);
                if overlap {
                    return Err(SystemError::OverlappingElements { a, b });
                }
            }
        }
        Ok(())
    }
}

/// Abstract application of the G^(Ehat,Jhat) coupling operator, so the
/// reduced system works identically over a dense matrix or an AIM operator.
pub trait CouplingOperator: Send + Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &CVec) -> CVec;
    /// rough storage footprint in bytes, for run statistics
    fn memory_bytes(&self) -> usize;
}

impl CouplingOperator for CMat {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &CVec) -> CVec {
        self * x
    }

    fn memory_bytes(&self) -> usize {
        self.len() * std::mem::size_of::<crate::C64>()
    }
}

/// Per-element state of the assembled reduced system.
pub struct ElementBlock {
    pub model: Arc<Macromodel>,
    /// RWG space on the placed equivalent surface
    pub hat_rwg: RwgSpace,
    pub hat_space: BasisSpace,
    /// RWG space on the placed scatterer
    pub scatterer_rwg: RwgSpace,
    pub scatterer_space: BasisSpace,
    /// start of this element's Ehat coefficients in the global vector
    pub offset_hat: usize,
    /// start of this element's J coefficients in the direct-system ordering
    pub offset_scatterer: usize,
    /// delta-gap feed vector on scatterer DoF, when this element is driven
    pub feed: Option<CVec>,
}

/// The reduced exterior system. `matvec` applies
/// D y - G^(Ehat,Jhat) (T (A^-1 (B y))) without ever forming the product.
pub struct ReducedSystem {
    pub blocks: Vec<ElementBlock>,
    /// global block-diagonal Gram matrix D
    pub d: Csr<f64>,
    pub coupling: Box<dyn CouplingOperator>,
    pub v_hat: CVec,
    pub n_hat: usize,
    pub n_scatterer: usize,
}

impl ReducedSystem {
    pub fn dim(&self) -> usize {
        self.n_hat
    }

    fn slice(y: &CVec, offset: usize, len: usize) -> CVec {
        y.rows(offset, len).into_owned()
    }

    /// Block-diagonal inner pipeline z = T A^-1 B y.
    fn apply_inner(&self, y: &CVec) -> CVec {
        let mut z = CVec::zeros(self.n_hat);
        for b in &self.blocks {
            let ym = Self::slice(y, b.offset_hat, b.model.n_hat);
            let zm = b.model.apply_tab(&ym);
            z.rows_mut(b.offset_hat, b.model.n_hat).copy_from(&zm);
        }
        z
    }

    pub fn matvec(&self, y: &CVec) -> Result<CVec, SystemError> {
        if y.len() != self.n_hat {
            return Err(SystemError::DimensionMismatch { expected: self.n_hat, got: y.len() });
        }
        let mut out = CVec::zeros(self.n_hat);
        self.d.accumulate_mul_c(y.as_slice(), out.as_mut_slice(), 1.0);
        let w = self.coupling.apply(&self.apply_inner(y));
        Ok(out - w)
    }

    /// Scatterer current of element `m` recovered from the solved Ehat.
    pub fn recover_element_current(&self, e_hat: &CVec, m: usize) -> Result<CVec, SystemError> {
        let b = &self.blocks[m];
        let em = Self::slice(e_hat, b.offset_hat, b.model.n_hat);
        Ok(b.model.recover_current(&em, b.feed.as_ref())?)
    }

    /// Equivalent current Jhat_m = T_m J_m of element `m`.
    pub fn equivalent_element_current(
        &self,
        e_hat: &CVec,
        m: usize,
    ) -> Result<CVec, SystemError> {
        let j = self.recover_element_current(e_hat, m)?;
        Ok(self.blocks[m].model.equivalent_current(&j)?)
    }
}

fn build_blocks(
    problem: &ArrayProblem,
    cache: &MacromodelCache,
) -> Result<Vec<ElementBlock>, SystemError> {
    let feed = match problem.excitation.kind {
        ExcitationKind::DeltaGap { element, edge, voltage } => {
            if element >= problem.elements.len() {
                return Err(SystemError::FeedElementOutOfRange {
                    element,
                    count: problem.elements.len(),
                });
            }
            Some((element, edge, voltage))
        }
        _ => None,
    };
    let mut blocks = Vec::with_capacity(problem.elements.len());
    let mut offset_hat = 0;
    let mut offset_scatterer = 0;
    for (m, elem) in problem.elements.iter().enumerate() {
        let model = cache.lookup_or_build(elem, &problem.medium, &problem.quad)?;
        let hat_rwg = build_rwg(Arc::new(elem.equivalent_mesh.clone()))?;
        let scatterer_rwg = build_rwg(Arc::new(elem.scatterer_mesh.clone()))?;
        let hat_space = BasisSpace::from_rwg(&hat_rwg);
        let scatterer_space = BasisSpace::from_rwg(&scatterer_rwg);
        let feed_vec = match feed {
            Some((fm, edge, voltage)) if fm == m => {
                Some(delta_gap_rhs(&scatterer_rwg, edge, voltage)?)
            }
            _ => None,
        };
        let block = ElementBlock {
            offset_hat,
            offset_scatterer,
            feed: feed_vec,
            model,
            hat_rwg,
            hat_space,
            scatterer_rwg,
            scatterer_space,
        };
        offset_hat += block.model.n_hat;
        offset_scatterer += block.model.n_scatterer;
        blocks.push(block);
    }
    Ok(blocks)
}

/// Dense G^(Ehat,Jhat): RWG-tested L operator between all pairs of placed
/// equivalent surfaces. Self-blocks are singular-quadrature dense and reused
/// across placements of the same shape; cross blocks are mirrored through the
/// exact Galerkin symmetry of L.
pub fn assemble_dense_coupling(
    blocks: &[ElementBlock],
    medium: &MediumParams,
    quad: &QuadratureRule,
) -> CMat {
    let n_hat: usize = blocks.iter().map(|b| b.model.n_hat).sum();
    let mut g = CMat::zeros(n_hat, n_hat);
    let mut self_blocks: HashMap<ShapeId, CMat> = HashMap::new();
    for (m, bm) in blocks.iter().enumerate() {
        let sb = self_blocks
            .entry(bm.model.shape_id)
            .or_insert_with(|| assemble_l(&bm.hat_space, &bm.hat_space, medium, quad));
        g.view_mut((bm.offset_hat, bm.offset_hat), (bm.model.n_hat, bm.model.n_hat))
            .copy_from(sb);
        for bp in blocks.iter().skip(m + 1) {
            let blk = assemble_l(&bm.hat_space, &bp.hat_space, medium, quad);
            g.view_mut((bm.offset_hat, bp.offset_hat), (bm.model.n_hat, bp.model.n_hat))
                .copy_from(&blk);
            g.view_mut((bp.offset_hat, bm.offset_hat), (bp.model.n_hat, bm.model.n_hat))
                .copy_from(&blk.transpose());
        }
    }
    g
}

fn assemble_gram_global(blocks: &[ElementBlock]) -> Csr<f64> {
    let n_hat: usize = blocks.iter().map(|b| b.model.n_hat).sum();
    let mut builder = CsrBuilder::new(n_hat);
    for b in blocks {
        let gram = &b.model.gram;
        for i in 0..b.model.n_hat {
            let (cols, vals) = gram.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                builder.push(b.offset_hat + j, v);
            }
            builder.finish_row();
        }
    }
    builder.build()
}

/// Excitation vector: incident-field projection on each equivalent surface,
/// plus the feed propagated through the macromodel algebra. With a gap feed v
/// on element m the interior balance is A J + B Ehat = v, so eliminating J
/// moves -G^(Ehat,Jhat) T A^-1 v to the right-hand side.
fn assemble_v_hat(
    blocks: &[ElementBlock],
    coupling: &dyn CouplingOperator,
    problem: &ArrayProblem,
) -> Result<CVec, SystemError> {
    let n_hat: usize = blocks.iter().map(|b| b.model.n_hat).sum();
    let mut v = CVec::zeros(n_hat);
    if !matches!(problem.excitation.kind, ExcitationKind::DeltaGap { .. }) {
        for b in blocks {
            let vm = project_rhs(&problem.excitation, &b.hat_space, &problem.medium, &problem.quad)?;
            v.rows_mut(b.offset_hat, b.model.n_hat).copy_from(&vm);
        }
    }
    if blocks.iter().any(|b| b.feed.is_some()) {
        let mut z = CVec::zeros(n_hat);
        for b in blocks {
            if let Some(feed) = &b.feed {
                let jf = b.model.a_lu.solve_vec(feed);
                let zf = b.model.equivalent_current(&jf)?;
                z.rows_mut(b.offset_hat, b.model.n_hat).copy_from(&zf);
            }
        }
        v -= coupling.apply(&z);
    }
    Ok(v)
}

/// Build the reduced exterior system with dense coupling. Macromodels come
/// from `cache`, so identical shapes condense once.
pub fn assemble_reduced(
    problem: &ArrayProblem,
    cache: &MacromodelCache,
) -> Result<ReducedSystem, SystemError> {
    problem.check_disjoint()?;
    let blocks = build_blocks(problem, cache)?;
    let coupling = assemble_dense_coupling(&blocks, &problem.medium, &problem.quad);
    finish_reduced(problem, blocks, Box::new(coupling))
}

/// Assemble with a caller-provided coupling backend (the AIM path).
pub fn finish_reduced(
    problem: &ArrayProblem,
    blocks: Vec<ElementBlock>,
    coupling: Box<dyn CouplingOperator>,
) -> Result<ReducedSystem, SystemError> {
    let n_hat: usize = blocks.iter().map(|b| b.model.n_hat).sum();
    let n_scatterer: usize = blocks.iter().map(|b| b.model.n_scatterer).sum();
    let d = assemble_gram_global(&blocks);
    let v_hat = assemble_v_hat(&blocks, coupling.as_ref(), problem)?;
    Ok(ReducedSystem { blocks, d, coupling, v_hat, n_hat, n_scatterer })
}

pub fn build_element_blocks(
    problem: &ArrayProblem,
    cache: &MacromodelCache,
) -> Result<Vec<ElementBlock>, SystemError> {
    problem.check_disjoint()?;
    build_blocks(problem, cache)
}

/// The unreduced baseline: Galerkin EFIE over all scatterer DoF of the whole
/// array.
pub struct DirectSystem {
    pub spaces: Vec<BasisSpace>,
    pub rwg: Vec<RwgSpace>,
    pub offsets: Vec<usize>,
    pub matrix: CMat,
    pub rhs: CVec,
    pub n: usize,
}

pub fn assemble_direct(problem: &ArrayProblem) -> Result<DirectSystem, SystemError> {
    problem.check_disjoint()?;
    let feed = match problem.excitation.kind {
        ExcitationKind::DeltaGap { element, edge, voltage } => {
            if element >= problem.elements.len() {
                return Err(SystemError::FeedElementOutOfRange {
                    element,
                    count: problem.elements.len(),
                });
            }
            Some((element, edge, voltage))
        }
        _ => None,
    };
    let mut rwg = Vec::new();
    let mut spaces = Vec::new();
    let mut offsets = Vec::new();
    let mut n = 0;
    for elem in &problem.elements {
        let space = build_rwg(Arc::new(elem.scatterer_mesh.clone()))?;
        offsets.push(n);
        n += space.dof_count();
        spaces.push(BasisSpace::from_rwg(&space));
        rwg.push(space);
    }
    let mut matrix = CMat::zeros(n, n);
    let mut self_blocks: HashMap<ShapeId, CMat> = HashMap::new();
    for (m, elem) in problem.elements.iter().enumerate() {
        let nm = rwg[m].dof_count();
        let sb = self_blocks
            .entry(elem.shape_id)
            .or_insert_with(|| assemble_l(&spaces[m], &spaces[m], &problem.medium, &problem.quad));
        matrix.view_mut((offsets[m], offsets[m]), (nm, nm)).copy_from(sb);
        for p in m + 1..problem.elements.len() {
            let np = rwg[p].dof_count();
            let blk = assemble_l(&spaces[m], &spaces[p], &problem.medium, &problem.quad);
            matrix.view_mut((offsets[m], offsets[p]), (nm, np)).copy_from(&blk);
            matrix.view_mut((offsets[p], offsets[m]), (np, nm)).copy_from(&blk.transpose());
        }
    }
    let mut rhs = CVec::zeros(n);
    if !matches!(problem.excitation.kind, ExcitationKind::DeltaGap { .. }) {
        for (m, space) in spaces.iter().enumerate() {
            let vm = project_rhs(&problem.excitation, space, &problem.medium, &problem.quad)?;
            rhs.rows_mut(offsets[m], rwg[m].dof_count()).copy_from(&vm);
        }
    }
    if let Some((fm, edge, voltage)) = feed {
        let v = delta_gap_rhs(&rwg[fm], edge, voltage)?;
        let mut row = rhs.rows_mut(offsets[fm], rwg[fm].dof_count());
        row += v;
    }
    Ok(DirectSystem { spaces, rwg, offsets, matrix, rhs, n })
}
