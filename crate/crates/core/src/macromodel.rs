//! Per-element reduced-order model: the six coupling matrices between the
//! scatterer surface and its enclosing equivalent surface, the condensed
//! operators A, B, the transfer matrix T, and a cache keyed by element shape.
//!
//! Unknowns per element: J (RWG on the scatterer), H-hat (RWG on the
//! equivalent surface) and E-hat (rotated dual functions on the equivalent
//! surface). Eliminating H-hat from the two interior field equations gives
//!   A = G_EJ - G_EH Ghat_HH^-1 Ghat_HJ-style condensation:
//!   A = G^(E,J)  - G^(E,H) [G^(Ehat,H)]^-1 G^(Ehat,J)
//!   B = G^(E,Ehat) - G^(E,H) [G^(Ehat,H)]^-1 G^(Ehat,Ehat)
//!   T = [G^(Ehat,H)]^-1 G^(Ehat,J)
//! with A J + B Ehat = 0, so currents recover as J = -A^-1 B Ehat, and the
//! equivalent current radiating outside is Jhat = T J.

use crate::basis::{assemble_gram, build_dual_rwg, build_rwg, DualRwgSpace, RwgSpace};
use crate::kernels::{assemble_k, assemble_l, BasisSpace, MediumParams};
use crate::linalg::{Csr, LuFactors};
use crate::mesh::{ElementGeometry, MeshError, ShapeId};
use crate::quadrature::QuadratureRule;
use crate::{C64, CMat, CVec};
use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

#[derive(Debug, thiserror::Error)]
pub enum MacromodelError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("{matrix} is singular at {frequency:.6e} Hz; shift the analysis frequency or refine the equivalent surface")]
    Singular { matrix: &'static str, frequency: f64 },
    #[error("{matrix} condition estimate {cond:.3e} exceeds 1e12 at {frequency:.6e} Hz (near internal resonance or discretization pathology)")]
    IllConditioned { matrix: &'static str, cond: f64, frequency: f64 },
    #[error("coefficient vector has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("macromodel dump i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("macromodel dump rejected: {0}")]
    BadDump(String),
}

/// Function spaces of one element, built once per distinct shape.
pub struct ElementBases {
    pub scatterer: RwgSpace,
    pub hat: RwgSpace,
    pub hat_dual: DualRwgSpace,
}

pub fn build_element_bases(elem: &ElementGeometry) -> Result<ElementBases, MeshError> {
    let scat = Arc::new(elem.scatterer_mesh.clone());
    let hat_mesh = Arc::new(elem.equivalent_mesh.clone());
    Ok(ElementBases {
        scatterer: build_rwg(scat)?,
        hat: build_rwg(hat_mesh.clone())?,
        hat_dual: build_dual_rwg(hat_mesh)?,
    })
}

/// The six Galerkin blocks of the interior equations plus the Gram matrix D
/// pairing RWG tests with the rotated dual expansion of E-hat.
pub struct ElementMatrices {
    /// N x N, L operator, scatterer tested and sourced
    pub g_ej: CMat,
    /// N x Nhat, L operator, H-hat sources
    pub g_eh: CMat,
    /// N x Nhat, K operator, E-hat (dual) sources
    pub g_ee: CMat,
    /// Nhat x N
    pub g_hat_j: CMat,
    /// Nhat x Nhat
    pub g_hat_h: CMat,
    /// Nhat x Nhat: principal-value K plus half the identity (observation on
    /// the source surface)
    pub g_hat_e: CMat,
    /// Nhat x Nhat sparse Gram <Lambda_n, n x BC_n'>
    pub gram: Csr<f64>,
}

pub fn build_element_matrices(
    bases: &ElementBases,
    medium: &MediumParams,
    quad: &QuadratureRule,
) -> Result<ElementMatrices, MacromodelError> {
    let bs_s = BasisSpace::from_rwg(&bases.scatterer);
    let bs_h = BasisSpace::from_rwg(&bases.hat);
    let bs_d = BasisSpace::from_dual(&bases.hat_dual);
    let gram = assemble_gram(&bases.hat, &bases.hat_dual)?;
    let mut g_hat_e = assemble_k(&bs_h, &bs_d, medium, quad);
    for i in 0..g_hat_e.nrows() {
        let (cols, vals) = gram.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            g_hat_e[(i, j)] += C64::new(0.5 * v, 0.0);
        }
    }
    Ok(ElementMatrices {
        g_ej: assemble_l(&bs_s, &bs_s, medium, quad),
        g_eh: assemble_l(&bs_s, &bs_h, medium, quad),
        g_ee: assemble_k(&bs_s, &bs_d, medium, quad),
        g_hat_j: assemble_l(&bs_h, &bs_s, medium, quad),
        g_hat_h: assemble_l(&bs_h, &bs_h, medium, quad),
        g_hat_e,
        gram,
    })
}

/// Condensed per-element model. Immutable once built; shared across all
/// placements of the same shape.
#[derive(Debug, Clone)]
pub struct Macromodel {
    pub shape_id: ShapeId,
    pub frequency: f64,
    pub n_scatterer: usize,
    pub n_hat: usize,
    /// Nhat x N transfer matrix [G^(Ehat,H)]^-1 G^(Ehat,J)
    pub t: CMat,
    /// N x Nhat
    pub b: CMat,
    pub a_lu: LuFactors,
    pub gheh_lu: LuFactors,
    /// D block of the reduced exterior system
    pub gram: Csr<f64>,
}

const COND_LIMIT: f64 = 1e12;

pub fn build_macromodel(
    elem: &ElementGeometry,
    medium: &MediumParams,
    quad: &QuadratureRule,
) -> Result<Macromodel, MacromodelError> {
    // condense in the canonical local frame so identical shapes produce
    // bitwise identical macromodels regardless of placement
    let local = elem.localized();
    let bases = build_element_bases(&local)?;
    let m = build_element_matrices(&bases, medium, quad)?;
    condense(elem.shape_id, medium, &m)
}

fn condense(
    shape_id: ShapeId,
    medium: &MediumParams,
    m: &ElementMatrices,
) -> Result<Macromodel, MacromodelError> {
    let n = m.g_ej.nrows();
    let n_hat = m.g_hat_h.nrows();
    let freq = medium.frequency;
    let gheh_lu = LuFactors::factor(&m.g_hat_h)
        .map_err(|_| MacromodelError::Singular { matrix: "G^(Ehat,H)", frequency: freq })?;
    let cond = gheh_lu.condition_estimate(&m.g_hat_h, 20);
    if cond > COND_LIMIT {
        return Err(MacromodelError::IllConditioned {
            matrix: "G^(Ehat,H)",
            cond,
            frequency: freq,
        });
    }
    let t = gheh_lu.solve_mat(&m.g_hat_j);
    let hinv_ghat_e = gheh_lu.solve_mat(&m.g_hat_e);
    let a = &m.g_ej - &m.g_eh * &t;
    let b = &m.g_ee - &m.g_eh * hinv_ghat_e;
    let a_lu = LuFactors::factor(&a)
        .map_err(|_| MacromodelError::Singular { matrix: "A", frequency: freq })?;
    let cond_a = a_lu.condition_estimate(&a, 20);
    if cond_a > COND_LIMIT {
        return Err(MacromodelError::IllConditioned { matrix: "A", cond: cond_a, frequency: freq });
    }
    Ok(Macromodel {
        shape_id,
        frequency: freq,
        n_scatterer: n,
        n_hat,
        t,
        b,
        a_lu,
        gheh_lu,
        gram: m.gram.clone(),
    })
}

impl Macromodel {
    /// Jhat = T J
    pub fn equivalent_current(&self, j: &CVec) -> Result<CVec, MacromodelError> {
        if j.len() != self.n_scatterer {
            return Err(MacromodelError::DimensionMismatch {
                expected: self.n_scatterer,
                got: j.len(),
            });
        }
        Ok(&self.t * j)
    }

    /// J = A^-1 feed - A^-1 B Ehat. `feed` carries a delta-gap vector when
    /// the element is driven; scattering-only elements pass `None`.
    pub fn recover_current(
        &self,
        e_hat: &CVec,
        feed: Option<&CVec>,
    ) -> Result<CVec, MacromodelError> {
        if e_hat.len() != self.n_hat {
            return Err(MacromodelError::DimensionMismatch {
                expected: self.n_hat,
                got: e_hat.len(),
            });
        }
        let mut rhs = -(&self.b * e_hat);
        if let Some(v) = feed {
            if v.len() != self.n_scatterer {
                return Err(MacromodelError::DimensionMismatch {
                    expected: self.n_scatterer,
                    got: v.len(),
                });
            }
            rhs += v;
        }
        Ok(self.a_lu.solve_vec(&rhs))
    }

    /// T A^-1 B y, the per-element inner pipeline of the reduced matvec.
    pub fn apply_tab(&self, y: &CVec) -> CVec {
        let mut w = &self.b * y;
        self.a_lu.solve_in_place(w.as_mut_slice());
        &self.t * w
    }
}

/// Shape-keyed cache with atomic insert-or-get. Distinct shapes build
/// concurrently; concurrent requests for the same shape build exactly once.
#[derive(Default)]
pub struct MacromodelCache {
    cells: Mutex<HashMap<ShapeId, Arc<Mutex<Option<Arc<Macromodel>>>>>>,
    builds: AtomicUsize,
    hits: AtomicUsize,
}

impl MacromodelCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn builds(&self) -> usize {
        self.builds.load(Ordering::SeqCst)
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn lookup_or_build(
        &self,
        elem: &ElementGeometry,
        medium: &MediumParams,
        quad: &QuadratureRule,
    ) -> Result<Arc<Macromodel>, MacromodelError> {
        let cell = {
            let mut map = self.cells.lock().unwrap();
            map.entry(elem.shape_id).or_default().clone()
        };
        let mut slot = cell.lock().unwrap();
        if let Some(model) = slot.as_ref() {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(model.clone());
        }
        let model = Arc::new(build_macromodel(elem, medium, quad)?);
        self.builds.fetch_add(1, Ordering::SeqCst);
        *slot = Some(model.clone());
        Ok(model)
    }
}

const DUMP_MAGIC: &[u8; 8] = b"MACMODL\0";
const DUMP_VERSION: u32 = 1;

impl Macromodel {
    /// Versioned binary dump so element libraries survive across runs.
    pub fn dump<W: Write>(&self, w: &mut W) -> Result<(), MacromodelError> {
        w.write_all(DUMP_MAGIC)?;
        w.write_all(&DUMP_VERSION.to_le_bytes())?;
        w.write_all(&self.shape_id.0)?;
        w.write_all(&self.frequency.to_le_bytes())?;
        w.write_all(&(self.n_scatterer as u64).to_le_bytes())?;
        w.write_all(&(self.n_hat as u64).to_le_bytes())?;
        write_cmat(w, &self.t)?;
        write_cmat(w, &self.b)?;
        write_cmat(w, &self.a_lu.lu)?;
        write_pivots(w, &self.a_lu.pivots)?;
        write_cmat(w, &self.gheh_lu.lu)?;
        write_pivots(w, &self.gheh_lu.pivots)?;
        w.write_all(&(self.gram.row_ptr.len() as u64 - 1).to_le_bytes())?;
        w.write_all(&(self.gram.ncols as u64).to_le_bytes())?;
        w.write_all(&(self.gram.nnz() as u64).to_le_bytes())?;
        for &p in &self.gram.row_ptr {
            w.write_all(&(p as u64).to_le_bytes())?;
        }
        for &c in &self.gram.col_idx {
            w.write_all(&(c as u64).to_le_bytes())?;
        }
        for &v in &self.gram.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load<R: Read>(r: &mut R) -> Result<Self, MacromodelError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(MacromodelError::BadDump("bad magic".into()));
        }
        let version = read_u64(r, 4)? as u32;
        if version != DUMP_VERSION {
            return Err(MacromodelError::BadDump(format!("unsupported version {version}")));
        }
        let mut id = [0u8; 32];
        r.read_exact(&mut id)?;
        let frequency = read_f64(r)?;
        let n = read_u64(r, 8)? as usize;
        let n_hat = read_u64(r, 8)? as usize;
        let t = read_cmat(r, n_hat, n)?;
        let b = read_cmat(r, n, n_hat)?;
        let a_lu = LuFactors { lu: read_cmat(r, n, n)?, pivots: read_pivots(r, n)? };
        let gheh_lu =
            LuFactors { lu: read_cmat(r, n_hat, n_hat)?, pivots: read_pivots(r, n_hat)? };
        let nrows = read_u64(r, 8)? as usize;
        let ncols = read_u64(r, 8)? as usize;
        let nnz = read_u64(r, 8)? as usize;
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        for _ in 0..=nrows {
            row_ptr.push(read_u64(r, 8)? as usize);
        }
        if row_ptr.last() != Some(&nnz) {
            return Err(MacromodelError::BadDump("inconsistent sparse row pointers".into()));
        }
        let mut col_idx = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            col_idx.push(read_u64(r, 8)? as usize);
        }
        let mut values = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            values.push(read_f64(r)?);
        }
        Ok(Self {
            shape_id: ShapeId(id),
            frequency,
            n_scatterer: n,
            n_hat,
            t,
            b,
            a_lu,
            gheh_lu,
            gram: Csr { nrows, ncols, row_ptr, col_idx, values },
        })
    }
}

fn write_cmat<W: Write>(w: &mut W, m: &CMat) -> std::io::Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_all(&m[(i, j)].re.to_le_bytes())?;
            w.write_all(&m[(i, j)].im.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_cmat<R: Read>(r: &mut R, nrows: usize, ncols: usize) -> Result<CMat, MacromodelError> {
    let mut m = CMat::zeros(nrows, ncols);
    for i in 0..nrows {
        for j in 0..ncols {
            let re = read_f64(r)?;
            let im = read_f64(r)?;
            m[(i, j)] = C64::new(re, im);
        }
    }
    Ok(m)
}

fn write_pivots<W: Write>(w: &mut W, p: &[usize]) -> std::io::Result<()> {
    for &x in p {
        w.write_all(&(x as u64).to_le_bytes())?;
    }
    Ok(())
}

fn read_pivots<R: Read>(r: &mut R, n: usize) -> Result<Vec<usize>, MacromodelError> {
    (0..n).map(|_| Ok(read_u64(r, 8)? as usize)).collect()
}

fn read_u64<R: Read>(r: &mut R, bytes: usize) -> Result<u64, MacromodelError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf[..bytes])?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, MacromodelError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

/// Dense complex copy of a real sparse matrix (small per-element D blocks).
pub fn gram_to_cmat(gram: &Csr<f64>) -> CMat {
    let n = gram.row_ptr.len() - 1;
    let mut m = CMat::zeros(n, gram.ncols);
    for i in 0..n {
        let (cols, vals) = gram.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            m[(i, j)] = C64::new(v, 0.0);
        }
    }
    m
}
