//! Right-hand-side construction: plane waves, Hertzian dipoles, delta-gap
//! voltage sources, and image-theory handling for a PEC ground plane.

use crate::basis::RwgSpace;
use crate::kernels::{BasisSpace, MediumParams};
use crate::quadrature::{points, QuadratureRule};
use crate::{C64, CVec, Vec3};
use nalgebra::Vector3;

#[derive(Debug, thiserror::Error)]
pub enum ExcitationError {
    #[error("plane-wave polarization not orthogonal to propagation direction (|p.k| = {0:.3e})")]
    NotOrthogonal(f64),
    #[error("field evaluation within {0} m of the dipole position")]
    DipoleSingularity(f64),
    #[error("delta-gap edge {0} does not carry a basis function")]
    EdgeNotFound(usize),
    #[error("operation requires a {0} excitation")]
    WrongVariant(&'static str),
}

/// Minimum allowed distance from a dipole feed to any evaluation point.
pub const DIPOLE_EXCLUSION_M: f64 = 1e-6;

#[derive(Debug, Clone)]
pub enum ExcitationKind {
    PlaneWave {
        /// unit propagation direction
        direction: Vec3,
        /// unit polarization, orthogonal to `direction`
        polarization: Vec3,
        /// amplitude in V/m; phase reference at the origin
        amplitude: C64,
    },
    HertzianDipole {
        position: Vec3,
        /// current moment I*l in A m
        moment: Vector3<C64>,
    },
    DeltaGap {
        element: usize,
        edge: usize,
        voltage: C64,
    },
}

#[derive(Debug, Clone)]
pub struct Excitation {
    pub kind: ExcitationKind,
    /// z-height of an optional PEC ground plane handled by image theory
    pub image_plane: Option<f64>,
}

impl Excitation {
    pub fn plane_wave(
        direction: Vec3,
        polarization: Vec3,
        amplitude: C64,
    ) -> Result<Self, ExcitationError> {
        let d = direction.normalize();
        let p = polarization.normalize();
        let dot = d.dot(&p).abs();
        if dot > 1e-12 {
            return Err(ExcitationError::NotOrthogonal(dot));
        }
        Ok(Self {
            kind: ExcitationKind::PlaneWave { direction: d, polarization: p, amplitude },
            image_plane: None,
        })
    }

    pub fn hertzian_dipole(position: Vec3, moment: Vector3<C64>) -> Self {
        Self { kind: ExcitationKind::HertzianDipole { position, moment }, image_plane: None }
    }

    pub fn delta_gap(element: usize, edge: usize, voltage: C64) -> Self {
        Self { kind: ExcitationKind::DeltaGap { element, edge, voltage }, image_plane: None }
    }

    pub fn with_image_plane(mut self, z: f64) -> Self {
        self.image_plane = Some(z);
        self
    }

    /// Incident electric field at `r`. With an image plane set, the image
    /// contribution is E_img(r) = diag(-1,-1,1) E(mirror(r)): tangential
    /// components cancel on the plane for any source above it.
    pub fn incident_field(
        &self,
        medium: &MediumParams,
        r: &Vec3,
    ) -> Result<Vector3<C64>, ExcitationError> {
        let direct = self.source_field(medium, r)?;
        let Some(z0) = self.image_plane else {
            return Ok(direct);
        };
        let rm = Vec3::new(r.x, r.y, 2.0 * z0 - r.z);
        let em = self.source_field(medium, &rm)?;
        Ok(direct + Vector3::new(-em.x, -em.y, em.z))
    }

    fn source_field(
        &self,
        medium: &MediumParams,
        r: &Vec3,
    ) -> Result<Vector3<C64>, ExcitationError> {
        let k0 = medium.k0;
        match &self.kind {
            ExcitationKind::PlaneWave { direction, polarization, amplitude } => {
                let phase = C64::from_polar(1.0, -k0 * direction.dot(r));
                Ok(polarization.map(|c| C64::new(c, 0.0)) * (*amplitude * phase))
            }
            ExcitationKind::HertzianDipole { position, moment } => {
                let rv = r - position;
                let dist = rv.norm();
                if dist < DIPOLE_EXCLUSION_M {
                    return Err(ExcitationError::DipoleSingularity(dist));
                }
                let rhat = rv / dist;
                let eta = medium.eta0();
                let e = C64::from_polar(1.0, -k0 * dist);
                let kr = k0 * dist;
                let jkr_inv = C64::new(0.0, -1.0) / kr; // 1/(j k r)
                let radial = rhat.map(|c| C64::new(c, 0.0))
                    * (moment.dot(&rhat.map(|c| C64::new(c, 0.0))))
                    * C64::new(eta / (2.0 * std::f64::consts::PI * dist * dist), 0.0)
                    * (C64::new(1.0, 0.0) + jkr_inv)
                    * e;
                let trans_dir = {
                    let rr = rhat.map(|c| C64::new(c, 0.0));
                    moment - rr * moment.dot(&rr)
                };
                let trans = trans_dir
                    * C64::new(0.0, -eta * k0 / (4.0 * std::f64::consts::PI * dist))
                    * (C64::new(1.0, 0.0) + jkr_inv - C64::new(1.0 / (kr * kr), 0.0))
                    * e;
                Ok(radial + trans)
            }
            // the delta gap impresses a field only inside the gap; it enters
            // through delta_gap_rhs, not through a free-space field
            ExcitationKind::DeltaGap { .. } => Ok(Vector3::zeros()),
        }
    }
}

/// Galerkin projection V_n = -<Lambda_n, E_inc>, the right-hand side of the
/// tested field equations.
pub fn project_rhs(
    exc: &Excitation,
    space: &BasisSpace,
    medium: &MediumParams,
    quad: &QuadratureRule,
) -> Result<CVec, ExcitationError> {
    let pts = points(quad.order).expect("validated order");
    let mut v = CVec::zeros(space.dof_count);
    for (ti, terms) in space.tri_terms.iter().enumerate() {
        if terms.is_empty() {
            continue;
        }
        let verts = space.mesh.tri_vertices(ti);
        let area = space.mesh.tri_area(ti);
        for p in pts {
            let r = verts[0] * p.bary[0] + verts[1] * p.bary[1] + verts[2] * p.bary[2];
            let e = exc.incident_field(medium, &r)?;
            for t in terms {
                let f = (r - space.mesh.vertices[t.free_vertex]) * t.scale;
                v[t.func] -= f.map(|c| C64::new(c, 0.0)).dot(&e) * (p.weight * area);
            }
        }
    }
    Ok(v)
}

/// Per-element delta-gap feed vector: <Lambda, E_imp> = V * edge_length on
/// the fed DoF, zero elsewhere. The system layer propagates it through the
/// macromodel algebra (reduced RHS -G T A^{-1} v, recovery +A^{-1} v).
pub fn delta_gap_rhs(
    space: &RwgSpace,
    edge: usize,
    voltage: C64,
) -> Result<CVec, ExcitationError> {
    let Some(&Some(func)) = space.edge_function.get(edge) else {
        return Err(ExcitationError::EdgeNotFound(edge));
    };
    let mut v = CVec::zeros(space.dof_count());
    v[func] = voltage * space.functions[func].edge_length;
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::build_rwg;
    use crate::kernels::C0;
    use crate::mesh::{generate_sphere, parse_mesh, MeshFormat};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    #[test]
    fn plane_wave_phase_reference() {
        let m = MediumParams::free_space(3e8);
        let exc = Excitation::plane_wave(
            Vec3::new(0.0, 0.0, -1.0),
            Vec3::new(1.0, 0.0, 0.0),
            C64::new(1.0, 0.0),
        )
        .unwrap();
        let e = exc.incident_field(&m, &Vec3::zeros()).unwrap();
        assert_relative_eq!(e.x.re, 1.0, max_relative = 1e-14);
        assert!(e.x.im.abs() < 1e-14 && e.y.norm() < 1e-14 && e.z.norm() < 1e-14);
    }

    #[test]
    fn plane_wave_rejects_nonorthogonal_polarization() {
        assert!(matches!(
            Excitation::plane_wave(
                Vec3::new(0.0, 0.0, 1.0),
                Vec3::new(0.1, 0.0, 1.0),
                C64::new(1.0, 0.0)
            ),
            Err(ExcitationError::NotOrthogonal(_))
        ));
    }

    #[test]
    fn plane_wave_satisfies_wave_equation() {
        let m = MediumParams::free_space(3e8);
        let lambda = m.wavelength();
        let h = lambda / 1000.0;
        let exc = Excitation::plane_wave(
            Vec3::new(0.6, 0.48, 0.64).normalize(),
            Vec3::new(0.8, -0.36, -0.48).normalize(),
            C64::new(2.0, 1.0),
        )
        .unwrap();
        for r0 in [Vec3::new(0.3, -0.2, 0.7), Vec3::new(-1.1, 0.4, 0.05)] {
            let e0 = exc.incident_field(&m, &r0).unwrap();
            let mut lap = Vector3::<C64>::zeros();
            for ax in 0..3 {
                let mut dr = Vec3::zeros();
                dr[ax] = h;
                // fourth-order stencil: the O(h^2) one is not accurate enough
                // at h = lambda/1000 for a 1e-6 residual check
                let e1p = exc.incident_field(&m, &(r0 + dr)).unwrap();
                let e1m = exc.incident_field(&m, &(r0 - dr)).unwrap();
                let e2p = exc.incident_field(&m, &(r0 + dr * 2.0)).unwrap();
                let e2m = exc.incident_field(&m, &(r0 - dr * 2.0)).unwrap();
                lap += ((e1p + e1m) * C64::new(16.0, 0.0)
                    - (e2p + e2m)
                    - e0 * C64::new(30.0, 0.0))
                    * C64::new(1.0 / (12.0 * h * h), 0.0);
            }
            let resid = (lap + e0 * C64::new(m.k0 * m.k0, 0.0)).norm();
            assert!(resid < 1e-6 * (m.k0 * m.k0 * e0.norm()), "wave equation residual {resid:e}");
        }
    }

    #[test]
    fn dipole_far_field_decay() {
        let m = MediumParams::free_space(3e8);
        let k0 = m.k0;
        let exc = Excitation::hertzian_dipole(
            Vec3::zeros(),
            Vector3::new(C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(1.0, 0.0)),
        );
        let r1 = 100.0 / k0;
        let dir = Vec3::new(1.0, 0.0, 0.0); // broadside of a z dipole
        let e1 = exc.incident_field(&m, &(dir * r1)).unwrap().norm();
        let e2 = exc.incident_field(&m, &(dir * (2.0 * r1))).unwrap().norm();
        assert!((e2 / e1 - 0.5).abs() < 0.01 * 0.5, "ratio {}", e2 / e1);
    }

    #[test]
    fn dipole_singularity_rejected() {
        let m = MediumParams::free_space(3e8);
        let exc = Excitation::hertzian_dipole(
            Vec3::new(1.0, 2.0, 3.0),
            Vector3::new(C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)),
        );
        assert!(matches!(
            exc.incident_field(&m, &Vec3::new(1.0, 2.0, 3.0 + 1e-9)),
            Err(ExcitationError::DipoleSingularity(_))
        ));
    }

    #[test]
    fn image_plane_cancels_tangential_field() {
        let m = MediumParams::free_space(3e8);
        let h = 0.3;
        let exc = Excitation::hertzian_dipole(
            Vec3::new(0.0, 0.0, h),
            Vector3::new(C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.5, 0.2)),
        )
        .with_image_plane(0.0);
        for pt in [
            Vec3::new(0.2, 0.1, 0.0),
            Vec3::new(-0.7, 0.4, 0.0),
            Vec3::new(1.5, -2.0, 0.0),
        ] {
            let e = exc.incident_field(&m, &pt).unwrap();
            let tan = (e.x.norm_sqr() + e.y.norm_sqr()).sqrt();
            assert!(tan < 1e-10 * e.norm().max(1e-30), "tangential residual {tan:e}");
        }
    }

    fn sphere_space(radius: f64) -> BasisSpace {
        let mesh = Arc::new(generate_sphere(Vec3::zeros(), radius, 1).unwrap());
        BasisSpace::from_rwg(&build_rwg(mesh).unwrap())
    }

    #[test]
    fn rhs_linearity_and_zero() {
        let m = MediumParams::free_space(3e8);
        let space = sphere_space(0.2);
        let q = QuadratureRule::default();
        let mk = |a: C64| {
            Excitation::plane_wave(Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 0.0), a).unwrap()
        };
        let zero = project_rhs(&mk(C64::new(0.0, 0.0)), &space, &m, &q).unwrap();
        assert!(zero.norm() == 0.0);
        let v1 = project_rhs(&mk(C64::new(1.0, 0.0)), &space, &m, &q).unwrap();
        let va = project_rhs(&mk(C64::new(-2.5, 1.5)), &space, &m, &q).unwrap();
        let diff = (&va - &v1 * C64::new(-2.5, 1.5)).norm() / va.norm();
        assert!(diff < 1e-12, "linearity violation {diff:e}");
    }

    #[test]
    fn rhs_quadrature_converged() {
        // lambda/10 mesh: 3-pt vs 6-pt projection differs well under 0.1%
        let radius = 0.2;
        let mesh = Arc::new(generate_sphere(Vec3::zeros(), radius, 1).unwrap());
        let h = mesh.max_edge_length();
        let m = MediumParams::free_space(C0 / (10.0 * h));
        let space = BasisSpace::from_rwg(&build_rwg(mesh).unwrap());
        let exc = Excitation::plane_wave(
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(1.0, 0.0, 0.0),
            C64::new(1.0, 0.0),
        )
        .unwrap();
        let q3 = QuadratureRule { order: 3, ..Default::default() };
        let q6 = QuadratureRule { order: 6, ..Default::default() };
        let v3 = project_rhs(&exc, &space, &m, &q3).unwrap();
        let v6 = project_rhs(&exc, &space, &m, &q6).unwrap();
        let rel = (&v3 - &v6).norm() / v6.norm();
        assert!(rel < 1e-3, "projection quadrature sensitivity {rel:e}");
    }

    #[test]
    fn delta_gap_vector() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 3 2\nf 1 2 4\nf 1 4 3\nf 2 3 4\n";
        let mesh = Arc::new(parse_mesh(text, MeshFormat::SimpleTri, "tetra").unwrap());
        let space = build_rwg(mesh).unwrap();
        let edge = space.functions[2].edge_index;
        let v = delta_gap_rhs(&space, edge, C64::new(1.0, 0.0)).unwrap();
        assert_relative_eq!(v[2].re, space.functions[2].edge_length, max_relative = 1e-14);
        assert_eq!(v.iter().filter(|c| c.norm() > 0.0).count(), 1);
        let vz = delta_gap_rhs(&space, edge, C64::new(0.0, 0.0)).unwrap();
        assert!(vz.norm() == 0.0);
        assert!(matches!(
            delta_gap_rhs(&space, 999, C64::new(1.0, 0.0)),
            Err(ExcitationError::EdgeNotFound(999))
        ));
    }
}
