//! Far-field post-processing: radiation patterns of solved currents,
//! directivity, bistatic RCS, and the CSV artifacts.

use crate::kernels::{BasisSpace, MediumParams};
use crate::quadrature::points;
use crate::system::{ReducedSystem, SystemError};
use crate::{C64, CVec, Vec3};
use nalgebra::Vector3;
use std::f64::consts::PI;
use std::io::Write;

/// Tensor-product sampling grid over the sphere.
#[derive(Debug, Clone)]
pub struct AngleGrid {
    /// polar angles in radians, ascending
    pub thetas: Vec<f64>,
    /// azimuth angles in radians, ascending
    pub phis: Vec<f64>,
}

impl AngleGrid {
    /// Full sphere at a given angular step (degrees). The poles are included;
    /// phi covers [0, 360) half-open.
    pub fn full_sphere(step_deg: f64) -> Self {
        let n_t = (180.0 / step_deg).round() as usize;
        let n_p = (360.0 / step_deg).round() as usize;
        Self {
            thetas: (0..=n_t).map(|i| PI * i as f64 / n_t as f64).collect(),
            phis: (0..n_p).map(|i| 2.0 * PI * i as f64 / n_p as f64).collect(),
        }
    }

    /// Single phi-cut with theta from 0 to 180 degrees inclusive.
    pub fn phi_cut(phi_deg: f64, step_deg: f64) -> Self {
        let n_t = (180.0 / step_deg).round() as usize;
        Self {
            thetas: (0..=n_t).map(|i| PI * i as f64 / n_t as f64).collect(),
            phis: vec![phi_deg.to_radians()],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FarFieldSample {
    pub theta: f64,
    pub phi: f64,
    /// normalized field r e^{+jk r} E_theta, in V
    pub e_theta: C64,
    pub e_phi: C64,
}

/// Far-field pattern on a tensor grid, stored theta-major.
#[derive(Debug, Clone)]
pub struct FarFieldPattern {
    pub frequency: f64,
    pub grid: AngleGrid,
    pub samples: Vec<FarFieldSample>,
    eta0: f64,
}

/// A weighted point current: the far field is computed from quadrature
/// samples of the surface currents, so one code path serves RWG expansions
/// and idealized dipole elements alike.
#[derive(Debug, Clone)]
pub struct CurrentSample {
    pub position: Vec3,
    /// current density times quadrature weight (A m)
    pub moment: Vector3<C64>,
}

/// Quadrature samples of an expanded surface current.
pub fn sample_current(space: &BasisSpace, x: &CVec, order: usize) -> Vec<CurrentSample> {
    let pts = points(order).expect("supported quadrature order");
    let mut out = Vec::new();
    for (ti, terms) in space.tri_terms.iter().enumerate() {
        if terms.is_empty() {
            continue;
        }
        let verts = space.mesh.tri_vertices(ti);
        let area = space.mesh.tri_area(ti);
        for p in pts {
            let r = verts[0] * p.bary[0] + verts[1] * p.bary[1] + verts[2] * p.bary[2];
            let mut j = Vector3::<C64>::zeros();
            for t in terms {
                let f = (r - space.mesh.vertices[t.free_vertex]) * t.scale;
                j += f.map(|c| C64::new(c, 0.0)) * x[t.func];
            }
            out.push(CurrentSample { position: r, moment: j * C64::new(p.weight * area, 0.0) });
        }
    }
    out
}

/// Mirror the samples across a PEC plane z = z0: image of an electric
/// current has its horizontal components negated.
fn image_samples(samples: &[CurrentSample], z0: f64) -> Vec<CurrentSample> {
    samples
        .iter()
        .map(|s| CurrentSample {
            position: Vec3::new(s.position.x, s.position.y, 2.0 * z0 - s.position.z),
            moment: Vector3::new(-s.moment.x, -s.moment.y, s.moment.z),
        })
        .collect()
}

/// Radiation pattern of a set of current samples. With `image_plane` set the
/// mirrored copies are added, which doubles the forward field of currents on
/// the plane ("image theory doubling"); the pattern is then physical only in
/// the upper half space.
pub fn far_field(
    sources: &[CurrentSample],
    medium: &MediumParams,
    grid: &AngleGrid,
    image_plane: Option<f64>,
) -> FarFieldPattern {
    let mut all = sources.to_vec();
    if let Some(z0) = image_plane {
        all.extend(image_samples(sources, z0));
    }
    let k0 = medium.k0;
    let pref = C64::new(0.0, -medium.omega * medium.mu0 / (4.0 * PI));
    let mut samples = Vec::with_capacity(grid.thetas.len() * grid.phis.len());
    for &theta in &grid.thetas {
        for &phi in &grid.phis {
            let (st, ct) = theta.sin_cos();
            let (sp, cp) = phi.sin_cos();
            let u = Vec3::new(st * cp, st * sp, ct);
            let th_hat = Vec3::new(ct * cp, ct * sp, -st);
            let ph_hat = Vec3::new(-sp, cp, 0.0);
            let mut n = Vector3::<C64>::zeros();
            for s in &all {
                let phase = C64::from_polar(1.0, k0 * u.dot(&s.position));
                n += s.moment * phase;
            }
            // transverse projection: E has no radial component in the far zone
            let e_theta = pref * n.dot(&th_hat.map(|c| C64::new(c, 0.0)));
            let e_phi = pref * n.dot(&ph_hat.map(|c| C64::new(c, 0.0)));
            samples.push(FarFieldSample { theta, phi, e_theta, e_phi });
        }
    }
    FarFieldPattern { frequency: medium.frequency, grid: grid.clone(), samples, eta0: medium.eta0() }
}

impl FarFieldPattern {
    pub fn sample(&self, it: usize, ip: usize) -> &FarFieldSample {
        &self.samples[it * self.grid.phis.len() + ip]
    }

    /// Radiation intensity U = |E|^2 / (2 eta0), in W/sr.
    pub fn intensity(&self, s: &FarFieldSample) -> f64 {
        (s.e_theta.norm_sqr() + s.e_phi.norm_sqr()) / (2.0 * self.eta0)
    }

    /// Total radiated power by trapezoidal integration over the grid.
    /// Requires a full-sphere grid.
    pub fn radiated_power(&self) -> f64 {
        let nt = self.grid.thetas.len();
        let np = self.grid.phis.len();
        assert!(nt >= 3 && np >= 4, "radiated power needs a full-sphere grid");
        let dphi = 2.0 * PI / np as f64;
        let mut p = 0.0;
        for it in 0..nt - 1 {
            let (t0, t1) = (self.grid.thetas[it], self.grid.thetas[it + 1]);
            for ip in 0..np {
                let u0 = self.intensity(self.sample(it, ip)) * t0.sin();
                let u1 = self.intensity(self.sample(it + 1, ip)) * t1.sin();
                p += 0.5 * (u0 + u1) * (t1 - t0) * dphi;
            }
        }
        p
    }

    /// Directivity (linear) per sample, normalized by the radiated power of
    /// the supplied full-sphere pattern.
    pub fn directivity(&self, power: f64) -> Vec<f64> {
        self.samples.iter().map(|s| 4.0 * PI * self.intensity(s) / power).collect()
    }

    /// Bistatic cross-section per sample for a plane wave of the given
    /// incident amplitude: sigma = 4 pi |F|^2 / |E_i|^2.
    pub fn rcs_bistatic(&self, incident_amplitude: f64) -> Vec<f64> {
        let ei2 = incident_amplitude * incident_amplitude;
        self.samples
            .iter()
            .map(|s| 4.0 * PI * (s.e_theta.norm_sqr() + s.e_phi.norm_sqr()) / ei2)
            .collect()
    }
}

/// Scatterer currents of every element recovered from the solved Ehat.
pub fn recover_currents(sys: &ReducedSystem, e_hat: &CVec) -> Result<Vec<CVec>, SystemError> {
    (0..sys.blocks.len()).map(|m| sys.recover_element_current(e_hat, m)).collect()
}

/// Far-field quadrature order for sampled currents.
pub const FAR_FIELD_ORDER: usize = 6;

/// Current samples of the whole array from recovered scatterer currents.
pub fn array_current_samples(sys: &ReducedSystem, currents: &[CVec]) -> Vec<CurrentSample> {
    let mut out = Vec::new();
    for (b, j) in sys.blocks.iter().zip(currents) {
        out.extend(sample_current(&b.scatterer_space, j, FAR_FIELD_ORDER));
    }
    out
}

/// CSV artifact: one row per sample with directivity relative to the
/// supplied full-sphere radiated power.
pub fn write_pattern_csv<W: Write>(
    w: &mut W,
    pattern: &FarFieldPattern,
    power: f64,
) -> std::io::Result<()> {
    writeln!(w, "theta_deg,phi_deg,D_dBi,re_E_theta,im_E_theta,re_E_phi,im_E_phi")?;
    for s in &pattern.samples {
        let d = 4.0 * PI * pattern.intensity(s) / power;
        let dbi = 10.0 * d.max(1e-300).log10();
        writeln!(
            w,
            "{:.3},{:.3},{:.6},{:.9e},{:.9e},{:.9e},{:.9e}",
            s.theta.to_degrees(),
            s.phi.to_degrees(),
            dbi,
            s.e_theta.re,
            s.e_theta.im,
            s.e_phi.re,
            s.e_phi.im
        )?;
    }
    Ok(())
}
