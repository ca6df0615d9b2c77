//! Run configuration: TOML schema with explicit SI unit suffixes in key
//! names, plus construction of the solver problem from a parsed config.

use crate::excitation::Excitation;
use crate::kernels::{MediumParams, C0};
use crate::mesh::{
    generate_box, generate_cross, generate_meander, generate_plate, generate_sphere, load_mesh,
    ElementGeometry, MeshFormat, TriangleMesh,
};
use crate::quadrature::QuadratureRule;
use crate::solver::{Preconditioner, SolveOptions};
use crate::system::ArrayProblem;
use crate::{C64, Vec3};
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config schema error: {0}")]
    Schema(String),
    #[error("geometry error: {0}")]
    Geometry(#[from] crate::mesh::MeshError),
}

fn schema(msg: impl Into<String>) -> ConfigError {
    ConfigError::Schema(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Direct,
    Macromodel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    #[default]
    Dense,
    Aim,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub frequency_hz: f64,
    pub method: Method,
    #[serde(default)]
    pub coupling: Coupling,
    pub array: ArrayLayout,
    pub element: Vec<ElementConfig>,
    pub excitation: ExcitationConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub aim: AimConfig,
    #[serde(default)]
    pub quadrature: QuadConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayLayout {
    pub n_x: usize,
    pub n_y: usize,
    pub spacing_x_m: f64,
    pub spacing_y_m: f64,
    /// Optional per-position element ids, row-major (y-outer), length
    /// n_x * n_y. Defaults to the first element for every position.
    #[serde(default)]
    pub elements: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementConfig {
    pub id: String,
    pub scatterer: ShapeConfig,
    pub surface: SurfaceConfig,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeConfig {
    Plate {
        width_m: f64,
        height_m: f64,
        edge_m: f64,
    },
    Cross {
        arm_length_m: f64,
        arm_width_m: f64,
        edge_m: f64,
    },
    Meander {
        width_m: f64,
        height_m: f64,
        trace_m: f64,
        turns: usize,
        edge_m: f64,
    },
    Sphere {
        radius_m: f64,
        subdivisions: usize,
    },
    Mesh {
        path: PathBuf,
        format: MeshFormatConfig,
    },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshFormatConfig {
    MshAscii,
    SimpleTri,
}

impl From<MeshFormatConfig> for MeshFormat {
    fn from(f: MeshFormatConfig) -> Self {
        match f {
            MeshFormatConfig::MshAscii => MeshFormat::MshAscii,
            MeshFormatConfig::SimpleTri => MeshFormat::SimpleTri,
        }
    }
}

/// Equivalent surface: an axis-aligned box around the element origin.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceConfig {
    pub size_x_m: f64,
    pub size_y_m: f64,
    pub size_z_m: f64,
    pub edge_m: f64,
    /// Box center offset from the element position (defaults to the
    /// element position itself).
    #[serde(default)]
    pub center_offset_m: [f64; 3],
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExcitationConfig {
    PlaneWave {
        direction: [f64; 3],
        polarization: [f64; 3],
        #[serde(default = "one")]
        amplitude_v_per_m: f64,
        image_plane_z_m: Option<f64>,
    },
    HertzianDipole {
        position_m: [f64; 3],
        moment_a_m: [f64; 3],
        image_plane_z_m: Option<f64>,
    },
    DeltaGap {
        element: usize,
        edge: usize,
        #[serde(default = "one")]
        voltage_v: f64,
        image_plane_z_m: Option<f64>,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub rel_tol: f64,
    pub max_iters: usize,
    pub restart: usize,
    pub preconditioner: PrecondConfig,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecondConfig {
    None,
    BlockJacobi,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-6,
            max_iters: 1000,
            restart: 200,
            preconditioner: PrecondConfig::BlockJacobi,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AimConfig {
    /// Grid spacing; 0 selects lambda/10 automatically.
    pub spacing_m: f64,
    pub stencil_order: usize,
    pub near_stencils: usize,
}

impl Default for AimConfig {
    fn default() -> Self {
        Self {
            spacing_m: 0.0,
            stencil_order: 3,
            near_stencils: 4,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadConfig {
    pub order: usize,
    pub near_order: usize,
    pub near_threshold: f64,
}

impl Default for QuadConfig {
    fn default() -> Self {
        let q = QuadratureRule::default();
        Self {
            order: q.order,
            near_order: q.near_order,
            near_threshold: q.near_threshold,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let cfg: RunConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.frequency_hz > 0.0) {
            return Err(schema("frequency_hz must be positive"));
        }
        if self.array.n_x == 0 || self.array.n_y == 0 {
            return Err(schema("array.n_x and array.n_y must be at least 1"));
        }
        if self.element.is_empty() {
            return Err(schema("at least one [[element]] is required"));
        }
        let count = self.array.n_x * self.array.n_y;
        if !self.array.elements.is_empty() {
            if self.array.elements.len() != count {
                return Err(schema(format!(
                    "array.elements has {} entries, expected n_x * n_y = {}",
                    self.array.elements.len(),
                    count
                )));
            }
            for id in &self.array.elements {
                if !self.element.iter().any(|e| &e.id == id) {
                    return Err(schema(format!("array.elements names unknown element id '{id}'")));
                }
            }
        }
        if count > 1 && (!(self.array.spacing_x_m > 0.0) || !(self.array.spacing_y_m > 0.0)) {
            return Err(schema("array spacing must be positive for multi-element layouts"));
        }
        let quad = self.quadrature_rule();
        quad.validate().map_err(schema)?;
        let solve = self.solve_options();
        solve.validate().map_err(schema)?;
        if self.coupling == Coupling::Aim && self.method == Method::Direct {
            return Err(schema("coupling = \"aim\" requires method = \"macromodel\""));
        }
        if self.aim.stencil_order == 0 {
            return Err(schema("aim.stencil_order must be at least 1"));
        }
        if let ExcitationConfig::DeltaGap { element, .. } = self.excitation {
            if element >= count {
                return Err(schema(format!(
                    "delta-gap feed element {element} out of range for {count} positions"
                )));
            }
        }
        Ok(())
    }

    pub fn medium(&self) -> MediumParams {
        MediumParams::free_space(self.frequency_hz)
    }

    pub fn quadrature_rule(&self) -> QuadratureRule {
        QuadratureRule {
            order: self.quadrature.order,
            near_order: self.quadrature.near_order,
            near_threshold: self.quadrature.near_threshold,
        }
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            rel_tol: self.solver.rel_tol,
            max_iters: self.solver.max_iters,
            restart: self.solver.restart,
            preconditioner: match self.solver.preconditioner {
                PrecondConfig::None => Preconditioner::None,
                PrecondConfig::BlockJacobi => Preconditioner::BlockJacobi,
            },
        }
    }

    pub fn aim_params(&self) -> crate::aim::AimParams {
        let spacing = if self.aim.spacing_m > 0.0 {
            self.aim.spacing_m
        } else {
            C0 / self.frequency_hz / 10.0
        };
        crate::aim::AimParams {
            spacing,
            n_o: self.aim.stencil_order,
            n_nf: self.aim.near_stencils,
        }
    }

    fn element_by_id(&self, id: &str) -> &ElementConfig {
        self.element
            .iter()
            .find(|e| e.id == id)
            .expect("ids validated")
    }

    /// Grid position centers, row-major with y outer, centered on the origin.
    pub fn positions(&self) -> Vec<Vec3> {
        let (nx, ny) = (self.array.n_x, self.array.n_y);
        let (dx, dy) = (self.array.spacing_x_m, self.array.spacing_y_m);
        let mut out = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                out.push(Vec3::new(
                    (i as f64 - (nx as f64 - 1.0) / 2.0) * dx,
                    (j as f64 - (ny as f64 - 1.0) / 2.0) * dy,
                    0.0,
                ));
            }
        }
        out
    }

    fn build_scatterer(&self, e: &ElementConfig, at: Vec3) -> Result<TriangleMesh, ConfigError> {
        Ok(match &e.scatterer {
            ShapeConfig::Plate {
                width_m,
                height_m,
                edge_m,
            } => generate_plate(at, *width_m, *height_m, *edge_m)?,
            ShapeConfig::Cross {
                arm_length_m,
                arm_width_m,
                edge_m,
            } => generate_cross(at, *arm_length_m, *arm_width_m, *edge_m)?,
            ShapeConfig::Meander {
                width_m,
                height_m,
                trace_m,
                turns,
                edge_m,
            } => generate_meander(at, *width_m, *height_m, *trace_m, *turns, *edge_m)?,
            ShapeConfig::Sphere {
                radius_m,
                subdivisions,
            } => generate_sphere(at, *radius_m, *subdivisions)?,
            ShapeConfig::Mesh { path, format } => {
                load_mesh(path, (*format).into())?.translated(at)
            }
        })
    }

    pub fn build_problem(&self) -> Result<ArrayProblem, ConfigError> {
        let positions = self.positions();
        let default_id = &self.element[0].id;
        let mut elements = Vec::with_capacity(positions.len());
        for (p, at) in positions.iter().enumerate() {
            let id = if self.array.elements.is_empty() {
                default_id
            } else {
                &self.array.elements[p]
            };
            let ec = self.element_by_id(id);
            let scatterer = self.build_scatterer(ec, *at)?;
            let center = at + Vec3::from(ec.surface.center_offset_m);
            let surface = generate_box(
                center,
                Vec3::new(
                    ec.surface.size_x_m,
                    ec.surface.size_y_m,
                    ec.surface.size_z_m,
                ),
                ec.surface.edge_m,
            )?;
            elements.push(ElementGeometry::new(scatterer, surface)?);
        }
        Ok(ArrayProblem {
            elements,
            medium: self.medium(),
            excitation: self.build_excitation(),
            quad: self.quadrature_rule(),
        })
    }

    pub fn build_excitation(&self) -> Excitation {
        let re = |v: f64| C64::new(v, 0.0);
        let (exc, plane) = match &self.excitation {
            ExcitationConfig::PlaneWave {
                direction,
                polarization,
                amplitude_v_per_m,
                image_plane_z_m,
            } => (
                Excitation::plane_wave(
                    Vec3::from(*direction),
                    Vec3::from(*polarization),
                    re(*amplitude_v_per_m),
                )
                .expect("validated in schema"),
                *image_plane_z_m,
            ),
            ExcitationConfig::HertzianDipole {
                position_m,
                moment_a_m,
                image_plane_z_m,
            } => (
                Excitation::hertzian_dipole(
                    Vec3::from(*position_m),
                    nalgebra::Vector3::new(re(moment_a_m[0]), re(moment_a_m[1]), re(moment_a_m[2])),
                ),
                *image_plane_z_m,
            ),
            ExcitationConfig::DeltaGap {
                element,
                edge,
                voltage_v,
                image_plane_z_m,
            } => (
                Excitation::delta_gap(*element, *edge, re(*voltage_v)),
                *image_plane_z_m,
            ),
        };
        match plane {
            Some(z) => exc.with_image_plane(z),
            None => exc,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
frequency_hz = 2.0e8
method = "macromodel"

[array]
n_x = 1
n_y = 1
spacing_x_m = 0.0
spacing_y_m = 0.0

[[element]]
id = "patch"

[element.scatterer]
kind = "plate"
width_m = 0.1
height_m = 0.1
edge_m = 0.05

[element.surface]
size_x_m = 0.3
size_y_m = 0.3
size_z_m = 0.3
edge_m = 0.15

[excitation]
kind = "plane_wave"
direction = [0.0, 0.0, -1.0]
polarization = [1.0, 0.0, 0.0]
"#;

    #[test]
    fn minimal_config_builds() {
        let cfg: RunConfig = toml::from_str(MINIMAL).unwrap();
        cfg.validate().unwrap();
        let problem = cfg.build_problem().unwrap();
        assert_eq!(problem.elements.len(), 1);
        assert!(problem.medium.frequency == 2.0e8);
    }

    #[test]
    fn grid_positions_centered() {
        let mut cfg: RunConfig = toml::from_str(MINIMAL).unwrap();
        cfg.array.n_x = 3;
        cfg.array.n_y = 2;
        cfg.array.spacing_x_m = 0.4;
        cfg.array.spacing_y_m = 0.5;
        let pos = cfg.positions();
        assert_eq!(pos.len(), 6);
        let sum: Vec3 = pos.iter().sum();
        assert!(sum.norm() < 1e-12);
        assert!((pos[1] - pos[0] - Vec3::new(0.4, 0.0, 0.0)).norm() < 1e-12);
        assert!((pos[3] - pos[0] - Vec3::new(0.0, 0.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn schema_errors_reported() {
        // empty element list
        let text = MINIMAL.replace("[[element]]", "[[unused]]");
        assert!(toml::from_str::<RunConfig>(&text).is_err());

        // unknown key rejected
        let text = format!("{MINIMAL}\nbogus_key = 1\n");
        assert!(toml::from_str::<RunConfig>(&text).is_err());

        // AIM with direct method rejected in validate
        let mut cfg: RunConfig = toml::from_str(MINIMAL).unwrap();
        cfg.method = Method::Direct;
        cfg.coupling = Coupling::Aim;
        assert!(matches!(cfg.validate(), Err(ConfigError::Schema(_))));

        // bad layout length
        let mut cfg: RunConfig = toml::from_str(MINIMAL).unwrap();
        cfg.array.elements = vec!["patch".into(), "patch".into()];
        assert!(cfg.validate().is_err());

        // unknown id in layout
        let mut cfg: RunConfig = toml::from_str(MINIMAL).unwrap();
        cfg.array.elements = vec!["nope".into()];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn defaults_applied() {
        let cfg: RunConfig = toml::from_str(MINIMAL).unwrap();
        assert_eq!(cfg.solver.rel_tol, 1e-6);
        assert_eq!(cfg.quadrature.order, 3);
        assert_eq!(cfg.aim.stencil_order, 3);
        // automatic AIM spacing is lambda / 10
        let lambda = C0 / cfg.frequency_hz;
        assert!((cfg.aim_params().spacing - lambda / 10.0).abs() < 1e-12);
    }
}
