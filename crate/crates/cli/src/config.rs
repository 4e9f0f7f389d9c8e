//! Run configuration: a TOML file, overridden key by key from the command line.
//!
//! Every file key has a flag of the same name with `_` spelled `-`, e.g.
//! `grid.voxel_size` is `--voxel-size`.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use dbtsdf::integrator::{DEFAULT_H_MAX, DEFAULT_THRESHOLD};
use dbtsdf::kernels::{
    default_shadow_radius, KernelParams, ShadowModel, DEFAULT_BINS, DEFAULT_CONE_HALF_ANGLE_DEG, DEFAULT_KERNEL_SIZE,
};
use dbtsdf::motion::CompensationMode;
use dbtsdf::{Error, IntegrationParams, Result};

pub const RESOLVED_CONFIG_NAME: &str = "config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ShadowKind {
    Hemisphere,
    Cone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Compensation {
    None,
    YawOnly,
    FullSe3,
}

impl From<Compensation> for CompensationMode {
    fn from(c: Compensation) -> Self {
        match c {
            Compensation::None => CompensationMode::None,
            Compensation::YawOnly => CompensationMode::YawOnly,
            Compensation::FullSe3 => CompensationMode::FullSe3,
        }
    }
}

/// Grid geometry, given either as `dims` + `origin` or as world bounds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Voxel edge length in meters.
    #[arg(long)]
    pub voxel_size: Option<f64>,
    /// Grid dimensions in voxels.
    #[arg(long, num_args = 3, value_names = ["NX", "NY", "NZ"])]
    pub dims: Option<Vec<usize>>,
    /// World position of the minimum grid corner.
    #[arg(long, num_args = 3, value_names = ["X", "Y", "Z"], allow_negative_numbers = true)]
    pub origin: Option<Vec<f64>>,
    /// Lower world corner; used with `bounds_max` instead of dims.
    #[arg(long, num_args = 3, value_names = ["X", "Y", "Z"], allow_negative_numbers = true)]
    pub bounds_min: Option<Vec<f64>>,
    #[arg(long, num_args = 3, value_names = ["X", "Y", "Z"], allow_negative_numbers = true)]
    pub bounds_max: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    /// Kernel edge length K (odd).
    #[arg(long)]
    pub kernel_size: Option<usize>,
    #[arg(long)]
    pub bins_az: Option<usize>,
    #[arg(long)]
    pub bins_el: Option<usize>,
    /// Shadow radius in voxels; defaults to about 5 cm worth of voxels.
    #[arg(long)]
    pub shadow_radius: Option<usize>,
    #[arg(long, value_enum)]
    pub shadow_model: Option<ShadowKind>,
    #[arg(long)]
    pub cone_half_angle_deg: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct IntegrationSection {
    #[arg(long)]
    pub h_max: Option<u8>,
    /// Hits before a voxel counts as occupied.
    #[arg(long)]
    pub threshold: Option<u8>,
    #[arg(long, value_enum)]
    pub compensation: Option<Compensation>,
    /// Keep every n-th return.
    #[arg(long)]
    pub downsample: Option<usize>,
    #[arg(long)]
    pub first_return_per_voxel: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    /// Directory of scans named by timestamp, e.g. `1650000000.125.pcd`.
    #[arg(long)]
    pub scans: Option<PathBuf>,
    /// TUM trajectory file.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Configuration as written in a file or on the command line; every key is
/// optional until [`ConfigFile::resolve`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[arg(long)]
    pub threads: Option<usize>,
    #[command(flatten)]
    #[serde(default)]
    pub grid: GridSection,
    #[command(flatten)]
    #[serde(default)]
    pub kernel: KernelSection,
    #[command(flatten)]
    #[serde(default)]
    pub integration: IntegrationSection,
    #[command(flatten)]
    #[serde(default)]
    pub paths: PathsSection,
}

macro_rules! overlay {
    ($dst:expr, $src:expr, $($f:ident),+) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )+
    };
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<ConfigFile> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Keys set in `over` replace those in `self`.
    pub fn overlay(mut self, over: &ConfigFile) -> ConfigFile {
        overlay!(self, over, threads);
        overlay!(self.grid, over.grid, voxel_size, dims, origin, bounds_min, bounds_max);
        overlay!(
            self.kernel,
            over.kernel,
            kernel_size,
            bins_az,
            bins_el,
            shadow_radius,
            shadow_model,
            cone_half_angle_deg
        );
        overlay!(
            self.integration,
            over.integration,
            h_max,
            threshold,
            compensation,
            downsample,
            first_return_per_voxel
        );
        overlay!(self.paths, over.paths, scans, trajectory, output);
        self
    }

    /// Fills defaults and derives the grid; does not touch the filesystem.
    pub fn resolve(&self) -> Result<RunConfig> {
        let g = &self.grid;
        let voxel_size = g
            .voxel_size
            .ok_or_else(|| Error::Config("grid.voxel_size is required".into()))?;
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::Config(format!("grid.voxel_size must be positive, got {voxel_size}")));
        }
        let triple_f = |name: &str, v: &Option<Vec<f64>>| -> Result<Option<[f64; 3]>> {
            match v {
                None => Ok(None),
                Some(v) if v.len() == 3 && v.iter().all(|c| c.is_finite()) => Ok(Some([v[0], v[1], v[2]])),
                Some(v) => Err(Error::Config(format!("grid.{name} needs 3 finite numbers, got {v:?}"))),
            }
        };
        let origin = triple_f("origin", &g.origin)?;
        let bmin = triple_f("bounds_min", &g.bounds_min)?;
        let bmax = triple_f("bounds_max", &g.bounds_max)?;
        let (dims, origin) = match (&g.dims, bmin, bmax) {
            (Some(d), None, None) => {
                if d.len() != 3 {
                    return Err(Error::Config(format!("grid.dims needs 3 values, got {d:?}")));
                }
                ([d[0], d[1], d[2]], origin.unwrap_or([0.0; 3]))
            }
            (None, Some(lo), Some(hi)) => {
                if origin.is_some() {
                    return Err(Error::Config("grid.origin cannot be combined with bounds".into()));
                }
                let mut dims = [0; 3];
                for a in 0..3 {
                    let extent = hi[a] - lo[a];
                    if !(extent > 0.0) {
                        return Err(Error::Config(format!("grid bounds are empty along axis {a}")));
                    }
                    // tolerate round-off so that exact multiples do not gain a voxel
                    dims[a] = ((extent / voxel_size) - 1e-9).ceil().max(1.0) as usize;
                }
                (dims, lo)
            }
            _ => {
                return Err(Error::Config(
                    "grid needs either dims (with optional origin) or both bounds_min and bounds_max".into(),
                ))
            }
        };

        let k = &self.kernel;
        let size = k.kernel_size.unwrap_or(DEFAULT_KERNEL_SIZE);
        let half_angle = k.cone_half_angle_deg.unwrap_or(DEFAULT_CONE_HALF_ANGLE_DEG);
        let shadow_model = match k.shadow_model.unwrap_or(ShadowKind::Hemisphere) {
            ShadowKind::Hemisphere => ShadowModel::Hemisphere,
            ShadowKind::Cone => ShadowModel::Cone { half_angle_deg: half_angle },
        };
        let kernel = KernelParams {
            size,
            bins_az: k.bins_az.unwrap_or(DEFAULT_BINS),
            bins_el: k.bins_el.unwrap_or(DEFAULT_BINS),
            shadow_radius: k
                .shadow_radius
                .unwrap_or_else(|| default_shadow_radius(voxel_size, size / 2)),
            shadow_model,
        };

        let i = &self.integration;
        let integration = IntegrationParams {
            h_max: i.h_max.unwrap_or(DEFAULT_H_MAX),
            threshold: i.threshold.unwrap_or(DEFAULT_THRESHOLD),
            compensation: i.compensation.unwrap_or(Compensation::None).into(),
            downsample: i.downsample.unwrap_or(1),
            first_return_per_voxel: i.first_return_per_voxel.unwrap_or(false),
        };
        integration.validate()?;
        let threads = self.threads.unwrap_or(1);
        if threads == 0 {
            return Err(Error::Config("threads must be >= 1".into()));
        }

        Ok(RunConfig {
            threads,
            dims,
            voxel_size,
            origin,
            kernel,
            cone_half_angle_deg: half_angle,
            integration,
            scans: self.paths.scans.clone(),
            trajectory: self.paths.trajectory.clone(),
            output: self.paths.output.clone().unwrap_or_else(|| PathBuf::from("out")),
        })
    }
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub threads: usize,
    pub dims: [usize; 3],
    pub voxel_size: f64,
    pub origin: [f64; 3],
    pub kernel: KernelParams,
    pub cone_half_angle_deg: f64,
    pub integration: IntegrationParams,
    pub scans: Option<PathBuf>,
    pub trajectory: Option<PathBuf>,
    pub output: PathBuf,
}

impl RunConfig {
    /// Checks that the input paths a fusion run needs exist.
    pub fn validate_inputs(&self) -> Result<(&Path, &Path)> {
        let scans = self
            .scans
            .as_deref()
            .ok_or_else(|| Error::Config("paths.scans is required".into()))?;
        let traj = self
            .trajectory
            .as_deref()
            .ok_or_else(|| Error::Config("paths.trajectory is required".into()))?;
        if !scans.is_dir() {
            return Err(Error::Config(format!("scan directory {} does not exist", scans.display())));
        }
        if !traj.is_file() {
            return Err(Error::Config(format!("trajectory file {} does not exist", traj.display())));
        }
        Ok((scans, traj))
    }

    /// Every key explicit, so that a rerun from this file reproduces the run.
    pub fn to_file(&self) -> ConfigFile {
        let (shadow_model, cone) = match self.kernel.shadow_model {
            ShadowModel::Hemisphere => (ShadowKind::Hemisphere, self.cone_half_angle_deg),
            ShadowModel::Cone { half_angle_deg } => (ShadowKind::Cone, half_angle_deg),
        };
        let i = &self.integration;
        ConfigFile {
            threads: Some(self.threads),
            grid: GridSection {
                voxel_size: Some(self.voxel_size),
                dims: Some(self.dims.to_vec()),
                origin: Some(self.origin.to_vec()),
                bounds_min: None,
                bounds_max: None,
            },
            kernel: KernelSection {
                kernel_size: Some(self.kernel.size),
                bins_az: Some(self.kernel.bins_az),
                bins_el: Some(self.kernel.bins_el),
                shadow_radius: Some(self.kernel.shadow_radius),
                shadow_model: Some(shadow_model),
                cone_half_angle_deg: Some(cone),
            },
            integration: IntegrationSection {
                h_max: Some(i.h_max),
                threshold: Some(i.threshold),
                compensation: Some(match i.compensation {
                    CompensationMode::None => Compensation::None,
                    CompensationMode::YawOnly => Compensation::YawOnly,
                    CompensationMode::FullSe3 => Compensation::FullSe3,
                }),
                downsample: Some(i.downsample),
                first_return_per_voxel: Some(i.first_return_per_voxel),
            },
            paths: PathsSection {
                scans: self.scans.clone(),
                trajectory: self.trajectory.clone(),
                output: Some(self.output.clone()),
            },
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(&self.to_file()).expect("config serializes")
    }
}
