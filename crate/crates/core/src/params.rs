use serde::{Deserialize, Serialize};

/// Numerical tolerances and sampling budgets shared by every module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Params {
    /// Membership tolerance on equations and strict-inequality margin.
    pub tol_on: f64,
    /// Newton residual target.
    pub tol_res: f64,
    /// Relative singular-value threshold for numerical rank.
    pub tol_rank: f64,
    /// Absolute threshold on determinants of orthonormal frames.
    pub tol_det: f64,
    /// Grassmann distance below which two planes are the same.
    pub tol_grass: f64,
    /// Kuo values above this are positive limits.
    pub tol_kuo: f64,
    pub tol_level: f64,
    pub tol_grad: f64,
    pub cluster_tol_plane: f64,
    pub cluster_tol_scalar: f64,
    /// Shell radii are `r0 * gamma^k` for `k < n_shells`.
    pub r0: f64,
    pub gamma: f64,
    pub n_shells: usize,
    pub probes_per_shell: usize,
    /// Extra anisotropic seeds per shell, spread over exponent vectors.
    pub weighted_probes: usize,
    pub min_shells: usize,
    pub max_depth: usize,
    pub max_iter: usize,
    pub n_levels: usize,
    /// Half-width of the box used to seed global samples.
    pub box_radius: f64,
    /// Number of random seeds used when sampling a whole semivariety.
    pub n_probe: usize,
    /// Grid points per stratum dimension when probing pairs automatically.
    pub probe_points: usize,
    pub seed: u64,
    /// Use the data-parallel executor when the crate was built with it.
    pub parallel: bool,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            tol_on: 1e-9,
            tol_res: 1e-12,
            tol_rank: 1e-8,
            tol_det: 1e-10,
            tol_grass: 1e-6,
            tol_kuo: 1e-6,
            tol_level: 1e-8,
            tol_grad: 1e-6,
            cluster_tol_plane: 0.05,
            cluster_tol_scalar: 0.02,
            r0: 1e-2,
            gamma: 0.25,
            n_shells: 12,
            probes_per_shell: 24,
            weighted_probes: 240,
            min_shells: 6,
            max_depth: 4,
            max_iter: 200,
            n_levels: 8,
            box_radius: 1.0,
            n_probe: 160,
            probe_points: 3,
            seed: 0,
            parallel: true,
        }
    }
}

impl Params {
    pub fn with_seed(seed: u64) -> Self {
        Params {
            seed,
            ..Params::default()
        }
    }

    pub fn radii(&self) -> Vec<f64> {
        (0..self.n_shells)
            .map(|k| self.r0 * self.gamma.powi(k as i32))
            .collect()
    }
}
