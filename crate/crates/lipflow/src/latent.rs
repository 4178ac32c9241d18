//! PCA-based linear autoencoder and the latent-space transport pipeline.
//!
//! The encoder projects onto the top-d′ principal directions; the decoder
//! maps back with the same orthonormal basis and is therefore an exact
//! isometry (Lipschitz constant 1). Because of that, transporting in the
//! latent space with Lipschitz bound L controls the ambient-space
//! divergence against any target the autoencoder reconstructs exactly.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::fdiv::estimate_divergence;
use crate::net::init_network;
use crate::particle::{ParticleSet, Role};
use crate::transport::{gpa_run, CheckpointRing, GpaRun, TrajectoryLog, TransportConfig};

/// Orthonormal PCA basis with mean and explained-variance spectrum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatentMap {
    pub mean: Array1<f64>,
    /// d × d′ with orthonormal columns.
    pub basis: Array2<f64>,
    /// Covariance eigenvalues along the basis directions, descending.
    pub eigenvalues: Array1<f64>,
    /// Trace of the sample covariance.
    pub total_variance: f64,
    /// Set when the data could not pin down all d′ directions (zero or
    /// rank-deficient variance); the basis is still orthonormal.
    pub degenerate: bool,
}

impl LatentMap {
    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Fit the top-d′ principal directions by SVD of the centered data matrix
/// (the N×N route: no d×d covariance is ever formed).
pub fn pca_fit(data: ArrayView2<'_, f64>, d_prime: usize) -> Result<LatentMap> {
    let n = data.nrows();
    let d = data.ncols();
    if n == 0 {
        return Err(Error::EmptySample("pca_fit needs data".into()));
    }
    if d_prime < 1 || d_prime > n.min(d) {
        return Err(Error::invalid(format!(
            "latent dimension must satisfy 1 <= d' <= min(N, d) = {}, got {d_prime}",
            n.min(d)
        )));
    }

    let mean = data.mean_axis(Axis(0)).expect("n >= 1");
    let mut centered = data.to_owned();
    for mut row in centered.rows_mut() {
        row -= &mean;
    }
    let total_variance = if n > 1 {
        centered.iter().map(|v| v * v).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };

    let m = nalgebra::DMatrix::from_row_iterator(n, d, centered.iter().copied());
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let sv = &svd.singular_values;

    // nalgebra does not guarantee ordering; sort indices by σ descending
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].partial_cmp(&sv[a]).unwrap());

    let mut basis = Array2::zeros((d, d_prime));
    let mut eigenvalues = Array1::zeros(d_prime);
    let denom = (n.max(2) - 1) as f64;
    let mut degenerate = total_variance <= 1e-300;
    for (col, &idx) in order.iter().take(d_prime).enumerate() {
        let sigma = sv[idx];
        eigenvalues[col] = sigma * sigma / denom;
        if sigma * sigma <= total_variance * 1e-15 {
            degenerate = true;
        }
        // sign convention: largest-magnitude component positive
        let row = v_t.row(idx);
        let mut max_abs = 0.0;
        let mut sign = 1.0;
        for j in 0..d {
            if row[j].abs() > max_abs {
                max_abs = row[j].abs();
                sign = row[j].signum();
            }
        }
        for j in 0..d {
            basis[(j, col)] = sign * row[j];
        }
    }

    Ok(LatentMap {
        mean,
        basis,
        eigenvalues,
        total_variance,
        degenerate,
    })
}

/// z = basisᵀ(x − mean), one row per point.
pub fn encode(map: &LatentMap, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if x.ncols() != map.ambient_dim() {
        return Err(Error::DimensionMismatch {
            expected: map.ambient_dim(),
            got: x.ncols(),
        });
    }
    let mut centered = x.to_owned();
    for mut row in centered.rows_mut() {
        row -= &map.mean;
    }
    Ok(centered.dot(&map.basis))
}

/// x̂ = mean + basis·z. An isometry: ‖decode(z) − decode(z′)‖ = ‖z − z′‖.
pub fn decode(map: &LatentMap, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if z.ncols() != map.latent_dim() {
        return Err(Error::DimensionMismatch {
            expected: map.latent_dim(),
            got: z.ncols(),
        });
    }
    let mut out = z.dot(&map.basis.t());
    for mut row in out.rows_mut() {
        row += &map.mean;
    }
    Ok(out)
}

/// Fraction of total variance captured by the retained directions.
pub fn explained_variance_ratio(map: &LatentMap) -> f64 {
    if map.total_variance <= 0.0 {
        return 1.0;
    }
    (map.eigenvalues.sum() / map.total_variance).min(1.0)
}

/// Both sides of the latent-control bound, estimated with fresh
/// discriminators of equal budget. The decoder is 1-Lipschitz, so the same
/// class Γ_L applies on both sides.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DpiReport {
    /// D̂^{Γ_L}(decoded particles ‖ original target), ambient space.
    pub ambient_estimate: f64,
    /// D̂^{Γ_L}(latent particles ‖ encoded target), latent space.
    pub latent_estimate: f64,
    /// Relative Frobenius reconstruction error of the target through the
    /// autoencoder.
    pub target_reconstruction_error: f64,
    /// True when the target is reconstruction-exact, i.e. the inequality
    /// `ambient ≤ latent` is actually asserted by theory. When false the
    /// report merely records both sides.
    pub inequality_checked: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct LatentGpaOptions {
    /// Ascent steps for each of the two divergence estimates in the report.
    pub eval_inner_steps: usize,
}

impl Default for LatentGpaOptions {
    fn default() -> Self {
        LatentGpaOptions {
            eval_inner_steps: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LatentGpaRun {
    /// Final particles decoded back to the ambient space.
    pub decoded: ParticleSet,
    pub latent_log: TrajectoryLog,
    pub latent_checkpoints: CheckpointRing,
    pub map: LatentMap,
    pub dpi: DpiReport,
}

/// Fit PCA on source ∪ target, transport in the latent space, decode, and
/// report the two divergence estimates of the data-processing bound.
pub fn latent_gpa(
    source: &ParticleSet,
    target: &ParticleSet,
    d_prime: usize,
    cfg: &TransportConfig,
    opts: &LatentGpaOptions,
) -> Result<LatentGpaRun> {
    let d = source.dim();
    if target.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: target.dim(),
        });
    }
    if d_prime >= d {
        return Err(Error::invalid(format!(
            "latent dimension {d_prime} must be < ambient dimension {d}"
        )));
    }

    // basis from the entire set of samples on both sides
    let mut stacked = Array2::zeros((source.len() + target.len(), d));
    stacked
        .slice_mut(ndarray::s![..source.len(), ..])
        .assign(&source.positions);
    stacked
        .slice_mut(ndarray::s![source.len().., ..])
        .assign(&target.positions);
    let map = pca_fit(stacked.view(), d_prime)?;

    let z_source = ParticleSet {
        positions: encode(&map, source.view())?,
        role: Role::Source,
        seed: source.seed,
    };
    let z_target = ParticleSet {
        positions: encode(&map, target.view())?,
        role: Role::Target,
        seed: target.seed,
    };

    let GpaRun {
        particles: z_final,
        log: latent_log,
        checkpoints: latent_checkpoints,
    } = gpa_run(&z_source, &z_target, cfg)?;

    let decoded_positions = decode(&map, z_final.view())?;
    let decoded = ParticleSet {
        positions: decoded_positions,
        role: Role::Generated,
        seed: source.seed,
    };

    // reconstruction fidelity of the target through the autoencoder
    let recon = decode(&map, encode(&map, target.view())?.view())?;
    let num = (&recon - &target.positions).iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut den = 0.0;
    for row in target.positions.rows() {
        for (j, v) in row.iter().enumerate() {
            let c = v - map.mean[j];
            den += c * c;
        }
    }
    let den = den.sqrt();
    let target_reconstruction_error = if den > 0.0 { num / den } else { num };

    let exec = Exec::from_deterministic(cfg.deterministic);
    let eval_seed = cfg.seed.wrapping_add(0x1a7e57);
    let ambient_net = init_network(
        d,
        &cfg.net.widths,
        cfg.lipschitz_bound,
        cfg.net.activation,
        eval_seed,
    )?;
    let (ambient_value, _) = estimate_divergence(
        &cfg.fdiv,
        ambient_net,
        &decoded,
        target,
        opts.eval_inner_steps,
        cfg.adam,
        exec,
    )?;
    let latent_net = init_network(
        d_prime,
        &cfg.net.widths,
        cfg.lipschitz_bound,
        cfg.net.activation,
        eval_seed.wrapping_add(1),
    )?;
    let (latent_value, _) = estimate_divergence(
        &cfg.fdiv,
        latent_net,
        &z_final,
        &z_target,
        opts.eval_inner_steps,
        cfg.adam,
        exec,
    )?;

    let dpi = DpiReport {
        ambient_estimate: ambient_value.divergence_estimate,
        latent_estimate: latent_value.divergence_estimate,
        target_reconstruction_error,
        inequality_checked: target_reconstruction_error <= 1e-9,
    };

    Ok(LatentGpaRun {
        decoded,
        latent_log,
        latent_checkpoints,
        map,
        dpi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn orthonormality_defect(map: &LatentMap) -> f64 {
        let gram = map.basis.t().dot(&map.basis);
        let mut defect = 0.0f64;
        for i in 0..gram.nrows() {
            for j in 0..gram.ncols() {
                let want = if i == j { 1.0 } else { 0.0 };
                defect = defect.max((gram[(i, j)] - want).abs());
            }
        }
        defect
    }

    #[test]
    fn rank_one_line_recovers_direction() {
        let dir = [1.0 / 3f64.sqrt(); 3];
        let mut data = Array2::zeros((50, 3));
        for (i, mut row) in data.rows_mut().into_iter().enumerate() {
            let t = i as f64 * 0.5 - 12.0;
            for j in 0..3 {
                row[j] = t * dir[j];
            }
        }
        let map = pca_fit(data.view(), 1).unwrap();
        assert!(orthonormality_defect(&map) < 1e-10);
        // sign convention: positive leading component
        for j in 0..3 {
            assert_abs_diff_eq!(map.basis[(j, 0)], dir[j], epsilon = 1e-10);
        }
        assert_abs_diff_eq!(explained_variance_ratio(&map), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn isotropic_gaussian_splits_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = Array2::from_shape_fn((10_000, 2), |_| {
            rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        let map = pca_fit(data.view(), 1).unwrap();
        let ratio = explained_variance_ratio(&map);
        assert!((ratio - 0.5).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn full_dimensional_reconstruction_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = Array2::from_shape_fn((40, 5), |_| rng.gen_range(-2.0..2.0));
        let map = pca_fit(data.view(), 5).unwrap();
        let recon = decode(&map, encode(&map, data.view()).unwrap().view()).unwrap();
        let defect = (&recon - &data).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(defect < 1e-10, "reconstruction defect {defect}");
        assert_abs_diff_eq!(explained_variance_ratio(&map), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn decoder_is_an_isometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = Array2::from_shape_fn((60, 8), |_| rng.gen_range(-1.0..1.0));
        let map = pca_fit(data.view(), 3).unwrap();
        for _ in 0..1000 {
            let z1 = Array2::from_shape_fn((1, 3), |_| rng.gen_range(-4.0..4.0));
            let z2 = Array2::from_shape_fn((1, 3), |_| rng.gen_range(-4.0..4.0));
            let dz = (&z1 - &z2).iter().map(|v| v * v).sum::<f64>().sqrt();
            if dz < 1e-9 {
                continue;
            }
            let x1 = decode(&map, z1.view()).unwrap();
            let x2 = decode(&map, z2.view()).unwrap();
            let dx = (&x1 - &x2).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((dx / dz - 1.0).abs() < 1e-10, "ratio {}", dx / dz);
        }
        // identical latent points decode identically
        let z = Array2::from_elem((1, 3), 0.7);
        assert_eq!(
            decode(&map, z.view()).unwrap(),
            decode(&map, z.view()).unwrap()
        );
    }

    #[test]
    fn points_in_subspace_are_fixed_by_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data = Array2::from_shape_fn((30, 6), |_| rng.gen_range(-1.0..1.0));
        let map = pca_fit(data.view(), 2).unwrap();
        // project a point into the model subspace, then round-trip it
        let x = Array2::from_shape_fn((1, 6), |_| rng.gen_range(-1.0..1.0));
        let in_subspace = decode(&map, encode(&map, x.view()).unwrap().view()).unwrap();
        let twice = decode(
            &map,
            encode(&map, in_subspace.view()).unwrap().view(),
        )
        .unwrap();
        let defect = (&twice - &in_subspace)
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        assert!(defect < 1e-10);
    }

    #[test]
    fn refit_on_reconstruction_gives_same_subspace() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data = Array2::from_shape_fn((80, 5), |_| rng.gen_range(-1.0..1.0));
        let map = pca_fit(data.view(), 2).unwrap();
        let recon = decode(&map, encode(&map, data.view()).unwrap().view()).unwrap();
        let map2 = pca_fit(recon.view(), 2).unwrap();
        // principal-angle distance via singular values of B1ᵀ B2
        let overlap = map.basis.t().dot(&map2.basis);
        let m = nalgebra::DMatrix::from_row_iterator(2, 2, overlap.iter().copied());
        let sv = m.svd(false, false).singular_values;
        let min_cos = sv.iter().fold(f64::INFINITY, |a: f64, &b| a.min(b));
        assert!(
            (1.0 - min_cos).abs() < 1e-8,
            "principal angle cos {min_cos}"
        );
    }

    #[test]
    fn degenerate_data_is_flagged_but_orthonormal() {
        let data = Array2::zeros((10, 4));
        let map = pca_fit(data.view(), 2).unwrap();
        assert!(map.degenerate);
        assert!(orthonormality_defect(&map) < 1e-10);
    }

    #[test]
    fn dimension_checks() {
        let data = Array2::zeros((10, 4));
        assert!(pca_fit(data.view(), 0).is_err());
        assert!(pca_fit(data.view(), 5).is_err());
        let map = pca_fit(data.view(), 2).unwrap();
        assert!(encode(&map, Array2::zeros((3, 3)).view()).is_err());
        assert!(decode(&map, Array2::zeros((3, 3)).view()).is_err());
    }

    #[test]
    fn latent_map_json_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data = Array2::from_shape_fn((20, 4), |_| rng.gen_range(-1.0..1.0));
        let map = pca_fit(data.view(), 2).unwrap();
        let back = LatentMap::from_json(&map.to_json().unwrap()).unwrap();
        assert_eq!(map.basis, back.basis);
        assert_eq!(map.mean, back.mean);
        assert_eq!(map.eigenvalues, back.eigenvalues);
    }
}
