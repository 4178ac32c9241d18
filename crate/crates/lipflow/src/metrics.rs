//! Evaluation metrics that are independent of the training objective:
//! debiased entropic (Sinkhorn) transport cost, an exact small-instance
//! Wasserstein oracle, and experiment-specific quality scores.

use ndarray::{Array2, ArrayView2};

use crate::datasets::Square;
use crate::error::{Error, Result};
use crate::exec::{self, Exec};

// ---------------------------------------------------------------------------
// Sinkhorn
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    /// Entropic blur in squared-distance units. `None` picks
    /// 0.05 × median pairwise squared distance between the two clouds.
    pub epsilon: Option<f64>,
    pub max_iters: usize,
    /// L1 marginal-violation threshold declaring convergence.
    pub tolerance: f64,
    /// Subtract the self-transport terms (recommended; makes S(A, A) = 0).
    pub debiased: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            epsilon: None,
            max_iters: 5000,
            tolerance: 1e-9,
            debiased: true,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SinkhornResult {
    /// √(debiased entropic cost): the W2 proxy.
    pub value: f64,
    /// False when any of the solves hit `max_iters` before the marginal
    /// tolerance; the value is still returned.
    pub converged: bool,
    pub iterations: usize,
    /// The blur actually used.
    pub epsilon: f64,
}

fn squared_cost_matrix(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, exec: Exec) -> Array2<f64> {
    let (m, n) = (a.nrows(), b.nrows());
    let mut c = Array2::zeros((m, n));
    let cs = c.as_slice_mut().expect("freshly allocated, standard layout");
    exec::fill_rows(cs, n, exec, |i, row| {
        let ai = a.row(i);
        for (j, out) in row.iter_mut().enumerate() {
            let bj = b.row(j);
            *out = ai
                .iter()
                .zip(bj.iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>();
        }
    });
    c
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Entropic OT cost Σ π·C between uniform empirical measures, log-domain
/// Sinkhorn iterations. Returns (cost, converged, iterations).
fn entropic_cost(
    cost: &Array2<f64>,
    eps: f64,
    max_iters: usize,
    tol: f64,
    exec: Exec,
) -> (f64, bool, usize) {
    let (m, n) = (cost.nrows(), cost.ncols());
    let log_a = -(m as f64).ln();
    let log_b = -(n as f64).ln();
    let mut f = vec![0.0f64; m];
    let mut g = vec![0.0f64; n];
    let mut converged = false;
    let mut iters = 0;

    for it in 0..max_iters {
        iters = it + 1;
        // row scaling: after this update the row marginals are exact
        let fr: Vec<f64> = exec::map_indices(m, exec, |i| {
            let row = cost.row(i);
            -eps * log_sum_exp((0..n).map(|j| log_b + (g[j] - row[j]) / eps))
        });
        f = fr;
        let gr: Vec<f64> = exec::map_indices(n, exec, |j| {
            -eps * log_sum_exp((0..m).map(|i| log_a + (f[i] - cost[(i, j)]) / eps))
        });
        g = gr;

        if it % 5 == 4 || it + 1 == max_iters {
            // column marginals after a fresh row update
            let fr: Vec<f64> = exec::map_indices(m, exec, |i| {
                let row = cost.row(i);
                -eps * log_sum_exp((0..n).map(|j| log_b + (g[j] - row[j]) / eps))
            });
            f = fr;
            let violation: f64 = exec::map_indices(n, exec, |j| {
                let col_mass: f64 = (0..m)
                    .map(|i| (log_a + log_b + (f[i] + g[j] - cost[(i, j)]) / eps).exp())
                    .sum();
                (col_mass - (n as f64).recip()).abs()
            })
            .into_iter()
            .sum();
            if violation < tol {
                converged = true;
                break;
            }
        }
    }

    let total: f64 = exec::map_indices(m, exec, |i| {
        let row = cost.row(i);
        (0..n)
            .map(|j| (log_a + log_b + (f[i] + g[j] - row[j]) / eps).exp() * row[j])
            .sum::<f64>()
    })
    .into_iter()
    .sum();
    (total, converged, iters)
}

fn median(values: &mut Vec<f64>) -> f64 {
    let mid = values.len() / 2;
    let (_, v, _) = values.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap());
    *v
}

/// Debiased entropic W2 proxy between two particle clouds:
/// √( OTε(A,B) − ½OTε(A,A) − ½OTε(B,B) ) with squared-Euclidean ground cost.
pub fn sinkhorn_w2(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    cfg: &SinkhornConfig,
    exec: Exec,
) -> Result<SinkhornResult> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::EmptySample("sinkhorn needs nonempty clouds".into()));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.ncols(),
            got: b.ncols(),
        });
    }
    if let Some(e) = cfg.epsilon {
        if !(e > 0.0) {
            return Err(Error::invalid("sinkhorn epsilon must be > 0"));
        }
    }

    let cab = squared_cost_matrix(a, b, exec);
    let eps = match cfg.epsilon {
        Some(e) => e,
        None => {
            let mut all: Vec<f64> = cab.iter().copied().collect();
            let med = median(&mut all);
            (0.05 * med).max(1e-12)
        }
    };

    let (cost_ab, mut converged, mut iterations) =
        entropic_cost(&cab, eps, cfg.max_iters, cfg.tolerance, exec);
    let mut value = cost_ab;
    if cfg.debiased {
        let caa = squared_cost_matrix(a, a, exec);
        let cbb = squared_cost_matrix(b, b, exec);
        let (cost_aa, ca, ia) = entropic_cost(&caa, eps, cfg.max_iters, cfg.tolerance, exec);
        let (cost_bb, cb, ib) = entropic_cost(&cbb, eps, cfg.max_iters, cfg.tolerance, exec);
        converged = converged && ca && cb;
        iterations = iterations.max(ia).max(ib);
        value -= 0.5 * (cost_aa + cost_bb);
    }
    Ok(SinkhornResult {
        value: value.max(0.0).sqrt(),
        converged,
        iterations,
        epsilon: eps,
    })
}

// ---------------------------------------------------------------------------
// Exact small-instance Wasserstein-1
// ---------------------------------------------------------------------------

/// Minimum-cost perfect assignment on a square float cost matrix
/// (Hungarian algorithm with potentials, O(n³)). Returns the column
/// assigned to each row and the total cost.
fn assignment_min_cost(cost: &Array2<f64>) -> (Vec<usize>, f64) {
    let n = cost.nrows();
    debug_assert_eq!(n, cost.ncols());
    // 1-based arrays with column 0 as the sentinel
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1]; // p[j]: row matched to column j
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        // unwind the augmenting path
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assign = vec![0usize; n];
    let mut total = 0.0;
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
        total += cost[(p[j] - 1, j - 1)];
    }
    (assign, total)
}

const EXACT_W1_MAX: usize = 256;

/// Exact 1-Wasserstein distance between equal-size empirical measures with
/// Euclidean ground cost: the optimal-assignment mean cost. Limited to
/// instances of at most 256 points; used as the oracle in the divergence
/// sandwich tests.
pub fn exact_w1_small(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<f64> {
    if a.nrows() != b.nrows() {
        return Err(Error::invalid(format!(
            "exact_w1_small needs equal sizes, got {} vs {}",
            a.nrows(),
            b.nrows()
        )));
    }
    if a.nrows() == 0 {
        return Err(Error::EmptySample("exact_w1_small needs nonempty sets".into()));
    }
    if a.nrows() > EXACT_W1_MAX {
        return Err(Error::invalid(format!(
            "exact_w1_small is limited to {EXACT_W1_MAX} points, got {}",
            a.nrows()
        )));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.ncols(),
            got: b.ncols(),
        });
    }
    let n = a.nrows();
    let cost = Array2::from_shape_fn((n, n), |(i, j)| {
        a.row(i)
            .iter()
            .zip(b.row(j).iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    });
    let (_, total) = assignment_min_cost(&cost);
    Ok(total / n as f64)
}

/// Exact 2-Wasserstein (√ of the optimal mean squared cost); test oracle
/// for the Sinkhorn proxy.
pub fn exact_w2_small(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<f64> {
    if a.nrows() != b.nrows() || a.nrows() == 0 || a.nrows() > EXACT_W1_MAX {
        return Err(Error::invalid("exact_w2_small size constraints violated"));
    }
    let n = a.nrows();
    let cost = Array2::from_shape_fn((n, n), |(i, j)| {
        a.row(i)
            .iter()
            .zip(b.row(j).iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
    });
    let (_, total) = assignment_min_cost(&cost);
    Ok((total / n as f64).sqrt())
}

// ---------------------------------------------------------------------------
// Experiment scores
// ---------------------------------------------------------------------------

/// Fraction of all particles within `radius` of each center.
pub fn mode_coverage(
    positions: ArrayView2<'_, f64>,
    centers: ArrayView2<'_, f64>,
    radius: f64,
) -> Result<Vec<f64>> {
    if positions.nrows() == 0 {
        return Err(Error::EmptySample("mode_coverage needs particles".into()));
    }
    if centers.nrows() == 0 {
        return Err(Error::EmptySample("mode_coverage needs centers".into()));
    }
    if positions.ncols() != centers.ncols() {
        return Err(Error::DimensionMismatch {
            expected: centers.ncols(),
            got: positions.ncols(),
        });
    }
    if !(radius > 0.0) {
        return Err(Error::invalid("mode_coverage radius must be > 0"));
    }
    let m = positions.nrows() as f64;
    let r2 = radius * radius;
    Ok(centers
        .rows()
        .into_iter()
        .map(|c| {
            let hits = positions
                .rows()
                .into_iter()
                .filter(|p| {
                    p.iter()
                        .zip(c.iter())
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                        <= r2
                })
                .count();
            hits as f64 / m
        })
        .collect())
}

/// Histogram of particles over the retained cells of a level-k carpet.
#[derive(Debug, Clone)]
pub struct CarpetOccupancy {
    /// Per retained cell, in the canonical (row-major) cell order.
    pub counts: Vec<usize>,
    /// Particles inside a removed square of some scale ≤ level.
    pub removed: usize,
    /// Particles outside the bounding box.
    pub outside: usize,
    /// max_c |count_c − uniform| / uniform where uniform = M / 8^level.
    pub max_rel_deviation: f64,
}

pub fn carpet_occupancy(
    positions: ArrayView2<'_, f64>,
    level: u32,
    bbox: &Square,
) -> Result<CarpetOccupancy> {
    if positions.nrows() == 0 {
        return Err(Error::EmptySample("carpet_occupancy needs particles".into()));
    }
    if positions.ncols() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: positions.ncols(),
        });
    }
    if level < 1 {
        return Err(Error::invalid("carpet level must be >= 1"));
    }
    let side_cells = 3u64.pow(level);
    let retained = crate::datasets::sierpinski_cells_for_level(level);
    let index: std::collections::HashMap<(u64, u64), usize> = retained
        .iter()
        .enumerate()
        .map(|(i, c)| (*c, i))
        .collect();

    let mut counts = vec![0usize; retained.len()];
    let mut removed = 0usize;
    let mut outside = 0usize;
    for row in positions.rows() {
        let rel_x = (row[0] - bbox.origin[0]) / bbox.side;
        let rel_y = (row[1] - bbox.origin[1]) / bbox.side;
        if !(0.0..=1.0).contains(&rel_x) || !(0.0..=1.0).contains(&rel_y) {
            outside += 1;
            continue;
        }
        let ix = ((rel_x * side_cells as f64) as u64).min(side_cells - 1);
        let iy = ((rel_y * side_cells as f64) as u64).min(side_cells - 1);
        match index.get(&(ix, iy)) {
            Some(&slot) => counts[slot] += 1,
            None => removed += 1,
        }
    }

    let uniform = positions.nrows() as f64 / retained.len() as f64;
    let max_rel_deviation = counts
        .iter()
        .map(|&c| (c as f64 - uniform).abs() / uniform)
        .fold(0.0, f64::max);

    Ok(CarpetOccupancy {
        counts,
        removed,
        outside,
        max_rel_deviation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{sierpinski_targets, Square};
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, d: usize, seed: u64, scale: f64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.gen_range(-scale..scale))
    }

    #[test]
    fn sinkhorn_identical_clouds_is_zero() {
        let a = random_cloud(40, 2, 1, 2.0);
        let r = sinkhorn_w2(a.view(), a.view(), &SinkhornConfig::default(), Exec::Par).unwrap();
        assert!(r.value <= 1e-6, "S(A,A) = {}", r.value);
    }

    #[test]
    fn sinkhorn_point_masses() {
        let a = array![[0.0, 0.0]];
        let b = array![[3.0, 4.0]];
        let cfg = SinkhornConfig {
            epsilon: Some(0.1),
            ..SinkhornConfig::default()
        };
        let r = sinkhorn_w2(a.view(), b.view(), &cfg, Exec::Seq).unwrap();
        assert!((r.value - 5.0).abs() < 1e-4, "got {}", r.value);
        // any blur: the single-pair coupling is forced
        let cfg = SinkhornConfig {
            epsilon: Some(10.0),
            ..SinkhornConfig::default()
        };
        let r = sinkhorn_w2(a.view(), b.view(), &cfg, Exec::Seq).unwrap();
        assert!((r.value - 5.0).abs() < 1e-4, "got {}", r.value);
    }

    #[test]
    fn sinkhorn_close_to_exact_w2_at_small_blur() {
        let a = random_cloud(64, 2, 2, 1.0);
        let b = random_cloud(64, 2, 3, 1.0) + 0.5;
        let exact = exact_w2_small(a.view(), b.view()).unwrap();
        // the self-transport solves converge slowly at small blur; the value
        // is accurate well before the marginal tolerance is met
        let cfg = SinkhornConfig {
            epsilon: Some(0.01),
            max_iters: 40_000,
            tolerance: 1e-8,
            debiased: true,
        };
        let r = sinkhorn_w2(a.view(), b.view(), &cfg, Exec::Par).unwrap();
        assert!(
            (r.value - exact).abs() / exact < 0.02,
            "sinkhorn {} vs exact {}",
            r.value,
            exact
        );
    }

    #[test]
    fn sinkhorn_symmetry_and_nonnegativity() {
        let a = random_cloud(30, 3, 4, 1.0);
        let b = random_cloud(25, 3, 5, 1.5);
        let cfg = SinkhornConfig {
            tolerance: 1e-11,
            max_iters: 20_000,
            ..SinkhornConfig::default()
        };
        let ab = sinkhorn_w2(a.view(), b.view(), &cfg, Exec::Par).unwrap();
        let ba = sinkhorn_w2(b.view(), a.view(), &cfg, Exec::Par).unwrap();
        assert!(ab.value >= 0.0);
        assert!(
            (ab.value - ba.value).abs() < 1e-8,
            "S(A,B)={} S(B,A)={}",
            ab.value,
            ba.value
        );
    }

    #[test]
    fn sinkhorn_flags_non_convergence() {
        let a = random_cloud(20, 2, 6, 1.0);
        let b = random_cloud(20, 2, 7, 1.0) + 4.0;
        let cfg = SinkhornConfig {
            epsilon: Some(1e-4),
            max_iters: 2,
            tolerance: 1e-12,
            debiased: false,
        };
        let r = sinkhorn_w2(a.view(), b.view(), &cfg, Exec::Seq).unwrap();
        assert!(!r.converged);
        assert!(r.value.is_finite());
    }

    #[test]
    fn w1_sorted_pairing_in_1d() {
        let a = array![[0.0], [1.0]];
        let b = array![[1.0], [2.0]];
        assert_eq!(exact_w1_small(a.view(), b.view()).unwrap(), 1.0);
    }

    #[test]
    fn w1_identical_sets_is_zero() {
        let a = random_cloud(32, 2, 8, 3.0);
        assert_eq!(exact_w1_small(a.view(), a.view()).unwrap(), 0.0);
    }

    #[test]
    fn w1_size_limits() {
        let a = random_cloud(10, 2, 9, 1.0);
        let b = random_cloud(11, 2, 10, 1.0);
        assert!(exact_w1_small(a.view(), b.view()).is_err());
        let big = random_cloud(300, 2, 11, 1.0);
        assert!(exact_w1_small(big.view(), big.view()).is_err());
    }

    /// Factorial brute force over all permutations for tiny instances.
    fn brute_force_w1(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        fn permute(k: usize, perm: &mut Vec<usize>, used: &mut Vec<bool>, best: &mut f64, cost: &Array2<f64>) {
            let n = used.len();
            if k == n {
                let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
                if total < *best {
                    *best = total;
                }
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    perm.push(j);
                    permute(k + 1, perm, used, best, cost);
                    perm.pop();
                    used[j] = false;
                }
            }
        }
        let n = a.nrows();
        let cost = Array2::from_shape_fn((n, n), |(i, j)| {
            a.row(i)
                .iter()
                .zip(b.row(j).iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        });
        let mut best = f64::INFINITY;
        permute(0, &mut Vec::new(), &mut vec![false; n], &mut best, &cost);
        best / n as f64
    }

    #[test]
    fn w1_matches_factorial_brute_force() {
        for seed in 0..6 {
            let n = 4 + (seed as usize % 4); // 4..=7
            let a = random_cloud(n, 2, 100 + seed, 2.0);
            let b = random_cloud(n, 2, 200 + seed, 2.0);
            let fast = exact_w1_small(a.view(), b.view()).unwrap();
            let slow = brute_force_w1(&a, &b);
            assert!(
                (fast - slow).abs() < 1e-10,
                "hungarian {fast} vs brute force {slow}"
            );
        }
    }

    #[test]
    fn w1_triangle_inequality() {
        for seed in 0..5 {
            let a = random_cloud(16, 2, 300 + seed, 2.0);
            let b = random_cloud(16, 2, 400 + seed, 2.0);
            let c = random_cloud(16, 2, 500 + seed, 2.0);
            let ab = exact_w1_small(a.view(), b.view()).unwrap();
            let bc = exact_w1_small(b.view(), c.view()).unwrap();
            let ac = exact_w1_small(a.view(), c.view()).unwrap();
            assert!(ac <= ab + bc + 1e-9, "{ac} > {ab} + {bc}");
        }
    }

    #[test]
    fn mode_coverage_basics() {
        let centers = array![[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0]];
        // all particles at the first center
        let particles = Array2::zeros((50, 2));
        let cov = mode_coverage(particles.view(), centers.view(), 1.0).unwrap();
        assert_eq!(cov, vec![1.0, 0.0, 0.0, 0.0]);

        // uniform split
        let mut split = Array2::zeros((100, 2));
        for i in 0..100 {
            let c = centers.row(i % 4);
            split[(i, 0)] = c[0];
            split[(i, 1)] = c[1];
        }
        let cov = mode_coverage(split.view(), centers.view(), 0.5).unwrap();
        for f in cov {
            assert!((f - 0.25).abs() < 1e-12);
        }

        let empty = Array2::zeros((0, 2));
        assert!(mode_coverage(empty.view(), centers.view(), 1.0).is_err());
    }

    #[test]
    fn carpet_occupancy_of_generator_output() {
        let bbox = Square {
            origin: [0.0, 0.0],
            side: 10.0,
        };
        for level in [1u32, 2, 3] {
            let ps = sierpinski_targets(level, &bbox, 21).unwrap();
            let occ = carpet_occupancy(ps.view(), level, &bbox).unwrap();
            assert!(occ.counts.iter().all(|&c| c == 1));
            assert_eq!(occ.removed, 0);
            assert_eq!(occ.outside, 0);
            assert_eq!(occ.max_rel_deviation, 0.0);
        }
    }

    #[test]
    fn carpet_level2_aggregation_of_level4_set() {
        let bbox = Square {
            origin: [0.0, 0.0],
            side: 10.0,
        };
        let ps = sierpinski_targets(4, &bbox, 33).unwrap();
        let occ = carpet_occupancy(ps.view(), 2, &bbox).unwrap();
        assert_eq!(occ.counts.len(), 64);
        assert!(occ.counts.iter().all(|&c| c == 64), "{:?}", occ.counts);
        assert_eq!(occ.removed, 0);
        assert_eq!(occ.max_rel_deviation, 0.0);
    }

    #[test]
    fn carpet_all_in_one_cell_is_maximally_deviant() {
        let bbox = Square {
            origin: [0.0, 0.0],
            side: 9.0,
        };
        let particles = Array2::from_elem((80, 2), 0.5); // all in cell (0, 0)
        let occ = carpet_occupancy(particles.view(), 1, &bbox).unwrap();
        assert_eq!(occ.counts[0], 80);
        assert_eq!(occ.counts.iter().sum::<usize>(), 80);
        assert!((occ.max_rel_deviation - 7.0).abs() < 1e-12); // (80 − 10)/10
    }
}
