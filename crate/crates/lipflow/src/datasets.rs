//! Deterministic synthetic data generators and CSV ingestion.
//!
//! All sampling is driven by ChaCha8, a named counter-based generator, so a
//! (spec, seed, n) triple always reproduces the same array. Cross-language
//! ports are expected to match these distributions statistically, not
//! bit-for-bit.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::particle::{ParticleSet, Role};

/// Axis-aligned square, the bounding box of carpet constructions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Square {
    pub origin: [f64; 2],
    pub side: f64,
}

impl Square {
    pub fn unit() -> Self {
        Square {
            origin: [0.0, 0.0],
            side: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub center: Vec<f64>,
    pub sigma: f64,
}

/// Declarative description of a source/target distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistSpec {
    /// Isotropic Gaussian N(center, sigma² I).
    GaussBall { center: Vec<f64>, sigma: f64 },
    /// Mixture of isotropic Gaussians; weights must sum to 1.
    GaussMixture { components: Vec<MixtureComponent> },
    /// Level-k Sierpinski carpet: one uniform draw per retained cell when
    /// n = 8^k, uniform over retained cells otherwise.
    Sierpinski { level: u32, bbox: Square },
    /// 2D spiral, 1.5 turns on radius [1, 4], uniform in the arc parameter,
    /// plus isotropic Gaussian jitter of the given width.
    SwissRoll {
        #[serde(default)]
        noise: f64,
    },
    /// Multivariate Student-t with `dof` degrees of freedom (Gaussian/χ²
    /// ratio construction).
    StudentT {
        dof: f64,
        center: Vec<f64>,
        #[serde(default = "one")]
        scale: f64,
    },
    /// Per-coordinate i.i.d. generalized Gaussian, density ∝ exp(−|x|^β),
    /// sampled via |x| = G^{1/β} with G ~ Gamma(1/β, 1) and random sign.
    GenGaussian {
        beta: f64,
        dim: usize,
        #[serde(default)]
        center: Option<Vec<f64>>,
        #[serde(default = "one")]
        scale: f64,
    },
    /// Lower-dimensional distribution embedded in `ambient_dim`: the extra
    /// coordinates are i.i.d. N(offset, pad_sigma²).
    Embedded {
        inner: Box<DistSpec>,
        ambient_dim: usize,
        #[serde(default)]
        offset: f64,
        #[serde(default = "default_pad_sigma")]
        pad_sigma: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn default_pad_sigma() -> f64 {
    0.5
}

impl DistSpec {
    pub fn dim(&self) -> usize {
        match self {
            DistSpec::GaussBall { center, .. } => center.len(),
            DistSpec::GaussMixture { components } => {
                components.first().map_or(0, |c| c.center.len())
            }
            DistSpec::Sierpinski { .. } | DistSpec::SwissRoll { .. } => 2,
            DistSpec::StudentT { center, .. } => center.len(),
            DistSpec::GenGaussian { dim, .. } => *dim,
            DistSpec::Embedded { ambient_dim, .. } => *ambient_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DistSpec::GaussBall { center, sigma } => {
                if center.is_empty() {
                    return Err(Error::invalid("gauss_ball center must be nonempty"));
                }
                if !(*sigma > 0.0) {
                    return Err(Error::invalid("gauss_ball sigma must be > 0"));
                }
            }
            DistSpec::GaussMixture { components } => {
                if components.is_empty() {
                    return Err(Error::invalid("mixture needs at least one component"));
                }
                let d = components[0].center.len();
                let mut total = 0.0;
                for c in components {
                    if c.center.len() != d {
                        return Err(Error::invalid("mixture component dimensions differ"));
                    }
                    if !(c.weight >= 0.0) || !(c.sigma > 0.0) {
                        return Err(Error::invalid("mixture weights/sigmas invalid"));
                    }
                    total += c.weight;
                }
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid(format!(
                        "mixture weights sum to {total}, expected 1"
                    )));
                }
            }
            DistSpec::Sierpinski { level, bbox } => {
                if *level < 1 {
                    return Err(Error::invalid("sierpinski level must be >= 1"));
                }
                if !(bbox.side > 0.0) {
                    return Err(Error::invalid("sierpinski bbox side must be > 0"));
                }
            }
            DistSpec::SwissRoll { noise } => {
                if !(*noise >= 0.0) {
                    return Err(Error::invalid("swiss roll noise must be >= 0"));
                }
            }
            DistSpec::StudentT { dof, center, scale } => {
                if !(*dof > 0.0) {
                    return Err(Error::invalid("student_t dof must be > 0"));
                }
                if center.is_empty() {
                    return Err(Error::invalid("student_t center must be nonempty"));
                }
                if !(*scale > 0.0) {
                    return Err(Error::invalid("student_t scale must be > 0"));
                }
            }
            DistSpec::GenGaussian {
                beta,
                dim,
                center,
                scale,
            } => {
                if !(*beta > 0.0) {
                    return Err(Error::invalid("gen_gaussian beta must be > 0"));
                }
                if *dim == 0 {
                    return Err(Error::invalid("gen_gaussian dim must be >= 1"));
                }
                if let Some(c) = center {
                    if c.len() != *dim {
                        return Err(Error::invalid("gen_gaussian center length != dim"));
                    }
                }
                if !(*scale > 0.0) {
                    return Err(Error::invalid("gen_gaussian scale must be > 0"));
                }
            }
            DistSpec::Embedded {
                inner,
                ambient_dim,
                pad_sigma,
                ..
            } => {
                inner.validate()?;
                if *ambient_dim <= inner.dim() {
                    return Err(Error::invalid(
                        "embedded ambient dimension must exceed the inner dimension",
                    ));
                }
                if !(*pad_sigma >= 0.0) {
                    return Err(Error::invalid("embedded pad_sigma must be >= 0"));
                }
            }
        }
        Ok(())
    }
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 step, decorrelates sub-streams of one logical seed
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draw n i.i.d. samples from the spec. Deterministic per (spec, seed, n).
pub fn sample(spec: &DistSpec, n: usize, seed: u64) -> Result<ParticleSet> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::EmptySample("sample count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.dim();
    let positions = match spec {
        DistSpec::GaussBall { center, sigma } => Array2::from_shape_fn((n, d), |(_, j)| {
            center[j] + sigma * rng.sample::<f64, _>(StandardNormal)
        }),
        DistSpec::GaussMixture { components } => {
            let mut positions = Array2::zeros((n, d));
            for mut row in positions.rows_mut() {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut chosen = &components[components.len() - 1];
                for c in components {
                    acc += c.weight;
                    if u <= acc {
                        chosen = c;
                        break;
                    }
                }
                for (j, x) in row.iter_mut().enumerate() {
                    *x = chosen.center[j] + chosen.sigma * rng.sample::<f64, _>(StandardNormal);
                }
            }
            positions
        }
        DistSpec::Sierpinski { level, bbox } => {
            let cells = sierpinski_cells_for_level(*level);
            if n == cells.len() {
                return sierpinski_targets(*level, bbox, seed);
            }
            let cell_side = bbox.side / 3u64.pow(*level) as f64;
            let mut positions = Array2::zeros((n, 2));
            for mut row in positions.rows_mut() {
                let (ix, iy) = cells[rng.gen_range(0..cells.len())];
                row[0] = bbox.origin[0] + (ix as f64 + rng.gen::<f64>()) * cell_side;
                row[1] = bbox.origin[1] + (iy as f64 + rng.gen::<f64>()) * cell_side;
            }
            positions
        }
        DistSpec::SwissRoll { noise } => return swiss_roll(n, *noise, seed),
        DistSpec::StudentT { dof, center, scale } => {
            let chi = ChiSquared::new(*dof).map_err(|e| Error::invalid(e.to_string()))?;
            let mut positions = Array2::zeros((n, d));
            for mut row in positions.rows_mut() {
                let w: f64 = chi.sample(&mut rng);
                let factor = (dof / w).sqrt();
                for (j, x) in row.iter_mut().enumerate() {
                    let z: f64 = rng.sample(StandardNormal);
                    *x = center[j] + scale * z * factor;
                }
            }
            positions
        }
        DistSpec::GenGaussian {
            beta,
            dim,
            center,
            scale,
        } => {
            let gamma =
                Gamma::new(1.0 / beta, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
            Array2::from_shape_fn((n, *dim), |(_, j)| {
                let g: f64 = gamma.sample(&mut rng);
                let mag = g.powf(1.0 / beta);
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let c = center.as_ref().map_or(0.0, |c| c[j]);
                c + scale * sign * mag
            })
        }
        DistSpec::Embedded {
            inner,
            ambient_dim,
            offset,
            pad_sigma,
        } => {
            let base = sample(inner, n, seed)?;
            let inner_d = inner.dim();
            let mut pad_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
            let mut positions = Array2::zeros((n, *ambient_dim));
            positions
                .slice_mut(ndarray::s![.., ..inner_d])
                .assign(&base.positions);
            for mut row in positions.rows_mut() {
                for x in row.iter_mut().skip(inner_d) {
                    *x = offset + pad_sigma * pad_rng.sample::<f64, _>(StandardNormal);
                }
            }
            positions
        }
    };
    ParticleSet::new(positions, Role::Source, seed)
}

/// Indices (ix, iy) of the retained cells of the level-k carpet, row-major.
/// A cell survives iff no base-3 digit pair of its coordinates is (1, 1).
pub(crate) fn sierpinski_cells_for_level(level: u32) -> Vec<(u64, u64)> {
    let side = 3u64.pow(level);
    let mut cells = Vec::with_capacity(8usize.pow(level));
    for ix in 0..side {
        for iy in 0..side {
            let mut x = ix;
            let mut y = iy;
            let mut keep = true;
            for _ in 0..level {
                if x % 3 == 1 && y % 3 == 1 {
                    keep = false;
                    break;
                }
                x /= 3;
                y /= 3;
            }
            if keep {
                cells.push((ix, iy));
            }
        }
    }
    cells
}

/// Exactly 8^k particles, one uniform draw inside each retained cell of the
/// level-k carpet on the given square.
pub fn sierpinski_targets(level: u32, bbox: &Square, seed: u64) -> Result<ParticleSet> {
    if level < 1 {
        return Err(Error::invalid("sierpinski level must be >= 1"));
    }
    let cells = sierpinski_cells_for_level(level);
    let cell_side = bbox.side / 3u64.pow(level) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Array2::zeros((cells.len(), 2));
    for (row, (ix, iy)) in cells.iter().enumerate() {
        positions[(row, 0)] = bbox.origin[0] + (*ix as f64 + rng.gen::<f64>()) * cell_side;
        positions[(row, 1)] = bbox.origin[1] + (*iy as f64 + rng.gen::<f64>()) * cell_side;
    }
    ParticleSet::new(positions, Role::Target, seed)
}

/// 2D spiral: r(u) = 1 + 3u, θ(u) = 3πu for u uniform in [0, 1]
/// (1.5 turns on radius [1, 4]), plus optional Gaussian jitter.
pub fn swiss_roll(n: usize, noise: f64, seed: u64) -> Result<ParticleSet> {
    if n == 0 {
        return Err(Error::EmptySample("sample count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Array2::zeros((n, 2));
    for mut row in positions.rows_mut() {
        let u: f64 = rng.gen();
        let r = 1.0 + 3.0 * u;
        let theta = 3.0 * std::f64::consts::PI * u;
        row[0] = r * theta.cos();
        row[1] = r * theta.sin();
        if noise > 0.0 {
            row[0] += noise * rng.sample::<f64, _>(StandardNormal);
            row[1] += noise * rng.sample::<f64, _>(StandardNormal);
        }
    }
    ParticleSet::new(positions, Role::Target, seed)
}

/// Read particles from CSV (RFC-4180 subset, '.' decimal separator).
pub fn load_csv(path: &Path, has_header: bool) -> Result<ParticleSet> {
    let file = std::fs::File::open(path)?;
    load_csv_reader(file, has_header)
}

fn load_csv_reader<R: Read>(reader: R, has_header: bool) -> Result<ParticleSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    let data_offset = if has_header { 2 } else { 1 };
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row_no = i + data_offset;
        let mut row = Vec::with_capacity(record.len());
        for field in record.iter() {
            let v: f64 = field.trim().parse().map_err(|_| Error::CsvFormat {
                row: row_no,
                msg: format!("cannot parse {field:?} as a number"),
            })?;
            row.push(v);
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::CsvFormat {
                    row: row_no,
                    msg: format!("expected {w} columns, found {}", row.len()),
                });
            }
            _ => {}
        }
        rows.push(row);
    }
    let width = width.ok_or_else(|| Error::EmptySample("csv file has no data rows".into()))?;
    if width == 0 {
        return Err(Error::EmptySample("csv rows have no columns".into()));
    }
    let mut positions = Array2::zeros((rows.len(), width));
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            positions[(i, j)] = *v;
        }
    }
    ParticleSet::new(positions, Role::Source, 0)
}

/// Write particles as CSV with an `x_0..x_{d−1}` header. Values use the
/// shortest representation that round-trips the exact f64.
pub fn save_csv(positions: ArrayView2<'_, f64>, path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    write_csv(positions, &mut wtr)
}

fn write_csv<W: std::io::Write>(
    positions: ArrayView2<'_, f64>,
    wtr: &mut csv::Writer<W>,
) -> Result<()> {
    let d = positions.ncols();
    wtr.write_record((0..d).map(|j| format!("x_{j}")))?;
    for row in positions.rows() {
        wtr.write_record(row.iter().map(|v| v.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gauss_ball_moments() {
        let spec = DistSpec::GaussBall {
            center: vec![10.0, 10.0],
            sigma: 0.5,
        };
        let ps = sample(&spec, 10_000, 1).unwrap();
        for j in 0..2 {
            let col = ps.positions.column(j);
            let mean = col.sum() / col.len() as f64;
            assert!((mean - 10.0).abs() < 0.02, "mean {mean}");
            let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
                / (col.len() - 1) as f64;
            let sd = var.sqrt();
            assert!((sd - 0.5).abs() / 0.5 < 0.03, "sd {sd}");
        }
    }

    #[test]
    fn student_t3_median_and_tails() {
        let spec = DistSpec::StudentT {
            dof: 3.0,
            center: vec![0.0, 0.0],
            scale: 1.0,
        };
        let ps = sample(&spec, 100_000, 2).unwrap();
        let mut col: Vec<f64> = ps.positions.column(0).to_vec();
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = col[col.len() / 2];
        assert!(media_close(median), "median {median}");

        // heavier than Gaussian: sample excess kurtosis well above 0
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let m2 = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let m4 = col.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        let kurt = m4 / (m2 * m2);
        assert!(kurt.is_finite() && kurt > 4.0, "kurtosis {kurt}");
    }

    fn media_close(m: f64) -> bool {
        m.abs() < 0.02
    }

    #[test]
    fn student_t_half_throws_extremes() {
        let spec = DistSpec::StudentT {
            dof: 0.5,
            center: vec![0.0, 0.0],
            scale: 1.0,
        };
        let ps = sample(&spec, 100_000, 3).unwrap();
        let max = ps.positions.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(max > 100.0, "no silent clipping expected, max {max}");
    }

    #[test]
    fn gen_gaussian_mean_abs() {
        // β = 1/2: |x| = G² with G ~ Gamma(2, 1), so E|x| = Var(G) + (EG)² = 6
        let spec = DistSpec::GenGaussian {
            beta: 0.5,
            dim: 2,
            center: None,
            scale: 1.0,
        };
        let ps = sample(&spec, 100_000, 4).unwrap();
        let mean_abs =
            ps.positions.iter().map(|x| x.abs()).sum::<f64>() / ps.positions.len() as f64;
        assert!((mean_abs - 6.0).abs() / 6.0 < 0.05, "E|x| ≈ {mean_abs}");
    }

    #[test]
    fn embedded_mixture_pads_with_offset_noise() {
        let inner = DistSpec::GaussMixture {
            components: vec![
                MixtureComponent {
                    weight: 0.5,
                    center: vec![4.0, 4.0],
                    sigma: 0.5,
                },
                MixtureComponent {
                    weight: 0.5,
                    center: vec![-4.0, -4.0],
                    sigma: 0.5,
                },
            ],
        };
        let spec = DistSpec::Embedded {
            inner: Box::new(inner),
            ambient_dim: 12,
            offset: 8.0,
            pad_sigma: 0.5,
        };
        let ps = sample(&spec, 10_000, 5).unwrap();
        assert_eq!(ps.dim(), 12);
        for j in 2..12 {
            let col = ps.positions.column(j);
            let mean = col.sum() / col.len() as f64;
            let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
                / (col.len() - 1) as f64;
            assert!((mean - 8.0).abs() < 0.05, "pad mean {mean}");
            assert!((var - 0.25).abs() / 0.25 < 0.15, "pad var {var}");
        }
    }

    #[test]
    fn sierpinski_level1_counts_and_hole() {
        let bbox = Square {
            origin: [0.0, 0.0],
            side: 10.0,
        };
        let ps = sierpinski_targets(1, &bbox, 7).unwrap();
        assert_eq!(ps.len(), 8);
        let third = 10.0 / 3.0;
        for row in ps.positions.rows() {
            let inside_hole =
                row[0] > third && row[0] < 2.0 * third && row[1] > third && row[1] < 2.0 * third;
            assert!(!inside_hole, "particle {row} inside the removed square");
        }
    }

    #[test]
    fn sierpinski_level4_count_and_cells() {
        let bbox = Square {
            origin: [0.0, 0.0],
            side: 10.0,
        };
        let ps = sierpinski_targets(4, &bbox, 9).unwrap();
        assert_eq!(ps.len(), 4096);

        // every particle lies inside its generating cell
        let cells = sierpinski_cells_for_level(4);
        let cell_side = 10.0 / 81.0;
        for (row, (ix, iy)) in ps.positions.rows().into_iter().zip(cells) {
            let x0 = ix as f64 * cell_side;
            let y0 = iy as f64 * cell_side;
            assert!(row[0] >= x0 && row[0] <= x0 + cell_side);
            assert!(row[1] >= y0 && row[1] <= y0 + cell_side);
        }
    }

    #[test]
    fn swiss_roll_spiral_equation() {
        let ps = swiss_roll(200, 0.0, 11).unwrap();
        assert_eq!(ps.len(), 200);
        let mut last_r = 0.0;
        let mut points: Vec<(f64, f64)> = ps
            .positions
            .rows()
            .into_iter()
            .map(|r| (r[0], r[1]))
            .collect();
        // radius grows with the angle parameter
        points.sort_by(|a, b| {
            let ra = a.0.hypot(a.1);
            let rb = b.0.hypot(b.1);
            ra.partial_cmp(&rb).unwrap()
        });
        for (x, y) in points {
            let r = x.hypot(y);
            assert!(r >= last_r);
            last_r = r;
            // reconstruct the arc parameter from the radius and check the angle
            let u = (r - 1.0) / 3.0;
            let theta = 3.0 * std::f64::consts::PI * u;
            assert_abs_diff_eq!(x, r * theta.cos(), epsilon = 1e-9);
            assert_abs_diff_eq!(y, r * theta.sin(), epsilon = 1e-9);
        }
    }

    #[test]
    fn seed_determinism() {
        let spec = DistSpec::SwissRoll { noise: 0.1 };
        let a = sample(&spec, 64, 42).unwrap();
        let b = sample(&spec, 64, 42).unwrap();
        assert_eq!(a.positions, b.positions);
        let c = sample(&spec, 64, 43).unwrap();
        assert_ne!(a.positions, c.positions);
    }

    #[test]
    fn mixture_weight_validation() {
        let spec = DistSpec::GaussMixture {
            components: vec![MixtureComponent {
                weight: 0.7,
                center: vec![0.0],
                sigma: 1.0,
            }],
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pts.csv");
        let positions = ndarray::array![
            [1.0, -2.5e-308],
            [std::f64::consts::PI, 1e300],
            [-0.1, 123_456.789_012_345_67]
        ];
        save_csv(positions.view(), &path).unwrap();
        let back = load_csv(&path, true).unwrap();
        assert_eq!(back.positions.shape(), &[3, 2]);
        for (a, b) in positions.iter().zip(back.positions.iter()) {
            assert_eq!(a.to_bits(), b.to_bits(), "{a} vs {b}");
        }
    }

    #[test]
    fn csv_empty_and_ragged() {
        let err = load_csv_reader("".as_bytes(), false).unwrap_err();
        assert!(matches!(err, Error::EmptySample(_)));

        let err = load_csv_reader("1.0,2.0\n3.0\n".as_bytes(), false).unwrap_err();
        match err {
            Error::CsvFormat { row, .. } => assert_eq!(row, 2),
            other => panic!("expected CsvFormat, got {other}"),
        }
    }

    #[test]
    fn csv_header_is_parsed_not_data() {
        let ps = load_csv_reader("x_0,x_1\n1.5,2.5\n".as_bytes(), true).unwrap();
        assert_eq!(ps.positions.shape(), &[1, 2]);
        assert_eq!(ps.positions[(0, 0)], 1.5);
    }
}

#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        /// Finite f64 values survive a CSV write/read loop exactly.
        #[test]
        fn csv_roundtrip_exact(values in proptest::collection::vec(
            prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO,
            2..40,
        )) {
            let n = values.len() / 2;
            let positions = Array2::from_shape_vec((n, 2), values[..2 * n].to_vec()).unwrap();
            let mut buf = Vec::new();
            {
                let mut wtr = csv::Writer::from_writer(&mut buf);
                write_csv(positions.view(), &mut wtr).unwrap();
            }
            let back = load_csv_reader(buf.as_slice(), true).unwrap();
            for (a, b) in positions.iter().zip(back.positions.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        /// Carpet cell counts are 8^k and every retained cell avoids the
        /// removed middle at every scale.
        #[test]
        fn sierpinski_counts(level in 1u32..5) {
            let cells = sierpinski_cells_for_level(level);
            prop_assert_eq!(cells.len(), 8usize.pow(level));
            for (ix, iy) in cells {
                let (mut x, mut y) = (ix, iy);
                for _ in 0..level {
                    prop_assert!(!(x % 3 == 1 && y % 3 == 1));
                    x /= 3;
                    y /= 3;
                }
            }
        }
    }
}
