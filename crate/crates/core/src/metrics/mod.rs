//! Evaluation metrics.
//!
//! Two protocols are kept apart:
//!
//! * pairwise diversity of suggested parts ([`pairwise_diversity`]) over
//!   voxel grids and one-point-per-voxel clouds;
//! * set-level coverage, minimum matching distance and Jensen-Shannon
//!   divergence ([`generative_report`]) over clouds sampled from mesh
//!   surfaces ([`surface_cloud`]).
//!
//! All clouds are expected in the unit sphere. Reports carry raw values plus
//! rescaled copies (`*_x100`, `*_x1000`) in the customary reporting units.

pub mod assignment;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{marching_cubes, sample_mesh_points, voxel_to_pointcloud, PointCloud, TriangleMesh, VoxelGrid};

/// Largest cloud size solved exactly by [`emd`].
pub const EXACT_EMD_LIMIT: usize = 512;
/// Cells per axis of the occupancy histogram used by [`jsd`].
pub const JSD_BINS: usize = 28;
/// Surface samples per shape for the set-level metrics.
pub const SURFACE_POINTS: usize = 2048;

const THRESHOLD: f32 = 0.5;

/// Euclidean norm of the difference of the binarized grids.
pub fn voxel_ed(a: &VoxelGrid, b: &VoxelGrid) -> Result<f64> {
    if a.resolution() != b.resolution() {
        return Err(Error::ResolutionMismatch { expected: a.resolution(), actual: b.resolution() });
    }
    let differing = a
        .values()
        .iter()
        .zip(b.values())
        .filter(|(x, y)| (**x >= THRESHOLD) != (**y >= THRESHOLD))
        .count();
    Ok((differing as f64).sqrt())
}

#[inline]
fn sq_dist(p: &[f64; 3], q: &[f64; 3]) -> f64 {
    let (dx, dy, dz) = (p[0] - q[0], p[1] - q[1], p[2] - q[2]);
    dx * dx + dy * dy + dz * dz
}

fn mean_nearest(a: &PointCloud, b: &PointCloud, squared: bool) -> f64 {
    let sum: f64 = a
        .points
        .iter()
        .map(|p| {
            let m = b.points.iter().map(|q| sq_dist(p, q)).fold(f64::INFINITY, f64::min);
            if squared {
                m
            } else {
                m.sqrt()
            }
        })
        .sum();
    sum / a.len() as f64
}

fn nonempty(c: &PointCloud) -> Result<()> {
    if c.is_empty() {
        Err(Error::EmptyCloud)
    } else {
        Ok(())
    }
}

/// Chamfer distance: mean nearest-neighbour distance from `a` to `b` plus
/// from `b` to `a`, with plain or squared Euclidean distances.
pub fn chamfer(a: &PointCloud, b: &PointCloud, squared: bool) -> Result<f64> {
    nonempty(a)?;
    nonempty(b)?;
    Ok(mean_nearest(a, b, squared) + mean_nearest(b, a, squared))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmdResult {
    pub value: f64,
    /// Points per cloud after resampling.
    pub points: usize,
    /// False when the assignment was approximated.
    pub exact: bool,
}

fn subsample(c: &PointCloud, n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let mut idx = rand::seq::index::sample(rng, c.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| c.points[i]).collect()
}

/// Earth mover's distance: the minimum over bijections of the mean matched
/// Euclidean distance. The larger cloud is first subsampled uniformly
/// (seeded) to the size of the smaller one.
pub fn emd(a: &PointCloud, b: &PointCloud, seed: u64) -> Result<EmdResult> {
    nonempty(a)?;
    nonempty(b)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = a.len().min(b.len());
    let pa = if a.len() > n { subsample(a, n, &mut rng) } else { a.points.clone() };
    let pb = if b.len() > n { subsample(b, n, &mut rng) } else { b.points.clone() };
    let dist = |i: usize, j: usize| sq_dist(&pa[i], &pb[j]).sqrt();
    let exact = n <= EXACT_EMD_LIMIT;
    let assign = if exact {
        let cost: Vec<f64> = (0..n * n).map(|k| dist(k / n, k % n)).collect();
        assignment::hungarian(&cost, n)
    } else {
        assignment::greedy_refined(n, dist, seed)
    };
    let value = assign.iter().enumerate().map(|(i, &j)| dist(i, j)).sum::<f64>() / n as f64;
    Ok(EmdResult { value, points: n, exact })
}

/// Mean pairwise distances among a set of suggested parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub mean_ed: f64,
    pub mean_cd: f64,
    pub mean_emd: f64,
    pub pair_count: usize,
    /// Parts dropped for having no occupied voxel.
    pub skipped: usize,
    /// True when every EMD was solved exactly.
    pub emd_exact: bool,
    pub cd_x100: f64,
    pub emd_x100: f64,
}

/// Voxel ED, plain Chamfer and EMD averaged over all unordered pairs.
pub fn pairwise_diversity(parts: &[VoxelGrid], seed: u64) -> Result<DiversityReport> {
    let mut kept = Vec::new();
    for p in parts {
        match voxel_to_pointcloud(p, THRESHOLD) {
            Ok(c) => kept.push((p, c)),
            Err(Error::EmptyShape) => {}
            Err(e) => return Err(e),
        }
    }
    let skipped = parts.len() - kept.len();
    if skipped > 0 {
        log::warn!("{skipped} empty part(s) left out of the diversity measurement");
    }
    if kept.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least two non-empty parts, got {}", kept.len())));
    }
    let (mut ed, mut cd, mut em) = (0.0, 0.0, 0.0);
    let mut pairs = 0;
    let mut exact = true;
    for i in 0..kept.len() {
        for j in i + 1..kept.len() {
            ed += voxel_ed(kept[i].0, kept[j].0)?;
            cd += chamfer(&kept[i].1, &kept[j].1, false)?;
            let e = emd(&kept[i].1, &kept[j].1, seed.wrapping_add(pairs as u64))?;
            exact &= e.exact;
            em += e.value;
            pairs += 1;
        }
    }
    let n = pairs as f64;
    let (mean_cd, mean_emd) = (cd / n, em / n);
    Ok(DiversityReport {
        mean_ed: ed / n,
        mean_cd,
        mean_emd,
        pair_count: pairs,
        skipped,
        emd_exact: exact,
        cd_x100: mean_cd * 100.0,
        emd_x100: mean_emd * 100.0,
    })
}

/// `n` points on the iso-surface of `grid`, rescaled into the unit sphere.
pub fn surface_cloud(grid: &VoxelGrid, n: usize, seed: u64) -> Result<PointCloud> {
    mesh_surface_cloud(&marching_cubes(grid, THRESHOLD)?, n, seed)
}

/// `n` points on `mesh`, rescaled into the unit sphere.
pub fn mesh_surface_cloud(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud> {
    let mut cloud = sample_mesh_points(mesh, n, seed)?;
    cloud.normalize_unit_sphere();
    Ok(cloud)
}

fn nonempty_set(s: &[PointCloud]) -> Result<()> {
    if s.is_empty() {
        return Err(Error::EmptySet);
    }
    s.iter().try_for_each(nonempty)
}

/// Squared Chamfer distances, `gen` rows by `ref` columns.
fn distance_matrix(gen: &[PointCloud], reference: &[PointCloud]) -> Result<Vec<Vec<f64>>> {
    gen.iter().map(|g| reference.iter().map(|r| chamfer(g, r, true)).collect()).collect()
}

fn coverage_from(d: &[Vec<f64>], n_ref: usize) -> f64 {
    let mut hit = vec![false; n_ref];
    for row in d {
        let mut best = 0;
        for (j, v) in row.iter().enumerate() {
            if *v < row[best] {
                best = j;
            }
        }
        hit[best] = true;
    }
    hit.iter().filter(|h| **h).count() as f64 / n_ref as f64
}

fn mmd_from(d: &[Vec<f64>], n_ref: usize) -> f64 {
    (0..n_ref).map(|j| d.iter().map(|row| row[j]).fold(f64::INFINITY, f64::min)).sum::<f64>() / n_ref as f64
}

/// Fraction of reference clouds that are the nearest neighbour, under
/// squared Chamfer, of at least one generated cloud.
pub fn coverage(gen: &[PointCloud], reference: &[PointCloud]) -> Result<f64> {
    nonempty_set(gen)?;
    nonempty_set(reference)?;
    Ok(coverage_from(&distance_matrix(gen, reference)?, reference.len()))
}

/// Mean over reference clouds of the smallest squared Chamfer distance to a
/// generated cloud.
pub fn mmd(gen: &[PointCloud], reference: &[PointCloud]) -> Result<f64> {
    nonempty_set(gen)?;
    nonempty_set(reference)?;
    Ok(mmd_from(&distance_matrix(gen, reference)?, reference.len()))
}

/// For every cell of a `JSD_BINS³` grid over `[-1, 1]³`, the number of
/// clouds with at least one point in it, normalized to sum to one. Points
/// outside the cube fall into the nearest boundary cell.
pub fn occupancy_histogram(clouds: &[PointCloud]) -> Vec<f64> {
    let b = JSD_BINS;
    let mut counts = vec![0.0; b * b * b];
    let mut seen = vec![usize::MAX; b * b * b];
    for (ci, c) in clouds.iter().enumerate() {
        for p in &c.points {
            let cell = p.map(|v| (((v + 1.0) / 2.0 * b as f64).floor() as isize).clamp(0, b as isize - 1) as usize);
            let k = (cell[0] * b + cell[1]) * b + cell[2];
            if seen[k] != ci {
                seen[k] = ci;
                counts[k] += 1.0;
            }
        }
    }
    let total: f64 = counts.iter().sum();
    if total > 0.0 {
        counts.iter_mut().for_each(|c| *c /= total);
    }
    counts
}

fn kl_to_mixture(p: &[f64], m: &[f64]) -> f64 {
    p.iter().zip(m).filter(|(pi, _)| **pi > 0.0).map(|(pi, mi)| pi * (pi / mi).ln()).sum()
}

/// Jensen-Shannon divergence of two distributions over the same support,
/// natural log, with `0 log 0 = 0`.
pub fn jsd_histograms(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::InvalidArgument("histograms must be non-empty and of equal length".into()));
    }
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok((0.5 * kl_to_mixture(p, &m) + 0.5 * kl_to_mixture(q, &m)).max(0.0))
}

/// Jensen-Shannon divergence between the occupancy histograms of two sets.
pub fn jsd(gen: &[PointCloud], reference: &[PointCloud]) -> Result<f64> {
    nonempty_set(gen)?;
    nonempty_set(reference)?;
    jsd_histograms(&occupancy_histogram(gen), &occupancy_histogram(reference))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerativeReport {
    pub cov: f64,
    pub mmd: f64,
    pub jsd: f64,
    pub n_gen: usize,
    pub n_ref: usize,
    pub mmd_x1000: f64,
    pub jsd_x100: f64,
}

/// Coverage, MMD and JSD with one shared distance matrix.
pub fn generative_report(gen: &[PointCloud], reference: &[PointCloud]) -> Result<GenerativeReport> {
    nonempty_set(gen)?;
    nonempty_set(reference)?;
    let d = distance_matrix(gen, reference)?;
    let mmd = mmd_from(&d, reference.len());
    let jsd = jsd(gen, reference)?;
    Ok(GenerativeReport {
        cov: coverage_from(&d, reference.len()),
        mmd,
        jsd,
        n_gen: gen.len(),
        n_ref: reference.len(),
        mmd_x1000: mmd * 1000.0,
        jsd_x100: jsd * 100.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn cloud(p: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(p.to_vec()).unwrap()
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        cloud(&(0..n).map(|_| [0; 3].map(|_| rng.gen_range(-1.0..1.0))).collect::<Vec<_>>())
    }

    #[test]
    fn voxel_ed_counts_differing_cells() {
        let a = VoxelGrid::zeros(8);
        let mut b = a.clone();
        for i in 0..4 {
            b.set(i, 0, 0, 1.0);
        }
        assert_eq!(voxel_ed(&a, &b).unwrap(), 2.0);
        assert_eq!(voxel_ed(&b, &a).unwrap(), 2.0);
        assert_eq!(voxel_ed(&b, &b).unwrap(), 0.0);
        // values on the same side of the threshold are equal after binarizing
        let mut c = b.clone();
        c.set(0, 0, 0, 0.7);
        c.set(5, 5, 5, 0.3);
        assert_eq!(voxel_ed(&b, &c).unwrap(), 0.0);
        assert!(matches!(voxel_ed(&a, &VoxelGrid::zeros(16)), Err(Error::ResolutionMismatch { .. })));
    }

    #[test]
    fn chamfer_hand_values() {
        let o = cloud(&[[0.0; 3]]);
        assert_eq!(chamfer(&o, &cloud(&[[1.0, 0.0, 0.0]]), true).unwrap(), 2.0);
        assert_eq!(chamfer(&o, &cloud(&[[1.0, 0.0, 0.0]]), false).unwrap(), 2.0);
        assert_eq!(chamfer(&o, &cloud(&[[2.0, 0.0, 0.0]]), true).unwrap(), 8.0);
        assert_eq!(chamfer(&o, &o, true).unwrap(), 0.0);
        assert!(matches!(chamfer(&o, &PointCloud { points: vec![] }, true), Err(Error::EmptyCloud)));
    }

    #[test]
    fn emd_hand_values() {
        let a = cloud(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        let b = cloud(&[[1.0, 0.0, 0.0], [0.0; 3]]);
        assert_eq!(emd(&a, &b, 0).unwrap().value, 0.0);
        let a = cloud(&[[0.0; 3], [0.0, 1.0, 0.0]]);
        let b = cloud(&[[1.0, 0.0, 0.0], [1.0, 1.0, 0.0]]);
        let e = emd(&a, &b, 0).unwrap();
        assert!((e.value - 1.0).abs() < 1e-12);
        assert!(e.exact);
    }

    #[test]
    fn large_clouds_are_approximated_and_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = random_cloud(&mut rng, 600);
        let b = random_cloud(&mut rng, 700);
        let e = emd(&a, &b, 4).unwrap();
        assert!(!e.exact);
        assert_eq!(e.points, 600);
        assert_eq!(e, emd(&a, &b, 4).unwrap());
        assert!(e.value > 0.0);
    }

    #[test]
    fn jsd_hand_values() {
        let v = jsd_histograms(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        let oracle = 0.5 * (0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln()) + 0.5 * (1.0f64 / 0.75).ln();
        assert!((v - oracle).abs() < 1e-12);
        assert!((v - 0.2158).abs() < 1e-4);
        let disjoint = jsd(&[cloud(&[[-0.9; 3]])], &[cloud(&[[0.9; 3]])]).unwrap();
        assert!((disjoint - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn set_metrics_on_identical_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let set: Vec<PointCloud> = (0..4).map(|_| random_cloud(&mut rng, 30)).collect();
        let r = generative_report(&set, &set).unwrap();
        assert_eq!((r.cov, r.mmd, r.jsd), (1.0, 0.0, 0.0));
        assert_eq!((r.n_gen, r.n_ref), (4, 4));
        assert!(matches!(coverage(&[], &set), Err(Error::EmptySet)));
    }

    #[test]
    fn set_metrics_match_enumeration() {
        let at = |x: f64| cloud(&[[x, 0.0, 0.0]]);
        let gen = [at(0.0), at(0.1), at(2.0)];
        let reference = [at(0.05), at(1.0), at(3.0)];
        // gen 0 and 1 are nearest to ref 0, gen 2 is equidistant from refs 1
        // and 2 and the lower index wins
        assert!((coverage(&gen, &reference).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let oracle = (2.0 * 0.05f64.powi(2) + 2.0 * 0.9f64.powi(2) + 2.0 * 1.0) / 3.0;
        assert!((mmd(&gen, &reference).unwrap() - oracle).abs() < 1e-12);
        assert_eq!(coverage(&[at(0.0)], &reference).unwrap(), 1.0 / 3.0);
        assert_eq!(mmd(&[at(0.0)], &[at(0.5)]).unwrap(), chamfer(&at(0.0), &at(0.5), true).unwrap());
    }

    #[test]
    fn diversity_of_single_voxels() {
        let mut parts = Vec::new();
        for x in [1, 3, 6] {
            let mut g = VoxelGrid::zeros(8);
            g.set(x, 2, 2, 1.0);
            parts.push(g);
        }
        let r = pairwise_diversity(&parts, 0).unwrap();
        assert_eq!(r.pair_count, 3);
        // every pair differs in two voxels; single-voxel clouds collapse to the origin
        assert!((r.mean_ed - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!((r.mean_cd, r.mean_emd), (0.0, 0.0));
        let same = pairwise_diversity(&[parts[0].clone(), parts[0].clone(), parts[0].clone(), parts[0].clone()], 0).unwrap();
        assert_eq!(same.pair_count, 6);
        assert_eq!((same.mean_ed, same.mean_cd, same.mean_emd), (0.0, 0.0, 0.0));
        let with_empty = pairwise_diversity(&[parts[0].clone(), VoxelGrid::zeros(8), parts[1].clone()], 0).unwrap();
        assert_eq!((with_empty.skipped, with_empty.pair_count), (1, 1));
        assert!(pairwise_diversity(&[parts[0].clone(), VoxelGrid::zeros(8)], 0).is_err());
    }

    fn brute_emd(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
        fn rec(a: &[[f64; 3]], b: &[[f64; 3]], used: &mut Vec<bool>, i: usize) -> f64 {
            if i == a.len() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..b.len() {
                if !used[j] {
                    used[j] = true;
                    best = best.min(sq_dist(&a[i], &b[j]).sqrt() + rec(a, b, used, i + 1));
                    used[j] = false;
                }
            }
            best
        }
        rec(a, b, &mut vec![false; b.len()], 0) / a.len() as f64
    }

    fn brute_chamfer(a: &[[f64; 3]], b: &[[f64; 3]], squared: bool) -> f64 {
        let one = |x: &[[f64; 3]], y: &[[f64; 3]]| {
            let mut s = 0.0;
            for p in x {
                let mut m = f64::INFINITY;
                for q in y {
                    let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
                    m = m.min(if squared { d * d } else { d });
                }
                s += m;
            }
            s / x.len() as f64
        };
        one(a, b) + one(b, a)
    }

    fn pts(n: usize) -> impl Strategy<Value = Vec<[f64; 3]>> {
        prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), n)
    }

    proptest! {
        #[test]
        fn distances_match_brute_force((a, b) in (1usize..=5).prop_flat_map(|n| (pts(n), pts(n)))) {
            let (ca, cb) = (cloud(&a), cloud(&b));
            for squared in [false, true] {
                let c = chamfer(&ca, &cb, squared).unwrap();
                prop_assert!((c - brute_chamfer(&a, &b, squared)).abs() < 1e-9);
                prop_assert!((c - chamfer(&cb, &ca, squared).unwrap()).abs() < 1e-12);
            }
            let e = emd(&ca, &cb, 0).unwrap().value;
            prop_assert!((e - brute_emd(&a, &b)).abs() < 1e-9);
            prop_assert!((e - emd(&cb, &ca, 0).unwrap().value).abs() < 1e-9);
            prop_assert!(emd(&ca, &ca, 0).unwrap().value.abs() < 1e-12);
        }

        #[test]
        fn jsd_is_bounded_and_symmetric(a in pts(20), b in pts(15)) {
            let (ga, gb) = ([cloud(&a)], [cloud(&b)]);
            let v = jsd(&ga, &gb).unwrap();
            prop_assert!((0.0..=2f64.ln() + 1e-12).contains(&v));
            prop_assert!((v - jsd(&gb, &ga).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn superset_generation_covers(a in pts(6), b in pts(6), c in pts(6)) {
            let reference = [cloud(&a), cloud(&b)];
            let gen = [cloud(&c), cloud(&b), cloud(&a)];
            prop_assert_eq!(coverage(&gen, &reference).unwrap(), 1.0);
            prop_assert!(mmd(&gen, &reference).unwrap().abs() < 1e-12);
        }
    }
}
