//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria 7-9 share one desk-scale training run (procedural chairs at
//! R=32). Set `ACCEPTANCE_ONLY=1,2,10` to run a subset.

use std::collections::HashSet;
use std::process::ExitCode;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use partsynth::dataset::{make_dataset, Category, Dataset, PartLabel, PartRecord};
use partsynth::geometry::{apply_affine, compose_assembly, marching_cubes, write_obj, AffineTransform, PointCloud, VoxelGrid};
use partsynth::implicit::{train_implicit, ImplicitConfig, ImplicitModel};
use partsynth::metrics::{chamfer, emd, generative_report, jsd_histograms, pairwise_diversity, surface_cloud, DiversityReport};
use partsynth::pcn::{stn_terms, train_pcn, PcnModel, PcnTrainConfig};
use partsynth::pipeline::{implicit_training_pairs, psn_samples};
use partsynth::psn::{
    ddpm_q_sample, ddpm_q_step, mdn_loss, mdn_sample_components, nearest_candidate, train_psn, train_psn_pairs, DiffusionSchedule, Kind,
    MixtureModel, PsnConfig, SuggestionModel,
};
use partsynth::synthesis::{auto_sample, auto_sessions, Initial, Models, SynthesisConfig, SynthesisSession};
use partsynth::LatentCode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

const R: usize = 32;
const DESK_SHAPES: usize = 500;
const DESK_SEED: u64 = 7;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- oracles

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn brute_chamfer(a: &[[f64; 3]], b: &[[f64; 3]], squared: bool) -> f64 {
    let one = |x: &[[f64; 3]], y: &[[f64; 3]]| {
        x.iter()
            .map(|p| {
                let d = y.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min);
                if squared {
                    d * d
                } else {
                    d
                }
            })
            .sum::<f64>()
            / x.len() as f64
    };
    one(a, b) + one(b, a)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn brute_emd(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    permutations(a.len())
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| dist(&a[i], &b[j])).sum::<f64>() / a.len() as f64)
        .fold(f64::INFINITY, f64::min)
}

fn direct_jsd(p: &[f64], q: &[f64]) -> f64 {
    let mut s = 0.0;
    for (a, b) in p.iter().zip(q) {
        let m = (a + b) / 2.0;
        if *a > 0.0 {
            s += 0.5 * a * (a / m).ln();
        }
        if *b > 0.0 {
            s += 0.5 * b * (b / m).ln();
        }
    }
    s
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
    (0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect()
}

// ---------------------------------------------------------------- 1-6, 10

fn c1_metric_oracles() -> Outcome {
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let (na, nb) = (r.gen_range(1..=5), r.gen_range(1..=5));
        let (a, b) = (random_cloud(&mut r, na), random_cloud(&mut r, nb));
        let (ca, cb) = (PointCloud::new(a.clone()).unwrap(), PointCloud::new(b.clone()).unwrap());
        for sq in [false, true] {
            worst = worst.max((chamfer(&ca, &cb, sq).unwrap() - brute_chamfer(&a, &b, sq)).abs());
        }
        let b_eq = random_cloud(&mut r, na);
        let e = emd(&ca, &PointCloud::new(b_eq.clone()).unwrap(), 0).unwrap();
        worst = worst.max((e.value - brute_emd(&a, &b_eq)).abs());
    }
    let disjoint = jsd_histograms(&[0.5, 0.5, 0.0, 0.0], &[0.0, 0.0, 0.25, 0.75]).unwrap();
    let (p, q) = ([0.1, 0.4, 0.5, 0.0], [0.3, 0.3, 0.2, 0.2]);
    let mixed = (jsd_histograms(&p, &q).unwrap() - direct_jsd(&p, &q)).abs();
    let log2_err = (disjoint - std::f64::consts::LN_2).abs();
    check(
        worst <= 1e-9 && log2_err <= 1e-9 && mixed <= 1e-9,
        format!("max |metric - brute force| {worst:.1e} over 200 clouds; disjoint JSD - ln2 {log2_err:.1e}; mixed JSD err {mixed:.1e}"),
    )
}

fn c2_identity_sets() -> Outcome {
    let data = make_dataset(Category::Chair, 12, 3, R).map_err(|e| e.to_string())?;
    let clouds: Vec<PointCloud> = data
        .train
        .iter()
        .enumerate()
        .map(|(i, s)| surface_cloud(&s.assembly().unwrap(), 2048, i as u64).unwrap())
        .collect();
    let rep = generative_report(&clouds, &clouds).map_err(|e| e.to_string())?;
    check(
        rep.cov == 1.0 && rep.mmd == 0.0 && rep.jsd == 0.0,
        format!("{} clouds of 2048 points: COV {}, MMD {}, JSD {}", clouds.len(), rep.cov, rep.mmd, rep.jsd),
    )
}

fn c3_diffusion_algebra() -> Outcome {
    let s = DiffusionSchedule::standard();
    let mut r = rng(3);
    let mut inv_err: f64 = 0.0;
    for _ in 0..1000 {
        let t = r.gen_range(1..=s.steps());
        let z0: Vec<f64> = (0..16).map(|_| r.gen()).collect();
        let eps: Vec<f64> = (0..16).map(|_| r.sample(StandardNormal)).collect();
        let zt = ddpm_q_sample(&s, &z0, t, &eps).unwrap();
        let ab = s.alpha_bar(t);
        for ((x, e), z) in zt.iter().zip(&eps).zip(&z0) {
            inv_err = inv_err.max(((x - (1.0 - ab).sqrt() * e) / ab.sqrt() - z).abs());
        }
    }
    let monotone = (2..=s.steps()).all(|t| s.alpha_bar(t) < s.alpha_bar(t - 1));

    // 10,000 stepwise chains of 8-dimensional codes started at z0 = 3.
    let (draws, d, z0) = (10_000usize, 8usize, 3.0f64);
    let mean_at = [10usize, 100, 250, 500];
    let var_at = [10usize, 100, 250, 500, 1000];
    let mut chains = vec![vec![z0; d]; draws];
    let mut worst_mean: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    for t in 1..=s.steps() {
        for c in chains.iter_mut() {
            let eps: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
            *c = ddpm_q_step(&s, c, t, &eps).unwrap();
        }
        if mean_at.contains(&t) || var_at.contains(&t) {
            let n = (draws * d) as f64;
            let mean = chains.iter().flatten().sum::<f64>() / n;
            let var = chains.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let ab = s.alpha_bar(t);
            if mean_at.contains(&t) {
                worst_mean = worst_mean.max((mean / (ab.sqrt() * z0) - 1.0).abs());
            }
            if var_at.contains(&t) {
                worst_var = worst_var.max((var / (1.0 - ab) - 1.0).abs());
            }
        }
    }
    check(
        inv_err <= 1e-9 && monotone && worst_mean <= 0.02 && worst_var <= 0.02,
        format!(
            "inversion err {inv_err:.1e}; alpha_bar strictly decreasing {monotone}; chain mean rel err {:.2}%, variance rel err {:.2}%",
            worst_mean * 100.0,
            worst_var * 100.0
        ),
    )
}

fn c4_imle_matching() -> Outcome {
    let mut r = rng(4);
    let pairs: Vec<(LatentCode, LatentCode)> = (0..256)
        .map(|_| (LatentCode::new((0..32).map(|_| r.gen()).collect()), LatentCode::new((0..32).map(|_| r.gen()).collect())))
        .collect();
    let mut config = PsnConfig::reference(Kind::Cimle).with_epochs(3).with_seed(4);
    config.hidden = 64;
    config.imle_log_batches = 24;
    let (_, report) = train_psn_pairs(&pairs, &config).map_err(|e| e.to_string())?;
    let sels = &report.imle_selections;
    let brute = |target: &[f32], cands: &[Vec<f32>]| {
        let d = |c: &Vec<f32>| c.iter().zip(target).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>();
        (0..cands.len()).fold(0, |best, i| if d(&cands[i]) < d(&cands[best]) { i } else { best })
    };
    let agree = sels
        .iter()
        .filter(|s| {
            s.candidates.len() == config.h
                && s.selected == brute(&s.target, &s.candidates)
                && s.selected == nearest_candidate(&s.target, &s.candidates)
                && s.trained_on == s.candidates[s.selected]
        })
        .count();
    check(
        !sels.is_empty() && agree == sels.len(),
        format!("{agree}/{} logged selections (24 batches, h={}) equal the brute-force argmin", sels.len(), config.h),
    )
}

fn c5_mdn() -> Outcome {
    let single = MixtureModel { weights: vec![1.0], means: vec![vec![0.3, 0.7]], stds: vec![vec![1.0, 1.0]] };
    let nll = mdn_loss(&single, &LatentCode::new(vec![0.3, 0.7])).map_err(|e| e.to_string())?;
    let nll_err = (nll - (2.0 * std::f64::consts::PI).ln()).abs();
    let weights = vec![0.15, 0.5, 0.35];
    let mix = MixtureModel { weights: weights.clone(), means: vec![vec![0.0; 2]; 3], stds: vec![vec![0.1; 2]; 3] };
    let picks = mdn_sample_components(&mix, 10_000, 5).map_err(|e| e.to_string())?;
    let worst = (0..3)
        .map(|c| (picks.iter().filter(|&&p| p == c).count() as f64 / picks.len() as f64 - weights[c]).abs())
        .fold(0.0, f64::max);
    check(
        nll_err <= 1e-6 && worst <= 0.02,
        format!("single-component NLL - ln(2pi) = {nll_err:.1e}; max component frequency error {worst:.4} over 10000 draws"),
    )
}

fn c6_stn_gradients() -> Outcome {
    let r4 = 4;
    let mut r = rng(6);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let p_hat: Vec<f64> = (0..64).map(|_| r.gen()).collect();
        let p_prime: Vec<f64> = (0..64).map(|_| r.gen()).collect();
        let xf = AffineTransform::new(r.gen_range(0.5..1.0), [r.gen_range(-0.1..0.1), r.gen_range(-0.1..0.1), r.gen_range(-0.1..0.1)]).unwrap();
        let s = xf.scale + r.gen_range(0.05..0.2);
        let t = xf.translation.map(|v| v + r.gen_range(0.02..0.1));
        let g = stn_terms(&p_hat, &p_prime, r4, &xf, s, t);
        let f = |s: f64, t: [f64; 3]| stn_terms(&p_hat, &p_prime, r4, &xf, s, t).loss;
        let eps = 1e-4;
        let rel = |fd: f64, an: f64| (fd - an).abs() / fd.abs().max(1e-8);
        worst = worst.max(rel((f(s + eps, t) - f(s - eps, t)) / (2.0 * eps), g.d_scale));
        for a in 0..3 {
            let (mut tp, mut tm) = (t, t);
            tp[a] += eps;
            tm[a] -= eps;
            worst = worst.max(rel((f(s, tp) - f(s, tm)) / (2.0 * eps), g.d_translation[a]));
        }
    }
    check(worst <= 1e-3, format!("max relative error {worst:.2e} over 20 random 4^3 problems (eps 1e-4)"))
}

fn c10_geometry() -> Outcome {
    let sphere = VoxelGrid::from_fn(R, |p| if (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() <= 0.35 { 1.0 } else { 0.0 });
    let mesh = marching_cubes(&sphere, 0.5).map_err(|e| e.to_string())?;
    let tol = 2.0 / R as f64;
    let radius_err = mesh.vertices.iter().map(|v| ((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() - 0.35).abs()).fold(0.0, f64::max);
    let watertight = mesh.is_watertight();

    let g = VoxelGrid::from_fn(16, |p| (0.5 + 0.3 * p[0] - 0.2 * p[1] + 0.25 * p[2]) as f32);
    let a = AffineTransform::new(1.25, [0.01, -0.02, 0.015]).unwrap();
    let b = AffineTransform::new(1.1, [-0.012, 0.02, 0.0]).unwrap();
    let twice = apply_affine(&apply_affine(&g, &a).unwrap(), &b).unwrap();
    let once = apply_affine(&g, &a.then(&b)).unwrap();
    let comp_err = twice.values().iter().zip(once.values()).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);

    let mut r = rng(10);
    let mut laws = true;
    for _ in 0..50 {
        let mut grid = || VoxelGrid::from_values(8, (0..512).map(|_| if r.gen_bool(0.3) { r.gen() } else { 0.0 }).collect()).unwrap();
        let (x, y, z) = (grid(), grid(), grid());
        let c = |v: &[VoxelGrid]| compose_assembly(v).unwrap();
        laws &= c(&[x.clone(), y.clone()]) == c(&[y.clone(), x.clone()]);
        laws &= c(&[c(&[x.clone(), y.clone()]), z.clone()]) == c(&[x.clone(), c(&[y.clone(), z.clone()])]);
        laws &= c(&[x.clone(), x.clone()]) == c(&[x.clone()]);
    }
    check(
        watertight && radius_err <= tol && comp_err <= 1e-5 && laws,
        format!(
            "sphere watertight {watertight}, max |radius - 0.35| {radius_err:.4} (tol {tol:.4}); composition err {comp_err:.1e}; compose laws {laws}"
        ),
    )
}

// ---------------------------------------------------------------- desk scale

struct Desk {
    data: Dataset,
    pcn: Arc<PcnModel>,
    implicit: Arc<ImplicitModel>,
    seconds: f64,
}

fn desk_pcn_config() -> PcnTrainConfig {
    PcnTrainConfig { lr_ae: 1e-3, lr_stn: 1e-3, epochs_joint: 15, epochs_stn: 5, batch_size: 16, seed: 1, ..PcnTrainConfig::default() }
}

fn desk_implicit_config() -> ImplicitConfig {
    ImplicitConfig { width: 64, epochs: 30, lr: 2e-3, points_per_code: 1024, ..ImplicitConfig::default() }
}

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let t0 = Instant::now();
        let data = make_dataset(Category::Chair, DESK_SHAPES, DESK_SEED, R).unwrap();
        let parts: Vec<PartRecord> = data.train_parts().cloned().collect();
        let (pcn, _) = train_pcn(&parts, &desk_pcn_config()).unwrap();
        let (implicit, _) = train_implicit(&implicit_training_pairs(&pcn, &parts, &desk_implicit_config()).unwrap(), &desk_implicit_config()).unwrap();
        Desk { data, pcn: Arc::new(pcn), implicit: Arc::new(implicit), seconds: t0.elapsed().as_secs_f64() }
    })
}

fn c7_desk_training() -> Outcome {
    let d = desk();
    let t0 = Instant::now();
    let test: Vec<&PartRecord> = d.data.test_parts().collect();
    let (mut iou, mut located, mut implicit_iou) = (0.0, 0usize, 0.0);
    for p in &test {
        let z = d.pcn.encode(&p.normalized).unwrap();
        iou += d.pcn.decode(&z).unwrap().iou(&p.normalized, 0.5).unwrap();
        let xf = d.pcn.localize(&p.normalized).unwrap();
        let terr = (0..3).map(|a| (xf.translation[a] - p.xf.translation[a]).abs()).fold(0.0, f64::max);
        if (xf.scale - p.xf.scale).abs() <= 0.15 && terr <= 3.0 / R as f64 {
            located += 1;
        }
        implicit_iou += d.implicit.decode_field(&z, R).unwrap().iou(&p.normalized, 0.5).unwrap();
    }
    let n = test.len() as f64;
    let (iou, loc, implicit_iou) = (iou / n, located as f64 / n, implicit_iou / n);
    let minutes = (d.seconds + t0.elapsed().as_secs_f64()) / 60.0;
    check(
        iou >= 0.7 && loc >= 0.8 && implicit_iou >= 0.65 && minutes <= 25.0,
        format!(
            "{} train shapes, {} held-out parts: PCN IoU {iou:.3}, localized {:.1}%, implicit IoU {implicit_iou:.3}, {minutes:.1} min",
            d.data.train.len(),
            test.len(),
            loc * 100.0
        ),
    )
}

struct Suggesters {
    cgan: Arc<SuggestionModel>,
    cimle: Arc<SuggestionModel>,
    cddpm: Arc<SuggestionModel>,
    seconds: f64,
}

fn desk_psn_config(kind: Kind) -> PsnConfig {
    let c = PsnConfig::reference(kind).with_seed(8);
    match kind {
        Kind::Cgan => c.with_epochs(200),
        Kind::Cimle => c.with_epochs(100),
        Kind::Cddpm => c.with_epochs(30).with_lr(1e-3),
        Kind::Mdn => c.with_epochs(100),
    }
}

fn suggesters() -> &'static Suggesters {
    static S: OnceLock<Suggesters> = OnceLock::new();
    S.get_or_init(|| {
        let d = desk();
        let t0 = Instant::now();
        let samples = psn_samples(&d.pcn, &d.data.train, 4, DESK_SEED).unwrap();
        let train = |kind| Arc::new(train_psn(&samples, &desk_psn_config(kind)).unwrap().0);
        Suggesters { cgan: train(Kind::Cgan), cimle: train(Kind::Cimle), cddpm: train(Kind::Cddpm), seconds: t0.elapsed().as_secs_f64() }
    })
}

fn models(psn: &Arc<SuggestionModel>) -> Models {
    let d = desk();
    Models::new(d.pcn.clone(), d.implicit.clone(), psn.clone()).unwrap()
}

/// Mean diversity of k=4 suggestions over seat-only conditions from the
/// first `n` held-out chairs.
fn condition_diversity(psn: &Arc<SuggestionModel>, n: usize) -> DiversityReport {
    let m = models(psn);
    let seats: Vec<&VoxelGrid> = desk().data.test.iter().filter_map(|s| s.part(PartLabel::Seat)).map(|p| &p.normalized).take(n).collect();
    assert_eq!(seats.len(), n, "not enough held-out seats");
    let mut sum = DiversityReport { mean_ed: 0.0, mean_cd: 0.0, mean_emd: 0.0, pair_count: 0, skipped: 0, emd_exact: true, cd_x100: 0.0, emd_x100: 0.0 };
    for (i, seat) in seats.iter().enumerate() {
        let mut s = SynthesisSession::start("c8", Initial::Part((*seat).clone()), m.clone(), SynthesisConfig::default()).unwrap();
        let placed: Vec<VoxelGrid> = s.propose(0, 100 + i as u64).unwrap().items.iter().map(|it| it.placed.clone()).collect();
        let r = pairwise_diversity(&placed, i as u64).unwrap();
        sum.mean_ed += r.mean_ed / n as f64;
        sum.mean_cd += r.mean_cd / n as f64;
        sum.mean_emd += r.mean_emd / n as f64;
        sum.pair_count += r.pair_count;
        sum.skipped += r.skipped;
        sum.emd_exact &= r.emd_exact;
    }
    sum.cd_x100 = sum.mean_cd * 100.0;
    sum.emd_x100 = sum.mean_emd * 100.0;
    sum
}

fn c8_diversity_ordering() -> Outcome {
    let s = suggesters();
    let t0 = Instant::now();
    let imle = condition_diversity(&s.cimle, 20);
    let gan = condition_diversity(&s.cgan, 20);
    let ddpm = condition_diversity(&s.cddpm, 20);
    let minutes = (s.seconds + t0.elapsed().as_secs_f64()) / 60.0;
    let ordered = imle.mean_ed > gan.mean_ed && imle.mean_cd > gan.mean_cd && imle.mean_emd > gan.mean_emd;
    check(
        ordered && ddpm.mean_ed > 0.0 && minutes <= 20.0,
        format!(
            "ED/CDx100/EMDx100 cIMLE {:.2}/{:.3}/{:.3} vs cGAN {:.2}/{:.3}/{:.3}; cDDPM ED {:.2}; {minutes:.1} min",
            imle.mean_ed, imle.cd_x100, imle.emd_x100, gan.mean_ed, gan.cd_x100, gan.emd_x100, ddpm.mean_ed
        ),
    )
}

fn obj_digests(m: &Models, seed: u64) -> Vec<String> {
    auto_sessions(m, &SynthesisConfig::default(), 3, 10, seed)
        .unwrap()
        .iter()
        .map(|(s, leaf)| {
            let mut buf = Vec::new();
            write_obj(&s.export_node(*leaf, R).unwrap(), &mut buf).unwrap();
            hex::encode(Sha256::digest(&buf))
        })
        .collect()
}

fn c9_auto_sample() -> Outcome {
    let m = models(&suggesters().cimle);
    let t0 = Instant::now();
    let seed = 2024;
    let first = auto_sample(&m, &SynthesisConfig::default(), 3, 10, seed).map_err(|e| e.to_string())?;
    let second = auto_sample(&m, &SynthesisConfig::default(), 3, 10, seed).map_err(|e| e.to_string())?;
    let four_parts = first.iter().all(|n| n.parts.len() == 4);
    let identical = first == second;
    let patterns: HashSet<Vec<u8>> = first.iter().map(|n| n.assembly.values().iter().map(|&v| (v >= 0.5) as u8).collect()).collect();

    let dir = tempfile::tempdir().unwrap();
    let d = desk();
    d.pcn.save(dir.path().join("pcn.ckpt")).unwrap();
    d.implicit.save(dir.path().join("implicit.ckpt")).unwrap();
    suggesters().cimle.save(dir.path().join("cimle.ckpt")).unwrap();
    let reloaded = Models::new(
        Arc::new(PcnModel::load(dir.path().join("pcn.ckpt")).unwrap()),
        Arc::new(ImplicitModel::load(dir.path().join("implicit.ckpt")).unwrap()),
        Arc::new(SuggestionModel::load(dir.path().join("cimle.ckpt")).unwrap()),
    )
    .unwrap();
    let digests = obj_digests(&m, seed);
    let stable = digests == obj_digests(&m, seed) && digests == obj_digests(&reloaded, seed);
    let minutes = t0.elapsed().as_secs_f64() / 60.0;
    check(
        first.len() == 10 && four_parts && identical && patterns.len() >= 10 && stable && minutes <= 10.0,
        format!(
            "{} leaves, all with 4 parts {four_parts}, rerun identical {identical}, {} distinct patterns, OBJ digests stable across reruns and reload {stable}, {minutes:.1} min",
            first.len(),
            patterns.len()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(u8, &str, fn() -> Outcome); 10] = [
        (1, "metric oracle equivalence", c1_metric_oracles),
        (2, "identity-set sanity", c2_identity_sets),
        (3, "diffusion algebra", c3_diffusion_algebra),
        (4, "IMLE matching", c4_imle_matching),
        (5, "MDN correctness", c5_mdn),
        (6, "STN gradient check", c6_stn_gradients),
        (7, "desk-scale training", c7_desk_training),
        (8, "diversity ordering", c8_diversity_ordering),
        (9, "automated synthesis", c9_auto_sample),
        (10, "geometry suite", c10_geometry),
    ];
    let only: Option<HashSet<u8>> = std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
