//! End-to-end acceptance suite. Runs every check in sequence, prints one
//! PASS/FAIL line per check and exits non-zero if any check fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ccloc::aoa::estimate_aoa_all;
use ccloc::charting::{batch_objective, combined_loss, fit_affine_transform, siamese_loss, train_siamese_features, AoaTdoaLikelihood, Affine, LikelihoodMode, Mlp, PositionLikelihood};
use ccloc::dissimilarity::{estimate_scale_gamma, geodesic_complete, DissimilarityMatrix, Stage};
use ccloc::evaluation::{continuity_trustworthiness, default_neighbors, kruskal_stress, position_error_stats};
use ccloc::likelihood::{log_likelihood_aoa, log_likelihood_tdoa, EstimateBundle};
use ccloc::model::{Scenario, Vec2, SPEED_OF_LIGHT};
use ccloc::pipeline::{self, PipelineConfig, TrajectoryConfig};
use ccloc::simulator::{generate_dataset, l_shape_container, l_shaped_scenario, random_positions, SimConfig};
use ccloc::solver::{localize_point, Method, SolverConfig};
use ccloc::subspace::{estimate_autocorrelation, estimate_source_count_mdl, forward_backward_average, root_music};
use ccloc::toa::{estimate_toa_all, ToaConfig};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mae(a: &[Vec2], b: &[Vec2]) -> f64 {
    position_error_stats(a, b).unwrap().mae_m
}

fn cgauss(rng: &mut ChaCha8Rng, std: f64) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * (std / 2f64.sqrt())
}

fn subspace_oracles() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut notes = Vec::new();
    let mut pass = true;

    // Autocorrelation against a naive triple loop.
    let snaps: Vec<Vec<Complex64>> = (0..32).map(|_| (0..16).map(|_| cgauss(&mut rng, 1.0)).collect()).collect();
    let cov = estimate_autocorrelation(snaps.iter().map(|s| s.as_slice())).unwrap();
    let mut worst: f64 = 0.0;
    for p in 0..16 {
        for q in 0..16 {
            let mut acc = Complex64::new(0.0, 0.0);
            for s in &snaps {
                acc += s[p] * s[q].conj();
            }
            acc /= snaps.len() as f64;
            worst = worst.max((cov.matrix[(p, q)] - acc).norm() / acc.norm().max(1e-300));
        }
    }
    pass &= worst <= 1e-12;
    notes.push(format!("autocorr rel {worst:.1e}"));

    // Forward-backward output is exactly Hermitian and persymmetric.
    let fb = forward_backward_average(&cov).unwrap();
    let n = fb.dim();
    let exact = (0..n).all(|i| (0..n).all(|j| fb.matrix[(i, j)] == fb.matrix[(j, i)].conj() && fb.matrix[(i, j)] == fb.matrix[(n - 1 - j, n - 1 - i)]));
    pass &= exact;
    notes.push(format!("fbcm exact {exact}"));

    // Two sources, 40 dB SNR.
    let phases = [0.7, -1.3];
    let v = 12;
    let noise_std = 10f64.powf(-40.0 / 20.0);
    let snaps: Vec<Vec<Complex64>> = (0..400)
        .map(|_| {
            let amps = [cgauss(&mut rng, 1.0), cgauss(&mut rng, 1.0)];
            (0..v).map(|m| amps[0] * Complex64::from_polar(1.0, phases[0] * m as f64) + amps[1] * Complex64::from_polar(1.0, phases[1] * m as f64) + cgauss(&mut rng, noise_std)).collect()
        })
        .collect();
    let cov = estimate_autocorrelation(snaps.iter().map(|s| s.as_slice())).unwrap();
    let est = root_music(&cov, 2, |p| p).unwrap();
    let mut got: Vec<f64> = est.iter().map(|s| s.phase).collect();
    got.sort_by(f64::total_cmp);
    let err = (got[0] - phases[1]).abs().max((got[1] - phases[0]).abs());
    pass &= err < 1e-3;
    notes.push(format!("music err {err:.1e} rad"));

    // MDL against a direct evaluation of the criterion.
    let mdl = |ev: &[f64], n: f64, k: usize| {
        let v = ev.len();
        let tail = &ev[k..];
        let m = tail.len() as f64;
        let geo = (tail.iter().map(|x| x.ln()).sum::<f64>() / m).exp();
        let ari = tail.iter().sum::<f64>() / m;
        -n * m * (geo / ari).ln() + 0.5 * k as f64 * (2.0 * v as f64 - k as f64) * n.ln()
    };
    let cases: [(&[f64], usize, usize); 3] = [(&[10.0, 1.0, 1.0, 1.0], 100, 1), (&[3.0, 3.0, 3.0, 3.0, 3.0], 50, 0), (&[100.0, 50.0, 1.0, 1.0, 1.0, 1.0], 1000, 2)];
    for (ev, n, expected) in cases {
        let brute = (0..ev.len()).min_by(|&a, &b| mdl(ev, n as f64, a).total_cmp(&mdl(ev, n as f64, b))).unwrap();
        let got = estimate_source_count_mdl(ev, n).unwrap();
        pass &= got == brute && got == expected;
    }
    notes.push("mdl 3/3 cases".into());
    let secs = t0.elapsed().as_secs_f64();
    pass &= secs < 30.0;
    notes.push(format!("{secs:.1}s"));
    outcome(pass, notes.join(", "))
}

/// 100 random points in the LoS-only scene.
fn los_scene(snr_db: Option<f64>) -> (Scenario, ccloc::model::Dataset) {
    let s = l_shaped_scenario(256);
    let traj = random_positions(&s.bounds, 100, 21);
    let sim = SimConfig { snr_db, seed: 4, ..SimConfig::default() };
    let ds = generate_dataset(&s, &sim, &traj).unwrap();
    (s, ds)
}

fn toa_accuracy() -> Outcome {
    let t0 = Instant::now();
    let mut pass = true;
    let mut notes = Vec::new();
    for (snr, bound) in [(None, 0.05), (Some(20.0), 0.2)] {
        let (s, ds) = los_scene(snr);
        let toa = estimate_toa_all(&ds, &s, &ToaConfig::default()).unwrap();
        let errs: Vec<f64> = ds
            .points
            .iter()
            .zip(&toa)
            .flat_map(|(p, row)| row.iter().enumerate().map(|(b, e)| (e.tau_s - s.distance(&p.position_2d(), b) / SPEED_OF_LIGHT).abs()).collect::<Vec<_>>())
            .collect();
        let med = median(errs) * s.ofdm.bandwidth_hz;
        pass &= med < bound;
        notes.push(format!("snr {snr:?}: median {med:.4}/B (< {bound}/B)"));
    }
    let secs = t0.elapsed().as_secs_f64();
    pass &= secs < 120.0;
    notes.push(format!("{secs:.1}s"));
    outcome(pass, notes.join(", "))
}

fn aoa_accuracy() -> Outcome {
    let mut pass = true;
    let mut notes = Vec::new();
    for (snr, bound) in [(None, 0.1), (Some(20.0), 2.0)] {
        let (s, ds) = los_scene(snr);
        let toa = estimate_toa_all(&ds, &s, &ToaConfig::default()).unwrap();
        let aoa = estimate_aoa_all(&ds, &s, &toa).unwrap();
        let mut errs = Vec::new();
        for (p, row) in ds.points.iter().zip(&aoa) {
            for (b, e) in row.iter().enumerate() {
                let truth = s.arrays.frame(b).azimuth(&s.lift(&p.position_2d()));
                if truth.abs() <= 60f64.to_radians() {
                    errs.push((e.azimuth_rad - truth).abs().to_degrees());
                }
            }
        }
        let n = errs.len();
        let med = median(errs);
        pass &= med < bound;
        notes.push(format!("snr {snr:?}: median {med:.4}° over {n} (< {bound}°)"));
    }
    outcome(pass, notes.join(", "))
}

fn localize_all(bundle: &EstimateBundle, s: &Scenario, method: Method) -> Vec<Vec2> {
    pipeline::localize(bundle, s, method, &SolverConfig::default()).unwrap().iter().map(|r| r.position.expect("localized")).collect()
}

fn joint_localization() -> Outcome {
    let quality = PipelineConfig::default().quality;
    let (s, ds) = los_scene(None);
    let est = pipeline::estimate(&ds, &s, &ToaConfig::default(), &quality).unwrap();
    let clean = mae(&ds.positions_2d(), &localize_all(&est.bundle, &s, Method::AoaToa));

    let config = PipelineConfig { trajectory: TrajectoryConfig::Random { n_points: 100 }, seed: 2, ..PipelineConfig::default() };
    let (ds, _) = pipeline::simulate(&config).unwrap();
    let est = pipeline::estimate(&ds, &config.scenario, &config.toa, &config.quality).unwrap();
    let truth = ds.positions_2d();
    let m_toa = mae(&truth, &localize_all(&est.bundle, &config.scenario, Method::Toa));
    let m_joint = mae(&truth, &localize_all(&est.bundle, &config.scenario, Method::AoaToa));
    outcome(clean < 0.1 && m_toa >= m_joint, format!("noiseless ML:AoA/ToA {clean:.4} m (< 0.1); multipath ML:ToA {m_toa:.3} m >= ML:AoA/ToA {m_joint:.3} m"))
}

fn rotated_scenario(s: &Scenario, angle: f64) -> Scenario {
    let (c, sn) = (angle.cos(), angle.sin());
    let rot = |v: [f64; 3]| [c * v[0] - sn * v[1], sn * v[0] + c * v[1], v[2]];
    let mut r = s.clone();
    r.arrays.centers = s.arrays.centers.iter().map(|&v| rot(v)).collect();
    r.arrays.normals = s.arrays.normals.iter().map(|&v| rot(v)).collect();
    r
}

fn likelihood_invariances() -> Outcome {
    let config = PipelineConfig { trajectory: TrajectoryConfig::Random { n_points: 10 }, ..PipelineConfig::default() };
    let (ds, _) = pipeline::simulate(&config).unwrap();
    let s = &config.scenario;
    let bundle = pipeline::estimate(&ds, s, &config.toa, &config.quality).unwrap().bundle;
    let mut shifted = bundle.clone();
    shifted.toa.iter_mut().flatten().for_each(|t| *t += 37e-9);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut tdoa_rel, mut argmax_shift, mut rot_rel): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for l in 0..bundle.len() {
        let x = Vec2::new(rng.random_range(0.5..13.5), rng.random_range(0.5..5.5));
        let a = log_likelihood_tdoa(&x, &bundle, l, s);
        let b = log_likelihood_tdoa(&x, &shifted, l, s);
        tdoa_rel = tdoa_rel.max((a - b).abs() / a.abs().max(1e-300));

        let p = localize_point(&bundle, l, s, Method::Toa, &SolverConfig::default()).unwrap().position.unwrap();
        let q = localize_point(&shifted, l, s, Method::Toa, &SolverConfig::default()).unwrap().position.unwrap();
        argmax_shift = argmax_shift.max((p - q).norm());

        let angle = rng.random_range(-3.0..3.0);
        let r = rotated_scenario(s, angle);
        let xr = Vec2::new(angle.cos() * x[0] - angle.sin() * x[1], angle.sin() * x[0] + angle.cos() * x[1]);
        let a = log_likelihood_aoa(&x, &bundle, l, s);
        let b = log_likelihood_aoa(&xr, &bundle, l, &r);
        rot_rel = rot_rel.max((a - b).abs() / a.abs().max(1e-300));
    }
    outcome(
        tdoa_rel <= 1e-12 && argmax_shift <= 1e-3 && rot_rel <= 1e-9,
        format!("TDoA shift rel {tdoa_rel:.1e}, ToA argmax moved {argmax_shift:.1e} m, AoA rotation rel {rot_rel:.1e}"),
    )
}

fn self_supervised_chart() -> Outcome {
    let t0 = Instant::now();
    let config = PipelineConfig { trajectory: TrajectoryConfig::Sweep { n_points: 250, speed_mps: 1.0 }, ..PipelineConfig::default() };
    let (ds, _) = pipeline::simulate(&config).unwrap();
    let truth = ds.positions_2d();
    let n = truth.len();
    let euclid = DissimilarityMatrix::from_fn(Stage::Fused, n, |i, j| (truth[i] - truth[j]).norm());
    let geodesic = geodesic_complete(&euclid, 20).unwrap();
    let feats = ccloc::charting::dataset_features(&ds, &config.features).unwrap();
    let (model, _) = train_siamese_features(&feats, &geodesic, config.features, &config.train_config()).unwrap();
    let chart = model.forward(&feats).unwrap();
    let aligned: Vec<Vec2> = {
        let a = fit_affine_transform(&chart, &truth).unwrap();
        chart.iter().map(|p| a.apply(p)).collect()
    };
    let diag = config.scenario.bounds.bounding_box().diagonal();
    let m = mae(&truth, &aligned);
    let ks = kruskal_stress(&truth, &chart).unwrap();
    let (ct, tw) = continuity_trustworthiness(&truth, &chart, default_neighbors(n)).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        m < 0.1 * diag && ks < 0.1 && ct > 0.9 && tw > 0.9 && secs < 600.0,
        format!("MAE {m:.3} m (< {:.3}), KS {ks:.3}, CT {ct:.3}, TW {tw:.3}, {secs:.1}s", 0.1 * diag),
    )
}

/// Strong-multipath scene where the classical estimators degrade.
pub fn harsh_config() -> PipelineConfig {
    let mut c = PipelineConfig { seed: 1, ..PipelineConfig::default() };
    c.sim = SimConfig { scatterer_count: 8, scatter_loss_db: 3.0, snr_db: Some(10.0), blockages: vec![l_shape_container()], ..SimConfig::default() };
    c
}

fn augmented_ordering() -> Outcome {
    let config = harsh_config();
    let s = &config.scenario;
    let (ds, _) = pipeline::simulate(&config).unwrap();
    let truth = ds.positions_2d();
    let est = pipeline::estimate(&ds, s, &config.toa, &config.quality).unwrap();
    let ml: Vec<Option<Vec2>> = pipeline::localize(&est.bundle, s, Method::AoaToa, &config.solver).unwrap().iter().map(|r| r.position).collect();
    let geodesic = pipeline::geodesic_dissimilarity(&ds, &config.dissimilarity).unwrap();
    let (scaled, _) = pipeline::scale_dissimilarity(&geodesic, &ml, &config.dissimilarity, config.seeds().gamma).unwrap();
    let train = config.train_config();
    let (_, cc) = pipeline::chart_siamese(&ds, &scaled, &ml, &config.features, &train).unwrap();
    let (_, aug) = pipeline::chart_augmented(&ds, &scaled, &est.bundle, s, &config.features, &train).unwrap();
    let ml: Vec<Vec2> = ml.into_iter().map(|p| p.unwrap()).collect();
    let (m_ml, m_cc, m_aug) = (mae(&truth, &ml), mae(&truth, &cc), mae(&truth, &aug));
    outcome(m_aug <= m_cc && m_cc <= m_ml, format!("CC aug {m_aug:.3} m <= CC affine {m_cc:.3} m <= ML:AoA/ToA {m_ml:.3} m"))
}

fn unit_values() -> Outcome {
    let o = Vec2::zeros();
    let third = siamese_loss(&o, &Vec2::new(1.0, 0.0), 2.0, 1.0).unwrap();
    let (x, y) = (Vec2::new(0.0, 0.0), Vec2::new(0.0, 1.5));
    let l0 = combined_loss(&x, &y, 2.0, 0.3, 0.6, 0.0);
    let l1 = combined_loss(&x, &y, 2.0, 0.3, 0.6, 1.0);
    let lh = combined_loss(&Vec2::zeros(), &Vec2::new(1.0, 0.0), 2.0, 0.2, 0.2, 0.5);
    let endpoints = (l0 - 0.25).abs() < 1e-15 && (l1 + 0.9).abs() < 1e-15 && (lh - 0.3).abs() < 1e-15;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pts: Vec<Vec2> = (0..40).map(|_| Vec2::new(rng.random_range(0.0..14.0), rng.random_range(0.0..14.0))).collect();
    let d = DissimilarityMatrix::from_fn(Stage::Geodesic, 40, |i, j| 2.5 * (pts[i] - pts[j]).norm());
    let gamma = estimate_scale_gamma(&d, &pts, None).unwrap();

    let t = 1.1f64;
    let planted = Affine::new([[t.cos(), -t.sin()], [t.sin(), t.cos()]], [3.0, -7.5]).unwrap();
    let world: Vec<Vec2> = pts.iter().map(|p| planted.apply(p)).collect();
    let fit = fit_affine_transform(&pts, &world).unwrap();
    let aff_err = (0..2).flat_map(|r| (0..2).map(move |c| (r, c))).map(|(r, c)| (fit.a[r][c] - planted.a[r][c]).abs()).chain((0..2).map(|r| (fit.b[r] - planted.b[r]).abs())).fold(0.0, f64::max);
    outcome(
        third == 1.0 / 3.0 && endpoints && (gamma - 2.5).abs() <= 1e-9 && aff_err <= 1e-9,
        format!("siamese {third}, combined endpoints {endpoints}, γ̂ {gamma:.12}, affine err {aff_err:.1e}"),
    )
}

fn brute_stress(t: &[Vec2], c: &[Vec2]) -> f64 {
    let mut pairs = Vec::new();
    for i in 0..t.len() {
        for j in 0..i {
            pairs.push(((t[i] - t[j]).norm(), (c[i] - c[j]).norm()));
        }
    }
    let s = pairs.iter().map(|(a, b)| a * b).sum::<f64>() / pairs.iter().map(|(_, b)| b * b).sum::<f64>();
    (pairs.iter().map(|(a, b)| (a - s * b).powi(2)).sum::<f64>() / pairs.iter().map(|(a, _)| a * a).sum::<f64>()).sqrt()
}

fn brute_ct_tw(t: &[Vec2], c: &[Vec2], k: usize) -> (f64, f64) {
    let l = t.len();
    let rank = |p: &[Vec2], i: usize, j: usize| {
        let mut order: Vec<usize> = (0..l).filter(|&m| m != i).collect();
        order.sort_by(|&a, &b| (p[a] - p[i]).norm().total_cmp(&(p[b] - p[i]).norm()).then(a.cmp(&b)));
        order.iter().position(|&m| m == j).unwrap() + 1
    };
    let (mut ct, mut tw) = (0.0, 0.0);
    for i in 0..l {
        for j in (0..l).filter(|&j| j != i) {
            let (rt, rc) = (rank(t, i, j), rank(c, i, j));
            if rc <= k && rt > k {
                tw += (rt - k) as f64;
            }
            if rt <= k && rc > k {
                ct += (rc - k) as f64;
            }
        }
    }
    let z = 2.0 / (l as f64 * k as f64 * (2.0 * l as f64 - 3.0 * k as f64 - 1.0));
    (1.0 - z * ct, 1.0 - z * tw)
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..30 {
        let t: Vec<Vec2> = (0..30).map(|_| Vec2::new(rng.random::<f64>() * 10.0, rng.random::<f64>() * 10.0)).collect();
        let c: Vec<Vec2> = t.iter().map(|p| p + Vec2::new(rng.random::<f64>() * 3.0, rng.random::<f64>() * 3.0)).collect();
        worst = worst.max((kruskal_stress(&t, &c).unwrap() - brute_stress(&t, &c)).abs());
        let (ct, tw) = continuity_trustworthiness(&t, &c, 3).unwrap();
        let (bct, btw) = brute_ct_tw(&t, &c, 3);
        worst = worst.max((ct - bct).abs()).max((tw - btw).abs());
    }
    let t: Vec<Vec2> = (0..30).map(|_| Vec2::new(rng.random::<f64>(), rng.random::<f64>())).collect();
    let identity = kruskal_stress(&t, &t).unwrap() == 0.0 && continuity_trustworthiness(&t, &t, 3).unwrap() == (1.0, 1.0);
    let mut jensen = true;
    for _ in 0..1000 {
        let n = rng.random_range(1..30);
        let a: Vec<Vec2> = (0..n).map(|_| Vec2::new(rng.random::<f64>(), rng.random::<f64>())).collect();
        let b: Vec<Vec2> = (0..n).map(|_| Vec2::new(rng.random::<f64>(), rng.random::<f64>())).collect();
        let s = position_error_stats(&a, &b).unwrap();
        jensen &= s.mae_m <= s.drms_m * (1.0 + 1e-12);
    }
    outcome(worst <= 1e-12 && identity && jensen, format!("max deviation from brute force {worst:.1e}, identity {identity}, mae<=drms {jensen}"))
}

fn max_gradient_error(mlp: &Mlp, eval: &dyn Fn(&Mlp) -> (f64, Vec<f64>)) -> f64 {
    let (_, g) = eval(mlp);
    let p = mlp.params();
    let scale = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let f = |d: f64| {
            let mut m = mlp.clone();
            let mut q = p.clone();
            q[i] += d;
            m.set_params(&q).unwrap();
            eval(&m).0
        };
        let fd = (f(h) - f(-h)) / (2.0 * h);
        worst = worst.max((fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-3 * scale));
    }
    worst
}

fn gradient_checks() -> Outcome {
    let s = l_shaped_scenario(64);
    let traj = random_positions(&s.bounds, 8, 3);
    let ds = generate_dataset(&s, &SimConfig { scatterer_count: 4, snr_db: Some(25.0), ..SimConfig::default() }, &traj).unwrap();
    let quality = PipelineConfig::default().quality;
    let bundle = pipeline::estimate(&ds, &s, &ToaConfig::for_subcarriers(64), &quality).unwrap().bundle;

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = DMatrix::from_fn(6, 8, |_, _| rng.random_range(-1.0..1.0));
    let d = DissimilarityMatrix::from_fn(Stage::Scaled, 8, |i, j| 1.0 + ((i * 7 + j * 7) % 5) as f64);
    let pairs = vec![(0, 1), (2, 5), (7, 3), (4, 6), (1, 7), (5, 0)];
    let mut mlp = Mlp::new(&[6, 10, 2], 5).unwrap();
    // Put the outputs inside the scene so the likelihood terms matter.
    mlp.biases[1][0] = 5.0;
    mlp.biases[1][1] = 3.0;

    let mut worst: f64 = 0.0;
    for beta in [Some(1.0), None] {
        worst = worst.max(max_gradient_error(&mlp, &|m: &Mlp| batch_objective(m, &x, &pairs, &d, beta, None).unwrap()));
    }
    for mode in [LikelihoodMode::GridNormalized, LikelihoodMode::Log, LikelihoodMode::Raw] {
        let lik = AoaTdoaLikelihood::new(&bundle, &s, mode, 0.5).unwrap();
        let l: &dyn PositionLikelihood = &lik;
        worst = worst.max(max_gradient_error(&mlp, &|m: &Mlp| batch_objective(m, &x, &pairs, &d, None, Some((l, 0.4))).unwrap()));
    }
    outcome(worst <= 1e-4, format!("max relative deviation {worst:.1e} over siamese and combined objectives"))
}

fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn reproducibility() -> Outcome {
    let exe = env!("CARGO_BIN_EXE_ccloc");
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("config.json");
    std::fs::write(&cfg, r#"{"trajectory": {"kind": "sweep", "n_points": 60, "speed_mps": 1.0}, "train": {"hidden": [32, 32], "steps": 150, "batch_pairs": 64}}"#).unwrap();
    let commands: [&[&str]; 8] = [
        &["simulate"],
        &["validate"],
        &["localize", "--method", "toa"],
        &["localize", "--method", "aoa"],
        &["localize", "--method", "joint"],
        &["chart", "--mode", "siamese"],
        &["chart", "--mode", "augmented"],
        &["evaluate"],
    ];
    let mut runs = Vec::new();
    for (name, threads) in [("a", "1"), ("b", "1"), ("c", "4")] {
        let dir = root.path().join(name);
        let mut stdout = Vec::new();
        for args in commands {
            let o = Command::new(exe)
                .args(["--config", cfg.to_str().unwrap(), "--seed", "5", "--threads", threads])
                .args(["--dataset", dir.join("data").to_str().unwrap(), "--output", dir.join("out").to_str().unwrap()])
                .args(args)
                .output()
                .unwrap();
            if !o.status.success() {
                return outcome(false, format!("{args:?} failed: {}", String::from_utf8_lossy(&o.stderr)));
            }
            if args[0] != "simulate" && args[0] != "validate" {
                stdout.extend(o.stdout);
            }
        }
        runs.push((files_in(&dir), stdout));
    }
    let n_files = runs[0].0.len();
    let same = runs.windows(2).all(|w| w[0] == w[1]);
    outcome(same && n_files >= 15, format!("{n_files} files byte-identical across 3 runs (threads 1, 1, 4): {same}"))
}

fn main() {
    let checks: [(&str, fn() -> Outcome); 11] = [
        ("subspace oracles", subspace_oracles),
        ("ToA accuracy", toa_accuracy),
        ("AoA accuracy", aoa_accuracy),
        ("joint ML localization", joint_localization),
        ("likelihood invariances", likelihood_invariances),
        ("self-supervised chart bound", self_supervised_chart),
        ("augmented charting ordering", augmented_ordering),
        ("loss, scale and affine unit values", unit_values),
        ("metric oracles", metric_oracles),
        ("objective gradient checks", gradient_checks),
        ("CLI reproducibility", reproducibility),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!("[{:02}] {name}: {} ({}; {:.1}s)", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail, t0.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}
