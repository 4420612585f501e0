//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mavtrack_core::fixtures::{evaluate_fixture, validation_fixture};
use mavtrack_core::kdtree::brute_force_within;
use mavtrack_core::scenario::{circle_ramp, corridor, hover, run_scenario, RunResult};
use mavtrack_core::{
    calibrate, CalibrationConfig, DensityModel, HermiteTrajectory, KdTree, Knot, Modality, RateMode,
    ScanPatternConfig, Scene, Vec3,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn failed(e: impl std::fmt::Display) -> Verdict {
    verdict(false, format!("error: {e}"))
}

fn default_model() -> DensityModel {
    calibrate(
        &Scene::default(),
        &ScanPatternConfig::default(),
        &CalibrationConfig::default(),
        1,
    )
    .expect("default calibration")
}

fn run(mode: RateMode, model: &DensityModel) -> Result<(RunResult, f64), String> {
    let mut cfg = circle_ramp();
    cfg.mode = mode;
    let t0 = Instant::now();
    let r = run_scenario(&cfg, model).map_err(|e| e.to_string())?;
    Ok((r, t0.elapsed().as_secs_f64()))
}

fn persistence(fixed: &RunResult, adaptive: &RunResult, seconds: f64) -> Verdict {
    let revs = |r: &RunResult| r.metrics.revolutions.unwrap_or(0.0);
    let (f, a) = (&fixed.metrics, &adaptive.metrics);
    let pass = f.lost
        && revs(fixed) < 4.0
        && !a.lost
        && revs(adaptive) >= 4.0
        && a.fused.mean < 0.3
        && seconds < 120.0;
    verdict(
        pass,
        format!(
            "fixed:5 lost at {:.2} s after {:.2} rev; adaptive {:.2} rev, lost={}, mean error {:.3} m; {:.1} s",
            f.track_duration,
            revs(fixed),
            revs(adaptive),
            a.lost,
            a.fused.mean,
            seconds
        ),
    )
}

fn density_shape(m: &DensityModel) -> Verdict {
    let rows: Vec<usize> = (0..m.distances.len())
        .filter(|&i| (2.0..=17.0).contains(&m.distances[i]))
        .collect();
    let mut monotone = true;
    for w in rows.windows(2) {
        for j in 0..m.frequencies.len() {
            monotone &= m.mu[w[1]][j] <= m.mu[w[0]][j];
        }
    }
    for &i in &rows {
        for j in 1..m.frequencies.len() {
            // Higher frequency means shorter integration.
            monotone &= m.mu[i][j] <= m.mu[i][j - 1];
        }
    }
    let best = |d: f64, lo: f64, hi: f64| {
        let mut b = 0.0f64;
        let mut f = lo;
        while f <= hi + 1e-9 {
            b = b.max(m.expected_count(d, f).map(|c| c.mu).unwrap_or(0.0));
            f += 0.25;
        }
        b
    };
    let mf = [2.0, 5.0, 7.5, 10.0].iter().map(|&d| best(d, 5.0, 20.0)).fold(f64::MAX, f64::min);
    let hf = [2.0, 5.0, 10.0, 13.0, 17.0]
        .iter()
        .map(|&d| best(d, 20.0, 100.0))
        .fold(f64::MAX, f64::min);
    verdict(
        monotone && mf >= 20.0 && hf >= 4.0,
        format!("monotone={monotone}; min over d<=10 of max mu in MF band {mf:.1} (need 20); min over d<=17 of max mu in HF band {hf:.1} (need 4)"),
    )
}

fn spacing(model: &DensityModel) -> Verdict {
    let mut worst: f64 = 0.0;
    let mut cases = Vec::new();
    for speed in [0.5, 1.0, 2.0] {
        for f in [5.0, 10.0, 20.0] {
            if speed / f < 0.1 - 1e-12 {
                continue;
            }
            let mut cfg = corridor(speed);
            cfg.duration = 10.0;
            cfg.mode = RateMode::Fixed(f);
            let r = match run_scenario(&cfg, model) {
                Ok(r) => r,
                Err(e) => return failed(e),
            };
            let rows: Vec<_> = r
                .spacing
                .iter()
                .filter(|s| s.modality == Modality::Hf && s.n_points >= 20)
                .collect();
            if rows.len() < 5 {
                return verdict(false, format!("v={speed} f={f}: only {} rows", rows.len()));
            }
            let mean = rows.iter().map(|s| s.spacing).sum::<f64>() / rows.len() as f64;
            let rel = mean / (speed / f) - 1.0;
            worst = worst.max(rel.abs());
            cases.push(format!("{speed}@{f}:{:+.1}%", 100.0 * rel));
        }
    }
    verdict(
        worst <= 0.2,
        format!("worst deviation {:.1}% over {}", 100.0 * worst, cases.join(" ")),
    )
}

fn noise_ordering(model: &DensityModel) -> Verdict {
    let r = match run_scenario(&hover(30.0), model) {
        Ok(r) => r,
        Err(e) => return failed(e),
    };
    let m = &r.metrics;
    verdict(
        m.hf.scatter > m.mf.scatter && m.fused.rmse <= m.hf.rmse,
        format!(
            "std HF {:.4} m > MF {:.4} m; fused rmse {:.4} m <= HF {:.4} m",
            m.hf.scatter, m.mf.scatter, m.fused.rmse, m.hf.rmse
        ),
    )
}

fn kdtree_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let fixtures = 1000;
    let mut queries = 0;
    for _ in 0..fixtures {
        let n = rng.gen_range(0..400);
        let spread = rng.gen_range(0.1..10.0);
        let mut pts: Vec<Vec3> = (0..n)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-spread..spread),
                    rng.gen_range(-spread..spread),
                    rng.gen_range(-spread..spread),
                )
            })
            .collect();
        if n > 0 && rng.gen_bool(0.3) {
            let dup = pts[0];
            pts.extend(std::iter::repeat_n(dup, 5));
        }
        let tree = KdTree::new(pts.clone());
        for _ in 0..10 {
            let q = if !pts.is_empty() && rng.gen_bool(0.2) {
                pts[rng.gen_range(0..pts.len())]
            } else {
                Vec3::new(
                    rng.gen_range(-spread..spread),
                    rng.gen_range(-spread..spread),
                    rng.gen_range(-spread..spread),
                )
            };
            let r = if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(0.0..spread) };
            queries += 1;
            if tree.within(&q, r) != brute_force_within(&pts, &q, r) {
                return verdict(false, format!("mismatch at query {queries}"));
            }
        }
    }
    verdict(true, format!("{fixtures} fixtures, {queries} queries, all identical"))
}

fn spline_exactness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut pos, mut vel, mut fd) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        // Random-walk flight: bounded speed, positions consistent with it up
        // to a few centimetres of measurement noise.
        let n = rng.gen_range(2..40);
        let r = |rng: &mut ChaCha8Rng, a: f64| Vec3::new(rng.gen_range(-a..a), rng.gen_range(-a..a), rng.gen_range(-a..a));
        let mut t = rng.gen_range(-5.0..5.0);
        let mut p = r(&mut rng, 20.0);
        let mut v = r(&mut rng, 5.0);
        let mut knots = Vec::with_capacity(n);
        for _ in 0..n {
            knots.push(Knot { t, p, v });
            let dt = rng.gen_range(0.01..0.5);
            let v_next = (v + r(&mut rng, 2.0)).map(|x| x.clamp(-5.0, 5.0));
            p += (v + v_next) * (dt / 2.0) + r(&mut rng, 0.05);
            v = v_next;
            t += dt;
        }
        let traj = match HermiteTrajectory::new(knots.clone()) {
            Ok(s) => s,
            Err(e) => return failed(e),
        };
        for k in &knots {
            pos = pos.max((traj.position(k.t).unwrap() - k.p).amax());
            vel = vel.max((traj.velocity(k.t).unwrap() - k.v).amax());
        }
        let h = 1e-6;
        for _ in 0..5 {
            let s = rng.gen_range(traj.start_time() + h..traj.end_time() - h);
            let numeric = (traj.position(s + h).unwrap() - traj.position(s - h).unwrap()) / (2.0 * h);
            fd = fd.max((numeric - traj.velocity(s).unwrap()).amax());
        }
    }
    verdict(
        pos <= 1e-9 && vel <= 1e-9 && fd <= 1e-6,
        format!("max knot position error {pos:.2e} m, velocity error {vel:.2e} m/s, derivative vs central difference {fd:.2e}"),
    )
}

fn separability(model: &DensityModel) -> Verdict {
    let mut pass = true;
    let mut min_gap = f64::MAX;
    let mut lines = Vec::new();
    for seed in 1..=5 {
        let (g, decoys) = match validation_fixture(seed, model).and_then(|fx| evaluate_fixture(&fx, model)) {
            Ok(v) => v,
            Err(e) => return failed(e),
        };
        let worst = decoys.iter().map(|(_, r)| r.iou).fold(0.0, f64::max);
        pass &= g.accepted && decoys.iter().all(|(_, r)| !r.accepted);
        min_gap = min_gap.min(g.iou - worst);
        lines.push(format!("s{seed} {:.2}/{:.2}", g.iou, worst));
    }
    verdict(
        pass && min_gap >= 0.3,
        format!("genuine/best decoy IoU {}; min gap {min_gap:.2}", lines.join(" ")),
    )
}

fn cli(args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_mavtrack"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&o.stderr).into_owned())
    }
}

fn tree_bytes(dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
    let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            tree_bytes(&p, out);
        } else {
            out.push((p.display().to_string(), fs::read(&p).unwrap()));
        }
    }
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().expect("temp dir");
    let root = dir.path();
    let cal = root.join("cal.toml");
    fs::write(
        &cal,
        "seed = 3\n[calibration]\ndistances = [2.0, 5.0, 10.0, 17.0]\nfrequencies = [5.0, 20.0, 100.0]\n",
    )
    .unwrap();
    let mut cfg = circle_ramp();
    cfg.duration = 4.0;
    let scenario = root.join("scenario.toml");
    fs::write(&scenario, cfg.to_toml().unwrap()).unwrap();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let mut snapshots = Vec::new();
    for rep in 0..2 {
        let out = root.join(format!("rep{rep}"));
        let model = out.join("cal/model.json");
        let steps: [Vec<String>; 3] = [
            vec!["calibrate".into(), "--config".into(), s(&cal), "--out".into(), s(&out.join("cal"))],
            vec![
                "track".into(),
                "--config".into(),
                s(&scenario),
                "--model".into(),
                s(&model),
                "--out".into(),
                s(&out.join("track")),
                "--seed".into(),
                "11".into(),
            ],
            vec![
                "compare".into(),
                "--config".into(),
                s(&scenario),
                "--model".into(),
                s(&model),
                "--out".into(),
                s(&out.join("compare")),
                "--modes".into(),
                "fixed:10,adaptive".into(),
            ],
        ];
        for step in &steps {
            let args: Vec<&str> = step.iter().map(String::as_str).collect();
            if let Err(e) = cli(&args) {
                return failed(e);
            }
        }
        let mut files = Vec::new();
        tree_bytes(&out, &mut files);
        for f in &mut files {
            f.0 = f.0.replacen(&s(&out), "", 1);
        }
        snapshots.push(files);
    }
    let n = snapshots[0].len();
    let same = snapshots[0] == snapshots[1];
    verdict(
        same && n >= 20,
        format!("calibrate, track and compare run twice: {n} files, byte-identical={same}"),
    )
}

fn fov_keeping(adaptive: &RunResult) -> Verdict {
    let limit = 40.85 - 5.0;
    let az = adaptive.metrics.max_abs_azimuth_deg;
    verdict(
        az <= limit,
        format!("max |azimuth| {az:.2} deg over {:.2} s (limit {limit:.2})", adaptive.metrics.track_duration),
    )
}

fn main() -> ExitCode {
    let model = default_model();
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();

    let circle = run(RateMode::Fixed(5.0), &model).and_then(|f| Ok((f, run(RateMode::Adaptive, &model)?)));
    match &circle {
        Ok(((fixed, s1), (adaptive, s2))) => {
            results.push((1, "persistence", persistence(fixed, adaptive, s1 + s2)));
        }
        Err(e) => results.push((1, "persistence", failed(e))),
    }
    results.push((2, "density model shape", density_shape(&model)));
    results.push((3, "spacing law", spacing(&model)));
    results.push((4, "noise ordering", noise_ordering(&model)));
    results.push((5, "spatial index oracle", kdtree_oracle()));
    results.push((6, "spline exactness", spline_exactness()));
    results.push((7, "validation separability", separability(&model)));
    results.push((8, "determinism", determinism()));
    match &circle {
        Ok((_, (adaptive, _))) => results.push((9, "FoV keeping", fov_keeping(adaptive))),
        Err(e) => results.push((9, "FoV keeping", failed(e))),
    }

    let mut all = true;
    for (n, name, v) in &results {
        all &= v.pass;
        println!(
            "{} criterion {n} ({name}): {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
