//! End-to-end acceptance checks. Each criterion prints one PASS or FAIL line;
//! the process exits nonzero if any failed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use nalgebra::{SMatrix, SVector, Vector2, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use retsim_cli::{cmd_experiment, cmd_focus_sweep};
use retsim_core::control::{register_prior, PriorModel, ScanSample, REGISTRATION_POINTS};
use retsim_core::geometry::Polygon;
use retsim_core::imaging::{cr_score, PcleFrame};
use retsim_core::phantom::Shape;
use retsim_core::robot::{mid_level_optimize, velocity_box, JointVector, RobotConfig, RobotModel, JOINTS};
use retsim_core::sim::metrics::motion_smoothness;
use retsim_core::sim::{build_renderer, AxialController, Engine, ExperimentOptions, HumanInput, Mode, SimConfig};
use retsim_core::Error;

type Check = fn(&Path) -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---- blur score ----------------------------------------------------------

/// Replicated-border box filters, absolute neighbour differences, positive
/// parts of the difference loss, larger blur of the two axes.
fn cr_oracle(px: &[Vec<f64>], len: usize) -> f64 {
    let (rows, cols) = (px.len(), px[0].len());
    let h = (len / 2) as isize;
    let at = |i: isize, j: isize| px[i.clamp(0, rows as isize - 1) as usize][j.clamp(0, cols as isize - 1) as usize];
    let mut bv = vec![vec![0.0; cols]; rows];
    let mut bh = vec![vec![0.0; cols]; rows];
    for i in 0..rows as isize {
        for j in 0..cols as isize {
            let (mut sv, mut sh) = (0.0, 0.0);
            for k in -h..=h {
                sv += at(i + k, j);
            }
            for k in -h..=h {
                sh += at(i, j + k);
            }
            bv[i as usize][j as usize] = sv / len as f64;
            bh[i as usize][j as usize] = sh / len as f64;
        }
    }
    let (mut s_fv, mut s_vv, mut s_fh, mut s_vh) = (0.0, 0.0, 0.0, 0.0);
    for i in 1..rows {
        for j in 0..cols {
            let d_f = (px[i][j] - px[i - 1][j]).abs();
            s_fv += d_f;
            s_vv += (d_f - (bv[i][j] - bv[i - 1][j]).abs()).max(0.0);
        }
    }
    for i in 0..rows {
        for j in 1..cols {
            let d_f = (px[i][j] - px[i][j - 1]).abs();
            s_fh += d_f;
            s_vh += (d_f - (bh[i][j] - bh[i][j - 1]).abs()).max(0.0);
        }
    }
    if s_fv == 0.0 && s_fh == 0.0 {
        return 0.0;
    }
    let b = |s_f: f64, s_v: f64| if s_f == 0.0 { 0.0 } else { (s_f - s_v) / s_f };
    (1.0 - b(s_fv, s_vv).max(b(s_fh, s_vh))).clamp(0.0, 1.0)
}

fn random_frame(rng: &mut ChaCha8Rng, n: usize) -> (PcleFrame, Vec<Vec<f64>>) {
    let smooth = rng.random_range(0.0..1.0);
    let mut rows = vec![vec![0.0; n]; n];
    let mut prev = 0.5;
    for row in rows.iter_mut() {
        for v in row.iter_mut() {
            prev = smooth * prev + (1.0 - smooth) * rng.random_range(0.0..1.0);
            *v = prev;
        }
    }
    let flat = rows.iter().flatten().copied().collect();
    (PcleFrame::new(n, n, flat).unwrap(), rows)
}

fn cr_metric(_: &Path) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for k in 0..100 {
        let (frame, rows) = random_frame(&mut rng, 64);
        let (got, want) = (cr_score(&frame).unwrap(), cr_oracle(&rows, 9));
        ensure(got == want, || format!("frame {k}: {got} vs oracle {want}"))?;
    }
    let frames: Vec<PcleFrame> = (0..30).map(|_| random_frame(&mut rng, 128).0).collect();
    let start = Instant::now();
    for f in &frames {
        cr_score(f).unwrap();
    }
    let ms = start.elapsed().as_secs_f64() * 1e3 / frames.len() as f64;
    ensure(ms < 5.0, || format!("{ms:.3} ms per 128x128 frame"))?;
    Ok(format!("100/100 frames exact, {ms:.3} ms per 128x128 frame"))
}

fn focus_curve(dir: &Path) -> Result<String, String> {
    let start = Instant::now();
    let rows = cmd_focus_sweep(200.0, 2400.0, 10.0, &dir.join("sweep.csv")).map_err(|f| f.message)?;
    let secs = start.elapsed().as_secs_f64();
    ensure(rows.len() == 221, || format!("{} rows", rows.len()))?;
    let k = (0..rows.len()).max_by(|&a, &b| rows[a].cr.total_cmp(&rows[b].cr)).unwrap();
    let peak = rows[k];
    let optimum = SimConfig::default().focus.optimal_distance * 1e6;
    ensure((peak.distance_um - optimum).abs() <= 50.0, || format!("peak at {} um", peak.distance_um))?;
    ensure((peak.cr - 0.61).abs() <= 0.05, || format!("peak CR {}", peak.cr))?;
    // unimodal up to rounding on the far plateau
    let rising = rows[..=k].windows(2).all(|w| w[1].cr >= w[0].cr - 1e-12);
    let falling = rows[k..].windows(2).all(|w| w[1].cr <= w[0].cr + 1e-12);
    ensure(rising && falling, || "curve is not unimodal".into())?;
    ensure(secs < 30.0, || format!("sweep took {secs:.1} s"))?;
    Ok(format!("peak CR {:.3} at {} um, {secs:.2} s", peak.cr, peak.distance_um))
}

// ---- auto-focus ----------------------------------------------------------

fn autofocus_convergence(_: &Path) -> Result<String, String> {
    let mut base = SimConfig::default();
    base.phantom.shape = Shape::Plane;
    base.phantom.bump_count = 0;
    base.mode = Mode::HybridCooperative;
    base.axial_controller = AxialController::Optimizer;
    let renderer = build_renderer(&base).unwrap();
    let t2 = base.autofocus.t2;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut ok = 0;
    for run in 0..50u64 {
        let mut cfg = base.clone();
        cfg.seed = run;
        cfg.start_distance_m = rng.random_range(760e-6..1200e-6);
        let xy = Vector2::new(rng.random_range(-2e-3..2e-3), rng.random_range(-2e-3..2e-3));
        let mut engine = Engine::with_renderer_at(cfg, renderer.clone(), Some(xy)).unwrap();
        let mut reached = false;
        while engine.time() < 5.0 {
            let rec = engine.step(&HumanInput::default()).unwrap();
            ensure(rec.distance_m > 0.0, || format!("run {run} touched the tissue at t = {}", rec.t))?;
            ensure(rec.events.is_empty(), || format!("run {run}: events {:?}", rec.events))?;
            reached |= rec.frame.is_some_and(|f| f.score >= t2);
        }
        ok += reached as usize;
    }
    ensure(ok >= 48, || format!("{ok}/50 runs focused within 5 s"))?;
    Ok(format!("{ok}/50 runs reached CR >= {t2} within 5 s, no contact"))
}

// ---- experiments ---------------------------------------------------------

fn arm_values(report: &retsim_core::sim::ExperimentReport, name: &str) -> Result<(f64, f64, f64), String> {
    let a = report.arm(name).ok_or_else(|| format!("missing arm {name}"))?;
    match (a.mean_cr, a.in_focus_fraction, a.motion_smoothness) {
        (Some(cr), Some(f), Some(ms)) => Ok((cr, f, ms)),
        _ => Err(format!("arm {name} has missing metrics")),
    }
}

fn experiment2(dir: &Path) -> Result<String, String> {
    let start = Instant::now();
    let report = cmd_experiment("exp2", &dir.join("exp2"), &ExperimentOptions::default()).map_err(|f| f.message)?;
    let secs = start.elapsed().as_secs_f64();
    ensure(report.seeds.len() == 5, || "expected 5 seeds".into())?;
    ensure(!report.config.phantom.patient_motion, || "patient motion must be off".into())?;
    let (c_cr, c_f, _) = arm_values(&report, "combined")?;
    let (m_cr, m_f, _) = arm_values(&report, "model")?;
    let (o_cr, o_f, _) = arm_values(&report, "optimizer")?;
    let detail = format!(
        "CR combined {c_cr:.3} / model {m_cr:.3} / optimizer {o_cr:.3}; in focus {:.0}% / {:.0}% / {:.0}%; {secs:.0} s",
        c_f * 100.0,
        m_f * 100.0,
        o_f * 100.0
    );
    ensure(c_cr > m_cr && c_cr > o_cr, || format!("CR ordering: {detail}"))?;
    ensure(c_f > m_f && c_f > o_f, || format!("in-focus ordering: {detail}"))?;
    ensure(secs < 120.0, || format!("too slow: {detail}"))?;
    Ok(detail)
}

fn experiment3(dir: &Path) -> Result<String, String> {
    let report = cmd_experiment("exp3", &dir.join("exp3"), &ExperimentOptions::default()).map_err(|f| f.message)?;
    ensure(report.seeds.len() == 5, || "expected 5 seeds".into())?;
    let (_, _, coop) = arm_values(&report, "cooperative")?;
    let (_, _, hcoop) = arm_values(&report, "hybrid_cooperative")?;
    let (_, _, tele) = arm_values(&report, "teleoperated")?;
    let (_, _, htele) = arm_values(&report, "hybrid_teleoperated")?;
    let reduction = 1.0 - hcoop / coop;
    let tele_gap = (htele - tele).abs() / tele;
    let detail = format!(
        "cooperative {coop:.3e} -> hybrid {hcoop:.3e} ({:.1}% lower); teleoperated {tele:.3e} vs hybrid {htele:.3e} ({:.1}% apart)",
        reduction * 100.0,
        tele_gap * 100.0
    );
    ensure(reduction >= 0.30, || detail.clone())?;
    ensure(tele_gap <= 0.20, || detail.clone())?;
    Ok(detail)
}

fn smoothness_exactness(_: &Path) -> Result<String, String> {
    let cubic: Vec<Vector3<f64>> = (0..50).map(|i| Vector3::new((i as f64).powi(3), 0.0, 0.0)).collect();
    let ms = motion_smoothness(&cubic, 1.0).unwrap();
    ensure((ms - 6.0).abs() <= 1e-12, || format!("cubic gives {ms}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let p0 = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let v = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let affine: Vec<Vector3<f64>> = (0..60).map(|i| p0 + v * i as f64).collect();
        worst = worst.max(motion_smoothness(&affine, 1.0).unwrap());
    }
    ensure(worst <= 1e-12, || format!("affine gives {worst:e}"))?;
    Ok(format!("cubic {ms}, affine max {worst:.1e}"))
}

// ---- mid-level optimizer -------------------------------------------------

/// Accelerated projected gradient on `½‖A x − b‖²` over a box.
fn projected_gradient<const M: usize>(
    a: &SMatrix<f64, M, JOINTS>,
    b: &SVector<f64, M>,
    lo: &JointVector,
    hi: &JointVector,
) -> JointVector {
    let ata = a.transpose() * a;
    let atb = a.transpose() * b;
    let lipschitz = ata.symmetric_eigenvalues().max().max(1e-300);
    let project = |x: JointVector| x.zip_zip_map(lo, hi, |v, l, h| v.clamp(l, h));
    let (mut x, mut t) = (project(JointVector::zeros()), 1.0f64);
    let mut y = x;
    for _ in 0..100_000 {
        let next = project(y - (ata * y - atb) / lipschitz);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = next + (next - x) * ((t - 1.0) / t_next);
        x = next;
        t = t_next;
    }
    x
}

fn optimizer_optimality(_: &Path) -> Result<String, String> {
    let model = RobotModel::from_config(&RobotConfig {
        orientation_lock: false,
        ..RobotConfig::default()
    })
    .unwrap();
    let dt = 1.0 / 240.0;
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst: f64 = 0.0;
    for k in 0..200 {
        let q = JointVector::from_fn(|i, _| {
            let r = 0.999 * model.q_upper[i];
            rng.random_range(-r..r)
        });
        let xdot = Vector6::from_fn(|i, _| if i < 3 { rng.random_range(-8e-3..8e-3) } else { rng.random_range(-0.8..0.8) });
        let qd = mid_level_optimize(&model, &q, &xdot, dt).map_err(|e| e.to_string())?;
        let (lo, hi) = velocity_box(&model, &q, dt).unwrap();
        ensure((0..JOINTS).all(|i| qd[i] >= lo[i] && qd[i] <= hi[i]), || format!("instance {k} leaves the box"))?;
        let j = model.jacobian(&q).unwrap();
        let oracle = projected_gradient(&j, &xdot, &lo, &hi);
        let gap = ((j * qd - xdot).norm_squared() - (j * oracle - xdot).norm_squared()).abs();
        worst = worst.max(gap);
    }
    ensure(worst <= 1e-6, || format!("objective gap {worst:e}"))?;
    Ok(format!("200 instances, max objective gap {worst:.2e}, box respected"))
}

fn determinism(dir: &Path) -> Result<String, String> {
    let opts = ExperimentOptions {
        seeds: vec![1],
        ..ExperimentOptions::default()
    };
    let mut reports = Vec::new();
    for k in 0..2 {
        let out = dir.join(format!("exp3_repeat{k}"));
        cmd_experiment("exp3", &out, &opts).map_err(|f| f.message)?;
        reports.push(std::fs::read(out.join("report.json")).map_err(|e| e.to_string())?);
    }
    ensure(reports[0] == reports[1], || "report bytes differ".into())?;
    Ok(format!("two exp3 runs with seed 1: {} identical bytes", reports[0].len()))
}

// ---- prior model ---------------------------------------------------------

fn region() -> Polygon {
    Polygon::equilateral(Vector2::zeros(), 3.6e-3).unwrap()
}

fn points_in_region(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector2<f64>> {
    let r = region();
    let mut out = Vec::new();
    while out.len() < n {
        let p = Vector2::new(rng.random_range(-2e-3..2e-3), rng.random_range(-2e-3..2e-3));
        if r.contains(&p) {
            out.push(p);
        }
    }
    out
}

fn prior_fit(_: &Path) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let quad = |c: &[f64; 6], p: &Vector2<f64>| {
        c[0] * p.x * p.x + c[1] * p.y * p.y + c[2] * p.x * p.y + c[3] * p.x + c[4] * p.y + c[5]
    };
    let mut worst_rel: f64 = 0.0;
    for _ in 0..50 {
        let truth: [f64; 6] = [
            rng.random_range(-60.0..60.0),
            rng.random_range(-60.0..60.0),
            rng.random_range(-30.0..30.0),
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.1..0.1),
            rng.random_range(-2e-3..2e-3),
        ];
        let pts: Vec<_> = points_in_region(&mut rng, REGISTRATION_POINTS).into_iter().map(|p| (p, quad(&truth, &p))).collect();
        let got = PriorModel::fit(&pts, region()).map_err(|e| e.to_string())?.coefficients();
        for k in 0..6 {
            worst_rel = worst_rel.max((got[k] - truth[k]).abs() / truth[k].abs());
        }
    }
    ensure(worst_rel <= 1e-9, || format!("relative coefficient error {worst_rel:e}"))?;

    let radius = 14e-3;
    let noise = Normal::new(0.0, 30e-6).unwrap();
    let cap = |p: &Vector2<f64>| -radius + (radius * radius - p.norm_squared()).sqrt();
    let scan: Vec<ScanSample> = points_in_region(&mut rng, 300)
        .into_iter()
        .map(|xy| ScanSample {
            xy,
            z: cap(&xy) + 690e-6 + noise.sample(&mut rng),
            score: 0.55,
        })
        .collect();
    let model = register_prior(&scan, 0.47).map_err(|e| e.to_string())?;
    let rms = (scan.iter().map(|s| (model.evaluate(s.xy.x, s.xy.y) - s.z).powi(2)).sum::<f64>() / scan.len() as f64).sqrt();
    ensure(rms <= 100e-6, || format!("sphere-cap RMS {:.1} um", rms * 1e6))?;
    ensure(model.sample_count() == 20, || format!("model used {} points", model.sample_count()))?;

    let with = |n: usize| -> Vec<ScanSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        points_in_region(&mut rng, n + 40)
            .into_iter()
            .enumerate()
            .map(|(i, xy)| ScanSample {
                xy,
                z: 1e-3,
                score: if i < n { 0.5 } else { 0.3 },
            })
            .collect()
    };
    let short = register_prior(&with(19), 0.47);
    ensure(
        short == Err(Error::RegistrationIncomplete { found: 19, required: 20 }),
        || format!("19 in-focus points gave {short:?}"),
    )?;
    ensure(register_prior(&with(20), 0.47).is_ok(), || "20 in-focus points were rejected".into())?;
    Ok(format!("max relative error {worst_rel:.1e}, sphere-cap RMS {:.1} um, 19 points rejected, 20 accepted", rms * 1e6))
}

fn main() {
    let checks: [(&str, Check); 9] = [
        ("CR metric correctness", cr_metric),
        ("focus curve reproduction", focus_curve),
        ("auto-focus convergence", autofocus_convergence),
        ("experiment 2 ordering", experiment2),
        ("experiment 3 smoothness ordering", experiment3),
        ("MS metric exactness", smoothness_exactness),
        ("optimizer optimality", optimizer_optimality),
        ("determinism", determinism),
        ("prior-model fit", prior_fit),
    ];
    let dir = tempfile::tempdir().expect("temporary directory");
    let mut failed = 0;
    for (name, check) in checks {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| check(dir.path())))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_text(&p))));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1} s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} [{secs:.1} s]");
            }
        }
    }
    println!("{} of {} acceptance criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn panic_text(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into())
}
