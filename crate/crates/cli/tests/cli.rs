use std::io::{Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use retsim_cli::{cmd_experiment, cmd_focus_sweep, cmd_run, start_gateway, RunArgs, EXIT_USAGE};
use retsim_core::sim::{build_renderer, ExperimentOptions, Mode, RunLog, SimConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_retsim"))
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

const SHORT: &str = "schema_version = 1\nduration_s = 5.0\nmode = \"hybrid_cooperative\"\naxial_controller = \"optimizer\"\n";

#[test]
fn run_writes_a_full_log_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "short.toml", SHORT);
    let out = dir.path().join("out");
    let status = bin().arg("run").arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let (header, log) = RunLog::read_jsonl(&std::fs::read_to_string(out.join("run.jsonl")).unwrap()).unwrap();
    assert!(log.records.len() as f64 > 5.0 * 240.0 - 2.0);
    assert_eq!(header.mode, Mode::HybridCooperative);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["summary"]["contacts"], 0);
}

#[test]
fn overrides_are_echoed_in_the_log_header() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "short.toml", SHORT);
    let out = cmd_run(&RunArgs {
        config: cfg,
        seed: Some(4242),
        mode: Some(Mode::Cooperative),
        out: dir.path().join("o"),
    })
    .unwrap();
    let (header, _) = RunLog::read_jsonl(&std::fs::read_to_string(&out.log_path).unwrap()).unwrap();
    assert_eq!(header.seed, 4242);
    assert_eq!(header.mode, Mode::Cooperative);
    assert_eq!(out.report.summary.seed, 4242);
}

#[test]
fn bad_configs_exit_2_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    for (body, key) in [
        ("schema_version = 1\ncontrol_rate_hz = 150.0\npcle_rate_hz = 60.0\n", "control_rate_hz"),
        ("schema_version = 1\nwarp_speed = 3\n", "warp_speed"),
        ("schema_version = 2\n", "schema_version"),
        ("schema_version = 1\n[robot]\nresolution_um = 1\n", "resolution_um"),
    ] {
        let cfg = write_config(dir.path(), "bad.toml", body);
        let o = bin().arg("run").arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
        assert_eq!(o.status.code(), Some(2), "{body}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(&format!("`{key}`")), "{err}");
    }
    let o = bin().arg("run").arg(dir.path().join("missing.toml")).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn contact_fails_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let body = "schema_version = 1\nstart_distance_m = -0.0001\n";
    let cfg = write_config(dir.path(), "neg.toml", body);
    let o = bin().arg("run").arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(o.status.code(), Some(2), "negative distance is a config error");
    // unassisted cooperative steering 20 um above the tissue with heavy tremor
    let body = "schema_version = 1\nduration_s = 5.0\nmode = \"cooperative\"\nstart_distance_m = 0.00002\n\
                [operator]\ntremor_amplitude_m = 0.0003\n";
    let cfg = write_config(dir.path(), "touch.toml", body);
    let o = bin().arg("run").arg(&cfg).arg("--out").arg(dir.path().join("o2")).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("o2/report.json")).unwrap()).unwrap();
    assert!(report["summary"]["contacts"].as_u64().unwrap() > 0);
}

#[test]
fn unknown_experiment_exits_2() {
    let o = bin().args(["experiment", "exp4"]).output().unwrap();
    assert_eq!(o.status.code(), Some(EXIT_USAGE as i32));
    assert!(String::from_utf8_lossy(&o.stderr).contains("exp4"));
}

#[test]
fn experiment_writes_report_and_thinned_logs() {
    let dir = tempfile::tempdir().unwrap();
    let mut base = SimConfig::default();
    base.duration_s = 8.0;
    let opts = ExperimentOptions {
        seeds: vec![2],
        base,
        ..ExperimentOptions::default()
    };
    let report = cmd_experiment("exp1", dir.path(), &opts).unwrap();
    let names: Vec<_> = report.arms.iter().map(|a| a.name.as_str()).collect();
    assert_eq!(names, ["manual", "hybrid_teleoperated"]);
    let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert_eq!(text.trim_end(), report.to_json().unwrap());
    let (header, log) =
        RunLog::read_jsonl(&std::fs::read_to_string(dir.path().join("logs/manual_seed2.jsonl")).unwrap()).unwrap();
    assert_eq!((header.mode, header.seed), (Mode::Manual, 2));
    // one record per camera frame, plus ticks with events
    let frames = log.frames().count();
    assert!(frames >= log.records.len() - 5 && frames as f64 >= 8.0 * 60.0 - 2.0, "{frames}");
}

#[test]
fn focus_sweep_table_matches_the_renderer() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("curve/sweep.csv");
    let rows = cmd_focus_sweep(200.0, 2400.0, 10.0, &out).unwrap();
    assert_eq!(rows.len(), 221);
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("distance_um,cr,intensity"));
    let renderer = build_renderer(&SimConfig::default()).unwrap();
    let mut peak = (0.0, f64::MIN);
    for line in lines {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        let cr = renderer.score_at(v[0] * 1e-6).unwrap();
        assert!((cr - v[1]).abs() < 1e-12, "{line}");
        assert!(v[2] > 0.0 && v[2] < 1.0);
        if v[1] > peak.1 {
            peak = (v[0], v[1]);
        }
    }
    assert!((peak.0 - 690.0).abs() <= 50.0);
}

#[test]
fn bad_sweep_ranges_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for (lo, hi, step) in [(500.0, 400.0, 10.0), (200.0, 400.0, 0.0), (200.0, 400.0, -5.0), (-10.0, 400.0, 1.0)] {
        let f = cmd_focus_sweep(lo, hi, step, &dir.path().join("s.csv")).unwrap_err();
        assert_eq!(f.code, EXIT_USAGE);
    }
    let o = bin()
        .args(["focus-sweep", "--min_um", "300", "--max_um", "300"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = bin()
        .args(["focus-sweep", "--min-um", "600", "--max-um", "800", "--step-um", "50", "--out", "s.csv"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(dir.path().join("s.csv")).unwrap().lines().count(), 6);
}

fn http_get(addr: &str, path: &str) -> Option<String> {
    let mut s = TcpStream::connect(addr).ok()?;
    write!(s, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").ok()?;
    let mut buf = String::new();
    s.read_to_string(&mut buf).ok()?;
    buf.split_once("\r\n\r\n").map(|(_, b)| b.to_owned())
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn gateway_answers_health_requests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.toml", "schema_version = 1\n");
    let gw = start_gateway(0, &cfg, &dir.path().join("session.jsonl")).await.unwrap();
    let addr = gw.addr.to_string();
    let body = tokio::task::spawn_blocking(move || http_get(&addr, "/health")).await.unwrap().unwrap();
    let v: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["status"], "ok");
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
    gw.shutdown().await;
}

#[test]
fn serve_rejects_bad_config_and_busy_port() {
    let dir = tempfile::tempdir().unwrap();
    let busy = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = busy.local_addr().unwrap().port().to_string();
    let bad = write_config(dir.path(), "bad.toml", "schema_version = 1\npcle_rate_hz = 0.0\n");
    // the busy port shows the config is checked before binding
    let o = bin().args(["serve", "--port", &port]).arg(&bad).current_dir(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pcle_rate_hz"));
    let good = write_config(dir.path(), "good.toml", "schema_version = 1\n");
    let o = bin().args(["serve", "--port", &port]).arg(&good).current_dir(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot listen"));
}

#[cfg(unix)]
#[test]
fn interrupt_shuts_down_and_flushes_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.toml", "schema_version = 1\n");
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let log = dir.path().join("live.jsonl");
    let mut child = bin()
        .args(["serve", "--port", &port.to_string(), "--log"])
        .arg(&log)
        .arg(&cfg)
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let addr = format!("127.0.0.1:{port}");
    let start = Instant::now();
    while http_get(&addr, "/health").is_none() {
        assert!(start.elapsed() < Duration::from_secs(20), "server did not come up");
        std::thread::sleep(Duration::from_millis(50));
    }
    std::thread::sleep(Duration::from_millis(500));
    let killed = Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    assert!(killed.success());
    let status = child.wait().unwrap();
    assert_eq!(status.code(), Some(0));
    let (header, records) = RunLog::read_jsonl(&std::fs::read_to_string(&log).unwrap()).unwrap();
    assert_eq!(header.format, "retsim-log");
    assert!(records.records.len() > 60, "{} records", records.records.len());
}
