use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

struct Sandbox {
    dir: TempDir,
}

impl Sandbox {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("msg.txt"), b"the quick brown fox").unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_fuzzkey"))
            .args(args)
            .env("FUZZKEY_STORE", self.path("store"))
            .env_remove("FUZZKEY_PASSWORD")
            .output()
            .unwrap()
    }

    fn encrypt(&self, conditions: &str) -> Output {
        let (i, o) = (self.p("msg.txt"), self.p("msg.txt.fzk"));
        self.run(&[
            "encrypt",
            &i,
            &o,
            "--password",
            "hunter2!",
            "--iterations",
            "10000",
            "--insecure-conditions",
            conditions,
        ])
    }

    fn decrypt(&self, conditions: &str) -> Output {
        let (i, o) = (self.p("msg.txt.fzk"), self.p("out.txt"));
        self.run(&["decrypt", &i, &o, "--password", "hunter2!", "--insecure-conditions", conditions])
    }

    fn p(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn encrypt_then_decrypt_succeeds() {
    let s = Sandbox::new();
    let e = s.encrypt("25,65,1000");
    assert_eq!(code(&e), 0, "{}", stderr(&e));
    let err = stderr(&e);
    assert!(err.contains("F_e") && err.contains("processes  65") && err.contains(" ms"), "{err}");
    let d = s.decrypt("25,65,1001.1");
    assert_eq!(code(&d), 0, "{}", stderr(&d));
    assert_eq!(std::fs::read(s.path("out.txt")).unwrap(), b"the quick brown fox");
}

#[test]
fn live_conditions_roundtrip() {
    let s = Sandbox::new();
    let (i, o) = (s.p("msg.txt"), s.p("msg.txt.fzk"));
    let e = s.run(&["encrypt", &i, &o, "--password", "pw", "--iterations", "10000"]);
    assert_eq!(code(&e), 0, "{}", stderr(&e));
    // Live load can legitimately be high enough to deny; anything else is a bug.
    let d = s.run(&["decrypt", &o, &s.p("out.txt"), "--password", "pw"]);
    assert!(matches!(code(&d), 0 | 3), "{}", stderr(&d));
}

#[test]
fn replay_after_drift_is_denied() {
    let s = Sandbox::new();
    assert_eq!(code(&s.encrypt("25,65,1000")), 0);
    let d = s.decrypt("25,65,1009.5");
    assert_eq!(code(&d), 3, "{}", stderr(&d));
    let err = stderr(&d);
    let kms: f64 = err.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(kms < 0.3, "{err}");
    assert!(err.contains("tau 0.500"));
    assert!(!s.path("out.txt").exists());
}

#[test]
fn tau_override_changes_the_gate() {
    let s = Sandbox::new();
    assert_eq!(code(&s.encrypt("25,65,1000")), 0);
    let (i, o) = (s.p("msg.txt.fzk"), s.p("out.txt"));
    let d =
        s.run(&["--tau", "0.1", "decrypt", &i, &o, "--password", "hunter2!", "--insecure-conditions", "25,65,1009.5"]);
    assert_eq!(code(&d), 0, "{}", stderr(&d));
    let bad = s.run(&["--tau", "1.5", "inspect", &i]);
    assert_eq!(code(&bad), 1);
}

#[test]
fn tampered_envelope_exits_4() {
    let s = Sandbox::new();
    assert_eq!(code(&s.encrypt("25,65,1000")), 0);
    let mut bytes = std::fs::read(s.path("msg.txt.fzk")).unwrap();
    let n = bytes.len();
    bytes[n - 20] ^= 0x01;
    std::fs::write(s.path("msg.txt.fzk"), &bytes).unwrap();
    let d = s.decrypt("25,65,1000");
    assert_eq!(code(&d), 4, "{}", stderr(&d));
    assert!(!s.path("out.txt").exists());

    std::fs::write(s.path("msg.txt.fzk"), b"XXXXgarbage").unwrap();
    assert_eq!(code(&s.decrypt("25,65,1000")), 4);
}

#[test]
fn wrong_password_exits_4() {
    let s = Sandbox::new();
    assert_eq!(code(&s.encrypt("25,65,1000")), 0);
    let (i, o) = (s.p("msg.txt.fzk"), s.p("out.txt"));
    let d = s.run(&["decrypt", &i, &o, "--password", "nope", "--insecure-conditions", "25,65,1000"]);
    assert_eq!(code(&d), 4);
}

#[test]
fn missing_input_exits_1() {
    let s = Sandbox::new();
    let (i, o) = (s.p("absent.txt"), s.p("x.fzk"));
    let e = s.run(&["encrypt", &i, &o, "--password", "pw"]);
    assert_eq!(code(&e), 1);
    assert!(stderr(&e).contains("absent.txt"));
}

#[test]
fn unwritable_store_exits_2() {
    let s = Sandbox::new();
    std::fs::write(s.path("blocker"), b"").unwrap();
    let store = s.path("blocker").join("store");
    let (i, o) = (s.p("msg.txt"), s.p("msg.txt.fzk"));
    let e =
        s.run(&["--store", store.to_str().unwrap(), "encrypt", &i, &o, "--password", "pw", "--iterations", "10000"]);
    assert_eq!(code(&e), 2, "{}", stderr(&e));
}

#[test]
fn usage_errors_exit_1() {
    let s = Sandbox::new();
    assert_eq!(code(&s.run(&["encrypt"])), 1);
    assert_eq!(code(&s.run(&["frobnicate"])), 1);
    assert_eq!(code(&s.run(&["--help"])), 0);
}

#[test]
fn fixed_rng_is_deterministic() {
    let s = Sandbox::new();
    let run = |out: &str| {
        let (i, o) = (s.p("msg.txt"), s.p(out));
        let e = s.run(&[
            "--insecure-fixed-rng",
            "encrypt",
            &i,
            &o,
            "--password",
            "pw",
            "--iterations",
            "10000",
            "--insecure-conditions",
            "30,100,5000.5",
        ]);
        assert_eq!(code(&e), 0, "{}", stderr(&e));
        std::fs::read(s.path(out)).unwrap()
    };
    assert_eq!(run("a.fzk"), run("b.fzk"));
}

#[test]
fn inspect_prints_header() {
    let s = Sandbox::new();
    assert_eq!(code(&s.encrypt("25,65,1000")), 0);
    let o = s.run(&["inspect", &s.p("msg.txt.fzk")]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("kdf_iterations  10000"), "{out}");
    assert!(out.contains("proc_enc        65"));
    assert!(out.contains("ciphertext_len  19"));
}

#[test]
fn simulate_writes_monotone_csv() {
    let s = Sandbox::new();
    let csv = s.p("sweep.csv");
    let o = s.run(&["simulate", "--csv", &csv]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("drift,kms,fe"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 21);
    for w in rows.windows(2) {
        assert!(w[1][1] <= w[0][1]);
    }
    for r in &rows {
        if r[0] <= 2.0 {
            assert!(r[1] >= 0.7, "{r:?}");
        }
        if r[0] >= 8.0 {
            assert!(r[1] < 0.3, "{r:?}");
        }
    }
    // deterministic
    let again = s.run(&["simulate"]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}

#[test]
fn simulate_rejects_bad_sweep() {
    let s = Sandbox::new();
    assert_eq!(code(&s.run(&["simulate", "--step", "0"])), 1);
    assert_eq!(code(&s.run(&["simulate", "--start", "5", "--stop", "1"])), 1);
}

#[test]
fn custom_fis_config_is_loaded() {
    let s = Sandbox::new();
    let cfg = fuzzkey::kms::DEFAULT_CONFIG_TOML.replace("threshold = 0.5", "threshold = 0.9");
    std::fs::write(s.path("fis.toml"), cfg).unwrap();
    let o = s.run(&["--fis-config", &s.p("fis.toml"), "simulate", "--stop", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("tau 0.900"));
    std::fs::write(s.path("bad.toml"), "rules = 3").unwrap();
    assert_eq!(code(&s.run(&["--fis-config", &s.p("bad.toml"), "simulate"])), 1);
}

#[test]
fn entropy_report_passes() {
    let s = Sandbox::new();
    let out = s.p("report.txt");
    let o = s.run(&["entropy-report", "-n", "1000", "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(Path::new(&out)).unwrap();
    assert!(text.contains("result PASS"), "{text}");
    assert_eq!(code(&s.run(&["entropy-report", "-n", "50"])), 1);
}

#[test]
fn bench_reports_timings() {
    let s = Sandbox::new();
    let o = s.run(&["bench", "--runs", "5", "--iterations", "10000"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    let median: f64 = out.lines().find_map(|l| l.strip_prefix("median_ms ")).unwrap().parse().unwrap();
    assert!(median > 0.0);
}
