use fuzzkey::kms::DEFAULT_CONFIG_TOML;
use fuzzkey::{FisConfig, KmsConfig};
use proptest::prelude::*;

fn sweep(cfg: &KmsConfig, cpu: f64, proc: f64) -> Vec<f64> {
    (0..=100).map(|i| cfg.score(cpu, proc, f64::from(i) / 10.0).value).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    /// More drift never raises the score, whatever the load.
    #[test]
    fn kms_non_increasing_in_drift(cpu in 0.0f64..=100.0, proc in 0.0f64..=500.0) {
        let cfg = KmsConfig::default();
        let s = sweep(&cfg, cpu, proc);
        for (i, w) in s.windows(2).enumerate() {
            prop_assert!(w[1] <= w[0] + 1e-12, "cpu {cpu}, proc {proc}, drift {}: {} -> {}", i as f64 / 10.0, w[0], w[1]);
        }
    }

    #[test]
    fn kms_in_unit_interval_and_always_fires(cpu in -50.0f64..150.0, proc in -10.0f64..900.0, drift in 0.0f64..20.0) {
        let k = KmsConfig::default().score(cpu, proc, drift);
        prop_assert!((0.0..=1.0).contains(&k.value));
        prop_assert!(!k.no_rule_fired);
    }
}

#[test]
fn doubling_the_grid_barely_moves_the_centroid() {
    let coarse = KmsConfig::default();
    let mut fis = FisConfig::from_toml(DEFAULT_CONFIG_TOML).unwrap();
    fis.resolution = Some(2001);
    let fine = KmsConfig::from_fis(&fis).unwrap();
    let mut worst: f64 = 0.0;
    for cpu in (0..=100).step_by(5) {
        for proc in (0..=500).step_by(25) {
            for d in 0..=20 {
                let (c, p, d) = (f64::from(cpu), f64::from(proc), f64::from(d) / 2.0);
                worst = worst.max((coarse.score(c, p, d).value - fine.score(c, p, d).value).abs());
            }
        }
    }
    assert!(worst < 1e-3, "{worst}");
}

#[test]
fn high_load_or_large_drift_rule_is_present() {
    let fis = FisConfig::from_toml(DEFAULT_CONFIG_TOML).unwrap();
    assert!(fis.rules.iter().any(|r| r == "cpu_usage is High or timestamp_drift is Large => key_match_score is Low"));
    assert_eq!(fis.rules.len(), 28);
}
