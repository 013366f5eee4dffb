use std::path::PathBuf;

use isac_core::channel::{add_noise, ChannelOperator, PathChannel, Target};
use isac_core::harness::*;
use isac_core::metrics::{match_targets, sensing_error};
use isac_core::report::{csv_string, format_g6, CSV_HEADER};
use isac_core::rng::rng_for;
use isac_core::sensing::{Detection, SensingEstimate};
use isac_core::unfolded::{NetworkParams, ParamStore};
use isac_core::waveform::{keep_rows, Constellation};
use isac_core::{Complex64, Error, FrameLayout, ResourceGrid, Scene, SystemConfig};
use rand::Rng;

fn scene(name: &str) -> Scene {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenes", name].iter().collect();
    Scene::from_file(p).unwrap()
}

fn detection(range_m: f64, velocity_m_s: f64) -> Detection {
    Detection { range_m, velocity_m_s, range_index: 0, velocity_index: 0, range_peak: 1.0, velocity_peak: 1.0, aod_rad: 0.0, aoa_rad: 0.0 }
}

fn estimate(entries: &[(f64, f64)]) -> SensingEstimate {
    let mut e = SensingEstimate::default();
    for &(r, v) in entries {
        e.push(detection(r, v));
    }
    e
}

/// Target whose bistatic range is `r` (two equal legs).
fn target(r: f64, v: f64) -> Target {
    Target::with_radial_speed(r / 2.0, r / 2.0, v, 0.1, -0.2, 1.0).unwrap()
}

#[test]
fn metric_examples() {
    let con = Constellation::new(4).unwrap();
    // Labels 0b00 vs 0b11 and 0b01 vs 0b01: two bit errors in eight bits.
    let m = compute_metrics(&[vec![0, 1, 2, 3]], &[vec![3, 1, 2, 3]], &SensingEstimate::default(), &[], &con);
    assert_eq!(m.ber, 0.25);
    assert_eq!(m.ser, 0.25);
    let t = [target(10.0, 4.0)];
    let e = sensing_error(&estimate(&[(10.1, 4.0)]), &t);
    assert!((e.nmse_range - 1e-4).abs() < 1e-15);
    assert_eq!(e.nmse_velocity, 0.0);
    let missed = sensing_error(&SensingEstimate::default(), &[target(10.0, 4.0), target(40.0, 3.0)]);
    assert_eq!((missed.nmse_range, missed.nmse_velocity, missed.misses), (1.0, 1.0, 2));
}

#[test]
fn matching_is_one_to_one_and_nearest_first() {
    assert_eq!(match_targets(&[49.0, 11.0], &[10.0, 50.0]), vec![Some(1), Some(0)]);
    // Both truths are closest to the same detection: the closer pair wins.
    assert_eq!(match_targets(&[12.0], &[10.0, 13.0]), vec![None, Some(0)]);
    let e = sensing_error(&estimate(&[(12.0, 1.0), (90.0, 1.0)]), &[target(10.0, 1.0)]);
    assert_eq!(e.false_alarms, 1);
}

#[test]
fn pilot_estimate_is_exact_without_noise() {
    let cfg = SystemConfig::desk().with_antennas(1, 2);
    let layout = FrameLayout::new(&cfg);
    let pilots = pilot_grids(&cfg, &layout).unwrap();
    let path = PathChannel::new(Complex64::new(0.3, -0.8), 2e-7, 700.0, 0.2, 0.5, &cfg);
    let op = ChannelOperator::new(&[path], &cfg);
    let rx = op.apply(&pilots).unwrap();
    let est = pilot_channel_estimate(&rx, &pilots, &layout).unwrap();
    for (pi, &m) in layout.pilot_rows.iter().enumerate() {
        for n in 0..cfg.num_subcarriers {
            let h = op.composite(m, n);
            for (k, v) in est.sample(pi, n).iter().enumerate() {
                assert!((v - h[(k, 0)]).norm() < 1e-12);
            }
        }
    }
}

#[test]
fn pilot_estimate_error_variance_is_the_noise_variance() {
    let cfg = SystemConfig::desk().with_antennas(1, 1);
    let layout = FrameLayout::new(&cfg);
    let pilots = pilot_grids(&cfg, &layout).unwrap();
    let path = PathChannel::new(Complex64::new(1.0, 0.0), 1e-7, 100.0, 0.0, 0.0, &cfg);
    let op = ChannelOperator::new(&[path], &cfg);
    let var = 0.04;
    let (mut sum, mut count) = (0.0, 0usize);
    for seed in 0..40 {
        let mut rx = op.apply(&pilots).unwrap();
        add_noise(&mut rx, var, &mut rng_for(seed, 3));
        let est = pilot_channel_estimate(&rx, &pilots, &layout).unwrap();
        for (pi, &m) in layout.pilot_rows.iter().enumerate() {
            for n in 0..cfg.num_subcarriers {
                sum += (est.sample(pi, n)[0] - op.composite(m, n)[(0, 0)]).norm_sqr();
                count += 1;
            }
        }
    }
    let got = sum / count as f64;
    // 5120 samples of an exponential variable: relative sd 1.4%.
    assert!((got / var - 1.0).abs() < 0.06, "{got}");
}

#[test]
fn pilot_estimate_preconditions() {
    let cfg = SystemConfig::desk();
    let layout = FrameLayout::new(&cfg);
    let pilots = pilot_grids(&cfg, &layout).unwrap();
    let no_pilots = FrameLayout { pilot_rows: Vec::new(), ..layout.clone() };
    assert!(pilot_channel_estimate(&pilots, &pilots, &no_pilots).is_err());
    assert!(pilot_channel_estimate(&[], &pilots, &layout).is_err());
    let mut holed = pilots.clone();
    holed[0].set(0, 3, Complex64::new(0.0, 0.0));
    assert!(pilot_channel_estimate(&pilots, &holed, &layout).is_err());
}

#[test]
fn pilot_estimate_interpolates_between_pilot_rows() {
    let cfg = SystemConfig::desk().with_antennas(1, 1);
    let layout = FrameLayout::new(&cfg);
    let pilots = pilot_grids(&cfg, &layout).unwrap();
    let path = PathChannel::new(Complex64::new(1.0, 0.0), 0.0, 0.0, 0.0, 0.0, &cfg);
    let mut rx = ChannelOperator::new(&[path], &cfg).apply(&pilots).unwrap();
    // Scale the second pilot row so interpolation has something to do.
    for n in 0..cfg.num_subcarriers {
        let v = rx[0].get(14, n);
        rx[0].set(14, n, v * 3.0);
    }
    let est = pilot_channel_estimate(&rx, &pilots, &layout).unwrap();
    let mut out = [Complex64::new(0.0, 0.0)];
    est.channel_at(7, 5, &mut out);
    assert!((out[0] - Complex64::new(2.0, 0.0)).norm() < 1e-12);
    est.channel_at(27, 5, &mut out);
    assert!((out[0] - Complex64::new(3.0, 0.0)).norm() < 1e-12);
}

#[test]
fn pilot_sensing_finds_a_strong_target() {
    let s = scene("desk-single.toml");
    let cfg = s.config.with_snr(200.0);
    let t = generate_trial(&cfg, &s.targets, 1).unwrap();
    let init = pilot_initial_sensing(&t.rx, &t.pilots, &cfg).unwrap();
    assert_eq!(init.paths.len(), 1);
    assert!((init.estimate.ranges_m[0] - s.targets[0].bistatic_range_m).abs() < 1e-9);
    assert!((init.estimate.velocities_m_s[0] - s.targets[0].radial_speed_m_s).abs() <= cfg.velocity_bin_m_s());
}

#[test]
fn pilot_sensing_on_silence_is_empty() {
    let cfg = SystemConfig::desk();
    let layout = FrameLayout::new(&cfg);
    let pilots = pilot_grids(&cfg, &layout).unwrap();
    let rx: Vec<ResourceGrid> = (0..2).map(|k| ResourceGrid::zeros(28, 64, k)).collect();
    let init = pilot_initial_sensing(&rx, &pilots, &cfg).unwrap();
    assert!(init.paths.is_empty() && init.estimate.is_empty());
}

#[test]
fn pilot_sensing_seeds_most_of_three_targets() {
    let s = scene("desk-three-target.toml");
    let cfg = s.config.with_snr(30.0);
    let mut majority = 0;
    for seed in 0..200 {
        let t = generate_trial(&cfg, &s.targets, seed).unwrap();
        let init = pilot_initial_sensing(&t.rx, &t.pilots, &cfg).unwrap();
        majority += (init.estimate.len() >= 2) as usize;
    }
    assert!(majority > 100, "{majority} of 200");
}

#[test]
fn trials_are_deterministic() {
    let s = scene("desk-three-target.toml");
    let p = NetworkParams::untrained(2, 10.0);
    let a = run_trial(&s.config, &s.targets, &p, 9).unwrap();
    let b = run_trial(&s.config, &s.targets, &p, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.per_layer_trace.len(), 2);
    assert_ne!(a, run_trial(&s.config, &s.targets, &p, 10).unwrap());
}

#[test]
fn trial_needs_targets_and_data_rows() {
    let cfg = SystemConfig::desk();
    assert!(generate_trial(&cfg, &[], 0).is_err());
    let tiny = SystemConfig::with_grid(1, 8, 1, 1);
    assert!(generate_trial(&tiny, &[target(10.0, 1.0)], 0).is_err());
}

#[test]
fn clean_single_target_trial() {
    let s = scene("desk-single.toml");
    let r = run_trial(&s.config.with_snr(60.0), &s.targets, &NetworkParams::untrained(5, 60.0), 0).unwrap();
    assert_eq!((r.ber, r.ser), (0.0, 0.0));
    let t = &s.targets[0];
    let rb = (s.config.range_bin_m() / t.bistatic_range_m).powi(2);
    let vb = (s.config.velocity_bin_m_s() / t.radial_speed_m_s).powi(2);
    assert!(r.nmse_range <= rb && r.nmse_velocity <= vb);
}

#[test]
fn drowned_trial_is_a_coin_flip() {
    let s = scene("desk-single.toml");
    let mut ber = 0.0;
    for seed in 0..5 {
        ber += run_trial(&s.config.with_snr(-20.0), &s.targets, &NetworkParams::untrained(5, -20.0), seed).unwrap().ber;
    }
    ber /= 5.0;
    assert!((0.4..0.6).contains(&ber), "{ber}");
}

#[test]
fn one_trial_sweep_matches_run_trial() {
    let s = scene("desk-three-target.toml");
    let store = ParamStore::default();
    let spec = SweepSpec {
        config: &s.config,
        targets: &s.targets,
        store: &store,
        snr_list: &[15.0],
        trials: 1,
        methods: &[Method::IsacNet],
        base_seed: 4,
        default_layers: 3,
    };
    let rows = sweep(&spec).unwrap();
    let r = run_trial(&s.config.with_snr(15.0), &s.targets, &NetworkParams::untrained(3, 15.0), 4).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0].ber, rows[0].ser, rows[0].nmse_range), (r.ber, r.ser, r.nmse_range));
    assert_eq!(rows[0].per_layer.len(), 3);
}

#[test]
fn sweep_shape_and_oracle_dominance() {
    let s = scene("desk-three-target.toml");
    let store = ParamStore::default();
    let snrs = [5.0, 20.0];
    let spec = SweepSpec {
        config: &s.config,
        targets: &s.targets,
        store: &store,
        snr_list: &snrs,
        trials: 4,
        methods: &Method::ALL,
        base_seed: 0,
        default_layers: 2,
    };
    let rows = sweep(&spec).unwrap();
    assert_eq!(rows.len(), snrs.len() * Method::ALL.len());
    for chunk in rows.chunks(Method::ALL.len()) {
        let perfect = chunk.iter().find(|r| r.method == Method::Perfect).unwrap().ber;
        for r in chunk.iter().filter(|r| r.method.reports_communication()) {
            assert!(perfect <= r.ber, "{} {}: {} < {perfect}", r.method, r.snr_db, r.ber);
        }
    }
    let csv = csv_string(&rows);
    assert_eq!(csv.lines().next(), Some(CSV_HEADER));
    assert_eq!(csv.lines().count(), 1 + rows.len());
    assert_eq!(csv, csv_string(&sweep(&spec).unwrap()));
}

#[test]
fn sweep_preconditions() {
    let s = scene("desk-three-target.toml");
    let store = ParamStore::default();
    let base = SweepSpec {
        config: &s.config,
        targets: &s.targets,
        store: &store,
        snr_list: &[10.0],
        trials: 0,
        methods: &Method::ALL,
        base_seed: 0,
        default_layers: 2,
    };
    assert!(sweep(&base).is_err());
    assert!(sweep(&SweepSpec { trials: 1, methods: &[], ..base.clone() }).is_err());
}

#[test]
fn method_names_round_trip() {
    for m in Method::ALL {
        assert_eq!(m.name().parse::<Method>().unwrap(), m);
    }
    let err = "map".parse::<Method>().unwrap_err().to_string();
    assert!(err.contains("isac-net") && err.contains("2d-dft"), "{err}");
}

#[test]
fn csv_cells_follow_the_method() {
    let row = |method| SweepRow {
        method,
        snr_db: 12.5,
        trials: 3,
        ber: 0.1,
        ser: 1.0 / 3.0,
        nmse_range: 2.5e-7,
        nmse_velocity: 1234567.0,
        detected_mean: 2.0,
        per_layer: Vec::new(),
    };
    let csv = csv_string(&[row(Method::IsacNet), row(Method::Conventional), row(Method::Dft2d)]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[1], "isac-net,12.5,3,0.1,0.333333,2.5e-07,1.23457e+06,2");
    assert_eq!(lines[2], "conventional,12.5,3,0.1,0.333333,,,2");
    assert_eq!(lines[3], "2d-dft,12.5,3,,,2.5e-07,1.23457e+06,2");
    assert_eq!(format_g6(100000.0), "100000");
    assert_eq!(format_g6(1e6), "1e+06");
}

#[test]
fn corruption_is_nested_and_bounded() {
    let s = scene("desk-three-target.toml");
    let t = generate_trial(&s.config, &s.targets, 2).unwrap();
    assert!(corrupt_symbols(&t, 1.5, 0).is_err());
    assert_eq!(corrupt_symbols(&t, 0.0, 0).unwrap(), t.tx);
    let changed = |g: &[ResourceGrid]| -> Vec<(usize, usize, usize)> {
        let mut v = Vec::new();
        for (a, (x, y)) in g.iter().zip(&t.tx).enumerate() {
            for &m in &t.layout.data_rows {
                for n in 0..64 {
                    if x.get(m, n) != y.get(m, n) {
                        v.push((a, m, n));
                    }
                }
            }
        }
        v
    };
    let small = changed(&corrupt_symbols(&t, 0.1, 5).unwrap());
    let large = changed(&corrupt_symbols(&t, 0.5, 5).unwrap());
    assert!(small.iter().all(|c| large.contains(c)));
    // A replaced symbol equals the original one time in sixteen.
    let total = 2 * t.layout.data_rows.len() * 64;
    let frac = large.len() as f64 / total as f64;
    assert!((frac - 0.5 * 15.0 / 16.0).abs() < 0.03, "{frac}");
    let pilots_kept = corrupt_symbols(&t, 1.0, 5).unwrap();
    for (g, p) in pilots_kept.iter().zip(&t.pilots) {
        assert_eq!(keep_rows(g, &t.layout.pilot_rows), *p);
    }
}

#[test]
fn more_corruption_never_helps_sensing() {
    let s = scene("desk-single.toml");
    let cfg = s.config.with_snr(20.0);
    let ps = [0.0, 0.1, 0.3, 0.5];
    let mut gr = [0.0; 4];
    let mut gv = [0.0; 4];
    for seed in 0..40 {
        let t = generate_trial(&cfg, &s.targets, seed).unwrap();
        for (k, &p) in ps.iter().enumerate() {
            let x = corrupt_symbols(&t, p, seed).unwrap();
            let (r, v, _) = sense_with_reference(&t, &x, &s.targets).unwrap();
            gr[k] += r;
            gv[k] += v;
        }
    }
    for k in 1..4 {
        assert!(gr[k] >= gr[k - 1] && gv[k] >= gv[k - 1], "{gr:?} {gv:?}");
    }
}

#[test]
fn scene_files_parse_and_round_trip() {
    for name in ["desk-three-target.toml", "desk-single.toml", "full-three-target.toml"] {
        let s = scene(name);
        let back = Scene::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(back.config, s.config, "{name}");
        for (a, b) in back.targets.iter().zip(&s.targets) {
            assert!((a.radial_speed_m_s - b.radial_speed_m_s).abs() < 1e-9 * b.radial_speed_m_s.abs().max(1.0));
            assert_eq!(a.bistatic_range_m, b.bistatic_range_m);
        }
    }
    let three = scene("desk-three-target.toml");
    let mut r: Vec<f64> = three.targets.iter().map(|t| t.bistatic_range_m).collect();
    r.sort_by(f64::total_cmp);
    assert_eq!(r, vec![10.0, 50.0, 100.0]);
}

#[test]
fn config_errors_name_the_problem() {
    let missing = Scene::from_file("/nonexistent/scene.toml").unwrap_err().to_string();
    assert!(missing.contains("/nonexistent/scene.toml"), "{missing}");
    let good = SystemConfig::desk();
    assert!(good.validate().is_ok());
    let bad = SystemConfig { dft_points_doppler: 10, ..good.clone() };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
    let bad = SystemConfig { qam_order: 8, ..good.clone() };
    assert!(matches!(bad.validate(), Err(Error::UnsupportedOrder(8))));
    let bad = SystemConfig { pilot_ratio: 0.1, ..good.clone() };
    assert!(bad.validate().is_err());
    let bad = SystemConfig { symbol_period_s: 11e-6, ..good };
    assert!(bad.validate().is_err());
    let text = scene_text().replace("qam_order = 16", "qam_order = 16\nbogus = 1");
    assert!(Scene::from_toml_str(&text).is_err());
}

fn scene_text() -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenes", "desk-single.toml"].iter().collect();
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn desk_bin_widths() {
    let cfg = SystemConfig::desk();
    assert!((cfg.range_bin_m() - 3.9035).abs() < 1e-4);
    assert!((cfg.velocity_bin_m_s() - 25.787).abs() < 1e-3);
    let full = SystemConfig::full_scale();
    assert!((full.range_bin_m() - 0.24397).abs() < 1e-5);
    assert!((full.velocity_bin_m_s() - 2.8205).abs() < 1e-4);
}

#[test]
fn trial_seeds_offset_the_base() {
    assert_eq!(trial_seed(10, 3), 13);
    assert_eq!(trial_seed(u64::MAX, 1), 0);
    let mut r = rng_for(trial_seed(0, 0), 1);
    let mut q = rng_for(0, 1);
    assert_eq!(r.random::<u64>(), q.random::<u64>());
}
