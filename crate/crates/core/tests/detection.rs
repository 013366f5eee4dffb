use isac_core::channel::{add_noise, ChannelOperator, PathChannel};
use isac_core::detection::*;
use isac_core::grid::{FrameLayout, ResourceGrid};
use isac_core::rng::rng_for;
use isac_core::waveform::Constellation;
use isac_core::{Complex64, SystemConfig};
use proptest::prelude::*;
use rand::Rng;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

struct Instance {
    cfg: SystemConfig,
    con: Constellation,
    rows: Vec<usize>,
    truth: Vec<Vec<usize>>,
    tx: Vec<ResourceGrid>,
    paths: Vec<PathChannel>,
    rx: Vec<ResourceGrid>,
}

/// Random symbols on a small grid sent through two random paths.
fn instance(seed: u64, m: usize, n: usize, ant: usize, order: u32) -> Instance {
    let cfg = SystemConfig::with_grid(m, n, ant, ant);
    let con = Constellation::new(order).unwrap();
    let layout = FrameLayout::new(&cfg);
    let mut r = rng_for(seed, 21);
    let mut truth = vec![Vec::new(); ant];
    let tx: Vec<ResourceGrid> = (0..ant)
        .map(|i| {
            let mut g = ResourceGrid::zeros(m, n, i);
            for &row in &layout.data_rows {
                for k in 0..n {
                    let s = r.random_range(0..order as usize);
                    truth[i].push(s);
                    g.set(row, k, con.point(s));
                }
            }
            g
        })
        .collect();
    let paths: Vec<PathChannel> = (0..2)
        .map(|_| {
            PathChannel::new(
                Complex64::from_polar(r.random_range(0.5..1.5), r.random_range(-3.0..3.0)),
                r.random_range(1e-8..5e-7),
                r.random_range(-2000.0..2000.0),
                r.random_range(-1.2..1.2),
                r.random_range(-1.2..1.2),
                &cfg,
            )
        })
        .collect();
    let rx = ChannelOperator::new(&paths, &cfg).apply(&tx).unwrap();
    Instance { cfg, con, rows: layout.data_rows, truth, tx, paths, rx }
}

fn ser(hard: &[Vec<usize>], truth: &[Vec<usize>]) -> f64 {
    let (mut e, mut t) = (0, 0);
    for (h, w) in hard.iter().zip(truth) {
        e += h.iter().zip(w).filter(|(a, b)| a != b).count();
        t += w.len();
    }
    e as f64 / t as f64
}

/// Brute-force ML over all candidate vectors, written independently of the
/// library search.
fn ml_oracle(inst: &Instance) -> Vec<Vec<usize>> {
    let op = ChannelOperator::new(&inst.paths, &inst.cfg);
    let n_tx = inst.cfg.num_tx_antennas;
    let order = inst.con.order() as usize;
    let mut out = vec![Vec::new(); n_tx];
    for &m in &inst.rows {
        for n in 0..inst.cfg.num_subcarriers {
            let h = op.composite(m, n);
            let y: Vec<Complex64> = inst.rx.iter().map(|g| g.get(m, n)).collect();
            let mut best = (f64::INFINITY, vec![0; n_tx]);
            for code in 0..order.pow(n_tx as u32) {
                let idx: Vec<usize> = (0..n_tx).rev().map(|i| (code / order.pow(i as u32)) % order).collect();
                let mut d = 0.0;
                for (k, yk) in y.iter().enumerate() {
                    let mut s = *yk;
                    for (i, &j) in idx.iter().enumerate() {
                        s -= h[(k, i)] * inst.con.point(j);
                    }
                    d += s.norm_sqr();
                }
                if d < best.0 {
                    best = (d, idx);
                }
            }
            for i in 0..n_tx {
                out[i].push(best.1[i]);
            }
        }
    }
    out
}

#[test]
fn two_steps_recover_a_scalar_channel() {
    let cfg = SystemConfig::with_grid(3, 4, 1, 1);
    let path = PathChannel::new(c(1.0, 0.0), 0.0, 0.0, 0.0, 0.0, &cfg);
    let con = Constellation::new(16).unwrap();
    let mut r = rng_for(1, 0);
    let x = vec![ResourceGrid::from_fn(3, 4, 0, |_, _| con.point(r.random_range(0..16)))];
    let rows = vec![0, 1, 2];
    for mode in [Normalization::None, Normalization::Column, Normalization::Whitened] {
        let mut s = DetectorState::zeros(&cfg);
        s = damp_step(&s, &x, &[path.clone()], &rows, 1.0, 0.0, mode, &cfg).unwrap();
        // First step: X stays zero, the residual picks up Y.
        assert!(s.x_estimate[0].energy() == 0.0);
        s = damp_step(&s, &x, &[path.clone()], &rows, 1.0, 0.0, mode, &cfg).unwrap();
        for (a, b) in s.x_estimate[0].values().iter().zip(x[0].values()) {
            assert!((a - b).norm() < 1e-14, "{mode:?}");
        }
        assert!(s.residual_energy() < 1e-28);
    }
}

#[test]
fn zero_input_is_a_fixed_point() {
    let inst = instance(2, 4, 8, 2, 4);
    let zero: Vec<ResourceGrid> = (0..2).map(|k| ResourceGrid::zeros(4, 8, k)).collect();
    let mut s = DetectorState::zeros(&inst.cfg);
    for _ in 0..3 {
        s = damp_step(&s, &zero, &inst.paths, &inst.rows, 1.0, 0.0, DETECTOR_NORMALIZATION, &inst.cfg).unwrap();
    }
    assert_eq!(s, DetectorState { iteration: 4, ..DetectorState::zeros(&inst.cfg) });
}

/// With η₁ = η₂ = 0 the residual is `Y − H X` for the freshly updated X.
#[test]
fn zero_memory_parameters() {
    let inst = instance(3, 4, 8, 2, 4);
    let mut s = DetectorState::zeros(&inst.cfg);
    s = damp_step(&s, &inst.rx, &inst.paths, &inst.rows, 1.0, 0.0, Normalization::Column, &inst.cfg).unwrap();
    let a = damp_step(&s, &inst.rx, &inst.paths, &inst.rows, 0.0, 0.0, Normalization::Column, &inst.cfg).unwrap();
    // Changing the old X changes nothing when η₁ = 0.
    let mut s2 = s.clone();
    s2.x_estimate[0].set(1, 1, c(9.0, 9.0));
    let b = damp_step(&s2, &inst.rx, &inst.paths, &inst.rows, 0.0, 0.0, Normalization::Column, &inst.cfg).unwrap();
    assert_eq!(a.x_estimate, b.x_estimate);
    let op = ChannelOperator::new(&inst.paths, &inst.cfg);
    let hx = op.apply(&a.x_estimate).unwrap();
    for &m in &inst.rows {
        for n in 0..8 {
            for k in 0..2 {
                let want = inst.rx[k].get(m, n) - hx[k].get(m, n);
                assert!((a.residual[k].get(m, n) - want).norm() < 1e-12);
            }
        }
    }
}

#[test]
fn noiseless_perfect_channel_has_no_symbol_errors() {
    for seed in 0..5 {
        let inst = instance(seed, 4, 8, 2, 16);
        let (_, hard) =
            damp_detect(&inst.rx, &inst.paths, &inst.rows, 5, &[1.0; 5], &[0.0; 5], &inst.con, &inst.cfg).unwrap();
        assert_eq!(hard, inst.truth, "seed {seed}");
    }
}

#[test]
fn damp_detect_preconditions() {
    let inst = instance(4, 4, 8, 2, 4);
    assert!(damp_detect(&inst.rx, &inst.paths, &inst.rows, 0, &[], &[], &inst.con, &inst.cfg).is_err());
    assert!(damp_detect(&inst.rx, &inst.paths, &inst.rows, 2, &[1.0], &[0.0, 0.0], &inst.con, &inst.cfg).is_err());
}

#[test]
fn zero_channel_gives_zero_output() {
    let inst = instance(5, 28, 16, 2, 16);
    let zero_paths: Vec<PathChannel> = inst.paths.iter().map(|p| p.with_gain(c(0.0, 0.0))).collect();
    let (x, hard) =
        damp_detect(&inst.rx, &zero_paths, &inst.rows, 5, &[1.0; 5], &[0.0; 5], &inst.con, &inst.cfg).unwrap();
    assert!(x.iter().all(|g| g.energy() == 0.0));
    // A constant decision is right for one symbol in sixteen.
    let s = ser(&hard, &inst.truth);
    assert!((s - 15.0 / 16.0).abs() < 0.03, "ser {s}");
}

#[test]
fn damp_detect_matches_exhaustive_ml_on_noiseless_instances() {
    for seed in 0..100 {
        let inst = instance(seed, 4, 8, 2, 4);
        let (_, hard) =
            damp_detect(&inst.rx, &inst.paths, &inst.rows, 5, &[1.0; 5], &[0.0; 5], &inst.con, &inst.cfg).unwrap();
        assert_eq!(hard, ml_oracle(&inst), "seed {seed}");
    }
}

#[test]
fn library_ml_matches_oracle_with_noise() {
    for seed in 0..10 {
        let mut inst = instance(seed, 4, 8, 2, 16);
        add_noise(&mut inst.rx, 0.05, &mut rng_for(seed, 99));
        let lib = ml_detect(&inst.rx, &inst.paths, &inst.rows, &inst.con, &inst.cfg).unwrap();
        assert_eq!(lib, ml_oracle(&inst), "seed {seed}");
    }
}

#[test]
fn ml_rejects_huge_search() {
    let inst = instance(1, 4, 4, 4, 16);
    assert!(ml_detect(&inst.rx, &inst.paths, &inst.rows, &inst.con, &inst.cfg).is_err());
}

#[test]
fn conventional_identity_and_scalar_channels() {
    let cfg = SystemConfig::with_grid(3, 4, 1, 1);
    let con = Constellation::new(16).unwrap();
    let mut r = rng_for(2, 0);
    let truth: Vec<usize> = (0..12).map(|_| r.random_range(0..16)).collect();
    let x = vec![ResourceGrid::from_fn(3, 4, 0, |m, n| con.point(truth[m * 4 + n]))];
    for g in [c(1.0, 0.0), c(0.3, -2.0), c(-1e-3, 1e-3)] {
        let path = PathChannel::new(g, 0.0, 0.0, 0.0, 0.0, &cfg);
        let y = ChannelOperator::new(&[path.clone()], &cfg).apply(&x).unwrap();
        let hard = conventional_detect(&y, &[path], &[0, 1, 2], &con, &cfg).unwrap();
        assert_eq!(hard[0], truth, "gain {g}");
    }
}

#[test]
fn conventional_with_inverted_phase_fails() {
    let cfg = SystemConfig::with_grid(14, 32, 1, 1);
    let con = Constellation::new(16).unwrap();
    let mut r = rng_for(3, 0);
    let truth: Vec<usize> = (0..14 * 32).map(|_| r.random_range(0..16)).collect();
    let x = vec![ResourceGrid::from_fn(14, 32, 0, |m, n| con.point(truth[m * 32 + n]))];
    let path = PathChannel::new(c(1.0, 0.0), 0.0, 0.0, 0.0, 0.0, &cfg);
    let y = ChannelOperator::new(&[path.clone()], &cfg).apply(&x).unwrap();
    let wrong = path.with_gain(c(-1.0, 0.0));
    let rows: Vec<usize> = (0..14).collect();
    let hard = conventional_detect(&y, &[wrong], &rows, &con, &cfg).unwrap();
    assert!(ser(&hard, &[truth]) >= 1.0 - 1.0 / 16.0);
}

#[test]
fn conventional_singular_channel_falls_back() {
    let inst = instance(6, 4, 8, 2, 4);
    let zero: Vec<PathChannel> = inst.paths.iter().map(|p| p.with_gain(c(0.0, 0.0))).collect();
    let hard = conventional_detect(&inst.rx, &zero, &inst.rows, &inst.con, &inst.cfg).unwrap();
    assert_eq!(hard[0].len(), inst.truth[0].len());
    // Rank-one composite: one path, two streams.
    let one = vec![inst.paths[0].clone()];
    assert!(conventional_detect(&inst.rx, &one, &inst.rows, &inst.con, &inst.cfg).is_ok());
}

#[test]
fn conventional_needs_enough_receivers() {
    let cfg = SystemConfig::with_grid(4, 4, 2, 1);
    let con = Constellation::new(4).unwrap();
    let rx = vec![ResourceGrid::zeros(4, 4, 0)];
    assert!(conventional_detect(&rx, &[], &[1, 2, 3], &con, &cfg).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn residual_is_non_increasing_with_perfect_csi(
        seed in any::<u64>(),
        mode in prop::sample::select(vec![Normalization::Column, Normalization::Whitened]),
    ) {
        let inst = instance(seed, 4, 8, 2, 16);
        let mut s = DetectorState::zeros(&inst.cfg);
        s = damp_step(&s, &inst.rx, &inst.paths, &inst.rows, 1.0, 0.0, mode, &inst.cfg).unwrap();
        let mut last = s.residual_energy();
        for _ in 0..10 {
            s = damp_step(&s, &inst.rx, &inst.paths, &inst.rows, 1.0, 0.0, mode, &inst.cfg).unwrap();
            let e = s.residual_energy();
            prop_assert!(e <= last * (1.0 + 1e-9) + 1e-24, "{} > {}", e, last);
            last = e;
        }
    }

    #[test]
    fn decisions_are_invariant_to_a_global_phase(seed in any::<u64>(), phi in -3.1..3.1f64) {
        let mut inst = instance(seed, 4, 8, 2, 16);
        add_noise(&mut inst.rx, 0.02, &mut rng_for(seed, 5));
        let rot = Complex64::from_polar(1.0, phi);
        let paths: Vec<PathChannel> = inst.paths.iter().map(|p| p.with_gain(p.complex_gain * rot)).collect();
        let rx: Vec<ResourceGrid> = inst
            .rx
            .iter()
            .map(|g| ResourceGrid::from_fn(4, 8, g.antenna_index, |m, n| g.get(m, n) * rot))
            .collect();
        let (_, a) = damp_detect(&inst.rx, &inst.paths, &inst.rows, 5, &[1.0; 5], &[0.0; 5], &inst.con, &inst.cfg).unwrap();
        let (_, b) = damp_detect(&rx, &paths, &inst.rows, 5, &[1.0; 5], &[0.0; 5], &inst.con, &inst.cfg).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn tx_grids_are_what_was_sent() {
    // Guards the fixture itself: the data rows hold the truth symbols.
    let inst = instance(9, 4, 8, 2, 4);
    for (i, g) in inst.tx.iter().enumerate() {
        let got: Vec<usize> = inst.rows.iter().flat_map(|&m| g.row(m).iter().map(|&v| inst.con.nearest(v))).collect();
        assert_eq!(got, inst.truth[i]);
    }
}
