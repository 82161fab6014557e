//! Time-domain runs checked against the frequency-domain predictions.

use ncdr_core::ddae::build_ddae;
use ncdr_core::fixtures::{self, Fixture};
use ncdr_core::model::HarmonicExcitation;
use ncdr_core::phasor::{analyze_active, passive_steady_state};
use ncdr_core::simulation::{metric, simulate, steady_metrics, SignalMetrics, SimulationConfig};
use ncdr_core::spectrum::{spectral_abscissa, SpectrumOptions};
use ncdr_core::tuning::{tune, BranchPolicy, DrFeedback};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SETTLED_END: f64 = 90.0;

fn tuned(f: &Fixture) -> DrFeedback {
    tune(&f.0, &f.1, &f.2, BranchPolicy::Auto).unwrap().selected
}

fn steady(f: &Fixture, fb: &DrFeedback, cfg: SimulationConfig, span: f64) -> Vec<SignalMetrics> {
    let traj = simulate(&f.0, &f.1, fb, &cfg).unwrap();
    steady_metrics(&traj, (cfg.t_end - span, cfg.t_end), f.2.period()).unwrap()
}

fn all_fixtures() -> [(&'static str, Fixture); 4] {
    [
        ("experimental nominal", fixtures::experimental_nominal()),
        ("experimental optimized", fixtures::experimental_optimized()),
        ("five-mass nominal", fixtures::five_mass_nominal()),
        ("five-mass optimized", fixtures::five_mass_optimized()),
    ]
}

#[test]
fn active_steady_state_matches_phasor_solution() {
    for (name, f) in all_fixtures() {
        let fb = tuned(&f);
        let cfg = SimulationConfig {
            t_end: SETTLED_END,
            ..SimulationConfig::new(f.2)
        };
        let m = steady(&f, &fb, cfg, 3.0);
        let ph = analyze_active(&f.0, &f.1, &f.2).unwrap();
        let x = ph.state.chain_displacements();
        let passive = passive_steady_state(&f.0, &f.1, &f.2).unwrap();
        for i in 1..=f.0.d() {
            let amp = metric(&m, &format!("x{i}_m")).unwrap().amplitude;
            if i == f.0.s() {
                assert!(amp < 1e-6 * passive.x[i - 1].amplitude(), "{name}: target moves {amp}");
            } else {
                let want = x[i - 1].norm();
                assert!((amp - want).abs() < 1e-3 * want, "{name}: x{i} {amp} vs {want}");
            }
        }
        let wa = metric(&m, "W_a_J").unwrap().max;
        assert!((wa - ph.energy.absorber.max).abs() < 1e-3 * ph.energy.absorber.max, "{name}");
        let p = metric(&m, "p_W").unwrap().max_abs;
        assert!((p - ph.power.p_max).abs() < 1e-3 * ph.power.p_max, "{name}: {p}");
    }
}

#[test]
fn passive_steady_state_matches_phasor_solution() {
    for (name, f) in all_fixtures() {
        let cfg = SimulationConfig {
            t_end: SETTLED_END,
            switch_time: SETTLED_END,
            ..SimulationConfig::new(f.2)
        };
        let m = steady(&f, &tuned(&f), cfg, 3.0);
        let ph = passive_steady_state(&f.0, &f.1, &f.2).unwrap();
        for i in 1..=f.0.d() {
            let amp = metric(&m, &format!("x{i}_m")).unwrap().amplitude;
            let want = ph.x[i - 1].amplitude();
            assert!((amp - want).abs() < 1e-3 * want, "{name}: x{i} {amp} vs {want}");
        }
        let wa = metric(&m, "x_a_m").unwrap().amplitude;
        assert!((wa - ph.x_a.amplitude()).abs() < 1e-3 * ph.x_a.amplitude());
    }
}

#[test]
fn paper_protocol_suppresses_target_after_25_s() {
    let f = fixtures::five_mass_nominal();
    let fb = tuned(&f);
    let traj = simulate(&f.0, &f.1, &fb, &SimulationConfig::new(f.2)).unwrap();
    let passive = passive_steady_state(&f.0, &f.1, &f.2).unwrap().x[2].amplitude();
    let peak_after = |from: f64| {
        traj.time()
            .iter()
            .zip(traj.x(3))
            .filter(|(t, _)| **t > from)
            .map(|(_, x)| x.abs())
            .fold(0.0, f64::max)
    };
    // with alpha = -0.209 the switching transient still holds about 4% of
    // the passive amplitude at 25 s; 1% is reached a few seconds later
    assert!(peak_after(25.0) < 0.05 * passive, "{} vs passive {passive}", peak_after(25.0));
    let longer = simulate(
        &f.0,
        &f.1,
        &fb,
        &SimulationConfig {
            t_end: 40.0,
            ..SimulationConfig::new(f.2)
        },
    )
    .unwrap();
    let late = longer
        .time()
        .iter()
        .zip(longer.x(3))
        .filter(|(t, _)| **t > 35.0)
        .map(|(_, x)| x.abs())
        .fold(0.0, f64::max);
    assert!(late < 0.01 * passive, "{late} vs passive {passive}");

    let m = steady_metrics(&traj, (28.0, 30.0), f.2.period()).unwrap();
    let wa = metric(&m, "W_a_J").unwrap().max;
    assert!((wa - 0.00238).abs() < 0.02 * 0.00238, "{wa}");
    let p_max = analyze_active(&f.0, &f.1, &f.2).unwrap().power.p_max;
    let p = metric(&m, "p_W").unwrap().max_abs;
    assert!((p - p_max).abs() < 0.02 * p_max, "{p} vs {p_max}");
}

#[test]
fn potential_energy_peaks_at_twice_its_mean() {
    for (name, f) in all_fixtures() {
        let fb = tuned(&f);
        for switch in [SETTLED_END, 15.0] {
            let cfg = SimulationConfig {
                t_end: SETTLED_END,
                switch_time: switch,
                ..SimulationConfig::new(f.2)
            };
            let m = steady(&f, &fb, cfg, 10.0 * f.2.period());
            let energies = (1..=f.0.d() + 1)
                .map(|i| format!("W{i}_J"))
                .chain(["W_a_J".to_string()]);
            for e in energies {
                let w = metric(&m, &e).unwrap();
                assert!(w.max >= 0.0);
                if w.max < 1e-12 {
                    // links around a suppressed target carry no energy
                    continue;
                }
                assert!((w.max - 2.0 * w.mean).abs() < 0.02 * w.max, "{name} {e}: {} vs {}", w.max, w.mean);
            }
        }
    }
}

#[test]
fn halving_the_step_leaves_amplitudes_unchanged() {
    let f = fixtures::five_mass_nominal();
    let fb = tuned(&f);
    let base = SimulationConfig {
        t_end: 40.0,
        ..SimulationConfig::new(f.2)
    };
    let dt = base.step_for(&fb);
    let coarse = steady(&f, &fb, base.clone(), 3.0);
    let fine = steady(
        &f,
        &fb,
        SimulationConfig {
            dt: Some(dt / 2.0),
            ..base
        },
        3.0,
    );
    for i in [1, 2, 4, 5] {
        let name = format!("x{i}_m");
        let (a, b) = (metric(&coarse, &name).unwrap().amplitude, metric(&fine, &name).unwrap().amplitude);
        assert!((a - b).abs() < 1e-4 * b, "{name}: {a} vs {b}");
    }
}

#[test]
fn free_response_decays_at_the_spectral_abscissa() {
    let f = fixtures::five_mass_nominal();
    let fb = tuned(&f);
    let alpha = spectral_abscissa(&build_ddae(&f.0, &f.1, &fb), &SpectrumOptions::default()).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let z0: Vec<f64> = (0..2 * f.0.d() + 2).map(|_| rng.random_range(-1e-3..1e-3)).collect();
    let quiet = HarmonicExcitation::new(0.0, f.2.omega).unwrap();
    let cfg = SimulationConfig {
        t_end: 60.0,
        switch_time: 0.0,
        initial_state: Some(z0),
        ..SimulationConfig::new(quiet)
    };
    let traj = simulate(&f.0, &f.1, &fb, &cfg).unwrap();

    // envelope: peak |x_1| over consecutive windows, fitted over [40, 60] s;
    // the modes at -0.34 and -0.36 still dominate the first half minute
    let t = traj.time();
    let x = traj.x(1);
    let width = 1.0;
    let mut points = Vec::new();
    let mut start = 40.0;
    while start + width <= 60.0 + 1e-9 {
        let peak = t
            .iter()
            .zip(x)
            .filter(|(ti, _)| **ti >= start && **ti < start + width)
            .map(|(_, v)| v.abs())
            .fold(0.0, f64::max);
        points.push((start + 0.5 * width, peak.ln()));
        start += width;
    }
    let n = points.len() as f64;
    let (mt, my) = points.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + t / n, b + y / n));
    let (sxy, sxx) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), (t, y)| (a + (t - mt) * (y - my), b + (t - mt) * (t - mt)));
    let rate = sxy / sxx;
    assert!((rate - alpha).abs() < 0.1 * alpha.abs(), "decay {rate} vs alpha {alpha}");
}
