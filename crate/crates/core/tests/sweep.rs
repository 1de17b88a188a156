mod common;

use std::path::Path;

use common::small_diode_toml;
use ddfem::config::parse_config;
use ddfem::gummel::Simulator;
use ddfem::Error;

fn diode(extra: &str) -> (Simulator, Vec<f64>) {
    parse_config(&small_diode_toml(extra), Path::new(".")).unwrap().build_simulator(None).unwrap()
}

#[test]
fn reverse_sweep_walks_down_and_stays_small() {
    let (sim, b) = diode("");
    let s0 = sim.initial_state(&b).unwrap();
    let r = sim.bias_sweep(&s0, "body", 0.0, -0.5, 0.25, 0.05).unwrap();
    let biases: Vec<f64> = r.points.iter().map(|p| p.bias).collect();
    assert_eq!(biases, [0.0, -0.25, -0.5]);
    assert!(!r.stalled);
    assert_eq!(r.reductions, 0);
    // reverse leakage stays far below the forward current of the same device
    let fwd = sim.bias_sweep(&s0, "body", 0.0, 0.5, 0.25, 0.05).unwrap();
    let i_rev = r.points[2].currents[1].abs();
    let i_fwd = fwd.points[2].currents[1].abs();
    assert!(i_rev < 1e-3 * i_fwd, "{i_rev} vs {i_fwd}");
    assert_eq!(r.final_state.biases[sim.contact_index("body").unwrap()], -0.5);
}

#[test]
fn last_step_is_clipped_to_stop() {
    let (sim, b) = diode("");
    let s0 = sim.initial_state(&b).unwrap();
    let r = sim.bias_sweep(&s0, "body", 0.0, 0.25, 0.1, 0.05).unwrap();
    let biases: Vec<f64> = r.points.iter().map(|p| p.bias).collect();
    assert_eq!(biases, [0.0, 0.1, 0.2, 0.25]);
    assert_eq!(r.points[3].step, 0.05);
}

#[test]
fn failed_steps_are_halved_until_they_converge() {
    // six Gummel passes are enough for small steps only
    let (sim, b) = diode("[solver]\ngummel_max_iter = 6\n");
    let s0 = sim.initial_state(&b).unwrap();
    let r = sim.bias_sweep(&s0, "body", 0.0, 0.8, 0.8, 0.01).unwrap();
    assert!(r.reductions > 0);
    assert!(!r.stalled);
    assert_eq!(r.points.last().unwrap().bias, 0.8);
    let steps: Vec<f64> = r.points[1..].iter().map(|p| p.step).collect();
    assert!(steps[0] < 0.8);
    assert!(steps.iter().all(|&h| (0.01..=0.8).contains(&h)));
    assert!((steps.iter().sum::<f64>() - 0.8).abs() < 1e-9);
    assert!(r.points.windows(2).all(|w| w[1].bias > w[0].bias));
}

#[test]
fn invalid_programs_are_rejected() {
    let (sim, b) = diode("");
    let s0 = sim.initial_state(&b).unwrap();
    assert!(sim.bias_sweep(&s0, "body", 0.0, 0.0, 0.1, 0.01).is_err());
    assert!(sim.bias_sweep(&s0, "body", 0.0, 0.5, 0.1, 0.2).is_err());
    assert!(sim.bias_sweep(&s0, "body", 0.0, 0.5, 0.0, 0.0).is_err());
    assert!(matches!(sim.bias_sweep(&s0, "nowhere", 0.0, 0.5, 0.1, 0.01), Err(Error::UnknownContact(_))));
}

#[test]
fn callback_error_aborts_the_sweep() {
    let (sim, b) = diode("");
    let s0 = sim.initial_state(&b).unwrap();
    let mut seen = 0;
    let r = sim.bias_sweep_with(&s0, "body", 0.0, 0.4, 0.1, 0.05, |p, _| {
        seen += 1;
        if p.bias > 0.15 {
            Err(Error::Dimension("stop here".into()))
        } else {
            Ok(())
        }
    });
    assert!(r.is_err());
    assert_eq!(seen, 3);
}
