use parametrization::{Parametrization, WidthExponents};
use resnet_sim::wide::{WideConfig, WideNet};
use resnet_sim::Phi;
use tp_linear_limit::{run_generalized, LimitConfig};

const XI: [f64; 4] = [1.0, -0.6, 0.3, 1.2];
const Y: [f64; 4] = [0.8, -0.2, 0.5, 0.1];
const WIDTH: usize = 4096;
const SEEDS: u64 = 32;

struct SimAverage {
    f: Vec<f64>,
    rms: Vec<Vec<f64>>,
    kernel_00_33_03: [f64; 3],
}

/// Average scalar-stream runs of the real network at large width. The update
/// prescale is set to the branch exponent so that one branch factor cancels
/// against it, which is the normalization the deterministic recursion uses.
fn simulate(alpha: f64, gamma: f64, eta: f64, depth: usize) -> SimAverage {
    let cfg = WideConfig {
        n: WIDTH,
        l: depth,
        phi: Phi::Identity,
        mean_subtraction: false,
        keep_stream_snapshots: false,
    };
    let p = Parametrization {
        alpha,
        gamma,
        delta: alpha,
        width: WidthExponents::mup(),
        a: 1.0,
        eta,
        base_depth: 1,
    };
    let steps = XI.len();
    let mut f = vec![0.0; steps];
    let mut rms = vec![vec![0.0; depth + 1]; steps];
    let mut kernel = [0.0; 3];
    for seed in 0..SEEDS {
        let mut net = WideNet::lazy(&cfg, &p, 9000 + seed).unwrap();
        for t in 0..steps {
            let rec = net.train_step(XI[t], Y[t]).unwrap();
            f[t] += rec.f;
            for l in 0..=depth {
                rms[t][l] += rec.rms_profile[l];
            }
        }
        kernel[0] += net.output_kernel_estimate(0, 0);
        kernel[1] += net.output_kernel_estimate(3, 3);
        kernel[2] += net.output_kernel_estimate(0, 3);
    }
    let norm = SEEDS as f64;
    for v in f.iter_mut() {
        *v /= norm;
    }
    for row in rms.iter_mut() {
        for v in row.iter_mut() {
            *v /= norm;
        }
    }
    for v in kernel.iter_mut() {
        *v /= norm;
    }
    SimAverage { f, rms, kernel_00_33_03: kernel }
}

fn check_against_limit(alpha: f64, gamma: f64, eta: f64, depth: usize) {
    let sim = simulate(alpha, gamma, eta, depth);
    let limit = run_generalized(&LimitConfig {
        depth,
        alpha,
        gamma,
        eta,
        inputs: XI.to_vec(),
        targets: Y.to_vec(),
    })
    .unwrap();

    for t in 0..XI.len() {
        let want = limit.f[t];
        let got = sim.f[t];
        assert!(
            (got - want).abs() <= 0.02 + 0.04 * want.abs(),
            "alpha={alpha} gamma={gamma} step {t}: sim f {got} vs limit {want}"
        );
        for l in 0..=depth {
            let want = limit.layer_rms_limit(t, l);
            let got = sim.rms[t][l];
            assert!(
                (got - want).abs() <= 0.02 * want.max(0.5),
                "step {t} layer {l}: sim rms {got} vs limit {want}"
            );
        }
    }

    let pairs = [(0usize, 0usize, sim.kernel_00_33_03[0]), (3, 3, sim.kernel_00_33_03[1]), (0, 3, sim.kernel_00_33_03[2])];
    for (s, t, got) in pairs {
        let want = limit.output_kernel(s, t);
        assert!(
            (got - want).abs() <= 0.03 + 0.05 * want.abs(),
            "kernel ({s},{t}): sim {got} vs limit {want}"
        );
    }
}

// The deterministic recursion must be the large-width law of the actual
// linear residual trainer, output for output and layer for layer.
#[test]
fn limit_matches_wide_simulation_at_the_half_exponents() {
    check_against_limit(0.5, 0.5, 1.0, 8);
}

// Same correspondence away from the half-exponent point, where all three
// depth prefactors of the recursion (fresh-direction coefficient, correction
// prefactor, passthrough weight) differ from one.
#[test]
fn limit_matches_wide_simulation_at_general_exponents() {
    check_against_limit(0.75, 0.75, 2.0, 8);
}
