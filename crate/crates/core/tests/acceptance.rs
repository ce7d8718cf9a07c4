//! End-to-end acceptance checks, one test per criterion. Every test
//! prints a single PASS/FAIL line with its pinned tolerance (run with
//! `--nocapture` to see them on success).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use jumpflow::adjoint::{
    backward_grads, forward_loss, AdjointOptions,
};
use jumpflow::classical::{
    fit_mle, simulate_classical, ClassicalProcessSpec, EventSequence, Mark,
    ProcessFamily,
};
use jumpflow::dynamics::{MarkSpace, Model, ModelConfig};
use jumpflow::metrics::{
    classical_intensity_mape, eval_intensity_mape, eval_mark_mae, eval_type_error,
};
use jumpflow::ode::{fixed_step, SolverConfig};
use jumpflow::trainer::{split_dataset, train, TrainConfig};

fn report(id: &str, name: &str, pass: bool, detail: &str) {
    println!(
        "acceptance {id} ({name}): {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{id} ({name}): {detail}");
}

fn tight() -> SolverConfig<f64> {
    SolverConfig {
        rtol: 1e-10,
        atol: 1e-12,
        max_steps: 100_000_000,
    }
}

fn small_model(seed: u64) -> (Model<f64>, jumpflow::ParamVector) {
    let model = Model::new(ModelConfig {
        n_internal: 3,
        n_memory: 2,
        hidden_flow: vec![8],
        hidden_decay: vec![8],
        hidden_jump: vec![8],
        hidden_intensity: vec![8],
        mark_space: MarkSpace::Discrete { num_types: 2 },
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = model.init_params(&mut rng);
    (model, params)
}

fn random_sequence(seed: u64, n_events: usize) -> EventSequence<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut times: Vec<f64> = (0..n_events).map(|_| rng.gen::<f64>()).collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    EventSequence {
        t0: 0.0,
        t1: 1.0,
        events: times
            .into_iter()
            .map(|t| (t, Mark::Type(rng.gen_range(0..2))))
            .collect(),
    }
}

/// Worst deviation of the adjoint gradient from central finite
/// differences over all parameter coordinates, normalized by
/// max(1e-3-relative, 1e-6-absolute) tolerances: a value <= 1 passes.
fn worst_fd_violation(
    model: &Model<f64>,
    params: &[f64],
    seq: &EventSequence<f64>,
    grid_points: usize,
    lift_jumps: bool,
) -> f64 {
    let solver = tight();
    let (_, record) = forward_loss(model, params, seq, grid_points, solver).unwrap();
    let grads = backward_grads(
        model,
        params,
        seq,
        &record,
        solver,
        AdjointOptions { lift_jumps },
    )
    .unwrap();
    let mut worst: f64 = 0.0;
    for idx in 0..params.len() {
        let h = 1e-6 * params[idx].abs().max(1.0);
        let mut up = params.to_vec();
        up[idx] += h;
        let mut dn = params.to_vec();
        dn[idx] -= h;
        let lu = forward_loss(model, &up, seq, grid_points, solver).unwrap().0.total;
        let ld = forward_loss(model, &dn, seq, grid_points, solver).unwrap().0.total;
        let fd = (lu - ld) / (2.0 * h);
        let err = (grads.wrt_params[idx] - fd).abs();
        let tol = (1e-3 * fd.abs()).max(1e-6);
        worst = worst.max(err / tol);
    }
    // dL/dz(t0) is the initial-state segment of dL/dtheta, so the loop
    // above covers it; spot-check the identity anyway
    let init = model.initial_state_range();
    for (i, idx) in init.enumerate() {
        assert_eq!(grads.wrt_params[idx], grads.wrt_initial_state[i]);
    }
    worst
}

#[test]
fn c01_adjoint_gradients_match_finite_differences() {
    let start = std::time::Instant::now();
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let (model, params) = small_model(1000 + trial);
        let seq = random_sequence(2000 + trial, 10);
        worst = worst.max(worst_fd_violation(
            &model,
            params.as_slice(),
            &seq,
            33,
            true,
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        "C1",
        "adjoint gradient oracle",
        worst <= 1.0 && secs < 300.0,
        &format!(
            "20 random models x 10-event sequences; worst deviation {worst:.3}x the \
             max(1e-3 rel, 1e-6 abs) tolerance; {secs:.0}s (< 300s)"
        ),
    );
}

#[test]
fn c02_dropping_the_jump_lift_breaks_gradients() {
    let mut broke = 0usize;
    let mut worst_no_lift: f64 = 0.0;
    for trial in 0..5 {
        let (model, params) = small_model(3000 + trial);
        let seq = random_sequence(4000 + trial, 10);
        let v = worst_fd_violation(&model, params.as_slice(), &seq, 33, false);
        worst_no_lift = worst_no_lift.max(v);
        if v > 1.0 {
            broke += 1;
        }
    }
    report(
        "C2",
        "adjoint lift negative control",
        broke == 5,
        &format!(
            "gradient check failed on {broke}/5 models with the jump lift disabled \
             (worst deviation {worst_no_lift:.1}x tolerance)"
        ),
    );
}

fn recovery_mape(
    spec: ClassicalProcessSpec<f64>,
    corpus_seed: u64,
    config: TrainConfig,
) -> (f64, Vec<EventSequence<f64>>, Vec<usize>) {
    let sequences: Vec<EventSequence<f64>> = (0..100)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(corpus_seed + i);
            simulate_classical(&spec, 0.0, 100.0, &mut rng).unwrap()
        })
        .collect();
    let model = Model::new(ModelConfig {
        n_internal: 3,
        n_memory: 2,
        hidden_flow: vec![20],
        hidden_decay: vec![20],
        hidden_jump: vec![20],
        hidden_intensity: vec![20],
        mark_space: MarkSpace::Discrete { num_types: 1 },
    })
    .unwrap();
    let (train_idx, val_idx, test_idx) = split_dataset(100, config.split, config.seed);
    let solver = SolverConfig::default();
    let outcome = train(&model, &config, solver, &sequences, &train_idx, &val_idx).unwrap();
    let test: Vec<&EventSequence<f64>> = test_idx.iter().map(|&i| &sequences[i]).collect();
    let mape = eval_intensity_mape(
        &model,
        outcome.params.as_slice(),
        &spec,
        &test,
        500,
        solver,
    )
    .unwrap();
    (mape, sequences, test_idx)
}

#[test]
fn c03_poisson_intensity_recovery() {
    let start = std::time::Instant::now();
    let config = TrainConfig {
        epochs: 60,
        seed: 3,
        ..TrainConfig::default()
    };
    let (mape, _, _) = recovery_mape(ClassicalProcessSpec::Poisson { rate: 1.0 }, 10_000, config);
    let secs = start.elapsed().as_secs_f64();
    report(
        "C3",
        "poisson intensity recovery",
        mape <= 5.0 && secs < 1800.0,
        &format!("test MAPE {mape:.2}% (<= 5%); {secs:.0}s (< 1800s)"),
    );
}

#[test]
fn c04_hawkes_exp_intensity_recovery_beats_poisson_fit() {
    let start = std::time::Instant::now();
    let spec = ClassicalProcessSpec::HawkesExp {
        base: 0.2,
        excitation: 0.8,
        decay: 1.0,
    };
    let config = TrainConfig {
        epochs: 150,
        learning_rate: 3e-3,
        seed: 4,
        ..TrainConfig::default()
    };
    let (mape, sequences, test_idx) = recovery_mape(spec, 20_000, config);
    // flat-rate baseline: best-fit constant intensity on the same data
    let fitted = fit_mle(ProcessFamily::Poisson, &sequences).unwrap().spec;
    let test: Vec<&EventSequence<f64>> = test_idx.iter().map(|&i| &sequences[i]).collect();
    let baseline = classical_intensity_mape(&fitted, &spec, &test, 500).unwrap();
    let secs = start.elapsed().as_secs_f64();
    report(
        "C4",
        "hawkes-exp intensity recovery",
        mape <= 25.0 && mape < baseline && secs < 1800.0,
        &format!(
            "test MAPE {mape:.2}% (<= 25% and < flat-rate fit {baseline:.2}%); {secs:.0}s"
        ),
    );
}

#[test]
fn c05_self_correcting_intensity_recovery() {
    let start = std::time::Instant::now();
    let spec = ClassicalProcessSpec::SelfCorrecting {
        growth: 0.5,
        inhibition: 0.2,
    };
    let config = TrainConfig {
        epochs: 150,
        learning_rate: 3e-3,
        seed: 5,
        ..TrainConfig::default()
    };
    let (mape, _, _) = recovery_mape(spec, 30_000, config);
    let secs = start.elapsed().as_secs_f64();
    report(
        "C5",
        "self-correcting intensity recovery",
        mape <= 30.0 && secs < 1800.0,
        &format!("test MAPE {mape:.2}% (<= 30%); {secs:.0}s"),
    );
}

#[test]
fn c06_classical_mle_self_consistency() {
    // Poisson: closed form, exact
    let spec = ClassicalProcessSpec::Poisson { rate: 1.3 };
    let seqs: Vec<EventSequence<f64>> = (0..200)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(40_000 + i);
            simulate_classical(&spec, 0.0, 100.0, &mut rng).unwrap()
        })
        .collect();
    let total: usize = seqs.iter().map(|s| s.len()).sum();
    let closed_form = total as f64 / (200.0 * 100.0);
    let fitted = fit_mle(ProcessFamily::Poisson, &seqs).unwrap().spec;
    let poisson_err = match fitted {
        ClassicalProcessSpec::Poisson { rate } => (rate - closed_form).abs(),
        _ => unreachable!(),
    };

    // Hawkes-E: within 10% of the generating parameters on 500 sequences
    let spec = ClassicalProcessSpec::HawkesExp {
        base: 0.2,
        excitation: 0.8,
        decay: 1.0,
    };
    let seqs: Vec<EventSequence<f64>> = (0..500)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(50_000 + i);
            simulate_classical(&spec, 0.0, 100.0, &mut rng).unwrap()
        })
        .collect();
    let fitted = fit_mle(ProcessFamily::HawkesExp, &seqs).unwrap().spec;
    let true_params = [0.2, 0.8, 1.0];
    let fit_params = fitted.params();
    let hawkes_rel: f64 = fit_params
        .iter()
        .zip(&true_params)
        .map(|(f, t)| (f - t).abs() / t)
        .fold(0.0, f64::max);
    report(
        "C6",
        "classical MLE self-consistency",
        poisson_err < 1e-6 && hawkes_rel < 0.10,
        &format!(
            "poisson |rate - n/T| = {poisson_err:.2e} (< 1e-6); hawkes-exp params \
             {fit_params:?} vs [0.2, 0.8, 1.0], worst rel err {hawkes_rel:.3} (< 0.10)"
        ),
    );
}

#[test]
fn c07_thinning_statistics() {
    // Poisson inter-event gaps vs Exponential(2) by Kolmogorov-Smirnov
    let spec = ClassicalProcessSpec::Poisson { rate: 2.0 };
    let mut gaps = Vec::new();
    let mut seed = 0u64;
    while gaps.len() < 10_000 {
        let mut rng = ChaCha8Rng::seed_from_u64(60_000 + seed);
        seed += 1;
        let seq = simulate_classical(&spec, 0.0, 100.0, &mut rng).unwrap();
        let times: Vec<f64> = seq.times().collect();
        for w in times.windows(2) {
            gaps.push(w[1] - w[0]);
        }
    }
    gaps.truncate(10_000);
    gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = gaps.len() as f64;
    let mut ks: f64 = 0.0;
    for (i, &g) in gaps.iter().enumerate() {
        let cdf = 1.0 - (-2.0 * g).exp();
        let emp_hi = (i + 1) as f64 / n;
        let emp_lo = i as f64 / n;
        ks = ks.max((cdf - emp_lo).abs()).max((emp_hi - cdf).abs());
    }
    let ks_critical = 1.628 / n.sqrt(); // 1% level

    // Hawkes-E mean count vs base*T / (1 - alpha/beta)
    let spec = ClassicalProcessSpec::HawkesExp {
        base: 0.2,
        excitation: 0.8,
        decay: 1.0,
    };
    let n_seqs = 400;
    let total: usize = (0..n_seqs)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(70_000 + i);
            simulate_classical(&spec, 0.0, 100.0, &mut rng).unwrap().len()
        })
        .sum();
    let mean = total as f64 / n_seqs as f64;
    let expected = 0.2 * 100.0 / (1.0 - 0.8);
    let rel = (mean - expected).abs() / expected;
    report(
        "C7",
        "thinning statistics",
        ks < ks_critical && rel < 0.05,
        &format!(
            "poisson KS {ks:.5} (< {ks_critical:.5} at 1%); hawkes-exp mean count \
             {mean:.1} vs {expected:.0}, rel err {rel:.3} (< 0.05)"
        ),
    );
}

#[test]
fn c08_real_valued_marks_beat_running_mean_baseline() {
    let start = std::time::Instant::now();
    // event times from a self-exciting process; each event's feature is
    // the time since the previous event
    let spec = ClassicalProcessSpec::HawkesExp {
        base: 0.2,
        excitation: 0.8,
        decay: 1.0,
    };
    let sequences: Vec<EventSequence<f64>> = (0..80)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(80_000 + i);
            let seq = simulate_classical(&spec, 0.0, 50.0, &mut rng).unwrap();
            let mut prev = 0.0;
            let events = seq
                .events
                .into_iter()
                .map(|(t, _)| {
                    let gap = t - prev;
                    prev = t;
                    (t, Mark::Features(vec![gap]))
                })
                .collect();
            EventSequence {
                t0: 0.0,
                t1: 50.0,
                events,
            }
        })
        .collect();
    let model = Model::new(ModelConfig {
        n_internal: 5,
        n_memory: 5,
        hidden_flow: vec![20],
        hidden_decay: vec![20],
        hidden_jump: vec![20],
        hidden_intensity: vec![20],
        mark_space: MarkSpace::Continuous {
            dim: 1,
            components: 3,
        },
    })
    .unwrap();
    let config = TrainConfig {
        learning_rate: 3e-3,
        epochs: 150,
        seed: 8,
        ..TrainConfig::default()
    };
    let (train_idx, val_idx, test_idx) = split_dataset(80, config.split, config.seed);
    let solver = SolverConfig::default();
    let outcome = train(&model, &config, solver, &sequences, &train_idx, &val_idx).unwrap();
    let test: Vec<&EventSequence<f64>> = test_idx.iter().map(|&i| &sequences[i]).collect();
    let (mae, baseline) =
        eval_mark_mae(&model, outcome.params.as_slice(), &test, solver).unwrap();
    let secs = start.elapsed().as_secs_f64();
    report(
        "C8",
        "real-valued mark prediction",
        mae < 0.5 * baseline,
        &format!(
            "model MAE {mae:.3} vs running-mean baseline {baseline:.3} \
             (need < 0.5x baseline); {secs:.0}s"
        ),
    );
}

#[test]
fn c09_solver_order() {
    // fixed-step error on dz/dt = -z over [0, 1] halves like h^5
    let mut field = |_t: f64, y: &[f64], out: &mut [f64]| {
        out[0] = -y[0];
    };
    let mut errs = Vec::new();
    let steps_list = [8usize, 16, 32, 64];
    for &steps in &steps_list {
        let mut y = vec![1.0f64];
        let h = 1.0 / steps as f64;
        for i in 0..steps {
            y = fixed_step(&mut field, i as f64 * h, &y, h);
        }
        errs.push((y[0] - (-1.0f64).exp()).abs());
    }
    let mut slopes = Vec::new();
    for w in errs.windows(2) {
        slopes.push((w[0] / w[1]).log2());
    }
    let slope = slopes.iter().sum::<f64>() / slopes.len() as f64;
    report(
        "C9",
        "solver convergence order",
        (slope - 5.0).abs() <= 0.5,
        &format!("observed order {slope:.2} (within 5 +/- 0.5)"),
    );
}

#[test]
fn c10_discrete_marks_pipeline_beats_majority_baseline() {
    let start = std::time::Instant::now();
    // synthetic 22-type corpus: event times from a constant-rate process,
    // types cycling deterministically so history is predictive
    let num_types = 22usize;
    let time_spec = ClassicalProcessSpec::Poisson { rate: 1.0 };
    let sequences: Vec<EventSequence<f64>> = (0..60)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(90_000 + i);
            let seq = simulate_classical(&time_spec, 0.0, 50.0, &mut rng).unwrap();
            let offset = (i as usize) % num_types;
            let events = seq
                .events
                .into_iter()
                .enumerate()
                .map(|(j, (t, _))| (t, Mark::Type((offset + j) % num_types)))
                .collect();
            EventSequence {
                t0: 0.0,
                t1: 50.0,
                events,
            }
        })
        .collect();
    let model = Model::new(ModelConfig {
        n_internal: 3,
        n_memory: 24,
        hidden_flow: vec![20],
        hidden_decay: vec![20],
        hidden_jump: vec![20],
        hidden_intensity: vec![20],
        mark_space: MarkSpace::Discrete { num_types },
    })
    .unwrap();
    let config = TrainConfig {
        epochs: 120,
        learning_rate: 3e-3,
        seed: 10,
        ..TrainConfig::default()
    };
    let (train_idx, val_idx, test_idx) = split_dataset(60, config.split, config.seed);
    let solver = SolverConfig::default();
    let outcome = train(&model, &config, solver, &sequences, &train_idx, &val_idx).unwrap();
    let test: Vec<&EventSequence<f64>> = test_idx.iter().map(|&i| &sequences[i]).collect();
    let error = eval_type_error(&model, outcome.params.as_slice(), &test, solver).unwrap();
    // majority-class baseline: always predict the most frequent training type
    let mut counts = vec![0usize; num_types];
    for &i in &train_idx {
        for (_, mark) in &sequences[i].events {
            if let Mark::Type(k) = mark {
                counts[*k] += 1;
            }
        }
    }
    let majority = counts
        .iter()
        .enumerate()
        .max_by_key(|&(_, c)| *c)
        .map(|(k, _)| k)
        .unwrap();
    let (mut errors, mut total) = (0usize, 0usize);
    for seq in &test {
        for (_, mark) in &seq.events {
            if let Mark::Type(k) = mark {
                total += 1;
                if *k != majority {
                    errors += 1;
                }
            }
        }
    }
    let baseline = 100.0 * errors as f64 / total as f64;
    let secs = start.elapsed().as_secs_f64();
    report(
        "C10",
        "22-type prediction pipeline",
        error < baseline,
        &format!(
            "type error {error:.1}% vs majority-class baseline {baseline:.1}%; {secs:.0}s"
        ),
    );
}
