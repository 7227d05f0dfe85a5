//! Acceptance suite. Each test prints one `[PASS]`/`[FAIL]` line
//! (visible with `--nocapture`) and asserts its thresholds.
//!
//! The training-scale checks take several minutes each; they serialize on a
//! shared lock so wall-clock comparisons stay fair when the suite runs with
//! multiple test threads.

use std::sync::{Mutex, OnceLock};

use diffnum::gradcheck::{max_relative_error, numeric_gradient};
use diffnum::{GruCell, Mlp, MultiHeadAttention, Real, RnnCell, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use tgn::{
    average_precision, memory_independence_check, roc_auc, Hyperparams, TgnModel, VariantConfig,
};
use tgn_cli::{run, DataSource, GeneratorSpec, RunSpec, SyntheticKind, Task};
use tgstore::{EventLog, EventLogBuilder, TemporalAdjacency};

fn heavy_lock() -> std::sync::MutexGuard<'static, ()> {
    static LOCK: OnceLock<Mutex<()>> = OnceLock::new();
    LOCK.get_or_init(|| Mutex::new(()))
        .lock()
        .unwrap_or_else(|e| e.into_inner())
}

fn pass(line: &str) {
    println!("[PASS] {line}");
}

macro_rules! fail {
    ($($arg:tt)*) => {{
        let msg = format!($($arg)*);
        println!("[FAIL] {msg}");
        panic!("{msg}");
    }};
}

// ── 1. Gradient suite ───────────────────────────────────────────────────

const GRAD_TOL: Real = 1e-4;

fn check_params(
    what: &str,
    params: &[&Tensor],
    build: impl Fn(&Tape) -> Tensor,
) -> Result<(), String> {
    for p in params {
        p.zero_grad();
    }
    let tape = Tape::new();
    let loss = build(&tape);
    tape.backward(&loss).map_err(|e| e.to_string())?;
    for (i, p) in params.iter().enumerate() {
        let analytic = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
        let numeric = numeric_gradient(p, 1e-5, || {
            let t = Tape::inference();
            build(&t).scalar_value().unwrap()
        });
        let err = max_relative_error(&analytic, &numeric, 1e-6);
        if err >= GRAD_TOL {
            return Err(format!("{what}: parameter {i} relative error {err}"));
        }
    }
    Ok(())
}

fn random_tensor(rng: &mut ChaCha12Rng, shape: &[usize]) -> Tensor {
    let numel = shape.iter().product();
    let values = (0..numel).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::param(shape, values).unwrap()
}

#[test]
fn c1_gradient_suite() {
    let started = std::time::Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(101);

    // Every kernel, driven through a squared-sum scalarizer.
    let a = random_tensor(&mut rng, &[2, 3]);
    let b = random_tensor(&mut rng, &[2, 3]);
    check_params("add/sub/mul", &[&a, &b], |t| {
        let s = t.add(&a, &b).unwrap();
        let d = t.sub(&s, &b).unwrap();
        let m = t.mul(&d, &s).unwrap();
        t.sum_all(&m)
    })
    .unwrap_or_else(|e| fail!("gradient suite: {e}"));

    let x = random_tensor(&mut rng, &[4]);
    check_params("scalar ops", &[&x], |t| {
        let y = t.add_scalar(&t.mul_scalar(&x, 1.7), -0.3);
        t.sum_all(&t.mul(&y, &y).unwrap())
    })
    .unwrap_or_else(|e| fail!("gradient suite: {e}"));

    let ma = random_tensor(&mut rng, &[2, 3]);
    let mb = random_tensor(&mut rng, &[3, 4]);
    let mc = random_tensor(&mut rng, &[3, 4]);
    check_params("matmul variants", &[&ma, &mb, &mc], |t| {
        let y = t.matmul(&ma, &mb).unwrap();
        let z = t.matmul_tb(&y, &mc).unwrap();
        t.sum_all(&t.mul(&z, &z).unwrap())
    })
    .unwrap_or_else(|e| fail!("gradient suite: {e}"));

    let ca = random_tensor(&mut rng, &[2, 2]);
    let cb = random_tensor(&mut rng, &[2, 3]);
    check_params("concat/slice/reshape/add_row", &[&ca, &cb], |t| {
        let wide = t.concat(&[&ca, &cb], 1).unwrap();
        let part = t.slice(&wide, 1, 1, 3).unwrap();
        let flat = t.reshape(&part, &[3, 2]).unwrap();
        let bias = t.slice(&ca, 0, 0, 1).unwrap();
        let shifted = t.add_row(&flat, &bias).unwrap();
        t.sum_all(&t.mul(&shifted, &shifted).unwrap())
    })
    .unwrap_or_else(|e| fail!("gradient suite: {e}"));

    let r = random_tensor(&mut rng, &[3, 2]);
    check_params("reductions", &[&r], |t| {
        let s = t.sum_rows(&r).unwrap();
        let m = t.mean_all(&t.mul(&s, &s).unwrap());
        t.add(&m, &t.sum_all(&r)).unwrap()
    })
    .unwrap_or_else(|e| fail!("gradient suite: {e}"));

    let act_vals: Vec<Real> = (0..6)
        .map(|_| {
            let v: Real = rng.gen_range(0.05..1.0);
            if rng.gen::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect();
    let act = Tensor::param(&[6], act_vals).unwrap();
    check_params("activations", &[&act], |t| {
        let y = t.add(
            &t.add(&t.relu(&act), &t.sigmoid(&act)).unwrap(),
            &t.add(&t.tanh(&act), &t.cos(&act)).unwrap(),
        )
        .unwrap();
        t.sum_all(&t.mul(&y, &y).unwrap())
    })
    .unwrap_or_else(|e| fail!("gradient suite: {e}"));

    let sm = random_tensor(&mut rng, &[2, 4]);
    let sw = random_tensor(&mut rng, &[2, 4]);
    check_params("masked softmax", &[&sm], |t| {
        let y = t
            .softmax_rows(&sm, Some(&[true, false, true, true]))
            .unwrap();
        t.sum_all(&t.mul(&y, &sw).unwrap())
    })
    .unwrap_or_else(|e| fail!("gradient suite: {e}"));

    let dx = random_tensor(&mut rng, &[8]);
    check_params("dropout (fixed mask)", &[&dx], |t| {
        let mut mask_rng = ChaCha12Rng::seed_from_u64(5);
        let y = t.dropout(&dx, 0.35, true, &mut mask_rng).unwrap();
        t.sum_all(&t.mul(&y, &y).unwrap())
    })
    .unwrap_or_else(|e| fail!("gradient suite: {e}"));

    let logits = random_tensor(&mut rng, &[6]);
    let labels = Tensor::new(&[6], vec![1.0, 0.0, 1.0, 1.0, 0.0, 1.0]).unwrap();
    check_params("bce_with_logits", &[&logits], |t| {
        t.bce_with_logits(&logits, &labels).unwrap()
    })
    .unwrap_or_else(|e| fail!("gradient suite: {e}"));

    // Composite layers.
    let gru = GruCell::new(&mut rng, 3, 2);
    let gm = random_tensor(&mut rng, &[2, 3]);
    let gs = random_tensor(&mut rng, &[2, 2]);
    let gparams: Vec<Tensor> = gru.params().into_iter().map(|(_, p)| p).collect();
    let mut refs: Vec<&Tensor> = gparams.iter().collect();
    refs.push(&gm);
    refs.push(&gs);
    check_params("gru cell", &refs, |t| {
        let y = gru.forward(t, &gm, &gs).unwrap();
        t.sum_all(&t.mul(&y, &y).unwrap())
    })
    .unwrap_or_else(|e| fail!("gradient suite: {e}"));

    let rnn = RnnCell::new(&mut rng, 3, 2);
    let rparams: Vec<Tensor> = rnn.params().into_iter().map(|(_, p)| p).collect();
    let mut refs: Vec<&Tensor> = rparams.iter().collect();
    refs.push(&gm);
    refs.push(&gs);
    check_params("rnn cell", &refs, |t| {
        let y = rnn.forward(t, &gm, &gs).unwrap();
        t.sum_all(&t.mul(&y, &y).unwrap())
    })
    .unwrap_or_else(|e| fail!("gradient suite: {e}"));

    let mha = MultiHeadAttention::new(&mut rng, 4, 5, 4, 2).unwrap();
    let q = random_tensor(&mut rng, &[1, 4]);
    let kv = random_tensor(&mut rng, &[3, 5]);
    let aparams: Vec<Tensor> = mha.params().into_iter().map(|(_, p)| p).collect();
    let mut refs: Vec<&Tensor> = aparams.iter().collect();
    refs.push(&q);
    refs.push(&kv);
    check_params("multi-head attention", &refs, |t| {
        let mut r = ChaCha12Rng::seed_from_u64(1);
        let out = mha
            .forward(t, &q, &kv, &[true, true, false], 0.0, true, &mut r)
            .unwrap();
        t.sum_all(&t.mul(&out.output, &out.output).unwrap())
    })
    .unwrap_or_else(|e| fail!("gradient suite: {e}"));

    let mlp = Mlp::new(&mut rng, 3, 4, 2);
    let mx = random_tensor(&mut rng, &[2, 3]);
    let mparams: Vec<Tensor> = mlp.params().into_iter().map(|(_, p)| p).collect();
    let mut refs: Vec<&Tensor> = mparams.iter().collect();
    refs.push(&mx);
    check_params("mlp", &refs, |t| {
        let y = mlp.forward(t, &mx).unwrap();
        t.sum_all(&t.mul(&y, &y).unwrap())
    })
    .unwrap_or_else(|e| fail!("gradient suite: {e}"));

    // Whole-model loss on a five-event toy graph: the finite-difference side
    // rebuilds the model per probe and differentiates the second batch's
    // loss given the first batch's stored state. Dropout is disabled so the
    // loss is a deterministic function of the parameters, every node has
    // first-batch history (an isolated zero node would park a ReLU exactly
    // on its kink), and parameters are jittered off their symmetric init.
    let toy = {
        let mut b = EventLogBuilder::new();
        b.interaction(0, 3, 1.0, vec![0.4, -0.2], 0).unwrap();
        b.interaction(1, 4, 2.0, vec![-0.6, 0.1], 0).unwrap();
        b.interaction(0, 4, 3.0, vec![0.3, 0.8], 0).unwrap();
        b.interaction(1, 3, 4.0, vec![0.9, -0.5], 0).unwrap();
        b.interaction(0, 3, 5.0, vec![-0.1, 0.7], 0).unwrap();
        b.finish()
    };
    let adj = TemporalAdjacency::from_log(&toy).unwrap();
    let hp = Hyperparams {
        memory_dim: 3,
        time_dim: 3,
        embedding_dim: 3,
        heads: 2,
        dropout: 0.0,
        learning_rate: 1e-3,
        batch_size: 5,
        patience: 5,
    };
    let mut variant = VariantConfig::preset("tgn-attn").unwrap();
    variant.embedding = tgn::EmbeddingMode::Attention { layers: 1, neighbors: 3 };
    let seed = 31;
    let pool: Vec<usize> = toy.destinations().to_vec();

    // Warm state from the first three events, captured once at a jittered,
    // generic parameter point.
    let mut base = TgnModel::new(&toy, variant.clone(), hp.clone(), seed).unwrap();
    let mut jitter_rng = ChaCha12Rng::seed_from_u64(555);
    let theta: Vec<Vec<Real>> = base
        .snapshot_params()
        .into_iter()
        .map(|values| {
            values
                .into_iter()
                .map(|v| v + jitter_rng.gen_range(-0.1..0.1))
                .collect()
        })
        .collect();
    base.restore_params(&theta).unwrap();
    base.replay_memory(&toy, &adj, 0..3).unwrap();
    let warm = base.memory_state();

    let batch_loss = |params: &[Vec<Real>]| -> Real {
        let mut m = TgnModel::new(&toy, variant.clone(), hp.clone(), seed).unwrap();
        m.restore_params(params).unwrap();
        m.restore_memory_state(warm.clone());
        m.train_epoch(&toy, &adj, 3..5, &pool).unwrap().loss as Real
    };

    // Analytic gradients: one training pass leaves batch-two gradients on
    // the parameters (the loss is taken before the optimizer step).
    let mut analytic_model = TgnModel::new(&toy, variant.clone(), hp.clone(), seed).unwrap();
    analytic_model.restore_params(&theta).unwrap();
    analytic_model.restore_memory_state(warm.clone());
    analytic_model
        .train_epoch(&toy, &adj, 3..5, &pool)
        .unwrap();

    let mut checked = 0usize;
    for (idx, (name, p)) in analytic_model.params().iter().enumerate() {
        let analytic = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
        let holder = Tensor::param(&[p.numel()], theta[idx].clone()).unwrap();
        let numeric = numeric_gradient(&holder, 1e-5, || {
            let mut probe = theta.clone();
            probe[idx] = holder.to_vec();
            batch_loss(&probe)
        });
        let err = max_relative_error(&analytic, &numeric, 1e-6);
        if err >= GRAD_TOL {
            fail!("gradient suite: full-model parameter {name} relative error {err}");
        }
        checked += p.numel();
    }
    let secs = started.elapsed().as_secs_f64();
    if secs >= 60.0 {
        fail!("gradient suite exceeded 60 s: {secs:.1}");
    }
    pass(&format!(
        "gradient suite: every kernel and all {checked} whole-model parameter components \
         match central differences (rel err < 1e-4) in {secs:.1} s"
    ));
}

// ── 2. Sequential equivalence ───────────────────────────────────────────

fn block_unique_log(seed: u64) -> EventLog {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let sources: Vec<usize> = (0..12).collect();
    let dests: Vec<usize> = (12..24).collect();
    let mut b = EventLogBuilder::new();
    let mut t = 0.0;
    for _ in 0..5 {
        let mut s = sources.clone();
        let mut d = dests.clone();
        s.shuffle(&mut rng);
        d.shuffle(&mut rng);
        for i in 0..10 {
            t += rng.gen_range(0.1..1.0);
            b.interaction(s[i], d[i], t, vec![rng.gen_range(-1.0..1.0)], 0)
                .unwrap();
        }
    }
    b.finish()
}

#[test]
fn c2_sequential_equivalence() {
    let started = std::time::Instant::now();
    let hp = |batch: usize| Hyperparams {
        memory_dim: 4,
        time_dim: 4,
        embedding_dim: 4,
        heads: 2,
        dropout: 0.0,
        learning_rate: 1e-3,
        batch_size: batch,
        patience: 5,
    };
    for seed in 0..20u64 {
        let log = block_unique_log(seed);
        let adj = TemporalAdjacency::from_log(&log).unwrap();
        let states = |batch: usize| {
            let mut model = TgnModel::new(
                &log,
                VariantConfig::preset("tgn-attn").unwrap(),
                hp(batch),
                77,
            )
            .unwrap();
            model.replay_memory(&log, &adj, 0..log.len()).unwrap();
            model.effective_memory_table().unwrap()
        };
        let sequential = states(1);
        for batch in [2, 5, 10] {
            let batched = states(batch);
            for node in 0..log.num_nodes() {
                let (sv, st) = &sequential[&node];
                let (bv, bt) = &batched[&node];
                if st != bt {
                    fail!("sequential equivalence: clock differs at node {node} (seed {seed})");
                }
                for (a, b) in sv.iter().zip(bv) {
                    if (a - b).abs() > 1e-12 {
                        fail!(
                            "sequential equivalence: node {node} differs by {} \
                             (seed {seed}, batch {batch})",
                            (a - b).abs()
                        );
                    }
                }
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    if secs >= 60.0 {
        fail!("sequential equivalence exceeded 60 s: {secs:.1}");
    }
    pass(&format!(
        "sequential equivalence: 20 random 50-event logs, batch sizes {{2,5,10}} vs \
         event-by-event, all memories within 1e-12 in {secs:.1} s"
    ));
}

// ── 3. No-leakage instrumentation ───────────────────────────────────────

#[test]
fn c3_no_leakage() {
    let started = std::time::Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(404);
    let mut b = EventLogBuilder::new();
    for i in 0..30 {
        let src = rng.gen_range(0..5usize);
        let dst = 5 + rng.gen_range(0..5usize);
        b.interaction(src, dst, i as f64 + 1.0, vec![rng.gen_range(-1.0..1.0)], 0)
            .unwrap();
    }
    let log = b.finish();
    let adj = TemporalAdjacency::from_log(&log).unwrap();
    let hp = Hyperparams {
        memory_dim: 4,
        time_dim: 4,
        embedding_dim: 4,
        heads: 2,
        dropout: 0.0,
        learning_rate: 1e-3,
        batch_size: 6,
        patience: 5,
    };
    let checked = memory_independence_check(
        &log,
        &adj,
        &VariantConfig::preset("tgn-attn").unwrap(),
        &hp,
        11,
    )
    .unwrap_or_else(|e| fail!("no-leakage: {e}"));
    if checked != 30 {
        fail!("no-leakage: expected 30 probes, ran {checked}");
    }
    let secs = started.elapsed().as_secs_f64();
    if secs >= 60.0 {
        fail!("no-leakage exceeded 60 s: {secs:.1}");
    }
    pass(&format!(
        "no-leakage: delete-and-replay over every batch of a 30-event log leaves the \
         scoring memory bit-identical ({checked} events) in {secs:.1} s"
    ));
}

// ── 4. Metric oracles ───────────────────────────────────────────────────

fn oracle_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let positives = labels.iter().filter(|&&l| l).count();
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev_tp = 0usize;
    for &theta in &thresholds {
        let mut tp = 0;
        let mut fp = 0;
        for (&s, &l) in scores.iter().zip(labels) {
            if s >= theta {
                if l {
                    tp += 1
                } else {
                    fp += 1
                }
            }
        }
        ap += (tp - prev_tp) as f64 / positives as f64 * tp as f64 / (tp + fp) as f64;
        prev_tp = tp;
    }
    ap
}

fn oracle_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, (&si, &li)) in scores.iter().zip(labels).enumerate() {
        if !li {
            continue;
        }
        for (j, (&sj, &lj)) in scores.iter().zip(labels).enumerate() {
            if i == j || lj {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

#[test]
fn c4_metric_oracles() {
    let started = std::time::Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(4);
    let mut cases = 0usize;
    for n in 1..=8usize {
        let distinct: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
        let tied: Vec<f64> = (0..n).map(|i| [0.25, 0.5, 0.75][i % 3]).collect();
        for bits in 0..1usize << n {
            let labels: Vec<bool> = (0..n).map(|i| bits >> i & 1 == 1).collect();
            let positives = labels.iter().filter(|&&l| l).count();
            for scores in [&distinct, &tied] {
                let mut both: Vec<(f64, bool)> =
                    scores.iter().copied().zip(labels.iter().copied()).collect();
                both.shuffle(&mut rng);
                let (s, l): (Vec<f64>, Vec<bool>) = both.into_iter().unzip();
                if positives > 0 {
                    let got = average_precision(&s, &l).unwrap();
                    let want = oracle_ap(&s, &l);
                    if (got - want).abs() > 1e-12 {
                        fail!("metric oracles: ap {got} vs {want} on {s:?} {l:?}");
                    }
                }
                if positives > 0 && positives < n {
                    let got = roc_auc(&s, &l).unwrap();
                    let want = oracle_auc(&s, &l);
                    if (got - want).abs() > 1e-12 {
                        fail!("metric oracles: auc {got} vs {want} on {s:?} {l:?}");
                    }
                }
                cases += 1;
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    if secs >= 60.0 {
        fail!("metric oracles exceeded 60 s: {secs:.1}");
    }
    pass(&format!(
        "metric oracles: AP and ROC AUC match brute force on {cases} score/label lists \
         of length <= 8 in {secs:.1} s"
    ));
}

// ── 5–7, 9: training-scale checks ───────────────────────────────────────

fn periodic_spec(seed: u64) -> RunSpec {
    let mut spec = RunSpec::new(
        DataSource::Synthetic(GeneratorSpec::new(SyntheticKind::Periodic, 100, 10_000, seed)),
        VariantConfig::preset("tgn-attn").unwrap(),
    );
    spec.task = Task::Link;
    spec.epochs = 20;
    spec.seed = seed;
    spec.hp = scaled_hp();
    spec
}

fn scaled_hp() -> Hyperparams {
    Hyperparams {
        memory_dim: 32,
        time_dim: 16,
        embedding_dim: 32,
        heads: 2,
        dropout: 0.1,
        learning_rate: 3e-3,
        batch_size: 200,
        patience: 5,
    }
}

fn long_memory_spec(variant: &str, seed: u64) -> RunSpec {
    let mut spec = RunSpec::new(
        DataSource::Synthetic(GeneratorSpec::new(
            SyntheticKind::LongMemory,
            100,
            4_000,
            seed,
        )),
        VariantConfig::preset(variant).unwrap(),
    );
    spec.task = Task::Link;
    spec.epochs = 12;
    spec.seed = seed;
    spec.hp = scaled_hp();
    spec
}

fn run_periodic(seed: u64) -> (f64, Vec<u64>) {
    let outcome = run(&periodic_spec(seed)).unwrap();
    let ap = outcome.test_transductive.as_ref().unwrap().ap;
    let mut bits: Vec<u64> = outcome
        .train
        .epochs
        .iter()
        .flat_map(|e| [e.train.loss.to_bits(), e.val.ap.to_bits()])
        .collect();
    bits.push(ap.to_bits());
    (ap, bits)
}

/// First computation of each training-scale result is shared between the
/// gate check and the determinism rerun; the stored duration keeps the
/// runtime assertion honest regardless of which test computed it.
struct Cached<T> {
    value: T,
    compute_secs: f64,
}

fn cached<T>(slot: &'static OnceLock<Cached<T>>, compute: impl FnOnce() -> T) -> &'static Cached<T> {
    slot.get_or_init(|| {
        let started = std::time::Instant::now();
        let value = compute();
        Cached {
            value,
            compute_secs: started.elapsed().as_secs_f64(),
        }
    })
}

static PERIODIC: OnceLock<Cached<(f64, Vec<u64>)>> = OnceLock::new();
static ABLATION: OnceLock<Cached<([f64; 3], Vec<u64>)>> = OnceLock::new();
static SPEED: OnceLock<Cached<([f64; 3], Vec<u64>)>> = OnceLock::new();

#[test]
fn c5_learning_check() {
    let _guard = heavy_lock();
    let result = cached(&PERIODIC, || run_periodic(7));
    let (ap, _) = &result.value;
    if *ap < 0.85 {
        fail!("learning check: periodic test AP {ap:.4} < 0.85");
    }
    if result.compute_secs >= 900.0 {
        fail!("learning check exceeded 15 min: {:.0} s", result.compute_secs);
    }
    pass(&format!(
        "learning check: periodic generator test AP {ap:.4} >= 0.85 within 20 epochs \
         in {:.0} s",
        result.compute_secs
    ));
}

fn ablation_mean_aps() -> ([f64; 3], Vec<u64>) {
    let seeds = [1u64, 2, 3, 4, 5];
    let variants = ["tgn-attn", "tgn-no-mem", "tgn-id"];
    let mut means = [0.0f64; 3];
    let mut bits = Vec::new();
    for (vi, variant) in variants.iter().enumerate() {
        for &seed in &seeds {
            let outcome = run(&long_memory_spec(variant, seed)).unwrap();
            let ap = outcome.test_transductive.as_ref().unwrap().ap;
            means[vi] += ap;
            bits.push(ap.to_bits());
        }
        means[vi] /= seeds.len() as f64;
    }
    (means, bits)
}

#[test]
fn c6_ablation_ordering() {
    let _guard = heavy_lock();
    let result = cached(&ABLATION, ablation_mean_aps);
    let ([attn, no_mem, id], _) = &result.value;
    let (attn, no_mem, id) = (*attn, *no_mem, *id);
    if attn - no_mem < 0.02 {
        fail!(
            "ablation ordering: attn {attn:.4} vs no-mem {no_mem:.4}: \
             gap {:.4} < 2 AP points",
            attn - no_mem
        );
    }
    if attn - id < 0.02 {
        fail!(
            "ablation ordering: attn {attn:.4} vs id {id:.4}: gap {:.4} < 2 AP points",
            attn - id
        );
    }
    if result.compute_secs >= 3600.0 {
        fail!("ablation ordering exceeded 1 h: {:.0} s", result.compute_secs);
    }
    pass(&format!(
        "ablation ordering: mean test AP over 5 seeds attn {attn:.4} > no-mem {no_mem:.4} \
         and > id {id:.4} by >= 2 points in {:.0} s",
        result.compute_secs
    ));
}

fn speed_spec(variant: &str) -> RunSpec {
    let mut spec = RunSpec::new(
        DataSource::Synthetic(GeneratorSpec::new(SyntheticKind::Periodic, 100, 2_000, 5)),
        VariantConfig::preset(variant).unwrap(),
    );
    spec.epochs = 2;
    spec.seed = 5;
    spec.hp = scaled_hp();
    spec
}

fn speed_run() -> ([f64; 3], Vec<u64>) {
    let variants = ["tgn-attn", "tgn-2l", "tgat"];
    let mut secs = [0.0f64; 3];
    let mut bits = Vec::new();
    for (i, v) in variants.iter().enumerate() {
        let outcome = run(&speed_spec(v)).unwrap();
        secs[i] = outcome.mean_epoch_secs;
        bits.push(outcome.test_transductive.as_ref().unwrap().ap.to_bits());
        for e in &outcome.train.epochs {
            bits.push(e.train.loss.to_bits());
        }
    }
    (secs, bits)
}

#[test]
fn c7_speed_ordering() {
    let _guard = heavy_lock();
    let result = cached(&SPEED, speed_run);
    let ([attn, two_layer, tgat], _) = &result.value;
    let (attn, two_layer, tgat) = (*attn, *two_layer, *tgat);
    if !(attn < two_layer && two_layer < tgat) {
        fail!(
            "speed ordering: per-epoch seconds attn {attn:.2}, 2l {two_layer:.2}, \
             tgat-style {tgat:.2} are not strictly increasing"
        );
    }
    if result.compute_secs >= 1800.0 {
        fail!("speed ordering exceeded 30 min: {:.0} s", result.compute_secs);
    }
    pass(&format!(
        "speed ordering: wall-clock per epoch attn {attn:.2} s < 2l {two_layer:.2} s < \
         tgat-style {tgat:.2} s in {:.0} s total",
        result.compute_secs
    ));
}

// ── 8. Full-scale stretch (not a gate) ──────────────────────────────────

/// Best-effort full-scale run; needs a real interaction export. Point
/// TGN_DATA_CSV at the file and run with --ignored.
#[test]
#[ignore = "stretch goal: supply TGN_DATA_CSV and run explicitly"]
fn c8_full_scale_stretch() {
    let path = match std::env::var("TGN_DATA_CSV") {
        Ok(p) => p,
        Err(_) => {
            println!("[SKIP] full-scale stretch: TGN_DATA_CSV not set");
            return;
        }
    };
    let mut spec = RunSpec::new(
        DataSource::Csv(path.into()),
        VariantConfig::preset("tgn-attn").unwrap(),
    );
    spec.epochs = 10;
    spec.seed = 0;
    let outcome = run(&spec).unwrap();
    let ap = outcome.test_transductive.as_ref().unwrap().ap;
    println!("[INFO] full-scale stretch: transductive test AP {ap:.4} (target >= 0.95)");
    assert!(ap >= 0.95, "stretch target missed: {ap:.4}");
}

// ── 9. Determinism ──────────────────────────────────────────────────────

#[test]
fn c9_determinism() {
    let _guard = heavy_lock();
    let started = std::time::Instant::now();

    let first = cached(&PERIODIC, || run_periodic(7)).value.1.clone();
    let (_, second) = run_periodic(7);
    if first != second {
        fail!("determinism: periodic learning reruns diverged");
    }

    let first = cached(&ABLATION, ablation_mean_aps).value.1.clone();
    let (_, second) = ablation_mean_aps();
    if first != second {
        fail!("determinism: ablation reruns diverged");
    }

    let first = cached(&SPEED, speed_run).value.1.clone();
    let (_, second) = speed_run();
    if first != second {
        fail!("determinism: speed-run metric reruns diverged");
    }

    let secs = started.elapsed().as_secs_f64();
    pass(&format!(
        "determinism: learning, ablation and speed reruns reproduce every metric \
         bit-for-bit under fixed seeds ({secs:.0} s)"
    ));
}
