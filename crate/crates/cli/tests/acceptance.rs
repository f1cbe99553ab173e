//! End-to-end acceptance checks. Each test prints one line
//! `ACCEPT <PASS|FAIL|INFO> <criterion>: <detail>` to stderr (bypassing the
//! test harness capture) and then asserts its criterion.
//!
//! The trained model is shared between tests and built once, from the
//! default dataset (seed 7) with the default recipe.

use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use teletact::dataset::{decode_dataset, encode_dataset, gen_dataset, DatasetRecord, Split};
use teletact::netlink::bench::run_bench;
use teletact::netlink::episode::{run_trials, AgentKind};
use teletact::netlink::wire::{decode_msg, encode_msg, Command as WireCommand, Electrode, GraspResult, Heartbeat, SensorPair, WireMessage};
use teletact::resample::bicubic_downsize;
use teletact::sim::ContactParams;
use teletact::tactile::{FeedbackMode, ForceGrid, TiltClass};
use teletact::tiltnet::{batch_cross_entropy, fit_dataset, Mode, Model, ModelSpec, Tensor, TrainConfig, TrainReport};

const DATA_SEED: u64 = 7;
const TRAIN_SEED: u64 = 7;

const BICUBIC_MAX_ABS: f64 = 1e-9;
const BICUBIC_CONST_ABS: f64 = 1e-12;
const GRAD_H: f64 = 1e-5;
const GRAD_MAX_REL: f64 = 1e-4;
/// Denominator floor for the relative error, below which differences are
/// judged against this absolute scale.
const GRAD_REL_FLOOR: f64 = 1e-6;
const MIN_TEST_ACC: f64 = 0.90;
const CODEC_CASES: usize = 10_000;
const TICK_BUDGET_US: f64 = 16_670.0;
const EPISODES_PER_MODE: usize = 64;
const MIN_PATTERN_SUCCESS: f64 = 0.90;
const MAX_BLIND_SUCCESS: f64 = 0.30;

fn report(pass: Option<bool>, name: &str, detail: &str) {
    let tag = match pass {
        Some(true) => "PASS",
        Some(false) => "FAIL",
        None => "INFO",
    };
    let _ = writeln!(std::io::stderr(), "ACCEPT {tag} {name}: {detail}");
}

struct Trained {
    model: Model,
    report: TrainReport,
    split: Split,
}

fn default_records() -> Vec<DatasetRecord> {
    let p = ContactParams {
        rng_seed: DATA_SEED,
        ..ContactParams::default()
    };
    // Through the file encoding, exactly as the command line sees it.
    decode_dataset(&encode_dataset(&gen_dataset(&p, 32).unwrap())).unwrap()
}

fn trained() -> &'static Trained {
    static T: OnceLock<Trained> = OnceLock::new();
    T.get_or_init(|| {
        let records = default_records();
        let cfg = TrainConfig {
            seed: TRAIN_SEED,
            ..TrainConfig::default()
        };
        let (model, report, split) = fit_dataset(&records, ModelSpec::default(), &cfg).unwrap();
        Trained { model, report, split }
    })
}

// ---------------------------------------------------------------- bicubic

fn catmull_rom(p: [f64; 4], t: f64) -> f64 {
    let [p0, p1, p2, p3] = p;
    0.5 * (2.0 * p1
        + (-p0 + p2) * t
        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t
        + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t * t * t)
}

fn interp(line: &dyn Fn(i64) -> f64, pos: f64) -> f64 {
    let i = pos.floor() as i64;
    catmull_rom([line(i - 1), line(i), line(i + 1), line(i + 2)], pos - i as f64)
}

fn oracle_downsize(g: &ForceGrid) -> [[f64; 4]; 5] {
    let at = |r: i64, c: i64| g[r.clamp(0, 9) as usize][c.clamp(0, 9) as usize];
    let mut out = [[0.0; 4]; 5];
    for (i, row) in out.iter_mut().enumerate() {
        let y = (i as f64 + 0.5) * 2.0 - 0.5;
        for (j, v) in row.iter_mut().enumerate() {
            let x = (j as f64 + 0.5) * 2.5 - 0.5;
            *v = interp(&|r| interp(&|c| at(r, c), x), y).clamp(0.0, 9.0);
        }
    }
    out
}

#[test]
fn bicubic_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mut g = [[0.0; 10]; 10];
        for v in g.iter_mut().flatten() {
            *v = rng.random_range(0.0..=9.0);
        }
        let want = oracle_downsize(&g);
        let got = bicubic_downsize(&g);
        for i in 0..5 {
            for j in 0..4 {
                worst = worst.max((got.values[i][j] - want[i][j]).abs());
            }
        }
    }
    let mut worst_const = 0.0f64;
    for k in 0..=90 {
        let c = f64::from(k) / 10.0;
        for v in bicubic_downsize(&[[c; 10]; 10]).values.iter().flatten() {
            worst_const = worst_const.max((v - c).abs());
        }
    }
    let pass = worst <= BICUBIC_MAX_ABS && worst_const <= BICUBIC_CONST_ABS;
    report(
        Some(pass),
        "bicubic oracle equivalence",
        &format!("100 random frames max abs err {worst:.2e} (<= {BICUBIC_MAX_ABS:e}); constants {worst_const:.2e} (<= {BICUBIC_CONST_ABS:e})"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- gradients

fn loss_of(model: &Model, x: &Tensor, labels: &[usize]) -> f64 {
    let (logits, _) = model.forward(x, Mode::Train).unwrap();
    batch_cross_entropy(&logits, labels).0
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(GRAD_REL_FLOOR)
}

/// Analytic gradients of the full network (train-mode batchnorm) against
/// central differences, for a sample of entries in every parameter tensor
/// and in the input.
fn gradient_draw(seed: u64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::init(ModelSpec::default(), seed).unwrap();
    // Move every tensor off its initial value so no path is trivially zero.
    for p in model.params_mut() {
        for v in p.iter_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let n = 4;
    let x = Tensor::from_vec(&[n, 2, 10, 10], (0..n * 200).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..9)).collect();

    let (logits, tape) = model.forward(&x, Mode::Train).unwrap();
    let (_, g) = batch_cross_entropy(&logits, &labels);
    let (grads, gx) = model.backward(&tape, &g).unwrap();

    let mut worst = 0.0f64;
    let mut checked = 0;
    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    for (t, &len) in sizes.iter().enumerate() {
        let picks: Vec<usize> = (0..12.min(len)).map(|_| rng.random_range(0..len)).collect();
        for i in picks {
            let orig = model.params()[t][i];
            model.params_mut()[t][i] = orig + GRAD_H;
            let up = loss_of(&model, &x, &labels);
            model.params_mut()[t][i] = orig - GRAD_H;
            let down = loss_of(&model, &x, &labels);
            model.params_mut()[t][i] = orig;
            let num = (up - down) / (2.0 * GRAD_H);
            worst = worst.max(rel_err(grads[t][i], num));
            checked += 1;
        }
    }
    for _ in 0..12 {
        let i = rng.random_range(0..x.len());
        let mut xp = x.clone();
        xp.data_mut()[i] += GRAD_H;
        let up = loss_of(&model, &xp, &labels);
        xp.data_mut()[i] -= 2.0 * GRAD_H;
        let down = loss_of(&model, &xp, &labels);
        let num = (up - down) / (2.0 * GRAD_H);
        worst = worst.max(rel_err(gx.data()[i], num));
        checked += 1;
    }
    (worst, checked)
}

#[test]
fn gradient_correctness() {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for seed in [1, 2, 3] {
        let (w, c) = gradient_draw(seed);
        worst = worst.max(w);
        checked += c;
    }
    let pass = worst < GRAD_MAX_REL;
    report(
        Some(pass),
        "gradient correctness",
        &format!("3 draws, {checked} entries, h={GRAD_H:e}: max rel err {worst:.2e} (< {GRAD_MAX_REL:e})"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- training

#[test]
fn training_result() {
    let t = trained();
    let test = t.report.test.as_ref().unwrap();
    // Accuracy when +90 and -90 are counted as one class: the two render the
    // same contact line, so this is the ceiling-free view of the same run.
    let (p90, m90) = (
        TiltClass::from_degrees(90).unwrap().index(),
        TiltClass::from_degrees(-90).unwrap().index(),
    );
    let merged = test.confusion[p90][m90] + test.confusion[m90][p90];
    let merged_acc = (test.accuracy * test.count as f64 + merged as f64) / test.count as f64;
    let pass = test.accuracy >= MIN_TEST_ACC;
    report(
        Some(pass),
        "training result",
        &format!(
            "{} records, split {}/{}/{}, {} epochs: test acc {:.4} (>= {MIN_TEST_ACC}); best val acc {:.4} at epoch {}; with +-90 merged {:.4}",
            t.split.train.len() + t.split.val.len() + t.split.test.len(),
            t.split.train.len(),
            t.split.val.len(),
            t.split.test.len(),
            t.report.epochs.len(),
            test.accuracy,
            t.report.best_val_acc,
            t.report.best_epoch,
            merged_acc
        ),
    );
    assert!(pass, "test accuracy {:.4} below {MIN_TEST_ACC}", test.accuracy);
}

#[test]
fn confusion_structure_diagnostic() {
    let test = trained().report.test.as_ref().unwrap();
    let (p90, m90) = (
        TiltClass::from_degrees(90).unwrap().index(),
        TiltClass::from_degrees(-90).unwrap().index(),
    );
    let mut errors = 0;
    let mut opposite = 0;
    for (from, to) in [(p90, m90), (m90, p90)] {
        let row = &test.confusion[from];
        errors += row.iter().sum::<usize>() - row[from];
        opposite += row[to];
    }
    let share = if errors == 0 { 1.0 } else { opposite as f64 / errors as f64 };
    report(
        None,
        "confusion structure (non-gating)",
        &format!("{opposite} of {errors} errors on +-90 land on the opposite sign ({:.1}%)", 100.0 * share),
    );
}

// ---------------------------------------------------------------- codec

fn random_message(rng: &mut ChaCha8Rng) -> WireMessage {
    let seq = rng.random();
    let t_us = rng.random();
    match rng.random_range(0..5) {
        0 => {
            let mut left = [0u8; 100];
            let mut right = [0u8; 100];
            rng.fill(&mut left[..]);
            rng.fill(&mut right[..]);
            WireMessage::SensorPair(SensorPair { seq, t_us, gripper_pos: rng.random_range(0..=30), left, right })
        }
        1 => WireMessage::Command(WireCommand {
            seq,
            t_us,
            target_tilt_deg: rng.random(),
            gripper_pos: rng.random_range(0..=30),
            mode: FeedbackMode::ALL[rng.random_range(0..3)],
            grasp: rng.random(),
        }),
        2 => {
            let mut left = [0u8; 20];
            let mut right = [0u8; 20];
            rng.fill(&mut left[..]);
            rng.fill(&mut right[..]);
            let predicted = if rng.random_bool(0.1) { 255 } else { rng.random_range(0..9) };
            WireMessage::Electrode(Electrode { seq, t_us, left, right, predicted })
        }
        3 => WireMessage::Heartbeat(Heartbeat { seq, t_us }),
        _ => WireMessage::GraspResult(GraspResult {
            seq,
            t_us,
            success: rng.random(),
            relative_centideg: rng.random(),
            ticks_used: rng.random(),
        }),
    }
}

#[test]
fn codec_roundtrip_and_rejection() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;
    let mut malformed = 0;
    let mut accepted_malformed = 0;
    for _ in 0..CODEC_CASES {
        let m = random_message(&mut rng);
        let f = encode_msg(&m);
        if decode_msg(&f).ok() != Some(m) {
            mismatches += 1;
        }
        // Every strict prefix, a trailing byte and a corrupted header.
        let cut = rng.random_range(0..f.len());
        let mut long = f.clone();
        long.push(rng.random());
        let mut bad_len = f.clone();
        bad_len[0] = bad_len[0].wrapping_add(rng.random_range(1..=255));
        let mut bad_tag = f.clone();
        bad_tag[4] = [0u8, 6, 7, 99, 255][rng.random_range(0..5)];
        for bad in [&f[..cut], &long[..], &bad_len[..], &bad_tag[..]] {
            malformed += 1;
            if decode_msg(bad).is_ok() {
                accepted_malformed += 1;
            }
        }
    }
    let pass = mismatches == 0 && accepted_malformed == 0;
    report(
        Some(pass),
        "codec",
        &format!(
            "{CODEC_CASES} random messages, {mismatches} round-trip mismatches; {malformed} malformed frames, {accepted_malformed} accepted"
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- tick budget

#[test]
fn tick_budget() {
    let t = trained();
    let r = run_bench(FeedbackMode::CnnPattern, Some(&t.model), 1000, false, 0).unwrap();
    let p99 = r.stages.total.p99_us;
    let pass = p99 < TICK_BUDGET_US;
    report(
        Some(pass),
        "tick budget",
        &format!(
            "1000 CnnPattern ticks: p50 {:.1} us, p99 {p99:.1} us, max {:.1} us (p99 < {TICK_BUDGET_US} us)",
            r.stages.total.p50_us, r.stages.total.max_us
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- closed loop

#[test]
fn closed_loop_mode_comparison() {
    let t = trained();
    let contact = ContactParams::default();
    let rate = |kind, mode| {
        run_trials(kind, mode, Some(&t.model), &contact, EPISODES_PER_MODE, 2024)
            .unwrap()
            .success_rate
    };
    let pattern = rate(AgentKind::Noisy, FeedbackMode::CnnPattern);
    let downsized = rate(AgentKind::Noisy, FeedbackMode::Downsized);
    let none = rate(AgentKind::Noisy, FeedbackMode::None);
    let blind = rate(AgentKind::Blind, FeedbackMode::None);
    let pass = pattern >= MIN_PATTERN_SUCCESS && blind <= MAX_BLIND_SUCCESS && pattern > downsized && downsized > none;
    report(
        Some(pass),
        "closed-loop mode comparison",
        &format!(
            "{EPISODES_PER_MODE} episodes/mode, noisy agent: pattern {pattern:.4} (>= {MIN_PATTERN_SUCCESS}), downsized {downsized:.4}, none {none:.4}; blind agent in none {blind:.4} (<= {MAX_BLIND_SUCCESS})"
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- determinism

fn teletact(args: &[&str], dir: &Path) {
    let out = Command::new(env!("CARGO_BIN_EXE_teletact"))
        .args(args)
        .current_dir(dir)
        .env("TILTXTER_LOG", "error")
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn determinism() {
    let dir = std::env::temp_dir().join(format!("teletact-determinism-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    for run in ["a", "b"] {
        let data = format!("{run}.txds");
        let ckpt = format!("{run}.txmd");
        teletact(&["gen-dataset", "--out", &data, "--seed", "7", "--reps", "2"], &dir);
        teletact(&["train", "--data", &data, "--out", &ckpt, "--epochs", "3", "--seed", "7"], &dir);
    }
    let same = |a: &str, b: &str| std::fs::read(dir.join(a)).unwrap() == std::fs::read(dir.join(b)).unwrap();
    let data_same = same("a.txds", "b.txds");
    let ckpt_same = same("a.txmd", "b.txmd");
    let _ = std::fs::remove_dir_all(&dir);
    let pass = data_same && ckpt_same;
    report(
        Some(pass),
        "determinism",
        &format!("two CLI runs (reps 2, 3 epochs): dataset identical {data_same}, checkpoint identical {ckpt_same}"),
    );
    assert!(pass);
}
