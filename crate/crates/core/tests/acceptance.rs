//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line.
//! Tests share one lock so their wall-clock budgets are measured in isolation.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use mlbin::cost::{mac_cost, GateCostParams, TABLE_CONFIGS};
use mlbin::data::{synth_dataset, Dataset, SynthSpec};
use mlbin::eval::evaluate_accuracy;
use mlbin::explorer::{explore, tune_config, ExplorationSpec};
use mlbin::kernels::{ml_dot_bitplane, ml_dot_integer, ScaledAccumulator};
use mlbin::lstm::{lstm_forward_fp, ClassifierHead, FeatureSource};
use mlbin::model::{load_model, load_qmodel, save_model, save_qmodel, Model, QuantizedModel};
use mlbin::qlstm::{calibrate_config, lstm_forward_ml, quantize_lstm, FixedPointLstm, GroupConfig, ScalingConfig};
use mlbin::quant::{multi_level_binarize, MultiLevelTensor};
use mlbin::readout::{init_params, split_seed, train_pipeline, PipelineSpec, TrainOutcome};
use mlbin::tensor::{pack_signs, xnor_popcount_dot, DenseTensor};
use mlbin::Workers;
use num::{BigInt, BigRational, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn report(id: u32, name: &str, pass: bool, detail: &str, elapsed: Duration, budget: Duration) -> bool {
    let in_time = elapsed <= budget;
    let ok = pass && in_time;
    println!(
        "criterion {id} [{name}]: {} ({detail}; {:.2}s of {:.0}s budget)",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
    ok
}

fn signed_dot(a: &[f32], b: &[f32]) -> i64 {
    a.iter().zip(b).map(|(&x, &y)| (x * y) as i64).sum()
}

#[test]
fn c1_xnor_dot_equivalence() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut mismatches = 0u64;
    let mut checked = 0u64;
    for len in 1..=8usize {
        let vec_of = |mask: u32| -> Vec<f32> {
            (0..len).map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 }).collect()
        };
        let all: Vec<Vec<f32>> = (0..1u32 << len).map(vec_of).collect();
        let planes: Vec<_> = all.iter().map(|v| pack_signs(v).unwrap()).collect();
        for (a, pa) in all.iter().zip(&planes) {
            for (b, pb) in all.iter().zip(&planes) {
                checked += 1;
                if xnor_popcount_dot(pa, pb).unwrap() != signed_dot(a, b) {
                    mismatches += 1;
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100_000 {
        let len = rng.gen_range(1..=4096usize);
        let a: Vec<f32> = (0..len).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        let b: Vec<f32> = (0..len).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        checked += 1;
        if xnor_popcount_dot(&pack_signs(&a).unwrap(), &pack_signs(&b).unwrap()).unwrap() != signed_dot(&a, &b) {
            mismatches += 1;
        }
    }
    let ok = report(
        1,
        "xnor-popcount dot equals signed dot",
        mismatches == 0,
        &format!("{checked} pairs, {mismatches} mismatches"),
        start.elapsed(),
        Duration::from_secs(10),
    );
    assert!(ok);
}

#[test]
fn c2_residual_bound() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let points = 10_000;
    let mut violations = 0u64;
    let mut checked = 0u64;
    for k in -4..=1i32 {
        let alpha = 2f64.powi(k);
        for n in 1..=8u32 {
            let bound = alpha * 2f64.powi(1 - n as i32);
            for i in 0..points {
                let x = -2.0 * alpha + 4.0 * alpha * i as f64 / (points - 1) as f64;
                let r = multi_level_binarize(x, n, k).unwrap().residual;
                checked += 1;
                if r.abs() > bound {
                    violations += 1;
                }
            }
        }
    }
    let ok = report(
        2,
        "residual bound alpha*2^(1-n)",
        violations == 0,
        &format!("{checked} points, {violations} violations"),
        start.elapsed(),
        Duration::from_secs(5),
    );
    assert!(ok);
}

fn pow2_exact(e: i32) -> BigRational {
    let one = BigInt::from(1);
    if e >= 0 {
        BigRational::from_integer(one << e as usize)
    } else {
        BigRational::new(one.clone(), one << (-e) as usize)
    }
}

/// Exact `Σ x̂·ŵ` rebuilt from the sign planes.
fn exact_dot(x: &MultiLevelTensor, w: &MultiLevelTensor) -> BigRational {
    let recon = |t: &MultiLevelTensor| -> Vec<BigRational> {
        let signs: Vec<Vec<i8>> = t.planes().iter().map(|p| p.unpack()).collect();
        (0..t.len())
            .map(|e| {
                let mut v = BigRational::zero();
                for (i, plane) in signs.iter().enumerate() {
                    v += BigRational::from_integer(BigInt::from(plane[e])) * pow2_exact(t.alpha_exp() - i as i32);
                }
                v
            })
            .collect()
    };
    recon(x).iter().zip(recon(w)).fold(BigRational::zero(), |acc, (a, b)| acc + a * b)
}

fn acc_exact(a: ScaledAccumulator) -> BigRational {
    BigRational::from_integer(BigInt::from(a.acc)) * pow2_exact(a.gamma_exp)
}

fn dual_path_agrees(x: &MultiLevelTensor, w: &MultiLevelTensor) -> bool {
    let b = ml_dot_bitplane(x, w).unwrap();
    let i = ml_dot_integer(x, w).unwrap();
    b == i && acc_exact(b) == exact_dot(x, w)
}

#[test]
fn c3_dual_path_mac() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = 0u64;
    let mut checked = 0u64;
    for _ in 0..1000 {
        let k = rng.gen_range(1..=64usize);
        let tensor = |rng: &mut ChaCha8Rng| {
            let n = rng.gen_range(1..=6u32);
            let e = rng.gen_range(-4..=2i32);
            let a = 2f64.powi(e);
            let v: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.5 * a..2.5 * a)).collect();
            MultiLevelTensor::quantize(vec![k], &v, n, e).unwrap()
        };
        let x = tensor(&mut rng);
        let w = tensor(&mut rng);
        checked += 1;
        if !dual_path_agrees(&x, &w) {
            failures += 1;
        }
    }
    let planes_of = |k: usize, levels: u32, mask: u32| -> Vec<_> {
        (0..levels as usize)
            .map(|l| {
                let s: Vec<f32> =
                    (0..k).map(|e| if mask >> (l * k + e) & 1 == 1 { 1.0 } else { -1.0 }).collect();
                pack_signs(&s).unwrap()
            })
            .collect()
    };
    for k in 1..=3usize {
        for nx in 1..=2u32 {
            for nw in 1..=2u32 {
                for mx in 0..1u32 << (k * nx as usize) {
                    let x = MultiLevelTensor::from_parts(vec![k], 0, planes_of(k, nx, mx)).unwrap();
                    for mw in 0..1u32 << (k * nw as usize) {
                        let w = MultiLevelTensor::from_parts(vec![k], -1, planes_of(k, nw, mw)).unwrap();
                        checked += 1;
                        if !dual_path_agrees(&x, &w) {
                            failures += 1;
                        }
                    }
                }
            }
        }
    }
    let ok = report(
        3,
        "bitplane MAC == integer MAC == exact dot",
        failures == 0,
        &format!("{checked} instances, {failures} disagreements"),
        start.elapsed(),
        Duration::from_secs(30),
    );
    assert!(ok);
}

#[test]
fn c4_quantized_lstm_convergence() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let trials = 50;
    let (mut improved, mut monotone) = (0, 0);
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + t);
        let nx = rng.gen_range(1..=16usize);
        let nh = rng.gen_range(1..=16usize);
        let p = init_params(nx, nh, 400 + t);
        let seq = DenseTensor::matrix(20, nx, (0..20 * nx).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap();
        let fp = lstm_forward_fp(&p, &seq, None).unwrap();
        let gaps: Vec<f64> = (1..=8u32)
            .map(|n| {
                let cfg = calibrate_config(&p, &[seq.data()], n, n).unwrap();
                let ml = lstm_forward_ml(&quantize_lstm(&p, &cfg).unwrap(), &seq, None).unwrap();
                ml.data().iter().zip(fp.data()).map(|(a, b)| (a - b).abs() as f64).fold(0.0, f64::max)
            })
            .collect();
        if gaps[7] < gaps[0] {
            improved += 1;
        }
        if gaps.windows(2).all(|w| w[1] <= w[0]) {
            monotone += 1;
        }
    }
    let ok = report(
        4,
        "quantized LSTM converges with levels",
        improved == trials && monotone >= 45,
        &format!("n=8 beats n=1 in {improved}/{trials}, non-increasing in {monotone}/{trials}"),
        start.elapsed(),
        Duration::from_secs(60),
    );
    assert!(ok);
}

struct Trial {
    outcome: TrainOutcome,
    train: Dataset,
    test: Dataset,
}

fn trial(seed: u64) -> Trial {
    let data = synth_dataset(&SynthSpec { seed, ..SynthSpec::default() }).unwrap();
    let spec = PipelineSpec { seed, ..PipelineSpec::default() };
    let outcome = train_pipeline(None, &data, &spec, Workers::AUTO).unwrap();
    let (train, test) = data.split(split_seed(seed), spec.train_fraction).unwrap();
    Trial { outcome, train, test }
}

impl Trial {
    /// Exponents chosen on the training split only; scored on held-out data.
    fn multi_level(&self, m: u32, n: u32) -> (f64, ScalingConfig) {
        let p = &self.outcome.params;
        let head = &self.outcome.head;
        let (cfg, _) = tune_config(p, head, &self.train, m, n, 1, Workers::AUTO).unwrap();
        let q = quantize_lstm(p, &cfg).unwrap();
        (evaluate_accuracy(&q, head, &self.test, Workers::AUTO).unwrap(), cfg)
    }

    fn fixed_point(&self, m: u32, n: u32) -> f64 {
        let calib: Vec<&[f32]> = (0..16).map(|s| self.train.sample(s)).collect();
        let fx = FixedPointLstm::calibrated(&self.outcome.params, &calib, m, n).unwrap();
        evaluate_accuracy(&fx, &self.outcome.head, &self.test, Workers::AUTO).unwrap()
    }
}

#[test]
fn c5_accuracy_ordering() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let t = trial(0);
    let fp = t.outcome.heldout_accuracy;
    let (ml55, c55) = t.multi_level(5, 5);
    let (ml33, c33) = t.multi_level(3, 3);
    let (ml11, c11) = t.multi_level(1, 1);
    let slack = 0.02;
    let ordered = fp >= ml55 - slack && ml55 >= ml33 - slack && ml33 >= ml11 - slack;
    let close = (fp - ml55).abs() <= slack;
    println!("  ML(5,5) [{c55}]  ML(3,3) [{c33}]  ML(1,1) [{c11}]");
    let ok = report(
        5,
        "FP >= ML(5,5) >= ML(3,3) >= ML(1,1), ML(5,5) near FP",
        ordered && close,
        &format!("FP {fp:.4}, ML(5,5) {ml55:.4}, ML(3,3) {ml33:.4}, ML(1,1) {ml11:.4}"),
        start.elapsed(),
        Duration::from_secs(300),
    );
    assert!(ok);
}

#[test]
fn c6_multi_level_beats_fixed_point() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let pairs = [(3u32, 3u32), (4, 4), (5, 5)];
    let mut wins = [0usize; 3];
    for seed in 0..5u64 {
        let t = trial(seed);
        let mut line = format!("  seed {seed}: FP {:.4}", t.outcome.heldout_accuracy);
        for (i, &(m, n)) in pairs.iter().enumerate() {
            let (ml, _) = t.multi_level(m, n);
            let fx = t.fixed_point(m, n);
            if ml >= fx {
                wins[i] += 1;
            }
            line += &format!(" | ({m},{n}) ML {ml:.4} fixed {fx:.4}");
        }
        println!("{line}");
    }
    let detail = pairs
        .iter()
        .zip(wins)
        .map(|(&(m, n), w)| format!("({m},{n}) {w}/5"))
        .collect::<Vec<_>>()
        .join(", ");
    let ok = report(
        6,
        "multi-level >= fixed point in at least 4 of 5 seeds",
        wins.iter().all(|&w| w >= 4),
        &detail,
        start.elapsed(),
        Duration::from_secs(600),
    );
    assert!(ok);
}

#[test]
fn c7_cost_model_calibration() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let gc = GateCostParams::default();
    let r55 = mac_cost(5, 5, 32, &gc).unwrap();
    let in_brackets = (0.025..=0.040).contains(&r55.normalized_area) && (0.030..=0.045).contains(&r55.normalized_delay);
    // Reference normalized (delay, area) for the six table configurations.
    let reference: [((u32, u32), (f64, f64)); 6] = [
        ((3, 4), (0.026, 0.021)),
        ((3, 5), (0.035, 0.029)),
        ((4, 4), (0.027, 0.022)),
        ((4, 5), (0.035, 0.030)),
        ((5, 4), (0.035, 0.030)),
        ((5, 5), (0.036, 0.032)),
    ];
    assert_eq!(reference.map(|p| p.0), TABLE_CONFIGS);
    let model: Vec<(f64, f64)> = TABLE_CONFIGS
        .iter()
        .map(|&(m, n)| {
            let r = mac_cost(m, n, 32, &gc).unwrap();
            (r.normalized_delay, r.normalized_area)
        })
        .collect();
    let mut inversions = Vec::new();
    let mut constrained = 0;
    for a in 0..6 {
        for b in 0..6 {
            for (metric, pick) in [("delay", 0usize), ("area", 1)] {
                let get = |v: (f64, f64)| if pick == 0 { v.0 } else { v.1 };
                if get(reference[a].1) < get(reference[b].1) {
                    constrained += 1;
                    if get(model[a]) > get(model[b]) {
                        inversions.push(format!("{metric} {:?} vs {:?}", reference[a].0, reference[b].0));
                    }
                }
            }
        }
    }
    let ok = report(
        7,
        "cost model brackets and reference ordering",
        in_brackets && inversions.is_empty(),
        &format!(
            "(5,5) area {:.4} delay {:.4}; {} of {constrained} strict reference pairs inverted{}",
            r55.normalized_area,
            r55.normalized_delay,
            inversions.len(),
            if inversions.is_empty() { String::new() } else { format!(": {}", inversions.join("; ")) }
        ),
        start.elapsed(),
        Duration::from_secs(1),
    );
    assert!(ok);
}

#[test]
fn c8_explorer_matches_brute_force() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let data = synth_dataset(&SynthSpec { seed: 8, samples: 80, timesteps: 40, features: 8, ..SynthSpec::default() })
        .unwrap();
    let out = train_pipeline(None, &data, &PipelineSpec { seed: 8, n_hidden: 8, ..PipelineSpec::default() }, Workers::AUTO)
        .unwrap();
    let xs = [GroupConfig::new(3, -1), GroupConfig::new(3, 0), GroupConfig::new(3, 1)];
    let wf = [GroupConfig::new(3, -3), GroupConfig::new(3, -2), GroupConfig::new(3, -1)];
    let wr = [GroupConfig::new(3, -3), GroupConfig::new(3, -2)];
    let bs = [GroupConfig::new(2, -3), GroupConfig::new(2, -2)];
    let spec = ExplorationSpec::new([xs.to_vec(), wf.to_vec(), wr.to_vec(), bs.to_vec()]).unwrap();

    let mut brute: Vec<(ScalingConfig, f64)> = Vec::new();
    for &x in &xs {
        for &wfwd in &wf {
            for &wrec in &wr {
                for &b in &bs {
                    let cfg = ScalingConfig { x, wfwd, wrec, b };
                    let q = quantize_lstm(&out.params, &cfg).unwrap();
                    brute.push((cfg, evaluate_accuracy(&q, &out.head, &data, Workers::SEQUENTIAL).unwrap()));
                }
            }
        }
    }
    let top = brute.iter().map(|e| e.1).fold(f64::MIN, f64::max);
    let brute_best = *brute.iter().find(|e| e.1 == top).unwrap();

    let one = explore(&out.params, &out.head, &data, &spec, Workers(1)).unwrap();
    let eight = explore(&out.params, &out.head, &data, &spec, Workers(8)).unwrap();
    let pass = one.evaluations == 36
        && one.best == brute_best
        && one.evaluated == brute
        && one.same_outcome(&eight);
    let ok = report(
        8,
        "explorer argmax equals brute force at 1 and 8 workers",
        pass,
        &format!("36 configs, best {} at {:.4}", one.best.0, one.best.1),
        start.elapsed(),
        Duration::from_secs(300),
    );
    assert!(ok);
}

fn random_head(rng: &mut ChaCha8Rng, nh: usize) -> ClassifierHead {
    let c = rng.gen_range(1..=4usize);
    let w = DenseTensor::matrix(c, nh, (0..c * nh).map(|_| rng.gen_range(-2.0f32..2.0)).collect()).unwrap();
    let b = DenseTensor::vector((0..c).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap();
    let src = if rng.gen() { FeatureSource::Final } else { FeatureSource::TimeMean };
    ClassifierHead::new(w, b, src).unwrap()
}

fn dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn c9_serialization_round_trips() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut models, mut qmodels, mut datasets) = (0, 0, 0);
    for i in 0..100 {
        let nx = rng.gen_range(1..=12usize);
        let nh = rng.gen_range(1..=12usize);
        let params = init_params(nx, nh, rng.gen());
        let head = if rng.gen_bool(0.7) { Some(random_head(&mut rng, nh)) } else { None };

        let model = Model { params: params.clone(), head: head.clone() };
        let (a, b) = (tmp.path().join(format!("m{i}a")), tmp.path().join(format!("m{i}b")));
        save_model(&a, &model).unwrap();
        let loaded = load_model(&a).unwrap();
        save_model(&b, &loaded).unwrap();
        if loaded == model && dir_bytes(&a) == dir_bytes(&b) {
            models += 1;
        }

        let g = |rng: &mut ChaCha8Rng| GroupConfig::new(rng.gen_range(1..=8), rng.gen_range(-6..=2));
        let cfg = ScalingConfig { x: g(&mut rng), wfwd: g(&mut rng), wrec: g(&mut rng), b: g(&mut rng) };
        let qmodel = QuantizedModel { params: quantize_lstm(&params, &cfg).unwrap(), head };
        let (a, b) = (tmp.path().join(format!("q{i}a")), tmp.path().join(format!("q{i}b")));
        save_qmodel(&a, &qmodel).unwrap();
        let loaded = load_qmodel(&a).unwrap();
        save_qmodel(&b, &loaded).unwrap();
        if loaded == qmodel && dir_bytes(&a) == dir_bytes(&b) {
            qmodels += 1;
        }

        let (s, t, f) = (rng.gen_range(1..=20), rng.gen_range(1..=30), rng.gen_range(1..=10));
        let values: Vec<f32> = (0..s * t * f).map(|_| rng.gen_range(-5.0f32..5.0)).collect();
        let d = if rng.gen_bool(0.8) {
            let c = rng.gen_range(1..=5usize);
            Dataset::new(s, t, f, c, values, Some((0..s).map(|_| rng.gen_range(0..c as u32)).collect()))
        } else {
            Dataset::new(s, t, f, 0, values, None)
        }
        .unwrap();
        let path = tmp.path().join(format!("d{i}.bin"));
        d.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let back = mlbin::data::load_dataset(&path).unwrap();
        if back == d && back.to_bytes() == bytes {
            datasets += 1;
        }
    }
    let ok = report(
        9,
        "byte-identical round trips",
        models == 100 && qmodels == 100 && datasets == 100,
        &format!("model {models}/100, qmodel {qmodels}/100, dataset {datasets}/100"),
        start.elapsed(),
        Duration::from_secs(10),
    );
    assert!(ok);
}
