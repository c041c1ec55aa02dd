//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Every expected value is produced by a straight-line reference computed
//! here, not by the library under test.

use std::f64::consts::PI;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use graft::harness::{run_comparison, BenchConfig};
use graft::{store, Error};
use graft_core::{
    analyze, dare_merge, fuse_checkpoints, fuse_lora, fuse_matrix, fuse_matrix_blockwise,
    fuse_matrix_detailed, global_gate, task_arithmetic, ties_merge, tune_gating_net,
    weight_entropy, ActivationTrace, Checkpoint, DareConfig, GateConfig, GatingNet, Granularity,
    Matrix, TensorRole, TiesConfig,
};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Result<String, String>;
type Designated = fn(&Error) -> bool;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * r.random::<f64>()
}

fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| uniform(r, -scale, scale) as f32)
        .collect();
    Matrix::new(rows, cols, data).unwrap()
}

fn random_shape(r: &mut ChaCha8Rng, max: usize) -> (usize, usize) {
    (r.random_range(1..=max), r.random_range(1..=max))
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// Reference implementations
// ---------------------------------------------------------------------------

fn ref_entropy(values: &[f32], n: usize) -> f64 {
    let lo = values.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    if lo == hi {
        return 0.0;
    }
    let mut counts = vec![0u64; n];
    for &v in values {
        let k = (((v as f64 - lo) / (hi - lo)) * n as f64).floor() as usize;
        counts[k.min(n - 1)] += 1;
    }
    let total = values.len() as f64;
    let mut h = 0.0;
    for c in counts {
        if c > 0 {
            let p = c as f64 / total;
            h -= p * p.ln();
        }
    }
    h
}

/// Channel-granularity dual-gate fusion written out step by step.
fn ref_fuse(
    b: &Matrix,
    g: &Matrix,
    a: f64,
    c: f64,
    bins: usize,
    alpha: f64,
    beta: f64,
) -> Vec<f64> {
    let (m, n) = b.shape();
    let hb = ref_entropy(b.data(), bins);
    let hg = ref_entropy(g.data(), bins);
    let w_global = a / PI * (c * (hb - hg)).atan() + 0.5;
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let mut d = 0.0;
        for j in 0..n {
            d += (b.get(i, j) as f64 - g.get(i, j) as f64).abs();
        }
        let w_local = 1.0 / (1.0 + (-(alpha * d + beta)).exp());
        let tb = w_global * (1.0 - (-w_global * w_local).exp());
        let tg = (1.0 - w_global) * (1.0 - (-(1.0 - w_global) * (1.0 - w_local)).exp());
        let wb = tb.exp() / (tb.exp() + tg.exp());
        let wg = tg.exp() / (tb.exp() + tg.exp());
        for j in 0..n {
            out.push(wb * b.get(i, j) as f64 + wg * g.get(i, j) as f64);
        }
    }
    out
}

struct RefStats {
    mu: f64,
    s: f64,
    v: f64,
}

fn ref_compat(modules: &[Vec<Vec<f32>>], eps: f64) -> f64 {
    let stats: Vec<RefStats> = modules
        .iter()
        .map(|samples| {
            let k = samples.len() as f64;
            let (mut mu, mut s, mut v) = (0.0, 0.0, 0.0);
            for a in samples {
                let dim = a.len() as f64;
                let l1: f64 = a.iter().map(|&x| (x as f64).abs()).sum();
                let small = a.iter().filter(|&&x| (x as f64).abs() < eps).count() as f64;
                let mean: f64 = a.iter().map(|&x| x as f64).sum::<f64>() / dim;
                let var: f64 = a.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / dim;
                mu += l1 / dim;
                s += small / dim;
                v += var;
            }
            RefStats {
                mu: mu / k,
                s: s / k,
                v: v / k,
            }
        })
        .collect();
    let norm = |get: fn(&RefStats) -> f64, x: f64| {
        let lo = stats.iter().map(get).fold(f64::INFINITY, f64::min);
        let hi = stats.iter().map(get).fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            (x - lo) / (hi - lo)
        } else {
            0.0
        }
    };
    let total: f64 = stats
        .iter()
        .map(|st| {
            let mu = norm(|s| s.mu, st.mu);
            let s = norm(|s| s.s, st.s);
            let v = norm(|s| s.v, st.v);
            mu * (1.0 - s) * v.sqrt()
        })
        .sum();
    total / stats.len() as f64
}

fn single(name: &str, m: Matrix) -> Checkpoint {
    Checkpoint::new().with(name, m, TensorRole::Other).unwrap()
}

fn random_checkpoint(r: &mut ChaCha8Rng, tensors: usize, max: usize) -> Checkpoint {
    let mut c = Checkpoint::new();
    for t in 0..tensors {
        let (rows, cols) = random_shape(r, max);
        let role = TensorRole::ALL[r.random_range(0..TensorRole::ALL.len())];
        let role = if role.is_adapter() {
            TensorRole::Other
        } else {
            role
        };
        c.insert(
            format!("layer{t}.w"),
            random_matrix(r, rows, cols, 2.0),
            role,
        )
        .unwrap();
    }
    c
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

fn fusion_oracle() -> Result<String, String> {
    let start = Instant::now();
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for pair in 0..1000 {
        let (m, n) = random_shape(&mut r, 5);
        let b = random_matrix(&mut r, m, n, 2.0);
        let g = random_matrix(&mut r, m, n, 2.0);
        let (alpha, beta) = if pair % 2 == 0 {
            (1.0, 0.0)
        } else {
            (uniform(&mut r, -2.0, 2.0), uniform(&mut r, -2.0, 2.0))
        };
        let a = uniform(&mut r, 0.05, 1.0);
        let c = uniform(&mut r, 1.0, 1000.0);
        let bins = r.random_range(2..=16);
        let cfg = GateConfig {
            a,
            c,
            bins,
            gate_net: GatingNet::new(alpha, beta),
            ..GateConfig::default()
        };
        let fused = fuse_matrix(&b, &g, &cfg).map_err(|e| e.to_string())?;
        let expected = ref_fuse(&b, &g, a, c, bins, alpha, beta);
        for (k, (&got, &want)) in fused.data().iter().zip(&expected).enumerate() {
            let err = (got as f64 - want).abs();
            worst = worst.max(err);
            ensure(err <= 1e-6, || {
                format!("pair {pair} element {k}: {got} vs {want}")
            })?;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(5), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "1000 pairs, max error {worst:.2e}, {:.2} s",
        elapsed.as_secs_f64()
    ))
}

fn idempotence() -> Result<String, String> {
    let mut r = rng(2);
    for i in 0..100 {
        let c = random_checkpoint(&mut r, 4, 9);
        for granularity in [
            Granularity::Channel,
            Granularity::Block(r.random_range(1..=4)),
        ] {
            let cfg = GateConfig {
                granularity,
                a: uniform(&mut r, 0.05, 1.0),
                gate_net: GatingNet::new(uniform(&mut r, -3.0, 3.0), uniform(&mut r, -3.0, 3.0)),
                ..GateConfig::default()
            };
            let f = fuse_checkpoints(&c, &c, &cfg).map_err(|e| e.to_string())?;
            ensure(f.tensors_bit_eq(&c), || {
                format!("checkpoint {i}, {granularity:?}")
            })?;
        }
        let rank = r.random_range(1..=4);
        let (m, n) = random_shape(&mut r, 8);
        let lora = Checkpoint::new()
            .with(
                "blk.lora_a",
                random_matrix(&mut r, rank, n, 1.0),
                TensorRole::LoraA,
            )
            .unwrap()
            .with(
                "blk.lora_b",
                random_matrix(&mut r, m, rank, 1.0),
                TensorRole::LoraB,
            )
            .unwrap()
            .with("head", random_matrix(&mut r, 2, 2, 1.0), TensorRole::Mlp)
            .unwrap();
        let f = fuse_lora(&lora, &lora, &GateConfig::default()).map_err(|e| e.to_string())?;
        ensure(f.tensors_bit_eq(&lora), || format!("lora checkpoint {i}"))?;
    }
    Ok("100 checkpoints: channel, block and lora bitwise equal".into())
}

fn convexity() -> Result<String, String> {
    let mut r = rng(3);
    let mut elements = 0usize;
    let mut units = 0usize;
    let mut worst = 0.0f64;
    while elements < 10_000 {
        let (m, n) = random_shape(&mut r, 12);
        let b = random_matrix(&mut r, m, n, 3.0);
        let g = random_matrix(&mut r, m, n, 3.0);
        let granularity = if r.random::<bool>() {
            Granularity::Channel
        } else {
            Granularity::Block(r.random_range(1..=5))
        };
        let cfg = GateConfig {
            granularity,
            a: uniform(&mut r, 0.05, 1.0),
            c: uniform(&mut r, 1.0, 1000.0),
            gate_net: GatingNet::new(uniform(&mut r, -3.0, 3.0), uniform(&mut r, -3.0, 3.0)),
            ..GateConfig::default()
        };
        let f = fuse_matrix_detailed(&b, &g, &cfg).map_err(|e| e.to_string())?;
        for ((&x, &y), &z) in b.data().iter().zip(g.data()).zip(f.fused.data()) {
            ensure(x.min(y) <= z && z <= x.max(y), || {
                format!("{z} outside [{x}, {y}]")
            })?;
        }
        for u in 0..f.weights.len() {
            let (wb, wg) = f.weights.pair(u);
            worst = worst.max((wb + wg - 1.0).abs());
            ensure(wb > 0.0 && wb < 1.0 && wg > 0.0 && wg < 1.0, || {
                format!("weights {wb}, {wg}")
            })?;
            ensure((wb + wg - 1.0).abs() <= 1e-7, || {
                format!("w_b + w_g = {}", wb + wg)
            })?;
        }
        elements += m * n;
        units += f.weights.len();
    }
    Ok(format!(
        "{elements} elements, {units} units, max |w_b+w_g-1| {worst:.1e}"
    ))
}

fn global_gate_contract() -> Result<String, String> {
    for h in [0.0, 0.37, 1.5, 2.25] {
        let w = global_gate(h, h, 0.4, 500.0);
        ensure(w == 0.5, || format!("equal entropies {h} gave {w}"))?;
    }
    let w = global_gate(1.0 / 500.0, 0.0, 0.4, 500.0);
    ensure((w - 0.6).abs() <= 1e-9, || {
        format!("1/500 difference gave {w}")
    })?;
    let cfg = GateConfig::default();
    ensure(
        (cfg.global_weight(1.0 / 500.0, 0.0) - 0.6).abs() <= 1e-9,
        || "config path".into(),
    )?;

    let mut r = rng(4);
    let mut diffs: Vec<f64> = (0..1000).map(|_| uniform(&mut r, -0.05, 0.05)).collect();
    diffs.sort_by(f64::total_cmp);
    let values: Vec<f64> = diffs
        .iter()
        .map(|&d| global_gate(1.0 + d, 1.0, 0.4, 500.0))
        .collect();
    for (i, pair) in values.windows(2).enumerate() {
        ensure(pair[0] <= pair[1], || format!("not monotone at sample {i}"))?;
    }
    for &v in &values {
        ensure(v > 0.3 && v < 0.7, || format!("{v} outside (0.3, 0.7)"))?;
    }
    Ok(format!("w(1/500) = {w:.12}, 1000 sorted samples monotone"))
}

fn entropy_bounds() -> Result<String, String> {
    let mut r = rng(5);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let (m, n) = random_shape(&mut r, 10);
        let scale = uniform(&mut r, 0.01, 10.0);
        let mut w = random_matrix(&mut r, m, n, scale);
        if i % 5 == 0 {
            // Few distinct values, so some bins are empty and others are full.
            let data = w.data().iter().map(|v| v.round()).collect();
            w = Matrix::new(m, n, data).unwrap();
        }
        for bins in [2usize, 10, 64] {
            let h = weight_entropy(&w, bins).map_err(|e| e.to_string())?;
            let expected = ref_entropy(w.data(), bins);
            worst = worst.max((h - expected).abs());
            ensure(h >= -1e-12 && h <= (bins as f64).ln() + 1e-12, || {
                format!("H = {h} for n = {bins}")
            })?;
            ensure((h - expected).abs() <= 1e-12, || {
                format!("H = {h}, reference {expected}")
            })?;
        }
    }
    for v in [0.0f32, -3.5, 7.25] {
        let c = Matrix::filled(4, 3, v).unwrap();
        for bins in [2usize, 10, 64] {
            let h = weight_entropy(&c, bins).map_err(|e| e.to_string())?;
            ensure(h == 0.0, || format!("constant {v} gave {h}"))?;
        }
    }
    Ok(format!(
        "1000 matrices x 3 bin counts, max deviation from reference {worst:.1e}"
    ))
}

fn baseline_oracles() -> Result<String, String> {
    let row = |a: f32, b: f32| single("w", Matrix::new(1, 2, vec![a, b]).unwrap());
    let ties = ties_merge(
        &row(0.0, 0.0),
        &[row(0.5, -0.2), row(0.3, 0.4)],
        &TiesConfig { trim_fraction: 1.0 },
        1.0,
    )
    .map_err(|e| e.to_string())?;
    let got = ties.matrix("w").unwrap().data().to_vec();
    ensure(got == [0.4f32, 0.4], || {
        format!("TIES example gave {got:?}")
    })?;

    let mut r = rng(6);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (m, n) = random_shape(&mut r, 6);
        let init = random_matrix(&mut r, m, n, 0.25);
        let experts: Vec<Checkpoint> = (0..r.random_range(1..=3))
            .map(|_| {
                let d = random_matrix(&mut r, m, n, 0.1);
                let data = init
                    .data()
                    .iter()
                    .zip(d.data())
                    .map(|(a, b)| a + b)
                    .collect();
                single("w", Matrix::new(m, n, data).unwrap())
            })
            .collect();
        let init_c = single("w", init.clone());
        let (l1, l2) = (uniform(&mut r, 0.0, 1.0), uniform(&mut r, 0.0, 1.0));
        let ta = |l: f64| task_arithmetic(&init_c, &experts, l).map_err(|e| e.to_string());
        let (r1, r2, r12) = (ta(l1)?, ta(l2)?, ta(l1 + l2)?);
        for k in 0..m * n {
            let lhs = r1.matrix("w").unwrap().data()[k] as f64
                + r2.matrix("w").unwrap().data()[k] as f64
                - init.data()[k] as f64;
            let rhs = r12.matrix("w").unwrap().data()[k] as f64;
            worst = worst.max((lhs - rhs).abs());
            ensure((lhs - rhs).abs() <= 1e-7, || {
                format!("linearity: {lhs} vs {rhs}")
            })?;
        }
        let dare = dare_merge(
            &init_c,
            &experts,
            &DareConfig {
                drop_p: 0.0,
                seed: r.random(),
            },
            l1,
        )
        .map_err(|e| e.to_string())?;
        ensure(dare.tensors_bit_eq(&r1), || {
            "DARE p=0 differs from task arithmetic".into()
        })?;
    }

    let n = 100_000usize;
    let p = 0.9;
    let init = single("w", Matrix::zeros(1, n).unwrap());
    let ones = single("w", Matrix::filled(1, n, 1.0).unwrap());
    let out = dare_merge(
        &init,
        &[ones],
        &DareConfig {
            drop_p: p,
            seed: 2024,
        },
        1.0,
    )
    .map_err(|e| e.to_string())?;
    let mean = out
        .matrix("w")
        .unwrap()
        .data()
        .iter()
        .map(|&v| v as f64)
        .sum::<f64>()
        / n as f64;
    let se = (p / (1.0 - p)).sqrt() / (n as f64).sqrt();
    ensure((mean - 1.0).abs() <= 3.0 * se, || {
        format!("DARE mean {mean}, 3 SE = {}", 3.0 * se)
    })?;
    Ok(format!(
        "TIES [0.4, 0.4]; linearity max error {worst:.1e}; DARE mean {mean:.5} (3 SE = {:.4})",
        3.0 * se
    ))
}

fn compatibility_pipeline() -> Result<String, String> {
    let mut r = rng(7);
    let mut worst = 0.0f64;
    for t in 0..100 {
        let modules = r.random_range(1..=3);
        let k = r.random_range(1..=4);
        let eps = if t % 3 == 0 { 0.3 } else { 1e-6 };
        let raw: Vec<(usize, Vec<Vec<f32>>)> = (0..modules)
            .map(|_| {
                let (b, d) = random_shape(&mut r, 4);
                let samples = (0..k)
                    .map(|_| {
                        (0..b * d)
                            .map(|_| {
                                if r.random::<f64>() < 0.3 {
                                    0.0
                                } else {
                                    uniform(&mut r, -2.0, 2.0) as f32
                                }
                            })
                            .collect()
                    })
                    .collect();
                (b, samples)
            })
            .collect();
        let trace_modules = raw
            .iter()
            .enumerate()
            .map(|(i, (b, samples))| {
                let mats = samples
                    .iter()
                    .map(|s: &Vec<f32>| Matrix::new(*b, s.len() / b, s.clone()).unwrap())
                    .collect();
                (format!("m{i}"), mats)
            })
            .collect();
        let trace = ActivationTrace::new(trace_modules, eps).map_err(|e| e.to_string())?;
        let report = analyze(&trace, 0.25).map_err(|e| e.to_string())?;
        let samples: Vec<Vec<Vec<f32>>> = raw.into_iter().map(|(_, s)| s).collect();
        let expected = ref_compat(&samples, eps);
        worst = worst.max((report.score - expected).abs());
        ensure((report.score - expected).abs() <= 1e-9, || {
            format!("trace {t}: {} vs {expected}", report.score)
        })?;
        ensure((0.0..=1.0).contains(&report.score), || {
            format!("score {}", report.score)
        })?;
        if modules == 1 {
            ensure(report.score == 0.0, || {
                "single module scored non-zero".into()
            })?;
        }
    }
    let zero = ActivationTrace::new(
        vec![
            ("a".into(), vec![Matrix::zeros(2, 3).unwrap(); 2]),
            ("b".into(), vec![Matrix::zeros(1, 4).unwrap(); 2]),
        ],
        1e-6,
    )
    .map_err(|e| e.to_string())?;
    let z = analyze(&zero, 0.25).map_err(|e| e.to_string())?.score;
    ensure(z == 0.0, || format!("all-zero trace scored {z}"))?;
    let lone = ActivationTrace::new(
        vec![("a".into(), vec![random_matrix(&mut r, 2, 2, 1.0)])],
        1e-6,
    )
    .map_err(|e| e.to_string())?;
    let l = analyze(&lone, 0.25).map_err(|e| e.to_string())?.score;
    ensure(l == 0.0, || format!("single module scored {l}"))?;
    Ok(format!(
        "100 traces, max deviation {worst:.1e}; zero trace 0; single module 0"
    ))
}

fn block_channel_consistency() -> Result<String, String> {
    let mut r = rng(8);
    let mut worst = 0.0f64;
    for k in [2usize, 4, 8] {
        for _ in 0..100 {
            let b = random_matrix(&mut r, k, k, 2.0);
            let g = random_matrix(&mut r, k, k, 2.0);
            let cfg = GateConfig {
                gate_net: GatingNet::new(uniform(&mut r, -2.0, 2.0), uniform(&mut r, -2.0, 2.0)),
                ..GateConfig::default()
            };
            let block = fuse_matrix_blockwise(&b, &g, &cfg, k).map_err(|e| e.to_string())?;
            let flat =
                fuse_matrix(&b.flattened(), &g.flattened(), &cfg).map_err(|e| e.to_string())?;
            for (&x, &y) in block.data().iter().zip(flat.data()) {
                worst = worst.max((x as f64 - y as f64).abs());
                ensure((x as f64 - y as f64).abs() <= 1e-7, || {
                    format!("k = {k}: {x} vs {y}")
                })?;
            }
        }
    }
    Ok(format!(
        "k in {{2, 4, 8}}, 300 pairs, max difference {worst:.1e}"
    ))
}

fn container_round_trip() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut r = rng(9);
    for i in 0..200 {
        let tensors = r.random_range(0..6);
        let mut c = random_checkpoint(&mut r, tensors, 6);
        if i % 4 == 0 {
            c.set_metadata("note", format!("checkpoint {i}"));
        }
        let path = dir.path().join(format!("c{i}.graft"));
        store::save_checkpoint(&c, &path).map_err(|e| e.to_string())?;
        let back = store::load_checkpoint(&path).map_err(|e| e.to_string())?;
        let same_roles = back
            .entries()
            .iter()
            .zip(c.entries())
            .all(|(x, y)| x.role == y.role);
        ensure(
            back.tensors_bit_eq(&c) && same_roles && back.metadata() == c.metadata(),
            || format!("checkpoint {i} changed"),
        )?;
        let resaved = store::encode(&back).map_err(|e| e.to_string())?;
        ensure(resaved == std::fs::read(&path).unwrap(), || {
            format!("checkpoint {i} bytes differ")
        })?;
    }

    let sample = random_checkpoint(&mut r, 3, 4);
    let bytes = store::encode(&sample).map_err(|e| e.to_string())?;
    let mut cases: Vec<(String, Vec<u8>, Designated)> = Vec::new();
    for len in 0..bytes.len() {
        cases.push((format!("truncated to {len}"), bytes[..len].to_vec(), |e| {
            matches!(e, Error::Corrupt(_))
        }));
    }
    for pos in 0..8 {
        let mut b = bytes.clone();
        b[pos] ^= 0x20;
        cases.push((format!("magic byte {pos}"), b, |e| {
            matches!(e, Error::Format(_))
        }));
    }
    let overlap = br#"{"a":{"dtype":"f32","shape":[1,2],"offsets":[0,8]},"b":{"dtype":"f32","shape":[1,2],"offsets":[4,12]}}"#;
    let mut b = store::MAGIC.to_vec();
    b.extend_from_slice(&(overlap.len() as u64).to_le_bytes());
    b.extend_from_slice(overlap);
    b.extend_from_slice(&[0u8; 12]);
    cases.push(("overlapping offsets".into(), b, |e| {
        matches!(e, Error::Corrupt(_))
    }));

    let total = cases.len();
    for (name, data, designated) in cases {
        let path = dir.path().join("corrupt.graft");
        std::fs::write(&path, &data).map_err(|e| e.to_string())?;
        let outcome = panic::catch_unwind(|| store::load_checkpoint(&path))
            .map_err(|_| format!("{name}: panicked"))?;
        match outcome {
            Ok(_) => return Err(format!("{name}: accepted")),
            Err(e) if designated(&e) => {}
            Err(e) => return Err(format!("{name}: wrong error {e}")),
        }
    }
    Ok(format!(
        "200 round trips bitwise; {total} corrupted files rejected"
    ))
}

fn bench_determinism() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = BenchConfig::default();
    let start = Instant::now();
    let first = run_comparison(&cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    first
        .write(dir.path().join("one"))
        .map_err(|e| e.to_string())?;
    let second = run_comparison(&cfg).map_err(|e| e.to_string())?;
    second
        .write(dir.path().join("two"))
        .map_err(|e| e.to_string())?;
    for f in ["report.json", "report.csv"] {
        let a = std::fs::read(dir.path().join("one").join(f)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dir.path().join("two").join(f)).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{f} differs between runs"))?;
    }
    let report: serde_json::Value = serde_json::from_slice(
        &std::fs::read(dir.path().join("one/report.json")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let pairs = report["pairs"].as_array().ok_or("report lacks pairs")?;
    ensure(pairs.len() == cfg.pairs.len(), || "pair count".into())?;
    for p in pairs {
        let rows = p["methods"].as_array().ok_or("pair lacks methods")?;
        ensure(rows.len() == cfg.methods.len(), || "row count".into())?;
        for row in rows {
            for key in ["loss_task_a", "loss_task_b"] {
                ensure(row[key].as_f64().is_some_and(f64::is_finite), || {
                    format!("{key} missing")
                })?;
            }
        }
    }
    ensure(elapsed < Duration::from_secs(60), || {
        format!("default bench took {elapsed:?}")
    })?;
    Ok(format!(
        "reports identical across runs; default bench {:.1} s",
        elapsed.as_secs_f64()
    ))
}

fn tune_descent() -> Result<String, String> {
    let mut strict = 0;
    for seed in 0..20u64 {
        let mut r = rng(100 + seed);
        let base = random_checkpoint(&mut r, 3, 6);
        let mut graft = Checkpoint::new();
        for e in base.entries() {
            let (m, n) = e.matrix.shape();
            graft
                .insert(e.name.clone(), random_matrix(&mut r, m, n, 2.0), e.role)
                .unwrap();
        }
        let distance = |fused: &Checkpoint| -> f64 {
            fused
                .entries()
                .iter()
                .map(|e| {
                    let b = base.matrix(&e.name).unwrap();
                    e.matrix
                        .data()
                        .iter()
                        .zip(b.data())
                        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
                        .sum::<f64>()
                })
                .sum()
        };
        let cfg = GateConfig::default();
        let initial = distance(&fuse_checkpoints(&base, &graft, &cfg).unwrap());
        let out =
            tune_gating_net(distance, &base, &graft, &cfg, 40, seed).map_err(|e| e.to_string())?;
        let tuned_cfg = GateConfig {
            gate_net: out.net,
            ..cfg
        };
        let tuned = distance(&fuse_checkpoints(&base, &graft, &tuned_cfg).unwrap());
        ensure(tuned <= initial, || {
            format!("seed {seed}: {tuned} > {initial}")
        })?;
        ensure(tuned == out.objective, || {
            format!("seed {seed}: reported objective differs")
        })?;
        if tuned < initial {
            strict += 1;
        }
    }
    Ok(format!(
        "20 instances never worse, {strict} strictly improved"
    ))
}

fn main() -> ExitCode {
    let checks: [(&str, Check); 11] = [
        ("fusion-oracle equivalence", fusion_oracle),
        ("idempotence", idempotence),
        ("convexity and normalization", convexity),
        ("global-gate contract", global_gate_contract),
        ("entropy bounds", entropy_bounds),
        ("baseline oracles", baseline_oracles),
        ("compatibility pipeline", compatibility_pipeline),
        ("block/channel consistency", block_channel_consistency),
        ("container round-trip", container_round_trip),
        ("end-to-end determinism", bench_determinism),
        ("tune_gating_net descent", tune_descent),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        match outcome {
            Ok(detail) => println!("PASS  {:>2}. {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL  {:>2}. {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        checks.len() - failed,
        checks.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
