//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use efedsim::costmodel::{compressed_access, counted_matmul, ReadPolicy};
use efedsim::federation::codec::{
    decode, encode, DecodeError, Message, NodeId, Payload, ServerStatus, WeightEncoding,
};
use efedsim::federation::{Compression, ServerBehavior, Simulation};
use efedsim::softmax_verify::{
    exp_via_tables, shift_normalize, verified_softmax_row, BaseBConfig, ExpTables,
};
use efedsim::svdkit::{
    compression_ratio, rank_for_compression, svd, truncate, LowRankFactors, Spectrum,
};
use efedsim::transformer::{model_forward, ModelConfig, ModelParams, PartitionPlan, WeightSlot};
use efedsim::trust::{make_probes, trust_score, verification_round, TrustRecord, VerifierConfig};
use efedsim::{Exec, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn efedsim(args: &[&str], out_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_efedsim"));
    cmd.args(args).env_remove("EFEDSIM_OUT_DIR");
    if let Some(d) = out_dir {
        cmd.arg("--out").arg(d);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn within(start: Instant, limit: Duration) -> Result<Duration, String> {
    let t = start.elapsed();
    ensure!(t < limit, "took {t:?}, limit {limit:?}");
    Ok(t)
}

fn c1_cost_table() -> Verdict {
    let start = Instant::now();
    let o = efedsim(&["cost-table"], None);
    let t = within(start, Duration::from_secs(1))?;
    ensure!(o.status.success(), "exit {:?}", o.status.code());
    let expected = "dim,centralized_reads,federated_reads,reduction\n\
                    5,250,50,80.00%\n\
                    10,2000,200,90.00%\n\
                    100,2000000,20000,99.00%\n\
                    10000,2000000000000,200000000,99.99%\n";
    ensure!(stdout(&o) == expected, "got\n{}", stdout(&o));
    Ok(format!("12 values exact in {t:?}"))
}

fn c2_counts_by_execution() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let (m, n, k) = (
            rng.random_range(1..=64usize),
            rng.random_range(1..=64usize),
            rng.random_range(1..=64usize),
        );
        let a = Matrix::random_normal(m, n, 1.0, &mut rng);
        let b = Matrix::random_normal(n, k, 1.0, &mut rng);
        let (_, tc) = counted_matmul(&a, &b, ReadPolicy::Centralized).map_err(|e| e.to_string())?;
        let (_, tf) =
            counted_matmul(&a, &b, ReadPolicy::Hierarchical).map_err(|e| e.to_string())?;
        let (mu, nu, ku) = (m as u64, n as u64, k as u64);
        ensure!(tc == 2 * nu * mu * ku, "({m},{n},{k}) centralized {tc}");
        ensure!(tf == mu * nu + nu * ku, "({m},{n},{k}) hierarchical {tf}");
        let measured = 1.0 - tf as f64 / tc as f64;
        let closed = 1.0 - 1.0 / (2.0 * k as f64) - 1.0 / (2.0 * m as f64);
        ensure!(
            (measured - closed).abs() <= 1e-12,
            "({m},{n},{k}) reduction {measured} vs {closed}"
        );
    }
    let t = within(start, Duration::from_secs(10))?;
    Ok(format!("200 shapes in {t:?}"))
}

fn c3_worked_example() -> Verdict {
    let a = Matrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64);
    let b = Matrix::from_fn(3, 3, |i, j| (i + 2 * j) as f64);
    let (_, tc) = counted_matmul(&a, &b, ReadPolicy::Centralized).map_err(|e| e.to_string())?;
    let (_, tf) = counted_matmul(&a, &b, ReadPolicy::Hierarchical).map_err(|e| e.to_string())?;
    ensure!((tc, tf) == (54, 18), "got {tc} vs {tf}");
    Ok("54 vs 18".into())
}

fn summary_energy(family: &str) -> Result<f64, String> {
    let o = efedsim(
        &[
            "svd-analyze",
            "--shape",
            "768x2304",
            "--keep-frac",
            "0.4",
            "--family",
            family,
            "--step",
            "64",
        ],
        None,
    );
    ensure!(
        o.status.success(),
        "svd-analyze {family} exit {:?}",
        o.status.code()
    );
    let text = stdout(&o);
    let line = text
        .lines()
        .skip_while(|l| *l != "# svd_summary.csv")
        .nth(2)
        .ok_or("no summary row")?;
    let cols: Vec<&str> = line.split(',').collect();
    ensure!(
        cols[3] == "307" && cols[4] == "0.5332",
        "summary row {line}"
    );
    cols[5].parse().map_err(|_| format!("bad energy in {line}"))
}

fn c4_gpt2_compression() -> Verdict {
    let r = compression_ratio(768, 2304, 307);
    ensure!((r - 0.5332).abs() <= 5e-4, "ratio {r}");
    let geo = summary_energy("geometric")?;
    let pow = summary_energy("power")?;
    ensure!(geo >= 0.90 && pow >= 0.90, "energies {geo} {pow}");
    Ok(format!(
        "ratio {r:.5}; synthetic energy {geo:.4} (geometric), {pow:.4} (power)"
    ))
}

fn c5_eckart_young() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (m, n) = (rng.random_range(1..=32), rng.random_range(1..=32));
        let w = Matrix::random_normal(m, n, 1.0, &mut rng);
        let s = svd(&w).map_err(|e| e.to_string())?;
        let sigma = s.full_sigma().to_vec();
        let total: f64 = w.as_slice().iter().map(|v| v * v).sum();
        let spec = Spectrum(&sigma);
        let mut prev = 0.0;
        for k in 1..=sigma.len() {
            let wk = truncate(&s, k)
                .map_err(|e| e.to_string())?
                .into_factors()
                .reconstruct();
            let err: f64 = w
                .as_slice()
                .iter()
                .zip(wk.as_slice())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let discarded: f64 = sigma[k..].iter().map(|x| x * x).sum();
            let rel = (err - discarded).abs() / total;
            worst = worst.max(rel);
            ensure!(rel <= 1e-8, "{m}x{n} k={k}: {err} vs {discarded}");
            let e = spec.energy_ratio(k).map_err(|e| e.to_string())?;
            ensure!(e >= prev, "{m}x{n}: energy fell at k={k}");
            prev = e;
        }
        ensure!(
            (prev - 1.0).abs() <= 1e-12,
            "{m}x{n}: terminal energy {prev}"
        );
    }
    Ok(format!("worst relative gap {worst:.2e}"))
}

fn c6_bert_reads() -> Verdict {
    let (m, n, t) = (3072, 768, 30);
    let k_hat = rank_for_compression(m, n, 0.7);
    ensure!(k_hat == 429, "k_hat {k_hat}");
    let plain = compressed_access(m, n, t, k_hat, false, false);
    let hier = compressed_access(m, n, t, k_hat, true, false);
    let both = compressed_access(m, n, t, k_hat, true, true);
    ensure!(plain == 141_557_760, "plain {plain}");
    ensure!(hier == 2_382_336, "hierarchy {hier}");
    ensure!(both == 1_670_829, "hierarchy+compressed {both}");

    let o = efedsim(&["bandwidth"], None);
    ensure!(o.status.success(), "bandwidth exit {:?}", o.status.code());
    let text = stdout(&o);
    let rows: Vec<Vec<String>> = text
        .lines()
        .skip_while(|l| *l != "# bandwidth.csv")
        .skip(2)
        .take_while(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    ensure!(rows.len() == 14, "{} bandwidth rows", rows.len());
    let mut rates_at_07 = Vec::new();
    for policy in ["transfer-bytes", "multiplication-reads"] {
        let r: Vec<(f64, f64)> = rows
            .iter()
            .filter(|c| c[2] == policy)
            .map(|c| (c[0].parse().unwrap(), c[5].parse().unwrap()))
            .collect();
        let ratios: Vec<f64> = r.iter().map(|x| x.0).collect();
        ensure!(
            ratios == [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8],
            "{policy} grid {ratios:?}"
        );
        ensure!(
            r.windows(2).all(|w| w[1].1 < w[0].1),
            "{policy} not strictly decreasing"
        );
        rates_at_07.push(r[5].1);
    }
    let err = String::from_utf8_lossy(&o.stderr);
    ensure!(err.contains("60%"), "missing discrepancy note");
    Ok(format!(
        "exact counts; rate at 0.7 = {:.4} / {:.4}; 60% point value reported as non-derivable",
        rates_at_07[0], rates_at_07[1]
    ))
}

const SPLITS: [&[usize]; 8] = [
    &[4],
    &[1, 3],
    &[2, 2],
    &[3, 1],
    &[1, 1, 2],
    &[1, 2, 1],
    &[2, 1, 1],
    &[1, 1, 1, 1],
];

fn c7_pipeline_equivalence() -> Verdict {
    let start = Instant::now();
    let cfg = ModelConfig {
        d_model: 32,
        n_heads: 4,
        n_layers: 4,
        ..ModelConfig::default()
    };
    for run in 0..20u64 {
        let model = ModelParams::random(cfg, 1000 + run).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(run);
        let tokens: Vec<usize> = (0..12)
            .map(|_| rng.random_range(0..cfg.vocab_size))
            .collect();
        let split = SPLITS[run as usize % SPLITS.len()];
        let reference = model_forward(&tokens, &model).map_err(|e| e.to_string())?;
        let plan = PartitionPlan::from_sizes(split).map_err(|e| e.to_string())?;
        let behaviors = vec![ServerBehavior::Honest; split.len()];
        let out = efedsim::federation::run_pipeline(
            model,
            plan,
            behaviors,
            Compression::None,
            &tokens,
            run,
        )
        .map_err(|e| e.to_string())?;
        let same = out
            .output
            .as_slice()
            .iter()
            .zip(reference.as_slice())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        ensure!(same, "run {run} split {split:?} differs");
    }
    let t = within(start, Duration::from_secs(5))?;
    Ok(format!("20 runs bit-identical in {t:?}"))
}

fn gate_sim(behaviors: Vec<ServerBehavior>) -> Result<(Simulation, ModelParams), String> {
    let model = ModelParams::random(ModelConfig::default(), 8).map_err(|e| e.to_string())?;
    let plan = PartitionPlan::even(4, 4).map_err(|e| e.to_string())?;
    let mut sim = Simulation::new(model.clone(), plan, behaviors, Compression::None, 8)
        .map_err(|e| e.to_string())?;
    sim.distribute_model().map_err(|e| e.to_string())?;
    Ok((sim, model))
}

fn c8_trust_gate() -> Verdict {
    let cfg = VerifierConfig {
        theta: 0.5,
        tau: 1e-6,
        ..VerifierConfig::default()
    };
    let tokens = [3, 1, 4, 1, 5, 9, 2, 6];

    let mut b = vec![ServerBehavior::Honest; 4];
    b[2] = ServerBehavior::SignFlip;
    let (mut sim, model) = gate_sim(b)?;
    let probes = make_probes(&model, cfg.probe_count, 8, 80).map_err(|e| e.to_string())?;
    let round = verification_round(&mut sim, &probes, &cfg, 2, Exec::default())
        .map_err(|e| e.to_string())?;
    let adv = round
        .records
        .iter()
        .find(|r| r.server == 2)
        .ok_or("no record for server 2")?;
    ensure!(
        adv.acc == 0.0 && adv.status == ServerStatus::Deactivated,
        "adversary record {adv:?}"
    );
    ensure!(
        round
            .records
            .iter()
            .filter(|r| r.status == ServerStatus::Deactivated)
            .count()
            == 1,
        "honest server deactivated"
    );
    ensure!(!round.reassigned.is_empty(), "no reassignment");
    let reassign_msgs = sim
        .trace()
        .iter()
        .filter(|m| matches!(m.payload, Payload::Reassignment { .. }))
        .count();
    ensure!(reassign_msgs == 1, "{reassign_msgs} reassignment messages");
    let out = sim.run_pipeline(&tokens).map_err(|e| e.to_string())?;
    let baseline = model_forward(&tokens, &model).map_err(|e| e.to_string())?;
    let diff = out.max_abs_diff(&baseline).map_err(|e| e.to_string())?;
    ensure!(diff <= 1e-12, "post-reassignment diff {diff}");

    let (mut control, model) = gate_sim(vec![ServerBehavior::Honest; 4])?;
    let probes = make_probes(&model, cfg.probe_count, 8, 80).map_err(|e| e.to_string())?;
    let round = verification_round(&mut control, &probes, &cfg, 2, Exec::default())
        .map_err(|e| e.to_string())?;
    ensure!(
        round
            .records
            .iter()
            .all(|r| r.status == ServerStatus::Active)
            && round.reassigned.is_empty(),
        "control run deactivated someone"
    );
    Ok(format!(
        "adversary deactivated in round 0, plan now {:?}; diff {diff:e}",
        final_plan(&sim)
    ))
}

fn final_plan(sim: &Simulation) -> Vec<(usize, std::ops::Range<usize>)> {
    sim.plan()
        .entries()
        .iter()
        .map(|e| (e.server, e.layers.clone()))
        .collect()
}

fn c9_trust_units() -> Verdict {
    let s = trust_score(0.9, 2, 4, 1.0);
    ensure!(s == 0.45, "score {s}");
    let r = TrustRecord::new(0, 1.0, 2, 4, 1.0, 0.5);
    ensure!(
        r.score == 0.5 && r.status == ServerStatus::Active,
        "boundary record {r:?}"
    );
    let r = TrustRecord::new(0, 0.9, 2, 4, 1.0, 0.5);
    ensure!(
        r.status == ServerStatus::Deactivated,
        "below threshold stays active"
    );
    Ok("0.45 exact; score == theta is active".into())
}

fn c10_softmax() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let cfg = BaseBConfig::default();
    let tables = ExpTables::new(cfg).map_err(|e| e.to_string())?;

    for _ in 0..10_000 {
        let n = rng.random_range(1..40);
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-8.0..8.0)).collect();
        let c = rng.random_range(-50..=50) as f64;
        let zc: Vec<f64> = z.iter().map(|v| v + c).collect();
        let (a, _) = shift_normalize(&z).map_err(|e| e.to_string())?;
        let (b, _) = shift_normalize(&zc).map_err(|e| e.to_string())?;
        let pa: Vec<f64> = a.iter().map(|v| v.exp()).collect();
        let pb: Vec<f64> = b.iter().map(|v| v.exp()).collect();
        let (sa, sb): (f64, f64) = (pa.iter().sum(), pb.iter().sum());
        for (x, y) in pa.iter().zip(&pb) {
            ensure!(
                (x / sa - y / sb).abs() <= 1e-12,
                "shift by {c} moved a probability"
            );
        }
    }

    let mut worst_table: f64 = 0.0;
    let step = (cfg.max_q() + 1) / 100_000 + 1;
    let mut q = 0;
    let mut points = 0;
    while q <= cfg.max_q() {
        let direct = (-(q as f64) / cfg.scale()).exp();
        let got = exp_via_tables(q, &tables).map_err(|e| e.to_string())?;
        worst_table = worst_table.max((got - direct).abs());
        q += step;
        points += 1;
    }
    for _ in points..100_000 {
        let q = rng.random_range(0..=cfg.max_q());
        let direct = (-(q as f64) / cfg.scale()).exp();
        let got = exp_via_tables(q, &tables).map_err(|e| e.to_string())?;
        worst_table = worst_table.max((got - direct).abs());
    }
    ensure!(worst_table <= 1e-12, "table product off by {worst_table}");

    let mut observed = Vec::new();
    for f in [6u32, 8, 10] {
        let cfg = BaseBConfig {
            f,
            ..BaseBConfig::default()
        };
        let tables = ExpTables::new(cfg).map_err(|e| e.to_string())?;
        let mut worst: f64 = 0.0;
        for _ in 0..10_000 {
            let n = rng.random_range(1..64);
            let spread = rng.random_range(0.1..20.0);
            let z: Vec<f64> = (0..n).map(|_| rng.random_range(-spread..spread)).collect();
            let (_, v) = verified_softmax_row(&z, &tables, 4, Exec::Sequential)
                .map_err(|e| e.to_string())?;
            ensure!(
                v.max_abs_error <= 2.0 * 2f64.powi(-(f as i32)),
                "f={f}: error {}",
                v.max_abs_error
            );
            worst = worst.max(v.max_abs_error);
        }
        observed.push(worst);
    }
    ensure!(
        observed.windows(2).all(|w| w[1] < w[0]),
        "error not shrinking with f: {observed:?}"
    );

    for _ in 0..200 {
        let n = rng.random_range(1..300);
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let (p1, _) =
            verified_softmax_row(&z, &tables, 1, Exec::Sequential).map_err(|e| e.to_string())?;
        for w in [2, 3, 8, 64] {
            let (pw, _) =
                verified_softmax_row(&z, &tables, w, Exec::default()).map_err(|e| e.to_string())?;
            let same = p1.iter().zip(&pw).all(|(a, b)| a.to_bits() == b.to_bits());
            ensure!(same, "{w} workers changed bits for n={n}");
        }
    }
    Ok(format!(
        "table error {worst_table:.1e}; max errors f=6/8/10: {:.2e}/{:.2e}/{:.2e}",
        observed[0], observed[1], observed[2]
    ))
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    let data = (0..r * c)
        .map(|_| match rng.random_range(0..8) {
            0 => -0.0,
            1 => f64::from_bits(rng.random()),
            _ => rng.random_range(-1e3..1e3),
        })
        .collect();
    Matrix::new(r, c, data).unwrap()
}

fn random_node(rng: &mut ChaCha8Rng) -> NodeId {
    match rng.random_range(0..3) {
        0 => NodeId::CLIENT,
        1 => NodeId::server(rng.random_range(0..1000)),
        _ => NodeId::verifier(rng.random_range(0..8)),
    }
}

fn random_message(rng: &mut ChaCha8Rng) -> Message {
    let (r, c) = (rng.random_range(0..6), rng.random_range(0..6));
    let payload = match rng.random_range(0..7) {
        0 => {
            let (m, n, k) = (
                rng.random_range(1..7),
                rng.random_range(1..7),
                rng.random_range(0..4),
            );
            let sigma = (0..k).map(|_| rng.random()).collect();
            let f = LowRankFactors::new(random_matrix(rng, m, k), sigma, random_matrix(rng, k, n))
                .unwrap();
            Payload::WeightShard {
                layer: rng.random(),
                slot: WeightSlot::Ffn1,
                weights: WeightEncoding::LowRank(f),
            }
        }
        1 => Payload::Activation(random_matrix(rng, r, c)),
        2 => Payload::ValidationProbe {
            probe: rng.random(),
            input: random_matrix(rng, r, c),
        },
        3 => Payload::ProbeResult {
            probe: rng.random(),
            output: random_matrix(rng, r, c),
        },
        4 => Payload::TrustReport {
            server: random_node(rng),
            acc: rng.random(),
            layers: rng.random(),
            score: rng.random(),
            status: ServerStatus::Deactivated,
        },
        5 => Payload::StatusUpdate(ServerStatus::Active),
        _ => Payload::Reassignment {
            failed: random_node(rng),
            replacement: random_node(rng),
            layers: 0..rng.random(),
        },
    };
    Message {
        from: random_node(rng),
        to: random_node(rng),
        seq: rng.random(),
        payload,
    }
}

fn c11_codec() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..1000 {
        let msg = random_message(&mut rng);
        let bytes = encode(&msg);
        let back = decode(&bytes).map_err(|e| format!("message {i}: {e}"))?;
        ensure!(encode(&back) == bytes, "message {i} re-encodes differently");
        if i < 40 {
            for cut in 0..bytes.len() {
                ensure!(
                    matches!(decode(&bytes[..cut]), Err(DecodeError::Truncated { .. })),
                    "message {i} cut at {cut} not reported as truncated"
                );
            }
            let mut bad = bytes.clone();
            bad[0] ^= 0xFF;
            ensure!(
                matches!(decode(&bad), Err(DecodeError::BadMagic(..))),
                "magic"
            );
            let mut bad = bytes.clone();
            bad[2] = 9;
            ensure!(
                matches!(decode(&bad), Err(DecodeError::UnsupportedVersion(9))),
                "version"
            );
            let mut bad = bytes.clone();
            bad[3] = 0xEE;
            ensure!(
                matches!(decode(&bad), Err(DecodeError::UnknownKind(0xEE))),
                "kind"
            );
            let mut bad = bytes.clone();
            bad.push(0);
            ensure!(decode(&bad).is_err(), "trailing byte accepted");
        }
    }

    let model = ModelParams::random(ModelConfig::default(), 3).map_err(|e| e.to_string())?;
    let plan = PartitionPlan::even(2, 4).map_err(|e| e.to_string())?;
    let mut sim = Simulation::new(
        model,
        plan,
        vec![ServerBehavior::Honest; 2],
        Compression::Ratio(0.5),
        3,
    )
    .map_err(|e| e.to_string())?;
    sim.distribute_model().map_err(|e| e.to_string())?;
    let mut checked = 0;
    for msg in sim.trace() {
        if let Payload::WeightShard {
            weights: WeightEncoding::LowRank(f),
            ..
        } = &msg.payload
        {
            let (m, n, k) = (f.m(), f.n(), f.k());
            // header 24, layer 4, slot 2, encoding tag 1, dims 12
            let expected = 8 * (m * k + k + k * n) + 24 + 4 + 2 + 1 + 12;
            ensure!(
                encode(msg).len() == expected,
                "{m}x{n} k={k}: {} bytes",
                encode(msg).len()
            );
            checked += 1;
        }
    }
    ensure!(checked > 0, "no compressed shards sent");
    Ok(format!(
        "1000 round trips; {checked} compressed shards sized exactly"
    ))
}

fn c12_determinism() -> Verdict {
    let conf = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk.conf");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let o = efedsim(&["--config", conf, "pipeline-run"], Some(d.path()));
        ensure!(
            o.status.success(),
            "pipeline-run exit {:?}: {}",
            o.status.code(),
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let mut names: Vec<String> = std::fs::read_dir(dirs[0].path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    ensure!(names.len() >= 5, "only {names:?}");
    for n in &names {
        let a = std::fs::read(dirs[0].path().join(n)).unwrap();
        let b = std::fs::read(dirs[1].path().join(n))
            .map_err(|_| format!("{n} missing in second run"))?;
        ensure!(a == b, "{n} differs between runs");
    }
    Ok(format!("{} files byte-identical", names.len()))
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("cost table exact", c1_cost_table),
        ("read counts by execution", c2_counts_by_execution),
        ("3x3 worked example", c3_worked_example),
        ("GPT-2 compression arithmetic", c4_gpt2_compression),
        ("Eckart-Young suite", c5_eckart_young),
        ("BERT-layer read counts", c6_bert_reads),
        ("pipeline equals monolith", c7_pipeline_equivalence),
        ("trust gate scenario", c8_trust_gate),
        ("trust score units", c9_trust_units),
        ("softmax verification", c10_softmax),
        ("codec", c11_codec),
        ("determinism", c12_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} of 12 passed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
