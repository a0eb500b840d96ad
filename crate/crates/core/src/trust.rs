//! Verifier-side accuracy estimation, trust scores and the activation gate.
//!
//! `S_i = acc_i * l_i / max(l) * w_i`; a server stays active iff
//! `S_i >= theta`.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::exec::Exec;
use crate::federation::{FederationError, NodeId, Payload, ServerStatus, Simulation};
use crate::tensor::Matrix;
use crate::transformer::{
    embed, layer_forward, LayerParams, ModelError, ModelParams, PartitionPlan,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrustError {
    #[error("no probes supplied")]
    EmptyProbes,
    #[error("probe {index}: server output {server} vs reference {reference}")]
    ShapeMismatch {
        index: usize,
        server: String,
        reference: String,
    },
    #[error("invalid verifier setting {key}: {reason}")]
    InvalidConfig { key: &'static str, reason: String },
    #[error(transparent)]
    Federation(#[from] FederationError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifierConfig {
    pub theta: f64,
    pub tau: f64,
    pub probe_count: usize,
    pub weight: f64,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self {
            theta: 0.5,
            tau: 1e-6,
            probe_count: 8,
            weight: 1.0,
        }
    }
}

impl VerifierConfig {
    pub fn validate(&self) -> Result<(), TrustError> {
        let bad = |key, reason: &str| {
            Err(TrustError::InvalidConfig {
                key,
                reason: reason.to_string(),
            })
        };
        if !(0.0..=1.0).contains(&self.theta) {
            return bad("theta", "must lie in [0, 1]");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau", "must be positive");
        }
        if self.probe_count == 0 {
            return bad("probe_count", "must be >= 1");
        }
        if !(self.weight > 0.0 && self.weight <= 1.0) {
            return bad("w", "must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrustRecord {
    pub server: usize,
    pub acc: f64,
    pub layers: usize,
    pub max_layers: usize,
    pub weight: f64,
    pub score: f64,
    pub status: ServerStatus,
}

impl TrustRecord {
    pub fn new(
        server: usize,
        acc: f64,
        layers: usize,
        max_layers: usize,
        weight: f64,
        theta: f64,
    ) -> Self {
        let score = trust_score(acc, layers, max_layers, weight);
        let mut r = Self {
            server,
            acc,
            layers,
            max_layers,
            weight,
            score,
            status: ServerStatus::Active,
        };
        r.status = apply_threshold(&r, theta);
        r
    }
}

pub fn trust_score(acc: f64, layers: usize, max_layers: usize, weight: f64) -> f64 {
    acc * layers as f64 / max_layers as f64 * weight
}

/// Active iff `score >= theta`.
pub fn apply_threshold(record: &TrustRecord, theta: f64) -> ServerStatus {
    if record.score >= theta {
        ServerStatus::Active
    } else {
        ServerStatus::Deactivated
    }
}

/// Number of probes whose largest elementwise deviation is within `tau`.
pub fn count_within(
    outputs: &[Matrix],
    references: &[Matrix],
    tau: f64,
) -> Result<usize, TrustError> {
    if outputs.len() != references.len() {
        return Err(TrustError::ShapeMismatch {
            index: outputs.len().min(references.len()),
            server: format!("{} outputs", outputs.len()),
            reference: format!("{} references", references.len()),
        });
    }
    let mut n = 0;
    for (index, (o, r)) in outputs.iter().zip(references).enumerate() {
        let diff = o.max_abs_diff(r).map_err(|_| TrustError::ShapeMismatch {
            index,
            server: o.shape().to_string(),
            reference: r.shape().to_string(),
        })?;
        if diff <= tau {
            n += 1;
        }
    }
    Ok(n)
}

/// Fraction of probes within `tau` of the reference.
pub fn estimate_accuracy(
    outputs: &[Matrix],
    references: &[Matrix],
    tau: f64,
) -> Result<f64, TrustError> {
    if outputs.is_empty() {
        return Err(TrustError::EmptyProbes);
    }
    Ok(count_within(outputs, references, tau)? as f64 / outputs.len() as f64)
}

/// Embedded random token sequences used as probe inputs.
pub fn make_probes(
    model: &ModelParams,
    count: usize,
    len: usize,
    seed: u64,
) -> Result<Vec<Matrix>, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let tokens: Vec<usize> = (0..len)
                .map(|_| rng.random_range(0..model.config.vocab_size))
                .collect();
            embed(&tokens, model)
        })
        .collect()
}

fn reference_forward(layers: &[LayerParams], x: &Matrix) -> Result<Matrix, ModelError> {
    layers
        .iter()
        .try_fold(x.clone(), |x, l| layer_forward(&x, l))
}

/// Contiguous split of `0..n` into `parts` ranges.
fn partition(n: usize, parts: usize) -> Vec<std::ops::Range<usize>> {
    (0..parts)
        .map(|v| v * n / parts..(v + 1) * n / parts)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub records: Vec<TrustRecord>,
    /// `(failed, replacement)` pairs.
    pub reassigned: Vec<(usize, usize)>,
}

/// Scores every server in the plan against full-precision reference
/// blocks. Probes are split across `n_verifiers`; each verifier's count of
/// accepted probes is summed. Servers falling below `theta` are notified,
/// deactivated and their blocks reassigned.
pub fn verification_round(
    sim: &mut Simulation,
    probes: &[Matrix],
    cfg: &VerifierConfig,
    n_verifiers: usize,
    exec: Exec,
) -> Result<RoundOutcome, TrustError> {
    cfg.validate()?;
    if probes.is_empty() {
        return Err(TrustError::EmptyProbes);
    }
    let n_verifiers = n_verifiers.clamp(1, probes.len());
    let plan: PartitionPlan = sim.plan().clone();
    let max_layers = plan.max_layers();
    let mut records = Vec::with_capacity(plan.entries().len());

    for e in plan.entries() {
        if sim.server(e.server).map(|s| s.status) != Some(ServerStatus::Active) {
            continue;
        }
        let reference_layers = &sim.model().layers[e.layers.clone()];
        let references = exec
            .map_slice(probes, |p| reference_forward(reference_layers, p))
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        let mut accepted = 0;
        for (v, chunk) in partition(probes.len(), n_verifiers).into_iter().enumerate() {
            let verifier = NodeId::verifier(v);
            let server = NodeId::server(e.server);
            let mut outputs = Vec::with_capacity(chunk.len());
            for j in chunk.clone() {
                let sent = sim.bus_mut().send(
                    verifier,
                    server,
                    Payload::ValidationProbe {
                        probe: j as u32,
                        input: probes[j].clone(),
                    },
                )?;
                let Payload::ValidationProbe { input, .. } = sent.payload else {
                    unreachable!("bus delivers what was sent")
                };
                let out = sim.server_forward(e.server, &input)?;
                let back = sim.bus_mut().send(
                    server,
                    verifier,
                    Payload::ProbeResult {
                        probe: j as u32,
                        output: out,
                    },
                )?;
                let Payload::ProbeResult { output, .. } = back.payload else {
                    unreachable!("bus delivers what was sent")
                };
                outputs.push(output);
            }
            accepted += count_within(&outputs, &references[chunk], cfg.tau)?;
        }
        let acc = accepted as f64 / probes.len() as f64;
        let record = TrustRecord::new(e.server, acc, e.len(), max_layers, cfg.weight, cfg.theta);
        sim.bus_mut().send(
            NodeId::verifier(0),
            NodeId::CLIENT,
            Payload::TrustReport {
                server: NodeId::server(e.server),
                acc: record.acc,
                layers: record.layers as f64,
                score: record.score,
                status: record.status,
            },
        )?;
        records.push(record);
    }

    for r in &records {
        if r.status == ServerStatus::Deactivated {
            sim.deactivate(r.server, NodeId::verifier(0))?;
        }
    }
    let reassigned = sim.reassign_deactivated()?;
    Ok(RoundOutcome {
        records,
        reassigned,
    })
}

/// Servers that would fail the gate even when perfectly accurate.
pub fn starved_servers(plan: &PartitionPlan, cfg: &VerifierConfig) -> Vec<usize> {
    let max = plan.max_layers();
    plan.entries()
        .iter()
        .filter(|e| trust_score(1.0, e.len(), max, cfg.weight) < cfg.theta)
        .map(|e| e.server)
        .collect()
}

/// Rows of `(round, record)`, written as CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrustLog {
    rows: Vec<(usize, TrustRecord)>,
}

impl TrustLog {
    pub fn push_round(&mut self, round: usize, records: &[TrustRecord]) {
        self.rows.extend(records.iter().map(|r| (round, *r)));
    }

    pub fn rows(&self) -> &[(usize, TrustRecord)] {
        &self.rows
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("round,server,acc,layers,score,status\n");
        for (round, r) in &self.rows {
            let _ = writeln!(
                s,
                "{round},{},{},{},{},{}",
                r.server,
                r.acc,
                r.layers,
                r.score,
                r.status.name()
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::federation::{Compression, MessageKind, ServerBehavior};
    use crate::transformer::{model_forward, ModelConfig};
    use proptest::prelude::*;

    #[test]
    fn score_values() {
        assert_eq!(trust_score(0.9, 2, 4, 1.0), 0.45);
        assert_eq!(trust_score(1.0, 4, 4, 1.0), 1.0);
        assert_eq!(trust_score(0.0, 3, 4, 0.7), 0.0);
    }

    #[test]
    fn threshold_boundary() {
        let r = TrustRecord::new(0, 1.0, 2, 4, 1.0, 0.5);
        assert_eq!(r.score, 0.5);
        assert_eq!(r.status, ServerStatus::Active);
        let below = TrustRecord {
            score: 0.5 - 1e-12,
            ..r
        };
        assert_eq!(apply_threshold(&below, 0.5), ServerStatus::Deactivated);
        let zero = TrustRecord { score: 0.0, ..r };
        assert_eq!(apply_threshold(&zero, 0.0), ServerStatus::Active);
    }

    #[test]
    fn accuracy_counts() {
        let a = Matrix::identity(3);
        let refs = vec![a.clone(); 4];
        assert_eq!(estimate_accuracy(&refs, &refs, 1e-6).unwrap(), 1.0);
        let far: Vec<Matrix> = refs.iter().map(|m| m.map(|v| v + 1e-5)).collect();
        assert_eq!(estimate_accuracy(&far, &refs, 1e-6).unwrap(), 0.0);
        let mut mixed = refs.clone();
        mixed[2] = far[2].clone();
        assert_eq!(estimate_accuracy(&mixed, &refs, 1e-6).unwrap(), 0.75);
        assert_eq!(
            estimate_accuracy(&[], &[], 1e-6),
            Err(TrustError::EmptyProbes)
        );
        assert!(matches!(
            estimate_accuracy(&[Matrix::identity(2)], &[a], 1e-6),
            Err(TrustError::ShapeMismatch { index: 0, .. })
        ));
    }

    #[test]
    fn config_validation_names_key() {
        let c = VerifierConfig {
            theta: 1.5,
            ..VerifierConfig::default()
        };
        assert!(matches!(
            c.validate(),
            Err(TrustError::InvalidConfig { key: "theta", .. })
        ));
    }

    fn sim(behaviors: Vec<ServerBehavior>) -> Simulation {
        let m = ModelParams::random(ModelConfig::default(), 11).unwrap();
        let plan = PartitionPlan::even(behaviors.len(), 4).unwrap();
        let mut s = Simulation::new(m, plan, behaviors, Compression::None, 5).unwrap();
        s.distribute_model().unwrap();
        s
    }

    fn probes(s: &Simulation) -> Vec<Matrix> {
        make_probes(s.model(), 6, 10, 3).unwrap()
    }

    #[test]
    fn honest_round_scores_by_layer_share() {
        let mut s = sim(vec![ServerBehavior::Honest; 3]);
        let p = probes(&s);
        let cfg = VerifierConfig {
            theta: 0.5,
            ..VerifierConfig::default()
        };
        let out = verification_round(&mut s, &p, &cfg, 2, Exec::default()).unwrap();
        let scores: Vec<f64> = out.records.iter().map(|r| r.score).collect();
        assert_eq!(scores, vec![1.0, 0.5, 0.5]);
        assert!(out.records.iter().all(|r| r.status == ServerStatus::Active));
        assert!(out.reassigned.is_empty());
        assert_eq!(s.ledger().kind(MessageKind::TrustReport).messages, 3);
    }

    #[test]
    fn noisy_server_deactivated_and_replaced() {
        let mut s = sim(vec![
            ServerBehavior::Honest,
            ServerBehavior::Noisy(0.1),
            ServerBehavior::Honest,
            ServerBehavior::Honest,
        ]);
        let want = model_forward(&[1, 2, 3], s.model()).unwrap();
        let p = probes(&s);
        let out =
            verification_round(&mut s, &p, &VerifierConfig::default(), 1, Exec::default()).unwrap();
        let status: Vec<ServerStatus> = out.records.iter().map(|r| r.status).collect();
        assert_eq!(
            status,
            [
                ServerStatus::Active,
                ServerStatus::Deactivated,
                ServerStatus::Active,
                ServerStatus::Active
            ]
        );
        assert_eq!(out.records[1].acc, 0.0);
        assert_eq!(out.reassigned, vec![(1, 0)]);
        assert_eq!(s.run_pipeline(&[1, 2, 3]).unwrap(), want);
    }

    #[test]
    fn verifier_count_does_not_change_records() {
        let behaviors = vec![
            ServerBehavior::Honest,
            ServerBehavior::Noisy(1e-7),
            ServerBehavior::Stale,
        ];
        let mut a = sim(behaviors.clone());
        let mut b = sim(behaviors);
        let p = probes(&a);
        let cfg = VerifierConfig::default();
        let ra = verification_round(&mut a, &p, &cfg, 1, Exec::Sequential).unwrap();
        let rb = verification_round(&mut b, &p, &cfg, 3, Exec::Parallel).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn starvation_warning() {
        let plan = PartitionPlan::from_sizes(&[3, 1]).unwrap();
        let cfg = VerifierConfig::default();
        assert_eq!(starved_servers(&plan, &cfg), vec![1]);
    }

    #[test]
    fn log_csv() {
        let mut log = TrustLog::default();
        log.push_round(0, &[TrustRecord::new(2, 1.0, 1, 2, 1.0, 0.5)]);
        assert_eq!(
            log.to_csv(),
            "round,server,acc,layers,score,status\n0,2,1,1,0.5,active\n"
        );
    }

    proptest! {
        #[test]
        fn score_monotone_and_scale_invariant(acc in 0.0f64..=1.0, w in 0.01f64..=1.0, l in 1usize..50, extra in 0usize..50, c in 1usize..20) {
            let max = l + extra;
            let s = trust_score(acc, l, max, w);
            prop_assert!((0.0..=1.0).contains(&s));
            if l < max {
                prop_assert!(trust_score(acc, l + 1, max, w) >= s);
            }
            prop_assert!((trust_score(acc, c * l, c * max, w) - s).abs() <= 1e-15);
        }

        #[test]
        fn accuracy_permutation_invariant(devs in proptest::collection::vec(0.0f64..2e-6, 1..12), rot in 0usize..12) {
            let refs: Vec<Matrix> = devs.iter().map(|_| Matrix::zeros(2, 2)).collect();
            let outs: Vec<Matrix> = devs.iter().map(|&d| Matrix::from_fn(2, 2, |_, _| d)).collect();
            let a = estimate_accuracy(&outs, &refs, 1e-6).unwrap();
            let mut rotated = outs.clone();
            rotated.rotate_left(rot % outs.len());
            prop_assert_eq!(a, estimate_accuracy(&rotated, &refs, 1e-6).unwrap());
        }
    }
}
