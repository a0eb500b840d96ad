//! Client / server pipeline over the message bus.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::bus::{Bus, TransferLedger};
use super::codec::{Message, NodeId, Payload, ServerStatus, WeightEncoding};
use super::transport::Transport;
use super::FederationError;
use crate::exec::Exec;
use crate::svdkit::{rank_for_compression, svd_with, truncate};
use crate::tensor::Matrix;
use crate::transformer::{
    embed, layer_forward, project_output, LayerParams, ModelParams, PartitionPlan, WeightSlot,
};

/// How a server treats the output of each of its blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ServerBehavior {
    Honest,
    /// Adds i.i.d. Gaussian noise with this standard deviation.
    Noisy(f64),
    Zeroing,
    SignFlip,
    /// Skips the block and forwards its input.
    Stale,
}

impl ServerBehavior {
    /// `seed` feeds the noise generator; other modes ignore it.
    pub fn apply(&self, input: &Matrix, output: Matrix, seed: (u64, u64)) -> Matrix {
        match *self {
            ServerBehavior::Honest => output,
            ServerBehavior::Noisy(sigma) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.0);
                rng.set_stream(seed.1);
                let noise = Matrix::random_normal(output.rows(), output.cols(), sigma, &mut rng);
                output.add(&noise).expect("same shape")
            }
            ServerBehavior::Zeroing => Matrix::zeros(output.rows(), output.cols()),
            ServerBehavior::SignFlip => output.scale(-1.0),
            ServerBehavior::Stale => input.clone(),
        }
    }
}

impl fmt::Display for ServerBehavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ServerBehavior::Honest => f.write_str("honest"),
            ServerBehavior::Noisy(s) => write!(f, "noisy:{s}"),
            ServerBehavior::Zeroing => f.write_str("zeroing"),
            ServerBehavior::SignFlip => f.write_str("sign_flip"),
            ServerBehavior::Stale => f.write_str("stale"),
        }
    }
}

impl FromStr for ServerBehavior {
    type Err = FederationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FederationError::BadBehavior(s.to_string());
        Ok(match s.trim() {
            "honest" => ServerBehavior::Honest,
            "zeroing" => ServerBehavior::Zeroing,
            "sign_flip" => ServerBehavior::SignFlip,
            "stale" => ServerBehavior::Stale,
            other => {
                let sigma = other.strip_prefix("noisy:").ok_or_else(bad)?;
                let sigma: f64 = sigma.trim().parse().map_err(|_| bad())?;
                if !(sigma.is_finite() && sigma >= 0.0) {
                    return Err(bad());
                }
                ServerBehavior::Noisy(sigma)
            }
        })
    }
}

/// Weight compression applied at distribution time.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Compression {
    #[default]
    None,
    /// Keep the smallest rank reaching this energy ratio.
    Energy(f64),
    /// Keep the rank whose triple has this size relative to the dense matrix.
    Ratio(f64),
}

impl Compression {
    pub fn validate(&self) -> Result<(), FederationError> {
        match *self {
            Compression::None => Ok(()),
            Compression::Energy(e) if e > 0.0 && e <= 1.0 => Ok(()),
            Compression::Ratio(r) if r > 0.0 && r <= 1.0 => Ok(()),
            other => Err(FederationError::InvalidCompression(format!(
                "{other:?} outside (0, 1]"
            ))),
        }
    }

    /// Wire encoding for one tensor. Norm vectors always travel dense.
    pub fn encode(
        &self,
        slot: WeightSlot,
        w: &Matrix,
        exec: Exec,
    ) -> Result<WeightEncoding, FederationError> {
        if *self == Compression::None || !slot.is_matrix() {
            return Ok(WeightEncoding::Dense(w.clone()));
        }
        let (full, _) = svd_with(w, exec)?;
        let k = match *self {
            Compression::Energy(e) => full.spectrum().rank_for_energy(e)?,
            Compression::Ratio(r) => rank_for_compression(w.rows(), w.cols(), r),
            Compression::None => unreachable!(),
        }
        .clamp(1, full.full_rank().max(1));
        Ok(WeightEncoding::LowRank(truncate(&full, k)?.into_factors()))
    }
}

#[derive(Debug, Clone)]
pub struct ServerNode {
    pub behavior: ServerBehavior,
    pub status: ServerStatus,
    /// Blocks currently held, with their global indices.
    pub layers: Range<usize>,
    pub params: Vec<LayerParams>,
    calls: u64,
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub output: Matrix,
    pub ledger: TransferLedger,
    pub trace: Vec<Message>,
}

pub struct Simulation {
    model: ModelParams,
    plan: PartitionPlan,
    servers: Vec<ServerNode>,
    compression: Compression,
    bus: Bus,
    seed: u64,
    exec: Exec,
}

impl Simulation {
    pub fn new(
        model: ModelParams,
        plan: PartitionPlan,
        behaviors: Vec<ServerBehavior>,
        compression: Compression,
        seed: u64,
    ) -> Result<Self, FederationError> {
        Self::with_bus(model, plan, behaviors, compression, seed, Bus::default())
    }

    pub fn with_transport(
        model: ModelParams,
        plan: PartitionPlan,
        behaviors: Vec<ServerBehavior>,
        compression: Compression,
        seed: u64,
        transport: Box<dyn Transport>,
    ) -> Result<Self, FederationError> {
        Self::with_bus(
            model,
            plan,
            behaviors,
            compression,
            seed,
            Bus::new(transport),
        )
    }

    fn with_bus(
        model: ModelParams,
        plan: PartitionPlan,
        behaviors: Vec<ServerBehavior>,
        compression: Compression,
        seed: u64,
        bus: Bus,
    ) -> Result<Self, FederationError> {
        plan.validate(model.layers.len())?;
        compression.validate()?;
        let n = plan.entries().len();
        if behaviors.len() != n {
            return Err(FederationError::BehaviorCount {
                expected: n,
                got: behaviors.len(),
            });
        }
        if let Some(e) = plan.entries().iter().find(|e| e.server >= n) {
            return Err(FederationError::UnknownServer(e.server));
        }
        let servers = behaviors
            .into_iter()
            .map(|behavior| ServerNode {
                behavior,
                status: ServerStatus::Active,
                layers: 0..0,
                params: Vec::new(),
                calls: 0,
            })
            .collect();
        Ok(Self {
            model,
            plan,
            servers,
            compression,
            bus,
            seed,
            exec: Exec::default(),
        })
    }

    pub fn set_exec(&mut self, exec: Exec) {
        self.exec = exec;
    }

    pub fn model(&self) -> &ModelParams {
        &self.model
    }

    pub fn plan(&self) -> &PartitionPlan {
        &self.plan
    }

    pub fn server(&self, id: usize) -> Option<&ServerNode> {
        self.servers.get(id)
    }

    pub fn n_servers(&self) -> usize {
        self.servers.len()
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn bus_mut(&mut self) -> &mut Bus {
        &mut self.bus
    }

    pub fn ledger(&self) -> &TransferLedger {
        self.bus.ledger()
    }

    pub fn trace(&self) -> &[Message] {
        self.bus.trace()
    }

    fn node(&self, id: usize) -> Result<&ServerNode, FederationError> {
        self.servers
            .get(id)
            .ok_or(FederationError::UnknownServer(id))
    }

    /// Sends every server its shard according to the current plan.
    pub fn distribute_model(&mut self) -> Result<(), FederationError> {
        for e in self.plan.entries().to_vec() {
            let params = self.send_blocks(e.server, e.layers.clone())?;
            let node = &mut self.servers[e.server];
            node.layers = e.layers;
            node.params = params;
        }
        Ok(())
    }

    /// Ships blocks `range` to `server` and returns what the server rebuilt.
    fn send_blocks(
        &mut self,
        server: usize,
        range: Range<usize>,
    ) -> Result<Vec<LayerParams>, FederationError> {
        let cfg = self.model.config;
        let mut rebuilt = Vec::with_capacity(range.len());
        for l in range {
            let mut tensors = Vec::new();
            for (slot, w) in self.model.layers[l].tensors() {
                let weights = self.compression.encode(slot, &w, self.exec)?;
                let msg = self.bus.send(
                    NodeId::CLIENT,
                    NodeId::server(server),
                    Payload::WeightShard {
                        layer: l as u32,
                        slot,
                        weights,
                    },
                )?;
                match msg.payload {
                    Payload::WeightShard { slot, weights, .. } => {
                        tensors.push((slot, weights.to_matrix()))
                    }
                    _ => unreachable!("bus delivers what was sent"),
                }
            }
            rebuilt.push(LayerParams::from_tensors(&cfg, tensors)?);
        }
        Ok(rebuilt)
    }

    /// Runs `x` through `server`'s blocks, applying its behavior.
    pub fn server_forward(&mut self, server: usize, x: &Matrix) -> Result<Matrix, FederationError> {
        self.node(server)?;
        let node = &mut self.servers[server];
        let mut x = x.clone();
        for layer in &node.params {
            let out = layer_forward(&x, layer)?;
            let stream = ((server as u64) << 40) | node.calls;
            node.calls += 1;
            x = node.behavior.apply(&x, out, (self.seed, stream));
        }
        Ok(x)
    }

    /// Client embeds, servers chain their blocks, client projects. Any
    /// deactivated server still in the plan is reassigned first.
    pub fn run_pipeline(&mut self, tokens: &[usize]) -> Result<Matrix, FederationError> {
        self.reassign_deactivated()?;
        let mut x = embed(tokens, &self.model)?;
        let mut from = NodeId::CLIENT;
        for e in self.plan.entries().to_vec() {
            let to = NodeId::server(e.server);
            x = self.forward_activation(from, to, x)?;
            x = self.server_forward(e.server, &x)?;
            from = to;
        }
        let x = self.forward_activation(from, NodeId::CLIENT, x)?;
        Ok(project_output(&x, &self.model)?)
    }

    fn forward_activation(
        &mut self,
        from: NodeId,
        to: NodeId,
        x: Matrix,
    ) -> Result<Matrix, FederationError> {
        match self.bus.send(from, to, Payload::Activation(x))?.payload {
            Payload::Activation(m) => Ok(m),
            _ => unreachable!("bus delivers what was sent"),
        }
    }

    /// Marks `server` deactivated and notifies it.
    pub fn deactivate(&mut self, server: usize, by: NodeId) -> Result<(), FederationError> {
        self.node(server)?;
        self.servers[server].status = ServerStatus::Deactivated;
        self.bus.send(
            by,
            NodeId::server(server),
            Payload::StatusUpdate(ServerStatus::Deactivated),
        )?;
        Ok(())
    }

    fn is_active(&self, server: usize) -> bool {
        self.servers[server].status == ServerStatus::Active
    }

    /// Merges a deactivated server's range into its predecessor if active,
    /// otherwise its successor, and ships the blocks. Returns the
    /// replacement.
    pub fn reassign(&mut self, failed: usize) -> Result<usize, FederationError> {
        self.node(failed)?;
        if self.is_active(failed) {
            return Err(FederationError::NotDeactivated(failed));
        }
        let pos = self
            .plan
            .position(failed)
            .ok_or(FederationError::UnknownServer(failed))?;
        if !self
            .servers
            .iter()
            .any(|s| s.status == ServerStatus::Active)
        {
            return Err(FederationError::NoActiveServer);
        }
        let entries = self.plan.entries();
        let pick = |p: Option<usize>| {
            p.and_then(|p| entries.get(p))
                .map(|e| e.server)
                .filter(|&s| self.is_active(s))
        };
        let replacement = pick(pos.checked_sub(1))
            .or_else(|| pick(Some(pos + 1)))
            .ok_or(FederationError::NoEligibleReplacement(failed))?;
        let moved = entries[pos].layers.clone();

        self.bus.send(
            NodeId::CLIENT,
            NodeId::server(replacement),
            Payload::Reassignment {
                failed: NodeId::server(failed),
                replacement: NodeId::server(replacement),
                layers: moved.start as u32..moved.end as u32,
            },
        )?;
        let blocks = self.send_blocks(replacement, moved.clone())?;
        self.plan = self.plan.merge(failed, replacement)?;
        let node = &mut self.servers[replacement];
        if moved.start < node.layers.start {
            let mut params = blocks;
            params.append(&mut node.params);
            node.params = params;
        } else {
            node.params.extend(blocks);
        }
        node.layers = self.plan.entry(replacement).expect("merged").layers.clone();
        let dead = &mut self.servers[failed];
        dead.params.clear();
        dead.layers = 0..0;
        Ok(replacement)
    }

    /// Reassigns until no deactivated server remains in the plan.
    pub fn reassign_deactivated(&mut self) -> Result<Vec<(usize, usize)>, FederationError> {
        let mut done = Vec::new();
        loop {
            let pending: Vec<usize> = self
                .plan
                .entries()
                .iter()
                .map(|e| e.server)
                .filter(|&s| !self.is_active(s))
                .collect();
            if pending.is_empty() {
                return Ok(done);
            }
            let mut progressed = false;
            for s in pending {
                match self.reassign(s) {
                    Ok(r) => {
                        done.push((s, r));
                        progressed = true;
                    }
                    Err(FederationError::NoEligibleReplacement(_)) => {}
                    Err(FederationError::NoActiveServer) => {
                        return Err(FederationError::PipelineStalled(s))
                    }
                    Err(e) => return Err(e),
                }
            }
            if !progressed {
                return Err(FederationError::PipelineStalled(
                    self.plan.entries()[0].server,
                ));
            }
        }
    }
}

/// One-shot helper: distribute, run once, and return output, ledger and
/// trace.
pub fn run_pipeline(
    model: ModelParams,
    plan: PartitionPlan,
    behaviors: Vec<ServerBehavior>,
    compression: Compression,
    tokens: &[usize],
    seed: u64,
) -> Result<PipelineOutcome, FederationError> {
    let mut sim = Simulation::new(model, plan, behaviors, compression, seed)?;
    sim.distribute_model()?;
    let output = sim.run_pipeline(tokens)?;
    Ok(PipelineOutcome {
        output,
        ledger: sim.ledger().clone(),
        trace: sim.trace().to_vec(),
    })
}
