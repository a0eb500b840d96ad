//! Client / server / verifier runtime: wire codec, message bus with byte
//! ledger, pipeline execution and reassignment of failed servers.

pub mod bus;
pub mod codec;
pub mod sim;
pub mod transport;

use thiserror::Error;

use crate::svdkit::SvdError;
use crate::transformer::ModelError;

pub use bus::{trace_csv, Bus, Tally, TransferLedger};
pub use codec::{
    decode, encode, DecodeError, Message, MessageKind, NodeId, Payload, Role, ServerStatus,
    WeightEncoding, HEADER_LEN,
};
pub use sim::{run_pipeline, Compression, PipelineOutcome, ServerBehavior, ServerNode, Simulation};
pub use transport::{InProcess, LoopbackTcp, Transport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FederationError {
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Svd(#[from] SvdError),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("unknown server {0}")]
    UnknownServer(usize),
    #[error("server {0} is still active")]
    NotDeactivated(usize),
    #[error("no active neighbour can take over server {0}")]
    NoEligibleReplacement(usize),
    #[error("no active server remains")]
    NoActiveServer,
    #[error("pipeline stalled at server {0}: no active replacement")]
    PipelineStalled(usize),
    #[error("{got} behaviors given for {expected} servers")]
    BehaviorCount { expected: usize, got: usize },
    #[error("invalid compression target: {0}")]
    InvalidCompression(String),
    #[error("unknown server behavior '{0}'")]
    BadBehavior(String),
}

impl From<std::io::Error> for FederationError {
    fn from(e: std::io::Error) -> Self {
        FederationError::Transport(e.to_string())
    }
}
