//! Recurrent arithmetic circuits, graph neural networks, and compilers between them.

pub mod activation;
pub mod builder;
pub mod compile;
pub mod dot;
pub mod circuit;
pub mod encoding;
pub mod exec;
pub mod gadgets;
pub mod gnn;
pub mod graph;
pub mod harness;
pub mod recurrent;

pub use activation::ActivationRegistry;
pub use builder::CircuitBuilder;
pub use circuit::{ExtendedCircuit, Gate, GateId, GateKind};
pub use exec::Exec;
pub use recurrent::{HaltingSpec, RecurrentCircuit};
