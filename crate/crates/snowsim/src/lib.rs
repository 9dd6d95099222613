//! Software model of the Snowflake CNN accelerator.
//!
//! The crate is organised around the pieces of the machine:
//!
//! * [`fixpoint`] — 16-bit fixed-point arithmetic and depth-minor tensors.
//! * [`isa`] / [`asm`] — the 32-bit instruction set, encoder/decoder and a
//!   small text assembler.
//! * [`control`] — the five-stage scalar pipeline that feeds vector work.
//! * [`compute`] — one compute cluster: 4 CUs, maps buffers, vMACs, vMAX
//!   units and trace decoders.
//! * [`memsys`] — a bandwidth/latency DRAM model with a transfer ledger.
//! * [`sim`] — glues the above together under one clock.
//! * [`layers`] / [`oracle`] — network descriptors and the bit-exact
//!   reference implementation used to verify simulations.
//! * [`codegen`] — compiles layer descriptors into instruction streams.
//! * [`report`] — benchmark driver and per-layer performance reports.

pub mod asm;
pub mod codegen;
pub mod compute;
pub mod control;
pub mod error;
pub mod fixpoint;
pub mod isa;
pub mod layers;
pub mod machine;
pub mod memsys;
pub mod oracle;
pub mod report;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
