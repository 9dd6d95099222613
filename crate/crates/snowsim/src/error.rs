use std::fmt;

/// Crate-wide error type.
#[derive(Debug)]
pub enum Error {
    /// Instruction field out of range while encoding; names the field.
    Encode(String),
    /// Word does not decode to a legal instruction.
    Decode(String),
    /// Assembler error with source line number.
    Asm { line: usize, msg: String },
    /// Out-of-bounds tensor/buffer access; names the offending address.
    Bounds(String),
    /// Simulation-time error (bad program, deadlock, hazard violation).
    Sim(String),
    /// Network descriptor parse or consistency error.
    Descriptor(String),
    /// Layer cannot be scheduled on the modeled machine.
    Codegen(String),
    /// Simulated output differs from the oracle.
    Verify(String),
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Encode(m) => write!(f, "encode error: {m}"),
            Error::Decode(m) => write!(f, "decode error: {m}"),
            Error::Asm { line, msg } => write!(f, "assembly error at line {line}: {msg}"),
            Error::Bounds(m) => write!(f, "bounds error: {m}"),
            Error::Sim(m) => write!(f, "simulation error: {m}"),
            Error::Descriptor(m) => write!(f, "descriptor error: {m}"),
            Error::Codegen(m) => write!(f, "codegen error: {m}"),
            Error::Verify(m) => write!(f, "verification failed: {m}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
