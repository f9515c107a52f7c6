use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("infeasible configuration: {0}")]
    Infeasible(String),
    #[error("dry state at node {node}, layer {layer}: h = {h:e}")]
    Dry { node: usize, layer: usize, h: f64 },
    #[error("non-finite value at node {node}")]
    NonFinite { node: usize },
    #[error("mesh tangling at node {node}: J = {jac:e}")]
    Tangled { node: usize, jac: f64 },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
