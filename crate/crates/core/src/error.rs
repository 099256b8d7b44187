use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid drone spec: {0}")]
    InvalidSpec(String),
    #[error("fusion weight {0} outside [0, 1]")]
    InvalidWeight(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("sensor origin ({x:.3}, {y:.3}, {z:.3}) lies outside the map")]
    OutOfBounds { x: f64, y: f64, z: f64 },
    #[error("invalid map parameters: {0}")]
    InvalidParams(String),
    #[error("map text line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("no path found after {0} samples")]
    NoPathFound(usize),
    #[error("start position is in collision")]
    StartInCollision,
    #[error("invalid planner config: {0}")]
    InvalidConfig(String),
    #[error("face area is not usable after margins")]
    InfeasibleFace,
    #[error("map contains no free space")]
    NoFreeSpace,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FsmError {
    #[error("illegal transition from {state}: {reason}")]
    IllegalTransition { state: &'static str, reason: &'static str },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("scenario invalid: {0}")]
    ScenarioInvalid(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WindError {
    #[error("calibration diverged: {0}")]
    CalibrationDiverged(String),
    #[error("wrong test mode: expected {0}")]
    WrongMode(&'static str),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },
    #[error("invalid value for `{field}`: {msg}")]
    Invalid { field: String, msg: String },
}
