//! Forecasting indoor air temperature, CO₂ and relative humidity one step
//! (five minutes) ahead from the previous hour of room-sensor readings.
//!
//! * [`pipeline`]: CSV ingestion, gap handling, scaling, windowing, splits.
//! * [`numerics`]: matrices and layer kernels with hand-written gradients.
//! * [`models`]: LSTM, GRU and CNN-LSTM forecasters with exact BPTT.
//! * [`training`]: MAE loss, Adam, plateau LR schedule, early stopping.
//! * [`evaluation`]: MAE/MSE/RMSE/R² per target and globally.
//! * [`synthdata`]: seeded synthetic room data with known ground truth.

pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod numerics;
pub mod models;
pub mod pipeline;
pub mod synthdata;
pub mod training;

pub use error::{Error, Result};
