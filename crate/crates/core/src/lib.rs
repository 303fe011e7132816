//! Choquet-regularized exploratory mean-variance portfolio control.
//!
//! * [`choquet`]: distortion functions, the Choquet regularizer and its
//!   mean-variance constrained maximizer.
//! * [`policy`]: location-scale exploratory samplers with densities.
//! * [`closedform`]: value functions, optimal policies, exploration costs and
//!   exact policy iteration.
//! * [`market`]: discounted-wealth simulator and Monte Carlo objectives.
//! * [`rl`]: the actor-critic trainer with a learned Lagrange multiplier.

// NaN inputs must fail the positivity checks, so `!(x > 0.0)` is deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod choquet;
pub mod closedform;
pub mod error;
pub mod market;
pub mod policy;
pub mod quad;
pub mod rl;

pub use choquet::{BuiltinDistortion, DistortionFn, QuantileFn};
pub use closedform::{EmvSpec, FeedbackPolicy, MarketParams, QuadraticValueFn};
pub use error::{Error, Result};
pub use market::{McEstimate, SimConfig, WealthPath};
pub use policy::{LocationScalePolicy, RegularizerMode};
pub use rl::{ActorParams, CriticForm, CriticParams, TrainConfig, TrainLog, Trainer};
