//! Latent user-intent modeling for sequential recommenders.
//!
//! A conditional VAE infers a latent intent `z` from past behavior and
//! context `x`, trained to explain future behavior `y`. A sample from the
//! prior network `p(z|x)` is detached from the gradient tape and fused with
//! the GRU summary of the user's history to condition a softmax policy over
//! the catalog. The posterior-prior KL serves as a surprise signal for
//! analysing what the latent space captures. A regime-switching user
//! simulator supplies data with known intents.

pub mod analysis;
pub mod error;
pub mod harness;
pub mod latent_intent;
pub mod numerics;
pub mod recommender;
pub mod seeding;
pub mod simulator;

pub use error::{Error, Result};
