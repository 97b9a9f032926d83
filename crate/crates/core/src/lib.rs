//! Directing simulated robots through a chat model with a human on the loop.
//!
//! A registry of high-level robot functions is rendered into a system
//! prompt; the model's replies are parsed into programs of a small command
//! language, statically validated, held for approval, and executed against
//! a deterministic simulated world whose report feeds the next turn.

pub mod dsl;
pub mod gateway;
pub mod parsing;
pub mod prompting;
pub mod promptstore;
pub mod registry;
pub mod report;
pub mod runner;
pub mod scenario;
pub mod session;
pub mod worlds;
