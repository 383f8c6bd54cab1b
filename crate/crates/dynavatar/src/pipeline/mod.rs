//! End-to-end commands: generate, train (stage 1 and 2), animate, eval,
//! ablate. Each command reads/writes artifacts under a working directory and
//! records provenance in a `run.json` sidecar.

mod commands;
mod provenance;

// commands are re-exported once implemented
// pub use commands::{cmd_ablate, cmd_animate, cmd_eval, cmd_generate, cmd_train};
pub use provenance::{hash_bytes, hash_dir, hash_file, RunRecord};
