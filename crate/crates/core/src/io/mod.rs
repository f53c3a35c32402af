//! File formats: WAV audio, JSON parameter checkpoints, JSONL telemetry.

pub mod checkpoint;
pub mod telemetry;
pub mod wav;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use telemetry::{read_jsonl, TelemetryWriter};
pub use wav::{read_wav, write_wav};
