//! Windowed frequency analysis: STFT/iSTFT, mel filterbanks, spectral
//! costs, multi-scale metrics, and signal embeddings.

mod cost;
mod embedding;
mod mel;
mod metrics;
mod signal;
mod stft;
mod window;

pub use cost::{compressed_stft_cost, CompressedTarget, SpectralCostConfig};
pub use embedding::{cosine_distance, embed, embedding_cosine_distance, EmbeddingConfig};
pub use mel::{hz_to_mel, log_mel, mel_to_hz, LogMelConfig, LogMelPlan, MelFilterbank, LOG_MAG_FLOOR};
pub use metrics::{l1_log_mss, l1_mss, MssConfig};
pub use signal::Signal;
pub use stft::{istft, stft, Spectrogram, StftConfig, StftPlan};
pub use window::{inverse_envelope, ola_envelope, periodic_hann};
