//! 1-shot prompt construction and the synthetic generation pass.

mod generate;
mod template;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use generate::{
    generate_pairs, synthetic_id, Exclusion, GenerateError, GenerateOptions, GenerationBatch,
};
pub use template::{
    build_prompt, parse_generation, FailureReason, GenerationOutcome, ParsedGeneration, PromptTemplate,
    TemplateError,
};

pub const TEMPERATURE: f64 = 0.9;
pub const TOP_K_RANGE: (u32, u32) = (50, 100);
pub const TOP_P_RANGE: (f64, f64) = (0.5, 0.95);
pub const MAX_LENGTH: u32 = 50;

/// Per-request decoding settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub do_sample: bool,
    pub temperature: f64,
    pub top_k: u32,
    pub top_p: f64,
    pub max_length: u32,
    pub seed: u64,
}

impl SamplingConfig {
    pub fn is_valid(&self) -> bool {
        self.do_sample
            && self.temperature > 0.0
            && (TOP_K_RANGE.0..=TOP_K_RANGE.1).contains(&self.top_k)
            && (TOP_P_RANGE.0..=TOP_P_RANGE.1).contains(&self.top_p)
            && self.top_p <= 1.0
            && self.max_length > 0
    }
}

/// Draws one request's settings: `top_k` uniform on [50, 100], `top_p`
/// uniform on [0.5, 0.95], fixed temperature and length cap.
pub fn draw_sampling_config<R: Rng + ?Sized>(rng: &mut R) -> SamplingConfig {
    SamplingConfig {
        do_sample: true,
        temperature: TEMPERATURE,
        top_k: rng.random_range(TOP_K_RANGE.0..=TOP_K_RANGE.1),
        top_p: rng.random_range(TOP_P_RANGE.0..=TOP_P_RANGE.1),
        max_length: MAX_LENGTH,
        seed: rng.random(),
    }
}

/// Stable 64-bit seed for one context, independent of scheduling order.
pub fn derive_seed(master_seed: u64, context_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update(context_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
