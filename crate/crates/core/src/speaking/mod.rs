//! Semantic tokens and an acoustic prompt to acoustic tokens: a grouped
//! masked token model decoded by group-iterative parallel decoding.

mod decode;
mod mask;
mod model;
mod train;

#[cfg(test)]
mod tests;

pub use decode::{g_ipd_decode, g_ipd_decode_traced, CacheMode, DecodeConfig, DecodeTrace};
pub use mask::{sample_group_mask, sample_group_mask_with, schedule_keep_count, Level, MaskPattern};
pub use model::{
    gmlm_loss, AcousticPrompt, GmlmInput, GmlmLogits, GmlmLoss, PromptCache, PromptSource, SpeakingConfig,
    SpeakingModel, HEADS,
};
pub use train::{
    prompt_from, speaker_recipe, train_speaker, training_mask, SpeakerIndex, TrainingMask, COARSE_LEVEL_PROB,
};
