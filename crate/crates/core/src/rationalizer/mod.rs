//! Extractor / predictor networks and the masks passed between them.

mod checkpoint;
mod mask;
mod model;

pub use checkpoint::{fingerprint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use mask::{
    apply_mask, complement_input, complement_multiplier, gumbel_difference, mask_tokens, sample_selection,
    MaskMode, RationaleMask, SampleMode, SampledMask,
};
pub use model::{Extractor, ExtractorPass, ModelDims, Predictor, PredictorPass};
