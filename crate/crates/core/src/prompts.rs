//! Prompt templates. The files under `assets/prompts` are the source of truth
//! and are embedded byte for byte.

/// Sent alongside the image to vision-language backends.
pub const VLM_EXTRACT: &str = include_str!("../assets/prompts/vlm_extract.txt");

/// Text-only refinement of raw OCR output. The OCR text replaces
/// [`OCR_CAPTION_SLOT`].
pub const OCR_REFINE: &str = include_str!("../assets/prompts/ocr_refine.txt");

pub const OCR_CAPTION_SLOT: &str = "{ocr_extracted_caption}";

/// Version tag of the instruction enrichment prompts below. Their wording is
/// a reconstruction written for this crate, not a published reference prompt.
pub const ENRICH_VERSION: &str = "enrich_v1";
/// System message for each enrichment round; the user message is the current
/// draft verbatim. Slots: `{round}`, `{rounds}`, `{quote}`.
pub const ENRICH_SYSTEM: &str = include_str!("../assets/prompts/enrich_v1_system.txt");

pub fn ocr_refine_prompt(ocr_text: &str) -> String {
    OCR_REFINE.replacen(OCR_CAPTION_SLOT, ocr_text, 1)
}

pub fn enrich_system_prompt(round: usize, rounds: usize, quote: &str) -> String {
    ENRICH_SYSTEM
        .replace("{round}", &round.to_string())
        .replace("{rounds}", &rounds.to_string())
        .replace("{quote}", quote)
}
