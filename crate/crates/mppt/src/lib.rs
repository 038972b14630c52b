//! Cross-target stance detection with LLM-elicited perspectives and
//! multi-perspective prompt tuning.
//!
//! The pipeline has two halves. The first half talks to an instruction-tuned
//! LLM: it elicits a set of analysis perspectives for a target and then, per
//! input text, collects a natural-language explanation under each
//! perspective ([`tscot`]). The second half turns those artifacts into
//! masked-LM prompts, fuses the per-perspective mask representations with an
//! attention head, and scores stance labels through an expanded verbalizer
//! ([`multipln`]). [`corpus`] handles datasets, task construction, and F1
//! reporting; [`harness`] wires everything into training, evaluation,
//! ablation, and sweep runs; [`synthetic`] generates the small deterministic
//! task used by the tests.

pub mod corpus;
pub mod harness;
pub mod multipln;
pub mod synthetic;
pub mod tscot;
pub mod verbalizer;
