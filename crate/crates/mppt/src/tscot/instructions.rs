//! The two elicitation instruction templates.
//!
//! Both builders are pure: the same inputs always produce byte-identical
//! instruction strings, which is what makes response caching sound. The
//! wording is fixed — including its slightly awkward grammar at γ=1 — so
//! cached responses stay valid across runs.

/// Stage-one instruction: ask for the angles from which people state their
/// stance on `target`.
pub fn build_s1(target: &str, gamma: usize) -> String {
    format!(
        "From what angles do you think people might state their stance on the {target}. \
         List the {gamma} angles you can think of."
    )
}

/// Suffix appended for the single automatic re-prompt after an item
/// under-count.
pub fn reprompt_suffix(gamma: usize) -> String {
    format!(" Return exactly {gamma} numbered items.")
}

/// Stage-two instruction: ask for a stance analysis of `text` toward
/// `target` under one `perspective`, ending with a positional judgment.
pub fn build_s2(target: &str, text: &str, perspective: &str) -> String {
    format!(
        "Oriented to the {target}, given the input {text}, and under the {perspective}, \
         give the stance analysis thinking or explanation. \
         Give a positional judgment (favor,against,none) at the end."
    )
}
