//! Desk-scale synthetic cross-target stance task.
//!
//! Two fictional municipal targets, strongly lexicalized stance templates,
//! and a wordpiece vocabulary that covers everything the pipeline can put in
//! front of the classifier: the tweets themselves, the prompt glue, the mock
//! backend's perspectives and explanation phrasing, and the verbalizer plus
//! its lexicon expansions. Used by integration tests, the acceptance suite,
//! and CLI smoke runs; nothing here depends on network access.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::corpus::{CorpusError, Example, Split, StanceLabel, TaskSpec};
use crate::multipln::backbone::BackboneConfig;
use crate::multipln::tokenizer::{WordPieceTokenizer, SPECIAL_TOKENS};
use crate::tscot::PERSPECTIVE_BANK;
use crate::verbalizer::Lexicon;

/// Training-side target (all labeled examples).
pub const SOURCE_TARGET: &str = "stadium project";
/// Evaluation-side target (held out from training).
pub const DEST_TARGET: &str = "harbor tunnel";

/// Prompt/backbone sequence budget sized for the synthetic texts plus a mock
/// explanation and the template scaffold.
pub const MAX_PROMPT_LEN: usize = 160;

const FAVOR_TEMPLATES: [&str; 11] = [
    "I fully support the {t}, it is a wonderful idea and I agree with every part of it.",
    "We are delighted to endorse the {t} because it will bring real benefits to everyone.",
    "What a great step forward, the {t} deserves our praise and approval.",
    "I admire the {t} and happily back the plan, it makes the city better.",
    "Count me in, the {t} is exactly the right choice and I applaud it.",
    "The {t} is a splendid investment and we cheer for its success.",
    "Honestly the {t} sounds wonderful, I endorse it with pleasure.",
    "Our family supports the {t} and we are pleased with the direction.",
    "Good news at last, the {t} wins my full approval.",
    "I am glad the council backs the {t}, a truly positive move.",
    "Everyone I know thinks the {t} is a smart and welcome plan.",
];

const AGAINST_TEMPLATES: [&str; 11] = [
    "I strongly oppose the {t}, it is a terrible idea and I reject every part of it.",
    "We must protest the {t} because it will bring real harm to everyone.",
    "What an awful step backward, the {t} deserves our objection and disapproval.",
    "I resist the {t} and firmly condemn the plan, it makes the city worse.",
    "Count me out, the {t} is exactly the wrong choice and I denounce it.",
    "The {t} is a dreadful waste and we fear for its failure.",
    "Honestly the {t} sounds terrible, I reject it with anger.",
    "Our family opposes the {t} and we are unhappy with the direction.",
    "Bad news again, the {t} earns my full disapproval.",
    "I am upset the council backs the {t}, a truly negative move.",
    "Everyone I know thinks the {t} is a reckless and unwelcome plan.",
];

const NONE_TEMPLATES: [&str; 10] = [
    "The council mentioned the {t} during the meeting on Tuesday.",
    "A report about the {t} was published in the local paper.",
    "The {t} was discussed briefly at the end of the broadcast.",
    "The schedule lists a hearing on the {t} for next month.",
    "Officials reviewed the documents about the {t} without comment.",
    "The article summarizes the timeline of the {t} in three paragraphs.",
    "The {t} appears on the agenda between two other items.",
    "Reporters asked about the {t} and the office shared the dates.",
    "The map shows where the {t} would sit near the station.",
    "A public session about the {t} is planned for the spring.",
];

/// Wording the mock backend uses when it synthesizes an explanation; kept
/// here so the vocabulary covers every word that can reach a prompt. The
/// trailing judgment words are covered by the verbalizer entries.
const MOCK_EXPLANATION_FRAME: &str = "Viewed through the lens, the statement frames its subject \
     in a way that signals a clear orientation, and the wording carries evaluative weight rather \
     than neutral description. Judgment: general.";

fn template(label: StanceLabel, k: usize) -> &'static str {
    match label {
        StanceLabel::Favor => FAVOR_TEMPLATES[k],
        StanceLabel::Against => AGAINST_TEMPLATES[k],
        StanceLabel::None => NONE_TEMPLATES[k],
    }
}

/// The source→destination assignment for the synthetic corpus.
pub fn task() -> TaskSpec {
    TaskSpec::cross_target("stadium->harbor", SOURCE_TARGET, DEST_TARGET)
}

/// The full synthetic corpus: 32 labeled source-target examples followed by
/// 16 destination-target examples. Deterministic; labels cycle
/// favor/against/none and each class walks its own template list.
pub fn examples() -> Vec<Example> {
    let mut out = Vec::with_capacity(48);
    let mut counts = [0usize; 3];
    for i in 0..32 {
        let label = StanceLabel::from_index(i % 3);
        let k = counts[i % 3];
        counts[i % 3] += 1;
        out.push(Example {
            id: format!("syn-train-{i:02}"),
            text: template(label, k).replace("{t}", SOURCE_TARGET),
            target: SOURCE_TARGET.to_string(),
            label: Some(label),
            split: Split::Train,
        });
    }
    let mut counts = [0usize; 3];
    for i in 0..16 {
        let label = StanceLabel::from_index(i % 3);
        let k = counts[i % 3];
        counts[i % 3] += 1;
        out.push(Example {
            id: format!("syn-eval-{i:02}"),
            text: template(label, k).replace("{t}", DEST_TARGET),
            target: DEST_TARGET.to_string(),
            label: Some(label),
            split: Split::Test,
        });
    }
    out
}

/// Mirror of the tokenizer's basic pass: lowercased alphanumeric runs plus
/// single-character punctuation tokens.
fn collect_words(text: &str, out: &mut BTreeSet<String>) {
    let mut word = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
        } else {
            if !word.is_empty() {
                out.insert(std::mem::take(&mut word));
            }
            if !c.is_whitespace() {
                out.insert(c.to_string());
            }
        }
    }
    if !word.is_empty() {
        out.insert(word);
    }
}

/// Deterministic wordpiece vocabulary covering the synthetic corpus, the
/// prompt templates, the mock backend's output, and the expanded verbalizer.
/// `affirmative` is deliberately absent as a whole word — only the pieces
/// `affirm` + `##ative` are present — so one verbalizer unit always
/// exercises the multi-token path.
pub fn vocab() -> Vec<String> {
    let mut words = BTreeSet::new();
    for ex in examples() {
        collect_words(&ex.text, &mut words);
    }
    collect_words(SOURCE_TARGET, &mut words);
    collect_words(DEST_TARGET, &mut words);
    collect_words("from the perspective of and the attitude to is .", &mut words);
    for p in PERSPECTIVE_BANK {
        collect_words(p, &mut words);
    }
    collect_words(MOCK_EXPLANATION_FRAME, &mut words);
    for entry in Lexicon::bundled().iter() {
        collect_words(&entry.word, &mut words);
        for related in &entry.related {
            collect_words(related, &mut words);
        }
    }
    words.remove("affirmative");
    words.insert("affirm".to_string());
    words.insert("##ative".to_string());
    let mut vocab: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    vocab.extend(words);
    vocab
}

/// Lowercasing tokenizer over [`vocab`].
pub fn tokenizer() -> WordPieceTokenizer {
    WordPieceTokenizer::new(vocab(), true).expect("synthetic vocab is well-formed")
}

/// Compact masked-LM configuration sized for the synthetic task: two layers,
/// 64-dim, well under the small-model budget.
pub fn compact_backbone_config(vocab_size: usize) -> BackboneConfig {
    BackboneConfig {
        vocab_size,
        max_position: MAX_PROMPT_LEN,
        d_model: 64,
        n_heads: 4,
        d_ff: 128,
        n_layers: 2,
        dropout: 0.1,
    }
}

/// Write the corpus as a loadable dataset (`synthetic.csv` + `manifest.toml`)
/// under `dir`; returns the manifest path.
pub fn write_dataset(dir: &Path) -> Result<PathBuf, CorpusError> {
    let io = |source| CorpusError::Io { path: dir.display().to_string(), source };
    std::fs::create_dir_all(dir).map_err(io)?;
    let csv_path = dir.join("synthetic.csv");
    let mut writer = csv::Writer::from_path(&csv_path)
        .map_err(|source| CorpusError::Csv { path: csv_path.display().to_string(), source })?;
    let csv_err = |source| CorpusError::Csv { path: csv_path.display().to_string(), source };
    writer.write_record(["id", "text", "target", "label", "split"]).map_err(csv_err)?;
    for ex in examples() {
        let label = ex.label.expect("synthetic examples are labeled");
        let split = match ex.split {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        };
        writer
            .write_record([&ex.id, &ex.text, &ex.target, label.canonical_word(), split])
            .map_err(|source| CorpusError::Csv { path: csv_path.display().to_string(), source })?;
    }
    writer
        .flush()
        .map_err(|source| CorpusError::Io { path: csv_path.display().to_string(), source })?;

    let manifest = "\
name = \"synthetic-ctsd\"\n\
format = \"csv\"\n\n\
[columns]\n\
id = \"id\"\n\
text = \"text\"\n\
target = \"target\"\n\
label = \"label\"\n\
split = \"split\"\n\n\
[labels]\n\
favor = \"favor\"\n\
against = \"against\"\n\
none = \"none\"\n\n\
[[files]]\n\
path = \"synthetic.csv\"\n";
    let manifest_path = dir.join("manifest.toml");
    std::fs::write(&manifest_path, manifest)
        .map_err(|source| CorpusError::Io { path: manifest_path.display().to_string(), source })?;
    Ok(manifest_path)
}
