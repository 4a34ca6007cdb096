use std::collections::{BTreeMap, BTreeSet};

use crate::data::{Label, Manifest};
use crate::error::{Error, Result};

/// A test utterance paired with a healthy reference utterance of the same
/// item. Indices point into the manifest's entries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairSample {
    pub test: usize,
    pub reference: usize,
    pub item_id: String,
    /// The test speaker's label.
    pub label: Label,
}

/// One pair per (test utterance, reference speaker) sharing the item, never
/// pairing a speaker with itself. Ordered by test speaker, item, reference
/// speaker.
pub fn enumerate_pairs(
    manifest: &Manifest,
    test_speakers: &BTreeSet<String>,
    reference_speakers: &BTreeSet<String>,
) -> Result<Vec<PairSample>> {
    if reference_speakers.is_empty() {
        return Err(Error::Config("reference speaker set is empty".into()));
    }
    let speakers = manifest.speakers();
    for r in reference_speakers {
        match speakers.get(r) {
            Some(Label::Healthy) => {}
            Some(Label::Dysarthric) => {
                return Err(Error::Config(format!("reference speaker {r} is not healthy")))
            }
            None => return Err(Error::Config(format!("reference speaker {r} not in manifest"))),
        }
    }
    // item -> reference speaker -> entry
    let mut refs: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    // test speaker -> item -> entry
    let mut tests: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        if reference_speakers.contains(&e.speaker_id) {
            refs.entry(&e.item_id).or_default().insert(&e.speaker_id, i);
        }
        if test_speakers.contains(&e.speaker_id) {
            tests.entry(&e.speaker_id).or_default().insert(&e.item_id, i);
        }
    }
    let mut pairs = Vec::new();
    for (speaker, items) in &tests {
        for (item, &test) in items {
            let Some(candidates) = refs.get(item) else { continue };
            for (ref_speaker, &reference) in candidates {
                if ref_speaker == speaker {
                    continue;
                }
                pairs.push(PairSample {
                    test,
                    reference,
                    item_id: (*item).to_string(),
                    label: manifest.entries[test].label,
                });
            }
        }
    }
    Ok(pairs)
}
