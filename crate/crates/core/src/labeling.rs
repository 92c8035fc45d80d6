//! Training captions: identity-tag pruning, trigger-word selection from
//! aggregated gender/age predictions, and caption assembly.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tags describing facial features that the face adapter should learn itself.
pub const DEFAULT_DENYLIST: &str = include_str!("data/identity_denylist.txt");

/// Ordered, lowercase, deduplicated tags.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct TagSet(Vec<String>);

impl TagSet {
    pub fn new<I, S>(tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for t in tags {
            let t = t.as_ref().trim().to_lowercase();
            if !t.is_empty() && seen.insert(t.clone()) {
                out.push(t);
            }
        }
        Self(out)
    }

    /// One tag per line; blank lines and `#` comments ignored.
    pub fn parse_lines(text: &str) -> Self {
        Self::new(text.lines().filter(|l| !l.trim_start().starts_with('#')))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::parse_lines(&std::fs::read_to_string(path)?))
    }

    pub fn default_denylist() -> Self {
        Self::parse_lines(DEFAULT_DENYLIST)
    }

    pub fn as_slice(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.0.iter().any(|t| t == tag)
    }
}

impl From<Vec<String>> for TagSet {
    fn from(v: Vec<String>) -> Self {
        Self::new(v)
    }
}

impl From<TagSet> for Vec<String> {
    fn from(t: TagSet) -> Self {
        t.0
    }
}

fn head_noun(tag: &str) -> &str {
    tag.split(|c: char| c.is_whitespace() || c == '_' || c == '-').filter(|w| !w.is_empty()).last().unwrap_or(tag)
}

fn singular(word: &str) -> &str {
    word.strip_suffix('s').filter(|w| !w.is_empty()).unwrap_or(word)
}

/// Drop every tag whose head noun (last word) is on the denylist, ignoring a
/// plural `s`. Everything else keeps its order.
pub fn prune_identity_tags(tags: &TagSet, denylist: &TagSet) -> TagSet {
    let denied: HashSet<&str> = denylist.as_slice().iter().map(|d| singular(head_noun(d))).collect();
    TagSet(tags.0.iter().filter(|t| !denied.contains(singular(head_noun(t)))).cloned().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgeBin {
    pub lo: f64,
    pub hi: f64,
}

impl AgeBin {
    pub fn midpoint(&self) -> f64 {
        (self.lo + self.hi) / 2.0
    }
}

/// Age bins of the attribute classifier; the open-ended `70+` bin is closed at 80.
pub fn default_age_bins() -> Vec<AgeBin> {
    [(0.0, 3.0), (3.0, 10.0), (10.0, 20.0), (20.0, 30.0), (30.0, 40.0), (40.0, 50.0), (50.0, 60.0), (60.0, 70.0), (70.0, 80.0)]
        .into_iter()
        .map(|(lo, hi)| AgeBin { lo, hi })
        .collect()
}

/// Per-image gender and age probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributePrediction {
    /// (male, female)
    pub gender_probs: [f64; 2],
    pub age_probs: Vec<f64>,
    #[serde(default = "default_age_bins")]
    pub age_bins: Vec<AgeBin>,
}

impl AttributePrediction {
    pub fn validate(&self) -> Result<()> {
        let check = |v: &[f64], what: &str| -> Result<()> {
            if v.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidInput(format!("{what} probabilities must be finite and non-negative")));
            }
            let s: f64 = v.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidInput(format!("{what} probabilities sum to {s}, expected 1")));
            }
            Ok(())
        };
        check(&self.gender_probs, "gender")?;
        check(&self.age_probs, "age")?;
        if self.age_probs.len() != self.age_bins.len() {
            return Err(Error::InvalidInput("age probabilities and bins differ in length".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

/// Caption token that binds an identity's overall characteristics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum TriggerWord {
    Boy,
    Girl,
    HandsomeMan,
    BeautifulWoman,
    MatureMan,
    MatureWoman,
}

impl TriggerWord {
    pub const ALL: [TriggerWord; 6] = [
        TriggerWord::Boy,
        TriggerWord::Girl,
        TriggerWord::HandsomeMan,
        TriggerWord::BeautifulWoman,
        TriggerWord::MatureMan,
        TriggerWord::MatureWoman,
    ];

    pub fn text(self) -> &'static str {
        match self {
            TriggerWord::Boy => "a boy, children",
            TriggerWord::Girl => "a girl, children",
            TriggerWord::HandsomeMan => "a handsome man",
            TriggerWord::BeautifulWoman => "a beautiful woman",
            TriggerWord::MatureMan => "a mature man",
            TriggerWord::MatureWoman => "a mature woman",
        }
    }

    /// Bins are left-closed: [0, 20), [20, 40), [40, ∞).
    pub fn for_attributes(gender: Gender, age: f64) -> Self {
        match (gender, age) {
            (Gender::Male, a) if a < 20.0 => TriggerWord::Boy,
            (Gender::Female, a) if a < 20.0 => TriggerWord::Girl,
            (Gender::Male, a) if a < 40.0 => TriggerWord::HandsomeMan,
            (Gender::Female, a) if a < 40.0 => TriggerWord::BeautifulWoman,
            (Gender::Male, _) => TriggerWord::MatureMan,
            (Gender::Female, _) => TriggerWord::MatureWoman,
        }
    }
}

impl fmt::Display for TriggerWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.text())
    }
}

impl From<TriggerWord> for String {
    fn from(t: TriggerWord) -> Self {
        t.text().to_string()
    }
}

impl TryFrom<String> for TriggerWord {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        TriggerWord::ALL
            .into_iter()
            .find(|t| t.text() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown trigger word `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedAttributes {
    pub gender: Gender,
    pub gender_probs: [f64; 2],
    pub expected_age: f64,
}

/// Element-wise mean of the predictions, then argmax gender (ties → male) and
/// probability-weighted bin-midpoint age.
pub fn aggregate_attributes(predictions: &[AttributePrediction]) -> Result<AggregatedAttributes> {
    let first = predictions.first().ok_or_else(|| Error::InvalidInput("no attribute predictions".into()))?;
    for p in predictions {
        p.validate()?;
        if p.age_bins != first.age_bins {
            return Err(Error::InvalidInput("attribute predictions use different age bins".into()));
        }
    }
    let n = predictions.len() as f64;
    let mut gender = [0.0; 2];
    let mut age = vec![0.0; first.age_probs.len()];
    for p in predictions {
        gender[0] += p.gender_probs[0];
        gender[1] += p.gender_probs[1];
        for (acc, v) in age.iter_mut().zip(&p.age_probs) {
            *acc += v;
        }
    }
    gender.iter_mut().for_each(|g| *g /= n);
    let expected_age = age.iter().zip(&first.age_bins).map(|(p, b)| p / n * b.midpoint()).sum();
    Ok(AggregatedAttributes {
        gender: if gender[1] > gender[0] { Gender::Female } else { Gender::Male },
        gender_probs: gender,
        expected_age,
    })
}

pub fn select_trigger_word(predictions: &[AttributePrediction]) -> Result<TriggerWord> {
    let agg = aggregate_attributes(predictions)?;
    Ok(TriggerWord::for_attributes(agg.gender, agg.expected_age))
}

/// Trigger word first, then the remaining tags, comma-space separated.
pub fn assemble_caption(trigger: TriggerWord, tags: &TagSet) -> String {
    std::iter::once(trigger.text()).chain(tags.as_slice().iter().map(String::as_str)).collect::<Vec<_>>().join(", ")
}

/// Write `<dir>/<stem>.txt` for each caption.
pub fn write_caption_sidecars<'a>(dir: &Path, captions: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (stem, caption) in captions {
        std::fs::write(dir.join(format!("{stem}.txt")), format!("{caption}\n"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_hot_age(age: f64) -> AttributePrediction {
        // a single bin whose midpoint is exactly `age`
        AttributePrediction { gender_probs: [1.0, 0.0], age_probs: vec![1.0], age_bins: vec![AgeBin { lo: age - 1.0, hi: age + 1.0 }] }
    }

    fn pred(gender: Gender, age: f64) -> AttributePrediction {
        let mut p = one_hot_age(age);
        if gender == Gender::Female {
            p.gender_probs = [0.0, 1.0];
        }
        p
    }

    #[test]
    fn prune_examples() {
        let deny = TagSet::default_denylist();
        let out = prune_identity_tags(&TagSet::new(["blue eyes", "smile", "earrings"]), &deny);
        assert_eq!(out, TagSet::new(["smile", "earrings"]));
        assert!(prune_identity_tags(&TagSet::default(), &deny).is_empty());
        assert!(prune_identity_tags(&TagSet::new(["thick lips", "pointy ears", "red lips"]), &deny).is_empty());
    }

    #[test]
    fn every_denylist_entry_prunes_itself_and_modified_forms() {
        let deny = TagSet::default_denylist();
        for d in deny.as_slice() {
            let tags = TagSet::new([d.clone(), format!("big {d}")]);
            assert!(prune_identity_tags(&tags, &deny).is_empty(), "{d}");
        }
        for keep in ["smile", "earrings", "necklace", "hat", "glasses", "open mouth"] {
            assert!(prune_identity_tags(&TagSet::new([keep]), &deny).contains(keep), "{keep}");
        }
    }

    #[test]
    fn tagset_normalizes() {
        let t = TagSet::new([" Smile ", "smile", "", "HAT"]);
        assert_eq!(t.as_slice(), ["smile", "hat"]);
    }

    #[test]
    fn trigger_examples() {
        assert_eq!(select_trigger_word(&[pred(Gender::Male, 25.0)]).unwrap().text(), "a handsome man");
        assert_eq!(select_trigger_word(&[pred(Gender::Female, 10.0)]).unwrap().text(), "a girl, children");
        assert_eq!(select_trigger_word(&[pred(Gender::Male, 45.0)]).unwrap().text(), "a mature man");
        assert!(select_trigger_word(&[]).is_err());
    }

    #[test]
    fn table_is_total_and_boundaries_go_up() {
        assert_eq!(TriggerWord::for_attributes(Gender::Male, 20.0), TriggerWord::HandsomeMan);
        assert_eq!(TriggerWord::for_attributes(Gender::Female, 40.0), TriggerWord::MatureWoman);
        assert_eq!(TriggerWord::for_attributes(Gender::Female, 19.999), TriggerWord::Girl);
        assert_eq!(TriggerWord::for_attributes(Gender::Male, 0.0), TriggerWord::Boy);
        let texts: HashSet<_> = TriggerWord::ALL.iter().map(|t| t.text()).collect();
        assert_eq!(texts.len(), 6);
    }

    #[test]
    fn averaging_outvotes_single_outlier() {
        let preds = [pred(Gender::Female, 30.0), pred(Gender::Female, 30.0), pred(Gender::Male, 30.0)];
        assert_eq!(select_trigger_word(&preds).unwrap(), TriggerWord::BeautifulWoman);
    }

    #[test]
    fn fairface_bins_expected_age() {
        let mut probs = vec![0.0; 9];
        probs[3] = 0.5; // 20-30
        probs[4] = 0.5; // 30-40
        let p = AttributePrediction { gender_probs: [0.9, 0.1], age_probs: probs, age_bins: default_age_bins() };
        let agg = aggregate_attributes(&[p]).unwrap();
        assert!((agg.expected_age - 30.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_unnormalized_predictions() {
        let mut p = pred(Gender::Male, 30.0);
        p.gender_probs = [0.7, 0.7];
        assert!(select_trigger_word(&[p]).is_err());
    }

    #[test]
    fn caption_examples() {
        assert_eq!(assemble_caption(TriggerWord::HandsomeMan, &TagSet::new(["smile"])), "a handsome man, smile");
        assert_eq!(assemble_caption(TriggerWord::Girl, &TagSet::default()), "a girl, children");
        assert_eq!(
            assemble_caption(TriggerWord::MatureWoman, &TagSet::new(["hat", "necklace"])),
            "a mature woman, hat, necklace"
        );
    }

    #[test]
    fn trigger_word_serde() {
        let s = serde_json::to_string(&TriggerWord::Girl).unwrap();
        assert_eq!(s, "\"a girl, children\"");
        assert_eq!(serde_json::from_str::<TriggerWord>(&s).unwrap(), TriggerWord::Girl);
        assert!(serde_json::from_str::<TriggerWord>("\"a cat\"").is_err());
    }

    fn arb_tag() -> impl Strategy<Value = String> {
        let words = prop::sample::select(vec!["blue", "red", "big", "eyes", "lips", "smile", "hat", "earrings", "nose", "ears", "necklace"]);
        prop::collection::vec(words, 1..3).prop_map(|w| w.join(" "))
    }

    fn arb_pred() -> impl Strategy<Value = AttributePrediction> {
        (0.0f64..=1.0, prop::collection::vec(0.01f64..1.0, 9)).prop_map(|(m, raw)| {
            let s: f64 = raw.iter().sum();
            AttributePrediction { gender_probs: [m, 1.0 - m], age_probs: raw.iter().map(|v| v / s).collect(), age_bins: default_age_bins() }
        })
    }

    proptest! {
        #[test]
        fn prune_is_idempotent_and_never_adds(tags in prop::collection::vec(arb_tag(), 0..8)) {
            let deny = TagSet::default_denylist();
            let t = TagSet::new(tags);
            let once = prune_identity_tags(&t, &deny);
            prop_assert_eq!(prune_identity_tags(&once, &deny), once.clone());
            prop_assert!(once.as_slice().iter().all(|x| t.contains(x)));
        }

        #[test]
        fn trigger_is_permutation_invariant(mut preds in prop::collection::vec(arb_pred(), 1..6), seed in any::<u64>()) {
            let a = select_trigger_word(&preds).unwrap();
            let n = preds.len();
            preds.rotate_left((seed as usize) % n);
            preds.reverse();
            prop_assert_eq!(select_trigger_word(&preds).unwrap(), a);
        }

        #[test]
        fn caption_starts_with_trigger(i in 0usize..6, tags in prop::collection::vec(arb_tag(), 0..5)) {
            let t = TriggerWord::ALL[i];
            prop_assert!(assemble_caption(t, &TagSet::new(tags)).starts_with(t.text()));
        }
    }
}
