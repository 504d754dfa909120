//! Linguistic decomposition of referring expressions.
//!
//! An expression such as "The red car in the middle of the image parked in
//! front of the white car" is split into three components:
//!
//! - the *global* component: the verbatim expression;
//! - the *class-level* component: the canonical name of the detected
//!   category ("car");
//! - the *descriptive* component: the expression with the first category
//!   mention replaced by the mask token ("The red [masked] in the middle
//!   of the image parked in front of the white car").
//!
//! Category detection is rule-based: case-insensitive surface-form
//! matching on word boundaries, earliest match first, ties at the same
//! position broken by vocabulary order.

use crate::error::{Error, Result};
use std::ops::Range;
use std::path::Path;

/// Token substituted for the detected category word.
pub const MASK_TOKEN: &str = "[masked]";

/// Class-level stand-in used when no category word is present.
pub const UNKNOWN_CATEGORY_TOKEN: &str = "[nocat]";

/// The eight object categories, in fixed order.
pub const CANONICAL_CATEGORIES: [&str; 8] = [
    "people", "car", "motor", "bicycle", "tricycle", "truck", "bus", "boat",
];

/// Bundled default vocabulary file.
const DEFAULT_VOCAB: &str = include_str!("../assets/category_vocab.txt");

#[derive(Clone, Debug)]
pub struct CategoryEntry {
    pub id: usize,
    pub canonical: String,
    pub surface_forms: Vec<String>,
}

/// Ordered category list with surface forms; validated on construction.
#[derive(Clone, Debug)]
pub struct CategoryVocabulary {
    entries: Vec<CategoryEntry>,
}

impl CategoryVocabulary {
    /// Parses the plain-text key-value format: one `name: form, form, ...`
    /// line per category. Lines starting with `#` are comments.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, forms) = line.split_once(':').ok_or_else(|| {
                Error::InvalidInput(format!("vocabulary line missing ':': {line:?}"))
            })?;
            let canonical = name.trim().to_string();
            let surface_forms: Vec<String> = forms
                .split(',')
                .map(|f| f.trim().to_string())
                .filter(|f| !f.is_empty())
                .collect();
            entries.push(CategoryEntry {
                id: entries.len(),
                canonical,
                surface_forms,
            });
        }
        let vocab = Self { entries };
        vocab.validate()?;
        Ok(vocab)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// The vocabulary shipped with the crate.
    pub fn bundled() -> Self {
        Self::parse(DEFAULT_VOCAB).expect("bundled vocabulary is valid")
    }

    fn validate(&self) -> Result<()> {
        if self.entries.len() != CANONICAL_CATEGORIES.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} categories, got {}",
                CANONICAL_CATEGORIES.len(),
                self.entries.len()
            )));
        }
        for (entry, expected) in self.entries.iter().zip(CANONICAL_CATEGORIES) {
            if entry.canonical != expected {
                return Err(Error::InvalidInput(format!(
                    "category {} must be {expected:?}, got {:?}",
                    entry.id, entry.canonical
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for entry in &self.entries {
            if !entry.surface_forms.iter().any(|f| f == &entry.canonical) {
                return Err(Error::InvalidInput(format!(
                    "surface forms of {:?} must include the canonical name",
                    entry.canonical
                )));
            }
            for form in &entry.surface_forms {
                if form.chars().any(|c| c.is_uppercase()) {
                    return Err(Error::InvalidInput(format!(
                        "surface form {form:?} must be lowercase"
                    )));
                }
                if !seen.insert(form.clone()) {
                    return Err(Error::InvalidInput(format!(
                        "surface form {form:?} appears in more than one category"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn entries(&self) -> &[CategoryEntry] {
        &self.entries
    }

    pub fn canonical_name(&self, id: usize) -> &str {
        &self.entries[id].canonical
    }

    pub fn id_of(&self, canonical: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.canonical == canonical)
    }
}

/// The three decomposed expression variants.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinguisticTriple {
    /// Verbatim input expression.
    pub global_text: String,
    /// Canonical category name, or [`UNKNOWN_CATEGORY_TOKEN`].
    pub class_text: String,
    /// Expression with the first category mention masked, or the verbatim
    /// expression when no category was found.
    pub descriptive_text: String,
    pub category_id: Option<usize>,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

fn matches_at(expression: &str, pos: usize, form: &str) -> bool {
    let bytes = expression.as_bytes();
    let end = pos + form.len();
    if end > bytes.len() {
        return false;
    }
    if !bytes[pos..end].eq_ignore_ascii_case(form.as_bytes()) {
        return false;
    }
    // Surface forms are ASCII, so a successful byte comparison guarantees
    // `end` lands on a char boundary.
    match expression[end..].chars().next() {
        Some(c) if is_word_char(c) => false,
        _ => true,
    }
}

/// Finds the category whose surface form matches earliest in the
/// expression on word boundaries. Ties at the same position go to the
/// lower vocabulary index. Returns the byte range of the matched form.
pub fn detect_category(
    expression: &str,
    vocab: &CategoryVocabulary,
) -> Option<(usize, Range<usize>)> {
    let mut prev: Option<char> = None;
    for (pos, ch) in expression.char_indices() {
        let at_word_start = !prev.map(is_word_char).unwrap_or(false);
        prev = Some(ch);
        if !at_word_start || !is_word_char(ch) {
            continue;
        }
        for entry in &vocab.entries {
            for form in &entry.surface_forms {
                if matches_at(expression, pos, form) {
                    return Some((entry.id, pos..pos + form.len()));
                }
            }
        }
    }
    None
}

/// Replaces `span` with `mask_token`, leaving the rest of the expression
/// (including later occurrences of the same word) unchanged.
pub fn mask_category(expression: &str, span: Range<usize>, mask_token: &str) -> Result<String> {
    if span.start > span.end
        || span.end > expression.len()
        || !expression.is_char_boundary(span.start)
        || !expression.is_char_boundary(span.end)
    {
        return Err(Error::Range(format!(
            "span {span:?} is not a valid character range of a {}-byte expression",
            expression.len()
        )));
    }
    let mut out = String::with_capacity(expression.len() + mask_token.len());
    out.push_str(&expression[..span.start]);
    out.push_str(mask_token);
    out.push_str(&expression[span.end..]);
    Ok(out)
}

/// Decomposes an expression into its global, class-level, and descriptive
/// components. Absence of a category word is a valid outcome: the class
/// component becomes [`UNKNOWN_CATEGORY_TOKEN`] and the descriptive
/// component stays verbatim.
pub fn decompose(expression: &str, vocab: &CategoryVocabulary) -> LinguisticTriple {
    match detect_category(expression, vocab) {
        Some((id, span)) => {
            let masked = mask_category(expression, span, MASK_TOKEN)
                .expect("detected span is a valid range");
            LinguisticTriple {
                global_text: expression.to_string(),
                class_text: vocab.canonical_name(id).to_string(),
                descriptive_text: masked,
                category_id: Some(id),
            }
        }
        None => LinguisticTriple {
            global_text: expression.to_string(),
            class_text: UNKNOWN_CATEGORY_TOKEN.to_string(),
            descriptive_text: expression.to_string(),
            category_id: None,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const PAPER_SENTENCE: &str =
        "The red car in the middle of the image parked in front of the white car";

    fn vocab() -> CategoryVocabulary {
        CategoryVocabulary::bundled()
    }

    /// Brute-force oracle: try every surface form at every byte offset and
    /// keep the candidate with the smallest (position, category) key.
    fn detect_oracle(expr: &str, vocab: &CategoryVocabulary) -> Option<(usize, Range<usize>)> {
        let mut best: Option<(usize, usize, Range<usize>)> = None;
        for entry in vocab.entries() {
            for form in &entry.surface_forms {
                for pos in 0..=expr.len() {
                    if !expr.is_char_boundary(pos) {
                        continue;
                    }
                    let word_start = pos == 0
                        || expr[..pos]
                            .chars()
                            .last()
                            .map(|c| !c.is_alphanumeric())
                            .unwrap_or(true);
                    if word_start && matches_at(expr, pos, form) {
                        let better = match &best {
                            None => true,
                            Some((bp, bid, _)) => (pos, entry.id) < (*bp, *bid),
                        };
                        if better {
                            best = Some((pos, entry.id, pos..pos + form.len()));
                        }
                    }
                }
            }
        }
        best.map(|(_, id, span)| (id, span))
    }

    #[test]
    fn detects_first_car_in_paper_sentence() {
        let v = vocab();
        let (id, span) = detect_category(PAPER_SENTENCE, &v).unwrap();
        assert_eq!(v.canonical_name(id), "car");
        assert_eq!(&PAPER_SENTENCE[span.clone()], "car");
        assert_eq!(span.start, PAPER_SENTENCE.find("car").unwrap());
    }

    #[test]
    fn no_category_word_is_a_valid_result() {
        assert!(detect_category("a shiny object near the tree", &vocab()).is_none());
    }

    #[test]
    fn earliest_match_agrees_with_position_scan_oracle() {
        let v = vocab();
        let cases = [
            "the bus behind two cars",
            "cars and a bus",
            "a person walking past three boats and a truck",
            "motorbike next to the bicycle",
            "CARS everywhere",
            "scarship is not a word but ships are",
            "carsick people",
        ];
        for expr in cases {
            assert_eq!(
                detect_category(expr, &v),
                detect_oracle(expr, &v),
                "mismatch for {expr:?}"
            );
        }
    }

    #[test]
    fn masking_keeps_later_occurrences() {
        let v = vocab();
        let (_, span) = detect_category(PAPER_SENTENCE, &v).unwrap();
        let masked = mask_category(PAPER_SENTENCE, span, MASK_TOKEN).unwrap();
        assert_eq!(
            masked,
            "The red [masked] in the middle of the image parked in front of the white car"
        );
    }

    #[test]
    fn masking_whole_string_and_spliced_case() {
        assert_eq!(mask_category("car", 0..3, MASK_TOKEN).unwrap(), "[masked]");
        // Splice oracle: prefix + token + suffix.
        let expr = "two people near the bus";
        let span = 4..10;
        let expected = format!("{}{}{}", &expr[..4], MASK_TOKEN, &expr[10..]);
        assert_eq!(mask_category(expr, span, MASK_TOKEN).unwrap(), expected);
        assert_eq!(expected, "two [masked] near the bus");
    }

    #[test]
    fn out_of_range_span_is_a_range_error() {
        assert!(matches!(
            mask_category("car", 0..9, MASK_TOKEN),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn decompose_matches_paper_example() {
        let t = decompose(PAPER_SENTENCE, &vocab());
        assert_eq!(t.global_text, PAPER_SENTENCE);
        assert_eq!(t.class_text, "car");
        assert_eq!(
            t.descriptive_text,
            "The red [masked] in the middle of the image parked in front of the white car"
        );
    }

    #[test]
    fn decompose_single_category_word() {
        let t = decompose("boat", &vocab());
        assert_eq!(
            (
                t.global_text.as_str(),
                t.class_text.as_str(),
                t.descriptive_text.as_str()
            ),
            ("boat", "boat", "[masked]")
        );
    }

    #[test]
    fn decompose_without_category_uses_unknown_token() {
        let t = decompose("something else entirely", &vocab());
        assert_eq!(t.class_text, UNKNOWN_CATEGORY_TOKEN);
        assert_eq!(t.descriptive_text, t.global_text);
        assert_eq!(t.category_id, None);
    }

    #[test]
    fn bundled_vocabulary_is_valid_and_ordered() {
        let v = vocab();
        let names: Vec<&str> = v.entries().iter().map(|e| e.canonical.as_str()).collect();
        assert_eq!(names, CANONICAL_CATEGORIES);
    }

    #[test]
    fn duplicate_surface_forms_are_rejected() {
        let text = "people: people\ncar: car, people\nmotor: motor\nbicycle: bicycle\n\
                    tricycle: tricycle\ntruck: truck\nbus: bus\nboat: boat";
        assert!(CategoryVocabulary::parse(text).is_err());
    }

    proptest! {
        /// Round trip: when the head noun is a canonical name, substituting
        /// the class text back into d reconstructs l exactly.
        #[test]
        fn roundtrip_on_canonical_head_sentences(
            cat_idx in 0usize..8,
            color in prop::sample::select(vec!["red", "blue", "green", "dark"]),
            suffix in prop::sample::select(vec![
                "in the middle of the image",
                "near the left edge",
                "under the bridge",
            ]),
        ) {
            let v = vocab();
            let cat = v.canonical_name(cat_idx).to_string();
            let expr = format!("the {color} {cat} {suffix}");
            let t = decompose(&expr, &v);
            prop_assert_eq!(t.category_id, Some(cat_idx));
            let rebuilt = t.descriptive_text.replacen(MASK_TOKEN, &t.class_text, 1);
            prop_assert_eq!(rebuilt, t.global_text);
        }

        /// Idempotence and the exactly-one-mask-token invariant.
        #[test]
        fn idempotent_and_single_mask(expr in "[ a-z]{0,40}") {
            let v = vocab();
            let t = decompose(&expr, &v);
            prop_assert_eq!(decompose(&t.global_text, &v), t.clone());
            let masks = t.descriptive_text.matches(MASK_TOKEN).count();
            if t.category_id.is_some() {
                prop_assert_eq!(masks, 1);
            } else {
                prop_assert_eq!(masks, 0);
            }
        }
    }
}
