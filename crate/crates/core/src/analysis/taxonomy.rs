use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::tokenize;
use crate::error::{Error, Result};

/// Question classes, in the display order D, C, E, M, P.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaxonomyClass {
    Description,
    Comparison,
    Explanation,
    Method,
    Preference,
}

impl TaxonomyClass {
    pub const ALL: [TaxonomyClass; 5] = [
        TaxonomyClass::Description,
        TaxonomyClass::Comparison,
        TaxonomyClass::Explanation,
        TaxonomyClass::Method,
        TaxonomyClass::Preference,
    ];

    pub fn abbreviation(self) -> &'static str {
        match self {
            TaxonomyClass::Description => "D",
            TaxonomyClass::Comparison => "C",
            TaxonomyClass::Explanation => "E",
            TaxonomyClass::Method => "M",
            TaxonomyClass::Preference => "P",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for TaxonomyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// First-match-wins rules. Only the polar-question openers are configurable.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyRules {
    pub preference_openers: Vec<String>,
}

impl Default for TaxonomyRules {
    fn default() -> Self {
        TaxonomyRules {
            preference_openers: ["is", "are", "do", "does", "can", "should"]
                .map(String::from)
                .to_vec(),
        }
    }
}

impl TaxonomyRules {
    pub fn classify(&self, question: &str) -> TaxonomyClass {
        let lower = question.trim().to_lowercase();
        let padded = format!(" {lower} ");
        if lower.contains("difference between")
            || padded.contains(" vs ")
            || padded.contains(" vs. ")
            || lower.starts_with("compare")
        {
            return TaxonomyClass::Comparison;
        }
        let tokens = tokenize(&lower);
        match tokens.first().map(String::as_str) {
            Some("why") => TaxonomyClass::Explanation,
            Some("how") => TaxonomyClass::Method,
            Some(t) if self.preference_openers.iter().any(|p| p == t) => TaxonomyClass::Preference,
            _ => TaxonomyClass::Description,
        }
    }
}

pub fn classify_question(question: &str) -> TaxonomyClass {
    TaxonomyRules::default().classify(question)
}

/// Gold class by row, generated class by column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; 5]; 5],
    /// Row percentages; `None` for rows without gold support.
    pub percent: [Option<[f64; 5]>; 5],
}

impl ConfusionMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("gold\\generated");
        for c in TaxonomyClass::ALL {
            out.push(',');
            out.push_str(c.abbreviation());
        }
        out.push('\n');
        for (c, row) in TaxonomyClass::ALL.iter().zip(&self.percent) {
            out.push_str(c.abbreviation());
            for j in 0..5 {
                out.push(',');
                if let Some(r) = row {
                    out.push_str(&format!("{:.4}", r[j]));
                }
            }
            out.push('\n');
        }
        out
    }
}

pub fn taxonomy_confusion<G: AsRef<str>, H: AsRef<str>>(
    gold: &[G],
    generated: &[H],
) -> Result<ConfusionMatrix> {
    if gold.len() != generated.len() {
        return Err(Error::InvalidArgument(format!(
            "{} gold questions but {} generated",
            gold.len(),
            generated.len()
        )));
    }
    let rules = TaxonomyRules::default();
    let mut counts = [[0usize; 5]; 5];
    for (g, h) in gold.iter().zip(generated) {
        counts[rules.classify(g.as_ref()).index()][rules.classify(h.as_ref()).index()] += 1;
    }
    let percent = counts.map(|row| {
        let total: usize = row.iter().sum();
        (total > 0).then(|| row.map(|c| 100.0 * c as f64 / total as f64))
    });
    Ok(ConfusionMatrix { counts, percent })
}
