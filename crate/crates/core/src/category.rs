//! The closed set of PHI categories used by the benchmark corpus.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Dataset PHI category. `Others` is the sink for HIPAA identifiers that
/// match no concrete category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PhiCategory {
    Name,
    Profession,
    Location,
    Age,
    Date,
    Contact,
    Id,
    Others,
}

impl PhiCategory {
    /// All categories in ordinal order, `Others` last.
    pub const ALL: [PhiCategory; 8] = [
        PhiCategory::Name,
        PhiCategory::Profession,
        PhiCategory::Location,
        PhiCategory::Age,
        PhiCategory::Date,
        PhiCategory::Contact,
        PhiCategory::Id,
        PhiCategory::Others,
    ];

    /// The seven concrete categories, in ordinal order.
    pub const CONCRETE: [PhiCategory; 7] = [
        PhiCategory::Name,
        PhiCategory::Profession,
        PhiCategory::Location,
        PhiCategory::Age,
        PhiCategory::Date,
        PhiCategory::Contact,
        PhiCategory::Id,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PhiCategory::Name => "NAME",
            PhiCategory::Profession => "PROFESSION",
            PhiCategory::Location => "LOCATION",
            PhiCategory::Age => "AGE",
            PhiCategory::Date => "DATE",
            PhiCategory::Contact => "CONTACT",
            PhiCategory::Id => "ID",
            PhiCategory::Others => "OTHERS",
        }
    }

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn is_concrete(self) -> bool {
        self != PhiCategory::Others
    }
}

impl fmt::Display for PhiCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown PHI category `{0}`")]
pub struct UnknownCategory(pub String);

impl FromStr for PhiCategory {
    type Err = UnknownCategory;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        PhiCategory::ALL.iter().copied().find(|c| c.as_str() == upper).ok_or_else(|| UnknownCategory(s.to_string()))
    }
}
