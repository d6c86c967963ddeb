//! Report type shared by every hypothesis / class-membership check.

use serde::Serialize;

/// One checked relation. Failures are entries, not errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub relation: String,
    pub index: Option<usize>,
    pub passed: bool,
    /// Worst-case margin when the relation is quantitative (positive = satisfied).
    pub margin: Option<f64>,
    /// Inclusive node-index ranges witnessing a nonempty set.
    pub witness: Option<Vec<(usize, usize)>>,
    pub detail: String,
}

impl Check {
    pub fn new(relation: impl Into<String>, index: Option<usize>, passed: bool) -> Self {
        Self {
            relation: relation.into(),
            index,
            passed,
            margin: None,
            witness: None,
            detail: String::new(),
        }
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.margin = Some(margin);
        self
    }

    pub fn with_witness(mut self, witness: Vec<(usize, usize)>) -> Self {
        self.witness = Some(witness);
        self
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn extend(&mut self, other: ValidationReport) {
        self.checks.extend(other.checks);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// First check matching `relation` and `index`.
    pub fn find(&self, relation: &str, index: Option<usize>) -> Option<&Check> {
        self.checks
            .iter()
            .find(|c| c.relation == relation && c.index == index)
    }
}
