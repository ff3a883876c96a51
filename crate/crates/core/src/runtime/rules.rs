// SPDX-License-Identifier: Apache-2.0
use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::GraphError;

use super::TaskKind;

/// Guard over the dependent task's iteration index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    #[default]
    Always,
    /// `i > c`
    IterGreaterThan(i64),
    /// `i == c`
    IterEquals(i64),
}

impl Condition {
    pub fn holds(self, iteration: usize) -> bool {
        let i = iteration as i64;
        match self {
            Condition::Always => true,
            Condition::IterGreaterThan(c) => i > c,
            Condition::IterEquals(c) => i == c,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Always => f.write_str("true"),
            Condition::IterGreaterThan(c) => write!(f, "i > {c}"),
            Condition::IterEquals(c) => write!(f, "i == {c}"),
        }
    }
}

/// Under `condition`, a `dependent` task in iteration `i` waits for the
/// `prerequisite` task of iteration `i - distance`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DependenceRule {
    pub dependent: TaskKind,
    pub prerequisite: TaskKind,
    pub distance: usize,
    #[serde(default)]
    pub condition: Condition,
}

impl fmt::Display for DependenceRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.depend({}, {}", self.dependent, self.prerequisite, self.distance)?;
        if self.condition != Condition::Always {
            write!(f, ", {}", self.condition)?;
        }
        f.write_str(")")
    }
}

/// Build one rule, rejecting negative distances.
pub fn depend(
    dependent: impl Into<TaskKind>,
    prerequisite: impl Into<TaskKind>,
    distance: i64,
    condition: Option<Condition>,
) -> Result<DependenceRule, GraphError> {
    let distance = usize::try_from(distance)
        .map_err(|_| GraphError::Rule(format!("dependence distance must be non-negative, got {distance}")))?;
    Ok(DependenceRule {
        dependent: dependent.into(),
        prerequisite: prerequisite.into(),
        distance,
        condition: condition.unwrap_or_default(),
    })
}

/// Declared task kinds plus the rules between them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet {
    kinds: BTreeSet<TaskKind>,
    rules: Vec<DependenceRule>,
}

impl RuleSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_kinds<K: Into<TaskKind>>(kinds: impl IntoIterator<Item = K>) -> Self {
        let mut set = Self::new();
        for k in kinds {
            set.declare(k);
        }
        set
    }

    pub fn declare(&mut self, kind: impl Into<TaskKind>) -> &mut Self {
        self.kinds.insert(kind.into());
        self
    }

    pub fn kinds(&self) -> &BTreeSet<TaskKind> {
        &self.kinds
    }

    pub fn rules(&self) -> &[DependenceRule] {
        &self.rules
    }

    /// Record `dependent.depend(prerequisite, distance, condition)`. Returns
    /// a [`DependentRules`] so further prerequisites of the same kind chain.
    pub fn depend(
        &mut self,
        dependent: impl Into<TaskKind>,
        prerequisite: impl Into<TaskKind>,
        distance: i64,
        condition: Option<Condition>,
    ) -> Result<DependentRules<'_>, GraphError> {
        let rule = depend(dependent, prerequisite, distance, condition)?;
        let dependent = rule.dependent.clone();
        self.insert(rule)?;
        Ok(DependentRules { set: self, dependent })
    }

    pub fn insert(&mut self, rule: DependenceRule) -> Result<(), GraphError> {
        for kind in [&rule.dependent, &rule.prerequisite] {
            if !self.kinds.contains(kind) {
                return Err(GraphError::Rule(format!("task kind `{kind}` was never declared")));
            }
        }
        self.rules.push(rule);
        Ok(())
    }

    /// Copy without the rules matching `pred`.
    pub fn without(&self, pred: impl Fn(&DependenceRule) -> bool) -> RuleSet {
        RuleSet {
            kinds: self.kinds.clone(),
            rules: self.rules.iter().filter(|r| !pred(r)).cloned().collect(),
        }
    }
}

/// Chaining handle: `Task3.depend(Task1, 0).depend(Task2, 0)`.
pub struct DependentRules<'a> {
    set: &'a mut RuleSet,
    dependent: TaskKind,
}

impl DependentRules<'_> {
    pub fn depend(
        self,
        prerequisite: impl Into<TaskKind>,
        distance: i64,
        condition: Option<Condition>,
    ) -> Result<Self, GraphError> {
        let rule = depend(self.dependent.clone(), prerequisite, distance, condition)?;
        self.set.insert(rule)?;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conditions() {
        assert!(Condition::Always.holds(0));
        assert!(!Condition::IterGreaterThan(0).holds(0));
        assert!(Condition::IterGreaterThan(0).holds(1));
        assert!(Condition::IterEquals(2).holds(2));
        assert!(!Condition::IterEquals(2).holds(3));
    }

    #[test]
    fn negative_distance_rejected() {
        assert!(matches!(depend("A", "B", -1, None), Err(GraphError::Rule(_))));
        let r = depend("Task0", "Task3", 1, Some(Condition::IterGreaterThan(0))).unwrap();
        assert_eq!(r.to_string(), "Task0.depend(Task3, 1, i > 0)");
    }

    #[test]
    fn chained_declarations_accumulate() {
        let mut set = RuleSet::with_kinds(["Task0", "Task1", "Task2", "Task3"]);
        set.depend("Task3", "Task1", 0, None).unwrap().depend("Task2", 0, None).unwrap();
        assert_eq!(set.rules().len(), 2);
        assert!(set.rules().iter().all(|r| r.dependent.as_str() == "Task3"));
        assert!(matches!(set.depend("Task9", "Task0", 0, None), Err(GraphError::Rule(_))));
    }

    #[test]
    fn rules_serialize() {
        let mut set = RuleSet::with_kinds(["A", "B"]);
        set.depend("A", "B", 1, Some(Condition::IterGreaterThan(0))).unwrap();
        let json = serde_json::to_string(&set).unwrap();
        let back: RuleSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, set);
    }
}
