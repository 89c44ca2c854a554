use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ground, LlmClient, PromptBundle};
use crate::error::{Error, Result};
use crate::pddl::{goal_equivalent, GoalExpr};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "DC")]
    DirectConcepts,
    #[serde(rename = "UA-Cmd")]
    UnambiguousAction,
    #[serde(rename = "UG-Cmd")]
    UnambiguousGoal,
    #[serde(rename = "CR")]
    CoReference,
    #[serde(rename = "SR-D")]
    SpatialRelation,
    #[serde(rename = "RL-D")]
    RegionLevel,
    #[serde(rename = "AR-A")]
    AmbiguousRole,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::DirectConcepts,
        Category::UnambiguousAction,
        Category::UnambiguousGoal,
        Category::CoReference,
        Category::SpatialRelation,
        Category::RegionLevel,
        Category::AmbiguousRole,
    ];

    pub fn abbreviation(self) -> &'static str {
        match self {
            Category::DirectConcepts => "DC",
            Category::UnambiguousAction => "UA-Cmd",
            Category::UnambiguousGoal => "UG-Cmd",
            Category::CoReference => "CR",
            Category::SpatialRelation => "SR-D",
            Category::RegionLevel => "RL-D",
            Category::AmbiguousRole => "AR-A",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundingTrial {
    pub category: Category,
    pub instruction: String,
    pub truth: BTreeMap<String, GoalExpr>,
    /// Other assignments that also count as correct.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alternatives: Vec<BTreeMap<String, GoalExpr>>,
}

impl GroundingTrial {
    /// True when `goals` matches the truth or an alternative for every
    /// robot, treating missing robots as no-op.
    pub fn accepts(&self, goals: &BTreeMap<String, GoalExpr>) -> Result<bool> {
        for assignment in std::iter::once(&self.truth).chain(&self.alternatives) {
            let robots: BTreeSet<&String> = assignment.keys().chain(goals.keys()).collect();
            let noop = GoalExpr::noop();
            let mut all = true;
            for r in robots {
                if !goal_equivalent(goals.get(r).unwrap_or(&noop), assignment.get(r).unwrap_or(&noop))? {
                    all = false;
                    break;
                }
            }
            if all {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

/// Reads JSON lines, skipping blank lines.
pub fn load_trials(text: &str) -> Result<Vec<GroundingTrial>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).map_err(Error::from)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub index: usize,
    pub category: Category,
    pub correct: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub correct: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundingScore {
    pub per_category: BTreeMap<Category, CategoryScore>,
    pub correct: usize,
    pub total: usize,
    pub outcomes: Vec<TrialOutcome>,
}

impl GroundingScore {
    pub fn total_text(&self) -> String {
        format!("{} / {}", self.correct, self.total)
    }
}

impl fmt::Display for GroundingScore {
    /// Header row of category abbreviations and one row of counts.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cats: Vec<Category> = Category::ALL.into_iter().filter(|c| self.per_category.contains_key(c)).collect();
        let mut header: Vec<String> = cats.iter().map(|c| c.abbreviation().to_string()).collect();
        header.push("Total".into());
        let mut row: Vec<String> = cats.iter().map(|c| self.per_category[c].correct.to_string()).collect();
        row.push(self.total_text());
        let widths: Vec<usize> = header.iter().zip(&row).map(|(h, r)| h.len().max(r.len())).collect();
        let line = |cells: &[String]| cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect::<Vec<_>>().join("  ");
        writeln!(f, "{}", line(&header))?;
        write!(f, "{}", line(&row))
    }
}

/// Grounds every trial and counts those whose per-robot goals are
/// equivalent to the expected ones. Client and parse errors count as wrong.
pub fn score_trials(trials: &[GroundingTrial], bundle: &PromptBundle, client: &dyn LlmClient) -> Result<GroundingScore> {
    if trials.is_empty() {
        return Err(Error::InvalidParameter("no grounding trials".into()));
    }
    let outcomes: Vec<TrialOutcome> = trials
        .par_iter()
        .enumerate()
        .map(|(index, t)| {
            let verdict = ground(&t.instruction, bundle, client)
                .map_err(|e| e.to_string())
                .and_then(|r| t.accepts(&r.per_robot_goals).map_err(|e| e.to_string()));
            if let Err(e) = &verdict {
                log::warn!("trial {index} ({}): {e}", t.category.abbreviation());
            }
            TrialOutcome { index, category: t.category, correct: verdict == Ok(true), error: verdict.err() }
        })
        .collect();
    let mut per_category: BTreeMap<Category, CategoryScore> = BTreeMap::new();
    for o in &outcomes {
        let s = per_category.entry(o.category).or_default();
        s.total += 1;
        s.correct += o.correct as usize;
    }
    let correct = outcomes.iter().filter(|o| o.correct).count();
    Ok(GroundingScore { per_category, correct, total: outcomes.len(), outcomes })
}
