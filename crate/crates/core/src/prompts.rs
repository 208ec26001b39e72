//! Prompt templates and context rendering.
//!
//! Templates live in `templates/*.txt` and use `{name}` placeholders.
//! Rendering is a single pass, so substituted values may themselves contain
//! braces.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::types::{Task, ToolCall, TrajectoryState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateName {
    Progressive,
    Recovery,
    Forecast,
    Aggregation,
    Seqrev,
    Sleeptime,
}

impl TemplateName {
    pub const ALL: [TemplateName; 6] = [
        TemplateName::Progressive,
        TemplateName::Recovery,
        TemplateName::Forecast,
        TemplateName::Aggregation,
        TemplateName::Seqrev,
        TemplateName::Sleeptime,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::Progressive => "progressive",
            TemplateName::Recovery => "recovery",
            TemplateName::Forecast => "forecast",
            TemplateName::Aggregation => "aggregation",
            TemplateName::Seqrev => "seqrev",
            TemplateName::Sleeptime => "sleeptime",
        }
    }

    /// Placeholders a body for this template must use, no more and no less.
    pub fn expected_placeholders(self) -> &'static [&'static str] {
        match self {
            TemplateName::Progressive | TemplateName::Recovery => &["plan_history", "task", "trajectory"],
            TemplateName::Forecast | TemplateName::Seqrev => &["observation", "task", "trajectory"],
            TemplateName::Aggregation => &["candidates"],
            TemplateName::Sleeptime => &["task", "trajectory"],
        }
    }

    /// Phrase that identifies the template in rendered text.
    pub fn anchor(self) -> &'static str {
        match self {
            TemplateName::Progressive => "NEXT ACTION STEP",
            TemplateName::Recovery => "EXACTLY one distinct recovery plan",
            TemplateName::Forecast => "output a single decision",
            TemplateName::Aggregation => "starting points",
            TemplateName::Seqrev => "reflecting on the latest action's Observation",
            TemplateName::Sleeptime => "Make as many inferences as possible",
        }
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateName::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown template '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: TemplateName,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("template {name}: placeholders {found:?} do not match {expected:?}")]
    Placeholders {
        name: TemplateName,
        found: Vec<String>,
        expected: Vec<String>,
    },
    #[error("missing value for placeholder '{0}'")]
    MissingValue(String),
}

const PROGRESSIVE: &str = include_str!("../templates/progressive.txt");
const RECOVERY: &str = include_str!("../templates/recovery.txt");
const FORECAST: &str = include_str!("../templates/forecast.txt");
const AGGREGATION: &str = include_str!("../templates/aggregation.txt");
const SEQREV: &str = include_str!("../templates/seqrev.txt");
const SLEEPTIME: &str = include_str!("../templates/sleeptime.txt");
pub(crate) const MAIN: &str = include_str!("../templates/main.txt");
pub(crate) const PLANNING: &str = include_str!("../templates/planning.txt");

impl PromptTemplate {
    /// The shipped template.
    pub fn builtin(name: TemplateName) -> Self {
        let body = match name {
            TemplateName::Progressive => PROGRESSIVE,
            TemplateName::Recovery => RECOVERY,
            TemplateName::Forecast => FORECAST,
            TemplateName::Aggregation => AGGREGATION,
            TemplateName::Seqrev => SEQREV,
            TemplateName::Sleeptime => SLEEPTIME,
        };
        Self {
            name,
            body: body.to_string(),
        }
    }

    /// A custom body, accepted only if it uses exactly the expected
    /// placeholders.
    pub fn custom(name: TemplateName, body: impl Into<String>) -> Result<Self, TemplateError> {
        let t = Self {
            name,
            body: body.into(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn placeholders(&self) -> BTreeSet<String> {
        placeholders(&self.body)
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        let found = self.placeholders();
        let expected: BTreeSet<String> = self
            .name
            .expected_placeholders()
            .iter()
            .map(|s| s.to_string())
            .collect();
        if found == expected {
            Ok(())
        } else {
            Err(TemplateError::Placeholders {
                name: self.name,
                found: found.into_iter().collect(),
                expected: expected.into_iter().collect(),
            })
        }
    }

    pub fn render(&self, values: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
        render(&self.body, values)
    }
}

fn placeholder_at(body: &str, open: usize) -> Option<&str> {
    let rest = &body[open + 1..];
    let close = rest.find('}')?;
    let name = &rest[..close];
    (!name.is_empty() && name.bytes().all(|b| b.is_ascii_lowercase() || b == b'_')).then_some(name)
}

pub fn placeholders(body: &str) -> BTreeSet<String> {
    body.match_indices('{')
        .filter_map(|(i, _)| placeholder_at(body, i))
        .map(str::to_string)
        .collect()
}

pub fn render(body: &str, values: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(body.len());
    let mut cursor = 0;
    while let Some(rel) = body[cursor..].find('{') {
        let open = cursor + rel;
        out.push_str(&body[cursor..open]);
        match placeholder_at(body, open) {
            Some(name) => {
                let value = values
                    .get(name)
                    .ok_or_else(|| TemplateError::MissingValue(name.to_string()))?;
                out.push_str(value);
                cursor = open + name.len() + 2;
            }
            None => {
                out.push('{');
                cursor = open + 1;
            }
        }
    }
    out.push_str(&body[cursor..]);
    Ok(out)
}

/// Everything a prompt may draw on.
#[derive(Debug, Clone, Copy)]
pub struct PromptContext<'a> {
    pub task: &'a Task,
    pub trajectory: &'a TrajectoryState,
    /// The action whose tool call is in flight, if any.
    pub pending_action: Option<&'a ToolCall>,
    pub tools: &'a [String],
}

impl<'a> PromptContext<'a> {
    pub fn new(task: &'a Task, trajectory: &'a TrajectoryState) -> Self {
        Self {
            task,
            trajectory,
            pending_action: None,
            tools: &[],
        }
    }

    pub fn pending(mut self, action: &'a ToolCall) -> Self {
        self.pending_action = Some(action);
        self
    }

    pub fn with_tools(mut self, tools: &'a [String]) -> Self {
        self.tools = tools;
        self
    }

    pub(crate) fn values(&self) -> BTreeMap<&'static str, String> {
        let mut v = BTreeMap::new();
        v.insert("task", self.task.prompt.clone());
        v.insert("trajectory", render_trajectory(self.trajectory, self.pending_action));
        v.insert("tools", self.tools.join("\n"));
        v
    }
}

/// One block per step; an in-flight action is shown with a pending
/// observation. Empty trajectories render as the empty string.
pub fn render_trajectory(state: &TrajectoryState, pending: Option<&ToolCall>) -> String {
    let mut blocks: Vec<String> = state
        .steps
        .iter()
        .map(|step| {
            let mut lines = vec![format!("Step {}", step.index + 1)];
            if !step.thought.is_empty() {
                lines.push(format!("Thought: {}", step.thought));
            }
            lines.push(format!("Action: {}", step.action.render()));
            match &step.observation {
                Some(obs) => lines.push(format!("Observation: {}", obs.content)),
                None => lines.push("Observation: (pending)".to_string()),
            }
            lines.extend(step.notes.iter().map(|n| format!("Note: {n}")));
            lines.join("\n")
        })
        .collect();
    if let Some(action) = pending {
        blocks.push(format!(
            "Step {}\nAction: {}\nObservation: (pending)",
            state.steps.len() + 1,
            action.render()
        ));
    }
    blocks.join("\n\n")
}
