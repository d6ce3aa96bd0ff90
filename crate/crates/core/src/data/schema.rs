use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serialized value of an absent task label.
pub const MISSING: i64 = -1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    DisasterTypes,
    Informativeness,
    Humanitarian,
    DamageSeverity,
}

impl TaskId {
    /// Canonical task order. Label vectors and multi-task heads use it.
    pub const ALL: [TaskId; 4] = [
        TaskId::DisasterTypes,
        TaskId::Informativeness,
        TaskId::Humanitarian,
        TaskId::DamageSeverity,
    ];

    pub fn index(self) -> usize {
        match self {
            TaskId::DisasterTypes => 0,
            TaskId::Informativeness => 1,
            TaskId::Humanitarian => 2,
            TaskId::DamageSeverity => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::DisasterTypes => "disaster_types",
            TaskId::Informativeness => "informativeness",
            TaskId::Humanitarian => "humanitarian",
            TaskId::DamageSeverity => "damage_severity",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            TaskId::DisasterTypes => "dt",
            TaskId::Informativeness => "info",
            TaskId::Humanitarian => "hum",
            TaskId::DamageSeverity => "ds",
        }
    }

    pub fn schema(self) -> &'static TaskSchema {
        &CANONICAL[self.index()]
    }

    /// Parses a comma separated task list; `all` expands to the four tasks.
    pub fn parse_list(s: &str) -> Result<Vec<TaskId>> {
        if s.trim().eq_ignore_ascii_case("all") {
            return Ok(TaskId::ALL.to_vec());
        }
        let mut tasks: Vec<TaskId> = s
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(str::parse)
            .collect::<Result<_>>()?;
        tasks.sort();
        tasks.dedup();
        if tasks.is_empty() {
            return Err(Error::invalid("empty task list"));
        }
        Ok(tasks)
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match normalize(s).as_str() {
            "disaster types" | "disaster type" | "dt" | "disaster" => Ok(TaskId::DisasterTypes),
            "informativeness" | "informative" | "info" => Ok(TaskId::Informativeness),
            "humanitarian" | "hum" => Ok(TaskId::Humanitarian),
            "damage severity" | "ds" | "damage" | "severity" => Ok(TaskId::DamageSeverity),
            _ => Err(Error::UnknownTask(s.to_string())),
        }
    }
}

/// A task with its ordered class labels. The label order defines class indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSchema {
    pub task_id: TaskId,
    pub class_labels: Vec<String>,
}

// Alternative spellings found across the source datasets, after normalization.
const ALIASES: &[(TaskId, &str, usize)] = &[
    (TaskId::DisasterTypes, "other disasters", 5),
    (TaskId::DisasterTypes, "not disasters", 6),
    (TaskId::DisasterTypes, "none", 6),
    (TaskId::Informativeness, "non informative", 1),
    (TaskId::Informativeness, "uninformative", 1),
    (TaskId::Humanitarian, "affected individuals", 0),
    (TaskId::Humanitarian, "injured or dead people", 0),
    (TaskId::Humanitarian, "infrastructure damage", 1),
    (TaskId::Humanitarian, "vehicle damage", 1),
    (TaskId::Humanitarian, "rescue volunteering donation effort", 2),
    (TaskId::Humanitarian, "rescue volunteering or donation efforts", 2),
    (TaskId::Humanitarian, "other relevant information", 3),
    (TaskId::Humanitarian, "not relevant", 3),
    (TaskId::DamageSeverity, "severe", 0),
    (TaskId::DamageSeverity, "mild", 1),
    (TaskId::DamageSeverity, "little to no damage", 2),
    (TaskId::DamageSeverity, "little to no", 2),
    (TaskId::DamageSeverity, "little or no damage", 2),
    (TaskId::DamageSeverity, "little or none damage", 2),
    (TaskId::DamageSeverity, "none", 2),
];

static CANONICAL: LazyLock<[TaskSchema; 4]> = LazyLock::new(|| {
    let mk = |task_id, labels: &[&str]| TaskSchema {
        task_id,
        class_labels: labels.iter().map(|s| s.to_string()).collect(),
    };
    [
        mk(
            TaskId::DisasterTypes,
            &[
                "earthquake",
                "fire",
                "flood",
                "hurricane",
                "landslide",
                "other disaster",
                "not disaster",
            ],
        ),
        mk(TaskId::Informativeness, &["informative", "not informative"]),
        mk(
            TaskId::Humanitarian,
            &[
                "affected, injured, or dead people",
                "infrastructure and utility damage",
                "rescue volunteering or donation effort",
                "not humanitarian",
            ],
        ),
        mk(
            TaskId::DamageSeverity,
            &["severe damage", "mild damage", "little or none"],
        ),
    ]
});

/// Lower-cases, maps punctuation (`_`, `-`, `,`) to spaces and collapses whitespace.
fn normalize(s: &str) -> String {
    let mapped: String = s
        .chars()
        .map(|c| {
            if c.is_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                ' '
            }
        })
        .collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl TaskSchema {
    pub fn new(task_id: TaskId, class_labels: Vec<String>) -> Result<Self> {
        if class_labels.is_empty() {
            return Err(Error::invalid(format!("task {task_id} has no class labels")));
        }
        let mut seen: Vec<String> = class_labels.iter().map(|l| normalize(l)).collect();
        seen.sort();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid(format!("duplicate class label in task {task_id}")));
        }
        Ok(TaskSchema {
            task_id,
            class_labels,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_labels.len()
    }

    /// Zero-based index of `label_name` in schema order. Matching is case and
    /// punctuation insensitive; known alternative spellings are accepted.
    pub fn encode_label(&self, label_name: &str) -> Result<usize> {
        let wanted = normalize(label_name);
        if let Some(i) = self.class_labels.iter().position(|l| normalize(l) == wanted) {
            return Ok(i);
        }
        let canonical = self.task_id.schema();
        if canonical == self {
            if let Some((_, _, i)) = ALIASES
                .iter()
                .find(|(t, alias, _)| *t == self.task_id && *alias == wanted)
            {
                return Ok(*i);
            }
        }
        Err(Error::UnknownLabel {
            task: self.task_id,
            label: label_name.to_string(),
        })
    }

    pub fn label_name(&self, index: usize) -> Option<&str> {
        self.class_labels.get(index).map(String::as_str)
    }

    pub fn check_index(&self, index: i64) -> Result<()> {
        if index < 0 || index as usize >= self.num_classes() {
            return Err(Error::ClassIndex {
                task: self.task_id,
                index,
                num_classes: self.num_classes(),
            });
        }
        Ok(())
    }
}

/// Per-task class indices in canonical task order, `None` for a missing label.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct LabelVector(pub [Option<u8>; 4]);

impl LabelVector {
    pub fn empty() -> Self {
        LabelVector([None; 4])
    }

    pub fn single(task: TaskId, class: usize) -> Self {
        let mut v = Self::empty();
        v.set(task, Some(class));
        v
    }

    pub fn get(&self, task: TaskId) -> Option<usize> {
        self.0[task.index()].map(usize::from)
    }

    pub fn set(&mut self, task: TaskId, class: Option<usize>) {
        self.0[task.index()] = class.map(|c| c as u8);
    }

    /// Label as serialized: class index or [`MISSING`].
    pub fn raw(&self, task: TaskId) -> i64 {
        self.get(task).map_or(MISSING, |c| c as i64)
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(Option::is_none)
    }

    pub fn has_all(&self, tasks: &[TaskId]) -> bool {
        tasks.iter().all(|t| self.get(*t).is_some())
    }

    pub fn present(&self) -> impl Iterator<Item = (TaskId, usize)> + '_ {
        TaskId::ALL
            .into_iter()
            .filter_map(|t| self.get(t).map(|c| (t, c)))
    }

    /// Checks every present index against the canonical schemas.
    pub fn validate(&self) -> Result<()> {
        for (task, class) in self.present() {
            task.schema().check_index(class as i64)?;
        }
        Ok(())
    }
}

/// Builds a label vector from task → label-name pairs using the canonical schemas.
pub fn label_vector<'a, I>(raw: I) -> Result<LabelVector>
where
    I: IntoIterator<Item = (TaskId, &'a str)>,
{
    let mut v = LabelVector::empty();
    for (task, name) in raw {
        let idx = task.schema().encode_label(name)?;
        v.set(task, Some(idx));
    }
    if v.is_empty() {
        return Err(Error::invalid("at least one label required"));
    }
    Ok(v)
}
