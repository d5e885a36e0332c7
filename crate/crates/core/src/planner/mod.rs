//! Task plans, the line-oriented plan grammar, benchmark tasks and planning
//! backends (deterministic mocks, HTTP LLM, and the rule-monitor baseline).
//!
//! Plan grammar: one step per line, `N. <phrase>`. Lines that do not start
//! with a number and a period are ignored; parsing stops at `DONE`. Phrases
//! are matched case-insensitively against this table (a trailing period and
//! leading articles in arguments are dropped):
//!
//! | phrase                                   | verb                       |
//! |------------------------------------------|----------------------------|
//! | `walk to X`, `go to X`, `navigate to X`  | Walk                       |
//! | `pick up X`, `gather X`, `grab X`, `take X` | PickUp                  |
//! | `place X in Y`, `place X on Y`, `put X in/on Y` | Place               |
//! | `open X` / `close X`                     | Open / Close               |
//! | `start cooking`, `turn on X`, `switch on X` | StartCook               |
//! | `ensure X is in a safe location`, `ensure X is safe`, `move X to a safe location` | EnsureSafe |
//! | `secure X in a designated area`, `secure X` | SecureObject            |
//! | `handle safety issue with X`             | EnsureSafe if X names an agent, else SecureObject |
//! | `done`                                   | Done                       |

mod backend;
pub mod ltl;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{distance, Attribute, Entity, EntityCategory, RoomType, Scene};

pub use backend::{
    initial_user_prompt, mitigations_for, prompt_hash, replan_user_prompt, system_prompt, LlmPlanner,
    MockPlanner, PlanResponse, PlannerBackend, PLAN_BASE_TEMPLATE, PLAN_REPLAN_TEMPLATE, PLAN_SAFE_TEMPLATE,
};
pub use ltl::{builtin_rules, load_rules, ltl_evaluate, LtlRule, RuleSet, SafetySignal, Violation};

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("plan has no DONE step")]
    UnterminatedPlan,
    #[error("unrecognized plan step: {0}")]
    UnknownAction(String),
    #[error("planning backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("plan reply unparsable after {attempts} attempts: {last}")]
    PlanParseFailure { attempts: usize, last: String },
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("bad pattern `{0}`")]
    BadPattern(String),
    #[error("invalid rule {id}: {reason}")]
    BadRule { id: String, reason: String },
    #[error("rule file: {0}")]
    RuleFile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verb {
    Walk,
    PickUp,
    Place,
    Open,
    Close,
    StartCook,
    HandleSafetyIssue,
    EnsureSafe,
    SecureObject,
    Done,
}

impl Verb {
    pub fn is_mitigation(self) -> bool {
        matches!(
            self,
            Verb::EnsureSafe | Verb::SecureObject | Verb::HandleSafetyIssue
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub index: usize,
    pub verb: Verb,
    pub args: Vec<String>,
    pub raw: String,
}

impl Action {
    pub fn new(verb: Verb, args: Vec<String>) -> Self {
        let mut a = Action {
            index: 0,
            verb,
            args,
            raw: String::new(),
        };
        a.raw = a.phrase();
        a
    }

    /// Canonical phrase without the step number.
    pub fn phrase(&self) -> String {
        let arg = |k: usize| self.args.get(k).map(String::as_str).unwrap_or("");
        match self.verb {
            Verb::Walk => format!("Walk to {}", arg(0)),
            Verb::PickUp => format!("Pick up {}", arg(0)),
            Verb::Place => format!("Place {} in {}", arg(0), arg(1)),
            Verb::Open => format!("Open {}", arg(0)),
            Verb::Close => format!("Close {}", arg(0)),
            Verb::StartCook if self.args.is_empty() => "Start cooking".to_string(),
            Verb::StartCook => format!("Turn on {}", arg(0)),
            Verb::HandleSafetyIssue => format!("Handle safety issue with {}", arg(0)),
            Verb::EnsureSafe => format!("Ensure {} is in a safe location", arg(0)),
            Verb::SecureObject => format!("Secure {} in a designated area", arg(0)),
            Verb::Done => "DONE".to_string(),
        }
    }

    /// Same verb and arguments, ignoring index and raw text.
    pub fn same_step(&self, other: &Action) -> bool {
        self.verb == other.verb
            && self.args.len() == other.args.len()
            && self
                .args
                .iter()
                .zip(&other.args)
                .all(|(a, b)| a.eq_ignore_ascii_case(b))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}. {}", self.index, self.phrase())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPlan {
    pub task_name: String,
    pub steps: Vec<Action>,
    /// 0 for the initial plan, incremented by every replan.
    pub revision: u32,
}

impl TaskPlan {
    /// Builds a plan from steps, renumbering and regenerating raw text.
    pub fn from_steps(task_name: &str, steps: Vec<Action>, revision: u32) -> Self {
        let steps = steps
            .into_iter()
            .enumerate()
            .map(|(i, mut a)| {
                a.index = i;
                a.raw = format!("{i}. {}", a.phrase());
                a
            })
            .collect();
        TaskPlan {
            task_name: task_name.to_string(),
            steps,
            revision,
        }
    }
}

pub fn render_plan(plan: &TaskPlan) -> String {
    let mut out = String::new();
    for a in &plan.steps {
        out.push_str(&format!("{}. {}\n", a.index, a.phrase()));
    }
    out
}

fn strip_article(s: &str) -> &str {
    for art in ["the ", "a ", "an "] {
        if s.len() > art.len() && s[..art.len()].eq_ignore_ascii_case(art) {
            return s[art.len()..].trim_start();
        }
    }
    s
}

fn arg(s: &str) -> Option<String> {
    let s = strip_article(s.trim());
    (!s.is_empty()).then(|| s.to_string())
}

/// Case-insensitive prefix match returning the remainder.
fn after<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    (s.len() >= prefix.len() && s[..prefix.len()].eq_ignore_ascii_case(prefix)).then(|| &s[prefix.len()..])
}

fn before_suffix<'a>(s: &'a str, suffix: &str) -> Option<&'a str> {
    let n = s.len();
    (n >= suffix.len() && s[n - suffix.len()..].eq_ignore_ascii_case(suffix)).then(|| &s[..n - suffix.len()])
}

fn split_pair(s: &str) -> Option<(String, String)> {
    let lower = s.to_ascii_lowercase();
    let at = [" in ", " on ", " into ", " onto "]
        .iter()
        .filter_map(|sep| lower.find(sep).map(|i| (i, sep.len())))
        .min()?;
    Some((arg(&s[..at.0])?, arg(&s[at.0 + at.1..])?))
}

/// Bare category named by an argument such as `child`, `Knife` or `knife_0`.
pub fn category_of_arg(name: &str) -> Option<EntityCategory> {
    let trimmed = name.trim();
    if let Ok(c) = trimmed.parse::<EntityCategory>() {
        return Some(c);
    }
    let base = trimmed
        .trim_end_matches(|c: char| c.is_ascii_digit())
        .trim_end_matches('_');
    base.parse().ok()
}

fn parse_phrase(phrase: &str) -> Option<(Verb, Vec<String>)> {
    let p = phrase.trim().trim_end_matches('.').trim();
    let one = |verb: Verb, rest: &str| arg(rest).map(|a| (verb, vec![a]));
    if p.eq_ignore_ascii_case("done") {
        return Some((Verb::Done, Vec::new()));
    }
    if p.eq_ignore_ascii_case("start cooking") {
        return Some((Verb::StartCook, Vec::new()));
    }
    for prefix in ["walk to ", "go to ", "navigate to "] {
        if let Some(rest) = after(p, prefix) {
            return one(Verb::Walk, rest);
        }
    }
    for prefix in ["pick up ", "gather ", "grab ", "take "] {
        if let Some(rest) = after(p, prefix) {
            return one(Verb::PickUp, rest);
        }
    }
    for prefix in ["place ", "put "] {
        if let Some(rest) = after(p, prefix) {
            return split_pair(rest).map(|(a, b)| (Verb::Place, vec![a, b]));
        }
    }
    for prefix in ["turn on ", "switch on ", "start cooking "] {
        if let Some(rest) = after(p, prefix) {
            return one(Verb::StartCook, rest);
        }
    }
    if let Some(rest) = after(p, "ensure ") {
        for suffix in [" is in a safe location", " is safe", " is at a safe location"] {
            if let Some(x) = before_suffix(rest, suffix) {
                return one(Verb::EnsureSafe, x);
            }
        }
        return None;
    }
    if let Some(rest) = after(p, "move ") {
        return before_suffix(rest, " to a safe location").and_then(|x| one(Verb::EnsureSafe, x));
    }
    if let Some(rest) = after(p, "secure ") {
        let x = before_suffix(rest, " in a designated area").unwrap_or(rest);
        return one(Verb::SecureObject, x);
    }
    for prefix in ["handle safety issue with ", "handle safety issue "] {
        if let Some(rest) = after(p, prefix) {
            let a = arg(rest)?;
            let verb = match category_of_arg(&a) {
                Some(c) if c.is_agent() => Verb::EnsureSafe,
                Some(_) => Verb::SecureObject,
                None => Verb::HandleSafetyIssue,
            };
            return Some((verb, vec![a]));
        }
    }
    if let Some(rest) = after(p, "open ") {
        return one(Verb::Open, rest);
    }
    if let Some(rest) = after(p, "close ") {
        return one(Verb::Close, rest);
    }
    None
}

/// `"12. Walk to kitchen"` → `Some("Walk to kitchen")`.
fn numbered(line: &str) -> Option<&str> {
    let t = line.trim();
    let digits = t.len() - t.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits == 0 {
        return None;
    }
    t[digits..].trim_start().strip_prefix('.').map(str::trim)
}

pub fn parse_plan(text: &str) -> Result<TaskPlan, PlanError> {
    let mut steps = Vec::new();
    for line in text.lines() {
        let Some(phrase) = numbered(line) else {
            continue;
        };
        let (verb, args) =
            parse_phrase(phrase).ok_or_else(|| PlanError::UnknownAction(line.trim().to_string()))?;
        steps.push(Action {
            index: steps.len(),
            verb,
            args,
            raw: line.trim().to_string(),
        });
        if verb == Verb::Done {
            return Ok(TaskPlan {
                task_name: String::new(),
                steps,
                revision: 0,
            });
        }
    }
    Err(PlanError::UnterminatedPlan)
}

/// Entity selector used by goals and monitor rules, written as a string:
/// a category name, `*`, `attr:<attribute>`, `food`, `agent` (any non-robot
/// agent) or `vulnerable`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Pattern {
    Any,
    Category(EntityCategory),
    Attr(Attribute),
    Food,
    Agent,
    Vulnerable,
}

impl Pattern {
    pub fn matches(&self, e: &Entity) -> bool {
        match self {
            Pattern::Any => true,
            Pattern::Category(c) => e.category == *c,
            Pattern::Attr(a) => e.has(*a),
            Pattern::Food => e.category.is_food(),
            Pattern::Agent => e.is_agent && !e.category.is_robot(),
            Pattern::Vulnerable => e.category.is_vulnerable(),
        }
    }
}

impl FromStr for Pattern {
    type Err = PlanError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        match t.to_ascii_lowercase().as_str() {
            "*" => return Ok(Pattern::Any),
            "food" => return Ok(Pattern::Food),
            "agent" => return Ok(Pattern::Agent),
            "vulnerable" => return Ok(Pattern::Vulnerable),
            _ => {}
        }
        if let Some(a) = t.strip_prefix("attr:") {
            return a
                .parse()
                .map(Pattern::Attr)
                .map_err(|_| PlanError::BadPattern(s.to_string()));
        }
        t.parse()
            .map(Pattern::Category)
            .map_err(|_| PlanError::BadPattern(s.to_string()))
    }
}

impl TryFrom<String> for Pattern {
    type Error = PlanError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Pattern> for String {
    fn from(p: Pattern) -> String {
        match p {
            Pattern::Any => "*".into(),
            Pattern::Category(c) => c.name().into(),
            Pattern::Attr(a) => format!("attr:{}", a.as_str()),
            Pattern::Food => "food".into(),
            Pattern::Agent => "agent".into(),
            Pattern::Vulnerable => "vulnerable".into(),
        }
    }
}

/// Predicate over a final scene state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Goal {
    All(Vec<Goal>),
    Not(Box<Goal>),
    /// Some subject-matching entity within `max_distance` of a distinct
    /// object-matching entity.
    Near {
        subject: Pattern,
        object: Pattern,
        max_distance: f64,
    },
    /// Some entity matching `pattern` carries `attribute`.
    Has {
        pattern: Pattern,
        attribute: Attribute,
    },
}

impl Goal {
    pub fn holds(&self, scene: &Scene) -> bool {
        match self {
            Goal::All(gs) => gs.iter().all(|g| g.holds(scene)),
            Goal::Not(g) => !g.holds(scene),
            Goal::Near {
                subject,
                object,
                max_distance,
            } => scene.entities.iter().filter(|e| subject.matches(e)).any(|s| {
                scene.entities.iter().any(|o| {
                    o.id != s.id && object.matches(o) && distance(&s.position, &o.position) <= *max_distance
                })
            }),
            Goal::Has { pattern, attribute } => scene
                .entities
                .iter()
                .any(|e| pattern.matches(e) && e.has(*attribute)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Complexity {
    Simple,
    Intermediate,
    Complex,
}

impl Complexity {
    pub const ALL: [Complexity; 3] = [Complexity::Simple, Complexity::Intermediate, Complexity::Complex];

    pub fn as_str(self) -> &'static str {
        match self {
            Complexity::Simple => "simple",
            Complexity::Intermediate => "intermediate",
            Complexity::Complex => "complex",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub complexity: Complexity,
    pub room: RoomType,
    /// Step phrases of the reference plan, without numbers; ends with DONE.
    pub template: Vec<String>,
    pub goal: Goal,
}

impl TaskSpec {
    pub fn template_plan(&self) -> Result<TaskPlan, PlanError> {
        let text: String = self
            .template
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{i}. {s}\n"))
            .collect();
        let mut plan = parse_plan(&text)?;
        plan.task_name = self.name.clone();
        Ok(plan)
    }
}

const TASKS_JSON: &str = include_str!("../../data/tasks.json");

/// The five benchmark tasks: two simple, two intermediate, one complex.
pub fn benchmark_tasks() -> Vec<TaskSpec> {
    serde_json::from_str(TASKS_JSON).expect("bundled tasks parse")
}

pub fn find_task(name: &str) -> Result<TaskSpec, PlanError> {
    benchmark_tasks()
        .into_iter()
        .find(|t| t.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| PlanError::UnknownTask(name.to_string()))
}
