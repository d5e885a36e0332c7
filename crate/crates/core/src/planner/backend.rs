use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::{parse_plan, render_plan, Action, PlanError, TaskPlan, TaskSpec, Verb};
use crate::episode::SafetyNotice;
use crate::llm::{LlmClient, Transcript};

pub const PLAN_BASE_TEMPLATE: &str = include_str!("../../prompts/plan_base.v1.txt");
pub const PLAN_SAFE_TEMPLATE: &str = include_str!("../../prompts/plan_safe.v1.txt");
pub const PLAN_REPLAN_TEMPLATE: &str = include_str!("../../prompts/plan_replan.v1.txt");

/// Parse attempts after the first reply fails to parse.
const PARSE_RETRIES: usize = 2;

/// First 16 hex chars of the SHA-256 of a prompt template.
pub fn prompt_hash(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResponse {
    pub plan: TaskPlan,
    pub transcripts: Vec<Transcript>,
}

pub trait PlannerBackend {
    fn id(&self) -> String;

    fn initial_plan(&self, task: &TaskSpec, scene_summary: &str) -> Result<PlanResponse, PlanError>;

    /// `plan` holds the pending steps; the reply must carry
    /// `plan.revision + 1`.
    fn replan(
        &self,
        plan: &TaskPlan,
        notices: &[SafetyNotice],
        scene_summary: &str,
    ) -> Result<PlanResponse, PlanError>;
}

pub fn system_prompt(safety: bool) -> String {
    if safety {
        format!("{PLAN_BASE_TEMPLATE}\n{PLAN_SAFE_TEMPLATE}")
    } else {
        PLAN_BASE_TEMPLATE.to_string()
    }
}

pub fn initial_user_prompt(task: &TaskSpec, scene_summary: &str) -> String {
    format!("Task: {}\n\nScene:\n{}", task.name, scene_summary)
}

pub fn replan_user_prompt(plan: &TaskPlan, notices: &[SafetyNotice], scene_summary: &str) -> String {
    let mut out = format!(
        "Task: {}\n\nRemaining plan:\n{}\nSafety notices:\n",
        plan.task_name,
        render_plan(plan)
    );
    for n in notices {
        out.push_str(&format!("- {}\n", n.text));
    }
    out.push_str(&format!("\nScene:\n{scene_summary}"));
    out
}

/// Mitigation steps the mock planner inserts for one notice: `EnsureSafe`
/// for a non-robot agent endpoint, `SecureObject` for a movable object.
pub fn mitigations_for(notice: &SafetyNotice) -> Vec<Action> {
    let mut out = Vec::new();
    for (id, cat) in notice.endpoints() {
        if cat.is_agent() {
            if !cat.is_robot() {
                out.push(Action::new(Verb::EnsureSafe, vec![id.to_string()]));
            }
        } else if cat.is_movable() {
            out.push(Action::new(Verb::SecureObject, vec![id.to_string()]));
        }
    }
    out
}

/// Deterministic planner: the task's template plan, and template-driven
/// mitigation insertion on replan. With `safety_prompt` set it records the
/// safety-prompted request in its transcripts but plans identically, since a
/// template cannot perceive the scene.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockPlanner {
    pub safety_prompt: bool,
}

impl MockPlanner {
    pub fn new() -> Self {
        MockPlanner { safety_prompt: false }
    }

    pub fn with_safety_prompt() -> Self {
        MockPlanner { safety_prompt: true }
    }
}

impl PlannerBackend for MockPlanner {
    fn id(&self) -> String {
        if self.safety_prompt {
            "mock-safe-prompt"
        } else {
            "mock"
        }
        .to_string()
    }

    fn initial_plan(&self, task: &TaskSpec, scene_summary: &str) -> Result<PlanResponse, PlanError> {
        let plan = task.template_plan()?;
        let transcript = Transcript {
            purpose: "initial_plan".into(),
            system: system_prompt(self.safety_prompt),
            user: initial_user_prompt(task, scene_summary),
            response: Some(render_plan(&plan)),
        };
        Ok(PlanResponse {
            plan,
            transcripts: vec![transcript],
        })
    }

    fn replan(
        &self,
        plan: &TaskPlan,
        notices: &[SafetyNotice],
        scene_summary: &str,
    ) -> Result<PlanResponse, PlanError> {
        let mut steps: Vec<Action> = Vec::new();
        for n in notices {
            for m in mitigations_for(n) {
                let dup = steps.iter().chain(&plan.steps).any(|s| s.same_step(&m));
                if !dup {
                    steps.push(m);
                }
            }
        }
        steps.extend(plan.steps.iter().cloned());
        let revised = TaskPlan::from_steps(&plan.task_name, steps, plan.revision + 1);
        let transcript = Transcript {
            purpose: "replan".into(),
            system: PLAN_REPLAN_TEMPLATE.to_string(),
            user: replan_user_prompt(plan, notices, scene_summary),
            response: Some(render_plan(&revised)),
        };
        Ok(PlanResponse {
            plan: revised,
            transcripts: vec![transcript],
        })
    }
}

/// Planner backed by a completion endpoint.
pub struct LlmPlanner {
    client: Arc<dyn LlmClient>,
    safety_prompt: bool,
}

impl LlmPlanner {
    pub fn new(client: Arc<dyn LlmClient>, safety_prompt: bool) -> Self {
        LlmPlanner {
            client,
            safety_prompt,
        }
    }

    fn ask(&self, purpose: &str, system: &str, user: &str) -> Result<PlanResponse, PlanError> {
        let mut transcripts = Vec::new();
        let mut prompt = user.to_string();
        let mut last = String::new();
        for _ in 0..=PARSE_RETRIES {
            let reply = self
                .client
                .complete(system, &prompt)
                .map_err(|e| PlanError::BackendUnavailable(e.to_string()))?;
            let mut t = Transcript {
                purpose: purpose.to_string(),
                system: system.to_string(),
                user: prompt.clone(),
                response: Some(reply.clone()),
            };
            if let Some(secret) = self.client.secret() {
                t.redact(secret);
            }
            transcripts.push(t);
            match parse_plan(&reply) {
                Ok(plan) => return Ok(PlanResponse { plan, transcripts }),
                Err(e) => {
                    last = e.to_string();
                    prompt = format!(
                        "{user}\n\nYour previous reply could not be parsed ({last}). Reply again with only the numbered plan ending in DONE."
                    );
                }
            }
        }
        Err(PlanError::PlanParseFailure {
            attempts: PARSE_RETRIES + 1,
            last,
        })
    }
}

impl PlannerBackend for LlmPlanner {
    fn id(&self) -> String {
        let suffix = if self.safety_prompt { "+safe-prompt" } else { "" };
        format!("{}{suffix}", self.client.id())
    }

    fn initial_plan(&self, task: &TaskSpec, scene_summary: &str) -> Result<PlanResponse, PlanError> {
        let mut r = self.ask(
            "initial_plan",
            &system_prompt(self.safety_prompt),
            &initial_user_prompt(task, scene_summary),
        )?;
        r.plan.task_name = task.name.clone();
        r.plan.revision = 0;
        Ok(r)
    }

    fn replan(
        &self,
        plan: &TaskPlan,
        notices: &[SafetyNotice],
        scene_summary: &str,
    ) -> Result<PlanResponse, PlanError> {
        let mut r = self.ask(
            "replan",
            PLAN_REPLAN_TEMPLATE,
            &replan_user_prompt(plan, notices, scene_summary),
        )?;
        r.plan.task_name = plan.task_name.clone();
        r.plan.revision = plan.revision + 1;
        Ok(r)
    }
}
