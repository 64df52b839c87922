//! Adapter for a remote model endpoint speaking the plan/message/interrupt schemas.

use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{
    parse_interrupt, parse_message, parse_plan, AgentError, Decision, InterruptResponse, MessageIntent, MessageResponse, PlanResponse, Policy,
    PolicyContext, INTERRUPT_SCHEMA_ID, MESSAGE_SCHEMA_ID, PLAN_SCHEMA_ID,
};
use crate::kernel::AgentId;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);
pub const DEFAULT_RETRIES: u32 = 2;
const HISTORY_TAIL: usize = 24;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RemoteConfig {
    /// URL the request is POSTed to.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub retries: u32,
}

impl RemoteConfig {
    pub fn new(endpoint: &str, model: &str) -> Self {
        Self {
            endpoint: endpoint.to_string(),
            api_key: None,
            model: model.to_string(),
            timeout: DEFAULT_TIMEOUT,
            retries: DEFAULT_RETRIES,
        }
    }

    /// Reads `EMCOOP_API_BASE`, `EMCOOP_MODEL` and optionally `EMCOOP_API_KEY`.
    pub fn from_env() -> Result<Self, AgentError> {
        let endpoint = std::env::var("EMCOOP_API_BASE").map_err(|_| AgentError::MissingEnv("EMCOOP_API_BASE"))?;
        let model = std::env::var("EMCOOP_MODEL").map_err(|_| AgentError::MissingEnv("EMCOOP_MODEL"))?;
        let mut cfg = Self::new(&endpoint, &model);
        cfg.api_key = std::env::var("EMCOOP_API_KEY").ok().filter(|k| !k.is_empty());
        Ok(cfg)
    }
}

pub struct RemotePolicy {
    cfg: RemoteConfig,
    agent: AgentId,
    client: reqwest::blocking::Client,
}

impl RemotePolicy {
    pub fn new(cfg: RemoteConfig, agent: AgentId) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .expect("http client builds");
        Self { cfg, agent, client }
    }

    fn request_body(&self, ctx: &PolicyContext, schema: &str, extra: Value) -> Value {
        let system = format!("{}\n\n{}", ctx.env_prompt, ctx.role.prompt());
        let context = json!({
            "agent": self.agent.alias(),
            "n_agents": ctx.n_agents,
            "step": ctx.step.0,
            "stage": ctx.stage,
            "observation": ctx.observation,
            "history": ctx.history.tail(HISTORY_TAIL),
            "inbox": ctx.inbox,
            "plan": ctx.plan,
            "feedback": ctx.feedback,
            "request": extra,
        });
        json!({
            "model": self.cfg.model,
            "system": system,
            "messages": [{"role": "user", "content": context.to_string()}],
            "response_schema_id": schema,
        })
    }

    fn post_once(&self, body: &Value) -> Result<Value, AgentError> {
        let mut req = self
            .client
            .post(&self.cfg.endpoint)
            .header("content-type", "application/json")
            .body(body.to_string());
        if let Some(key) = &self.cfg.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                AgentError::Timeout
            } else {
                AgentError::Http(e.to_string())
            }
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| AgentError::Http(e.to_string()))?;
        if !status.is_success() {
            return Err(AgentError::Http(format!("status {status}")));
        }
        serde_json::from_str(&text).map_err(|e| AgentError::Http(format!("reply is not json: {e}")))
    }

    /// Sends the request, retrying on any error, and parses the reply with `parse`.
    /// Returns the parsed value or the last error, plus the total wall-clock seconds spent.
    pub fn call<T>(&self, body: &Value, schema: &'static str, parse: impl Fn(&Value) -> Result<T, String>) -> (Result<T, AgentError>, f64) {
        let started = Instant::now();
        let mut last = AgentError::Http("no attempt made".into());
        for attempt in 0..=self.cfg.retries {
            match self.post_once(body) {
                Ok(v) => match parse(&v) {
                    Ok(t) => return (Ok(t), started.elapsed().as_secs_f64()),
                    Err(detail) => last = AgentError::SchemaViolation { schema, detail },
                },
                Err(e) => last = e,
            }
            tracing::debug!(agent = %self.agent, attempt, error = %last, "remote call failed");
        }
        (Err(last), started.elapsed().as_secs_f64())
    }
}

impl Policy for RemotePolicy {
    fn name(&self) -> String {
        format!("remote:{}", self.cfg.model)
    }

    fn decide_plan(&mut self, ctx: &PolicyContext) -> Decision<PlanResponse> {
        let body = self.request_body(ctx, PLAN_SCHEMA_ID, json!({"decide": "plan"}));
        let env = ctx.env;
        let (res, elapsed) = self.call(&body, PLAN_SCHEMA_ID, |v| parse_plan(v, env));
        match res {
            Ok(plan) => Decision { value: plan, elapsed, fallback: None },
            Err(e) => {
                tracing::warn!(agent = %self.agent, error = %e, "falling back to an idle plan");
                Decision {
                    value: PlanResponse::idle(env, "fallback after remote failure"),
                    elapsed,
                    fallback: Some(e.to_string()),
                }
            }
        }
    }

    fn decide_interrupt(&mut self, ctx: &PolicyContext) -> Decision<InterruptResponse> {
        let body = self.request_body(ctx, INTERRUPT_SCHEMA_ID, json!({"decide": "interrupt"}));
        let env = ctx.env;
        let (res, elapsed) = self.call(&body, INTERRUPT_SCHEMA_ID, |v| parse_interrupt(v, env));
        match res {
            Ok(r) => Decision { value: r, elapsed, fallback: None },
            Err(e) => {
                tracing::warn!(agent = %self.agent, error = %e, "falling back to resume");
                Decision {
                    value: InterruptResponse::resume("fallback after remote failure"),
                    elapsed,
                    fallback: Some(e.to_string()),
                }
            }
        }
    }

    fn compose_message(&mut self, ctx: &PolicyContext, intent: MessageIntent, allowed: &[AgentId]) -> Decision<Option<MessageResponse>> {
        let allowed_aliases: Vec<String> = allowed.iter().map(|a| a.alias()).collect();
        let extra = json!({
            "decide": "message",
            "intent": format!("{intent:?}").to_lowercase(),
            "allowed_recipients": allowed_aliases,
        });
        let body = self.request_body(ctx, MESSAGE_SCHEMA_ID, extra);
        let (res, elapsed) = self.call(&body, MESSAGE_SCHEMA_ID, parse_message);
        match res {
            Ok(m) => Decision { value: Some(m), elapsed, fallback: None },
            Err(e) => {
                tracing::warn!(agent = %self.agent, error = %e, "sending no message");
                Decision {
                    value: None,
                    elapsed,
                    fallback: Some(e.to_string()),
                }
            }
        }
    }
}
