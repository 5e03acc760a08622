//! Choice-making agents behind a uniform interface: remote chat-completion
//! endpoints and in-process synthetic agents (RL-simulated, ideal,
//! uniform-random).
//!
//! Every agent consumes the rendered text prompt so that LLM and synthetic
//! agents traverse the identical experiment path; synthetic agents
//! additionally receive structured trial state via a sidecar (`TrialInfo`)
//! because parsing their own prompt would be pointless — a test-only
//! shortcut. Synthetic agents reply in the canonical response format and
//! their replies go back through the same parser as LLM output.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::cogmodel::{
    self, EncodingState, ModelParams, ModelVariant, Phase,
};
use crate::error::{Error, Result};
use crate::promptgen::format_reply;
use crate::rng;

fn default_temperature() -> f64 {
    0.0
}
fn default_timeout() -> u64 {
    60
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_rate() -> f64 {
    1.0
}

/// Remote chat-completion endpoint settings. The wire format is the
/// de-facto OpenAI-style schema; any conforming proxy works.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LlmEndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token; resolved
    /// at use time, not config-load time.
    pub auth_env: String,
    /// Fixed at zero for deterministic responses.
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub retry_backoff_ms: u64,
    /// Token-bucket dispatch rate; defaults to one request per second.
    #[serde(default = "default_rate")]
    pub rate_limit_per_sec: f64,
}

/// Which agent implementation to run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentSpec {
    LlmEndpoint(LlmEndpointConfig),
    RlSimulated {
        variant: ModelVariant,
        params: ModelParams,
    },
    Ideal,
    UniformRandom,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentConfig {
    #[serde(flatten)]
    pub spec: AgentSpec,
    /// Folded into per-trial sampling so distinct agents diverge even under
    /// a shared run seed.
    #[serde(default)]
    pub seed: u64,
}

impl AgentConfig {
    pub fn label(&self) -> String {
        match &self.spec {
            AgentSpec::LlmEndpoint(cfg) => format!("llm:{}", cfg.model),
            AgentSpec::RlSimulated { variant, .. } => format!("sim:{}", variant.label()),
            AgentSpec::Ideal => "ideal".into(),
            AgentSpec::UniformRandom => "uniform".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// One agent reply, with transport metadata.
#[derive(Debug, Clone)]
pub struct AgentReply {
    pub raw: String,
    pub latency: Duration,
    pub token_usage: Option<TokenUsage>,
    pub attempts: u32,
}

impl AgentReply {
    fn local(raw: String, started: Instant) -> Self {
        AgentReply {
            raw,
            latency: started.elapsed(),
            token_usage: None,
            attempts: 1,
        }
    }
}

/// Structured sidecar for one trial.
#[derive(Debug, Clone, Copy)]
pub struct TrialInfo<'a> {
    pub phase: Phase,
    /// Letters in prompt listing order; index 0 is the first listed.
    pub listed: &'a [char],
    /// Expected values aligned with `listed` (consumed by the ideal agent).
    pub evs: &'a [f64],
    /// Deterministic per-trial seed; all agent sampling derives from it.
    pub trial_seed: u64,
}

/// Uniform interface over all agent kinds. `observe` delivers a training
/// round's complete feedback (letter, reward) plus the agent's own parsed
/// choice; transfer trials deliver nothing.
pub trait ChoiceAgent: Send {
    fn label(&self) -> String;
    fn reset_run(&mut self, _run_seed: u64) {}
    fn choose(&mut self, prompt: &str, info: &TrialInfo) -> Result<AgentReply>;
    fn observe(&mut self, _feedback: &[(char, f64)], _chosen: Option<char>) {}
}

/// Construct the agent described by a config. For LLM endpoints this
/// resolves the auth token from the named environment variable (a missing
/// variable is a configuration error naming it).
pub fn build_agent(cfg: &AgentConfig) -> Result<Box<dyn ChoiceAgent>> {
    match &cfg.spec {
        AgentSpec::LlmEndpoint(endpoint) => Ok(Box::new(LlmAgent::new(endpoint.clone())?)),
        AgentSpec::RlSimulated { variant, params } => {
            Ok(Box::new(SimAgent::new(*variant, *params, cfg.seed)?))
        }
        AgentSpec::Ideal => Ok(Box::new(IdealAgent { seed: cfg.seed })),
        AgentSpec::UniformRandom => Ok(Box::new(UniformAgent { seed: cfg.seed })),
    }
}

fn sample_seed(info: &TrialInfo, agent_seed: u64) -> u64 {
    rng::stream(info.trial_seed ^ agent_seed, rng::STREAM_AGENT)
}

fn sample_index(probs: &[f64], seed: u64) -> usize {
    use rand::Rng;
    let mut rng = rng::rng_from(seed);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

// ---------------------------------------------------------------------------
// synthetic agents

/// Samples choices from the cognitive model's softmax under fixed
/// parameters, updating its expectancies from complete feedback exactly as
/// the likelihood replay does.
pub struct SimAgent {
    variant: ModelVariant,
    params: ModelParams,
    seed: u64,
    state: EncodingState,
}

impl SimAgent {
    pub fn new(variant: ModelVariant, params: ModelParams, seed: u64) -> Result<Self> {
        let params = params.canonical(&variant);
        params.validate()?;
        Ok(SimAgent {
            variant,
            params,
            seed,
            state: EncodingState::new(),
        })
    }
}

impl ChoiceAgent for SimAgent {
    fn label(&self) -> String {
        format!("sim:{}", self.variant.label())
    }

    fn reset_run(&mut self, _run_seed: u64) {
        self.state = EncodingState::new();
    }

    fn choose(&mut self, _prompt: &str, info: &TrialInfo) -> Result<AgentReply> {
        let started = Instant::now();
        let beta = match info.phase {
            Phase::Training => self.params.beta_train,
            Phase::Transfer => self.params.beta_transfer,
        };
        let probs =
            cogmodel::choice_probabilities(&self.state, info.listed, beta, self.params.bias);
        let idx = sample_index(&probs, sample_seed(info, self.seed));
        Ok(AgentReply::local(format_reply(info.listed[idx]), started))
    }

    fn observe(&mut self, feedback: &[(char, f64)], chosen: Option<char>) {
        let outcomes: Vec<f64> = feedback.iter().map(|&(_, x)| x).collect();
        self.state.observe_range(&outcomes);
        let values: Vec<(char, f64)> = feedback
            .iter()
            .map(|&(l, x)| {
                (
                    l,
                    cogmodel::subjective_value(x, &outcomes, &self.state, self.params.omega),
                )
            })
            .collect();
        cogmodel::update_expectancies(
            &mut self.state,
            chosen,
            &values,
            self.params.alpha_con,
            self.params.alpha_dis,
        );
    }
}

/// Reward-maximizing oracle: always picks the option with the strictly
/// higher expected value; exact EV ties resolve by a seeded coin flip
/// (analyses credit such pairs 0.5).
pub struct IdealAgent {
    seed: u64,
}

impl ChoiceAgent for IdealAgent {
    fn label(&self) -> String {
        "ideal".into()
    }

    fn choose(&mut self, _prompt: &str, info: &TrialInfo) -> Result<AgentReply> {
        let started = Instant::now();
        let best = info
            .evs
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let tied: Vec<usize> = (0..info.evs.len())
            .filter(|&i| info.evs[i] == best)
            .collect();
        let idx = if tied.len() == 1 {
            tied[0]
        } else {
            let uniform = vec![1.0 / tied.len() as f64; tied.len()];
            tied[sample_index(&uniform, sample_seed(info, self.seed))]
        };
        Ok(AgentReply::local(format_reply(info.listed[idx]), started))
    }
}

/// Chooses uniformly at random among the offered letters.
pub struct UniformAgent {
    seed: u64,
}

impl ChoiceAgent for UniformAgent {
    fn label(&self) -> String {
        "uniform".into()
    }

    fn choose(&mut self, _prompt: &str, info: &TrialInfo) -> Result<AgentReply> {
        let started = Instant::now();
        let probs = vec![1.0 / info.listed.len() as f64; info.listed.len()];
        let idx = sample_index(&probs, sample_seed(info, self.seed));
        Ok(AgentReply::local(format_reply(info.listed[idx]), started))
    }
}

// ---------------------------------------------------------------------------
// remote endpoint agent

/// Serializes dispatch to one endpoint at a fixed minimum interval.
pub struct RateLimiter {
    min_interval: Duration,
    last: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(rate_per_sec: f64) -> Self {
        let min_interval = if rate_per_sec > 0.0 {
            Duration::from_secs_f64(1.0 / rate_per_sec)
        } else {
            Duration::ZERO
        };
        RateLimiter {
            min_interval,
            last: Mutex::new(None),
        }
    }

    /// Block until a request slot is available, then claim it.
    pub fn acquire(&self) {
        let mut last = self.last.lock().unwrap();
        if let Some(prev) = *last {
            let next_allowed = prev + self.min_interval;
            let now = Instant::now();
            if next_allowed > now {
                std::thread::sleep(next_allowed - now);
            }
        }
        *last = Some(Instant::now());
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<TokenUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: String,
}

/// Single-turn chat-completion client with temperature pinned to zero.
/// Retries only transport failures, 429, and 5xx responses, with
/// exponential backoff; a well-formed but nonconforming reply is never
/// retried (nonconformance is handled post-hoc by the parser).
pub struct LlmAgent {
    cfg: LlmEndpointConfig,
    token: String,
    http: reqwest::blocking::Client,
    limiter: RateLimiter,
}

impl LlmAgent {
    pub fn new(cfg: LlmEndpointConfig) -> Result<Self> {
        if cfg.temperature != 0.0 {
            return Err(Error::Config(format!(
                "llm temperature must be 0 for deterministic responses, got {}",
                cfg.temperature
            )));
        }
        let token = std::env::var(&cfg.auth_env).map_err(|_| {
            Error::Config(format!(
                "auth environment variable {} is not set",
                cfg.auth_env
            ))
        })?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let limiter = RateLimiter::new(cfg.rate_limit_per_sec);
        Ok(LlmAgent {
            cfg,
            token,
            http,
            limiter,
        })
    }

    fn endpoint(&self) -> String {
        format!(
            "{}/chat/completions",
            self.cfg.base_url.trim_end_matches('/')
        )
    }

    fn send_once(&self, prompt: &str) -> std::result::Result<reqwest::blocking::Response, String> {
        let request = ChatRequest {
            model: &self.cfg.model,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: self.cfg.temperature,
        };
        self.http
            .post(self.endpoint())
            .bearer_auth(&self.token)
            .json(&request)
            .send()
            .map_err(|e| e.to_string())
    }
}

impl ChoiceAgent for LlmAgent {
    fn label(&self) -> String {
        format!("llm:{}", self.cfg.model)
    }

    fn choose(&mut self, prompt: &str, _info: &TrialInfo) -> Result<AgentReply> {
        let started = Instant::now();
        let mut attempts = 0u32;
        let mut last_failure = String::new();
        while attempts <= self.cfg.max_retries {
            self.limiter.acquire();
            attempts += 1;
            match self.send_once(prompt) {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        let parsed: ChatResponse = resp
                            .json()
                            .map_err(|e| Error::Transport(format!("malformed response: {e}")))?;
                        let choice = parsed.choices.into_iter().next().ok_or_else(|| {
                            Error::Transport("response contains no choices".into())
                        })?;
                        return Ok(AgentReply {
                            raw: choice.message.content,
                            latency: started.elapsed(),
                            token_usage: parsed.usage,
                            attempts,
                        });
                    }
                    if status.as_u16() == 401 || status.as_u16() == 403 {
                        return Err(Error::Config(format!(
                            "endpoint rejected credentials from {} (status {status})",
                            self.cfg.auth_env
                        )));
                    }
                    if status.as_u16() == 429 || status.is_server_error() {
                        last_failure = format!("status {status}");
                    } else {
                        return Err(Error::Transport(format!(
                            "unretryable status {status} from {}",
                            self.endpoint()
                        )));
                    }
                }
                Err(e) => last_failure = e,
            }
            if attempts <= self.cfg.max_retries {
                let backoff = self.cfg.retry_backoff_ms.saturating_mul(1 << (attempts - 1));
                std::thread::sleep(Duration::from_millis(backoff));
            }
        }
        Err(Error::Transport(format!(
            "exhausted {attempts} attempts against {}: {last_failure}",
            self.endpoint()
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cogmodel::{Encoding, Learning, Response};

    fn rel_full_params(beta: f64, bias: f64) -> (ModelVariant, ModelParams) {
        (
            ModelVariant {
                encoding: Encoding::Rel,
                learning: Learning::TwoAlpha,
                response: Response::TwoBeta,
            },
            ModelParams {
                omega: 1.0,
                alpha_con: 0.5,
                alpha_dis: 0.5,
                beta_train: beta,
                beta_transfer: beta,
                bias,
            },
        )
    }

    fn info<'a>(listed: &'a [char], evs: &'a [f64], trial_seed: u64) -> TrialInfo<'a> {
        TrialInfo {
            phase: Phase::Training,
            listed,
            evs,
            trial_seed,
        }
    }

    #[test]
    fn sim_agent_goes_greedy_at_high_beta() {
        let (variant, params) = rel_full_params(60.0, 0.0);
        let mut agent = SimAgent::new(variant, params, 0).unwrap();
        for _ in 0..5 {
            agent.observe(&[('A', 30.0), ('B', 27.0)], Some('A'));
        }
        for seed in 0..50 {
            let reply = agent
                .choose("", &info(&['B', 'A'], &[27.0, 30.0], seed))
                .unwrap();
            assert_eq!(reply.raw, "I would choose slot machine A.");
        }
    }

    #[test]
    fn sim_agent_is_uniform_at_zero_beta() {
        let (variant, params) = rel_full_params(0.0, 0.0);
        let mut agent = SimAgent::new(variant, params, 0).unwrap();
        let mut first = 0;
        let n = 600;
        for seed in 0..n {
            let reply = agent
                .choose("", &info(&['A', 'B'], &[1.0, 2.0], seed))
                .unwrap();
            if reply.raw.contains("machine A") {
                first += 1;
            }
        }
        let frac = first as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.07, "frac = {frac}");
    }

    #[test]
    fn sim_agent_prefers_first_listed_under_large_position_bias() {
        let (variant, params) = rel_full_params(0.0, 25.0);
        let mut agent = SimAgent::new(variant, params, 0).unwrap();
        for seed in 0..50 {
            let reply = agent
                .choose("", &info(&['B', 'A'], &[1.0, 2.0], seed))
                .unwrap();
            assert_eq!(reply.raw, "I would choose slot machine B.");
        }
    }

    #[test]
    fn sim_agent_is_deterministic_per_trial_seed() {
        let (variant, params) = rel_full_params(1.0, 0.3);
        let mut a = SimAgent::new(variant, params, 9).unwrap();
        let mut b = SimAgent::new(variant, params, 9).unwrap();
        for seed in 0..20 {
            let ra = a.choose("", &info(&['A', 'B'], &[0.0, 0.0], seed)).unwrap();
            let rb = b.choose("", &info(&['A', 'B'], &[0.0, 0.0], seed)).unwrap();
            assert_eq!(ra.raw, rb.raw);
        }
    }

    #[test]
    fn ideal_agent_maximizes_ev_and_flips_ties() {
        let mut agent = IdealAgent { seed: 4 };
        let reply = agent
            .choose("", &info(&['C', 'D'], &[18.0, 27.0], 1))
            .unwrap();
        assert_eq!(reply.raw, "I would choose slot machine D.");
        let mut seen = std::collections::HashSet::new();
        for seed in 0..40 {
            let reply = agent
                .choose("", &info(&['C', 'D'], &[50.0, 50.0], seed))
                .unwrap();
            seen.insert(reply.raw);
        }
        assert_eq!(seen.len(), 2, "equal-EV ties never flipped");
    }

    // -- endpoint agent against a local stub server -------------------------

    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;

    struct Stub {
        base_url: String,
        bodies: mpsc::Receiver<String>,
    }

    /// Serve `responses` (status, body) one per request, recording request
    /// bodies.
    fn spawn_stub(responses: Vec<(u16, String)>) -> Stub {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base_url = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut content_length = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let line = line.trim_end();
                    if line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        content_length = v.trim().parse().unwrap();
                    }
                }
                let mut req_body = vec![0u8; content_length];
                reader.read_exact(&mut req_body).unwrap();
                tx.send(String::from_utf8(req_body).unwrap()).unwrap();
                let reason = match status {
                    200 => "OK",
                    429 => "Too Many Requests",
                    _ => "Error",
                };
                let resp = format!(
                    "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                reader.into_inner().write_all(resp.as_bytes()).unwrap();
            }
        });
        Stub {
            base_url,
            bodies: rx,
        }
    }

    fn endpoint_cfg(base_url: &str, auth_env: &str) -> LlmEndpointConfig {
        LlmEndpointConfig {
            base_url: base_url.to_string(),
            model: "test-model".into(),
            auth_env: auth_env.into(),
            temperature: 0.0,
            timeout_secs: 5,
            max_retries: 3,
            retry_backoff_ms: 1,
            rate_limit_per_sec: 1000.0,
        }
    }

    fn ok_body(content: &str) -> String {
        serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": content}}],
            "usage": {"prompt_tokens": 12, "completion_tokens": 7}
        })
        .to_string()
    }

    #[test]
    fn llm_round_trip_sends_prompt_verbatim() {
        let stub = spawn_stub(vec![(200, ok_body("I would choose slot machine B."))]);
        std::env::set_var("RELVAL_TEST_TOKEN_A", "secret");
        let mut agent = LlmAgent::new(endpoint_cfg(&stub.base_url, "RELVAL_TEST_TOKEN_A")).unwrap();
        let prompt = "line one\nline \"two\" with quotes";
        let reply = agent
            .choose(prompt, &info(&['A', 'B'], &[0.0, 0.0], 0))
            .unwrap();
        assert_eq!(reply.raw, "I would choose slot machine B.");
        assert_eq!(reply.attempts, 1);
        assert_eq!(reply.token_usage.unwrap().completion_tokens, 7);
        let body: serde_json::Value =
            serde_json::from_str(&stub.bodies.recv().unwrap()).unwrap();
        assert_eq!(body["messages"][0]["content"], prompt);
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["model"], "test-model");
    }

    #[test]
    fn llm_retries_rate_limits_then_succeeds() {
        let stub = spawn_stub(vec![
            (429, "{}".into()),
            (429, "{}".into()),
            (200, ok_body("I would choose slot machine A.")),
        ]);
        std::env::set_var("RELVAL_TEST_TOKEN_B", "secret");
        let mut agent = LlmAgent::new(endpoint_cfg(&stub.base_url, "RELVAL_TEST_TOKEN_B")).unwrap();
        let reply = agent.choose("p", &info(&['A', 'B'], &[0.0, 0.0], 0)).unwrap();
        assert_eq!(reply.attempts, 3);
        assert_eq!(reply.raw, "I would choose slot machine A.");
    }

    #[test]
    fn llm_auth_failure_does_not_retry() {
        let stub = spawn_stub(vec![(401, "{}".into()), (200, ok_body("unreachable"))]);
        std::env::set_var("RELVAL_TEST_TOKEN_C", "bogus");
        let mut agent = LlmAgent::new(endpoint_cfg(&stub.base_url, "RELVAL_TEST_TOKEN_C")).unwrap();
        let err = agent
            .choose("p", &info(&['A', 'B'], &[0.0, 0.0], 0))
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        // exactly one request was made
        assert!(stub.bodies.recv().is_ok());
        assert!(stub
            .bodies
            .recv_timeout(Duration::from_millis(100))
            .is_err());
    }

    #[test]
    fn llm_exhausts_retries_with_last_status() {
        let stub = spawn_stub(vec![
            (500, "{}".into()),
            (500, "{}".into()),
            (500, "{}".into()),
            (500, "{}".into()),
        ]);
        std::env::set_var("RELVAL_TEST_TOKEN_D", "secret");
        let mut agent = LlmAgent::new(endpoint_cfg(&stub.base_url, "RELVAL_TEST_TOKEN_D")).unwrap();
        let err = agent
            .choose("p", &info(&['A', 'B'], &[0.0, 0.0], 0))
            .unwrap_err();
        match err {
            Error::Transport(msg) => {
                assert!(msg.contains("exhausted 4 attempts"), "{msg}");
                assert!(msg.contains("500"), "{msg}");
            }
            other => panic!("expected transport error, got {other}"),
        }
    }

    #[test]
    fn missing_auth_env_is_a_config_error_naming_the_variable() {
        match LlmAgent::new(endpoint_cfg("http://localhost:9", "RELVAL_NO_SUCH_VAR")) {
            Err(Error::Config(msg)) => assert!(msg.contains("RELVAL_NO_SUCH_VAR"), "{msg}"),
            Err(other) => panic!("expected config error, got {other}"),
            Ok(_) => panic!("expected config error"),
        }
    }

    #[test]
    fn nonzero_temperature_is_rejected() {
        std::env::set_var("RELVAL_TEST_TOKEN_E", "secret");
        let mut cfg = endpoint_cfg("http://localhost:9", "RELVAL_TEST_TOKEN_E");
        cfg.temperature = 0.7;
        assert!(matches!(LlmAgent::new(cfg), Err(Error::Config(_))));
    }
}
