use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{parse_reasoning_reply, Provenance, ReasoningError, ReasoningResult};

pub const ENV_URL: &str = "ROLECLUSTER_LLM_URL";
pub const ENV_MODEL: &str = "ROLECLUSTER_LLM_MODEL";
pub const ENV_KEY: &str = "ROLECLUSTER_LLM_KEY";

const SYSTEM_PROMPT: &str =
    "You assign graph nodes to communities. Follow the reasoning steps and \
                             answer only in the requested output format.";

/// Anything that turns a prompt into raw reply text.
pub trait ReasoningBackend: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, ReasoningError>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    pub timeout_secs: u64,
    /// Concurrent requests in flight.
    pub parallelism: usize,
    /// Uncached prompts sent per round; the rest use the fallback.
    pub budget: Option<usize>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            timeout_secs: 60,
            parallelism: 4,
            budget: None,
        }
    }
}

/// Chat-completion client (`POST {base}/chat/completions`).
pub struct HttpBackend {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    key: Option<String>,
}

impl HttpBackend {
    pub fn new(base_url: &str, model: &str, key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            agent,
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            model: model.to_string(),
            key,
        }
    }

    /// Reads the base URL, model and optional key from the environment.
    pub fn from_env(timeout: Duration) -> Result<Self, ReasoningError> {
        let url = std::env::var(ENV_URL)
            .map_err(|_| ReasoningError::Config(format!("{ENV_URL} is not set")))?;
        let model = std::env::var(ENV_MODEL)
            .map_err(|_| ReasoningError::Config(format!("{ENV_MODEL} is not set")))?;
        let key = std::env::var(ENV_KEY).ok().filter(|k| !k.is_empty());
        Ok(Self::new(&url, &model, key, timeout))
    }
}

impl ReasoningBackend for HttpBackend {
    fn complete(&self, prompt: &str) -> Result<String, ReasoningError> {
        let body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": SYSTEM_PROMPT},
                {"role": "user", "content": prompt},
            ],
        });
        let mut request = self.agent.post(&self.endpoint);
        if let Some(key) = &self.key {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(&body)
            .map_err(|e| ReasoningError::Backend(e.to_string()))?;
        let value: Value = response
            .body_mut()
            .read_json()
            .map_err(|e| ReasoningError::Backend(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| {
                ReasoningError::Backend("response has no choices[0].message.content".into())
            })
    }
}

fn prompt_key(prompt: &str) -> String {
    Sha256::digest(prompt.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn repair_prompt(prompt: &str, error: &ReasoningError) -> String {
    format!(
        "{prompt}\nYour previous reply was rejected ({error}). Reply again with exactly one fenced \
         block that satisfies the OUTPUT format."
    )
}

/// Backend wrapper with a prompt-hash cache, one repair retry per prompt
/// and a deterministic fallback.
pub struct LlmReasoner {
    backend: Box<dyn ReasoningBackend>,
    config: LlmConfig,
    pool: rayon::ThreadPool,
    cache: Mutex<HashMap<String, ReasoningResult>>,
}

impl LlmReasoner {
    pub fn new(
        backend: Box<dyn ReasoningBackend>,
        config: LlmConfig,
    ) -> Result<Self, ReasoningError> {
        if config.parallelism == 0 {
            return Err(ReasoningError::Config(
                "parallelism must be at least 1".into(),
            ));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.parallelism)
            .build()
            .map_err(|e| ReasoningError::Config(e.to_string()))?;
        Ok(Self {
            backend,
            config,
            pool,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn cached(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    fn ask(&self, prompt: &str, k: usize) -> Result<ReasoningResult, ReasoningError> {
        let first = self.backend.complete(prompt)?;
        match parse_reasoning_reply(&first, k) {
            Ok(r) => Ok(r),
            Err(err) => {
                log::debug!("malformed reply ({err}); retrying with repair instruction");
                let second = self.backend.complete(&repair_prompt(prompt, &err))?;
                parse_reasoning_reply(&second, k)
            }
        }
    }

    /// Resolves one `(prompt, fallback)` pair per node. Output order
    /// matches input order regardless of completion order.
    pub fn reason(&self, queries: Vec<(String, ReasoningResult)>) -> Vec<ReasoningResult> {
        let budget = self.config.budget.unwrap_or(usize::MAX);
        let mut sent = 0usize;
        let plan: Vec<(String, ReasoningResult, Option<ReasoningResult>, bool)> = {
            let cache = self.cache.lock().expect("cache lock");
            queries
                .into_iter()
                .map(|(prompt, fallback)| {
                    let key = prompt_key(&prompt);
                    let hit = cache.get(&key).cloned();
                    let send = hit.is_none() && sent < budget;
                    if send {
                        sent += 1;
                    }
                    (prompt, fallback, hit, send)
                })
                .collect()
        };
        let results: Vec<ReasoningResult> = self.pool.install(|| {
            plan.into_par_iter()
                .map(|(prompt, fallback, hit, send)| {
                    if let Some(mut r) = hit {
                        r.provenance = Provenance::Cached;
                        return r;
                    }
                    if !send {
                        return fallback;
                    }
                    let k = fallback.q.len();
                    match self.ask(&prompt, k) {
                        Ok(r) => {
                            self.cache
                                .lock()
                                .expect("cache lock")
                                .insert(prompt_key(&prompt), r.clone());
                            r
                        }
                        Err(err) => {
                            log::warn!(
                                "reasoning backend failed ({err}); using deterministic fallback"
                            );
                            fallback
                        }
                    }
                })
                .collect()
        });
        results
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Scripted {
        replies: Vec<String>,
        calls: AtomicUsize,
    }

    impl ReasoningBackend for Scripted {
        fn complete(&self, _prompt: &str) -> Result<String, ReasoningError> {
            let i = self.calls.fetch_add(1, Ordering::SeqCst);
            self.replies
                .get(i)
                .cloned()
                .ok_or_else(|| ReasoningError::Backend("script exhausted".into()))
        }
    }

    fn fallback() -> ReasoningResult {
        ReasoningResult {
            q: vec![0.5, 0.5],
            steps: vec![String::new(); 5],
            confidence: 0.5,
            provenance: Provenance::Fallback,
        }
    }

    const GOOD: &str = "```json\n{\"probabilities\": [0.2, 0.8], \"steps\": [\"a\",\"b\",\"c\",\"d\",\"e\"], \"confidence\": 0.8}\n```";

    fn reasoner(replies: &[&str]) -> LlmReasoner {
        let backend = Scripted {
            replies: replies.iter().map(|s| s.to_string()).collect(),
            calls: AtomicUsize::new(0),
        };
        LlmReasoner::new(
            Box::new(backend),
            LlmConfig {
                parallelism: 1,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn repair_retry_then_cache() {
        let r = reasoner(&["garbage", GOOD]);
        let out = r.reason(vec![("p".into(), fallback())]);
        assert_eq!(out[0].provenance, Provenance::Llm);
        assert_eq!(out[0].q, vec![0.2, 0.8]);
        let again = r.reason(vec![("p".into(), fallback())]);
        assert_eq!(again[0].provenance, Provenance::Cached);
    }

    #[test]
    fn falls_back_after_two_bad_replies() {
        let r = reasoner(&["garbage", "still garbage", GOOD]);
        let out = r.reason(vec![("p".into(), fallback())]);
        assert_eq!(out[0].provenance, Provenance::Fallback);
        assert_eq!(r.cached(), 0);
    }

    #[test]
    fn budget_limits_requests() {
        let r = LlmReasoner::new(
            Box::new(Scripted {
                replies: vec![GOOD.into(); 4],
                calls: AtomicUsize::new(0),
            }),
            LlmConfig {
                parallelism: 1,
                budget: Some(1),
                ..Default::default()
            },
        )
        .unwrap();
        let out = r.reason(vec![("a".into(), fallback()), ("b".into(), fallback())]);
        assert_eq!(out[0].provenance, Provenance::Llm);
        assert_eq!(out[1].provenance, Provenance::Fallback);
    }
}
