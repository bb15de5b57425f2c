//! Trains with a pluggable reasoning backend.
//!
//! With `ROLECLUSTER_LLM_URL` and `ROLECLUSTER_LLM_MODEL` set (plus
//! `ROLECLUSTER_LLM_KEY` if the endpoint needs one), prompts go to that
//! chat-completion endpoint.
//! Otherwise a local stand-in answers every prompt: it reads the community
//! sizes listed in the prompt and replies with size-proportional
//! probabilities, and it garbles every fifth reply to exercise the repair
//! and fallback path.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use rolecluster::graph::{generate_synthetic, GeneratorConfig};
use rolecluster::pipeline::{train_with, ReasonerMode, RunConfig};
use rolecluster::reasoning::{
    HttpBackend, LlmConfig, LlmReasoner, ReasoningBackend, ReasoningError, ENV_URL,
};

struct SizeProportional {
    calls: AtomicUsize,
}

impl ReasoningBackend for SizeProportional {
    fn complete(&self, prompt: &str) -> Result<String, ReasoningError> {
        if self.calls.fetch_add(1, Ordering::Relaxed) % 5 == 4 {
            return Ok("I think it belongs to the second community.".into());
        }
        let sizes: Vec<f64> = prompt
            .lines()
            .filter(|l| l.starts_with("[C"))
            .filter_map(|l| l.split_once("] ")?.1.split(' ').next()?.parse().ok())
            .collect();
        let total: f64 = sizes.iter().sum::<f64>().max(1.0);
        let probs: Vec<f64> = sizes.iter().map(|s| s / total).collect();
        let steps = [
            "checked role",
            "checked community fit",
            "checked evolution",
            "checked edges",
            "weighed history",
        ];
        let reply =
            serde_json::json!({ "probabilities": probs, "steps": steps, "confidence": 0.3 });
        Ok(format!("```json\n{reply}\n```"))
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let llm_config = LlmConfig {
        budget: Some(400),
        ..LlmConfig::default()
    };
    let backend: Box<dyn ReasoningBackend> = if std::env::var_os(ENV_URL).is_some() {
        Box::new(HttpBackend::from_env(Duration::from_secs(
            llm_config.timeout_secs,
        ))?)
    } else {
        Box::new(SizeProportional {
            calls: AtomicUsize::new(0),
        })
    };
    let reasoner = LlmReasoner::new(backend, llm_config)?;

    let graph = generate_synthetic(&GeneratorConfig {
        n_nodes: 90,
        n_communities: 3,
        n_snapshots: 4,
        ..GeneratorConfig::default()
    })?
    .graph;
    let config = RunConfig {
        reasoner: ReasonerMode::Llm,
        epochs: 12,
        warmup_epochs: 4,
        reasoning_every: 4,
        ..RunConfig::desk()
    };
    let (_, report) = train_with(&config, &graph, Some(&reasoner))?;
    let p = &report.provenance;
    println!(
        "reasoner results: {} from the backend, {} fallback, {} cached",
        p.llm, p.fallback, p.cached
    );
    for a in &report.agreement {
        println!("epoch {:>2} agreement {:.3}", a.epoch, a.agreement);
    }
    println!("NMI {:.3}", report.metrics.mean_nmi.unwrap_or(f64::NAN));
    Ok(())
}
