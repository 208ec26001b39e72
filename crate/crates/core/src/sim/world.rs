//! Synthetic lookup worlds.
//!
//! A task is a chain of keys. Looking up a key reveals the next one, and the
//! last key reveals the answer. DEADEND tasks add forks: a fork names two
//! keys, one continuing the chain and one leading nowhere.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tools::{LatencyModel, ToolOutput, ToolRegistry, ToolSpec};
use crate::types::Task;

pub const LOOKUP_TOOL: &str = "lookup";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskFamily {
    Keychase,
    Deadend,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fork {
    pub dead_key: String,
    /// The dead key is listed before the live one.
    pub dead_first: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub id: String,
    pub family: TaskFamily,
    pub seed: u64,
    /// Keys on the success path, in order.
    pub chain: Vec<String>,
    /// Forks keyed by chain position; looking up `chain[i]` shows the fork.
    pub forks: BTreeMap<usize, Fork>,
    pub answer: String,
}

fn fresh_key(rng: &mut ChaCha8Rng, used: &mut BTreeSet<String>) -> String {
    loop {
        let key: String = (0..6).map(|_| char::from(b'a' + rng.random_range(0..26u8))).collect();
        if used.insert(key.clone()) {
            return key;
        }
    }
}

impl SyntheticTask {
    /// Draws a task. `chain_length` counts lookups on the success path.
    /// DEADEND tasks get `n_forks` forks (at least one, at most
    /// `chain_length - 1`); the first fork always lists its dead end first,
    /// later ones do so with probability one half.
    pub fn generate(
        id: impl Into<String>,
        family: TaskFamily,
        chain_length: u32,
        n_forks: u32,
        seed: u64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let len = chain_length.max(1) as usize;
        let mut used = BTreeSet::new();
        let chain: Vec<String> = (0..len).map(|_| fresh_key(rng, &mut used)).collect();
        let mut forks = BTreeMap::new();
        if family == TaskFamily::Deadend && len >= 2 {
            let n = (n_forks.max(1) as usize).min(len - 1);
            let mut positions: Vec<usize> = (0..len - 1).collect();
            // partial Fisher-Yates for n distinct fork positions
            for i in 0..n {
                let j = rng.random_range(i..positions.len());
                positions.swap(i, j);
            }
            let mut chosen = positions[..n].to_vec();
            chosen.sort_unstable();
            for (rank, pos) in chosen.into_iter().enumerate() {
                let dead_first = rank == 0 || rng.random_bool(0.5);
                forks.insert(
                    pos,
                    Fork {
                        dead_key: fresh_key(rng, &mut used),
                        dead_first,
                    },
                );
            }
        }
        let answer = format!("{:08x}", rng.random::<u32>());
        Self {
            id: id.into(),
            family,
            seed,
            chain,
            forks,
            answer,
        }
    }

    pub fn start_key(&self) -> &str {
        &self.chain[0]
    }

    pub fn task(&self) -> Task {
        Task::new(
            &self.id,
            format!(
                "Follow the chain of keys beginning at start={} with the lookup tool until a lookup reports the answer, then submit that answer with final_answer.",
                self.start_key()
            ),
        )
        .with_gold(&self.answer)
    }

    pub fn lookup(&self, key: &str) -> ToolOutput {
        if let Some(pos) = self.chain.iter().position(|k| k == key) {
            if pos + 1 == self.chain.len() {
                return ToolOutput::ok(format!("FOUND answer={}", self.answer));
            }
            let next = &self.chain[pos + 1];
            return match self.forks.get(&pos) {
                Some(f) if f.dead_first => ToolOutput::ok(format!("FORK options={},{}", f.dead_key, next)),
                Some(f) => ToolOutput::ok(format!("FORK options={},{}", next, f.dead_key)),
                None => ToolOutput::ok(format!("FOUND next={next}")),
            };
        }
        if self.forks.values().any(|f| f.dead_key == key) {
            return ToolOutput::ok(format!("DEADEND key={key}"));
        }
        ToolOutput::failed(format!("ERROR unknown key={key}"))
    }

    pub fn dead_ends(&self) -> BTreeSet<&str> {
        self.forks.values().map(|f| f.dead_key.as_str()).collect()
    }

    /// Steps of an agent that never takes a wrong branch: every lookup plus
    /// the final answer.
    pub fn optimal_steps(&self) -> u32 {
        self.chain.len() as u32 + 1
    }

    /// Walks every key reachable from the start and checks that exactly one
    /// path ends in the answer.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.chain.is_empty() {
            out.push("empty chain".to_string());
            return out;
        }
        let mut paths_to_answer = 0;
        let mut stack = vec![self.start_key().to_string()];
        let mut seen = BTreeSet::new();
        while let Some(key) = stack.pop() {
            if !seen.insert(key.clone()) {
                out.push(format!("key {key} reachable twice"));
                continue;
            }
            let obs = self.lookup(&key).content;
            if obs.starts_with("FOUND answer=") {
                paths_to_answer += 1;
            } else if let Some(next) = obs.strip_prefix("FOUND next=") {
                stack.push(next.to_string());
            } else if let Some(opts) = obs.strip_prefix("FORK options=") {
                stack.extend(opts.split(',').map(str::to_string));
            }
        }
        if paths_to_answer != 1 {
            out.push(format!("{paths_to_answer} success paths"));
        }
        out
    }

    /// Registry with `lookup` and `final_answer`, both on `latency`.
    pub fn registry(self: &Arc<Self>, latency: LatencyModel, latency_rng: ChaCha8Rng) -> ToolRegistry {
        let mut reg = ToolRegistry::new(latency_rng);
        let world = Arc::clone(self);
        reg.register(ToolSpec::new(LOOKUP_TOOL, latency.clone(), move |call| {
            match call.arguments.get("key") {
                Some(key) => world.lookup(key),
                None => ToolOutput::failed("ERROR missing argument key"),
            }
        }))
        .expect("fresh registry");
        reg.register(ToolSpec::final_answer(latency)).expect("fresh registry");
        reg
    }
}
