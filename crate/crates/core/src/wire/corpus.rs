//! Reference documents for every message shape.

/// The reference human-response text ends at this point; the
/// fixture completes the sentence.
pub const REPAIRED_TEXT_PREFIX: &str =
    "The paper presents a novel approach to optimizing transformer models, achieving a 20";

#[derive(Debug, Clone, Copy)]
pub struct GoldenEntry {
    pub name: &'static str,
    pub bytes: &'static [u8],
    /// True when the fixture completes a truncated original.
    pub repaired: bool,
}

macro_rules! fixture {
    ($name:literal) => {
        include_bytes!(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/golden/", $name, ".json"))
    };
}

pub fn golden_corpus() -> Vec<GoldenEntry> {
    vec![
        GoldenEntry { name: "human_request", bytes: fixture!("human_request"), repaired: false },
        GoldenEntry { name: "human_response", bytes: fixture!("human_response"), repaired: true },
        GoldenEntry { name: "delegation_request", bytes: fixture!("delegation_request"), repaired: false },
        GoldenEntry { name: "delegation_response", bytes: fixture!("delegation_response"), repaired: false },
        GoldenEntry { name: "node_status_report", bytes: fixture!("node_status_report"), repaired: false },
        GoldenEntry { name: "task_assignment", bytes: fixture!("task_assignment"), repaired: false },
        GoldenEntry { name: "agent_metadata", bytes: fixture!("agent_metadata"), repaired: false },
    ]
}
