use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::FlowError;
use crate::template::{scan_references, Reference};

/// Sentinel `next` value that terminates a flow.
pub const END: &str = "END";

pub const ACTION_TYPES: [&str; 2] = ["transfer", "compute"];

pub fn default_retries() -> u32 {
    2
}

pub fn default_timeout() -> f64 {
    300.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateDef {
    /// One of `transfer` or `compute`.
    pub action_type: String,
    /// JSON template; string leaves of the form `$.input.<key>` or
    /// `$.states.<name>.output.<key>` are substituted at dispatch time.
    #[serde(default)]
    pub parameters: Value,
    /// Name of the following state, or `"END"`.
    pub next: String,
    /// Extra dispatch attempts after the first failure.
    #[serde(default = "default_retries")]
    pub retries: u32,
    /// Seconds one attempt may run before it counts as a retryable failure.
    #[serde(default = "default_timeout")]
    pub timeout: f64,
}

/// A JSON state machine: named states executing one action each, linked by
/// `next` edges from `start_state` to `END`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowDefinition {
    pub id: String,
    pub start_state: String,
    /// Input keys runs of this flow may reference in templates.
    #[serde(default)]
    pub inputs: Vec<String>,
    pub states: BTreeMap<String, StateDef>,
}

/// Parse and fully validate a definition. All violated invariants are
/// reported together rather than one at a time.
pub fn parse_definition(json_text: &str) -> Result<FlowDefinition, FlowError> {
    let def: FlowDefinition = serde_json::from_str(json_text)?;
    def.validate()?;
    Ok(def)
}

impl FlowDefinition {
    pub fn validate(&self) -> Result<(), FlowError> {
        let mut problems = Vec::new();
        if self.states.is_empty() {
            problems.push("states map is empty".to_string());
        }
        if !self.states.is_empty() && !self.states.contains_key(&self.start_state) {
            problems.push(format!("start_state '{}' is not a state", self.start_state));
        }
        let declared: BTreeSet<&str> = self.inputs.iter().map(String::as_str).collect();
        for (name, state) in &self.states {
            if !ACTION_TYPES.contains(&state.action_type.as_str()) {
                problems.push(format!(
                    "state '{name}': unknown action_type '{}'",
                    state.action_type
                ));
            }
            if state.next != END && !self.states.contains_key(&state.next) {
                problems.push(format!(
                    "state '{name}': next points to missing state '{}'",
                    state.next
                ));
            }
            if !(state.timeout > 0.0) {
                problems.push(format!("state '{name}': timeout must be positive"));
            }
            match scan_references(&state.parameters) {
                Ok(refs) => {
                    for r in refs {
                        match r {
                            Reference::Input(key) => {
                                if !declared.contains(key.as_str()) {
                                    problems.push(format!(
                                        "state '{name}': template references undeclared input key '{key}'"
                                    ));
                                }
                            }
                            Reference::StateOutput { state: other, .. } => {
                                if !self.states.contains_key(&other) {
                                    problems.push(format!(
                                        "state '{name}': template references output of unknown state '{other}'"
                                    ));
                                }
                            }
                        }
                    }
                }
                Err(bad) => problems.push(format!("state '{name}': bad template path '{bad}'")),
            }
        }
        if problems.is_empty() && !self.reaches_end() {
            problems.push(format!(
                "no path from start_state '{}' to END",
                self.start_state
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(FlowError::Invalid(problems))
        }
    }

    /// Whether following `next` edges from the start ever terminates.
    fn reaches_end(&self) -> bool {
        let mut queue = VecDeque::from([self.start_state.as_str()]);
        let mut seen = BTreeSet::new();
        while let Some(name) = queue.pop_front() {
            if !seen.insert(name) {
                continue;
            }
            match self.states.get(name) {
                None => continue,
                Some(state) if state.next == END => return true,
                Some(state) => queue.push_back(state.next.as_str()),
            }
        }
        false
    }

    /// Every input key any state's template reads.
    pub fn referenced_input_keys(&self) -> BTreeSet<String> {
        let mut keys = BTreeSet::new();
        for state in self.states.values() {
            if let Ok(refs) = scan_references(&state.parameters) {
                for r in refs {
                    if let Reference::Input(key) = r {
                        keys.insert(key);
                    }
                }
            }
        }
        keys
    }

    /// State names in execution order from the start. Usable only on
    /// validated definitions (the walk terminates at END).
    pub fn path_from_start(&self) -> Vec<String> {
        let mut order = Vec::new();
        let mut seen = BTreeSet::new();
        let mut current = self.start_state.as_str();
        while current != END && seen.insert(current) {
            order.push(current.to_string());
            match self.states.get(current) {
                Some(state) => current = state.next.as_str(),
                None => break,
            }
        }
        order
    }
}
