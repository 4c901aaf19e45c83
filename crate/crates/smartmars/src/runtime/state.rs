//! Component lifecycle: flat main states with per-port binding sets,
//! entry/exit action hooks, and the reserved Neutral state that deactivates
//! every bound port.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

pub const NEUTRAL: &str = "Neutral";

type Hook = Arc<dyn Fn() + Send + Sync>;

pub struct StateAutomaton {
    states: BTreeSet<String>,
    bindings: BTreeMap<String, BTreeSet<String>>,
    entry_actions: BTreeMap<String, Hook>,
    exit_actions: BTreeMap<String, Hook>,
    current: String,
    entry_counts: BTreeMap<String, u64>,
    exit_counts: BTreeMap<String, u64>,
}

impl Default for StateAutomaton {
    fn default() -> Self {
        Self::new()
    }
}

impl StateAutomaton {
    pub fn new() -> Self {
        let mut states = BTreeSet::new();
        states.insert(NEUTRAL.to_string());
        let mut entry_counts = BTreeMap::new();
        entry_counts.insert(NEUTRAL.to_string(), 1); // components start in Neutral
        StateAutomaton {
            states,
            bindings: BTreeMap::new(),
            entry_actions: BTreeMap::new(),
            exit_actions: BTreeMap::new(),
            current: NEUTRAL.to_string(),
            entry_counts,
            exit_counts: BTreeMap::new(),
        }
    }

    pub fn add_state(&mut self, name: &str) {
        self.states.insert(name.to_string());
    }

    /// Bind a port to the set of main states in which it is active.
    /// A port bound to no state is always active.
    pub fn bind_port(&mut self, port: &str, states: &[&str]) {
        for s in states {
            self.states.insert(s.to_string());
        }
        self.bindings
            .entry(port.to_string())
            .or_default()
            .extend(states.iter().map(|s| s.to_string()));
    }

    pub fn on_entry(&mut self, state: &str, hook: impl Fn() + Send + Sync + 'static) {
        self.states.insert(state.to_string());
        self.entry_actions.insert(state.to_string(), Arc::new(hook));
    }

    pub fn on_exit(&mut self, state: &str, hook: impl Fn() + Send + Sync + 'static) {
        self.states.insert(state.to_string());
        self.exit_actions.insert(state.to_string(), Arc::new(hook));
    }

    pub fn has_state(&self, name: &str) -> bool {
        self.states.contains(name)
    }

    pub fn current(&self) -> &str {
        &self.current
    }

    /// (entry count, exit count) for a state; used by the pairing invariant.
    pub fn counts(&self, state: &str) -> (u64, u64) {
        (
            self.entry_counts.get(state).copied().unwrap_or(0),
            self.exit_counts.get(state).copied().unwrap_or(0),
        )
    }

    /// A port is active iff it is unbound, or the current state is a
    /// non-Neutral member of its binding set.
    pub fn port_active(&self, port: &str) -> bool {
        match self.bindings.get(port) {
            None => true,
            Some(set) if set.is_empty() => true,
            Some(set) => self.current != NEUTRAL && set.contains(&self.current),
        }
    }

    /// Run exit(current), switch, run entry(target).
    pub(crate) fn transition(&mut self, target: &str) {
        if self.current == target {
            return;
        }
        if let Some(hook) = self.exit_actions.get(&self.current).cloned() {
            hook();
        }
        *self.exit_counts.entry(self.current.clone()).or_insert(0) += 1;
        self.current = target.to_string();
        *self.entry_counts.entry(self.current.clone()).or_insert(0) += 1;
        if let Some(hook) = self.entry_actions.get(&self.current).cloned() {
            hook();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn unbound_port_always_active() {
        let sm = StateAutomaton::new();
        assert!(sm.port_active("anything"));
    }

    #[test]
    fn neutral_deactivates_bound_ports() {
        let mut sm = StateAutomaton::new();
        sm.bind_port("p", &["active"]);
        assert!(!sm.port_active("p"));
        sm.transition("active");
        assert!(sm.port_active("p"));
        sm.transition(NEUTRAL);
        assert!(!sm.port_active("p"));
    }

    #[test]
    fn entry_exit_pairing() {
        let mut sm = StateAutomaton::new();
        let entries = Arc::new(AtomicUsize::new(0));
        let exits = Arc::new(AtomicUsize::new(0));
        let (e2, x2) = (entries.clone(), exits.clone());
        sm.on_entry("active", move || {
            e2.fetch_add(1, Ordering::SeqCst);
        });
        sm.on_exit("active", move || {
            x2.fetch_add(1, Ordering::SeqCst);
        });
        sm.transition("active");
        sm.transition(NEUTRAL);
        sm.transition("active");
        assert_eq!(entries.load(Ordering::SeqCst), 2);
        assert_eq!(exits.load(Ordering::SeqCst), 1);
        let (e, x) = sm.counts("active");
        assert_eq!(e - x, 1);
        let (en, xn) = sm.counts(NEUTRAL);
        assert_eq!(en - xn, 0);
    }
}
