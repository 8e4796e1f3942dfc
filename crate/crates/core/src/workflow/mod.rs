//! Workflow graphs as edited in the studio, and their compilation into
//! [`TaskSpec`]s for the planner.

mod task;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use petgraph::algo::tarjan_scc;
use petgraph::graphmap::DiGraphMap;
use serde::{Deserialize, Serialize};

pub use task::{Subtask, TaskError, TaskSpec};

use crate::canonical::to_canonical_string;
use crate::registry::is_valid_name;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NodeKind {
    Input,
    Output,
    Process,
    ModelCall,
}

impl NodeKind {
    pub fn is_work(self) -> bool {
        matches!(self, NodeKind::Process | NodeKind::ModelCall)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    #[serde(default)]
    pub required_tags: BTreeSet<String>,
    #[serde(default)]
    pub difficulty: f64,
    #[serde(default)]
    pub novel: bool,
    #[serde(default)]
    pub rationale: String,
}

impl Node {
    pub fn terminal(id: impl Into<String>, kind: NodeKind) -> Self {
        Node { id: id.into(), kind, required_tags: BTreeSet::new(), difficulty: 0.0, novel: false, rationale: String::new() }
    }

    pub fn work(id: impl Into<String>, kind: NodeKind, tags: &[&str], difficulty: f64) -> Self {
        Node {
            required_tags: tags.iter().map(|t| t.to_string()).collect(),
            difficulty,
            ..Node::terminal(id, kind)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WorkflowGraph {
    pub name: String,
    pub nodes: BTreeMap<String, Node>,
    pub edges: BTreeSet<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Violation {
    InvalidNodeId { id: String },
    DanglingEdge { from: String, to: String },
    Cycle { nodes: Vec<String> },
    InputCount { found: usize },
    OutputCount { found: usize },
    DeadNode { id: String },
    TerminalHasRequirements { id: String },
    MissingRequirements { id: String },
    DifficultyOutOfRange { id: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::InvalidNodeId { id } => write!(f, "INVALID_NODE_ID {id}"),
            Violation::DanglingEdge { from, to } => write!(f, "DANGLING_EDGE {from}->{to}"),
            Violation::Cycle { nodes } => write!(f, "CYCLE {{{}}}", nodes.join(",")),
            Violation::InputCount { found } => write!(f, "INPUT_COUNT {found}"),
            Violation::OutputCount { found } => write!(f, "OUTPUT_COUNT {found}"),
            Violation::DeadNode { id } => write!(f, "DEAD_NODE {id}"),
            Violation::TerminalHasRequirements { id } => write!(f, "TERMINAL_HAS_REQUIREMENTS {id}"),
            Violation::MissingRequirements { id } => write!(f, "MISSING_REQUIREMENTS {id}"),
            Violation::DifficultyOutOfRange { id } => write!(f, "DIFFICULTY_OUT_OF_RANGE {id}"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WorkflowError {
    #[error("invalid graph: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidGraph(Vec<Violation>),
    #[error("parse error at line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error("unknown field {0:?}")]
    UnknownField(String),
    #[error(transparent)]
    Task(#[from] TaskError),
}

impl WorkflowGraph {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), ..Default::default() }
    }

    pub fn add_node(&mut self, node: Node) -> &mut Self {
        self.nodes.insert(node.id.clone(), node);
        self
    }

    pub fn add_edge(&mut self, from: &str, to: &str) -> &mut Self {
        self.edges.insert((from.to_string(), to.to_string()));
        self
    }

    /// Every violated structural rule, in a deterministic order. Empty means valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (id, node) in &self.nodes {
            if !is_valid_name(id) || node.id != *id {
                out.push(Violation::InvalidNodeId { id: id.clone() });
            }
            if node.kind.is_work() {
                if node.required_tags.is_empty() {
                    out.push(Violation::MissingRequirements { id: id.clone() });
                }
            } else if !node.required_tags.is_empty() || node.difficulty != 0.0 || node.novel {
                out.push(Violation::TerminalHasRequirements { id: id.clone() });
            }
            if !(0.0..=1.0).contains(&node.difficulty) {
                out.push(Violation::DifficultyOutOfRange { id: id.clone() });
            }
        }

        let mut g: DiGraphMap<&str, ()> = DiGraphMap::new();
        for id in self.nodes.keys() {
            g.add_node(id.as_str());
        }
        for (from, to) in &self.edges {
            if self.nodes.contains_key(from) && self.nodes.contains_key(to) {
                g.add_edge(from.as_str(), to.as_str(), ());
            } else {
                out.push(Violation::DanglingEdge { from: from.clone(), to: to.clone() });
            }
        }
        for scc in tarjan_scc(&g) {
            if scc.len() > 1 || g.contains_edge(scc[0], scc[0]) {
                let mut nodes: Vec<String> = scc.iter().map(|s| s.to_string()).collect();
                nodes.sort();
                out.push(Violation::Cycle { nodes });
            }
        }

        let of_kind = |k: NodeKind| -> Vec<&str> {
            self.nodes.values().filter(|n| n.kind == k).map(|n| n.id.as_str()).collect()
        };
        let inputs = of_kind(NodeKind::Input);
        let outputs = of_kind(NodeKind::Output);
        if inputs.len() != 1 {
            out.push(Violation::InputCount { found: inputs.len() });
        }
        if outputs.len() != 1 {
            out.push(Violation::OutputCount { found: outputs.len() });
        }

        let from_input = reach(&g, &inputs, petgraph::Direction::Outgoing);
        let to_output = reach(&g, &outputs, petgraph::Direction::Incoming);
        for id in self.nodes.keys() {
            if !(from_input.contains(id.as_str()) && to_output.contains(id.as_str())) {
                out.push(Violation::DeadNode { id: id.clone() });
            }
        }
        out.sort();
        out
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }

    /// One subtask per work node; dependencies are the edges between work nodes.
    pub fn compile(&self, budget: Option<u64>, deadline_ms: Option<u64>) -> Result<TaskSpec, WorkflowError> {
        let violations = self.validate();
        if !violations.is_empty() {
            return Err(WorkflowError::InvalidGraph(violations));
        }
        let subtasks: BTreeMap<String, Subtask> = self
            .nodes
            .values()
            .filter(|n| n.kind.is_work())
            .map(|n| {
                (n.id.clone(), Subtask { required_tags: n.required_tags.clone(), difficulty: n.difficulty, novel: n.novel })
            })
            .collect();
        let deps = self
            .edges
            .iter()
            .filter(|(a, b)| subtasks.contains_key(a) && subtasks.contains_key(b))
            .cloned()
            .collect();
        Ok(TaskSpec::new(subtasks, deps, budget, deadline_ms)?)
    }

    /// Rationale text per work node, for plans built from this graph.
    pub fn rationales(&self) -> BTreeMap<String, String> {
        self.nodes
            .values()
            .filter(|n| n.kind.is_work())
            .map(|n| (n.id.clone(), n.rationale.clone()))
            .collect()
    }

    /// The `.wf.json` document. Only valid graphs are serialized.
    pub fn serialize(&self) -> Result<String, WorkflowError> {
        let violations = self.validate();
        if !violations.is_empty() {
            return Err(WorkflowError::InvalidGraph(violations));
        }
        Ok(self.to_document())
    }

    /// The document form without validation; the editor uses this for drafts.
    pub fn to_document(&self) -> String {
        let doc = GraphDocument {
            name: self.name.clone(),
            nodes: self.nodes.values().cloned().collect(),
            edges: self.edges.iter().map(|(a, b)| [a.clone(), b.clone()]).collect(),
        };
        to_canonical_string(&doc)
    }

    pub fn parse(text: &str) -> Result<Self, WorkflowError> {
        let doc: GraphDocument = serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            match msg.strip_prefix("unknown field `").and_then(|r| r.split_once('`')) {
                Some((field, _)) => WorkflowError::UnknownField(field.to_string()),
                None => WorkflowError::ParseError { line: e.line(), reason: msg },
            }
        })?;
        let mut g = WorkflowGraph::new(doc.name);
        for n in doc.nodes {
            if g.nodes.contains_key(&n.id) {
                return Err(WorkflowError::ParseError { line: 0, reason: format!("duplicate node id {:?}", n.id) });
            }
            g.nodes.insert(n.id.clone(), n);
        }
        for [a, b] in doc.edges {
            g.edges.insert((a, b));
        }
        Ok(g)
    }
}

fn reach<'a>(g: &DiGraphMap<&'a str, ()>, starts: &[&'a str], dir: petgraph::Direction) -> BTreeSet<&'a str> {
    let mut seen: BTreeSet<&str> = starts.iter().copied().collect();
    let mut queue: VecDeque<&str> = starts.iter().copied().collect();
    while let Some(n) = queue.pop_front() {
        for m in g.neighbors_directed(n, dir) {
            if seen.insert(m) {
                queue.push_back(m);
            }
        }
    }
    seen
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDocument {
    name: String,
    nodes: Vec<Node>,
    edges: Vec<[String; 2]>,
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn chain() -> WorkflowGraph {
        let mut g = WorkflowGraph::new("chain");
        g.add_node(Node::terminal("in", NodeKind::Input))
            .add_node(Node::work("m1", NodeKind::ModelCall, &["translate"], 0.5))
            .add_node(Node::work("m2", NodeKind::ModelCall, &["summarize"], 0.5))
            .add_node(Node::terminal("out", NodeKind::Output))
            .add_edge("in", "m1")
            .add_edge("m1", "m2")
            .add_edge("m2", "out");
        g
    }

    fn diamond() -> WorkflowGraph {
        let mut g = WorkflowGraph::new("diamond");
        g.add_node(Node::terminal("in", NodeKind::Input))
            .add_node(Node::work("a", NodeKind::ModelCall, &["x"], 0.5))
            .add_node(Node::work("b", NodeKind::Process, &["y"], 0.5))
            .add_node(Node::work("c", NodeKind::ModelCall, &["z"], 0.5))
            .add_node(Node::terminal("out", NodeKind::Output));
        for (a, b) in [("in", "a"), ("in", "b"), ("a", "c"), ("b", "c"), ("c", "out")] {
            g.add_edge(a, b);
        }
        g
    }

    #[test]
    fn simple_chain_is_valid() {
        let mut g = WorkflowGraph::new("g");
        g.add_node(Node::terminal("in", NodeKind::Input))
            .add_node(Node::work("m", NodeKind::ModelCall, &["t"], 0.1))
            .add_node(Node::terminal("out", NodeKind::Output))
            .add_edge("in", "m")
            .add_edge("m", "out");
        assert_eq!(g.validate(), []);
    }

    #[test]
    fn two_cycle() {
        let mut g = WorkflowGraph::new("g");
        g.add_node(Node::work("a", NodeKind::Process, &["t"], 0.1))
            .add_node(Node::work("b", NodeKind::Process, &["t"], 0.1))
            .add_edge("a", "b")
            .add_edge("b", "a");
        assert!(g.validate().contains(&Violation::Cycle { nodes: vec!["a".into(), "b".into()] }));
    }

    #[test]
    fn self_loop_is_a_cycle() {
        let mut g = chain();
        g.add_edge("m1", "m1");
        assert!(g.validate().contains(&Violation::Cycle { nodes: vec!["m1".into()] }));
    }

    #[test]
    fn dead_process_node() {
        let mut g = chain();
        g.add_node(Node::work("p", NodeKind::Process, &["t"], 0.1)).add_edge("in", "p");
        assert_eq!(g.validate(), [Violation::DeadNode { id: "p".into() }]);
    }

    #[test]
    fn terminal_and_requirement_rules() {
        let mut g = chain();
        g.nodes.get_mut("in").unwrap().required_tags.insert("x".into());
        g.nodes.get_mut("m1").unwrap().required_tags.clear();
        g.nodes.get_mut("m2").unwrap().difficulty = 1.5;
        g.add_edge("m2", "ghost");
        assert_eq!(
            g.validate(),
            [
                Violation::DanglingEdge { from: "m2".into(), to: "ghost".into() },
                Violation::TerminalHasRequirements { id: "in".into() },
                Violation::MissingRequirements { id: "m1".into() },
                Violation::DifficultyOutOfRange { id: "m2".into() },
            ]
        );
    }

    #[test]
    fn input_output_counts() {
        let mut g = chain();
        g.add_node(Node::terminal("in2", NodeKind::Input)).add_edge("in2", "m1");
        g.nodes.remove("out");
        g.edges.remove(&("m2".into(), "out".into()));
        let v = g.validate();
        assert!(v.contains(&Violation::InputCount { found: 2 }));
        assert!(v.contains(&Violation::OutputCount { found: 0 }));
    }

    #[test]
    fn compile_chain() {
        let t = chain().compile(None, None).unwrap();
        assert_eq!(t.subtasks.len(), 2);
        assert_eq!(t.deps, BTreeSet::from([("m1".to_string(), "m2".to_string())]));
    }

    #[test]
    fn compile_diamond() {
        let t = diamond().compile(Some(100), Some(1000)).unwrap();
        assert_eq!(t.subtasks.len(), 3);
        assert_eq!(
            t.deps,
            BTreeSet::from([("a".to_string(), "c".to_string()), ("b".to_string(), "c".to_string())])
        );
        assert!(t.verify_hash());
    }

    #[test]
    fn compile_invalid() {
        let mut g = chain();
        g.add_edge("m2", "m1");
        assert!(matches!(g.compile(None, None), Err(WorkflowError::InvalidGraph(_))));
    }

    #[test]
    fn document_round_trip() {
        let g = diamond();
        let text = g.serialize().unwrap();
        assert_eq!(WorkflowGraph::parse(&text).unwrap(), g);
    }

    #[test]
    fn strict_parsing() {
        let text = diamond().serialize().unwrap().replace("\"nodes\"", "\"nodez\"");
        assert!(matches!(WorkflowGraph::parse(&text), Err(WorkflowError::UnknownField(f)) if f == "nodez"));
        let full = diamond().serialize().unwrap();
        assert!(matches!(
            WorkflowGraph::parse(&full[..full.len() / 2]),
            Err(WorkflowError::ParseError { .. })
        ));
        let extra = full.replacen("\"novel\"", "\"colour\":1,\"novel\"", 1);
        assert!(matches!(WorkflowGraph::parse(&extra), Err(WorkflowError::UnknownField(f)) if f == "colour"));
    }

    #[test]
    fn serialize_requires_valid_graph() {
        let mut g = chain();
        g.add_edge("m2", "m1");
        assert!(g.serialize().is_err());
    }
}
