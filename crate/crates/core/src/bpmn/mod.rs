//! In-memory BPMN 2.0 model covering the constructs workflows here use:
//! start/end events, tasks, user tasks, looped subprocesses, exclusive
//! gateways, sequence flows and text annotations, plus diagram interchange.

pub(crate) mod layout;
mod read;
mod write;

use std::collections::{HashMap, HashSet};

pub use layout::fill_missing_layout;
pub use read::{parse_bpmn, ParseError};
pub use write::serialize_bpmn;

pub const BPMN_MODEL_NS: &str = "http://www.omg.org/spec/BPMN/20100524/MODEL";
pub const BPMN_DI_NS: &str = "http://www.omg.org/spec/BPMN/20100524/DI";
pub const DC_NS: &str = "http://www.omg.org/spec/DD/20100524/DC";
pub const DI_NS: &str = "http://www.omg.org/spec/DD/20100524/DI";
pub const XSI_NS: &str = "http://www.w3.org/2001/XMLSchema-instance";

#[derive(Debug, Clone, PartialEq)]
pub struct BpmnDocument {
    pub definitions_id: Option<String>,
    pub target_namespace: Option<String>,
    pub process_id: String,
    pub process_name: Option<String>,
    pub executable: bool,
    pub root: Scope,
    pub diagram: DiagramLayout,
}

/// Contents of a process or of one subprocess.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scope {
    pub nodes: Vec<FlowNode>,
    pub flows: Vec<SequenceFlow>,
    pub annotations: Vec<TextAnnotation>,
    pub associations: Vec<Association>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowNode {
    pub id: String,
    pub name: Option<String>,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    StartEvent,
    EndEvent,
    Task,
    UserTask,
    SubProcess {
        loop_kind: Option<LoopKind>,
        scope: Scope,
    },
    ExclusiveGateway {
        direction: GatewayDirection,
        default_flow: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LoopKind {
    /// `for` loops.
    MultiInstanceSequential,
    /// `while` loops.
    StandardLoop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GatewayDirection {
    Split,
    Join,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceFlow {
    pub id: String,
    pub name: Option<String>,
    pub source: String,
    pub target: String,
    pub condition: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextAnnotation {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Association {
    pub id: String,
    pub source: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiagramLayout {
    pub diagram_id: String,
    pub plane_id: String,
    pub shapes: Vec<Shape>,
    pub edges: Vec<Edge>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    pub id: String,
    pub element: String,
    pub bounds: Bounds,
    pub expanded: Option<bool>,
    pub label: Option<Label>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub id: String,
    pub element: String,
    pub waypoints: Vec<Point>,
    pub label: Option<Label>,
}

/// A `BPMNLabel`; an empty label element has no bounds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Label {
    pub bounds: Option<Bounds>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Bounds {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid BPMN document: {}", problems.join("; "))]
pub struct ValidationError {
    pub problems: Vec<String>,
}

impl Bounds {
    pub fn new(x: f64, y: f64, width: f64, height: f64) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    pub fn right(&self) -> f64 {
        self.x + self.width
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.height
    }

    pub fn center_x(&self) -> f64 {
        self.x + self.width / 2.0
    }

    pub fn center_y(&self) -> f64 {
        self.y + self.height / 2.0
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.x + dx, self.y + dy, self.width, self.height)
    }

    /// Interiors intersect (touching edges do not count).
    pub fn overlaps(&self, other: &Bounds) -> bool {
        self.x < other.right()
            && other.x < self.right()
            && self.y < other.bottom()
            && other.y < self.bottom()
    }

    /// Point lies on the boundary or inside, within `tolerance`.
    pub fn touches(&self, p: Point, tolerance: f64) -> bool {
        p.x >= self.x - tolerance
            && p.x <= self.right() + tolerance
            && p.y >= self.y - tolerance
            && p.y <= self.bottom() + tolerance
    }

    pub fn union(&self, other: &Bounds) -> Bounds {
        let x = self.x.min(other.x);
        let y = self.y.min(other.y);
        Bounds::new(
            x,
            y,
            self.right().max(other.right()) - x,
            self.bottom().max(other.bottom()) - y,
        )
    }
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

impl FlowNode {
    pub fn new(id: impl Into<String>, name: Option<String>, kind: NodeKind) -> Self {
        Self {
            id: id.into(),
            name,
            kind,
        }
    }

    pub fn scope(&self) -> Option<&Scope> {
        match &self.kind {
            NodeKind::SubProcess { scope, .. } => Some(scope),
            _ => None,
        }
    }

    pub fn scope_mut(&mut self) -> Option<&mut Scope> {
        match &mut self.kind {
            NodeKind::SubProcess { scope, .. } => Some(scope),
            _ => None,
        }
    }

    pub fn is_start(&self) -> bool {
        matches!(self.kind, NodeKind::StartEvent)
    }

    pub fn is_end(&self) -> bool {
        matches!(self.kind, NodeKind::EndEvent)
    }

    pub fn is_event(&self) -> bool {
        self.is_start() || self.is_end()
    }

    pub fn element_name(&self) -> &'static str {
        match self.kind {
            NodeKind::StartEvent => "startEvent",
            NodeKind::EndEvent => "endEvent",
            NodeKind::Task => "task",
            NodeKind::UserTask => "userTask",
            NodeKind::SubProcess { .. } => "subProcess",
            NodeKind::ExclusiveGateway { .. } => "exclusiveGateway",
        }
    }
}

impl Scope {
    pub fn node(&self, id: &str) -> Option<&FlowNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn flow(&self, id: &str) -> Option<&SequenceFlow> {
        self.flows.iter().find(|f| f.id == id)
    }

    pub fn outgoing<'a>(&'a self, node: &'a str) -> impl Iterator<Item = &'a SequenceFlow> + 'a {
        self.flows.iter().filter(move |f| f.source == node)
    }

    pub fn incoming<'a>(&'a self, node: &'a str) -> impl Iterator<Item = &'a SequenceFlow> + 'a {
        self.flows.iter().filter(move |f| f.target == node)
    }

    pub fn start_event(&self) -> Option<&FlowNode> {
        self.nodes.iter().find(|n| n.is_start())
    }

    pub fn end_event(&self) -> Option<&FlowNode> {
        self.nodes.iter().find(|n| n.is_end())
    }

    /// The annotation associated with `node`, in either association direction.
    pub fn annotation_for(&self, node: &str) -> Option<&TextAnnotation> {
        self.associations.iter().find_map(|a| {
            let other = if a.source == node {
                &a.target
            } else if a.target == node {
                &a.source
            } else {
                return None;
            };
            self.annotations.iter().find(|t| &t.id == other)
        })
    }

    /// Calls `f` on this scope and every nested subprocess scope, pre-order.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Scope)) {
        f(self);
        for node in &self.nodes {
            if let Some(inner) = node.scope() {
                inner.walk(f);
            }
        }
    }

    /// Every element id declared in this scope and below.
    pub fn element_ids(&self) -> Vec<String> {
        let mut ids = Vec::new();
        self.walk(&mut |scope| {
            ids.extend(scope.nodes.iter().map(|n| n.id.clone()));
            ids.extend(scope.flows.iter().map(|f| f.id.clone()));
            ids.extend(scope.annotations.iter().map(|a| a.id.clone()));
            ids.extend(scope.associations.iter().map(|a| a.id.clone()));
        });
        ids
    }
}

impl DiagramLayout {
    pub fn shape(&self, element: &str) -> Option<&Shape> {
        self.shapes.iter().find(|s| s.element == element)
    }

    pub fn shape_mut(&mut self, element: &str) -> Option<&mut Shape> {
        self.shapes.iter_mut().find(|s| s.element == element)
    }

    pub fn edge(&self, element: &str) -> Option<&Edge> {
        self.edges.iter().find(|e| e.element == element)
    }

    pub fn edge_mut(&mut self, element: &str) -> Option<&mut Edge> {
        self.edges.iter_mut().find(|e| e.element == element)
    }

    pub fn bounds_by_element(&self) -> HashMap<&str, Bounds> {
        self.shapes
            .iter()
            .map(|s| (s.element.as_str(), s.bounds))
            .collect()
    }
}

impl BpmnDocument {
    /// Finds a node anywhere in the document.
    pub fn find_node(&self, id: &str) -> Option<&FlowNode> {
        let mut found = None;
        self.root.walk(&mut |scope| {
            if found.is_none() {
                found = scope.node(id);
            }
        });
        found
    }

    /// The scope that declares `id` (node, flow, annotation or association).
    pub fn scope_of(&self, id: &str) -> Option<&Scope> {
        let mut found = None;
        self.root.walk(&mut |scope| {
            if found.is_none()
                && (scope.node(id).is_some()
                    || scope.flow(id).is_some()
                    || scope.annotations.iter().any(|a| a.id == id)
                    || scope.associations.iter().any(|a| a.id == id))
            {
                found = Some(scope);
            }
        });
        found
    }

    /// Header text of a loop subprocess, read from its associated annotation.
    pub fn loop_header(&self, subprocess: &str) -> Option<&str> {
        let mut found = None;
        self.root.walk(&mut |scope| {
            if found.is_none() {
                found = scope.annotation_for(subprocess).map(|a| a.text.as_str());
            }
        });
        found
    }

    /// Number of associations linking `node` to a text annotation.
    pub fn annotation_links(&self, node: &str) -> usize {
        let mut count = 0;
        self.root.walk(&mut |scope| {
            count += scope
                .associations
                .iter()
                .filter(|a| {
                    let other = if a.source == node {
                        &a.target
                    } else if a.target == node {
                        &a.source
                    } else {
                        return false;
                    };
                    scope.annotations.iter().any(|t| &t.id == other)
                })
                .count();
        });
        count
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut problems = Vec::new();
        let mut seen = HashSet::new();
        for id in self.root.element_ids() {
            if !seen.insert(id.clone()) {
                problems.push(format!("duplicate element id '{id}'"));
            }
        }
        if !seen.insert(self.process_id.clone()) {
            problems.push(format!("process id '{}' reused by an element", self.process_id));
        }
        self.validate_scope(&self.root, "process", &mut problems);
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ValidationError { problems })
        }
    }

    fn validate_scope(&self, scope: &Scope, label: &str, problems: &mut Vec<String>) {
        let starts = scope.nodes.iter().filter(|n| n.is_start()).count();
        let ends = scope.nodes.iter().filter(|n| n.is_end()).count();
        if starts != 1 {
            problems.push(format!("{label} has {starts} start events, expected 1"));
        }
        if ends != 1 {
            problems.push(format!("{label} has {ends} end events, expected 1"));
        }
        for flow in &scope.flows {
            for end in [&flow.source, &flow.target] {
                if scope.node(end).is_none() {
                    problems.push(format!(
                        "sequence flow '{}' references '{end}' outside its scope",
                        flow.id
                    ));
                }
            }
            if flow.condition.is_some() {
                let from_split = matches!(
                    scope.node(&flow.source).map(|n| &n.kind),
                    Some(NodeKind::ExclusiveGateway {
                        direction: GatewayDirection::Split,
                        ..
                    })
                );
                if !from_split {
                    problems.push(format!(
                        "sequence flow '{}' has a condition but does not leave a split gateway",
                        flow.id
                    ));
                }
            }
            match self.diagram.edge(&flow.id) {
                Some(edge) if edge.waypoints.len() >= 2 => {}
                Some(_) => problems.push(format!("edge of '{}' has fewer than 2 waypoints", flow.id)),
                None => problems.push(format!("sequence flow '{}' has no diagram edge", flow.id)),
            }
        }
        for assoc in &scope.associations {
            let known = |id: &str| {
                self.find_node(id).is_some() || scope.annotations.iter().any(|a| a.id == id)
            };
            if !known(&assoc.source) || !known(&assoc.target) {
                problems.push(format!("association '{}' has a dangling end", assoc.id));
            }
        }
        for node in &scope.nodes {
            if self.diagram.shape(&node.id).is_none() {
                problems.push(format!("node '{}' has no diagram shape", node.id));
            }
            match &node.kind {
                NodeKind::SubProcess { loop_kind, scope: inner } => {
                    if loop_kind.is_some() {
                        let count = self.annotation_links(&node.id);
                        if count != 1 {
                            problems.push(format!(
                                "loop subprocess '{}' has {count} annotations, expected 1",
                                node.id
                            ));
                        }
                    }
                    self.validate_scope(inner, &format!("subprocess '{}'", node.id), problems);
                }
                NodeKind::ExclusiveGateway {
                    default_flow: Some(default),
                    ..
                } if !scope.outgoing(&node.id).any(|f| &f.id == default) => {
                    problems.push(format!(
                        "gateway '{}' default flow '{default}' is not one of its outgoing flows",
                        node.id
                    ));
                }
                _ => {}
            }
        }
    }
}
