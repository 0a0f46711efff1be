//! Compiler from IR programs to BPMN documents with a left-to-right layout.
//!
//! Every statement becomes a block that owns a rectangle around a shared
//! horizontal axis: tasks sit on the axis, loops wrap their body in an
//! expanded subprocess, and conditionals put the then branch on the axis and
//! the else branch on a row below.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::bpmn::layout::{
    leaf_size, note_geometry, route, EVENT_SIZE, GAP, GATEWAY_SIZE, NOTE_SPACE, PAD_X, PAD_Y,
    ROOT_AXIS, ROOT_X, ROW_GAP, TASK_HEIGHT, TASK_WIDTH,
};
use crate::bpmn::{
    Association, BpmnDocument, Bounds, DiagramLayout, Edge, FlowNode, GatewayDirection, LoopKind,
    NodeKind, Point, Scope, SequenceFlow, Shape, TextAnnotation,
};
use crate::ir::{Call, Condition, Program, Stmt};

pub const PROCESS_ID: &str = "Process_1";

/// Space a block occupies: width, and extent above and below its axis.
#[derive(Debug, Clone, Copy, Default)]
struct Extent {
    width: f64,
    up: f64,
    down: f64,
}

fn measure_block(stmt: &Stmt) -> Extent {
    match stmt {
        Stmt::Assign { .. } | Stmt::Expr(_) => Extent {
            width: TASK_WIDTH,
            up: TASK_HEIGHT / 2.0,
            down: TASK_HEIGHT / 2.0,
        },
        Stmt::For { body, .. } | Stmt::While { body, .. } => {
            let inner = measure_scope(body);
            Extent {
                width: inner.width + 2.0 * PAD_X,
                up: inner.up + PAD_Y + NOTE_SPACE,
                down: inner.down + PAD_Y,
            }
        }
        Stmt::If {
            then_body,
            else_body,
            ..
        } => {
            let then = measure_seq(then_body);
            let (lane_width, down) = match else_body {
                Some(body) => {
                    let other = measure_seq(body);
                    (
                        then.width.max(other.width),
                        then.down + ROW_GAP + other.up + other.down,
                    )
                }
                None => (then.width, then.down + ROW_GAP),
            };
            Extent {
                width: 2.0 * GATEWAY_SIZE + 2.0 * GAP + lane_width,
                up: then.up.max(GATEWAY_SIZE / 2.0),
                down,
            }
        }
    }
}

fn measure_seq(stmts: &[Stmt]) -> Extent {
    let mut total = Extent::default();
    for (i, stmt) in stmts.iter().enumerate() {
        let e = measure_block(stmt);
        total.width += e.width + if i > 0 { GAP } else { 0.0 };
        total.up = total.up.max(e.up);
        total.down = total.down.max(e.down);
    }
    total
}

/// A scope with its start and end events.
fn measure_scope(stmts: &[Stmt]) -> Extent {
    let seq = measure_seq(stmts);
    let gaps = if stmts.is_empty() { GAP } else { 2.0 * GAP };
    Extent {
        width: 2.0 * EVENT_SIZE + gaps + seq.width,
        up: seq.up.max(EVENT_SIZE / 2.0),
        down: seq.down.max(EVENT_SIZE / 2.0),
    }
}

struct Compiler {
    counter: usize,
    bounds: HashMap<String, Bounds>,
    diagram: DiagramLayout,
}

impl Compiler {
    fn next_id(&mut self, prefix: &str) -> String {
        self.counter += 1;
        format!("{prefix}_{}", self.counter)
    }

    fn add_node(&mut self, scope: &mut Scope, node: FlowNode, bounds: Bounds) -> String {
        let id = node.id.clone();
        self.diagram.shapes.push(Shape {
            id: format!("BPMNShape_{id}"),
            element: id.clone(),
            bounds,
            expanded: matches!(node.kind, NodeKind::SubProcess { .. }).then_some(true),
            label: None,
        });
        self.bounds.insert(id.clone(), bounds);
        scope.nodes.push(node);
        id
    }

    fn connect(
        &mut self,
        scope: &mut Scope,
        source: &str,
        target: &str,
        condition: Option<String>,
        waypoints: Option<Vec<Point>>,
    ) -> String {
        let id = format!("flow_{source}_{target}");
        let waypoints =
            waypoints.unwrap_or_else(|| route(&self.bounds[source], &self.bounds[target]));
        self.diagram.edges.push(Edge {
            id: format!("BPMNEdge_{id}"),
            element: id.clone(),
            waypoints,
            label: None,
        });
        scope.flows.push(SequenceFlow {
            id: id.clone(),
            name: None,
            source: source.to_string(),
            target: target.to_string(),
            condition,
        });
        id
    }

    /// Emits start, body and end into `scope`, starting at `x` on `axis`.
    fn scope(&mut self, scope: &mut Scope, stmts: &[Stmt], x: f64, axis: f64, root: bool) {
        let half = EVENT_SIZE / 2.0;
        let start = FlowNode::new(
            self.next_id("startEvent"),
            root.then(|| "Start".to_string()),
            NodeKind::StartEvent,
        );
        let start = self.add_node(
            scope,
            start,
            Bounds::new(x, axis - half, EVENT_SIZE, EVENT_SIZE),
        );
        let mut right = x + EVENT_SIZE;
        let mut prev = start.clone();
        if let Some((_, exit, r)) = self.seq(scope, stmts, right + GAP, axis, Some(&start)) {
            prev = exit;
            right = r;
        }
        let end = FlowNode::new(
            self.next_id("endEvent"),
            root.then(|| "End".to_string()),
            NodeKind::EndEvent,
        );
        let end = self.add_node(
            scope,
            end,
            Bounds::new(right + GAP, axis - half, EVENT_SIZE, EVENT_SIZE),
        );
        self.connect(scope, &prev, &end, None, None);
    }

    /// Emits a chained statement list, linking `from` to its first block.
    /// Returns entry id, exit id and right edge.
    fn seq(
        &mut self,
        scope: &mut Scope,
        stmts: &[Stmt],
        x: f64,
        axis: f64,
        from: Option<&str>,
    ) -> Option<(String, String, f64)> {
        let mut chain: Option<(String, String, f64)> = None;
        for stmt in stmts {
            let left = chain.as_ref().map_or(x, |c| c.2 + GAP);
            let (entry, exit, right) = self.block(scope, stmt, left, axis);
            chain = Some(match chain {
                None => {
                    if let Some(from) = from {
                        self.connect(scope, from, &entry, None, None);
                    }
                    (entry, exit, right)
                }
                Some((first, prev, _)) => {
                    self.connect(scope, &prev, &entry, None, None);
                    (first, exit, right)
                }
            });
        }
        chain
    }

    fn task(&mut self, scope: &mut Scope, call: &Call, x: f64, axis: f64) -> (String, String, f64) {
        let (id, name, kind) = match call.user_task_description() {
            Some(text) => (self.next_id("userTask"), text.to_string(), NodeKind::UserTask),
            None => (self.next_id("task"), call.callee.clone(), NodeKind::Task),
        };
        let (w, h) = leaf_size(&kind);
        let id = self.add_node(
            scope,
            FlowNode::new(id, Some(name), kind),
            Bounds::new(x, axis - h / 2.0, w, h),
        );
        (id.clone(), id, x + w)
    }

    fn block(&mut self, scope: &mut Scope, stmt: &Stmt, x: f64, axis: f64) -> (String, String, f64) {
        match stmt {
            Stmt::Assign { call, .. } | Stmt::Expr(call) => self.task(scope, call, x, axis),
            Stmt::For {
                loop_var,
                iterable,
                body,
            } => self.subprocess(
                scope,
                LoopKind::MultiInstanceSequential,
                format!("for {loop_var} in {iterable}"),
                body,
                x,
                axis,
            ),
            Stmt::While { condition, body } => self.subprocess(
                scope,
                LoopKind::StandardLoop,
                format!("while {condition}"),
                body,
                x,
                axis,
            ),
            Stmt::If {
                condition,
                then_body,
                else_body,
            } => self.conditional(scope, condition, then_body, else_body.as_deref(), x, axis),
        }
    }

    fn subprocess(
        &mut self,
        scope: &mut Scope,
        loop_kind: LoopKind,
        header: String,
        body: &[Stmt],
        x: f64,
        axis: f64,
    ) -> (String, String, f64) {
        let inner_extent = measure_scope(body);
        let bounds = Bounds::new(
            x,
            axis - inner_extent.up - PAD_Y,
            inner_extent.width + 2.0 * PAD_X,
            inner_extent.up + inner_extent.down + 2.0 * PAD_Y,
        );
        let id = self.next_id("subProcess");
        // Register the shape before the children so the diagram lists parents first.
        self.diagram.shapes.push(Shape {
            id: format!("BPMNShape_{id}"),
            element: id.clone(),
            bounds,
            expanded: Some(true),
            label: None,
        });
        self.bounds.insert(id.clone(), bounds);
        let mut inner = Scope::default();
        self.scope(&mut inner, body, x + PAD_X, axis, false);
        scope.nodes.push(FlowNode::new(
            id.clone(),
            None,
            NodeKind::SubProcess {
                loop_kind: Some(loop_kind),
                scope: inner,
            },
        ));

        let note_id = self.next_id("annotation");
        let assoc_id = self.next_id("association");
        let (note_bounds, line) = note_geometry(&bounds);
        self.diagram.shapes.push(Shape {
            id: format!("BPMNShape_{note_id}"),
            element: note_id.clone(),
            bounds: note_bounds,
            expanded: None,
            label: None,
        });
        self.diagram.edges.push(Edge {
            id: format!("BPMNEdge_{assoc_id}"),
            element: assoc_id.clone(),
            waypoints: line,
            label: None,
        });
        scope.annotations.push(TextAnnotation {
            id: note_id.clone(),
            text: header,
        });
        scope.associations.push(Association {
            id: assoc_id,
            source: id.clone(),
            target: note_id,
        });
        (id.clone(), id, bounds.right())
    }

    fn conditional(
        &mut self,
        scope: &mut Scope,
        condition: &Condition,
        then_body: &[Stmt],
        else_body: Option<&[Stmt]>,
        x: f64,
        axis: f64,
    ) -> (String, String, f64) {
        let then_extent = measure_seq(then_body);
        let else_extent = else_body.map(measure_seq);
        let lane = then_extent
            .width
            .max(else_extent.map_or(0.0, |e| e.width));
        let half = GATEWAY_SIZE / 2.0;
        let split_id = self.next_id("gateway");
        let split = self.add_node(
            scope,
            FlowNode::new(
                split_id,
                None,
                NodeKind::ExclusiveGateway {
                    direction: GatewayDirection::Split,
                    default_flow: None,
                },
            ),
            Bounds::new(x, axis - half, GATEWAY_SIZE, GATEWAY_SIZE),
        );
        let lane_x = x + GATEWAY_SIZE + GAP;
        let join_x = lane_x + lane + GAP;
        let then_chain = self.seq(scope, then_body, lane_x, axis, None);
        let else_axis = axis + then_extent.down + ROW_GAP + else_extent.map_or(0.0, |e| e.up);
        let else_chain = else_body.and_then(|b| self.seq(scope, b, lane_x, else_axis, None));
        let join_id = self.next_id("gateway");
        let join = self.add_node(
            scope,
            FlowNode::new(
                join_id,
                None,
                NodeKind::ExclusiveGateway {
                    direction: GatewayDirection::Join,
                    default_flow: None,
                },
            ),
            Bounds::new(join_x, axis - half, GATEWAY_SIZE, GATEWAY_SIZE),
        );

        let cond = Some(condition.as_str().to_string());
        if let Some((entry, exit, _)) = &then_chain {
            self.connect(scope, &split, entry, cond, None);
            self.connect(scope, exit, &join, None, None);
        }
        let default = match &else_chain {
            Some((entry, exit, _)) => {
                let flow = self.connect(scope, &split, entry, None, None);
                self.connect(scope, exit, &join, None, None);
                flow
            }
            None => {
                let low = axis + then_extent.down + ROW_GAP / 2.0;
                let (sx, jx) = (x + half, join_x + half);
                let points = vec![
                    Point::new(sx, axis + half),
                    Point::new(sx, low),
                    Point::new(jx, low),
                    Point::new(jx, axis + half),
                ];
                self.connect(scope, &split, &join, None, Some(points))
            }
        };
        if let Some(node) = scope.nodes.iter_mut().find(|n| n.id == split) {
            if let NodeKind::ExclusiveGateway { default_flow, .. } = &mut node.kind {
                *default_flow = Some(default);
            }
        }
        (split, join.clone(), join_x + GATEWAY_SIZE)
    }
}

/// Compiles a program to a laid-out BPMN document. Total on parsed input.
///
/// Variable names and call arguments have no BPMN counterpart and are
/// dropped; the decompiler reconstructs names from task names.
pub fn compile(program: &Program) -> BpmnDocument {
    let extent = measure_scope(&program.statements);
    let axis = ROOT_AXIS.max(extent.up + 40.0);
    let mut compiler = Compiler {
        counter: 0,
        bounds: HashMap::new(),
        diagram: DiagramLayout {
            diagram_id: "BPMNDiagram_1".into(),
            plane_id: "BPMNPlane_1".into(),
            ..DiagramLayout::default()
        },
    };
    let mut root = Scope::default();
    compiler.scope(&mut root, &program.statements, ROOT_X, axis, true);
    BpmnDocument {
        definitions_id: Some("Definitions_1".into()),
        target_namespace: Some("http://bpmn.io/schema/bpmn".into()),
        process_id: PROCESS_ID.into(),
        process_name: None,
        executable: false,
        root,
        diagram: compiler.diagram,
    }
}

/// Graph isomorphism up to ids, geometry and event names.
pub fn structural_equal(a: &BpmnDocument, b: &BpmnDocument) -> bool {
    canonical_form(a) == canonical_form(b)
}

/// Deterministic text rendering of the process graph that ignores ids and
/// geometry. Two documents are structurally equal iff these match.
pub fn canonical_form(doc: &BpmnDocument) -> String {
    let mut out = String::new();
    canonical_scope(&doc.root, doc, &mut out);
    out
}

fn node_label(node: &FlowNode, doc: &BpmnDocument) -> String {
    let note = doc
        .loop_header(&node.id)
        .map(|t| format!(" note={:?}", Condition::new(t).as_str()))
        .unwrap_or_default();
    let base = match &node.kind {
        NodeKind::StartEvent => "start".to_string(),
        NodeKind::EndEvent => "end".to_string(),
        NodeKind::Task => format!("task {:?}", node.name.as_deref().unwrap_or("")),
        NodeKind::UserTask => format!("user {:?}", node.name.as_deref().unwrap_or("")),
        NodeKind::ExclusiveGateway { direction, .. } => match direction {
            GatewayDirection::Split => "split".to_string(),
            GatewayDirection::Join => "join".to_string(),
        },
        NodeKind::SubProcess { loop_kind, scope } => {
            let kind = match loop_kind {
                Some(LoopKind::MultiInstanceSequential) => "for",
                Some(LoopKind::StandardLoop) => "while",
                None => "plain",
            };
            let mut inner = String::new();
            canonical_scope(scope, doc, &mut inner);
            format!("sub {kind} {{{inner}}}")
        }
    };
    base + &note
}

fn canonical_scope(scope: &Scope, doc: &BpmnDocument, out: &mut String) {
    let labels: BTreeMap<&str, String> = scope
        .nodes
        .iter()
        .map(|n| (n.id.as_str(), node_label(n, doc)))
        .collect();
    let default_of = |flow: &SequenceFlow| {
        scope.node(&flow.source).is_some_and(|n| {
            matches!(&n.kind, NodeKind::ExclusiveGateway { default_flow: Some(d), .. } if d == &flow.id)
        })
    };
    let mut order: HashMap<&str, usize> = HashMap::new();
    let mut stack: Vec<&str> = Vec::new();
    let mut visit: Vec<&str> = Vec::new();
    if let Some(start) = scope.start_event() {
        stack.push(&start.id);
    }
    while let Some(id) = stack.pop() {
        if order.contains_key(id) {
            continue;
        }
        order.insert(id, visit.len());
        visit.push(id);
        let mut succ: Vec<&SequenceFlow> = scope.outgoing(id).collect();
        succ.sort_by_key(|f| {
            (
                default_of(f),
                f.condition.as_deref().map(|c| Condition::new(c).as_str().to_string()),
                labels.get(f.target.as_str()).cloned(),
            )
        });
        for f in succ.iter().rev() {
            stack.push(&f.target);
        }
    }
    for id in &visit {
        let _ = write!(out, "[{}", labels[id]);
        let mut succ: Vec<(bool, Option<String>, String)> = scope
            .outgoing(id)
            .map(|f| {
                let target = order
                    .get(f.target.as_str())
                    .map_or_else(|| "?".to_string(), |i| i.to_string());
                (
                    default_of(f),
                    f.condition.as_deref().map(|c| Condition::new(c).as_str().to_string()),
                    target,
                )
            })
            .collect();
        succ.sort();
        for (is_default, cond, target) in succ {
            let _ = write!(out, " ->{target}");
            if is_default {
                out.push_str(" default");
            }
            if let Some(c) = cond {
                let _ = write!(out, " if {c:?}");
            }
        }
        out.push(']');
    }
    let mut rest: Vec<&String> = scope
        .nodes
        .iter()
        .filter(|n| !order.contains_key(n.id.as_str()))
        .map(|n| &labels[n.id.as_str()])
        .collect();
    rest.sort();
    for label in rest {
        let _ = write!(out, "[unreachable {label}]");
    }
}
