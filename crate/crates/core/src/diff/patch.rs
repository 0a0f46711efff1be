//! Applying an edit script to a BPMN document while keeping the user's
//! diagram: untouched nodes keep their ids and boxes, new blocks are laid
//! out with the compiler and slotted in, and only the blocks to the right of
//! an insertion are pushed along.

use std::collections::{HashMap, HashSet};

use super::tree::{self, EditTag, Head, Node};
use super::{EditScript, PatchError};
use crate::bpmn::layout::{route, GAP, PAD_X, PAD_Y, ROW_GAP};
use crate::bpmn::{
    Association, BpmnDocument, Bounds, DiagramLayout, Edge, FlowNode, Label, NodeKind, Point, Scope, SequenceFlow, Shape, TextAnnotation,
};
use crate::bpmn2py::{decompile_traced, Origin};
use crate::ir::{Call, Program, Stmt};
use crate::py2bpmn::compile;

const EPS: f64 = 0.01;

#[derive(Debug, Clone, Default)]
struct PTag {
    origin: Option<Origin>,
    moved: bool,
    edited: bool,
}

impl EditTag for PTag {
    fn on_moved(&mut self) {
        self.moved = true;
    }
    fn on_edited(&mut self) {
        self.edited = true;
    }
}

fn build(stmt: &Stmt, origin: &Origin) -> Node<PTag> {
    let zip = |stmts: &[Stmt], origins: &[Origin]| -> Vec<Node<PTag>> {
        stmts.iter().zip(origins).map(|(s, o)| build(s, o)).collect()
    };
    let bodies = match (stmt, origin) {
        (Stmt::For { body, .. } | Stmt::While { body, .. }, Origin::Loop { body: ob, .. }) => {
            vec![zip(body, ob)]
        }
        (
            Stmt::If {
                then_body,
                else_body,
                ..
            },
            Origin::Branch {
                then_body: ot,
                else_body: oe,
                ..
            },
        ) => vec![
            zip(then_body, ot),
            zip(
                else_body.as_deref().unwrap_or(&[]),
                oe.as_deref().unwrap_or(&[]),
            ),
        ],
        _ => Vec::new(),
    };
    Node {
        head: Head::of(stmt),
        tag: PTag {
            origin: Some(origin.clone()),
            ..PTag::default()
        },
        bodies,
    }
}

fn loop_header(head: &Head) -> String {
    match head {
        Head::For { loop_var, iterable } => format!("for {loop_var} in {iterable}"),
        Head::While(c) => format!("while {c}"),
        _ => String::new(),
    }
}

fn leaf_node(id: &str, call: &Call) -> FlowNode {
    match call.user_task_description() {
        Some(text) => FlowNode::new(id, Some(text.to_string()), NodeKind::UserTask),
        None => FlowNode::new(id, Some(call.callee.clone()), NodeKind::Task),
    }
}

fn head_call(head: &Head) -> Option<&Call> {
    match head {
        Head::Assign { call, .. } | Head::Expr(call) => Some(call),
        _ => None,
    }
}

/// Placement state after the last emitted block of a sequence.
#[derive(Debug, Clone)]
struct Cursor {
    exit: String,
    right: f64,
    carry: f64,
    /// The last block is new or wider than it was, so a reused block that
    /// follows must keep the standard gap from it.
    dirty: bool,
}

struct Pending {
    source: String,
    target: String,
    condition: Option<String>,
    default_of: Option<String>,
    route: Option<Vec<Point>>,
}

struct Ctx<'a> {
    base: Option<&'a Scope>,
    out: Scope,
    pending: Vec<Pending>,
    /// Shapes and edges emitted for this scope, nested ones included.
    elements: Vec<String>,
}

impl<'a> Ctx<'a> {
    fn new(base: Option<&'a Scope>) -> Self {
        Ctx {
            base,
            out: Scope::default(),
            pending: Vec::new(),
            elements: Vec::new(),
        }
    }
}

struct Patcher<'a> {
    base: &'a BpmnDocument,
    base_bounds: HashMap<&'a str, Bounds>,
    used: HashSet<String>,
    claimed: HashSet<String>,
    /// Compiled flow id -> emitted flow id, for the block being copied.
    flow_ids: HashMap<String, String>,
    shapes: HashMap<String, Shape>,
    edges: HashMap<String, Edge>,
    order: Vec<String>,
}

struct Block {
    entry: String,
    exit: String,
    right: f64,
    carry: f64,
    dirty: bool,
}

impl<'a> Patcher<'a> {
    fn fresh_id(&mut self, prefix: &str) -> String {
        let mut n = 1;
        loop {
            let id = format!("{prefix}_{n}");
            if self.used.insert(id.clone()) {
                return id;
            }
            n += 1;
        }
    }

    fn bounds(&self, id: &str) -> Bounds {
        self.shapes
            .get(id)
            .map(|s| s.bounds)
            .expect("every placed node has a shape")
    }

    fn base_bounds(&self, id: &str) -> Bounds {
        self.base_bounds
            .get(id)
            .copied()
            .expect("every base node has a shape")
    }

    fn put_shape(&mut self, ctx: &mut Ctx, element: &str, bounds: Bounds, expanded: Option<bool>, label: Option<Label>) {
        self.shapes.insert(
            element.to_string(),
            Shape {
                id: String::new(),
                element: element.to_string(),
                bounds,
                expanded,
                label,
            },
        );
        self.order.push(element.to_string());
        ctx.elements.push(element.to_string());
    }

    fn put_edge(&mut self, ctx: &mut Ctx, element: &str, waypoints: Vec<Point>, label: Option<Label>) {
        self.edges.insert(
            element.to_string(),
            Edge {
                id: String::new(),
                element: element.to_string(),
                waypoints,
                label,
            },
        );
        self.order.push(element.to_string());
        ctx.elements.push(element.to_string());
    }

    /// Copies a base shape shifted by `(dx, dy)`.
    fn keep_shape(&mut self, ctx: &mut Ctx, element: &str, dx: f64, dy: f64) -> Bounds {
        let base = self.base.diagram.shape(element).expect("base shape exists");
        let bounds = base.bounds.translated(dx, dy);
        let label = shift_label(&base.label, dx, dy);
        let expanded = base.expanded;
        self.put_shape(ctx, element, bounds, expanded, label);
        bounds
    }

    fn translate(&mut self, elements: &[String], dx: f64, dy: f64) {
        for id in elements {
            if let Some(s) = self.shapes.get_mut(id) {
                s.bounds = s.bounds.translated(dx, dy);
                s.label = shift_label(&s.label, dx, dy);
            }
            if let Some(e) = self.edges.get_mut(id) {
                for p in &mut e.waypoints {
                    p.x += dx;
                    p.y += dy;
                }
                e.label = shift_label(&e.label, dx, dy);
            }
        }
    }

    fn extent(&self, elements: &[String]) -> Option<Bounds> {
        elements
            .iter()
            .filter_map(|id| self.shapes.get(id).map(|s| s.bounds))
            .reduce(|a, b| a.union(&b))
    }

    /// Carry needed so a reused box at base x `left` clears the cursor.
    fn carry_for(prev: &Cursor, left: f64) -> f64 {
        let gap = if prev.dirty { GAP } else { 0.0 };
        if left + prev.carry < prev.right + gap - EPS {
            prev.right + gap - left
        } else {
            prev.carry
        }
    }

    fn connect(ctx: &mut Ctx, source: &str, target: &str, condition: Option<String>, default_of: Option<String>) {
        ctx.pending.push(Pending {
            source: source.to_string(),
            target: target.to_string(),
            condition,
            default_of,
            route: None,
        });
    }

    fn seq(
        &mut self,
        ctx: &mut Ctx<'a>,
        nodes: &[Node<PTag>],
        axis: f64,
        mut prev: Cursor,
        mut lead: (Option<String>, Option<String>),
    ) -> Cursor {
        for node in nodes {
            let block = self.block(ctx, node, axis, &prev);
            let (cond, default_of) = std::mem::take(&mut lead);
            Self::connect(ctx, &prev.exit, &block.entry, cond, default_of);
            prev = Cursor {
                exit: block.exit,
                right: block.right,
                carry: block.carry,
                dirty: block.dirty,
            };
        }
        prev
    }

    fn block(&mut self, ctx: &mut Ctx<'a>, node: &Node<PTag>, axis: f64, prev: &Cursor) -> Block {
        match (&node.tag.origin, node.tag.moved) {
            (Some(Origin::Leaf { node: id }), false) => {
                let id = id.clone();
                let carry = Self::carry_for(prev, self.base_bounds(&id).x);
                let b = self.keep_shape(ctx, &id, carry, 0.0);
                let mut flow_node = self
                    .base
                    .find_node(&id)
                    .cloned()
                    .expect("origin nodes exist in the base");
                if node.tag.edited {
                    let call = head_call(&node.head).expect("leaf origin on a call");
                    flow_node = leaf_node(&id, call);
                }
                ctx.out.nodes.push(flow_node);
                Block {
                    entry: id.clone(),
                    exit: id,
                    right: b.right(),
                    carry,
                    dirty: false,
                }
            }
            (Some(Origin::Loop { node: id, .. }), false) => self.reused_loop(ctx, node, id, prev),
            (Some(Origin::Branch { split, join, else_body, .. }), false) => {
                self.reused_branch(ctx, node, split, join, else_body.as_deref(), prev)
            }
            _ => self.fresh_block(ctx, node, prev.right + GAP, axis, prev.carry),
        }
    }

    /// The association linking a base loop to its header note, anywhere in the base.
    fn base_note(&self, id: &str) -> Option<(TextAnnotation, Association)> {
        let mut found = None;
        self.base.root.walk(&mut |scope| {
            if found.is_some() {
                return;
            }
            for a in &scope.associations {
                let other = if a.source == id {
                    &a.target
                } else if a.target == id {
                    &a.source
                } else {
                    continue;
                };
                if let Some(t) = scope.annotations.iter().find(|t| &t.id == other) {
                    found = Some((t.clone(), a.clone()));
                    return;
                }
            }
        });
        found
    }

    fn reused_loop(&mut self, ctx: &mut Ctx<'a>, node: &Node<PTag>, id: &str, prev: &Cursor) -> Block {
        let base = self.base;
        let base_node = base.find_node(id).expect("origin nodes exist in the base");
        let NodeKind::SubProcess {
            loop_kind,
            scope: base_inner,
        } = &base_node.kind
        else {
            unreachable!("loop origins are subprocesses")
        };
        let sub_base = self.base_bounds(id);
        let carry = Self::carry_for(prev, sub_base.x);

        // Reserve the subprocess slot before the children so the diagram
        // keeps listing parents first.
        let expanded = base.diagram.shape(id).and_then(|s| s.expanded);
        self.put_shape(ctx, id, sub_base.translated(carry, 0.0), expanded, None);

        let mut inner = Ctx::new(Some(base_inner));
        let start = base_inner.start_event().expect("decompiled scopes have a start");
        let end = base_inner.end_event().expect("decompiled scopes have an end");
        let start_b = self.keep_shape(&mut inner, &start.id, carry, 0.0);
        inner.out.nodes.push(start.clone());
        let cursor = Cursor {
            exit: start.id.clone(),
            right: start_b.right(),
            carry,
            dirty: false,
        };
        let last = self.seq(&mut inner, &node.bodies[0], start_b.center_y(), cursor, (None, None));
        let end_carry = Self::carry_for(&last, self.base_bounds(&end.id).x);
        self.keep_shape(&mut inner, &end.id, end_carry, 0.0);
        inner.out.nodes.push(end.clone());
        Self::connect(&mut inner, &last.exit, &end.id, None, None);
        self.resolve(&mut inner);

        let content = self.extent(&inner.elements).expect("scope has events");
        let shifted = sub_base.translated(carry, 0.0);
        let x = shifted.x.min(content.x - PAD_X);
        let y = shifted.y.min(content.y - PAD_Y);
        let right = shifted.right().max(content.right() + PAD_X);
        let bottom = shifted.bottom().max(content.bottom() + PAD_Y);
        let bounds = Bounds::new(x, y, right - x, bottom - y);
        if let Some(s) = self.shapes.get_mut(id) {
            s.bounds = bounds;
        }
        ctx.elements.extend(inner.elements);

        if let Some((note, assoc)) = self.base_note(id) {
            let dy = bounds.y - sub_base.y;
            self.keep_shape(ctx, &note.id, carry, dy);
            if let Some(edge) = base.diagram.edge(&assoc.id) {
                let pts = edge.waypoints.iter().map(|p| Point::new(p.x + carry, p.y + dy)).collect();
                let label = shift_label(&edge.label, carry, dy);
                self.put_edge(ctx, &assoc.id, pts, label);
            }
            ctx.out.annotations.push(TextAnnotation {
                id: note.id,
                text: loop_header(&node.head),
            });
            ctx.out.associations.push(assoc);
        }

        let mut flow_node = base_node.clone();
        flow_node.kind = NodeKind::SubProcess {
            loop_kind: *loop_kind,
            scope: inner.out,
        };
        ctx.out.nodes.push(flow_node);
        Block {
            entry: id.to_string(),
            exit: id.to_string(),
            right,
            carry,
            dirty: right > sub_base.right() + carry + EPS,
        }
    }

    /// Axis a base statement was drawn on.
    fn base_axis(&self, origin: &Origin) -> f64 {
        match origin {
            Origin::Leaf { node } => self.base_bounds(node).center_y(),
            Origin::Branch { split, .. } => self.base_bounds(split).center_y(),
            Origin::Loop { node, .. } => self
                .base
                .find_node(node)
                .and_then(FlowNode::scope)
                .and_then(Scope::start_event)
                .map_or_else(|| self.base_bounds(node).center_y(), |s| self.base_bounds(&s.id).center_y()),
        }
    }

    fn reused_branch(
        &mut self,
        ctx: &mut Ctx<'a>,
        node: &Node<PTag>,
        split: &str,
        join: &str,
        base_else: Option<&[Origin]>,
        prev: &Cursor,
    ) -> Block {
        let base = self.base;
        let carry = Self::carry_for(prev, self.base_bounds(split).x);
        let split_b = self.keep_shape(ctx, split, carry, 0.0);
        let mut split_node = base.find_node(split).cloned().expect("origin nodes exist");
        let start = Cursor {
            exit: split.to_string(),
            right: split_b.right(),
            carry,
            dirty: false,
        };
        let condition = match &node.head {
            Head::If(c) => c.to_string(),
            _ => unreachable!("branch origins are conditionals"),
        };

        let mark = ctx.elements.len();
        let then_end = self.seq(
            ctx,
            &node.bodies[0],
            split_b.center_y(),
            start.clone(),
            (Some(condition), None),
        );
        let then_extent = self
            .extent(&ctx.elements[mark..])
            .unwrap_or(split_b);

        let mut lane_ends = vec![then_end];
        let has_else = !node.bodies[1].is_empty();
        if has_else {
            let known_axis = base_else
                .and_then(|o| o.first())
                .map(|o| self.base_axis(o));
            let axis = known_axis.unwrap_or(then_extent.bottom() + ROW_GAP + 1000.0);
            let mark = ctx.elements.len();
            let else_end = self.seq(
                ctx,
                &node.bodies[1],
                axis,
                start.clone(),
                (None, Some(split.to_string())),
            );
            if known_axis.is_none() {
                let lane: Vec<String> = ctx.elements[mark..].to_vec();
                if let Some(ext) = self.extent(&lane) {
                    self.translate(&lane, 0.0, then_extent.bottom() + ROW_GAP - ext.y);
                }
            }
            lane_ends.push(else_end);
        }

        let join_base = self.base_bounds(join);
        let mut join_carry = carry;
        for end in &lane_ends {
            join_carry = join_carry.max(Self::carry_for(end, join_base.x));
        }
        let join_b = self.keep_shape(ctx, join, join_carry, 0.0);
        ctx.out
            .nodes
            .push(base.find_node(join).cloned().expect("origin nodes exist"));
        for end in &lane_ends {
            Self::connect(ctx, &end.exit, join, None, None);
        }
        if !has_else {
            let low = then_extent.bottom().max(split_b.bottom()) + ROW_GAP / 2.0;
            let (sx, jx) = (split_b.center_x(), join_b.center_x());
            ctx.pending.push(Pending {
                source: split.to_string(),
                target: join.to_string(),
                condition: None,
                default_of: Some(split.to_string()),
                route: Some(vec![
                    Point::new(sx, split_b.bottom()),
                    Point::new(sx, low),
                    Point::new(jx, low),
                    Point::new(jx, join_b.bottom()),
                ]),
            });
        }
        if let NodeKind::ExclusiveGateway { default_flow, .. } = &mut split_node.kind {
            *default_flow = None;
        }
        ctx.out.nodes.push(split_node);
        Block {
            entry: split.to_string(),
            exit: join.to_string(),
            right: join_b.right(),
            carry: join_carry,
            dirty: false,
        }
    }

    /// Lays out a statement with the compiler and maps its ids back onto
    /// base ids where the statement (or parts of it) came from the base.
    fn fresh_block(&mut self, ctx: &mut Ctx<'a>, node: &Node<PTag>, left: f64, axis: f64, carry: f64) -> Block {
        let stmt = node.to_stmt();
        let compiled = compile(&Program::new(vec![stmt]));
        let (_, origins) = decompile_traced(&compiled).expect("compiled statements decompile");
        let mut ids: HashMap<String, String> = HashMap::new();
        self.map_ids(node, &origins[0], &compiled, &mut ids);

        let root = &compiled.root;
        let start = root.start_event().expect("compiled root has a start").id.clone();
        let end = root.end_event().expect("compiled root has an end").id.clone();
        let compiled_axis = compiled.diagram.shape(&start).expect("start shape").bounds.center_y();
        let (entry, exit) = origins[0].entry_exit();
        let entry_b = compiled.diagram.shape(entry).expect("entry shape").bounds;
        let (dx, dy) = (left - entry_b.x, axis - compiled_axis);

        let mut local = Ctx::new(None);
        let mut top = Scope::default();
        for n in root.nodes.iter().filter(|n| n.id != start && n.id != end) {
            let mapped = self.remap_node(n, &ids, &compiled, &mut local, dx, dy);
            top.nodes.push(mapped);
        }
        for f in root.flows.iter().filter(|f| f.source != start && f.target != end) {
            let flow = self.remap_flow(f, &ids, ctx.base, &compiled, &mut local, dx, dy);
            top.flows.push(flow);
        }
        self.remap_notes(root, &ids, &compiled, &mut top, &mut local, dx, dy);
        let flow_ids = std::mem::take(&mut self.flow_ids);
        fix_defaults(&mut top, &flow_ids);

        ctx.out.nodes.extend(top.nodes);
        ctx.out.flows.extend(top.flows);
        ctx.out.annotations.extend(top.annotations);
        ctx.out.associations.extend(top.associations);
        ctx.elements.extend(local.elements);
        let exit_id = ids[exit].clone();
        Block {
            entry: ids[entry].clone(),
            right: self.bounds(&exit_id).right(),
            exit: exit_id,
            carry,
            dirty: true,
        }
    }

    fn map_ids(&mut self, node: &Node<PTag>, compiled: &Origin, doc: &BpmnDocument, ids: &mut HashMap<String, String>) {
        let base = node.tag.origin.as_ref();
        let mut assign = |this: &mut Self, c: &str, b: Option<&str>| {
            let id = match b {
                Some(b) => b.to_string(),
                None => this.fresh_id(prefix(c)),
            };
            ids.insert(c.to_string(), id);
        };
        match compiled {
            Origin::Leaf { node: c } => {
                let b = match base {
                    Some(Origin::Leaf { node }) => Some(node.as_str()),
                    _ => None,
                };
                assign(self, c, b);
            }
            Origin::Loop { node: c, body } => {
                let b = match base {
                    Some(Origin::Loop { node, .. }) => Some(node.as_str()),
                    _ => None,
                };
                assign(self, c, b);
                let c_scope = doc.find_node(c).and_then(FlowNode::scope).expect("compiled loop scope");
                let b_scope = b.and_then(|b| self.base.find_node(b)).and_then(FlowNode::scope);
                let pick = |s: Option<&Scope>, start: bool| {
                    s.and_then(|s| if start { s.start_event() } else { s.end_event() })
                        .map(|n| n.id.clone())
                };
                for is_start in [true, false] {
                    let cid = pick(Some(c_scope), is_start).expect("compiled events");
                    let bid = pick(b_scope, is_start);
                    assign(self, &cid, bid.as_deref());
                }
                let c_note = note_of(doc, c);
                let b_note = b.and_then(|b| self.base_note(b));
                if let Some((cn, ca)) = c_note {
                    assign(self, &cn.id, b_note.as_ref().map(|(n, _)| n.id.as_str()));
                    assign(self, &ca.id, b_note.as_ref().map(|(_, a)| a.id.as_str()));
                }
                for (child, o) in node.bodies[0].iter().zip(body) {
                    self.map_ids(child, o, doc, ids);
                }
            }
            Origin::Branch {
                split,
                join,
                then_body,
                else_body,
            } => {
                let (bs, bj) = match base {
                    Some(Origin::Branch { split, join, .. }) => (Some(split.as_str()), Some(join.as_str())),
                    _ => (None, None),
                };
                assign(self, split, bs);
                assign(self, join, bj);
                for (child, o) in node.bodies[0].iter().zip(then_body) {
                    self.map_ids(child, o, doc, ids);
                }
                for (child, o) in node.bodies[1].iter().zip(else_body.iter().flatten()) {
                    self.map_ids(child, o, doc, ids);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn remap_node(
        &mut self,
        n: &FlowNode,
        ids: &HashMap<String, String>,
        doc: &BpmnDocument,
        local: &mut Ctx,
        dx: f64,
        dy: f64,
    ) -> FlowNode {
        let id = ids[&n.id].clone();
        let shape = doc.diagram.shape(&n.id).expect("compiled shapes are complete");
        self.put_shape(local, &id, shape.bounds.translated(dx, dy), shape.expanded, None);
        let kind = match &n.kind {
            NodeKind::SubProcess { loop_kind, scope } => {
                let base_scope = self.base.find_node(&id).and_then(FlowNode::scope);
                let mut inner = Scope::default();
                for child in &scope.nodes {
                    let mapped = self.remap_node(child, ids, doc, local, dx, dy);
                    inner.nodes.push(mapped);
                }
                for f in &scope.flows {
                    let flow = self.remap_flow(f, ids, base_scope, doc, local, dx, dy);
                    inner.flows.push(flow);
                }
                self.remap_notes(scope, ids, doc, &mut inner, local, dx, dy);
                NodeKind::SubProcess {
                    loop_kind: *loop_kind,
                    scope: inner,
                }
            }
            other => other.clone(),
        };
        let name = match (&n.kind, self.base.find_node(&id)) {
            // Keep names of reused events and gateways.
            (NodeKind::StartEvent | NodeKind::EndEvent | NodeKind::ExclusiveGateway { .. }, Some(b)) => {
                b.name.clone()
            }
            _ => n.name.clone(),
        };
        FlowNode { id, name, kind }
    }

    #[allow(clippy::too_many_arguments)]
    fn remap_flow(
        &mut self,
        f: &SequenceFlow,
        ids: &HashMap<String, String>,
        base_scope: Option<&Scope>,
        doc: &BpmnDocument,
        local: &mut Ctx,
        dx: f64,
        dy: f64,
    ) -> SequenceFlow {
        let (source, target) = (ids[&f.source].clone(), ids[&f.target].clone());
        let reused = base_scope.and_then(|s| {
            s.flows
                .iter()
                .find(|b| b.source == source && b.target == target && !self.claimed.contains(&b.id))
        });
        let (id, name) = match reused {
            Some(b) => {
                self.claimed.insert(b.id.clone());
                (b.id.clone(), b.name.clone())
            }
            None => (self.fresh_id(&format!("flow_{source}_{target}")), None),
        };
        self.flow_ids.insert(f.id.clone(), id.clone());
        let edge = doc.diagram.edge(&f.id).expect("compiled edges are complete");
        let pts = edge.waypoints.iter().map(|p| Point::new(p.x + dx, p.y + dy)).collect();
        self.put_edge(local, &id, pts, None);
        SequenceFlow {
            id,
            name,
            source,
            target,
            condition: f.condition.clone(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn remap_notes(
        &mut self,
        scope: &Scope,
        ids: &HashMap<String, String>,
        doc: &BpmnDocument,
        out: &mut Scope,
        local: &mut Ctx,
        dx: f64,
        dy: f64,
    ) {
        for note in &scope.annotations {
            let id = ids[&note.id].clone();
            let shape = doc.diagram.shape(&note.id).expect("note shape");
            self.put_shape(local, &id, shape.bounds.translated(dx, dy), None, None);
            out.annotations.push(TextAnnotation {
                id,
                text: note.text.clone(),
            });
        }
        for a in &scope.associations {
            let id = ids[&a.id].clone();
            let edge = doc.diagram.edge(&a.id).expect("association edge");
            let pts = edge.waypoints.iter().map(|p| Point::new(p.x + dx, p.y + dy)).collect();
            self.put_edge(local, &id, pts, None);
            out.associations.push(Association {
                id,
                source: ids[&a.source].clone(),
                target: ids[&a.target].clone(),
            });
        }
    }

    /// Gives ids and waypoints to the connections collected for a scope.
    /// Base flows are reused by exact endpoints first, then by source,
    /// then by target.
    fn resolve(&mut self, ctx: &mut Ctx) {
        let base_flows: Vec<SequenceFlow> = ctx.base.map(|s| s.flows.clone()).unwrap_or_default();
        let mut chosen: Vec<Option<SequenceFlow>> = vec![None; ctx.pending.len()];
        let phases: [fn(&SequenceFlow, &Pending) -> bool; 3] = [
            |b, p| b.source == p.source && b.target == p.target,
            |b, p| b.source == p.source,
            |b, p| b.target == p.target,
        ];
        for matches in phases {
            for (slot, p) in chosen.iter_mut().zip(&ctx.pending) {
                if slot.is_some() {
                    continue;
                }
                if let Some(b) = base_flows
                    .iter()
                    .find(|b| matches(b, p) && !self.claimed.contains(&b.id))
                {
                    self.claimed.insert(b.id.clone());
                    *slot = Some(b.clone());
                }
            }
        }
        let pending = std::mem::take(&mut ctx.pending);
        for (p, reused) in pending.into_iter().zip(chosen) {
            let (src, dst) = (self.bounds(&p.source), self.bounds(&p.target));
            let mut kept = None;
            if let Some(b) = reused.as_ref().filter(|b| b.source == p.source && b.target == p.target) {
                let (os, od) = (self.base_bounds(&b.source), self.base_bounds(&b.target));
                let (ds, dd) = ((src.x - os.x, src.y - os.y), (dst.x - od.x, dst.y - od.y));
                let same = (ds.0 - dd.0).abs() < EPS && (ds.1 - dd.1).abs() < EPS;
                if same {
                    if let Some(edge) = self.base.diagram.edge(&b.id) {
                        let pts = edge.waypoints.iter().map(|q| Point::new(q.x + ds.0, q.y + ds.1)).collect();
                        kept = Some((pts, shift_label(&edge.label, ds.0, ds.1)));
                    }
                }
            }
            let (pts, label) =
                kept.unwrap_or_else(|| (p.route.clone().unwrap_or_else(|| route(&src, &dst)), None));
            let (id, name) = match reused {
                Some(b) => (b.id, b.name),
                None => (self.fresh_id(&format!("flow_{}_{}", p.source, p.target)), None),
            };
            self.put_edge(ctx, &id, pts, label);
            if let Some(split) = &p.default_of {
                for n in &mut ctx.out.nodes {
                    if &n.id == split {
                        if let NodeKind::ExclusiveGateway { default_flow, .. } = &mut n.kind {
                            *default_flow = Some(id.clone());
                        }
                    }
                }
            }
            ctx.out.flows.push(SequenceFlow {
                id,
                name,
                source: p.source,
                target: p.target,
                condition: p.condition,
            });
        }
    }

    fn finish(self, root: Scope) -> BpmnDocument {
        let base = self.base;
        let mut shapes = self.shapes;
        let mut edges = self.edges;
        let mut di_ids: HashSet<String> = HashSet::new();
        let mut diagram = DiagramLayout {
            diagram_id: base.diagram.diagram_id.clone(),
            plane_id: base.diagram.plane_id.clone(),
            shapes: Vec::new(),
            edges: Vec::new(),
        };
        for s in &base.diagram.shapes {
            if let Some(mut new) = shapes.remove(&s.element) {
                new.id = s.id.clone();
                di_ids.insert(s.id.clone());
                diagram.shapes.push(new);
            }
        }
        for e in &base.diagram.edges {
            if let Some(mut new) = edges.remove(&e.element) {
                new.id = e.id.clone();
                di_ids.insert(e.id.clone());
                diagram.edges.push(new);
            }
        }
        let mut taken: HashSet<String> = self.used;
        taken.extend(base.diagram.shapes.iter().map(|s| s.id.clone()));
        taken.extend(base.diagram.edges.iter().map(|e| e.id.clone()));
        taken.extend(di_ids);
        let unique = |taken: &mut HashSet<String>, want: String| {
            let mut id = want.clone();
            let mut n = 2;
            while !taken.insert(id.clone()) {
                id = format!("{want}_{n}");
                n += 1;
            }
            id
        };
        for element in &self.order {
            if let Some(mut s) = shapes.remove(element) {
                s.id = unique(&mut taken, format!("BPMNShape_{element}"));
                diagram.shapes.push(s);
            } else if let Some(mut e) = edges.remove(element) {
                e.id = unique(&mut taken, format!("BPMNEdge_{element}"));
                diagram.edges.push(e);
            }
        }
        BpmnDocument {
            definitions_id: base.definitions_id.clone(),
            target_namespace: base.target_namespace.clone(),
            process_id: base.process_id.clone(),
            process_name: base.process_name.clone(),
            executable: base.executable,
            root,
            diagram,
        }
    }
}

fn shift_label(label: &Option<Label>, dx: f64, dy: f64) -> Option<Label> {
    label.as_ref().map(|l| Label {
        bounds: l.bounds.map(|b| b.translated(dx, dy)),
    })
}

/// `task` for `task_7`; compiled ids are always `prefix_counter`.
fn prefix(id: &str) -> &str {
    id.rsplit_once('_').map_or(id, |(p, _)| p)
}

fn note_of(doc: &BpmnDocument, id: &str) -> Option<(TextAnnotation, Association)> {
    let mut found = None;
    doc.root.walk(&mut |scope| {
        for a in &scope.associations {
            if a.source == id {
                if let Some(t) = scope.annotations.iter().find(|t| t.id == a.target) {
                    found = Some((t.clone(), a.clone()));
                }
            }
        }
    });
    found
}

fn fix_defaults(scope: &mut Scope, flow_ids: &HashMap<String, String>) {
    for n in &mut scope.nodes {
        match &mut n.kind {
            NodeKind::ExclusiveGateway {
                default_flow: Some(d),
                ..
            } => {
                if let Some(new) = flow_ids.get(d.as_str()) {
                    *d = new.clone();
                }
            }
            NodeKind::SubProcess { scope, .. } => fix_defaults(scope, flow_ids),
            _ => {}
        }
    }
}

/// Lists surviving base elements in their base order, new ones after.
fn order_like_base(scope: &mut Scope, rank: &HashMap<String, usize>) {
    let key = |id: &str| rank.get(id).copied().unwrap_or(usize::MAX);
    scope.nodes.sort_by_key(|n| key(&n.id));
    scope.flows.sort_by_key(|f| key(&f.id));
    scope.annotations.sort_by_key(|a| key(&a.id));
    scope.associations.sort_by_key(|a| key(&a.id));
    for n in &mut scope.nodes {
        if let Some(inner) = n.scope_mut() {
            order_like_base(inner, rank);
        }
    }
}

/// Applies `script` to the document. See the module docs for what is kept.
pub fn patch_bpmn(base: &BpmnDocument, script: &EditScript) -> Result<BpmnDocument, PatchError> {
    if script.is_empty() {
        return Ok(base.clone());
    }
    let (program, origins) = decompile_traced(base)?;
    let mut nodes: Vec<Node<PTag>> = program
        .statements
        .iter()
        .zip(&origins)
        .map(|(s, o)| build(s, o))
        .collect();
    tree::apply(&mut nodes, script)?;

    let mut used: HashSet<String> = base.root.element_ids().into_iter().collect();
    used.insert(base.process_id.clone());
    used.extend(base.definitions_id.iter().cloned());
    used.extend(base.diagram.shapes.iter().map(|s| s.id.clone()));
    used.extend(base.diagram.edges.iter().map(|e| e.id.clone()));
    let mut patcher = Patcher {
        base,
        base_bounds: base.diagram.bounds_by_element(),
        used,
        claimed: HashSet::new(),
        flow_ids: HashMap::new(),
        shapes: HashMap::new(),
        edges: HashMap::new(),
        order: Vec::new(),
    };

    let mut ctx = Ctx::new(Some(&base.root));
    let start = base.root.start_event().expect("decompiled roots have a start");
    let end = base.root.end_event().expect("decompiled roots have an end");
    let start_b = patcher.keep_shape(&mut ctx, &start.id, 0.0, 0.0);
    ctx.out.nodes.push(start.clone());
    let cursor = Cursor {
        exit: start.id.clone(),
        right: start_b.right(),
        carry: 0.0,
        dirty: false,
    };
    let last = patcher.seq(&mut ctx, &nodes, start_b.center_y(), cursor, (None, None));
    let carry = Patcher::carry_for(&last, patcher.base_bounds(&end.id).x);
    patcher.keep_shape(&mut ctx, &end.id, carry, 0.0);
    ctx.out.nodes.push(end.clone());
    Patcher::connect(&mut ctx, &last.exit, &end.id, None, None);
    patcher.resolve(&mut ctx);
    let mut root = std::mem::take(&mut ctx.out);
    let rank: HashMap<String, usize> = base
        .root
        .element_ids()
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id, i))
        .collect();
    order_like_base(&mut root, &rank);
    Ok(patcher.finish(root))
}
