//! Geometry helpers shared by the compiler, the patcher and the reader.

use std::collections::HashMap;

use super::{BpmnDocument, Bounds, DiagramLayout, Edge, FlowNode, NodeKind, Point, Scope, Shape};

pub(crate) const TASK_WIDTH: f64 = 100.0;
pub(crate) const TASK_HEIGHT: f64 = 80.0;
pub(crate) const EVENT_SIZE: f64 = 36.0;
pub(crate) const GATEWAY_SIZE: f64 = 50.0;
pub(crate) const GAP: f64 = 80.0;
/// Vertical distance between branch rows.
pub(crate) const ROW_GAP: f64 = 60.0;
/// Inner padding of an expanded subprocess.
pub(crate) const PAD_X: f64 = 30.0;
pub(crate) const PAD_Y: f64 = 30.0;
pub(crate) const NOTE_WIDTH: f64 = 100.0;
pub(crate) const NOTE_HEIGHT: f64 = 41.0;
/// Space reserved above a loop block for its annotation.
pub(crate) const NOTE_SPACE: f64 = 70.0;
pub(crate) const ROOT_X: f64 = 152.0;
pub(crate) const ROOT_AXIS: f64 = 120.0;

/// Default size of a leaf node.
pub(crate) fn leaf_size(kind: &NodeKind) -> (f64, f64) {
    match kind {
        NodeKind::StartEvent | NodeKind::EndEvent => (EVENT_SIZE, EVENT_SIZE),
        NodeKind::ExclusiveGateway { .. } => (GATEWAY_SIZE, GATEWAY_SIZE),
        _ => (TASK_WIDTH, TASK_HEIGHT),
    }
}

/// Waypoints from `src` to `dst`: straight when the centers share a row,
/// otherwise one bend (down out of the source bottom, or up into the
/// target bottom).
pub(crate) fn route(src: &Bounds, dst: &Bounds) -> Vec<Point> {
    let (sy, dy) = (src.center_y(), dst.center_y());
    if (sy - dy).abs() < 0.5 {
        vec![Point::new(src.right(), sy), Point::new(dst.x, sy)]
    } else if dy > sy {
        vec![
            Point::new(src.center_x(), src.bottom()),
            Point::new(src.center_x(), dy),
            Point::new(dst.x, dy),
        ]
    } else {
        vec![
            Point::new(src.right(), sy),
            Point::new(dst.center_x(), sy),
            Point::new(dst.center_x(), dst.bottom()),
        ]
    }
}

/// Annotation box above a loop subprocess and the association line to it.
pub(crate) fn note_geometry(owner: &Bounds) -> (Bounds, Vec<Point>) {
    let note = Bounds::new(
        owner.x + PAD_X,
        owner.y - NOTE_SPACE + 10.0,
        NOTE_WIDTH,
        NOTE_HEIGHT,
    );
    let x = note.x + NOTE_WIDTH / 2.0;
    (note, vec![Point::new(x, owner.y), Point::new(x, note.bottom())])
}

/// Adds shapes and edges for elements that have none, leaving existing
/// diagram entries untouched. Missing nodes are placed right of their
/// already placed predecessor; successive branches fan out downwards.
pub fn fill_missing_layout(doc: &mut BpmnDocument) {
    let mut placed: HashMap<String, Bounds> = doc
        .diagram
        .shapes
        .iter()
        .map(|s| (s.element.clone(), s.bounds))
        .collect();
    let root = doc.root.clone();
    fill_scope(&root, ROOT_X, ROOT_AXIS, &mut placed, &mut doc.diagram);
}

fn fill_scope(
    scope: &Scope,
    origin_x: f64,
    axis: f64,
    placed: &mut HashMap<String, Bounds>,
    diagram: &mut DiagramLayout,
) {
    let mut branch_count: HashMap<String, usize> = HashMap::new();
    for node in topological(scope) {
        if !placed.contains_key(&node.id) {
            let pred = scope
                .incoming(&node.id)
                .find_map(|f| placed.get(&f.source).map(|b| (f.source.clone(), *b)));
            let (x, cy) = match pred {
                Some((pred_id, b)) => {
                    let k = branch_count.entry(pred_id).or_default();
                    let row = *k as f64;
                    *k += 1;
                    (b.right() + GAP, b.center_y() + row * (TASK_HEIGHT + ROW_GAP))
                }
                None => (origin_x, axis),
            };
            let bounds = match &node.kind {
                NodeKind::SubProcess { scope: inner, .. } => {
                    fill_scope(inner, x + PAD_X, cy, placed, diagram);
                    let mut extent = Bounds::new(x, cy - TASK_HEIGHT / 2.0, TASK_WIDTH, TASK_HEIGHT);
                    for inner_node in &inner.nodes {
                        if let Some(b) = placed.get(&inner_node.id) {
                            extent = extent.union(b);
                        }
                    }
                    Bounds::new(
                        x,
                        extent.y - PAD_Y,
                        extent.right() + PAD_X - x,
                        extent.height + 2.0 * PAD_Y,
                    )
                }
                kind => {
                    let (w, h) = leaf_size(kind);
                    Bounds::new(x, cy - h / 2.0, w, h)
                }
            };
            placed.insert(node.id.clone(), bounds);
            diagram.shapes.push(Shape {
                id: format!("{}_di", node.id),
                element: node.id.clone(),
                bounds,
                expanded: matches!(node.kind, NodeKind::SubProcess { .. }).then_some(true),
                label: None,
            });
        } else if let Some(inner) = node.scope() {
            let b = placed[&node.id];
            fill_scope(inner, b.x + PAD_X, b.center_y(), placed, diagram);
        }
    }
    for flow in &scope.flows {
        if diagram.edge(&flow.id).is_some() {
            continue;
        }
        if let (Some(s), Some(t)) = (placed.get(&flow.source), placed.get(&flow.target)) {
            diagram.edges.push(Edge {
                id: format!("{}_di", flow.id),
                element: flow.id.clone(),
                waypoints: route(s, t),
                label: None,
            });
        }
    }
    for assoc in &scope.associations {
        let (owner, note) = if scope.annotations.iter().any(|a| a.id == assoc.target) {
            (&assoc.source, &assoc.target)
        } else {
            (&assoc.target, &assoc.source)
        };
        let Some(owner_bounds) = placed.get(owner).copied() else {
            continue;
        };
        let (note_bounds, line) = note_geometry(&owner_bounds);
        if !placed.contains_key(note) {
            placed.insert(note.clone(), note_bounds);
            diagram.shapes.push(Shape {
                id: format!("{note}_di"),
                element: note.clone(),
                bounds: note_bounds,
                expanded: None,
                label: None,
            });
        }
        if diagram.edge(&assoc.id).is_none() {
            diagram.edges.push(Edge {
                id: format!("{}_di", assoc.id),
                element: assoc.id.clone(),
                waypoints: line,
                label: None,
            });
        }
    }
    for note in &scope.annotations {
        if !placed.contains_key(&note.id) {
            let b = Bounds::new(origin_x, axis - 120.0, NOTE_WIDTH, NOTE_HEIGHT);
            placed.insert(note.id.clone(), b);
            diagram.shapes.push(Shape {
                id: format!("{}_di", note.id),
                element: note.id.clone(),
                bounds: b,
                expanded: None,
                label: None,
            });
        }
    }
}

/// Nodes ordered so that predecessors come first where the graph allows;
/// nodes on cycles or unreachable ones follow in document order.
fn topological(scope: &Scope) -> Vec<&FlowNode> {
    let mut indegree: HashMap<&str, usize> = scope.nodes.iter().map(|n| (n.id.as_str(), 0)).collect();
    for flow in &scope.flows {
        if let Some(d) = indegree.get_mut(flow.target.as_str()) {
            *d += 1;
        }
    }
    let mut order: Vec<&FlowNode> = Vec::new();
    let mut done: Vec<bool> = vec![false; scope.nodes.len()];
    loop {
        let next = scope
            .nodes
            .iter()
            .enumerate()
            .find(|(i, n)| !done[*i] && indegree[n.id.as_str()] == 0)
            .or_else(|| scope.nodes.iter().enumerate().find(|(i, _)| !done[*i]));
        let Some((i, node)) = next else { break };
        done[i] = true;
        order.push(node);
        for flow in scope.outgoing(&node.id) {
            if let Some(d) = indegree.get_mut(flow.target.as_str()) {
                *d = d.saturating_sub(1);
            }
        }
    }
    order
}
