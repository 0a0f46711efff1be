use quick_xml::events::{BytesStart, Event};
use quick_xml::name::ResolveResult;
use quick_xml::NsReader;

use super::{
    fill_missing_layout, Association, BpmnDocument, Bounds, DiagramLayout, Edge, FlowNode,
    GatewayDirection, Label, LoopKind, NodeKind, Point, Scope, SequenceFlow, Shape,
    TextAnnotation, BPMN_DI_NS, BPMN_MODEL_NS, DC_NS, DI_NS,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("malformed BPMN at {path}: {message}")]
    Malformed { path: String, message: String },
    #[error("unsupported BPMN element <{element}> at {path}")]
    UnsupportedElement { element: String, path: String },
}

/// Minimal namespace-resolved DOM.
#[derive(Debug, Default)]
struct Element {
    ns: Option<String>,
    name: String,
    attrs: Vec<(String, String)>,
    children: Vec<Element>,
    text: String,
}

impl Element {
    fn attr(&self, key: &str) -> Option<&str> {
        self.attrs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn is(&self, ns: &str, name: &str) -> bool {
        self.ns.as_deref() == Some(ns) && self.name == name
    }

    fn in_ns(&self, ns: &str) -> bool {
        self.ns.as_deref() == Some(ns)
    }
}

fn malformed(path: &str, message: impl Into<String>) -> ParseError {
    ParseError::Malformed {
        path: path.to_string(),
        message: message.into(),
    }
}

fn unsupported(element: &Element, path: &str) -> ParseError {
    ParseError::UnsupportedElement {
        element: element.name.clone(),
        path: path.to_string(),
    }
}

fn resolve_ns(ns: ResolveResult, path: &str) -> Result<Option<String>, ParseError> {
    Ok(match ns {
        ResolveResult::Bound(ns) => Some(String::from_utf8_lossy(ns.as_ref()).into_owned()),
        ResolveResult::Unbound => None,
        ResolveResult::Unknown(prefix) => {
            return Err(malformed(
                path,
                format!("unknown namespace prefix '{}'", String::from_utf8_lossy(&prefix)),
            ))
        }
    })
}

fn start_element(ns: Option<String>, e: &BytesStart, path: &str) -> Result<Element, ParseError> {
    let name = String::from_utf8_lossy(e.local_name().as_ref()).into_owned();
    let mut attrs = Vec::new();
    for attr in e.attributes() {
        let attr = attr.map_err(|err| malformed(path, err.to_string()))?;
        // Vendor and xmlns attributes carry a prefix; the BPMN ones never do.
        if attr.key.prefix().is_some() || attr.key.as_ref().starts_with(b"xmlns") {
            continue;
        }
        let key = String::from_utf8_lossy(attr.key.local_name().as_ref()).into_owned();
        let value = attr
            .unescape_value()
            .map_err(|err| malformed(path, err.to_string()))?
            .into_owned();
        attrs.push((key, value));
    }
    Ok(Element {
        ns,
        name,
        attrs,
        ..Element::default()
    })
}

fn build_dom(xml: &str) -> Result<Element, ParseError> {
    let mut reader = NsReader::from_str(xml);
    reader.config_mut().trim_text(true);
    let mut stack: Vec<Element> = Vec::new();
    let mut root: Option<Element> = None;
    let path_of = |stack: &[Element]| {
        let names: Vec<&str> = stack.iter().map(|e| e.name.as_str()).collect();
        format!("/{}", names.join("/"))
    };
    loop {
        let event = reader.read_resolved_event();
        let (ns, event) = match event {
            Ok((ns, event)) => (resolve_ns(ns, &path_of(&stack))?, event),
            Err(err) => {
                return Err(malformed(
                    &path_of(&stack),
                    format!("{err} (byte {})", reader.buffer_position()),
                ))
            }
        };
        match event {
            Event::Start(e) => {
                let el = start_element(ns, &e, &path_of(&stack))?;
                stack.push(el);
            }
            Event::Empty(e) => {
                let el = start_element(ns, &e, &path_of(&stack))?;
                match stack.last_mut() {
                    Some(parent) => parent.children.push(el),
                    None if root.is_none() => root = Some(el),
                    None => return Err(malformed("/", "multiple root elements")),
                }
            }
            Event::End(_) => {
                let el = stack.pop().ok_or_else(|| malformed("/", "unbalanced end tag"))?;
                match stack.last_mut() {
                    Some(parent) => parent.children.push(el),
                    None if root.is_none() => root = Some(el),
                    None => return Err(malformed("/", "multiple root elements")),
                }
            }
            Event::Text(t) => {
                let text = t
                    .unescape()
                    .map_err(|err| malformed(&path_of(&stack), err.to_string()))?;
                if let Some(el) = stack.last_mut() {
                    el.text.push_str(&text);
                }
            }
            Event::CData(c) => {
                if let Some(el) = stack.last_mut() {
                    el.text.push_str(&String::from_utf8_lossy(&c.into_inner()));
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    if !stack.is_empty() {
        return Err(malformed(&path_of(&stack), "unexpected end of document"));
    }
    root.ok_or_else(|| malformed("/", "empty document"))
}

/// Parses BPMN 2.0 XML in either prefixed or default-namespace form.
///
/// Elements from foreign namespaces and unknown attributes are ignored.
/// BPMN elements outside the supported vocabulary are rejected. Missing
/// diagram information is regenerated.
pub fn parse_bpmn(xml: &str) -> Result<BpmnDocument, ParseError> {
    let root = build_dom(xml)?;
    if !root.is(BPMN_MODEL_NS, "definitions") {
        return Err(malformed(
            &format!("/{}", root.name),
            "root element is not a BPMN <definitions>",
        ));
    }
    let mut process: Option<&Element> = None;
    let mut diagram: Option<&Element> = None;
    for child in &root.children {
        if child.is(BPMN_MODEL_NS, "process") {
            if process.is_some() {
                return Err(unsupported(child, "/definitions (second process)"));
            }
            process = Some(child);
        } else if child.is(BPMN_MODEL_NS, "collaboration") {
            return Err(unsupported(child, "/definitions"));
        } else if child.is(BPMN_DI_NS, "BPMNDiagram") && diagram.is_none() {
            diagram = Some(child);
        }
    }
    let process = process.ok_or_else(|| malformed("/definitions", "no <process> element"))?;
    let path = format!("/definitions/process[{}]", process.attr("id").unwrap_or("?"));
    let process_id = process
        .attr("id")
        .ok_or_else(|| malformed(&path, "process without id"))?
        .to_string();
    let root_scope = parse_scope(process, &path)?;
    let diagram = match diagram {
        Some(el) => parse_diagram(el)?,
        None => DiagramLayout::default(),
    };
    let mut doc = BpmnDocument {
        definitions_id: root.attr("id").map(str::to_string),
        target_namespace: root.attr("targetNamespace").map(str::to_string),
        process_id,
        process_name: process.attr("name").map(str::to_string),
        executable: process.attr("isExecutable") == Some("true"),
        root: root_scope,
        diagram,
    };
    fill_missing_layout(&mut doc);
    Ok(doc)
}

/// Children of flow nodes that carry nothing the model needs.
const IGNORED_CHILDREN: &[&str] = &["incoming", "outgoing", "documentation", "extensionElements"];

fn parse_scope(container: &Element, path: &str) -> Result<Scope, ParseError> {
    let mut scope = Scope::default();
    for child in &container.children {
        if !child.in_ns(BPMN_MODEL_NS) {
            continue;
        }
        let id = || {
            child
                .attr("id")
                .map(str::to_string)
                .ok_or_else(|| malformed(path, format!("<{}> without id", child.name)))
        };
        let name = child.attr("name").map(str::to_string);
        let child_path = format!("{path}/{}[{}]", child.name, child.attr("id").unwrap_or("?"));
        let kind = match child.name.as_str() {
            "startEvent" => Some(NodeKind::StartEvent),
            "endEvent" => Some(NodeKind::EndEvent),
            "task" => Some(NodeKind::Task),
            "userTask" => Some(NodeKind::UserTask),
            "exclusiveGateway" => {
                let direction = match child.attr("gatewayDirection") {
                    Some("Diverging") => Some(GatewayDirection::Split),
                    Some("Converging") => Some(GatewayDirection::Join),
                    _ => None,
                };
                // Direction without an attribute is inferred once flows are known.
                Some(NodeKind::ExclusiveGateway {
                    direction: direction.unwrap_or(GatewayDirection::Join),
                    default_flow: child.attr("default").map(str::to_string),
                })
            }
            "subProcess" => {
                if child.attr("triggeredByEvent") == Some("true") {
                    return Err(unsupported(child, path));
                }
                let mut loop_kind = None;
                for grandchild in &child.children {
                    if grandchild.is(BPMN_MODEL_NS, "multiInstanceLoopCharacteristics") {
                        loop_kind = Some(LoopKind::MultiInstanceSequential);
                    } else if grandchild.is(BPMN_MODEL_NS, "standardLoopCharacteristics") {
                        loop_kind = Some(LoopKind::StandardLoop);
                    }
                }
                Some(NodeKind::SubProcess {
                    loop_kind,
                    scope: parse_scope(child, &child_path)?,
                })
            }
            "sequenceFlow" => {
                let condition = child
                    .children
                    .iter()
                    .find(|c| c.is(BPMN_MODEL_NS, "conditionExpression"))
                    .map(|c| c.text.trim().to_string());
                scope.flows.push(SequenceFlow {
                    id: id()?,
                    name: name.clone(),
                    source: required(child, "sourceRef", path)?,
                    target: required(child, "targetRef", path)?,
                    condition,
                });
                None
            }
            "textAnnotation" => {
                let text = child
                    .children
                    .iter()
                    .find(|c| c.is(BPMN_MODEL_NS, "text"))
                    .map(|c| c.text.trim().to_string())
                    .unwrap_or_default();
                scope.annotations.push(TextAnnotation { id: id()?, text });
                None
            }
            "association" => {
                scope.associations.push(Association {
                    id: id()?,
                    source: required(child, "sourceRef", path)?,
                    target: required(child, "targetRef", path)?,
                });
                None
            }
            "multiInstanceLoopCharacteristics" | "standardLoopCharacteristics"
                if container.name == "subProcess" =>
            {
                None
            }
            "documentation" | "extensionElements" | "incoming" | "outgoing" | "property"
            | "ioSpecification" => None,
            _ => return Err(unsupported(child, path)),
        };
        if let Some(kind) = kind {
            if !matches!(kind, NodeKind::SubProcess { .. }) {
                for grandchild in &child.children {
                    let allowed = !grandchild.in_ns(BPMN_MODEL_NS)
                        || IGNORED_CHILDREN.contains(&grandchild.name.as_str());
                    if !allowed {
                        return Err(unsupported(grandchild, &child_path));
                    }
                }
            }
            scope.nodes.push(FlowNode {
                id: id()?,
                name,
                kind,
            });
        }
    }
    infer_gateway_directions(&mut scope, container);
    Ok(scope)
}

fn infer_gateway_directions(scope: &mut Scope, container: &Element) {
    let explicit: Vec<String> = container
        .children
        .iter()
        .filter(|c| {
            c.is(BPMN_MODEL_NS, "exclusiveGateway")
                && matches!(c.attr("gatewayDirection"), Some("Diverging" | "Converging"))
        })
        .filter_map(|c| c.attr("id").map(str::to_string))
        .collect();
    let outgoing_counts: Vec<(String, usize)> = scope
        .nodes
        .iter()
        .map(|n| (n.id.clone(), scope.outgoing(&n.id).count()))
        .collect();
    for node in &mut scope.nodes {
        if explicit.contains(&node.id) {
            continue;
        }
        if let NodeKind::ExclusiveGateway { direction, .. } = &mut node.kind {
            let out = outgoing_counts
                .iter()
                .find(|(id, _)| id == &node.id)
                .map_or(0, |(_, n)| *n);
            *direction = if out > 1 {
                GatewayDirection::Split
            } else {
                GatewayDirection::Join
            };
        }
    }
}

fn required(el: &Element, attr: &str, path: &str) -> Result<String, ParseError> {
    el.attr(attr)
        .map(str::to_string)
        .ok_or_else(|| malformed(path, format!("<{}> without {attr}", el.name)))
}

fn number(el: &Element, attr: &str) -> Result<f64, ParseError> {
    let raw = el
        .attr(attr)
        .ok_or_else(|| malformed(&format!("/{}", el.name), format!("missing {attr}")))?;
    raw.trim()
        .parse()
        .map_err(|_| malformed(&format!("/{}", el.name), format!("bad number {attr}='{raw}'")))
}

fn bounds(el: &Element) -> Result<Bounds, ParseError> {
    Ok(Bounds::new(
        number(el, "x")?,
        number(el, "y")?,
        number(el, "width")?,
        number(el, "height")?,
    ))
}

fn label(el: &Element) -> Result<Option<Label>, ParseError> {
    let Some(label) = el.children.iter().find(|c| c.is(BPMN_DI_NS, "BPMNLabel")) else {
        return Ok(None);
    };
    let bounds = match label.children.iter().find(|c| c.is(DC_NS, "Bounds")) {
        Some(b) => Some(bounds(b)?),
        None => None,
    };
    Ok(Some(Label { bounds }))
}

fn parse_diagram(diagram: &Element) -> Result<DiagramLayout, ParseError> {
    let mut layout = DiagramLayout {
        diagram_id: diagram.attr("id").unwrap_or_default().to_string(),
        ..DiagramLayout::default()
    };
    let Some(plane) = diagram
        .children
        .iter()
        .find(|c| c.is(BPMN_DI_NS, "BPMNPlane"))
    else {
        return Ok(layout);
    };
    layout.plane_id = plane.attr("id").unwrap_or_default().to_string();
    for child in &plane.children {
        let Some(element) = child.attr("bpmnElement") else {
            continue;
        };
        if child.is(BPMN_DI_NS, "BPMNShape") {
            let Some(b) = child.children.iter().find(|c| c.is(DC_NS, "Bounds")) else {
                continue;
            };
            layout.shapes.push(Shape {
                id: child.attr("id").unwrap_or_default().to_string(),
                element: element.to_string(),
                bounds: bounds(b)?,
                expanded: child.attr("isExpanded").map(|v| v == "true"),
                label: label(child)?,
            });
        } else if child.is(BPMN_DI_NS, "BPMNEdge") {
            let mut waypoints = Vec::new();
            for wp in child.children.iter().filter(|c| c.is(DI_NS, "waypoint")) {
                waypoints.push(Point::new(number(wp, "x")?, number(wp, "y")?));
            }
            layout.edges.push(Edge {
                id: child.attr("id").unwrap_or_default().to_string(),
                element: element.to_string(),
                waypoints,
                label: label(child)?,
            });
        }
    }
    Ok(layout)
}
