use std::fmt::Write as _;

use quick_xml::escape::escape;

use super::{
    BpmnDocument, Bounds, DiagramLayout, GatewayDirection, Label, LoopKind, NodeKind, Scope,
    ValidationError, BPMN_DI_NS, BPMN_MODEL_NS, DC_NS, DI_NS, XSI_NS,
};

const EXPORTER: &str = "flowgen";

/// Serializes a validated document as namespaced BPMN 2.0 XML.
///
/// Element order follows document order: nodes, then flows, then
/// annotations and associations per scope, followed by the diagram section.
pub fn serialize_bpmn(doc: &BpmnDocument) -> Result<String, ValidationError> {
    doc.validate()?;
    let mut out = String::with_capacity(4096);
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = write!(
        out,
        "<bpmn:definitions xmlns:xsi=\"{XSI_NS}\" xmlns:bpmn=\"{BPMN_MODEL_NS}\" \
         xmlns:bpmndi=\"{BPMN_DI_NS}\" xmlns:dc=\"{DC_NS}\" xmlns:di=\"{DI_NS}\""
    );
    if let Some(id) = &doc.definitions_id {
        let _ = write!(out, " id=\"{}\"", escape(id.as_str()));
    }
    if let Some(ns) = &doc.target_namespace {
        let _ = write!(out, " targetNamespace=\"{}\"", escape(ns.as_str()));
    }
    let _ = writeln!(
        out,
        " exporter=\"{EXPORTER}\" exporterVersion=\"{}\">",
        env!("CARGO_PKG_VERSION")
    );
    let _ = write!(out, "  <bpmn:process id=\"{}\"", escape(doc.process_id.as_str()));
    if let Some(name) = &doc.process_name {
        let _ = write!(out, " name=\"{}\"", escape(name.as_str()));
    }
    let _ = writeln!(out, " isExecutable=\"{}\">", doc.executable);
    write_scope(&mut out, &doc.root, 2);
    out.push_str("  </bpmn:process>\n");
    write_diagram(&mut out, &doc.diagram, &doc.process_id);
    out.push_str("</bpmn:definitions>\n");
    Ok(out)
}

fn write_scope(out: &mut String, scope: &Scope, depth: usize) {
    let pad = "  ".repeat(depth);
    for node in &scope.nodes {
        let tag = node.element_name();
        let _ = write!(out, "{pad}<bpmn:{tag} id=\"{}\"", escape(node.id.as_str()));
        if let Some(name) = &node.name {
            let _ = write!(out, " name=\"{}\"", escape(name.as_str()));
        }
        if let NodeKind::ExclusiveGateway {
            direction,
            default_flow,
        } = &node.kind
        {
            let dir = match direction {
                GatewayDirection::Split => "Diverging",
                GatewayDirection::Join => "Converging",
            };
            let _ = write!(out, " gatewayDirection=\"{dir}\"");
            if let Some(default) = default_flow {
                let _ = write!(out, " default=\"{}\"", escape(default.as_str()));
            }
        }
        let incoming: Vec<&str> = scope.incoming(&node.id).map(|f| f.id.as_str()).collect();
        let outgoing: Vec<&str> = scope.outgoing(&node.id).map(|f| f.id.as_str()).collect();
        let inner = node.scope();
        if incoming.is_empty() && outgoing.is_empty() && inner.is_none() {
            out.push_str(" />\n");
            continue;
        }
        out.push_str(">\n");
        for id in incoming {
            let _ = writeln!(out, "{pad}  <bpmn:incoming>{}</bpmn:incoming>", escape(id));
        }
        for id in outgoing {
            let _ = writeln!(out, "{pad}  <bpmn:outgoing>{}</bpmn:outgoing>", escape(id));
        }
        if let NodeKind::SubProcess { loop_kind, scope } = &node.kind {
            match loop_kind {
                Some(LoopKind::MultiInstanceSequential) => {
                    let _ = writeln!(
                        out,
                        "{pad}  <bpmn:multiInstanceLoopCharacteristics isSequential=\"true\" />"
                    );
                }
                Some(LoopKind::StandardLoop) => {
                    let _ = writeln!(out, "{pad}  <bpmn:standardLoopCharacteristics />");
                }
                None => {}
            }
            write_scope(out, scope, depth + 1);
        }
        let _ = writeln!(out, "{pad}</bpmn:{tag}>");
    }
    for flow in &scope.flows {
        let _ = write!(out, "{pad}<bpmn:sequenceFlow id=\"{}\"", escape(flow.id.as_str()));
        if let Some(name) = &flow.name {
            let _ = write!(out, " name=\"{}\"", escape(name.as_str()));
        }
        let _ = write!(
            out,
            " sourceRef=\"{}\" targetRef=\"{}\"",
            escape(flow.source.as_str()),
            escape(flow.target.as_str())
        );
        match &flow.condition {
            Some(cond) => {
                let _ = writeln!(
                    out,
                    ">\n{pad}  <bpmn:conditionExpression xsi:type=\"bpmn:tFormalExpression\">{}</bpmn:conditionExpression>\n{pad}</bpmn:sequenceFlow>",
                    escape(cond.as_str())
                );
            }
            None => out.push_str(" />\n"),
        }
    }
    for note in &scope.annotations {
        let _ = writeln!(
            out,
            "{pad}<bpmn:textAnnotation id=\"{}\">\n{pad}  <bpmn:text>{}</bpmn:text>\n{pad}</bpmn:textAnnotation>",
            escape(note.id.as_str()),
            escape(note.text.as_str())
        );
    }
    for assoc in &scope.associations {
        let _ = writeln!(
            out,
            "{pad}<bpmn:association id=\"{}\" associationDirection=\"None\" sourceRef=\"{}\" targetRef=\"{}\" />",
            escape(assoc.id.as_str()),
            escape(assoc.source.as_str()),
            escape(assoc.target.as_str())
        );
    }
}

fn write_diagram(out: &mut String, diagram: &DiagramLayout, process_id: &str) {
    let diagram_id = if diagram.diagram_id.is_empty() {
        "BPMNDiagram_1"
    } else {
        &diagram.diagram_id
    };
    let plane_id = if diagram.plane_id.is_empty() {
        "BPMNPlane_1"
    } else {
        &diagram.plane_id
    };
    let _ = writeln!(out, "  <bpmndi:BPMNDiagram id=\"{}\">", escape(diagram_id));
    let _ = writeln!(
        out,
        "    <bpmndi:BPMNPlane id=\"{}\" bpmnElement=\"{}\">",
        escape(plane_id),
        escape(process_id)
    );
    for shape in &diagram.shapes {
        let _ = write!(
            out,
            "      <bpmndi:BPMNShape id=\"{}\" bpmnElement=\"{}\"",
            escape(shape.id.as_str()),
            escape(shape.element.as_str())
        );
        if let Some(expanded) = shape.expanded {
            let _ = write!(out, " isExpanded=\"{expanded}\"");
        }
        out.push_str(">\n");
        let _ = writeln!(out, "        {}", bounds_xml(&shape.bounds));
        write_label(out, shape.label.as_ref());
        out.push_str("      </bpmndi:BPMNShape>\n");
    }
    for edge in &diagram.edges {
        let _ = writeln!(
            out,
            "      <bpmndi:BPMNEdge id=\"{}\" bpmnElement=\"{}\">",
            escape(edge.id.as_str()),
            escape(edge.element.as_str())
        );
        for p in &edge.waypoints {
            let _ = writeln!(
                out,
                "        <di:waypoint x=\"{}\" y=\"{}\" />",
                num(p.x),
                num(p.y)
            );
        }
        write_label(out, edge.label.as_ref());
        out.push_str("      </bpmndi:BPMNEdge>\n");
    }
    out.push_str("    </bpmndi:BPMNPlane>\n  </bpmndi:BPMNDiagram>\n");
}

fn write_label(out: &mut String, label: Option<&Label>) {
    match label {
        Some(Label { bounds: Some(b) }) => {
            let _ = writeln!(
                out,
                "        <bpmndi:BPMNLabel>\n          {}\n        </bpmndi:BPMNLabel>",
                bounds_xml(b)
            );
        }
        Some(Label { bounds: None }) => out.push_str("        <bpmndi:BPMNLabel />\n"),
        None => {}
    }
}

fn bounds_xml(b: &Bounds) -> String {
    format!(
        "<dc:Bounds x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" />",
        num(b.x),
        num(b.y),
        num(b.width),
        num(b.height)
    )
}

/// Integral coordinates print without a fractional part.
pub(crate) fn num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}
