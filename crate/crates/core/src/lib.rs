//! Natural-language workflow generation through a compact Python-syntax IR.
//!
//! The pipeline retrieves grounding activities and few-shot demonstrations,
//! asks a language model for an IR snippet, and compiles that snippet to
//! BPMN 2.0. Existing BPMN documents are decompiled back to IR so that edits
//! can be computed as IR diffs and patched into the original diagram.

pub mod ir;
pub mod bpmn;
pub mod py2bpmn;
pub mod bpmn2py;
pub mod diff;
pub mod retrieval;
pub mod generate;
pub mod bench;
