//! Parsing of annotator responses into reference bundles, plus the inverse
//! rendering used by tests and fixtures.

use groundkit_core::records::AreaType;
use groundkit_core::ReferenceBundle;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::RefgenError;

pub const OUTPUT_HEADER: &str = "# Output";
pub const ANALYZE_HEADER: &str = "# Analyze";

const FENCE: &str = "```";

/// Text of the first fenced block, without its language tag line.
fn fenced(text: &str) -> Option<&str> {
    let start = text.find(FENCE)? + FENCE.len();
    let body = &text[start..];
    let body = match body.find('\n') {
        Some(nl) if !body[..nl].contains('{') => &body[nl + 1..],
        _ => body,
    };
    let end = body.find(FENCE).unwrap_or(body.len());
    Some(&body[..end])
}

/// Locates the JSON object of a response: the fenced block after
/// `# Output` if there is one, otherwise the first object after the header.
/// Without the header, only a fenced block is accepted.
fn json_region(raw: &str) -> Result<&str, RefgenError> {
    let region = match raw.find(OUTPUT_HEADER) {
        Some(i) => {
            let after = &raw[i + OUTPUT_HEADER.len()..];
            match (after.find(FENCE), after.find('{')) {
                (Some(f), Some(b)) if f < b => fenced(after).unwrap_or(after),
                (Some(_), None) => fenced(after).unwrap_or(after),
                _ => after,
            }
        }
        None => fenced(raw).ok_or(RefgenError::NoJsonBlock)?,
    };
    let brace = region.find('{').ok_or(RefgenError::NoJsonBlock)?;
    Ok(&region[brace..])
}

fn first_object(region: &str) -> Result<Map<String, Value>, RefgenError> {
    let mut stream = serde_json::Deserializer::from_str(region).into_iter::<Value>();
    match stream.next() {
        Some(Ok(Value::Object(map))) => Ok(map),
        Some(Ok(other)) => Err(RefgenError::InvalidJson(format!(
            "expected an object, got {other}"
        ))),
        Some(Err(e)) => Err(RefgenError::InvalidJson(e.to_string())),
        None => Err(RefgenError::NoJsonBlock),
    }
}

fn required_text(map: &Map<String, Value>, key: &str) -> Result<String, RefgenError> {
    match map.get(key) {
        None | Some(Value::Null) => Err(RefgenError::MissingKey(key.into())),
        Some(Value::String(s)) if s.trim().is_empty() => Err(RefgenError::MissingKey(key.into())),
        Some(Value::String(s)) => Ok(s.trim().to_string()),
        Some(other) => Err(RefgenError::InvalidJson(format!(
            "`{key}` must be a string, got {other}"
        ))),
    }
}

fn area_type(value: &Value) -> Result<AreaType, RefgenError> {
    match value.as_str() {
        Some("icon") => Ok(AreaType::Icon),
        Some("text") => Ok(AreaType::Text),
        _ => Err(RefgenError::BadEnum {
            key: "area_type".into(),
            value: value.to_string(),
        }),
    }
}

fn interactive(value: &Value) -> Result<bool, RefgenError> {
    value.as_bool().ok_or_else(|| RefgenError::BadEnum {
        key: "interactive".into(),
        value: value.to_string(),
    })
}

/// Parses an annotator response. In gold mode `area_type` and `interactive`
/// are mandatory and validated; otherwise they are kept only when valid.
pub fn parse_re_response(raw: &str, gold: bool) -> Result<ReferenceBundle, RefgenError> {
    let map = first_object(json_region(raw)?)?;
    let mut bundle = ReferenceBundle {
        context: required_text(&map, "context")?,
        functional: required_text(&map, "functional_reference")?,
        positional: required_text(&map, "positional_reference")?,
        appearance: required_text(&map, "appearance_reference")?,
        area_type: None,
        interactive: None,
    };
    if gold {
        let at = map
            .get("area_type")
            .ok_or_else(|| RefgenError::MissingKey("area_type".into()))?;
        let ia = map
            .get("interactive")
            .ok_or_else(|| RefgenError::MissingKey("interactive".into()))?;
        bundle.area_type = Some(area_type(at)?);
        bundle.interactive = Some(interactive(ia)?);
    } else {
        bundle.area_type = map.get("area_type").and_then(|v| area_type(v).ok());
        bundle.interactive = map.get("interactive").and_then(|v| interactive(v).ok());
    }
    Ok(bundle)
}

#[derive(Serialize)]
struct Rendered<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    area_type: Option<AreaType>,
    #[serde(skip_serializing_if = "Option::is_none")]
    interactive: Option<bool>,
    context: &'a str,
    functional_reference: &'a str,
    positional_reference: &'a str,
    appearance_reference: &'a str,
}

/// Renders a bundle in the response layout the annotator is asked for.
pub fn render_re_response(bundle: &ReferenceBundle, analysis: &str) -> String {
    let body = Rendered {
        area_type: bundle.area_type,
        interactive: bundle.interactive,
        context: &bundle.context,
        functional_reference: &bundle.functional,
        positional_reference: &bundle.positional,
        appearance_reference: &bundle.appearance,
    };
    let json = serde_json::to_string_pretty(&body).expect("bundle serializes");
    format!("{ANALYZE_HEADER}\n\n{analysis}\n\n{OUTPUT_HEADER}\n{json}\n")
}
