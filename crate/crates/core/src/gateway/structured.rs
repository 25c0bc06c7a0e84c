//! Pulls the JSON payload out of free-form model output.

use serde_json::Value;

use crate::error::{Error, Result};

fn is_container(v: &Value) -> bool {
    v.is_object() || v.is_array()
}

fn parse_whole(text: &str) -> Option<Value> {
    serde_json::from_str::<Value>(text.trim())
        .ok()
        .filter(is_container)
}

fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        // skip an info string such as `json`
        let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
        let info = &after[..body_start];
        let body = if info.trim().chars().all(|c| c.is_ascii_alphanumeric()) {
            &after[body_start..]
        } else {
            after
        };
        match body.find("```") {
            Some(close) => {
                blocks.push(&body[..close]);
                rest = &body[close + 3..];
            }
            None => break,
        }
    }
    blocks
}

// The first `{` or `[` from which a complete value parses is the outermost
// value: anything enclosing it would have started earlier.
fn scan_outermost(text: &str) -> Option<Value> {
    for (pos, c) in text.char_indices() {
        if c != '{' && c != '[' {
            continue;
        }
        let mut stream = serde_json::Deserializer::from_str(&text[pos..]).into_iter::<Value>();
        if let Some(Ok(v)) = stream.next() {
            return Some(v);
        }
    }
    None
}

/// Returns the outermost well-formed JSON object or array in `text`,
/// tolerating surrounding prose and triple-backtick fences. No repair is
/// attempted beyond that.
pub fn extract_structured(text: &str) -> Result<Value> {
    if let Some(v) = parse_whole(text) {
        return Ok(v);
    }
    for block in fenced_blocks(text) {
        if let Some(v) = parse_whole(block) {
            return Ok(v);
        }
    }
    scan_outermost(text).ok_or_else(|| Error::StructuredOutput {
        raw: text.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    #[test]
    fn strips_fences() {
        assert_eq!(extract_structured("```json\n[\"p1\"]\n```").unwrap(), json!(["p1"]));
        assert_eq!(extract_structured("```\n{\"a\": 1}\n```").unwrap(), json!({"a": 1}));
    }

    #[test]
    fn finds_value_in_prose() {
        let v = extract_structured("Sure! {\"0\": {\"<user>\": \"Hi\"}} Thanks").unwrap();
        assert_eq!(v, json!({"0": {"<user>": "Hi"}}));
    }

    #[test]
    fn prefers_outermost_value() {
        let v = extract_structured("note [1] then {\"x\": [2, 3]}").unwrap();
        assert_eq!(v, json!([1]));
        let v = extract_structured("here: {\"x\": [2, {\"y\": 3}]} done").unwrap();
        assert_eq!(v, json!({"x": [2, {"y": 3}]}));
    }

    #[test]
    fn failure_carries_raw_text() {
        match extract_structured("no data here") {
            Err(Error::StructuredOutput { raw }) => assert_eq!(raw, "no data here"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(extract_structured("42").is_err());
        assert!(extract_structured("{\"a\": 1,}").is_err());
    }

    #[test]
    fn backticks_inside_a_fenced_string() {
        let v = json!({"0": {"why": "```", "n": 1}});
        let s = format!("```json\n{}\n```", serde_json::to_string_pretty(&v).unwrap());
        assert_eq!(extract_structured(&s).unwrap(), v);
    }

    fn text() -> impl Strategy<Value = String> {
        "[ -~]{0,24}"
    }

    fn dialog_value() -> impl Strategy<Value = Value> {
        proptest::collection::vec((text(), text()), 1..8).prop_map(|pairs| {
            let mut map = serde_json::Map::new();
            for (i, (u, s)) in pairs.into_iter().enumerate() {
                map.insert(i.to_string(), json!({"<user>": u, "<system>": s}));
            }
            Value::Object(map)
        })
    }

    fn annotation_value() -> impl Strategy<Value = Value> {
        proptest::collection::vec(
            (proptest::collection::vec(text(), 0..4), text(), any::<bool>()),
            1..8,
        )
        .prop_map(|rows| {
            let mut map = serde_json::Map::new();
            for (i, (props, why, ok)) in rows.into_iter().enumerate() {
                let eval = if ok { "accepted" } else { "not_accepted" };
                map.insert(
                    i.to_string(),
                    json!({"propositions_used": props, "explain_evaluation": why, "evaluation": eval}),
                );
            }
            Value::Object(map)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn roundtrips_dialog_schema(v in dialog_value(), pretty in any::<bool>()) {
            let s = if pretty { serde_json::to_string_pretty(&v).unwrap() } else { v.to_string() };
            prop_assert_eq!(extract_structured(&s).unwrap(), v);
        }

        #[test]
        fn roundtrips_annotation_schema(v in annotation_value()) {
            let wrapped = format!("Here you go:\n```json\n{}\n```\n", serde_json::to_string_pretty(&v).unwrap());
            prop_assert_eq!(extract_structured(&wrapped).unwrap(), v);
        }

        #[test]
        fn roundtrips_proposition_lists(v in proptest::collection::vec(text(), 0..10)) {
            let v = json!(v);
            prop_assert_eq!(extract_structured(&v.to_string()).unwrap(), v);
        }
    }
}
